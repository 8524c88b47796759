"""Experiment configuration: INI file with one section per component."""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ..controller import ControllerConfig
from ..estimators import BaselineConfig, QualityEstimatorConfig, RotationEstimatorConfig
from ..geometry.objects import FAMILIES
from ..resting import SettleParams

OUT_DIR_ENV = "UPRIGHT_OUT_DIR"
EVAL_POLICIES = ("baseline", "sp", "itr", "itrq")
# Named random sub-streams derived from the master seed.
STREAMS = {"objects": 1, "split": 2, "poses": 3, "trials": 4, "dataset": 5, "quality_model": 6}


class ConfigError(ValueError):
    pass


def default_config_text() -> str:
    return resources.files("upright.harness").joinpath("default.ini").read_text(encoding="utf-8")


@dataclass(frozen=True)
class RigConfig:
    n_cameras: int = 3
    radius: float = 0.25
    fov: float = 60.0
    sigma_multipliers: dict = field(default_factory=lambda: {1: 2.0, 2: 1.2, 3: 1.0, 4: 1.05})


@dataclass(frozen=True)
class DatasetConfig:
    n_records: int = 5000
    near_upright_fraction: float = 0.3
    near_upright_max_tilt: float = math.radians(20.0)
    position_jitter: float = 0.01


@dataclass(frozen=True)
class QualityModelConfig:
    enabled: bool = False
    n_samples: int = 2000
    holdout_fraction: float = 0.2
    epochs: int = 300
    learning_rate: float = 0.5
    l2: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    families: tuple = FAMILIES
    objects_per_family: int = 5
    object_seed: int = 0
    scale_range: tuple = (0.06, 0.20)
    n_test_sets: int = 5
    test_set_size: int = 5
    trials_per_object: int = 100
    policies: tuple = EVAL_POLICIES
    output_dir: str = "results"
    workers: int = 1
    rig: RigConfig = RigConfig()
    rotation: RotationEstimatorConfig = RotationEstimatorConfig()
    quality_kind: str = "oracle"
    quality: QualityEstimatorConfig = QualityEstimatorConfig()
    quality_model_path: str = ""
    controller: ControllerConfig = ControllerConfig()
    resting: SettleParams = SettleParams()
    upright_tol: float = math.radians(15.0)
    baseline: BaselineConfig = BaselineConfig()
    dataset: DatasetConfig = DatasetConfig()
    quality_model: QualityModelConfig = QualityModelConfig()

    def __post_init__(self):
        if not 1 <= self.rig.n_cameras <= 4:
            raise ConfigError(f"rig.n_cameras must be 1-4, got {self.rig.n_cameras}")
        bad = [p for p in self.policies if p not in EVAL_POLICIES]
        if bad:
            raise ConfigError(f"unknown policies {bad}; expected a subset of {EVAL_POLICIES}")
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ConfigError(f"unknown families {bad}")
        if self.n_test_sets * self.test_set_size > self.n_objects:
            raise ConfigError(
                f"{self.n_test_sets} test sets of {self.test_set_size} need "
                f"{self.n_test_sets * self.test_set_size} objects, only {self.n_objects} configured")
        if self.quality_kind not in ("oracle", "logistic"):
            raise ConfigError(f"quality_estimator.kind must be oracle or logistic, got {self.quality_kind!r}")

    @property
    def n_objects(self) -> int:
        return len(self.families) * self.objects_per_family

    @property
    def effective_sigma(self) -> float:
        return self.rotation.sigma * self.rig.sigma_multipliers.get(self.rig.n_cameras, 1.0)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else replace(self, master_seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rig"]["sigma_multipliers"] = {str(k): v for k, v in sorted(self.rig.sigma_multipliers.items())}
        d["families"] = list(self.families)
        d["policies"] = list(self.policies)
        d["scale_range"] = list(self.scale_range)
        d.pop("output_dir")
        d.pop("workers")
        return d

    def fingerprint(self, extra=None) -> str:
        """sha256 over every parameter and seed (output location and worker count excluded)."""
        payload = {"config": self.to_dict(), "extra": extra}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def substream(cfg: ExperimentConfig, name: str, *key: int) -> np.random.Generator:
    """Generator for a named sub-stream, optionally indexed (e.g. by object and trial)."""
    ss = np.random.SeedSequence(entropy=cfg.master_seed, spawn_key=(STREAMS[name],) + tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def _list(value: str) -> tuple:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _multipliers(value: str) -> dict:
    out = {}
    for item in _list(value):
        k, _, v = item.partition(":")
        out[int(k)] = float(v)
    return out


def _bool(section, key, default):
    return section.getboolean(key, fallback=default)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(default_config_text())
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    try:
        ex, rg, ro, qu = cp["experiment"], cp["rig"], cp["rotation_estimator"], cp["quality_estimator"]
        co, rs, bl, ds, qm = cp["controller"], cp["resting"], cp["baseline"], cp["dataset"], cp["quality_model"]
        return ExperimentConfig(
            master_seed=ex.getint("master_seed"),
            families=_list(ex["families"]),
            objects_per_family=ex.getint("objects_per_family"),
            object_seed=ex.getint("object_seed"),
            scale_range=(ex.getfloat("scale_min"), ex.getfloat("scale_max")),
            n_test_sets=ex.getint("n_test_sets"),
            test_set_size=ex.getint("test_set_size"),
            trials_per_object=ex.getint("trials_per_object"),
            policies=_list(ex["policies"]),
            output_dir=ex["output_dir"],
            workers=ex.getint("workers"),
            rig=RigConfig(rg.getint("n_cameras"), rg.getfloat("radius"), rg.getfloat("fov"), _multipliers(rg["sigma_multipliers"])),
            rotation=RotationEstimatorConfig(
                sigma=math.radians(ro.getfloat("sigma")),
                p_flip=ro.getfloat("p_flip"),
                output_rep=ro["output_rep"],
                flip_redraw_on_restart=_bool(ro, "flip_redraw_on_restart", True),
            ),
            quality_kind=qu["kind"],
            quality=QualityEstimatorConfig(qu.getfloat("eta"), qu.getfloat("score_high"), qu.getfloat("score_low")),
            quality_model_path=qu.get("model_path", ""),
            controller=ControllerConfig(
                max_iter=co.getint("max_iter"),
                max_restart=co.getint("max_restart"),
                eps_quality=co.getfloat("eps_quality"),
                eps_rotation=math.radians(co.getfloat("eps_rotation")),
                canonicalize=_bool(co, "canonicalize", False),
            ),
            resting=SettleParams(
                contact_eps=rs.getfloat("contact_eps"),
                stability_margin=rs.getfloat("stability_margin"),
                max_tips=rs.getint("max_tips"),
                perturb_angle=math.radians(rs.getfloat("perturb_angle")),
                stability_tol=math.radians(rs.getfloat("stability_tol")),
            ),
            upright_tol=math.radians(rs.getfloat("upright_tol")),
            baseline=BaselineConfig(
                k=bl.getint("k"),
                angle_tol=math.radians(bl.getfloat("angle_tol")),
                dist_tol=bl.getfloat("dist_tol"),
                iterations=bl.getint("iterations"),
                seed=bl.getint("seed"),
            ),
            dataset=DatasetConfig(
                n_records=ds.getint("n_records"),
                near_upright_fraction=ds.getfloat("near_upright_fraction"),
                near_upright_max_tilt=math.radians(ds.getfloat("near_upright_max_tilt")),
                position_jitter=ds.getfloat("position_jitter"),
            ),
            quality_model=QualityModelConfig(
                enabled=_bool(qm, "enabled", False),
                n_samples=qm.getint("n_samples"),
                holdout_fraction=qm.getfloat("holdout_fraction"),
                epochs=qm.getint("epochs"),
                learning_rate=qm.getfloat("learning_rate"),
                l2=qm.getfloat("l2"),
                seed=qm.getint("seed"),
            ),
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return parse_config("")
    return parse_config(Path(path).read_text(encoding="utf-8"))


def resolve_out_dir(cfg: ExperimentConfig, cli_out=None) -> Path:
    """CLI flag, then the environment variable, then the config value."""
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(cfg.output_dir)
