"""Command-line entry point: ``upright {gen-objects,gen-dataset,run-eval,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..geometry.mesh import save_obj
from ..geometry.objects import write_manifest
from .config import ConfigError, load_config, resolve_out_dir
from .dataset import generate_dataset
from .evaluate import build_objects, run_eval
from .report import ReportError, report

log = logging.getLogger("upright")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="INI config file (defaults are built in)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", type=Path, default=None, help="output directory (else $UPRIGHT_OUT_DIR, else the config value)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="upright", description="Iterative upright placement experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("gen-objects", help="generate the object set as OBJ files plus a manifest"))
    _common(sub.add_parser("gen-dataset", help="generate a drop-labelled depth-image dataset"))
    ev = sub.add_parser("run-eval", help="evaluate placement policies")
    _common(ev)
    ev.add_argument("--policy", choices=("baseline", "sp", "itr", "itrq"), action="append",
                    help="evaluate only this policy (repeatable)")
    _common(sub.add_parser("report", help="tables and plot data from run-eval output"))
    return ap


def cmd_gen_objects(cfg, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    objects = build_objects(cfg)
    for obj in objects:
        save_obj(obj.mesh, out / f"{obj.name}.obj", header=f"{obj.family} seed {obj.seed}")
    write_manifest(objects, out / "manifest.jsonl")
    print(f"wrote {len(objects)} objects to {out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        out = resolve_out_dir(cfg, args.out)
        if args.command == "gen-objects":
            cmd_gen_objects(cfg, out)
        elif args.command == "gen-dataset":
            rep = generate_dataset(cfg, out)
            print(f"wrote {rep['n_records']} records ({rep['n_balanced']} balanced) to {out}")
        elif args.command == "run-eval":
            metrics = run_eval(cfg, out, policies=args.policy)
            for policy, m in metrics["policies"].items():
                print(f"{policy:8s} success {m['success_rate']:6.2f}%  stability {m['stability_rate']:6.2f}%  "
                      f"angular error {m['angular_error_mean']:6.2f} deg  ({m['n_trials']} trials)")
            print(f"fingerprint {metrics['fingerprint']}")
        elif args.command == "report":
            paths = report(out)
            print(Path(paths["report"]).read_text(encoding="utf-8"))
            print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    except (ConfigError, ReportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
