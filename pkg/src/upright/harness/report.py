"""Human-readable method tables and per-iteration plot data from evaluation outputs."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .evaluate import METRICS_FILE, TRACES_FILE

REPORT_FILE = "report.txt"
SERIES_FILE = "angular_error_series.csv"
_NAMES = {"baseline": "Baseline", "sp": "SP", "itr": "ITR", "itrq": "ITR-Q"}


class ReportError(RuntimeError):
    pass


def _policy_order(metrics: dict) -> list[str]:
    known = [p for p in _NAMES if p in metrics["policies"]]
    return known + sorted(p for p in metrics["policies"] if p not in _NAMES)


def load_results(results_dir) -> tuple[dict, list[dict]]:
    d = Path(results_dir)
    if not d.is_dir():
        raise ReportError(f"results directory {d} does not exist")
    mpath, tpath = d / METRICS_FILE, d / TRACES_FILE
    for p in (mpath, tpath):
        if not p.is_file():
            raise ReportError(f"missing results file {p}")
    try:
        metrics = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportError(f"corrupt metrics file {mpath}: {exc}") from exc
    traces = []
    with open(tpath, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                traces.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ReportError(f"corrupt trace file {tpath} line {lineno}: {exc}") from exc
    if not traces:
        raise ReportError(f"trace file {tpath} is empty")
    for key in ("fingerprint", "policies"):
        if key not in metrics:
            raise ReportError(f"metrics file {mpath} lacks {key!r}")
    return metrics, traces


def recompute_success_rates(traces: list[dict], tol_deg: float = 15.0) -> dict[str, float]:
    """Success rate per policy from the raw rest orientations and upright vectors.

    Independent of the evaluator's stored ``success`` flags.
    """
    counts: dict[str, list[int]] = {}
    for t in traces:
        R = t["rest_orientation"]
        u = t["upright"]
        z = R[6] * u[0] + R[7] * u[1] + R[8] * u[2]
        ok = t["settled"] and not t["error"] and math.degrees(math.acos(max(-1.0, min(1.0, z)))) <= tol_deg
        c = counts.setdefault(t["policy"], [0, 0])
        c[0] += ok
        c[1] += 1
    return {p: 100.0 * s / n for p, (s, n) in counts.items()}


def method_table(metrics: dict) -> str:
    rows = [("Method", "Success (%)", "Stability (%)", "Angular error (deg)", "Trials")]
    for policy in _policy_order(metrics):
        m = metrics["policies"][policy]
        sd = m["std_across_sets"]
        rows.append((
            _NAMES.get(policy, policy),
            f"{m['success_rate']:.1f} +- {sd['success_rate']:.1f}",
            f"{m['stability_rate']:.1f} +- {sd['stability_rate']:.1f}",
            f"{m['angular_error_mean']:.1f} +- {sd['angular_error_mean']:.1f}",
            str(m["n_trials"]),
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def family_table(metrics: dict) -> str:
    policies = _policy_order(metrics)
    fams = sorted({f for m in metrics["policies"].values() for f in m.get("per_family", {})})
    rows = [("Family",) + tuple(_NAMES.get(p, p) for p in policies)]
    for f in fams:
        rows.append((f,) + tuple(f"{metrics['policies'][p]['per_family'][f]['success_rate']:.1f}" for p in policies))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def angular_error_series(traces: list[dict], fingerprint: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "trial_id", "object", "iteration", "restart", "upright_error_deg", "quality", "fingerprint"])
    for t in traces:
        for r in t["records"]:
            q = "" if r["quality"] is None else repr(r["quality"])
            w.writerow([t["policy"], t["trial_id"], t["object"], r["iteration"], r["restart"], repr(r["upright_error_deg"]), q, fingerprint])
    return buf.getvalue()


def report(results_dir, out_dir=None) -> dict[str, Path]:
    """Write the method table and per-iteration series. Nothing is written on error."""
    metrics, traces = load_results(results_dir)
    fp = metrics["fingerprint"]
    stored = {p: m["success_rate"] for p, m in metrics["policies"].items()}
    tol = math.degrees(metrics.get("config", {}).get("upright_tol", math.radians(15.0)))
    recomputed = recompute_success_rates(traces, tol)
    if recomputed != stored:
        raise ReportError(f"success rates in traces {recomputed} disagree with metrics {stored}")
    cfg = metrics.get("config", {})
    ctrl = cfg.get("controller", {})
    text = "\n".join([
        f"config fingerprint: {fp}",
        f"rotation sigma (effective): {metrics.get('effective_sigma_deg', float('nan')):.2f} deg, "
        f"p_flip: {cfg.get('rotation', {}).get('p_flip')}, eta: {cfg.get('quality', {}).get('eta')}",
        f"max_iter: {ctrl.get('max_iter')}, max_restart: {ctrl.get('max_restart')}, "
        f"eps_quality: {ctrl.get('eps_quality')}, eps_rotation: {math.degrees(ctrl.get('eps_rotation', float('nan'))):.1f} deg",
        "",
        "Method comparison (mean +- std across test sets)",
        method_table(metrics),
        "",
        "Success rate by family (%)",
        family_table(metrics),
        "",
    ])
    out = Path(results_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = angular_error_series(traces, fp)
    paths = {"report": out / REPORT_FILE, "series": out / SERIES_FILE}
    paths["report"].write_text(text, encoding="utf-8")
    paths["series"].write_text(series, encoding="utf-8")
    return paths
