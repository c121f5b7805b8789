"""CSV reports, parameter files and the run summary."""

import csv
import math
import os

import numpy as np

from .linear import LinearParams
from .propagation import PairwiseParams

METRIC_FIELDS = ("step", "stage", "mean_iou", "precision", "energy")


def _fmt(value):
    value = float(value)
    return "nan" if math.isnan(value) else repr(value)


def metric_lines(rows):
    lines = [",".join(METRIC_FIELDS)]
    for r in rows:
        lines.append(",".join([str(r.step), r.stage, _fmt(r.mean_iou), _fmt(r.precision), _fmt(r.energy)]))
    return lines


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(metric_lines(rows)) + "\n")


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return [
            {"step": int(r["step"]), "stage": r["stage"], "mean_iou": float(r["mean_iou"]),
             "precision": float(r["precision"]), "energy": float(r["energy"])}
            for r in csv.DictReader(fh)
        ]


def write_params_csv(path, named):
    """``named`` is a list of ``(name, value)`` pairs; values keep full precision."""
    with open(path, "w", newline="") as fh:
        fh.write("name,value\n")
        for name, value in named:
            fh.write(f'"{name}",{_fmt(value)}\n')


def read_params_csv(path):
    with open(path, newline="") as fh:
        return {r["name"]: float(r["value"]) for r in csv.DictReader(fh)}


def _fill(values, prefix, arrays):
    for key, arr in arrays.items():
        for idx in np.ndindex(arr.shape):
            name = f"{prefix}.{key}[{','.join(map(str, idx))}]"
            if name not in values:
                raise KeyError(f"missing parameter {name}")
            arr[idx] = values[name]


def load_linear(path, prefix, num_classes, dim):
    params = LinearParams.zeros(num_classes, dim)
    _fill(read_params_csv(path), prefix, {"weight": params.weight, "bias": params.bias})
    return params


def load_pairwise(path):
    params = PairwiseParams.zeros()
    _fill(read_params_csv(path), "pairwise", {"weight": params.weight, "bias": params.bias})
    return params


def summary_text(rows):
    """Per-step mIoU deltas, the energy column and invariant flags."""
    by_step = {}
    for r in rows:
        by_step.setdefault(r.step, {})[r.stage] = r
    lines = ["step  unary   mined   pairwise  d(pairwise)  energy"]
    previous = None
    flagged = []
    for step in sorted(by_step):
        stages = by_step[step]
        if "pairwise" not in stages:
            seeds = stages.get("seeds")
            if seeds is not None:
                lines.append(f"{step:>4}  seeds mIoU {seeds.mean_iou:.4f} precision {seeds.precision:.4f}")
            continue
        u, m, p = stages["unary"], stages["mined"], stages["pairwise"]
        delta = "" if previous is None else f"{100 * (p.mean_iou - previous):+.2f}"
        lines.append(f"{step:>4}  {u.mean_iou:.4f}  {m.mean_iou:.4f}  {p.mean_iou:.4f}    "
                     f"{delta:>8}     {p.energy:.6f}")
        if p.mean_iou < u.mean_iou:
            flagged.append(step)
        previous = p.mean_iou
    for step in flagged:
        lines.append(f"WARNING: step {step} pairwise mIoU below unary mIoU")
    return "\n".join(lines) + "\n"


def save_run(out_dir, state):
    """Metrics CSV, summary and parameter files of a finished run."""
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), state.rows)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(summary_text(state.rows))
    write_params_csv(os.path.join(out_dir, "unary.csv"), state.unary.named("unary"))
    write_params_csv(os.path.join(out_dir, "pairwise.csv"), state.pairwise.named("pairwise"))
    if state.region is not None:
        write_params_csv(os.path.join(out_dir, "region.csv"), state.region.named("region"))
