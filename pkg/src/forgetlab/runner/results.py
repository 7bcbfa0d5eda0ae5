"""CSV schemas and writers. Numbers are rendered with 17 significant digits."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

SIM_HEADER = (
    "step", "objective", "lr", "seed", "alpha", "mu_old", "sigma_old",
    "mu_new", "sigma_new", "s_old", "s_new", "gain", "drop",
)
LAB_HEADER = (
    "method", "seed", "epoch_or_step", "target_acc", "mean_nontarget_acc",
    "gain", "drop", "kl_from_init", "beta", "group_size", "lr",
)


def fmt(v) -> str:
    """17 significant digits for floats; '' for None; ints and strings verbatim."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def render_csv(header: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    n = 0
    for row in rows:
        w.writerow([fmt(row.get(k)) for k in header])
        n += 1
    if n == 0:
        raise ValueError("refusing to write a CSV with no data rows")
    return buf.getvalue()


def emit_csv(header: Sequence[str], rows: Iterable[dict], path) -> Path:
    path = Path(path)
    text = render_csv(header, rows)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise RuntimeError(f"failed to write {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sim_rows(traj, seed: int) -> list[dict]:
    """One row per checkpoint; uni-modal policies leave alpha and the new-mode columns empty."""
    cfg = traj.config
    rows = []
    for ck in traj.checkpoints:
        pol = ck.policy
        stds = pol.stds
        row = {
            "step": ck.step,
            "objective": cfg.objective,
            "lr": cfg.learning_rate,
            "seed": seed,
            "mu_old": float(pol.means[0]),
            "sigma_old": float(stds[0]),
            "s_old": ck.s_old,
            "s_new": ck.s_new,
            "gain": ck.gain,
            "drop": ck.drop,
        }
        if pol.n_components == 2:
            row.update(alpha=float(pol.weights[0]), mu_new=float(pol.means[1]), sigma_new=float(stds[1]))
        rows.append(row)
    return rows
