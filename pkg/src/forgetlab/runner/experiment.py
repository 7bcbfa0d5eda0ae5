"""Experiment orchestration: seed x run cells, CSV output, JSON summary."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import SimConfig, run_bimodal, run_unimodal, with_distance
from ..errors import DomainError, NumericFailure, SetupError
from ..lab.policy import evaluate
from ..lab.training import SFT_FAMILY, PretrainConfig, TrainSpec, pretrain_initial_policy, train
from ..lab.world import make_world
from ..mixture import GaussianMixture, Grid
from .config import ExperimentConfig
from .results import LAB_HEADER, SIM_HEADER, render_csv, sim_rows


def derive_seed(seed: int, spec_index: int, seed_index: int) -> int:
    """Stable per-cell seed; appending seeds or specs leaves existing cells untouched."""
    ss = np.random.SeedSequence(seed, spawn_key=(spec_index, seed_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sim_config_from_run(run: dict, seed: int) -> SimConfig:
    def mix(d):
        return GaussianMixture.from_components(d["weights"], [tuple(c) for c in d["components"]])

    return SimConfig(
        policy_init=mix(run["policy_init"]),
        target=mix(run["target"]),
        objective=run["objective"],
        reverse_target=run["reverse_target"],
        learning_rate=run["learning_rate"],
        n_samples=run["n_samples"],
        max_steps=run["max_steps"],
        eval_every=run["eval_every"],
        gain_stop=run["gain_stop"],
        seed=seed,
        grid=Grid(**run["grid"]),
    )


def _sim_name(kind, i, run, seed, distance=None) -> str:
    stem = f"{kind}_r{i:02d}_{run['objective']}_seed{seed}"
    if distance is not None:
        stem += f"_d{distance:g}"
    return stem + ".csv"


def _sim_cell(kind: str, i: int, run: dict, seed: int, j: int, distances) -> dict:
    cfg = sim_config_from_run(run, derive_seed(seed, i, j))
    label = f"{run['objective']}_lr{run['learning_rate']:g}"
    todo = [None] if distances is None else list(distances)
    records, files = [], []
    for dist in todo:
        rec = {"run": i, "label": label, "seed": seed, "cell_seed": cfg.seed}
        if dist is not None:
            rec["distance"] = dist
        try:
            if kind == "sim_uni":
                traj = run_unimodal(cfg)
            else:
                traj = run_bimodal(cfg if dist is None else with_distance(cfg, dist))
        except (NumericFailure, DomainError) as exc:
            rec.update(status="failed", error=str(exc))
            records.append(rec)
            continue
        name = _sim_name(kind, i, run, seed, dist)
        files.append((name, render_csv(SIM_HEADER, sim_rows(traj, seed))))
        rec.update(
            status="ok",
            gain=traj.gain,
            drop=traj.drop,
            steps=traj.final.step,
            stop_reason=traj.stop_reason,
            target_clip=traj.clip_count,
            overlap_tail=traj.tail_warnings,
            csv=name,
        )
        records.append(rec)
    return {"records": records, "files": files}


def _lab_row(label, seed, t, rep, spec: TrainSpec) -> dict:
    rl = spec.method not in SFT_FAMILY
    return {
        "method": label,
        "seed": seed,
        "epoch_or_step": t,
        "target_acc": rep.target_acc,
        "mean_nontarget_acc": rep.mean_nontarget_acc,
        "gain": rep.gain,
        "drop": rep.drop,
        "kl_from_init": rep.kl_from_init,
        "beta": spec.beta if rl else None,
        "group_size": spec.group_size if rl else None,
        "lr": spec.learning_rate,
    }


def spec_from_run(run: dict, seed: int) -> TrainSpec:
    keys = ("method", "learning_rate", "epochs", "steps", "batch_size", "group_size", "beta", "k_self", "eval_every", "label")
    return TrainSpec(seed=seed, **{k: run[k] for k in keys})


def _lab_cell(runs, world_cfg: dict, pretrain_cfg: dict, seed: int, j: int) -> dict:
    records, files = [], []
    world = make_world(seed=seed, **world_cfg)
    try:
        pi_0 = pretrain_initial_policy(world, PretrainConfig(**pretrain_cfg))
    except (SetupError, NumericFailure) as exc:
        for i, run in enumerate(runs):
            records.append({"run": i, "label": run["label"], "seed": seed, "status": "failed", "error": str(exc)})
        return {"records": records, "files": files}

    traces = None
    for i, run in enumerate(runs):
        spec = spec_from_run(run, derive_seed(seed, i, j))
        label = spec.name
        rec = {"run": i, "label": label, "method": spec.method, "seed": seed, "cell_seed": spec.seed}
        rows = [_lab_row(label, seed, 0, evaluate(pi_0, pi_0, world), spec)]
        last = spec.epochs if spec.method in SFT_FAMILY else spec.steps

        def record(t, pol, spec=spec, rows=rows, last=last, label=label):
            if spec.method in SFT_FAMILY or t % spec.eval_every == 0 or t == last:
                rows.append(_lab_row(label, seed, t, evaluate(pi_0, pol, world), spec))

        try:
            if spec.method == "sft_on_traces" and traces is None:
                raise DomainError("no traces: the preceding grpo run failed")
            res = train(pi_0, world, spec, record, traces)
        except (NumericFailure, DomainError) as exc:
            rec.update(status="failed", error=str(exc))
            records.append(rec)
            if spec.method == "grpo":
                traces = None
            continue
        if spec.method == "grpo":
            traces = res.traces
        rep = evaluate(pi_0, res.policy, world)
        name = f"lab_r{i:02d}_{label}_seed{seed}.csv"
        files.append((name, render_csv(LAB_HEADER, rows)))
        rec.update(
            status="skipped" if res.skipped else "ok",
            gain=rep.gain,
            drop=rep.drop,
            kl_from_init=rep.kl_from_init,
            initial_target_acc=float(rep.initial_acc[0]),
            target_acc=rep.target_acc,
            mean_nontarget_acc=rep.mean_nontarget_acc,
            csv=name,
            notes=list(res.notes),
        )
        records.append(rec)
    return {"records": records, "files": files}


def _cells(cfg: ExperimentConfig) -> list[tuple]:
    if cfg.kind == "lab":
        return [(_lab_cell, (list(cfg.runs), cfg.world, cfg.pretrain, s, j)) for j, s in enumerate(cfg.seeds)]
    return [
        (_sim_cell, (cfg.kind, i, run, s, j, cfg.distances))
        for i, run in enumerate(cfg.runs)
        for j, s in enumerate(cfg.seeds)
    ]


def _call(fn_args):
    fn, args = fn_args
    return fn(*args)


def _clean(v):
    # JSON has no NaN/inf; emit null instead
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _stats(values: list[float]) -> dict:
    n = len(values)
    if n == 0:
        return {"mean": None, "std": None}
    mean = math.fsum(values) / n
    std = float(np.std(values, ddof=1)) if n > 1 else None
    return {"mean": mean, "std": std}


def aggregate(records: list[dict]) -> list[dict]:
    """Mean and sample std of terminal gain/drop per (run, distance) over successful seeds."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault((r["run"], r.get("distance")), []).append(r)
    out = []
    for (run, dist), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
        ok = sorted((r for r in recs if r["status"] == "ok"), key=lambda r: r["seed"])
        row = {"run": run, "label": recs[0]["label"], "n_ok": len(ok), "n_cells": len(recs)}
        if dist is not None:
            row["distance"] = dist
        for key in ("gain", "drop"):
            s = _stats([r[key] for r in ok])
            row[f"{key}_mean"], row[f"{key}_std"] = s["mean"], s["std"]
        out.append(row)
    return out


@dataclass
class RunSummary:
    config: dict
    config_hash: str
    cells: list[dict]
    aggregates: list[dict]
    warnings: dict
    duration_seconds: float
    extras: dict = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return sum(c["status"] == "failed" for c in self.cells)

    @property
    def exit_code(self) -> int:
        return 2 if self.n_failed else 0

    def to_dict(self) -> dict:
        return _clean(
            {
                "config": self.config,
                "config_hash": self.config_hash,
                "cells": self.cells,
                "aggregates": self.aggregates,
                "warnings": self.warnings,
                "duration_seconds": self.duration_seconds,
                **self.extras,
            }
        )


def _kl_drop_correlation(records) -> float | None:
    ok = [r for r in records if r["status"] == "ok" and r.get("kl_from_init") is not None]
    if len(ok) < 3:
        return None
    kl = np.array([r["kl_from_init"] for r in ok])
    dr = np.array([r["drop"] for r in ok])
    if kl.std() == 0 or dr.std() == 0:
        return None
    return float(np.corrcoef(kl, dr)[0, 1])


def run_experiment(cfg: ExperimentConfig, workers: int = 1, write: bool = True) -> RunSummary:
    """Run every cell (optionally in a process pool), then write CSVs and summary.json."""
    start = time.perf_counter()
    tasks = _cells(cfg)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_call, tasks))
    else:
        results = [_call(t) for t in tasks]

    records = [r for res in results for r in res["records"]]
    records.sort(key=lambda r: (r["run"], r["seed"], r.get("distance", -1.0)))
    files = sorted(f for res in results for f in res["files"])
    notes = [f"{r['label']} seed {r['seed']}: {n}" for r in records for n in r.get("notes", [])]
    warnings = {
        "failed": sum(r["status"] == "failed" for r in records),
        "skipped": sum(r["status"] == "skipped" for r in records),
        "target_clip": sum(r.get("target_clip", 0) for r in records),
        "overlap_tail": sum(r.get("overlap_tail", 0) for r in records),
        "notes": notes,
    }
    extras = {}
    if cfg.kind == "lab":
        extras["kl_drop_pearson"] = _kl_drop_correlation(records)
    summary = RunSummary(
        config=cfg.to_dict(),
        config_hash=cfg.hash,
        cells=records,
        aggregates=aggregate(records),
        warnings=warnings,
        duration_seconds=time.perf_counter() - start,
        extras=extras,
    )
    if write:
        out = Path(cfg.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            for name, text in files:
                (out / name).write_text(text)
            (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise RuntimeError(f"failed to write results under {out}: {exc}") from exc
    return summary
