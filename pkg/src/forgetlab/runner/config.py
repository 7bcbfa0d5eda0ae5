"""JSON experiment configs: strict parsing, default filling, canonical re-serialization."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..dynamics import DEFAULT_LEARNING_RATES, OBJECTIVES, REVERSE_TARGETS
from ..errors import ConfigError
from ..lab.training import METHODS

KINDS = ("sim_uni", "sim_bi", "sim_sweep", "lab")
SIM_KINDS = ("sim_uni", "sim_bi", "sim_sweep")

_GRID_DEFAULTS = {"lo": -12.0, "hi": 12.0, "n_points": 4001}
_TARGET_DEFAULT = {"weights": [0.75, 0.25], "components": [[-3.0, 1.0], [3.5, 0.7]]}
_INIT_DEFAULTS = {
    "uni": {"weights": [1.0], "components": [[-3.2, 1.0]]},
    "bi": {"weights": [0.75, 0.25], "components": [[-3.5, 1.0], [0.5, 0.7]]},
}
_SIM_RUN_DEFAULTS = {
    "reverse_target": "new_mode_only",
    "n_samples": 1000,
    "max_steps": 1000,
    "eval_every": 100,
    "gain_stop": 0.9,
}
_SWEEP_DISTANCES = [4.0, 5.0, 6.0]

_WORLD_DEFAULTS = {"P": 64, "V": 16, "M": 4, "d": 64, "d_response": None}
_PRETRAIN_DEFAULTS = {"learning_rate": 5.0, "threshold": 0.99, "max_iters": 20000}
_TRAIN_DEFAULTS = {
    "label": None,
    "epochs": 10,
    "steps": 1000,
    "batch_size": 4,
    "group_size": 5,
    "beta": 0.05,
    "k_self": 5,
    "eval_every": 50,
}
_LAB_RUNS = [
    {"method": "sft", "label": "sft_high_lr", "learning_rate": 10.0},
    {"method": "sft", "label": "sft_low_lr", "learning_rate": 1.0},
    {"method": "self_sft", "learning_rate": 10.0},
    {"method": "iterative_sft", "learning_rate": 10.0},
    {"method": "grpo", "learning_rate": 2.0, "batch_size": 16},
    {"method": "grpo", "label": "grpo_no_kl", "learning_rate": 2.0, "batch_size": 16, "beta": 0.0},
    {"method": "reinforce", "learning_rate": 2.0, "batch_size": 16},
    {"method": "sft_on_traces", "learning_rate": 0.2, "epochs": 1},
]


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment with every default filled in.

    ``runs`` holds plain dicts (one per simulation or training spec) so the
    config can be echoed and hashed exactly.
    """

    kind: str
    seeds: tuple[int, ...]
    output_dir: str
    runs: tuple[dict, ...]
    distances: tuple[float, ...] | None = None
    world: dict | None = None
    pretrain: dict | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind, "seeds": list(self.seeds), "output_dir": self.output_dir}
        if self.distances is not None:
            d["distances"] = list(self.distances)
        if self.world is not None:
            d["world"] = copy.deepcopy(self.world)
            d["pretrain"] = copy.deepcopy(self.pretrain)
        d["runs"] = [copy.deepcopy(r) for r in self.runs]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_seeds(self, seeds) -> "ExperimentConfig":
        raw = self.to_dict()
        raw["seeds"] = list(seeds)
        return parse_config(raw)

    def with_output_dir(self, path) -> "ExperimentConfig":
        raw = self.to_dict()
        raw["output_dir"] = str(path)
        return parse_config(raw)


def _type_name(t) -> str:
    return {int: "integer", float: "number", str: "string", list: "list", dict: "object"}.get(t, str(t))


def _get(d: dict, key: str, path: str, typ, default=None, required=False, nullable=False):
    full = f"{path}{key}"
    if key not in d:
        if required:
            raise ConfigError(f"missing required key {full!r}", key=full)
        return copy.deepcopy(default)
    v = d[key]
    if v is None and nullable:
        return None
    if typ is float:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        v = float(v) if ok else v
    elif typ is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    else:
        ok = isinstance(v, typ)
    if not ok:
        raise ConfigError(f"{full!r} must be a {_type_name(typ)}, got {v!r}", key=full)
    return v


def _reject_unknown(d: dict, allowed, path: str):
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown key {path + k!r}", key=path + k)


def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigError(f"{key!r} {msg}", key=key)


def _mixture(raw, path: str, default: dict, n_components: int | None) -> dict:
    if raw is None:
        return copy.deepcopy(default)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path!r} must be an object", key=path)
    _reject_unknown(raw, ("weights", "components"), path + ".")
    w = _get(raw, "weights", path + ".", list, required=True)
    comps = _get(raw, "components", path + ".", list, required=True)
    _require(len(w) == len(comps) >= 1, path, "needs matching nonempty weights and components")
    if n_components is not None:
        _require(len(w) == n_components, path, f"must have {n_components} component(s)")
    weights = []
    for i, x in enumerate(w):
        _require(isinstance(x, (int, float)) and not isinstance(x, bool) and 0 <= x <= 1, f"{path}.weights[{i}]", "must be in [0, 1]")
        weights.append(float(x))
    _require(abs(sum(weights) - 1.0) <= 1e-12, f"{path}.weights", "must sum to 1")
    out_comps = []
    for i, c in enumerate(comps):
        key = f"{path}.components[{i}]"
        ok = isinstance(c, list) and len(c) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in c)
        _require(ok, key, "must be a [mean, std] pair")
        _require(c[1] > 0, key, "std must be > 0")
        out_comps.append([float(c[0]), float(c[1])])
    return {"weights": weights, "components": out_comps}


def _sim_run(raw: dict, path: str, kind: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path!r} must be an object", key=path)
    p = path + "."
    allowed = ("objective", "learning_rate", "policy_init", "target", "grid") + tuple(_SIM_RUN_DEFAULTS)
    _reject_unknown(raw, allowed, p)
    shape = "uni" if kind == "sim_uni" else "bi"
    obj = _get(raw, "objective", p, str, required=True)
    _require(obj in OBJECTIVES, p + "objective", f"must be one of {list(OBJECTIVES)}")
    lr = _get(raw, "learning_rate", p, float, DEFAULT_LEARNING_RATES[(shape, obj)])
    _require(lr > 0 and lr != float("inf"), p + "learning_rate", "must be a finite number > 0")
    out = {"objective": obj, "learning_rate": lr}
    out["reverse_target"] = _get(raw, "reverse_target", p, str, _SIM_RUN_DEFAULTS["reverse_target"])
    _require(out["reverse_target"] in REVERSE_TARGETS, p + "reverse_target", f"must be one of {list(REVERSE_TARGETS)}")
    for key in ("n_samples", "max_steps", "eval_every"):
        out[key] = _get(raw, key, p, int, _SIM_RUN_DEFAULTS[key])
    _require(out["n_samples"] >= 1, p + "n_samples", "must be >= 1")
    _require(out["max_steps"] >= 0, p + "max_steps", "must be >= 0")
    _require(out["eval_every"] >= 1, p + "eval_every", "must be >= 1")
    out["gain_stop"] = _get(raw, "gain_stop", p, float, _SIM_RUN_DEFAULTS["gain_stop"])
    out["policy_init"] = _mixture(raw.get("policy_init"), p + "policy_init", _INIT_DEFAULTS[shape], 1 if shape == "uni" else 2)
    out["target"] = _mixture(raw.get("target"), p + "target", _TARGET_DEFAULT, 2)
    _require(0 < out["target"]["weights"][0] < 1, p + "target.weights", "old-mode weight must be in (0, 1)")
    g = raw.get("grid", {})
    if not isinstance(g, dict):
        raise ConfigError(f"{p + 'grid'!r} must be an object", key=p + "grid")
    _reject_unknown(g, tuple(_GRID_DEFAULTS), p + "grid.")
    grid = {
        "lo": _get(g, "lo", p + "grid.", float, _GRID_DEFAULTS["lo"]),
        "hi": _get(g, "hi", p + "grid.", float, _GRID_DEFAULTS["hi"]),
        "n_points": _get(g, "n_points", p + "grid.", int, _GRID_DEFAULTS["n_points"]),
    }
    _require(grid["lo"] < grid["hi"], p + "grid", "needs lo < hi")
    _require(grid["n_points"] >= 2, p + "grid.n_points", "must be >= 2")
    out["grid"] = grid
    return out


def _train_run(raw: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path!r} must be an object", key=path)
    p = path + "."
    _reject_unknown(raw, ("method", "learning_rate") + tuple(_TRAIN_DEFAULTS), p)
    method = _get(raw, "method", p, str, required=True)
    _require(method in METHODS, p + "method", f"must be one of {list(METHODS)}")
    lr = _get(raw, "learning_rate", p, float, required=True)
    _require(0 <= lr < float("inf"), p + "learning_rate", "must be a finite number >= 0")
    out = {"method": method, "learning_rate": lr}
    out["label"] = _get(raw, "label", p, str, _TRAIN_DEFAULTS["label"], nullable=True) or method
    for key in ("epochs", "steps", "batch_size", "group_size", "k_self", "eval_every"):
        out[key] = _get(raw, key, p, int, _TRAIN_DEFAULTS[key])
    out["beta"] = _get(raw, "beta", p, float, _TRAIN_DEFAULTS["beta"])
    _require(out["epochs"] >= 0, p + "epochs", "must be >= 0")
    _require(out["steps"] >= 0, p + "steps", "must be >= 0")
    for key in ("batch_size", "k_self", "eval_every"):
        _require(out[key] >= 1, p + key, "must be >= 1")
    _require(out["group_size"] >= (2 if method == "grpo" else 1), p + "group_size", "is too small for this method")
    _require(out["beta"] >= 0, p + "beta", "must be >= 0")
    return out


def _world(raw, path="world.") -> dict:
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("'world' must be an object", key="world")
    _reject_unknown(raw, tuple(_WORLD_DEFAULTS), path)
    out = {k: _get(raw, k, path, int, v, nullable=k == "d_response") for k, v in _WORLD_DEFAULTS.items()}
    _require(out["V"] >= 2, path + "V", "must be >= 2")
    _require(out["d"] >= 1, path + "d", "must be >= 1")
    _require(out["M"] >= 0, path + "M", "must be >= 0")
    _require(out["P"] >= out["M"] + 1, path + "P", "cannot be split into M + 1 nonempty tasks")
    if out["d_response"] is not None:
        _require(out["d_response"] >= 1, path + "d_response", "must be >= 1")
    return out


def _pretrain(raw, path="pretrain.") -> dict:
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("'pretrain' must be an object", key="pretrain")
    _reject_unknown(raw, tuple(_PRETRAIN_DEFAULTS), path)
    out = {
        "learning_rate": _get(raw, "learning_rate", path, float, _PRETRAIN_DEFAULTS["learning_rate"]),
        "threshold": _get(raw, "threshold", path, float, _PRETRAIN_DEFAULTS["threshold"]),
        "max_iters": _get(raw, "max_iters", path, int, _PRETRAIN_DEFAULTS["max_iters"]),
    }
    _require(out["learning_rate"] > 0, path + "learning_rate", "must be > 0")
    _require(0 <= out["threshold"] <= 1, path + "threshold", "must be in [0, 1]")
    _require(out["max_iters"] >= 0, path + "max_iters", "must be >= 0")
    return out


def default_runs(kind: str) -> list[dict]:
    if kind == "lab":
        return copy.deepcopy(_LAB_RUNS)
    if kind == "sim_sweep":
        return [{"objective": "reverse_kl"}]
    return [{"objective": o} for o in OBJECTIVES]


def parse_config(raw: dict, kind: str | None = None) -> ExperimentConfig:
    """Validate a decoded JSON document. ``kind`` fills in a missing "kind" key."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"kind", "seeds", "seed", "output_dir", "runs"}
    given_kind = raw.get("kind", kind)
    if given_kind == "sim_sweep":
        allowed.add("distances")
    if given_kind == "lab":
        allowed |= {"world", "pretrain"}
    _reject_unknown(raw, allowed, "")
    if given_kind is None:
        raise ConfigError("missing required key 'kind'", key="kind")
    _require(given_kind in KINDS, "kind", f"must be one of {list(KINDS)}")
    if kind is not None and given_kind != kind:
        raise ConfigError(f"config kind {given_kind!r} does not match requested {kind!r}", key="kind")

    if "seeds" in raw and "seed" in raw:
        raise ConfigError("give either 'seeds' or 'seed', not both", key="seed")
    if "seed" in raw:
        seeds = [_get(raw, "seed", "", int)]
    else:
        seeds = _get(raw, "seeds", "", list, [0])
    for i, s in enumerate(seeds):
        _require(isinstance(s, int) and not isinstance(s, bool) and s >= 0, f"seeds[{i}]", "must be a nonnegative integer")
    _require(len(seeds) >= 1, "seeds", "must be nonempty")
    _require(len(set(seeds)) == len(seeds), "seeds", "must not repeat")
    output_dir = _get(raw, "output_dir", "", str, f"results/{given_kind}")

    runs_raw = _get(raw, "runs", "", list, None)
    runs_raw = default_runs(given_kind) if runs_raw is None else runs_raw
    _require(len(runs_raw) >= 1, "runs", "must be nonempty")

    distances = world = pretrain = None
    if given_kind in SIM_KINDS:
        runs = [_sim_run(r, f"runs[{i}]", given_kind) for i, r in enumerate(runs_raw)]
        if given_kind == "sim_sweep":
            dl = _get(raw, "distances", "", list, _SWEEP_DISTANCES)
            _require(len(dl) >= 1, "distances", "must be nonempty")
            for i, x in enumerate(dl):
                ok = isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0
                _require(ok, f"distances[{i}]", "must be a number >= 0")
            distances = tuple(float(x) for x in dl)
    else:
        runs = [_train_run(r, f"runs[{i}]") for i, r in enumerate(runs_raw)]
        labels = [r["label"] for r in runs]
        _require(len(set(labels)) == len(labels), "runs", "labels must be unique (set 'label' on repeated methods)")
        seen_grpo = False
        for i, r in enumerate(runs):
            seen_grpo = seen_grpo or r["method"] == "grpo"
            _require(r["method"] != "sft_on_traces" or seen_grpo, f"runs[{i}].method", "sft_on_traces needs an earlier grpo run")
        world = _world(raw.get("world"))
        pretrain = _pretrain(raw.get("pretrain"))
    return ExperimentConfig(
        kind=given_kind,
        seeds=tuple(seeds),
        output_dir=output_dir,
        runs=tuple(runs),
        distances=distances,
        world=world,
        pretrain=pretrain,
    )


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    return parse_config(raw, kind)
