import json
from pathlib import Path

import numpy as np
import pytest

from forgetlab import __version__
from forgetlab.cli import main
from forgetlab.dynamics import run_unimodal, unimodal_config
from forgetlab.errors import ConfigError
from forgetlab.runner import (
    LAB_HEADER,
    SIM_HEADER,
    derive_seed,
    emit_csv,
    load_config,
    parse_config,
    read_csv,
    run_experiment,
)
from forgetlab.runner.results import fmt, render_csv, sim_rows

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src" / "forgetlab" / "configs"

SMALL_LAB = {
    "kind": "lab",
    "seeds": [0, 1],
    "world": {"P": 20, "V": 5, "M": 1, "d": 8},
    "pretrain": {"threshold": 0.9},
    "runs": [
        {"method": "sft", "learning_rate": 1.0, "epochs": 2},
        {"method": "self_sft", "learning_rate": 1.0, "epochs": 2},
        {"method": "iterative_sft", "learning_rate": 1.0, "epochs": 2},
        {"method": "grpo", "learning_rate": 1.0, "steps": 30, "eval_every": 10},
        {"method": "reinforce", "learning_rate": 1.0, "steps": 30, "eval_every": 10},
        {"method": "sft_on_traces", "learning_rate": 0.2, "epochs": 1},
    ],
}


def write_json(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


class TestConfig:
    def test_minimal_sim_uni_defaults(self, tmp_path):
        cfg = load_config(write_json(tmp_path, {"seed": 3}), kind="sim_uni")
        assert cfg.kind == "sim_uni" and cfg.seeds == (3,)
        assert [r["objective"] for r in cfg.runs] == ["forward_kl", "reverse_kl"]
        for r in cfg.runs:
            assert r["learning_rate"] == 0.05
            assert r["n_samples"] == 1000 and r["max_steps"] == 1000
            assert r["gain_stop"] == 0.9 and r["eval_every"] == 100
            assert r["policy_init"] == {"weights": [1.0], "components": [[-3.2, 1.0]]}

    def test_negative_learning_rate(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"kind": "sim_uni", "runs": [{"objective": "forward_kl", "learning_rate": -0.05}]})
        assert "learning_rate" in str(info.value) and info.value.key == "runs[0].learning_rate"

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as info:
            parse_config({"kind": "sim_bi", "runs": [{"objective": "forward_kl", "learnig_rate": 0.1}]})
        assert "learnig_rate" in str(info.value)
        with pytest.raises(ConfigError, match="world"):
            parse_config({"kind": "sim_uni", "world": {}})

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match="max_steps"):
            parse_config({"kind": "sim_uni", "runs": [{"objective": "forward_kl", "max_steps": "10"}]})
        with pytest.raises(ConfigError, match="seeds"):
            parse_config({"kind": "sim_uni", "seeds": [0, True]})

    def test_seed_forms(self):
        assert parse_config({"kind": "sim_uni", "seeds": [1, 2]}).seeds == (1, 2)
        with pytest.raises(ConfigError):
            parse_config({"kind": "sim_uni", "seed": 1, "seeds": [1]})
        with pytest.raises(ConfigError):
            parse_config({"kind": "sim_uni", "seeds": []})

    def test_kind_checks(self):
        with pytest.raises(ConfigError):
            parse_config({"kind": "sim_bi"}, kind="sim_uni")
        with pytest.raises(ConfigError):
            parse_config({})
        with pytest.raises(ConfigError):
            load_config("/nonexistent/cfg.json")

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_lab_rules(self):
        with pytest.raises(ConfigError, match="sft_on_traces"):
            parse_config({"kind": "lab", "runs": [{"method": "sft_on_traces", "learning_rate": 0.1}]})
        with pytest.raises(ConfigError, match="label"):
            parse_config({"kind": "lab", "runs": [{"method": "sft", "learning_rate": 1}, {"method": "sft", "learning_rate": 2}]})
        with pytest.raises(ConfigError, match="group_size"):
            parse_config({"kind": "lab", "runs": [{"method": "grpo", "learning_rate": 1, "group_size": 1}]})
        with pytest.raises(ConfigError, match="seed"):
            parse_config({"kind": "lab", "runs": [{"method": "sft", "learning_rate": 1, "seed": 3}]})

    @pytest.mark.parametrize("name", ["sim_uni.json", "sim_bi.json", "sim_sweep.json", "lab.json"])
    def test_round_trip(self, tmp_path, name):
        cfg = load_config(CONFIG_DIR / name)
        again = load_config(write_json(tmp_path, cfg.to_dict()))
        assert again == cfg and again.hash == cfg.hash
        assert json.loads(again.to_json()) == cfg.to_dict()

    def test_overrides(self):
        cfg = parse_config({"kind": "sim_uni"})
        assert cfg.with_seeds([4, 5]).seeds == (4, 5)
        assert cfg.with_output_dir("x/y").output_dir == "x/y"
        assert cfg.hash != cfg.with_seeds([9]).hash


class TestCsv:
    def test_format(self):
        assert fmt(0.1) == "0.10000000000000001"
        assert fmt(None) == "" and fmt(3) == "3" and fmt("grpo") == "grpo"
        assert float(fmt(1 / 3)) == 1 / 3

    def test_single_checkpoint(self, tmp_path):
        traj = run_unimodal(unimodal_config("forward_kl", max_steps=0))
        path = emit_csv(SIM_HEADER, sim_rows(traj, 0), tmp_path / "one.csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == "step,objective,lr,seed,alpha,mu_old,sigma_old,mu_new,sigma_new,s_old,s_new,gain,drop"
        row = read_csv(path)[0]
        assert row["alpha"] == "" and row["mu_new"] == "" and row["sigma_new"] == ""

    def test_round_trip_values(self, tmp_path):
        traj = run_unimodal(unimodal_config("reverse_kl"))
        path = emit_csv(SIM_HEADER, sim_rows(traj, 0), tmp_path / "t.csv")
        rows = read_csv(path)
        assert [int(r["step"]) for r in rows] == [c.step for c in traj.checkpoints]
        for r, ck in zip(rows, traj.checkpoints):
            assert float(r["gain"]) == ck.gain and float(r["drop"]) == ck.drop
            assert float(r["s_old"]) == ck.s_old and float(r["mu_old"]) == float(ck.means[0])

    def test_lab_header(self):
        assert ",".join(LAB_HEADER) == "method,seed,epoch_or_step,target_acc,mean_nontarget_acc,gain,drop,kl_from_init,beta,group_size,lr"

    def test_empty_and_io_errors(self, tmp_path):
        with pytest.raises(ValueError):
            render_csv(SIM_HEADER, [])
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(RuntimeError, match="file"):
            emit_csv(SIM_HEADER, [{"step": 0}], blocker / "x.csv")


def test_derive_seed_stability():
    a = derive_seed(0, 1, 2)
    assert a == derive_seed(0, 1, 2)
    assert len({derive_seed(0, i, j) for i in range(3) for j in range(3)}) == 9
    # adding a seed to the list does not change existing cells
    small = parse_config({"kind": "sim_uni", "seeds": [0, 1], "runs": [{"objective": "forward_kl", "max_steps": 100}]})
    big = small.with_seeds([0, 1, 2])
    s1 = run_experiment(small, write=False)
    s2 = run_experiment(big, write=False)
    assert [c["cell_seed"] for c in s2.cells[:2]] == [c["cell_seed"] for c in s1.cells]


class TestExperiment:
    def test_sim_uni_counts_and_summary(self, tmp_path):
        cfg = load_config(CONFIG_DIR / "sim_uni.json").with_output_dir(tmp_path)
        summary = run_experiment(cfg)
        csvs = sorted(tmp_path.glob("*.csv"))
        assert len(csvs) == 10 and (tmp_path / "summary.json").exists()
        doc = json.loads((tmp_path / "summary.json").read_text())
        assert doc["config_hash"] == cfg.hash and doc["config"] == cfg.to_dict()
        assert summary.exit_code == 0
        # aggregates are recomputable from the terminal CSV rows
        for agg in doc["aggregates"]:
            cells = [c for c in doc["cells"] if c["run"] == agg["run"]]
            finals = [read_csv(tmp_path / c["csv"])[-1] for c in cells]
            drops = [float(r["drop"]) for r in finals]
            gains = [float(r["gain"]) for r in finals]
            assert abs(np.mean(drops) - agg["drop_mean"]) <= 1e-12
            assert abs(np.std(drops, ddof=1) - agg["drop_std"]) <= 1e-12
            assert abs(np.mean(gains) - agg["gain_mean"]) <= 1e-12

    def test_byte_identical_and_parallel(self, tmp_path):
        raw = {"kind": "sim_bi", "seeds": [0, 1], "runs": [{"objective": "forward_kl", "learning_rate": 0.15}, {"objective": "reverse_kl", "max_steps": 200}]}
        cfg = parse_config(raw)
        run_experiment(cfg.with_output_dir(tmp_path / "a"))
        run_experiment(cfg.with_output_dir(tmp_path / "b"))
        run_experiment(cfg.with_output_dir(tmp_path / "c"), workers=2)
        names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
        assert len(names) == 4
        for n in names:
            a = (tmp_path / "a" / n).read_bytes()
            assert a == (tmp_path / "b" / n).read_bytes() == (tmp_path / "c" / n).read_bytes()

    def test_sweep_files(self, tmp_path):
        raw = {"kind": "sim_sweep", "seeds": [0], "distances": [0.0, 4.0], "runs": [{"objective": "reverse_kl", "max_steps": 100}]}
        summary = run_experiment(parse_config(raw).with_output_dir(tmp_path))
        assert [c["distance"] for c in summary.cells] == [0.0, 4.0]
        assert summary.cells[0]["stop_reason"] == "already_learned"
        assert len(list(tmp_path.glob("*_d4.csv"))) == 1

    def test_lab_rows_per_method_and_seed(self, tmp_path):
        summary = run_experiment(parse_config(SMALL_LAB).with_output_dir(tmp_path))
        labels = {r["label"] for r in SMALL_LAB["runs"] for r in [dict(r, label=r.get("label", r["method"]))]}
        for seed in SMALL_LAB["seeds"]:
            got = {c["label"] for c in summary.cells if c["seed"] == seed and "gain" in c}
            assert got == labels
        rows = read_csv(tmp_path / "lab_r03_grpo_seed0.csv")
        assert [int(r["epoch_or_step"]) for r in rows] == [0, 10, 20, 30]
        assert rows[0]["beta"] == "0.050000000000000003" and rows[0]["group_size"] == "5"
        sft_rows = read_csv(tmp_path / "lab_r00_sft_seed0.csv")
        assert [int(r["epoch_or_step"]) for r in sft_rows] == [0, 1, 2] and sft_rows[0]["beta"] == ""
        doc = json.loads((tmp_path / "summary.json").read_text())
        assert "kl_drop_pearson" in doc

    def test_failed_cell_keeps_others(self, tmp_path):
        raw = {"kind": "sim_uni", "seeds": [0], "runs": [{"objective": "forward_kl", "learning_rate": 1e308}, {"objective": "reverse_kl", "max_steps": 100}]}
        summary = run_experiment(parse_config(raw).with_output_dir(tmp_path))
        assert [c["status"] for c in summary.cells] == ["failed", "ok"]
        assert summary.exit_code == 2 and summary.warnings["failed"] == 1
        assert len(list(tmp_path.glob("*.csv"))) == 1


class TestCli:
    def test_version(self, capsys):
        assert main(["version"]) == 0
        assert capsys.readouterr().out.strip() == __version__

    def test_identities(self, capsys):
        assert main(["check", "identities", "--trials", "20"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_bad_config_exit_1(self, tmp_path):
        p = write_json(tmp_path, {"kind": "sim_uni", "runs": [{"objective": "forward_kl", "learning_rate": -1}]})
        assert main(["sim", "uni", "--config", str(p)]) == 1
        p2 = write_json(tmp_path, {"kind": "sim_bi"}, "bi.json")
        assert main(["sim", "uni", "--config", str(p2)]) == 1

    def test_failed_cell_exit_2(self, tmp_path):
        p = write_json(tmp_path, {"runs": [{"objective": "forward_kl", "learning_rate": 1e308}]})
        assert main(["sim", "uni", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_run_with_overrides(self, tmp_path):
        p = write_json(tmp_path, {"kind": "sim_bi", "runs": [{"objective": "forward_kl", "learning_rate": 0.15}]})
        out = tmp_path / "o"
        assert main(["sim", "bi", "--config", str(p), "--out", str(out), "--seeds", "3,4"]) == 0
        assert sorted(x.name for x in out.glob("*.csv")) == ["sim_bi_r00_forward_kl_seed3.csv", "sim_bi_r00_forward_kl_seed4.csv"]

    def test_lab_run(self, tmp_path):
        p = write_json(tmp_path, SMALL_LAB)
        assert main(["lab", "run", "--config", str(p), "--out", str(tmp_path / "o"), "--seeds", "0"]) == 0
        assert len(list((tmp_path / "o").glob("*.csv"))) == 6
