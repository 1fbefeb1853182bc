import csv
import json
import os

import numpy as np
import pytest

from stsyn.cli import cli_main
from stsyn.config import config_hash, dump_config, load_config, parse_config
from stsyn.errors import ConfigError
from stsyn.persist import emit_plot_data, load_trace, persist_trace, strip_timestamps
from stsyn.simulator import RECORD_FIELDS, RoundRecord, Trace, run_experiment

SMALL = """
[run]
workers = 4
rounds = 6
alpha = 0.05
batch_size = 8
seed = 3

[timing]
mu = 0.001

[scheme]
kind = stsyn
K = 3
U = 2

[objective]
kind = synthetic-logistic
n_samples = 120
dim = 4
"""


class TestConfig:
    def test_parse_and_round_trip(self):
        cfg = parse_config(SMALL)
        assert cfg.workers == 4 and cfg.scheme.K == 3 and cfg.mu == 0.001
        assert cfg.dataset.n_samples == 120
        again = parse_config(dump_config(cfg))
        assert again == cfg
        assert dump_config(again) == dump_config(cfg)

    def test_hash_ignores_layout(self):
        shuffled = SMALL.replace("alpha = 0.05", "alpha=5e-2").replace("[timing]\nmu = 0.001", "[timing]\nmu = 1.0e-3")
        assert config_hash(parse_config(shuffled)) == config_hash(parse_config(SMALL))
        assert config_hash(parse_config(SMALL.replace("seed = 3", "seed = 4"))) != config_hash(parse_config(SMALL))

    @pytest.mark.parametrize("edit,key", [
        (("K = 3", "K = 3\nQ = 1"), "scheme.Q"),
        (("workers = 4", "workers = four"), "run.workers"),
        (("workers = 4\n", ""), "run.workers"),
        (("K = 3", "K = 9"), "scheme.K"),
        (("mu = 0.001", "mu = -1"), "timing.mu"),
        (("kind = synthetic-logistic", "kind = images"), "objective.kind"),
        (("[timing]", "[timers]"), "timers"),
    ])
    def test_errors_name_the_key(self, edit, key):
        with pytest.raises(ConfigError) as exc:
            parse_config(SMALL.replace(*edit))
        assert exc.value.key == key

    def test_load_config(self, tmp_path):
        (tmp_path / "c.ini").write_text(SMALL)
        assert load_config(tmp_path / "c.ini") == parse_config(SMALL)


def hand_trace(n):
    cfg = parse_config(SMALL)
    recs, tc, cc = [], 0.0, 0
    for j in range(n):
        T, C = 0.1 * (j + 1), 5 + j
        tc += T
        cc += C
        recs.append(RoundRecord(j=j, T=T, T_cum=tc, C=C, C_cum=cc, S_size=j + 1, U=[j, 1, 0, 2],
                                loss=1.0 / (j + 1), grad_sq_norm=0.5, accuracy=0.5 + 0.1 * j))
    return Trace(cfg, recs, np.array([0.1, 0.2, 0.3, 0.4]), "rounds-exhausted", 1.5, 2.0, 0.5)


class TestPersist:
    def test_empty_trace(self, tmp_path):
        man = persist_trace(hand_trace(0), tmp_path)
        assert (tmp_path / "summary.csv").read_text() == "j,T_cum,C_cum,loss,grad_sq_norm,S_size,accuracy\n"
        assert man.rounds == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["rounds"] == 0

    def test_three_rounds(self, tmp_path):
        trace = hand_trace(3)
        man = persist_trace(trace, tmp_path)
        lines = (tmp_path / "rounds.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert all(tuple(json.loads(line)) == RECORD_FIELDS for line in lines)
        with open(tmp_path / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        T = np.cumsum([float(json.loads(line)["T"]) for line in lines])
        C = np.cumsum([json.loads(line)["C"] for line in lines])
        assert [float(r["T_cum"]) for r in rows] == pytest.approx(T.tolist(), rel=1e-15)
        assert [int(r["C_cum"]) for r in rows] == C.tolist()
        assert sorted(os.listdir(tmp_path)) == man.files
        assert man.config_hash == config_hash(trace.config)

    def test_load_round_trip(self, tmp_path):
        trace = hand_trace(3)
        persist_trace(trace, tmp_path)
        back = load_trace(tmp_path)
        assert back.config == trace.config
        assert [r.as_dict() for r in back.records] == [r.as_dict() for r in trace.records]
        assert np.array_equal(back.final_model, trace.final_model)
        assert back.initial_loss == 1.5

    def test_rerun_from_persisted_config(self, tmp_path):
        trace = run_experiment(parse_config(SMALL))
        persist_trace(trace, tmp_path / "a")
        again = run_experiment(load_trace(tmp_path / "a").config)
        persist_trace(again, tmp_path / "b")
        for f in ("rounds.jsonl", "summary.csv", "config.ini", "final_model.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        assert strip_timestamps((tmp_path / "a" / "manifest.json").read_text()) == \
            strip_timestamps((tmp_path / "b" / "manifest.json").read_text())

    def test_failed_run_is_persisted(self, tmp_path):
        t = hand_trace(2)
        t.termination, t.error = "numeric-failure", "non-finite model"
        man = persist_trace(t, tmp_path)
        assert man.termination == "numeric-failure"
        assert json.loads((tmp_path / "manifest.json").read_text())["error"] == "non-finite model"

    def test_unwritable(self, tmp_path):
        (tmp_path / "file").write_text("x")
        with pytest.raises(OSError, match="file"):
            persist_trace(hand_trace(1), tmp_path / "file" / "sub")

    def test_plot_data(self, tmp_path):
        a, b = hand_trace(3), hand_trace(2)
        out = emit_plot_data({"stsyn": a, "pasgd": b}, "time", tmp_path / "p.csv", targets=[1.0, 0.5, 0.4])
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["target", "stsyn_time", "stsyn_loss", "pasgd_time", "pasgd_loss"]
        assert len(rows) == 4
        assert float(rows[2][1]) == pytest.approx(a.records[1].T_cum)
        assert rows[3][3] == "" and rows[3][4] == ""
        emit_plot_data({"x": a}, "comm", tmp_path / "q.csv", y="accuracy")
        with pytest.raises(ValueError):
            emit_plot_data({"x": a}, "rounds", tmp_path / "r.csv")


class TestCli:
    def test_analyze(self, capsys):
        assert cli_main(["analyze", "--M", "40", "--K", "30", "--U", "2", "--json"]) == 0
        row = json.loads(capsys.readouterr().out)
        assert row["u_bar"] == pytest.approx(2.6352, abs=5e-4)
        assert cli_main(["analyze", "--M", "5", "--K", "2", "--U", "1", "--mc-trials", "100"]) == 0
        assert "monte-carlo" in capsys.readouterr().out

    def test_simulate_sweep_stats(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("STSYN_OUTPUT_ROOT", str(tmp_path))
        (tmp_path / "c.ini").write_text(SMALL)
        assert cli_main(["simulate", "--config", str(tmp_path / "c.ini"), "--out", "one"]) == 0
        assert (tmp_path / "one" / "rounds.jsonl").exists()
        assert cli_main(["sweep", "--config", str(tmp_path / "c.ini"), "--axis", "K",
                         "--values", "1,2,4", "--out", "sw"]) == 0
        assert sorted(os.listdir(tmp_path / "sw")) == ["K=1", "K=2", "K=4", "comparison.csv"]
        capsys.readouterr()
        assert cli_main(["trace-stats", "--trace", str(tmp_path / "one"), "--round", "2"]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert sum(stats["histogram"].values()) == 4
        assert stats["S_size"] == sum(u >= 1 for u in stats["per_worker"])

    def test_verify_bound(self, tmp_path, capsys):
        cfg_text = SMALL.replace("synthetic-logistic", "synthetic-quadratic").replace("alpha = 0.05", "alpha = 0.01")
        (tmp_path / "c.ini").write_text(cfg_text)
        assert cli_main(["simulate", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "run")]) == 0
        capsys.readouterr()
        code = cli_main(["verify-bound", "--trace", str(tmp_path / "run"), "--replicates", "3", "--horizons", "2,5"])
        out = capsys.readouterr()
        rep = json.loads(out.out)
        assert code == 0 and rep["conditions_pass"] and rep["replicates"] == 3
        assert [h["J"] for h in rep["horizons"]] == [2, 5]
        assert "empirical" in out.err

    def test_error_record(self, tmp_path, capsys):
        (tmp_path / "bad.ini").write_text(SMALL.replace("K = 3", "K = 3\nbogus = 1"))
        assert cli_main(["simulate", "--config", str(tmp_path / "bad.ini"), "--out", str(tmp_path / "x")]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["key"] == "scheme.bogus" and err["type"] == "ConfigError"
        assert cli_main(["simulate", "--config", str(tmp_path / "missing.ini"), "--out", "x"]) == 2
        assert json.loads(capsys.readouterr().err)["type"] == "FileNotFoundError"
