import json

import numpy as np
import pytest

import diffrnn.cli as cli
from diffrnn.backprop import GradCheckReport
from diffrnn.cells import dos_energy
from diffrnn.cli import build_config, main, parse_arch, parse_split
from diffrnn.data import KFold, MonteCarlo, load_jsonl
from diffrnn.train import checkpoint_load


def make_data(tmp_path, name="data.jsonl", count=12, length=6, dim=4, seed=0):
    path = tmp_path / name
    rc = main(["synth", "--task", "velocity", "--classes", "2",
               "--count", str(count), "--len", str(length), "--dim", str(dim),
               "--noise", "0.05", "--seed", str(seed), "--out", str(path)])
    assert rc == 0
    return path


FAST = ["--epochs", "2", "--lr", "0.01", "--state-units", "4"]


class TestParsers:
    def test_arch_strings(self):
        assert parse_arch("lstm") == ("lstm", None)
        assert parse_arch("rnn") == ("rnn", None)
        assert parse_arch("stacked:3") == ("stacked", 3)
        assert parse_arch("d2rnn:2") == ("d2rnn", 2)
        assert parse_arch("drnn:1") == ("drnn", 1)
        assert parse_arch("dos:0") == ("dos", 0)

    @pytest.mark.parametrize("bad", ["gru", "stacked", "d2rnn:x", "lstm:2", ""])
    def test_arch_rejects(self, bad):
        with pytest.raises(cli.UsageError):
            parse_arch(bad)

    def test_d2rnn_builds_increasing_orders(self):
        cfg = build_config("d2rnn:3", 5, 4, 2)
        assert [k.order for k, _ in cfg.layers] == [0, 1, 2]
        assert all(k.kind == "dos" for k, _ in cfg.layers)

    def test_stacked_builds_lstm_layers(self):
        cfg = build_config("stacked:3", 5, 4, 2)
        assert [k.kind for k, _ in cfg.layers] == ["lstm"] * 3

    def test_split_strings(self):
        assert parse_split("none", 0) is None
        assert parse_split("kfold:5", 7) == KFold(k=5, seed=7)
        assert parse_split("mc:0.8:3", 7) == MonteCarlo(0.8, 3, 7)
        assert parse_split("mc:0.8", 7) == MonteCarlo(0.8, 5, 7)
        with pytest.raises(cli.UsageError):
            parse_split("loocv", 0)


class TestSynth:
    def test_writes_header_plus_count_lines(self, tmp_path, capsys):
        path = make_data(tmp_path, count=10)
        assert len(path.read_text().splitlines()) == 11
        out = capsys.readouterr().out
        assert "class0: 5 sequences" in out
        assert "class1: 5 sequences" in out

    def test_same_seed_byte_identical(self, tmp_path):
        a = make_data(tmp_path, "a.jsonl", seed=3)
        b = make_data(tmp_path, "b.jsonl", seed=3)
        assert a.read_bytes() == b.read_bytes()

    def test_short_length_warns(self, tmp_path, capsys):
        rc = main(["synth", "--len", "3", "--count", "2",
                   "--out", str(tmp_path / "s.jsonl")])
        assert rc == 0
        assert "order-2 derivative window" in capsys.readouterr().err

    def test_missing_out_is_usage_error(self, capsys):
        assert main(["synth", "--count", "2"]) == 1


class TestTrain:
    def test_artifacts_and_determinism(self, tmp_path):
        data = make_data(tmp_path)
        outs = []
        for run in ("r1", "r2"):
            out = tmp_path / run
            rc = main(["train", "--data", str(data), "--arch", "dos:1",
                       "--split", "kfold:3", "--seed", "1", *FAST,
                       "--out", str(out)])
            assert rc == 0
            outs.append(out)
        for name in ("metrics.csv", "loss_epochs.csv", "effective_config.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        assert (outs[0] / "checkpoint_split0.json").exists()
        assert (outs[0] / "checkpoint_split2.json").exists()
        lines = (outs[0] / "metrics.csv").read_text().splitlines()
        assert lines[0] == "split,n_test,accuracy,mean_loss"
        assert len(lines) == 5                    # 3 folds + mean row
        assert lines[-1].startswith("mean,12,")

    def test_effective_config_echo(self, tmp_path):
        data = make_data(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--data", str(data), *FAST, "--out", str(out)]) == 0
        doc = json.loads((out / "effective_config.json").read_text())
        assert doc["command"] == "train"
        assert doc["config"]["epochs"] == 2
        assert doc["config"]["arch"] == "d2rnn:3"  # default survived

    def test_config_file_and_flag_precedence(self, tmp_path):
        data = make_data(tmp_path)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 1, "arch": "lstm",
                                   "learning_rate": 0.01, "state_units": 4}))
        out = tmp_path / "run"
        rc = main(["train", "--data", str(data), "--config", str(cfg),
                   "--epochs", "2", "--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "effective_config.json").read_text())
        assert doc["config"]["arch"] == "lstm"    # from file
        assert doc["config"]["epochs"] == 2       # flag wins

    def test_unknown_config_key(self, tmp_path, capsys):
        data = make_data(tmp_path)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"optimizer": "adam"}))
        rc = main(["train", "--data", str(data), "--config", str(cfg),
                   "--out", str(tmp_path / "run")])
        assert rc == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_bad_arch_is_usage_error(self, tmp_path):
        data = make_data(tmp_path)
        rc = main(["train", "--data", str(data), "--arch", "gru", *FAST,
                   "--out", str(tmp_path / "run")])
        assert rc == 1

    def test_missing_data_is_data_error(self, tmp_path):
        rc = main(["train", "--data", str(tmp_path / "nope.jsonl"), *FAST,
                   "--out", str(tmp_path / "run")])
        assert rc == 2

    def test_malformed_data_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        rc = main(["train", "--data", str(bad), *FAST,
                   "--out", str(tmp_path / "run")])
        assert rc == 2
        assert "line 1" in capsys.readouterr().err


class TestEval:
    def test_eval_trained_checkpoint(self, tmp_path, capsys):
        data = make_data(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--data", str(data), "--arch", "dos:0", *FAST,
                     "--out", str(out)]) == 0
        rc = main(["eval", "--checkpoint", str(out / "checkpoint_split0.json"),
                   "--data", str(data), "--out", str(tmp_path / "eval")])
        assert rc == 0
        assert "accuracy" in capsys.readouterr().out
        assert (tmp_path / "eval" / "confusion.csv").exists()
        assert (tmp_path / "eval" / "metrics.csv").exists()

    def test_bad_checkpoint(self, tmp_path):
        data = make_data(tmp_path)
        bad = tmp_path / "ckpt.json"
        bad.write_text("{}")
        assert main(["eval", "--checkpoint", str(bad), "--data", str(data)]) == 2


class TestGradcheck:
    def test_pass_exit_zero(self, capsys):
        rc = main(["gradcheck", "--arch", "dos:1", "--state-units", "3",
                   "--input-dim", "3", "--len", "4", "--seed", "0"])
        assert rc == 0
        assert "PASS" in capsys.readouterr().out

    def test_fail_exit_three(self, monkeypatch, capsys):
        def failing(model, frames, label, h=1e-5, tol=1e-4):
            return GradCheckReport(entries=[], max_rel_error=1.0,
                                   worst="layer0.w_ix[0, 0]", passed=False)

        monkeypatch.setattr(cli, "grad_check", failing)
        rc = main(["gradcheck"])
        assert rc == 3
        assert "FAIL" in capsys.readouterr().out


class TestDosEnergy:
    def _checkpoint(self, tmp_path, data):
        out = tmp_path / "run"
        assert main(["train", "--data", str(data), "--arch", "d2rnn:3", *FAST,
                     "--out", str(out)]) == 0
        return out / "checkpoint_split0.json"

    def test_columns_and_values_match_library(self, tmp_path):
        data = make_data(tmp_path)
        ckpt = self._checkpoint(tmp_path, data)
        csv_path = tmp_path / "energy.csv"
        rc = main(["dos-energy", "--checkpoint", str(ckpt), "--data", str(data),
                   "--layer", "2", "--index", "1", "--out", str(csv_path)])
        assert rc == 0
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "frame,order0,order1,order2"
        model = checkpoint_load(ckpt)
        ds = load_jsonl(data)
        direct = dos_energy(model, ds.sequences[1].frames, 2)
        assert len(lines) == 1 + direct.shape[0]
        got = np.array([[float(v) for v in line.split(",")[1:]]
                        for line in lines[1:]])
        assert np.array_equal(got, direct)       # repr round trip is lossless

    def test_constant_input_order1_decays_to_zero(self, tmp_path):
        data = make_data(tmp_path, dim=3)
        out = tmp_path / "run"
        assert main(["train", "--data", str(data), "--arch", "dos:1", *FAST,
                     "--out", str(out)]) == 0
        model = checkpoint_load(out / "checkpoint_split0.json")
        frames = np.full((60, 3), 0.3)
        e = dos_energy(model, frames, 0)
        assert e[-1, 1] < 1e-6
        assert e[-1, 1] < e[0, 1]

    def test_index_out_of_range(self, tmp_path):
        data = make_data(tmp_path)
        ckpt = self._checkpoint(tmp_path, data)
        rc = main(["dos-energy", "--checkpoint", str(ckpt), "--data", str(data),
                   "--index", "99"])
        assert rc == 2


class TestEnsembleCommand:
    def test_member_rows_and_determinism(self, tmp_path):
        data = make_data(tmp_path)
        outs = []
        for run in ("e1", "e2"):
            out = tmp_path / run
            rc = main(["ensemble", "--data", str(data), "--max-order", "1",
                       "--seed", "2", *FAST, "--out", str(out)])
            assert rc == 0
            outs.append(out)
        lines = (outs[0] / "metrics.csv").read_text().splitlines()
        assert lines[0] == "model,mean_accuracy"
        assert [l.split(",")[0] for l in lines[1:]] == ["dos:0", "dos:1", "ensemble"]
        assert (outs[0] / "metrics.csv").read_bytes() == \
               (outs[1] / "metrics.csv").read_bytes()
        assert (outs[0] / "ensemble_split0.json").exists()

    def test_order_zero_matches_single_model_accuracy(self, tmp_path):
        data = make_data(tmp_path)
        ens_out = tmp_path / "ens"
        trn_out = tmp_path / "trn"
        args = ["--data", str(data), "--seed", "3", *FAST]
        assert main(["ensemble", *args, "--max-order", "0",
                     "--out", str(ens_out)]) == 0
        assert main(["train", *args, "--arch", "dos:0",
                     "--out", str(trn_out)]) == 0
        ens_rows = (ens_out / "metrics.csv").read_text().splitlines()[1:]
        single_acc = (trn_out / "metrics.csv").read_text().splitlines()[1].split(",")[2]
        assert ens_rows[0].split(",")[1] == single_acc       # dos:0 member
        assert ens_rows[1].split(",")[1] == single_acc       # ensemble == member
