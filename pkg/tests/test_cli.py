import csv
import hashlib
import json

import numpy as np
import pytest

from gitcd import metrics, trainer
from gitcd.cli import main
from gitcd.graph import load_graph

GEN = ["--communities", "2", "--target-nodes", "60", "--aux-types", "2", "--aux-nodes", "30", "--p-in", "0.2", "--p-out", "0.02", "--feature-dim", "4", "--feature-separation", "2.0"]
SMALL = ["--set", "d_model=8", "--set", "heads=2", "--set", "batch_size=32", "--set", "budget=16", "--set", "max_epochs=2", "--set", "learning_rate=0.01"]


def digest(directory):
    h = hashlib.sha256()
    for path in sorted(directory.iterdir()):
        h.update(path.name.encode() + path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("g") / "g1"
    assert main(["generate", "--out", str(out), "--seed", "7"] + GEN) == 0
    return out


@pytest.fixture(scope="module")
def run(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "e1"
    assert main(["train", "--data", str(data), "--out", str(out)] + SMALL) == 0
    return out


class TestGenerate:
    def test_loadable(self, data):
        graph = load_graph(data)
        assert graph.counts == {"target": 60, "aux1": 30, "aux2": 30}
        assert graph.num_classes == 2

    def test_byte_identical(self, data, tmp_path):
        again = tmp_path / "again"
        assert main(["generate", "--out", str(again), "--seed", "7"] + GEN) == 0
        assert digest(again) == digest(data)

    def test_invalid_probability(self, tmp_path, capsys):
        assert main(["generate", "--out", str(tmp_path / "bad"), "--p-in", "1.2"]) == 2
        assert "p_in" in capsys.readouterr().err


class TestTrain:
    def test_outputs(self, run):
        assert {p.name for p in run.iterdir()} == {"model.npz", "history.csv", "metrics.json", "manifest.json"}
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["config"]["d_model"] == 8 and manifest["seeds"] == [0]
        report = json.loads((run / "metrics.json").read_text())
        assert set(trainer.METRIC_KEYS) <= set(report) and {"std", "per_repeat"} <= set(report)

    def test_override_and_config_file(self, data, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"max_epochs": 1, "loss": {"kl": False}}))
        out = tmp_path / "run"
        assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(out), "--set", "loss.silhouette=false"] + SMALL[:-4]) == 0
        loss = json.loads((out / "manifest.json").read_text())["config"]["loss"]
        assert loss == {"classification": True, "kl": False, "silhouette": False}
        history = (out / "history.csv").read_text().splitlines()
        assert len(history) == 2
        assert float(history[1].split(",")[3]) == 0.0 and float(history[1].split(",")[4]) == 0.0

    def test_repeats_report_mean_and_std(self, data, tmp_path):
        out = tmp_path / "rep"
        assert main(["train", "--data", str(data), "--out", str(out), "--repeats", "2"] + SMALL) == 0
        report = json.loads((out / "metrics.json").read_text())
        assert report["repeats"] == 2
        for key in trainer.METRIC_KEYS:
            values = report["per_repeat"][key]
            assert len(values) == 2
            assert report[key] == pytest.approx(np.mean(values), abs=1e-15)
            assert report["std"][key] == pytest.approx(np.std(values), abs=1e-15)
        assert json.loads((out / "manifest.json").read_text())["seeds"] == [0, 1]

    def test_deterministic_files_and_input_untouched(self, data, run, tmp_path):
        before = digest(data)
        out = tmp_path / "e2"
        assert main(["train", "--data", str(data), "--out", str(out)] + SMALL) == 0
        for name in ("history.csv", "metrics.json"):
            assert (out / name).read_bytes() == (run / name).read_bytes()
        assert digest(data) == before

    @pytest.mark.parametrize(
        "extra, code",
        [
            (["--set", "nonsense=1"], 2),
            (["--set", "heads=3"], 2),
            (["--set", "noequals"], 2),
            (["--repeats", "0"], 2),
        ],
    )
    def test_invalid_config(self, data, tmp_path, extra, code):
        assert main(["train", "--data", str(data), "--out", str(tmp_path / "x")] + extra) == code

    def test_bad_json_and_missing_data(self, data, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["train", "--data", str(data), "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
        assert main(["train", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "y")]) == 4


class TestEvaluateAndEmbed:
    def test_evaluate_reproduces_training_metrics(self, data, run, tmp_path, capsys):
        out = tmp_path / "eval.json"
        assert main(["evaluate", "--checkpoint", str(run / "model.npz"), "--data", str(data), "--split", "test", "--out", str(out)]) == 0
        evaluated = json.loads(out.read_text())
        trained = json.loads((run / "metrics.json").read_text())
        assert list(evaluated) == sorted(trainer.METRIC_KEYS)
        for key in trainer.METRIC_KEYS:
            assert evaluated[key] == trained[key]
        assert json.loads(capsys.readouterr().out) == evaluated

    def test_splits_are_disjoint(self, data):
        graph = load_graph(data)
        assert not set(graph.split_ids("test")) & set(graph.split_ids("val"))

    def test_embed_export(self, data, run, tmp_path):
        out = tmp_path / "emb.csv"
        assert main(["embed", "--checkpoint", str(run / "model.npz"), "--data", str(data), "--out", str(out)]) == 0
        with open(out, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        assert header[:3] == ["node_id", "pred_community", "true_label"]
        assert len(header) == 3 + 8 and len(body) == 60
        graph = load_graph(data)
        pred = np.array([int(r[1]) for r in body])
        test = graph.split_ids("test")
        report = json.loads((run / "metrics.json").read_text())
        assert metrics.nmi(pred[test], graph.labels[test]) == report["nmi"]
        assert metrics.ari(pred[test], graph.labels[test]) == report["ari"]

    def test_incompatible_graph(self, run, tmp_path):
        other = tmp_path / "other"
        assert main(["generate", "--out", str(other), "--feature-dim", "5", "--target-nodes", "60", "--aux-nodes", "30", "--communities", "2"]) == 0
        assert main(["evaluate", "--checkpoint", str(run / "model.npz"), "--data", str(other)]) == 2

    def test_missing_checkpoint(self, data, tmp_path):
        assert main(["evaluate", "--checkpoint", str(tmp_path / "none.npz"), "--data", str(data)]) == 4


class TestVerify:
    def test_clean_and_injected(self, capsys):
        assert main(["verify"]) == 0
        clean = capsys.readouterr().out
        assert "FAIL" not in clean and "max_err=" in clean
        assert main(["verify", "--inject", "kl-sign-flip"]) == 1
        broken = capsys.readouterr().out
        assert "failed: cluster_head" in broken
