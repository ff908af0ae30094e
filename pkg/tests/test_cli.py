import csv
import json
import math

import numpy as np
import pytest

from main import EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from app.services.dataset_io import load_dataset
from app.services.experiments import file_digest

TINY_CONFIG = {
    "pretrain": {
        "epochs": 1,
        "encoder": {"hidden_size": 6, "layers": 1},
        "contrastive": {"queue_size": 8, "batch_size": 4, "temperature": 0.5, "momentum": 0.9},
    },
    "evaluation": {"epochs": 5, "batch_size": None},
    "finetune": {"epochs": 1, "batch_size": 4},
}


@pytest.fixture
def config_file(tmp_path):
    def _write(overrides=None, name="run.json"):
        data = json.loads(json.dumps(TINY_CONFIG))
        for section, values in (overrides or {}).items():
            data.setdefault(section, {}).update(values)
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return str(path)
    return _write


@pytest.fixture
def synthetic_file(tmp_path):
    path = tmp_path / "synth.jsonl"
    code = main(["synth", "--out", str(path), "--classes", "2", "--per-class", "6", "--seed", "1"])
    assert code == EXIT_OK
    return str(path)


def _only_run(root, prefix):
    runs = sorted(root.glob(f"{prefix}-*"))
    assert len(runs) == 1
    return runs[0]


@pytest.mark.integration
class TestSynthCommand:
    """Synthetic dataset generation"""

    def test_writes_balanced_dataset(self, synthetic_file):
        ds = load_dataset(synthetic_file)
        assert len(ds) == 12
        assert ds.class_counts() == [6, 6]

    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for path in (a, b):
            assert main(["synth", "--out", str(path), "--classes", "3", "--per-class", "2", "--seed", "4"]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_prints_class_balance(self, tmp_path, capsys):
        main(["synth", "--out", str(tmp_path / "s.jsonl"), "--classes", "2", "--per-class", "3"])
        out = capsys.readouterr().out
        assert "class 0: 3" in out and "class 1: 3" in out

    def test_single_class_is_invalid(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "s.jsonl"), "--classes", "1"]) == EXIT_VALIDATION

    def test_missing_out(self):
        assert main(["synth"]) == EXIT_VALIDATION


@pytest.mark.integration
class TestPretrainCommand:
    """Pretraining runs and their artifacts"""

    def test_artifacts(self, synthetic_file, config_file, tmp_path):
        runs = tmp_path / "runs"
        assert main(["pretrain", "--data", synthetic_file, "--config", config_file(), "--out", str(runs)]) == EXIT_OK
        run = _only_run(runs, "pretrain")
        assert (run / "config.json").exists()
        assert (run / "checkpoints" / "last.pt").exists()
        with open(run / "loss.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 3
        assert all(math.isfinite(float(row["loss"])) for row in rows)
        summary = json.loads((run / "summary.json").read_text())
        assert summary["steps"] == 3
        assert summary["command"] == "pretrain"

    def test_same_seed_same_loss_bytes(self, synthetic_file, config_file, tmp_path):
        runs = [tmp_path / "first", tmp_path / "second"]
        for root in runs:
            assert main(["pretrain", "--data", synthetic_file, "--config", config_file(), "--out", str(root)]) == EXIT_OK
        first, second = (_only_run(root, "pretrain") for root in runs)
        assert first.name == second.name
        assert (first / "loss.csv").read_bytes() == (second / "loss.csv").read_bytes()

    def test_resumed_run_matches_uninterrupted_loss(self, synthetic_file, config_file, tmp_path):
        path = config_file({"pretrain": {"checkpoint_every": 2}})
        args = ["pretrain", "--data", synthetic_file, "--config", path, "--epochs", "2"]
        assert main(args + ["--out", str(tmp_path / "full")]) == EXIT_OK
        full = _only_run(tmp_path / "full", "pretrain")
        midway = full / "checkpoints" / "step-00000004.pt"
        assert midway.exists()

        assert main(args + ["--out", str(tmp_path / "resumed"), "--resume", str(midway)]) == EXIT_OK
        resumed = _only_run(tmp_path / "resumed", "pretrain")
        assert (resumed / "loss.csv").read_bytes() == (full / "loss.csv").read_bytes()

    def test_other_data_gets_its_own_run(self, synthetic_file, config_file, tmp_path):
        other = tmp_path / "other.jsonl"
        assert main(["synth", "--out", str(other), "--classes", "2", "--per-class", "6", "--seed", "2"]) == EXIT_OK
        runs = tmp_path / "runs"
        for data in (synthetic_file, str(other)):
            assert main(["pretrain", "--data", data, "--config", config_file(), "--out", str(runs)]) == EXIT_OK
        directories = sorted(runs.glob("pretrain-*"))
        assert len(directories) == 2
        digests = {json.loads((d / "config.json").read_text())["inputs"]["data"]["sha256"] for d in directories}
        assert digests == {file_digest(synthetic_file), file_digest(other)}

    def test_runs_dir_from_environment(self, synthetic_file, config_file, tmp_path):
        assert main(["pretrain", "--data", synthetic_file, "--config", config_file()]) == EXIT_OK
        _only_run(tmp_path / "runs", "pretrain")

    def test_zero_temperature(self, synthetic_file, config_file):
        path = config_file({"pretrain": {"contrastive": {"temperature": 0.0}}})
        assert main(["pretrain", "--data", synthetic_file, "--config", path]) == EXIT_VALIDATION

    def test_unknown_strategy(self, synthetic_file, config_file):
        code = main(["pretrain", "--data", synthetic_file, "--config", config_file(), "--strategy", "twirl"])
        assert code == EXIT_VALIDATION

    def test_missing_data_file(self, config_file, tmp_path):
        code = main(["pretrain", "--data", str(tmp_path / "absent.jsonl"), "--config", config_file()])
        assert code == EXIT_IO

    def test_missing_config_file(self, synthetic_file, tmp_path):
        code = main(["pretrain", "--data", synthetic_file, "--config", str(tmp_path / "absent.toml")])
        assert code == EXIT_VALIDATION

    def test_divergence_exit_code(self, synthetic_file, config_file, monkeypatch):
        import app.services.trainer as trainer_module
        from app.services.contrastive import StepOutput

        def broken_step(learner, x_query, x_key, queue, config):
            q = learner.query(x_query)
            return StepOutput(loss=q.sum() * float("nan"), q=q, k=q.detach(), negatives=0)

        monkeypatch.setattr(trainer_module, "queue_step", broken_step)
        assert main(["pretrain", "--data", synthetic_file, "--config", config_file()]) == EXIT_DIVERGENCE


@pytest.mark.integration
class TestEvalCommand:
    """Evaluation modes on a pretrained checkpoint"""

    @pytest.fixture
    def checkpoint(self, synthetic_file, config_file, tmp_path):
        runs = tmp_path / "pretrain-runs"
        assert main(["pretrain", "--data", synthetic_file, "--config", config_file(), "--out", str(runs)]) == EXIT_OK
        return str(_only_run(runs, "pretrain") / "checkpoints" / "last.pt")

    @pytest.mark.parametrize("mode,rows", [("linear", 1), ("semi", 1), ("representations", 5)])
    def test_modes(self, synthetic_file, config_file, checkpoint, tmp_path, mode, rows):
        runs = tmp_path / "eval-runs"
        code = main(["eval", "--mode", mode, "--data", synthetic_file, "--checkpoint", checkpoint,
                     "--config", config_file(), "--fraction", "0.5", "--out", str(runs)])
        assert code == EXIT_OK
        run = _only_run(runs, f"eval-{mode}")
        with open(run / "metrics.csv") as f:
            table = list(csv.DictReader(f))
        assert len(table) == rows
        assert all(0.0 <= float(row["top1"]) <= 1.0 for row in table)

    def test_same_seed_same_metric_bytes(self, synthetic_file, config_file, checkpoint, tmp_path):
        runs = [tmp_path / "first", tmp_path / "second"]
        for root in runs:
            code = main(["eval", "--data", synthetic_file, "--checkpoint", checkpoint, "--config", config_file(),
                         "--out", str(root)])
            assert code == EXIT_OK
        first, second = (_only_run(root, "eval-linear") for root in runs)
        assert (first / "metrics.csv").read_bytes() == (second / "metrics.csv").read_bytes()

    def test_checkpoint_is_pinned_in_config(self, synthetic_file, config_file, checkpoint, tmp_path):
        code = main(["eval", "--data", synthetic_file, "--checkpoint", checkpoint, "--config", config_file(),
                     "--out", str(tmp_path / "runs")])
        assert code == EXIT_OK
        stored = json.loads((_only_run(tmp_path / "runs", "eval-linear") / "config.json").read_text())
        assert stored["inputs"]["checkpoint"] == {"path": checkpoint, "sha256": file_digest(checkpoint)}
        assert "test_data" not in stored["inputs"]

    def test_paradigms_without_checkpoint(self, synthetic_file, config_file, tmp_path):
        code = main(["eval", "--mode", "paradigms", "--data", synthetic_file, "--config", config_file(),
                     "--out", str(tmp_path / "runs")])
        assert code == EXIT_OK
        summary = json.loads((_only_run(tmp_path / "runs", "eval-paradigms") / "summary.json").read_text())
        assert [row["paradigm"] for row in summary["rows"]] == ["queue", "end_to_end", "memory_bank"]

    def test_missing_checkpoint_file(self, synthetic_file, config_file, tmp_path):
        code = main(["eval", "--data", synthetic_file, "--config", config_file(),
                     "--checkpoint", str(tmp_path / "absent.pt")])
        assert code == EXIT_IO

    def test_checkpoint_flag_required(self, synthetic_file, config_file):
        assert main(["eval", "--data", synthetic_file, "--config", config_file()]) == EXIT_VALIDATION


@pytest.mark.integration
class TestAugmentCommand:
    """Augmentation previews"""

    def test_identity_returns_input(self, synthetic_file, tmp_path):
        out = tmp_path / "preview" / "views.jsonl"
        code = main(["augment", "--data", synthetic_file, "--out", str(out), "--strategy", "identity"])
        assert code == EXIT_OK
        original = load_dataset(synthetic_file)
        for path in (out, out.parent / "views.key.jsonl"):
            preview = load_dataset(path)
            assert preview.labels == original.labels
            for a, b in zip(original.sequences, preview.sequences):
                np.testing.assert_array_equal(a.coords, b.coords)

    def test_writes_query_and_key_views(self, synthetic_file, tmp_path):
        out = tmp_path / "preview" / "views.jsonl"
        code = main(["augment", "--data", synthetic_file, "--out", str(out), "--strategy", "rotation,noise"])
        assert code == EXIT_OK
        queries, keys = load_dataset(out), load_dataset(out.parent / "views.key.jsonl")
        assert len(queries) == len(keys) == 12
        assert keys.labels == queries.labels
        # independently sampled transforms
        assert all(not np.array_equal(q.coords, k.coords) for q, k in zip(queries.sequences, keys.sequences))

    def test_parameter_log_in_range(self, synthetic_file, tmp_path):
        out = tmp_path / "preview" / "views.jsonl"
        code = main(["augment", "--data", synthetic_file, "--out", str(out), "--strategy", "rotation,shear,blur"])
        assert code == EXIT_OK
        entries = [json.loads(line) for line in (out.parent / "augment_params.jsonl").read_text().splitlines()]
        assert len(entries) == 2 * 12
        for entry in entries:
            rotation, shear, blur = entry["params"]
            main_axis = "XYZ".index(rotation["main_axis"])
            for axis, name in enumerate(("alpha", "beta", "gamma")):
                limit = math.pi / 6 if axis == main_axis else math.pi / 180
                assert 0.0 <= rotation[name] <= limit
            assert all(-1.0 <= shear[f] <= 1.0 for f in ("xy", "xz", "yx", "yz", "zx", "zy"))
            if blur["blurred"]:
                assert 0.1 <= blur["sigma"] <= 2.0

    def test_requires_out(self, synthetic_file):
        assert main(["augment", "--data", synthetic_file]) == EXIT_VALIDATION


@pytest.mark.integration
class TestSweepCommand:
    """Hyperparameter sweeps from the command line"""

    def test_parameter_values(self, synthetic_file, config_file, tmp_path):
        code = main(["sweep", "--data", synthetic_file, "--config", config_file(), "--out", str(tmp_path / "runs"),
                     "--parameter", "pretrain.contrastive.temperature", "--values", "0.1", "0.5"])
        assert code == EXIT_OK
        with open(_only_run(tmp_path / "runs", "sweep") / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        assert [row["pretrain.contrastive.temperature"] for row in rows] == ["0.1", "0.5"]

    def test_composition_grid(self, synthetic_file, config_file, tmp_path):
        code = main(["sweep", "--data", synthetic_file, "--config", config_file(), "--out", str(tmp_path / "runs"),
                     "--grid", "shear,reverse"])
        assert code == EXIT_OK
        with open(_only_run(tmp_path / "runs", "sweep") / "metrics.csv") as f:
            assert len(list(csv.DictReader(f))) == 4

    def test_needs_values(self, synthetic_file, config_file):
        code = main(["sweep", "--data", synthetic_file, "--config", config_file(), "--parameter", "seed"])
        assert code == EXIT_VALIDATION

    def test_invalid_swept_value(self, synthetic_file, config_file):
        code = main(["sweep", "--data", synthetic_file, "--config", config_file(),
                     "--parameter", "pretrain.contrastive.temperature", "--values", "-1"])
        assert code == EXIT_VALIDATION
