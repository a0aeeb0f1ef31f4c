from pathlib import Path

import numpy as np
import pytest

from factorizer.autograd import ftensor
from factorizer.exceptions import ConfigurationError
from factorizer.main import env_defaults, main
from factorizer.services import checkpoint, dataset_io

TINY = """
# tiny end-to-end run
model.base_channels = 4
model.head_dim = 2
model.patch = 2
model.patch_size = 16
data.extent = 16
data.margin = 2
data.blob_count = 1, 1
data.blob_radius = 1.5, 2.5
data.soft_edge = 0.5
data.train_samples = 2
data.eval_samples = 1
train.steps = 2
train.warmup_steps = 0
train.checkpoint_every = 1
train.num_workers = 0
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY, encoding="utf-8")
    return str(path)


@pytest.fixture
def workspace(tmp_path, config_file):
    """Generated data and a two-step checkpoint"""
    assert main(["gen-data", "--config", config_file, "--out", str(tmp_path / "data")]) == 0
    code = main(["train", "--config", config_file, "--data", str(tmp_path / "data" / "train"), "--out", str(tmp_path / "ckpt")])
    assert code == 0
    return tmp_path


def test_gen_data_writes_both_splits(workspace):
    assert [s.id for s in dataset_io.load_dataset(workspace / "data" / "train")] == ["train-000", "train-001"]
    assert [s.id for s in dataset_io.load_dataset(workspace / "data" / "eval")] == ["eval-000"]


def test_single_split(tmp_path, config_file):
    assert main(["gen-data", "--config", config_file, "--split", "eval", "--out", str(tmp_path / "only")]) == 0
    assert [s.id for s in dataset_io.load_dataset(tmp_path / "only")] == ["eval-000"]


def test_train_writes_checkpoints_and_log(workspace):
    names = sorted(p.name for p in (workspace / "ckpt").iterdir())
    assert names == ["last.fckp", "step-000001.fckp", "step-000002.fckp", "train_log.tsv"]
    assert checkpoint.load_checkpoint(workspace / "ckpt" / "last.fckp").step == 2
    log = (workspace / "ckpt" / "train_log.tsv").read_text().splitlines()
    assert log[0] == "step\tlr\tloss" and len(log) == 3


def test_seed_flag_makes_training_reproducible(workspace, config_file):
    data = str(workspace / "data" / "train")
    for run in ("a", "b"):
        assert main(["train", "--config", config_file, "--seed", "3", "--data", data, "--out", str(workspace / run)]) == 0
    assert checkpoint.file_hash(workspace / "a" / "last.fckp") == checkpoint.file_hash(workspace / "b" / "last.fckp")


def test_infer_then_eval(workspace, config_file, capsys):
    ckpt = str(workspace / "ckpt" / "last.fckp")
    data = str(workspace / "data" / "eval")
    preds = workspace / "preds"
    assert main(["infer", "--config", config_file, "--checkpoint", ckpt, "--data", data, "--out", str(preds)]) == 0
    labels = dataset_io.load_prediction(preds, "eval-000")
    assert labels.shape == (16, 16, 16) and set(np.unique(labels)) <= {0, 1, 2}

    report = workspace / "metrics.tsv"
    args = ["eval", "--config", config_file, "--predictions", str(preds), "--data", data]
    assert main(args + ["--report", str(report)]) == 0
    text = report.read_text()
    assert text.startswith("case\tclass\tdice\thd95\n") and "# summary\n" in text
    assert main(args) == 0
    assert capsys.readouterr().out == text


def test_ablate_leave_one_out(workspace, config_file):
    report = workspace / "ablation.tsv"
    args = [
        "ablate", "--config", config_file, "--checkpoint", str(workspace / "ckpt" / "last.fckp"),
        "--data", str(workspace / "data" / "eval"), "--plan", "leave-one-out", "--report", str(report),
    ]
    assert main(args) == 0
    lines = report.read_text().splitlines()
    assert lines[0].startswith("family\tlayer") and len(lines) == 10


def test_inspect_components(workspace, config_file):
    out = workspace / "components"
    args = [
        "inspect-components", "--config", config_file, "--checkpoint", str(workspace / "ckpt" / "last.fckp"),
        "--data", str(workspace / "data" / "eval"), "--layers", "1,5", "--out", str(out),
    ]
    assert main(args) == 0
    assert sorted(p.name for p in out.iterdir()) == ["layer-01.ft", "layer-05.ft"]
    assert ftensor.load(out / "layer-05.ft").shape[1:] == (1, 1, 1)
    assert main(args[:-4] + ["--case", "eval-404", "--out", str(out)]) == 1


def test_params_report(capsys):
    assert main(["params", "--set", "model.base_channels=8"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("parameters\t")
    assert lines[1] == "reference\t5900000"
    assert lines[2].startswith("deviation_percent\t-")


def test_usage_errors_exit_with_two():
    assert main(["train"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["params", "--log-level", "LOUD"]) == 2


def test_package_errors_exit_with_one(tmp_path):
    assert main(["params", "--set", "model.in_channels=3"]) == 1
    assert main(["params", "--config", str(tmp_path / "absent.cfg")]) == 1
    missing = str(tmp_path / "absent.fckp")
    assert main(["infer", "--checkpoint", missing, "--data", str(tmp_path), "--out", str(tmp_path / "p")]) == 1


def test_environment_defaults(monkeypatch):
    monkeypatch.setenv("FACTORIZER_SEED", "11")
    monkeypatch.setenv("FACTORIZER_NUM_WORKERS", "0")
    assert env_defaults() == {"train.seed": 11, "data.seed": 11, "train.num_workers": 0, "infer.num_workers": 0}


@pytest.mark.parametrize("name", ["FACTORIZER_SEED", "FACTORIZER_NUM_WORKERS"])
def test_malformed_environment_value(monkeypatch, name):
    monkeypatch.setenv(name, "four")
    with pytest.raises(ConfigurationError, match=name):
        env_defaults()
    assert main(["params"]) == 1


def test_shipped_configs(capsys):
    configs = Path(__file__).resolve().parents[1] / "configs"
    assert main(["params", "--config", str(configs / "desk.cfg")]) == 0
    assert main(["params", "--config", str(configs / "brats.cfg")]) == 0
    deviation = float(capsys.readouterr().out.splitlines()[-1].split("\t")[1])
    assert abs(deviation) < 20.0
