import csv

import numpy as np
import pytest

from fskd import cli
from fskd.checkpoint import load_checkpoint, read_records
from fskd.data.datasets import load_dataset

SMALL = ["--widths", "4,8", "--blocks_per_stage", "1", "--embedding_dim", "8", "--input_size", "16",
         "--scale", "16", "--margin", "0.2", "--batch_size", "10", "--lr", "0.02", "--milestones", "",
         "--ratios", "2", "--eval_ratio", "2"]


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["convert-dataset", "--synthetic-digits", "100", "--seed", "1", "--size", "16",
                     "--output", str(root / "train.bin")]) == 0
    assert cli.main(["convert-dataset", "--synthetic-digits", "40", "--seed", "2", "--size", "16",
                     "--output", str(root / "eval")]) == 0
    common = SMALL + ["--train_set", str(root / "train.bin"), "--eval_set", str(root / "eval"),
                      "--checkpoint_dir", str(root / "ck"), "--report_dir", str(root / "rep")]
    assert cli.main(["train-teacher", *common, "--epochs", "2"]) == 0
    return root, common


def test_convert_dataset_formats(workspace, tmp_path):
    root, _ = workspace
    train = load_dataset(root / "train.bin")
    assert len(train) == 100 and train.image_shape == (16, 16, 3)
    assert len(load_dataset(root / "eval")) == 40
    assert cli.main(["convert-dataset", "--input", str(root / "train.bin"), "--limit", "7",
                     "--output", str(tmp_path / "tree")]) == 0
    tree = load_dataset(tmp_path / "tree")
    # the tree groups files by class directory, so match samples up by file stem
    by_stem = {ident.rsplit("/", 1)[-1]: i for i, ident in enumerate(train.ids[:7])}
    assert len(tree) == 7
    for img, label, ident in zip(tree.images, tree.labels, tree.ids):
        i = by_stem[ident.rsplit("/", 1)[-1]]
        np.testing.assert_array_equal(img, train.images[i])
        assert train.classes[train.labels[i]] == tree.classes[label]
    assert cli.main(["convert-dataset", "--input", str(tmp_path / "nope"), "--output", str(tmp_path / "x")]) == 3


def test_teacher_smoke_run_reduces_loss(workspace):
    root, common = workspace
    # 100 samples, batch 10: 50 steps
    assert cli.main(["train-teacher", *common, "--epochs", "5", "--run_name", "smoke"]) == 0
    rows = _read_csv(root / "ck" / "smoke_metrics.csv")
    assert list(rows[0]) == ["step", "epoch", "lr", "task_loss", "distill_loss", "total_loss", "eval_acc"]
    assert len(rows) == 50
    assert float(rows[-1]["total_loss"]) < float(rows[0]["total_loss"])
    assert all(r["distill_loss"] == "" for r in rows)
    assert sum(r["eval_acc"] != "" for r in rows) == 5


def test_seeded_rerun_gives_identical_metrics(workspace):
    root, common = workspace
    for name in ("a", "b"):
        assert cli.main(["train-teacher", *common, "--epochs", "1", "--run_name", name]) == 0
    assert (root / "ck" / "a_metrics.csv").read_bytes() == (root / "ck" / "b_metrics.csv").read_bytes()
    a, b = read_records(root / "ck" / "a.ckpt"), read_records(root / "ck" / "b.ckpt")
    assert a.keys() == b.keys()
    for k in a:
        if k == "meta":
            assert {**a[k], "info": None} == {**b[k], "info": None}
        else:
            np.testing.assert_array_equal(a[k], b[k], err_msg=k)


def test_missing_dataset_exits_nonzero(workspace, capsys):
    _, common = workspace
    code = cli.main(["train-teacher", *common, "--train_set", "/nonexistent/train.bin"])
    assert code == cli.EXIT_DATA
    assert "not found" in capsys.readouterr().err
    assert cli.main(["train-teacher", *common, "--train_set", ""]) == cli.EXIT_CONFIG


def test_config_errors(workspace, tmp_path):
    _, common = workspace
    assert cli.main(["train-teacher", *common, "--no_such_key", "1"]) == cli.EXIT_CONFIG
    assert cli.main(["train-teacher", *common, "--input_size", "32"]) == cli.EXIT_CONFIG
    assert cli.main(["train-teacher", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG


def test_config_file_and_equals_overrides(workspace, tmp_path):
    root, common = workspace
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 1\nrun_name = fromfile\n")
    assert cli.main(["train-teacher", "--config", str(cfg), *common, "--seed=3"]) == 0
    _, meta = load_checkpoint(root / "ck" / "fromfile.ckpt")
    assert meta["rng"]["seed"] == 3 and meta["epoch"] == 1


def test_student_none_matches_baseline(workspace):
    root, common = workspace
    assert cli.main(["train-student", *common, "--epochs", "1", "--distill", "none", "--run_name", "base1"]) == 0
    # a "none" student ignores the teacher entirely, so passing one changes nothing
    assert cli.main(["train-student", *common, "--epochs", "1", "--distill", "none", "--run_name", "base2",
                     "--teacher", str(root / "ck" / "teacher.ckpt")]) == 0
    assert (root / "ck" / "base1_metrics.csv").read_bytes() == (root / "ck" / "base2_metrics.csv").read_bytes()


def test_fskd_student_logs_bounded_distill_loss_and_keeps_teacher(workspace):
    root, common = workspace
    teacher_path = root / "ck" / "teacher.ckpt"
    before = teacher_path.read_bytes()
    assert cli.main(["train-student", *common, "--epochs", "1", "--distill", "fskd", "--run_name", "fs",
                     "--teacher", str(teacher_path)]) == 0
    assert teacher_path.read_bytes() == before
    rows = _read_csv(root / "ck" / "fs_metrics.csv")
    vals = [float(r["distill_loss"]) for r in rows]
    assert len(vals) == 10 and all(0.0 < v < 2.0 for v in vals)
    for r in rows:
        total = float(r["task_loss"]) + 5.0 * float(r["distill_loss"])
        assert float(r["total_loss"]) == pytest.approx(total, rel=1e-12)


def test_student_teacher_mismatch(workspace):
    root, common = workspace
    code = cli.main(["train-student", *common, "--widths", "4,16", "--distill", "fskd",
                     "--teacher", str(root / "ck" / "teacher.ckpt")])
    assert code == cli.EXIT_CONFIG
    assert cli.main(["train-student", *common, "--distill", "fskd"]) == cli.EXIT_CONFIG


def test_resume_continues_training(workspace):
    root, common = workspace
    assert cli.main(["train-teacher", *common, "--epochs", "2", "--run_name", "full"]) == 0
    assert cli.main(["train-teacher", *common, "--epochs", "1", "--run_name", "half"]) == 0
    assert cli.main(["train-teacher", *common, "--epochs", "2", "--run_name", "resumed",
                     "--resume", str(root / "ck" / "half.ckpt")]) == 0
    full, _ = load_checkpoint(root / "ck" / "full.ckpt")
    resumed, _ = load_checkpoint(root / "ck" / "resumed.ckpt")
    for a, b in zip(full.backbone.parameters(), resumed.backbone.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    assert cli.main(["train-teacher", *common, "--epochs", "2", "--seed", "9",
                     "--resume", str(root / "ck" / "half.ckpt")]) == cli.EXIT_CONFIG


def test_eval_report(workspace, capsys):
    root, common = workspace
    assert cli.main(["eval", *common, "--checkpoint", str(root / "ck" / "teacher.ckpt"), "--eval_ratio", "1"]) == 0
    rows = _read_csv(root / "rep" / "eval.csv")
    acc = float(rows[0]["accuracy"])
    assert 0.0 <= acc <= 1.0 and f"accuracy {acc:.4f}" in capsys.readouterr().out
    metrics = _read_csv(root / "ck" / "teacher_metrics.csv")
    # the checkpoint reproduces the accuracy logged at the end of training
    assert acc == float(metrics[-1]["eval_acc"])
    assert cli.main(["eval", *common, "--checkpoint", str(root / "nope.ckpt")]) == cli.EXIT_DATA


def test_analyze_outputs(workspace):
    root, common = workspace
    teacher = str(root / "ck" / "teacher.ckpt")
    assert cli.main(["train-student", *common, "--epochs", "1", "--run_name", "an", "--teacher", teacher]) == 0
    assert cli.main(["analyze", *common, "--teacher", teacher, "--student", str(root / "ck" / "an.ckpt"),
                     "--n_images", "20"]) == 0
    rep = root / "rep"
    ttest = _read_csv(rep / "ttest.csv")
    assert {r["statistic"] for r in ttest} >= {"t", "dof", "p_value", "critical", "reject"}
    assert {r["block_id"] for r in ttest} == {"1", "2"}
    corr = [r for r in _read_csv(rep / "correlation.csv") if r["statistic"] == "pearson_r"]
    assert len(corr) == 2 and all(-1 <= float(r["value"]) <= 1 for r in corr)
    assert len(list(rep.glob("attention_*.pgm"))) == 2 * 2 * 4


def test_ablate_emits_four_rows(workspace):
    root, common = workspace
    assert cli.main(["ablate", *common, "--epochs", "1", "--teacher", str(root / "ck" / "teacher.ckpt")]) == 0
    rows = _read_csv(root / "rep" / "ablation_s0.csv")
    assert [r["variant"] for r in rows] == ["base", "fitnet_l2", "norm_kd", "fskd"]
    assert all(r["seed"] == "0" and r["ratio"] == "2" for r in rows)
    assert all(0.0 <= float(r["lr_accuracy"]) <= 1.0 for r in rows)


def test_thread_limit_env(workspace, monkeypatch):
    _, common = workspace
    monkeypatch.setenv("FSKD_THREADS", "0")
    assert cli.main(["train-teacher", *common, "--epochs", "1", "--run_name", "t0"]) == cli.EXIT_CONFIG
    monkeypatch.setenv("FSKD_THREADS", "many")
    assert cli.main(["train-teacher", *common, "--epochs", "1", "--run_name", "t0"]) == cli.EXIT_CONFIG
    monkeypatch.setenv("FSKD_THREADS", "1")
    assert cli.main(["train-teacher", *common, "--epochs", "1", "--run_name", "t1"]) == 0
    monkeypatch.delenv("FSKD_THREADS")
    assert cli._thread_limit() is None


def test_console_script_help(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("train-teacher", "train-student", "eval", "analyze", "ablate", "convert-dataset"):
        assert name in out
