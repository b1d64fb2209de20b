"""Acceptance suite: one test per criterion, each reporting PASS/FAIL.

Criteria 1-5 sweep the numerical oracles. Criteria 6-9 run the desk-scale
digit experiment end to end through the command line: render a synthetic
digit set, train one HR teacher, run the four-way ablation for three seeds
and analyze the seed-0 students. That experiment takes on the order of an
hour on a single core; set ``FSKD_ACCEPTANCE_DIR`` to keep its artifacts.

The summary lines are printed at the end of the pytest run.
"""

import csv
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from fskd import cli
from fskd.checkpoint import load_checkpoint
from fskd.data.datasets import Dataset, load_dataset
from fskd.data.evaluate import eval_classification
from fskd.data.iterate import ResolutionSetting, batch_iterator
from fskd.data.resize import make_lr
from fskd.distill import fitnet_loss, fskd_loss
from fskd.engine import Tensor, batch_norm, conv2d, cross_entropy, global_avg_pool, avg_pool2d, linear
from fskd.estimators import CosFaceNet
from fskd.heads import MarginHeadParams, cosface_loss, softmax_loss
from fskd.stats import pearson_r, t_sf, t_test
from fskd.training import metrics_csv
from oracles import check_grads, fskd_scalar, t_density
from test_engine import BINARY, UNARY, away_from_zero, weighted

RESULTS = {}

SEEDS = range(10)


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


# ---------------------------------------------------------------- 1. gradient oracle


def _gradient_cases(rng):
    """(name, fn, arrays) for every differentiable op and both composite losses."""
    cases = []
    for name, (fn, domain) in UNARY.items():
        if domain == "positive":
            x = rng.uniform(0.5, 2.0, size=(3, 4))
        elif domain == "nonzero":
            x = away_from_zero(rng, (3, 4))
        else:
            x = rng.normal(size=(3, 4))
        w = rng.normal(size=fn(Tensor(x)).shape)
        cases.append((name, lambda t, fn=fn, w=w: weighted(fn(t), w), [x]))
    for name, fn in BINARY.items():
        a, b = rng.normal(size=(3, 4)), away_from_zero(rng, (3, 4))
        w = rng.normal(size=fn(Tensor(a), Tensor(b)).shape)
        cases.append((name, lambda x, y, fn=fn, w=w: weighted(fn(x, y), w), [a, b]))
    x, k = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    w = rng.normal(size=(2, 3, 3, 3))
    cases.append(("conv2d", lambda a, b, w=w: weighted(conv2d(a, b, 2, 1), w), [x, k]))
    x, W = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))
    w = rng.normal(size=(4, 3))
    cases.append(("linear", lambda a, b, w=w: weighted(linear(a, b), w), [x, W]))
    x = rng.normal(size=(2, 3, 4, 4))
    w1, w2 = rng.normal(size=(2, 3, 2, 2)), rng.normal(size=(2, 3))
    cases.append(("avg_pool2d", lambda a, w=w1: weighted(avg_pool2d(a, 2), w), [x]))
    cases.append(("global_avg_pool", lambda a, w=w2: weighted(global_avg_pool(a), w), [x]))
    x = rng.normal(size=(4, 3, 2, 2))
    g, b = rng.uniform(0.5, 1.5, 3), rng.normal(size=3)
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, 3)
    w = rng.normal(size=x.shape)
    for training in (True, False):
        cases.append((
            f"batch_norm_{'train' if training else 'eval'}",
            lambda a, gg, bb, t=training, w=w: weighted(batch_norm(a, gg, bb, rm.copy(), rv.copy(), t), w),
            [x, g, b],
        ))
    logits, labels = rng.normal(size=(5, 4)) * 3, rng.integers(0, 4, size=5)
    cases.append(("cross_entropy", lambda z, y=labels: cross_entropy(z, y), [logits]))
    x, W, y = rng.normal(size=(4, 6)), rng.normal(size=(6, 3)), rng.integers(0, 3, size=4)
    cases.append(("softmax_loss", lambda a, c, y=y: softmax_loss(a, y, c), [x, W]))
    cases.append(("cosface_loss", lambda a, c, y=y: cosface_loss(a, y, MarginHeadParams(c, 8.0, 0.35)), [x, W]))
    t = [rng.normal(size=(2, 2, 2, 2)), rng.normal(size=(2, 3, 1, 1))]
    s = [rng.normal(size=(2, 2, 2, 2)), rng.normal(size=(2, 3, 1, 1))]
    cases.append(("fskd_loss", lambda a, c, t=t: fskd_loss(t, [a, c]), s))
    return cases


def test_criterion_1_gradient_oracle():
    worst, worst_name, count = 0.0, "", 0
    for seed in SEEDS:
        for name, fn, arrays in _gradient_cases(np.random.default_rng(seed)):
            err = check_grads(fn, arrays)
            count += 1
            if err > worst:
                worst, worst_name = err, name
    n_ops = len(_gradient_cases(np.random.default_rng(0)))
    record(1, worst < 1e-4, f"{n_ops} ops x {len(SEEDS)} seeds, worst relative error {worst:.2e} ({worst_name})")


# ---------------------------------------------------------------- 2. F-SKD invariants


def test_criterion_2_fskd_invariants():
    failures = []
    rng = np.random.default_rng(2024)
    worst_oracle = worst_scale = 0.0
    for trial in range(50):
        t = [rng.normal(size=(4, 3, 4, 4)), rng.normal(size=(4, 5, 2, 2))]
        s = [rng.normal(size=(4, 3, 4, 4)), rng.normal(size=(4, 5, 2, 2))]
        v = fskd_loss(t, s).item()
        if not 0.0 <= v <= 2.0:
            failures.append(f"range {v}")
        if abs(fskd_loss(t, t).item()) > 1e-15:
            failures.append("identical taps not 0")
        if abs(fskd_loss(t, [-x for x in t]).item() - 2.0) > 1e-14:
            failures.append("negated taps not 2")
        alpha, beta = 10.0 ** rng.uniform(-10, 10), 10.0 ** rng.uniform(-10, 10)
        worst_scale = max(worst_scale, abs(fskd_loss([alpha * x for x in t], [beta * x for x in s]).item() - v))
        worst_oracle = max(worst_oracle, abs(v - fskd_scalar(t, s)))
        if fitnet_loss(t, s).item() == pytest.approx(fitnet_loss([2 * x for x in t], [3 * x for x in s]).item()):
            failures.append("fitnet unexpectedly scale invariant")
    ok = not failures and worst_scale < 1e-10 and worst_oracle < 1e-12
    record(2, ok, f"50 trials; rescaling drift {worst_scale:.1e}, oracle gap {worst_oracle:.1e}; "
                  f"fitnet scale-sensitive; {failures[:3] or 'no other failures'}")


# ---------------------------------------------------------------- 3. CosFace reduction


def test_criterion_3_cosface_reduction():
    worst, monotone = 0.0, True
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x, W = rng.normal(size=(5, 8)), rng.normal(size=(8, 4))
        y = rng.integers(0, 4, size=5)
        s = rng.uniform(1.0, 64.0)
        xn = x / np.linalg.norm(x, axis=1, keepdims=True)
        Wn = W / np.linalg.norm(W, axis=0, keepdims=True)
        ref = softmax_loss(xn, y, s * Wn).item()
        worst = max(worst, abs(cosface_loss(x, y, MarginHeadParams(Tensor(W), s, 0.0)).item() - ref))
        losses = [cosface_loss(x, y, MarginHeadParams(Tensor(W), s, m)).item() for m in np.linspace(0, 0.95, 12)]
        monotone &= all(b >= a for a, b in zip(losses, losses[1:]))
    record(3, worst < 1e-10 and monotone, f"100 cases, worst m=0 gap {worst:.1e}; monotone in m: {monotone}")


# ---------------------------------------------------------------- 4. statistics oracles


def test_criterion_4_statistics():
    from scipy import integrate

    rng = np.random.default_rng(4)
    x = rng.normal(size=50)
    lines = abs(pearson_r(x, 3 * x + 1) - 1.0) < 1e-12 and abs(pearson_r(x, -0.5 * x + 2) + 1.0) < 1e-12
    y = rng.normal(size=50)
    affine = max(abs(pearson_r(a * x + b, y) - pearson_r(x, y)) for a, b in [(0.01, 5), (7, -3), (1e3, 1e2)])
    same = t_test(x, x).t_statistic == 0.0
    rejections = 0
    for trial in range(200):
        r = np.random.default_rng(1000 + trial)
        rejections += t_test(r.normal(size=1000), r.normal(size=1000), 0.01).reject_null
    sigma = math.sqrt(200 * 0.01 * 0.99)
    fpr_ok = abs(rejections - 2) <= 4 * sigma
    pairs = list(zip(np.linspace(-3, 6, 20), [1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 40, 60, 100, 200, 500,
                                              998, 1998]))
    quad_gap = 0.0
    for t, dof in pairs:
        tail, _ = integrate.quad(t_density, abs(t), np.inf, args=(dof,), epsabs=1e-13, epsrel=1e-12, limit=200)
        quad_gap = max(quad_gap, abs(min(1.0, 2 * t_sf(abs(t), dof)) - 2 * tail))
    ok = lines and affine < 1e-10 and same and fpr_ok and quad_gap < 1e-6
    record(4, ok, f"exact lines {lines}; affine drift {affine:.1e}; t(x,x)=0 {same}; "
                  f"{rejections}/200 null rejections (expect 2 +- {4 * sigma:.1f}); quadrature gap {quad_gap:.1e}")


# ---------------------------------------------------------------- 5. pipeline determinism


def test_criterion_5_determinism(tmp_path, digits):
    setting = ResolutionSetting("multiple", (1, 2, 4))

    def stream(seed):
        return b"".join(
            b.hr.tobytes() + b.lr.tobytes() + b.labels.tobytes() + b.ratios_used.tobytes()
            for epoch in range(2)
            for b in batch_iterator(digits, setting, 16, seed, epoch)
        )

    batches_ok = stream(5) == stream(5) and stream(5) != stream(6)
    small = digits.subset(np.arange(40))
    kwargs = dict(widths=(4, 8), blocks_per_stage=1, embedding_dim=8, scale=16.0, margin=0.2, lr=0.02,
                  milestones=(1,), epochs=2, batch_size=8)
    runs = [metrics_csv(CosFaceNet(**kwargs).fit(small.images, small.labels).metrics_) for _ in range(2)]
    csv_ok = runs[0] == runs[1]
    identity = all(np.array_equal(make_lr(img, 1), img) for img in digits.images[:10])
    const = np.full((32, 32, 3), 137, dtype=np.uint8)
    constant = all(np.array_equal(make_lr(const, r), const) for r in (1, 2, 4, 8))
    record(5, batches_ok and csv_ok and identity and constant,
           f"batch streams byte-identical {batches_ok}; metrics CSV identical {csv_ok}; "
           f"make_lr identity at ratio 1 {identity}; constant images preserved {constant}")


# ---------------------------------------------------------------- desk-scale experiment

TRAIN_SIZE = 8000
EVAL_SIZE = 2000
ABLATION_SEEDS = (0, 1, 2)
DESK = {
    "widths": "16,32,64",
    "blocks_per_stage": "1",
    "embedding_dim": "128",
    "input_size": "32",
    "scale": "16",
    "margin": "0.2",
    "lr": "0.05",
    "milestones": "8,11",
    "epochs": "12",
    "batch_size": "64",
    "ratios": "4",
    "eval_ratio": "4",
    "lambda_distill": "5",
}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _args(d):
    out = []
    for k, v in d.items():
        out += [f"--{k}", str(v)]
    return out


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    keep = os.environ.get("FSKD_ACCEPTANCE_DIR")
    root = Path(keep) if keep else tmp_path_factory.mktemp("desk")
    root.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    for name, n, seed in (("train.bin", TRAIN_SIZE, 1), ("eval.bin", EVAL_SIZE, 2)):
        assert cli.main(["convert-dataset", "--synthetic-digits", str(n), "--seed", str(seed),
                         "--output", str(root / name)]) == 0
    common = dict(DESK, train_set=root / "train.bin", eval_set=root / "eval.bin", checkpoint_dir=root / "ck")
    assert cli.main(["train-teacher", *_args(common), "--seed", "0", "--report_dir", str(root / "rep")]) == 0
    teacher = root / "ck" / "teacher.ckpt"
    ablations = {}
    for seed in ABLATION_SEEDS:
        assert cli.main(["ablate", *_args(common), "--seed", str(seed), "--teacher", str(teacher),
                         "--report_dir", str(root / "rep")]) == 0
        ablations[seed] = _read_csv(root / "rep" / f"ablation_s{seed}.csv")
    analyses = {}
    for variant in ("base", "fskd"):
        rep = root / f"analyze_{variant}"
        assert cli.main(["analyze", *_args(common), "--seed", "0", "--teacher", str(teacher),
                         "--student", str(root / "ck" / f"ablate_{variant}_s0.ckpt"), "--report_dir", str(rep),
                         "--n_images", "1000"]) == 0
        analyses[variant] = {"ttest": _read_csv(rep / "ttest.csv"), "correlation": _read_csv(rep / "correlation.csv")}
    elapsed = time.perf_counter() - start
    state, _ = load_checkpoint(teacher)
    teacher_acc = eval_classification(CosFaceNet.from_state(state), load_dataset(root / "eval.bin"), 1)
    return {"root": root, "teacher_acc": teacher_acc, "ablations": ablations, "analyses": analyses,
            "minutes": elapsed / 60}


def _acc(rows, variant):
    return next(float(r["lr_accuracy"]) for r in rows if r["variant"] == variant)


@pytest.mark.slow
def test_criterion_6_fskd_beats_base(desk_run):
    runs = desk_run["ablations"]
    med = {v: float(np.median([_acc(runs[s], v) for s in ABLATION_SEEDS]))
           for v in ("base", "fitnet_l2", "norm_kd", "fskd")}
    teacher_ok = desk_run["teacher_acc"] >= 0.85
    gain = med["fskd"] - med["base"]
    ok = teacher_ok and gain >= 0.01 and med["fskd"] >= med["norm_kd"]
    record(6, ok, f"teacher HR {desk_run['teacher_acc']:.4f} (>= 0.85); median LR accuracy "
                  + ", ".join(f"{k} {v:.4f}" for k, v in med.items())
                  + f"; fskd - base = {100 * gain:+.2f} pp (>= +1.00); wall time {desk_run['minutes']:.1f} min")


def _r_by_block(rows):
    return {int(r["block_id"]): float(r["value"]) for r in rows if r["statistic"] == "pearson_r"}


@pytest.mark.slow
def test_criterion_7_correlation_trend(desk_run):
    fs = _r_by_block(desk_run["analyses"]["fskd"]["correlation"])
    base = _r_by_block(desk_run["analyses"]["base"]["correlation"])
    last = max(fs)
    ok = all(fs[b] > base[b] for b in fs) and fs[last] >= 0.5
    record(7, ok, "r(fskd) vs r(base) per block: "
                  + ", ".join(f"b{b} {fs[b]:.3f}/{base[b]:.3f}" for b in sorted(fs))
                  + f"; final block fskd r >= 0.5: {fs[last] >= 0.5}")


@pytest.mark.slow
def test_criterion_8_norms_differ(desk_run):
    rows = desk_run["analyses"]["fskd"]["ttest"]
    val = {(int(r["block_id"]), r["statistic"]): float(r["value"]) for r in rows}
    blocks = sorted({b for b, _ in val})
    last = blocks[-1]
    ok = val[(last, "reject")] == 1
    record(8, ok, "teacher HR vs fskd student LR norms: "
                  + ", ".join(f"b{b} t={val[(b, 't')]:.2f} reject={int(val[(b, 'reject')])}" for b in blocks)
                  + f" (final block must reject at alpha 0.01)")


@pytest.mark.slow
def test_criterion_9_ablation_harness(desk_run):
    runs = desk_run["ablations"]
    shape_ok = all([r["variant"] for r in rows] == ["base", "fitnet_l2", "norm_kd", "fskd"] for rows in runs.values())
    firsts = sum(_acc(rows, "fskd") >= max(float(r["lr_accuracy"]) for r in rows) for rows in runs.values())
    record(9, shape_ok and firsts >= 2, f"four rows per seed {shape_ok}; fskd ranks first in {firsts}/3 seeds "
                                        + "; ".join(f"s{s}: " + " ".join(f"{r['variant']}={float(r['lr_accuracy']):.4f}"
                                                                         for r in rows) for s, rows in runs.items()))
