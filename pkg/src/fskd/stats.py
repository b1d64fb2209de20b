"""Feature statistics: norm t-tests, direction correlation, attention maps.

The Student-t distribution is evaluated through the regularized incomplete
beta function, computed here with a Lentz continued fraction.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .backbone import Backbone
from .data.datasets import Dataset
from .data.iterate import standardize
from .data.resize import make_lr_batch
from .engine import no_grad

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 10000


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, dof: float) -> float:
    """P(T > t) for Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise ValueError("dof must be positive")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t: float, dof: float) -> float:
    return 1.0 - t_sf(t, dof)


def t_critical(alpha: float, dof: float) -> float:
    """The c with P(T > c) = alpha, found by bisection on :func:`t_sf`."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi = -1.0, 1.0
    while t_sf(hi, dof) > alpha:
        hi *= 2.0
    while t_sf(lo, dof) < alpha:
        lo *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_sf(mid, dof) > alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


@dataclass
class TTestResult:
    t_statistic: float
    dof: int
    p_value: float
    alpha: float
    reject_null: bool
    critical_value: float


def t_test(x: Sequence[float], y: Sequence[float], alpha: float = 0.01, tail: str = "two-sided") -> TTestResult:
    """Equal-size two-sample t-test.

    ``t = (mean(x) - mean(y)) / sqrt((s_x**2 + s_y**2) / n)`` with sample
    standard deviations and ``2n - 2`` degrees of freedom. For the default
    two-sided test the null is rejected when ``|t| > c`` with
    ``P(T > c) = alpha / 2``; ``tail="greater"`` uses ``P(T > c) = alpha``
    and rejects when ``t > c``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("x and y must be 1-D")
    if len(x) != len(y):
        raise ValueError(f"groups must have equal size, got {len(x)} and {len(y)}")
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 observations per group")
    if tail not in ("two-sided", "greater"):
        raise ValueError("tail must be 'two-sided' or 'greater'")
    diff = x.mean() - y.mean()
    pooled = (x.var(ddof=1) + y.var(ddof=1)) / n
    dof = 2 * n - 2
    if pooled == 0.0:
        if diff != 0.0:
            raise ValueError("t statistic undefined: zero variance with unequal means")
        t = 0.0
    else:
        t = float(diff / math.sqrt(pooled))
    if tail == "two-sided":
        p = min(1.0, 2.0 * t_sf(abs(t), dof))
        c = t_critical(alpha / 2.0, dof)
        reject = abs(t) > c
    else:
        p = t_sf(t, dof)
        c = t_critical(alpha, dof)
        reject = t > c
    return TTestResult(t, dof, p, alpha, bool(reject), c)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.sqrt(np.sum(dx * dx))
    syy = np.sqrt(np.sum(dy * dy))
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for a constant input")
    r = float(np.sum(dx * dy) / (sxx * syy))
    return min(1.0, max(-1.0, r))


# ---------------------------------------------------------------- model scans


def _as_backbone(model) -> Backbone:
    if isinstance(model, Backbone):
        return model
    bb = getattr(model, "backbone_", None)
    if bb is None:
        raise TypeError(f"{type(model).__name__} has no fitted backbone")
    return bb


def block_taps(model, images: np.ndarray, batch_size: int = 256) -> List[np.ndarray]:
    """Eval-mode taps for uint8 N x H x W x C images, one array per block."""
    bb = _as_backbone(model)
    chunks = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            _, taps = bb.forward_with_taps(standardize(images[start : start + batch_size]), training=False)
            chunks.append([t.data for t in taps])
    return [np.concatenate([c[i] for c in chunks]) for i in range(len(chunks[0]))]


def norm_distribution(model, dataset: Dataset, ratio: int, block: int) -> np.ndarray:
    """Per-sample L2 norm of the flattened ``block`` tap (0-based)."""
    taps = block_taps(model, make_lr_batch(dataset.images, ratio))
    tap = taps[block]
    return np.linalg.norm(tap.reshape(len(tap), -1), axis=1)


@dataclass
class CorrelationReport:
    r: List[float]
    sample_count: int
    block_ids: List[int]


def pixel_correlation(
    teacher,
    student,
    dataset: Dataset,
    ratio: int,
    n_images: int = 1000,
    seed: int = 0,
    normalize: bool = True,
) -> CorrelationReport:
    """Per-block Pearson r between teacher-on-HR and student-on-LR feature values.

    Every channel x position value of ``n_images`` randomly chosen images is
    one observation. With ``normalize`` each sample's flattened tap is scaled
    to unit norm first so only the direction is compared.
    """
    tb, sb = _as_backbone(teacher), _as_backbone(student)
    if tb.config != sb.config:
        raise ValueError("teacher and student must share a backbone configuration")
    rng = np.random.default_rng(seed)
    n = min(n_images, len(dataset))
    idx = np.sort(rng.choice(len(dataset), size=n, replace=False))
    hr = dataset.images[idx]
    t_taps = block_taps(tb, hr)
    s_taps = block_taps(sb, make_lr_batch(hr, ratio))
    rs = []
    for t, s in zip(t_taps, s_taps):
        t = t.reshape(n, -1)
        s = s.reshape(n, -1)
        if normalize:
            t = t / np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-12)
            s = s / np.maximum(np.linalg.norm(s, axis=1, keepdims=True), 1e-12)
        rs.append(pearson_r(t.ravel(), s.ravel()))
    return CorrelationReport(rs, int(t_taps[0].reshape(n, -1).size), list(range(1, len(rs) + 1)))


def attention_map(tap: np.ndarray) -> np.ndarray:
    """Channel-mean of a C x H x W tap, min-max scaled to [0, 1].

    A constant map has no range to scale and comes back as all 0.5.
    """
    tap = np.asarray(tap, dtype=np.float64)
    if tap.ndim == 2:
        tap = tap[None]
    if tap.ndim != 3:
        raise ValueError(f"expected a C x H x W tap, got shape {tap.shape}")
    m = tap.mean(axis=0)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.full(m.shape, 0.5)
    return (m - lo) / (hi - lo)


# ---------------------------------------------------------------- export


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0, 1] float map as a binary 8-bit PGM."""
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim != 2:
        raise ValueError("PGM export needs a 2-D map")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    # exactly one whitespace byte separates the header from the pixels
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1).reshape(h, w)


def write_report(path, rows) -> None:
    """CSV of ``(block_id, statistic, value)`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["block_id", "statistic", "value"])
        for block, stat, value in rows:
            writer.writerow([block, stat, repr(float(value)) if not isinstance(value, str) else value])
