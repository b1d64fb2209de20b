"""Independent reference implementations used by the tests.

Everything here is written with plain loops or finite differences so it
shares no code path with the library under test.
"""

import math

import numpy as np

from fskd.engine import GradTape, Tensor

FD_STEP = 1e-5


def numeric_grad(f, arrays, index, h=FD_STEP):
    """Central difference of scalar ``f(*arrays)`` w.r.t. ``arrays[index]``."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    x = base[index]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(*base)
        x[i] = old - h
        fm = f(*base)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def analytic_grads(fn, arrays, wrt):
    tensors = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    with GradTape() as tape:
        out = fn(*tensors)
    tape.backward(out)
    return [tensors[i].grad if tensors[i].grad is not None else np.zeros_like(tensors[i].data) for i in wrt]


def rel_error(a, b):
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``, 0 for two zero arrays."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_grads(fn, arrays, wrt=None):
    """Max relative error between tape gradients and central differences.

    ``fn`` maps tensors to a scalar tensor.
    """
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)

    def scalar(*arrs):
        return fn(*[Tensor(a) for a in arrs]).item()

    worst = 0.0
    for i, g in zip(wrt, analytic_grads(fn, arrays, wrt)):
        worst = max(worst, rel_error(g, numeric_grad(scalar, arrays, i)))
    return worst


# ---------------------------------------------------------------- loop oracles


def conv2d_loops(x, k, stride=1, padding=0):
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[b, ic, i * stride + di, j * stride + dj] * k[oc, ic, di, dj]
                    out[b, oc, i, j] = acc
    return out


def matmul_loops(a, b):
    n, d = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def norm_loop(v):
    return math.sqrt(sum(float(t) * float(t) for t in np.ravel(v)))


def logsumexp_ce(logits, labels):
    """Per-sample -log softmax at the true class, averaged."""
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)


def cosface_scalar(x, W, labels, s, m):
    n_classes = W.shape[1]
    logits = []
    for row in x:
        xn = norm_loop(row)
        cos = []
        for j in range(n_classes):
            col = W[:, j]
            cos.append(sum(a * b for a, b in zip(row, col)) / (xn * norm_loop(col)))
        logits.append(cos)
    logits = [[s * (c - (m if j == y else 0.0)) for j, c in enumerate(row)] for row, y in zip(logits, labels)]
    return logsumexp_ce(logits, labels)


def fskd_scalar(t_taps, s_taps):
    total = 0.0
    for t, s in zip(t_taps, s_taps):
        acc = 0.0
        for a, b in zip(t, s):
            a, b = np.ravel(a), np.ravel(b)
            acc += 1.0 - sum(p * q for p, q in zip(a, b)) / (norm_loop(a) * norm_loop(b))
        total += acc / len(t)
    return total / len(t_taps)


def fitnet_scalar(t_taps, s_taps):
    total = 0.0
    for t, s in zip(t_taps, s_taps):
        total += sum(norm_loop(np.ravel(a) - np.ravel(b)) for a, b in zip(t, s)) / len(t)
    return total / len(t_taps)


def normkd_scalar(t_taps, s_taps):
    total = 0.0
    for t, s in zip(t_taps, s_taps):
        total += sum(abs(norm_loop(a) - norm_loop(b)) for a, b in zip(t, s)) / len(t)
    return total / len(t_taps)


def pearson_scalar(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    den = math.sqrt(sum((a - mx) ** 2 for a in x)) * math.sqrt(sum((b - my) ** 2 for b in y))
    return num / den


def t_statistic_scalar(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / (n - 1)
    vy = sum((b - my) ** 2 for b in y) / (n - 1)
    return (mx - my) / math.sqrt((vx + vy) / n)


def t_density(t, dof):
    c = math.exp(math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2)) / math.sqrt(dof * math.pi)
    return c * (1 + t * t / dof) ** (-(dof + 1) / 2)


def bilinear_pixel(img, oy, ox, out_h, out_w):
    """Half-pixel-centre bilinear sample of a 2-D float image, edges clamped."""
    h, w = img.shape
    sy = (oy + 0.5) * h / out_h - 0.5
    sx = (ox + 0.5) * w / out_w - 0.5
    sy = min(max(sy, 0.0), h - 1)
    sx = min(max(sx, 0.0), w - 1)
    y0, x0 = int(math.floor(sy)), int(math.floor(sx))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = sy - y0, sx - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy
