"""Street-number style digit images rendered from system fonts, and an
importer for the public SVHN ``*_32x32.mat`` files."""

import glob
import os
from functools import lru_cache
from typing import List, Optional

import numpy as np
from PIL import Image, ImageDraw, ImageFilter, ImageFont

from .datasets import Dataset, DataError

_FONT_DIRS = ("/usr/share/fonts",)
# chance of a distractor digit on each side of the centred one
FLANK_PROB = 0.6
# symbol-only faces that have no usable digit glyphs
_SKIP = ("cmex", "cmsy", "cmmi", "STIXSiz", "STIXNonUni", "DisplaySymbol")


def _candidate_fonts() -> List[str]:
    paths = []
    for d in _FONT_DIRS:
        paths += glob.glob(os.path.join(d, "**", "*.ttf"), recursive=True)
    try:
        import matplotlib

        paths += glob.glob(os.path.join(os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf", "*.ttf"))
    except ImportError:
        pass
    seen, out = set(), []
    for p in sorted(paths):
        name = os.path.basename(p)
        if name in seen or any(s in name for s in _SKIP):
            continue
        seen.add(name)
        out.append(p)
    return out


@lru_cache(maxsize=None)
def _font(path: str, size: int):
    return ImageFont.truetype(path, size)


@lru_cache(maxsize=1)
def available_fonts() -> tuple:
    fonts = []
    for p in _candidate_fonts():
        try:
            f = _font(p, 40)
        except OSError:
            continue
        masks = []
        for d in "0123456789":
            im = Image.new("L", (60, 60), 0)
            ImageDraw.Draw(im).text((5, 5), d, fill=255, font=f)
            masks.append(np.asarray(im) > 0)
        # every glyph must draw ink and be distinct from the others
        if all(m.any() for m in masks) and len({m.tobytes() for m in masks}) == 10:
            fonts.append(p)
    if not fonts:
        raise DataError("no TrueType fonts with digit glyphs found")
    return tuple(fonts)


def _colors(rng):
    bg = rng.uniform(0, 255, 3)
    # foreground differs in luminance by a random but bounded contrast
    contrast = rng.uniform(45, 160) * rng.choice([-1, 1])
    fg = np.clip(bg + contrast + rng.normal(0, 30, 3), 0, 255)
    if abs(fg.mean() - bg.mean()) < 35:
        fg = np.clip(bg - contrast, 0, 255)
    return tuple(int(v) for v in bg), tuple(int(v) for v in fg)


def render_digit(digit: int, rng: np.random.Generator, size: int = 32, fonts=None) -> np.ndarray:
    """Render one ``size x size x 3`` uint8 digit with clutter."""
    fonts = fonts or available_fonts()
    scale = 3
    big = size * scale
    bg, fg = _colors(rng)
    canvas = Image.new("RGB", (big * 3, big * 2), bg)
    draw = ImageDraw.Draw(canvas)
    font = _font(fonts[rng.integers(len(fonts))], int(big * rng.uniform(0.55, 0.85)))

    def glyph_at(d, cx):
        box = draw.textbbox((0, 0), str(d), font=font)
        gw, gh = box[2] - box[0], box[3] - box[1]
        draw.text((cx - gw / 2 - box[0], big - gh / 2 - box[1]), str(d), fill=fg, font=font)
        return gw

    centre = big * 1.5 + rng.normal(0, big * 0.04)
    gw = glyph_at(digit, centre)
    gap = gw * rng.uniform(0.55, 0.8) + big * 0.06
    if rng.random() < FLANK_PROB:
        glyph_at(int(rng.integers(10)), centre - gw / 2 - gap)
    if rng.random() < FLANK_PROB:
        glyph_at(int(rng.integers(10)), centre + gw / 2 + gap)

    canvas = canvas.rotate(float(rng.normal(0, 6)), resample=Image.BILINEAR, center=(centre, big), fillcolor=bg)
    shear = float(rng.normal(0, 0.12))
    canvas = canvas.transform(
        canvas.size, Image.AFFINE, (1, shear, -shear * big, 0, 1, 0), resample=Image.BILINEAR, fillcolor=bg
    )
    zoom = rng.uniform(0.9, 1.15)
    half = big / 2 * zoom
    dy = rng.normal(0, big * 0.04)
    crop = canvas.crop((int(centre - half), int(big - half + dy), int(centre + half), int(big + half + dy)))
    crop = crop.filter(ImageFilter.GaussianBlur(rng.uniform(0.3, 2.5)))
    img = np.asarray(crop.resize((size, size), Image.BOX), dtype=np.float64)

    # illumination gradient and sensor noise
    yy, xx = np.mgrid[0:size, 0:size] / size
    shade = 1.0 + rng.normal(0, 0.15) * (xx - 0.5) + rng.normal(0, 0.15) * (yy - 0.5)
    img = img * shade[..., None] + rng.normal(0, rng.uniform(2, 12), img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synthetic_digits(n: int, seed: int = 0, size: int = 32, balanced: bool = True) -> Dataset:
    """``n`` synthetic street-number digits with labels 0-9, deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10 if balanced else rng.integers(0, 10, n)
    labels = rng.permutation(labels)
    fonts = available_fonts()
    images = np.stack([render_digit(int(d), rng, size, fonts) for d in labels])
    ids = [f"synth{seed}_{i:06d}" for i in range(n)]
    return Dataset(images, labels, ids, False, [str(i) for i in range(10)])


def load_svhn_mat(path, limit: Optional[int] = None) -> Dataset:
    """Read ``train_32x32.mat`` / ``test_32x32.mat`` (label 10 means digit 0)."""
    from scipy.io import loadmat

    try:
        mat = loadmat(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read MATLAB file ({exc})") from exc
    if "X" not in mat or "y" not in mat:
        raise DataError(f"{path}: expected variables 'X' and 'y'")
    images = np.ascontiguousarray(np.transpose(mat["X"], (3, 0, 1, 2))).astype(np.uint8)
    labels = mat["y"].reshape(-1).astype(np.int64) % 10
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    ids = [f"svhn_{i:06d}" for i in range(len(labels))]
    return Dataset(images, labels, ids, False, [str(i) for i in range(10)])
