"""
Synthetic grayscale image corpus with overlaid text, plus PGM (P5) I/O.

Backgrounds are smooth random fields; "private information" is a run of
glyphs from a tiny 5x7 bitmap font stamped in pure white.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestionError

GLYPH_W, GLYPH_H, GLYPH_GAP = 5, 7, 1

_FONT_ROWS = {
    "0": ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    "1": ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    "2": ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    "3": ["11110", "00001", "00001", "01110", "00001", "00001", "11110"],
    "4": ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    "5": ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    "6": ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    "7": ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    "8": ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    "9": ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
    "A": ["01110", "10001", "10001", "11111", "10001", "10001", "10001"],
    "B": ["11110", "10001", "10001", "11110", "10001", "10001", "11110"],
    "C": ["01110", "10001", "10000", "10000", "10000", "10001", "01110"],
    "D": ["11100", "10010", "10001", "10001", "10001", "10010", "11100"],
    "E": ["11111", "10000", "10000", "11110", "10000", "10000", "11111"],
    "H": ["10001", "10001", "10001", "11111", "10001", "10001", "10001"],
    "J": ["00111", "00010", "00010", "00010", "00010", "10010", "01100"],
    "K": ["10001", "10010", "10100", "11000", "10100", "10010", "10001"],
    "M": ["10001", "11011", "10101", "10101", "10001", "10001", "10001"],
    "N": ["10001", "10001", "11001", "10101", "10011", "10001", "10001"],
    "P": ["11110", "10001", "10001", "11110", "10000", "10000", "10000"],
    "R": ["11110", "10001", "10001", "11110", "10100", "10010", "10001"],
    "S": ["01111", "10000", "10000", "01110", "00001", "00001", "11110"],
    "T": ["11111", "00100", "00100", "00100", "00100", "00100", "00100"],
    "W": ["10001", "10001", "10001", "10101", "10101", "10101", "01010"],
    "X": ["10001", "10001", "01010", "00100", "01010", "10001", "10001"],
}
FONT = {ch: np.array([[c == "1" for c in row] for row in rows]) for ch, rows in _FONT_ROWS.items()}
ALPHABET = sorted(FONT)


def run_width(n_glyphs):
    return n_glyphs * (GLYPH_W + GLYPH_GAP) - GLYPH_GAP


def render_text(text):
    """Boolean mask of a glyph run."""
    mask = np.zeros((GLYPH_H, run_width(len(text))), bool)
    for i, ch in enumerate(text):
        x0 = i * (GLYPH_W + GLYPH_GAP)
        mask[:, x0:x0 + GLYPH_W] = FONT[ch]
    return mask


def smooth_background(rng, height, width, components=3):
    """Sum of random low-frequency cosine gradients, min-max scaled to [0, 1]."""
    yy, xx = np.mgrid[0:height, 0:width]
    field_ = np.zeros((height, width))
    for _ in range(components):
        fy, fx = rng.uniform(0.0, 1.5, size=2)
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        field_ += amp * np.cos(2 * np.pi * (fy * yy / height + fx * xx / width) + phase)
    lo, hi = field_.min(), field_.max()
    if hi - lo < 1e-12:
        return np.full((height, width), 0.5)
    return (field_ - lo) / (hi - lo)


def stamp_text(image, rng, min_glyphs=3, max_glyphs=8):
    """Overlay a random glyph run at value 1.0; returns (image, bbox).

    ``bbox`` is (top, left, height, width) of the run.
    """
    h, w = image.shape
    k = int(rng.integers(min_glyphs, max_glyphs + 1))
    text = "".join(rng.choice(ALPHABET, size=k))
    mask = render_text(text)
    if mask.shape[1] > w or mask.shape[0] > h:
        raise ConfigError(f"glyph run of width {mask.shape[1]} does not fit a {h}x{w} image")
    top = int(rng.integers(0, h - mask.shape[0] + 1))
    left = int(rng.integers(0, w - mask.shape[1] + 1))
    out = image.copy()
    region = out[top:top + mask.shape[0], left:left + mask.shape[1]]
    region[mask] = 1.0
    return out, (top, left, mask.shape[0], mask.shape[1])


@dataclass
class ImageSpec:
    height: int = 40
    width: int = 48
    n_train: int = 400
    n_valid: int = 50
    n_test: int = 50
    min_glyphs: int = 3
    max_glyphs: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_glyphs <= self.max_glyphs:
            raise ConfigError("need 1 <= min_glyphs <= max_glyphs")
        if run_width(self.max_glyphs) > self.width or GLYPH_H > self.height:
            raise ConfigError(
                f"a {self.max_glyphs}-glyph run ({run_width(self.max_glyphs)} px) is wider than the image ({self.width} px)"
            )
        if min(self.n_train, self.n_valid, self.n_test) < 0 or self.n_train % 2:
            raise ConfigError("corpus sizes must be non-negative and n_train even")


@dataclass
class PairedSet:
    """Validation/test items: the same background with and without text."""

    with_text: np.ndarray
    without_text: np.ndarray
    bboxes: list = field(default_factory=list)

    def __len__(self):
        return len(self.with_text)


@dataclass
class ImageCorpus:
    train: np.ndarray  # (n, H, W)
    train_s: np.ndarray
    valid: PairedSet
    test: PairedSet
    train_bboxes: list = field(default_factory=list)

    @property
    def shape(self):
        return self.train.shape[1:]


def synth_images(spec):
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    s = np.zeros(spec.n_train, np.int64)
    s[rng.permutation(spec.n_train)[: spec.n_train // 2]] = 1
    train = np.empty((spec.n_train, h, w))
    bboxes = []
    for i in range(spec.n_train):
        img = smooth_background(rng, h, w)
        box = None
        if s[i]:
            img, box = stamp_text(img, rng, spec.min_glyphs, spec.max_glyphs)
        train[i] = img
        bboxes.append(box)

    def paired(n):
        clean = np.empty((n, h, w))
        texted = np.empty((n, h, w))
        boxes = []
        for i in range(n):
            clean[i] = smooth_background(rng, h, w)
            texted[i], box = stamp_text(clean[i], rng, spec.min_glyphs, spec.max_glyphs)
            boxes.append(box)
        return PairedSet(texted, clean, boxes)

    return ImageCorpus(train, s, paired(spec.n_valid), paired(spec.n_test), bboxes)


# -- PGM -----------------------------------------------------------------------


def to_bytes(image):
    return np.round(255.0 * np.clip(image, 0.0, 1.0)).astype(np.uint8)


def write_pgm(path, image):
    """Binary P5, maxval 255, pixel = round(255 * value)."""
    data = to_bytes(np.asarray(image, dtype=np.float64))
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    """Read a P5 PGM into floats in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise IngestionError(f"{path}: not a binary (P5) PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise IngestionError(f"{path}: only maxval 255 is supported")
    pos += 1  # single whitespace after maxval
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise IngestionError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def montage(*images, gap=2):
    """Side-by-side strip of equally sized images separated by black columns."""
    h = images[0].shape[0]
    sep = np.zeros((h, gap))
    parts = []
    for i, img in enumerate(images):
        if i:
            parts.append(sep)
        parts.append(img)
    return np.hstack(parts)


def write_corpus(corpus, directory):
    """Write every image as PGM plus ``manifest.json`` with labels and pair links."""
    os.makedirs(directory, exist_ok=True)
    entries = {"train": [], "valid": [], "test": []}
    for i, (img, s) in enumerate(zip(corpus.train, corpus.train_s)):
        name = f"train_{i:04d}.pgm"
        write_pgm(os.path.join(directory, name), img)
        entries["train"].append({"path": name, "s": int(s)})
    for split_name, paired in (("valid", corpus.valid), ("test", corpus.test)):
        for i in range(len(paired)):
            a = f"{split_name}_{i:04d}_text.pgm"
            b = f"{split_name}_{i:04d}_clean.pgm"
            write_pgm(os.path.join(directory, a), paired.with_text[i])
            write_pgm(os.path.join(directory, b), paired.without_text[i])
            entries[split_name].append({"path": a, "s": 1, "pair": b, "bbox": list(paired.bboxes[i])})
            entries[split_name].append({"path": b, "s": 0, "pair": a})
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return entries


def read_corpus(directory):
    """Inverse of ``write_corpus`` (pixel values quantized to 1/255)."""
    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            entries = json.load(fh)
    except OSError as exc:
        raise IngestionError(f"cannot read manifest in {directory}: {exc}") from exc
    load = lambda name: read_pgm(os.path.join(directory, name))  # noqa: E731
    train = np.array([load(e["path"]) for e in entries["train"]])
    train_s = np.array([e["s"] for e in entries["train"]], np.int64)

    def paired(items):
        texted = [e for e in items if e["s"] == 1]
        for e in texted:
            if "pair" not in e:
                raise IngestionError(f"{directory}: unpaired item {e['path']}")
        return PairedSet(
            np.array([load(e["path"]) for e in texted]),
            np.array([load(e["pair"]) for e in texted]),
            [tuple(e.get("bbox", ())) for e in texted],
        )

    return ImageCorpus(train, train_s, paired(entries["valid"]), paired(entries["test"]))
