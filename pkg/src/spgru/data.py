"""Controlled moving-digit sequence generation and file formats.

Sequences render procedurally generated digit glyphs translated along a
straight trajectory (reflective bounce at the frame edges when enabled),
with optional Unif(0, b) per-pixel noise.  Subpixel positions use bilinear
splatting, which conserves sprite mass while the sprite stays inside the
frame; an integer-snap mode exists for exact-copy tests.

Determinism contract: every sequence i of a batch draws from
default_rng((*seed, i)), so identical configs and seeds reproduce batches
bit for bit, and deviation-suite levels that only change a fixed parameter
keep the per-sequence draws (glyph choice, noise uniforms) paired with the
reference batch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

# Polyline strokes per digit, unit-square coordinates (x right, y down).
_STROKES: dict[int, list[list[tuple[float, float]]]] = {
    0: [[(0.3, 0.15), (0.7, 0.15), (0.75, 0.5), (0.7, 0.85), (0.3, 0.85), (0.25, 0.5), (0.3, 0.15)]],
    1: [[(0.35, 0.3), (0.55, 0.12), (0.55, 0.88)]],
    2: [[(0.27, 0.3), (0.45, 0.12), (0.7, 0.2), (0.72, 0.42), (0.28, 0.85), (0.75, 0.85)]],
    3: [[(0.28, 0.15), (0.7, 0.18), (0.48, 0.45), (0.72, 0.62), (0.62, 0.85), (0.27, 0.82)]],
    4: [[(0.62, 0.88), (0.62, 0.12), (0.25, 0.62), (0.78, 0.62)]],
    5: [[(0.72, 0.14), (0.32, 0.14), (0.3, 0.48), (0.62, 0.44), (0.72, 0.66), (0.58, 0.86), (0.28, 0.8)]],
    6: [[(0.66, 0.13), (0.4, 0.32), (0.29, 0.62), (0.42, 0.86), (0.66, 0.78), (0.68, 0.57), (0.32, 0.56)]],
    7: [[(0.25, 0.13), (0.75, 0.13), (0.45, 0.88)]],
    8: [[(0.5, 0.12), (0.71, 0.26), (0.5, 0.46), (0.3, 0.26), (0.5, 0.12)],
        [(0.5, 0.46), (0.74, 0.66), (0.5, 0.88), (0.26, 0.66), (0.5, 0.46)]],
    9: [[(0.69, 0.42), (0.42, 0.48), (0.29, 0.28), (0.5, 0.12), (0.68, 0.24), (0.69, 0.42), (0.6, 0.88)]],
}


@lru_cache(maxsize=64)
def glyph_sprite(digit: int, size: int) -> np.ndarray:
    """Anti-aliased (size, size) bitmap of one digit-like glyph in [0, 1]."""
    if digit not in _STROKES:
        raise ConfigError(f"no glyph for digit {digit}")
    half_w = 0.07 * size
    aa = 0.6
    ys, xs = np.mgrid[0:size, 0:size]
    px = np.stack([xs + 0.5, ys + 0.5], axis=-1) / size  # pixel centers
    best = np.full((size, size), np.inf)
    for line in _STROKES[digit]:
        pts = np.asarray(line)
        for a, b in zip(pts[:-1], pts[1:]):
            ab = b - a
            denom = float(ab @ ab)
            t = ((px - a) @ ab) / denom if denom > 0 else np.zeros(px.shape[:2])
            t = np.clip(t, 0.0, 1.0)
            proj = a + t[..., None] * ab
            d = np.linalg.norm(px - proj, axis=-1)
            best = np.minimum(best, d)
    v = np.clip((half_w / size - best) / (aa / size) + 1.0, 0.0, 1.0)
    return v.astype(np.float64)


@dataclass(frozen=True)
class TrajectoryConfig:
    """One moving-digit rendering setup; None fields are sampled per sequence."""

    angle: float | None = 20.0          # degrees from +x toward +y (rows)
    speed: float | None = 0.05          # fraction of frame size per frame
    noise_b: float = 0.0                # Unif(0, b) additive pixel noise
    frame_size: int = 32
    seq_len: int = 20
    n_digits: int = 1
    bounce: bool = True
    start: tuple[float, float] | None = (0.2, 0.35)  # fractional, or None
    sprite_size: int = 12
    glyphs: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)
    interp: str = "bilinear"            # or "nearest"
    compose: str = "max"                # or "add"
    seed: object = 0                    # int or tuple of ints

    def validate(self) -> None:
        if self.speed is not None and self.speed < 0:
            raise ConfigError("speed must be >= 0")
        if self.noise_b < 0:
            raise ConfigError("noise_b must be >= 0")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be >= 2")
        if self.sprite_size >= self.frame_size:
            raise ConfigError(
                f"sprite ({self.sprite_size}) must be smaller than frame ({self.frame_size})"
            )
        if self.n_digits < 1:
            raise ConfigError("n_digits must be >= 1")
        if self.interp not in ("bilinear", "nearest"):
            raise ConfigError(f"interp must be bilinear|nearest, got {self.interp!r}")
        if self.compose not in ("max", "add"):
            raise ConfigError(f"compose must be max|add, got {self.compose!r}")
        if not self.glyphs:
            raise ConfigError("glyphs must be non-empty")


@dataclass(frozen=True)
class SequenceMeta:
    angles: tuple[float, ...]
    speeds: tuple[float, ...]
    starts: tuple[tuple[float, float], ...]
    glyph_ids: tuple[int, ...]
    noise_b: float
    seed_key: tuple


@dataclass
class SequenceBatch:
    frames: np.ndarray                     # (batch, time, H, W) in [0, 1]
    meta: list[SequenceMeta] = field(default_factory=list)
    config: TrajectoryConfig | None = None

    @property
    def flat(self) -> np.ndarray:
        """(batch, time, H*W) view for the sequence model."""
        b, t, h, w = self.frames.shape
        return self.frames.reshape(b, t, h * w)


def _seed_key(seed, i: int) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(int(x) for x in seed) + (int(i),)
    return (int(seed), int(i))


def _paste(canvas: np.ndarray, tile: np.ndarray, top: int, left: int) -> None:
    H, W = canvas.shape
    r0, c0 = max(top, 0), max(left, 0)
    r1, c1 = min(top + tile.shape[0], H), min(left + tile.shape[1], W)
    if r0 >= r1 or c0 >= c1:
        return
    canvas[r0:r1, c0:c1] += tile[r0 - top:r1 - top, c0 - left:c1 - left]


def render_sprite(canvas: np.ndarray, sprite: np.ndarray,
                  cx: float, cy: float, interp: str = "bilinear") -> None:
    """Splat sprite centered at float pixel position (cx, cy) onto canvas."""
    S = sprite.shape[0]
    tx = cx - (S - 1) / 2.0
    ty = cy - (S - 1) / 2.0
    if interp == "nearest":
        _paste(canvas, sprite, int(round(ty)), int(round(tx)))
        return
    ix, iy = int(np.floor(tx)), int(np.floor(ty))
    fx, fy = tx - ix, ty - iy
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            w = wx * wy
            if w > 0.0:
                _paste(canvas, sprite * w, iy + dy, ix + dx)


def _fold(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Reflect positions into [lo, hi] (exact triangle-wave folding)."""
    span = hi - lo
    y = np.mod(u - lo, 2.0 * span)
    return lo + np.where(y <= span, y, 2.0 * span - y)


def trajectory_positions(cfg: TrajectoryConfig, angle: float, speed: float,
                         start: tuple[float, float]) -> np.ndarray:
    """(seq_len, 2) float pixel centers of the sprite along the path."""
    F, S, T = cfg.frame_size, cfg.sprite_size, cfg.seq_len
    theta = np.deg2rad(angle)
    step = speed * F * np.array([np.cos(theta), np.sin(theta)])
    p0 = np.array([start[0] * F, start[1] * F])
    pos = p0[None, :] + np.arange(T)[:, None] * step[None, :]
    if cfg.bounce:
        lo = (S - 1) / 2.0
        hi = F - 1 - lo
        if hi <= lo:
            raise ConfigError("sprite too large to bounce inside the frame")
        pos = _fold(pos, lo, hi)
    return pos


def generate(cfg: TrajectoryConfig, n: int,
             sprites: np.ndarray | None = None) -> SequenceBatch:
    """Render n sequences; deterministic per (cfg.seed, sequence index).

    sprites: optional (k, S, S) bank overriding the procedural glyphs
    (e.g. loaded from an IDX file).
    """
    cfg.validate()
    F, T = cfg.frame_size, cfg.seq_len
    if sprites is not None:
        sprites = np.asarray(sprites, dtype=np.float64)
        if sprites.ndim != 3 or sprites.shape[1] >= F:
            raise ConfigError("sprite bank must be (k, S, S) with S < frame_size")
        bank = sprites
        bank_ids = tuple(range(len(bank)))
    else:
        bank = np.stack([glyph_sprite(d, cfg.sprite_size) for d in cfg.glyphs])
        bank_ids = cfg.glyphs

    frames = np.zeros((n, T, F, F))
    meta: list[SequenceMeta] = []
    for i in range(n):
        key = _seed_key(cfg.seed, i)
        rng = np.random.default_rng(key)
        angles, speeds, starts, chosen = [], [], [], []
        for d in range(cfg.n_digits):
            ang = cfg.angle if cfg.angle is not None else float(rng.uniform(0.0, 360.0))
            spd = cfg.speed if cfg.speed is not None else float(rng.uniform(0.02, 0.08))
            if cfg.start is not None:
                st = cfg.start
            else:
                st = (float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8)))
            angles.append(ang)
            speeds.append(spd)
            starts.append(st)
        idx = rng.integers(0, len(bank), size=cfg.n_digits)
        chosen = [int(bank_ids[j]) for j in idx]

        for d in range(cfg.n_digits):
            pos = trajectory_positions(cfg, angles[d], speeds[d], starts[d])
            layer = np.zeros((T, F, F))
            for t in range(T):
                render_sprite(layer[t], bank[idx[d]], pos[t, 0], pos[t, 1], cfg.interp)
            if cfg.compose == "max":
                np.maximum(frames[i], layer, out=frames[i])
            else:
                frames[i] += layer

        if cfg.noise_b > 0:
            frames[i] += cfg.noise_b * rng.uniform(0.0, 1.0, frames[i].shape)
        np.clip(frames[i], 0.0, 1.0, out=frames[i])
        meta.append(SequenceMeta(tuple(angles), tuple(speeds),
                                 tuple(tuple(s) for s in starts),
                                 tuple(chosen), cfg.noise_b, key))
    return SequenceBatch(frames, meta, cfg)


# ---------------------------------------------------------------------------
# deviation suites

SUITES = ("angle", "speed", "noise")
_SUITE_TAG = {"angle": 101, "speed": 202, "noise": 303}

ANGLE_LEVELS = (20.0, 25.0, 30.0, 35.0)
SPEED_LEVELS = (0.050, 0.055, 0.060, 0.065)
NOISE_LEVELS = (0.0, 0.2, 0.4, 0.6)


@dataclass
class SuiteLevel:
    suite: str
    label: str
    value: float
    batch: SequenceBatch


def deviation_suite(train_cfg: TrajectoryConfig, suite: str,
                    n: int = 100) -> list[SuiteLevel]:
    """Reference batch plus three deviated batches for one suite.

    All levels of a suite share the per-sequence RNG streams, so batches
    differ only in the deviated parameter.
    """
    if suite not in SUITES:
        raise ConfigError(f"suite must be one of {SUITES}, got {suite!r}")
    base = replace(train_cfg,
                   seed=_seed_key(train_cfg.seed, _SUITE_TAG[suite]))
    levels: list[SuiteLevel] = []
    if suite == "angle":
        for a in ANGLE_LEVELS:
            levels.append(SuiteLevel(suite, f"{a:g}", a,
                                     generate(replace(base, angle=a), n)))
    elif suite == "speed":
        for s in SPEED_LEVELS:
            levels.append(SuiteLevel(suite, f"{100 * s:g}", s,
                                     generate(replace(base, speed=s), n)))
    else:
        for b in NOISE_LEVELS:
            levels.append(SuiteLevel(suite, f"{b:g}", b,
                                     generate(replace(base, noise_b=b), n)))
    return levels


# ---------------------------------------------------------------------------
# IDX ingestion (optional external digit images)

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4:
        raise FormatError(f"{path}: truncated IDX header at offset 0")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic == _IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == _IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise FormatError(f"{path}: bad IDX magic {magic:#010x} at offset 0")
    header_end = 4 + 4 * ndim
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated IDX dims at offset {len(blob)}")
    dims = struct.unpack(">" + "I" * ndim, blob[4:header_end])
    expected = header_end + int(np.prod(dims))
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes, found {len(blob)} (offset {min(len(blob), expected)})"
        )
    return np.frombuffer(blob, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(images_path, labels_path=None, digits=None) -> np.ndarray:
    """Load big-endian IDX images, normalized to [0, 1].

    With labels_path and digits given, keeps only sprites whose label is in
    digits; an empty selection is a ConfigError.
    """
    images = _read_idx(images_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: not an image IDX file")
    sprites = images.astype(np.float64) / 255.0
    if labels_path is not None:
        labels = _read_idx(labels_path)
        if labels.shape[0] != sprites.shape[0]:
            raise FormatError("IDX image/label counts differ")
        if digits is not None:
            keep = np.isin(labels, np.asarray(list(digits)))
            sprites = sprites[keep]
    if digits is not None and labels_path is None:
        raise ConfigError("digit filter requires a labels file")
    if sprites.shape[0] == 0:
        raise ConfigError("sprite selection is empty")
    return sprites


# ---------------------------------------------------------------------------
# dataset container and PGM dumps

_DATASET_MAGIC = b"SPGRUDAT"
_DATASET_VERSION = 1


def save_dataset(path, batch: SequenceBatch) -> None:
    """Write a versioned container: header + JSON metadata + float64 frames."""
    frames = np.ascontiguousarray(batch.frames, dtype="<f8")
    b, t, h, w = frames.shape
    meta = [
        {
            "angles": m.angles, "speeds": m.speeds, "starts": m.starts,
            "glyphs": m.glyph_ids, "noise_b": m.noise_b, "seed": m.seed_key,
        }
        for m in batch.meta
    ]
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(struct.pack("<IIIII", _DATASET_VERSION, b, t, h, w))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(frames.tobytes())


def load_dataset(path) -> SequenceBatch:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _DATASET_MAGIC:
            raise FormatError(f"bad dataset magic {magic!r} at offset 0")
        version, b, t, h, w = struct.unpack("<IIIII", fh.read(20))
        if version != _DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta_raw = json.loads(fh.read(mlen).decode())
        data = fh.read(8 * b * t * h * w)
        if len(data) != 8 * b * t * h * w:
            raise FormatError(f"truncated dataset frames at offset {fh.tell()}")
    frames = np.frombuffer(data, dtype="<f8").reshape(b, t, h, w).copy()
    meta = [
        SequenceMeta(tuple(m["angles"]), tuple(m["speeds"]),
                     tuple(tuple(s) for s in m["starts"]),
                     tuple(m["glyphs"]), m["noise_b"], tuple(m["seed"]))
        for m in meta_raw
    ]
    return SequenceBatch(frames, meta)


def write_pgm(path, image01: np.ndarray) -> None:
    """8-bit binary PGM (P5) of an array already scaled to [0, 1]."""
    img = np.asarray(image01, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM writer takes a 2-D array")
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    data = np.frombuffer(parts[3][: w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / 255.0
