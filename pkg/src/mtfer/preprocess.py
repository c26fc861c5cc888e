"""Raw image handling: PGM/PPM decoding, grayscale conversion, capped
pose normalization, bilinear resizing and pixel normalization.

Raw images are uint8 numpy arrays, (h, w) for grayscale or (h, w, 3) for
RGB. Pose normalization rotates the image about its center so the line
through the two eye centers becomes horizontal, but the applied angle is
clamped to +/-max_rotation_deg (default 10) so a wildly wrong landmark can
only ever nudge the image, never wreck it. Out-of-bounds samples replicate
the nearest edge pixel; a measured angle of exactly zero returns the input
bit-for-bit untouched.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, LandmarkError, RangeError


@dataclass(frozen=True)
class EyePair:
    """Eye centers in image coordinates (x right, y down), subject's
    image-left eye first."""
    left: tuple
    right: tuple


@dataclass(frozen=True)
class PreprocessConfig:
    target_size: tuple = (50, 50)
    max_rotation_deg: float = 10.0
    luma_weights: tuple = (0.299, 0.587, 0.114)
    border_fill: str = "edge-replicate"

    def __post_init__(self):
        if self.max_rotation_deg <= 0:
            raise RangeError(f"max_rotation_deg must be > 0, got {self.max_rotation_deg}")
        if self.border_fill != "edge-replicate":
            raise RangeError(f"unsupported border_fill {self.border_fill!r}")


def _check_image(img, what="image"):
    img = np.asarray(img)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] in (1, 3):
        return img
    raise FormatError(f"{what} must be (h,w), (h,w,1) or (h,w,3) uint8, got shape {tuple(img.shape)}")


def to_grayscale(img, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """BT.601 luma: round(0.299 R + 0.587 G + 0.114 B); grayscale passes through."""
    img = _check_image(img)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    wr, wg, wb = cfg.luma_weights
    y = wr * img[:, :, 0].astype(np.float64) + wg * img[:, :, 1] + wb * img[:, :, 2]
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def eye_angle_deg(eyes: EyePair) -> float:
    """Angle of the eye line above/below horizontal, degrees, y-down."""
    dx = eyes.right[0] - eyes.left[0]
    dy = eyes.right[1] - eyes.left[1]
    return math.degrees(math.atan2(dy, dx))


def rotate_point(p, center, angle_deg):
    """Map a point through the same rotation pose_normalize applies to pixels."""
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    x, y = p[0] - center[0], p[1] - center[1]
    return (center[0] + ca * x - sa * y, center[1] + sa * x + ca * y)


def _bilinear_sample(img, xs, ys):
    """Sample img (float, 2-D) at continuous coords, edge-replicated."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def pose_normalize(img, eyes: EyePair, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Rotate so the eye line becomes horizontal, clamped to the configured cap.

    theta is measured with atan2 from the eye pair; the applied rotation is
    -clamp(theta, -cap, +cap) about the image center. theta == 0 returns the
    input unchanged (bit-exact).
    """
    img = _check_image(img)
    h, w = img.shape[:2]
    for name, (x, y) in (("left", eyes.left), ("right", eyes.right)):
        if not (0 <= x < w and 0 <= y < h):
            raise LandmarkError(f"{name} eye ({x}, {y}) outside {w}x{h} image bounds")
    if eyes.left[0] >= eyes.right[0]:
        raise LandmarkError(
            f"left eye x ({eyes.left[0]}) must be < right eye x ({eyes.right[0]})"
        )
    theta = eye_angle_deg(eyes)
    applied = max(-cfg.max_rotation_deg, min(cfg.max_rotation_deg, theta))
    if applied == 0.0:
        return img.copy()

    # Output pixel q samples the input at R(+applied)(q - c) + c, i.e. the
    # inverse of rotating content by -applied.
    a = math.radians(applied)
    ca, sa = math.cos(a), math.sin(a)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    qx, qy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    xs = cx + ca * (qx - cx) - sa * (qy - cy)
    ys = cy + sa * (qx - cx) + ca * (qy - cy)

    if img.ndim == 2:
        out = _bilinear_sample(img.astype(np.float64), xs, ys)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    chans = [
        np.clip(np.rint(_bilinear_sample(img[:, :, c].astype(np.float64), xs, ys)), 0, 255)
        for c in range(img.shape[2])
    ]
    return np.stack(chans, axis=-1).astype(np.uint8)


def applied_rotation_deg(eyes: EyePair, cfg: PreprocessConfig = PreprocessConfig()) -> float:
    """The rotation pose_normalize would apply (content angle, before negation)."""
    theta = eye_angle_deg(eyes)
    return max(-cfg.max_rotation_deg, min(cfg.max_rotation_deg, theta))


def resize_bilinear(img, out_h: int = 50, out_w: int = 50) -> np.ndarray:
    """Corner-aligned bilinear resize to (out_h, out_w); identity sizes copy."""
    img = _check_image(img)
    h, w = img.shape[:2]

    def axis_coords(n_src, n_dst):
        if n_dst == 1 or n_src == 1:
            return np.zeros(n_dst, dtype=np.float64)
        return np.arange(n_dst, dtype=np.float64) * (n_src - 1) / (n_dst - 1)

    xs, ys = np.meshgrid(axis_coords(w, out_w), axis_coords(h, out_h))

    def one(channel):
        out = _bilinear_sample(channel.astype(np.float64), xs, ys)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)

    if img.ndim == 2:
        return one(img)
    return np.stack([one(img[:, :, c]) for c in range(img.shape[2])], axis=-1)


def normalize_pixels(img) -> np.ndarray:
    """50x50 grayscale uint8 -> float64 (50, 50, 1) tensor scaled to [0, 1]."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape == (50, 50, 1):
        img = img[:, :, 0]
    if img.ndim != 2 or img.shape != (50, 50):
        raise DimensionError(f"normalize_pixels expects a 50x50 single-channel image, got {tuple(img.shape)}")
    return (img.astype(np.float64) / 255.0)[:, :, None]


def preprocess_image(img, eyes: EyePair | None, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Full pipeline: grayscale -> pose normalize (if eyes given) -> resize
    to target -> scale to [0,1]. Returns the (50, 50, 1) model input."""
    gray = to_grayscale(img, cfg)
    if eyes is not None:
        gray = pose_normalize(gray, eyes, cfg)
    th, tw = cfg.target_size
    return normalize_pixels(resize_bilinear(gray, th, tw))


# ---------------------------------------------------------------------------
# PGM (P5) / PPM (P6) and the landmarks CSV
# ---------------------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*(\S+)")


def _pnm_tokens(data, count):
    """Read `count` whitespace/comment-separated header tokens, return (tokens, end)."""
    pos = 0
    tokens = []
    while len(tokens) < count:
        m = _PNM_TOKEN.match(data, pos)
        if not m:
            raise FormatError("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) with maxval 255, bit-exactly."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM (magic {data[:2]!r})")
    channels = 1 if data[:2] == b"P5" else 3
    tokens, pos = _pnm_tokens(data[2:], 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise FormatError(f"{path}: bad PNM header: {e}") from e
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad dimensions {w}x{h}")
    start = 2 + pos + 1  # single whitespace byte after maxval
    need = w * h * channels
    raster = data[start:start + need]
    if len(raster) != need:
        raise FormatError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


def write_pnm(path, img) -> None:
    img = _check_image(img, what=str(path))
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    magic = b"P5" if img.ndim == 2 else b"P6"
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


LANDMARKS_HEADER = ["filename", "left_x", "left_y", "right_x", "right_y"]


def read_landmarks(path) -> dict:
    """Parse the landmarks CSV into {filename: EyePair}."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty landmarks file") from None
        if [c.strip() for c in header] != LANDMARKS_HEADER:
            raise FormatError(
                f"{path}: landmarks header must be {','.join(LANDMARKS_HEADER)}, got {','.join(header)}"
            )
        out = {}
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise FormatError(f"{path}:{i}: expected 5 fields, got {len(row)}")
            name = row[0]
            try:
                lx, ly, rx, ry = (float(v) for v in row[1:])
            except ValueError as e:
                raise FormatError(f"{path}:{i}: non-numeric coordinate: {e}") from e
            out[name] = EyePair((lx, ly), (rx, ry))
    return out
