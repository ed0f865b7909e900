"""Video frontend: uniform frame sampling, 224x224 bilinear resize, normalize.

Clips arrive as directories of pre-extracted lossless frames
(`frame_00000.png`, `frame_00001.png`, ...). The public surface is
deliberately tiny and holds no face detection, landmarks, tracking, or any
other identity-bearing operation; group-level emotion is all downstream
consumers get to see.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError, UnsupportedFormatError

__all__ = [
    "FrameSequence",
    "sample_frame_indices",
    "load_frame",
    "resize_bilinear_224",
    "normalize",
    "clip_to_frame_sequence",
]

log = logging.getLogger(__name__)

FRAME_SIZE = 224
_FRAME_RE = re.compile(r"frame_(\d{5})\.(png|ppm)$")
_16BIT_MODES = ("I", "I;16", "I;16B", "I;16L", "I;16N")


@dataclass
class FrameSequence:
    """Sampled, resized, normalized frames: (n, 3, 224, 224) float32."""

    frames: np.ndarray
    source_indices: tuple[int, ...]
    clip_id: str = ""

    def __post_init__(self) -> None:
        f = self.frames
        if f.ndim != 4 or f.shape[1:] != (3, FRAME_SIZE, FRAME_SIZE):
            raise DataError(
                f"expected (n, 3, {FRAME_SIZE}, {FRAME_SIZE}) frames, got {f.shape}"
            )
        if f.shape[0] != len(self.source_indices):
            raise DataError(
                f"{f.shape[0]} frames but {len(self.source_indices)} source indices"
            )
        if any(b < a for a, b in zip(self.source_indices, self.source_indices[1:])):
            raise DataError(f"source indices not non-decreasing: {self.source_indices}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def sample_frame_indices(total_frames: int, n: int) -> list[int]:
    """Endpoint-inclusive uniform sample of n indices from [0, total_frames).

    floor(k * (F - 1) / (n - 1)) for k in 0..n-1; [0] when n is 1. When
    total_frames < n the indices repeat rather than fail, so degraded clips
    still produce a full-length sequence.
    """
    if n < 1:
        raise ConfigError(f"need at least one frame, got n={n}")
    if total_frames < 1:
        raise DataError(f"clip has no frames (total_frames={total_frames})")
    if n == 1:
        return [0]
    return [k * (total_frames - 1) // (n - 1) for k in range(n)]


def load_frame(path: str | Path) -> np.ndarray:
    """Read one lossless frame image as (H, W, 3) uint8 RGB."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode in _16BIT_MODES:
                raise UnsupportedFormatError(
                    f"{path}: {img.mode} image, 16-bit depth not supported"
                )
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.uint8)
                return np.repeat(arr[:, :, None], 3, axis=2)
            if img.mode != "RGB":
                img = img.convert("RGB")
            return np.asarray(img, dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(f"{path}: frame file missing") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{path}: cannot decode frame: {exc}") from None


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resample with half-pixel-center alignment, float32."""
    h, w = img.shape[:2]
    src = img.astype(np.float32, copy=False)

    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = sy.astype(np.intp)
    x0 = sx.astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).astype(np.float32)[:, None, None]
    fx = (sx - x0).astype(np.float32)[None, :, None]

    top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear_224(img: np.ndarray) -> np.ndarray:
    """Resize (H, W, 3) to (224, 224, 3) float32; aspect ratio not kept."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got {img.shape}")
    return _resize_bilinear(img, FRAME_SIZE, FRAME_SIZE)


def normalize(img: np.ndarray) -> np.ndarray:
    """Map a (224, 224, 3) image in [0, 255] to (3, 224, 224) in [-1, 1]."""
    if img.shape != (FRAME_SIZE, FRAME_SIZE, 3):
        raise DataError(
            f"expected ({FRAME_SIZE}, {FRAME_SIZE}, 3), got {img.shape}"
        )
    scaled = (img.astype(np.float32) / np.float32(255.0) - np.float32(0.5)) \
        / np.float32(0.5)
    return scaled.transpose(2, 0, 1)


def _frame_files(clip_dir: Path) -> dict[int, Path]:
    files = {}
    for p in clip_dir.iterdir():
        m = _FRAME_RE.fullmatch(p.name)
        if m:
            files[int(m.group(1))] = p
    return files


def clip_to_frame_sequence(
    clip_dir: str | Path, n: int, clip_id: str | None = None
) -> FrameSequence:
    """Sample n frames from a clip directory, resize and normalize them."""
    clip_dir = Path(clip_dir)
    if clip_id is None:
        clip_id = clip_dir.name
    if not clip_dir.is_dir():
        raise DataError(f"clip {clip_id}: {clip_dir} is not a directory")
    files = _frame_files(clip_dir)
    total = len(files)
    if total == 0:
        raise DataError(f"clip {clip_id}: no frame files in {clip_dir}")
    indices = sample_frame_indices(total, n)
    if total < n:
        log.warning(
            "clip %s: only %d frames for n=%d, repeating frames", clip_id, total, n
        )

    out = np.empty((n, 3, FRAME_SIZE, FRAME_SIZE), dtype=np.float32)
    cache: dict[int, np.ndarray] = {}
    for row, idx in enumerate(indices):
        if idx not in cache:
            if idx not in files:
                raise DataError(f"clip {clip_id}: frame {idx}: file missing")
            try:
                cache[idx] = normalize(resize_bilinear_224(load_frame(files[idx])))
            except (DataError, UnsupportedFormatError) as exc:
                raise type(exc)(f"clip {clip_id}: frame {idx}: {exc}") from None
        out[row] = cache[idx]
    return FrameSequence(out, tuple(indices), clip_id=clip_id)
