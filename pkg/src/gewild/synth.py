"""Synthetic group-emotion clips: face cutouts drifting over a fixed background.

Each clip composites 3 to 9 same-class face cutouts onto one background and
moves them with bounded random walks, enforcing at most 10% per-face
per-frame occlusion by resampling offending steps. The clip is paired with
a randomly chosen real audio track of the same class. Everything is
deterministic under (spec, seed).
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import CLASS_NAMES
from .data import ManifestRecord, save_manifest
from .errors import ConfigError, DataError, GenerationError
from .video import _resize_bilinear

CANVAS = 224
FPS = 15
CLIP_SECONDS = 5
MAX_STEP = 8
SCALE_RANGE = (0.15, 0.30)
OCCLUSION_LIMIT = 0.10
FACE_COUNT_RANGE = (3, 9)
DEFAULT_COUNTS = (802, 923, 934)  # positive, neutral, negative

_LABEL_BY_NAME = {name: i for i, name in enumerate(CLASS_NAMES)}
_FRAME_RETRIES = 100
_CLIP_RESTARTS = 10


@dataclass
class FaceAsset:
    """RGBA cutout; the alpha channel is the paste mask."""

    image: np.ndarray
    label: str
    asset_id: str

    def __post_init__(self) -> None:
        img = self.image
        if img.ndim != 3 or img.shape[2] != 4:
            raise DataError(f"face {self.asset_id}: expected RGBA, got {img.shape}")
        if not (img[:, :, 3] > 127).any():
            raise DataError(f"face {self.asset_id}: alpha channel has no opaque pixel")
        if self.label not in CLASS_NAMES:
            raise DataError(f"face {self.asset_id}: unknown label {self.label!r}")


@dataclass
class BackgroundAsset:
    image: np.ndarray
    asset_id: str

    def __post_init__(self) -> None:
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3:
            raise DataError(
                f"background {self.asset_id}: expected RGB, got {img.shape}"
            )
        if img.shape[0] < CANVAS or img.shape[1] < CANVAS:
            raise DataError(
                f"background {self.asset_id}: {img.shape[0]}x{img.shape[1]} "
                f"smaller than {CANVAS}x{CANVAS}"
            )


@dataclass(frozen=True)
class SynthClipSpec:
    label: str
    face_count: int
    background_id: str
    face_ids: tuple[str, ...]
    audio_path: str
    seed: int
    fps: int = FPS
    duration: float = float(CLIP_SECONDS)

    def __post_init__(self) -> None:
        lo, hi = FACE_COUNT_RANGE
        if not lo <= self.face_count <= hi:
            raise ConfigError(
                f"face count {self.face_count} outside [{lo}, {hi}]"
            )
        if len(self.face_ids) != self.face_count:
            raise ConfigError(
                f"{len(self.face_ids)} face ids for face count {self.face_count}"
            )
        if self.label not in CLASS_NAMES:
            raise ConfigError(f"unknown class {self.label!r}")

    @property
    def n_frames(self) -> int:
        return round(self.fps * self.duration)


@dataclass
class TrajectorySpec:
    """Integer top-left positions (k, T, 2) as (y, x), plus pixel sizes."""

    positions: np.ndarray
    sizes: np.ndarray  # (k, 2) rendered (h, w) per face
    seed: int


@dataclass
class OcclusionReport:
    """fractions[f, t] = share of face f's opaque pixels covered at frame t."""

    fractions: np.ndarray

    @property
    def max_fraction(self) -> float:
        return float(self.fractions.max()) if self.fractions.size else 0.0


def _reflect(values: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold integer coordinates into [0, hi] by reflection at both ends."""
    hi = np.maximum(hi, 0)
    out = np.where(hi == 0, 0, values)
    safe = np.maximum(hi, 1)
    m = np.mod(out, 2 * safe)
    m = np.where(m > safe, 2 * safe - m, m)
    return np.where(hi == 0, 0, m)


def plan_trajectories(
    sizes: np.ndarray,
    n_frames: int,
    seed: int,
    canvas: int = CANVAS,
    max_step: int = MAX_STEP,
) -> TrajectorySpec:
    """Independent bounded random walks, one per face, fully on-canvas.

    sizes is (k, 2) rendered face extents (h, w). Steps are uniform integers
    in [-max_step, max_step] per axis, reflected at the canvas bounds.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    k = sizes.shape[0]
    limits = canvas - sizes  # max valid top-left per face, per axis
    if (limits < 0).any():
        raise GenerationError(
            f"face larger than canvas: sizes {sizes.tolist()}, canvas {canvas}"
        )
    rng = np.random.default_rng(seed)
    positions = np.empty((k, n_frames, 2), dtype=np.int64)
    positions[:, 0] = rng.integers(0, limits + 1)
    for t in range(1, n_frames):
        steps = rng.integers(-max_step, max_step + 1, size=(k, 2))
        positions[:, t] = _reflect(positions[:, t - 1] + steps, limits)
    return TrajectorySpec(positions, sizes, seed)


def occlusion_fraction(
    masks: list[np.ndarray], positions: np.ndarray, canvas: int = CANVAS
) -> np.ndarray:
    """Per-face fraction of opaque pixels covered by faces drawn above.

    Z-order is list order: masks[i+1:] are drawn over masks[i]. positions is
    (k, 2) integer top-left (y, x); faces are assumed fully on-canvas.
    """
    k = len(masks)
    fractions = np.zeros(k, dtype=np.float64)
    cover = np.zeros((canvas, canvas), dtype=bool)
    for i in range(k - 1, -1, -1):
        mask = masks[i]
        y, x = positions[i]
        h, w = mask.shape
        region = cover[y : y + h, x : x + w]
        fractions[i] = np.count_nonzero(mask & region) / np.count_nonzero(mask)
        region |= mask
    return fractions


def _load_rgba(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGBA"), dtype=np.uint8)


def load_face_assets(faces_dir: str | Path) -> list[FaceAsset]:
    """Faces live under faces_dir/<class>/*.png with alpha cutout masks."""
    faces_dir = Path(faces_dir)
    assets = []
    for label in CLASS_NAMES:
        class_dir = faces_dir / label
        if not class_dir.is_dir():
            continue
        for p in sorted(class_dir.glob("*.png")):
            assets.append(FaceAsset(_load_rgba(p), label, f"{label}/{p.stem}"))
    if not assets:
        raise DataError(f"no face assets found under {faces_dir}")
    return assets


def load_background_assets(backgrounds_dir: str | Path) -> list[BackgroundAsset]:
    backgrounds_dir = Path(backgrounds_dir)
    assets = []
    for p in sorted(backgrounds_dir.glob("*.png")):
        with Image.open(p) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        assets.append(BackgroundAsset(arr, p.stem))
    if not assets:
        raise DataError(f"no background assets found under {backgrounds_dir}")
    return assets


def _render_faces(
    spec: SynthClipSpec,
    faces: dict[str, FaceAsset],
    rng: np.random.Generator,
    canvas: int,
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Scale each face for this clip; returns (rgb list, mask list, sizes)."""
    rgbs, masks, sizes = [], [], []
    for fid in spec.face_ids:
        asset = faces[fid]
        src_h, src_w = asset.image.shape[:2]
        scale = rng.uniform(*SCALE_RANGE)
        h = max(1, round(scale * canvas))
        w = max(1, round(h * src_w / src_h))
        w = min(w, canvas)
        resized = _resize_bilinear(asset.image.astype(np.float32), h, w)
        rgb = np.clip(resized[:, :, :3], 0, 255).astype(np.uint8)
        mask = resized[:, :, 3] > 127
        if not mask.any():
            mask = resized[:, :, 3] > 0
        rgbs.append(rgb)
        masks.append(mask)
        sizes.append((h, w))
    return rgbs, masks, np.asarray(sizes, dtype=np.int64)


def _plan_constrained(
    spec: SynthClipSpec,
    masks: list[np.ndarray],
    sizes: np.ndarray,
    rng: np.random.Generator,
    canvas: int,
    max_step: int,
    limit: float,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Walk all faces, resampling any frame that breaks the occlusion cap."""
    k = len(masks)
    n = spec.n_frames
    limits = canvas - sizes
    positions = np.empty((k, n, 2), dtype=np.int64)
    fractions = np.empty((k, n), dtype=np.float64)

    for _ in range(_FRAME_RETRIES):
        cand = rng.integers(0, limits + 1)
        occ = occlusion_fraction(masks, cand, canvas)
        if occ.max() <= limit:
            positions[:, 0], fractions[:, 0] = cand, occ
            break
    else:
        return None
    for t in range(1, n):
        for _ in range(_FRAME_RETRIES):
            steps = rng.integers(-max_step, max_step + 1, size=(k, 2))
            cand = _reflect(positions[:, t - 1] + steps, limits)
            occ = occlusion_fraction(masks, cand, canvas)
            if occ.max() <= limit:
                positions[:, t], fractions[:, t] = cand, occ
                break
        else:
            return None
    return positions, fractions


def generate_clip(
    spec: SynthClipSpec,
    faces: dict[str, FaceAsset],
    backgrounds: dict[str, BackgroundAsset],
    out_dir: str | Path | None,
    canvas: int = CANVAS,
    max_step: int = MAX_STEP,
    occlusion_limit: float = OCCLUSION_LIMIT,
) -> tuple[OcclusionReport, TrajectorySpec]:
    """Plan and (when out_dir is given) render one clip's frames.

    Frames violating the occlusion cap are re-rolled up to 100 times each;
    a stuck clip is restarted with a fresh derived seed up to 10 times
    before giving up.
    """
    background = backgrounds[spec.background_id].image[:canvas, :canvas]

    for restart in range(_CLIP_RESTARTS):
        rng = np.random.default_rng([spec.seed, restart])
        rgbs, masks, sizes = _render_faces(spec, faces, rng, canvas)
        if (canvas - sizes < 0).any():
            continue
        planned = _plan_constrained(
            spec, masks, sizes, rng, canvas, max_step, occlusion_limit
        )
        if planned is None:
            continue
        positions, fractions = planned
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            for t in range(spec.n_frames):
                frame = background.copy()
                for i in range(len(masks)):
                    y, x = positions[i, t]
                    h, w = masks[i].shape
                    patch = frame[y : y + h, x : x + w]
                    patch[masks[i]] = rgbs[i][masks[i]]
                Image.fromarray(frame).save(out_dir / f"frame_{t:05d}.png")
        return OcclusionReport(fractions), TrajectorySpec(positions, sizes, spec.seed)

    raise GenerationError(
        f"could not satisfy occlusion <= {occlusion_limit} after "
        f"{_CLIP_RESTARTS} restarts of {_FRAME_RETRIES} frame retries: "
        f"{spec.face_count} faces on {canvas}x{canvas} canvas (seed {spec.seed})"
    )


def pair_audio(
    label: str, pool: list[ManifestRecord], rng: np.random.Generator
) -> str:
    """Uniform pick of a same-class real clip's wav path."""
    want = _LABEL_BY_NAME[label]
    candidates = [r for r in pool if r.label == want]
    if not candidates:
        raise DataError(f"no real audio of class {label!r} in the pool")
    return candidates[int(rng.integers(len(candidates)))].wav


def generate_dataset(
    faces: list[FaceAsset],
    backgrounds: list[BackgroundAsset],
    pool: list[ManifestRecord],
    out_dir: str | Path,
    counts: tuple[int, int, int] = DEFAULT_COUNTS,
    seed: int = 0,
    fps: int = FPS,
    canvas: int = CANVAS,
    render: bool = True,
) -> list[ManifestRecord]:
    """Emit a synthetic training set and its manifest.

    counts are (positive, neutral, negative). With render=False only specs
    and the manifest are produced (fast path for planning and audits);
    rendered clips land in out_dir/clips/<id>/.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    faces_by_id = {f.asset_id: f for f in faces}
    faces_by_label: dict[str, list[str]] = {name: [] for name in CLASS_NAMES}
    for f in faces:
        faces_by_label[f.label].append(f.asset_id)
    bg_by_id = {b.asset_id: b for b in backgrounds}
    bg_ids = sorted(bg_by_id)

    records: list[ManifestRecord] = []
    clip_index = 0
    lo, hi = FACE_COUNT_RANGE
    for label, count in zip(("positive", "neutral", "negative"), counts):
        pool_ids = faces_by_label[label]
        if count > 0 and not pool_ids:
            raise DataError(f"no face assets for class {label!r}")
        for _ in range(count):
            clip_seed = seed ^ clip_index
            rng = np.random.default_rng([clip_seed, 0xFACE])
            k = int(rng.integers(lo, hi + 1))
            replace = k > len(pool_ids)
            picks = rng.choice(len(pool_ids), k, replace=replace)
            face_ids = tuple(pool_ids[i] for i in picks)
            background_id = bg_ids[int(rng.integers(len(bg_ids)))]
            audio_path = pair_audio(label, pool, rng)
            spec = SynthClipSpec(
                label=label,
                face_count=k,
                background_id=background_id,
                face_ids=face_ids,
                audio_path=audio_path,
                seed=clip_seed,
                fps=fps,
            )
            clip_id = f"synth_{clip_index:05d}"
            clip_dir = out_dir / "clips" / clip_id
            wav_path = audio_path
            if render:
                generate_clip(spec, faces_by_id, bg_by_id, clip_dir, canvas=canvas)
                wav_path = str(clip_dir / "audio.wav")
                shutil.copyfile(audio_path, wav_path)
            records.append(
                ManifestRecord(
                    clip_id=clip_id,
                    frames=str(clip_dir),
                    wav=wav_path,
                    label=_LABEL_BY_NAME[label],
                    split="train",
                    origin="synthetic",
                )
            )
            clip_index += 1
    save_manifest(out_dir / "manifest.tsv", records)
    return records
