"""Shared fixtures: a small class-separable asset bundle and a rendered
mini dataset. Session-scoped because rendering clips costs ~0.7 s each."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import pytest
from PIL import Image, ImageDraw

from gewild import CLASS_NAMES
from gewild.data import ManifestRecord, load_manifest, save_manifest
from gewild.model import ModelConfig, ViTConfig
from gewild.synth import generate_dataset, load_background_assets, load_face_assets
from gewild.train import DiskFeatureProvider
from gewild.wavio import AudioClip, save_wav

FACE_COLORS = {
    "negative": (205, 60, 60),
    "neutral": (70, 80, 205),
    "positive": (60, 195, 80),
}
TONE_HZ = {"negative": 220.0, "neutral": 440.0, "positive": 880.0}


def make_face_png(path: Path, label: str, rng: np.random.Generator) -> None:
    img = Image.new("RGBA", (64, 80), (0, 0, 0, 0))
    draw = ImageDraw.Draw(img)
    jitter = rng.integers(-25, 26, size=3)
    color = tuple(
        int(np.clip(c + j, 0, 255)) for c, j in zip(FACE_COLORS[label], jitter)
    )
    draw.ellipse([2, 2, 61, 77], fill=color + (255,))
    for ex in (20, 44):
        draw.ellipse([ex - 4, 20, ex + 4, 28], fill=(20, 20, 20, 255))
    img.save(path)


def make_background_png(path: Path, idx: int, rng: np.random.Generator) -> None:
    ramp = np.linspace(70 + 30 * idx, 150 + 20 * idx, 224, dtype=np.float32)
    canvas = np.empty((224, 224, 3), dtype=np.float32)
    canvas[:] = ramp[:, None, None]
    canvas += rng.normal(0.0, 5.0, size=canvas.shape).astype(np.float32)
    Image.fromarray(np.clip(canvas, 0, 255).astype(np.uint8), "RGB").save(path)


def make_tone_wav(path: Path, label: str, rng: np.random.Generator) -> None:
    t = np.arange(80000, dtype=np.float64) / 16000.0
    f = TONE_HZ[label] * (1.0 + 0.02 * rng.normal())
    wave = 0.3 * np.sin(2 * np.pi * f * t) + 0.01 * rng.normal(size=t.size)
    save_wav(path, AudioClip(wave.astype(np.float32)[None, :], 16000))


def build_assets(root: Path, faces_per_class: int = 3,
                 wavs_per_class: int = 2, seed: int = 0) -> Path:
    """Faces, backgrounds, tone wavs, and the pool manifest under root."""
    rng = np.random.default_rng(seed)
    for label in CLASS_NAMES:
        d = root / "faces" / label
        d.mkdir(parents=True, exist_ok=True)
        for i in range(faces_per_class):
            make_face_png(d / f"{label}_{i:02d}.png", label, rng)
    bg = root / "backgrounds"
    bg.mkdir(parents=True, exist_ok=True)
    for i in range(2):
        make_background_png(bg / f"bg_{i:02d}.png", i, rng)
    pool_dir = root / "pool"
    pool_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for label_id, label in enumerate(CLASS_NAMES):
        for i in range(wavs_per_class):
            wav = pool_dir / f"{label}_{i:02d}.wav"
            make_tone_wav(wav, label, rng)
            records.append(
                ManifestRecord(
                    clip_id=f"pool_{label}_{i:02d}",
                    frames="-",
                    wav=str(wav),
                    label=label_id,
                    split="train",
                    origin="real",
                )
            )
    manifest = root / "pool_manifest.tsv"
    save_manifest(manifest, records)
    return manifest


@pytest.fixture(scope="session")
def asset_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("assets")
    build_assets(root)
    return root


@pytest.fixture(scope="session")
def pool_manifest(asset_dir) -> Path:
    return asset_dir / "pool_manifest.tsv"


@pytest.fixture(scope="session")
def mini_dataset(asset_dir, tmp_path_factory):
    """10 rendered clips (4/3/3), first 8 marked train and last 2 val."""
    out = tmp_path_factory.mktemp("mini_ds")
    faces = load_face_assets(asset_dir / "faces")
    backgrounds = load_background_assets(asset_dir / "backgrounds")
    pool = load_manifest(asset_dir / "pool_manifest.tsv")
    records = generate_dataset(
        faces, backgrounds, pool, out, counts=(4, 3, 3), seed=11
    )
    resplit = [
        dataclasses.replace(r, split="train" if i < 8 else "val")
        for i, r in enumerate(records)
    ]
    manifest = out / "manifest.tsv"
    save_manifest(manifest, resplit)
    return manifest, resplit


@pytest.fixture(scope="session")
def feature_cache(mini_dataset, tmp_path_factory):
    """Warm 2-frame feature cache shared by train/predict/CLI tests."""
    manifest, records = mini_dataset
    cache = tmp_path_factory.mktemp("features")
    provider = DiskFeatureProvider(2, cache_dir=cache)
    for rec in records:
        provider.features(rec)
    return cache


@pytest.fixture()
def micro_cfg():
    """Smallest config that exercises every code path; for schedule tests."""
    def make(n_frames: int = 2, **kw) -> ModelConfig:
        kw.setdefault("d_model", 32)
        kw.setdefault("vit", ViTConfig(patch_size=56, depth=1, hidden=32,
                                       heads=2, mlp_dim=64))
        kw.setdefault("audio_cnn_channels", (2, 4, 4, 4))
        kw.setdefault("encoder_heads", 2)
        return ModelConfig(n_frames=n_frames, **kw)
    return make
