#!/usr/bin/env python3
"""Build a small demo asset bundle: faces, backgrounds, and an audio pool.

Face color and audio pitch are class-correlated so that tiny models can
separate the classes. This is a smoke-test corpus, not a benchmark.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from gewild import CLASS_NAMES
from gewild.data import ManifestRecord, save_manifest
from gewild.wavio import AudioClip, save_wav

BASE_COLORS = {
    "negative": (205, 60, 60),
    "neutral": (70, 80, 205),
    "positive": (60, 195, 80),
}
TONES = {"negative": 220.0, "neutral": 440.0, "positive": 880.0}


def make_face(label: str, rng: np.random.Generator) -> Image.Image:
    w, h = 64, 80
    img = Image.new("RGBA", (w, h), (0, 0, 0, 0))
    draw = ImageDraw.Draw(img)
    base = BASE_COLORS[label]
    jitter = rng.integers(-30, 31, size=3)
    color = tuple(int(np.clip(c + j, 0, 255)) for c, j in zip(base, jitter))
    draw.ellipse([2, 2, w - 3, h - 3], fill=color + (255,))
    eye_y = 24 + int(rng.integers(-3, 4))
    for ex in (20, 44):
        draw.ellipse([ex - 4, eye_y - 4, ex + 4, eye_y + 4], fill=(20, 20, 20, 255))
    # mouth curvature tracks the class
    if label == "positive":
        draw.arc([18, 42, 46, 62], 20, 160, fill=(20, 20, 20, 255), width=3)
    elif label == "negative":
        draw.arc([18, 52, 46, 72], 200, 340, fill=(20, 20, 20, 255), width=3)
    else:
        draw.line([20, 58, 44, 58], fill=(20, 20, 20, 255), width=3)
    return img


def make_background(idx: int, rng: np.random.Generator, size: int = 224) -> Image.Image:
    ramp = np.linspace(60 + 40 * idx, 160 + 20 * idx, size, dtype=np.float32)
    canvas = np.empty((size, size, 3), dtype=np.float32)
    canvas[:] = ramp[:, None, None]
    canvas += rng.normal(0.0, 6.0, size=(size, size, 3)).astype(np.float32)
    return Image.fromarray(np.clip(canvas, 0, 255).astype(np.uint8), "RGB")


def make_tone(label: str, rng: np.random.Generator,
              rate: int = 16000, seconds: float = 5.0) -> AudioClip:
    t = np.arange(int(rate * seconds), dtype=np.float64) / rate
    f = TONES[label] * (1.0 + 0.02 * rng.normal())
    wave = 0.3 * np.sin(2 * np.pi * f * t) + 0.1 * np.sin(2 * np.pi * 2 * f * t)
    wave += 0.01 * rng.normal(size=t.size)
    return AudioClip(wave.astype(np.float32)[None, :], rate)


def build(out: Path, faces_per_class: int, backgrounds: int,
          wavs_per_class: int, seed: int) -> Path:
    rng = np.random.default_rng(seed)
    for label in CLASS_NAMES:
        face_dir = out / "faces" / label
        face_dir.mkdir(parents=True, exist_ok=True)
        for i in range(faces_per_class):
            make_face(label, rng).save(face_dir / f"{label}_{i:02d}.png")
    bg_dir = out / "backgrounds"
    bg_dir.mkdir(parents=True, exist_ok=True)
    for i in range(backgrounds):
        make_background(i, rng).save(bg_dir / f"bg_{i:02d}.png")

    wav_dir = out / "pool"
    wav_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for label_id, label in enumerate(CLASS_NAMES):
        for i in range(wavs_per_class):
            wav_path = wav_dir / f"{label}_{i:02d}.wav"
            save_wav(wav_path, make_tone(label, rng))
            records.append(
                ManifestRecord(
                    clip_id=f"pool_{label}_{i:02d}",
                    frames="-",
                    wav=str(wav_path),
                    label=label_id,
                    split="train",
                    origin="real",
                )
            )
    manifest = out / "pool_manifest.tsv"
    save_manifest(manifest, records)
    return manifest


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--faces-per-class", type=int, default=4)
    parser.add_argument("--backgrounds", type=int, default=2)
    parser.add_argument("--wavs-per-class", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    manifest = build(Path(args.out), args.faces_per_class, args.backgrounds,
                     args.wavs_per_class, args.seed)
    print(f"assets under {args.out}")
    print(f"pool manifest: {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
