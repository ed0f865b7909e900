"""Dataset manifests and real/synthetic mixing.

Manifests are TSV files with the fixed header
`id frames wav label split origin` (tab-separated). Labels are stored as
0/1/2 or as the class names negative/neutral/positive and canonicalized to
the integer form. A "-" in the frames or wav column marks a modality the
record does not carry (audio-only pools, for instance). Mixing follows the published ratio table: a ratio r adds
round_half_up(N_real * r / (1 - r)) synthetic clips to the real set,
stratified to the synthetic pool's class proportions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from .errors import ConfigError, IngestionError

MANIFEST_COLUMNS = ("id", "frames", "wav", "label", "split", "origin")
SPLITS = ("train", "val", "test")
ORIGINS = ("real", "synthetic")

_LABEL_BY_NAME = {name: i for i, name in enumerate(CLASS_NAMES)}


@dataclass(frozen=True)
class ManifestRecord:
    clip_id: str
    frames: str
    wav: str
    label: int
    split: str
    origin: str


def parse_label(text: str) -> int:
    if text in _LABEL_BY_NAME:
        return _LABEL_BY_NAME[text]
    if text in ("0", "1", "2"):
        return int(text)
    raise ValueError(f"unknown label {text!r}")


def load_manifest(path: str | Path, check_paths: bool = True) -> list[ManifestRecord]:
    """Read and validate a manifest; errors carry the offending line number."""
    path = Path(path)
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if tuple(header.split("\t")) != MANIFEST_COLUMNS:
            raise IngestionError(
                f"{path}: bad header {header!r}, expected "
                + "\\t".join(MANIFEST_COLUMNS),
                line=1,
            )
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != len(MANIFEST_COLUMNS):
                raise IngestionError(
                    f"{path}: expected {len(MANIFEST_COLUMNS)} columns, "
                    f"got {len(cols)}",
                    line=lineno,
                )
            clip_id, frames, wav, label_text, split, origin = cols
            if clip_id in seen:
                raise IngestionError(f"{path}: duplicate id {clip_id!r}", line=lineno)
            seen.add(clip_id)
            try:
                label = parse_label(label_text)
            except ValueError as exc:
                raise IngestionError(f"{path}: {exc}", line=lineno) from None
            if split not in SPLITS:
                raise IngestionError(f"{path}: unknown split {split!r}", line=lineno)
            if origin not in ORIGINS:
                raise IngestionError(f"{path}: unknown origin {origin!r}", line=lineno)
            if check_paths:
                # "-" marks a modality a record does not carry (audio pools)
                if frames != "-" and not Path(frames).is_dir():
                    raise IngestionError(
                        f"{path}: frames dir {frames} missing", line=lineno
                    )
                if wav != "-" and not Path(wav).is_file():
                    raise IngestionError(f"{path}: wav {wav} missing", line=lineno)
            records.append(ManifestRecord(clip_id, frames, wav, label, split, origin))
    return records


def save_manifest(path: str | Path, records: list[ManifestRecord]) -> None:
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for r in records:
        lines.append(
            "\t".join((r.clip_id, r.frames, r.wav, str(r.label), r.split, r.origin))
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def compute_mix_counts(n_real: int, ratio: float) -> int:
    """Synthetic-clip count so that synthetic/(real+synthetic) ~= ratio.

    round_half_up(n_real * r / (1 - r)). The published per-ratio counts
    deviate from any single rounding rule by at most 1; this formula is
    exact at r = 0.3 and r = 0.5.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"ratio must be in [0, 1), got {ratio}")
    if n_real < 0:
        raise ConfigError(f"negative real count {n_real}")
    return math.floor(n_real * ratio / (1.0 - ratio) + 0.5)


@dataclass(frozen=True)
class MixPlan:
    ratio: float
    n_real: int
    n_synth: int
    quotas: tuple[int, int, int]  # per class id 0..2
    seed: int


def plan_mix(
    real: list[ManifestRecord],
    pool: list[ManifestRecord],
    ratio: float,
    seed: int = 0,
) -> MixPlan:
    """Derive per-class synthetic quotas by largest-remainder apportionment."""
    n_real = len(real)
    n_synth = compute_mix_counts(n_real, ratio)
    pool_counts = [sum(1 for r in pool if r.label == c) for c in range(3)]
    pool_total = sum(pool_counts)
    if n_synth > pool_total:
        raise ConfigError(
            f"synthetic pool too small: need {n_synth}, have {pool_total} "
            f"(shortfall {n_synth - pool_total})"
        )
    if n_synth == 0:
        return MixPlan(ratio, n_real, 0, (0, 0, 0), seed)
    exact = [n_synth * c / pool_total for c in pool_counts]
    base = [math.floor(x) for x in exact]
    leftover = n_synth - sum(base)
    # hand out remainders largest-first, ties to the lower class id
    order = sorted(range(3), key=lambda c: (-(exact[c] - base[c]), c))
    for c in order[:leftover]:
        base[c] += 1
    return MixPlan(ratio, n_real, n_synth, tuple(base), seed)


def build_mixed_dataset(
    real: list[ManifestRecord],
    pool: list[ManifestRecord],
    ratio: float,
    seed: int = 0,
) -> list[ManifestRecord]:
    """All real records plus a stratified synthetic sample, shuffled."""
    plan = plan_mix(real, pool, ratio, seed)
    rng = np.random.default_rng([seed, 0xD1CE])
    chosen: list[ManifestRecord] = []
    for c in range(3):
        quota = plan.quotas[c]
        if quota == 0:
            continue
        members = sorted(
            (r for r in pool if r.label == c), key=lambda r: r.clip_id
        )
        if quota > len(members):
            raise ConfigError(
                f"class {CLASS_NAMES[c]} pool too small: need {quota}, "
                f"have {len(members)} (shortfall {quota - len(members)})"
            )
        idx = rng.choice(len(members), size=quota, replace=False)
        chosen.extend(members[i] for i in sorted(idx))
    combined = list(real) + chosen
    perm = rng.permutation(len(combined))
    return [combined[i] for i in perm]
