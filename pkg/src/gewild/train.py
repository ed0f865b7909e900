"""Training harness: feature providers, freeze schedule, checkpoints.

The optimizer runs on exactly one thread; a producer thread preloads
feature batches into a bounded queue. Shuffling derives a fresh generator
from (seed, epoch) each epoch, which makes runs bit-deterministic and lets
a resumed run reproduce the continuation of an uninterrupted one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio as audio_mod
from . import gewt
from . import video as video_mod
from .data import ManifestRecord
from .errors import CheckpointError, ConfigError, DataError, TrainingError
from .model import GroupEmotionModel, ModelConfig
from .nn import SGD, Tensor, cross_entropy, no_grad, softmax
from .wavio import load_wav

log = logging.getLogger(__name__)

_VIT_PREFIX = "video.vit."
CHECKPOINT_SUFFIX = ".gewt"
SIDECAR_SUFFIX = ".json"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    freeze_epochs: int = 10
    epochs: int = 40
    batch_size: int = 4
    n_frames: int = 5
    use_video: bool = True
    use_audio: bool = True
    seed: int = 0
    checkpoint_dir: str | None = None
    prefetch: int = 2

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.freeze_epochs > self.epochs:
            raise ConfigError(
                f"freeze_epochs {self.freeze_epochs} exceeds epochs {self.epochs}"
            )
        if self.freeze_epochs < 0 or self.epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_frames < 1:
            raise ConfigError(f"n_frames must be >= 1, got {self.n_frames}")
        if not (self.use_video or self.use_audio):
            raise ConfigError("at least one branch must be active")
        if self.prefetch < 1:
            raise ConfigError(f"prefetch must be >= 1, got {self.prefetch}")


_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}


def load_train_config(path: str | Path) -> TrainConfig:
    """Parse a key=value config file into a TrainConfig."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key == "branches":
                branches = {b.strip() for b in raw.split(",") if b.strip()}
                unknown = branches - {"video", "audio"}
                if unknown:
                    raise ConfigError(
                        f"{path}:{lineno}: unknown branches {sorted(unknown)}"
                    )
                values["use_video"] = "video" in branches
                values["use_audio"] = "audio" in branches
                continue
            if key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            ftype = fields[key].type
            try:
                if ftype == "bool":
                    values[key] = _BOOL_WORDS[raw.lower()]
                elif ftype == "int":
                    values[key] = int(raw)
                elif ftype == "float":
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except (ValueError, KeyError):
                raise ConfigError(
                    f"{path}:{lineno}: bad value {raw!r} for {key}"
                ) from None
    return TrainConfig(**values)


class DiskFeatureProvider:
    """Computes (and optionally caches) frame and mel features per record."""

    def __init__(
        self,
        n_frames: int,
        use_video: bool = True,
        use_audio: bool = True,
        cache_dir: str | Path | None = None,
    ):
        self.n_frames = n_frames
        self.use_video = use_video
        self.use_audio = use_audio
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _cache_path(self, record: ManifestRecord) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{record.clip_id}_n{self.n_frames}.gewt"

    def features(
        self, record: ManifestRecord
    ) -> tuple[np.ndarray | None, np.ndarray | None]:
        cache = self._cache_path(record)
        stored: dict[str, np.ndarray] = {}
        if cache is not None and cache.is_file():
            stored = gewt.load_archive(cache)
        frames = stored.get("frames") if self.use_video else None
        mels = stored.get("mel") if self.use_audio else None
        dirty = False
        try:
            if self.use_video and frames is None:
                if record.frames == "-":
                    raise DataError("record carries no frame directory")
                frames = video_mod.clip_to_frame_sequence(
                    record.frames, self.n_frames, clip_id=record.clip_id
                ).frames
                dirty = True
            if self.use_audio and mels is None:
                if record.wav == "-":
                    raise DataError("record carries no wav")
                mels = audio_mod.clip_to_mel_sequence(
                    load_wav(record.wav), self.n_frames, clip_id=record.clip_id
                ).features
                dirty = True
        except (OSError, DataError) as exc:
            raise DataError(f"clip {record.clip_id}: {exc}") from None
        if cache is not None and dirty:
            merged = dict(stored)
            if frames is not None:
                merged["frames"] = frames
            if mels is not None:
                merged["mel"] = mels
            gewt.save_archive(cache, merged)
        return frames, mels


class ArrayFeatureProvider:
    """In-memory provider: clip_id -> (frames, mels). Test and demo aid."""

    def __init__(self, table: dict[str, tuple[np.ndarray | None, np.ndarray | None]]):
        self.table = table

    def features(self, record: ManifestRecord):
        if record.clip_id not in self.table:
            raise DataError(f"clip {record.clip_id}: no features available")
        return self.table[record.clip_id]


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_val_accuracy: float = 0.0
    best_epoch: int = -1
    best_checkpoint: str | None = None
    last_checkpoint: str | None = None


def _config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    # bookkeeping fields (total epochs, paths, queue depth) may differ
    # between a run and its resumption without changing the trajectory
    trajectory = dataclasses.asdict(train_cfg)
    for key in ("epochs", "checkpoint_dir", "prefetch"):
        trajectory.pop(key, None)
    payload = json.dumps(
        {"model": model_cfg.to_dict(), "train": trajectory}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_checkpoint(
    path: str | Path,
    model: GroupEmotionModel,
    train_cfg: TrainConfig,
    epoch: int,
    val_accuracy: float,
) -> None:
    """Write the parameter archive plus a JSON sidecar of run metadata."""
    path = Path(path)
    gewt.save_archive(path, model.state_dict())
    meta = {
        "epoch": epoch,
        "val_accuracy": val_accuracy,
        "config_hash": _config_hash(model.cfg, train_cfg),
        "model_config": model.cfg.to_dict(),
        "train_config": dataclasses.asdict(train_cfg),
        # shuffling is derived from (seed, epoch), so the resume point is
        # the entire RNG state
        "rng": {"seed": train_cfg.seed, "next_epoch": epoch + 1},
    }
    path.with_suffix(SIDECAR_SUFFIX).write_text(
        json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def load_checkpoint(
    path: str | Path,
    model: GroupEmotionModel | None = None,
    expect_hash: str | None = None,
    force: bool = False,
) -> dict:
    """Read sidecar metadata and, when a model is given, its parameters."""
    path = Path(path)
    sidecar = path.with_suffix(SIDECAR_SUFFIX)
    if not sidecar.is_file():
        raise CheckpointError(f"{path}: sidecar {sidecar.name} missing")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    if expect_hash is not None and meta.get("config_hash") != expect_hash:
        if not force:
            raise CheckpointError(
                f"{path}: config hash {meta.get('config_hash')} does not match "
                f"{expect_hash}; pass force to load anyway"
            )
        log.warning("%s: config hash mismatch, loading anyway (forced)", path)
    if model is not None:
        state = gewt.load_archive(path)
        model.load_state_dict(state)
    return meta


def _set_freeze(model: GroupEmotionModel, frozen: bool) -> None:
    for name, param in model.named_parameters():
        if name.startswith(_VIT_PREFIX):
            param.frozen = frozen


def _collate(
    records: list[ManifestRecord], provider, cfg: TrainConfig
) -> tuple[np.ndarray | None, np.ndarray | None, np.ndarray]:
    frames_list, mels_list, labels = [], [], []
    for rec in records:
        frames, mels = provider.features(rec)
        if cfg.use_video:
            if frames is None:
                raise DataError(f"clip {rec.clip_id}: no frame features")
            frames_list.append(frames)
        if cfg.use_audio:
            if mels is None:
                raise DataError(f"clip {rec.clip_id}: no mel features")
            mels_list.append(mels)
        labels.append(rec.label)
    frames = np.stack(frames_list) if frames_list else None
    mels = np.stack(mels_list) if mels_list else None
    return frames, mels, np.asarray(labels, dtype=np.int64)


def _batch_iter(records, order, batch_size):
    for lo in range(0, len(order), batch_size):
        yield [records[i] for i in order[lo : lo + batch_size]]


def _prefetched(batches, provider, cfg):
    """Run _collate on a producer thread, keep a bounded queue of batches."""
    q: queue.Queue = queue.Queue(maxsize=cfg.prefetch)
    failure: list[BaseException] = []

    def producer():
        try:
            for recs in batches:
                q.put((recs, _collate(recs, provider, cfg)))
        except BaseException as exc:  # propagated to the training thread
            failure.append(exc)
        finally:
            q.put(None)

    thread = threading.Thread(target=producer, daemon=True)
    thread.start()
    while True:
        item = q.get()
        if item is None:
            break
        yield item
    thread.join()
    if failure:
        raise failure[0]


def evaluate_accuracy(
    model: GroupEmotionModel, records, provider, cfg: TrainConfig
) -> tuple[float, float]:
    """(mean loss, accuracy) over records without touching gradients."""
    if not records:
        return float("nan"), float("nan")
    total, correct, loss_sum = 0, 0, 0.0
    with no_grad():
        for recs in _batch_iter(records, range(len(records)), cfg.batch_size):
            frames, mels, labels = _collate(recs, provider, cfg)
            logits = model.forward(
                Tensor(frames) if frames is not None else None,
                Tensor(mels) if mels is not None else None,
            )
            loss = cross_entropy(logits, labels)
            loss_sum += float(loss.data) * len(recs)
            pred = np.argmax(softmax(logits).data, axis=1)
            correct += int((pred == labels).sum())
            total += len(recs)
    return loss_sum / total, correct / total


def train(
    model: GroupEmotionModel,
    train_records: list[ManifestRecord],
    val_records: list[ManifestRecord],
    cfg: TrainConfig,
    provider,
    log_path: str | Path | None = None,
    resume_from: str | Path | None = None,
    stop_at_accuracy: float | None = None,
) -> TrainResult:
    """SGD with cross-entropy, ViT freeze schedule, best-val checkpointing.

    stop_at_accuracy ends the run early once train accuracy reaches the
    threshold (an overfit-harness convenience; None trains all epochs).
    """
    if not train_records:
        raise ConfigError("empty training set")
    optimizer = SGD(model.parameters(), lr=cfg.lr)
    result = TrainResult()
    start_epoch = 0
    if resume_from is not None:
        meta = load_checkpoint(
            resume_from, model, expect_hash=_config_hash(model.cfg, cfg)
        )
        start_epoch = meta["rng"]["next_epoch"]
        result.best_val_accuracy = meta.get("val_accuracy", 0.0)
        result.best_epoch = meta.get("epoch", -1)

    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None

    def emit(epoch: int, split: str, loss: float, acc: float) -> None:
        row = {"epoch": epoch, "split": split, "loss": loss, "accuracy": acc}
        result.history.append(row)
        line = f"{epoch}\t{split}\t{loss:.6f}\t{acc:.6f}"
        log.info("%s", line)
        if log_fh:
            log_fh.write(line + "\n")
            log_fh.flush()

    try:
        for epoch in range(start_epoch, cfg.epochs):
            _set_freeze(model, cfg.use_video and epoch < cfg.freeze_epochs)
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(len(train_records))
            batches = _batch_iter(train_records, order, cfg.batch_size)

            loss_sum, correct, seen = 0.0, 0, 0
            for batch_idx, (recs, (frames, mels, labels)) in enumerate(
                _prefetched(batches, provider, cfg)
            ):
                logits = model.forward(
                    Tensor(frames) if frames is not None else None,
                    Tensor(mels) if mels is not None else None,
                )
                loss = cross_entropy(logits, labels)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingError(
                        f"non-finite loss {value} at epoch {epoch} batch "
                        f"{batch_idx} (clips {[r.clip_id for r in recs]}, "
                        f"lr {cfg.lr})"
                    )
                pred = np.argmax(logits.data, axis=1)
                correct += int((pred == labels).sum())
                loss_sum += value * len(recs)
                seen += len(recs)
                loss.backward()
                optimizer.step()
            train_loss, train_acc = loss_sum / seen, correct / seen
            emit(epoch, "train", train_loss, train_acc)

            val_loss, val_acc = evaluate_accuracy(model, val_records, provider, cfg)
            if val_records:
                emit(epoch, "val", val_loss, val_acc)
            selected = val_acc if val_records else train_acc

            if ckpt_dir is not None:
                last = ckpt_dir / f"last{CHECKPOINT_SUFFIX}"
                save_checkpoint(last, model, cfg, epoch, selected)
                result.last_checkpoint = str(last)
                if selected >= result.best_val_accuracy or result.best_epoch < 0:
                    best = ckpt_dir / f"best{CHECKPOINT_SUFFIX}"
                    save_checkpoint(best, model, cfg, epoch, selected)
                    result.best_checkpoint = str(best)
                    result.best_val_accuracy = selected
                    result.best_epoch = epoch
            elif selected >= result.best_val_accuracy or result.best_epoch < 0:
                result.best_val_accuracy = selected
                result.best_epoch = epoch

            if stop_at_accuracy is not None and train_acc >= stop_at_accuracy:
                break
    finally:
        if log_fh:
            log_fh.close()
    return result
