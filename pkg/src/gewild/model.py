"""Two-branch group-emotion model with audio-to-video cross-attention.

Per-frame ViT video branch and CNN-plus-encoder audio branch each emit an
n_frames x d_model sequence. A cross-attention block queries the video
sequence with the audio one, the three sequences are concatenated per frame,
averaged over frames, and classified into three classes. Either branch can
be disabled for ablations; the classifier width adapts.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import gewt
from .errors import CheckpointError, ConfigError, DimensionError
from .nn import (
    Conv2d,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    PreNormTransformerBlock,
    Tensor,
    TransformerEncoderLayer,
    bind_parameter_names,
    broadcast_to,
    concat,
    maxpool2d,
    mean,
    relu,
    reshape,
    sinusoidal_positional_encoding,
    softmax,
    take,
    transpose,
)

log = logging.getLogger(__name__)

IMAGE_SIZE = 224
MEL_BANDS = 128
MEL_FRAMES = 251


@dataclass(frozen=True)
class ViTConfig:
    patch_size: int = 14
    depth: int = 24
    hidden: int = 1024
    heads: int = 16
    mlp_dim: int = 4096


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the full-scale values."""

    d_model: int = 1024
    n_frames: int = 5
    vit: ViTConfig = field(default_factory=ViTConfig)
    audio_cnn_channels: tuple[int, ...] = (16, 32, 64, 128)
    encoder_heads: int = 4
    classes: int = 3
    use_video: bool = True
    use_audio: bool = True

    def __post_init__(self) -> None:
        if IMAGE_SIZE % self.vit.patch_size != 0:
            raise ConfigError(
                f"{IMAGE_SIZE} not divisible by patch size {self.vit.patch_size}"
            )
        if self.d_model % self.encoder_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by "
                f"{self.encoder_heads} heads"
            )
        if self.vit.hidden % self.vit.heads != 0:
            raise ConfigError(
                f"vit hidden {self.vit.hidden} not divisible by "
                f"{self.vit.heads} heads"
            )
        if len(self.audio_cnn_channels) != 4:
            raise ConfigError(
                f"audio branch needs 4 CNN blocks, got "
                f"{len(self.audio_cnn_channels)}"
            )
        if self.n_frames < 1:
            raise ConfigError(f"n_frames must be positive, got {self.n_frames}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if not (self.use_video or self.use_audio):
            raise ConfigError("at least one branch must be active")

    @property
    def encoder_ff(self) -> int:
        # pinned at twice the model width
        return 2 * self.d_model

    @property
    def fused_width(self) -> int:
        if self.use_video and self.use_audio:
            return 3 * self.d_model
        return self.d_model

    @classmethod
    def paper_scale(cls, n_frames: int = 5, **kw) -> "ModelConfig":
        return cls(n_frames=n_frames, **kw)

    @classmethod
    def tiny(cls, n_frames: int = 5, **kw) -> "ModelConfig":
        """Desk-scale preset: same topology, widths cut to trainable size."""
        kw.setdefault("d_model", 64)
        kw.setdefault("vit", ViTConfig(patch_size=14, depth=2, hidden=64,
                                       heads=4, mlp_dim=128))
        kw.setdefault("audio_cnn_channels", (4, 8, 8, 8))
        return cls(n_frames=n_frames, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["audio_cnn_channels"] = list(self.audio_cnn_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "vit" in d and isinstance(d["vit"], dict):
            d["vit"] = ViTConfig(**d["vit"])
        if "audio_cnn_channels" in d:
            d["audio_cnn_channels"] = tuple(d["audio_cnn_channels"])
        return cls(**d)


class _ViTCore(Module):
    """Patch embedding, class token, learned positions, transformer blocks.

    Everything in here corresponds to the pretrained backbone, so the
    freeze schedule targets this submodule's name prefix as a whole.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        v = cfg.vit
        self.patch_size = v.patch_size
        self.n_side = IMAGE_SIZE // v.patch_size
        n_tokens = self.n_side * self.n_side + 1
        self.patch = Linear(3 * v.patch_size * v.patch_size, v.hidden, rng)
        self.cls = Parameter(
            (rng.standard_normal((1, 1, v.hidden)) * 0.02).astype(np.float32)
        )
        self.pos = Parameter(
            (rng.standard_normal((1, n_tokens, v.hidden)) * 0.02).astype(np.float32)
        )
        self.blocks = [
            PreNormTransformerBlock(v.hidden, v.heads, v.mlp_dim, rng)
            for _ in range(v.depth)
        ]
        self.ln = LayerNorm(v.hidden)

    def forward(self, frames: Tensor) -> Tensor:
        b = frames.data.shape[0]
        p, s = self.patch_size, self.n_side
        x = reshape(frames, (b, 3, s, p, s, p))
        x = transpose(x, (0, 2, 4, 1, 3, 5))
        x = reshape(x, (b, s * s, 3 * p * p))
        x = self.patch(x)
        cls = broadcast_to(self.cls.tensor, (b, 1, x.data.shape[2]))
        x = concat([cls, x], axis=1) + self.pos.tensor
        for block in self.blocks:
            x = block(x)
        x = self.ln(x)
        return take(x, (slice(None), 0))  # class-token readout


class VideoBranch(Module):
    """Per-frame ViT followed by a projection to d_model."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.n_frames = cfg.n_frames
        self.vit = _ViTCore(cfg, rng)
        self.proj = Linear(cfg.vit.hidden, cfg.d_model, rng)

    def forward(self, frames: Tensor) -> Tensor:
        shape = frames.data.shape
        if shape[1:] != (self.n_frames, 3, IMAGE_SIZE, IMAGE_SIZE):
            raise DimensionError(
                f"expected (B, {self.n_frames}, 3, {IMAGE_SIZE}, {IMAGE_SIZE}) "
                f"frames, got {shape}"
            )
        b, n = shape[0], shape[1]
        flat = reshape(frames, (b * n, 3, IMAGE_SIZE, IMAGE_SIZE))
        emb = self.proj(self.vit(flat))
        return reshape(emb, (b, n, emb.data.shape[-1]))


class _CNNBlock(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, padding=1)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        x = relu(self.conv1(x))
        x = relu(self.conv2(x))
        return maxpool2d(x, 2, 2)


class AudioBranch(Module):
    """Four conv blocks per window, projection, positional encoding, encoder."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.n_frames = cfg.n_frames
        chans = cfg.audio_cnn_channels
        self.blocks = [
            _CNNBlock(c_in, c_out, rng)
            for c_in, c_out in zip((1,) + chans[:-1], chans)
        ]
        pooled_h = MEL_BANDS // 16
        pooled_w = MEL_FRAMES // 2 // 2 // 2 // 2  # floor halving per pool
        self.flat_dim = chans[-1] * pooled_h * pooled_w
        self.proj = Linear(self.flat_dim, cfg.d_model, rng)
        self.pos = sinusoidal_positional_encoding(cfg.n_frames, cfg.d_model)
        self.encoder = TransformerEncoderLayer(
            cfg.d_model, cfg.encoder_heads, cfg.encoder_ff, rng
        )

    def forward(self, mels: Tensor) -> Tensor:
        shape = mels.data.shape
        if shape[1:] != (self.n_frames, MEL_BANDS, MEL_FRAMES):
            raise DimensionError(
                f"expected (B, {self.n_frames}, {MEL_BANDS}, {MEL_FRAMES}) "
                f"mel inputs, got {shape}"
            )
        b, n = shape[0], shape[1]
        x = reshape(mels, (b * n, 1, MEL_BANDS, MEL_FRAMES))
        for block in self.blocks:
            x = block(x)
        x = reshape(x, (b, n, self.flat_dim))
        x = self.proj(x)
        x = x + Tensor(self.pos[None, :, :].astype(x.data.dtype))
        return self.encoder(x)


class GroupEmotionModel(Module):
    """Fusion model over precomputed frame and mel sequences.

    forward() returns logits (batch, classes); predict_proba() applies the
    softmax. Branch order in the fused vector is video, audio, cross.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        if cfg.use_video:
            self.video = VideoBranch(cfg, rng)
        if cfg.use_audio:
            self.audio = AudioBranch(cfg, rng)
        if cfg.use_video and cfg.use_audio:
            self.cross = MultiHeadAttention(cfg.d_model, cfg.encoder_heads, rng)
        self.classifier = Linear(cfg.fused_width, cfg.classes, rng)
        bind_parameter_names(self)

    def forward(self, frames: Tensor | None, mels: Tensor | None) -> Tensor:
        cfg = self.cfg
        parts = []
        if cfg.use_video:
            if frames is None:
                raise ConfigError("video branch active but no frames given")
            parts.append(self.video(frames))
        if cfg.use_audio:
            if mels is None:
                raise ConfigError("audio branch active but no mel input given")
            parts.append(self.audio(mels))
        if len(parts) == 2:
            v, a = parts
            if v.data.shape[:2] != a.data.shape[:2]:
                raise DimensionError(
                    f"branch outputs disagree: video {v.data.shape} "
                    f"vs audio {a.data.shape}"
                )
            parts.append(self.cross(a, v, v))
        fused = parts[0] if len(parts) == 1 else concat(parts, axis=2)
        pooled = mean(fused, axis=1)
        return self.classifier(pooled)

    def predict_proba(self, frames: Tensor | None, mels: Tensor | None) -> Tensor:
        return softmax(self.forward(frames, mels))


def export_weights(model: Module, path) -> None:
    gewt.save_archive(path, model.state_dict())


def load_name_map(path) -> dict[str, str]:
    """Read a model-name <tab> archive-name mapping file."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise ConfigError(
                    f"{path}:{lineno}: expected 2 tab-separated columns, "
                    f"got {len(cols)}"
                )
            mapping[cols[0]] = cols[1]
    return mapping


def import_weights(
    model: Module, path, name_map: dict[str, str] | None = None
) -> list[str]:
    """Load parameters from a GEWT archive into a model.

    `name_map` translates model parameter names to archive entry names;
    identity by default. Shape conflicts are fatal; model parameters with
    no matching archive entry are returned (and logged) as unmatched.
    """
    archive = gewt.load_archive(path)
    name_map = name_map or {}
    unmatched = []
    for name, param in model.named_parameters():
        key = name_map.get(name, name)
        if key not in archive:
            unmatched.append(name)
            continue
        value = archive[key]
        if value.shape != param.tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: model "
                f"{param.tensor.data.shape}, archive {value.shape}"
            )
        param.tensor.data = value.astype(np.float32, copy=True)
    if unmatched:
        log.warning("import left %d parameters unmatched: %s",
                    len(unmatched), ", ".join(unmatched))
    return unmatched
