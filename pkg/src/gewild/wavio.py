"""RIFF/WAVE reading and writing for PCM-16 and IEEE-float-32 payloads."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, UnsupportedFormatError

log = logging.getLogger(__name__)

_PCM = 1
_IEEE_FLOAT = 3


@dataclass
class AudioClip:
    """Audio samples as float32 in [-1, 1], shaped (channels, n_samples)."""

    samples: np.ndarray
    sample_rate: int

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def load_wav(path: str | Path) -> AudioClip:
    """Parse a RIFF/WAVE file (PCM 16-bit or float 32-bit, 1-2 channels)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise ParseError(f"{path}: file too short for a RIFF header", offset=len(raw))
    if raw[0:4] != b"RIFF":
        raise ParseError(f"{path}: missing RIFF magic", offset=0)
    if raw[8:12] != b"WAVE":
        raise ParseError(f"{path}: missing WAVE form type", offset=8)

    fmt = None
    data: bytes | None = None
    off = 12
    while off < len(raw) and (fmt is None or data is None):
        if off + 8 > len(raw):
            raise ParseError(f"{path}: truncated chunk header", offset=off)
        chunk_id = raw[off : off + 4]
        (size,) = struct.unpack_from("<I", raw, off + 4)
        body_start = off + 8
        if body_start + size > len(raw):
            raise ParseError(
                f"{path}: chunk {chunk_id!r} of {size} bytes extends past end of file",
                offset=body_start,
            )
        body = raw[body_start : body_start + size]
        if chunk_id == b"fmt ":
            if size < 16:
                raise ParseError(f"{path}: fmt chunk too short", offset=body_start)
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = body
        off = body_start + size + (size % 2)  # chunks are word-aligned

    if fmt is None:
        raise ParseError(f"{path}: no fmt chunk found", offset=off)
    if data is None:
        raise ParseError(f"{path}: no data chunk found", offset=off)

    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if audio_format not in (_PCM, _IEEE_FLOAT):
        raise UnsupportedFormatError(
            f"{path}: codec tag {audio_format} is not PCM or IEEE float"
        )
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {channels} channels, expected 1 or 2")
    if audio_format == _PCM and bits != 16:
        raise UnsupportedFormatError(f"{path}: {bits}-bit PCM, only 16-bit supported")
    if audio_format == _IEEE_FLOAT and bits != 32:
        raise UnsupportedFormatError(f"{path}: {bits}-bit float, only 32-bit supported")

    if len(data) == 0:
        log.warning("%s: zero-length data chunk, returning empty clip", path)
        return AudioClip(np.zeros((channels, 0), dtype=np.float32), sample_rate)

    bytes_per_sample = bits // 8
    frame_bytes = bytes_per_sample * channels
    usable = len(data) - len(data) % frame_bytes
    if audio_format == _PCM:
        flat = np.frombuffer(data[:usable], dtype="<i2").astype(np.float32) / 32768.0
    else:
        flat = np.frombuffer(data[:usable], dtype="<f4").astype(np.float32)
        flat = np.clip(flat, -1.0, 1.0)
    samples = flat.reshape(-1, channels).T.copy()
    return AudioClip(samples, sample_rate)


def save_wav(path: str | Path, clip: AudioClip, sample_format: str = "pcm16") -> None:
    """Write an AudioClip; `sample_format` is "pcm16" or "float32"."""
    samples = np.atleast_2d(clip.samples)
    channels, _ = samples.shape
    interleaved = samples.T.reshape(-1)
    if sample_format == "pcm16":
        payload = np.clip(np.round(interleaved * 32768.0), -32768, 32767) \
            .astype("<i2").tobytes()
        audio_format, bits = _PCM, 16
    elif sample_format == "float32":
        payload = interleaved.astype("<f4").tobytes()
        audio_format, bits = _IEEE_FLOAT, 32
    else:
        raise ConfigError(f"unknown sample format {sample_format!r}")

    block_align = channels * bits // 8
    fmt_chunk = struct.pack(
        "<HHIIHH", audio_format, channels, clip.sample_rate,
        clip.sample_rate * block_align, block_align, bits,
    )
    body = b"WAVE"
    body += b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) % 2:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
