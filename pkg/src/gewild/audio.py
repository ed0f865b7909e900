"""Audio frontend: standardization to 16 kHz mono, windowing, log-Mel features.

The deployed pipeline feeds each one-second window through a 128-band log-Mel
transform, so a standardized five-second clip becomes a sequence of (128, 251)
feature maps. Everything here is deterministic and allocation-light; the Mel
filterbank is built once per (rate, bands) combination and cached.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from .errors import ConfigError, DataError, DimensionError
from .wavio import AudioClip

TARGET_RATE = 16000
CLIP_SECONDS = 5
CLIP_SAMPLES = TARGET_RATE * CLIP_SECONDS
WINDOW_SAMPLES = TARGET_RATE  # one second per analysis window

N_MELS = 128
N_FFT = 1024
HOP = 64
N_FRAMES = 251  # frames per one-second window at hop 64, centered
FMIN = 0.0
FMAX = 8000.0

_RATE_LO = 8000
_RATE_HI = 48000
_TAPS_PER_PHASE = 32
_KAISER_BETA = 8.0


def mixdown_mono(clip: AudioClip) -> AudioClip:
    """Average channels to mono. Mono input is returned unchanged."""
    if clip.channels == 1:
        return clip
    mono = clip.samples.mean(axis=0, keepdims=True).astype(np.float32)
    return AudioClip(mono, clip.sample_rate)


@lru_cache(maxsize=8)
def _polyphase_filter(up: int, down: int) -> np.ndarray:
    """Windowed-sinc anti-alias filter for an up/down rational resample.

    Returned flat, length _TAPS_PER_PHASE * up; each phase is normalized to
    unit sum so constant signals pass through with exactly unit gain.
    """
    n_taps = _TAPS_PER_PHASE * up
    cutoff = min(1.0 / up, 1.0 / down)
    n = np.arange(n_taps, dtype=np.float64) - (n_taps - 1) / 2.0
    h = up * cutoff * np.sinc(cutoff * n) * np.kaiser(n_taps, _KAISER_BETA)
    for p in range(up):
        h[p::up] /= h[p::up].sum()
    return h


def resample_16k(clip: AudioClip) -> AudioClip:
    """Polyphase rational resample to 16 kHz. A 16 kHz input passes through."""
    rate = clip.sample_rate
    if rate == TARGET_RATE:
        return clip
    if not _RATE_LO <= rate <= _RATE_HI:
        raise ConfigError(
            f"sample rate {rate} outside supported range "
            f"[{_RATE_LO}, {_RATE_HI}]"
        )
    g = math.gcd(TARGET_RATE, rate)
    up, down = TARGET_RATE // g, rate // g
    h = _polyphase_filter(up, down)
    delay = (len(h) - 1) // 2

    n_in = clip.n_samples
    n_out = -(-n_in * up // down)  # ceil
    q = np.arange(n_out, dtype=np.int64) * down + delay
    phase = (q % up).astype(np.intp)
    base = (q // up).astype(np.intp)

    pad = _TAPS_PER_PHASE
    out = np.zeros((clip.channels, n_out), dtype=np.float64)
    for c in range(clip.channels):
        x = np.zeros(n_in + 2 * pad, dtype=np.float64)
        x[pad : pad + n_in] = clip.samples[c]
        acc = np.zeros(n_out, dtype=np.float64)
        for t in range(_TAPS_PER_PHASE):
            acc += h[phase + t * up] * x[base - t + pad]
        out[c] = acc
    return AudioClip(out.astype(np.float32), TARGET_RATE)


def standardize(clip: AudioClip) -> AudioClip:
    """Mono, 16 kHz, exactly CLIP_SAMPLES long (zero-padded or truncated)."""
    clip = resample_16k(mixdown_mono(clip))
    x = clip.samples[0]
    if len(x) < CLIP_SAMPLES:
        x = np.concatenate([x, np.zeros(CLIP_SAMPLES - len(x), dtype=np.float32)])
    elif len(x) > CLIP_SAMPLES:
        x = x[:CLIP_SAMPLES].copy()
    return AudioClip(x[None, :], TARGET_RATE)


def window_starts(n_samples: int, n_windows: int) -> np.ndarray:
    """Start offsets for n_windows one-second windows over n_samples samples.

    One window starts at zero. When the windows tile the clip exactly they
    are laid end to end; otherwise they are spread evenly over the clip with
    the last window flush against the end (ties round up).
    """
    if n_windows < 1:
        raise ConfigError(f"need at least one window, got {n_windows}")
    if n_windows == 1:
        return np.zeros(1, dtype=np.int64)
    if n_windows * WINDOW_SAMPLES == n_samples:
        return np.arange(n_windows, dtype=np.int64) * WINDOW_SAMPLES
    span = max(n_samples - WINDOW_SAMPLES, 0)
    k = np.arange(n_windows, dtype=np.float64)
    return np.floor(k * span / (n_windows - 1) + 0.5).astype(np.int64)


def frame_audio(clip: AudioClip, n_windows: int) -> np.ndarray:
    """Cut a standardized clip into (n_windows, WINDOW_SAMPLES) float32.

    Windows running past the end of the clip are zero-padded.
    """
    if clip.channels != 1:
        raise DimensionError(
            f"expected a mono clip, got {clip.channels} channels"
        )
    if clip.sample_rate != TARGET_RATE:
        raise DataError(
            f"expected a {TARGET_RATE} Hz clip, got {clip.sample_rate} Hz"
        )
    x = clip.samples[0]
    starts = window_starts(len(x), n_windows)
    out = np.zeros((n_windows, WINDOW_SAMPLES), dtype=np.float32)
    for i, s in enumerate(starts):
        chunk = x[s : s + WINDOW_SAMPLES]
        out[i, : len(chunk)] = chunk
    return out


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    rate: int = TARGET_RATE,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> np.ndarray:
    """Triangular Mel filterbank, (n_mels, n_fft // 2 + 1) float32.

    Filters are spaced uniformly on the 2595 * log10(1 + f / 700) scale and
    area-normalized (each triangle scaled by 2 / bandwidth) so that filter
    response magnitudes stay comparable across the band.
    """
    if fmax > rate / 2:
        raise ConfigError(f"fmax {fmax} above Nyquist {rate / 2}")
    edges_hz = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    bins_hz = np.arange(n_fft // 2 + 1, dtype=np.float64) * rate / n_fft

    lo = edges_hz[:-2, None]
    ctr = edges_hz[1:-1, None]
    hi = edges_hz[2:, None]
    rising = (bins_hz - lo) / (ctr - lo)
    falling = (hi - bins_hz) / (hi - ctr)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights *= 2.0 / (hi - lo)
    return weights.astype(np.float32)


@lru_cache(maxsize=2)
def _hann_periodic(n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)).astype(np.float32)


@lru_cache(maxsize=4)
def _filterbank_t(n_mels: int, n_fft: int, rate: int) -> np.ndarray:
    return np.ascontiguousarray(mel_filterbank(n_mels, n_fft, rate).T)


# Reusable scratch buffers; per thread because the train harness runs the
# feature path on a prefetch thread.
_scratch = threading.local()


def _mel_workspace() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ws = getattr(_scratch, "mel", None)
    if ws is None:
        ws = (
            np.empty((N_FRAMES, N_FFT), dtype=np.float32),
            np.empty((N_FRAMES, N_FFT // 2 + 1), dtype=np.float32),
            np.empty((N_FRAMES, N_MELS), dtype=np.float32),
        )
        _scratch.mel = ws
    return ws


def mel_spectrogram(window: np.ndarray) -> np.ndarray:
    """Log-Mel features for one one-second window: (N_MELS, N_FRAMES) float32.

    Centered STFT (reflect padding, periodic Hann, n_fft 1024, hop 64),
    power spectrum, Mel projection, then log(S + 1e-10).
    """
    window = np.asarray(window, dtype=np.float32)
    if window.shape != (WINDOW_SAMPLES,):
        raise DimensionError(
            f"expected a ({WINDOW_SAMPLES},) window, got {window.shape}"
        )
    windowed, power, mel = _mel_workspace()
    padded = np.pad(window, N_FFT // 2, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, N_FFT)[::HOP]
    np.multiply(frames, _hann_periodic(N_FFT), out=windowed)
    spectrum = scipy.fft.rfft(windowed, axis=1)
    np.multiply(spectrum.real, spectrum.real, out=power)
    power += spectrum.imag**2
    np.matmul(power, _filterbank_t(N_MELS, N_FFT, TARGET_RATE), out=mel)
    return np.log(mel.T + np.float32(1e-10))


@dataclass
class MelFrameSequence:
    """Per-window log-Mel features for one clip: (n, N_MELS, N_FRAMES)."""

    features: np.ndarray
    clip_id: str = ""

    def __post_init__(self) -> None:
        f = self.features
        if f.ndim != 3 or f.shape[1:] != (N_MELS, N_FRAMES):
            raise DimensionError(
                f"expected (n, {N_MELS}, {N_FRAMES}) features, got {f.shape}"
            )
        if not np.isfinite(f).all():
            raise DataError("non-finite values in Mel features")

    @property
    def n_windows(self) -> int:
        return self.features.shape[0]


def clip_to_mel_sequence(
    clip: AudioClip, n_windows: int, clip_id: str = ""
) -> MelFrameSequence:
    """Standardize a clip and produce its window-by-window log-Mel features."""
    windows = frame_audio(standardize(clip), n_windows)
    feats = np.stack([mel_spectrogram(w) for w in windows])
    return MelFrameSequence(feats.astype(np.float32), clip_id=clip_id)
