"""Spectral features: STFT, mel filterbank, log-compressed mel snippets and chroma."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import CANONICAL_RATE, AudioClip, SnippetWindow
from .errors import ConfigError, DimensionError

WIN_LENGTH = 400   # 25 ms at 16 kHz
HOP_LENGTH = 160   # 10 ms
N_FFT = 512
N_MELS = 128
N_FRAMES = 100
LOG_GAIN = 10000.0

# chroma trades time resolution for pitch resolution
CHROMA_WIN = 2048
CHROMA_FFT = 4096
CHROMA_HOP = 160
CHROMA_FMIN = 55.0
CHROMA_FMAX = 5000.0
PITCH_CLASSES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


@dataclass
class MelSnippet:
    values: np.ndarray
    start_time: float = 0.0
    clip_ref: str = ""


@dataclass
class ChromaGram:
    values: np.ndarray
    frame_hop: float
    frame_offset: float = 0.0  # time of the first frame centre, relative to segment start

    @property
    def frame_times(self) -> np.ndarray:
        return self.frame_offset + self.frame_hop * np.arange(self.values.shape[1])


@lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    # periodic Hann window
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def frame_signal(x: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """Frames as a (frames, window_len) strided view; frame t starts at t*hop."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if len(x) < window_len:
        return np.zeros((0, window_len))
    n_frames = 1 + (len(x) - window_len) // hop
    return np.lib.stride_tricks.as_strided(
        x, shape=(n_frames, window_len), strides=(x.strides[0] * hop, x.strides[0]), writeable=False
    )


def stft(clip, window_len: int = WIN_LENGTH, hop: int = HOP_LENGTH, fft_len: int = N_FFT) -> np.ndarray:
    """One-sided Hann STFT, returned as (fft_len // 2 + 1, frames).

    ``clip`` may be an :class:`AudioClip` or a raw sample array.
    """
    if window_len > fft_len:
        raise ConfigError("window_len must not exceed fft_len")
    if hop <= 0:
        raise ConfigError("hop must be positive")
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    frames = frame_signal(x, window_len, hop)
    if frames.shape[0] == 0:
        return np.zeros((fft_len // 2 + 1, 0), dtype=np.complex128)
    return np.fft.rfft(frames * _hann(window_len), n=fft_len, axis=1).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(num_bands: int, f_min: float, f_max: float) -> np.ndarray:
    """Edge/centre frequencies in Hz: num_bands + 2 points evenly spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), num_bands + 2))


def _triangle_integral(x, lo, mid, hi):
    """Integral from -inf to x of the unit-peak triangle on [lo, hi] peaking at mid."""
    x = np.clip(x, lo, hi)
    left = np.minimum(x, mid)
    rise = (left - lo) ** 2 / (2.0 * (mid - lo))
    right = np.maximum(x, mid)
    fall = ((hi - mid) ** 2 - (hi - right) ** 2) / (2.0 * (hi - mid))
    return rise + fall


@lru_cache(maxsize=16)
def mel_filterbank(num_bands: int = N_MELS, fft_len: int = N_FFT, sample_rate: int = CANONICAL_RATE,
                   f_min: float = 0.0, f_max: float = None) -> np.ndarray:
    """Triangular HTK-mel filters, shape (num_bands, fft_len // 2 + 1).

    Each weight is the mean of the triangle over the frequency cell of its
    FFT bin, so narrow low-frequency filters that fall between bin centres
    still receive weight. The returned array is read-only.
    """
    if f_max is None:
        f_max = sample_rate / 2.0
    if not (0.0 <= f_min < f_max <= sample_rate / 2.0):
        raise ConfigError(f"need 0 <= f_min < f_max <= {sample_rate / 2}, got {f_min}, {f_max}")
    if num_bands < 1:
        raise ConfigError("num_bands must be positive")
    pts = mel_centers(num_bands, f_min, f_max)
    n_bins = fft_len // 2 + 1
    df = sample_rate / fft_len
    bin_f = np.arange(n_bins) * df
    cell_lo, cell_hi = bin_f - df / 2, bin_f + df / 2
    fb = np.zeros((num_bands, n_bins))
    for m in range(num_bands):
        lo, mid, hi = pts[m], pts[m + 1], pts[m + 2]
        if not (lo < mid < hi):
            raise ConfigError(f"mel band {m} has zero width; too many bands for this range")
        area = _triangle_integral(cell_hi, lo, mid, hi) - _triangle_integral(cell_lo, lo, mid, hi)
        fb[m] = area / df
    if np.any(fb.max(axis=1) <= 0):
        raise ConfigError("some mel filters are empty; reduce num_bands or increase fft_len")
    fb.setflags(write=False)
    return fb


def log_compress(x):
    """f(x) = ln(1 + 10000 x)."""
    return np.log1p(LOG_GAIN * np.asarray(x))


def snippet_samples(clip: AudioClip, start_time: float) -> np.ndarray:
    """Samples feeding the 100 STFT frames of a window, zero-padded past the clip end."""
    need = (N_FRAMES - 1) * HOP_LENGTH + WIN_LENGTH
    a = int(round(start_time * clip.sample_rate))
    seg = clip.samples[a:a + need]
    if len(seg) < need:
        seg = np.concatenate([seg, np.zeros(need - len(seg))])
    return seg


def log_mel_snippet(clip: AudioClip, window: SnippetWindow) -> MelSnippet:
    if clip.sample_rate != CANONICAL_RATE:
        raise ConfigError(f"clip must be at {CANONICAL_RATE} Hz; resample first")
    if window.start_time < 0 or window.start_time + window.duration > clip.duration + 1e-9:
        raise ConfigError("window lies outside the clip")
    spec = stft(snippet_samples(clip, window.start_time))
    power = np.abs(spec) ** 2
    values = log_compress(mel_filterbank() @ power)
    if values.shape != (N_MELS, N_FRAMES):
        raise DimensionError(f"mel snippet has shape {values.shape}, expected {(N_MELS, N_FRAMES)}")
    return MelSnippet(values, window.start_time, window.clip_ref)


def snippet_batch(clip: AudioClip, windows) -> np.ndarray:
    """Stack snippets for ``windows`` into a (N, 1, 128, 100) array."""
    out = np.empty((len(windows), 1, N_MELS, N_FRAMES))
    for i, w in enumerate(windows):
        out[i, 0] = log_mel_snippet(clip, w).values
    return out


def pitch_class(freq) -> np.ndarray:
    """Pitch class (0 = C) of frequencies in Hz, A440 reference."""
    return (np.round(12.0 * np.log2(np.asarray(freq) / 440.0)).astype(int) + 69) % 12


@lru_cache(maxsize=4)
def _chroma_map(fft_len: int, sample_rate: int) -> np.ndarray:
    freqs = np.arange(fft_len // 2 + 1) * sample_rate / fft_len
    mapping = np.zeros((12, len(freqs)))
    ok = (freqs >= CHROMA_FMIN) & (freqs <= CHROMA_FMAX)
    mapping[pitch_class(freqs[ok]), np.nonzero(ok)[0]] = 1.0
    mapping.setflags(write=False)
    return mapping


def chroma(clip: AudioClip, start: float = 0.0, duration: float = None, silence: float = 1e-8) -> ChromaGram:
    """12 x F pitch-class profile of ``clip[start:start+duration]``.

    Bin magnitudes are summed into their nearest pitch class and each frame
    is L1-normalised. Frames whose total magnitude is below ``silence`` are
    left as zero columns.
    """
    if duration is None:
        duration = clip.duration - start
    if start < -1e-9 or start + duration > clip.duration + 1e-9:
        raise ConfigError("chroma segment lies outside the clip")
    seg = clip.slice(start, start + duration).samples
    win = min(CHROMA_WIN, len(seg))
    if win == 0:
        return ChromaGram(np.zeros((12, 0)), CHROMA_HOP / clip.sample_rate)
    mag = np.abs(stft(seg, win, CHROMA_HOP, CHROMA_FFT))
    raw = _chroma_map(CHROMA_FFT, clip.sample_rate) @ mag
    totals = raw.sum(axis=0)
    voiced = totals > silence
    values = np.zeros_like(raw)
    values[:, voiced] = raw[:, voiced] / totals[voiced]
    hop_s = CHROMA_HOP / clip.sample_rate
    return ChromaGram(values, hop_s, frame_offset=0.5 * win / clip.sample_rate)
