"""Audio ingestion: WAV decoding/encoding, resampling, 1 s windowing and the corpus manifest."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError, ManifestError, TooShortError, UnsupportedError

CANONICAL_RATE = 16000
SNIPPET_SECONDS = 1.0
# tolerance when comparing float window boundaries to clip length
_TIME_EPS = 1e-9


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)

    def slice(self, start: float, stop: float) -> "AudioClip":
        a = max(0, int(round(start * self.sample_rate)))
        b = min(len(self.samples), int(round(stop * self.sample_rate)))
        return AudioClip(self.samples[a:b], self.sample_rate, self.source_id)


@dataclass(frozen=True)
class SnippetWindow:
    clip_ref: str
    start_time: float
    hop: float
    duration: float = SNIPPET_SECONDS


class WindowList(list):
    """List of :class:`SnippetWindow` carrying a ``too_short`` flag."""

    too_short: bool = False


# ---------------------------------------------------------------------------
# WAV I/O


def decode_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Decode a RIFF/WAVE PCM16 byte string into a mono clip in [-1, 1].

    Stereo (or more channels) are averaged. Only 16-bit integer PCM is
    accepted; anything else raises :class:`UnsupportedError`.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE stream")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            if chunk_id == b"data" and fmt is not None:
                # tolerate truncated data chunk, keep whole frames only
                pcm = body
                break
            raise FormatError(f"chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == 0xFFFE and size >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the real codec tag leads the sub-format GUID
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif chunk_id == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError("missing fmt chunk")
    if pcm is None:
        raise FormatError("missing data chunk")
    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedError(f"unsupported WAV codec tag {audio_format}")
    if bits != 16:
        raise UnsupportedError(f"unsupported bit depth {bits}")
    if channels < 1 or rate <= 0:
        raise FormatError("invalid channel count or sample rate")
    frame_bytes = 2 * channels
    n_frames = len(pcm) // frame_bytes
    raw = np.frombuffer(pcm[:n_frames * frame_bytes], dtype="<i2").astype(np.float64)
    raw = raw.reshape(n_frames, channels).mean(axis=1) / 32768.0
    return AudioClip(raw, int(rate), source_id)


def encode_wav(clip: AudioClip) -> bytes:
    """Encode a clip as mono PCM16 WAV bytes (samples clipped to [-1, 1))."""
    q = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    buf = io.BytesIO()
    buf.write(b"RIFF")
    buf.write(struct.pack("<I", 36 + len(payload)))
    buf.write(b"WAVE")
    buf.write(b"fmt ")
    buf.write(struct.pack("<IHHIIHH", 16, 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16))
    buf.write(b"data")
    buf.write(struct.pack("<I", len(payload)))
    buf.write(payload)
    return buf.getvalue()


def read_wav(path) -> AudioClip:
    path = Path(path)
    return decode_wav(path.read_bytes(), source_id=path.stem)


def write_wav(path, clip: AudioClip) -> None:
    Path(path).write_bytes(encode_wav(clip))


def load_clip(path, target_rate: int = CANONICAL_RATE) -> AudioClip:
    """Read a WAV file and bring it to the canonical rate."""
    return resample(read_wav(path), target_rate)


# ---------------------------------------------------------------------------
# resampling and windowing


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampler. Output keeps the clip duration to within one sample."""
    if target_rate <= 0:
        raise ConfigError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate, clip.source_id)
    n_in = len(clip.samples)
    if n_in == 0:
        return AudioClip(np.zeros(0), target_rate, clip.source_id)
    n_out = int(round(n_in * target_rate / clip.sample_rate))
    t_out = np.arange(n_out) * (clip.sample_rate / target_rate)
    t_in = np.arange(n_in, dtype=np.float64)
    out = np.interp(t_out, t_in, clip.samples)
    return AudioClip(out, target_rate, clip.source_id)


def window_count(length_seconds: float, hop: float) -> int:
    if length_seconds + _TIME_EPS < SNIPPET_SECONDS:
        return 0
    return int(math.floor((length_seconds - SNIPPET_SECONDS) / hop + _TIME_EPS)) + 1


def enumerate_windows(clip: AudioClip, hop: float = 1.0) -> WindowList:
    """1 s analysis windows starting at 0, hop, 2*hop, ... that fit in the clip."""
    if hop <= 0:
        raise ConfigError("hop must be positive")
    out = WindowList()
    n = window_count(clip.duration, hop)
    if n == 0:
        out.too_short = True
        return out
    for k in range(n):
        out.append(SnippetWindow(clip.source_id, k * hop, hop))
    return out


def require_windows(clip: AudioClip, hop: float = 1.0) -> WindowList:
    windows = enumerate_windows(clip, hop)
    if windows.too_short:
        raise TooShortError(
            f"clip {clip.source_id!r} is {clip.duration:.3f} s; at least {SNIPPET_SECONDS} s required"
        )
    return windows


def concatenate(clips: Sequence[AudioClip], source_id: str = "") -> AudioClip:
    rates = {c.sample_rate for c in clips}
    if len(rates) != 1:
        raise ConfigError("cannot concatenate clips with different sample rates")
    return AudioClip(np.concatenate([c.samples for c in clips]), rates.pop(), source_id)


# ---------------------------------------------------------------------------
# corpus manifest


@dataclass
class ManifestEntry:
    path: Path
    speaker: int
    split: Optional[str] = None


@dataclass
class CorpusManifest:
    entries: list = field(default_factory=list)

    @property
    def num_speakers(self) -> int:
        return len({e.speaker for e in self.entries})

    def split(self, tag: str) -> list:
        return [e for e in self.entries if e.split == tag]

    def canonicalize(self) -> "CorpusManifest":
        """Relabel speakers onto the contiguous range 0..S-1 (sorted by original label)."""
        mapping = {s: i for i, s in enumerate(sorted({e.speaker for e in self.entries}))}
        return CorpusManifest([ManifestEntry(e.path, mapping[e.speaker], e.split) for e in self.entries])

    def check_contiguous(self) -> None:
        labels = sorted({e.speaker for e in self.entries})
        if labels != list(range(len(labels))):
            raise ManifestError(f"speaker labels are not contiguous 0..S-1: {labels[:10]}...")

    def save(self, path) -> None:
        path = Path(path)
        base = path.parent
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "speaker", "split"])
            for e in self.entries:
                p = Path(e.path)
                try:
                    p = p.relative_to(base)
                except ValueError:
                    pass
                w.writerow([p.as_posix(), e.speaker, e.split or ""])

    @classmethod
    def load(cls, path, check_files: bool = True) -> "CorpusManifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "speaker"} <= set(reader.fieldnames):
                raise ManifestError("manifest header must contain path,speaker[,split]")
            for lineno, row in enumerate(reader, start=2):
                try:
                    speaker = int(row["speaker"])
                except (TypeError, ValueError):
                    raise ManifestError(f"line {lineno}: bad speaker label {row['speaker']!r}") from None
                split = (row.get("split") or "").strip() or None
                if split not in (None, "train", "validation"):
                    raise ManifestError(f"line {lineno}: unknown split tag {split!r}")
                p = Path(row["path"])
                if not p.is_absolute():
                    p = path.parent / p
                if check_files and not p.exists():
                    raise ManifestError(f"line {lineno}: audio file missing: {p}")
                entries.append(ManifestEntry(p, speaker, split))
        return cls(entries)


def iter_entries(manifest: CorpusManifest, split: Optional[str] = None) -> Iterable[ManifestEntry]:
    for e in manifest.entries:
        if split is None or e.split == split:
            yield e
