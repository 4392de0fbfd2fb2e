"""Deterministic synthetic speakers, used in place of a licensed speech corpus.

Each speaker is a harmonic stack with its own fundamental, spectral tilt,
per-harmonic colouring and three formant-like resonances. Clips add
vibrato, a slow pitch drift, a syllable-rate amplitude envelope and a
little noise. Everything is a pure function of ``(seed, speaker, clip)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, SNIPPET_SECONDS, AudioClip, CorpusManifest, ManifestEntry, write_wav
from .errors import ConfigError

BASE_F0 = 100.0
# fundamentals of the first 12 speakers occupy distinct pitch classes
_F0_SLOTS = 12


@dataclass(frozen=True)
class SpeakerVoice:
    f0: float
    tilt: float
    colour: tuple
    formants: tuple  # (centre Hz, bandwidth Hz, gain)
    vibrato_rate: float
    vibrato_depth: float
    noise: float


def speaker_voice(seed: int, speaker: int) -> SpeakerVoice:
    slots = np.random.default_rng([seed, 0x5EED]).permutation(_F0_SLOTS)
    rng = np.random.default_rng([seed, speaker, 1])
    semis = float(slots[speaker % _F0_SLOTS]) + rng.uniform(-0.15, 0.15)
    # later speakers reuse pitch classes an octave up, then shifted by a quarter tone
    cycle = speaker // _F0_SLOTS
    semis += 12.0 * (cycle % 2) + 0.5 * (cycle // 2)
    f0 = BASE_F0 * 2.0 ** (semis / 12.0)
    formants = (
        (rng.uniform(300, 900), rng.uniform(60, 140), rng.uniform(2.0, 6.0)),
        (rng.uniform(900, 2400), rng.uniform(90, 200), rng.uniform(1.5, 5.0)),
        (rng.uniform(2400, 3800), rng.uniform(120, 260), rng.uniform(1.0, 4.0)),
    )
    return SpeakerVoice(
        f0=f0,
        tilt=rng.uniform(0.7, 1.5),
        colour=tuple(rng.uniform(0.5, 1.5, size=64)),
        formants=formants,
        vibrato_rate=rng.uniform(4.0, 7.0),
        vibrato_depth=rng.uniform(0.003, 0.008),
        noise=rng.uniform(0.002, 0.008),
    )


def synth_clip(seed: int, speaker: int, clip_index: int, seconds: float,
               sample_rate: int = CANONICAL_RATE) -> AudioClip:
    """Render one clip of a synthetic speaker, peak-normalised to 0.8."""
    if seconds <= 0:
        raise ConfigError("clip length must be positive")
    voice = speaker_voice(seed, speaker)
    rng = np.random.default_rng([seed, speaker, clip_index, 2])
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate

    drift = 1.0 + rng.uniform(-0.002, 0.002) * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))
    vib = 1.0 + voice.vibrato_depth * np.sin(2 * np.pi * voice.vibrato_rate * t + rng.uniform(0, 2 * np.pi))
    f_inst = voice.f0 * drift * vib
    phase = 2 * np.pi * np.cumsum(f_inst) / sample_rate

    nyq = 0.45 * sample_rate
    out = np.zeros(n)
    n_harm = min(len(voice.colour), int(nyq // voice.f0))
    for h in range(1, n_harm + 1):
        fh = h * voice.f0
        amp = h ** (-voice.tilt) * voice.colour[h - 1]
        amp *= 1.0 + sum(g * np.exp(-0.5 * ((fh - fc) / bw) ** 2) for fc, bw, g in voice.formants)
        out += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    env = 0.75 + 0.25 * np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    out *= env
    out /= np.max(np.abs(out)) + 1e-12
    out += voice.noise * rng.standard_normal(n)
    out *= 0.8 / (np.max(np.abs(out)) + 1e-12)
    return AudioClip(out, sample_rate, f"spk{speaker:03d}_clip{clip_index:03d}")


def validation_clip(clip_index: int, clips_per_speaker: int) -> bool:
    """Every fifth clip (and the last one for tiny corpora) is held out."""
    if clips_per_speaker < 2:
        return False
    return clip_index % 5 == 4 or (clips_per_speaker < 5 and clip_index == clips_per_speaker - 1)


def synth_speaker_corpus(num_speakers: int, clips_per_speaker: int, clip_seconds: float, seed: int,
                         out_dir=None, sample_rate: int = CANONICAL_RATE):
    """Generate a corpus; if ``out_dir`` is given, write WAVs plus ``manifest.csv``.

    Returns ``(manifest, clips)``, where ``clips`` lines up with
    ``manifest.entries``.
    """
    if num_speakers <= 0 or clips_per_speaker <= 0 or clip_seconds <= 0:
        raise ConfigError("speaker count, clip count and clip length must be positive")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "wav").mkdir(parents=True, exist_ok=True)
    entries, clips = [], []
    for s in range(num_speakers):
        for c in range(clips_per_speaker):
            clip = synth_clip(seed, s, c, clip_seconds, sample_rate)
            split = "validation" if validation_clip(c, clips_per_speaker) else "train"
            path = Path("wav") / f"{clip.source_id}.wav"
            if out is not None:
                path = out / path
                write_wav(path, clip)
            entries.append(ManifestEntry(path, s, split))
            clips.append(clip)
    manifest = CorpusManifest(entries)
    if out is not None:
        manifest.save(out / "manifest.csv")
    return manifest, clips


def min_clip_seconds() -> float:
    return SNIPPET_SECONDS
