"""Turn a corpus manifest into stacked (N, 1, 128, 100) snippet arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import CANONICAL_RATE, AudioClip, CorpusManifest, enumerate_windows, load_clip, resample
from .features import snippet_batch


@dataclass
class SnippetSet:
    x: np.ndarray
    y: np.ndarray
    clip_index: np.ndarray
    start_times: np.ndarray

    def __len__(self):
        return len(self.y)


def clip_snippets(clip: AudioClip, hop: float = 1.0):
    clip = resample(clip, CANONICAL_RATE)
    windows = enumerate_windows(clip, hop)
    return snippet_batch(clip, windows), np.array([w.start_time for w in windows])


def build_snippets(clips, labels, hop: float = 1.0, dtype=np.float32) -> SnippetSet:
    xs, ys, ci, ts = [], [], [], []
    for i, (clip, label) in enumerate(zip(clips, labels)):
        x, t = clip_snippets(clip, hop)
        xs.append(x.astype(dtype))
        ys.append(np.full(len(x), label, dtype=np.int64))
        ci.append(np.full(len(x), i, dtype=np.int64))
        ts.append(t)
    if not xs:
        return SnippetSet(np.zeros((0, 1, 128, 100), dtype), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
    return SnippetSet(np.concatenate(xs), np.concatenate(ys), np.concatenate(ci), np.concatenate(ts))


def manifest_snippets(manifest: CorpusManifest, split=None, hop: float = 1.0, dtype=np.float32) -> SnippetSet:
    entries = [e for e in manifest.entries if split is None or e.split == split]
    clips = [load_clip(e.path) for e in entries]
    return build_snippets(clips, [e.speaker for e in entries], hop, dtype)
