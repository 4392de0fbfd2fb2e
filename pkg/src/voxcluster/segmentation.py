"""Speaker segments from per-second cluster labels, with chroma-based change-point refinement."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .audio import CANONICAL_RATE, AudioClip, resample
from .clustering import ClusterAssignment, Dendrogram, cluster
from .embeddings import EmbeddingSet, embed_clip
from .errors import ConfigError, TooShortError
from .features import chroma

log = logging.getLogger(__name__)

REFINE_HALF_WIDTH = 1.0
# final two chroma segments closer than this (cosine distance) count as "no change"
MIN_CHANGE_DISTANCE = 0.07


@dataclass
class DiarizationSegment:
    start: float
    end: float
    speaker: int


@dataclass
class ChangePoint:
    coarse_time: float
    refined_time: float
    speakers: tuple = (None, None)
    fallback: bool = False
    clamped: bool = False
    distance: float = 0.0


def labels_to_segments(window_times, labels, clip_end: float) -> list:
    """Maximal runs of equal labels; each run ends where the next begins (last ends at ``clip_end``)."""
    times = np.asarray(window_times, dtype=np.float64)
    labels = np.asarray(labels)
    if len(times) == 0:
        return []
    if len(times) != len(labels):
        raise ConfigError("window_times and labels differ in length")
    if np.any(np.diff(times) <= 0):
        raise ConfigError("window times must be strictly increasing")
    segs = []
    start = float(times[0])
    for i in range(1, len(times)):
        if labels[i] != labels[i - 1]:
            segs.append(DiarizationSegment(start, float(times[i]), int(labels[i - 1])))
            start = float(times[i])
    segs.append(DiarizationSegment(start, float(clip_end), int(labels[-1])))
    return segs


def _cos(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 1.0
    return float(1.0 - (u @ v) / (nu * nv))


def bottom_up_split(frames: np.ndarray) -> tuple:
    """Merge adjacent segments of the (12, F) chroma frames until two remain.

    At each step the adjacent pair with the smallest cosine distance between
    mean chroma vectors is merged (leftmost pair on ties). Returns
    ``(index of first frame of the right segment, distance between the two
    final segments)``.
    """
    n = frames.shape[1]
    if n < 2:
        raise ConfigError("need at least two frames to split")
    starts = list(range(n))
    sums = [frames[:, i].copy() for i in range(n)]
    counts = [1] * n
    dists = [_cos(sums[i], sums[i + 1]) for i in range(n - 1)]
    while len(starts) > 2:
        i = int(np.argmin(dists))
        sums[i] = sums[i] + sums[i + 1]
        counts[i] += counts[i + 1]
        del sums[i + 1], counts[i + 1], starts[i + 1], dists[i]
        # means and sums share direction, so cosine on sums is cosine on means
        if i > 0:
            dists[i - 1] = _cos(sums[i - 1], sums[i])
        if i < len(starts) - 1:
            dists[i] = _cos(sums[i], sums[i + 1])
    return starts[1], _cos(sums[0], sums[1])


def refine_boundary(clip: AudioClip, coarse_time: float, speakers=(None, None),
                    half_width: float = REFINE_HALF_WIDTH, min_change: float = MIN_CHANGE_DISTANCE) -> ChangePoint:
    """Locate a speaker change inside the 2 s frame centred on ``coarse_time``."""
    lo, hi = coarse_time - half_width, coarse_time + half_width
    clamped = False
    if lo < 0 or hi > clip.duration:
        clamped = True
        lo, hi = max(0.0, lo), min(clip.duration, hi)
        log.warning("refinement frame around %.3f s clamped to [%.3f, %.3f]", coarse_time, lo, hi)
    cp = ChangePoint(coarse_time, coarse_time, tuple(speakers), clamped=clamped)
    if hi - lo <= 0:
        cp.fallback = True
        return cp
    gram = chroma(clip, lo, hi - lo)
    voiced = gram.values.sum(axis=0) > 0
    if gram.values.shape[1] < 2 or voiced.sum() < 2:
        cp.fallback = True
        return cp
    frames = gram.values[:, voiced]
    times = gram.frame_times[voiced]
    split, dist = bottom_up_split(frames)
    cp.distance = dist
    if dist < min_change:
        cp.fallback = True
        return cp
    cp.refined_time = float(lo + 0.5 * (times[split - 1] + times[split]))
    return cp


@dataclass
class DiarizationResult:
    clip_ref: str
    duration: float
    segments: list
    change_points: list
    assignment: ClusterAssignment
    dendrogram: Dendrogram
    embeddings: EmbeddingSet
    coarse_segments: list = field(default_factory=list)

    @property
    def num_speakers(self) -> int:
        return len({s.speaker for s in self.segments})

    def to_rttm(self) -> str:
        lines = []
        for s in self.segments:
            lines.append(f"SPEAKER {self.clip_ref} 1 {s.start:.3f} {s.end - s.start:.3f} <NA> <NA> "
                         f"spk{s.speaker} <NA> <NA>")
        return "\n".join(lines) + ("\n" if lines else "")

    def to_json(self) -> str:
        payload = {
            "clip": self.clip_ref,
            "duration": round(self.duration, 6),
            "num_speakers": self.num_speakers,
            "cut_distance": self.assignment.cut_distance,
            "segments": [asdict(s) for s in self.segments],
            "change_points": [
                {"coarse": c.coarse_time, "refined": c.refined_time, "speakers": list(c.speakers),
                 "fallback": c.fallback, "clamped": c.clamped, "distance": round(c.distance, 6)}
                for c in self.change_points
            ],
        }
        return json.dumps(payload, indent=1)


def refine_segments(clip: AudioClip, segments: list, **kw) -> tuple:
    """Refine every interior boundary; refined times are clamped between neighbouring boundaries."""
    if len(segments) < 2:
        return [DiarizationSegment(s.start, s.end, s.speaker) for s in segments], []
    bounds = [segments[0].start] + [s.end for s in segments]
    cps = []
    for i in range(1, len(segments)):
        cps.append(refine_boundary(clip, bounds[i], (segments[i - 1].speaker, segments[i].speaker), **kw))
    new = list(bounds)
    for i, cp in enumerate(cps, start=1):
        t = min(max(cp.refined_time, new[i - 1]), bounds[i + 1])
        if t != cp.refined_time:
            cp.clamped = True
        cp.refined_time = t
        new[i] = t
    out = []
    for i, s in enumerate(segments):
        if new[i + 1] > new[i]:
            out.append(DiarizationSegment(new[i], new[i + 1], s.speaker))
        elif out:
            out[-1].end = new[i + 1]
    # drop zero-length segments and fuse equal neighbours created by clamping
    fused = []
    for s in out:
        if fused and fused[-1].speaker == s.speaker:
            fused[-1].end = s.end
        else:
            fused.append(s)
    return fused, cps


def diarize(clip: AudioClip, model, k: Optional[int] = None, hop: float = 1.0, **cluster_kw) -> DiarizationResult:
    """embed -> cluster -> segments -> chroma refinement of each change point."""
    clip = resample(clip, CANONICAL_RATE)
    if clip.duration < 2.0 - 1e-9:
        raise TooShortError("diarization needs at least 2 s of audio")
    emb = embed_clip(model, clip, hop)
    if len(emb) == 1:
        assign = ClusterAssignment(np.zeros(1, dtype=np.int64), 1)
        dendro = Dendrogram([], 1)
    else:
        if k is not None and not 1 <= k <= len(emb):
            raise ConfigError(f"k={k} outside 1..{len(emb)}")
        assign, dendro = cluster(emb, k=k, **cluster_kw)
    coarse = labels_to_segments(emb.window_times, assign.labels, clip.duration)
    segments, cps = refine_segments(clip, coarse)
    return DiarizationResult(clip.source_id, clip.duration, segments, cps, assign, dendro, emb, coarse)
