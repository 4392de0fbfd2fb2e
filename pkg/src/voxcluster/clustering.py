"""Average-linkage agglomerative clustering on cosine distance, with gap-based cluster count."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embeddings import EmbeddingSet, cosine_distance_matrix
from .errors import ConfigError

log = logging.getLogger(__name__)

K_MAX = 20
# below this largest gap (in cosine distance) the data are treated as one cluster
MIN_GAP = 0.1
# merge distances are floored here before taking ratios (exact duplicates merge at 0)
RATIO_FLOOR = 1e-6

warning_counts = {"zero_vector": 0, "degenerate_gap": 0}


def cosine_distance(u, v) -> float:
    """1 - cos(u, v). A zero vector is at distance 1 from anything (counted in ``warning_counts``)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        warning_counts["zero_vector"] += 1
        return 1.0
    return float(min(2.0, max(0.0, 1.0 - (u @ v) / (nu * nv))))


@dataclass
class Merge:
    a: int
    b: int
    distance: float
    size: int


@dataclass
class Dendrogram:
    merges: list
    n_leaves: int

    @property
    def distances(self) -> np.ndarray:
        return np.array([m.distance for m in self.merges])

    def to_json(self) -> str:
        return json.dumps({"n_leaves": self.n_leaves,
                           "merges": [[m.a, m.b, m.distance, m.size] for m in self.merges]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Dendrogram":
        d = json.loads(text)
        return cls([Merge(int(a), int(b), float(dist), int(s)) for a, b, dist, s in d["merges"]], d["n_leaves"])


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int
    cut_distance: Optional[float] = None
    flags: dict = field(default_factory=dict)


def _as_matrix(data):
    if isinstance(data, EmbeddingSet):
        return data.vectors
    return np.asarray(data, dtype=np.float64)


def agglomerate(data, dist: Optional[np.ndarray] = None) -> Dendrogram:
    """Average linkage via the Lance-Williams update.

    Leaves have ids ``0..N-1`` and the i-th merge creates id ``N + i``.
    Among equal-distance candidates the pair with the smallest
    ``(min id, max id)`` wins. ``dist`` may supply a precomputed
    distance matrix.
    """
    if dist is None:
        x = _as_matrix(data)
        n = len(x)
        if n < 2:
            raise ConfigError("agglomerate needs at least 2 points")
        zero = np.linalg.norm(x, axis=1) == 0
        warning_counts["zero_vector"] += int(zero.sum())
        dist = cosine_distance_matrix(x)
    n = len(dist)
    if n < 2:
        raise ConfigError("agglomerate needs at least 2 points")
    D = np.array(dist, dtype=np.float64)
    np.fill_diagonal(D, np.inf)
    ids = np.arange(n)        # cluster id held by each slot
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    merges = []
    for step in range(n - 1):
        dmin = D.min()
        ii, jj = np.nonzero(D == dmin)
        keep = ii < jj
        ii, jj = ii[keep], jj[keep]
        if len(ii) > 1:
            lo = np.minimum(ids[ii], ids[jj])
            hi = np.maximum(ids[ii], ids[jj])
            pick = np.lexsort((hi, lo))[0]
        else:
            pick = 0
        i, j = int(ii[pick]), int(jj[pick])
        a, b = sorted((int(ids[i]), int(ids[j])))
        ni, nj = sizes[i], sizes[j]
        merges.append(Merge(a, b, float(dmin), int(ni + nj)))
        new = (ni * D[i] + nj * D[j]) / (ni + nj)
        new[~active] = np.inf
        D[i, :] = new
        D[:, i] = new
        D[i, i] = np.inf
        D[j, :] = np.inf
        D[:, j] = np.inf
        active[j] = False
        sizes[i] = ni + nj
        ids[i] = n + step
    return Dendrogram(merges, n)


def estimate_speaker_count(dendrogram: Dendrogram, k_max: int = K_MAX, min_gap: float = MIN_GAP):
    """Number of clusters at the most salient jump between consecutive merge distances.

    Only the last ``min(N-1, k_max)`` merges are searched. Jumps smaller than
    ``min_gap`` (absolute cosine distance) are ignored; among the rest the one
    with the largest ratio ``d[i+1] / d[i]`` wins, so a jump out of tight
    within-speaker merges beats an equally long step between two speaker-level
    merges. If no jump reaches ``min_gap`` the data are one cluster. Returns
    ``(k, cut_distance)``.
    """
    n = dendrogram.n_leaves
    d = np.sort(dendrogram.distances)
    if n < 2 or len(d) == 0:
        raise ConfigError("need at least 2 leaves")
    top = d[-1]
    if len(d) == 1:
        if top < min_gap:
            warning_counts["degenerate_gap"] += 1
            return 1, float(top + 0.5 * min_gap)
        return 2, float(top / 2.0)
    m = min(n - 1, k_max)
    tail = d[-m:]
    gaps = np.diff(tail)
    candidates = gaps >= min_gap
    if not candidates.any() or gaps.max() <= 0:
        warning_counts["degenerate_gap"] += 1
        log.warning("no salient gap in merge distances; reporting a single cluster")
        return 1, float(top + 0.5 * min_gap)
    floored = np.maximum(tail, RATIO_FLOOR)
    ratio = np.log(floored[1:]) - np.log(floored[:-1])
    g = int(np.argmax(np.where(candidates, ratio, -np.inf)))
    # tail[g] is merge number (n-1-m) + g + 1 (1-based); clusters before the next merge:
    i = (n - 1 - m) + g + 1
    k = n - i
    return k, float(0.5 * (tail[g] + tail[g + 1]))


def cut(dendrogram: Dendrogram, k: Optional[int] = None, cut_distance: Optional[float] = None) -> ClusterAssignment:
    """Flat clusters from undoing the last ``k-1`` merges (or every merge above ``cut_distance``).

    Labels are numbered by ascending smallest leaf index.
    """
    n = dendrogram.n_leaves
    if k is None and cut_distance is None:
        raise ConfigError("cut needs k or cut_distance")
    if cut_distance is not None:
        kept = sum(1 for m in dendrogram.merges if m.distance <= cut_distance)
        k_dist = n - kept
        if k is not None and k != k_dist:
            raise ConfigError(f"k={k} disagrees with cut_distance={cut_distance} (gives {k_dist})")
        k = k_dist
    if not 1 <= k <= n:
        raise ConfigError(f"k must lie in 1..{n}")
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step, m in enumerate(dendrogram.merges[: n - k]):
        new = n + step
        parent[find(m.a)] = new
        parent[find(m.b)] = new
    roots = [find(i) for i in range(n)]
    relabel = {}
    labels = np.empty(n, dtype=np.int64)
    for i, r in enumerate(roots):
        if r not in relabel:
            relabel[r] = len(relabel)
        labels[i] = relabel[r]
    return ClusterAssignment(labels, k, cut_distance)


def cluster(data, k: Optional[int] = None, k_max: int = K_MAX, min_gap: float = MIN_GAP):
    """agglomerate -> estimate (unless ``k`` is given) -> cut. Returns (assignment, dendrogram)."""
    dendro = agglomerate(data)
    if k is None:
        k, cut_d = estimate_speaker_count(dendro, k_max, min_gap)
    else:
        # midway between the last kept merge and the first undone one
        d = dendro.distances
        cut_d = float(0.5 * (d[-k] + d[-k + 1])) if 1 < k < dendro.n_leaves else None
    assign = cut(dendro, k=k)
    assign.cut_distance = cut_d
    return assign, dendro
