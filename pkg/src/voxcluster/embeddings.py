"""Per-window L7 embeddings and 2-D diagnostic projections (PCA, exact t-SNE)."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import CANONICAL_RATE, AudioClip, require_windows, resample
from .errors import ConfigError, DimensionError, FormatError
from .features import snippet_batch

log = logging.getLogger(__name__)


@dataclass
class EmbeddingSet:
    vectors: np.ndarray
    window_times: np.ndarray
    clip_refs: list
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.window_times = np.asarray(self.window_times, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.vectors)
        if len(self.window_times) != n or len(self.clip_refs) != n or (
                self.labels is not None and len(self.labels) != n):
            raise DimensionError("EmbeddingSet fields disagree on row count")

    def __len__(self):
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, idx) -> "EmbeddingSet":
        idx = np.asarray(idx)
        return EmbeddingSet(self.vectors[idx], self.window_times[idx], [self.clip_refs[i] for i in idx],
                            None if self.labels is None else self.labels[idx])

    @classmethod
    def concat(cls, sets) -> "EmbeddingSet":
        sets = list(sets)
        labels = None
        if all(s.labels is not None for s in sets):
            labels = np.concatenate([s.labels for s in sets])
        return cls(np.concatenate([s.vectors for s in sets]), np.concatenate([s.window_times for s in sets]),
                   [r for s in sets for r in s.clip_refs], labels)

    def save(self, path) -> None:
        """Write ``<path>.json`` (times, refs, labels) and ``<path>.f32`` (row-major matrix)."""
        path = Path(path)
        meta = {
            "rows": len(self),
            "dim": int(self.vectors.shape[1]) if self.vectors.ndim == 2 else 0,
            "window_times": [float(t) for t in self.window_times],
            "clip_refs": list(self.clip_refs),
            "labels": None if self.labels is None else [int(v) for v in self.labels],
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
        path.with_suffix(".f32").write_bytes(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingSet":
        path = Path(path)
        try:
            meta = json.loads(path.with_suffix(".json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read embedding sidecar: {exc}") from None
        blob = path.with_suffix(".f32").read_bytes()
        if len(blob) != 4 * meta["rows"] * meta["dim"]:
            raise FormatError("embedding blob size does not match sidecar")
        vectors = np.frombuffer(blob, dtype="<f4").reshape(meta["rows"], meta["dim"]).astype(np.float64)
        return cls(vectors, np.array(meta["window_times"]), meta["clip_refs"], meta["labels"])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["clip", "time", "label"] + [f"e{i}" for i in range(self.dim)])
            for i in range(len(self)):
                label = "" if self.labels is None else int(self.labels[i])
                w.writerow([self.clip_refs[i], f"{self.window_times[i]:.3f}", label]
                           + [f"{v:.6g}" for v in self.vectors[i]])


def embed_clip(model, clip: AudioClip, hop: float = 1.0, label: Optional[int] = None,
               batch_size: int = 64) -> EmbeddingSet:
    """One L7 embedding per 1 s window of ``clip``, in time order."""
    clip = resample(clip, CANONICAL_RATE)
    windows = require_windows(clip, hop)
    x = snippet_batch(clip, windows).astype(model.dtype)
    vecs = np.concatenate([model.embed(x[s:s + batch_size]) for s in range(0, len(x), batch_size)])
    labels = None if label is None else np.full(len(windows), label)
    return EmbeddingSet(vecs, np.array([w.start_time for w in windows]), [clip.source_id] * len(windows), labels)


# ---------------------------------------------------------------------------
# PCA


@dataclass
class Projection2D:
    points: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    labels: Optional[np.ndarray] = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "label"])
            for i, (x, y) in enumerate(self.points):
                label = "" if self.labels is None else int(self.labels[i])
                w.writerow([f"{x:.6f}", f"{y:.6f}", label])


def power_eigs(cov: np.ndarray, k: int, tol: float = 1e-13, max_iter: int = 20000, seed: int = 0):
    """Top-``k`` eigenpairs of a symmetric PSD matrix by power iteration with deflation."""
    n = cov.shape[0]
    rng = np.random.default_rng(seed)
    a = cov.copy()
    vals, vecs = [], []
    for _ in range(k):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = a @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                lam = 0.0
                break
            w /= norm
            lam_new = w @ a @ w
            converged = abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300) and np.linalg.norm(w - v) < 1e-9
            v, lam = w, lam_new
            if converged:
                break
        # re-orthogonalise against found vectors to limit drift
        for u in vecs:
            v -= (u @ v) * u
        v /= np.linalg.norm(v)
        lam = v @ cov @ v
        vals.append(lam)
        vecs.append(v)
        a = a - lam * np.outer(v, v)
    return np.array(vals), np.array(vecs)


def pca_project(data, dims: int = 2):
    """Project onto the top ``dims`` principal components.

    Returns ``(Projection2D, components, explained_variance_ratio)``. Each
    component's largest-magnitude coordinate is made positive.
    """
    x = data.vectors if isinstance(data, EmbeddingSet) else np.asarray(data, dtype=np.float64)
    labels = data.labels if isinstance(data, EmbeddingSet) else None
    n = len(x)
    if n < dims + 1:
        raise ConfigError(f"PCA to {dims} dims needs at least {dims + 1} points")
    xc = x - x.mean(axis=0)
    total = float((xc ** 2).sum())
    if total <= 1e-24 * max(1.0, float((x ** 2).sum())):
        raise ConfigError("degenerate data: all points identical")
    if xc.shape[1] > n:
        # work in the smaller Gram space and map back
        gram = xc @ xc.T / (n - 1)
        vals, u = power_eigs(gram, dims)
        comps = np.array([xc.T @ ui for ui in u])
        comps /= np.linalg.norm(comps, axis=1, keepdims=True)
    else:
        vals, comps = power_eigs(xc.T @ xc / (n - 1), dims)
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    ratio = vals / (total / (n - 1))
    proj = Projection2D(xc @ comps.T, "pca", {"dims": dims, "eigenvalues": vals.tolist()}, labels)
    return proj, comps, ratio


# ---------------------------------------------------------------------------
# t-SNE


def cosine_distance_matrix(x: np.ndarray) -> np.ndarray:
    """Pairwise cosine distances; rows of zeros are at distance 1 from everything."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = x / safe[:, None]
    d = 1.0 - u @ u.T
    zero = norms == 0
    d[zero, :] = 1.0
    d[:, zero] = 1.0
    d = np.clip(0.5 * (d + d.T), 0.0, 2.0)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_affinities(dist: np.ndarray, perplexity: float, tol: float = 1e-10, max_iter: int = 200):
    """Row-stochastic P(j|i) with per-row precision found by bisection on the entropy.

    Affinities are exp(-beta_i * d_ij) on the given (non-squared) distances.
    Returns ``(P, beta)``.
    """
    n = len(dist)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        d = np.delete(dist[i], i)
        d = d - d.min()  # shift for stability; cancels in normalisation
        lo, hi, beta = 0.0, np.inf, 1.0
        for _ in range(max_iter):
            w = np.exp(-beta * d)
            s = w.sum()
            p = w / s
            h = np.log(s) + beta * (d * p).sum()
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        betas[i] = beta
        P[i, np.arange(n) != i] = p
    return P, betas


def joint_affinities(dist: np.ndarray, perplexity: float) -> np.ndarray:
    cond, _ = conditional_affinities(dist, perplexity)
    P = (cond + cond.T) / (2.0 * len(dist))
    return P / P.sum()


@dataclass
class TsneConfig:
    perplexity: Optional[float] = None  # None -> 30 clamped to feasibility
    iters: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    seed: int = 42
    init_std: float = 1e-4


def feasible_perplexity(n: int, requested: Optional[float] = None) -> float:
    limit = (n - 1) / 3.0
    if requested is None:
        return min(30.0, 0.99 * limit)
    if not 0 < requested < limit:
        raise ConfigError(f"perplexity {requested} infeasible for {n} points (must be < {limit:.3f})")
    return float(requested)


def tsne_project(data, config: Optional[TsneConfig] = None, **overrides):
    """Exact t-SNE on cosine distances. Returns ``(Projection2D, kl_history)``.

    The KL history holds KL(P || Q) against the un-exaggerated P at every
    iteration.
    """
    cfg = replace(config or TsneConfig(), **overrides)
    x = data.vectors if isinstance(data, EmbeddingSet) else np.asarray(data, dtype=np.float64)
    labels = data.labels if isinstance(data, EmbeddingSet) else None
    n = len(x)
    if n < 4:
        raise ConfigError("t-SNE needs at least 4 points")
    perp = feasible_perplexity(n, cfg.perplexity)
    P = joint_affinities(cosine_distance_matrix(x), perp)
    P = np.maximum(P, 1e-300)
    rng = np.random.default_rng(cfg.seed)
    Y = cfg.init_std * rng.standard_normal((n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl = []
    for it in range(cfg.iters):
        exag = cfg.exaggeration if it < cfg.exaggeration_iters else 1.0
        mom = cfg.momentum_early if it < cfg.exaggeration_iters else cfg.momentum_late
        sq = (Y ** 2).sum(axis=1)
        num = 1.0 / (1.0 + sq[:, None] + sq[None, :] - 2.0 * Y @ Y.T)
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-300)
        kl.append(float((P * np.log(P / Q))[~np.eye(n, dtype=bool)].sum()))
        W = (exag * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2).clip(min=0.01)
        update = mom * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
    params = {"perplexity": perp, "iters": cfg.iters, "exaggeration": cfg.exaggeration,
              "exaggeration_iters": cfg.exaggeration_iters, "learning_rate": cfg.learning_rate, "seed": cfg.seed}
    return Projection2D(Y, "tsne", params, labels), kl
