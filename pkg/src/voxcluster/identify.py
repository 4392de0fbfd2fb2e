"""One-vs-one linear SVMs on embeddings (Pegasos-style subgradient training)."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from . import kernels
from .binfmt import read_container, write_container
from .errors import ConfigError, DimensionError, FormatError

SVM_MAGIC = b"VOXSVM01"


@dataclass
class LinearSvmPair:
    weights: np.ndarray
    bias: float
    class_pair: tuple
    C: float

    def decision(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict(self, x) -> np.ndarray:
        """Class ``i`` where the score is >= 0 (ties go to the lower id), else ``j``."""
        i, j = self.class_pair
        return np.where(self.decision(x) >= 0, i, j)


def train_svm_pair(X, y, C: float = 1.0, epochs: int = 50, seed: int = 42,
                   class_pair: tuple = (0, 1)) -> LinearSvmPair:
    """Minimise 0.5*|w|^2 + C * sum(hinge) with per-sample subgradient steps 1/(lambda*t).

    ``y`` holds +1 / -1 labels (+1 is ``class_pair[0]``). The bias is learnt
    as the weight of a constant feature, so it is lightly regularised.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionError("X must be (n, d) with one label per row")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ConfigError("both classes must be present")
    if C < 0:
        raise ConfigError("C must be >= 0")
    n, d = X.shape
    if C == 0:
        return LinearSvmPair(np.zeros(d), 0.0, tuple(class_pair), C)
    Xa = np.hstack([X, np.ones((n, 1))])
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
    w = kernels.pegasos(Xa, y, lam, order, np.zeros(d + 1))
    return LinearSvmPair(w[:d].copy(), float(w[d]), tuple(class_pair), C)


@dataclass
class SvmEnsemble:
    pairs: list
    num_classes: int
    dim: int

    def votes(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DimensionError(f"embedding dim {x.shape[1]} != ensemble dim {self.dim}")
        counts = np.zeros((len(x), self.num_classes), dtype=np.int64)
        rows = np.arange(len(x))
        for p in self.pairs:
            counts[rows, p.predict(x)] += 1
        return counts

    def predict(self, x) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest class id among ties
        return self.votes(x).argmax(axis=1)

    def save(self, path) -> None:
        header = {"kind": "svm_ovo", "num_classes": self.num_classes, "dim": self.dim,
                  "pairs": [{"classes": list(p.class_pair), "bias": p.bias, "C": p.C} for p in self.pairs]}
        write_container(path, SVM_MAGIC, header, [(f"w{p.class_pair[0]}_{p.class_pair[1]}", p.weights)
                                                  for p in self.pairs])

    @classmethod
    def load(cls, path) -> "SvmEnsemble":
        header, arrays = read_container(path, SVM_MAGIC)
        try:
            pairs = []
            for meta, t in zip(header["pairs"], header["tensors"]):
                w = arrays[t["name"]].astype(np.float64)
                if w.shape != (header["dim"],):
                    raise FormatError(f"{path}: pair weights have shape {w.shape}")
                pairs.append(LinearSvmPair(w, float(meta["bias"]), tuple(meta["classes"]), float(meta["C"])))
            k = int(header["num_classes"])
        except KeyError as exc:
            raise FormatError(f"{path}: missing field {exc}") from None
        if len(pairs) != k * (k - 1) // 2:
            raise FormatError(f"{path}: {len(pairs)} pairs for {k} classes")
        return cls(pairs, k, int(header["dim"]))


def train_ensemble(X, labels, C: float = 1.0, epochs: int = 50, seed: int = 42) -> SvmEnsemble:
    """One binary SVM per unordered class pair, each fitted on just those two classes' rows."""
    if hasattr(X, "vectors"):
        if labels is None:
            labels = X.labels
        X = X.vectors
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    k = len(classes)
    if k < 2:
        raise ConfigError("need at least two classes")
    if not np.array_equal(classes, np.arange(k)):
        raise ConfigError("class labels must be 0..K-1")
    pairs = []
    for n, (i, j) in enumerate(combinations(range(k), 2)):
        rows = (labels == i) | (labels == j)
        y = np.where(labels[rows] == i, 1.0, -1.0)
        pairs.append(train_svm_pair(X[rows], y, C, epochs, seed + n, (i, j)))
    return SvmEnsemble(pairs, k, X.shape[1])


def identify(ensemble: SvmEnsemble, embedding) -> tuple:
    """``(class id, vote counts)`` for a single embedding."""
    votes = ensemble.votes(embedding)[0]
    return int(votes.argmax()), votes
