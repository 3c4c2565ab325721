"""Kernel functions, Gram matrices and the kernel between virtual instances.

RBF uses the decaying form ``exp(-gamma * ||x - y||^2)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform


@dataclass(frozen=True)
class KernelSpec:
    family: str = "rbf"
    gamma: float = 1.0
    degree: int = 2
    coef: float = 1.0

    def __post_init__(self):
        if self.family not in ("rbf", "linear", "poly"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "rbf" and not self.gamma > 0:
            raise ValueError("rbf gamma must be positive")
        if self.family == "poly" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError("polynomial degree must be a positive integer")

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls("rbf", gamma=float(gamma))

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls("linear")

    @classmethod
    def poly(cls, degree: int, coef: float = 1.0) -> "KernelSpec":
        return cls("poly", degree=int(degree), coef=float(coef))

    @classmethod
    def default(cls, dimension: int) -> "KernelSpec":
        return cls.rbf(1.0 / dimension)

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``rbf:gamma=<float>``, ``linear`` or ``poly:degree=<int>,coef=<float>``."""
        m = re.fullmatch(r"\s*(\w+)\s*(?::(.*))?", text)
        if not m:
            raise ValueError(f"bad kernel spec {text!r}")
        family, rest = m.group(1), m.group(2) or ""
        params = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"bad kernel parameter {item!r}")
            params[key.strip()] = value.strip()
        try:
            if family == "rbf":
                if set(params) != {"gamma"}:
                    raise ValueError("rbf takes exactly gamma=<float>")
                return cls.rbf(float(params["gamma"]))
            if family == "linear":
                if params:
                    raise ValueError("linear takes no parameters")
                return cls.linear()
            if family == "poly":
                if not set(params) <= {"degree", "coef"} or "degree" not in params:
                    raise ValueError("poly takes degree=<int>[,coef=<float>]")
                return cls.poly(int(params["degree"]), float(params.get("coef", 1.0)))
        except ValueError as exc:
            raise ValueError(f"bad kernel spec {text!r}: {exc}") from None
        raise ValueError(f"unknown kernel family {family!r}")

    def __str__(self) -> str:
        if self.family == "rbf":
            return f"rbf:gamma={self.gamma!r}"
        if self.family == "poly":
            return f"poly:degree={self.degree},coef={self.coef!r}"
        return "linear"

    def pairwise(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of ``x`` and ``y``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if x.shape[1] != y.shape[1]:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
        if self.family == "rbf":
            return np.exp(-self.gamma * cdist(x, y, "sqeuclidean"))
        dot = x @ y.T
        if self.family == "linear":
            return dot
        return (dot + self.coef) ** self.degree


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(spec.pairwise(x[None, :], y[None, :])[0, 0])


def gram(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Exactly symmetric kernel matrix of the rows of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if spec.family == "rbf":
        if len(x) == 1:
            return np.ones((1, 1))
        k = np.exp(-spec.gamma * squareform(pdist(x, "sqeuclidean")))
        return k
    dot = x @ x.T
    dot = 0.5 * (dot + dot.T)
    if spec.family == "linear":
        return dot
    return (dot + spec.coef) ** spec.degree


def gram_matrix(spec: KernelSpec, dataset) -> np.ndarray:
    """Gram matrix over all instances in flat (bag, instance) order."""
    if dataset.n_instances < 1:
        raise ValueError("empty dataset")
    return gram(spec, dataset.matrix)


def lambda_matrix(weights, n: int) -> np.ndarray:
    """Dense (n, N) matrix whose column i holds bag i's weights in its rows."""
    cols = np.zeros((n, len(weights)))
    start = 0
    for i, w in enumerate(weights):
        cols[start:start + len(w), i] = w
        start += len(w)
    if start != n:
        raise ValueError(f"lambda covers {start} instances, kernel has {n}")
    return cols


def virtual_kernel(K: np.ndarray, weights) -> np.ndarray:
    """Kernel between virtual instances: ``V[i, j] = sum_k sum_r w_ik w_jr K[(i,k), (j,r)]``.

    ``weights`` is a sequence of per-bag weight vectors in flat order (or a
    LambdaSolution).
    """
    weights = getattr(weights, "weights", weights)
    L = lambda_matrix(weights, K.shape[0])
    v = L.T @ K @ L
    return 0.5 * (v + v.T)


def cross_kernel_row(spec: KernelSpec, x, weights, vectors) -> float:
    """``sum_p weights[p] * k(x, vectors[p])``; 0 for an empty expansion."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        return 0.0
    k = spec.pairwise(np.asarray(x, dtype=np.float64).reshape(1, -1), vectors)[0]
    return float(k @ weights)
