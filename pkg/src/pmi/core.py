"""Positive-bag multiple-instance learning.

Each training bag is collapsed to a virtual instance, a convex combination
of its members whose weights minimise the spread of the virtual instances
in kernel feature space. A one-class SVM is fit on the virtual instances.
When that model rejects every real member of a bag it accepted virtually,
the model is refit on the virtual instances together with each bag's
best-scoring member. With a label oracle, the highest-scoring instance is
queried; a negative answer removes everything the model accepted and the
loop starts over.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, NamedTuple, Protocol, Sequence

import numpy as np

from .data import Bag, Dataset, Label, ScaleParams
from .kernels import KernelSpec, gram_matrix, lambda_matrix
from .qp import (
    BOUND_FACTOR,
    DEFAULT_TOL,
    BlockSimplexQP,
    BoxSumQP,
    QPSolution,
    classify_bounds,
    recover_rho,
    solve_block_simplex,
    solve_box_sum,
)

logger = logging.getLogger(__name__)

THEOREM_CONSISTENT = "theorem_consistent"
LITERAL_EQ16 = "literal_eq16"


class SolverError(RuntimeError):
    pass


class Role(str, Enum):
    SUPPORT = "support"
    OUTLIER = "outlier"
    INTERIOR = "interior"


class Termination(str, Enum):
    NO_ORACLE = "no_oracle"
    ALL_POSITIVE_BAG = "all_instances_positive_bag"
    POSITIVE_QUERY = "positive_query"
    EMPTY_BAG = "empty_bag"
    NO_QUERYABLE = "no_queryable_instance"


@dataclass(frozen=True)
class Tolerances:
    qp_tol: float = DEFAULT_TOL
    max_iter: int | None = None


@dataclass(frozen=True, eq=False)
class LambdaSolution:
    """Per-bag convex weights defining the virtual instances."""

    weights: tuple[np.ndarray, ...]
    solution: QPSolution | None = None

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.weights)

    def virtual_instances(self, dataset: Dataset) -> np.ndarray:
        """Explicit input-space combinations; meaningful as feature-space
        points only for the linear kernel."""
        return np.vstack([w @ b.instances for w, b in zip(self.weights, dataset.bags)])


@dataclass(frozen=True, eq=False)
class OneClassModel:
    """A trained one-class decision function ``l(x) = sum_p w_p k(x, v_p) - rho``.

    ``weights``/``vectors`` is the flattened expansion; ``alpha`` are the dual
    weights of the training points (N virtual instances, followed by N
    representatives after a refit). A point is accepted when
    ``l(x) >= -margin``; ``margin`` is the dual solver's KKT accuracy, so every
    training point the solution places inside or on the boundary is accepted.
    """

    kernel: KernelSpec
    alpha: np.ndarray
    rho: float
    upper: float
    weights: np.ndarray
    vectors: np.ndarray
    bag_roles: tuple[Role, ...]
    point_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    retrained: bool = False
    solution: QPSolution | None = None
    margin: float = 0.0

    @property
    def tol_bound(self) -> float:
        return BOUND_FACTOR * self.upper

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.vectors.shape[1]:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {self.vectors.shape[1]}")
        if len(x) == 0:
            return np.empty(0)
        return self.kernel.pairwise(x, self.vectors) @ self.weights - self.rho

    def accepts(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) >= -self.margin


class QueryEntry(NamedTuple):
    iteration: int
    bag_index: int
    instance_index: int
    value: float
    answer: Label


class PassInfo(NamedTuple):
    iteration: int
    n_instances: int
    retrained: bool
    removed: int
    lambda_iterations: int
    alpha_iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class PmiModel:
    model: OneClassModel
    nu: float
    termination_reason: Termination
    queries: tuple[QueryEntry, ...] = ()
    lambdas: tuple[LambdaSolution, ...] = ()
    passes: tuple[PassInfo, ...] = ()
    query_bound: int = 0
    scale: ScaleParams | None = None

    @property
    def converged(self) -> bool:
        return all(p.converged for p in self.passes)

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        return self.model.decision_values(x)

    def accepts(self, values: np.ndarray) -> np.ndarray:
        return self.model.accepts(values)


class LabelOracle(Protocol):
    available: bool

    def query(self, bag_index: int, instance_index: int) -> Label: ...


class GroundTruthOracle:
    """Answers from the instance labels recorded in a dataset."""

    available = True

    def __init__(self, dataset: Dataset):
        self.dataset = dataset

    def query(self, bag_index: int, instance_index: int) -> Label:
        label = self.dataset.bags[bag_index].instance_labels[instance_index]
        if label == Label.UNKNOWN:
            bag = self.dataset.bags[bag_index]
            raise ValueError(f"no ground-truth label for {bag.bag_id}/{instance_index}")
        return label


class CallbackOracle:
    available = True

    def __init__(self, fn: Callable[[int, int], Label]):
        self.fn = fn

    def query(self, bag_index: int, instance_index: int) -> Label:
        return Label(self.fn(bag_index, instance_index))


# --------------------------------------------------------------------------
# lambda


def build_lambda_Q(K: np.ndarray, blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Quadratic form of the virtual-instance spread.

    ``sum_i ||b_i - m||^2 = lam' (blockdiag(K) - K / N) lam`` with ``m`` the
    mean virtual instance.
    """
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    covered = sum(len(b) for b in blocks)
    if covered != n:
        raise ValueError(f"partition covers {covered} instances, K is {n}x{n}")
    Q = -K / len(blocks)
    for b in blocks:
        Q[np.ix_(b, b)] += K[np.ix_(b, b)]
    return 0.5 * (Q + Q.T)


def fit_lambda(dataset: Dataset, kernel: KernelSpec, tol: Tolerances = Tolerances(),
               K: np.ndarray | None = None) -> LambdaSolution:
    if dataset.n_bags == 0:
        raise ValueError("empty dataset")
    K = gram_matrix(kernel, dataset) if K is None else K
    blocks = dataset.blocks
    sol = solve_block_simplex(BlockSimplexQP(build_lambda_Q(K, blocks), tuple(blocks)),
                              tol.qp_tol, tol.max_iter)
    x = sol.x
    return LambdaSolution(tuple(x[b].copy() for b in blocks), sol)


def variance_objective(K: np.ndarray, blocks, weights) -> float:
    lam = np.concatenate(weights)
    return float(lam @ build_lambda_Q(K, blocks) @ lam)


# --------------------------------------------------------------------------
# one-class training


def _roles(alpha: np.ndarray, upper: float) -> tuple[Role, ...]:
    cats = classify_bounds(alpha, upper)
    names = (Role.INTERIOR, Role.SUPPORT, Role.OUTLIER)
    return tuple(names[c] for c in cats)


def _fit(train_K: np.ndarray, upper: float, tol: Tolerances) -> tuple[QPSolution, float, float]:
    sol = solve_box_sum(BoxSumQP(train_K, upper), tol.qp_tol, tol.max_iter)
    margin = tol.qp_tol * float(np.abs(train_K).max())
    return sol, recover_rho(train_K, sol.x, upper), margin


def _expansion(dataset: Dataset, coeff: np.ndarray, extra_w=None, extra_x=None):
    w = coeff
    x = dataset.matrix
    if extra_w is not None:
        w = np.concatenate([w, extra_w])
        x = np.vstack([x, extra_x])
    keep = w != 0.0
    return w[keep].copy(), x[keep].copy()


def train_once(dataset: Dataset, lam: LambdaSolution, kernel: KernelSpec, nu: float,
               tol: Tolerances = Tolerances(), K: np.ndarray | None = None) -> OneClassModel:
    """One-class SVM over the virtual instances, box bound ``1 / (nu N)``."""
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    K = gram_matrix(kernel, dataset) if K is None else K
    N = dataset.n_bags
    L = lambda_matrix(lam.weights, K.shape[0])
    KL = K @ L
    V = L.T @ KL
    V = 0.5 * (V + V.T)
    upper = 1.0 / (nu * N)
    sol, rho, margin = _fit(V, upper, tol)
    alpha = sol.x
    w, x = _expansion(dataset, L @ alpha)
    return OneClassModel(
        kernel=kernel, alpha=alpha, rho=rho, upper=upper, weights=w, vectors=x,
        bag_roles=_roles(alpha, upper), point_values=V @ alpha - rho,
        retrained=False, solution=sol, margin=margin,
    )


def retrain(dataset: Dataset, lam: LambdaSolution, representatives: Sequence[int],
            kernel: KernelSpec, nu: float, tol: Tolerances = Tolerances(),
            variant: str = THEOREM_CONSISTENT, K: np.ndarray | None = None) -> OneClassModel:
    """One-class SVM over the N virtual instances plus one representative per bag.

    The box bound is ``1 / (nu N)`` over the 2N points, which caps the number
    of bound representatives at ``nu N``. ``variant="literal_eq16"`` uses
    ``1 / (2 nu N)`` instead.
    """
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    K = gram_matrix(kernel, dataset) if K is None else K
    N = dataset.n_bags
    if len(representatives) != N:
        raise ValueError("need one representative per bag")
    rep = dataset.offsets[:-1] + np.asarray(representatives, dtype=np.int64)
    L = lambda_matrix(lam.weights, K.shape[0])
    KL = K @ L
    VV = L.T @ KL
    VR = KL[rep].T
    RR = K[np.ix_(rep, rep)]
    T = np.block([[VV, VR], [VR.T, RR]])
    T = 0.5 * (T + T.T)
    if variant == THEOREM_CONSISTENT:
        upper = 1.0 / (nu * N)
    elif variant == LITERAL_EQ16:
        upper = 1.0 / (2 * nu * N)
    else:
        raise ValueError(f"unknown retrain variant {variant!r}")
    sol, rho, margin = _fit(T, upper, tol)
    alpha = sol.x
    w, x = _expansion(dataset, L @ alpha[:N], alpha[N:], dataset.matrix[rep])
    return OneClassModel(
        kernel=kernel, alpha=alpha, rho=rho, upper=upper, weights=w, vectors=x,
        bag_roles=_roles(alpha[N:], upper), point_values=T @ alpha - rho,
        retrained=True, solution=sol, margin=margin,
    )


# --------------------------------------------------------------------------
# prediction


def decision_value(model: OneClassModel | PmiModel, x) -> float:
    return float(model.decision_values(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def instance_values(model: OneClassModel | PmiModel, dataset: Dataset) -> list[np.ndarray]:
    flat = model.decision_values(dataset.matrix)
    o = dataset.offsets
    return [flat[o[i]:o[i + 1]] for i in range(dataset.n_bags)]


def classify_bag(model: OneClassModel | PmiModel, bag: Bag) -> tuple[int, int, float]:
    """``(+1 or -1, index of the best instance, its decision value)``."""
    values = model.decision_values(bag.instances)
    r = int(np.argmax(values))
    best = float(values[r])
    return (1 if model.accepts(best) else -1), r, best


def classify_bags(model, dataset: Dataset) -> list[tuple[int, int, float]]:
    out = []
    for values in instance_values(model, dataset):
        r = int(np.argmax(values))
        out.append((1 if model.accepts(values[r]) else -1, r, float(values[r])))
    return out


def needs_retrain(model: OneClassModel, dataset: Dataset) -> bool:
    """True when some bag whose virtual instance is off the cap has no accepted member."""
    alpha = model.alpha[:dataset.n_bags]
    inside = alpha < model.upper - model.tol_bound
    for i, values in enumerate(instance_values(model, dataset)):
        if inside[i] and not model.accepts(values.max()):
            return True
    return False


def select_representatives(model: OneClassModel, dataset: Dataset) -> list[int]:
    return [int(np.argmax(v)) for v in instance_values(model, dataset)]


def select_query(model: OneClassModel, dataset: Dataset) -> tuple[int, int, float] | None:
    """Highest-scoring instance among the accepted ones."""
    flat = model.decision_values(dataset.matrix)
    if flat.size == 0 or not model.accepts(flat.max()):
        return None
    p = int(np.argmax(flat))
    i = int(np.searchsorted(dataset.offsets, p, side="right") - 1)
    return i, p - int(dataset.offsets[i]), float(flat[p])


def _accepted(model, dataset: Dataset) -> list[np.ndarray]:
    return [model.accepts(v) for v in instance_values(model, dataset)]


def remove_positive_labeled(dataset: Dataset, model) -> tuple[Dataset, int, bool]:
    """Drop every instance the model accepts.

    Returns the reduced dataset (bags emptied by the removal are dropped),
    the number of removed instances and whether any bag was emptied.
    """
    masks = _accepted(model, dataset)
    removed = int(sum(m.sum() for m in masks))
    empty = any(m.all() for m in masks)
    bags = tuple(b.take(~m) for b, m in zip(dataset.bags, masks) if not m.all())
    return Dataset(bags, dataset.dimension), removed, empty


# --------------------------------------------------------------------------
# theory


def max_query_bound(dataset: Dataset, nu: float) -> int:
    """Largest number of label queries the loop can issue.

    ``min_i N_i - 1`` when ``nu < 1/N``, else ``ceil(n / ((1 - nu) N)) - 1``.
    At ``nu == 1`` the second form is unbounded and ``n - N + 1`` is returned:
    every negative answer removes at least the queried instance.
    """
    N = dataset.n_bags
    if N == 0:
        raise ValueError("empty dataset")
    n = dataset.n_instances
    nu_q = Fraction(repr(float(nu)))
    if nu_q * N < 1:
        return min(dataset.bag_sizes) - 1
    if nu_q == 1:
        return n - N + 1
    return math.ceil(Fraction(n) / ((1 - nu_q) * N)) - 1


def outlier_bag_fraction(model: OneClassModel | PmiModel, dataset: Dataset | None = None) -> float:
    model = getattr(model, "model", model)
    if dataset is not None and dataset.n_bags != len(model.bag_roles):
        raise ValueError("model and dataset disagree on the number of bags")
    return sum(r == Role.OUTLIER for r in model.bag_roles) / len(model.bag_roles)


def premise_holds(model: OneClassModel, dataset: Dataset) -> bool:
    """Whether every bag's label equals the sign at its virtual instance."""
    virtual = model.point_values[:dataset.n_bags]
    for (label, _, _), v in zip(classify_bags(model, dataset), virtual):
        if label != (1 if model.accepts(v) else -1):
            return False
    return True


# --------------------------------------------------------------------------
# the loop


def fit_pmi(dataset: Dataset, kernel: KernelSpec, nu: float,
            oracle: LabelOracle | None = None, tol: Tolerances = Tolerances(),
            variant: str = THEOREM_CONSISTENT) -> PmiModel:
    """Train, optionally query, remove and retrain until a stopping rule fires.

    Query log indices refer to bags and instances of the input ``dataset``.
    """
    if dataset.n_bags == 0:
        raise ValueError("empty dataset")
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    bound = max_query_bound(dataset, nu)
    current = dataset
    bag_origin = list(range(dataset.n_bags))
    inst_origin = [np.arange(len(b)) for b in dataset.bags]
    lambdas, queries, passes = [], [], []
    iteration = 0
    while True:
        iteration += 1
        try:
            K = gram_matrix(kernel, current)
            lam = fit_lambda(current, kernel, tol, K=K)
            model = train_once(current, lam, kernel, nu, tol, K=K)
            retrained = False
            if needs_retrain(model, current):
                reps = select_representatives(model, current)
                model = retrain(current, lam, reps, kernel, nu, tol, variant, K=K)
                retrained = True
        except ValueError as exc:
            raise SolverError(f"iteration {iteration}: {exc}") from exc
        lambdas.append(lam)
        info = PassInfo(iteration, current.n_instances, retrained, 0,
                        lam.solution.iterations, model.solution.iterations,
                        lam.solution.converged and model.solution.converged)
        logger.info("pass %d: n=%d retrained=%s lambda_iter=%d alpha_iter=%d converged=%s",
                    iteration, current.n_instances, retrained, info.lambda_iterations,
                    info.alpha_iterations, info.converged)

        def done(reason, info=info):
            passes.append(info)
            return PmiModel(model, nu, reason, tuple(queries), tuple(lambdas),
                            tuple(passes), bound)

        if oracle is None or not oracle.available:
            return done(Termination.NO_ORACLE)
        masks = _accepted(model, current)
        if any(m.all() for m in masks):
            return done(Termination.ALL_POSITIVE_BAG)
        pick = select_query(model, current)
        if pick is None:
            return done(Termination.NO_QUERYABLE)
        i, j, value = pick
        ob, oi = bag_origin[i], int(inst_origin[i][j])
        answer = Label(oracle.query(ob, oi))
        queries.append(QueryEntry(iteration, ob, oi, value, answer))
        logger.info("query %d: bag %d instance %d l=%.6g -> %s", len(queries), ob, oi,
                    value, answer.token)
        if answer == Label.POSITIVE:
            return done(Termination.POSITIVE_QUERY)
        reduced, removed, empty = remove_positive_labeled(current, model)
        info = info._replace(removed=removed)
        if empty:
            return done(Termination.EMPTY_BAG, info)
        passes.append(info)
        keep = [k for k, m in enumerate(masks) if not m.all()]
        bag_origin = [bag_origin[k] for k in keep]
        inst_origin = [inst_origin[k][~masks[k]] for k in keep]
        current = reduced
