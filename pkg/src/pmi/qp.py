"""Quadratic programs over a product of simplices and over a capped simplex.

Both solvers minimise ``0.5 * x' Q x``:

* :func:`solve_block_simplex` -- each block of ``x`` lies on the unit simplex;
  projected gradient with Barzilai-Borwein steps, Armijo backtracking and an
  exact Euclidean projection.
* :func:`solve_box_sum` -- ``0 <= x <= upper`` and ``sum(x) == 1``; SMO pair
  updates on the maximal violating pair.

The brute-force grid searches at the bottom of the module are test oracles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
BOUND_FACTOR = 1e-8
_PSD_CHECK_MAX = 2000
_GRID_BUDGET = 5_000_000


class QPError(ValueError):
    pass


@dataclass(frozen=True)
class BlockSimplexQP:
    Q: np.ndarray
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=np.float64)
        blocks = tuple(np.asarray(b, dtype=np.int64) for b in self.blocks)
        m = Q.shape[0]
        if Q.shape != (m, m):
            raise QPError("Q must be square")
        if not blocks or any(len(b) == 0 for b in blocks):
            raise QPError("blocks must be non-empty")
        cover = np.sort(np.concatenate(blocks))
        if not np.array_equal(cover, np.arange(m)):
            raise QPError("blocks must partition 0..m-1")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-10 * max(1.0, np.abs(Q).max(initial=0))):
            raise QPError("Q is not symmetric")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "blocks", blocks)

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    def uniform(self) -> np.ndarray:
        x = np.empty(self.size)
        for b in self.blocks:
            x[b] = 1.0 / len(b)
        return x


@dataclass(frozen=True)
class BoxSumQP:
    K: np.ndarray
    upper: float

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] == 0:
            raise QPError("K must be square and non-empty")
        if not np.allclose(K, K.T, rtol=0, atol=1e-10 * max(1.0, np.abs(K).max())):
            raise QPError("K is not symmetric")
        if not self.upper > 0:
            raise QPError("upper bound must be positive")
        if K.shape[0] * self.upper < 1 - 1e-12:
            raise QPError(f"infeasible: {K.shape[0]} variables capped at {self.upper} cannot sum to 1")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "upper", float(self.upper))

    @property
    def size(self) -> int:
        return self.K.shape[0]

    @property
    def tol_bound(self) -> float:
        return BOUND_FACTOR * self.upper


@dataclass(frozen=True)
class QPSolution:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float


def objective(Q: np.ndarray, x: np.ndarray) -> float:
    return 0.5 * float(x @ Q @ x)


def _check_psd(Q: np.ndarray) -> None:
    m = Q.shape[0]
    if m > _PSD_CHECK_MAX:
        return
    trace = float(np.trace(Q))
    smallest = float(np.linalg.eigvalsh(Q)[0])
    if smallest < -1e-8 * max(abs(trace), 1e-300) / m and smallest < -1e-12:
        raise QPError(f"Q is not positive semidefinite (smallest eigenvalue {smallest:.3g})")


class _BlockLayout:
    """Scatter/gather between a flat vector and a padded (blocks, width) array."""

    def __init__(self, blocks):
        self.nblocks = len(blocks)
        self.width = max(len(b) for b in blocks)
        self.rows = np.concatenate([np.full(len(b), i) for i, b in enumerate(blocks)])
        self.cols = np.concatenate([np.arange(len(b)) for b in blocks])
        self.flat = np.concatenate(blocks)

    def project(self, y: np.ndarray) -> np.ndarray:
        """Euclidean projection of every block of ``y`` onto the unit simplex."""
        Y = np.full((self.nblocks, self.width), -np.inf)
        Y[self.rows, self.cols] = y[self.flat]
        U = -np.sort(-Y, axis=1)
        valid = np.isfinite(U)
        css = np.cumsum(np.where(valid, U, 0.0), axis=1)
        k = np.arange(1, self.width + 1)
        with np.errstate(invalid="ignore"):
            cond = valid & (U * k > css - 1.0)
        r = self.width - np.argmax(cond[:, ::-1], axis=1)
        theta = (css[np.arange(self.nblocks), r - 1] - 1.0) / r
        out = np.empty_like(y)
        out[self.flat] = np.maximum(y[self.flat] - theta[self.rows], 0.0)
        return out


def _assert_feasible(x: np.ndarray, blocks, upper: float | None = None) -> None:
    if x.min(initial=0.0) < -1e-12:
        raise QPError(f"solver returned a negative weight {x.min():.3g}")
    if upper is not None and x.max() > upper * (1 + 1e-12):
        raise QPError(f"solver returned a weight above the cap {upper}")
    for b in blocks:
        if abs(float(x[b].sum()) - 1.0) > 1e-9:
            raise QPError("solver returned weights that do not sum to 1")


def project_simplex(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return _BlockLayout([np.arange(len(y))]).project(y)


def solve_block_simplex(problem: BlockSimplexQP, tol: float = DEFAULT_TOL,
                        max_iter: int | None = None) -> QPSolution:
    Q = problem.Q
    m = problem.size
    max_iter = 100 * m if max_iter is None else max_iter
    _check_psd(Q)
    layout = _BlockLayout(problem.blocks)
    x = problem.uniform()
    scale = float(np.abs(Q).max(initial=0.0))
    if scale == 0.0:
        _assert_feasible(x, problem.blocks)
        return QPSolution(x, 0.0, 0, True, 0.0)

    def residual(x, g):
        return float(np.abs(x - layout.project(x - g / scale)).max())

    g = Q @ x
    f = 0.5 * float(x @ g)
    step = 1.0 / float(np.abs(Q).sum(axis=1).max())
    res = residual(x, g)
    it = 0
    while res > tol and it < max_iter:
        it += 1
        t = step
        for _ in range(60):
            x_new = layout.project(x - t * g)
            d = x_new - x
            g_new = Q @ x_new
            f_new = 0.5 * float(x_new @ g_new)
            if f_new <= f + 1e-4 * float(g @ d):
                break
            t *= 0.5
        else:
            logger.debug("block simplex: line search stalled at iteration %d", it)
            break
        if f_new > f:
            # rounding-level increase; keep the current point
            break
        s, yv = d, g_new - g
        sy = float(s @ yv)
        step = float(s @ s) / sy if sy > 0 else 1.0 / float(np.abs(Q).sum(axis=1).max())
        x, g, f = x_new, g_new, f_new
        res = residual(x, g)
    converged = res <= tol
    _assert_feasible(x, problem.blocks)
    logger.debug("block simplex: m=%d iterations=%d residual=%.3g", m, it, res)
    return QPSolution(x, f, it, converged, res)


def solve_box_sum(problem: BoxSumQP, tol: float = DEFAULT_TOL,
                  max_iter: int | None = None) -> QPSolution:
    K = problem.K
    M = problem.size
    C = problem.upper
    max_iter = 100 * M if max_iter is None else max_iter
    alpha = np.full(M, 1.0 / M)
    if 1.0 / M > C:
        alpha[:] = C
    scale = float(np.abs(K).max())
    if M == 1 or scale == 0.0:
        return QPSolution(alpha, objective(K, alpha), 0, True, 0.0)
    g = K @ alpha
    it = 0
    violation = np.inf
    while True:
        up = alpha < C
        low = alpha > 0
        if not (up.any() and low.any()):
            violation = 0.0
            break
        i = int(np.argmin(np.where(up, g, np.inf)))
        j = int(np.argmax(np.where(low, g, -np.inf)))
        violation = max(float(g[j] - g[i]) / scale, 0.0)
        if violation <= tol or it >= max_iter:
            break
        it += 1
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        room_i, room_j = C - alpha[i], alpha[j]
        t = (g[j] - g[i]) / eta if eta > 1e-12 * scale else np.inf
        if t >= room_i and room_i <= room_j:
            t = room_i
            alpha[i] = C
            alpha[j] -= t
        elif t >= room_j:
            t = room_j
            alpha[i] += t
            alpha[j] = 0.0
        else:
            alpha[i] += t
            alpha[j] -= t
        g += t * (K[:, i] - K[:, j])
    converged = violation <= tol
    _assert_feasible(alpha, [slice(None)], C)
    logger.debug("box sum: M=%d iterations=%d violation=%.3g", M, it, violation)
    return QPSolution(alpha, objective(K, alpha), it, converged, max(violation, 0.0))


def classify_bounds(alpha: np.ndarray, upper: float, tol_bound: float | None = None) -> np.ndarray:
    """Per-variable category: 0 = at zero, 1 = strictly interior, 2 = at the cap."""
    tol_bound = BOUND_FACTOR * upper if tol_bound is None else tol_bound
    alpha = np.asarray(alpha)
    out = np.ones(len(alpha), dtype=np.int8)
    out[alpha <= tol_bound] = 0
    out[alpha >= upper - tol_bound] = 2
    return out


def recover_rho(K: np.ndarray, alpha: np.ndarray, upper: float,
                tol_bound: float | None = None) -> float:
    """Offset from the interior support vectors, averaged.

    Falls back to all columns with non-negligible weight when no weight is
    strictly inside the box.
    """
    tol_bound = BOUND_FACTOR * upper if tol_bound is None else tol_bound
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.any(alpha > 0):
        raise QPError("all dual weights are zero")
    scores = np.asarray(K) @ alpha
    interior = (alpha > tol_bound) & (alpha < upper - tol_bound)
    if not interior.any():
        interior = alpha > tol_bound
    return float(scores[interior].mean())


# --------------------------------------------------------------------------
# Grid oracles


def _compositions(caps: list[int], total: int) -> np.ndarray:
    """All integer vectors v with 0 <= v[k] <= caps[k] and sum(v) == total."""
    if not caps:
        return np.zeros((1 if total == 0 else 0, 0), dtype=np.int64)
    pts = np.zeros((1, 0), dtype=np.int64)
    sums = np.zeros(1, dtype=np.int64)
    remaining_cap = np.cumsum(caps[::-1])[::-1]
    for k, cap in enumerate(caps[:-1]):
        tail = remaining_cap[k + 1]
        lo = np.maximum(0, total - sums - tail)
        hi = np.minimum(cap, total - sums)
        counts = np.maximum(hi - lo + 1, 0)
        rep = np.repeat(np.arange(len(pts)), counts)
        start = np.repeat(lo, counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        vals = start + offs
        pts = np.hstack([pts[rep], vals[:, None]])
        sums = sums[rep] + vals
    last = total - sums
    ok = (last >= 0) & (last <= caps[-1])
    return np.hstack([pts[ok], last[ok, None]])


def _count_compositions(caps: list[int], total: int) -> int:
    ways = np.zeros(total + 1, dtype=object)
    ways[0] = 1
    for cap in caps:
        nxt = np.zeros(total + 1, dtype=object)
        for s in range(total + 1):
            if ways[s]:
                nxt[s:min(total, s + cap) + 1] += ways[s]
        ways = nxt
    return int(ways[total])


def _grid_units(step: float) -> int:
    if not 0 < step <= 0.5:
        raise ValueError("grid_step must lie in (0, 0.5]")
    units = round(1.0 / step)
    if abs(units * step - 1.0) > 1e-9:
        raise ValueError("grid_step must divide 1 evenly")
    return units


def _grid_search(Q: np.ndarray, groups: list[list[int]], caps: list[list[int]],
                 units: int, step: float) -> tuple[np.ndarray, float]:
    """Best point of the grid {x : x = step * v, v integer, per-group sums == units}.

    The last two coordinates of one group are resolved exactly: for every
    assignment of the rest, the objective restricted to the pair is a convex
    parabola in one integer variable, so the two grid neighbours of its
    continuous minimiser are the only candidates.
    """
    m = Q.shape[0]
    pair_group = max(range(len(groups)), key=lambda g: len(groups[g]))
    grids, counts = [], []
    for gi, (idx, cap) in enumerate(zip(groups, caps)):
        if gi == pair_group and len(idx) >= 2:
            merged = cap[:-2] + [min(cap[-2] + cap[-1], units)]
            counts.append(_count_compositions(merged, units))
        else:
            counts.append(_count_compositions(cap, units))
    total = int(np.prod([float(c) for c in counts]))
    if total > _GRID_BUDGET:
        raise ValueError(f"grid has {total} points; exceeds the oracle budget")
    for gi, (idx, cap) in enumerate(zip(groups, caps)):
        if gi == pair_group and len(idx) >= 2:
            merged = cap[:-2] + [min(cap[-2] + cap[-1], units)]
            grids.append(_compositions(merged, units))
        else:
            grids.append(_compositions(cap, units))
    if any(len(g) == 0 for g in grids):
        raise ValueError("grid is empty; caps too tight for this step")

    # cartesian product of the per-group grids, laid out in variable order
    mesh = np.meshgrid(*[np.arange(len(g)) for g in grids], indexing="ij")
    choice = [c.ravel() for c in mesh]
    P = len(choice[0])
    base = np.zeros((P, m))
    pidx = qidx = None
    for gi, (idx, grid) in enumerate(zip(groups, grids)):
        vals = grid[choice[gi]].astype(np.float64)
        if gi == pair_group and len(idx) >= 2:
            base[:, idx[:-2]] = vals[:, :-1]
            pidx, qidx = idx[-2], idx[-1]
            pair_total = vals[:, -1]
            cap_p, cap_q = caps[gi][-2], caps[gi][-1]
        else:
            base[:, idx] = vals
    if pidx is None:
        x = base * step
        f = 0.5 * np.einsum("pi,ij,pj->p", x, Q, x)
        best = int(np.argmin(f))
        return x[best], float(f[best])

    # x = step * (base + t e_p + (r - t) e_q), t integer in [lo, hi]
    lo = np.maximum(0.0, pair_total - cap_q)
    hi = np.minimum(cap_p, pair_total)
    feasible = lo <= hi
    base[:, qidx] = pair_total
    g = (base * step) @ Q
    slope = (g[:, pidx] - g[:, qidx]) * step
    curv = (Q[pidx, pidx] + Q[qidx, qidx] - 2 * Q[pidx, qidx]) * step * step
    if curv > 0:
        tstar = np.clip(-slope / curv, lo, hi)
    else:
        tstar = np.where(slope > 0, lo, hi)
    f0 = 0.5 * np.einsum("pi,pi->p", base * step, g)
    best_f, best_x = np.inf, None
    for cand in (np.floor(tstar), np.ceil(tstar)):
        t = np.clip(cand, lo, hi)
        f = f0 + slope * t + 0.5 * curv * t * t
        f = np.where(feasible, f, np.inf)
        k = int(np.argmin(f))
        if f[k] < best_f:
            best_f = float(f[k])
            v = base[k].copy()
            v[pidx] += t[k]
            v[qidx] -= t[k]
            best_x = v * step
    return best_x, objective(Q, best_x)


def brute_force_block_simplex(problem: BlockSimplexQP, grid_step: float = 1e-3) -> QPSolution:
    """Best point on the product-of-simplices grid with spacing ``grid_step``."""
    if problem.size > 6:
        raise ValueError("brute force is limited to 6 variables")
    units = _grid_units(grid_step)
    groups = [list(map(int, b)) for b in problem.blocks]
    caps = [[units] * len(b) for b in groups]
    x, f = _grid_search(problem.Q, groups, caps, units, grid_step)
    return QPSolution(x, f, 0, True, 0.0)


def brute_force_box_sum(problem: BoxSumQP, grid_step: float = 1e-3) -> QPSolution:
    """Best point of the capped-simplex grid with spacing ``grid_step``."""
    if problem.size > 6:
        raise ValueError("brute force is limited to 6 variables")
    units = _grid_units(grid_step)
    cap = min(units, int(np.floor(problem.upper / grid_step + 1e-9)))
    M = problem.size
    x, f = _grid_search(problem.K, [list(range(M))], [[cap] * M], units, grid_step)
    return QPSolution(x, f, 0, True, 0.0)


__all__ = [
    "BlockSimplexQP", "BoxSumQP", "QPSolution", "QPError", "solve_block_simplex",
    "solve_box_sum", "recover_rho", "classify_bounds", "project_simplex",
    "brute_force_block_simplex", "brute_force_box_sum", "objective",
]
