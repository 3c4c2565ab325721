"""Cross-validation, accuracy and theorem-check reports."""

from __future__ import annotations

import io
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import core
from .core import GroundTruthOracle, PmiModel, Tolerances, THEOREM_CONSISTENT
from .data import Dataset, Label, format_float, scale_features, split_folds
from .kernels import KernelSpec, gram_matrix


@dataclass(frozen=True)
class RunConfig:
    kernel: KernelSpec | None = None
    nu: float = 0.1
    k_folds: int = 10
    seed: int = 0
    scale: bool = False
    oracle_mode: str = "none"
    tol: Tolerances = field(default_factory=Tolerances)
    variant: str = THEOREM_CONSISTENT
    gamma_grid: tuple[float, ...] = ()
    nu_grid: tuple[float, ...] = ()
    inner_folds: int = 3

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        if self.oracle_mode not in ("none", "ground_truth"):
            raise ValueError(f"oracle mode {self.oracle_mode!r} is not usable in batch evaluation")
        if any(not 0 < v <= 1 for v in self.nu_grid):
            raise ValueError("nu grid values must lie in (0, 1]")

    def kernel_for(self, dimension: int) -> KernelSpec:
        return self.kernel if self.kernel is not None else KernelSpec.default(dimension)


def accuracy(model, test: Dataset) -> float:
    """Fraction of bags whose predicted label matches the recorded one."""
    if test.n_bags == 0:
        raise ValueError("empty test set")
    hits = 0
    for bag, (pred, _, _) in zip(test.bags, core.classify_bags(model, test)):
        if bag.label == Label.UNKNOWN:
            raise ValueError(f"test bag {bag.bag_id!r} has no label")
        hits += pred == int(bag.label)
    return hits / test.n_bags


def fit(train: Dataset, config: RunConfig, kernel: KernelSpec | None = None,
        nu: float | None = None) -> PmiModel:
    """Scale (optionally) and fit on ``train``; the scaling is stored on the model."""
    params = None
    if config.scale:
        train, params = scale_features(train)
    oracle = GroundTruthOracle(train) if config.oracle_mode == "ground_truth" else None
    model = core.fit_pmi(train, kernel or config.kernel_for(train.dimension),
                         config.nu if nu is None else nu, oracle, config.tol, config.variant)
    return replace(model, scale=params)


def evaluate(model: PmiModel, test: Dataset) -> float:
    if model.scale is not None:
        test = model.scale.apply(test)
    return accuracy(model, test)


def grid_search(dataset: Dataset, config: RunConfig) -> tuple[KernelSpec, float]:
    """Pick (gamma, nu) by inner cross-validation on ``dataset``.

    Inner folds train on positive bags and score on mixed held-out bags, like
    the outer loop. Ties keep the earliest grid entry.
    """
    gammas = config.gamma_grid or (config.kernel_for(dataset.dimension).gamma,)
    nus = config.nu_grid or (config.nu,)
    splits = split_folds(dataset, config.inner_folds, config.seed)
    best, best_acc = None, -1.0
    for g in gammas:
        for nu in nus:
            kernel = KernelSpec.rbf(g)
            accs = [evaluate(fit(dataset.subset(tr), config, kernel, nu), dataset.subset(te))
                    for tr, te in splits]
            acc = float(np.mean(accs))
            if acc > best_acc:
                best, best_acc = (kernel, nu), acc
    return best


@dataclass(frozen=True)
class FoldResult:
    repetition: int
    fold: int
    n_train: int
    n_test: int
    accuracy: float
    queries: int
    termination: str
    kernel: str
    nu: float
    seconds: float = 0.0


@dataclass(frozen=True)
class EvalReport:
    folds: tuple[FoldResult, ...]
    repetitions: int
    k_folds: int
    seed: int

    @property
    def accuracies(self) -> list[float]:
        return [f.accuracy for f in self.folds]

    @property
    def mean_accuracy(self) -> float:
        return statistics.fmean(self.accuracies)

    @property
    def repetition_means(self) -> list[float]:
        return [
            statistics.fmean(f.accuracy for f in self.folds if f.repetition == r)
            for r in range(self.repetitions)
        ]

    @property
    def sd_accuracy(self) -> float:
        """Standard deviation of the per-repetition mean accuracies."""
        means = self.repetition_means
        return statistics.stdev(means) if len(means) > 1 else 0.0

    @property
    def fold_sd_accuracy(self) -> float:
        acc = self.accuracies
        return statistics.stdev(acc) if len(acc) > 1 else 0.0

    def to_kv(self) -> str:
        out = io.StringIO()
        out.write(f"mean_accuracy={format_float(self.mean_accuracy)}\n")
        out.write(f"sd_accuracy={format_float(self.sd_accuracy)}\n")
        out.write(f"fold_sd_accuracy={format_float(self.fold_sd_accuracy)}\n")
        out.write(f"repetitions={self.repetitions}\n")
        out.write(f"k_folds={self.k_folds}\n")
        out.write(f"seed={self.seed}\n")
        out.write(f"total_queries={sum(f.queries for f in self.folds)}\n")
        out.write("[folds]\n")
        out.write("repetition,fold,n_train,n_test,accuracy,queries,termination,kernel,nu\n")
        for f in self.folds:
            out.write(f"{f.repetition},{f.fold},{f.n_train},{f.n_test},{format_float(f.accuracy)},"
                      f"{f.queries},{f.termination},{f.kernel},{format_float(f.nu)}\n")
        return out.getvalue()

    def to_text(self) -> str:
        lines = [
            f"{self.k_folds}-fold cross validation, {self.repetitions} repetition(s), seed {self.seed}",
            f"accuracy: {100 * self.mean_accuracy:.1f} +- {100 * self.sd_accuracy:.1f} "
            f"(fold sd {100 * self.fold_sd_accuracy:.1f})",
            "",
            f"{'rep':>3} {'fold':>4} {'train':>5} {'test':>4} {'acc':>6} {'queries':>7} {'sec':>7}  termination",
        ]
        for f in self.folds:
            lines.append(f"{f.repetition:>3} {f.fold:>4} {f.n_train:>5} {f.n_test:>4} "
                         f"{f.accuracy:>6.3f} {f.queries:>7} {f.seconds:>7.3f}  {f.termination}")
        return "\n".join(lines) + "\n"


def cross_validate(dataset: Dataset, config: RunConfig, repetitions: int = 1) -> EvalReport:
    """Repeated stratified k-fold CV training on positive bags only.

    Repetition ``r`` splits with seed ``config.seed + r``. Scaling parameters
    and (when grids are given) the (gamma, nu) choice come from training folds
    only.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    results = []
    for rep in range(repetitions):
        for fold, (train_ids, test_ids) in enumerate(
                split_folds(dataset, config.k_folds, config.seed + rep)):
            start = time.perf_counter()
            train = dataset.subset(train_ids)
            test = dataset.subset(test_ids)
            kernel, nu = config.kernel_for(dataset.dimension), config.nu
            if config.gamma_grid or config.nu_grid:
                held = set(test_ids)
                outer_train = dataset.subset(i for i in dataset.bag_ids if i not in held)
                kernel, nu = grid_search(outer_train, config)
            model = fit(train, config, kernel, nu)
            acc = evaluate(model, test)
            results.append(FoldResult(
                rep, fold, train.n_bags, test.n_bags, acc, len(model.queries),
                model.termination_reason.value, str(model.model.kernel), nu,
                time.perf_counter() - start,
            ))
    return EvalReport(tuple(results), repetitions, config.k_folds, config.seed)


# --------------------------------------------------------------------------
# theorem checks


@dataclass(frozen=True)
class TheoremRow:
    nu: float
    gamma: float
    queries: int
    query_bound: int
    termination: str
    final_outlier_fraction: float
    retrain_outlier_fraction: float

    @property
    def query_ok(self) -> bool:
        return self.queries <= self.query_bound

    @property
    def outlier_ok(self) -> bool:
        return self.retrain_outlier_fraction <= self.nu


@dataclass(frozen=True)
class TheoremReport:
    rows: tuple[TheoremRow, ...]

    @property
    def all_ok(self) -> bool:
        return all(r.query_ok and r.outlier_ok for r in self.rows)

    def to_kv(self) -> str:
        out = io.StringIO()
        out.write(f"runs={len(self.rows)}\n")
        out.write(f"query_bound_ok={sum(r.query_ok for r in self.rows)}\n")
        out.write(f"outlier_bound_ok={sum(r.outlier_ok for r in self.rows)}\n")
        out.write(f"all_ok={int(self.all_ok)}\n")
        out.write("[runs]\n")
        out.write("nu,gamma,queries,query_bound,query_ok,termination,"
                  "final_outlier_fraction,retrain_outlier_fraction,outlier_ok\n")
        for r in self.rows:
            out.write(f"{format_float(r.nu)},{format_float(r.gamma)},{r.queries},{r.query_bound},"
                      f"{int(r.query_ok)},{r.termination},{format_float(r.final_outlier_fraction)},"
                      f"{format_float(r.retrain_outlier_fraction)},{int(r.outlier_ok)}\n")
        return out.getvalue()

    def query_table(self) -> str:
        """Query counts laid out with nu down the rows and gamma across."""
        nus = sorted({r.nu for r in self.rows})
        gammas = sorted({r.gamma for r in self.rows})
        cell = {(r.nu, r.gamma): r.queries for r in self.rows}
        lines = ["nu\\gamma " + " ".join(f"{g:>6g}" for g in gammas)]
        for nu in nus:
            lines.append(f"{nu:<8g} " + " ".join(f"{cell.get((nu, g), '-'):>6}" for g in gammas))
        return "\n".join(lines) + "\n"


def check_theorems(grid: Sequence[tuple[float, float]], dataset: Dataset,
                   tol: Tolerances = Tolerances(), variant: str = THEOREM_CONSISTENT,
                   oracle=None) -> TheoremReport:
    """Run the full loop with a ground-truth oracle for every (nu, gamma) cell.

    Records the query count against its bound and the outlier-bag fraction
    of a model refit with representatives on the full training set.
    """
    oracle = GroundTruthOracle(dataset) if oracle is None else oracle
    rows = []
    for nu, gamma in grid:
        kernel = KernelSpec.rbf(gamma)
        model = core.fit_pmi(dataset, kernel, nu, oracle, tol, variant)
        K = gram_matrix(kernel, dataset)
        lam = core.fit_lambda(dataset, kernel, tol, K=K)
        first = core.train_once(dataset, lam, kernel, nu, tol, K=K)
        reps = core.select_representatives(first, dataset)
        refit = core.retrain(dataset, lam, reps, kernel, nu, tol, variant, K=K)
        rows.append(TheoremRow(
            nu, gamma, len(model.queries), model.query_bound, model.termination_reason.value,
            core.outlier_bag_fraction(model), core.outlier_bag_fraction(refit, dataset),
        ))
    return TheoremReport(tuple(rows))
