import statistics

import numpy as np
import pytest

from conftest import compact_positives
from pmi import core, evaluation
from pmi.core import OneClassModel, Role
from pmi.data import Bag, Dataset, Label, SynthConfig, synth_generate
from pmi.evaluation import (
    RunConfig,
    accuracy,
    check_theorems,
    cross_validate,
    evaluate,
    fit,
    grid_search,
)
from pmi.kernels import KernelSpec


def separable(seed=0, n_pos=10, n_neg=10):
    """Positives near the origin corner, negatives far away, huge margin."""
    rng = np.random.default_rng(seed)
    bags = []
    for i in range(n_pos):
        x = np.vstack([0.1 + 0.01 * rng.standard_normal((1, 2)), 5 + rng.uniform(size=(2, 2))])
        bags.append(Bag(f"p{i}", x, Label.POSITIVE, (Label.POSITIVE, Label.NEGATIVE, Label.NEGATIVE)))
    for i in range(n_neg):
        bags.append(Bag(f"n{i}", 5 + rng.uniform(size=(3, 2)), Label.NEGATIVE, (Label.NEGATIVE,) * 3))
    return Dataset(tuple(bags), 2)


def point_model(center, rho=0.5, gamma=50.0):
    return OneClassModel(KernelSpec.rbf(gamma), np.array([1.0]), rho, 1.0, np.array([1.0]),
                         np.atleast_2d(center), (Role.SUPPORT,))


class TestAccuracy:
    def test_all_correct(self):
        ds = separable()
        assert accuracy(point_model([0.1, 0.1]), ds) == 1.0

    def test_inverted(self):
        ds = Dataset((
            Bag("a", np.array([[0.0, 0.0]]), Label.NEGATIVE),
            Bag("b", np.array([[9.0, 9.0]]), Label.POSITIVE),
        ), 2)
        assert accuracy(point_model([0.0, 0.0]), ds) == 0.0

    def test_recount(self):
        ds = synth_generate(SynthConfig(n_bags=20, negative_bags=20, dimension=3, seed=4))
        train = synth_generate(SynthConfig(n_bags=30, dimension=3, seed=5))
        pmi = core.fit_pmi(train, KernelSpec.rbf(30.0), 0.1)
        tp = fp = tn = fn = 0
        for bag in ds.bags:
            values = pmi.decision_values(bag.instances)
            pred = values.max() >= -pmi.model.margin
            if bag.label == Label.POSITIVE:
                tp, fn = tp + pred, fn + (not pred)
            else:
                fp, tn = fp + pred, tn + (not pred)
        assert accuracy(pmi, ds) == (tp + tn) / 40

    def test_unlabeled(self):
        ds = Dataset((Bag("u", np.zeros((1, 2))),), 2)
        with pytest.raises(ValueError):
            accuracy(point_model([0.0, 0.0]), ds)


class TestCrossValidate:
    def test_separable_is_perfect(self):
        report = cross_validate(separable(), RunConfig(kernel=KernelSpec.rbf(10.0), nu=0.1, k_folds=5))
        assert report.mean_accuracy == 1.0
        assert len(report.folds) == 5

    def test_deterministic(self):
        ds = separable(seed=1)
        config = RunConfig(kernel=KernelSpec.rbf(10.0), k_folds=5, seed=3)
        assert cross_validate(ds, config, 2).to_kv() == cross_validate(ds, config, 2).to_kv()

    def test_summary_recomputes(self):
        ds = synth_generate(SynthConfig(n_bags=15, negative_bags=15, dimension=3, seed=2))
        report = cross_validate(ds, RunConfig(kernel=KernelSpec.rbf(20.0), k_folds=3), repetitions=3)
        acc = [f.accuracy for f in report.folds]
        assert report.mean_accuracy == statistics.fmean(acc)
        reps = [statistics.fmean(acc[3 * r:3 * r + 3]) for r in range(3)]
        assert report.sd_accuracy == statistics.stdev(reps)
        assert report.fold_sd_accuracy == statistics.stdev(acc)
        assert all(0 <= a <= 1 for a in acc)
        assert [f.repetition for f in report.folds] == [0, 0, 0, 1, 1, 1, 2, 2, 2]

    def test_kv_has_no_timings(self):
        report = cross_validate(separable(), RunConfig(kernel=KernelSpec.rbf(10.0), k_folds=2))
        assert "sec" not in report.to_kv()
        assert "sec" in report.to_text()

    def test_too_few_bags(self):
        with pytest.raises(ValueError):
            cross_validate(separable(n_pos=3), RunConfig(k_folds=5))

    def test_test_folds_do_not_leak(self, monkeypatch):
        seen = []
        original = core.fit_pmi

        def spy(train, *args, **kwargs):
            seen.append(train.matrix.copy())
            return original(train, *args, **kwargs)

        monkeypatch.setattr(core, "fit_pmi", spy)
        ds = synth_generate(SynthConfig(n_bags=12, negative_bags=12, dimension=2, seed=6))
        config = RunConfig(kernel=KernelSpec.rbf(20.0), k_folds=3, scale=True)
        cross_validate(ds, config)
        first = list(seen)
        seen.clear()
        # shift every negative bag; positive training bags are untouched
        moved = Dataset(tuple(
            b if b.label == Label.POSITIVE else Bag(b.bag_id, b.instances + 100.0, b.label, b.instance_labels)
            for b in ds.bags), 2)
        cross_validate(moved, config)
        assert len(first) == len(seen) == 3
        for a, b in zip(first, seen):
            np.testing.assert_array_equal(a, b)

    def test_grid_search_uses_training_folds(self):
        ds = synth_generate(SynthConfig(n_bags=12, negative_bags=12, dimension=2, seed=7))
        config = RunConfig(k_folds=3, gamma_grid=(5.0, 50.0), nu_grid=(0.1, 0.3))
        kernel, nu = grid_search(ds, config)
        assert kernel.gamma in (5.0, 50.0) and nu in (0.1, 0.3)
        report = cross_validate(ds, config)
        assert {f.kernel for f in report.folds} <= {"rbf:gamma=5.0", "rbf:gamma=50.0"}

    @pytest.mark.parametrize("kwargs", [dict(nu=0), dict(k_folds=1), dict(oracle_mode="interactive"),
                                        dict(nu_grid=(0.5, 2.0))])
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            RunConfig(**kwargs)

    def test_scaled_fit_stores_params(self):
        ds = compact_positives(seed=0, n_bags=8, instances=3, dimension=2)
        model = fit(ds, RunConfig(kernel=KernelSpec.rbf(10.0), scale=True))
        assert model.scale is not None
        test = Dataset(tuple(Bag(b.bag_id, b.instances, Label.POSITIVE) for b in ds.bags), 2)
        assert 0 <= evaluate(model, test) <= 1


class TestTheorems:
    def test_compact_positive_grid(self):
        ds = compact_positives(seed=3)
        grid = [(nu, g) for nu in (0.01, 0.1, 0.5) for g in (60.0, 100.0)]
        report = check_theorems(grid, ds)
        assert [r.queries for r in report.rows] == [1] * 6
        assert report.all_ok

    def test_flags_are_literal(self):
        row = evaluation.TheoremRow(0.1, 1.0, 3, 2, "x", 0.0, 0.2)
        assert not row.query_ok and not row.outlier_ok
        assert "0,x,0,0.20000000000000001,0" in evaluation.TheoremReport((row,)).to_kv()

    def test_query_table(self):
        rows = tuple(evaluation.TheoremRow(nu, g, 1, 5, "positive_query", 0.0, 0.0)
                     for nu in (0.1, 0.2) for g in (60.0, 70.0))
        table = evaluation.TheoremReport(rows).query_table().splitlines()
        assert len(table) == 3
        assert table[1].split() == ["0.1", "1", "1"]
