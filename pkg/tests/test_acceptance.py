"""Acceptance checks, one test per criterion.

Each test records a one-line verdict in ``RESULTS``; the verdicts are printed
at the end of the pytest run. Criterion 9 runs only when a Musk1 file in
MIL-CSV form is named by the ``PMI_MUSK1`` environment variable.
"""

import contextlib
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import compact_positives, tight_negatives
from pmi.core import (
    GroundTruthOracle,
    Tolerances,
    fit_lambda,
    fit_pmi,
    max_query_bound,
    outlier_bag_fraction,
    retrain,
    select_representatives,
    train_once,
    variance_objective,
)
from pmi.data import Bag, Dataset, Label, SynthConfig, parse_mil_csv, synth_generate
from pmi.evaluation import RunConfig, accuracy, check_theorems, cross_validate
from pmi.kernels import KernelSpec, gram_matrix
from pmi.qp import (
    BlockSimplexQP,
    BoxSumQP,
    brute_force_block_simplex,
    brute_force_box_sum,
    solve_block_simplex,
    solve_box_sum,
)

RESULTS = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS/FAIL for one criterion; ``note`` collects the measured numbers."""
    note = []
    try:
        yield note
    except pytest.skip.Exception:
        RESULTS[number] = f"[{number:>2}] SKIP  {title}: {'; '.join(note)}"
        raise
    except BaseException:
        RESULTS[number] = f"[{number:>2}] FAIL  {title}: {'; '.join(note)}"
        raise
    RESULTS[number] = f"[{number:>2}] PASS  {title}: {'; '.join(note)}"


# every (partition) and (size, cap) pair below keeps the exhaustive grid
# within the oracle's point budget at step 1e-3
BLOCK_PARTITIONS = [[2, 2], [3], [2, 1, 2], [1, 3], [2, 2, 1, 1], [2, 2, 2], [4], [1, 1, 2], [2, 3]]
BOX_SHAPES = [(2, 0.5), (2, 1.0), (3, 0.4), (3, 1.0), (4, 0.3), (4, 1.0), (5, 0.2), (4, 0.5), (6, 0.17)]


def random_K(m, rng):
    if rng.random() < 0.5:
        a = rng.normal(size=(m, int(rng.integers(1, m + 1))))
        return a @ a.T
    x = rng.uniform(size=(m, 2))
    d2 = ((x[:, None] - x[None]) ** 2).sum(-1)
    return np.exp(-rng.uniform(0.5, 20) * d2)


def test_c1_qp_oracle_equivalence():
    with criterion(1, "QP solvers match grid oracles (100 instances each, gap <= 1e-5, < 30 s)") as note:
        start = time.perf_counter()
        worst_block = worst_box = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            sizes = BLOCK_PARTITIONS[seed % len(BLOCK_PARTITIONS)]
            blocks, s = [], 0
            for n in sizes:
                blocks.append(list(range(s, s + n)))
                s += n
            problem = BlockSimplexQP(random_K(s, rng), blocks)
            gap = brute_force_block_simplex(problem).objective - solve_block_simplex(problem).objective
            worst_block = max(worst_block, abs(gap))
            assert gap >= -1e-5, f"block-simplex seed {seed}: solver worse than grid by {-gap}"

            M, upper = BOX_SHAPES[seed % len(BOX_SHAPES)]
            problem = BoxSumQP(random_K(M, rng), upper)
            gap = brute_force_box_sum(problem).objective - solve_box_sum(problem).objective
            worst_box = max(worst_box, abs(gap))
            assert gap >= -1e-5, f"box-sum seed {seed}: solver worse than grid by {-gap}"
        elapsed = time.perf_counter() - start
        note.append(f"max gap block={worst_block:.2e} box={worst_box:.2e}, {elapsed:.1f} s")
        assert worst_block <= 1e-5 and worst_box <= 1e-5
        assert elapsed < 30


def test_c2_derived_Q_equals_feature_space_spread():
    with criterion(2, "lam'Q lam equals explicit feature-space spread (20 draws, 1e-9)") as note:
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            sizes = rng.integers(1, 5, size=3)
            d = int(rng.integers(1, 5))
            bags = tuple(Bag(f"b{i}", rng.normal(size=(n, d))) for i, n in enumerate(sizes))
            ds = Dataset(bags, d)
            lam = [rng.dirichlet(np.ones(n)) for n in sizes]
            b = np.array([w @ bag.instances for w, bag in zip(lam, bags)])
            m = b.mean(axis=0)
            explicit = float(sum(np.sum((bi - m) ** 2) for bi in b))
            kernel_form = variance_objective(gram_matrix(KernelSpec.linear(), ds), ds.blocks, lam)
            worst = max(worst, abs(kernel_form - explicit))
        note.append(f"max abs difference {worst:.2e}")
        assert worst <= 1e-9


def test_c3_kernel_trick_consistency():
    with criterion(3, "linear train_once equals one-class fit on explicit virtual points (alpha 1e-6)") as note:
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            # more dimensions than bags keeps the dual strictly convex, so the
            # optimum is unique and the comparison is meaningful
            N, d = 5, 7
            bags = tuple(Bag(f"b{i}", rng.uniform(size=(int(rng.integers(1, 5)), d))) for i in range(N))
            ds = Dataset(bags, d)
            kernel = KernelSpec.linear()
            lam = fit_lambda(ds, kernel)
            nu = (0.2, 0.5, 0.9)[seed % 3]
            model = train_once(ds, lam, kernel, nu, Tolerances(1e-10))
            b = lam.virtual_instances(ds)
            direct = solve_box_sum(BoxSumQP(b @ b.T, 1.0 / (nu * N)), tol=1e-10)
            worst = max(worst, float(np.abs(model.alpha - direct.x).max()))
        note.append(f"max alpha difference {worst:.2e}")
        assert worst <= 1e-6


def test_c4_outlier_fraction_after_retrain():
    with criterion(4, "post-retrain outlier-bag fraction <= nu (50 datasets x 3 nu)") as note:
        worst = -1.0
        runs = first_max = 0
        for seed in range(50):
            ds = synth_generate(SynthConfig(n_bags=30, instances_per_bag=5, dimension=3,
                                            positive_spread=0.15, seed=seed))
            kernel = KernelSpec.rbf(10.0)
            K = gram_matrix(kernel, ds)
            lam = fit_lambda(ds, kernel, K=K)
            for nu in (0.1, 0.3, 0.5):
                first = train_once(ds, lam, kernel, nu, K=K)
                first_max = max(first_max, outlier_bag_fraction(first))
                refit = retrain(ds, lam, select_representatives(first, ds), kernel, nu, K=K)
                frac = outlier_bag_fraction(refit, ds)
                worst = max(worst, frac - nu)
                runs += 1
                assert frac <= nu, f"seed {seed} nu {nu}: fraction {frac}"
        # the first-pass fraction shows the checker does see outlier bags
        note.append(f"{runs} runs, max(fraction - nu) = {worst:.3f}, "
                    f"max first-pass fraction {first_max:.3f}")


class AlwaysNegative:
    available = True

    def query(self, bag_index, instance_index):
        return Label.NEGATIVE


def test_c5_query_bound():
    with criterion(5, "query count <= max_query_bound on every run; N=111 n=867 nu=0.01 -> 7") as note:
        sizes = [8] * 90 + [7] * 21
        reported = Dataset(tuple(Bag(f"b{i}", np.zeros((n, 1))) for i, n in enumerate(sizes)), 1)
        assert (reported.n_bags, reported.n_instances) == (111, 867)
        bound = max_query_bound(reported, 0.01)
        note.append(f"reported example bound {bound}")
        assert bound == 7

        runs = worst = 0
        for seed in range(8):
            datasets = [
                (compact_positives(seed=seed, n_bags=20), 80.0),
                (tight_negatives(seed=seed, n_bags=20, clutter=1), 20.0),
                (synth_generate(SynthConfig(n_bags=15, instances_per_bag=6, dimension=3,
                                            positive_spread=0.1, clutter_per_bag=2, seed=seed)), 15.0),
            ]
            for ds, gamma in datasets:
                for nu in (0.01, 0.1, 0.3, 0.6):
                    for oracle in (GroundTruthOracle(ds), AlwaysNegative()):
                        pmi = fit_pmi(ds, KernelSpec.rbf(gamma), nu, oracle)
                        limit = max_query_bound(ds, nu)
                        assert pmi.query_bound == limit
                        assert len(pmi.queries) <= limit, (seed, gamma, nu, len(pmi.queries), limit)
                        worst = max(worst, len(pmi.queries))
                        runs += 1
        note.append(f"{runs} runs incl. always-negative oracles, max queries {worst}")


def test_c6_one_query_grid():
    with criterion(6, "compact-positive regime needs exactly 1 query on a 6 nu x 5 gamma grid (< 2 min)") as note:
        start = time.perf_counter()
        ds = compact_positives(seed=3)
        grid = [(nu, g) for nu in (0.01, 0.05, 0.1, 0.2, 0.3, 0.5) for g in (60.0, 70.0, 80.0, 90.0, 100.0)]
        report = check_theorems(grid, ds)
        elapsed = time.perf_counter() - start
        counts = [r.queries for r in report.rows]
        note.append(f"query counts {sorted(set(counts))} over {len(counts)} cells, {elapsed:.1f} s")
        print(report.query_table())
        assert counts == [1] * 30
        assert report.all_ok
        assert elapsed < 120


def test_c7_separable_accuracy():
    with criterion(7, "separable synthetic bag accuracy >= 95% (10 seeds)") as note:
        accs = []
        for seed in range(10):
            base = dict(instances_per_bag=6, dimension=5, positive_spread=0.05)
            train = synth_generate(SynthConfig(n_bags=50, seed=seed, **base))
            test = synth_generate(SynthConfig(n_bags=20, negative_bags=20, seed=1000 + seed, **base))
            pmi = fit_pmi(train, KernelSpec.rbf(40.0), 0.1)
            accs.append(accuracy(pmi, test))
        note.append(f"min {min(accs):.3f} mean {np.mean(accs):.3f}")
        assert min(accs) >= 0.95


def test_c8_tight_negatives_benefit_from_queries():
    with criterion(8, "tight negative cluster: first answer negative, removal, +10 points over no-query") as note:
        gains = []
        for seed in range(10):
            train = tight_negatives(seed=seed)
            test = tight_negatives(seed=500 + seed, n_bags=20, negative_bags=20)
            kernel = KernelSpec.rbf(20.0)
            queried = fit_pmi(train, kernel, 0.1, GroundTruthOracle(train))
            plain = fit_pmi(train, kernel, 0.1)
            assert queried.queries[0].answer == Label.NEGATIVE, f"seed {seed}"
            assert any(p.removed > 0 for p in queried.passes), f"seed {seed}"
            gains.append(accuracy(queried, test) - accuracy(plain, test))
        note.append(f"min gain {100 * min(gains):.1f} points, mean {100 * np.mean(gains):.1f}")
        assert min(gains) >= 0.10


def test_c9_musk1_reproduction():
    with criterion(9, "Musk1 10x10 CV within 79.1 +- 5 (non-gating)") as note:
        path = os.environ.get("PMI_MUSK1")
        if not path:
            note.append("not run: set PMI_MUSK1 to a Musk1 MIL-CSV file")
            pytest.skip("Musk1 data not supplied")
        with open(path, encoding="utf-8") as fh:
            ds = parse_mil_csv(fh.read())
        d = ds.dimension
        config = RunConfig(k_folds=10, seed=0, scale=True,
                           gamma_grid=tuple(c / d for c in (0.25, 1.0, 4.0, 16.0)),
                           nu_grid=(0.05, 0.1, 0.2))
        report = cross_validate(ds, config, repetitions=10)
        mean = 100 * report.mean_accuracy
        note.append(f"{mean:.1f} +- {100 * report.sd_accuracy:.1f}")
        assert abs(mean - 79.1) <= 5


def _cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "pmi", *args], cwd=cwd, capture_output=True,
                          text=True, check=False)


def test_c10_cli_determinism(tmp_path):
    with criterion(10, "every CLI command is byte-identical across two runs") as note:
        outputs = []
        for run in range(2):
            d = tmp_path / f"run{run}"
            d.mkdir()
            steps = [
                ["synth", "--seed", "7", "--bags", "20", "--negative-bags", "10", "--instances", "4",
                 "--positives", "2", "--dim", "5", "--pos-center", "0.3", "--negatives", "clustered",
                 "--neg-center", "0.7", "--neg-spread", "0.02", "--clutter", "1", "-o", "data.csv"],
                ["train", "data.csv", "-m", "model.txt", "--oracle", "ground-truth",
                 "--kernel", "rbf:gamma=20", "--nu", "0.1", "--scale"],
                ["predict", "data.csv", "-m", "model.txt", "-o", "pred.csv"],
                ["cv", "data.csv", "--k", "5", "--reps", "2", "--seed", "3", "--format", "kv",
                 "--kernel", "rbf:gamma=20", "--oracle", "ground-truth", "-o", "cv.txt"],
                ["theorems", "data.csv", "--nu", "0.05,0.1", "--gamma", "20,40", "-o", "thm.txt"],
            ]
            for args in steps:
                proc = _cli(args, d)
                assert proc.returncode == 0, proc.stderr
            outputs.append({name: (d / name).read_bytes()
                            for name in ("data.csv", "model.txt", "pred.csv", "cv.txt", "thm.txt")})
        same = [name for name in outputs[0] if outputs[0][name] == outputs[1][name]]
        note.append(f"identical: {', '.join(same)}")
        assert same == list(outputs[0])
