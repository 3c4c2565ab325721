"""Command line interface: ``pmi {synth,train,predict,cv,theorems}``.

Exit codes: 1 usage error, 2 data error, 3 solver did not converge.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import core, modelio
from .core import CallbackOracle, GroundTruthOracle, Tolerances
from .data import (
    Dataset,
    Label,
    SynthConfig,
    format_float,
    parse_mil_csv,
    scale_features,
    serialize_mil_csv,
    synth_generate,
)
from .evaluation import RunConfig, check_theorems, cross_validate
from .kernels import KernelSpec

log = logging.getLogger("pmi")

EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _kernel(text: str) -> KernelSpec:
    try:
        return KernelSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _read_dataset(path: str):
    if path == "-":
        return parse_mil_csv(sys.stdin.read())
    with open(path, encoding="utf-8") as fh:
        return parse_mil_csv(fh.read())


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _tolerances(args) -> Tolerances:
    return Tolerances(qp_tol=args.tol, max_iter=args.max_iter)


def _add_solver_args(p):
    p.add_argument("--kernel", type=_kernel, default=None,
                   help="rbf:gamma=<float> | linear | poly:degree=<int>,coef=<float> "
                        "(default rbf with gamma = 1/d)")
    p.add_argument("--nu", type=float, default=0.1)
    p.add_argument("--scale", action="store_true", help="min-max scale features on the training bags")
    p.add_argument("--tol", type=float, default=1e-6, help="KKT tolerance of both QP solvers")
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--retrain-bound", choices=["theorem_consistent", "literal_eq16"],
                   default="theorem_consistent")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmi", description="One-class multiple-instance learning from positive bags.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic MIL-CSV dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bags", type=int, default=20, help="positive bags")
    p.add_argument("--negative-bags", type=int, default=0)
    p.add_argument("--instances", type=int, default=5, help="instances per bag")
    p.add_argument("--positives", type=int, default=1, help="positive instances per positive bag")
    p.add_argument("--clutter", type=int, default=0, help="extra scattered negatives per bag")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--pos-center", type=_floats, default=(0.5,))
    p.add_argument("--pos-spread", type=float, default=0.05)
    p.add_argument("--negatives", choices=["scattered", "clustered"], default="scattered")
    p.add_argument("--neg-center", type=_floats, default=(0.5,))
    p.add_argument("--neg-spread", type=float, default=0.05)
    p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("train", help="fit a model on the positive bags of a MIL-CSV file")
    p.add_argument("input", help="MIL-CSV file or - for stdin")
    p.add_argument("-m", "--model", required=True, help="output model file")
    p.add_argument("--oracle", choices=["none", "ground-truth", "interactive"], default="none")
    _add_solver_args(p)

    p = sub.add_parser("predict", help="classify bags with a saved model")
    p.add_argument("input")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("cv", help="repeated stratified k-fold cross validation")
    p.add_argument("input")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", choices=["none", "ground-truth"], default="none")
    p.add_argument("--grid-gamma", type=_floats, default=())
    p.add_argument("--grid-nu", type=_floats, default=())
    p.add_argument("--format", choices=["text", "kv"], default="text")
    p.add_argument("-o", "--output", default=None)
    _add_solver_args(p)

    p = sub.add_parser("theorems", help="check query and outlier bounds over a (nu, gamma) grid")
    p.add_argument("input", help="MIL-CSV with instance labels on every training instance")
    p.add_argument("--nu", type=_floats, default=(0.01, 0.05, 0.1, 0.2, 0.3, 0.5))
    p.add_argument("--gamma", type=_floats, default=(60.0, 70.0, 80.0, 90.0, 100.0))
    p.add_argument("--scale", action="store_true")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--retrain-bound", choices=["theorem_consistent", "literal_eq16"],
                   default="theorem_consistent")
    p.add_argument("-o", "--output", default=None)
    return parser


# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = SynthConfig(
        n_bags=args.bags, instances_per_bag=args.instances, dimension=args.dim,
        positive_center=args.pos_center if len(args.pos_center) > 1 else args.pos_center[0],
        positive_spread=args.pos_spread, negative_mode=args.negatives,
        negative_center=args.neg_center if len(args.neg_center) > 1 else args.neg_center[0],
        negative_spread=args.neg_spread, positives_per_bag=args.positives,
        negative_bags=args.negative_bags, clutter_per_bag=args.clutter, seed=args.seed,
    )
    try:
        dataset = synth_generate(config)
    except ValueError as exc:
        raise UsageError(str(exc))
    _write(args.output, serialize_mil_csv(dataset))
    return 0


def _interactive_oracle(dataset):
    def ask(bag_index, instance_index):
        prompt = f"label instance {dataset.bags[bag_index].bag_id}/{instance_index} [p/n]: "
        while True:
            sys.stderr.write(prompt)
            sys.stderr.flush()
            answer = sys.stdin.readline()
            if not answer:
                raise UsageError("standard input closed while waiting for a label")
            answer = answer.strip().lower()
            if answer in ("p", "+", "+1", "y"):
                return Label.POSITIVE
            if answer in ("n", "-", "-1"):
                return Label.NEGATIVE
    return CallbackOracle(ask)


def _report_solver(model) -> int:
    if not model.converged:
        bad = [p for p in model.passes if not p.converged]
        sys.stderr.write(
            f"pmi: solver did not converge in pass(es) {', '.join(str(p.iteration) for p in bad)}; "
            "raise --max-iter or loosen --tol\n")
        return EXIT_SOLVER
    return 0


def cmd_train(args) -> int:
    if args.oracle == "interactive" and args.input == "-":
        raise UsageError("--oracle interactive needs the data in a file, not on stdin")
    dataset = _read_dataset(args.input)
    train = Dataset([b for b in dataset.bags if b.label != Label.NEGATIVE], dataset.dimension)
    dropped = dataset.n_bags - train.n_bags
    if dropped:
        log.warning("ignoring %d negative bag(s); training uses positive bags only", dropped)
    if train.n_bags == 0:
        raise ValueError("no positive bags to train on")
    params = None
    if args.scale:
        train, params = scale_features(train)
    oracle = None
    if args.oracle == "ground-truth":
        missing = [b.bag_id for b in train.bags if Label.UNKNOWN in b.instance_labels]
        if missing:
            raise ValueError(f"ground-truth oracle needs instance labels; bag {missing[0]!r} has '?'")
        oracle = GroundTruthOracle(train)
    elif args.oracle == "interactive":
        oracle = _interactive_oracle(train)
    kernel = args.kernel or KernelSpec.default(train.dimension)
    model = core.fit_pmi(train, kernel, args.nu, oracle, _tolerances(args), args.retrain_bound)
    model = replace(model, scale=params)
    modelio.save(model, args.model)
    sys.stderr.write(
        f"termination_reason={model.termination_reason.value} queries={len(model.queries)} "
        f"query_bound={model.query_bound}\n")
    return _report_solver(model)


def cmd_predict(args) -> int:
    model = modelio.load(args.model)
    dataset = _read_dataset(args.input)
    data = model.scale.apply(dataset) if model.scale is not None else dataset
    lines = ["bag_id,prediction,witness_index,witness_value"]
    correct = labeled = 0
    for bag, (pred, r, value) in zip(dataset.bags, core.classify_bags(model, data)):
        lines.append(f"{bag.bag_id},{'+1' if pred > 0 else '-1'},{r},{format_float(value)}")
        if bag.label != Label.UNKNOWN:
            labeled += 1
            correct += pred == int(bag.label)
    _write(args.output, "\n".join(lines) + "\n")
    if labeled:
        sys.stderr.write(f"accuracy={correct / labeled:.4f} ({correct}/{labeled} labeled bags)\n")
    return 0


def cmd_cv(args) -> int:
    dataset = _read_dataset(args.input)
    try:
        config = RunConfig(
            kernel=args.kernel, nu=args.nu, k_folds=args.k, seed=args.seed, scale=args.scale,
            oracle_mode=args.oracle.replace("-", "_"), tol=_tolerances(args),
            variant=args.retrain_bound, gamma_grid=args.grid_gamma, nu_grid=args.grid_nu,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    report = cross_validate(dataset, config, args.reps)
    _write(args.output, report.to_kv() if args.format == "kv" else report.to_text())
    return 0


def cmd_theorems(args) -> int:
    dataset = _read_dataset(args.input)
    train = dataset.with_label(Label.POSITIVE)
    if train.n_bags == 0:
        raise ValueError("no positive bags")
    if args.scale:
        train, _ = scale_features(train)
    missing = [b.bag_id for b in train.bags if Label.UNKNOWN in b.instance_labels]
    if missing:
        raise ValueError(f"instance labels required; bag {missing[0]!r} has '?'")
    grid = [(nu, g) for nu in args.nu for g in args.gamma]
    report = check_theorems(grid, train, Tolerances(args.tol, args.max_iter), args.retrain_bound)
    _write(args.output, report.to_kv())
    sys.stderr.write(report.query_table())
    return 0


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "predict": cmd_predict,
    "cv": cmd_cv, "theorems": cmd_theorems,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(name)s: %(message)s", stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"pmi: {exc}\n")
        return EXIT_USAGE
    except core.SolverError as exc:
        sys.stderr.write(f"pmi: solver error: {exc}\n")
        return EXIT_SOLVER
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"pmi: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
