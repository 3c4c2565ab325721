"""Bags, datasets, MIL-CSV ingestion, feature scaling, fold splitting and
synthetic bag generation."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np


class Label(IntEnum):
    NEGATIVE = -1
    UNKNOWN = 0
    POSITIVE = 1

    @property
    def token(self) -> str:
        return _LABEL_TOKENS[self]


_LABEL_TOKENS = {Label.POSITIVE: "+1", Label.NEGATIVE: "-1", Label.UNKNOWN: "?"}
_TOKEN_LABELS = {v: k for k, v in _LABEL_TOKENS.items()}

_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


class MilParseError(ValueError):
    """Base class for MIL-CSV parse errors; ``line`` is 1-based (0 if none)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class EmptyInputError(MilParseError):
    pass


class RaggedRowError(MilParseError):
    pass


class NumberFormatError(MilParseError):
    pass


class LabelTokenError(MilParseError):
    pass


class BagLabelConflictError(MilParseError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Bag:
    """An ordered set of instances (rows of ``instances``) with labels."""

    bag_id: str
    instances: np.ndarray
    label: Label = Label.UNKNOWN
    instance_labels: tuple[Label, ...] = ()

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.instances, dtype=np.float64))
        if x.shape[0] < 1:
            raise ValueError(f"bag {self.bag_id!r} has no instances")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"bag {self.bag_id!r} has non-finite features")
        object.__setattr__(self, "instances", _frozen(x))
        object.__setattr__(self, "label", Label(self.label))
        labels = tuple(Label(v) for v in self.instance_labels) or (Label.UNKNOWN,) * len(x)
        if len(labels) != len(x):
            raise ValueError(f"bag {self.bag_id!r}: {len(labels)} instance labels for {len(x)} instances")
        object.__setattr__(self, "instance_labels", labels)

    def __len__(self) -> int:
        return self.instances.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Bag):
            return NotImplemented
        return (
            self.bag_id == other.bag_id
            and self.label == other.label
            and self.instance_labels == other.instance_labels
            and self.instances.shape == other.instances.shape
            and np.array_equal(self.instances, other.instances)
        )

    def take(self, keep: np.ndarray) -> "Bag":
        idx = np.flatnonzero(keep) if keep.dtype == bool else np.asarray(keep)
        return Bag(
            self.bag_id,
            self.instances[idx],
            self.label,
            tuple(self.instance_labels[i] for i in idx),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered bags sharing one feature dimension.

    Instances are flat-indexed in bag order, then instance order; ``offsets``
    maps bag ``i`` to the slice ``offsets[i]:offsets[i + 1]``.
    """

    bags: tuple[Bag, ...]
    dimension: int = field(default=-1)

    def __post_init__(self):
        bags = tuple(self.bags)
        object.__setattr__(self, "bags", bags)
        d = self.dimension
        if d < 0:
            if not bags:
                raise ValueError("dimension is required for an empty dataset")
            d = bags[0].instances.shape[1]
            object.__setattr__(self, "dimension", d)
        for bag in bags:
            if bag.instances.shape[1] != d:
                raise ValueError(
                    f"bag {bag.bag_id!r} has dimension {bag.instances.shape[1]}, expected {d}"
                )

    def __len__(self) -> int:
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    def __getitem__(self, i: int) -> Bag:
        return self.bags[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.dimension == other.dimension and self.bags == other.bags

    @property
    def n_bags(self) -> int:
        return len(self.bags)

    @property
    def n_instances(self) -> int:
        return int(self.offsets[-1])

    @property
    def bag_sizes(self) -> list[int]:
        return [len(b) for b in self.bags]

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(b) for b in self.bags], dtype=np.int64)])

    @cached_property
    def matrix(self) -> np.ndarray:
        """All instances stacked into an (n, d) read-only array."""
        if not self.bags:
            return _frozen(np.empty((0, self.dimension)))
        return _frozen(np.vstack([b.instances for b in self.bags]))

    @property
    def blocks(self) -> list[np.ndarray]:
        """Flat index arrays, one per bag."""
        o = self.offsets
        return [np.arange(o[i], o[i + 1]) for i in range(len(self.bags))]

    @property
    def bag_ids(self) -> list[str]:
        return [b.bag_id for b in self.bags]

    @property
    def instance_labels(self) -> list[Label]:
        return [lab for b in self.bags for lab in b.instance_labels]

    def subset(self, bag_ids: Iterable[str]) -> "Dataset":
        """Bags with the given ids, kept in dataset order."""
        wanted = set(bag_ids)
        missing = wanted - set(self.bag_ids)
        if missing:
            raise KeyError(f"unknown bag id {sorted(missing)[0]!r}")
        return Dataset(tuple(b for b in self.bags if b.bag_id in wanted), self.dimension)

    def with_label(self, label: Label) -> "Dataset":
        return Dataset(tuple(b for b in self.bags if b.label == label), self.dimension)

    def replace_features(self, matrix: np.ndarray) -> "Dataset":
        matrix = np.asarray(matrix, dtype=np.float64)
        o = self.offsets
        bags = tuple(
            Bag(b.bag_id, matrix[o[i]:o[i + 1]], b.label, b.instance_labels)
            for i, b in enumerate(self.bags)
        )
        return Dataset(bags, matrix.shape[1] if matrix.ndim == 2 else self.dimension)


# --------------------------------------------------------------------------
# MIL-CSV


def parse_mil_csv(text: str | TextIO) -> Dataset:
    """Parse MIL-CSV text (``bag_id,bag_label,instance_label,f1,...,fd``)."""
    if not isinstance(text, str):
        text = text.read()
    order: list[str] = []
    rows: dict[str, list] = {}
    bag_labels: dict[str, Label] = {}
    dim = None
    seen_data = False
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not seen_data and line.startswith("bag_id,"):
            continue
        seen_data = True
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 4:
            raise RaggedRowError(f"expected at least 4 fields, got {len(parts)}", lineno)
        bag_id, btok, itok, *feats = parts
        if dim is None:
            dim = len(feats)
        elif len(feats) != dim:
            raise RaggedRowError(f"expected {dim} features, got {len(feats)}", lineno)
        for tok in (btok, itok):
            if tok not in _TOKEN_LABELS:
                raise LabelTokenError(f"unknown label token {tok!r}", lineno)
        values = []
        for tok in feats:
            if not _FLOAT_RE.match(tok):
                raise NumberFormatError(f"cannot parse number {tok!r}", lineno)
            values.append(float(tok))
        if not np.all(np.isfinite(values)):
            raise NumberFormatError("non-finite feature value", lineno)
        blabel = _TOKEN_LABELS[btok]
        if bag_id not in rows:
            order.append(bag_id)
            rows[bag_id] = []
            bag_labels[bag_id] = blabel
        elif bag_labels[bag_id] != blabel:
            raise BagLabelConflictError(
                f"bag {bag_id!r} labeled {btok} but earlier rows say {bag_labels[bag_id].token}",
                lineno,
            )
        rows[bag_id].append((values, _TOKEN_LABELS[itok]))
    if not order:
        raise EmptyInputError("no data rows")
    bags = tuple(
        Bag(
            bid,
            np.array([v for v, _ in rows[bid]], dtype=np.float64).reshape(len(rows[bid]), dim),
            bag_labels[bid],
            tuple(lab for _, lab in rows[bid]),
        )
        for bid in order
    )
    return Dataset(bags, dim)


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def serialize_mil_csv(dataset: Dataset, header: bool = True) -> str:
    out = io.StringIO()
    if header:
        cols = ["bag_id", "bag_label", "instance_label"]
        cols += [f"f{k + 1}" for k in range(dataset.dimension)]
        out.write(",".join(cols) + "\n")
    for bag in dataset.bags:
        for row, lab in zip(bag.instances, bag.instance_labels):
            fields = [bag.bag_id, bag.label.token, lab.token]
            fields += [format_float(v) for v in row]
            out.write(",".join(fields) + "\n")
    return out.getvalue()


# --------------------------------------------------------------------------
# Scaling


@dataclass(frozen=True, eq=False)
class ScaleParams:
    lo: np.ndarray
    hi: np.ndarray

    def apply(self, dataset: Dataset) -> Dataset:
        if len(self.lo) != dataset.dimension:
            raise ValueError(
                f"scale parameters are {len(self.lo)}-dimensional, dataset is {dataset.dimension}"
            )
        if dataset.n_bags == 0:
            return dataset
        return dataset.replace_features(self.transform(dataset.matrix))

    def transform(self, x: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        constant = span == 0
        out = (x - self.lo) / np.where(constant, 1.0, span)
        out[..., constant] = 0.0
        return out


def scale_features(dataset: Dataset) -> tuple[Dataset, ScaleParams]:
    """Min-max scale every dimension to [0, 1]; constant dimensions become 0."""
    if dataset.n_bags == 0:
        raise ValueError("cannot scale an empty dataset")
    x = dataset.matrix
    params = ScaleParams(_frozen(x.min(axis=0)), _frozen(x.max(axis=0)))
    return params.apply(dataset), params


# --------------------------------------------------------------------------
# Folds


def split_folds(dataset: Dataset, k: int, seed: int) -> list[tuple[list[str], list[str]]]:
    """Stratified k-fold split by bag label.

    Each test side holds one fold of every label class; the training side
    holds only the positive bags of the other folds.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for label in (Label.POSITIVE, Label.NEGATIVE, Label.UNKNOWN):
        members = [i for i, b in enumerate(dataset.bags) if b.label == label]
        if not members:
            continue
        if len(members) < k:
            raise ValueError(f"{len(members)} bags labeled {label.token} cannot fill {k} folds")
        for pos, i in enumerate(rng.permutation(members)):
            folds[pos % k].append(int(i))
    ids = dataset.bag_ids
    splits = []
    for f in range(k):
        test = sorted(folds[f])
        train = sorted(
            i for g in range(k) if g != f for i in folds[g]
            if dataset.bags[i].label == Label.POSITIVE
        )
        splits.append(([ids[i] for i in train], [ids[i] for i in test]))
    return splits


# --------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    Positive instances are Gaussian around ``positive_center`` with
    per-coordinate standard deviation ``positive_spread``. Negatives are
    uniform on [0, 1]^d (``negative_mode="scattered"``) or Gaussian around
    ``negative_center`` (``"clustered"``). ``clutter_per_bag`` adds that
    many extra uniform negatives to every bag, on top of
    ``instances_per_bag``.
    """

    n_bags: int = 20
    instances_per_bag: int = 5
    dimension: int = 2
    positive_center: float | Sequence[float] = 0.5
    positive_spread: float = 0.05
    negative_mode: str = "scattered"
    negative_center: float | Sequence[float] = 0.5
    negative_spread: float = 0.05
    positives_per_bag: int = 1
    negative_bags: int = 0
    clutter_per_bag: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.n_bags < 0 or self.negative_bags < 0 or self.n_bags + self.negative_bags < 1:
            raise ValueError("need at least one bag")
        if self.clutter_per_bag < 0:
            raise ValueError("clutter_per_bag must be non-negative")
        if self.instances_per_bag < 1 or self.dimension < 1:
            raise ValueError("instances_per_bag and dimension must be positive")
        if not 1 <= self.positives_per_bag <= self.instances_per_bag:
            raise ValueError("positives_per_bag must lie in [1, instances_per_bag]")
        if self.positive_spread < 0 or self.negative_spread < 0:
            raise ValueError("spreads must be non-negative")
        if self.negative_mode not in ("scattered", "clustered"):
            raise ValueError(f"unknown negative_mode {self.negative_mode!r}")
        for c in (self.positive_center, self.negative_center):
            if np.ndim(c) and len(c) != self.dimension:
                raise ValueError("cluster centers must match the dimension")


def synth_generate(config: SynthConfig) -> Dataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    d = config.dimension
    pos_c = np.broadcast_to(np.asarray(config.positive_center, dtype=float), (d,))
    neg_c = np.broadcast_to(np.asarray(config.negative_center, dtype=float), (d,))

    def negatives(count):
        if config.negative_mode == "scattered":
            return rng.uniform(0.0, 1.0, size=(count, d))
        return neg_c + config.negative_spread * rng.standard_normal((count, d))

    def clutter():
        return rng.uniform(0.0, 1.0, size=(config.clutter_per_bag, d))

    bags = []
    m = config.instances_per_bag + config.clutter_per_bag
    for i in range(config.n_bags):
        p = config.positives_per_bag
        x = np.vstack([
            pos_c + config.positive_spread * rng.standard_normal((p, d)),
            negatives(config.instances_per_bag - p),
            clutter(),
        ])
        labels = np.array([Label.POSITIVE] * p + [Label.NEGATIVE] * (m - p))
        perm = rng.permutation(m)
        bags.append(Bag(f"pos{i:04d}", x[perm], Label.POSITIVE, tuple(Label(v) for v in labels[perm])))
    for i in range(config.negative_bags):
        x = np.vstack([negatives(config.instances_per_bag), clutter()])
        bags.append(Bag(f"neg{i:04d}", x, Label.NEGATIVE, (Label.NEGATIVE,) * m))
    return Dataset(tuple(bags), d)
