"""Multiple-instance learning from positive bags with a one-class SVM."""

from .core import (
    LITERAL_EQ16,
    THEOREM_CONSISTENT,
    CallbackOracle,
    GroundTruthOracle,
    LambdaSolution,
    OneClassModel,
    PmiModel,
    Role,
    SolverError,
    Termination,
    Tolerances,
    classify_bag,
    classify_bags,
    fit_lambda,
    fit_pmi,
    max_query_bound,
    outlier_bag_fraction,
    retrain,
    train_once,
)
from .data import (
    Bag,
    Dataset,
    Label,
    MilParseError,
    ScaleParams,
    SynthConfig,
    parse_mil_csv,
    scale_features,
    serialize_mil_csv,
    split_folds,
    synth_generate,
)
from .kernels import KernelSpec, gram_matrix
from .modelio import ModelFormatError
from .modelio import load as load_model
from .modelio import save as save_model

__version__ = "0.1.0"

__all__ = [
    "KernelSpec",
    "gram_matrix",
    "Bag",
    "CallbackOracle",
    "Dataset",
    "GroundTruthOracle",
    "LITERAL_EQ16",
    "Label",
    "LambdaSolution",
    "MilParseError",
    "ModelFormatError",
    "OneClassModel",
    "PmiModel",
    "Role",
    "ScaleParams",
    "SolverError",
    "SynthConfig",
    "THEOREM_CONSISTENT",
    "Termination",
    "Tolerances",
    "classify_bag",
    "classify_bags",
    "fit_lambda",
    "fit_pmi",
    "load_model",
    "max_query_bound",
    "outlier_bag_fraction",
    "parse_mil_csv",
    "retrain",
    "save_model",
    "scale_features",
    "serialize_mil_csv",
    "split_folds",
    "synth_generate",
    "train_once",
]
