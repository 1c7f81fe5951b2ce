"""Syscall-trace anomaly detection with L-k n-gram clusters and a one-class SVM."""

from .errors import DetectorError
from .ingest import (
    SyntheticParams,
    SyscallTrace,
    TraceCorpus,
    corpus_stats,
    generate_synthetic,
    load_adfa_corpus,
    parse_trace,
    split_normals,
)
from .metrics import confusion, f1_measure, multi_voter, rates, roc_curve
from .ocsvm import OcsvmModel, OcsvmParams, decision_value, predict, rbf_kernel, train
from .patterns import (
    ClusterFamily,
    LkCluster,
    build_cluster,
    build_family,
    concat_columns,
    eval_trace,
    featurize,
    featurize_corpus,
)
from .selection import (
    compute_deltas,
    determine_kmax,
    enumerate_combinations,
    run_pipeline,
    select_best,
)

__version__ = "0.1.0"

__all__ = [
    "DetectorError",
    "SyntheticParams",
    "SyscallTrace",
    "TraceCorpus",
    "corpus_stats",
    "generate_synthetic",
    "load_adfa_corpus",
    "parse_trace",
    "split_normals",
    "confusion",
    "f1_measure",
    "multi_voter",
    "rates",
    "roc_curve",
    "OcsvmModel",
    "OcsvmParams",
    "decision_value",
    "predict",
    "rbf_kernel",
    "train",
    "ClusterFamily",
    "LkCluster",
    "build_cluster",
    "build_family",
    "concat_columns",
    "eval_trace",
    "featurize",
    "featurize_corpus",
    "compute_deltas",
    "determine_kmax",
    "enumerate_combinations",
    "run_pipeline",
    "select_best",
]
