"""Command-line front end.

Exit status: 0 on success (and, for ``predict``, when every trace is
normal), 1 when ``predict`` flags an anomaly, 2 on usage or data errors.
"""

from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .config import PipelineConfig, parse_nu_grid, read_kv_file
from .errors import DetectorError, DimensionMismatch
from .ingest import (
    SyntheticParams,
    TraceCorpus,
    corpus_stats,
    generate_synthetic,
    load_corpus,
    read_trace,
)
from .metrics import confusion, pct, rates, roc_curve, roc_from_points
from .ocsvm import load_model, save_model, train
from .patterns import (
    ClusterFamily,
    ColumnSet,
    FeatureColumn,
    build_cluster,
    count_matches,
    featurize_corpus,
)
from .persist import cluster_paths, export_features, load_columns, save_columns
from .selection import (
    probe_csv,
    probe_single_clusters,
    render_probe_table,
    render_timings,
    run_pipeline,
)

EXIT_OK, EXIT_ANOMALY, EXIT_ERROR = 0, 1, 2


# ------------------------------------------------------------------ corpus

def load_input_corpus(config: PipelineConfig) -> TraceCorpus:
    if config.synthetic:
        values = read_kv_file(config.synthetic)
        seed = int(values.pop("seed", config.seed))
        return generate_synthetic(SyntheticParams.from_mapping(values), seed, config.max_id)
    if not config.root:
        raise DetectorError("no corpus given: pass --root or --synthetic")
    return load_corpus(config.root, config.layout, recursive=config.recursive,
                       max_id=config.max_id, train_fraction=config.split_fraction,
                       seed=config.seed, jobs=config.jobs)


def _extract_one(train_seqs, test_seqs, test_labels, k):
    t0 = time.perf_counter()
    cluster = build_cluster(train_seqs, k)
    train_counts = np.array([count_matches(s, cluster) for s in train_seqs], dtype=np.int64)
    test_counts = np.array([count_matches(s, cluster) for s in test_seqs], dtype=np.int64)
    return cluster, train_counts, test_counts, time.perf_counter() - t0


def extract(corpus: TraceCorpus, n: int, jobs: int = 1):
    """Build L-1..L-n and every per-cluster column.  Returns (family, columns, seconds per k)."""
    train_seqs = [t.syscalls for t in corpus.training_normals]
    test_seqs = [t.syscalls for t in corpus.test_traces]
    labels = corpus.test_labels
    ks = range(1, n + 1)
    if jobs > 1:
        parts = Parallel(n_jobs=jobs)(
            delayed(_extract_one)(train_seqs, test_seqs, labels, k) for k in ks)
    else:
        parts = [_extract_one(train_seqs, test_seqs, labels, k) for k in ks]
    train_len = np.array([len(s) for s in train_seqs], dtype=np.int64)
    test_len = np.array([len(s) for s in test_seqs], dtype=np.int64)
    train_ids = tuple(t.source_id for t in corpus.training_normals)
    test_ids = tuple(t.source_id for t in corpus.test_traces)
    train_lab = np.ones(len(train_seqs), dtype=np.int64)
    test_lab = np.array(labels, dtype=np.int64)
    family = ClusterFamily(p[0] for p in parts)
    columns = ColumnSet(
        {k: FeatureColumn(k, p[1], train_len, train_lab, train_ids) for k, p in zip(ks, parts)},
        {k: FeatureColumn(k, p[2], test_len, test_lab, test_ids) for k, p in zip(ks, parts)},
    )
    return family, columns, {k: p[3] for k, p in zip(ks, parts)}


def _matches_corpus(columns: ColumnSet, corpus: TraceCorpus) -> bool:
    train_ids = tuple(t.source_id for t in corpus.training_normals)
    test_ids = tuple(t.source_id for t in corpus.test_traces)
    return all(c.trace_ids == train_ids for c in columns.train.values()) and \
        all(c.trace_ids == test_ids for c in columns.test.values())


def _extraction(config: PipelineConfig, corpus: TraceCorpus):
    """Reuse extraction artifacts under the output directory when they match the corpus."""
    out = Path(config.out)
    ks = list(range(1, config.kmax_probe + 1))
    columns = load_columns(out / "columns", ks)
    paths = [out / "clusters" / f"L{k}.txt" for k in ks]
    if columns is not None and all(p.is_file() for p in paths) and _matches_corpus(columns, corpus):
        return ClusterFamily.load(paths), columns
    family, columns, seconds = extract(corpus, config.kmax_probe, config.jobs)
    _write_extraction(out, family, columns, seconds, config.jobs)
    return family, columns


def _write_extraction(out: Path, family, columns, seconds, jobs) -> None:
    out.mkdir(parents=True, exist_ok=True)
    family.save(out / "clusters")
    save_columns(columns, out / "columns")
    lines = [f"jobs={jobs}"] + [f"L{k}={s:.3f}s" for k, s in seconds.items()]
    lines.append(f"total={sum(seconds.values()):.3f}s")
    (out / "extract_timings.txt").write_text("\n".join(lines) + "\n")


def _load_family(path: str) -> ClusterFamily:
    return ClusterFamily.load(cluster_paths(path))


def _parse_ks(text: str) -> list[int]:
    return sorted(int(v) for v in text.replace(" ", "").split(",") if v)


# ---------------------------------------------------------------- commands

def cmd_stats(config: PipelineConfig, args) -> int:
    print(corpus_stats(load_input_corpus(config)).render())
    return EXIT_OK


def cmd_extract(config: PipelineConfig, args) -> int:
    corpus = load_input_corpus(config)
    t0 = time.perf_counter()
    family, columns, seconds = extract(corpus, config.kmax_probe, config.jobs)
    wall = time.perf_counter() - t0
    _write_extraction(Path(config.out), family, columns, seconds, config.jobs)
    for k, c in family.items():
        print(f"L-{k}: {len(c)} patterns")
    print(f"extraction wall time: {wall:.3f}s (jobs={config.jobs})")
    return EXIT_OK


def cmd_probe(config: PipelineConfig, args) -> int:
    corpus = load_input_corpus(config)
    _, columns = _extraction(config, corpus)
    grid = probe_single_clusters(columns, config.nu_grid, config, config.jobs)
    out = Path(config.out)
    (out / "probe.txt").write_text(render_probe_table(grid) + "\n")
    (out / "probe.csv").write_text(probe_csv(grid))
    print(render_probe_table(grid))
    return EXIT_OK


def cmd_select(config: PipelineConfig, args) -> int:
    corpus = load_input_corpus(config)
    t0 = time.perf_counter()
    family, columns = _extraction(config, corpus)
    extract_time = time.perf_counter() - t0
    report, _ = run_pipeline(corpus, config, family, columns, persist=True)
    report.timings["extract"] = extract_time
    (Path(config.out) / "timings.txt").write_text(render_timings(report.timings, config.jobs))
    print(report.render(), end="")
    return EXIT_OK


def cmd_train(config: PipelineConfig, args) -> int:
    corpus = load_input_corpus(config)
    ks = _parse_ks(args.ks)
    family = ClusterFamily(build_cluster([t.syscalls for t in corpus.training_normals], k)
                           for k in ks)
    train_m, test_m = featurize_corpus(corpus, family, ks, config.jobs)
    model = train(train_m, config.ocsvm_params(args.nu))
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    family.save(out / "model_clusters")
    save_model(model, out / "model.txt")
    print(f"trained on {len(train_m)} traces, {len(model.coefficients)} support vectors, "
          f"rho={model.rho!r}")
    if len(test_m) and len(set(test_m.labels.tolist())) == 2:
        m = rates(confusion(model.predict(test_m), test_m.labels))
        print(f"test: FAR={pct(m.far)}% DR={pct(m.dr)}% F1={m.f1:.6f}")
    return EXIT_OK


def _model_and_family(args):
    model = load_model(args.model)
    family = _load_family(args.clusters)
    if len(family) != model.dimension:
        raise DimensionMismatch(
            f"model has dimension {model.dimension} but {len(family)} cluster files were given")
    return model, family


def cmd_predict(config: PipelineConfig, args) -> int:
    model, family = _model_and_family(args)
    clusters = list(family.values())
    anomalous = False
    for path in args.traces:
        trace = read_trace(path, max_id=config.max_id)
        x = np.array([count_matches(trace, c) / len(trace) for c in clusters])
        value = float(model.decision_values(x)[0])
        label = 1 if value >= 0 else -1
        anomalous |= label == -1
        print(f"{path} {'+1' if label == 1 else '-1'} {value!r}")
    return EXIT_ANOMALY if anomalous else EXIT_OK


def _test_matrix(config, family):
    corpus = load_input_corpus(config)
    _, test_m = featurize_corpus(corpus, family, list(family), config.jobs)
    return test_m


def cmd_eval(config: PipelineConfig, args) -> int:
    model, family = _model_and_family(args)
    test_m = _test_matrix(config, family)
    m = rates(confusion(model.predict(test_m), test_m.labels))
    c = m.counts
    print(f"TP={c.tp} FN={c.fn} FP={c.fp} TN={c.tn}")
    print(f"DR={pct(m.dr)}% FAR={pct(m.far)}% precision={pct(m.precision)}% F1={m.f1:.6f}")
    return EXIT_OK


def cmd_roc(config: PipelineConfig, args) -> int:
    if args.sweep == "nu":
        corpus = load_input_corpus(config)
        ks = _parse_ks(args.ks)
        family = ClusterFamily(build_cluster([t.syscalls for t in corpus.training_normals], k)
                               for k in ks)
        train_m, test_m = featurize_corpus(corpus, family, ks, config.jobs)
        points = []
        for nu in config.nu_grid:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = train(train_m, config.ocsvm_params(nu))
            m = rates(confusion(model.predict(test_m), test_m.labels))
            points.append((m.far, m.dr))
        curve = roc_from_points(points)
    else:
        model, family = _model_and_family(args)
        test_m = _test_matrix(config, family)
        curve = roc_curve(model.decision_values(test_m), test_m.labels)
    text = curve.to_text()
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")
    print(f"AUC={curve.auc:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_export_features(config: PipelineConfig, args) -> int:
    corpus = load_input_corpus(config)
    ks = _parse_ks(args.ks)
    family = ClusterFamily(build_cluster([t.syscalls for t in corpus.training_normals], k)
                           for k in ks)
    train_m, test_m = featurize_corpus(corpus, family, ks, config.jobs)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    export_features(train_m, out / "train.features")
    if len(test_m):
        export_features(test_m, out / "test.features")
    print(f"wrote {out / 'train.features'} ({len(train_m)} rows) and "
          f"{out / 'test.features'} ({len(test_m)} rows)")
    return EXIT_OK


# ------------------------------------------------------------------ parser

_FLAG_KEYS = {
    "root": "root", "layout": "layout", "kmax_probe": "kmax_probe", "nu_grid": "nu_grid",
    "kmax_nu": "kmax_nu", "gamma": "gamma", "epsilon": "epsilon", "seed": "seed",
    "jobs": "jobs", "out": "out", "validation_split": "validation_split",
    "synthetic": "synthetic", "kkt_tolerance": "kkt_tolerance",
    "split_fraction": "split_fraction", "max_id": "max_id",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("corpus and pipeline options")
    g.add_argument("--config", help="key = value config file; flags override it")
    g.add_argument("--root", help="dataset root directory")
    g.add_argument("--layout", help="comma-separated directory names (3: train,validation,attack; "
                                    "2: normal,attack)")
    g.add_argument("--synthetic", metavar="PARAMFILE", help="generate the corpus from a parameter file")
    g.add_argument("--kmax-probe", type=int, metavar="N", help="probe cluster lengths 1..N")
    g.add_argument("--nu-grid", help="comma-separated nu values, or a preset: tables, alt")
    g.add_argument("--kmax-nu", type=float, help="nu column used to determine K_max")
    g.add_argument("--gamma", type=float, help="RBF width (default 1/feature dimension)")
    g.add_argument("--kkt-tolerance", type=float)
    g.add_argument("--epsilon", type=float, help="F1 shortlist tolerance")
    g.add_argument("--split-fraction", type=float, help="training fraction for 2-directory layouts")
    g.add_argument("--seed", type=int)
    g.add_argument("--jobs", type=int, help="parallel worker count")
    g.add_argument("--out", metavar="DIR", help="output directory")
    g.add_argument("--validation-split", action="store_const", const=True, default=None,
                   help="select on half of the test set, report on the other half")
    g.add_argument("--max-id", type=int, help="largest accepted syscall id")

    parser = argparse.ArgumentParser(prog="lkgram", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("stats", parents=[common], help="print corpus counts and mean lengths")
    sub.add_parser("extract", parents=[common], help="build clusters and per-cluster columns")
    sub.add_parser("probe", parents=[common], help="single-cluster (k, nu) grid")
    sub.add_parser("select", parents=[common], help="full three-step selection")

    p = sub.add_parser("train", parents=[common], help="train one combination")
    p.add_argument("--ks", required=True, help="cluster lengths, e.g. 1,2,6")
    p.add_argument("--nu", type=float, default=0.01)

    for name, helptext in (("predict", "classify trace files"), ("eval", "metrics on the test set"),
                           ("roc", "ROC points on the test set")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--model", required=name != "roc")
        p.add_argument("--clusters", required=name != "roc",
                       help="directory of L<k>.txt cluster dumps")
        if name == "predict":
            p.add_argument("traces", nargs="+")
        if name == "roc":
            p.add_argument("--sweep", choices=("score", "nu"), default="score")
            p.add_argument("--ks", help="cluster lengths for --sweep nu")
            p.add_argument("--output", help="write points here instead of stdout")

    p = sub.add_parser("export-features", parents=[common], help="write labeled feature files")
    p.add_argument("--ks", required=True)
    return parser


def config_from_args(args) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    flags = {}
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if key == "nu_grid":
            value = parse_nu_grid(value)
        flags[key] = value
    if "nu_grid" in flags and "kmax_nu" not in flags and config.kmax_nu not in flags["nu_grid"]:
        flags["kmax_nu"] = min(flags["nu_grid"])
    return PipelineConfig.from_mapping(flags, config)


COMMANDS = {
    "stats": cmd_stats, "extract": cmd_extract, "probe": cmd_probe, "select": cmd_select,
    "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "roc": cmd_roc,
    "export-features": cmd_export_features,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == "roc":
            if args.sweep == "nu" and not args.ks:
                parser.error("--sweep nu needs --ks")
            if args.sweep == "score" and not (args.model and args.clusters):
                parser.error("roc needs --model and --clusters")
        return COMMANDS[args.command](config, args)
    except (DetectorError, OSError) as exc:
        print(f"lkgram {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
