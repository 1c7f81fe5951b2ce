"""Three-step derivation of a multi-cluster detector.

1. Probe: train one model per (k, nu) on single-cluster features and record
   test FAR / DR.
2. K_max: pick the cluster length where the change rate of DR minus the
   change rate of FAR is most negative, then evaluate every combination of
   two or more clusters from L-1..L-K_max.
3. Select: shortlist combinations whose F1 is within epsilon of the best,
   keep the shortest total length, then the highest F1.
"""

from __future__ import annotations

import itertools
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed

from .config import PipelineConfig
from .errors import DetectorError, IncompleteGrid, NoNegativeDeltaWarning
from .ingest import TraceCorpus, split_normals
from .metrics import MetricsReport, confusion, multi_voter, pct, rates
from .ocsvm import OcsvmModel, OcsvmParams, save_model, train
from .patterns import (
    ClusterFamily,
    ColumnSet,
    FeatureColumn,
    build_family,
    compute_columns,
    concat_columns,
)

Rate = Fraction


@dataclass(frozen=True)
class ProbeGrid:
    """FAR / DR per (k, nu).  Rates are exact fractions in [0, 1]."""

    k_values: tuple[int, ...]
    nu_grid: tuple[float, ...]
    entries: dict[tuple[int, float], tuple[Rate, Rate]]
    metrics: dict[tuple[int, float], MetricsReport] = field(default_factory=dict, compare=False)
    failures: dict[tuple[int, float], str] = field(default_factory=dict)

    def far_dr(self, k: int, nu: float) -> tuple[Rate, Rate]:
        try:
            return self.entries[(k, nu)]
        except KeyError:
            reason = self.failures.get((k, nu), "missing")
            raise IncompleteGrid(f"no probe cell for k={k}, nu={nu} ({reason})") from None

    @property
    def complete(self) -> bool:
        return all((k, nu) in self.entries for k in self.k_values for nu in self.nu_grid)

    @classmethod
    def from_percent_table(cls, table: Mapping[int, Mapping[float, tuple[str, str]]]) -> "ProbeGrid":
        """Build a grid from percentages written as decimal strings, e.g. ``"4.414"``."""
        ks = tuple(sorted(table))
        nus = tuple(next(iter(table.values())).keys())
        entries = {}
        for k, row in table.items():
            for nu, (far, dr) in row.items():
                entries[(k, nu)] = (Fraction(far) / 100, Fraction(dr) / 100)
        return cls(ks, nus, entries)


@dataclass(frozen=True)
class DeltaSeries:
    nu: float
    deltas: dict[int, tuple[Rate, Rate, Rate]]  # k -> (d_dr, d_far, d)


@dataclass(frozen=True)
class CombinationResult:
    ks: tuple[int, ...]
    nu: float
    metrics: MetricsReport | None
    error: str | None = None

    @property
    def combination_length(self) -> int:
        return sum(self.ks)

    @property
    def f1(self) -> float | None:
        return None if self.metrics is None else self.metrics.f1


@dataclass
class SelectionReport:
    probe: ProbeGrid
    chosen_nu: float
    deltas: DeltaSeries
    k_max: int
    kmax_fallback: bool
    all_combinations: list[CombinationResult]
    shortlist: list[CombinationResult]
    best: CombinationResult
    final_metrics: MetricsReport | None
    comparison: list[tuple[str, MetricsReport | None]]
    epsilon: float
    counts: dict[str, int]
    timings: dict[str, float] = field(default_factory=dict)

    def render(self) -> str:
        return render_report(self)


def _cell_metrics(train_cols: Mapping[int, FeatureColumn], test_cols: Mapping[int, FeatureColumn],
                  ks: Sequence[int], params: OcsvmParams) -> tuple[MetricsReport, OcsvmModel]:
    tr = concat_columns(train_cols, ks)
    te = concat_columns(test_cols, ks)
    model = train(tr, params)
    return rates(confusion(model.predict(te), te.labels)), model


def _task(train_cols, test_cols, ks, params):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            metrics, _ = _cell_metrics(train_cols, test_cols, ks, params)
        return metrics, None
    except DetectorError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _run(tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        return Parallel(n_jobs=jobs)(delayed(_task)(*t) for t in tasks)
    return [_task(*t) for t in tasks]


def _params_for(config: PipelineConfig | None, nu: float) -> OcsvmParams:
    return (config or PipelineConfig()).ocsvm_params(nu)


def probe_single_clusters(columns: ColumnSet, nu_grid: Sequence[float],
                          config: PipelineConfig | None = None, jobs: int = 1) -> ProbeGrid:
    ks = tuple(columns.ks)
    cells = [(k, nu) for k in ks for nu in nu_grid]
    results = _run([(columns.train, columns.test, (k,), _params_for(config, nu)) for k, nu in cells],
                   jobs)
    entries, metrics, failures = {}, {}, {}
    for cell, (m, err) in zip(cells, results):
        if m is None:
            failures[cell] = err
            continue
        c = m.counts
        entries[cell] = (Fraction(c.fp, c.n_normal), Fraction(c.tp, c.n_abnormal))
        metrics[cell] = m
    return ProbeGrid(ks, tuple(nu_grid), entries, metrics, failures)


def compute_deltas(grid: ProbeGrid, nu: float) -> DeltaSeries:
    ks = sorted(grid.k_values)
    if len(ks) < 2:
        raise IncompleteGrid("need at least two cluster lengths")
    if ks != list(range(ks[0], ks[0] + len(ks))):
        raise IncompleteGrid(f"cluster lengths are not contiguous: {ks}")
    deltas = {}
    for prev, k in zip(ks, ks[1:]):
        far0, dr0 = grid.far_dr(prev, nu)
        far1, dr1 = grid.far_dr(k, nu)
        d_dr, d_far = dr1 - dr0, far1 - far0
        deltas[k] = (d_dr, d_far, d_dr - d_far)
    return DeltaSeries(nu, deltas)


def determine_kmax(series: DeltaSeries) -> int:
    if not series.deltas:
        raise IncompleteGrid("empty delta series")
    best_k, best_d = None, None
    for k in sorted(series.deltas):
        d = series.deltas[k][2]
        if d < 0 and (best_d is None or d < best_d):
            best_k, best_d = k, d
    if best_k is None:
        n = max(series.deltas)
        warnings.warn(f"no negative DR-FAR change rate at nu={series.nu}; using K_max={n}",
                      NoNegativeDeltaWarning, stacklevel=2)
        return n
    return best_k


def enumerate_combinations(k_max: int) -> list[tuple[int, ...]]:
    if k_max < 2:
        raise DetectorError(f"K_max must be at least 2, got {k_max}")
    ks = range(1, k_max + 1)
    return [c for r in range(2, k_max + 1) for c in itertools.combinations(ks, r)]


def evaluate_combinations(columns: ColumnSet, combinations: Iterable[Sequence[int]],
                          nu_grid: Sequence[float], config: PipelineConfig | None = None,
                          jobs: int = 1) -> list[CombinationResult]:
    pairs = [(tuple(c), nu) for c in combinations for nu in nu_grid]
    results = _run([(columns.train, columns.test, ks, _params_for(config, nu)) for ks, nu in pairs],
                   jobs)
    return [CombinationResult(ks, nu, m, err) for (ks, nu), (m, err) in zip(pairs, results)]


def _nu_rank(nu: float) -> float:
    return -nu


def select_best(results: Sequence[CombinationResult],
                epsilon: float = 0.001) -> tuple[CombinationResult, list[CombinationResult]]:
    """Return the winner and the shortlist it was drawn from.

    Shortlist: results whose F1 is within `epsilon` of the best F1.  The
    winner has the smallest combination length; remaining ties go to the
    higher F1, then the lexicographically smaller ks, then the larger nu.
    """
    scored = [r for r in results if r.f1 is not None]
    if not scored:
        raise DetectorError("no combination produced metrics")
    top = max(r.f1 for r in scored)
    shortlist = sorted(
        (r for r in scored if r.f1 >= top - epsilon),
        key=lambda r: (r.combination_length, -r.f1, r.ks, _nu_rank(r.nu)),
    )
    return shortlist[0], shortlist


def _subset_test(columns: ColumnSet, idx: np.ndarray) -> ColumnSet:
    test = {k: FeatureColumn(k, c.counts[idx], c.lengths[idx], c.labels[idx],
                             tuple(c.trace_ids[i] for i in idx))
            for k, c in columns.test.items()}
    return ColumnSet(columns.train, test)


def validation_partition(columns: ColumnSet, fraction: float, seed: int) -> tuple[ColumnSet, ColumnSet]:
    """Split test rows (per class) into a selection part and a held-out report part."""
    labels = next(iter(columns.test.values())).labels
    sel, rep = [], []
    for cls in (1, -1):
        idx = list(np.flatnonzero(labels == cls))
        a, b = split_normals(idx, fraction, seed)
        sel.extend(a)
        rep.extend(b)
    return _subset_test(columns, np.array(sorted(sel))), _subset_test(columns, np.array(sorted(rep)))


def comparison_rows(columns: ColumnSet, best: CombinationResult,
                    config: PipelineConfig | None = None) -> list[tuple[str, MetricsReport | None]]:
    """Winner versus each of its single clusters and their multi-voter."""
    params = _params_for(config, best.nu)
    rows: list[tuple[str, MetricsReport | None]] = []
    member_preds = []
    labels = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in best.ks:
            tr = concat_columns(columns.train, (k,))
            te = concat_columns(columns.test, (k,))
            try:
                model = train(tr, params)
            except DetectorError:
                rows.append((f"{{{k}}}", None))
                continue
            pred = model.predict(te)
            labels = te.labels
            member_preds.append(pred)
            rows.append((f"{{{k}}}", rates(confusion(pred, te.labels))))
    if member_preds and len(member_preds) == len(best.ks):
        voted = multi_voter(member_preds)
        name = " + ".join(f"{{{k}}}" for k in best.ks)
        rows.append((name, rates(confusion(voted, labels))))
    return rows


def run_pipeline(corpus: TraceCorpus, config: PipelineConfig, family: ClusterFamily | None = None,
                 columns: ColumnSet | None = None, persist: bool = True
                 ) -> tuple[SelectionReport, OcsvmModel]:
    """Probe, choose K_max, search combinations, pick the winner and retrain it.

    When `persist` is set, the clusters, the final model, the report and the
    timings are written under ``config.out``.
    """
    timings: dict[str, float] = {}
    jobs = config.jobs
    if not corpus.training_normals:
        raise DetectorError("corpus has no training traces")

    t0 = time.perf_counter()
    if family is None:
        family = build_family([t.syscalls for t in corpus.training_normals], config.kmax_probe, jobs)
    if columns is None:
        columns = compute_columns(corpus, family, jobs)
    timings["extract"] = time.perf_counter() - t0

    selection_cols, report_cols = columns, None
    if config.validation_split:
        selection_cols, report_cols = validation_partition(
            columns, config.validation_fraction, config.seed)

    t0 = time.perf_counter()
    try:
        grid = probe_single_clusters(selection_cols, config.nu_grid, config, jobs)
    except DetectorError as exc:
        raise DetectorError(f"probe phase: {exc}") from exc
    timings["probe"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        deltas = compute_deltas(grid, config.kmax_nu)
    except DetectorError as exc:
        raise DetectorError(f"K_max phase: {exc}") from exc
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NoNegativeDeltaWarning)
        k_max = determine_kmax(deltas)
    fallback = any(issubclass(w.category, NoNegativeDeltaWarning) for w in caught)
    combos = enumerate_combinations(k_max)
    results = evaluate_combinations(selection_cols, combos, config.combination_nu_grid, config, jobs)
    timings["combinations"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        best, shortlist = select_best(results, config.epsilon)
    except DetectorError as exc:
        raise DetectorError(f"selection phase: {exc}") from exc
    final_cols = report_cols or selection_cols
    model = train(concat_columns(columns.train, best.ks), config.ocsvm_params(best.nu))
    te = concat_columns(final_cols.test, best.ks)
    final_metrics = rates(confusion(model.predict(te), te.labels))
    comparison = comparison_rows(final_cols, best, config)
    timings["select"] = time.perf_counter() - t0

    labels = next(iter(columns.test.values())).labels
    report = SelectionReport(
        probe=grid, chosen_nu=config.kmax_nu, deltas=deltas, k_max=k_max,
        kmax_fallback=fallback, all_combinations=results, shortlist=shortlist, best=best,
        final_metrics=final_metrics, comparison=comparison, epsilon=config.epsilon,
        counts={"train": len(corpus.training_normals), "test_normal": int(np.sum(labels == 1)),
                "test_abnormal": int(np.sum(labels == -1))},
        timings=timings,
    )
    if persist:
        persist_artifacts(Path(config.out), report, model, family, config)
    return report, model


def persist_artifacts(out: Path, report: SelectionReport, model: OcsvmModel,
                      family: ClusterFamily, config: PipelineConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    ClusterFamily([family[k] for k in report.best.ks]).save(out / "model_clusters")
    save_model(model, out / "model.txt")
    (out / "report.txt").write_text(render_report(report))
    (out / "probe.csv").write_text(probe_csv(report.probe))
    (out / "combinations.csv").write_text(combinations_csv(report.all_combinations))
    (out / "timings.txt").write_text(render_timings(report.timings, config.jobs))


# ---------------------------------------------------------------- rendering

def _f(x: Fraction | float | None) -> str:
    return pct(None if x is None else float(x))


def _f1(x: float | None) -> str:
    return "-" if x is None else f"{x:.6f}"


def render_probe_table(grid: ProbeGrid) -> str:
    corner = "k \\ nu"
    head1 = f"{corner:>7}" + "".join(f"{nu:>20g}" for nu in grid.nu_grid)
    head2 = f"{'':>7}" + "".join(f"{'FAR':>10}{'DR':>10}" for _ in grid.nu_grid)
    lines = [head1, head2]
    for k in grid.k_values:
        cells = []
        for nu in grid.nu_grid:
            if (k, nu) in grid.entries:
                far, dr = grid.entries[(k, nu)]
                cells.append(f"{_f(far):>10}{_f(dr):>10}")
            else:
                cells.append(f"{'fail':>10}{'fail':>10}")
        lines.append(f"{k:>7}" + "".join(cells))
    return "\n".join(lines)


def probe_csv(grid: ProbeGrid) -> str:
    lines = ["k,nu,far,dr,f1"]
    for k in grid.k_values:
        for nu in grid.nu_grid:
            if (k, nu) not in grid.entries:
                lines.append(f"{k},{nu!r},,,")
                continue
            far, dr = grid.entries[(k, nu)]
            m = grid.metrics.get((k, nu))
            f1 = "" if m is None or m.f1 is None else repr(m.f1)
            lines.append(f"{k},{nu!r},{float(far)!r},{float(dr)!r},{f1}")
    return "\n".join(lines) + "\n"


def combinations_csv(results: Sequence[CombinationResult]) -> str:
    lines = ["ks,nu,length,far,dr,f1,error"]
    for r in results:
        ks = " ".join(map(str, r.ks))
        if r.metrics is None:
            lines.append(f"{ks},{r.nu!r},{r.combination_length},,,,{r.error}")
        else:
            m = r.metrics
            lines.append(f"{ks},{r.nu!r},{r.combination_length},{m.far!r},{m.dr!r},{m.f1!r},")
    return "\n".join(lines) + "\n"


def _ks(ks: Sequence[int]) -> str:
    return "{" + ", ".join(map(str, ks)) + "}"


def render_report(report: SelectionReport) -> str:
    out = ["# selection report", ""]
    c = report.counts
    out.append(f"traces: train={c['train']} test_normal={c['test_normal']} "
               f"test_abnormal={c['test_abnormal']}")
    out += ["", "## probe grid (FAR % / DR %)", render_probe_table(report.probe)]
    if report.probe.failures:
        out.append("failed cells:")
        out.extend(f"  k={k} nu={nu:g}: {msg}" for (k, nu), msg in sorted(report.probe.failures.items()))
    out += ["", f"## change rates at nu={report.chosen_nu:g} (percentage points)",
            f"{'k':>4}{'dDR':>12}{'dFAR':>12}{'d':>12}"]
    for k, (d_dr, d_far, d) in sorted(report.deltas.deltas.items()):
        out.append(f"{k:>4}{_f(d_dr):>12}{_f(d_far):>12}{_f(d):>12}")
    why = ("no negative change rate; fallback to the full probe range" if report.kmax_fallback
           else f"most negative d = {_f(report.deltas.deltas[report.k_max][2])} at k={report.k_max}")
    out += ["", f"K_max = {report.k_max} ({why})",
            f"combinations per nu: {len(enumerate_combinations(report.k_max))}", ""]
    out.append("## combinations (sorted by F1 descending)")
    out.append(f"{'combination':<36}{'nu':>8}{'length':>8}{'FAR %':>10}{'DR %':>10}{'F1':>10}")
    ranked = sorted(report.all_combinations,
                    key=lambda r: (-(r.f1 if r.f1 is not None else -1.0), r.combination_length,
                                   r.ks, -r.nu))
    for r in ranked:
        if r.metrics is None:
            out.append(f"{_ks(r.ks):<36}{r.nu:>8g}{r.combination_length:>8}  failed: {r.error}")
        else:
            m = r.metrics
            out.append(f"{_ks(r.ks):<36}{r.nu:>8g}{r.combination_length:>8}"
                       f"{pct(m.far):>10}{pct(m.dr):>10}{_f1(m.f1):>10}")
    out += ["", f"## shortlist (F1 within {report.epsilon:g} of best)"]
    for r in report.shortlist:
        out.append(f"{_ks(r.ks):<36}{r.nu:>8g}{r.combination_length:>8}"
                   f"{pct(r.metrics.far):>10}{pct(r.metrics.dr):>10}{_f1(r.f1):>10}")
    b = report.best
    out += ["", f"## winner: {_ks(b.ks)} at nu={b.nu:g} (length {b.combination_length})"]
    fm = report.final_metrics
    if fm is not None:
        out.append(f"final model: FAR={pct(fm.far)}% DR={pct(fm.dr)}% F1={_f1(fm.f1)}")
    out += ["", "## comparison", f"{'classifier':<36}{'FAR %':>10}{'DR %':>10}"]
    if fm is not None:
        out.append(f"{_ks(b.ks):<36}{pct(fm.far):>10}{pct(fm.dr):>10}")
    for name, m in report.comparison:
        if m is None:
            out.append(f"{name:<36}{'fail':>10}{'fail':>10}")
        else:
            out.append(f"{name:<36}{pct(m.far):>10}{pct(m.dr):>10}")
    return "\n".join(out) + "\n"


def render_timings(timings: Mapping[str, float], jobs: int) -> str:
    lines = [f"jobs={jobs}"]
    lines += [f"{phase}={seconds:.3f}s" for phase, seconds in timings.items()]
    lines.append(f"total={sum(timings.values()):.3f}s")
    return "\n".join(lines) + "\n"


__all__ = [
    "CombinationResult", "DeltaSeries", "ProbeGrid", "SelectionReport", "combinations_csv",
    "comparison_rows", "compute_deltas", "determine_kmax", "enumerate_combinations",
    "evaluate_combinations", "persist_artifacts", "probe_csv", "probe_single_clusters",
    "render_probe_table", "render_report", "render_timings", "run_pipeline", "select_best",
    "validation_partition",
]
