import itertools
from fractions import Fraction

import pytest

from lkgram.config import PipelineConfig
from lkgram.errors import DetectorError, IncompleteGrid, NoNegativeDeltaWarning
from lkgram.metrics import MetricsReport
from lkgram.patterns import build_family, compute_columns
from lkgram.selection import (
    CombinationResult,
    ProbeGrid,
    compute_deltas,
    determine_kmax,
    enumerate_combinations,
    evaluate_combinations,
    probe_single_clusters,
    run_pipeline,
    select_best,
)

import grid_fixtures as gf


@pytest.mark.parametrize("table,expected", [
    (gf.ADFA_LD, 9), (gf.LOCALIZATION, 8), (gf.MAPPING, 8),
])
def test_kmax_from_published_grids(table, expected):
    grid = ProbeGrid.from_percent_table(table)
    assert determine_kmax(compute_deltas(grid, 0.01)) == expected


def test_adfa_delta_at_k2_is_exact():
    d_dr, d_far, d = compute_deltas(ProbeGrid.from_percent_table(gf.ADFA_LD), 0.01).deltas[2]
    assert d_dr == Fraction("-5.228") / 100
    assert d_far == Fraction("-3.202") / 100
    assert d == Fraction("-2.026") / 100


@pytest.mark.parametrize("table", [gf.ADFA_LD, gf.LOCALIZATION, gf.MAPPING])
def test_deltas_telescope(table):
    grid = ProbeGrid.from_percent_table(table)
    for nu in gf.NU_GRID:
        series = compute_deltas(grid, nu)
        ks = sorted(grid.k_values)
        far0, dr0 = grid.far_dr(ks[0], nu)
        far1, dr1 = grid.far_dr(ks[-1], nu)
        assert sum(v[0] for v in series.deltas.values()) == dr1 - dr0
        assert sum(v[1] for v in series.deltas.values()) == far1 - far0


def _grid(rows, nu=0.01):
    """rows: k -> (far, dr) as fractions."""
    return ProbeGrid(tuple(sorted(rows)), (nu,), {(k, nu): v for k, v in rows.items()})


def test_kmax_tie_takes_smaller_k():
    f = Fraction
    grid = _grid({1: (f(0), f(1, 2)), 2: (f(0), f(1, 4)), 3: (f(0), f(1, 2)), 4: (f(0), f(1, 4))})
    assert determine_kmax(compute_deltas(grid, 0.01)) == 2


def test_kmax_fallback_when_nothing_negative():
    f = Fraction
    grid = _grid({1: (f(0), f(1, 4)), 2: (f(0), f(1, 2)), 3: (f(0), f(1, 2))})
    with pytest.warns(NoNegativeDeltaWarning):
        assert determine_kmax(compute_deltas(grid, 0.01)) == 3


def test_deltas_need_contiguous_complete_grid():
    f = Fraction
    with pytest.raises(IncompleteGrid):
        compute_deltas(_grid({1: (f(0), f(0)), 3: (f(0), f(0))}), 0.01)
    with pytest.raises(IncompleteGrid):
        compute_deltas(_grid({1: (f(0), f(0))}), 0.01)
    partial = ProbeGrid((1, 2), (0.01,), {(1, 0.01): (f(0), f(0))})
    assert not partial.complete
    with pytest.raises(IncompleteGrid):
        compute_deltas(partial, 0.01)


@pytest.mark.parametrize("m", range(2, 13))
def test_combination_count(m):
    combos = enumerate_combinations(m)
    assert len(combos) == 2 ** m - (m + 1)
    assert len(set(combos)) == len(combos)
    assert all(len(c) >= 2 and list(c) == sorted(c) for c in combos)
    sizes = [len(c) for c in combos]
    assert sizes == sorted(sizes)


def test_combination_counts_for_published_kmax():
    assert len(enumerate_combinations(8)) == 247
    assert len(enumerate_combinations(9)) == 502
    with pytest.raises(DetectorError):
        enumerate_combinations(1)


def _result(ks, nu, f1):
    return CombinationResult(tuple(ks), nu, MetricsReport(None, None, None, f1))


def test_select_prefers_shortest_within_epsilon():
    results = [_result((1, 2, 3), 0.01, 0.9980), _result((1, 3), 0.01, 0.9975),
               _result((2, 3), 0.05, 0.9975), _result((1, 2), 0.1, 0.990)]
    best, shortlist = select_best(results, 0.001)
    assert best.ks == (1, 3)
    assert {r.ks for r in shortlist} == {(1, 2, 3), (1, 3), (2, 3)}


def test_select_length_tie_goes_to_higher_f1_then_larger_nu():
    results = [_result((1, 4), 0.01, 0.950), _result((2, 3), 0.01, 0.951)]
    assert select_best(results, 0.01)[0].ks == (2, 3)
    results = [_result((1, 2), 0.01, 0.95), _result((1, 2), 0.05, 0.95)]
    assert select_best(results, 0.0)[0].nu == 0.05


def test_select_epsilon_zero_is_plain_argmax():
    results = [_result((1, 2), 0.01, 0.90), _result((3, 4, 5), 0.01, 0.91)]
    assert select_best(results, 0.0)[0].ks == (3, 4, 5)


def test_select_skips_failed_cells():
    results = [CombinationResult((1, 2), 0.01, None, "Infeasible"), _result((1, 3), 0.5, 0.7)]
    assert select_best(results)[0].ks == (1, 3)
    with pytest.raises(DetectorError):
        select_best(results[:1])


def test_adding_a_dominated_candidate_keeps_winner():
    base = [_result(c, nu, 0.5 + 0.01 * i) for i, (c, nu) in
            enumerate(itertools.product([(1, 2), (1, 3), (2, 3)], [0.01, 0.1]))]
    winner = select_best(base)[0]
    worse = base + [_result((1, 2, 3), 0.01, 0.1)]
    assert select_best(worse)[0] == winner


@pytest.fixture(scope="module")
def sep_columns(separable_corpus):
    fam = build_family([t.syscalls for t in separable_corpus.training_normals], 4)
    return compute_columns(separable_corpus, fam)


def test_probe_grid_is_complete(sep_columns, quiet):
    grid = probe_single_clusters(sep_columns, (0.5, 0.1, 0.01))
    assert grid.complete and not grid.failures
    assert len(grid.entries) == 4 * 3
    for far, dr in grid.entries.values():
        assert 0 <= far <= 1 and 0 <= dr <= 1


def test_probe_records_infeasible_cells(small_corpus, quiet):
    fam = build_family([t.syscalls for t in small_corpus.training_normals], 2)
    grid = probe_single_clusters(compute_columns(small_corpus, fam), (0.5, 0.01))
    assert not grid.complete
    assert set(grid.failures) == {(1, 0.01), (2, 0.01)}
    with pytest.raises(IncompleteGrid, match="Infeasible|nu"):
        grid.far_dr(1, 0.01)


def test_evaluate_combinations_parallel_matches_serial(sep_columns, quiet):
    combos = enumerate_combinations(3)
    a = evaluate_combinations(sep_columns, combos, (0.5, 0.05), jobs=1)
    b = evaluate_combinations(sep_columns, combos, (0.5, 0.05), jobs=2)
    assert [(r.ks, r.nu, r.metrics) for r in a] == [(r.ks, r.nu, r.metrics) for r in b]


def _config(tmp_path, **kw):
    base = dict(kmax_probe=5, nu_grid=(0.5, 0.1, 0.01), kmax_nu=0.01, out=str(tmp_path))
    base.update(kw)
    return PipelineConfig(**base)


@pytest.mark.slow
def test_pipeline_reports_identical_across_jobs(separable_corpus, tmp_path, quiet):
    r1, m1 = run_pipeline(separable_corpus, _config(tmp_path / "a", jobs=1))
    r2, m2 = run_pipeline(separable_corpus, _config(tmp_path / "b", jobs=2))
    for name in ("report.txt", "probe.csv", "combinations.csv", "model.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert r1.best.ks == r2.best.ks
    assert len(r1.all_combinations) == (2 ** r1.k_max - r1.k_max - 1) * 3
    assert (tmp_path / "a" / "timings.txt").exists()
    assert sorted(p.name for p in (tmp_path / "a" / "model_clusters").iterdir()) == [
        f"L{k}.txt" for k in r1.best.ks]


@pytest.mark.slow
def test_pipeline_with_validation_split(separable_corpus, tmp_path, quiet):
    report, _ = run_pipeline(separable_corpus, _config(tmp_path, validation_split=True),
                             persist=False)
    c = report.final_metrics.counts
    assert c.n_normal + c.n_abnormal == 60
    assert report.best in report.shortlist


def test_pipeline_rejects_empty_training(separable_corpus, tmp_path):
    from lkgram.ingest import TraceCorpus
    empty = TraceCorpus([], separable_corpus.test_normals, separable_corpus.test_abnormals)
    with pytest.raises(DetectorError):
        run_pipeline(empty, _config(tmp_path), persist=False)


def test_published_shortest_combination_choices():
    loc = [_result((1, 8), 0.01, 0.999), _result((1, 4, 8), 0.01, 0.999),
           _result((1, 2, 8), 0.05, 0.999)]
    assert select_best(loc)[0].ks == (1, 8)
    mapping = [_result((1, 2, 6), 0.01, 0.9967), _result((1, 2, 5), 0.01, 0.9967)]
    assert select_best(mapping)[0].ks == (1, 2, 5)
    only = _result((1, 2), 0.5, 0.3)
    assert select_best([only]) == (only, [only])
