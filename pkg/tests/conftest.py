import warnings

import pytest

from lkgram.ingest import SyntheticParams, generate_synthetic

# Separable fixture: foreign-id segments in every abnormal trace, light noise in normals.
SEPARABLE = SyntheticParams(
    base_cycle_length=6,
    alphabet_size=8,
    trace_length=150,
    n_normal=60,
    n_abnormal=60,
    n_train=200,
    noise_rate=0.01,
    injection_rate=0.01,
)
SEPARABLE_SEED = 1


@pytest.fixture(scope="session")
def separable_corpus():
    return generate_synthetic(SEPARABLE, SEPARABLE_SEED)


@pytest.fixture(scope="session")
def small_corpus():
    params = SyntheticParams(base_cycle_length=5, alphabet_size=6, trace_length=60,
                             n_normal=12, n_abnormal=12, n_train=30, noise_rate=0.02,
                             injection_rate=0.02)
    return generate_synthetic(params, 3)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")  # only when collected
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(
            mod.RESULTS.get(n, f"criterion {n:2d}: SKIP  not run (see test output)"))
