from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lkgram.errors import (
    DegenerateSplit,
    EmptyTrace,
    InvalidParams,
    MalformedToken,
    MissingDirectory,
)
from lkgram.ingest import (
    SyntheticParams,
    SyscallTrace,
    TraceCorpus,
    corpus_stats,
    generate_synthetic,
    load_adfa_corpus,
    load_corpus,
    parse_trace,
    split_normals,
    write_corpus,
)

from oracles import naive_kgrams


def test_parse_worked_trace():
    t = parse_trace(b"0 22 23 1 5 96 5 128 4 34", "ex")
    assert len(t) == 10
    assert t.syscalls[0] == 0 and t.syscalls[-1] == 34


def test_parse_single_token():
    assert parse_trace("7", "one").syscalls == (7,)


def test_parse_any_whitespace():
    assert parse_trace(b"1\t2\n\n3  4\r\n", "ws").syscalls == (1, 2, 3, 4)


def test_malformed_token_reports_position():
    with pytest.raises(MalformedToken) as exc:
        parse_trace(b"3 x 5", "bad")
    assert exc.value.token_index == 1
    assert exc.value.byte_offset == 2


@pytest.mark.parametrize("text", [b"1 -2", b"1 2.5", b"1 1024"])
def test_malformed_negative_fractional_or_out_of_range(text):
    with pytest.raises(MalformedToken):
        parse_trace(text, "bad")


def test_alphabet_bound_is_configurable():
    assert parse_trace(b"2000", "big", max_id=4095).syscalls == (2000,)


@pytest.mark.parametrize("text", [b"", b"   \n\t"])
def test_empty_trace_rejected(text):
    with pytest.raises(EmptyTrace):
        parse_trace(text, "empty")


@given(st.lists(st.integers(0, 1023), min_size=1, max_size=50))
def test_parse_serialize_roundtrip(ids):
    t = parse_trace(" ".join(map(str, ids)), "rt")
    assert t.serialize().split() == [str(i) for i in ids]
    assert parse_trace(t.serialize(), "rt") == t


def _make_adfa(root, n_train=3, n_valid=2, attacks=(("Adduser_1", 2), ("Hydra_FTP_3", 1))):
    (root / "Training_Data_Master").mkdir(parents=True)
    (root / "Validation_Data_Master").mkdir()
    (root / "Attack_Data_Master").mkdir()
    for i in range(n_train):
        (root / "Training_Data_Master" / f"UTD-{i:04d}.txt").write_text(" ".join(["1"] * (i + 2)))
    for i in range(n_valid):
        (root / "Validation_Data_Master" / f"UVD-{i:04d}.txt").write_text("5 6 7 8")
    for name, count in attacks:
        d = root / "Attack_Data_Master" / name
        d.mkdir()
        for i in range(count):
            (d / f"UAD-{name}-{i}.txt").write_text("9 9 9")
    return root


def test_load_adfa_layout(tmp_path):
    corpus = load_adfa_corpus(_make_adfa(tmp_path))
    assert corpus_stats(corpus).counts == (3, 2, 3)
    assert [t.group for t in corpus.test_abnormals] == ["Adduser_1", "Adduser_1", "Hydra_FTP_3"]
    assert [t.source_id for t in corpus.training_normals] == sorted(
        t.source_id for t in corpus.training_normals)


def test_load_empty_attack_dir(tmp_path):
    corpus = load_adfa_corpus(_make_adfa(tmp_path, attacks=()))
    assert corpus_stats(corpus).counts == (3, 2, 0)
    assert corpus_stats(corpus).mean_lengths[2] is None


def test_missing_directory(tmp_path):
    with pytest.raises(MissingDirectory):
        load_adfa_corpus(tmp_path / "nope")
    (tmp_path / "Training_Data_Master").mkdir()
    with pytest.raises(MissingDirectory):
        load_adfa_corpus(tmp_path)


def test_parse_error_names_file(tmp_path):
    root = _make_adfa(tmp_path)
    (root / "Validation_Data_Master" / "UVD-bad.txt").write_text("1 two 3")
    with pytest.raises(MalformedToken, match="UVD-bad"):
        load_adfa_corpus(root)


def test_stats_exact_means(tmp_path):
    stats = corpus_stats(load_adfa_corpus(_make_adfa(tmp_path)))
    # training lengths 2, 3, 4
    assert stats.mean_lengths == (Fraction(3), Fraction(4), Fraction(3))


def test_stats_independent_of_enumeration_order(tmp_path):
    corpus = load_adfa_corpus(_make_adfa(tmp_path))
    shuffled = TraceCorpus(corpus.training_normals[::-1], corpus.test_normals[::-1],
                           corpus.test_abnormals[::-1])
    assert corpus_stats(shuffled) == corpus_stats(corpus)


def test_parallel_load_matches_serial(tmp_path):
    root = _make_adfa(tmp_path, n_train=80, n_valid=70)
    assert load_adfa_corpus(root, jobs=2) == load_adfa_corpus(root, jobs=1)


def test_two_directory_layout(tmp_path):
    (tmp_path / "normal").mkdir()
    (tmp_path / "attack").mkdir()
    for i in range(10):
        (tmp_path / "normal" / f"n{i}.txt").write_text("1 2 3")
    (tmp_path / "attack" / "a.txt").write_text("4 4")
    corpus = load_corpus(tmp_path, ("normal", "attack"), train_fraction=0.5, seed=1)
    assert corpus_stats(corpus).counts == (5, 5, 1)


def _traces(n):
    return [SyscallTrace((i,), f"t{i}") for i in range(n)]


@pytest.mark.parametrize("n,expected", [(479, (240, 239)), (300, (150, 150))])
def test_split_sizes(n, expected):
    train, test = split_normals(_traces(n), 0.5, seed=0)
    assert (len(train), len(test)) == expected


@given(st.integers(2, 200), st.floats(0.05, 0.95), st.integers(0, 2**31))
@settings(max_examples=60)
def test_split_is_exact_partition(n, fraction, seed):
    traces = _traces(n)
    try:
        train, test = split_normals(traces, fraction, seed)
    except DegenerateSplit:
        return
    ids = [t.source_id for t in train + test]
    assert sorted(ids) == sorted(t.source_id for t in traces)
    assert not set(train) & set(test)
    assert split_normals(traces, fraction, seed) == (train, test)


def test_split_degenerate():
    with pytest.raises(DegenerateSplit):
        split_normals(_traces(1), 0.5, 0)
    with pytest.raises(DegenerateSplit):
        split_normals([], 0.5, 0)


def test_synthetic_without_noise_repeats_cycle():
    p = SyntheticParams(base_cycle_length=4, trace_length=10, n_normal=3, n_abnormal=0,
                        noise_rate=0.0, injection_rate=0.0)
    corpus = generate_synthetic(p, 5)
    first = corpus.training_normals[0].syscalls
    assert first[:4] * 2 + first[:2] == first
    assert all(t.syscalls == first for t in corpus.all_traces())


def test_synthetic_counts_and_determinism():
    p = SyntheticParams(n_normal=7, n_abnormal=5, n_train=9)
    a, b = generate_synthetic(p, 11), generate_synthetic(p, 11)
    assert corpus_stats(a).counts == (9, 7, 5)
    assert [t.serialize() for t in a.all_traces()] == [t.serialize() for t in b.all_traces()]
    assert generate_synthetic(p, 12) != a


@pytest.mark.parametrize("seed", range(5))
def test_synthetic_abnormals_hold_unseen_window(seed):
    p = SyntheticParams(n_normal=20, n_abnormal=20, n_train=20, noise_rate=0.05,
                        injection_rate=0.005)
    corpus = generate_synthetic(p, seed)
    normals = [t.syscalls for t in corpus.training_normals + corpus.test_normals]
    for t in corpus.test_abnormals:
        found = False
        for k in range(1, p.base_cycle_length + 1):
            if naive_kgrams([t.syscalls], k) - naive_kgrams(normals, k):
                found = True
                break
        assert found, t.source_id


@pytest.mark.parametrize("bad", [
    dict(noise_rate=1.5), dict(injection_rate=-0.1), dict(trace_length=0),
    dict(base_cycle_length=0), dict(alphabet_size=1020),
])
def test_synthetic_invalid_params(bad):
    with pytest.raises(InvalidParams):
        generate_synthetic(SyntheticParams(**bad), 0)


def test_write_then_load_corpus(tmp_path):
    corpus = generate_synthetic(SyntheticParams(n_normal=3, n_abnormal=2, n_train=4), 0)
    write_corpus(corpus, tmp_path)
    loaded = load_adfa_corpus(tmp_path)
    assert corpus_stats(loaded) == corpus_stats(corpus)
    assert [t.syscalls for t in loaded.training_normals] == [
        t.syscalls for t in corpus.training_normals]


def test_corpus_rejects_shared_source_ids():
    t = SyscallTrace((1, 2), "same")
    with pytest.raises(InvalidParams):
        TraceCorpus([t], [t], [])
