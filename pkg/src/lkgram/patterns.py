"""L-k pattern clusters and cluster-frequency features.

An L-k cluster is the set of distinct k-grams (contiguous windows of k
syscalls) seen in the normal training traces.  The frequency of a cluster in
a trace is the number of window positions whose k-gram belongs to the
cluster, divided by the trace length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed

from .errors import DetectorError, RowCountMismatch, UnknownCluster
from .ingest import SyscallTrace, TraceCorpus

Pattern = tuple[int, ...]


def _seq(trace) -> Sequence[int]:
    return trace.syscalls if isinstance(trace, SyscallTrace) else trace


def windows(trace, k: int) -> Iterator[Pattern]:
    """All k-windows of a trace, left to right, overlapping."""
    s = _seq(trace)
    if k < 1:
        raise DetectorError(f"window length must be positive, got {k}")
    return zip(*(s[i:] for i in range(k)))


@dataclass
class LkCluster:
    k: int
    patterns: set[Pattern] = field(default_factory=set)

    def __post_init__(self):
        if self.k < 1:
            raise DetectorError(f"cluster length must be positive, got {self.k}")
        self.patterns = set(self.patterns)
        for p in self.patterns:
            if len(p) != self.k:
                raise DetectorError(f"pattern {p} does not have length {self.k}")

    def add(self, pattern: Sequence[int]) -> None:
        p = tuple(pattern)
        if len(p) != self.k:
            raise DetectorError(f"pattern {p} does not have length {self.k}")
        self.patterns.add(p)

    def __contains__(self, pattern) -> bool:
        return tuple(pattern) in self.patterns

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self):
        return iter(sorted(self.patterns))

    def dump(self) -> str:
        lines = [f"k={self.k} count={len(self.patterns)}"]
        lines.extend(" ".join(map(str, p)) for p in sorted(self.patterns))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "LkCluster":
        lines = text.splitlines()
        if not lines:
            raise DetectorError("empty cluster dump")
        header = dict(item.split("=", 1) for item in lines[0].split())
        k, count = int(header["k"]), int(header["count"])
        cluster = cls(k, {tuple(int(v) for v in ln.split()) for ln in lines[1:] if ln.strip()})
        if len(cluster) != count:
            raise DetectorError(f"cluster dump declares {count} patterns, found {len(cluster)}")
        return cluster

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dump())

    @classmethod
    def load(cls, path: str | Path) -> "LkCluster":
        return cls.parse(Path(path).read_text())


def build_cluster(training: Iterable, k: int) -> LkCluster:
    patterns: set[Pattern] = set()
    for trace in training:
        patterns.update(windows(trace, k))
    return LkCluster(k, patterns)


def count_matches(trace, cluster: LkCluster) -> int:
    """Number of window positions whose k-gram is in the cluster."""
    return sum(map(cluster.patterns.__contains__, windows(trace, cluster.k)))


def eval_trace(trace, cluster: LkCluster) -> Fraction:
    s = _seq(trace)
    if not s:
        return Fraction(0)
    return Fraction(count_matches(s, cluster), len(s))


class ClusterFamily(Mapping[int, LkCluster]):
    """Clusters keyed by length; iterates in ascending k."""

    def __init__(self, clusters: Iterable[LkCluster] = ()):
        self._clusters: dict[int, LkCluster] = {}
        for c in clusters:
            if c.k in self._clusters:
                raise DetectorError(f"duplicate cluster length {c.k}")
            self._clusters[c.k] = c
        self._clusters = dict(sorted(self._clusters.items()))

    def __getitem__(self, k: int) -> LkCluster:
        try:
            return self._clusters[k]
        except KeyError:
            raise UnknownCluster(f"no L-{k} cluster in family (have {list(self._clusters)})") from None

    def __iter__(self):
        return iter(self._clusters)

    def __len__(self) -> int:
        return len(self._clusters)

    def save(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for k, c in self._clusters.items():
            p = directory / f"L{k}.txt"
            c.save(p)
            paths.append(p)
        return paths

    @classmethod
    def load(cls, paths: Iterable[str | Path]) -> "ClusterFamily":
        return cls(LkCluster.load(p) for p in paths)


def build_family(training: Sequence, ks: int | Iterable[int], jobs: int = 1) -> ClusterFamily:
    """Build one cluster per length; an int `ks` means lengths 1..ks."""
    ks = list(range(1, ks + 1)) if isinstance(ks, int) else sorted(set(ks))
    seqs = [_seq(t) for t in training]
    if jobs > 1 and len(ks) > 1:
        clusters = Parallel(n_jobs=jobs)(delayed(build_cluster)(seqs, k) for k in ks)
    else:
        clusters = [build_cluster(seqs, k) for k in ks]
    return ClusterFamily(clusters)


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[Fraction, ...]
    label: int
    trace_id: str


@dataclass(frozen=True)
class FeatureColumn:
    """Match counts of one cluster over an ordered list of traces."""

    k: int
    counts: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray
    trace_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows of cluster frequencies kept as exact (count, length) pairs.

    ``values`` gives the float matrix fed to the classifier; ``row(i)``
    gives exact rationals.
    """

    counts: np.ndarray  # (n, m) int
    lengths: np.ndarray  # (n,) int
    labels: np.ndarray  # (n,) +1 / -1
    trace_ids: tuple[str, ...]
    column_keys: tuple[int, ...]

    def __post_init__(self):
        n = len(self.lengths)
        if self.counts.shape != (n, len(self.column_keys)):
            raise RowCountMismatch(
                f"count block {self.counts.shape} does not match {n} rows x {len(self.column_keys)} columns")
        if len(self.labels) != n or len(self.trace_ids) != n:
            raise RowCountMismatch("labels / trace ids do not match row count")

    @property
    def values(self) -> np.ndarray:
        if len(self.lengths) == 0:
            return np.zeros((0, len(self.column_keys)))
        return self.counts / self.lengths[:, None]

    @property
    def dimension(self) -> int:
        return len(self.column_keys)

    def __len__(self) -> int:
        return len(self.lengths)

    def row(self, i: int) -> FeatureVector:
        L = int(self.lengths[i])
        return FeatureVector(tuple(Fraction(int(c), L) for c in self.counts[i]),
                             int(self.labels[i]), self.trace_ids[i])

    @property
    def rows(self) -> list[FeatureVector]:
        return [self.row(i) for i in range(len(self))]

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=int)
        return FeatureMatrix(self.counts[idx], self.lengths[idx], self.labels[idx],
                             tuple(self.trace_ids[i] for i in idx), self.column_keys)


def featurize(trace: SyscallTrace, family: ClusterFamily, selected_ks: Sequence[int],
              label: int = 1) -> FeatureVector:
    ks = _check_selection(selected_ks)
    values = tuple(eval_trace(trace, family[k]) for k in ks)
    return FeatureVector(values, label, trace.source_id)


def _check_selection(selected_ks: Sequence[int]) -> list[int]:
    ks = list(selected_ks)
    if len(set(ks)) != len(ks):
        raise DetectorError(f"duplicate cluster length in selection {ks}")
    if ks != sorted(ks):
        raise DetectorError(f"selection must be ascending, got {ks}")
    return ks


def _count_block(seqs: list[Sequence[int]], clusters: list[LkCluster]) -> np.ndarray:
    out = np.zeros((len(seqs), len(clusters)), dtype=np.int64)
    for i, s in enumerate(seqs):
        for j, c in enumerate(clusters):
            out[i, j] = count_matches(s, c)
    return out


def _matrix(traces: Sequence[SyscallTrace], labels: Sequence[int], family: ClusterFamily,
            ks: list[int], jobs: int) -> FeatureMatrix:
    clusters = [family[k] for k in ks]
    seqs = [t.syscalls for t in traces]
    if jobs > 1 and len(seqs) >= 2 * jobs:
        chunks = np.array_split(np.arange(len(seqs)), jobs)
        parts = Parallel(n_jobs=jobs)(
            delayed(_count_block)([seqs[i] for i in chunk], clusters) for chunk in chunks)
        counts = np.vstack(parts)
    else:
        counts = _count_block(seqs, clusters)
    return FeatureMatrix(
        counts.reshape(len(seqs), len(ks)),
        np.array([len(s) for s in seqs], dtype=np.int64),
        np.asarray(labels, dtype=np.int64),
        tuple(t.source_id for t in traces),
        tuple(ks),
    )


def featurize_corpus(corpus: TraceCorpus, family: ClusterFamily, selected_ks: Sequence[int],
                     jobs: int = 1) -> tuple[FeatureMatrix, FeatureMatrix]:
    ks = _check_selection(selected_ks)
    for k in ks:
        family[k]
    train = _matrix(corpus.training_normals, [1] * len(corpus.training_normals), family, ks, jobs)
    test = _matrix(corpus.test_traces, corpus.test_labels, family, ks, jobs)
    return train, test


@dataclass(frozen=True)
class ColumnSet:
    """Per-cluster feature columns for the training and test traces of one corpus."""

    train: dict[int, FeatureColumn]
    test: dict[int, FeatureColumn]

    @property
    def ks(self) -> list[int]:
        return sorted(self.train)

    def matrices(self, subset: Sequence[int]) -> tuple[FeatureMatrix, FeatureMatrix]:
        return concat_columns(self.train, subset), concat_columns(self.test, subset)


def _columns_from(m: FeatureMatrix) -> dict[int, FeatureColumn]:
    return {k: FeatureColumn(k, m.counts[:, j].copy(), m.lengths, m.labels, m.trace_ids)
            for j, k in enumerate(m.column_keys)}


def compute_columns(corpus: TraceCorpus, family: ClusterFamily, jobs: int = 1) -> ColumnSet:
    train, test = featurize_corpus(corpus, family, list(family), jobs)
    return ColumnSet(_columns_from(train), _columns_from(test))


def concat_columns(columns: Mapping[int, FeatureColumn], subset: Sequence[int]) -> FeatureMatrix:
    ks = _check_selection(subset)
    if not ks:
        raise DetectorError("empty column subset")
    cols = []
    for k in ks:
        if k not in columns:
            raise UnknownCluster(f"no column for L-{k}")
        cols.append(columns[k])
    first = cols[0]
    for c in cols[1:]:
        if len(c) != len(first) or c.trace_ids != first.trace_ids:
            raise RowCountMismatch(f"column L-{c.k} rows do not match column L-{first.k}")
    return FeatureMatrix(np.column_stack([c.counts for c in cols]), first.lengths,
                         first.labels, first.trace_ids, tuple(ks))


__all__ = [
    "ClusterFamily", "ColumnSet", "FeatureColumn", "FeatureMatrix", "FeatureVector",
    "LkCluster", "Pattern", "build_cluster", "build_family", "compute_columns",
    "concat_columns", "count_matches", "eval_trace", "featurize", "featurize_corpus", "windows",
]
