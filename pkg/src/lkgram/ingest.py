"""Reading syscall traces from disk, splitting corpora and synthesizing test data.

A trace file holds one trace: decimal syscall numbers separated by any run of
whitespace, no header.  The ADFA-LD layout is a root with a training
directory, a validation directory (normal test traces) and an attack
directory whose per-attack subdirectories are flattened into one pool.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .errors import (
    DegenerateSplit,
    EmptyTrace,
    InvalidParams,
    MalformedToken,
    MissingDirectory,
)

DEFAULT_MAX_ID = 1023
ADFA_LAYOUT = ("Training_Data_Master", "Validation_Data_Master", "Attack_Data_Master")

_TOKEN = re.compile(rb"\S+")


@dataclass(frozen=True)
class SyscallTrace:
    syscalls: tuple[int, ...]
    source_id: str
    group: str | None = None  # attack family for attack traces; metadata only

    def __len__(self) -> int:
        return len(self.syscalls)

    def serialize(self) -> str:
        return " ".join(map(str, self.syscalls))


@dataclass(frozen=True)
class TraceCorpus:
    training_normals: tuple[SyscallTrace, ...]
    test_normals: tuple[SyscallTrace, ...]
    test_abnormals: tuple[SyscallTrace, ...]

    def __post_init__(self):
        for name in ("training_normals", "test_normals", "test_abnormals"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen: set[str] = set()
        for t in self.all_traces():
            if t.source_id in seen:
                raise InvalidParams(f"source id {t.source_id!r} appears in more than one set")
            seen.add(t.source_id)

    def all_traces(self) -> Iterable[SyscallTrace]:
        yield from self.training_normals
        yield from self.test_normals
        yield from self.test_abnormals

    @property
    def test_traces(self) -> tuple[SyscallTrace, ...]:
        return self.test_normals + self.test_abnormals

    @property
    def test_labels(self) -> list[int]:
        return [1] * len(self.test_normals) + [-1] * len(self.test_abnormals)


@dataclass(frozen=True)
class SetStats:
    count: int
    total_syscalls: int

    @property
    def mean_length(self) -> Fraction | None:
        if self.count == 0:
            return None
        return Fraction(self.total_syscalls, self.count)


@dataclass(frozen=True)
class CorpusStats:
    training_normals: SetStats
    test_normals: SetStats
    test_abnormals: SetStats

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.training_normals.count, self.test_normals.count, self.test_abnormals.count)

    @property
    def mean_lengths(self) -> tuple[Fraction | None, ...]:
        return (
            self.training_normals.mean_length,
            self.test_normals.mean_length,
            self.test_abnormals.mean_length,
        )

    def render(self) -> str:
        lines = [f"{'set':<18}{'traces':>8}{'mean length':>14}"]
        for name in ("training_normals", "test_normals", "test_abnormals"):
            s = getattr(self, name)
            mean = "-" if s.mean_length is None else f"{float(s.mean_length):.3f}"
            lines.append(f"{name:<18}{s.count:>8}{mean:>14}")
        lines.append("counts: " + " / ".join(str(c) for c in self.counts))
        return "\n".join(lines)


def parse_trace(text: bytes | str, source_id: str, max_id: int = DEFAULT_MAX_ID) -> SyscallTrace:
    if isinstance(text, str):
        text = text.encode("ascii", errors="surrogateescape")
    ids = []
    for i, m in enumerate(_TOKEN.finditer(text)):
        tok = m.group()
        if not tok.isdigit():
            raise MalformedToken(source_id, i, m.start(), tok.decode("ascii", "replace"))
        value = int(tok)
        if value > max_id:
            raise MalformedToken(source_id, i, m.start(), tok.decode("ascii"))
        ids.append(value)
    if not ids:
        raise EmptyTrace(f"{source_id}: trace has no syscalls")
    return SyscallTrace(tuple(ids), source_id)


def read_trace(path: str | Path, source_id: str | None = None, max_id: int = DEFAULT_MAX_ID,
               group: str | None = None) -> SyscallTrace:
    path = Path(path)
    trace = parse_trace(path.read_bytes(), source_id or str(path), max_id)
    if group is not None:
        trace = SyscallTrace(trace.syscalls, trace.source_id, group)
    return trace


def _trace_files(directory: Path, recursive: bool) -> list[Path]:
    it = directory.rglob("*") if recursive else directory.iterdir()
    files = [p for p in it if p.is_file() and not p.name.startswith(".")]
    return sorted(files, key=lambda p: p.relative_to(directory).as_posix())


def _load_dir(root: Path, name: str, recursive: bool, max_id: int, jobs: int,
              group_by_subdir: bool = False) -> list[SyscallTrace]:
    directory = root / name
    if not directory.is_dir():
        raise MissingDirectory(f"missing directory: {directory}")
    files = _trace_files(directory, recursive)

    def job(p: Path) -> SyscallTrace:
        rel = p.relative_to(directory)
        group = rel.parts[0] if group_by_subdir and len(rel.parts) > 1 else None
        return read_trace(p, f"{name}/{rel.as_posix()}", max_id, group)

    if jobs > 1 and len(files) > 64:
        return Parallel(n_jobs=jobs)(delayed(job)(p) for p in files)
    return [job(p) for p in files]


def load_adfa_corpus(root: str | Path, layout: Sequence[str] = ADFA_LAYOUT,
                     recursive: bool = True, max_id: int = DEFAULT_MAX_ID,
                     jobs: int = 1) -> TraceCorpus:
    """Load a three-directory corpus (training, validation, attack).

    Attack files are collected recursively when `recursive` is set; the
    first path component below the attack directory is kept as the trace's
    group.  File order is lexicographic by relative path.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingDirectory(f"missing directory: {root}")
    train_dir, valid_dir, attack_dir = layout
    return TraceCorpus(
        _load_dir(root, train_dir, False, max_id, jobs),
        _load_dir(root, valid_dir, False, max_id, jobs),
        _load_dir(root, attack_dir, recursive, max_id, jobs, group_by_subdir=True),
    )


def load_split_corpus(root: str | Path, layout: Sequence[str], train_fraction: float = 0.5,
                      seed: int = 0, recursive: bool = True, max_id: int = DEFAULT_MAX_ID,
                      jobs: int = 1) -> TraceCorpus:
    """Load a two-directory corpus (normal, abnormal) and split the normals."""
    root = Path(root)
    if not root.is_dir():
        raise MissingDirectory(f"missing directory: {root}")
    normal_dir, attack_dir = layout
    normals = _load_dir(root, normal_dir, False, max_id, jobs)
    train, test = split_normals(normals, train_fraction, seed)
    return TraceCorpus(train, test, _load_dir(root, attack_dir, recursive, max_id, jobs,
                                              group_by_subdir=True))


def load_corpus(root: str | Path, layout: Sequence[str] = ADFA_LAYOUT, **kwargs) -> TraceCorpus:
    if len(layout) == 3:
        kwargs.pop("train_fraction", None)
        kwargs.pop("seed", None)
        return load_adfa_corpus(root, layout, **kwargs)
    if len(layout) == 2:
        return load_split_corpus(root, layout, **kwargs)
    raise InvalidParams(f"layout needs 2 or 3 directory names, got {list(layout)}")


def split_normals(traces: Sequence[SyscallTrace], train_fraction: float,
                  seed: int) -> tuple[list[SyscallTrace], list[SyscallTrace]]:
    n = len(traces)
    if n == 0:
        raise DegenerateSplit("cannot split an empty trace list")
    if not 0 < train_fraction < 1:
        raise DegenerateSplit(f"train fraction must lie in (0, 1), got {train_fraction}")
    n_train = math.floor(Fraction(train_fraction) * n + Fraction(1, 2))
    if n_train == 0 or n_train == n:
        raise DegenerateSplit(f"split of {n} traces at {train_fraction} leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return [traces[i] for i in order[:n_train]], [traces[i] for i in order[n_train:]]


@dataclass(frozen=True)
class SyntheticParams:
    base_cycle_length: int = 8
    alphabet_size: int = 16
    trace_length: int = 200
    n_normal: int = 50
    n_abnormal: int = 50
    noise_rate: float = 0.01
    injection_rate: float = 0.01
    n_train: int | None = None  # defaults to n_normal
    segment_length: int = 3
    foreign_alphabet_size: int = 8

    def validate(self, max_id: int = DEFAULT_MAX_ID) -> None:
        for name in ("base_cycle_length", "alphabet_size", "trace_length", "segment_length",
                     "foreign_alphabet_size"):
            if getattr(self, name) <= 0:
                raise InvalidParams(f"{name} must be positive")
        for name in ("n_normal", "n_abnormal"):
            if getattr(self, name) < 0:
                raise InvalidParams(f"{name} must be non-negative")
        if self.n_train is not None and self.n_train <= 0:
            raise InvalidParams("n_train must be positive")
        for name in ("noise_rate", "injection_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParams(f"{name} must lie in [0, 1]")
        if self.alphabet_size + self.foreign_alphabet_size - 1 > max_id:
            raise InvalidParams("foreign ids exceed the alphabet bound")

    @classmethod
    def from_mapping(cls, values: dict) -> "SyntheticParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise InvalidParams(f"unknown synthetic parameters: {sorted(unknown)}")
        types = {"noise_rate": float, "injection_rate": float}
        return cls(**{k: (None if v in (None, "", "none") else types.get(k, int)(v))
                      for k, v in values.items()})


def _normal_trace(rng: np.random.Generator, cycle: np.ndarray, p: SyntheticParams) -> np.ndarray:
    reps = -(-p.trace_length // len(cycle))
    trace = np.tile(cycle, reps)[: p.trace_length].copy()
    if p.noise_rate > 0:
        hit = rng.random(p.trace_length) < p.noise_rate
        trace[hit] = rng.integers(0, p.alphabet_size, size=int(hit.sum()))
    return trace


def generate_synthetic(params: SyntheticParams, seed: int, max_id: int = DEFAULT_MAX_ID) -> TraceCorpus:
    """Cycle-plus-noise corpus with foreign-id segments injected into abnormals.

    Normal traces repeat one base cycle drawn from ids ``0..alphabet_size-1``
    and substitute each position with a random in-alphabet id at
    `noise_rate`.  Abnormal traces start as normal traces; each position
    starts an overwritten segment of foreign ids (ids at or above
    `alphabet_size`) with probability `injection_rate`, and at least one
    segment is always injected.
    """
    params.validate(max_id)
    rng = np.random.default_rng(seed)
    cycle = rng.integers(0, params.alphabet_size, size=params.base_cycle_length)
    n_train = params.n_normal if params.n_train is None else params.n_train

    def make(prefix: str, count: int, abnormal: bool) -> list[SyscallTrace]:
        out = []
        for i in range(count):
            trace = _normal_trace(rng, cycle, params)
            if abnormal:
                starts = np.flatnonzero(rng.random(params.trace_length) < params.injection_rate)
                if starts.size == 0:
                    starts = rng.integers(0, params.trace_length, size=1)
                for s in starts:
                    seg = trace[s: s + params.segment_length]
                    seg[:] = params.alphabet_size + rng.integers(
                        0, params.foreign_alphabet_size, size=len(seg))
            out.append(SyscallTrace(tuple(int(v) for v in trace), f"{prefix}/{i:05d}"))
        return out

    train = make("train", n_train, False)
    normals = make("normal", params.n_normal, False)
    abnormals = make("abnormal", params.n_abnormal, True)
    return TraceCorpus(train, normals, abnormals)


def write_corpus(corpus: TraceCorpus, root: str | Path, layout: Sequence[str] = ADFA_LAYOUT) -> None:
    """Write a corpus in the three-directory layout, one trace per file."""
    root = Path(root)
    for name, traces in zip(layout, (corpus.training_normals, corpus.test_normals,
                                     corpus.test_abnormals)):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for t in traces:
            (d / (Path(t.source_id).name + ".txt")).write_text(t.serialize() + "\n")


def _set_stats(traces: Sequence[SyscallTrace]) -> SetStats:
    return SetStats(len(traces), sum(len(t) for t in traces))


def corpus_stats(corpus: TraceCorpus) -> CorpusStats:
    return CorpusStats(
        _set_stats(corpus.training_normals),
        _set_stats(corpus.test_normals),
        _set_stats(corpus.test_abnormals),
    )


__all__ = [
    "ADFA_LAYOUT", "DEFAULT_MAX_ID", "CorpusStats", "SetStats", "SyntheticParams",
    "SyscallTrace", "TraceCorpus", "corpus_stats", "generate_synthetic", "load_adfa_corpus",
    "load_corpus", "load_split_corpus", "parse_trace", "read_trace", "split_normals",
    "write_corpus",
]
