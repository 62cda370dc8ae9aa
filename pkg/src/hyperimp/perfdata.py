"""Knowledge base of evaluated configurations.

CSV layout: ``algorithm,dataset,score,<hp1>,<hp2>,...``. Hyperparameter
columns are named as in the configuration space; a file may hold several
algorithms as long as the union of their columns is present, and columns an
algorithm does not use stay empty. An optional first line
``# score_range=LO,HI`` changes the accepted score bounds (default ``0,1``).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping

import numpy as np

from .config_space import Configuration, ConfigurationSpace, SpaceError

FIXED_COLUMNS = ("algorithm", "dataset", "score")


class KnowledgeBaseError(ValueError):
    """Raised when a knowledge base file cannot be loaded.

    ``diagnostics`` holds one message per rejected row.
    """

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class PerformanceRecord:
    algorithm: str
    dataset: str
    config: Configuration
    score: float
    row: int = 0


@dataclass(frozen=True)
class PerformanceTable:
    algorithm: str
    dataset: str
    records: tuple[PerformanceRecord, ...]

    def __post_init__(self):
        recs = tuple(self.records)
        if not recs:
            raise KnowledgeBaseError(f"{self.algorithm}/{self.dataset}: no records")
        for r in recs:
            if (r.algorithm, r.dataset) != (self.algorithm, self.dataset):
                raise KnowledgeBaseError("records of one table must share algorithm and dataset")
        object.__setattr__(self, "records", recs)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records], dtype=float)

    def internal_matrix(self, space: ConfigurationSpace) -> np.ndarray:
        return space.to_internal_array(r.config for r in self.records)


@dataclass
class KnowledgeBase:
    tables: dict[tuple[str, str], PerformanceTable] = field(default_factory=dict)
    spaces: dict[str, ConfigurationSpace] = field(default_factory=dict)
    rejected: list[str] = field(default_factory=list)

    def add(self, table: PerformanceTable) -> None:
        key = (table.algorithm, table.dataset)
        if key in self.tables:
            raise KnowledgeBaseError(f"duplicate table for {key}")
        self.tables[key] = table

    def __len__(self) -> int:
        return len(self.tables)

    @property
    def algorithms(self) -> list[str]:
        return sorted({a for a, _ in self.tables})

    @property
    def datasets(self) -> list[str]:
        return sorted({d for _, d in self.tables})

    def get(self, algorithm: str, dataset: str) -> PerformanceTable | None:
        return self.tables.get((algorithm, dataset))

    def filter(self, algorithm: str | None = None, dataset: str | None = None) -> list[PerformanceTable]:
        return filter_tables(self, algorithm, dataset)

    def space(self, algorithm: str) -> ConfigurationSpace:
        try:
            return self.spaces[algorithm]
        except KeyError:
            raise KnowledgeBaseError(f"no configuration space for algorithm {algorithm!r}") from None


def filter_tables(kb: KnowledgeBase, algorithm: str | None = None,
                  dataset: str | None = None) -> list[PerformanceTable]:
    """Tables matching the given predicates, ordered by ``(algorithm, dataset)``."""
    return [
        kb.tables[key]
        for key in sorted(kb.tables)
        if (algorithm is None or key[0] == algorithm) and (dataset is None or key[1] == dataset)
    ]


def best_record(table: PerformanceTable) -> PerformanceRecord:
    """Record with the highest score; the first one wins ties."""
    scores = table.scores
    return table.records[int(np.argmax(scores))]


def build_knowledge_base(records: Iterable[PerformanceRecord],
                         spaces: Mapping[str, ConfigurationSpace]) -> KnowledgeBase:
    grouped: dict[tuple[str, str], list[PerformanceRecord]] = {}
    for r in records:
        grouped.setdefault((r.algorithm, r.dataset), []).append(r)
    kb = KnowledgeBase(spaces={a: spaces[a] for a, _ in grouped if a in spaces})
    for (alg, ds), recs in sorted(grouped.items()):
        kb.add(PerformanceTable(alg, ds, tuple(recs)))
    return kb


def _parse_score_range(line: str) -> tuple[float, float] | None:
    text = line.lstrip("#").strip()
    if not text.startswith("score_range"):
        return None
    _, _, rhs = text.partition("=")
    lo, hi = (float(v) for v in rhs.split(","))
    if not lo < hi:
        raise KnowledgeBaseError(f"invalid score_range {rhs!r}")
    return lo, hi


def load_knowledge_base(path: str | os.PathLike, spaces: Mapping[str, ConfigurationSpace],
                        lenient: bool = False) -> KnowledgeBase:
    """Read and validate a knowledge base CSV.

    Every row is checked against its algorithm's space and the score bounds.
    Bad rows produce row-numbered diagnostics; unless ``lenient`` is set any
    rejection fails the whole load.
    """
    score_range = (0.0, 1.0)
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header_at = 0
    while header_at < len(lines) and lines[header_at].startswith("#"):
        parsed = _parse_score_range(lines[header_at])
        if parsed:
            score_range = parsed
        header_at += 1
    reader = csv.reader(lines[header_at:])
    header = next(reader, None)
    if header is None:
        raise KnowledgeBaseError(f"{path}: empty file")
    header = [h.strip() for h in header]
    missing = [c for c in FIXED_COLUMNS if c not in header]
    if missing:
        raise KnowledgeBaseError(f"{path}: header lacks columns {missing}")
    # A hyperparameter may share its name with a fixed column (adaboost has an
    # ``algorithm`` hyperparameter); the first occurrence is the fixed column.
    col: dict[str, int] = {}
    hp_col: dict[str, int] = {}
    for i, name in enumerate(header):
        if name in FIXED_COLUMNS and name not in col:
            col[name] = i
        elif name in hp_col:
            raise KnowledgeBaseError(f"{path}: duplicate column {name!r}")
        else:
            hp_col[name] = i

    records: list[PerformanceRecord] = []
    diagnostics: list[str] = []
    lo, hi = score_range
    for offset, row in enumerate(reader):
        rowno = header_at + offset + 2  # 1-based file line
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            diagnostics.append(f"row {rowno}: expected {len(header)} fields, got {len(row)}")
            continue
        alg = row[col["algorithm"]].strip()
        ds = row[col["dataset"]].strip()
        space = spaces.get(alg)
        if space is None:
            diagnostics.append(f"row {rowno}: unknown algorithm {alg!r}")
            continue
        if not ds:
            diagnostics.append(f"row {rowno}: empty dataset id")
            continue
        try:
            score = float(row[col["score"]])
        except ValueError:
            diagnostics.append(f"row {rowno}: score {row[col['score']]!r} is not numeric")
            continue
        if not math.isfinite(score) or not lo <= score <= hi:
            diagnostics.append(f"row {rowno}: score {score!r} outside [{lo}, {hi}]")
            continue
        absent = [n for n in space.names if n not in hp_col]
        if absent:
            diagnostics.append(f"row {rowno}: missing columns {absent} for {alg}")
            continue
        extra = [
            name for name, i in hp_col.items()
            if name not in space.names and row[i].strip()
        ]
        if extra:
            diagnostics.append(f"row {rowno}: columns {extra} must be empty for {alg}")
            continue
        try:
            config = space.validate([row[hp_col[n]].strip() for n in space.names])
        except SpaceError as exc:
            diagnostics.append(f"row {rowno}: {exc}")
            continue
        records.append(PerformanceRecord(alg, ds, config, score, rowno))

    if diagnostics and not lenient:
        raise KnowledgeBaseError(
            f"{path}: {len(diagnostics)} row(s) rejected", diagnostics)
    if not records:
        raise KnowledgeBaseError(f"{path}: no records", diagnostics)
    kb = build_knowledge_base(records, spaces)
    kb.rejected = diagnostics
    return kb


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_knowledge_base(kb: KnowledgeBase, path: str | os.PathLike) -> None:
    """Serialise ``kb`` in the CSV layout accepted by :func:`load_knowledge_base`."""
    columns: list[str] = []
    for alg in kb.algorithms:
        for name in kb.space(alg).names:
            if name not in columns:
                columns.append(name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(FIXED_COLUMNS) + columns)
        for table in filter_tables(kb):
            names = kb.space(table.algorithm).names
            for r in table.records:
                values = dict(zip(names, r.config))
                w.writerow(
                    [r.algorithm, r.dataset, repr(float(r.score))]
                    + [_format_value(values[c]) if c in values else "" for c in columns]
                )


def sample_knowledge_base_path() -> str:
    """Path of the small synthetic knowledge base shipped with the package.

    It covers the six built-in algorithms on four datasets each, so it loads
    against :func:`~hyperimp.config_space.builtin_spaces` without extra files.
    """
    return str(resources.files("hyperimp").joinpath("data", "sample_kb.csv"))
