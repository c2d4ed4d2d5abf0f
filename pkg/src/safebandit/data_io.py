"""Dataset ingestion and bookkeeping.

Reads the svmlight/libsvm classification format ("label idx:val …") and its
qid-annotated learning-to-rank variant ("grade qid:Q idx:val …"), assigns
deduplication keys by hash-consing feature vectors, and provides uniform
subsampling and train/test splitting. Parsed features are stored sparse and
densified when instances are materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence, TypeVar

import numpy as np
from scipy import sparse

from .core import ActionId, ContextVector


@dataclass(frozen=True, eq=False)
class ClassificationInstance:
    """One supervised example viewed as a bandit round: context plus true label."""

    features: ContextVector
    label: ActionId

    def __post_init__(self) -> None:
        if self.label < 0:
            raise ValueError("label must be a non-negative class id")


@dataclass(frozen=True, eq=False)
class RankingQuery:
    """A query's candidate documents with graded relevance."""

    doc_features: np.ndarray  # (n_docs, n_features)
    grades: np.ndarray  # ints 0..4, parallel to doc rows
    query_key: Optional[int] = None

    def __post_init__(self) -> None:
        features = np.asarray(self.doc_features, dtype=np.float64)
        grades = np.asarray(self.grades, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError("doc_features must be a non-empty matrix")
        if grades.shape != (features.shape[0],):
            raise ValueError("grades must parallel the document rows")
        if grades.min() < 0 or grades.max() > 4:
            raise ValueError("relevance grades must lie in 0..4")
        object.__setattr__(self, "doc_features", features)
        object.__setattr__(self, "grades", grades)

    @property
    def n_docs(self) -> int:
        return int(self.doc_features.shape[0])


@dataclass(frozen=True)
class DatasetMeta:
    """Shape summary of a parsed dataset; mirrors the content exactly."""

    n_features: int
    n_train: int
    n_test: int = 0
    n_classes: Optional[int] = None
    grade_range: Optional[tuple[int, int]] = None
    label_map: Optional[dict[int, int]] = None  # original label -> contiguous id


def _parse_feature_tokens(tokens: Sequence[str], lineno: int
                          ) -> tuple[list[int], list[float]]:
    """Parse "idx:val" tokens; indices must be 1-based and strictly ascending."""
    indices: list[int] = []
    values: list[float] = []
    last = 0
    for token in tokens:
        head, sep, tail = token.partition(":")
        if not sep:
            raise ValueError(f"line {lineno}: malformed token {token!r}")
        try:
            idx = int(head)
            val = float(tail)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: malformed token {token!r}") from exc
        if idx < 1:
            raise ValueError(f"line {lineno}: feature indices are 1-based, got {idx}")
        if idx <= last:
            raise ValueError(
                f"line {lineno}: feature indices must be strictly ascending"
            )
        last = idx
        indices.append(idx - 1)
        values.append(val)
    return indices, values


def _strip_line(raw: str) -> str:
    # Tolerate CRLF and trailing comments.
    return raw.split("#", 1)[0].strip()


def parse_svmlight(stream: IO[str], n_features: Optional[int] = None
                   ) -> tuple[list[ClassificationInstance], DatasetMeta]:
    """Parse classification data; labels are remapped to contiguous 0-based ids.

    The remapping (sorted original labels -> 0..K−1) is recorded in the meta so
    predictions can be reported in the file's original label vocabulary.
    """
    raw_labels: list[int] = []
    rows: list[tuple[list[int], list[float]]] = []
    max_index = 0
    for lineno, raw in enumerate(stream, start=1):
        line = _strip_line(raw)
        if not line:
            continue
        tokens = line.split()
        try:
            label = int(float(tokens[0]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: malformed label {tokens[0]!r}") from exc
        indices, values = _parse_feature_tokens(tokens[1:], lineno)
        if indices:
            max_index = max(max_index, indices[-1] + 1)
        raw_labels.append(label)
        rows.append((indices, values))
    m = n_features if n_features is not None else max_index
    label_map = {orig: i for i, orig in enumerate(sorted(set(raw_labels)))}
    matrix = _rows_to_dense(rows, m)
    keys = hash_cons_keys(matrix)
    instances = [
        ClassificationInstance(
            features=ContextVector(matrix[i], dedup_key=int(keys[i])),
            label=label_map[raw_labels[i]],
        )
        for i in range(len(rows))
    ]
    meta = DatasetMeta(
        n_features=m,
        n_train=len(instances),
        n_classes=len(label_map) if label_map else None,
        label_map=label_map or None,
    )
    return instances, meta


def _rows_to_dense(rows: list[tuple[list[int], list[float]]], m: int) -> np.ndarray:
    """Assemble parsed sparse rows via CSR, then densify once."""
    if not rows:
        return np.zeros((0, max(m, 0)))
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    for i, (indices, _) in enumerate(rows):
        indptr[i + 1] = indptr[i] + len(indices)
    all_indices = np.concatenate(
        [np.asarray(idx, dtype=np.int64) for idx, _ in rows]
    ) if indptr[-1] else np.zeros(0, dtype=np.int64)
    all_values = np.concatenate(
        [np.asarray(val) for _, val in rows]
    ) if indptr[-1] else np.zeros(0)
    csr = sparse.csr_matrix((all_values, all_indices, indptr), shape=(len(rows), m))
    return np.asarray(csr.todense())


def parse_ltr_svmlight(stream: IO[str]) -> list[RankingQuery]:
    """Parse qid-annotated ranking data into queries, preserving file order."""
    order: list[str] = []
    grades_by_qid: dict[str, list[int]] = {}
    rows_by_qid: dict[str, list[tuple[list[int], list[float]]]] = {}
    max_index = 0
    for lineno, raw in enumerate(stream, start=1):
        line = _strip_line(raw)
        if not line:
            continue
        tokens = line.split()
        try:
            grade = int(float(tokens[0]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: malformed grade {tokens[0]!r}") from exc
        if not 0 <= grade <= 4:
            raise ValueError(f"line {lineno}: grade {grade} outside 0..4")
        if len(tokens) < 2 or not tokens[1].startswith("qid:"):
            raise ValueError(f"line {lineno}: missing qid annotation")
        qid = tokens[1][len("qid:"):]
        if not qid:
            raise ValueError(f"line {lineno}: empty qid")
        indices, values = _parse_feature_tokens(tokens[2:], lineno)
        if indices:
            max_index = max(max_index, indices[-1] + 1)
        if qid not in rows_by_qid:
            order.append(qid)
            rows_by_qid[qid] = []
            grades_by_qid[qid] = []
        rows_by_qid[qid].append((indices, values))
        grades_by_qid[qid].append(grade)
    queries = []
    for key, qid in enumerate(order):
        matrix = _rows_to_dense(rows_by_qid[qid], max_index)
        queries.append(
            RankingQuery(
                doc_features=matrix,
                grades=np.asarray(grades_by_qid[qid], dtype=np.int64),
                query_key=key,
            )
        )
    return queries


def write_svmlight(instances: Sequence[ClassificationInstance],
                   stream: IO[str]) -> None:
    """Emit classification instances in svmlight format (zeros omitted)."""
    for inst in instances:
        stream.write(str(int(inst.label)))
        _write_features(inst.features.values, stream)
        stream.write("\n")


def write_ltr_svmlight(queries: Sequence[RankingQuery], stream: IO[str]) -> None:
    """Emit ranking queries in qid-annotated svmlight format."""
    for q, query in enumerate(queries, start=1):
        for d in range(query.n_docs):
            stream.write(f"{int(query.grades[d])} qid:{q}")
            _write_features(query.doc_features[d], stream)
            stream.write("\n")


def _write_features(values: np.ndarray, stream: IO[str]) -> None:
    for j in np.nonzero(values)[0]:
        stream.write(f" {j + 1}:{float(values[j])!r}")


def hash_cons_keys(matrix: np.ndarray) -> np.ndarray:
    """Assign one key per distinct row: equal vectors share a key."""
    table: dict[bytes, int] = {}
    keys = np.empty(matrix.shape[0], dtype=np.int64)
    for i in range(matrix.shape[0]):
        raw = np.ascontiguousarray(matrix[i]).tobytes()
        keys[i] = table.setdefault(raw, len(table))
    return keys


T = TypeVar("T")


def subsample(items: Sequence[T], fraction: float, rng: np.random.Generator
              ) -> list[T]:
    """Uniform sample without replacement of ⌈fraction·N⌉ items, order preserved.

    For ranking datasets the items are whole queries, so a query is never
    split by subsampling.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    n = len(items)
    if fraction == 1.0:
        return list(items)
    size = int(np.ceil(fraction * n))
    chosen = np.sort(rng.choice(n, size=size, replace=False))
    return [items[int(i)] for i in chosen]


def split_train_test(items: Sequence[T], test_fraction: float,
                     rng: np.random.Generator) -> tuple[list[T], list[T]]:
    """Shuffle once and split; test gets ⌈test_fraction·N⌉ items."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    n = len(items)
    perm = rng.permutation(n)
    n_test = int(np.ceil(test_fraction * n)) if test_fraction > 0.0 else 0
    test = [items[int(i)] for i in perm[:n_test]]
    train = [items[int(i)] for i in perm[n_test:]]
    return train, test
