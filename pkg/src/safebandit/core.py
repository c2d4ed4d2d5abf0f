"""Shared domain types: contexts, actions, logged feedback, and reward-range bookkeeping.

Everything here is a plain value: policies, estimators, environments and the
deployment loop all communicate through these types. Instances are treated as
immutable after construction; `InteractionLog` is the single exception and is
append-only with a single writer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional, Sequence

import numpy as np

# Action identifiers are plain ints in [0, n).
ActionId = int

# Propensities below this are rejected at append time: they would turn single
# inverse-propensity weights into ~1e12 and swamp every running sum.
MIN_PROPENSITY = 1e-12


@dataclass(frozen=True, eq=False)
class ContextVector:
    """A dense feature vector, optionally tagged with a deduplication key.

    The dedup key identifies exact-duplicate contexts so that logged feedback
    can be accumulated per unique (action, context) pair. Loaders assign keys
    by indexing a unique-row table; streams that never repeat a context may
    leave the key unset and degrade to one key per interaction.
    """

    values: np.ndarray
    dedup_key: Optional[int] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("context must be a non-empty 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("context contains non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class LoggedInteraction:
    """One (context, action, reward, propensity) tuple of bandit feedback."""

    context: ContextVector
    action: ActionId
    reward: float
    propensity: float

    def __post_init__(self) -> None:
        validate_feedback(self.action, self.reward, self.propensity)


def validate_feedback(action: int, reward: float, propensity: float) -> None:
    """Reject rewards outside [0, 1] and non-positive or tiny propensities."""
    if action < 0:
        raise ValueError(f"action id must be non-negative, got {action}")
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward must lie in [0, 1], got {reward}")
    if not propensity > MIN_PROPENSITY:
        raise ValueError(
            f"propensity must be positive (> {MIN_PROPENSITY:g}), got {propensity}"
        )
    if propensity > 1.0:
        raise ValueError(f"propensity must not exceed 1, got {propensity}")


class InteractionLog:
    """Append-only sequence of logged interactions.

    Internally column-oriented so estimators can work on flat arrays; each
    distinct context occupies one row of an internal matrix, shared by every
    interaction carrying the same dedup key. Single writer; snapshots may be
    read concurrently.
    """

    def __init__(self) -> None:
        self._actions: list[int] = []
        self._rewards: list[float] = []
        self._propensities: list[float] = []
        self._rows: list[int] = []  # per-entry row into the context table
        self._keys: list[Optional[int]] = []
        self._context_rows: list[np.ndarray] = []
        self._key_to_row: dict[int, int] = {}

    @property
    def t(self) -> int:
        return len(self._actions)

    def __len__(self) -> int:
        return self.t

    def append(self, item: LoggedInteraction) -> "InteractionLog":
        validate_feedback(item.action, item.reward, item.propensity)
        key = item.context.dedup_key
        if key is not None and key in self._key_to_row:
            row = self._key_to_row[key]
        else:
            row = len(self._context_rows)
            self._context_rows.append(item.context.values)
            if key is not None:
                self._key_to_row[key] = row
        self._rows.append(row)
        self._keys.append(key)
        self._actions.append(int(item.action))
        self._rewards.append(float(item.reward))
        self._propensities.append(float(item.propensity))
        return self

    def __iter__(self) -> Iterator[LoggedInteraction]:
        for i in range(self.t):
            yield self[i]

    def __getitem__(self, i: int) -> LoggedInteraction:
        return LoggedInteraction(
            context=ContextVector(self._context_rows[self._rows[i]], self._keys[i]),
            action=self._actions[i],
            reward=self._rewards[i],
            propensity=self._propensities[i],
        )

    # Column views used by the estimators.
    def actions(self) -> np.ndarray:
        return np.asarray(self._actions, dtype=np.int64)

    def rewards(self) -> np.ndarray:
        return np.asarray(self._rewards, dtype=np.float64)

    def propensities(self) -> np.ndarray:
        return np.asarray(self._propensities, dtype=np.float64)

    def context_row_indices(self) -> np.ndarray:
        return np.asarray(self._rows, dtype=np.int64)

    def context_matrix(self) -> np.ndarray:
        """Unique context rows, in first-seen order."""
        if not self._context_rows:
            raise ValueError("log is empty")
        return np.vstack(self._context_rows)

    # --- JSONL serialization -------------------------------------------------
    #
    # One interaction per line. The first line mentioning a dedup key carries
    # the full vector plus "key"; subsequent lines for that key store just the
    # integer in the "context" field. Unkeyed contexts are always written in
    # full. Python's float repr is shortest round-trip, so values survive a
    # write/read cycle bit-exactly.

    def dump_jsonl(self, fp: IO[str]) -> None:
        written: set[int] = set()
        for i in range(self.t):
            key = self._keys[i]
            record: dict = {}
            if key is not None and key in written:
                record["context"] = key
            else:
                record["context"] = self._context_rows[self._rows[i]].tolist()
                if key is not None:
                    record["key"] = key
                    written.add(key)
            record["action"] = self._actions[i]
            record["reward"] = self._rewards[i]
            record["propensity"] = self._propensities[i]
            fp.write(json.dumps(record) + "\n")

    @classmethod
    def load_jsonl(cls, fp: IO[str]) -> "InteractionLog":
        log = cls()
        vectors: dict[int, np.ndarray] = {}
        for lineno, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            raw = record["context"]
            key = record.get("key")
            if isinstance(raw, int):
                if raw not in vectors:
                    raise ValueError(f"line {lineno}: unknown context key {raw}")
                values, key = vectors[raw], raw
            else:
                values = np.asarray(raw, dtype=np.float64)
                if key is not None:
                    vectors[key] = values
            log.append(
                LoggedInteraction(
                    context=ContextVector(values, key),
                    action=record["action"],
                    reward=record["reward"],
                    propensity=record["propensity"],
                )
            )
        return log


def log_append(log: InteractionLog, item: LoggedInteraction) -> InteractionLog:
    """Append one interaction, enforcing feedback invariants."""
    return log.append(item)


def reward_bound_b(max_reward: float, min_propensity: float) -> float:
    """Upper bound on any single inverse-propensity-weighted reward."""
    if max_reward <= 0.0:
        raise ValueError(f"max_reward must be positive, got {max_reward}")
    if min_propensity <= 0.0:
        raise ValueError(f"min_propensity must be positive, got {min_propensity}")
    return max_reward / min_propensity


@dataclass(frozen=True)
class RewardBounds:
    """Declared reward/propensity range of an experiment; b = max_r / min_p."""

    max_reward: float
    min_propensity: float

    def __post_init__(self) -> None:
        reward_bound_b(self.max_reward, self.min_propensity)

    @property
    def b(self) -> float:
        return self.max_reward / self.min_propensity


@dataclass(frozen=True, eq=False)
class RankedList:
    """A permutation of a candidate set together with its (sorted) scores."""

    doc_ids: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        doc_ids = np.asarray(self.doc_ids, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if doc_ids.ndim != 1 or scores.shape != doc_ids.shape:
            raise ValueError("doc_ids and scores must be parallel 1-D arrays")
        if doc_ids.size == 0:
            raise ValueError("ranked list must contain at least one document")
        if not np.array_equal(np.sort(doc_ids), np.arange(doc_ids.size)):
            raise ValueError("doc_ids must be a permutation of 0..k-1")
        if np.any(np.diff(scores) > 0.0):
            raise ValueError("scores must be non-increasing along the list")
        object.__setattr__(self, "doc_ids", doc_ids)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return int(self.doc_ids.size)

    def rank_of(self, doc_id: int) -> int:
        """1-based position of a document in the list."""
        pos = np.nonzero(self.doc_ids == doc_id)[0]
        if pos.size == 0:
            raise KeyError(f"doc {doc_id} not in ranked list")
        return int(pos[0]) + 1


# Clicks are simulated only on the first CLICK_CUTOFF displayed documents.
CLICK_CUTOFF = 10


@dataclass(frozen=True)
class ClickRecord:
    """Examination/click outcome for one displayed document.

    `propensity` is the examination probability at the displayed rank, i.e.
    the inverse-propensity denominator for counterfactual ranking updates.
    """

    rank: int  # 1-based display position
    doc_id: int
    examined: bool
    clicked: bool
    propensity: float

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank is 1-based and must be >= 1")
        if self.clicked and not self.examined:
            raise ValueError("a clicked document must have been examined")
        if self.clicked and self.rank > CLICK_CUTOFF:
            raise ValueError(f"clicks beyond rank {CLICK_CUTOFF} are impossible")
        if self.clicked and not 0.0 < self.propensity <= 1.0:
            raise ValueError("clicked records need a propensity in (0, 1]")


@dataclass(frozen=True, eq=False)
class RankingInteraction:
    """One logged round of the ranking task: candidates shown, clicks observed."""

    doc_features: np.ndarray  # (n_docs, n_features) of the candidate set
    clicks: tuple[ClickRecord, ...]
    query_key: Optional[int] = None

    def __post_init__(self) -> None:
        features = np.asarray(self.doc_features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError("doc_features must be a non-empty (docs, features) matrix")
        object.__setattr__(self, "doc_features", features)
        object.__setattr__(self, "clicks", tuple(self.clicks))

    def clicked_records(self) -> tuple[ClickRecord, ...]:
        return tuple(c for c in self.clicks if c.clicked)
