"""Trainable-model contract, native desk-scale learners, and a conformance suite.

Native learners are analytically tractable stand-ins for neural models: they
key training pairs on the normalized `[Input]` segment of the encoder text,
which makes expected scores on synthetic corpora closed-form. A handle is
single-threaded; concurrent chains must work on clones.
"""

from __future__ import annotations

import copy
import itertools
import json
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .metrics import normalize
from .template import input_segment

STATE_FORMAT = "taskstream-learner-v1"

_TOKEN_COUNTER = itertools.count(1)


class LearnerError(Exception):
    """Base class for learner failures."""


class LearnerUnavailableError(LearnerError):
    """An external learner's transport died or misbehaved."""


class TrainPhase(str, Enum):
    PRETRAIN_POSITIVE_S = "pretrain_positive_s"
    PRETRAIN_NEGATIVE_S = "pretrain_negative_s"
    FINETUNE_POSITIVE_S = "finetune_positive_s"
    HISTORY_REPLAY = "history_replay"
    TASK_NEGATIVE = "task_negative"
    TASK_POSITIVE = "task_positive"


ORIGINS = ("instruction_example", "labeled_instance", "mined_negative")


@dataclass(frozen=True)
class TrainExample:
    """One text-to-text training pair, annotated with its source task."""

    encoder_text: str
    target_text: str
    origin: str
    task_id: str

    def __post_init__(self) -> None:
        if not self.encoder_text:
            raise ValueError("encoder_text must be non-empty")
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {self.origin!r}")


@dataclass(frozen=True)
class Hyper:
    learning_rate: float = 5e-5
    epochs: int = 3
    batch_size: int = 2
    max_input_tokens: int = 1024

    def __post_init__(self) -> None:
        if (
            self.learning_rate <= 0
            or self.epochs < 1
            or self.batch_size < 1
            or self.max_input_tokens < 1
        ):
            raise ValueError(f"all hyperparameters must be positive: {self}")


@dataclass(frozen=True)
class SnapshotToken:
    value: str


class LearnerHandle(ABC):
    """Opaque trainable model with snapshot/restore/clone semantics.

    Restoring a snapshot must be behaviorally indistinguishable from the
    state at snapshot time; clones are independent lineages that inherit the
    parent's snapshot registry (so a clone can restore its parent's tokens).
    """

    kind: str = "abstract"

    def __init__(self) -> None:
        self._snapshots: dict[str, object] = {}

    @abstractmethod
    def train(self, batch: Sequence[TrainExample], phase: TrainPhase, hyper: Hyper) -> None:
        """Apply one training phase. Deterministic given state and batch order."""

    @abstractmethod
    def predict(self, encoder_texts: Sequence[str]) -> list[str]:
        """One output per input; must not mutate state."""

    @abstractmethod
    def _capture(self) -> object:
        """Deep copy of the mutable state."""

    @abstractmethod
    def _apply(self, state: object) -> None:
        """Overwrite the mutable state with a captured copy."""

    def snapshot(self) -> SnapshotToken:
        token = SnapshotToken(f"snap-{next(_TOKEN_COUNTER)}")
        self._snapshots[token.value] = self._capture()
        return token

    def restore(self, token: SnapshotToken) -> None:
        if token.value not in self._snapshots:
            raise ValueError(f"unknown snapshot token: {token.value}")
        self._apply(copy.deepcopy(self._snapshots[token.value]))

    def clone(self) -> "LearnerHandle":
        new = copy.copy(self)
        new._snapshots = dict(self._snapshots)
        new._apply(self._capture())
        return new

    # Versioned, self-describing state blob; the snapshot registry is
    # runtime-scoped and intentionally not serialized.
    def save_state(self) -> str:
        return json.dumps(
            {"format": STATE_FORMAT, "kind": self.kind, "payload": self._payload()},
            sort_keys=True,
        )

    def _payload(self) -> object:
        raise NotImplementedError(f"{self.kind} does not serialize")


class EchoLearner(LearnerHandle):
    """Ignores training; predicts the raw `[Input]` segment verbatim."""

    kind = "echo"

    def train(self, batch: Sequence[TrainExample], phase: TrainPhase, hyper: Hyper) -> None:
        pass

    def predict(self, encoder_texts: Sequence[str]) -> list[str]:
        return [input_segment(text) for text in encoder_texts]

    def _capture(self) -> object:
        return None

    def _apply(self, state: object) -> None:
        pass

    def _payload(self) -> object:
        return {}


def _memory_key(encoder_text: str) -> str:
    return " ".join(normalize(input_segment(encoder_text)))


class PerfectMemorizer(LearnerHandle):
    """Unbounded (input -> target) map; misses predict the empty string."""

    kind = "perfect_memorizer"

    def __init__(self) -> None:
        super().__init__()
        self._memory: dict[str, str] = {}

    def train(self, batch: Sequence[TrainExample], phase: TrainPhase, hyper: Hyper) -> None:
        for ex in batch:
            key = _memory_key(ex.encoder_text)
            if key:
                self._memory[key] = ex.target_text

    def predict(self, encoder_texts: Sequence[str]) -> list[str]:
        return [self._memory.get(_memory_key(text), "") for text in encoder_texts]

    def _capture(self) -> object:
        return dict(self._memory)

    def _apply(self, state: object) -> None:
        assert isinstance(state, dict)
        self._memory = dict(state)

    def _payload(self) -> object:
        return {"memory": dict(sorted(self._memory.items()))}


class WindowedMemorizer(LearnerHandle):
    """Memorizer with a per-task eviction window of the last `capacity` tasks.

    Training examples land in their task's bucket; touching a task moves its
    bucket to the most-recent slot, and the oldest bucket is dropped once
    more than `capacity` tasks are live. Forgetting is therefore exact and
    derivable by simulating the queue.
    """

    kind = "windowed_memorizer"

    def __init__(self, capacity: int) -> None:
        super().__init__()
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._buckets: OrderedDict[str, dict[str, str]] = OrderedDict()

    def train(self, batch: Sequence[TrainExample], phase: TrainPhase, hyper: Hyper) -> None:
        for ex in batch:
            bucket = self._buckets.get(ex.task_id)
            if bucket is None:
                bucket = {}
                self._buckets[ex.task_id] = bucket
                while len(self._buckets) > self.capacity:
                    self._buckets.popitem(last=False)
            else:
                self._buckets.move_to_end(ex.task_id)
            key = _memory_key(ex.encoder_text)
            if key:
                bucket[key] = ex.target_text

    def predict(self, encoder_texts: Sequence[str]) -> list[str]:
        out: list[str] = []
        for text in encoder_texts:
            key = _memory_key(text)
            hit = ""
            if key:
                for bucket in reversed(self._buckets.values()):
                    if key in bucket:
                        hit = bucket[key]
                        break
            out.append(hit)
        return out

    def retrievable_tasks(self) -> tuple[str, ...]:
        """Task ids currently in the window, oldest first."""
        return tuple(self._buckets)

    def _capture(self) -> object:
        return OrderedDict((tid, dict(b)) for tid, b in self._buckets.items())

    def _apply(self, state: object) -> None:
        assert isinstance(state, OrderedDict)
        self._buckets = OrderedDict((tid, dict(b)) for tid, b in state.items())

    def _payload(self) -> object:
        return {
            "capacity": self.capacity,
            "buckets": [[tid, dict(sorted(b.items()))] for tid, b in self._buckets.items()],
        }


def load_learner_state(blob: str) -> LearnerHandle:
    """Rebuild a native learner from a save_state blob."""
    doc = json.loads(blob)
    if doc.get("format") != STATE_FORMAT:
        raise ValueError(f"unknown state format: {doc.get('format')!r}")
    kind = doc.get("kind")
    payload = doc.get("payload", {})
    if kind == "echo":
        return EchoLearner()
    if kind == "perfect_memorizer":
        handle = PerfectMemorizer()
        handle._memory = dict(payload["memory"])
        return handle
    if kind == "windowed_memorizer":
        handle = WindowedMemorizer(capacity=int(payload["capacity"]))
        handle._buckets = OrderedDict((tid, dict(b)) for tid, b in payload["buckets"])
        return handle
    raise ValueError(f"unknown learner kind: {kind!r}")


# --------------------------------------------------------------------------
# Conformance suite

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ConformanceReport:
    kind: str
    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> tuple[CheckResult, ...]:
        return tuple(c for c in self.checks if not c.passed)


def _probe_batch(tag: str) -> list[TrainExample]:
    texts = [
        f"[Input] conformance {tag} item {i} [Title] probe [Definition] map the probe input"
        for i in range(3)
    ]
    return [
        TrainExample(
            encoder_text=text,
            target_text=f"{tag} target {i}",
            origin="instruction_example",
            task_id=f"probe_{tag}",
        )
        for i, text in enumerate(texts)
    ]


_PROBE_TEXTS = [ex.encoder_text for ex in _probe_batch("a") + _probe_batch("b")]


def conformance_suite(handle: LearnerHandle) -> ConformanceReport:
    """Exercise the snapshot/restore/clone/determinism contracts on a fresh handle."""
    hyper = Hyper()
    odd_hyper = Hyper(learning_rate=1.0, epochs=7, batch_size=1, max_input_tokens=8)
    checks: list[CheckResult] = []

    def check(name: str, passed: bool, detail: str = "") -> None:
        checks.append(CheckResult(name, passed, "" if passed else detail))

    first = handle.predict(_PROBE_TEXTS)
    second = handle.predict(_PROBE_TEXTS)
    check("predict_pure", first == second, f"{first!r} != {second!r}")

    token = handle.snapshot()
    handle.restore(token)
    check("restore_noop", handle.predict(_PROBE_TEXTS) == first, "immediate restore changed behavior")

    handle.train(_probe_batch("a"), TrainPhase.TASK_POSITIVE, hyper)
    handle.restore(token)
    check(
        "snapshot_restore",
        handle.predict(_PROBE_TEXTS) == first,
        "restore did not recover snapshot-time behavior",
    )

    sibling = handle.clone()
    sibling.train(_probe_batch("b"), TrainPhase.TASK_POSITIVE, hyper)
    check(
        "clone_independent",
        handle.predict(_PROBE_TEXTS) == first,
        "training a clone changed the original",
    )

    twin_a = handle.clone()
    twin_b = handle.clone()
    for twin in (twin_a, twin_b):
        twin.train(_probe_batch("a"), TrainPhase.TASK_NEGATIVE, hyper)
        twin.train(_probe_batch("b"), TrainPhase.TASK_POSITIVE, hyper)
    check(
        "determinism",
        twin_a.predict(_PROBE_TEXTS) == twin_b.predict(_PROBE_TEXTS),
        "identical train sequences diverged",
    )

    try:
        handle.restore(SnapshotToken("conformance-nonexistent-token"))
        check("foreign_token_rejected", False, "restore accepted an unknown token")
    except ValueError:
        check("foreign_token_rejected", True)
    check(
        "usable_after_rejection",
        handle.predict(_PROBE_TEXTS) == first,
        "failed restore altered behavior",
    )

    try:
        handle.train(_probe_batch("a"), TrainPhase.HISTORY_REPLAY, odd_hyper)
        check("accepts_any_hyper", True)
    except LearnerError as exc:
        check("accepts_any_hyper", False, f"valid hyper rejected: {exc}")

    return ConformanceReport(kind=handle.kind, checks=tuple(checks))
