"""A recording learner for pipeline-fidelity tests."""

from __future__ import annotations

from dataclasses import dataclass

from taskstream.learner import Hyper, PerfectMemorizer, TrainPhase
from taskstream.template import input_segment


@dataclass(frozen=True)
class TrainCall:
    phase: str
    task_ids: tuple[str, ...]
    origins: tuple[str, ...]
    batch_size: int
    learning_rate: float


@dataclass(frozen=True)
class PredictCall:
    n_inputs: int


class InstrumentedLearner(PerfectMemorizer):
    """Perfect memorizer that records every train and predict call.

    The trace is shared between clones so chain executions over cloned
    handles still land in one ordered log.
    """

    kind = "instrumented"

    def __init__(self, trace: list | None = None) -> None:
        super().__init__()
        self.trace = trace if trace is not None else []

    def train(self, batch, phase: TrainPhase, hyper: Hyper) -> None:
        self.trace.append(
            TrainCall(
                phase=phase.value,
                task_ids=tuple(dict.fromkeys(ex.task_id for ex in batch)),
                origins=tuple(sorted({ex.origin for ex in batch})),
                batch_size=len(batch),
                learning_rate=hyper.learning_rate,
            )
        )
        super().train(batch, phase, hyper)

    def predict(self, encoder_texts):
        self.trace.append(PredictCall(n_inputs=len(encoder_texts)))
        return super().predict(encoder_texts)

    def train_calls(self) -> list[TrainCall]:
        return [c for c in self.trace if isinstance(c, TrainCall)]


class InstrumentedEcho(InstrumentedLearner):
    """Recording learner whose predictions echo the input, never the gold."""

    kind = "instrumented_echo"

    def predict(self, encoder_texts):
        self.trace.append(PredictCall(n_inputs=len(encoder_texts)))
        return [input_segment(t) for t in encoder_texts]
