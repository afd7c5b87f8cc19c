"""Training schedules as learner-call plans.

Initialization on the training tasks runs positive pretraining, negative
mining, negative pretraining, and a positive finetune. Evolution over the
unseen stream supports two strategies:

  replay        per task: rehearse the instructions of chain positions
                1..i-2 at a low learning rate, train the task's negative
                examples as targets, then its positive examples
  seq_finetune  per task: positive examples only

The evolution stage trains on instruction examples exclusively; labeled
instances of unseen tasks are never used as training data (audit via
TrainExample.origin). Empty-batch phases are skipped but still logged.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .corpus import TaskSpec
from .learner import Hyper, LearnerHandle, TrainExample, TrainPhase
from .seeding import derive_seed
from .template import RenderMode, render, truncate

STRATEGIES = ("replay", "seq_finetune")

DEFAULT_HISTORY_HYPER = Hyper(learning_rate=5e-6, epochs=1, batch_size=2)


@dataclass(frozen=True)
class MinedNegative:
    """A model prediction on a training-task input that differs from every gold."""

    input: str
    predicted_output: str
    source_task: str


@dataclass(frozen=True)
class PhaseEvent:
    phase: str
    task_ids: tuple[str, ...]
    batch_size: int
    learning_rate: float
    epochs: int
    skipped: bool = False


class RunLog:
    """Append-only stream of per-phase training events."""

    def __init__(self) -> None:
        self.events: list[PhaseEvent] = []

    def record(self, event: PhaseEvent) -> None:
        self.events.append(event)

    def phases(self, include_skipped: bool = False) -> list[str]:
        return [e.phase for e in self.events if include_skipped or not e.skipped]


def _apply_phase(
    learner: LearnerHandle,
    batch: list[TrainExample],
    phase: TrainPhase,
    hyper: Hyper,
    log: RunLog | None,
) -> None:
    task_ids = tuple(dict.fromkeys(ex.task_id for ex in batch))
    if log is not None:
        log.record(
            PhaseEvent(
                phase=phase.value,
                task_ids=task_ids,
                batch_size=len(batch),
                learning_rate=hyper.learning_rate,
                epochs=hyper.epochs,
                skipped=not batch,
            )
        )
    if batch:
        learner.train(batch, phase, hyper)


def _pair(
    task: TaskSpec, input_text: str, target: str, origin: str, mode: RenderMode, hyper: Hyper
) -> TrainExample:
    encoder = truncate(render(task.instruction, input_text, mode), hyper.max_input_tokens)
    return TrainExample(
        encoder_text=encoder, target_text=target, origin=origin, task_id=task.task_id
    )


def _full_positive_batch(tasks: Sequence[TaskSpec], hyper: Hyper) -> list[TrainExample]:
    """Full-mode pairs over instruction positive examples and labeled instances."""
    batch: list[TrainExample] = []
    for task in tasks:
        mode = RenderMode.FULL_WITH_EXAMPLES
        for ex in task.instruction.positive_examples():
            batch.append(_pair(task, ex.input, ex.output, "instruction_example", mode, hyper))
        for inst in task.instances:
            batch.append(
                _pair(task, inst.input, inst.gold_outputs[0], "labeled_instance", mode, hyper)
            )
    return batch


def _bare_example_batch(
    task: TaskSpec, examples: Sequence, hyper: Hyper
) -> list[TrainExample]:
    mode = RenderMode.BARE_NO_EXAMPLES
    return [
        _pair(task, ex.input, ex.output, "instruction_example", mode, hyper)
        for ex in examples
    ]


def mine_negatives(
    model: LearnerHandle, s_tasks: Sequence[TaskSpec], hyper: Hyper
) -> list[MinedNegative]:
    """Predict on every labeled training input; keep pairs unequal to every gold.

    Equality is exact string comparison after whitespace trimming, so a
    prediction differing from a gold only by surrounding whitespace is not
    negative. Instruction examples are not mined (they are few and already
    consumed in training).
    """
    mined: list[MinedNegative] = []
    for task in s_tasks:
        texts = [
            truncate(
                render(task.instruction, inst.input, RenderMode.FULL_WITH_EXAMPLES),
                hyper.max_input_tokens,
            )
            for inst in task.instances
        ]
        predictions = model.predict(texts)
        for inst, prediction in zip(task.instances, predictions):
            golds = {g.strip() for g in inst.gold_outputs}
            if prediction.strip() not in golds:
                mined.append(
                    MinedNegative(
                        input=inst.input,
                        predicted_output=prediction,
                        source_task=task.task_id,
                    )
                )
    return mined


def initialize(
    s_tasks: Sequence[TaskSpec],
    learner: LearnerHandle,
    hyper: Hyper,
    log: RunLog | None = None,
) -> LearnerHandle:
    """Run the initialization stage on the training tasks.

    Pretrain on positives, mine negatives with the pretrained model, pretrain
    on the mined negatives as targets, then finetune on positives again.
    """
    if not s_tasks:
        raise ValueError("initialization needs at least one training task")
    for task in s_tasks:
        if not task.instances:
            raise ValueError(f"training task {task.task_id} has no labeled instances")

    positives = _full_positive_batch(s_tasks, hyper)
    _apply_phase(learner, positives, TrainPhase.PRETRAIN_POSITIVE_S, hyper, log)

    by_id = {task.task_id: task for task in s_tasks}
    negatives = [
        _pair(
            by_id[neg.source_task],
            neg.input,
            neg.predicted_output,
            "mined_negative",
            RenderMode.FULL_WITH_EXAMPLES,
            hyper,
        )
        for neg in mine_negatives(learner, s_tasks, hyper)
    ]
    _apply_phase(learner, negatives, TrainPhase.PRETRAIN_NEGATIVE_S, hyper, log)
    _apply_phase(learner, positives, TrainPhase.FINETUNE_POSITIVE_S, hyper, log)
    return learner


def continual_step(
    model: LearnerHandle,
    task: TaskSpec,
    history: Sequence[TaskSpec],
    strategy: str,
    hyper: Hyper,
    history_hyper: Hyper = DEFAULT_HISTORY_HYPER,
    log: RunLog | None = None,
) -> LearnerHandle:
    """Learn one unseen task under the given strategy.

    `history` holds the tasks at chain positions 1..i-2 (the caller applies
    the offset); it must be empty under seq_finetune.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if strategy == "seq_finetune" and history:
        raise ValueError("seq_finetune does not replay history")

    if strategy == "replay":
        replay_batch: list[TrainExample] = []
        for earlier in history:
            replay_batch.extend(
                _bare_example_batch(
                    earlier, earlier.instruction.positive_examples(), history_hyper
                )
            )
        _apply_phase(model, replay_batch, TrainPhase.HISTORY_REPLAY, history_hyper, log)
        negative_batch = _bare_example_batch(
            task, task.instruction.negative_examples(), hyper
        )
        _apply_phase(model, negative_batch, TrainPhase.TASK_NEGATIVE, hyper, log)

    positive_batch = _bare_example_batch(task, task.instruction.positive_examples(), hyper)
    _apply_phase(model, positive_batch, TrainPhase.TASK_POSITIVE, hyper, log)
    return model


def multitask_train(
    m_star: LearnerHandle,
    u_tasks: Sequence[TaskSpec],
    hyper: Hyper,
    seed: int = 0,
    log: RunLog | None = None,
) -> LearnerHandle:
    """Upper-bound baseline: one positive phase over all unseen instructions at once."""
    batch: list[TrainExample] = []
    for task in u_tasks:
        batch.extend(_bare_example_batch(task, task.instruction.positive_examples(), hyper))
    random.Random(derive_seed(seed, "multitask")).shuffle(batch)
    _apply_phase(m_star, batch, TrainPhase.TASK_POSITIVE, hyper, log)
    return m_star
