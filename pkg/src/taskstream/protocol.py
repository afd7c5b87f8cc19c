"""Transfer-gain estimation over sampled task chains, plus aggregation.

Forward gains compare a probe task learned after k-1 versus k+i-1 context
tasks (two branches sharing the k-1 prefix); backward gains re-evaluate a
probe learned at position k after i further tasks of the same evolution.
Each (distance, task, repetition) cell draws its chain from an independent
seeded stream, so reports are identical for any worker count.
"""

from __future__ import annotations

import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from threading import Lock
from typing import Callable, Mapping, Sequence

from .corpus import CATEGORIES, Corpus, Instance, TaskSpec, sample_eval_instances
from .learner import Hyper, LearnerError, LearnerHandle
from .metrics import score_task
from .scheduler import DEFAULT_HISTORY_HYPER, RunLog, continual_step, initialize
from .seeding import derive_seed
from .template import RenderMode, render, truncate

DIRECTIONS = ("forward", "backward")

FIXED_SPLIT_MODES = ("forward_sixth", "backward_first")


@dataclass(frozen=True)
class TransferConfig:
    m: int = 10
    distances: tuple[int, ...] = (1, 10, 20, 30, 40)
    direction: str = "forward"
    master_seed: int = 0
    eval_n: int = 1000

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if not self.distances or any(i < 1 for i in self.distances):
            raise ValueError(f"distances must be a non-empty list of i >= 1: {self.distances}")
        if self.eval_n < 1:
            raise ValueError(f"eval_n must be >= 1, got {self.eval_n}")


@dataclass(frozen=True)
class ChainPlan:
    """A sampled chain with the probe task's positions and evaluation points.

    `context` holds the sampled non-probe tasks in chain order. Forward plans
    describe two branches that share the first k-1 context tasks: branch A
    learns the probe at position k, branch B at position k+i. Backward plans
    are a single chain with the probe at position k, evaluated after steps k
    and k+i.
    """

    probe_task: str
    context: tuple[str, ...]
    direction: str
    distance: int
    k: int
    probe_positions: tuple[int, ...]
    eval_points: tuple[int, ...]
    shared_prefix_len: int


def _check_plan_args(u_ids: Sequence[str], probe: str, distance: int) -> None:
    if probe not in u_ids:
        raise ValueError(f"probe task {probe!r} is not in the unseen set")
    if distance < 1 or distance > len(u_ids) - 1:
        raise ValueError(
            f"distance must satisfy 1 <= i <= {len(u_ids) - 1}, got {distance}"
        )


def plan_forward_chain(
    u_ids: Sequence[str], probe: str, distance: int, rng: random.Random
) -> ChainPlan:
    """Sample a forward plan: k uniform on [1, |U|-i], then k+i-1 context tasks."""
    _check_plan_args(u_ids, probe, distance)
    k = rng.randint(1, len(u_ids) - distance)
    pool = [u for u in u_ids if u != probe]
    context = tuple(rng.sample(pool, k + distance - 1))
    return ChainPlan(
        probe_task=probe,
        context=context,
        direction="forward",
        distance=distance,
        k=k,
        probe_positions=(k, k + distance),
        eval_points=(k, k + distance),
        shared_prefix_len=k - 1,
    )


def plan_backward_chain(
    u_ids: Sequence[str], probe: str, distance: int, rng: random.Random
) -> ChainPlan:
    """Sample a backward plan: probe fixed at position k, i context tasks after it."""
    _check_plan_args(u_ids, probe, distance)
    k = rng.randint(1, len(u_ids) - distance)
    pool = [u for u in u_ids if u != probe]
    context = tuple(rng.sample(pool, k - 1 + distance))
    return ChainPlan(
        probe_task=probe,
        context=context,
        direction="backward",
        distance=distance,
        k=k,
        probe_positions=(k,),
        eval_points=(k, k + distance),
        shared_prefix_len=0,
    )


def backward_chain_ids(plan: ChainPlan) -> tuple[str, ...]:
    """Full chain of a backward plan: context with the probe spliced in at k."""
    cut = plan.k - 1
    return plan.context[:cut] + (plan.probe_task,) + plan.context[cut:]


def forward_branch_ids(plan: ChainPlan) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """(branch A, branch B) chains of a forward plan; both end with the probe."""
    prefix = plan.context[: plan.shared_prefix_len]
    return prefix + (plan.probe_task,), plan.context + (plan.probe_task,)


def _evaluate(
    learner: LearnerHandle, task: TaskSpec, instances: Sequence[Instance], hyper: Hyper
) -> float:
    texts = [
        truncate(render(task.instruction, inst.input, RenderMode.BARE_NO_EXAMPLES),
                 hyper.max_input_tokens)
        for inst in instances
    ]
    return score_task(learner.predict(texts), instances)


def _evolve(
    learner: LearnerHandle,
    chain: Sequence[TaskSpec],
    start: int,
    stop: int,
    *,
    strategy: str,
    hyper: Hyper,
    history_hyper: Hyper,
    history_offset: int,
    log: RunLog | None,
) -> None:
    """Apply continual steps at 1-indexed chain positions start..stop."""
    for pos in range(start, stop + 1):
        history = chain[: max(0, pos - history_offset)] if strategy == "replay" else ()
        continual_step(
            learner,
            chain[pos - 1],
            history,
            strategy=strategy,
            hyper=hyper,
            history_hyper=history_hyper,
            log=log,
        )


def run_chain(
    plan: ChainPlan,
    model: LearnerHandle,
    task_lookup: Mapping[str, TaskSpec],
    eval_instances: Sequence[Instance],
    *,
    strategy: str,
    hyper: Hyper,
    history_hyper: Hyper = DEFAULT_HISTORY_HYPER,
    history_offset: int = 2,
    use_snapshot: bool = True,
    log: RunLog | None = None,
) -> list[tuple[int, float]]:
    """Execute one plan on a clone of the initialized model.

    Returns (eval_point, score) pairs in eval order. Forward plans evolve the
    shared prefix once, snapshot, and run both branches from the snapshot;
    `use_snapshot=False` instead re-evolves each branch from scratch, which
    must score identically for deterministic learners.
    """
    probe = task_lookup[plan.probe_task]
    kwargs = dict(
        strategy=strategy,
        hyper=hyper,
        history_hyper=history_hyper,
        history_offset=history_offset,
        log=log,
    )

    if plan.direction == "backward":
        chain = [task_lookup[tid] for tid in backward_chain_ids(plan)]
        learner = model.clone()
        _evolve(learner, chain, 1, plan.k, **kwargs)
        before = _evaluate(learner, probe, eval_instances, hyper)
        _evolve(learner, chain, plan.k + 1, plan.k + plan.distance, **kwargs)
        after = _evaluate(learner, probe, eval_instances, hyper)
        return [(plan.k, before), (plan.k + plan.distance, after)]

    branch_a_ids, branch_b_ids = forward_branch_ids(plan)
    branch_a = [task_lookup[tid] for tid in branch_a_ids]
    branch_b = [task_lookup[tid] for tid in branch_b_ids]
    if use_snapshot:
        learner = model.clone()
        _evolve(learner, branch_b, 1, plan.shared_prefix_len, **kwargs)
        token = learner.snapshot()
        _evolve(learner, branch_a, plan.k, plan.k, **kwargs)
        before = _evaluate(learner, probe, eval_instances, hyper)
        learner.restore(token)
        _evolve(learner, branch_b, plan.k, plan.k + plan.distance, **kwargs)
        after = _evaluate(learner, probe, eval_instances, hyper)
    else:
        learner_a = model.clone()
        _evolve(learner_a, branch_a, 1, plan.k, **kwargs)
        before = _evaluate(learner_a, probe, eval_instances, hyper)
        learner_b = model.clone()
        _evolve(learner_b, branch_b, 1, plan.k + plan.distance, **kwargs)
        after = _evaluate(learner_b, probe, eval_instances, hyper)
    return [(plan.k, before), (plan.k + plan.distance, after)]


# --------------------------------------------------------------------------
# Transfer-gain estimation

@dataclass(frozen=True)
class ChainRecord:
    direction: str
    distance: int
    task_id: str
    category: str
    rep: int
    k: int
    score_before: float
    score_after: float
    gain: float
    failed: bool = False
    error: str = ""
    phases: tuple = ()


@dataclass(frozen=True)
class TaskGain:
    distance: int
    task_id: str
    category: str
    mean_gain: float
    rep_std: float
    reps: int


@dataclass(frozen=True)
class GainSummary:
    distance: int
    mean: float
    std: float
    tasks: int


@dataclass(frozen=True)
class TransferReport:
    direction: str
    strategy: str
    records: tuple[ChainRecord, ...]
    task_gains: tuple[TaskGain, ...]
    summaries: tuple[GainSummary, ...]
    coverage: float
    excluded: tuple[tuple[int, str], ...]

    def summary(self, distance: int) -> GainSummary:
        for s in self.summaries:
            if s.distance == distance:
                return s
        raise KeyError(distance)


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def _sample_std(values: Sequence[float]) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


def aggregate_records(
    records: Sequence[ChainRecord],
) -> tuple[tuple[TaskGain, ...], tuple[GainSummary, ...], float, tuple[tuple[int, str], ...]]:
    """Fold per-(task, rep) records into per-task and per-distance summaries.

    Failed records are excluded; a task with no surviving repetition at some
    distance is dropped from that distance's mean and listed in `excluded`.
    """
    distances = tuple(dict.fromkeys(r.distance for r in records))
    task_order: dict[str, str] = {}
    for r in records:
        task_order.setdefault(r.task_id, r.category)

    task_gains: list[TaskGain] = []
    summaries: list[GainSummary] = []
    excluded: list[tuple[int, str]] = []
    for distance in distances:
        task_means: list[float] = []
        for task_id, category in task_order.items():
            gains = [
                r.gain
                for r in records
                if r.distance == distance and r.task_id == task_id and not r.failed
            ]
            if not gains:
                excluded.append((distance, task_id))
                continue
            task_gains.append(
                TaskGain(
                    distance=distance,
                    task_id=task_id,
                    category=category,
                    mean_gain=_mean(gains),
                    rep_std=_sample_std(gains),
                    reps=len(gains),
                )
            )
            task_means.append(task_gains[-1].mean_gain)
        if task_means:
            summaries.append(
                GainSummary(
                    distance=distance,
                    mean=_mean(task_means),
                    std=_sample_std(task_means),
                    tasks=len(task_means),
                )
            )
    ok = sum(1 for r in records if not r.failed)
    coverage = ok / len(records) if records else 0.0
    return tuple(task_gains), tuple(summaries), coverage, tuple(excluded)


def transfer_gain(
    factory: Callable[[], LearnerHandle],
    u_tasks: Sequence[TaskSpec],
    config: TransferConfig,
    strategy: str,
    *,
    hyper: Hyper,
    history_hyper: Hyper = DEFAULT_HISTORY_HYPER,
    history_offset: int = 2,
    max_workers: int = 1,
    use_snapshot: bool = True,
    collect_phases: bool = False,
) -> TransferReport:
    """Estimate gains for every (distance, task, repetition) cell.

    `factory` must hand out an independent initialized learner per call; each
    cell derives its own rng stream from (master_seed, direction, i, t, j),
    so results do not depend on execution order or `max_workers`.
    """
    u_ids = tuple(t.task_id for t in u_tasks)
    lookup = {t.task_id: t for t in u_tasks}
    for distance in config.distances:
        if distance > len(u_ids) - 1:
            raise ValueError(
                f"distance {distance} needs at least {distance + 1} unseen tasks, have {len(u_ids)}"
            )

    eval_cache = {
        tid: sample_eval_instances(
            lookup[tid], config.eval_n, derive_seed(config.master_seed, "eval", tid)
        )
        for tid in u_ids
    }
    plan_fn = plan_forward_chain if config.direction == "forward" else plan_backward_chain

    def run_cell(distance: int, task_index: int, rep: int) -> ChainRecord:
        tid = u_ids[task_index]
        rng = random.Random(
            derive_seed(config.master_seed, config.direction, distance, tid, rep)
        )
        plan = plan_fn(u_ids, tid, distance, rng)
        log = RunLog() if collect_phases else None
        base = ChainRecord(
            direction=config.direction,
            distance=distance,
            task_id=tid,
            category=lookup[tid].category,
            rep=rep,
            k=plan.k,
            score_before=0.0,
            score_after=0.0,
            gain=0.0,
        )
        try:
            scores = run_chain(
                plan,
                factory(),
                lookup,
                eval_cache[tid],
                strategy=strategy,
                hyper=hyper,
                history_hyper=history_hyper,
                history_offset=history_offset,
                use_snapshot=use_snapshot,
                log=log,
            )
        except LearnerError as exc:
            return replace(base, failed=True, error=str(exc))
        (_, before), (_, after) = scores
        return replace(
            base,
            score_before=before,
            score_after=after,
            gain=after - before,
            phases=tuple(log.events) if log is not None else (),
        )

    jobs = [
        (distance, task_index, rep)
        for distance in config.distances
        for task_index in range(len(u_ids))
        for rep in range(config.m)
    ]
    results: dict[tuple[int, int, int], ChainRecord] = {}
    if max_workers <= 1:
        for job in jobs:
            results[job] = run_cell(*job)
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = {job: pool.submit(run_cell, *job) for job in jobs}
        results = {job: fut.result() for job, fut in futures.items()}

    records = tuple(results[job] for job in sorted(results))
    task_gains, summaries, coverage, excluded = aggregate_records(records)
    return TransferReport(
        direction=config.direction,
        strategy=strategy,
        records=records,
        task_gains=task_gains,
        summaries=summaries,
        coverage=coverage,
        excluded=excluded,
    )


# --------------------------------------------------------------------------
# Category views

@dataclass(frozen=True)
class CategoryGain:
    distance: int
    category: str
    mean: float
    tasks: int


def category_breakdown(report: TransferReport, corpus: Corpus) -> tuple[CategoryGain, ...]:
    """Average per-task gains over tasks sharing a category."""
    category_of = {t.task_id: t.category for t in corpus.tasks}
    out: list[CategoryGain] = []
    distances = tuple(dict.fromkeys(g.distance for g in report.task_gains))
    for distance in distances:
        for category in CATEGORIES:
            gains = [
                g.mean_gain
                for g in report.task_gains
                if g.distance == distance and category_of.get(g.task_id) == category
            ]
            if gains:
                out.append(
                    CategoryGain(
                        distance=distance,
                        category=category,
                        mean=_mean(gains),
                        tasks=len(gains),
                    )
                )
    return tuple(out)


# --------------------------------------------------------------------------
# Fixed-split positional protocol

@dataclass(frozen=True)
class CategoryScore:
    category: str
    mean: float
    std: float
    reps: int
    tasks: int


@dataclass(frozen=True)
class FixedSplitReport:
    mode: str
    reps: int
    rows: tuple[CategoryScore, ...]


def fixed_split_eval(
    corpus: Corpus,
    test_task_ids: Sequence[str],
    mode: str,
    learner_factory: Callable[[], LearnerHandle],
    *,
    strategy: str,
    hyper: Hyper,
    history_hyper: Hyper = DEFAULT_HISTORY_HYPER,
    reps: int = 10,
    seed: int = 0,
    eval_n: int = 1000,
    history_offset: int = 2,
    log: RunLog | None = None,
) -> FixedSplitReport:
    """Category-chain protocol over a fixed test split.

    The test tasks form six category blocks; for each test category the
    block is pinned last (forward_sixth) or first (backward_first), the
    other five blocks are shuffled `reps` times, and the test category's
    tasks are scored after the whole chain has been learned.
    """
    if mode not in FIXED_SPLIT_MODES:
        raise ValueError(f"mode must be one of {FIXED_SPLIT_MODES}, got {mode!r}")
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")

    test_tasks = [corpus.task_by_id(tid) for tid in test_task_ids]
    by_category: dict[str, list[TaskSpec]] = {c: [] for c in CATEGORIES}
    for task in test_tasks:
        by_category[task.category].append(task)
    missing = [c for c in CATEGORIES if not by_category[c]]
    if missing:
        raise ValueError(f"test split has no tasks for categories: {missing}")

    test_ids = set(test_task_ids)
    s_tasks = [t for t in corpus.tasks if t.task_id not in test_ids]
    if not s_tasks:
        raise ValueError("no tasks left to initialize on after removing the test split")
    base = initialize(s_tasks, learner_factory(), hyper, log=log)

    eval_cache = {
        t.task_id: sample_eval_instances(t, eval_n, derive_seed(seed, "eval", t.task_id))
        for t in test_tasks
    }

    rows: list[CategoryScore] = []
    for category in CATEGORIES:
        others = [c for c in CATEGORIES if c != category]
        rep_means: list[float] = []
        for rep in range(reps):
            rng = random.Random(derive_seed(seed, mode, category, rep))
            order = others[:]
            rng.shuffle(order)
            blocks = order + [category] if mode == "forward_sixth" else [category] + order
            chain = [task for block in blocks for task in by_category[block]]
            learner = base.clone()
            _evolve(
                learner,
                chain,
                1,
                len(chain),
                strategy=strategy,
                hyper=hyper,
                history_hyper=history_hyper,
                history_offset=history_offset,
                log=log,
            )
            scores = [
                _evaluate(learner, task, eval_cache[task.task_id], hyper)
                for task in by_category[category]
            ]
            rep_means.append(_mean(scores))
        rows.append(
            CategoryScore(
                category=category,
                mean=_mean(rep_means),
                std=_sample_std(rep_means),
                reps=reps,
                tasks=len(by_category[category]),
            )
        )
    return FixedSplitReport(mode=mode, reps=reps, rows=tuple(rows))
