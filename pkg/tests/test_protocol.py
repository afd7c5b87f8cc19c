import random
import statistics

import pytest

from taskstream.corpus import SyntheticSpec, gen_synthetic_corpus, sample_eval_instances
from taskstream.learner import (
    EchoLearner,
    Hyper,
    LearnerUnavailableError,
    PerfectMemorizer,
    WindowedMemorizer,
)
from taskstream.metrics import normalize
from taskstream.protocol import (
    ChainRecord,
    TransferConfig,
    aggregate_records,
    backward_chain_ids,
    category_breakdown,
    fixed_split_eval,
    forward_branch_ids,
    plan_backward_chain,
    plan_forward_chain,
    run_chain,
    transfer_gain,
    TransferReport,
)
from taskstream.scheduler import initialize
from taskstream.seeding import derive_seed

from instrumented import InstrumentedLearner, PredictCall, TrainCall

HYPER = Hyper(batch_size=2)
HIST_HYPER = Hyper(learning_rate=5e-6, epochs=1, batch_size=2)


# --------------------------------------------------------------------------
# Reference plan enumeration: a line-by-line transliteration of the two
# metric-calculation procedures, kept independent of the implementation.

def reference_forward(u_ids, t, i, rng):
    k = rng.randint(1, len(u_ids) - i)
    context = rng.sample([u for u in u_ids if u != t], k + i - 1)
    evolution_a = context[: k - 1] + [t]          # M_k evolves over [u1..uk-1, t]
    evolution_b = context[: k + i - 1] + [t]      # M_k+i evolves over [u1..uk+i-1, t]
    return {"k": k, "context": context, "a": evolution_a, "b": evolution_b}


def reference_backward(u_ids, t, i, rng):
    k = rng.randint(1, len(u_ids) - i)
    context = rng.sample([u for u in u_ids if u != t], k - 1 + i)
    chain = context[: k - 1] + [t] + context[k - 1:]
    return {"k": k, "chain": chain, "eval_steps": [k, k + i]}


class RiggedRandom:
    """Duck-typed rng whose randint pops from a fixed script."""

    def __init__(self, script, seed=0):
        self._script = list(script)
        self._rng = random.Random(seed)

    def randint(self, a, b):
        value = self._script.pop(0)
        assert a <= value <= b
        return value

    def sample(self, population, k):
        return self._rng.sample(population, k)


@pytest.fixture(scope="module")
def corpus():
    return gen_synthetic_corpus(
        SyntheticSpec(tasks_per_category=2, instances_per_task=10, overlap=0.4), seed=5
    )


@pytest.fixture(scope="module")
def u_tasks(corpus):
    return list(corpus.tasks[2:])  # 10 unseen tasks


@pytest.fixture(scope="module")
def s_tasks(corpus):
    return list(corpus.tasks[:2])


def _lookup(tasks):
    return {t.task_id: t for t in tasks}


def _eval_instances(task):
    return sample_eval_instances(task, 1000, derive_seed(0, "eval", task.task_id))


def test_forward_plans_match_reference_enumeration(u_tasks):
    u_ids = [t.task_id for t in u_tasks]
    for trial in range(150):
        rng_seed = derive_seed("fwd-cmp", trial)
        probe = u_ids[trial % len(u_ids)]
        distance = 1 + trial % (len(u_ids) - 1)
        ref = reference_forward(u_ids, probe, distance, random.Random(rng_seed))
        plan = plan_forward_chain(u_ids, probe, distance, random.Random(rng_seed))
        branch_a, branch_b = forward_branch_ids(plan)
        assert plan.k == ref["k"]
        assert list(plan.context) == ref["context"]
        assert list(branch_a) == ref["a"]
        assert list(branch_b) == ref["b"]
        assert plan.shared_prefix_len == ref["k"] - 1
        assert plan.eval_points == (ref["k"], ref["k"] + distance)


def test_backward_plans_match_reference_enumeration(u_tasks):
    u_ids = [t.task_id for t in u_tasks]
    for trial in range(150):
        rng_seed = derive_seed("bwd-cmp", trial)
        probe = u_ids[trial % len(u_ids)]
        distance = 1 + trial % (len(u_ids) - 1)
        ref = reference_backward(u_ids, probe, distance, random.Random(rng_seed))
        plan = plan_backward_chain(u_ids, probe, distance, random.Random(rng_seed))
        assert plan.k == ref["k"]
        assert list(backward_chain_ids(plan)) == ref["chain"]
        assert plan.eval_points == tuple(ref["eval_steps"])
        assert plan.probe_positions == (ref["k"],)


def test_forward_k_range_for_large_u():
    u_ids = [f"u{i:02d}" for i in range(56)]
    seen = set()
    for trial in range(300):
        plan = plan_forward_chain(u_ids, "u00", 40, random.Random(trial))
        assert 1 <= plan.k <= 16
        assert len(plan.context) == plan.k + 39
        assert "u00" not in plan.context
        seen.add(plan.k)
    assert {1, 16} <= seen


def test_forward_smallest_case_with_rigged_k():
    u_ids = ["t", "u1", "u2"]
    plan = plan_forward_chain(u_ids, "t", 1, RiggedRandom([1]))
    branch_a, branch_b = forward_branch_ids(plan)
    assert branch_a == ("t",)
    assert len(branch_b) == 2 and branch_b[1] == "t"


def test_backward_smallest_case_with_rigged_k():
    u_ids = ["t", "u1", "u2"]
    plan = plan_backward_chain(u_ids, "t", 1, RiggedRandom([1]))
    chain = backward_chain_ids(plan)
    assert chain[0] == "t" and len(chain) == 2
    assert plan.eval_points == (1, 2)


def test_plan_determinism_and_validation(u_tasks):
    u_ids = [t.task_id for t in u_tasks]
    a = plan_forward_chain(u_ids, u_ids[3], 2, random.Random(99))
    b = plan_forward_chain(u_ids, u_ids[3], 2, random.Random(99))
    assert a == b
    with pytest.raises(ValueError):
        plan_forward_chain(u_ids, "not-there", 2, random.Random(0))
    with pytest.raises(ValueError):
        plan_backward_chain(u_ids, u_ids[0], len(u_ids), random.Random(0))


# --------------------------------------------------------------------------
# Execution fidelity with an instrumented learner

def _chain_steps(trace):
    """Task ids of task_positive train calls, with eval markers interleaved."""
    events = []
    for call in trace:
        if isinstance(call, TrainCall) and call.phase == "task_positive":
            events.append(("step", call.task_ids[0]))
        elif isinstance(call, PredictCall):
            events.append(("eval", call.n_inputs))
    return events


def test_backward_evaluates_after_steps_k_and_k_plus_i(u_tasks):
    # i=3, k=2: one evolution, evaluations exactly after steps 2 and 5.
    u_ids = [t.task_id for t in u_tasks]
    probe = u_ids[4]
    plan = plan_backward_chain(u_ids, probe, 3, RiggedRandom([2], seed=1))
    assert plan.k == 2

    learner = InstrumentedLearner()
    run_chain(
        plan, learner, _lookup(u_tasks), _eval_instances(_lookup(u_tasks)[probe]),
        strategy="seq_finetune", hyper=HYPER, history_hyper=HIST_HYPER,
    )
    events = _chain_steps(learner.trace)
    step_indices = [idx for idx, e in enumerate(events) if e[0] == "step"]
    eval_indices = [idx for idx, e in enumerate(events) if e[0] == "eval"]
    assert len(step_indices) == 5
    # First eval right after step 2, second right after step 5.
    assert eval_indices == [step_indices[1] + 1, step_indices[4] + 1]
    chain = [e[1] for e in events if e[0] == "step"]
    assert chain == list(backward_chain_ids(plan))
    assert chain[1] == probe


def test_forward_branches_share_prefix(u_tasks):
    u_ids = [t.task_id for t in u_tasks]
    probe = u_ids[0]
    plan = plan_forward_chain(u_ids, probe, 2, RiggedRandom([3], seed=2))
    assert plan.k == 3 and plan.shared_prefix_len == 2

    learner = InstrumentedLearner()
    run_chain(
        plan, learner, _lookup(u_tasks), _eval_instances(_lookup(u_tasks)[probe]),
        strategy="seq_finetune", hyper=HYPER, history_hyper=HIST_HYPER,
        use_snapshot=False,
    )
    events = _chain_steps(learner.trace)
    evals = [idx for idx, e in enumerate(events) if e[0] == "eval"]
    assert len(evals) == 2
    first = [e[1] for e in events[: evals[0]] if e[0] == "step"]
    second = [e[1] for e in events[evals[0] + 1 : evals[1]] if e[0] == "step"]
    branch_a, branch_b = forward_branch_ids(plan)
    assert first == list(branch_a)
    assert second == list(branch_b)
    # Two branches share exactly the (k-1)-length prefix and end on the probe.
    assert first[: plan.k - 1] == second[: plan.k - 1]
    assert first[-1] == second[-1] == probe
    assert len(first) == plan.k and len(second) == plan.k + plan.distance


# --------------------------------------------------------------------------
# Gain oracles

def _factory(s_tasks, make):
    base = initialize(s_tasks, make(), Hyper(batch_size=5))
    return lambda: base.clone()


@pytest.mark.parametrize("make", [EchoLearner, PerfectMemorizer], ids=["echo", "perfect"])
@pytest.mark.parametrize("direction", ["forward", "backward"])
def test_zero_gain_oracle(corpus, s_tasks, u_tasks, make, direction):
    config = TransferConfig(m=3, distances=(1, 3), direction=direction, master_seed=0, eval_n=1000)
    report = transfer_gain(
        _factory(s_tasks, make), u_tasks, config, "replay",
        hyper=HYPER, history_hyper=HIST_HYPER,
    )
    assert report.coverage == 1.0
    for record in report.records:
        assert record.gain == 0.0
    for summary in report.summaries:
        assert summary.mean == 0.0 and summary.std == 0.0
        assert summary.tasks == len(u_tasks)


def brute_force_backward_gain(plan, u_lookup, capacity, eval_instances):
    """Replay the chain through a hand-rolled eviction queue and exact-match
    store; completely independent of the learner classes."""
    window: list[str] = []
    store: dict[str, dict[str, str]] = {}

    def train(task):
        if task.task_id not in window:
            window.append(task.task_id)
            if len(window) > capacity:
                evicted = window.pop(0)
                store.pop(evicted, None)
        else:
            window.remove(task.task_id)
            window.append(task.task_id)
        bucket = store.setdefault(task.task_id, {})
        for ex in task.instruction.positive_examples():
            bucket[" ".join(normalize(ex.input))] = ex.output

    def score(probe):
        total = 0.0
        for inst in eval_instances:
            key = " ".join(normalize(inst.input))
            prediction = store.get(probe.task_id, {}).get(key, "")
            total += 100.0 if prediction == inst.gold_outputs[0] else 0.0
        return total / len(eval_instances)

    chain = [u_lookup[tid] for tid in backward_chain_ids(plan)]
    for task in chain[: plan.k]:
        train(task)
    before = score(u_lookup[plan.probe_task])
    for task in chain[plan.k : plan.k + plan.distance]:
        train(task)
    after = score(u_lookup[plan.probe_task])
    return after - before


def test_forgetting_oracle_closed_form(corpus, s_tasks, u_tasks):
    # windowed_memorizer(c=2), p=0.4, seq_finetune: every backward gain at
    # i >= 2 equals -100*p exactly; i=1 keeps the probe in the window.
    lookup = _lookup(u_tasks)
    config = TransferConfig(m=3, distances=(1, 2, 3, 5), direction="backward", master_seed=7)
    report = transfer_gain(
        _factory(s_tasks, lambda: WindowedMemorizer(capacity=2)),
        u_tasks, config, "seq_finetune", hyper=HYPER, history_hyper=HIST_HYPER,
    )
    for record in report.records:
        expected = 0.0 if record.distance < 2 else -40.0
        assert record.gain == pytest.approx(expected, abs=1e-6), record
        assert record.score_before == pytest.approx(40.0, abs=1e-6)
        # Cross-check against the independent queue simulation.
        rng = random.Random(derive_seed(7, "backward", record.distance, record.task_id, record.rep))
        plan = plan_backward_chain(
            [t.task_id for t in u_tasks], record.task_id, record.distance, rng
        )
        simulated = brute_force_backward_gain(
            plan, lookup, 2,
            sample_eval_instances(lookup[record.task_id], 1000, derive_seed(7, "eval", record.task_id)),
        )
        assert record.gain == pytest.approx(simulated, abs=1e-9)
    for summary in report.summaries:
        expected = 0.0 if summary.distance < 2 else -40.0
        assert summary.mean == pytest.approx(expected, abs=1e-6)
        assert summary.std == pytest.approx(0.0, abs=1e-6)


def test_snapshot_branch_equivalence_on_random_chains(corpus, s_tasks, u_tasks):
    # Snapshot-optimized and naive double-evolution forward runs must agree
    # exactly for deterministic learners, across 50 random small chains.
    u_ids = [t.task_id for t in u_tasks]
    lookup = _lookup(u_tasks)
    factories = {
        "windowed": _factory(s_tasks, lambda: WindowedMemorizer(capacity=2)),
        "perfect": _factory(s_tasks, PerfectMemorizer),
    }
    checked = 0
    for trial in range(25):
        for name, factory in factories.items():
            rng_seed = derive_seed("snap-eq", name, trial)
            probe = u_ids[trial % len(u_ids)]
            distance = 1 + trial % 4
            strategy = "replay" if trial % 2 else "seq_finetune"
            plan = plan_forward_chain(u_ids, probe, distance, random.Random(rng_seed))
            eval_instances = _eval_instances(lookup[probe])
            kwargs = dict(strategy=strategy, hyper=HYPER, history_hyper=HIST_HYPER)
            fast = run_chain(plan, factory(), lookup, eval_instances, use_snapshot=True, **kwargs)
            slow = run_chain(plan, factory(), lookup, eval_instances, use_snapshot=False, **kwargs)
            assert fast == slow
            checked += 1
    assert checked == 50


def test_transfer_gain_deterministic_and_parallel_invariant(corpus, s_tasks, u_tasks):
    config = TransferConfig(m=2, distances=(1, 2), direction="forward", master_seed=3)
    runs = [
        transfer_gain(
            _factory(s_tasks, lambda: WindowedMemorizer(capacity=2)),
            u_tasks, config, "replay",
            hyper=HYPER, history_hyper=HIST_HYPER, max_workers=workers,
        )
        for workers in (1, 4, 1)
    ]
    assert runs[0].records == runs[1].records == runs[2].records
    assert runs[0].summaries == runs[1].summaries


def test_aggregation_identity(corpus, s_tasks, u_tasks):
    config = TransferConfig(m=3, distances=(2,), direction="backward", master_seed=1)
    report = transfer_gain(
        _factory(s_tasks, lambda: WindowedMemorizer(capacity=1)),
        u_tasks, config, "seq_finetune", hyper=HYPER, history_hyper=HIST_HYPER,
    )
    # Recompute g_i from the per-(t, j) records by hand.
    by_task: dict[str, list[float]] = {}
    for record in report.records:
        assert not record.failed
        by_task.setdefault(record.task_id, []).append(record.gain)
    task_means = [sum(v) / len(v) for v in by_task.values()]
    mean = sum(task_means) / len(task_means)
    std = statistics.stdev(task_means)
    summary = report.summary(2)
    assert summary.mean == pytest.approx(mean, abs=1e-9)
    assert summary.std == pytest.approx(std, abs=1e-9)
    assert summary.tasks == len(by_task)


class _FlakyLearner(PerfectMemorizer):
    """Fails on a fixed task to exercise failure accounting."""

    def __init__(self, poison_task):
        super().__init__()
        self._poison = poison_task

    def train(self, batch, phase, hyper):
        if any(ex.task_id == self._poison for ex in batch):
            raise LearnerUnavailableError("poisoned task")
        super().train(batch, phase, hyper)


def test_failed_chains_are_excluded_with_coverage_flag(corpus, s_tasks, u_tasks):
    poison = u_tasks[0].task_id
    base = initialize(s_tasks, _FlakyLearner(poison), Hyper(batch_size=5))
    config = TransferConfig(m=2, distances=(1,), direction="backward", master_seed=2)
    report = transfer_gain(
        lambda: base.clone(), u_tasks, config, "seq_finetune",
        hyper=HYPER, history_hyper=HIST_HYPER,
    )
    assert report.coverage < 1.0
    failed = [r for r in report.records if r.failed]
    assert failed and all("poisoned" in r.error for r in failed)
    # The poisoned probe task fails all its reps and is excluded.
    assert (1, poison) in report.excluded
    assert all(g.task_id != poison for g in report.task_gains)


# --------------------------------------------------------------------------
# Category views

def _record(distance, task_id, category, rep, gain):
    return ChainRecord(
        direction="forward", distance=distance, task_id=task_id, category=category,
        rep=rep, k=1, score_before=0.0, score_after=gain, gain=gain,
    )


def _report_from_records(records):
    task_gains, summaries, coverage, excluded = aggregate_records(records)
    return TransferReport(
        direction="forward", strategy="replay", records=tuple(records),
        task_gains=task_gains, summaries=summaries, coverage=coverage, excluded=excluded,
    )


def test_category_breakdown_two_categories(corpus):
    records = [
        _record(1, corpus.tasks[0].task_id, corpus.tasks[0].category, 0, 0.0),
        _record(1, corpus.tasks[2].task_id, corpus.tasks[2].category, 0, 10.0),
    ]
    report = _report_from_records(records)
    rows = category_breakdown(report, corpus)
    means = {(r.category, r.distance): r.mean for r in rows}
    assert means[(corpus.tasks[0].category, 1)] == 0.0
    assert means[(corpus.tasks[2].category, 1)] == 10.0


def test_category_breakdown_weighted_average_recovers_overall(corpus, s_tasks, u_tasks):
    config = TransferConfig(m=2, distances=(2,), direction="backward", master_seed=4)
    report = transfer_gain(
        _factory(s_tasks, lambda: WindowedMemorizer(capacity=1)),
        u_tasks, config, "seq_finetune", hyper=HYPER, history_hyper=HIST_HYPER,
    )
    rows = category_breakdown(report, corpus)
    total = sum(r.mean * r.tasks for r in rows)
    count = sum(r.tasks for r in rows)
    assert total / count == pytest.approx(report.summary(2).mean, abs=1e-9)


def test_category_breakdown_single_category_equals_overall():
    records = [_record(1, f"t{i}", "QG", 0, float(i)) for i in range(4)]
    report = _report_from_records(records)
    from taskstream.corpus import Corpus, Instance, Instruction, TaskSpec

    tasks = tuple(
        TaskSpec(
            task_id=f"t{i}", category="QG",
            instruction=Instruction(title="t", definition="d"),
            instances=(Instance(input="x", gold_outputs=("y",)),),
        )
        for i in range(4)
    )
    rows = category_breakdown(report, Corpus(tasks=tasks))
    assert len(rows) == 1
    assert rows[0].mean == pytest.approx(report.summary(1).mean, abs=1e-12)


# --------------------------------------------------------------------------
# Fixed-split positional protocol

def _one_test_task_per_category(corpus):
    seen = set()
    test_ids = []
    for task in corpus.tasks:
        if task.category not in seen:
            seen.add(task.category)
            test_ids.append(task.task_id)
    return test_ids


def test_fixed_split_placement_under_windowed_memorizer(corpus):
    # capacity-1 window: only the last-learned block survives, so the test
    # category scores 100*p when pinned sixth and 0 when pinned first.
    test_ids = _one_test_task_per_category(corpus)

    forward = fixed_split_eval(
        corpus, test_ids, "forward_sixth", lambda: WindowedMemorizer(capacity=1),
        strategy="seq_finetune", hyper=HYPER, history_hyper=HIST_HYPER, reps=3, seed=0,
    )
    assert len(forward.rows) == 6
    for row in forward.rows:
        assert row.reps == 3
        assert row.mean == pytest.approx(40.0, abs=1e-9)

    backward = fixed_split_eval(
        corpus, test_ids, "backward_first", lambda: WindowedMemorizer(capacity=1),
        strategy="seq_finetune", hyper=HYPER, history_hyper=HIST_HYPER, reps=3, seed=0,
    )
    for row in backward.rows:
        assert row.mean == pytest.approx(0.0, abs=1e-9)


def test_fixed_split_deterministic_and_missing_category(corpus):
    test_ids = _one_test_task_per_category(corpus)
    kwargs = dict(
        strategy="replay", hyper=HYPER, history_hyper=HIST_HYPER, reps=2, seed=9
    )
    a = fixed_split_eval(corpus, test_ids, "forward_sixth", PerfectMemorizer, **kwargs)
    b = fixed_split_eval(corpus, test_ids, "forward_sixth", PerfectMemorizer, **kwargs)
    assert a == b

    with pytest.raises(ValueError):
        fixed_split_eval(corpus, test_ids[:-1], "forward_sixth", PerfectMemorizer, **kwargs)
    with pytest.raises(ValueError):
        fixed_split_eval(corpus, test_ids, "sideways", PerfectMemorizer, **kwargs)
