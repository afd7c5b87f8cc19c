"""Forgetting curve: backward-transfer gains of a capacity-limited memorizer.

A synthetic corpus gives every task a private vocabulary and makes a fixed
fraction p of each task's evaluation instances appear verbatim among its
instruction examples. A memorizer that only keeps the last c tasks therefore
scores 100*p right after learning a task and 0 once the task leaves the
window, so the backward gain at distance i is exactly -100*p for i >= c.

Run: python3 demos/02_forgetting_curve.py
"""

from taskstream import (
    Hyper,
    SyntheticSpec,
    TransferConfig,
    WindowedMemorizer,
    gen_synthetic_corpus,
    initialize,
    split_corpus,
    transfer_gain,
)

corpus = gen_synthetic_corpus(
    SyntheticSpec(tasks_per_category=2, instances_per_task=10, overlap=0.4), seed=0
)
split = split_corpus(corpus, k=2, seed=0)

base = initialize(split.train_tasks, WindowedMemorizer(capacity=2), Hyper(batch_size=5))
report = transfer_gain(
    base.clone,
    split.unseen_tasks,
    TransferConfig(m=3, distances=(1, 2, 3, 5, 8), direction="backward", master_seed=0),
    "seq_finetune",
    hyper=Hyper(batch_size=2),
)

print("backward transfer, windowed memorizer (capacity 2), overlap p=0.4")
print("distance  mean gain  std   (expected: 0 below capacity, -40 beyond)")
for summary in report.summaries:
    print(f"{summary.distance:>8}  {summary.mean:>9.2f}  {summary.std:>4.2f}")
