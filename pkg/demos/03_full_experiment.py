"""End-to-end experiment: synthetic corpus -> chains -> persisted reports.

Compares the full schedule (instruction rehearsal + negative phases) against
plain sequential fine-tuning, both directions, for a forgetful learner.
Rerunning with the same config resumes completed cells and reproduces the
result tables byte-for-byte.

Run: python3 demos/03_full_experiment.py
"""

import tempfile
from pathlib import Path

from taskstream.cli import ExperimentConfig, run_experiment
from taskstream.corpus import SyntheticSpec

with tempfile.TemporaryDirectory() as scratch:
    out = run_experiment(
        ExperimentConfig(
            out_dir=str(Path(scratch) / "results"),
            synthetic=SyntheticSpec(tasks_per_category=2, instances_per_task=10, overlap=0.4),
            k=2,
            m=2,
            distances=(1, 3, 5),
            directions=("forward", "backward"),
            strategies=("replay", "seq_finetune"),
            learner="windowed_memorizer",
            window_capacity=2,
            workers=2,
        )
    )
    print((out / "report" / "summary.txt").read_text())
    print("persisted result files:")
    for path in sorted(out.rglob("records.jsonl"))[:4]:
        print(f"  {path.relative_to(out)}")
    print("  ...")
