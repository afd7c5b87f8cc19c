"""Deterministic harness for simulating and scoring continual learning from task instructions."""

from .corpus import (
    CATEGORIES,
    Corpus,
    Instance,
    Instruction,
    InstructionExample,
    SplitResult,
    SyntheticSpec,
    TaskSpec,
    gen_synthetic_corpus,
    load_corpus,
    sample_eval_instances,
    split_corpus,
    validate_task,
    write_corpus,
)
from .external import ExternalLearner
from .learner import (
    ConformanceReport,
    EchoLearner,
    Hyper,
    LearnerHandle,
    LearnerUnavailableError,
    PerfectMemorizer,
    SnapshotToken,
    TrainExample,
    TrainPhase,
    WindowedMemorizer,
    conformance_suite,
)
from .metrics import RougeScore, lcs_length, normalize, rouge_l, score_task
from .protocol import (
    ChainPlan,
    TransferConfig,
    TransferReport,
    category_breakdown,
    fixed_split_eval,
    plan_backward_chain,
    plan_forward_chain,
    run_chain,
    transfer_gain,
)
from .scheduler import (
    MinedNegative,
    RunLog,
    continual_step,
    initialize,
    mine_negatives,
    multitask_train,
)
from .template import RenderMode, input_segment, render, truncate

__version__ = "0.1.0"
