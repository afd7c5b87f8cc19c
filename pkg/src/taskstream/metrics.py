"""ROUGE-L scoring against multi-reference golds, plus per-task aggregation.

Conventions (documented so external comparison is possible): tokens are
lowercased, punctuation characters are removed, and text is split on
whitespace; the F-measure uses beta=1; multi-reference aggregation takes the
best F1 over references. Scores are reported on the 0-100 ROUGE-point scale.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from .corpus import Instance

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize(text: str) -> list[str]:
    """Lowercase, drop punctuation characters, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence of two token sequences."""
    if not a or not b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for tok in a:
        curr = [0]
        for j in range(1, len(b) + 1):
            if tok == b[j - 1]:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _fmeasure(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def rouge_l(candidate: str, references: Sequence[str]) -> RougeScore:
    """ROUGE-L of a candidate against the best of one or more references.

    Per reference: P = LCS/|candidate|, R = LCS/|reference| (zero when the
    respective side is empty), F1 their harmonic mean. Returns the reference
    with maximal F1; ties keep the first.
    """
    if not references:
        raise ValueError("references must be non-empty")
    cand = normalize(candidate)
    best: RougeScore | None = None
    for ref_text in references:
        ref = normalize(ref_text)
        lcs = lcs_length(cand, ref)
        precision = lcs / len(cand) if cand else 0.0
        recall = lcs / len(ref) if ref else 0.0
        score = RougeScore(precision, recall, _fmeasure(precision, recall))
        if best is None or score.f1 > best.f1:
            best = score
    assert best is not None
    return best


def score_task(predictions: Sequence[str], instances: Sequence["Instance"]) -> float:
    """Mean per-instance ROUGE-L F1 on the 0-100 scale."""
    if len(predictions) != len(instances):
        raise ValueError(
            f"{len(predictions)} predictions for {len(instances)} instances"
        )
    if not instances:
        raise ValueError("cannot score an empty instance list")
    total = sum(
        rouge_l(pred, inst.gold_outputs).f1
        for pred, inst in zip(predictions, instances)
    )
    return 100.0 * total / len(instances)
