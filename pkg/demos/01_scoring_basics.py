"""Scoring walkthrough: ROUGE-L on single pairs, then whole tasks.

Run: python3 demos/01_scoring_basics.py
"""

from taskstream import Instance, rouge_l, score_task

# ROUGE-L compares normalized token sequences by their longest common
# subsequence. Precision divides by the candidate length, recall by the
# reference length.
score = rouge_l("the cat sat", ["the cat"])
print(f"candidate 'the cat sat' vs reference 'the cat':")
print(f"  precision={score.precision:.4f} recall={score.recall:.4f} f1={score.f1:.4f}")

# Normalization lowercases, strips punctuation, and splits on whitespace,
# so formatting noise does not move the score.
print(f"  punctuation-insensitive: {rouge_l('The cat, sat.', ['the cat']).f1:.4f}")

# Multi-reference instances take the best reference.
multi = rouge_l("police killed the gunman", ["police kill the gunman", "unrelated text"])
print(f"  best-of-references f1: {multi.f1:.4f}")

# Task-level scores average per-instance F1 on a 0-100 scale.
instances = [
    Instance(input="q1", gold_outputs=("the cat",)),
    Instance(input="q2", gold_outputs=("blue sky",)),
]
predictions = ["the cat sat", "something else entirely"]
print(f"task score for one partial + one miss: {score_task(predictions, instances):.1f}")
