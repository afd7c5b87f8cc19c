"""Independent brute-force oracles shared by the test modules.

Nothing here may call into taskstream's implementations; these exist to
cross-check them.
"""

from __future__ import annotations

import itertools
import string


def is_subsequence(sub: list[str], seq: list[str]) -> bool:
    it = iter(seq)
    return all(tok in it for tok in sub)


def brute_lcs(a: list[str], b: list[str]) -> int:
    """LCS length by enumerating subsequences of the shorter list, longest first."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for length in range(len(short), -1, -1):
        for idxs in itertools.combinations(range(len(short)), length):
            if is_subsequence([short[i] for i in idxs], long_):
                return length
    return 0


_PUNCT = str.maketrans("", "", string.punctuation)


def brute_normalize(text: str) -> list[str]:
    return text.lower().translate(_PUNCT).split()


def brute_rouge_f1(candidate: str, references: list[str]) -> float:
    """Best-of-references ROUGE-L F1 via the enumeration LCS."""
    cand = brute_normalize(candidate)
    best = 0.0
    for ref_text in references:
        ref = brute_normalize(ref_text)
        lcs = brute_lcs(cand, ref)
        p = lcs / len(cand) if cand else 0.0
        r = lcs / len(ref) if ref else 0.0
        f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        best = max(best, f1)
    return best
