"""Encoder-input rendering and whitespace-token truncation.

The raw task input always leads the rendered string so that tail truncation
can never discard it. Canonical tag order:

    [Input] [Title] [Prompt] [Definition] [Avoid] [Caution] [POS1..n]

Optional instruction fields omit their tag entirely; segments are joined by
single spaces. Positive example blocks appear only in full mode; negative
examples are never rendered (the scheduler feeds them as training targets).
"""

from __future__ import annotations

import re
from enum import Enum

from .corpus import Instruction

_TOKEN = re.compile(r"\S+")
_INPUT_PREFIX = "[Input] "
_TAGS_AFTER_INPUT = ("[Title]", "[Prompt]", "[Definition]", "[Avoid]", "[Caution]")


class RenderMode(Enum):
    """Full mode carries positive-example blocks; bare mode drops them."""

    FULL_WITH_EXAMPLES = "full_with_examples"
    BARE_NO_EXAMPLES = "bare_no_examples"


def render(instruction: Instruction, input_text: str, mode: RenderMode) -> str:
    """Render instruction plus raw input into the canonical encoder string."""
    parts = [f"[Input] {input_text}", f"[Title] {instruction.title}"]
    if instruction.prompt is not None:
        parts.append(f"[Prompt] {instruction.prompt}")
    parts.append(f"[Definition] {instruction.definition}")
    if instruction.things_to_avoid is not None:
        parts.append(f"[Avoid] {instruction.things_to_avoid}")
    if instruction.caution is not None:
        parts.append(f"[Caution] {instruction.caution}")
    if mode is RenderMode.FULL_WITH_EXAMPLES:
        for idx, ex in enumerate(instruction.positive_examples(), start=1):
            block = f"[POS{idx}] [Input] {ex.input} [Output] {ex.output}"
            if ex.explanation is not None:
                block += f" [Explanation] {ex.explanation}"
            parts.append(block)
    return " ".join(parts).rstrip()


def truncate(text: str, max_tokens: int) -> str:
    """Keep the first max_tokens whitespace-delimited tokens (tail truncation).

    The kept prefix is byte-identical to the original text, so truncation is
    idempotent and a no-op on short strings.
    """
    if max_tokens < 1:
        raise ValueError(f"max_tokens must be >= 1, got {max_tokens}")
    cut = None
    for count, match in enumerate(_TOKEN.finditer(text)):
        if count == max_tokens:
            assert cut is not None
            return text[:cut]
        if count == max_tokens - 1:
            cut = match.end()
    return text


def input_segment(encoder_text: str) -> str:
    """Recover the raw input from a rendered (possibly truncated) encoder string.

    Returns "" when the string does not start with the [Input] tag. Tag
    strings are reserved; inputs containing a literal tag cut the segment
    short there.
    """
    if not encoder_text.startswith(_INPUT_PREFIX):
        return ""
    body = encoder_text[len(_INPUT_PREFIX):]
    cut = len(body)
    for tag in _TAGS_AFTER_INPUT:
        pos = body.find(tag)
        if pos != -1 and pos < cut:
            cut = pos
    return body[:cut].rstrip()
