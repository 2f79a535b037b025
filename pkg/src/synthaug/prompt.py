"""Deterministic caption rewriting by vocabulary substitution.

A vocabulary is an ordered list of slots; each slot is an ordered list of
single words whose first element is the trigger matched in the caption.
Variant ``j`` is decoded in mixed radix over the slots that are active for
the caption (trigger present as a whole word), the first active slot being
the least-significant digit. Index 0 always reproduces the caption
unchanged, so a caption with active slots of sizes 3 and 3 has exactly
9 variants indexed 0..8.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .exceptions import VocabularyError

_WORD_RE = re.compile(r"^\w+$", re.UNICODE)


@dataclass(frozen=True, slots=True)
class CaptionVariant:
    source_caption: str
    variant_index: int
    text: str


class Vocabulary:
    """Ordered substitution slots with validated, pairwise-distinct triggers."""

    def __init__(self, slots: list[list[str]]):
        if not slots:
            raise VocabularyError("vocabulary has no slots")
        seen_triggers: set[str] = set()
        for i, slot in enumerate(slots):
            if not slot:
                raise VocabularyError(f"slot {i} is empty")
            lowered = [w.lower() for w in slot]
            if len(set(lowered)) != len(lowered):
                raise VocabularyError(f"slot {i} contains duplicate words: {slot}")
            for w in slot:
                if not _WORD_RE.match(w):
                    raise VocabularyError(
                        f"slot {i} word {w!r} is not a single bare word")
            trigger = lowered[0]
            if trigger in seen_triggers:
                raise VocabularyError(f"trigger word {slot[0]!r} appears in two slots")
            seen_triggers.add(trigger)
        self.slots: tuple[tuple[str, ...], ...] = tuple(tuple(s) for s in slots)

    @classmethod
    def from_json(cls, path: str | Path) -> "Vocabulary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, list):
            raise VocabularyError(f"{path}: expected a JSON list of slots")
        return cls(data)

    def to_json(self) -> list[list[str]]:
        return [list(s) for s in self.slots]

    def active_slots(self, caption: str) -> list[tuple[str, ...]]:
        """Slots whose trigger occurs as a whole word in the caption."""
        active = []
        for slot in self.slots:
            if re.search(rf"\b{re.escape(slot[0])}\b", caption, re.IGNORECASE):
                active.append(slot)
        return active

    def __repr__(self):
        return f"Vocabulary({[list(s) for s in self.slots]!r})"


def variant_count(caption: str, vocab: Vocabulary) -> int:
    """Number of caption variants: product of active slot sizes (1 if none)."""
    if not caption:
        raise ValueError("caption is empty")
    count = 1
    for slot in vocab.active_slots(caption):
        count *= len(slot)
    return count


def apply_variant(caption: str, vocab: Vocabulary, j: int) -> CaptionVariant:
    """Produce caption variant ``j``.

    The mixed-radix digit of each active slot selects the replacement word
    (digit 0 keeps the trigger itself). Every whole-word occurrence of a
    trigger is replaced in one pass, so substituted words never re-trigger
    other slots. Matching is case-insensitive; replacements keep the casing
    given in the vocabulary.
    """
    total = variant_count(caption, vocab)
    if not 0 <= j < total:
        raise IndexError(f"variant index {j} out of range [0, {total})")

    active = vocab.active_slots(caption)
    replacement: dict[str, str] = {}
    remaining = j
    for slot in active:
        digit = remaining % len(slot)
        remaining //= len(slot)
        key = slot[0].lower()
        if key in replacement:
            raise VocabularyError(f"trigger {slot[0]!r} matched by two slots")
        replacement[key] = slot[digit]

    if replacement:
        pattern = re.compile(
            r"\b(?:" + "|".join(re.escape(slot[0]) for slot in active) + r")\b",
            re.IGNORECASE)
        text = pattern.sub(lambda m: replacement[m.group(0).lower()], caption)
    else:
        text = caption
    return CaptionVariant(source_caption=caption, variant_index=j, text=text)


def enumerate_all(caption: str, vocab: Vocabulary) -> list[CaptionVariant]:
    """All variants in index order; position i equals apply_variant(..., i)."""
    return [apply_variant(caption, vocab, j) for j in range(variant_count(caption, vocab))]


def pool_variant_indices(caption: str, vocab: Vocabulary, per_image: int) -> list[int]:
    """Variant indices used when building a synthetic pool.

    Prefers the non-identity variants j=1.. in index order; cycles through
    them when fewer exist than requested. A caption with no active slots
    only has the identity variant, which is then reused.
    """
    total = variant_count(caption, vocab)
    candidates = list(range(1, total)) if total > 1 else [0]
    return [candidates[i % len(candidates)] for i in range(per_image)]
