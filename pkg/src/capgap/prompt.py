"""Decoder prompt assembly from retrieved captions.

The prompt grammar is fixed so downstream decoders see byte-stable input:

    prompt      = prefix SP captions "." 2LF instruction
    prefix      = "Similar images have the following captions:"
    captions    = caption *(SP caption)
    instruction = "Write a caption for this image:"

Captions are joined with single spaces, a period follows the last caption,
and exactly two newline characters separate the caption list from the
instruction line. Caption text is inserted as-is apart from trimming
leading/trailing whitespace.

Presentation order is configurable: keep the retrieval (decreasing
similarity) order, reverse it, or apply a seeded uniform shuffle.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, TypeVar

import numpy as np

from .errors import EmptyPrompt

PROMPT_PREFIX = "Similar images have the following captions:"
PROMPT_INSTRUCTION = "Write a caption for this image:"

T = TypeVar("T")


class OrderingKind(Enum):
    DECREASING = "decreasing"
    INCREASING = "increasing"
    RANDOM = "random"


@dataclass(frozen=True)
class OrderingPolicy:
    """Caption presentation order; RANDOM requires a seed."""

    kind: OrderingKind = OrderingKind.DECREASING
    seed: int | None = None

    def __post_init__(self):
        if self.kind is OrderingKind.RANDOM and self.seed is None:
            raise ValueError("random ordering requires a seed")

    @classmethod
    def parse(cls, kind: str, seed: int | None = None) -> "OrderingPolicy":
        return cls(kind=OrderingKind(kind.strip().lower()), seed=seed)


def order_captions(captions: Sequence[T], policy: OrderingPolicy) -> list[T]:
    """Reorder a similarity-ranked caption list per the policy.

    The input must already be in decreasing-similarity (rank) order.
    DECREASING keeps it, INCREASING reverses it, RANDOM applies a seeded
    Fisher-Yates shuffle (uniform over permutations, deterministic per seed).
    """
    items = list(captions)
    if policy.kind is OrderingKind.DECREASING:
        return items
    if policy.kind is OrderingKind.INCREASING:
        return items[::-1]
    rng = np.random.default_rng(policy.seed)
    for i in range(len(items) - 1, 0, -1):
        j = int(rng.integers(i + 1))
        items[i], items[j] = items[j], items[i]
    return items


def build_prompt(captions: Sequence[str]) -> str:
    """Assemble the decoder prompt from ordered caption strings.

    Raises:
        EmptyPrompt: the caption list is empty.
    """
    texts = [c.strip() for c in captions]
    if not texts:
        raise EmptyPrompt("cannot build a prompt from zero captions")
    return f"{PROMPT_PREFIX} {' '.join(texts)}.\n\n{PROMPT_INSTRUCTION}"
