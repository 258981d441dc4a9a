"""Prompt grammar and caption presentation order."""

import numpy as np
import pytest

from capgap import OrderingKind, OrderingPolicy, build_prompt, order_captions
from capgap.errors import EmptyPrompt

CAPTIONS4 = [
    "a dog runs on grass",
    "a cat sleeps on a couch",
    "two birds fly over water",
    "a child rides a red bicycle",
]


class TestBuildPrompt:
    def test_single_caption_golden(self):
        assert build_prompt(["a dog runs on grass"]) == (
            "Similar images have the following captions: a dog runs on grass."
            "\n\nWrite a caption for this image:"
        )

    def test_two_caption_golden(self):
        assert build_prompt(CAPTIONS4[:2]) == (
            "Similar images have the following captions: a dog runs on grass "
            "a cat sleeps on a couch.\n\nWrite a caption for this image:"
        )

    def test_four_caption_golden(self):
        assert build_prompt(CAPTIONS4) == (
            "Similar images have the following captions: a dog runs on grass "
            "a cat sleeps on a couch two birds fly over water "
            "a child rides a red bicycle.\n\nWrite a caption for this image:"
        )

    def test_exact_newline_count(self):
        prompt = build_prompt(CAPTIONS4)
        assert prompt.count("\n") == 2
        assert "\n\n" in prompt
        assert not prompt.endswith("\n")

    def test_surrounding_whitespace_trimmed(self):
        assert build_prompt(["  a dog runs on grass\t"]) == \
            build_prompt(["a dog runs on grass"])

    def test_interior_text_untouched(self):
        prompt = build_prompt(["a dog,  with spaces"])
        assert "a dog,  with spaces." in prompt

    def test_empty_list_rejected(self):
        with pytest.raises(EmptyPrompt):
            build_prompt([])


class TestOrdering:
    def test_decreasing_keeps_rank_order(self):
        policy = OrderingPolicy(OrderingKind.DECREASING)
        assert order_captions([3, 1, 2], policy) == [3, 1, 2]

    def test_increasing_reverses(self):
        policy = OrderingPolicy(OrderingKind.INCREASING)
        assert order_captions([3, 1, 2], policy) == [2, 1, 3]

    def test_random_is_seed_deterministic(self):
        policy = OrderingPolicy(OrderingKind.RANDOM, seed=17)
        items = list(range(10))
        assert order_captions(items, policy) == order_captions(items, policy)

    def test_random_differs_between_seeds(self):
        items = list(range(10))
        outs = {tuple(order_captions(items, OrderingPolicy(OrderingKind.RANDOM, seed=s)))
                for s in range(8)}
        assert len(outs) > 1

    def test_random_is_a_permutation(self):
        items = list(range(9))
        out = order_captions(items, OrderingPolicy(OrderingKind.RANDOM, seed=3))
        assert sorted(out) == items

    def test_random_shuffle_algorithm(self):
        # documented construction: backwards swap loop driven by rng.integers
        items = list(range(6))
        rng = np.random.default_rng(23)
        expected = list(items)
        for i in range(len(expected) - 1, 0, -1):
            j = int(rng.integers(i + 1))
            expected[i], expected[j] = expected[j], expected[i]
        got = order_captions(items, OrderingPolicy(OrderingKind.RANDOM, seed=23))
        assert got == expected

    def test_random_requires_seed(self):
        with pytest.raises(ValueError):
            OrderingPolicy(OrderingKind.RANDOM)

    def test_input_list_not_mutated(self):
        items = [3, 1, 2]
        order_captions(items, OrderingPolicy(OrderingKind.RANDOM, seed=1))
        assert items == [3, 1, 2]

    def test_parse(self):
        assert OrderingPolicy.parse("decreasing").kind is OrderingKind.DECREASING
        assert OrderingPolicy.parse("Increasing").kind is OrderingKind.INCREASING
        assert OrderingPolicy.parse("random", seed=5).seed == 5
        with pytest.raises(ValueError):
            OrderingPolicy.parse("sideways")
