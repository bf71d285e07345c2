"""Template-generated figurative-language smoke dataset.

Each example opens with a sentiment sentence and follows with a situation
sentence; the label marks incongruent pairs (positive sentiment over an
unpleasant situation or vice versa). The label therefore depends on the
interaction between the two sentences: no additive bag-of-words score can
separate it, while a model that conditions each sentence on global context
can.
"""

import json

import numpy as np

POSITIVE_OPENERS = [
    "i love this so much",
    "what a great day",
    "this is just wonderful",
    "i am so happy now",
]
NEGATIVE_OPENERS = [
    "i hate this so much",
    "what a terrible day",
    "this is just awful",
    "i am so angry now",
]
PLEASANT_SITUATIONS = [
    "the sun is shining and the birds sing",
    "we won the game tonight",
    "my friends threw me a party",
    "dinner at home was delicious",
]
UNPLEASANT_SITUATIONS = [
    "my car broke down again",
    "it rained on me all day",
    "the meeting ran three hours late",
    "dinner at home was burnt to ashes",
]

# tight grid for the short two-sentence templates (longest sentence: 9 tokens)
GRID_M = 2
GRID_N = 10


def generate(seed=None):
    """All 64 opener/situation combinations, optionally shuffled by seed.

    Returns a list of (text, label) pairs; label 1 marks incongruent pairs.
    """
    examples = []
    for opener_polarity, openers in ((1, POSITIVE_OPENERS), (0, NEGATIVE_OPENERS)):
        for opener in openers:
            for situation_polarity, situations in ((1, PLEASANT_SITUATIONS),
                                                   (0, UNPLEASANT_SITUATIONS)):
                for situation in situations:
                    label = int(opener_polarity != situation_polarity)
                    examples.append((f"{opener}! {situation}.", label))
    if seed is not None:
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(examples))
        examples = [examples[i] for i in order]
    return examples


def write_jsonl(path, examples=None):
    examples = generate() if examples is None else examples
    with open(path, "w", encoding="utf-8") as f:
        for text, label in examples:
            f.write(json.dumps({"text": text, "label": label}) + "\n")
