"""
Synthetic labelled sequences for desk-scale training runs
"""

from typing import List

import numpy as np

from src.models.feature_sequence import FeatureSequence


def make_separable_dataset(
    samples: int = 200,
    frames: int = 12,
    width: int = 8,
    classes: int = 2,
    noise: float = 0.5,
    hop_ms: float = 20.0,
    seed: int = 0,
) -> List[FeatureSequence]:
    """
    Sequences whose class is the prototype added to every frame

    Two classes use a prototype and its negation; more classes use independent
    unit-norm prototypes. Labels cycle through the classes so every class is
    represented, then the order is shuffled.
    """
    if samples < classes or classes < 2:
        raise ValueError(f"need at least two classes and one sample per class, got {samples} samples, {classes} classes")

    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(classes, width))
    if classes == 2:
        directions[1] = -directions[0]
    prototypes = directions / np.linalg.norm(directions, axis=1, keepdims=True) * np.sqrt(width)

    labels = rng.permutation(np.arange(samples) % classes)
    dataset = []
    for index, label in enumerate(labels):
        values = prototypes[label] + noise * rng.normal(size=(frames, width))
        dataset.append(FeatureSequence(values=values, hop_ms=hop_ms, label=int(label), name=f"utt{index:04d}"))
    return dataset
