"""Synthetic bivariate benchmark: three observed Gaussian classes plus four
hidden components in the test set, with optional label noise swapping a
fraction of the labels between classes 2 and 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .robust import LabeledDataset
from .sampler import TestDataset

_TRAIN_MEANS = np.array([[-5.0, 5.0], [-4.0, -4.0], [4.0, 4.0]])
_TRAIN_COVS = np.array([
    [[1.0, 0.9], [0.9, 1.0]],
    [[1.0, 0.0], [0.0, 1.0]],
    [[1.0, 0.0], [0.0, 1.0]],
])
_NOVEL_MEANS = np.array([[0.0, 0.0], [5.0, -10.0], [5.0, -10.0], [-10.0, -10.0]])
_NOVEL_COVS = np.array([
    [[1.0, -0.75], [-0.75, 1.0]],
    [[1.0, 0.9], [0.9, 1.0]],
    [[1.0, -0.9], [-0.9, 1.0]],
    [[0.01, 0.0], [0.0, 0.01]],
])

NOT_SMALL_TEST_SIZES = (200, 200, 250, 90, 100, 100, 10)
SMALL_TEST_SIZES = (350, 250, 250, 49, 50, 50, 1)
TRAIN_SIZES = (300, 300, 400)


@dataclass
class SimulationSpec:
    """Generating parameters; defaults reproduce the benchmark scenarios."""

    means: np.ndarray = field(default_factory=lambda: np.vstack([_TRAIN_MEANS, _NOVEL_MEANS]))
    covs: np.ndarray = field(default_factory=lambda: np.vstack([_TRAIN_COVS, _NOVEL_COVS]))
    train_sizes: tuple = TRAIN_SIZES
    test_sizes: tuple = NOT_SMALL_TEST_SIZES
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.covs = np.asarray(self.covs, dtype=float)
        if len(self.test_sizes) != self.means.shape[0]:
            raise ValueError("one test size per component required")
        if any(s <= 0 for s in self.train_sizes) or any(s <= 0 for s in self.test_sizes):
            raise ValueError("sizes must be positive")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must lie in [0, 1)")

    @property
    def n_known(self) -> int:
        return len(self.train_sizes)

    @classmethod
    def scenario(cls, novelty_size: str = "notsmall", label_noise: bool = False,
                 seed: int = 0) -> "SimulationSpec":
        sizes = {"notsmall": NOT_SMALL_TEST_SIZES, "small": SMALL_TEST_SIZES}
        if novelty_size not in sizes:
            raise ValueError("novelty_size must be 'notsmall' or 'small'")
        return cls(test_sizes=sizes[novelty_size],
                   label_noise=0.12 if label_noise else 0.0, seed=seed)


def generate_simulation(spec: SimulationSpec,
                        rng: Optional[np.random.Generator] = None):
    """Draw (training set, test set, true test components).

    Training rows come from the first ``n_known`` components; under label
    noise a fraction of class-2 units is relabeled 3 and vice versa.  Test
    rows come from every component with exactly the requested sizes; the
    returned truth vector holds the generating component (1-based).
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    J = spec.n_known

    chunks, labels = [], []
    for j, n_j in enumerate(spec.train_sizes, start=1):
        chunks.append(rng.multivariate_normal(spec.means[j - 1], spec.covs[j - 1], size=n_j))
        labels.append(np.full(n_j, j))
    train_X = np.vstack(chunks)
    train_y = np.concatenate(labels)

    if spec.label_noise > 0 and J >= 3:
        original = train_y.copy()
        for a, b in ((2, 3), (3, 2)):
            rows = np.flatnonzero(original == a)
            n_swap = int(round(spec.label_noise * rows.size))
            picked = rng.choice(rows, size=n_swap, replace=False)
            train_y[picked] = b

    test_chunks, truth = [], []
    for comp, m in enumerate(spec.test_sizes, start=1):
        test_chunks.append(rng.multivariate_normal(spec.means[comp - 1], spec.covs[comp - 1], size=m))
        truth.append(np.full(m, comp))
    test_X = np.vstack(test_chunks)
    truth = np.concatenate(truth)

    return LabeledDataset(train_X, train_y), TestDataset(test_X), truth
