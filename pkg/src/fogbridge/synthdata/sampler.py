"""Domain-balanced sampling across target domains of unequal size."""
from __future__ import annotations

from typing import Iterator, Mapping

import numpy as np


class BalancedSampler:
    """Infinite stream of (domain, index) draws.

    With ``balanced=True`` a domain is picked uniformly first, then a frame
    uniformly within it, so small domains are oversampled. With
    ``balanced=False`` frames are drawn uniformly from the union, i.e. domains
    appear in proportion to their size.
    """

    def __init__(self, sizes: Mapping[str, int], domains, rng: np.random.Generator, balanced: bool = True):
        self.domains = list(domains)
        if not self.domains:
            raise ValueError("sampler needs at least one domain")
        self.sizes = np.array([int(sizes[d]) for d in self.domains])
        empty = [d for d, n in zip(self.domains, self.sizes) if n <= 0]
        if empty:
            raise ValueError(f"empty domain(s): {empty}")
        self.rng = rng
        self.balanced = balanced
        self._weights = (np.full(len(self.domains), 1.0 / len(self.domains)) if balanced
                         else self.sizes / self.sizes.sum())

    @classmethod
    def from_index(cls, index, domains, rng: np.random.Generator, balanced: bool = True, split: str = "train"):
        return cls({d: index.count(d, split) for d in domains}, domains, rng, balanced)

    def draw(self) -> tuple[str, int]:
        k = int(self.rng.choice(len(self.domains), p=self._weights))
        return self.domains[k], int(self.rng.integers(0, self.sizes[k]))

    def draw_batch(self, n: int) -> list[tuple[str, int]]:
        return [self.draw() for _ in range(n)]

    def __iter__(self) -> Iterator[tuple[str, int]]:
        while True:
            yield self.draw()
