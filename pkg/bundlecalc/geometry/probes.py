import itertools
import logging
from typing import List, Optional, Tuple

import numpy as np

from bundlecalc.common.config import PROBE_GRID, PROBE_SAMPLE_SEED, PROBE_SAMPLE_SIZE

logger = logging.getLogger(__name__)

Point = Tuple[float, ...]


def probe_lattice(m: int) -> List[Point]:
    """All points of [PROBE_GRID]^m, used for symmetry validation"""
    return [tuple(p) for p in itertools.product(PROBE_GRID, repeat=m)]


def probe_sample(m: int, size: Optional[int] = None, seed: int = PROBE_SAMPLE_SEED) -> List[Point]:
    """Seeded subset of the probe lattice for internal two-path assertions"""
    lattice = probe_lattice(m)
    size = PROBE_SAMPLE_SIZE if size is None else size
    if size >= len(lattice):
        return lattice
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(lattice), size=size, replace=False))
    return [lattice[k] for k in chosen]


def check_points(m: int, count: int, seed: int) -> List[Point]:
    """The origin followed by count seeded points drawn uniformly from [-1, 1]^m"""
    rng = np.random.default_rng(seed)
    draws = rng.uniform(-1.0, 1.0, size=(count, m))
    return [tuple(0.0 for _ in range(m))] + [tuple(float(x) for x in row) for row in draws]
