import os

# Pin the JIT thread pool before numba is imported anywhere, so thread-count
# determinism checks can flip between 1 and 8 threads at runtime.
os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest

from amrvpt.model import Cell, CellSet


@pytest.fixture(scope="session")
def uniform8() -> CellSet:
    """8x8x8 finest-level cells, smooth ramp values."""
    idx = np.stack(np.meshgrid(np.arange(8), np.arange(8), np.arange(8),
                               indexing="ij"), axis=-1).reshape(-1, 3)
    vals = 0.1 + 0.8 * (idx.sum(axis=1) / 21.0)
    return CellSet(idx.astype(np.int64), np.zeros(len(idx), dtype=np.int64),
                   vals, num_levels=1)


@pytest.fixture(scope="session")
def two_level_mixed() -> CellSet:
    """One level-1 cell plus the 8 level-0 cells of the neighbor octant.

    World is [0,4)x[0,2)x[0,2): a coarse cell on the left, fine cells on
    the right. Handy for continuity and brick tests across a level jump.
    """
    cells = [Cell((0, 0, 0), 1, 2.0)]
    for z in range(2):
        for y in range(2):
            for x in range(2):
                cells.append(Cell((2 + x, y, z), 0, float(1 + x + y + z)))
    return CellSet.from_cells(cells)


def rng_cells(seed: int, n_side: int = 6, levels: int = 2) -> CellSet:
    """Random non-overlapping cell set: coarse grid with random refinement."""
    rng = np.random.default_rng(seed)
    cells = []
    w = 1 << (levels - 1)
    for bz in range(n_side):
        for by in range(n_side):
            for bx in range(n_side):
                base = (bx * w, by * w, bz * w)
                if rng.random() < 0.5:
                    cells.append(Cell(base, levels - 1, float(rng.random())))
                else:
                    for oz in range(w):
                        for oy in range(w):
                            for ox in range(w):
                                cells.append(Cell((base[0] + ox, base[1] + oy,
                                                   base[2] + oz), 0,
                                                  float(rng.random())))
    return CellSet.from_cells(cells)
