"""
osd_postprocessor.py
--------------------
Order-0 ordered statistics decoding: the second stage that runs when the
first stage leaves the syndrome unsatisfied.

Columns are ranked by descending reliability (higher = more likely to be in
error), ties by ascending column index; the first rank(h) independent
columns in that order form the information set, the restricted system is
solved exactly and every other bit is 0.
"""

import logging
from dataclasses import dataclass

import numpy as np

from gf2 import BitMatrix, InconsistentSystemError, matvec_mod2, solve_mod2

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OsdInput:
    h: BitMatrix
    syndrome: np.ndarray
    reliabilities: np.ndarray

    def __post_init__(self):
        if np.asarray(self.syndrome).reshape(-1).shape[0] != self.h.rows:
            raise ValueError(f"Syndrome length does not match {self.h.rows} checks.")
        if np.asarray(self.reliabilities).reshape(-1).shape[0] != self.h.cols:
            raise ValueError(f"Need one reliability per column ({self.h.cols}).")


def reliability_order(reliabilities) -> np.ndarray:
    """Column order: descending reliability, ascending index on ties."""
    reliabilities = np.asarray(reliabilities, dtype=np.float64).reshape(-1)
    return np.lexsort((np.arange(reliabilities.shape[0]), -reliabilities))


def osd0_decode(osd_input: OsdInput) -> np.ndarray:
    """Solution of h·e = σ supported on the most reliable information set."""
    h = osd_input.h
    syndrome = np.asarray(osd_input.syndrome, dtype=np.uint8).reshape(-1)
    order = reliability_order(osd_input.reliabilities)

    # leftmost-pivot elimination on the permuted matrix selects the
    # information set greedily in reliability order
    try:
        permuted_solution = solve_mod2(h.take_columns(order), syndrome)
    except InconsistentSystemError:
        logger.error("OSD-0 received a syndrome outside the column space of h (%dx%d).", h.rows, h.cols)
        raise

    error = np.zeros(h.cols, dtype=np.uint8)
    error[order] = permuted_solution
    if not np.array_equal(matvec_mod2(h, error), syndrome):
        raise InconsistentSystemError("OSD-0 solution does not reproduce the syndrome.")
    return error
