"""
bp_decoder.py
-------------
Normalized min-sum belief propagation for syndrome decoding on one
parity-check matrix, with serial (check-sequential, in place) or flooding
schedules.

LLR convention: positive means "no error". Prior LLR of bit v is
log((1 - p_v) / p_v); the hard decision is 1 only for a strictly negative
posterior, so an LLR of exactly 0 decides 0. Serial sweeps visit checks in
ascending row index.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from gf2 import BitMatrix
from numba_compat import HAVE_NUMBA, njit

logger = logging.getLogger(__name__)

SCHEDULES = ("serial", "flooding")
_LLR_CAP = 1.0e3


@dataclass(frozen=True)
class BpConfig:
    max_iterations: int = 100
    schedule: str = "serial"
    scaling_factor: float = 1.0
    channel_prior: float | tuple[float, ...] = 0.01

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be ≥ 1, got {self.max_iterations}.")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}.")
        if not 0.0 < self.scaling_factor <= 1.0:
            raise ValueError(f"scaling_factor must be in (0, 1], got {self.scaling_factor}.")
        prior = np.asarray(self.channel_prior, dtype=np.float64)
        if ((prior <= 0.0) | (prior >= 1.0)).any():
            raise ValueError("channel_prior must lie strictly between 0 and 1.")


@dataclass(frozen=True, eq=False)
class BpResult:
    hard_decision: np.ndarray
    converged: bool
    iterations_used: int
    soft_llrs: np.ndarray

    def error_probabilities(self) -> np.ndarray:
        """Posterior flip probability per bit, 1 / (1 + e^LLR)."""
        return 0.5 * (1.0 - np.tanh(0.5 * self.soft_llrs))


# ─────────────────────────────────────────
# Kernels
# ─────────────────────────────────────────

@njit(cache=True)
def _check_update(v2c, c2v, start, stop, syndrome_bit, alpha):
    sign = -1.0 if syndrome_bit else 1.0
    min1 = np.inf
    min2 = np.inf
    argmin = -1
    for e in range(start, stop):
        mag = abs(v2c[e])
        if v2c[e] < 0.0:
            sign = -sign
        if mag < min1:
            min2 = min1
            min1 = mag
            argmin = e
        elif mag < min2:
            min2 = mag
    if min2 > _LLR_CAP:
        min2 = _LLR_CAP
    for e in range(start, stop):
        s = -sign if v2c[e] < 0.0 else sign
        mag = min2 if e == argmin else min1
        c2v[e] = alpha * s * mag


@njit(cache=True)
def _satisfied(check_ptr, check_vars, syndrome, hard):
    for c in range(check_ptr.shape[0] - 1):
        parity = 0
        for e in range(check_ptr[c], check_ptr[c + 1]):
            parity ^= hard[check_vars[e]]
        if parity != syndrome[c]:
            return False
    return True


@njit(cache=True)
def _min_sum(check_ptr, check_vars, syndrome, prior_llr, alpha, max_iterations, serial):
    m = check_ptr.shape[0] - 1
    n = prior_llr.shape[0]
    num_edges = check_vars.shape[0]
    c2v = np.zeros(num_edges)
    v2c = np.zeros(num_edges)
    posterior = prior_llr.copy()
    hard = np.zeros(n, dtype=np.uint8)
    for v in range(n):
        hard[v] = 1 if posterior[v] < 0.0 else 0
    if _satisfied(check_ptr, check_vars, syndrome, hard):
        return hard, posterior, 0, True

    for it in range(1, max_iterations + 1):
        if serial:
            for c in range(m):
                start, stop = check_ptr[c], check_ptr[c + 1]
                for e in range(start, stop):
                    v2c[e] = posterior[check_vars[e]] - c2v[e]
                _check_update(v2c, c2v, start, stop, syndrome[c], alpha)
                for e in range(start, stop):
                    posterior[check_vars[e]] = v2c[e] + c2v[e]
        else:
            for e in range(num_edges):
                v2c[e] = posterior[check_vars[e]] - c2v[e]
            for c in range(m):
                _check_update(v2c, c2v, check_ptr[c], check_ptr[c + 1], syndrome[c], alpha)
            for v in range(n):
                posterior[v] = prior_llr[v]
            for e in range(num_edges):
                posterior[check_vars[e]] += c2v[e]

        for v in range(n):
            hard[v] = 1 if posterior[v] < 0.0 else 0
        if _satisfied(check_ptr, check_vars, syndrome, hard):
            return hard, posterior, it, True
    return hard, posterior, max_iterations, False


# ─────────────────────────────────────────
# Operations
# ─────────────────────────────────────────

@lru_cache(maxsize=64)
def _check_adjacency(h: BitMatrix) -> tuple[np.ndarray, np.ndarray]:
    """CSR layout by check: variables of check c are check_vars[ptr[c]:ptr[c+1]]."""
    dense = h.to_dense()
    checks, variables = np.nonzero(dense)
    ptr = np.zeros(h.rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(checks, minlength=h.rows), out=ptr[1:])
    return ptr, variables.astype(np.int64)


def prior_llrs(n: int, channel_prior) -> np.ndarray:
    prior = np.broadcast_to(np.asarray(channel_prior, dtype=np.float64), (n,))
    return np.log((1.0 - prior) / prior)


def min_sum_decode(h: BitMatrix, syndrome, config: BpConfig) -> BpResult:
    """Run normalized min-sum until the syndrome is met or max_iterations."""
    syndrome = np.asarray(syndrome, dtype=np.uint8).reshape(-1)
    if syndrome.shape[0] != h.rows:
        raise ValueError(f"Syndrome has length {syndrome.shape[0]}, matrix has {h.rows} rows.")
    ptr, check_vars = _check_adjacency(h)
    hard, posterior, iterations, converged = _min_sum(
        ptr, check_vars, syndrome, prior_llrs(h.cols, config.channel_prior),
        float(config.scaling_factor), int(config.max_iterations),
        config.schedule == "serial",
    )
    return BpResult(hard_decision=hard, converged=bool(converged),
                    iterations_used=int(iterations), soft_llrs=posterior)


if not HAVE_NUMBA:
    logger.warning("numba not available; min-sum kernels run as plain Python.")


if __name__ == "__main__":
    from code_model import rotated_surface_code
    from noise_channel import compute_syndrome
    from settings import configure_logging

    configure_logging()
    surface = rotated_surface_code(3)
    word = np.zeros(surface.n, dtype=np.uint8)
    word[4] = 1
    sigma = compute_syndrome(surface, word)
    result = min_sum_decode(surface.h_z, sigma[surface.m_x:], BpConfig(channel_prior=0.05))
    print(result)
