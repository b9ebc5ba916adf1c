"""
test_bp_decoder.py
Tests for normalized min-sum belief propagation.
"""

import itertools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))
from bp_decoder import BpConfig, min_sum_decode, prior_llrs
from code_model import rotated_surface_code
from gf2 import BitMatrix, matvec_mod2, rowspace_contains

PATH_PRIORS = (0.1, 0.3, 0.2)


@pytest.fixture(scope="module")
def surface3():
    return rotated_surface_code(3)


def _most_probable(h: BitMatrix, syndrome, priors) -> np.ndarray:
    """Brute-force maximum-likelihood error for a small check matrix."""
    priors = np.asarray(priors)
    best, best_p = None, -1.0
    for bits in itertools.product((0, 1), repeat=h.cols):
        e = np.array(bits, dtype=np.uint8)
        if np.array_equal(matvec_mod2(h, e), syndrome):
            p = float(np.prod(np.where(e == 1, priors, 1 - priors)))
            if p > best_p:
                best, best_p = e, p
    return best


# ─── Config ─────────────────────────────────────────────────

@pytest.mark.parametrize("kwargs", [
    {"max_iterations": 0},
    {"schedule": "layered"},
    {"scaling_factor": 0.0},
    {"scaling_factor": 1.5},
    {"channel_prior": 0.0},
    {"channel_prior": (0.1, 1.0)},
])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        BpConfig(**kwargs)


def test_prior_llrs_sign_convention():
    llr = prior_llrs(3, (0.1, 0.5, 0.9))
    assert llr[0] > 0
    assert llr[1] == pytest.approx(0.0)
    assert llr[2] < 0


# ─── Decoding ───────────────────────────────────────────────

@pytest.mark.parametrize("schedule", ["serial", "flooding"])
def test_zero_syndrome_converges_immediately(surface3, schedule):
    result = min_sum_decode(surface3.h_z, np.zeros(4, dtype=np.uint8),
                            BpConfig(schedule=schedule, channel_prior=0.05))
    assert result.converged
    assert result.iterations_used == 0
    assert not result.hard_decision.any()


def test_syndrome_length_checked(surface3):
    with pytest.raises(ValueError):
        min_sum_decode(surface3.h_z, np.zeros(5, dtype=np.uint8), BpConfig())


def test_single_x_error_corrected_up_to_stabilizer(surface3):
    for qubit in range(9):
        e = np.zeros(9, dtype=np.uint8)
        e[qubit] = 1
        result = min_sum_decode(surface3.h_z, matvec_mod2(surface3.h_z, e), BpConfig(channel_prior=0.05))
        if result.converged:
            assert rowspace_contains(surface3.h_x, e ^ result.hard_decision)


def test_center_error_decoded_exactly(surface3):
    e = np.zeros(9, dtype=np.uint8)
    e[4] = 1
    result = min_sum_decode(surface3.h_z, matvec_mod2(surface3.h_z, e), BpConfig(channel_prior=0.05))
    assert result.converged
    assert result.iterations_used == 1
    assert np.array_equal(result.hard_decision, e)


@pytest.mark.parametrize("schedule", ["serial", "flooding"])
def test_converged_means_syndrome_satisfied(schedule):
    code = rotated_surface_code(5)
    rng = np.random.default_rng(11)
    config = BpConfig(schedule=schedule, channel_prior=0.05, max_iterations=30)
    for _ in range(100):
        e = (rng.random(code.n) < 0.08).astype(np.uint8)
        syndrome = matvec_mod2(code.h_z, e)
        result = min_sum_decode(code.h_z, syndrome, config)
        assert result.iterations_used <= 30
        if result.converged:
            assert np.array_equal(matvec_mod2(code.h_z, result.hard_decision), syndrome)


def test_decoding_is_deterministic(surface3):
    syndrome = np.array([1, 0, 1, 1], dtype=np.uint8)
    a = min_sum_decode(surface3.h_z, syndrome, BpConfig(channel_prior=0.1))
    b = min_sum_decode(surface3.h_z, syndrome, BpConfig(channel_prior=0.1))
    assert np.array_equal(a.hard_decision, b.hard_decision)
    assert np.array_equal(a.soft_llrs, b.soft_llrs)
    assert (a.converged, a.iterations_used) == (b.converged, b.iterations_used)


def test_error_probabilities_match_llrs(surface3):
    result = min_sum_decode(surface3.h_z, np.array([0, 1, 1, 0], dtype=np.uint8), BpConfig(channel_prior=0.05))
    probs = result.error_probabilities()
    assert np.allclose(probs, 1.0 / (1.0 + np.exp(result.soft_llrs)))
    assert ((probs > 0.5) == (result.hard_decision == 1)).all()


# ─── Tree codes: min-sum is exact ───────────────────────────

@pytest.mark.parametrize("syndrome", [(0, 0), (1, 0), (0, 1), (1, 1)])
def test_path_code_matches_most_probable_error(syndrome):
    h = BitMatrix.from_dense([[1, 1, 0], [0, 1, 1]])
    syndrome = np.array(syndrome, dtype=np.uint8)
    result = min_sum_decode(h, syndrome, BpConfig(channel_prior=PATH_PRIORS))
    assert result.converged
    assert np.array_equal(result.hard_decision, _most_probable(h, syndrome, PATH_PRIORS))


@pytest.mark.parametrize("schedule", ["serial", "flooding"])
@pytest.mark.parametrize("syndrome", [(0,), (1,)])
def test_single_check_matches_most_probable_error(schedule, syndrome):
    h = BitMatrix.from_dense([[1, 1, 1]])
    syndrome = np.array(syndrome, dtype=np.uint8)
    result = min_sum_decode(h, syndrome, BpConfig(schedule=schedule, channel_prior=PATH_PRIORS))
    assert result.converged
    assert np.array_equal(result.hard_decision, _most_probable(h, syndrome, PATH_PRIORS))
