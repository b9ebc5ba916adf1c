"""
test_osd_postprocessor.py
Tests for order-0 ordered statistics decoding.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))
from code_model import bivariate_bicycle_code, rotated_surface_code
from gf2 import BitMatrix, InconsistentSystemError, matvec_mod2
from osd_postprocessor import OsdInput, osd0_decode, reliability_order


@pytest.fixture(scope="module")
def surface5():
    return rotated_surface_code(5)


def test_reliability_order_breaks_ties_by_index():
    assert reliability_order([0.2, 0.9, 0.2, 0.9]).tolist() == [1, 3, 0, 2]


def test_input_lengths_checked():
    h = BitMatrix.identity(3)
    with pytest.raises(ValueError):
        OsdInput(h, np.zeros(2, dtype=np.uint8), np.zeros(3))
    with pytest.raises(ValueError):
        OsdInput(h, np.zeros(3, dtype=np.uint8), np.zeros(4))


def test_zero_syndrome_gives_zero_error(surface5):
    out = osd0_decode(OsdInput(surface5.h_z, np.zeros(surface5.m_z, dtype=np.uint8), np.random.rand(25)))
    assert not out.any()


def test_solution_satisfies_syndrome(surface5):
    rng = np.random.default_rng(5)
    for _ in range(200):
        e = (rng.random(25) < 0.15).astype(np.uint8)
        syndrome = matvec_mod2(surface5.h_z, e)
        out = osd0_decode(OsdInput(surface5.h_z, syndrome, rng.random(25)))
        assert np.array_equal(matvec_mod2(surface5.h_z, out), syndrome)


def test_solution_supported_on_reliable_columns():
    # column 2 duplicates column 0; higher reliability wins the pivot
    h = BitMatrix.from_dense([[1, 0, 1], [0, 1, 0]])
    syndrome = np.array([1, 0], dtype=np.uint8)
    assert osd0_decode(OsdInput(h, syndrome, np.array([0.1, 0.5, 0.9]))).tolist() == [0, 0, 1]
    assert osd0_decode(OsdInput(h, syndrome, np.array([0.9, 0.5, 0.1]))).tolist() == [1, 0, 0]


def test_ties_resolved_by_lowest_index():
    h = BitMatrix.from_dense([[1, 0, 1], [0, 1, 0]])
    out = osd0_decode(OsdInput(h, np.array([1, 0], dtype=np.uint8), np.full(3, 0.5)))
    assert out.tolist() == [1, 0, 0]


def test_column_permutation_equivariance():
    code = bivariate_bicycle_code(6, 6, [(3, 0), (0, 1), (0, 2)], [(0, 3), (1, 0), (2, 0)])
    rng = np.random.default_rng(8)
    perm = rng.permutation(code.n)
    h = code.h_x
    h_perm = h.take_columns(perm)
    for _ in range(20):
        e = (rng.random(code.n) < 0.05).astype(np.uint8)
        syndrome = matvec_mod2(h, e)
        # distinct reliabilities so no tie depends on column labels
        rel = rng.permutation(code.n) / code.n
        out = osd0_decode(OsdInput(h, syndrome, rel))
        out_perm = osd0_decode(OsdInput(h_perm, syndrome, rel[perm]))
        assert np.array_equal(out_perm, out[perm])


def test_inconsistent_syndrome_raises():
    h = BitMatrix.from_dense([[1, 1, 0], [1, 1, 0]])
    with pytest.raises(InconsistentSystemError):
        osd0_decode(OsdInput(h, np.array([1, 0], dtype=np.uint8), np.zeros(3)))
