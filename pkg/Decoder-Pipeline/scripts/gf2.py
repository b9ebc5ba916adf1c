"""
gf2.py
------
Exact linear algebra over GF(2): rank, row reduction, kernel bases and
linear solves on bit-packed binary matrices.

Rows are stored packed eight columns per byte (numpy.packbits, big-endian
bit order) and elimination works with whole-row XORs on the packed form.
Pivots are always chosen leftmost column first, topmost row first, so every
reduction (and therefore every kernel basis) is reproducible.
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)


class InconsistentSystemError(ValueError):
    """Raised by solve_mod2 when the right-hand side is not in the column space."""


class BitMatrix:
    """Immutable dense binary matrix with bit-packed rows."""

    __slots__ = ("rows", "cols", "_packed", "_dense")

    def __init__(self, packed: np.ndarray, cols: int):
        packed = np.array(packed, dtype=np.uint8, copy=True, ndmin=2)
        width = (cols + 7) // 8
        if packed.shape[1] != width:
            raise ValueError(f"Packed width {packed.shape[1]} does not match {cols} columns.")
        packed.setflags(write=False)
        self.rows = int(packed.shape[0])
        self.cols = int(cols)
        self._packed = packed
        self._dense = None

    # ─────────────────────────────────────────
    # Construction
    # ─────────────────────────────────────────

    @classmethod
    def from_dense(cls, array) -> "BitMatrix":
        dense = np.asarray(array)
        if dense.ndim != 2:
            raise ValueError(f"Expected a 2-D array, got shape {dense.shape}.")
        if dense.size and not np.isin(dense, (0, 1)).all():
            raise ValueError("BitMatrix entries must be 0 or 1.")
        dense = dense.astype(np.uint8)
        return cls(np.packbits(dense, axis=1), dense.shape[1])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "BitMatrix":
        return cls.from_dense(np.zeros((rows, cols), dtype=np.uint8))

    @classmethod
    def identity(cls, size: int) -> "BitMatrix":
        return cls.from_dense(np.eye(size, dtype=np.uint8))

    @classmethod
    def vstack(cls, *matrices: "BitMatrix") -> "BitMatrix":
        cols = {m.cols for m in matrices}
        if len(cols) != 1:
            raise ValueError(f"Cannot stack matrices with column counts {sorted(cols)}.")
        return cls(np.vstack([m.packed for m in matrices]), cols.pop())

    # ─────────────────────────────────────────
    # Views
    # ─────────────────────────────────────────

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    def to_dense(self) -> np.ndarray:
        """Unpacked read-only uint8 array of shape (rows, cols)."""
        if self._dense is None:
            dense = np.unpackbits(self._packed, axis=1, count=self.cols)
            dense.setflags(write=False)
            self._dense = dense
        return self._dense

    def take_columns(self, order) -> "BitMatrix":
        return BitMatrix.from_dense(self.to_dense()[:, np.asarray(order, dtype=np.int64)])

    def take_rows(self, order) -> "BitMatrix":
        return BitMatrix(self._packed[np.asarray(order, dtype=np.int64)], self.cols)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._packed, other._packed)

    def __hash__(self) -> int:
        return hash((self.rows, self.cols, self._packed.tobytes()))

    def __repr__(self) -> str:
        return f"BitMatrix({self.rows}x{self.cols}, nnz={int(self.to_dense().sum())})"


# ─────────────────────────────────────────
# Elimination core
# ─────────────────────────────────────────

def _eliminate(packed: np.ndarray, cols: int, rhs: np.ndarray | None = None,
               full: bool = True) -> list[int]:
    """
    Row-reduce `packed` in place. Pivot i ends up in row i.
    With full=True rows above each pivot are cleared too (reduced echelon form).
    `rhs`, when given, receives the same row operations.
    """
    rows = packed.shape[0]
    pivots: list[int] = []
    r = 0
    for col in range(cols):
        if r == rows:
            break
        byte, mask = col >> 3, np.uint8(0x80 >> (col & 7))
        below = np.flatnonzero(packed[r:, byte] & mask)
        if below.size == 0:
            continue
        p = r + int(below[0])
        if p != r:
            packed[[r, p]] = packed[[p, r]]
            if rhs is not None:
                rhs[[r, p]] = rhs[[p, r]]
        if full:
            hits = np.flatnonzero(packed[:, byte] & mask)
        else:
            hits = r + 1 + np.flatnonzero(packed[r + 1:, byte] & mask)
        hits = hits[hits != r]
        if hits.size:
            packed[hits] ^= packed[r]
            if rhs is not None:
                rhs[hits] ^= rhs[r]
        pivots.append(col)
        r += 1
    return pivots


def _as_bits(vector, length: int, name: str = "vector") -> np.ndarray:
    bits = np.asarray(vector, dtype=np.uint8).reshape(-1)
    if bits.shape[0] != length:
        raise ValueError(f"{name} has length {bits.shape[0]}, expected {length}.")
    return bits & 1


def row_reduce(m: BitMatrix) -> tuple[BitMatrix, list[int]]:
    """Reduced row echelon form and its pivot columns."""
    packed = m.packed.copy()
    pivots = _eliminate(packed, m.cols, full=True)
    return BitMatrix(packed, m.cols), pivots


# ─────────────────────────────────────────
# Operations
# ─────────────────────────────────────────

def rank(m: BitMatrix) -> int:
    """GF(2) row rank."""
    if m.rows == 0 or m.cols == 0:
        return 0
    return len(_eliminate(m.packed.copy(), m.cols, full=False))


def kernel_basis(m: BitMatrix) -> BitMatrix:
    """
    Basis of the right null space: K with m · Kᵀ = 0 and
    rows(K) = cols(m) − rank(m). One basis row per free column, in
    ascending free-column order.
    """
    packed = m.packed.copy()
    pivots = _eliminate(packed, m.cols, full=True)
    reduced = np.unpackbits(packed[:len(pivots)], axis=1, count=m.cols)
    pivot_set = set(pivots)
    free = [c for c in range(m.cols) if c not in pivot_set]
    basis = np.zeros((len(free), m.cols), dtype=np.uint8)
    for i, f in enumerate(free):
        basis[i, f] = 1
        basis[i, pivots] = reduced[:, f]
    return BitMatrix.from_dense(basis)


def solve_mod2(m: BitMatrix, rhs) -> np.ndarray:
    """
    Solve m·x = rhs over GF(2). Free variables are set to 0.
    Raises InconsistentSystemError when rhs is outside the column space.
    """
    b = _as_bits(rhs, m.rows, "rhs").copy()
    packed = m.packed.copy()
    pivots = _eliminate(packed, m.cols, rhs=b, full=True)
    if b[len(pivots):].any():
        raise InconsistentSystemError(
            f"No solution: rhs is outside the column space of a {m.rows}x{m.cols} matrix."
        )
    x = np.zeros(m.cols, dtype=np.uint8)
    x[pivots] = b[:len(pivots)]
    return x


def matvec_mod2(m: BitMatrix, v) -> np.ndarray:
    """
    m·v mod 2. `v` may be a single vector of length cols(m) or a batch of
    shape (count, cols(m)); a batch returns shape (count, rows(m)).
    """
    v = np.asarray(v, dtype=np.uint8)
    if v.shape[-1] != m.cols:
        raise ValueError(f"Vector length {v.shape[-1]} does not match {m.cols} columns.")
    dense = m.to_dense().astype(np.int32)
    if v.ndim == 1:
        return ((dense @ v.astype(np.int32)) & 1).astype(np.uint8)
    return ((v.astype(np.int32) @ dense.T) & 1).astype(np.uint8)


def rowspace_contains(m: BitMatrix, v) -> bool:
    """True when v is a GF(2) combination of the rows of m."""
    v = _as_bits(v, m.cols)
    if not v.any():
        return True
    stacked = BitMatrix.vstack(m, BitMatrix.from_dense(v.reshape(1, -1)))
    return rank(stacked) == rank(m)
