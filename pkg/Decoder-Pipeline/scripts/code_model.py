"""
code_model.py
-------------
CSS code construction (rotated surface, bivariate bicycle), logical
operators, Tanner graphs and the code definition file loader.

Rotated surface layout (reproducible bit for bit):
  - data qubit (r, c) of the d×d grid has index r*d + c (row-major);
  - plaquette (i, j), 0 ≤ i, j ≤ d, covers the qubits (i-1..i, j-1..j)
    that fall inside the grid;
  - plaquette (i, j) is X-type when (i + j) is even, Z-type otherwise;
  - interior plaquettes (1 ≤ i, j ≤ d-1) are all kept (weight 4); on the
    top/bottom edges (i ∈ {0, d}) only X-type weight-2 plaquettes are kept,
    on the left/right edges (j ∈ {0, d}) only Z-type ones; corners never;
  - checks are ordered by (i, j) within each type.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from gf2 import BitMatrix, kernel_basis, matvec_mod2, rank

logger = logging.getLogger(__name__)

CHECK_X = 0
CHECK_Z = 1


class CodeConstructionError(ValueError):
    """A constructed code violates one of the CSS code invariants."""


# ─────────────────────────────────────────
# Domain types
# ─────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class CssCode:
    name: str
    n: int
    k: int
    d: int
    h_x: BitMatrix
    h_z: BitMatrix
    logicals_x: BitMatrix
    logicals_z: BitMatrix
    family: str = "custom"
    parameters: dict | None = None

    @property
    def m_x(self) -> int:
        return self.h_x.rows

    @property
    def m_z(self) -> int:
        return self.h_z.rows

    @property
    def num_checks(self) -> int:
        return self.m_x + self.m_z

    @cached_property
    def complement_x(self) -> BitMatrix:
        """H⊥ for X-type residuals: annihilates exactly rowspace(h_x)."""
        return kernel_basis(self.h_x)

    @cached_property
    def complement_z(self) -> BitMatrix:
        return kernel_basis(self.h_z)

    def __repr__(self) -> str:
        return f"CssCode({self.name}: [[{self.n},{self.k},{self.d}]], m_x={self.m_x}, m_z={self.m_z})"


@dataclass(frozen=True, eq=False)
class TannerGraph:
    """
    Combined Tanner graph. Node indices: error nodes 0..n-1, then syndrome
    nodes n..n+m_X+m_Z-1 (X-checks first, then Z-checks, the syndrome order).
    `edges` rows are (error_node, syndrome_node, check_type) with
    syndrome_node counted from 0 within the syndrome vector.
    """
    num_error_nodes: int
    num_syndrome_nodes: int
    edges: np.ndarray
    neighborhoods: tuple[tuple[int, ...], ...]

    @property
    def num_nodes(self) -> int:
        return self.num_error_nodes + self.num_syndrome_nodes

    def degrees(self) -> np.ndarray:
        return np.array([len(nbrs) for nbrs in self.neighborhoods], dtype=np.int64)

    @cached_property
    def directed_edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        (src, dst, edge_type) for both directions of every edge, sorted by
        (dst, src) so per-node sums accumulate in ascending neighbour order.
        edge_type = 2*check_type + direction, direction 0 = error→check.
        """
        err = self.edges[:, 0]
        chk = self.edges[:, 1] + self.num_error_nodes
        ctype = self.edges[:, 2]
        src = np.concatenate([err, chk])
        dst = np.concatenate([chk, err])
        etype = np.concatenate([2 * ctype, 2 * ctype + 1])
        order = np.lexsort((src, dst))
        return src[order], dst[order], etype[order]


# ─────────────────────────────────────────
# Invariants and logicals
# ─────────────────────────────────────────

def _gram(a: BitMatrix, b: BitMatrix) -> np.ndarray:
    return (a.to_dense().astype(np.int64) @ b.to_dense().T.astype(np.int64)) & 1


def _dot(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.dot(a.astype(np.int64), b.astype(np.int64))) & 1


def _complement_rows(candidates: np.ndarray, stabilizers: BitMatrix) -> list[np.ndarray]:
    """Rows of `candidates` that are independent modulo rowspace(stabilizers)."""
    chosen: list[np.ndarray] = []
    current = stabilizers
    base_rank = rank(current)
    for row in candidates:
        trial = BitMatrix.vstack(current, BitMatrix.from_dense(row.reshape(1, -1)))
        trial_rank = rank(trial)
        if trial_rank > base_rank:
            chosen.append(row.copy())
            current, base_rank = trial, trial_rank
    return chosen


def logical_operators(h_x: BitMatrix, h_z: BitMatrix) -> tuple[BitMatrix, BitMatrix]:
    """
    k X-logicals in ker(h_z) \\ rowspace(h_x) and k Z-logicals in
    ker(h_x) \\ rowspace(h_z), paired by symplectic Gram-Schmidt so that
    logicals_x · logicals_zᵀ = I.
    """
    if _gram(h_x, h_z).any():
        raise CodeConstructionError("h_x · h_zᵀ ≠ 0: checks do not commute.")
    n = h_x.cols
    cand_x = _complement_rows(kernel_basis(h_z).to_dense(), h_x)
    cand_z = _complement_rows(kernel_basis(h_x).to_dense(), h_z)
    if len(cand_x) != len(cand_z):
        raise CodeConstructionError(
            f"Found {len(cand_x)} X-logicals but {len(cand_z)} Z-logicals."
        )

    paired_x, paired_z = [], []
    while cand_x:
        x = cand_x.pop(0)
        partner = next((i for i, z in enumerate(cand_z) if _dot(x, z)), None)
        if partner is None:
            raise CodeConstructionError("X-logical without an anticommuting Z partner.")
        z = cand_z.pop(partner)
        cand_x = [xo ^ x if _dot(xo, z) else xo for xo in cand_x]
        cand_z = [zo ^ z if _dot(x, zo) else zo for zo in cand_z]
        paired_x.append(x)
        paired_z.append(z)

    shape = (len(paired_x), n)
    lx = np.array(paired_x, dtype=np.uint8).reshape(shape)
    lz = np.array(paired_z, dtype=np.uint8).reshape(shape)
    return BitMatrix.from_dense(lx), BitMatrix.from_dense(lz)


def check_code(code: CssCode) -> list[dict]:
    """Run the CssCode invariants. Returns a list of violations."""
    violations = []
    if _gram(code.h_x, code.h_z).any():
        violations.append({"check": "css_commutation"})
    expected_k = code.n - rank(code.h_x) - rank(code.h_z)
    if code.k != expected_k:
        violations.append({"check": "logical_count", "k": code.k, "expected": expected_k})
    if code.k:
        if _gram(code.h_z, code.logicals_x).any() or _gram(code.h_x, code.logicals_z).any():
            violations.append({"check": "logicals_commute_with_stabilizers"})
        if not np.array_equal(_gram(code.logicals_x, code.logicals_z), np.eye(code.k, dtype=np.int64)):
            violations.append({"check": "logical_pairing_identity"})
        if rank(BitMatrix.vstack(code.h_x, code.logicals_x)) != rank(code.h_x) + code.k:
            violations.append({"check": "x_logicals_independent_of_stabilizers"})
        if rank(BitMatrix.vstack(code.h_z, code.logicals_z)) != rank(code.h_z) + code.k:
            violations.append({"check": "z_logicals_independent_of_stabilizers"})
    return violations


def build_css_code(name: str, d: int, h_x: BitMatrix, h_z: BitMatrix,
                   family: str = "custom", parameters: dict | None = None) -> CssCode:
    """Derive k and the logical bases, then verify every invariant."""
    if h_x.cols != h_z.cols:
        raise CodeConstructionError(f"h_x has {h_x.cols} columns, h_z has {h_z.cols}.")
    lx, lz = logical_operators(h_x, h_z)
    code = CssCode(
        name=name, n=h_x.cols, k=lx.rows, d=d, h_x=h_x, h_z=h_z,
        logicals_x=lx, logicals_z=lz, family=family, parameters=parameters,
    )
    violations = check_code(code)
    if violations:
        for v in violations:
            logger.error("CODE INVARIANT VIOLATION (%s): %s", name, v)
        raise CodeConstructionError(f"{name}: {len(violations)} invariant violation(s).")
    logger.info("Built %r", code)
    return code


# ─────────────────────────────────────────
# Code families
# ─────────────────────────────────────────

def rotated_surface_code(d: int) -> CssCode:
    """Rotated surface code [[d², 1, d]] in the layout documented above."""
    if not isinstance(d, (int, np.integer)) or d < 3 or d % 2 == 0:
        raise ValueError(f"Rotated surface code needs an odd distance ≥ 3, got {d!r}.")
    d = int(d)
    x_rows, z_rows = [], []
    for i in range(d + 1):
        for j in range(d + 1):
            is_x = (i + j) % 2 == 0
            interior = 1 <= i <= d - 1 and 1 <= j <= d - 1
            top_bottom = i in (0, d) and 1 <= j <= d - 1
            left_right = j in (0, d) and 1 <= i <= d - 1
            if not (interior or (top_bottom and is_x) or (left_right and not is_x)):
                continue
            row = np.zeros(d * d, dtype=np.uint8)
            for r in (i - 1, i):
                for c in (j - 1, j):
                    if 0 <= r < d and 0 <= c < d:
                        row[r * d + c] = 1
            (x_rows if is_x else z_rows).append(row)
    return build_css_code(
        f"surface_d{d}", d, BitMatrix.from_dense(np.array(x_rows)),
        BitMatrix.from_dense(np.array(z_rows)),
        family="rotated_surface", parameters={"d": d},
    )


def _shift(size: int, power: int) -> np.ndarray:
    return np.roll(np.eye(size, dtype=np.uint8), shift=power, axis=1)


def _bivariate_polynomial(l: int, m: int, monomials) -> np.ndarray:
    """Σ x^i y^j with x = S_l ⊗ I_m and y = I_l ⊗ S_m."""
    total = np.zeros((l * m, l * m), dtype=np.uint8)
    for i, j in monomials:
        total ^= np.kron(_shift(l, i), _shift(m, j))
    return total


def _reduce_monomials(monomials, l: int, m: int) -> list[tuple[int, int]]:
    reduced = []
    for pair in monomials:
        if len(pair) != 2:
            raise ValueError(f"Monomial {pair!r} is not an exponent pair.")
        i, j = int(pair[0]) % l, int(pair[1]) % m
        reduced.append((i, j))
    if not reduced:
        raise ValueError("A bivariate polynomial needs at least one monomial.")
    if len(set(reduced)) != len(reduced):
        raise ValueError(f"Monomials {reduced} repeat after reduction mod ({l}, {m}).")
    return reduced


def bivariate_bicycle_code(l: int, m: int, a_monomials, b_monomials, d: int = 0,
                           name: str | None = None) -> CssCode:
    """
    Bivariate bicycle code: H_X = [A | B], H_Z = [Bᵀ | Aᵀ] over Z_l × Z_m.
    `d` is the declared design distance.
    """
    if l < 1 or m < 1:
        raise ValueError(f"Group orders must be ≥ 1, got l={l}, m={m}.")
    a_mon = _reduce_monomials(a_monomials, l, m)
    b_mon = _reduce_monomials(b_monomials, l, m)
    a = _bivariate_polynomial(l, m, a_mon)
    b = _bivariate_polynomial(l, m, b_mon)
    h_x = BitMatrix.from_dense(np.hstack([a, b]))
    h_z = BitMatrix.from_dense(np.hstack([b.T, a.T]))
    params = {"l": l, "m": m, "a": [list(p) for p in a_mon], "b": [list(p) for p in b_mon], "d": d}
    return build_css_code(
        name or f"bb_{2 * l * m}", d, h_x, h_z,
        family="bivariate_bicycle", parameters=params,
    )


def permute_code(code: CssCode, qubit_perm, x_check_perm=None, z_check_perm=None) -> CssCode:
    """Relabel qubits and checks: new column i is old column qubit_perm[i]."""
    x_check_perm = np.arange(code.m_x) if x_check_perm is None else x_check_perm
    z_check_perm = np.arange(code.m_z) if z_check_perm is None else z_check_perm
    h_x = code.h_x.take_rows(x_check_perm).take_columns(qubit_perm)
    h_z = code.h_z.take_rows(z_check_perm).take_columns(qubit_perm)
    return build_css_code(f"{code.name}_permuted", code.d, h_x, h_z, family=code.family)


# ─────────────────────────────────────────
# Tanner graph
# ─────────────────────────────────────────

def tanner_graph(code: CssCode) -> TannerGraph:
    """Single combined graph carrying both check types."""
    n = code.n
    blocks = []
    for offset, matrix, ctype in ((0, code.h_x, CHECK_X), (code.m_x, code.h_z, CHECK_Z)):
        checks, qubits = np.nonzero(matrix.to_dense())
        blocks.append(np.stack([qubits, checks + offset, np.full_like(checks, ctype)], axis=1))
    edges = np.concatenate(blocks).astype(np.int64).reshape(-1, 3)

    neighborhoods: list[list[int]] = [[] for _ in range(n + code.num_checks)]
    for err, chk, _ in edges:
        neighborhoods[err].append(n + chk)
        neighborhoods[n + chk].append(err)
    return TannerGraph(
        num_error_nodes=n,
        num_syndrome_nodes=code.num_checks,
        edges=edges,
        neighborhoods=tuple(tuple(sorted(nb)) for nb in neighborhoods),
    )


# ─────────────────────────────────────────
# Code definition files
# ─────────────────────────────────────────

def load_code(source: str | Path | dict) -> CssCode:
    """
    Build a code from its definition: {"family": "rotated_surface", "d": 3} or
    {"family": "bivariate_bicycle", "l": .., "m": .., "a": [[i, j], ..],
    "b": [[i, j], ..], "d": .., "name": ..}.
    """
    if isinstance(source, dict):
        definition = source
    else:
        from settings import load_json_config
        definition = load_json_config(source)

    family = definition.get("family")
    if family == "rotated_surface":
        return rotated_surface_code(int(definition["d"]))
    if family == "bivariate_bicycle":
        return bivariate_bicycle_code(
            int(definition["l"]), int(definition["m"]),
            definition["a"], definition["b"],
            d=int(definition.get("d", 0)), name=definition.get("name"),
        )
    logger.error("Unknown code family in definition: %s", definition)
    raise ValueError(f"Unknown code family {family!r}.")


def code_definition(code: CssCode) -> dict:
    """Inverse of load_code for the built-in families."""
    if code.family == "rotated_surface":
        return {"family": "rotated_surface", "d": code.d}
    if code.family == "bivariate_bicycle":
        return {"family": "bivariate_bicycle", "name": code.name, **code.parameters}
    raise ValueError(f"Code {code.name} has no definition file form.")


def code_id(code: CssCode) -> str:
    return f"{code.name}[[{code.n},{code.k},{code.d}]]"


def logical_flips(code: CssCode, residual) -> np.ndarray:
    """
    True where a residual Pauli word (n,) or (B, n) anticommutes with some
    logical: logicals_z · e_x ≠ 0 or logicals_x · e_z ≠ 0.
    """
    residual = np.asarray(residual, dtype=np.uint8)
    e_x, e_z = residual & 1, (residual >> 1) & 1
    flips = matvec_mod2(code.logicals_z, e_x).any(axis=-1) | matvec_mod2(code.logicals_x, e_z).any(axis=-1)
    return np.asarray(flips)


if __name__ == "__main__":
    from settings import configure_logging

    configure_logging()
    for dist in (3, 5, 7):
        print(rotated_surface_code(dist))
    print(bivariate_bicycle_code(6, 6, [(3, 0), (0, 1), (0, 2)], [(0, 3), (1, 0), (2, 0)], d=6))
