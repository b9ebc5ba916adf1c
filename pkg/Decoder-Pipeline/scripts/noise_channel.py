"""
noise_channel.py
----------------
Code-capacity depolarizing noise: error sampling, syndrome extraction,
training/test dataset generation and the binary dataset file format.

Error words use {0: I, 1: X, 2: Z, 3: Y}. Syndromes are ordered X-checks
then Z-checks: σ = [h_x·e_z ; h_z·e_x] mod 2.

Randomness: sample i of a dataset with seed s is drawn from
PCG64(SeedSequence(s, spawn_key=(i,))), so the dataset is the same no
matter how generation is split across workers.

Dataset file, little-endian, version 1:
    magic     4s   b"QLDS"
    version   u2
    id_len    u2   followed by the code identifier (UTF-8, id_len bytes)
    n         u4
    m         u4   (syndrome length m_X + m_Z)
    count     u8
    p_max     f8
    seed      u8
  then `count` records:
    error     ceil(n/4) bytes, qubit i in bits 2*(i%4)..2*(i%4)+1 of byte i//4
    syndrome  ceil(m/8) bytes, check j in bit j%8 of byte j//8
    p_used    f8
"""

import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from code_model import CssCode, code_id
from gf2 import matvec_mod2

logger = logging.getLogger(__name__)

PAULI_I, PAULI_X, PAULI_Z, PAULI_Y = 0, 1, 2, 3
# u ∈ [0, p) split in thirds: X, Y, Z
_PAULI_BY_THIRD = np.array([PAULI_X, PAULI_Y, PAULI_Z], dtype=np.uint8)

DATASET_MAGIC = b"QLDS"
DATASET_VERSION = 1
_HEADER_HEAD = struct.Struct("<4sHH")
_HEADER_TAIL = struct.Struct("<IIQdQ")


class DatasetFormatError(ValueError):
    """Malformed, truncated or mismatched dataset file."""


# ─────────────────────────────────────────
# Domain types
# ─────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Sample:
    error: np.ndarray
    syndrome: np.ndarray
    p_used: float


@dataclass(eq=False)
class Dataset:
    """Column-oriented store of i.i.d. samples for one code."""
    code_id: str
    errors: np.ndarray
    syndromes: np.ndarray
    p_used: np.ndarray
    p_max: float
    seed: int

    def __len__(self) -> int:
        return int(self.errors.shape[0])

    def __getitem__(self, index: int) -> Sample:
        return Sample(self.errors[index], self.syndromes[index], float(self.p_used[index]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


# ─────────────────────────────────────────
# Pauli words and randomness
# ─────────────────────────────────────────

def split_error(word) -> tuple[np.ndarray, np.ndarray]:
    """(e_x, e_z): X-component set for X/Y, Z-component set for Z/Y."""
    word = np.asarray(word, dtype=np.uint8)
    return (word & 1).astype(np.uint8), ((word >> 1) & 1).astype(np.uint8)


def combine_error(e_x, e_z) -> np.ndarray:
    return (np.asarray(e_x, dtype=np.uint8) | (np.asarray(e_z, dtype=np.uint8) << 1)).astype(np.uint8)


def channel_marginal(p: float) -> float:
    """Per-sector flip probability of the depolarizing channel (X or Y for the X part)."""
    return 2.0 * p / 3.0


def sample_rng(seed, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed, e.g. one per training epoch."""
    state = np.random.SeedSequence([seed, *keys]).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


# ─────────────────────────────────────────
# Operations
# ─────────────────────────────────────────

def sample_depolarizing(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Each qubit: I with prob 1-p, else X, Y, Z with prob p/3 each."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Error probability must be in [0, 1], got {p}.")
    u = rng.random(n)
    word = np.zeros(n, dtype=np.uint8)
    hit = u < p
    if hit.any():
        third = np.minimum((u[hit] * 3.0 / p).astype(np.int64), 2)
        word[hit] = _PAULI_BY_THIRD[third]
    return word


def compute_syndrome(code: CssCode, error) -> np.ndarray:
    """[h_x·e_z ; h_z·e_x] mod 2 for one word (n,) or a batch (count, n)."""
    error = np.asarray(error, dtype=np.uint8)
    if error.shape[-1] != code.n:
        raise ValueError(f"Error word has length {error.shape[-1]}, code has n={code.n}.")
    e_x, e_z = split_error(error)
    return np.concatenate(
        [matvec_mod2(code.h_x, e_z), matvec_mod2(code.h_z, e_x)], axis=-1
    ).astype(np.uint8)


def _generate_chunk(n: int, p_max: float, seed: int, start: int, stop: int,
                    fixed_p: bool) -> tuple[np.ndarray, np.ndarray]:
    errors = np.empty((stop - start, n), dtype=np.uint8)
    p_used = np.empty(stop - start, dtype=np.float64)
    for row, index in enumerate(range(start, stop)):
        rng = sample_rng(seed, index)
        p = p_max if fixed_p else rng.uniform(0.0, p_max)
        p_used[row] = p
        errors[row] = sample_depolarizing(n, p, rng)
    return errors, p_used


def _generate(code: CssCode, p_max: float, count: int, seed: int, fixed_p: bool,
              workers: int) -> Dataset:
    if count < 1:
        raise ValueError(f"Dataset size must be ≥ 1, got {count}.")
    if not 0.0 <= p_max <= 1.0:
        raise ValueError(f"Error probability must be in [0, 1], got {p_max}.")

    if workers > 1:
        bounds = np.linspace(0, count, workers + 1).astype(int)
        chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                _generate_chunk,
                *zip(*[(code.n, p_max, seed, a, b, fixed_p) for a, b in chunks]),
            ))
        errors = np.concatenate([e for e, _ in parts])
        p_used = np.concatenate([p for _, p in parts])
    else:
        errors, p_used = _generate_chunk(code.n, p_max, seed, 0, count, fixed_p)

    dataset = Dataset(
        code_id=code_id(code), errors=errors, syndromes=compute_syndrome(code, errors),
        p_used=p_used, p_max=p_max, seed=seed,
    )
    logger.info(
        "Generated %d samples for %s (%s p=%.4g, seed=%d).",
        count, dataset.code_id, "fixed" if fixed_p else "U(0, p_max)", p_max, seed,
    )
    return dataset


def generate_dataset(code: CssCode, p_max: float, count: int, seed: int,
                     workers: int = 1) -> Dataset:
    """i.i.d. samples, each with its own p ~ U(0, p_max)."""
    return _generate(code, p_max, count, seed, fixed_p=False, workers=workers)


def generate_test_set(code: CssCode, p: float, count: int, seed: int,
                      workers: int = 1) -> Dataset:
    """i.i.d. samples at one fixed p."""
    return _generate(code, p, count, seed, fixed_p=True, workers=workers)


# ─────────────────────────────────────────
# Dataset file format
# ─────────────────────────────────────────

def _record_dtype(n: int, m: int) -> np.dtype:
    return np.dtype([
        ("error", np.uint8, ((n + 3) // 4,)),
        ("syndrome", np.uint8, ((m + 7) // 8,)),
        ("p_used", "<f8"),
    ])


def _pack_errors(errors: np.ndarray) -> np.ndarray:
    count, n = errors.shape
    width = (n + 3) // 4
    padded = np.zeros((count, width * 4), dtype=np.uint8)
    padded[:, :n] = errors
    quads = padded.reshape(count, width, 4)
    return quads[..., 0] | (quads[..., 1] << 2) | (quads[..., 2] << 4) | (quads[..., 3] << 6)


def _unpack_errors(packed: np.ndarray, n: int) -> np.ndarray:
    parts = np.stack([(packed >> shift) & 3 for shift in (0, 2, 4, 6)], axis=-1)
    return parts.reshape(packed.shape[0], -1)[:, :n].astype(np.uint8)


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count, n = dataset.errors.shape
    m = dataset.syndromes.shape[1]
    id_bytes = dataset.code_id.encode()

    records = np.zeros(count, dtype=_record_dtype(n, m))
    records["error"] = _pack_errors(dataset.errors)
    records["syndrome"] = np.packbits(dataset.syndromes, axis=1, bitorder="little")
    records["p_used"] = dataset.p_used

    with open(path, "wb") as f:
        f.write(_HEADER_HEAD.pack(DATASET_MAGIC, DATASET_VERSION, len(id_bytes)))
        f.write(id_bytes)
        f.write(_HEADER_TAIL.pack(n, m, count, dataset.p_max, dataset.seed))
        f.write(records.tobytes())
    logger.info("Saved %d samples to %s", count, path)
    return path


def load_dataset(path: str | Path, code: CssCode) -> Dataset:
    """Read a dataset file and re-check every syndrome against `code`."""
    raw = Path(path).read_bytes()
    try:
        magic, version, id_len = _HEADER_HEAD.unpack_from(raw, 0)
        offset = _HEADER_HEAD.size
        stored_id = raw[offset:offset + id_len].decode()
        offset += id_len
        n, m, count, p_max, seed = _HEADER_TAIL.unpack_from(raw, offset)
        offset += _HEADER_TAIL.size
    except (struct.error, UnicodeDecodeError) as e:
        raise DatasetFormatError(f"{path}: unreadable header ({e}).") from e
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: not a version-{DATASET_VERSION} dataset file.")
    if stored_id != code_id(code) or n != code.n or m != code.num_checks:
        raise DatasetFormatError(f"{path}: dataset is for {stored_id}, not {code_id(code)}.")

    dtype = _record_dtype(n, m)
    if len(raw) - offset != count * dtype.itemsize:
        raise DatasetFormatError(f"{path}: expected {count} records, file is truncated or padded.")
    records = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)

    errors = _unpack_errors(records["error"], n)
    syndromes = np.unpackbits(records["syndrome"], axis=1, count=m, bitorder="little")
    if (errors > 3).any():
        raise DatasetFormatError(f"{path}: error symbols outside {{0,1,2,3}}.")
    mismatched = np.flatnonzero((compute_syndrome(code, errors) != syndromes).any(axis=1))
    if mismatched.size:
        logger.error("%d stored samples fail the syndrome check, first at %d.", mismatched.size, mismatched[0])
        raise DatasetFormatError(f"{path}: {mismatched.size} sample(s) with inconsistent syndromes.")

    logger.info("Loaded %d samples for %s from %s", count, stored_id, path)
    return Dataset(stored_id, errors, syndromes.astype(np.uint8),
                   np.array(records["p_used"], dtype=np.float64), p_max, seed)


if __name__ == "__main__":
    from code_model import rotated_surface_code
    from settings import configure_logging

    configure_logging()
    surface = rotated_surface_code(3)
    data = generate_dataset(surface, 0.15, 1000, seed=0)
    print("mean weight:", float((data.errors != 0).sum(axis=1).mean()))
