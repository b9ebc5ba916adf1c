"""
validate_dataset.py
-------------------
Sample validation + statistics generation for decoder datasets.

Checks every (error, syndrome, p) record against the code it was generated
for and writes a statistics report to data/processed/stats_report.json.

Runs as its own pipeline stage AFTER sampling, BEFORE training.
"""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from code_model import CssCode, code_id
from noise_channel import Dataset, compute_syndrome
from settings import SETTINGS

logger = logging.getLogger(__name__)

PROCESSED_DIR = SETTINGS["data_dir"] / "processed"

PAULI_NAMES = {0: "I", 1: "X", 2: "Z", 3: "Y"}


# ─────────────────────────────────────────
# Sample checks
# ─────────────────────────────────────────

def validate_samples(code: CssCode, dataset: Dataset) -> list[dict]:
    """Run record-level checks on a dataset. Returns list of violations."""
    violations = []

    if dataset.code_id != code_id(code):
        violations.append({"check": "code_id", "detail": f"{dataset.code_id} != {code_id(code)}"})

    if dataset.errors.shape[1:] != (code.n,):
        violations.append({"check": "error_length", "shape": list(dataset.errors.shape)})
        return violations
    if dataset.syndromes.shape[1:] != (code.num_checks,):
        violations.append({"check": "syndrome_length", "shape": list(dataset.syndromes.shape)})
        return violations

    bad_symbols = int((dataset.errors > 3).any(axis=1).sum())
    if bad_symbols:
        violations.append({"check": "pauli_symbols", "bad_samples": bad_symbols})

    mismatched = np.flatnonzero((compute_syndrome(code, dataset.errors) != dataset.syndromes).any(axis=1))
    if mismatched.size:
        violations.append({
            "check": "syndrome_consistency",
            "bad_samples": int(mismatched.size),
            "first_index": int(mismatched[0]),
        })

    p = dataset.p_used
    if ((p < 0) | (p > 1) | (p > dataset.p_max + 1e-12)).any():
        violations.append({"check": "p_range", "detail": f"p_used outside [0, {dataset.p_max}]"})

    return violations


# ─────────────────────────────────────────
# Statistics generation
# ─────────────────────────────────────────

def generate_statistics(dataset: Dataset) -> dict:
    """Descriptive statistics of a dataset."""
    weights = pd.Series((dataset.errors != 0).sum(axis=1))
    classes = pd.Series(dataset.errors.reshape(-1)).map(PAULI_NAMES)
    p_used = pd.Series(dataset.p_used)

    stats = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "code_id":      dataset.code_id,
        "seed":         int(dataset.seed),
        "samples": {
            "count":             int(len(dataset)),
            "mean_weight":       float(weights.mean()),
            "max_weight":        int(weights.max()),
            "zero_error_count":  int((weights == 0).sum()),
            "class_fractions":   classes.value_counts(normalize=True).sort_index().to_dict(),
        },
        "p": {
            "p_max": float(dataset.p_max),
            "mean":  float(p_used.mean()),
            "min":   float(p_used.min()),
            "max":   float(p_used.max()),
        },
        "syndromes": {
            "mean_density":   float(dataset.syndromes.mean()) if dataset.syndromes.size else 0.0,
            "trivial_count":  int((~dataset.syndromes.any(axis=1)).sum()),
        },
    }
    return stats


# ─────────────────────────────────────────
# Master validate function (pipeline stage)
# ─────────────────────────────────────────

def validate_dataset(code: CssCode, dataset: Dataset, report_path: str | Path | None = None) -> dict:
    """
    Master validation function called by the `sample` stage.
    Raises ValueError if violations found.
    Returns statistics report.
    """
    violations = validate_samples(code, dataset)

    if violations:
        for v in violations:
            logger.error("VALIDATION VIOLATION: %s", v)
        raise ValueError(f"Dataset validation failed with {len(violations)} violation(s). Check logs.")
    logger.info("All dataset checks passed.")

    stats = generate_statistics(dataset)

    report_path = Path(report_path) if report_path else PROCESSED_DIR / "stats_report.json"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w") as f:
        json.dump(stats, f, indent=2)
    logger.info("Stats report saved to %s", report_path)

    return stats


if __name__ == "__main__":
    import sys

    sys.path.insert(0, str(Path(__file__).parent))
    from code_model import rotated_surface_code
    from noise_channel import generate_dataset
    from settings import configure_logging

    configure_logging()
    surface = rotated_surface_code(3)
    stats = validate_dataset(surface, generate_dataset(surface, 0.15, 10_000, seed=0))

    print("\n--- Validation passed. Statistics ---")
    print(json.dumps(stats, indent=2))
