"""
bench.py
--------
Monte-Carlo evaluation of decoder pipelines under code-capacity
depolarizing noise: LER points with Wilson intervals, OSD-call counts,
the failure-count speedup ratio and threshold crossings.

Pipelines: a first stage (min-sum BP per error type, or the learned decoder)
optionally followed by OSD-0 on every error type whose syndrome the first
stage left unsatisfied. A trial fails when the final correction does not
reproduce the syndrome or the residual flips any logical qubit.

Every decoder at a given (code, p) decodes the same error stream, drawn from
seeds derived from (seed, code index, p index).
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from statsmodels.stats.proportion import proportion_confint  # noqa: E402

from bp_decoder import BpConfig, min_sum_decode  # noqa: E402
from code_model import CssCode, load_code, logical_flips, tanner_graph  # noqa: E402
from gf2 import matvec_mod2  # noqa: E402
from gnn_decoder import GnnModel, decode_batch, load_checkpoint  # noqa: E402
from noise_channel import channel_marginal, combine_error, compute_syndrome, derive_seed, generate_test_set, split_error  # noqa: E402
from osd_postprocessor import OsdInput, osd0_decode  # noqa: E402
from settings import SETTINGS, config_hash, resolve_path  # noqa: E402

logger = logging.getLogger(__name__)

DECODERS = ("bp", "bp_osd", "gnn", "gnn_osd")
LER_COLUMNS = [
    "decoder", "family", "d", "p", "trials", "failures", "ler", "ci_low", "ci_high",
    "first_stage_failures", "osd_calls", "mean_iterations", "wallclock", "config_hash", "seed",
]


# ─────────────────────────────────────────
# Domain types
# ─────────────────────────────────────────

@dataclass(frozen=True)
class TrialRecord:
    p: float
    decoder_id: str
    converged_first_stage: bool
    osd_invoked: bool
    logical_failure: bool
    iterations_used: int

    def __post_init__(self):
        if self.osd_invoked and self.converged_first_stage:
            raise ValueError("OSD cannot run after a converged first stage.")


@dataclass(frozen=True)
class LerPoint:
    p: float
    trials: int
    failures: int
    ler: float
    ci_low: float
    ci_high: float
    first_stage_failures: int = 0
    osd_calls: int = 0
    mean_iterations: float = 0.0
    wallclock: float = 0.0


@dataclass(frozen=True)
class Speedup:
    """Failure-count ratio; ratio is inf when the subject never fails."""
    ratio: float
    baseline_failures: int
    subject_failures: int
    defined: bool


@dataclass(frozen=True)
class ThresholdEstimate:
    found: bool
    low: float | None
    high: float | None
    crossings: tuple[tuple[int, int, float], ...]

    @property
    def spread(self) -> float | None:
        return None if not self.found else self.high - self.low


@dataclass(frozen=True, eq=False)
class FirstStageOutput:
    correction: np.ndarray
    converged: bool
    iterations_used: int
    reliabilities_x: np.ndarray
    reliabilities_z: np.ndarray


# ─────────────────────────────────────────
# First stages
# ─────────────────────────────────────────

class FirstStage:
    """Anything that maps a batch of syndromes to FirstStageOutputs."""

    def decode_batch(self, syndromes: np.ndarray) -> list[FirstStageOutput]:
        raise NotImplementedError

    def __call__(self, syndrome) -> FirstStageOutput:
        return self.decode_batch(np.asarray(syndrome, dtype=np.uint8).reshape(1, -1))[0]


class BpFirstStage(FirstStage):
    """Min-sum on h_x (finds e_z) and on h_z (finds e_x), prior 2p/3 per bit."""

    def __init__(self, code: CssCode, config: BpConfig):
        self.code = code
        self.config = config

    def decode_batch(self, syndromes: np.ndarray) -> list[FirstStageOutput]:
        m_x = self.code.m_x
        outputs = []
        for syndrome in np.asarray(syndromes, dtype=np.uint8):
            z_part = min_sum_decode(self.code.h_x, syndrome[:m_x], self.config)
            x_part = min_sum_decode(self.code.h_z, syndrome[m_x:], self.config)
            outputs.append(FirstStageOutput(
                correction=combine_error(x_part.hard_decision, z_part.hard_decision),
                converged=x_part.converged and z_part.converged,
                iterations_used=max(x_part.iterations_used, z_part.iterations_used),
                reliabilities_x=x_part.error_probabilities(),
                reliabilities_z=z_part.error_probabilities(),
            ))
        return outputs


class GnnFirstStage(FirstStage):
    """Learned decoder; reliabilities are the per-type marginals P(T) + P(Y)."""

    def __init__(self, model: GnnModel, code: CssCode, max_iterations: int, batch_size: int = 512):
        self.model = model
        self.graph = tanner_graph(code)
        self.max_iterations = max_iterations
        self.batch_size = batch_size

    def decode_batch(self, syndromes: np.ndarray) -> list[FirstStageOutput]:
        outputs = []
        for start in range(0, len(syndromes), self.batch_size):
            out = decode_batch(self.model, self.graph, syndromes[start:start + self.batch_size],
                               self.max_iterations)
            probs = out.class_probs
            for i in range(len(out)):
                outputs.append(FirstStageOutput(
                    correction=out.hard_errors[i],
                    converged=bool(out.converged[i]),
                    iterations_used=int(out.iterations_used[i]),
                    reliabilities_x=probs[i, :, 1] + probs[i, :, 3],
                    reliabilities_z=probs[i, :, 2] + probs[i, :, 3],
                ))
        return outputs


@dataclass(frozen=True, eq=False)
class Pipeline:
    decoder_id: str
    first_stage: FirstStage
    use_osd: bool


def make_pipeline(decoder: str, code: CssCode, p: float, bp_settings: dict | None = None,
                  model: GnnModel | None = None, gnn_iterations: int = 30,
                  decoder_id: str | None = None) -> Pipeline:
    if decoder not in DECODERS:
        raise ValueError(f"Unknown decoder {decoder!r}; expected one of {DECODERS}.")
    if decoder.startswith("bp"):
        settings = {"max_iterations": 100, "schedule": "serial", "scaling_factor": 1.0, **(bp_settings or {})}
        settings.setdefault("channel_prior", channel_marginal(p) if p > 0 else 1e-3)
        stage: FirstStage = BpFirstStage(code, BpConfig(**settings))
    else:
        if model is None:
            raise ValueError(f"Decoder {decoder!r} needs a trained model checkpoint.")
        stage = GnnFirstStage(model, code, gnn_iterations)
    return Pipeline(decoder_id or decoder, stage, decoder.endswith("_osd"))


# ─────────────────────────────────────────
# Trials
# ─────────────────────────────────────────

def _second_stage(code: CssCode, syndrome: np.ndarray, out: FirstStageOutput) -> np.ndarray:
    """OSD-0 on each error type whose part of the syndrome is still unsatisfied."""
    m_x = code.m_x
    e_x, e_z = split_error(out.correction)
    if not np.array_equal(matvec_mod2(code.h_x, e_z), syndrome[:m_x]):
        e_z = osd0_decode(OsdInput(code.h_x, syndrome[:m_x], out.reliabilities_z))
    if not np.array_equal(matvec_mod2(code.h_z, e_x), syndrome[m_x:]):
        e_x = osd0_decode(OsdInput(code.h_z, syndrome[m_x:], out.reliabilities_x))
    return combine_error(e_x, e_z)


def correct(pipeline: Pipeline, code: CssCode, syndrome) -> tuple[np.ndarray, FirstStageOutput, bool]:
    """(correction, first-stage output, whether OSD ran) for one syndrome."""
    syndrome = np.asarray(syndrome, dtype=np.uint8).reshape(-1)
    out = pipeline.first_stage(syndrome)
    correction, osd_invoked = _apply_osd(code, syndrome, out, pipeline.use_osd)
    return correction, out, osd_invoked


def _apply_osd(code: CssCode, syndrome: np.ndarray, out: FirstStageOutput,
               use_osd: bool) -> tuple[np.ndarray, bool]:
    osd_invoked = use_osd and not out.converged
    if osd_invoked:
        return _second_stage(code, syndrome, out), True
    return out.correction, False


def _finish(code: CssCode, syndrome: np.ndarray, truth: np.ndarray, out: FirstStageOutput,
            use_osd: bool, p: float, decoder_id: str) -> TrialRecord:
    correction, osd_invoked = _apply_osd(code, syndrome, out, use_osd)
    unsatisfied = not np.array_equal(compute_syndrome(code, correction), syndrome)
    flipped = bool(logical_flips(code, np.asarray(truth, dtype=np.uint8) ^ correction))
    return TrialRecord(
        p=p, decoder_id=decoder_id, converged_first_stage=out.converged,
        osd_invoked=osd_invoked, logical_failure=unsatisfied or flipped,
        iterations_used=out.iterations_used,
    )


def run_pipeline(first_stage: FirstStage, use_osd: bool, code: CssCode, syndrome, truth,
                 p: float = 0.0, decoder_id: str = "") -> TrialRecord:
    """Decode one syndrome and score the correction against the true error."""
    syndrome = np.asarray(syndrome, dtype=np.uint8).reshape(-1)
    return _finish(code, syndrome, truth, first_stage(syndrome), use_osd, p, decoder_id)


def run_trials(pipeline: Pipeline, code: CssCode, errors: np.ndarray, syndromes: np.ndarray,
               p: float) -> list[TrialRecord]:
    outputs = pipeline.first_stage.decode_batch(syndromes)
    return [
        _finish(code, syndromes[i], errors[i], out, pipeline.use_osd, p, pipeline.decoder_id)
        for i, out in enumerate(outputs)
    ]


def summarize(records: list[TrialRecord], p: float, wallclock: float = 0.0) -> LerPoint:
    trials = len(records)
    failures = sum(r.logical_failure for r in records)
    low, high = proportion_confint(failures, trials, alpha=0.05, method="wilson")
    ler = failures / trials
    return LerPoint(
        p=p, trials=trials, failures=failures, ler=ler,
        ci_low=max(0.0, min(float(low), ler)), ci_high=min(1.0, max(float(high), ler)),
        first_stage_failures=sum(not r.converged_first_stage for r in records),
        osd_calls=sum(r.osd_invoked for r in records),
        mean_iterations=float(np.mean([r.iterations_used for r in records])),
        wallclock=wallclock,
    )


def sample_trials(pipeline: Pipeline, code: CssCode, p: float, num_trials: int, seed: int,
                  workers: int = 1) -> list[TrialRecord]:
    """Decode trial i's error, drawn from seed and i alone, in order of i."""
    if num_trials < 1:
        raise ValueError(f"num_trials must be ≥ 1, got {num_trials}.")
    stream = generate_test_set(code, p, num_trials, seed)
    if workers <= 1:
        return run_trials(pipeline, code, stream.errors, stream.syndromes, p)

    bounds = np.linspace(0, num_trials, workers + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(
            run_trials,
            *zip(*[(pipeline, code, stream.errors[a:b], stream.syndromes[a:b], p) for a, b in chunks]),
        )
        return [record for part in parts for record in part]


def estimate_ler(pipeline: Pipeline, code: CssCode, p: float, num_trials: int, seed: int,
                 workers: int = 1) -> LerPoint:
    started = time.perf_counter()
    records = sample_trials(pipeline, code, p, num_trials, seed, workers)
    point = summarize(records, p, time.perf_counter() - started)
    logger.info("%s on %s at p=%.4f: %d/%d failures (LER %.3e), %d OSD calls, %.1fs",
                pipeline.decoder_id, code.name, p, point.failures, point.trials, point.ler,
                point.osd_calls, point.wallclock)
    return point


# ─────────────────────────────────────────
# Speedup and threshold
# ─────────────────────────────────────────

def speedup(records_baseline: list[TrialRecord], records_subject: list[TrialRecord]) -> Speedup:
    """Ratio of first-stage failures (OSD calls) of baseline over subject on a paired stream."""
    if len(records_baseline) != len(records_subject):
        raise ValueError("Speedup needs the same trial stream for both decoders.")
    baseline = sum(not r.converged_first_stage for r in records_baseline)
    subject = sum(not r.converged_first_stage for r in records_subject)
    if baseline == 0:
        logger.warning("Baseline never failed; speedup undefined, reported as 1.0.")
        return Speedup(1.0, baseline, subject, defined=False)
    if subject == 0:
        return Speedup(math.inf, baseline, subject, defined=True)
    return Speedup(baseline / subject, baseline, subject, defined=True)


def _pair_crossings(points_a: list[LerPoint], points_b: list[LerPoint]) -> list[float]:
    """p values where log LER(b) − log LER(a) changes sign, linear between grid points."""
    ler_a = {pt.p: pt.ler for pt in points_a}
    ler_b = {pt.p: pt.ler for pt in points_b}
    grid = sorted(p for p in set(ler_a) & set(ler_b) if ler_a[p] > 0 and ler_b[p] > 0)
    diffs = [math.log(ler_b[p]) - math.log(ler_a[p]) for p in grid]
    crossings = []
    for i, (p, diff) in enumerate(zip(grid, diffs)):
        if diff == 0.0:
            crossings.append(p)
        elif i + 1 < len(grid) and diffs[i + 1] != 0.0 and diff * diffs[i + 1] < 0:
            t = diff / (diff - diffs[i + 1])
            crossings.append(p + t * (grid[i + 1] - p))
    return crossings


def threshold_estimate(curves: dict[int, list[LerPoint]]) -> ThresholdEstimate:
    """Interval spanned by the pairwise crossings of LER curves over distance."""
    if len(curves) < 2:
        raise ValueError("Threshold estimation needs curves for at least 2 distances.")
    crossings = []
    for d_small, d_large in combinations(sorted(curves), 2):
        for p in _pair_crossings(curves[d_small], curves[d_large]):
            crossings.append((d_small, d_large, p))
    if not crossings:
        logger.info("No crossing between any pair of distances %s.", sorted(curves))
        return ThresholdEstimate(False, None, None, ())
    ps = [p for _, _, p in crossings]
    estimate = ThresholdEstimate(True, min(ps), max(ps), tuple(crossings))
    logger.info("Threshold crossings in [%.4f, %.4f] from %d pair crossing(s).",
                estimate.low, estimate.high, len(crossings))
    return estimate


def threshold_from_table(table: pd.DataFrame) -> dict[str, ThresholdEstimate]:
    """One estimate per decoder in a LER table (columns as LER_COLUMNS)."""
    results = {}
    for decoder, rows in table.groupby("decoder"):
        curves = {
            int(d): [LerPoint(r.p, int(r.trials), int(r.failures), r.ler, r.ci_low, r.ci_high)
                     for r in group.sort_values("p").itertuples()]
            for d, group in rows.groupby("d")
        }
        if len(curves) >= 2:
            results[decoder] = threshold_estimate(curves)
    return results


# ─────────────────────────────────────────
# Plots
# ─────────────────────────────────────────

def plot_ler_curves(table: pd.DataFrame, decoder: str, path: str | Path) -> Path:
    """Log-log LER vs p, one series per distance, Wilson intervals as error bars."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    for d, rows in table[table["decoder"] == decoder].groupby("d"):
        rows = rows.sort_values("p")
        shown = rows[rows["ler"] > 0]
        ax.errorbar(
            shown["p"], shown["ler"],
            yerr=[shown["ler"] - shown["ci_low"], shown["ci_high"] - shown["ler"]],
            marker="o", capsize=2, label=f"d={d}",
        )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("Physical error rate")
    ax.set_ylabel("Logical error rate")
    ax.set_title(decoder)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


# ─────────────────────────────────────────
# Master bench function (pipeline stage)
# ─────────────────────────────────────────

def _decoder_variants(config: dict) -> list[tuple[str, str, int]]:
    """(decoder, decoder_id, gnn_iterations) for every requested curve."""
    budgets = config.get("gnn", {}).get("max_iterations", 30)
    budgets = [budgets] if isinstance(budgets, int) else list(budgets)
    variants = []
    for decoder in config["decoders"]:
        if decoder.startswith("gnn") and len(budgets) > 1:
            variants.extend((decoder, f"{decoder}@{t}", t) for t in budgets)
        else:
            variants.append((decoder, decoder, budgets[0]))
    return variants


def run_bench(config: dict, out_dir: str | Path | None = None) -> pd.DataFrame:
    """
    Master function behind `bench`. Config keys: codes, decoders, p_grid,
    trials, seed, optional bp (BpConfig fields), gnn (checkpoint,
    max_iterations as int or list), workers, name.
    Writes ler.csv, speedup.csv and one SVG per decoder.
    """
    unknown = sorted(set(config["decoders"]) - set(DECODERS))
    if unknown:
        raise ValueError(f"Unknown decoders {unknown}; expected a subset of {DECODERS}.")
    digest = config_hash(config)
    seed = int(config["seed"])
    workers = int(config.get("workers", SETTINGS["workers"]))
    out_dir = Path(out_dir) if out_dir else SETTINGS["runs_dir"] / "bench" / config.get("name", digest)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = None
    if any(d.startswith("gnn") for d in config["decoders"]):
        model = load_checkpoint(resolve_path(config["gnn"]["checkpoint"]))

    rows, speedup_rows = [], []
    for code_index, code_source in enumerate(config["codes"]):
        code = load_code(code_source)
        for p_index, p in enumerate(config["p_grid"]):
            stream_seed = derive_seed(seed, code_index, p_index)
            records_by_decoder = {}
            for decoder, decoder_id, budget in _decoder_variants(config):
                pipeline = make_pipeline(decoder, code, p, config.get("bp"), model, budget, decoder_id)
                started = time.perf_counter()
                records = sample_trials(pipeline, code, p, int(config["trials"]), stream_seed, workers)
                point = summarize(records, p, time.perf_counter() - started)
                records_by_decoder[decoder_id] = records
                rows.append({"decoder": decoder_id, "family": code.family, "d": code.d,
                             **asdict(point), "config_hash": digest, "seed": stream_seed})
                logger.info("%s %s p=%.4f: LER %.3e [%.3e, %.3e], OSD calls %d, %.1fs",
                            decoder_id, code.name, p, point.ler, point.ci_low, point.ci_high,
                            point.osd_calls, point.wallclock)

            for subject in [k for k in records_by_decoder if k.startswith("gnn_osd")]:
                if "bp_osd" in records_by_decoder:
                    result = speedup(records_by_decoder["bp_osd"], records_by_decoder[subject])
                    speedup_rows.append({"family": code.family, "d": code.d, "p": p,
                                         "baseline": "bp_osd", "subject": subject, **asdict(result),
                                         "config_hash": digest, "seed": stream_seed})

    table = pd.DataFrame(rows)[LER_COLUMNS]
    table.to_csv(out_dir / "ler.csv", index=False)
    if speedup_rows:
        pd.DataFrame(speedup_rows).to_csv(out_dir / "speedup.csv", index=False)
    for decoder_id in table["decoder"].unique():
        plot_ler_curves(table, decoder_id, out_dir / f"ler_{decoder_id}.svg")
    logger.info("Bench results saved to %s (config hash %s)", out_dir, digest)
    return table


if __name__ == "__main__":
    from code_model import rotated_surface_code
    from settings import configure_logging

    configure_logging()
    surface = rotated_surface_code(3)
    pipe = make_pipeline("bp_osd", surface, 0.05)
    print(estimate_ler(pipe, surface, 0.05, 2000, seed=0))
