"""
trainer.py
----------
Supervised training of the message-passing decoder.

Loss = cross entropy of the final readout against the true Pauli classes
     + λ · commutation term. The commutation term relaxes H⊥·e_total = 0
(mod 2) with |sin(πx/2)| and evaluates it per error type, so predictions
that differ from the truth by a stabilizer cost nothing there.

Training and test sets are regenerated before every epoch from seeds derived
from (seed, epoch), so a run is reproducible from its config alone.
"""

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from code_model import CssCode, code_id, load_code, logical_flips, tanner_graph
from gnn_decoder import DIM_KEYS, CheckpointError, GnnModel, decode_batch, graph_syndrome, load_checkpoint, save_checkpoint
from noise_channel import Dataset, derive_seed, generate_dataset, generate_test_set, split_error
from settings import SETTINGS, config_hash, resolve_path

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "test_loss", "test_ler", "wallclock"]
_PROB_FLOOR = 1e-12


class NonFiniteLossError(RuntimeError):
    """A batch produced a NaN or infinite loss."""


class TrainingDivergedError(RuntimeError):
    """Test loss became non-finite; the last good weights have been restored."""

    def __init__(self, epoch: int, last_good_state: dict, checkpoint: Path | None = None):
        super().__init__(f"Test loss diverged at epoch {epoch}.")
        self.epoch = epoch
        self.last_good_state = last_good_state
        self.checkpoint = checkpoint


# ─────────────────────────────────────────
# Configuration
# ─────────────────────────────────────────

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    dropout: float = 0.05
    epochs: int = 10
    batch_size: int = 64
    samples_per_epoch: int = 100_000
    p_max: float = 0.15
    test_p: float = 0.05
    test_size: int = 1000
    loss_weight_lambda: float = 1.0
    seed: int = 0
    iterations: int = 30
    node_feature_dim: int = 64
    msgnet_hidden: int = 128
    edge_feature_dim: int = 16
    ler_factor: float = 0.5
    loss_tolerance: float = 0.01
    patience: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}.")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}.")
        if self.loss_weight_lambda < 0:
            raise ValueError(f"loss_weight_lambda must be ≥ 0, got {self.loss_weight_lambda}.")
        if self.epochs < 0:
            raise ValueError(f"epochs must be ≥ 0, got {self.epochs}.")
        for name in ("batch_size", "samples_per_epoch", "test_size", "iterations", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be ≥ 1, got {getattr(self, name)}.")
        for name in ("p_max", "test_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {getattr(self, name)}.")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"Unknown training config keys: {unknown}")
        return cls(**values)

    def model_dims(self) -> dict:
        return {k: getattr(self, k) for k in DIM_KEYS}


@dataclass(frozen=True)
class LossParts:
    cross_entropy: torch.Tensor
    commutation: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {"cross_entropy": self.cross_entropy.item(), "commutation": self.commutation.item(),
                "total": self.total.item()}


@dataclass(eq=False)
class TrainResult:
    model: GnnModel
    log: pd.DataFrame
    epochs_to_criterion: int | None
    stopped_early: bool


# ─────────────────────────────────────────
# Loss
# ─────────────────────────────────────────

def sine_relaxation(x):
    """|sin(πx/2)|: equals x mod 2 on the integers, smooth in between."""
    if isinstance(x, torch.Tensor):
        return torch.abs(torch.sin(0.5 * math.pi * x))
    return abs(math.sin(0.5 * math.pi * x))


def _complement_tensor(code: CssCode, which: str, like: torch.Tensor) -> torch.Tensor:
    matrix = code.complement_x if which == "x" else code.complement_z
    return torch.tensor(matrix.to_dense(), dtype=like.dtype)


def commutation_loss(code: CssCode, e_actual, class_probs: torch.Tensor,
                     reduction: str = "mean") -> torch.Tensor:
    """
    Σ over types T ∈ {X, Z} of mean_r |sin(π/2 · ⟨r, a_T ⊕ q_T⟩)| over the
    rows r of kernel_basis(h_T), with q_X = P(X) + P(Y), q_Z = P(Z) + P(Y) and
    the soft XOR a ⊕ q = a + q − 2aq. Accepts (n, 4) or batched (B, n, 4)
    probabilities; reduction "mean" averages over the batch, "none" keeps it.
    """
    a_x, a_z = split_error(e_actual)
    a_x = torch.as_tensor(a_x, dtype=class_probs.dtype)
    a_z = torch.as_tensor(a_z, dtype=class_probs.dtype)
    q_x = class_probs[..., 1] + class_probs[..., 3]
    q_z = class_probs[..., 2] + class_probs[..., 3]

    loss = class_probs.new_zeros(class_probs.shape[:-2])
    for which, a, q in (("x", a_x, q_x), ("z", a_z, q_z)):
        complement = _complement_tensor(code, which, class_probs)
        if complement.shape[0] == 0:
            continue
        e_total = a + q - 2.0 * a * q
        loss = loss + sine_relaxation(e_total @ complement.T).mean(dim=-1)
    if reduction == "none":
        return loss
    return loss.mean()


def _cross_entropy(e_actual, log_probs: torch.Tensor) -> torch.Tensor:
    """Per-sample mean over error nodes of −log P(true class)."""
    target = torch.tensor(np.asarray(e_actual), dtype=torch.long)
    return -log_probs.gather(-1, target.unsqueeze(-1)).squeeze(-1).mean(dim=-1)


def total_loss(code: CssCode, sample, class_probs: torch.Tensor, lam: float = 1.0) -> LossParts:
    """Loss of one prediction against one sample (anything with an `error`)."""
    probs = torch.as_tensor(class_probs)
    log_probs = torch.log(probs.clamp_min(_PROB_FLOOR))
    ce = _cross_entropy(sample.error, log_probs)
    comm = commutation_loss(code, sample.error, probs)
    return LossParts(cross_entropy=ce, commutation=comm, total=ce + lam * comm)


def batch_loss(model: GnnModel, code: CssCode, graph, errors, syndromes,
               iterations: int, lam: float) -> LossParts:
    """Mean loss over a batch, applied to the final iteration's readout."""
    logits = model(graph, syndromes, iterations)
    log_probs = torch.log_softmax(logits, dim=-1)
    ce = _cross_entropy(errors, log_probs).mean()
    comm = commutation_loss(code, errors, log_probs.exp())
    return LossParts(cross_entropy=ce, commutation=comm, total=ce + lam * comm)


# ─────────────────────────────────────────
# Gradients
# ─────────────────────────────────────────

def _require_finite(parts: LossParts) -> None:
    if not torch.isfinite(parts.total):
        raise NonFiniteLossError(f"Batch loss is {parts.total.item()}.")


def _unpack_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, Dataset):
        return batch.errors, batch.syndromes
    errors, syndromes = batch
    return np.asarray(errors, dtype=np.uint8), np.asarray(syndromes, dtype=np.uint8)


def gradient(model: GnnModel, code: CssCode, batch, iterations: int,
             lam: float = 1.0, graph=None) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of the mean batch loss for every named parameter."""
    errors, syndromes = _unpack_batch(batch)
    graph = graph or tanner_graph(code)
    model.zero_grad(set_to_none=True)
    parts = batch_loss(model, code, graph, errors, syndromes, iterations, lam)
    _require_finite(parts)
    parts.total.backward()
    return {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }


def gradient_check(model: GnnModel, code: CssCode, batch, iterations: int = 2,
                   coords_per_block: int = 100, eps: float = 1e-6, lam: float = 1.0,
                   seed: int = 0, rel_tolerance: float = 1e-3, abs_tolerance: float = 1e-7) -> pd.DataFrame:
    """
    Compare autograd against central finite differences in float64, on up to
    `coords_per_block` random coordinates of every parameter tensor. Runs on a
    copy with dropout disabled.
    """
    reference = copy.deepcopy(model).double().eval()
    errors, syndromes = _unpack_batch(batch)
    graph = tanner_graph(code)
    analytic = gradient(reference, code, (errors, syndromes), iterations, lam, graph)
    rng = np.random.default_rng(seed)

    def loss_value() -> float:
        with torch.no_grad():
            return batch_loss(reference, code, graph, errors, syndromes, iterations, lam).total.item()

    rows = []
    for name, param in reference.named_parameters():
        flat = param.data.view(-1)
        picks = rng.choice(flat.numel(), size=min(coords_per_block, flat.numel()), replace=False)
        for index in picks:
            original = float(flat[index])
            flat[index] = original + eps
            upper = loss_value()
            flat[index] = original - eps
            lower = loss_value()
            flat[index] = original
            numeric = (upper - lower) / (2.0 * eps)
            exact = float(analytic[name].view(-1)[index])
            abs_err = abs(exact - numeric)
            rel_err = abs_err / max(abs(exact), abs(numeric), 1e-300)
            rows.append({
                "block": name, "index": int(index), "analytic": exact, "numeric": numeric,
                "abs_err": abs_err, "rel_err": rel_err,
                "ok": abs_err < abs_tolerance or rel_err < rel_tolerance,
            })

    report = pd.DataFrame(rows)
    failed = report[~report["ok"]]
    if len(failed):
        logger.warning("Gradient check: %d of %d coordinates off, worst %s", len(failed), len(report),
                       failed.sort_values("rel_err").iloc[-1].to_dict())
    else:
        logger.info("Gradient check passed on %d coordinates.", len(report))
    return report


# ─────────────────────────────────────────
# Evaluation
# ─────────────────────────────────────────

def evaluate(model: GnnModel, code: CssCode, dataset: Dataset, iterations: int,
             lam: float = 1.0, batch_size: int = 256, graph=None) -> tuple[float, float]:
    """(mean test loss, LER) with dropout off; a failure is an unsatisfied syndrome or a logical flip."""
    graph = graph or tanner_graph(code)
    was_training = model.training
    model.eval()
    weighted_loss = 0.0
    failures = 0
    try:
        for start in range(0, len(dataset), batch_size):
            errors = dataset.errors[start:start + batch_size]
            syndromes = dataset.syndromes[start:start + batch_size]
            with torch.no_grad():
                parts = batch_loss(model, code, graph, errors, syndromes, iterations, lam)
            weighted_loss += parts.total.item() * len(errors)
            out = decode_batch(model, graph, syndromes, iterations)
            unsatisfied = (graph_syndrome(graph, out.hard_errors) != syndromes).any(axis=1)
            failures += int((unsatisfied | logical_flips(code, errors ^ out.hard_errors)).sum())
    finally:
        model.train(was_training)
    return weighted_loss / len(dataset), failures / len(dataset)


def _loss_plateaued(losses: list[float], tolerance: float, patience: int) -> bool:
    if len(losses) <= patience:
        return False
    before, now = losses[-1 - patience], losses[-1]
    return abs(before - now) <= tolerance * max(abs(before), 1e-12)


# ─────────────────────────────────────────
# Training loop
# ─────────────────────────────────────────

def train(model: GnnModel, code: CssCode, config: TrainConfig,
          log_path: str | Path | None = None, checkpoint_path: str | Path | None = None) -> TrainResult:
    """
    Epoch loop with per-epoch data refresh. Stops at the epoch budget, or once
    test LER < ler_factor · test_p and the test loss has plateaued.
    """
    torch.manual_seed(config.seed)
    graph = tanner_graph(code)
    model.dropout = config.dropout
    model.msgnet[2].p = config.dropout
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    rows = []
    test_losses: list[float] = []
    epochs_to_criterion = None
    stopped_early = False
    last_good_state = copy.deepcopy(model.state_dict())

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        train_set = generate_dataset(code, config.p_max, config.samples_per_epoch,
                                     derive_seed(config.seed, epoch, 0), workers=config.workers)
        test_set = generate_test_set(code, config.test_p, config.test_size,
                                     derive_seed(config.seed, epoch, 1), workers=config.workers)
        order = np.random.default_rng(derive_seed(config.seed, epoch, 2)).permutation(len(train_set))

        model.train()
        batch_losses = []
        skipped = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            optimizer.zero_grad(set_to_none=True)
            parts = batch_loss(model, code, graph, train_set.errors[idx], train_set.syndromes[idx],
                               config.iterations, config.loss_weight_lambda)
            try:
                _require_finite(parts)
            except NonFiniteLossError as e:
                skipped += 1
                logger.warning("Epoch %d batch at %d skipped: %s", epoch, start, e)
                continue
            parts.total.backward()
            optimizer.step()
            batch_losses.append(parts.total.item())

        test_loss, test_ler = evaluate(model, code, test_set, config.iterations,
                                       config.loss_weight_lambda, graph=graph)
        if not math.isfinite(test_loss):
            model.load_state_dict(last_good_state)
            saved = None
            if checkpoint_path:
                saved = save_checkpoint(model, checkpoint_path, _provenance(code, config, epoch - 1))
            logger.error("Test loss diverged at epoch %d; restored weights from epoch %d.", epoch, epoch - 1)
            raise TrainingDivergedError(epoch, last_good_state, saved)
        last_good_state = copy.deepcopy(model.state_dict())

        wallclock = time.perf_counter() - started
        train_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        rows.append({"epoch": epoch, "train_loss": train_loss, "test_loss": test_loss,
                     "test_ler": test_ler, "wallclock": wallclock})
        test_losses.append(test_loss)
        logger.info("Epoch %d/%d: train_loss=%.4f test_loss=%.4f test_ler=%.4f (%.1fs, %d skipped)",
                    epoch, config.epochs, train_loss, test_loss, test_ler, wallclock, skipped)

        ler_met = test_ler < config.ler_factor * config.test_p
        if ler_met and epochs_to_criterion is None:
            epochs_to_criterion = epoch
        if ler_met and _loss_plateaued(test_losses, config.loss_tolerance, config.patience):
            logger.info("Stop rule met at epoch %d.", epoch)
            stopped_early = True
            break

    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    if log_path:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log.to_csv(log_path, index=False)
        logger.info("Training log saved to %s", log_path)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path, _provenance(code, config, len(rows)))
    model.eval()
    return TrainResult(model, log, epochs_to_criterion, stopped_early)


def _provenance(code: CssCode, config: TrainConfig, epochs: int) -> dict:
    return {
        "code_id": code_id(code), "family": code.family, "d": code.d,
        "epochs": epochs, "seed": config.seed, "config_hash": config_hash(asdict(config)),
    }


def build_model(config: TrainConfig) -> GnnModel:
    torch.manual_seed(config.seed)
    return GnnModel(**config.model_dims(), dropout=config.dropout)


def warm_start(pretrained: GnnModel, larger_code: CssCode, config: TrainConfig, **kwargs) -> TrainResult:
    """train() on a copy of `pretrained`; feature dims must match the config."""
    mismatched = {k: (getattr(pretrained, k), getattr(config, k))
                  for k in DIM_KEYS if getattr(pretrained, k) != getattr(config, k)}
    if mismatched:
        logger.error("Warm start dims mismatch (model, config): %s", mismatched)
        raise CheckpointError(f"Pretrained model dims do not match config: {mismatched}")
    logger.info("Warm start on %s from %s", code_id(larger_code), pretrained.provenance or "an untracked model")
    return train(copy.deepcopy(pretrained), larger_code, config, **kwargs)


# ─────────────────────────────────────────
# Master training function (pipeline stage)
# ─────────────────────────────────────────

def run_training(experiment: dict, out_dir: str | Path | None = None) -> TrainResult:
    """
    Master function behind `train`. `experiment` holds "code" (definition
    dict or file), "train" (TrainConfig fields), optional "warm_start"
    (checkpoint path) and optional "name".
    """
    config = TrainConfig.from_dict(experiment.get("train", {}))
    code = load_code(experiment["code"])
    name = experiment.get("name") or code.name
    out_dir = Path(out_dir) if out_dir else SETTINGS["runs_dir"] / name
    out_dir.mkdir(parents=True, exist_ok=True)

    kwargs = {"log_path": out_dir / "train_log.csv", "checkpoint_path": out_dir / "model.ckpt"}
    if experiment.get("warm_start"):
        pretrained = load_checkpoint(resolve_path(experiment["warm_start"]), expected_dims=config.model_dims())
        result = warm_start(pretrained, code, config, **kwargs)
    else:
        result = train(build_model(config), code, config, **kwargs)

    logger.info("Training %s finished: %d epochs, criterion at %s, hash %s.",
                name, len(result.log), result.epochs_to_criterion, config_hash(experiment))
    return result


if __name__ == "__main__":
    from code_model import rotated_surface_code
    from settings import configure_logging

    configure_logging()
    surface = rotated_surface_code(3)
    cfg = TrainConfig(epochs=2, samples_per_epoch=2000, test_size=200, iterations=10)
    outcome = train(build_model(cfg), surface, cfg)
    print(outcome.log)
