"""
test_trainer.py
Tests for the loss, gradients and the training loop.
"""

import itertools
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))
import trainer
from bench import make_pipeline, sample_trials, speedup, summarize
from code_model import rotated_surface_code, tanner_graph
from gf2 import rowspace_contains
from gnn_decoder import CheckpointError, GnnModel, decode, load_checkpoint
from noise_channel import PAULI_X, PAULI_Z, Sample, compute_syndrome, generate_test_set
from trainer import (
    LOG_COLUMNS,
    NonFiniteLossError,
    TrainConfig,
    TrainingDivergedError,
    _cross_entropy,
    build_model,
    commutation_loss,
    gradient,
    gradient_check,
    run_training,
    sine_relaxation,
    total_loss,
    train,
    warm_start,
)

SMALL_DIMS = {"node_feature_dim": 6, "msgnet_hidden": 8, "edge_feature_dim": 3}
X_LOGICAL = (0, 3, 6)
Z_LOGICAL = (0, 1, 2)


@pytest.fixture(scope="module")
def surface3():
    return rotated_surface_code(3)


@pytest.fixture
def small_model():
    torch.manual_seed(1)
    return GnnModel(**SMALL_DIMS, dropout=0.0)


def _one_hot(word) -> torch.Tensor:
    return torch.nn.functional.one_hot(torch.as_tensor(np.asarray(word), dtype=torch.long), 4).double()


def _word(x_support=(), z_support=()) -> np.ndarray:
    word = np.zeros(9, dtype=np.uint8)
    word[list(x_support)] |= PAULI_X
    word[list(z_support)] |= PAULI_Z
    return word


def _quick_config(**overrides) -> TrainConfig:
    values = dict(epochs=2, samples_per_epoch=96, batch_size=32, test_size=48, iterations=3,
                  learning_rate=1e-3, dropout=0.0, seed=3, **SMALL_DIMS)
    values.update(overrides)
    return TrainConfig(**values)


# ─── Config ─────────────────────────────────────────────────

def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1e-3, "momentum": 0.9})


@pytest.mark.parametrize("kwargs", [
    {"learning_rate": 0.0}, {"dropout": 1.0}, {"batch_size": 0}, {"p_max": 1.5}, {"epochs": -1},
])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_shipped_training_configs_parse():
    config_dir = Path(__file__).parent.parent.parent / "configs" / "training"
    for path in sorted(config_dir.glob("*.json")):
        TrainConfig.from_dict(json.loads(path.read_text())["train"])


# ─── Sine relaxation and commutation loss ───────────────────

def test_sine_relaxation_on_integers_is_parity():
    for x in range(-3, 6):
        assert sine_relaxation(float(x)) == pytest.approx(x % 2, abs=1e-12)
    assert sine_relaxation(0.5) == pytest.approx(math.sqrt(0.5))
    assert torch.allclose(sine_relaxation(torch.tensor([0.0, 1.0, 2.0])), torch.tensor([0.0, 1.0, 0.0]), atol=1e-6)


def test_commutation_loss_zero_for_truth(surface3):
    truth = generate_test_set(surface3, 0.2, 10, seed=0).errors
    for word in truth:
        assert float(commutation_loss(surface3, word, _one_hot(word))) == pytest.approx(0.0, abs=1e-12)


def test_commutation_loss_zero_up_to_stabilizers(surface3):
    truth = _word(x_support=(1, 5), z_support=(4,))
    h_x, h_z = surface3.h_x.to_dense(), surface3.h_z.to_dense()
    for coeffs in itertools.product((0, 1), repeat=4):
        x_stab = (np.array(coeffs) @ h_x) % 2
        z_stab = (np.array(coeffs) @ h_z) % 2
        for prediction in (truth ^ x_stab.astype(np.uint8), truth ^ (2 * z_stab).astype(np.uint8)):
            loss = float(commutation_loss(surface3, truth, _one_hot(prediction)))
            assert loss == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("logical", [
    _word(x_support=X_LOGICAL), _word(z_support=Z_LOGICAL), _word(x_support=X_LOGICAL, z_support=Z_LOGICAL),
])
def test_commutation_loss_penalises_logicals(surface3, logical):
    truth = _word(x_support=(2,))
    h_x = surface3.h_x.to_dense()
    for coeffs in itertools.product((0, 1), repeat=4):
        stab = ((np.array(coeffs) @ h_x) % 2).astype(np.uint8)
        prediction = truth ^ logical ^ stab
        assert float(commutation_loss(surface3, truth, _one_hot(prediction))) > 0.5


def test_commutation_loss_zero_exactly_on_rowspace(surface3):
    zero = np.zeros(9, dtype=np.uint8)
    for bits in itertools.product((0, 1), repeat=9):
        residual = np.array(bits, dtype=np.uint8)
        loss = float(commutation_loss(surface3, zero, _one_hot(residual)))
        assert (loss < 1e-9) == rowspace_contains(surface3.h_x, residual)


def test_commutation_loss_batched_matches_single(surface3):
    words = generate_test_set(surface3, 0.2, 4, seed=5).errors
    probs = torch.softmax(torch.randn(4, 9, 4, dtype=torch.float64), dim=-1)
    per_sample = commutation_loss(surface3, words, probs, reduction="none")
    assert per_sample.shape == (4,)
    for i in range(4):
        assert float(per_sample[i]) == pytest.approx(float(commutation_loss(surface3, words[i], probs[i])))


def test_uniform_prediction_cross_entropy_is_ln4(surface3):
    sample = Sample(error=_word(x_support=(3,)), syndrome=np.zeros(8, dtype=np.uint8), p_used=0.1)
    parts = total_loss(surface3, sample, torch.full((9, 4), 0.25, dtype=torch.float64), lam=0.0)
    assert float(parts.cross_entropy) == pytest.approx(math.log(4))
    assert float(parts.total) == pytest.approx(math.log(4))


def test_total_loss_combines_terms(surface3):
    sample = Sample(error=_word(z_support=(7,)), syndrome=np.zeros(8, dtype=np.uint8), p_used=0.1)
    probs = torch.softmax(torch.randn(9, 4, dtype=torch.float64), dim=-1)
    parts = total_loss(surface3, sample, probs, lam=2.5)
    expected = float(parts.cross_entropy) + 2.5 * float(parts.commutation)
    assert parts.as_floats()["total"] == pytest.approx(expected)


def test_batch_loss_and_reporting_emit_no_warnings(small_model, surface3):
    data = generate_test_set(surface3, 0.1, 8, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("error", UserWarning)
        parts = trainer.batch_loss(small_model, surface3, tanner_graph(surface3),
                                   data.errors, data.syndromes, 2, 1.0)
        assert parts.total.requires_grad
        floats = parts.as_floats()
        with pytest.raises(NonFiniteLossError):
            nan = torch.tensor(float("nan"), requires_grad=True)
            trainer._require_finite(trainer.LossParts(nan, nan, nan))
    assert math.isfinite(floats["total"])


# ─── Gradients ──────────────────────────────────────────────

def test_gradient_covers_every_parameter(small_model, surface3):
    data = generate_test_set(surface3, 0.1, 8, seed=1)
    grads = gradient(small_model, surface3, data, iterations=2)
    assert set(grads) == {name for name, _ in small_model.named_parameters()}
    assert all(torch.isfinite(g).all() for g in grads.values())


def test_lambda_zero_gradient_is_cross_entropy_gradient(small_model, surface3):
    data = generate_test_set(surface3, 0.1, 8, seed=2)
    grads = gradient(small_model, surface3, data, iterations=2, lam=0.0)

    small_model.zero_grad(set_to_none=True)
    logits = small_model(tanner_graph(surface3), data.syndromes, 2)
    _cross_entropy(data.errors, torch.log_softmax(logits, dim=-1)).mean().backward()
    for name, param in small_model.named_parameters():
        assert torch.allclose(grads[name], param.grad, atol=1e-7)


def test_gradient_check_passes(small_model, surface3):
    data = generate_test_set(surface3, 0.1, 4, seed=3)
    report = gradient_check(small_model, surface3, data, iterations=2, coords_per_block=20)
    assert list(report.columns) == ["block", "index", "analytic", "numeric", "abs_err", "rel_err", "ok"]
    assert report["ok"].all()
    assert small_model.dtype == torch.float32


def test_gradient_rejects_non_finite_loss(small_model, surface3, monkeypatch):
    data = generate_test_set(surface3, 0.1, 4, seed=3)
    nan = torch.tensor(float("nan"), requires_grad=True)
    monkeypatch.setattr(trainer, "batch_loss", lambda *a, **k: trainer.LossParts(nan, nan, nan))
    with pytest.raises(NonFiniteLossError):
        gradient(small_model, surface3, data, iterations=2)


# ─── Training loop ──────────────────────────────────────────

def test_zero_epochs_leaves_model_unchanged(small_model, surface3):
    before = {k: v.clone() for k, v in small_model.state_dict().items()}
    result = train(small_model, surface3, _quick_config(epochs=0))
    assert result.log.empty
    assert list(result.log.columns) == LOG_COLUMNS
    for name, tensor in small_model.state_dict().items():
        assert torch.equal(tensor, before[name])


def test_short_run_writes_log_and_checkpoint(surface3, tmp_path):
    config = _quick_config()
    result = train(build_model(config), surface3, config,
                   log_path=tmp_path / "log.csv", checkpoint_path=tmp_path / "model.ckpt")
    assert len(result.log) == 2
    assert np.isfinite(result.log[["train_loss", "test_loss", "test_ler"]].to_numpy()).all()
    assert (tmp_path / "log.csv").exists()
    loaded = load_checkpoint(tmp_path / "model.ckpt", expected_dims=config.model_dims())
    assert loaded.provenance["epochs"] == 2
    assert loaded.provenance["code_id"] == "surface_d3[[9,1,3]]"


def test_training_is_reproducible(surface3):
    config = _quick_config()
    a = train(build_model(config), surface3, config).log
    b = train(build_model(config), surface3, config).log
    assert np.allclose(a["train_loss"], b["train_loss"])
    assert np.allclose(a["test_ler"], b["test_ler"])


def test_training_reduces_loss(surface3):
    config = _quick_config(epochs=4, samples_per_epoch=512, test_size=256, learning_rate=5e-3)
    log = train(build_model(config), surface3, config).log
    assert log["train_loss"].iloc[-1] < log["train_loss"].iloc[0]


def test_divergence_restores_last_good_weights(small_model, surface3, tmp_path, monkeypatch):
    before = {k: v.clone() for k, v in small_model.state_dict().items()}
    monkeypatch.setattr(trainer, "evaluate", lambda *a, **k: (float("nan"), 1.0))
    with pytest.raises(TrainingDivergedError) as info:
        train(small_model, surface3, _quick_config(), checkpoint_path=tmp_path / "last.ckpt")
    assert info.value.epoch == 1
    assert info.value.checkpoint == tmp_path / "last.ckpt"
    for name, tensor in small_model.state_dict().items():
        assert torch.equal(tensor, before[name])


def test_warm_start_rejects_mismatched_dims(small_model):
    with pytest.raises(CheckpointError):
        warm_start(small_model, rotated_surface_code(5), TrainConfig(epochs=1))


def test_warm_start_trains_a_copy(small_model):
    before = {k: v.clone() for k, v in small_model.state_dict().items()}
    result = warm_start(small_model, rotated_surface_code(5), _quick_config(epochs=1))
    assert result.model is not small_model
    for name, tensor in small_model.state_dict().items():
        assert torch.equal(tensor, before[name])


def test_run_training_from_experiment(tmp_path):
    experiment = {"name": "tiny", "code": {"family": "rotated_surface", "d": 3},
                  "train": {k: v for k, v in vars(_quick_config(epochs=1)).items()}}
    result = run_training(experiment, tmp_path / "tiny")
    assert len(result.log) == 1
    assert (tmp_path / "tiny" / "train_log.csv").exists()

    warm = {"name": "tiny_d5", "code": {"family": "rotated_surface", "d": 5},
            "train": experiment["train"], "warm_start": str(tmp_path / "tiny" / "model.ckpt")}
    assert len(run_training(warm, tmp_path / "tiny_d5").log) == 1


# ─── Desk-scale training runs ───────────────────────────────

def _epochs_to_ler(code, seed: int, pretrained=None) -> int:
    config = TrainConfig(epochs=60, samples_per_epoch=100_000, p_max=0.15, test_p=0.05,
                         test_size=10_000, seed=seed, patience=60)
    if pretrained is not None:
        result = warm_start(pretrained, code, config)
    else:
        result = train(build_model(config), code, config)
    return result.epochs_to_criterion or config.epochs + 1


@pytest.fixture(scope="module")
def trained_d3(surface3):
    config = TrainConfig(epochs=60, samples_per_epoch=100_000, p_max=0.15, test_p=0.05, test_size=10_000)
    return train(build_model(config), surface3, config)


def _weight_one_errors(n: int):
    for qubit in range(n):
        for pauli in (1, 2, 3):
            word = np.zeros(n, dtype=np.uint8)
            word[qubit] = pauli
            yield word


@pytest.mark.slow
def test_trained_d3_model(trained_d3, surface3):
    model = trained_d3.model
    graph = tanner_graph(surface3)
    empty = decode(model, graph, np.zeros(surface3.num_checks, dtype=np.uint8), 30)
    assert (empty.class_probs.argmax(axis=-1) == 0).all()
    for word in _weight_one_errors(9):
        assert np.array_equal(decode(model, graph, compute_syndrome(surface3, word), 30).hard_error, word)

    assert trained_d3.log["test_ler"].iloc[-1] < 0.05 / 2
    for index, p in enumerate((0.05, 0.10)):
        gnn = summarize(sample_trials(make_pipeline("gnn", surface3, p, model=model), surface3, p, 10_000, index), p)
        bp = summarize(sample_trials(make_pipeline("bp", surface3, p), surface3, p, 10_000, index), p)
        assert gnn.ler <= bp.ler


@pytest.mark.slow
def test_trained_model_needs_no_more_osd_calls_than_bp(trained_d3, surface3):
    gnn_records = sample_trials(make_pipeline("gnn_osd", surface3, 0.05, model=trained_d3.model),
                                surface3, 0.05, 10_000, 7)
    bp_records = sample_trials(make_pipeline("bp_osd", surface3, 0.05), surface3, 0.05, 10_000, 7)
    gnn, bp = summarize(gnn_records, 0.05), summarize(bp_records, 0.05)
    assert gnn.osd_calls <= bp.osd_calls

    result = speedup(bp_records, gnn_records)
    assert (result.baseline_failures, result.subject_failures) == (bp.osd_calls, gnn.osd_calls)
    if gnn.osd_calls:
        assert result.ratio == bp.osd_calls / gnn.osd_calls


@pytest.mark.slow
def test_d3_model_extrapolates_to_d5(trained_d3):
    surface5 = rotated_surface_code(5)
    graph = tanner_graph(surface5)
    model = trained_d3.model
    for word in _weight_one_errors(25):
        assert np.array_equal(decode(model, graph, compute_syndrome(surface5, word), 30).hard_error, word)

    records = sample_trials(make_pipeline("gnn_osd", surface5, 0.05, model=model), surface5, 0.05, 10_000, 0)
    point = summarize(records, 0.05)
    assert point.ler < 0.05


@pytest.mark.slow
def test_warm_start_reaches_criterion_sooner(trained_d3):
    surface5 = rotated_surface_code(5)
    cold = [_epochs_to_ler(surface5, seed) for seed in range(3)]
    warm = [_epochs_to_ler(surface5, seed, trained_d3.model) for seed in range(3)]
    assert np.median(warm) < np.median(cold)
