"""
gnn_decoder.py
--------------
Learned message passing on the combined Tanner graph.

Per iteration, on every directed edge i→j:
    m_ij = f(h_i, h_j, edge_type)          message MLP
    m_j  = Σ_{i ∈ N(j)} m_ij               sum aggregation
    h_j  = g(h_j, [x_embed_j, m_j])        GRU cell
and the readout r maps each error node state to a distribution over
{I, X, Z, Y}. Node input x_j is the syndrome bit for check nodes and 0 for
error nodes. Check type reaches the messages through a learned embedding of
the edge type (X/Z check, direction).

Parameter shapes depend only on the feature dimensions, so one model decodes
Tanner graphs of any size.

Checkpoint file, little-endian, version 1:
    magic       4s  b"QGNN"
    version     u2
    header_len  u4  followed by a UTF-8 JSON header:
                    {"dims": {...}, "provenance": {...},
                     "blocks": [{"name": .., "shape": [..]}, ..]}
  then one float32 block per header entry, in header order (the model's
  state_dict order: embed, edge_embed, msgnet, gru, readout_net).
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from torch import nn

from code_model import CHECK_X, TannerGraph

logger = logging.getLogger(__name__)

NUM_CLASSES = 4
NUM_EDGE_TYPES = 4

CHECKPOINT_MAGIC = b"QGNN"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")

DIM_KEYS = ("node_feature_dim", "msgnet_hidden", "edge_feature_dim")


class CheckpointError(ValueError):
    """Malformed checkpoint file or feature dimensions that do not match."""


# ─────────────────────────────────────────
# Model
# ─────────────────────────────────────────

class GnnModel(nn.Module):
    """Weights of the input embedding, f, g and r."""

    def __init__(self, node_feature_dim: int = 64, msgnet_hidden: int = 128,
                 edge_feature_dim: int = 16, dropout: float = 0.05):
        super().__init__()
        if min(node_feature_dim, msgnet_hidden, edge_feature_dim) < 1:
            raise ValueError("Feature dimensions must be ≥ 1.")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}.")
        self.node_feature_dim = int(node_feature_dim)
        self.msgnet_hidden = int(msgnet_hidden)
        self.edge_feature_dim = int(edge_feature_dim)
        self.dropout = float(dropout)

        dim = self.node_feature_dim
        self.embed = nn.Sequential(nn.Linear(1, dim), nn.Tanh())
        self.edge_embed = nn.Embedding(NUM_EDGE_TYPES, self.edge_feature_dim)
        self.msgnet = nn.Sequential(
            nn.Linear(2 * dim + self.edge_feature_dim, self.msgnet_hidden),
            nn.SiLU(),
            nn.Dropout(self.dropout),
            nn.Linear(self.msgnet_hidden, dim),
        )
        self.gru = nn.GRUCell(2 * dim, dim)
        self.readout_net = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, NUM_CLASSES))
        self.provenance: dict = {}

    def dims(self) -> dict:
        return {
            "node_feature_dim": self.node_feature_dim,
            "msgnet_hidden": self.msgnet_hidden,
            "edge_feature_dim": self.edge_feature_dim,
            "dropout": self.dropout,
        }

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def embed_input(self, x: torch.Tensor) -> torch.Tensor:
        return self.embed(x.unsqueeze(-1))

    def message(self, h_src: torch.Tensor, h_dst: torch.Tensor,
                edge_types: torch.Tensor | None = None) -> torch.Tensor:
        """f(h_src, h_dst); without edge types the edge features are zero."""
        edge_shape = (*h_src.shape[:-1], self.edge_feature_dim)
        if edge_types is None:
            edge = h_src.new_zeros(edge_shape)
        else:
            edge = self.edge_embed(edge_types).expand(edge_shape)
        return self.msgnet(torch.cat([h_src, h_dst, edge], dim=-1))

    def update(self, h_prev: torch.Tensor, x_embed: torch.Tensor, m_agg: torch.Tensor) -> torch.Tensor:
        """One GRU step with input [x_embed, m_agg]."""
        dim = self.node_feature_dim
        inputs = torch.cat([x_embed, m_agg], dim=-1).reshape(-1, 2 * dim)
        return self.gru(inputs, h_prev.reshape(-1, dim)).reshape(h_prev.shape)

    def readout_logits(self, h: torch.Tensor) -> torch.Tensor:
        return self.readout_net(h)

    def readout(self, h: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.readout_logits(h), dim=-1)

    def forward(self, graph: TannerGraph, syndromes, iterations: int) -> torch.Tensor:
        """Class logits of the error nodes after `iterations` unrolled steps, shape (B, n, 4)."""
        if iterations < 1:
            raise ValueError(f"iterations must be ≥ 1, got {iterations}.")
        state = init_states(self, graph, syndromes)
        h = state.h
        for _ in range(iterations):
            h = _iterate(self, graph, h, state.x_embed)
        return self.readout_logits(h[..., :graph.num_error_nodes, :])


# ─────────────────────────────────────────
# Domain types
# ─────────────────────────────────────────

@dataclass(eq=False)
class NodeState:
    h: torch.Tensor
    x: torch.Tensor
    x_embed: torch.Tensor


@dataclass(frozen=True, eq=False)
class DecodeOutput:
    class_probs: np.ndarray
    hard_error: np.ndarray
    converged: bool
    iterations_used: int


@dataclass(frozen=True, eq=False)
class BatchDecodeOutput:
    class_probs: np.ndarray
    hard_errors: np.ndarray
    converged: np.ndarray
    iterations_used: np.ndarray

    def __len__(self) -> int:
        return int(self.hard_errors.shape[0])

    def __getitem__(self, index: int) -> DecodeOutput:
        return DecodeOutput(
            self.class_probs[index], self.hard_errors[index],
            bool(self.converged[index]), int(self.iterations_used[index]),
        )


@dataclass(frozen=True, eq=False)
class _GraphTensors:
    src: torch.Tensor
    dst: torch.Tensor
    edge_types: torch.Tensor
    reads_z: np.ndarray = field(repr=False)
    reads_x: np.ndarray = field(repr=False)


@lru_cache(maxsize=32)
def _graph_tensors(graph: TannerGraph) -> _GraphTensors:
    src, dst, etype = graph.directed_edges
    n, m = graph.num_error_nodes, graph.num_syndrome_nodes
    # X-checks detect the Z component, Z-checks the X component
    reads_z = np.zeros((m, n), dtype=np.int32)
    reads_x = np.zeros((m, n), dtype=np.int32)
    err, chk, ctype = graph.edges[:, 0], graph.edges[:, 1], graph.edges[:, 2]
    is_x = ctype == CHECK_X
    reads_z[chk[is_x], err[is_x]] = 1
    reads_x[chk[~is_x], err[~is_x]] = 1
    return _GraphTensors(
        torch.as_tensor(src, dtype=torch.long),
        torch.as_tensor(dst, dtype=torch.long),
        torch.as_tensor(etype, dtype=torch.long),
        reads_z, reads_x,
    )


def graph_syndrome(graph: TannerGraph, errors) -> np.ndarray:
    """Syndrome of Pauli words (n,) or (B, n) read off the Tanner graph."""
    errors = np.asarray(errors, dtype=np.int32)
    tensors = _graph_tensors(graph)
    e_x, e_z = errors & 1, (errors >> 1) & 1
    return ((e_z @ tensors.reads_z.T + e_x @ tensors.reads_x.T) & 1).astype(np.uint8)


# ─────────────────────────────────────────
# Forward pass
# ─────────────────────────────────────────

def _syndrome_batch(graph: TannerGraph, syndromes) -> np.ndarray:
    syndromes = np.asarray(syndromes, dtype=np.uint8)
    batch = np.atleast_2d(syndromes)
    if batch.ndim != 2 or batch.shape[1] != graph.num_syndrome_nodes:
        raise ValueError(
            f"Syndrome shape {syndromes.shape} does not match {graph.num_syndrome_nodes} syndrome nodes."
        )
    return batch


def init_states(model: GnnModel, graph: TannerGraph, syndrome) -> NodeState:
    """h⁰ = embedding of x: syndrome bit on check nodes, 0 on error nodes."""
    single = np.ndim(syndrome) == 1
    batch = _syndrome_batch(graph, syndrome)
    x = torch.zeros((batch.shape[0], graph.num_nodes), dtype=model.dtype)
    x[:, graph.num_error_nodes:] = torch.tensor(batch, dtype=model.dtype)
    if single:
        x = x[0]
    x_embed = model.embed_input(x)
    return NodeState(h=x_embed, x=x, x_embed=x_embed)


def aggregate(graph: TannerGraph, messages: torch.Tensor) -> torch.Tensor:
    """
    Per-node sum of incoming messages. `messages` holds one row per directed
    edge in graph.directed_edges order, optionally behind batch dimensions.
    """
    dst = _graph_tensors(graph).dst
    node_axis = messages.dim() - 2
    shape = list(messages.shape)
    shape[node_axis] = graph.num_nodes
    return messages.new_zeros(shape).index_add_(node_axis, dst, messages)


def _iterate(model: GnnModel, graph: TannerGraph, h: torch.Tensor, x_embed: torch.Tensor) -> torch.Tensor:
    tensors = _graph_tensors(graph)
    messages = model.message(
        h.index_select(-2, tensors.src), h.index_select(-2, tensors.dst), tensors.edge_types,
    )
    return model.update(h, x_embed, aggregate(graph, messages))


def decode_batch(model: GnnModel, graph: TannerGraph, syndromes, max_iterations: int,
                 early_stop: bool = True) -> BatchDecodeOutput:
    """
    Decode a batch of syndromes. With early_stop, each sample stops at the
    first iteration whose argmax error reproduces its syndrome and its output
    is frozen there; otherwise every sample runs max_iterations.
    """
    if max_iterations < 1:
        raise ValueError(f"max_iterations must be ≥ 1, got {max_iterations}.")
    syndromes = _syndrome_batch(graph, syndromes)
    count, n = syndromes.shape[0], graph.num_error_nodes

    class_probs = np.zeros((count, n, NUM_CLASSES), dtype=np.float64)
    iterations_used = np.full(count, max_iterations, dtype=np.int64)
    converged = np.zeros(count, dtype=bool)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            state = init_states(model, graph, syndromes)
            h, x_embed = state.h, state.x_embed
            active = np.arange(count)
            for iteration in range(1, max_iterations + 1):
                h = _iterate(model, graph, h, x_embed)
                last = iteration == max_iterations
                if not (early_stop or last):
                    continue
                probs = model.readout(h[:, :n]).double().numpy()
                done = (graph_syndrome(graph, probs.argmax(axis=-1)) == syndromes[active]).all(axis=1)
                finished = done | last
                rows = active[finished]
                class_probs[rows] = probs[finished]
                iterations_used[rows] = iteration
                converged[rows] = done[finished]

                keep = torch.as_tensor(~finished)
                active = active[~finished]
                if active.size == 0:
                    break
                h, x_embed = h[keep], x_embed[keep]
    finally:
        model.train(was_training)

    logger.debug("Decoded %d syndromes, %d converged.", count, int(converged.sum()))
    return BatchDecodeOutput(
        class_probs=class_probs,
        hard_errors=class_probs.argmax(axis=-1).astype(np.uint8),
        converged=converged,
        iterations_used=iterations_used,
    )


def decode(model: GnnModel, graph: TannerGraph, syndrome, max_iterations: int) -> DecodeOutput:
    syndrome = np.asarray(syndrome, dtype=np.uint8).reshape(-1)
    return decode_batch(model, graph, syndrome[None, :], max_iterations)[0]


# ─────────────────────────────────────────
# Checkpoints
# ─────────────────────────────────────────

def save_checkpoint(model: GnnModel, path: str | Path, provenance: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if provenance is not None:
        model.provenance = dict(provenance)
    state = model.state_dict()
    header = {
        "dims": model.dims(),
        "provenance": model.provenance,
        "blocks": [{"name": name, "shape": list(t.shape)} for name, t in state.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for tensor in state.values():
            f.write(tensor.detach().cpu().numpy().astype("<f4").tobytes())
    logger.info("Saved checkpoint to %s (%s)", path, model.provenance or "no provenance")
    return path


def load_checkpoint(path: str | Path, expected_dims: dict | None = None) -> GnnModel:
    """Rebuild a model from a checkpoint; optionally insist on feature dims."""
    raw = Path(path).read_bytes()
    try:
        magic, version, header_len = _PREAMBLE.unpack_from(raw, 0)
        header = json.loads(raw[_PREAMBLE.size:_PREAMBLE.size + header_len].decode())
        dims = header["dims"]
        blocks = header["blocks"]
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint header ({e}).") from e
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint.")

    if expected_dims:
        mismatched = {k: (dims.get(k), expected_dims[k]) for k in DIM_KEYS
                      if k in expected_dims and dims.get(k) != expected_dims[k]}
        if mismatched:
            logger.error("Checkpoint dims do not match config: %s", mismatched)
            raise CheckpointError(f"{path}: feature dimensions {mismatched} (checkpoint, config).")

    model = GnnModel(**dims)
    expected = model.state_dict()
    if [b["name"] for b in blocks] != list(expected) or any(
        tuple(b["shape"]) != tuple(expected[b["name"]].shape) for b in blocks
    ):
        raise CheckpointError(f"{path}: parameter blocks do not match a model with dims {dims}.")

    offset = _PREAMBLE.size + header_len
    total = sum(int(np.prod(b["shape"], dtype=np.int64)) for b in blocks)
    if len(raw) - offset != 4 * total:
        raise CheckpointError(f"{path}: expected {total} float32 values, file is truncated or padded.")

    state = {}
    for block in blocks:
        size = int(np.prod(block["shape"], dtype=np.int64))
        values = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(block["shape"])
        if not np.isfinite(values).all():
            raise CheckpointError(f"{path}: non-finite values in block {block['name']}.")
        state[block["name"]] = torch.from_numpy(values.astype(np.float32))
        offset += 4 * size
    model.load_state_dict(state)
    model.provenance = header.get("provenance", {})
    model.eval()
    logger.info("Loaded checkpoint %s (dims=%s)", path, dims)
    return model


if __name__ == "__main__":
    from code_model import rotated_surface_code, tanner_graph
    from settings import configure_logging

    configure_logging()
    torch.manual_seed(0)
    surface = rotated_surface_code(3)
    out = decode(GnnModel(), tanner_graph(surface), np.zeros(surface.num_checks, dtype=np.uint8), 30)
    print(out.converged, out.iterations_used, out.hard_error)
