"""Losses, plain SGD over sequences, metrics, and checkpointing.

Training follows the simplest protocol the method needs: one gradient step
per sequence (batch size 1), a fixed learning rate, a fixed epoch budget,
and optional max-norm gradient clipping.  Sequence-level classification
(loss and prediction at the final frame) is the default; frame mode sums
the per-frame losses instead.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .backprop import (
    Gradients,
    backward,
    model_param_items,
)
from .cells import (
    CellKind,
    CellParams,
    Model,
    OutputParams,
    RnnParams,
    StackConfig,
    stack_forward,
)
from .numerics import seeded_rng, softmax


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; the epoch is aborted rather than skipped."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.0001
    epochs: int = 50
    mode: str = "sequence"            # "sequence" | "frame"
    truncation: str = "full"          # "full" | "truncated"
    seed: int = 0
    clip_norm: float | None = None
    shuffle: bool = True
    momentum: float = 0.0             # off by default; plain SGD

    def __post_init__(self):
        # lr = 0 is allowed: a zero-rate epoch is a pure evaluation pass and
        # must leave the parameters untouched
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mode not in ("sequence", "frame"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.truncation not in ("full", "truncated"):
            raise ValueError(f"unknown truncation {self.truncation!r}")


@dataclass
class Metrics:
    mean_loss: float
    accuracy: float
    confusion: np.ndarray   # (k, k) counts, rows = true class


# ---------------------------------------------------------------------------
# Losses


def loss_from_logits(y: np.ndarray, c: int):
    """Cross-entropy -log p_c of softmax(y); returns (loss, dloss/dy)."""
    k = y.shape[0]
    if not 0 <= c < k:
        raise IndexError(f"class index {c} out of range for {k} classes")
    p = softmax(y)
    loss = -math.log(max(float(p[c]), 1e-300))
    grad = p.copy()
    grad[c] -= 1.0
    return loss, grad


def loss_sequence(logits: np.ndarray, c: int):
    """Sequence-level loss at the final frame; gradient over all frames."""
    loss, g_last = loss_from_logits(logits[-1], c)
    grad = np.zeros_like(logits)
    grad[-1] = g_last
    return loss, grad


def loss_frame(logits: np.ndarray, frame_labels) -> tuple[float, np.ndarray]:
    """Cumulative per-frame loss over the sequence."""
    if len(frame_labels) != logits.shape[0]:
        raise ValueError("one label per frame required in frame mode")
    grad = np.zeros_like(logits)
    total = 0.0
    for t, c_t in enumerate(frame_labels):
        loss_t, grad[t] = loss_from_logits(logits[t], int(c_t))
        total += loss_t
    return total, grad


def _sequence_loss_grad(tape_logits, seq, mode):
    if mode == "frame":
        labels = seq.frame_labels if seq.frame_labels is not None \
            else [seq.label] * tape_logits.shape[0]
        return loss_frame(tape_logits, labels)
    return loss_sequence(tape_logits, seq.label)


# ---------------------------------------------------------------------------
# Optimization


def _grad_norm(grads: Gradients) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for _, a in model_param_items(grads)))


def apply_sgd_step(model: Model, grads: Gradients, lr: float,
                   clip_norm: float | None = None) -> None:
    if clip_norm is not None:
        norm = _grad_norm(grads)
        if norm > clip_norm:
            scale = clip_norm / norm
            for _, a in model_param_items(grads):
                a *= scale
    for (_, p), (_, g) in zip(model_param_items(model), model_param_items(grads)):
        p -= lr * g


def sgd_epoch(model: Model, dataset, config: TrainConfig,
              rng: np.random.Generator | None = None,
              velocity: Gradients | None = None) -> Metrics:
    """One pass over the dataset, updating the model in place.

    ``velocity`` carries classical momentum state between epochs; leave it
    None for plain SGD (the default, momentum == 0).
    """
    seqs = dataset.sequences
    if not seqs:
        raise ValueError("cannot train on an empty dataset")
    order = np.arange(len(seqs))
    if config.shuffle:
        if rng is None:
            rng = seeded_rng(config.seed)
        rng.shuffle(order)
    k = len(dataset.class_names)
    confusion = np.zeros((k, k), dtype=np.int64)
    total_loss = 0.0
    truncated = config.truncation == "truncated"
    for idx in order:
        seq = seqs[idx]
        tape = stack_forward(model, seq.frames)
        loss, dlogits = _sequence_loss_grad(tape.logits, seq, config.mode)
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss on sequence {seq.id!r}: {loss}")
        total_loss += loss
        pred = int(np.argmax(tape.logits[-1]))
        confusion[seq.label, pred] += 1
        grads = backward(model, tape, dlogits, truncated=truncated)
        if velocity is not None and config.momentum > 0:
            for (_, v), (_, g) in zip(model_param_items(velocity),
                                      model_param_items(grads)):
                v *= config.momentum
                v += g
            grads = velocity
        apply_sgd_step(model, grads, config.learning_rate, config.clip_norm)
    accuracy = float(np.trace(confusion)) / len(seqs)
    return Metrics(mean_loss=total_loss / len(seqs), accuracy=accuracy,
                   confusion=confusion)


def train(model: Model, dataset, config: TrainConfig) -> list[Metrics]:
    """Run the full epoch budget; returns per-epoch metrics."""
    rng = seeded_rng(config.seed)
    velocity = None
    if config.momentum > 0:
        from .backprop import zeros_like_model
        velocity = zeros_like_model(model)
    return [sgd_epoch(model, dataset, config, rng, velocity)
            for _ in range(config.epochs)]


def evaluate(model: Model, dataset) -> Metrics:
    """Accuracy and confusion matrix; prediction is the argmax of the
    final frame's class probabilities."""
    k = len(dataset.class_names)
    confusion = np.zeros((k, k), dtype=np.int64)
    total_loss = 0.0
    for seq in dataset.sequences:
        tape = stack_forward(model, seq.frames)
        loss, _ = loss_sequence(tape.logits, seq.label)
        total_loss += loss
        pred = int(np.argmax(tape.logits[-1]))
        confusion[seq.label, pred] += 1
    n = max(len(dataset.sequences), 1)
    return Metrics(mean_loss=total_loss / n,
                   accuracy=float(np.trace(confusion)) / n,
                   confusion=confusion)


# ---------------------------------------------------------------------------
# Checkpointing

CHECKPOINT_VERSION = 1


def _arr(a: np.ndarray):
    return a.tolist()


def _params_to_json(p):
    if isinstance(p, CellParams):
        out = {"type": "cell"}
        for name in ("w_ix", "w_fx", "w_ox", "w_sx", "w_ih", "w_fh", "w_oh",
                     "w_sh", "b_i", "b_f", "b_o", "b_s"):
            out[name] = _arr(getattr(p, name))
        for dname in ("w_id", "w_fd", "w_od"):
            out[dname] = {str(n): _arr(m) for n, m in getattr(p, dname).items()}
        return out
    if isinstance(p, RnnParams):
        return {"type": "rnn", "w_hh": _arr(p.w_hh), "w_hx": _arr(p.w_hx),
                "b_h": _arr(p.b_h)}
    raise TypeError(type(p))


def _params_from_json(d):
    if d["type"] == "cell":
        kw = {name: np.asarray(d[name], dtype=np.float64)
              for name in ("w_ix", "w_fx", "w_ox", "w_sx", "w_ih", "w_fh",
                           "w_oh", "w_sh", "b_i", "b_f", "b_o", "b_s")}
        for dname in ("w_id", "w_fd", "w_od"):
            kw[dname] = {int(n): np.asarray(m, dtype=np.float64)
                         for n, m in d[dname].items()}
        return CellParams(**kw)
    if d["type"] == "rnn":
        return RnnParams(w_hh=np.asarray(d["w_hh"]), w_hx=np.asarray(d["w_hx"]),
                         b_h=np.asarray(d["b_h"]))
    raise CheckpointError(f"unknown layer type {d['type']!r}")


def model_to_doc(model: Model) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "config": {
            "layers": [[kind.kind, kind.order, units]
                       for kind, units in model.config.layers],
            "input_units": model.config.input_units,
            "output_classes": model.config.output_classes,
            "tie_gate_hidden_weights": model.config.tie_gate_hidden_weights,
        },
        "layers": [_params_to_json(p) for p in model.layers],
        "output": {"w_yh": _arr(model.output.w_yh), "b_y": _arr(model.output.b_y)},
    }


def model_from_doc(doc: dict) -> Model:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointError("not a checkpoint file")
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc['format_version']}")
    try:
        cfg = doc["config"]
        config = StackConfig(
            layers=tuple((CellKind(kind, order), units)
                         for kind, order, units in cfg["layers"]),
            input_units=cfg["input_units"],
            output_classes=cfg["output_classes"],
            tie_gate_hidden_weights=cfg.get("tie_gate_hidden_weights", False),
        )
        layers = [_params_from_json(d) for d in doc["layers"]]
        output = OutputParams(w_yh=np.asarray(doc["output"]["w_yh"]),
                              b_y=np.asarray(doc["output"]["b_y"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return Model(config=config, layers=layers, output=output,
                 seed=doc.get("seed", 0))


def checkpoint_save(model: Model, path) -> None:
    """Write the model as one JSON document; floats are serialized with
    Python's shortest round-trip repr, so loading is bitwise lossless."""
    with open(path, "w") as fh:
        json.dump(model_to_doc(model), fh)
        fh.write("\n")


def checkpoint_load(path) -> Model:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return model_from_doc(doc)
