"""Boosted ensemble of single-order differential cells.

Weak learner m is a one-layer ``dos`` cell of derivative order m (orders
0..N), trained independently; multiclass AdaBoost in the SAMME form combines
them.  Because the SGD loop takes no per-example weights, each member is
trained on a seeded weighted resample of the training set; the boosting
weights themselves are exact.

Member weight: alpha_m = ln((1 - err_m) / err_m) + ln(k - 1), with err_m the
boosting-weighted error on the (unresampled) training set.  A member no
better than chance (err >= (k-1)/k) gets weight 0 and the example weights
are reset to uniform; a perfect member's alpha is capped at ln(1e6) to keep
weights finite.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .cells import CellKind, Model, StackConfig, build_model, predict_sequence
from .data import Dataset
from .numerics import seeded_rng
from .train import TrainConfig, model_from_doc, model_to_doc, train

ALPHA_CAP = math.log(1e6)


@dataclass
class EnsembleModel:
    members: list[tuple[Model, float]]   # (model, alpha >= 0)
    n_classes: int

    def __post_init__(self):
        if not any(a > 0 for _, a in self.members):
            raise ValueError("ensemble needs at least one positively weighted member")


def samme_round(is_wrong: np.ndarray, weights: np.ndarray, k: int,
                variant: str = "samme"):
    """One boosting round.  Returns (alpha, updated weights).

    ``is_wrong`` flags the examples the member misclassifies; ``weights`` is
    the current example distribution (sums to 1).  ``variant`` "m1" drops the
    ln(k-1) multiclass correction (valid for k == 2, where it is zero anyway).
    """
    if variant not in ("samme", "m1"):
        raise ValueError(f"unknown boosting variant {variant!r}")
    if variant == "m1" and k != 2:
        raise ValueError("AdaBoost.M1 applies to 2-class problems only")
    is_wrong = np.asarray(is_wrong, dtype=bool)
    weights = np.asarray(weights, dtype=np.float64)
    err = float(np.sum(weights[is_wrong]))
    chance = (k - 1) / k
    if err >= chance:
        # degenerate learner: drop it, restart the distribution
        return 0.0, np.full(len(weights), 1.0 / len(weights))
    if err <= 0.0:
        alpha = ALPHA_CAP
    else:
        alpha = math.log((1.0 - err) / err)
        if variant == "samme":
            alpha += math.log(k - 1)
        alpha = min(alpha, ALPHA_CAP)
    new_w = weights * np.exp(alpha * is_wrong)
    new_w /= np.sum(new_w)
    return alpha, new_w


def _weighted_resample(dataset: Dataset, weights: np.ndarray,
                       rng: np.random.Generator) -> Dataset:
    n = len(dataset.sequences)
    idx = rng.choice(n, size=n, replace=True, p=weights)
    return dataset.subset(sorted(int(i) for i in idx))


def fit_ernn(dataset: Dataset, max_order: int, config: TrainConfig,
             state_units: int, boost_variant: str = "samme",
             resample: bool = True) -> EnsembleModel:
    """Train members of orders 0..max_order in sequence, boosting between.

    With ``max_order == 0`` (and resampling off or a uniform first draw) the
    single member is exactly the model ordinary training would produce.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if not dataset.sequences:
        raise ValueError("cannot fit an ensemble on an empty dataset")
    k = len(dataset.class_names)
    n = len(dataset.sequences)
    weights = np.full(n, 1.0 / n)
    rng = seeded_rng(config.seed)
    members = []
    for order in range(max_order + 1):
        cfg = StackConfig(layers=((CellKind("dos", order), state_units),),
                          input_units=dataset.feature_dim, output_classes=k)
        model = build_model(cfg, seed=config.seed + order)
        uniform = np.allclose(weights, 1.0 / n)
        train_set = dataset if (not resample or uniform) \
            else _weighted_resample(dataset, weights, rng)
        train(model, train_set, config)
        is_wrong = np.array([
            predict_sequence(model, seq.frames)[0] != seq.label
            for seq in dataset.sequences])
        alpha, weights = samme_round(is_wrong, weights, k, boost_variant)
        members.append((model, alpha))
    if not any(a > 0 for _, a in members):
        # keep the ensemble usable: fall back to the first member
        members[0] = (members[0][0], 1.0)
    return EnsembleModel(members=members, n_classes=k)


def predict_ensemble(e: EnsembleModel, frames) -> tuple[int, np.ndarray]:
    """Weighted vote over member argmax decisions; ties break toward the
    lowest class index."""
    scores = np.zeros(e.n_classes)
    for model, alpha in e.members:
        if alpha <= 0:
            continue
        pred, _ = predict_sequence(model, frames)
        scores[pred] += alpha
    return int(np.argmax(scores)), scores


# ---------------------------------------------------------------------------
# Persistence: container document embedding the member checkpoints


def ensemble_save(e: EnsembleModel, path) -> None:
    doc = {
        "format_version": 1,
        "n_classes": e.n_classes,
        "members": [{"alpha": alpha, "checkpoint": model_to_doc(model)}
                    for model, alpha in e.members],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def ensemble_load(path) -> EnsembleModel:
    with open(path) as fh:
        doc = json.load(fh)
    members = [(model_from_doc(m["checkpoint"]), float(m["alpha"]))
               for m in doc["members"]]
    return EnsembleModel(members=members, n_classes=int(doc["n_classes"]))
