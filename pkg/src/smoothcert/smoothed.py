"""Targeted augmentation training and majority-vote stochastic inference.

The smoothed classifier is an ordinary boosted model trained on an
augmented set: every training row the base classifier flags as malicious
contributes M stochastic ablation+noise variants (keeping its ground-truth
label), rows predicted benign pass through untouched. At inference time
the prediction is the majority vote over N independently perturbed copies
of the input; ties break to malicious.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gbdt
from .dataset import LabeledDataset
from .gbdt import BoostedModel, TrainConfig
from .smoothing import GroupPartition, PerturbationConfig, sample_variant, variant_matrix


@dataclass(frozen=True)
class AugmentationConfig:
    variants_per_sample: int = 15
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)

    def __post_init__(self):
        if self.variants_per_sample < 1:
            raise ValueError("variants_per_sample must be >= 1")


@dataclass(frozen=True)
class VoteTally:
    votes_benign: int
    votes_malicious: int

    @property
    def n(self) -> int:
        return self.votes_benign + self.votes_malicious


@dataclass(frozen=True)
class SmoothedPrediction:
    label: int
    p_hat: float  # majority-class vote fraction
    tally: VoteTally


def augment_training_set(train: LabeledDataset, bc: BoostedModel,
                         cfg: AugmentationConfig,
                         partition: GroupPartition) -> LabeledDataset:
    """Originals plus M variants of every row the base classifier flags.

    Selection is by prediction, not label: a benign row the BC mispredicts
    as malicious is augmented too, and its variants keep label 0. Variant
    ids are ``<original id>#aug<j>``.
    """
    if partition.dim != train.dim:
        raise ValueError(f"partition dim {partition.dim} != dataset dim {train.dim}")
    flags = gbdt.predict_label(bc, train.vectors)
    m = cfg.variants_per_sample

    rows = [train.vectors]
    labels = [np.asarray(train.labels)]
    ids = list(train.ids)
    for i in np.nonzero(flags == 1)[0]:
        x = train.vectors[i]
        variants = np.stack([
            sample_variant(x, partition, cfg.perturbation, train.ids[i], j)
            for j in range(m)])
        rows.append(variants)
        labels.append(np.full(m, train.labels[i], dtype=np.int64))
        ids.extend(f"{train.ids[i]}#aug{j}" for j in range(m))

    return LabeledDataset(vectors=np.vstack(rows),
                          labels=np.concatenate(labels),
                          ids=tuple(ids),
                          layout_id=train.layout_id)


def train_sc(augmented: LabeledDataset, cfg: TrainConfig | None = None) -> BoostedModel:
    """Same trainer and hyperparameters as the base classifier."""
    return gbdt.train(augmented, cfg)


def smoothed_predict(model: BoostedModel, x: np.ndarray, n_votes: int = 50,
                     perturbation: PerturbationConfig | None = None,
                     partition: GroupPartition | None = None,
                     sample_id: str = "") -> SmoothedPrediction:
    """Majority vote over n_votes perturbed variants of x.

    Deterministic given (perturbation.master_seed, sample_id); the variant
    evaluations are order-independent, so the tally does not depend on how
    the votes are scheduled. A tie votes malicious.
    """
    if n_votes < 1:
        raise ValueError("n_votes must be >= 1")
    if perturbation is None:
        perturbation = PerturbationConfig()
    if partition is None:
        raise ValueError("partition is required")
    variants = variant_matrix(np.asarray(x, dtype=np.float64), partition,
                              perturbation, sample_id, n_votes)
    votes = gbdt.predict_label(model, variants)
    malicious = int(votes.sum())
    benign = n_votes - malicious
    label = 1 if malicious >= benign else 0
    p_hat = max(malicious, benign) / n_votes
    return SmoothedPrediction(label=label, p_hat=p_hat,
                              tally=VoteTally(votes_benign=benign,
                                              votes_malicious=malicious))


def prediction_record(sample_id: str, pred: SmoothedPrediction) -> dict:
    """JSON-lines record shape for smoothed predictions."""
    return {
        "id": sample_id,
        "label": pred.label,
        "p_hat": pred.p_hat,
        "votes": {"benign": pred.tally.votes_benign,
                  "malicious": pred.tally.votes_malicious},
        "n": pred.tally.n,
    }
