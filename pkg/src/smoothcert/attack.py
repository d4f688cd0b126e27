"""Adversarial evaluation harness: group-level attacks and paired metrics.

Three feature-space attack operators (group noise, combined ablation +
noise, metamorphic micro-mutation) plus a deterministic evaluator that
applies an attack row by row and reports confusion-matrix metrics. Attack
streams are salted independently of the defense's variant streams, so the
attacker never sees the defender's randomness; two evaluations with the
same attack config see bit-identical attacked vectors, which makes
BC-vs-SC comparisons paired.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import LabeledDataset
from .gbdt import BoostedModel, predict_label
from .smoothing import GroupPartition, derive_stream

AttackMode = str  # "group_noise" | "combined" | "metamorphic"
_MODES = ("group_noise", "combined", "metamorphic")


@dataclass(frozen=True)
class AttackConfig:
    mode: AttackMode
    group_fraction: float = 0.1
    sigma_attack: float = 0.3
    min_cosine: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if not 0.0 <= self.group_fraction <= 1.0:
            raise ValueError("group_fraction must lie in [0, 1]")
        if self.sigma_attack < 0:
            raise ValueError("sigma_attack must be >= 0")
        if not 0.0 < self.min_cosine <= 1.0:
            raise ValueError("min_cosine must lie in (0, 1]")


@dataclass(frozen=True)
class EvalReport:
    scenario: str
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()  # metrics whose denominator was zero

    @staticmethod
    def from_confusion(scenario: str, tp: int, tn: int, fp: int, fn: int) -> "EvalReport":
        total = tp + tn + fp + fn
        degenerate = []
        accuracy = (tp + tn) / total if total else 0.0
        if tp + fp:
            precision = tp / (tp + fp)
        else:
            precision = 0.0
            degenerate.append("precision")
        if tp + fn:
            recall = tp / (tp + fn)
        else:
            recall = 0.0
            degenerate.append("recall")
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            degenerate.append("f1")
        return EvalReport(scenario=scenario, tp=tp, tn=tn, fp=fp, fn=fn,
                          accuracy=accuracy, precision=precision, recall=recall,
                          f1=f1, degenerate=tuple(degenerate))


def _select_groups(n_total: int, n_pick: int, stream: np.random.Generator) -> np.ndarray:
    if n_pick == 0:
        return np.empty(0, dtype=np.int64)
    if n_pick >= n_total:
        return np.arange(n_total)
    return np.sort(stream.choice(n_total, size=n_pick, replace=False))


def group_noise_attack(x: np.ndarray, partition: GroupPartition, q: float,
                       sigma_attack: float, stream: np.random.Generator) -> np.ndarray:
    """Add Gaussian(0, sigma_attack^2) to every feature of ceil(q*K) groups."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    out = np.array(x, dtype=np.float64, copy=True)
    n_pick = math.ceil(q * partition.n_groups)
    groups = _select_groups(partition.n_groups, n_pick, stream)
    if sigma_attack == 0 or len(groups) == 0:
        return out
    idx = np.concatenate([partition.group_indices(g) for g in groups])
    out[idx] += stream.normal(0.0, sigma_attack, size=len(idx))
    return out


def combined_attack(x: np.ndarray, partition: GroupPartition, q: float,
                    sigma_attack: float, stream: np.random.Generator) -> np.ndarray:
    """Zero ceil(q*K) groups, then noise a second ceil(q*K)-group selection.

    The noised selection is disjoint from the ablated one when enough
    groups exist; otherwise it falls back to an overlapping draw and emits
    a warning.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    out = np.array(x, dtype=np.float64, copy=True)
    k = partition.n_groups
    n_pick = math.ceil(q * k)
    if n_pick == 0:
        return out

    ablated = _select_groups(k, n_pick, stream)
    idx = np.concatenate([partition.group_indices(g) for g in ablated])
    out[idx] = 0.0

    remaining = np.setdiff1d(np.arange(k), ablated)
    if len(remaining) >= n_pick:
        picks = _select_groups(len(remaining), n_pick, stream)
        noised = remaining[picks]
    else:
        warnings.warn(
            f"combined attack: {2 * n_pick} groups wanted but only {k} exist; "
            "noise selection may overlap the ablated groups", stacklevel=2)
        noised = _select_groups(k, n_pick, stream)
    if sigma_attack > 0 and len(noised):
        nidx = np.concatenate([partition.group_indices(g) for g in noised])
        out[nidx] += stream.normal(0.0, sigma_attack, size=len(nidx))
    return out


def metamorphic_simulate(x: np.ndarray, stream: np.random.Generator,
                         min_cosine: float = 0.99, sparsity: float = 0.01,
                         scale: float = 0.05) -> np.ndarray:
    """Sparse micro-mutation preserving cosine similarity >= min_cosine.

    Proposes x + delta with delta nonzero on ceil(sparsity*d) coordinates,
    entries Gaussian with std scale*rms(x); rejected proposals are redrawn
    up to 100 times, so any returned mutant satisfies the bound.
    """
    x = np.asarray(x, dtype=np.float64)
    norm_x = np.linalg.norm(x)
    if norm_x == 0:
        raise ValueError("metamorphic mutation needs a nonzero input vector")
    d = len(x)
    n_coords = math.ceil(sparsity * d)
    std = scale * math.sqrt(float(np.mean(x * x)))
    for _ in range(100):
        out = np.array(x, copy=True)
        coords = stream.choice(d, size=n_coords, replace=False)
        out[coords] += stream.normal(0.0, std, size=n_coords)
        denom = norm_x * np.linalg.norm(out)
        cosine = float(np.dot(x, out) / denom) if denom > 0 else 0.0
        if cosine >= min_cosine:
            return out
    raise ValueError(
        f"cannot satisfy similarity bound {min_cosine} after 100 proposals; "
        "reduce scale or sparsity")


def apply_attack(x: np.ndarray, cfg: AttackConfig, partition: GroupPartition,
                 row_index: int) -> np.ndarray:
    """Attack one row with its row-indexed stream (paired across models)."""
    stream = derive_stream(cfg.seed, "attack", cfg.mode, row_index)
    if cfg.mode == "group_noise":
        return group_noise_attack(x, partition, cfg.group_fraction,
                                  cfg.sigma_attack, stream)
    if cfg.mode == "combined":
        return combined_attack(x, partition, cfg.group_fraction,
                               cfg.sigma_attack, stream)
    return metamorphic_simulate(x, stream, min_cosine=cfg.min_cosine)


def evaluate_model(predict_fn: Callable[[np.ndarray, int], int], ds: LabeledDataset,
                   attack: AttackConfig | None = None,
                   partition: GroupPartition | None = None,
                   scenario: str = "") -> EvalReport:
    """Confusion-matrix metrics of a predictor over a (possibly attacked) set.

    ``predict_fn(x, row_index) -> {0, 1}`` wraps either the base or the
    smoothed predictor. When an attack config is given, each row is
    perturbed with its own derived stream before prediction, so repeated
    evaluations (and different models) see identical attacked vectors.
    """
    if ds.n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if attack is not None and partition is None:
        raise ValueError("attacked evaluation needs the group partition")
    tp = tn = fp = fn = 0
    for i in range(ds.n):
        x = ds.vectors[i]
        if attack is not None:
            x = apply_attack(x, attack, partition, i)
        pred = predict_fn(x, i)
        truth = int(ds.labels[i])
        if truth == 1:
            tp, fn = (tp + 1, fn) if pred == 1 else (tp, fn + 1)
        else:
            tn, fp = (tn + 1, fp) if pred == 0 else (tn, fp + 1)
    return EvalReport.from_confusion(scenario or (attack.mode if attack else "clean"),
                                     tp, tn, fp, fn)


def bc_predictor(model: BoostedModel) -> Callable[[np.ndarray, int], int]:
    return lambda x, _i: predict_label(model, x)


@dataclass(frozen=True)
class StressRow:
    q: float
    sigma_attack: float
    bc: EvalReport
    sc: EvalReport


def stress_suite(bc: BoostedModel, sc_predict: Callable[[np.ndarray, int], int],
                 ds: LabeledDataset, partition: GroupPartition,
                 q_levels: Sequence[float] = (0.1, 0.2, 0.3, 0.4),
                 sigma_attack: float = 0.3, seed: int = 0) -> list[StressRow]:
    """Escalating group-noise attack, BC vs SC on identical attacked rows."""
    rows = []
    for level, q in enumerate(q_levels):
        cfg = AttackConfig(mode="group_noise", group_fraction=q,
                           sigma_attack=sigma_attack, seed=seed + level)
        bc_report = evaluate_model(bc_predictor(bc), ds, cfg, partition,
                                   scenario=f"group_noise q={q:g} BC")
        sc_report = evaluate_model(sc_predict, ds, cfg, partition,
                                   scenario=f"group_noise q={q:g} SC")
        rows.append(StressRow(q=q, sigma_attack=sigma_attack,
                              bc=bc_report, sc=sc_report))
    return rows


def stress_csv(rows: Sequence[StressRow]) -> str:
    """CSV table: scenario,model,q,sigma,accuracy,precision,recall,f1."""
    lines = ["scenario,model,q,sigma,accuracy,precision,recall,f1"]
    for row in rows:
        for model_name, report in (("BC", row.bc), ("SC", row.sc)):
            lines.append(
                f"group_noise,{model_name},{row.q:g},{row.sigma_attack:g},"
                f"{report.accuracy:.6f},{report.precision:.6f},"
                f"{report.recall:.6f},{report.f1:.6f}")
    return "\n".join(lines) + "\n"
