"""Feature grouping and the stochastic ablation + noise transformation.

A variant of an input x is produced in two stages: drop a random subset of
feature groups (zeroing them), then add Gaussian noise to a random subset
of the surviving features. Randomness is fully reproducible: every stream
is keyed by SHA-256 over (master_seed, labels...) and drives a Philox
counter-based generator, so any (sample_id, variant_index) pair can be
regenerated independently, in any order, on any worker.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np


def derive_stream(master_seed: int, *labels) -> np.random.Generator:
    """Independent generator keyed by the seed and a label tuple.

    The key is the first 128 bits of SHA-256 over the decimal seed and the
    stringified labels (0x1f-separated), feeding a Philox4x64 generator.
    This derivation is part of the reproducibility contract: the same
    (seed, labels) always yields the same stream, on every platform.
    """
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("ascii"))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    key = int.from_bytes(h.digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def round_half_away(x: float) -> int:
    """Round half away from zero (5.5 -> 6, -5.5 -> -6)."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


@dataclass(frozen=True)
class GroupPartition:
    dim: int
    groups: tuple[tuple[int, int], ...]  # [start, end) index ranges

    def __post_init__(self):
        covered = 0
        prev_end = 0
        for start, end in self.groups:
            if start != prev_end or end <= start:
                raise ValueError("groups must be contiguous, ordered and non-empty")
            covered += end - start
            prev_end = end
        if covered != self.dim or prev_end != self.dim:
            raise ValueError(f"groups cover {covered} indices, expected {self.dim}")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_indices(self, g: int) -> np.ndarray:
        start, end = self.groups[g]
        return np.arange(start, end)


@dataclass(frozen=True)
class PerturbationConfig:
    group_keep_fraction: float = 0.8
    noise_feature_fraction: float = 0.1
    sigma: float = 0.3
    master_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.group_keep_fraction <= 1.0:
            raise ValueError("group_keep_fraction must lie in (0, 1]")
        if not 0.0 <= self.noise_feature_fraction <= 1.0:
            raise ValueError("noise_feature_fraction must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class AblationMask:
    partition: GroupPartition
    kept_groups: frozenset[int]
    noised_features: np.ndarray  # sorted feature indices, subset of kept groups

    def __post_init__(self):
        kept = self.kept_feature_indices()
        if len(self.noised_features) and not np.isin(self.noised_features, kept).all():
            raise ValueError("noised_features must lie inside kept groups")

    def kept_feature_indices(self) -> np.ndarray:
        if not self.kept_groups:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(
            [self.partition.group_indices(g) for g in sorted(self.kept_groups)])

    def dropped_feature_indices(self) -> np.ndarray:
        dropped = [g for g in range(self.partition.n_groups) if g not in self.kept_groups]
        if not dropped:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.partition.group_indices(g) for g in dropped])


def make_partition(dim: int, group_size: int = 50) -> GroupPartition:
    """Contiguous blocks of ``group_size`` indices; the last holds the remainder."""
    if dim < 1 or group_size < 1:
        raise ValueError("dim and group_size must be >= 1")
    groups = tuple(
        (start, min(start + group_size, dim)) for start in range(0, dim, group_size))
    return GroupPartition(dim=dim, groups=groups)


def save_partition(partition: GroupPartition, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for start, end in partition.groups:
            fh.write(" ".join(str(i) for i in range(start, end)))
            fh.write("\n")


def load_partition(path) -> GroupPartition:
    """Read one group per line (space-separated feature indices) and validate.

    Lines must form contiguous ascending runs that together tile
    {0..dim-1}; anything else is rejected.
    """
    groups = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            idx = [int(t) for t in line.split()]
            if idx != list(range(idx[0], idx[0] + len(idx))):
                raise ValueError(f"group at line {lineno} is not a contiguous ascending run")
            groups.append((idx[0], idx[0] + len(idx)))
    if not groups:
        raise ValueError("partition file holds no groups")
    dim = max(end for _, end in groups)
    return GroupPartition(dim=dim, groups=tuple(groups))


def sample_mask(partition: GroupPartition, cfg: PerturbationConfig,
                stream: np.random.Generator) -> AblationMask:
    """Draw kept groups and noised-feature subset for one variant.

    Exactly max(1, round(keep_fraction * K)) groups survive (round half
    away from zero); noised features are drawn without replacement from
    the survivors' indices, count = round(noise_fraction * kept features).
    """
    k = partition.n_groups
    n_keep = max(1, round_half_away(cfg.group_keep_fraction * k))
    if n_keep >= k:
        kept = np.arange(k)
    else:
        kept = stream.choice(k, size=n_keep, replace=False)
    kept_set = frozenset(int(g) for g in kept)

    kept_features = np.concatenate([partition.group_indices(g) for g in sorted(kept_set)])
    n_noise = round_half_away(cfg.noise_feature_fraction * len(kept_features))
    if n_noise == 0:
        noised = np.empty(0, dtype=np.int64)
    else:
        picks = stream.choice(len(kept_features), size=n_noise, replace=False)
        noised = np.sort(kept_features[picks])
    return AblationMask(partition=partition, kept_groups=kept_set, noised_features=noised)


def apply_ablation(x: np.ndarray, mask: AblationMask) -> np.ndarray:
    """Zero out every feature of the dropped groups; input is not modified."""
    if len(x) != mask.partition.dim:
        raise ValueError(f"vector has dim {len(x)}, partition expects {mask.partition.dim}")
    out = np.array(x, dtype=np.float64, copy=True)
    dropped = mask.dropped_feature_indices()
    if len(dropped):
        out[dropped] = 0.0
    return out


def inject_noise(x: np.ndarray, mask: AblationMask, sigma: float,
                 stream: np.random.Generator) -> np.ndarray:
    """Add iid Gaussian(0, sigma^2) to the mask's noised features only."""
    out = np.array(x, dtype=np.float64, copy=True)
    if sigma == 0 or len(mask.noised_features) == 0:
        return out
    out[mask.noised_features] += stream.normal(0.0, sigma, size=len(mask.noised_features))
    return out


def sample_variant(x: np.ndarray, partition: GroupPartition, cfg: PerturbationConfig,
                   sample_id: str, variant_index: int) -> np.ndarray:
    """One stochastic variant: ablation then targeted noise.

    The stream is derived from (cfg.master_seed, sample_id, variant_index)
    alone, so the same triple always reproduces the same variant and
    distinct indices give independent draws.
    """
    stream = derive_stream(cfg.master_seed, "variant", sample_id, variant_index)
    mask = sample_mask(partition, cfg, stream)
    return inject_noise(apply_ablation(x, mask), mask, cfg.sigma, stream)


def variant_matrix(x: np.ndarray, partition: GroupPartition, cfg: PerturbationConfig,
                   sample_id: str, n_variants: int) -> np.ndarray:
    """Stack variants 0..n_variants-1 of one sample into an (n, d) matrix."""
    return np.stack([
        sample_variant(x, partition, cfg, sample_id, i) for i in range(n_variants)])
