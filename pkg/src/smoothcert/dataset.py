"""Labeled dataset container, file I/O, stratified splitting, synthetic data.

Datasets are immutable after construction. The on-disk format is CSV with
header ``id,label,f0,...,f{d-1}`` (reals printed with 9 significant
digits, UTF-8, LF); files ending in ``.jsonl`` use JSON-lines records
``{"id", "label", "features"}`` instead.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

import numpy as np

from .smoothing import GroupPartition, derive_stream


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files; messages carry the line number."""


_SYNTH_LAYOUT = re.compile(r"^synth-d(\d+)$")


def synth_layout_id(dim: int) -> str:
    return f"synth-d{dim}"


def layout_dim_hint(layout_id: str) -> int | None:
    """Dimension implied by a layout id, or None when the id carries none."""
    m = _SYNTH_LAYOUT.match(layout_id)
    if m:
        return int(m.group(1))
    if layout_id == "pe-static-629":
        return 629
    return None


@dataclass(frozen=True)
class LabeledDataset:
    vectors: np.ndarray  # (N, d) float64
    labels: np.ndarray   # (N,) int, values in {0, 1}
    ids: tuple[str, ...]
    layout_id: str

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d matrix")
        n = self.vectors.shape[0]
        if len(self.labels) != n or len(self.ids) != n:
            raise ValueError("vectors, labels and ids must have equal length")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int
    dim: int
    signal_strength: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class <= 0 or self.dim <= 0:
            raise ValueError("n_per_class and dim must be positive")
        if self.signal_strength < 0 or self.noise_std <= 0:
            raise ValueError("signal_strength must be >= 0 and noise_std > 0")


def _format_real(x: float) -> str:
    return f"{x:.9g}"


def save_dataset(ds: LabeledDataset, path) -> None:
    path = str(path)
    if path.endswith(".jsonl"):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i in range(ds.n):
                rec = {
                    "id": ds.ids[i],
                    "label": int(ds.labels[i]),
                    "features": [float(_format_real(v)) for v in ds.vectors[i]],
                }
                fh.write(json.dumps(rec, separators=(",", ":")))
                fh.write("\n")
        return
    d = ds.dim
    header = "id,label," + ",".join(f"f{j}" for j in range(d))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(ds.n):
            if "," in ds.ids[i] or "\n" in ds.ids[i]:
                raise ValueError(f"id {ds.ids[i]!r} contains a CSV delimiter")
            row = ",".join(_format_real(v) for v in ds.vectors[i])
            fh.write(f"{ds.ids[i]},{int(ds.labels[i])},{row}\n")


def _parse_label(tok: str, lineno: int) -> int:
    try:
        label = int(tok)
    except ValueError:
        raise DatasetFormatError(f"label not an integer at line {lineno}") from None
    if label not in (0, 1):
        raise DatasetFormatError(f"label out of domain at line {lineno}")
    return label


def load_dataset(path, layout_id: str) -> LabeledDataset:
    """Load a dataset file, preserving row order and validating every row."""
    path = str(path)
    ids: list[str] = []
    labels: list[int] = []
    rows: list[np.ndarray] = []
    expected = layout_dim_hint(layout_id)

    if path.endswith(".jsonl"):
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    ids.append(str(rec["id"]))
                    labels.append(_parse_label(str(rec["label"]), lineno))
                    vec = np.asarray(rec["features"], dtype=np.float64)
                except DatasetFormatError:
                    raise
                except (KeyError, ValueError, TypeError) as exc:
                    raise DatasetFormatError(f"malformed record at line {lineno}: {exc}") from None
                rows.append(vec)
                _check_row_dim(vec, rows[0], expected, lineno)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("id,label"):
                raise DatasetFormatError("missing id,label header at line 1")
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) < 2:
                    raise DatasetFormatError(f"too few fields at line {lineno}")
                ids.append(parts[0])
                labels.append(_parse_label(parts[1], lineno))
                try:
                    vec = np.array([float(t) for t in parts[2:]], dtype=np.float64)
                except ValueError:
                    raise DatasetFormatError(f"non-numeric feature at line {lineno}") from None
                rows.append(vec)
                _check_row_dim(vec, rows[0], expected, lineno)

    if rows:
        vectors = np.vstack(rows)
    else:
        vectors = np.zeros((0, expected or 0), dtype=np.float64)
    return LabeledDataset(vectors=vectors, labels=np.array(labels, dtype=np.int64),
                          ids=tuple(ids), layout_id=layout_id)


def _check_row_dim(vec, first_row, expected, lineno):
    if expected is not None and len(vec) != expected:
        raise DatasetFormatError(
            f"dimension mismatch at line {lineno}: got {len(vec)}, layout wants {expected}")
    if len(vec) != len(first_row):
        raise DatasetFormatError(
            f"dimension mismatch at line {lineno}: got {len(vec)}, first row has {len(first_row)}")


def stratified_split(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Per-class split: train takes floor(fraction * N_c), remainder to test.

    Ids partition exactly (none lost, none duplicated); row order inside
    each part follows the original dataset order; the per-class shuffle is
    deterministic in ``spec.seed``.
    """
    labels = np.asarray(ds.labels)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for cls in (0, 1):
        members = np.nonzero(labels == cls)[0]
        if len(members) < 2:
            raise ValueError(f"class {cls} has fewer than 2 samples")
        stream = derive_stream(spec.seed, "split", cls)
        perm = stream.permutation(len(members))
        n_train = math.floor(spec.train_fraction * len(members))
        chosen = members[perm[:n_train]]
        rest = members[perm[n_train:]]
        train_idx.append(np.sort(chosen))
        test_idx.append(np.sort(rest))
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return _take(ds, tr), _take(ds, te)


def _take(ds: LabeledDataset, idx: np.ndarray) -> LabeledDataset:
    return LabeledDataset(
        vectors=ds.vectors[idx].copy(),
        labels=ds.labels[idx].copy(),
        ids=tuple(ds.ids[i] for i in idx),
        layout_id=ds.layout_id,
    )


def synth_generate(spec: SynthSpec, partition: GroupPartition) -> LabeledDataset:
    """Two-class Gaussian dataset where every group carries class signal.

    Benign rows are N(0, noise_std^2) per feature. Each group g gets a
    fixed unit-norm direction u_g (drawn once from the seed); malicious
    rows are N(signal_strength * u_g, noise_std^2) on g's features. Every
    group is therefore independently informative, so majority voting over
    ablated variants has signal to recover by construction.
    """
    if partition.dim != spec.dim:
        raise ValueError(f"partition covers dim {partition.dim}, spec has dim {spec.dim}")
    direction_stream = derive_stream(spec.seed, "synth-directions")
    mean = np.zeros(spec.dim, dtype=np.float64)
    for start, end in partition.groups:
        u = direction_stream.standard_normal(end - start)
        u /= np.linalg.norm(u)
        mean[start:end] = spec.signal_strength * u

    n = spec.n_per_class
    benign_stream = derive_stream(spec.seed, "synth-benign")
    malicious_stream = derive_stream(spec.seed, "synth-malicious")
    benign = benign_stream.standard_normal((n, spec.dim)) * spec.noise_std
    malicious = malicious_stream.standard_normal((n, spec.dim)) * spec.noise_std + mean

    vectors = np.vstack([benign, malicious])
    labels = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)])
    ids = tuple(f"b{i:05d}" for i in range(n)) + tuple(f"m{i:05d}" for i in range(n))
    return LabeledDataset(vectors=vectors, labels=labels, ids=ids,
                          layout_id=synth_layout_id(spec.dim))
