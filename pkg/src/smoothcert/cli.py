"""Command-line entry point: reproducible train/evaluate/certify workflows.

Every command resolves one flat configuration (CLI flag > config file >
built-in default), logs it together with the master seed, and writes
deterministic artifacts: rerunning a command with the same config and
seed reproduces output files byte for byte. Two built-in presets bundle
the methodology defaults ("paper-method": 15 variants, keep 0.8, noise
0.1, sigma 0.3) and the lighter evaluation setting ("paper-eval": 5
variants, keep 0.9, sigma 0.15).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import attack as attack_mod
from . import certify as certify_mod
from . import dataset as dataset_mod
from . import gbdt, pe_features, smoothed, smoothing

log = logging.getLogger("smoothcert")

PRESETS = {
    "paper-method": {
        "augmentation.variants": 15,
        "perturbation.keep_fraction": 0.8,
        "perturbation.noise_fraction": 0.1,
        "perturbation.sigma": 0.3,
    },
    "paper-eval": {
        "augmentation.variants": 5,
        "perturbation.keep_fraction": 0.9,
        "perturbation.noise_fraction": 0.1,
        "perturbation.sigma": 0.15,
    },
}

DEFAULTS = {
    "layout_id": pe_features.DEFAULT_LAYOUT_ID,
    "group_size": 50,
    "master_seed": 0,
    "threads": 0,  # 0 = use available cores
    "perturbation.keep_fraction": 0.8,
    "perturbation.noise_fraction": 0.1,
    "perturbation.sigma": 0.3,
    "augmentation.variants": 15,
    "train.n_estimators": 100,
    "train.max_depth": 4,
    "train.learning_rate": 0.1,
    "train.min_samples_leaf": 20,
    "train.l2_lambda": 1.0,
    "certify.alpha": 0.001,
    "certify.n_votes": 50,
    "certify.sigma": 0.3,
    "certify.sigma_min": 0.01,
    "certify.sigma_max": 2.0,
    "certify.tolerance": 1e-3,
    "attack.sigma": 0.3,
    "attack.q_levels": "0.1,0.2,0.3,0.4",
    "split.train_fraction": 0.8,
}

_KEY_TYPES = {key: type(val) for key, val in DEFAULTS.items()}


class CommandError(Exception):
    """User-facing failure with a short diagnostic; maps to exit code 1."""


def load_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; blank lines and #-comments are skipped."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CommandError(f"config line {lineno} is not 'key = value': {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in DEFAULTS:
                raise CommandError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw, lineno)
    return values


def _coerce(key: str, raw: str, lineno: int):
    want = _KEY_TYPES[key]
    try:
        if want is int:
            return int(raw)
        if want is float:
            return float(raw)
        return raw
    except ValueError:
        raise CommandError(
            f"config line {lineno}: {key} expects {want.__name__}, got {raw!r}") from None


class RunConfig:
    """Resolved flat configuration with typed accessors for each module."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def perturbation(self) -> smoothing.PerturbationConfig:
        return smoothing.PerturbationConfig(
            group_keep_fraction=self.values["perturbation.keep_fraction"],
            noise_feature_fraction=self.values["perturbation.noise_fraction"],
            sigma=self.values["perturbation.sigma"],
            master_seed=self.values["master_seed"],
        )

    def train_config(self) -> gbdt.TrainConfig:
        return gbdt.TrainConfig(
            n_estimators=self.values["train.n_estimators"],
            max_depth=self.values["train.max_depth"],
            learning_rate=self.values["train.learning_rate"],
            min_samples_leaf=self.values["train.min_samples_leaf"],
            l2_lambda=self.values["train.l2_lambda"],
            seed=self.values["master_seed"],
        )

    def partition_for(self, dim: int) -> smoothing.GroupPartition:
        return smoothing.make_partition(dim, self.values["group_size"])

    def q_levels(self) -> list[float]:
        return [float(t) for t in str(self.values["attack.q_levels"]).split(",") if t]

    def threads(self) -> int:
        t = self.values["threads"]
        return t if t > 0 else (os.cpu_count() or 1)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    preset = getattr(args, "preset", None)
    if preset:
        values.update(PRESETS[preset])
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    overrides = {
        "master_seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "layout_id": getattr(args, "layout_id", None),
        "group_size": getattr(args, "group_size", None),
        "certify.alpha": getattr(args, "alpha", None),
        "certify.sigma": getattr(args, "sigma", None),
        "certify.n_votes": getattr(args, "votes", None),
        "attack.sigma": getattr(args, "sigma_attack", None),
        "attack.q_levels": getattr(args, "q_levels", None),
        "split.train_fraction": getattr(args, "train_fraction", None),
        "augmentation.variants": getattr(args, "variants", None),
        "train.n_estimators": getattr(args, "estimators", None),
        "train.max_depth": getattr(args, "max_depth", None),
    }
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    cfg = RunConfig(values)
    log.info("resolved config: %s", json.dumps(values, sort_keys=True))
    log.info("master_seed: %s", values["master_seed"])
    return cfg


def _write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def _load_dataset(path, layout_id) -> dataset_mod.LabeledDataset:
    if not Path(path).exists():
        raise CommandError(f"dataset file not found: {path}")
    try:
        return dataset_mod.load_dataset(path, layout_id)
    except dataset_mod.DatasetFormatError as exc:
        raise CommandError(f"dataset format error in {path}: {exc}") from None


def _load_model(path) -> gbdt.BoostedModel:
    if not Path(path).exists():
        raise CommandError(f"model file not found: {path}")
    try:
        return gbdt.load_model(path)
    except gbdt.ModelFormatError as exc:
        raise CommandError(f"model format error in {path}: {exc}") from None


def _check_dims(model: gbdt.BoostedModel, ds: dataset_mod.LabeledDataset) -> None:
    hint = model.dim_hint
    if hint is not None and hint > ds.dim:
        raise CommandError(
            f"layout/dimension mismatch: model uses feature {hint - 1}, "
            f"dataset has dim {ds.dim}")


def cmd_extract(args, cfg: RunConfig) -> int:
    layout = pe_features.get_layout(cfg["layout_id"])
    rows, labels, ids = [], [], []
    sources = []
    if args.benign_dir:
        sources.append((args.benign_dir, 0))
    if args.malicious_dir:
        sources.append((args.malicious_dir, 1))
    if not sources:
        raise CommandError("extract needs --benign-dir and/or --malicious-dir")
    for directory, label in sources:
        root = Path(directory)
        if not root.is_dir():
            raise CommandError(f"not a directory: {directory}")
        for path in sorted(p for p in root.rglob("*") if p.is_file()):
            data = path.read_bytes()
            rel = str(path.relative_to(root)).replace(",", "_")
            fv = pe_features.extract(pe_features.RawBinary(data, rel), layout)
            rows.append(fv.values)
            labels.append(label)
            ids.append(rel)
            log.info("extracted %s (%d bytes, label %d)", rel, len(data), label)
    if not rows:
        raise CommandError("no input files found")
    ds = dataset_mod.LabeledDataset(
        vectors=np.vstack(rows), labels=np.array(labels, dtype=np.int64),
        ids=tuple(ids), layout_id=layout.layout_id)
    dataset_mod.save_dataset(ds, args.out)
    log.info("wrote %d rows to %s", ds.n, args.out)
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    spec = dataset_mod.SynthSpec(
        n_per_class=args.n_per_class, dim=args.dim,
        signal_strength=args.signal, noise_std=args.noise_std,
        seed=cfg["master_seed"])
    partition = cfg.partition_for(args.dim)
    ds = dataset_mod.synth_generate(spec, partition)
    dataset_mod.save_dataset(ds, args.out)
    log.info("wrote synthetic dataset (%d rows, dim %d) to %s", ds.n, ds.dim, args.out)
    return 0


def cmd_split(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.dataset, cfg["layout_id"])
    spec = dataset_mod.SplitSpec(train_fraction=cfg["split.train_fraction"],
                                 seed=cfg["master_seed"])
    train, test = dataset_mod.stratified_split(ds, spec)
    dataset_mod.save_dataset(train, args.train_out)
    dataset_mod.save_dataset(test, args.test_out)
    log.info("split %d rows into %d train / %d test", ds.n, train.n, test.n)
    return 0


def cmd_train_bc(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.dataset, cfg["layout_id"])
    try:
        model = gbdt.train(ds, cfg.train_config())
    except gbdt.DegenerateLabelsError as exc:
        raise CommandError(str(exc)) from None
    gbdt.save_model(model, args.out)
    log.info("trained base classifier (%d trees) -> %s",
             len(model.trees), args.out)
    return 0


def cmd_train_sc(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.dataset, cfg["layout_id"])
    bc = _load_model(args.bc)
    _check_dims(bc, ds)
    partition = cfg.partition_for(ds.dim)
    aug_cfg = smoothed.AugmentationConfig(
        variants_per_sample=cfg["augmentation.variants"],
        perturbation=cfg.perturbation())
    augmented = smoothed.augment_training_set(ds, bc, aug_cfg, partition)
    log.info("augmented %d rows to %d", ds.n, augmented.n)
    try:
        model = smoothed.train_sc(augmented, cfg.train_config())
    except gbdt.DegenerateLabelsError as exc:
        raise CommandError(str(exc)) from None
    gbdt.save_model(model, args.out)
    log.info("trained smoothed classifier (%d trees) -> %s",
             len(model.trees), args.out)
    return 0


def cmd_predict(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.dataset, cfg["layout_id"])
    model = _load_model(args.model)
    _check_dims(model, ds)
    if args.smoothed:
        partition = cfg.partition_for(ds.dim)
        perturbation = cfg.perturbation()
        n_votes = cfg["certify.n_votes"]

        def one(i: int) -> dict:
            pred = smoothed.smoothed_predict(
                model, ds.vectors[i], n_votes=n_votes,
                perturbation=perturbation, partition=partition,
                sample_id=ds.ids[i])
            return smoothed.prediction_record(ds.ids[i], pred)

        records = _parallel_map(one, ds.n, cfg.threads())
    else:
        probs = gbdt.predict_proba(model, ds.vectors)
        records = [
            {"id": ds.ids[i], "label": int(probs[i] >= 0.5), "proba": float(probs[i])}
            for i in range(ds.n)
        ]
    _write_jsonl(args.out, records)
    log.info("wrote %d prediction records to %s", len(records), args.out)
    return 0


def cmd_certify(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.dataset, cfg["layout_id"])
    model = _load_model(args.model)
    _check_dims(model, ds)
    partition = cfg.partition_for(ds.dim)
    perturbation = cfg.perturbation()
    alpha = cfg["certify.alpha"]
    n_votes = cfg["certify.n_votes"]
    sigma = cfg["certify.sigma"]
    search_cfg = certify_mod.SigmaSearchConfig(
        sigma_min=cfg["certify.sigma_min"], sigma_max=cfg["certify.sigma_max"],
        tolerance=cfg["certify.tolerance"], n_votes=n_votes)

    def one(i: int) -> dict:
        cert = certify_mod.certify(model, ds.vectors[i], ds.ids[i], n_votes,
                                   sigma, alpha, partition, perturbation)
        rec = cert.to_record()
        if args.search:
            sigma_star, radius_max, trace = certify_mod.max_radius_search(
                model, ds.vectors[i], ds.ids[i], search_cfg, alpha,
                partition, perturbation)
            rec["sigma_star"] = sigma_star
            rec["radius_max"] = radius_max
            rec["trace"] = [[s, pl, r] for s, pl, r in trace]
        return rec

    records = _parallel_map(one, ds.n, cfg.threads())
    _write_jsonl(args.out, records)
    certified = sum(1 for r in records if r["certified"])
    log.info("certified %d/%d samples -> %s", certified, len(records), args.out)
    return 0


def cmd_stress(args, cfg: RunConfig) -> int:
    ds = _load_dataset(args.dataset, cfg["layout_id"])
    bc = _load_model(args.bc)
    sc = _load_model(args.sc)
    _check_dims(bc, ds)
    _check_dims(sc, ds)
    partition = cfg.partition_for(ds.dim)
    perturbation = cfg.perturbation()
    n_votes = cfg["certify.n_votes"]

    def sc_predict(x: np.ndarray, i: int) -> int:
        pred = smoothed.smoothed_predict(sc, x, n_votes=n_votes,
                                         perturbation=perturbation,
                                         partition=partition,
                                         sample_id=ds.ids[i])
        return pred.label

    rows = attack_mod.stress_suite(bc, sc_predict, ds, partition,
                                   q_levels=cfg.q_levels(),
                                   sigma_attack=cfg["attack.sigma"],
                                   seed=cfg["master_seed"])
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(attack_mod.stress_csv(rows))
    log.info("wrote stress table (%d scenarios) to %s", len(rows) * 2, args.out)
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    summary: dict = {}
    if args.stress:
        if not Path(args.stress).exists():
            raise CommandError(f"stress table not found: {args.stress}")
        with open(args.stress, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        summary["stress"] = lines
    if args.certificates:
        if not Path(args.certificates).exists():
            raise CommandError(f"certificate file not found: {args.certificates}")
        radii = []
        certified = 0
        total = 0
        with open(args.certificates, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                total += 1
                if rec.get("certified"):
                    certified += 1
                    radii.append(rec["radius"])
        summary["certificates"] = {
            "total": total,
            "certified": certified,
            "abstained": total - certified,
            "mean_radius_when_certified": (sum(radii) / len(radii)) if radii else 0.0,
            "max_radius": max(radii) if radii else 0.0,
        }
        # a Gaussian-smoothing radius is reported for a mixed
        # ablation+noise mechanism; the bound covers the noise component
        summary["certificates"]["radius_semantics"] = (
            "L2 radius sigma*inv_norm_cdf(p_lower) at the inference noise scale; "
            "group ablation is part of the vote distribution, not of the bound")
    if not summary:
        raise CommandError("report needs --stress and/or --certificates")
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        log.info("wrote summary to %s", args.out)
    else:
        sys.stdout.write(text)
    return 0


def _parallel_map(fn, count: int, threads: int) -> list:
    if threads <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoothcert",
        description="train, smooth, certify and stress-test feature-space classifiers")
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="master seed for all randomness")
    parser.add_argument("--threads", type=int, help="worker threads (default: cores)")
    parser.add_argument("--preset", choices=sorted(PRESETS),
                        help="named parameter bundle applied before the config file")
    parser.add_argument("--layout-id", dest="layout_id", help="feature layout id")
    parser.add_argument("--group-size", dest="group_size", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="directory of binaries -> dataset file")
    p.add_argument("--benign-dir")
    p.add_argument("--malicious-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate a synthetic two-class dataset")
    p.add_argument("--n-per-class", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="stratified train/test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--train-fraction", type=float)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-bc", help="train the base classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--estimators", type=int)
    p.add_argument("--max-depth", type=int)
    p.set_defaults(func=cmd_train_bc)

    p = sub.add_parser("train-sc", help="augment with the BC and train the smoothed classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bc", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", type=int, help="stochastic variants per flagged row")
    p.add_argument("--estimators", type=int)
    p.add_argument("--max-depth", type=int)
    p.set_defaults(func=cmd_train_sc)

    p = sub.add_parser("predict", help="write prediction records (base or smoothed)")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--smoothed", action="store_true")
    p.add_argument("--votes", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("certify", help="write per-sample robustness certificates")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--votes", type=int)
    p.add_argument("--search", action="store_true",
                   help="also run the max-radius sigma search per sample")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("stress", help="BC-vs-SC table under escalating group noise")
    p.add_argument("--bc", required=True)
    p.add_argument("--sc", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--q-levels", dest="q_levels")
    p.add_argument("--sigma-attack", dest="sigma_attack", type=float)
    p.add_argument("--votes", type=int)
    p.set_defaults(func=cmd_stress)

    p = sub.add_parser("report", help="summarize stress tables and certificates")
    p.add_argument("--stress")
    p.add_argument("--certificates")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except CommandError as exc:
        log.error("%s", exc)
        return 1
    except (ValueError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
