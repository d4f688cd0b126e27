"""Certified robustness for feature-based binary classifiers.

A feature extractor turns executables into fixed-layout vectors; a
boosted-tree classifier is wrapped into a smoothed classifier by training
on group-ablated, noise-injected variants and voting over perturbed
copies at inference; the vote distribution yields a Wilson lower bound
and a certified L2 robustness radius per sample.
"""

from .attack import (
    AttackConfig,
    EvalReport,
    StressRow,
    combined_attack,
    evaluate_model,
    group_noise_attack,
    metamorphic_simulate,
    stress_csv,
    stress_suite,
)
from .certify import (
    Certificate,
    SigmaSearchConfig,
    certified_radius,
    certify,
    inv_norm_cdf,
    max_radius_search,
    norm_cdf,
    wilson_lower,
    z_critical,
)
from .dataset import (
    DatasetFormatError,
    LabeledDataset,
    SplitSpec,
    SynthSpec,
    load_dataset,
    save_dataset,
    stratified_split,
    synth_generate,
)
from .gbdt import (
    BoostedModel,
    DegenerateLabelsError,
    ModelFormatError,
    TrainConfig,
    load_model,
    predict_label,
    predict_margin,
    predict_proba,
    save_model,
    train,
)
from .pe_features import (
    FeatureLayout,
    FeatureVector,
    LayoutError,
    PEMetadata,
    RawBinary,
    byte_entropy_histogram,
    byte_histogram,
    default_layout,
    extract,
    fnv1a64,
    parse_pe,
)
from .smoothed import (
    AugmentationConfig,
    SmoothedPrediction,
    VoteTally,
    augment_training_set,
    smoothed_predict,
    train_sc,
)
from .smoothing import (
    AblationMask,
    GroupPartition,
    PerturbationConfig,
    apply_ablation,
    derive_stream,
    inject_noise,
    load_partition,
    make_partition,
    sample_mask,
    sample_variant,
    save_partition,
)

__version__ = "0.1.0"
