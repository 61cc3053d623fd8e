"""Adversarial attack benchmarking for tabular classifiers.

Pipeline modules: ``data`` (ingestion and encoding), ``autodiff`` (the tape),
``models`` (LR and MLP), ``attacks`` (six generation methods), ``metrics``
(effectiveness and imperceptibility), ``bench`` (grid, analyses, reports),
``cli`` (command line), ``builtin`` (dataset materialization).
"""

from .attacks import (
    AdversarialBatch,
    AdversarialExample,
    AttackSpec,
    attack_instances,
    clip_box_and_ball,
    run_attack,
)
from .bench import (
    BenchmarkResult,
    DatasetEntry,
    QuadrantThresholds,
    RunConfig,
    RunRecord,
    correlation_table,
    plateau_select,
    quadrant_classify,
    representative_epsilon,
    run_benchmark,
)
from .data import (
    DataStatistics,
    EncodedDataset,
    EncodingMap,
    FeatureDescriptor,
    SplitIndices,
    TableSchema,
    fit_encode,
    fit_statistics,
    impute,
    load_schema_manifest,
    load_table,
    split_stratified,
)
from .metrics import (
    ISConfig,
    MetricRecord,
    asr,
    chi2_critical,
    compute_metric_record,
    imperceptibility_score,
    mahalanobis,
    outlier_rate,
    pearson,
    proximity,
    sensitivity,
    sparsity,
)
from .models import ModelSpec, TrainConfig, TrainedModel, load_model, save_model, train

__version__ = "0.1.0"
