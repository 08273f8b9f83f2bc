"""Elastic weight-shared supernet families: spaces, training, search, analysis."""

from .space import (
    ArchSpec,
    BlockConfig,
    DimensionLevels,
    SearchSpaceDef,
    SPACE_PRESETS,
    cardinality,
    couple_level,
    crossover,
    decode,
    encode,
    enumerate_space,
    get_space,
    max_arch,
    min_arch,
    mutate,
    sample_uniform,
    validate,
)
from .supernet import (
    BaseArchConfig,
    KdConfig,
    SubnetView,
    SupernetParams,
    build_supernet,
    evaluate_accuracy,
    forward,
    load_checkpoint,
    save_checkpoint,
    slice_subnet,
    toy_base,
    train_step,
)
from .schedule import (
    TrainPhase,
    TrainingSchedule,
    family_train_time,
    make_schedule,
    run_training,
)
from .latency import (
    LatencyCache,
    LatencyTable,
    SyntheticCoeffs,
    SyntheticLatencyModel,
    cached_estimate,
    count_flops,
    estimate_latency,
    gen_synthetic_table,
    load_table,
    save_table,
    synthetic_latency,
)
from .predictor import PredictorNet, predict, train_predictor
from .evolution import Candidate, EvoConfig, SearchResult, exhaustive_best, run_search
from .analysis import (
    CdfCurve,
    LatencyBucket,
    ParetoFront,
    boxplot_stats,
    bucket_cdf,
    bucket_mean_ci,
    cost_report,
    heatmap_grid,
    pareto_front,
)
from .data import Dataset, synthetic_dataset

__version__ = "0.1.0"
