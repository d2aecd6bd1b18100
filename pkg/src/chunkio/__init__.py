"""Storage-aware row selection for flash-offloaded weights.

Selects which contiguous groups of weight rows to load by trading summed
row importance against a profiled model of flash read latency.
"""

from .core import (
    Chunk,
    DistributionStats,
    WeightLayout,
    contiguity_distribution,
    distribution_stats,
    extract_chunks,
    mask_from_chunks,
    popcount,
)
from .latency import (
    CalibrationResult,
    LatencyTable,
    SyntheticDeviceParams,
    TableError,
    calibrate_scale,
    estimate_mask_latency,
    load_table,
    lookup,
    saturation_size,
    save_table,
    synthesize_table,
)
from .select import (
    BudgetError,
    CandidateChunk,
    ChunkSelectParams,
    SelectionResult,
    budget_from_sparsity,
    chunk_select,
    default_params,
    generate_candidates,
    importance_from_activations,
    objective,
    oracle_select,
    rank_candidates,
    threshold_select,
    topk_select,
)
from .reorder import (
    FrequencyProfile,
    Permutation,
    accumulate,
    build_permutation,
    invert,
    permute_importance,
    permute_rows,
)
from .ioengine import (
    DeviceError,
    RealDevice,
    SyntheticDevice,
    read_chunks,
    validate_estimator,
)
from .profile import ProfileConfig, ProfileResult, run_profile, warmup_and_drop_caches_hint
from .tune import SweepConfig, sweep

__version__ = "0.1.0"
