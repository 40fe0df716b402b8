"""Streaming attention decoding with a sublinear key-value cache.

The package splits into five pieces: exact attention and the error metric
(attn), the streaming sketch itself (streaming), offline eviction baselines
(compressors), synthetic stream generators (streamgen), and the benchmark
harness plus CLI (harness, cli).
"""

from .attn import (
    AttnVector,
    ExactCache,
    TokenTriplet,
    error_denominator,
    exact_attention,
    normalized_error,
    operator_norm,
    softmax_vector,
    spectral_error,
)
from .compressors import (
    POLICY_KINDS,
    PolicyConfig,
    RetainedCache,
    compress,
    greedy_k_center,
    query_compressed,
)
from .harness import (
    AuditReport,
    ConfigError,
    DistributionReport,
    ExperimentResult,
    InvariantAuditor,
    MetricsRow,
    RunConfig,
    StepMetrics,
    Thresholds,
    audit_stream,
    distribution_test,
    load_config,
    matched_policy_config,
    run_experiment,
    step_schedule,
    summarize,
)
from .streaming import (
    AccuracyParams,
    ClusterSummary,
    MemoryFootprint,
    NormalizerDS,
    SubGenState,
    ValueSampler,
    derive_sizes,
    memory_footprint,
    process_token,
    query_stream_attn,
    update_matrix_product,
    update_softmax_normalizer,
)
from .streamgen import (
    StreamSpec,
    TokenStream,
    generate,
    generate_adversarial,
    read_stream,
    verify_clusterable,
    write_stream,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyParams",
    "AttnVector",
    "AuditReport",
    "ClusterSummary",
    "ConfigError",
    "DistributionReport",
    "ExactCache",
    "ExperimentResult",
    "InvariantAuditor",
    "MemoryFootprint",
    "MetricsRow",
    "NormalizerDS",
    "POLICY_KINDS",
    "PolicyConfig",
    "RetainedCache",
    "RunConfig",
    "StepMetrics",
    "StreamSpec",
    "SubGenState",
    "Thresholds",
    "TokenStream",
    "TokenTriplet",
    "ValueSampler",
    "audit_stream",
    "compress",
    "derive_sizes",
    "distribution_test",
    "error_denominator",
    "exact_attention",
    "generate",
    "generate_adversarial",
    "greedy_k_center",
    "load_config",
    "matched_policy_config",
    "memory_footprint",
    "normalized_error",
    "operator_norm",
    "process_token",
    "query_compressed",
    "query_stream_attn",
    "read_stream",
    "run_experiment",
    "softmax_vector",
    "spectral_error",
    "step_schedule",
    "summarize",
    "update_matrix_product",
    "update_softmax_normalizer",
    "verify_clusterable",
    "write_stream",
]
