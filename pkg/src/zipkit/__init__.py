"""Structured pruning of layered linear models to explicit speedup targets."""

from .calib import HessianState, accumulate, finalize, hessian_from_inputs
from .distill import LossWeights, combined_loss, logit_kl, token_loss, token_loss_layer
from .latency import (
    LatencyTable,
    bench_kernel,
    bench_table,
    estimate_runtime,
    estimate_speedup,
    load_table,
    save_table,
)
from .pruner import (
    LayerDatabase,
    build_database,
    compact,
    measure_relative_error,
    prune_one,
    run_ziplm,
    saliency_scores,
)
from .search import (
    Budget,
    ChainEvaluator,
    ProxyEvaluator,
    chain_evaluator,
    dp_solve,
    plan_targets,
    proxy_evaluator,
    spdy_search,
)
from .store import (
    CalibrationSet,
    LayerSpec,
    LinkedProducer,
    MatrixRecord,
    Model,
    ModelManifest,
    StructureGroup,
    load_calibration,
    load_model,
    save_calibration,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "Budget", "CalibrationSet", "ChainEvaluator", "HessianState", "LatencyTable",
    "LayerDatabase", "LayerSpec", "LinkedProducer", "LossWeights", "MatrixRecord", "Model",
    "ModelManifest", "ProxyEvaluator", "StructureGroup",
    "accumulate", "bench_kernel", "bench_table", "build_database", "chain_evaluator",
    "combined_loss", "compact", "dp_solve", "estimate_runtime", "estimate_speedup", "finalize",
    "hessian_from_inputs", "load_calibration", "load_model", "load_table", "logit_kl",
    "measure_relative_error", "plan_targets", "proxy_evaluator", "prune_one", "run_ziplm",
    "saliency_scores", "save_calibration", "save_model", "save_table", "spdy_search",
    "token_loss", "token_loss_layer",
]
