"""Co-factor analysis of directed networks observed on their upper triangle.

The pipeline: ingest a citation edge list into a partially observed
adjacency (graph_store), complete it with an implicitly represented
low-rank iteration (implicit_op, adaptive_impute, svd_engine), rotate the
singular subspaces into sparse interpretable co-factors (varimax_factors),
and score everything against planted truth (cosbm_sim, eval_metrics).
The cli module ties the steps into reproducible commands.
"""

from .adaptive_impute import (FitConfig, FitError, FitReport,
                              adaptive_impute, adaptive_initialize)
from .cosbm_sim import (ESTIMATORS, CoSbmTruth, SimConfig, SimError,
                        aggregate_rows, coupon_check, mask_chronological,
                        pattern_matrix, run_grid, run_replicate, sample_cosbm,
                        sample_truth)
from .eval_metrics import (AlignmentResult, MetricError, align_factors,
                           factor_rmse, read_metric_rows, sin_theta,
                           subspace_loss, write_metric_rows)
from .graph_store import (EdgeList, GraphStoreError, IngestError,
                          PartialAdjacency, clip, from_edge_list,
                          identifiability_rank, nystrom_reconstruct,
                          read_edge_list, write_edge_list)
from .implicit_op import ImpliedMatrix
from .svd_engine import LowRankFactors, SvdError, symmetric_eigs, truncated_svd
from .varimax_factors import (CoFactorModel, FactorError, UnidentifiedRowError,
                              build_cofactors, impute_forward,
                              imputed_indegree, read_cofactors,
                              varimax_rotation, varimax_value, write_cofactors)

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult", "CoFactorModel", "CoSbmTruth", "ESTIMATORS",
    "EdgeList", "FactorError", "FitConfig", "FitError", "FitReport",
    "GraphStoreError", "ImpliedMatrix", "IngestError", "LowRankFactors",
    "MetricError", "PartialAdjacency", "SimConfig", "SimError", "SvdError",
    "UnidentifiedRowError", "adaptive_impute", "adaptive_initialize",
    "aggregate_rows", "align_factors", "build_cofactors", "clip",
    "coupon_check", "factor_rmse", "from_edge_list", "identifiability_rank",
    "impute_forward", "imputed_indegree", "mask_chronological",
    "nystrom_reconstruct", "pattern_matrix", "read_cofactors",
    "read_edge_list", "read_metric_rows", "run_grid", "run_replicate",
    "sample_cosbm", "sample_truth", "sin_theta", "subspace_loss",
    "symmetric_eigs", "truncated_svd", "varimax_rotation", "varimax_value",
    "write_cofactors", "write_edge_list", "write_metric_rows",
]
