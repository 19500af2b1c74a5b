"""Receptive-field-exact partitioning and fused-block planning for distributed CNN inference."""

from .model import (LayerSpec, ModelError, NetworkModel, RfTrace, layer_flops, load_model,
                    model_flops, oracle_trace, rf_forward, rf_oracle, validate_model, vgg16)
from .partition import (EMPTY, Coverage, EsSlice, Exchange, FusedPlan, InsufficientNeighborError,
                        SliceAssignment, allocate_ratios, assign_slices,
                        backprop_rows_within_block, exchange_sizes, input_rows, output_rows,
                        verify_coverage)
from .cost import (ClusterSpec, EsProfile, TimingReport, block_comm_time, block_compute_time,
                   load_cluster, modnn_baseline_time, plan_time)
from .optimize import (InfeasiblePlanError, OptResult, block_cost, brute_force_partition, dpfp,
                       speedup_ratio, sweep_cluster_size)

__version__ = "0.1.0"
