"""Case-parallel pooled-update backpropagation on a simulated SIMD machine."""

from .activation import (SIGMOID_VARIANTS, Pow2Approx, SigmoidTable, get_sigmoid, logistic_base2,
                         pow2_decompose, sigmoid_deriv, sigmoid_exact, sigmoid_lut)
from .engine import (Cluster, DiagnosticResult, EpochResult, ProcShard, TrainRun, clamp_deltas,
                     copy_activations, diagnostic_mode, distribute_cases, distribute_sequences,
                     make_cluster, train, train_epoch_parallel)
from .machine import (CapacityError, CycleReport, Fault, FaultPlan, Machine, MachineConfig, Switch,
                      account, switch_exchange, switch_selftest)
from .patterns import Pattern, PatternSet, generate_patterns, read_patterns, write_patterns
from .perfmodel import (MEASURED_MCPS, NETTALK_INPUTS, PerfInputs, bounds_estimates,
                        cycles_per_epoch, megaflops, mcps, optimal_procs)
from .reduction import (STRATEGIES, allreduce, pipelined_ring_allreduce, ring_allreduce,
                        tree_allreduce)
from .reference import (NetworkState, backward, finite_diff_grad, forward, init_state,
                        train_epoch_pooled)
from .topology import (Topology, TopologyError, backward_ordering, capacity_check, layered,
                       nettalk, parse_topology, partition_bundles)

__all__ = [name for name in dir() if not name.startswith("_")]
