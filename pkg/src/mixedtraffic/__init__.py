"""Mixed-autonomy ring-road modelling, structured H2 control design and simulation."""

from .errors import *  # noqa: F401,F403
from .traffic import (OvmParams, LinearHdvCoeffs, RingModel, linearize_hdv, assemble_ring_model,
                      linearized_ring_model, equilibrium_spacing, ovm_acceleration,
                      max_reachable_velocity, sample_ovm_fleet)
from .controllability import PbhReport, pbh_analysis, check_stabilizability_condition
from .synthesis import (PerformanceWeights, SparsityPattern, SynthesisResult, build_performance,
                        topology_to_pattern, ring_topology, solve_structured_h2, h2_norm)
from .sdp import ConicProgram, SolveOutcome, solve, lyapunov_solve
from .simulator import Scenario, SimTrace, Metrics, LinearFeedback, run, step, lq_cost

__version__ = "0.1.0"
