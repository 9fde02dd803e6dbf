"""Safe adaptive control for constrained LQR with unknown dynamics."""

from .config import Instance, config_hash, instance_from_config, load_config, \
    load_instance
from .controller import (EpisodeSchedule, SafeAdaptiveController, TransitPlan,
                         advance, approx_dap_step, make_schedule, plan_transit,
                         record_observation)
from .dap import (DapPolicy, PhiMap, approx_state, eval_f, g_action, g_state,
                  in_box, pad_policy, phi_x, quadratic_objective)
from .estimation import (EstimationConstants, RadiusConstants,
                         RegressionDataset, SampleFloorError, UncertaintySet,
                         bmsb_constants, confidence_radius, least_squares,
                         project_uncertainty, sample_floor, schedule_radius)
from .harness import (BenchmarkResult, Plant, PreflightError, RegretReport,
                      TrajectoryLog, benchmark_cost, build_schedule,
                      compute_regret, estimation_study, export, fit_scaling,
                      load_log_csv, preflight, regret_sweep, rollout_dap,
                      simulate)
from .model import (ConstraintSpec, DisturbanceModel, ExcitationModel,
                    StabilityCertificate, SystemModel, check_membership,
                    project_box, sample_disturbance, sample_excitation,
                    step_plant, verify_kappa_gamma)
from .qp import (QpSolution, QuadObjective, RobustCeInfeasibleError,
                 MidPolicyInfeasibleError, SafePolicyPolytope,
                 build_and_solve_robust_ce, build_safe_set, check_feasible,
                 dump_qp, find_mid_policy, kkt_residuals, solve_qp)
from .tightening import (TighteningBundle, TighteningInputs,
                         almost_sure_state_bound, check_monotone_schedule,
                         compute_bundle, initial_feasibility_margin)

__version__ = "0.1.0"
