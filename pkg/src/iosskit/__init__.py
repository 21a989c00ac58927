"""Numerical checks for output-to-state stability estimates and their Lyapunov characterizations."""

from .checks import (Battery, BatteryItem, EstimateSpec, KINDS, check_estimate, check_iiuoss,
                     check_incremental, gasmo_margin_from_uoss, replay_witness, stability_margin)
from .comparison import (ComparisonFn, KLConditionError, KLFn, compose, fmax, fsum, identity, invert,
                         kl_cascade, kl_factorize, kl_majorize, linear, power, r_exp, sat_exp, scale, table,
                         tabulate, zero)
from .dynamics import (Signal, StiffnessError, SystemModel, Trajectory, close_robust_loop, default_kappa,
                       linear_model, reparametrize, simulate, slow_system)
from .fixtures import get_fixture, list_fixtures
from .linear import (LinearSystem, QuadraticCertificate, detectability_check, is_hurwitz, lyapunov_solve,
                     synthesize_certificate)
from .lyapunov import LyapCandidate, exp_decay_rescale, hji_check, additive_from_gain_margin, verify_dissipation
from .observer import NormEstimator, build_estimator, run_coupled, verify_estimator_implies_uioss, verify_gap_decay
from .report import FALSIFIED, HOLDS, CheckReport
from .valuefn import GeometrySets, GridValueFn, StateGrid, check_v0_dissipation, compute_v0, inf_convolve

__version__ = "0.1.0"
