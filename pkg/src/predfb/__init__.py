"""Predictor feedback for input-delay systems with certified Euler predictors."""

from .closed_loop_sim import (
    SamplingSchedule,
    Trajectory,
    claim_checks,
    decay_fit,
    fit_decay,
    make_schedule,
    simulate_linear,
    simulate_nonlinear,
)
from .errors import (
    BracketError,
    ConvergenceError,
    CoverageError,
    GridCountOverflow,
    NonFiniteStateError,
    NumericalError,
    PredfbError,
    ValidationError,
)
from .euler_predictor import (
    PredictorOutput,
    apriori_bound,
    euler_run,
    euler_trajectory,
    grid_count,
    lemma_oracles,
    predict,
)
from .input_history import InputHistory, InputWindow, PiecewiseLinearSignal
from .kernels import BACKEND
from .linear_design import (
    LinearGainReport,
    f_sweep,
    iss_gain_gamma,
    linear_error_bound,
    linear_predict,
    min_grid_count,
    spectral_norm,
)
from .lyapunov_design import (
    BoundsPack,
    CompletenessCertificate,
    DerivedDesign,
    FeedbackCertificate,
    MonotoneHandle,
    accuracy_R,
    build_bounds_pack,
    derive_design,
)
from .oracle import OracleResult, rk4_reference
from .system_model import (
    AffinePolyForm,
    LinearSystem,
    NonlinearSystem,
    check_growth_envelope,
    cubic_system,
    eval_dynamics,
    linear_as_nonlinear,
    zero_system,
)

__version__ = "0.1.0"
