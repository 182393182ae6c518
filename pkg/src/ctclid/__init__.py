"""Continuous-time identification of plants in closed loop.

The main entry points are :func:`estimate` and :func:`multi_start` for a
single data set, :class:`ContinuousTimeIdentifier` for a scikit-learn
style interface, and :func:`run_monte_carlo` for benchmark scenarios.
"""

from .estimation import (
    DecisionLayout,
    EstimationError,
    EstimationResult,
    default_starts,
    equation_error_init,
    estimate,
    multi_start,
    sample_starts,
)
from .harness import (
    PredictorSpec,
    Scenario,
    TrialStats,
    bode_table,
    pole_sensitivity_sweep,
    run_monte_carlo,
    scenario_a,
    scenario_b,
    scenario_c,
)
from .lm import LMOptions, LMResult, levenberg_marquardt
from .models import (
    ModelStructure,
    Polynomial,
    StateSpace,
    TransferFunction,
    eigenvalues,
    freq_response,
    is_hurwitz,
    realize_ccf,
    ss_to_tf,
)
from .placement import (
    ObserverGain,
    PlacementError,
    PoleSet,
    UnobservableError,
    extended_observer_gain,
    observer_gain,
)
from .predictors import (
    OE,
    FixedPoleExtendedObserver,
    FixedPoleObserver,
    FreeGainObserver,
    ResidualSeries,
    StabilizedOE,
    extended_observer_residuals,
    free_gain_residuals,
    observer_residuals,
    oe_residuals,
    stabilized_oe_residuals,
)
from .simulate import DataSet, DivergenceError, SignalSpec, simulate_closed_loop, zoh_discretize
from .sklearn_api import ContinuousTimeIdentifier

__version__ = "0.1.0"
