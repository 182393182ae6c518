"""Parameter estimation by minimizing the sum of squared prediction errors.

The decision vector is laid out as ``[theta, gain, x0]`` where ``gain`` is
present only for the free-gain diagnostic observer and ``x0`` is the
predictor's initial state (model states, then virtual-controller states
or the input-correction state).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .lm import InfeasibleStart, LMOptions, levenberg_marquardt
from .models import ModelStructure, TransferFunction
from .placement import PlacementError
from .predictors import (
    DEFAULT_HOLD,
    FixedPoleExtendedObserver,
    FreeGainObserver,
    ResidualSeries,
    n_initial_states,
    predictor_system,
    simulate_predictor,
)
from .simulate import DataSet, zoh_discretize

logger = logging.getLogger(__name__)

__all__ = [
    "EstimationError",
    "EstimationResult",
    "DecisionLayout",
    "estimate",
    "multi_start",
    "sample_starts",
    "default_starts",
    "equation_error_init",
    "fit_initial_state",
    "prediction_cost",
]


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecisionLayout:
    n_theta: int
    n_gain: int
    n_state: int

    @classmethod
    def for_kind(cls, ms: ModelStructure, kind) -> "DecisionLayout":
        n_gain = ms.n if isinstance(kind, FreeGainObserver) else 0
        return cls(ms.n_params, n_gain, n_initial_states(ms, kind))

    @property
    def size(self) -> int:
        return self.n_theta + self.n_gain + self.n_state

    def split(self, v):
        a = self.n_theta
        b = a + self.n_gain
        return v[:a], (v[a:b] if self.n_gain else None), v[b:]

    def join(self, theta, gain, x0) -> np.ndarray:
        parts = [np.asarray(theta, dtype=float).reshape(-1)]
        if self.n_gain:
            parts.append(np.asarray(gain, dtype=float).reshape(-1))
        parts.append(np.asarray(x0, dtype=float).reshape(-1))
        v = np.concatenate(parts)
        if v.size != self.size:
            raise ValueError(f"decision vector needs {self.size} entries, got {v.size}")
        return v


@dataclass
class EstimationResult:
    theta: np.ndarray
    x0: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    termination: str
    trace: list = field(default_factory=list)
    kind: str = ""
    gain: Optional[np.ndarray] = None
    d0: Optional[float] = None
    evaluations: int = 0
    starts: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.termination in ("cost_tolerance", "step_tolerance", "zero_residual", "no_improvement")

    def summary(self) -> dict:
        out = {
            "kind": self.kind,
            "theta": [float(v) for v in self.theta],
            "x0": [float(v) for v in self.x0],
            "cost": float(self.cost),
            "initial_cost": float(self.initial_cost),
            "iterations": int(self.iterations),
            "evaluations": int(self.evaluations),
            "termination": self.termination,
            "converged": self.converged,
        }
        if self.d0 is not None:
            out["d0"] = float(self.d0)
        if self.gain is not None:
            out["gain"] = [float(v) for v in self.gain]
        return out


def _residual_fn(ms, data, kind, layout: DecisionLayout, hold=DEFAULT_HOLD):
    def fun(v):
        theta, gain, x0 = layout.split(v)
        try:
            r = simulate_predictor(predictor_system(ms, theta, kind, gain), x0, data, hold)
        except (PlacementError, np.linalg.LinAlgError, OverflowError, FloatingPointError):
            return None
        return None if r.diverged else r.e

    return fun


def prediction_cost(ms, data, kind, theta, x0, gain=None, hold=DEFAULT_HOLD) -> float:
    """Sum of squared residuals, ``inf`` for infeasible or diverged points."""
    try:
        return simulate_predictor(predictor_system(ms, theta, kind, gain), x0, data, hold).cost
    except (PlacementError, np.linalg.LinAlgError, OverflowError, FloatingPointError):
        return np.inf


def fit_initial_state(ms, data, kind, theta, gain=None, hold=DEFAULT_HOLD) -> np.ndarray:
    """Least-squares initial state for fixed ``theta``.

    Residuals are affine in the initial state, so this is one linear solve
    over the predictor's free response.  Returns zeros when the predictor
    cannot be evaluated.
    """
    k = n_initial_states(ms, kind)
    try:
        sys = predictor_system(ms, theta, kind, gain)
    except PlacementError:
        return np.zeros(k)
    r0 = simulate_predictor(sys, np.zeros(k), data, hold)
    if r0.diverged:
        return np.zeros(k)
    Ad, _ = zoh_discretize(sys.A, data.h, sys.B)
    Phi = np.empty((data.N, k))
    M = np.eye(k)
    c = sys.Ce[0]
    for i in range(data.N):
        Phi[i] = c @ M
        M = Ad @ M
        if not np.all(np.isfinite(M)) or np.abs(M).max() > 1e12:
            return np.zeros(k)
    # e = r0 + Phi x0
    x0, *_ = np.linalg.lstsq(Phi, -r0.e, rcond=None)
    return x0


def estimate(
    ms: ModelStructure,
    data: DataSet,
    kind,
    theta0,
    opts: LMOptions = LMOptions(),
    x0=None,
    gain0=None,
    fit_state: bool = True,
    state_init: str = "zero",
    hold=DEFAULT_HOLD,
) -> EstimationResult:
    """Fit ``theta`` (and by default the predictor initial state) to ``data``.

    ``state_init`` is ``"zero"`` or ``"lstsq"``; the latter starts the
    initial state at its least-squares value for ``theta0``.  With
    ``fit_state=False`` the initial state stays pinned at ``x0`` (zero if
    not given).
    """
    layout = DecisionLayout.for_kind(ms, kind)
    theta0 = ms.check(theta0)
    if layout.n_gain and gain0 is None:
        raise ValueError("free-gain observer needs an initial gain")
    if x0 is None:
        if state_init == "lstsq":
            x0 = fit_initial_state(ms, data, kind, theta0, gain0, hold)
        elif state_init == "zero":
            x0 = np.zeros(layout.n_state)
        else:
            raise ValueError(f"unknown state_init {state_init!r}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != layout.n_state:
        raise ValueError(f"initial state needs {layout.n_state} entries")

    if fit_state:
        fun = _residual_fn(ms, data, kind, layout, hold)
        v0 = layout.join(theta0, gain0, x0)
    else:
        sub = DecisionLayout(layout.n_theta, layout.n_gain, 0)
        inner = _residual_fn(ms, data, kind, layout, hold)

        def fun(v):
            return inner(np.r_[v, x0])

        v0 = sub.join(theta0, gain0, [])
    try:
        res = levenberg_marquardt(fun, v0, opts)
    except InfeasibleStart as exc:
        raise EstimationError(f"{exc} (theta0 = {theta0.tolist()})") from None
    v = res.x if fit_state else np.r_[res.x, x0]
    theta, gain, xs = layout.split(v)
    d0 = None
    if isinstance(kind, FixedPoleExtendedObserver):
        d0 = float(xs[-1])
    return EstimationResult(
        theta=theta.copy(),
        x0=xs.copy(),
        cost=res.cost,
        initial_cost=res.initial_cost,
        iterations=res.iterations,
        termination=res.termination,
        trace=res.trace,
        kind=kind.name,
        gain=None if gain is None else gain.copy(),
        d0=d0,
        evaluations=res.evaluations,
    )


def sample_starts(ms: ModelStructure, data: DataSet, count: int, seed: int) -> list:
    """Random initial parameter vectors that do not look at the true plant.

    Denominator roots have magnitudes log-uniform in ``[0.1, 100]`` rad/s
    with a random sign each; the numerator is a constant sized so the
    static gain matches the output/input RMS ratio of the data.
    """
    rng = np.random.default_rng(seed)
    ratio = np.sqrt(np.mean(data.y**2)) / max(np.sqrt(np.mean(data.u**2)), 1e-300)
    starts = []
    for _ in range(count):
        roots = np.exp(rng.uniform(np.log(0.1), np.log(100.0), ms.n))
        roots *= rng.choice([-1.0, 1.0], ms.n)
        den = np.poly(roots)
        num = np.zeros(ms.num_degree + 1)
        num[-1] = ratio * abs(den[-1])
        starts.append(np.r_[den[1:], num])
    return starts


def _svf_regressors(x, lam: float, n: int, h: float) -> np.ndarray:
    """Columns ``p^k F x`` for ``k = 0..n`` with ``F = lam^n / (p + lam)^n``."""
    den = np.poly(np.full(n, -lam))
    tf = TransferFunction.from_descending([lam**n], den)
    ss = tf.to_ss()
    Ad, Bd = zoh_discretize(ss, h)
    X = np.empty((x.size, n))
    s = np.zeros(n)
    for k in range(x.size):
        X[k] = s
        s = Ad @ s + Bd[:, 0] * x[k]
    X *= lam**n
    top = lam**n * x - X @ den[1:][::-1]
    return np.column_stack([X, top])


def equation_error_init(
    ms: ModelStructure, data: DataSet, bandwidth: float, offset: bool = True
) -> np.ndarray:
    """Linear least-squares estimate from state-variable-filtered signals.

    Filters ``u`` and ``y`` through ``(bandwidth / (p + bandwidth))^n`` and
    solves the equation-error regression for ``theta``, optionally with a
    constant column to absorb offsets.  Biased under noise and feedback;
    intended only as a starting point.
    """
    n, m = ms.n, ms.num_degree
    Y = _svf_regressors(data.y, bandwidth, n, data.h)
    U = _svf_regressors(data.u, bandwidth, n, data.h)
    skip = min(data.N // 4, int(np.ceil(4.0 * n / (bandwidth * data.h))))
    rows = slice(skip, None)
    cols = [-Y[rows, k] for k in range(n - 1, -1, -1)]
    cols += [U[rows, k] for k in range(m, -1, -1)]
    if offset:
        cols.append(np.ones(data.N - skip))
    Phi = np.column_stack(cols)
    target = Y[rows, n]
    scale = np.linalg.norm(Phi, axis=0)
    scale[scale == 0] = 1.0
    sol, *_ = np.linalg.lstsq(Phi / scale, target, rcond=None)
    sol /= scale
    return sol[: ms.n_params]


# State-variable-filter bandwidths tried by the equation-error initializer,
# as multiples of 1/h.
EE_BANDWIDTHS = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


def default_starts(
    ms: ModelStructure, data: DataSet, kind, seed: int, random_starts: int = 1, hold=DEFAULT_HOLD
) -> list:
    """Starting points used when the caller supplies none.

    ``random_starts`` draws from :func:`sample_starts` followed by the
    equation-error estimate, over :data:`EE_BANDWIDTHS`, with the lowest
    predictor cost.  Candidates are ranked at their least-squares initial
    state, since a zero state can make a good model look worse than a
    degenerate one when the data carry a large offset.
    """
    starts = sample_starts(ms, data, random_starts, seed) if random_starts else []
    best, best_cost = None, np.inf
    for mult in EE_BANDWIDTHS:
        try:
            theta = equation_error_init(ms, data, mult / data.h)
        except (np.linalg.LinAlgError, ValueError):
            continue
        if not np.all(np.isfinite(theta)):
            continue
        x0 = fit_initial_state(ms, data, kind, theta, hold=hold)
        cost = prediction_cost(ms, data, kind, theta, x0, hold=hold)
        if cost < best_cost:
            best, best_cost = theta, cost
    if best is not None:
        starts.append(best)
    return starts


def multi_start(
    ms: ModelStructure,
    data: DataSet,
    kind,
    starts: Sequence,
    opts: LMOptions = LMOptions(),
    **kwargs,
) -> EstimationResult:
    """Run :func:`estimate` from each start and keep the lowest final cost.

    The winner carries a per-start summary in ``result.starts``.  Ties go
    to the earliest start, so the outcome does not depend on run order.
    """
    if len(starts) == 0:
        raise ValueError("need at least one start")
    best = None
    table = []
    for i, theta0 in enumerate(starts):
        try:
            res = estimate(ms, data, kind, theta0, opts, **kwargs)
        except EstimationError as exc:
            table.append({"start": i, "theta0": list(map(float, theta0)), "error": str(exc)})
            continue
        table.append(
            {
                "start": i,
                "theta0": list(map(float, theta0)),
                "cost": res.cost,
                "termination": res.termination,
                "theta": list(map(float, res.theta)),
            }
        )
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise EstimationError("every start was infeasible")
    best = replace(best, starts=table)
    return best
