"""Benchmark scenarios and the Monte-Carlo experiment driver.

Trial ``t`` of a scenario regenerates its data with seed
``base_seed ^ t``.  Signals whose :class:`SignalSpec` carries
``seed=None`` receive that trial seed, while signals with an explicit seed
(for example a fixed excitation) are reproduced identically in every
trial.  Trials may run in worker processes; the statistics are reduced in
trial order, so results do not depend on the schedule.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .estimation import EstimationError, multi_start
from .estimation import default_starts as _default_starts
from .lm import LMOptions
from .models import ModelStructure, TransferFunction, freq_response
from .placement import PoleSet
from .predictors import (
    DEFAULT_HOLD,
    OE,
    FixedPoleExtendedObserver,
    FixedPoleObserver,
    FreeGainObserver,
    StabilizedOE,
    n_initial_states,
)
from .simulate import DataSet, SignalSpec, SimulationError, simulate_closed_loop

logger = logging.getLogger(__name__)

__all__ = [
    "PREDICTOR_KINDS",
    "PredictorSpec",
    "Scenario",
    "TrialStats",
    "make_kind",
    "trial_seed",
    "scenario_a",
    "scenario_b",
    "scenario_c",
    "BUILTIN_SCENARIOS",
    "generate_data",
    "default_starts",
    "run_trial",
    "run_monte_carlo",
    "pole_sensitivity_sweep",
    "bode_table",
]

PREDICTOR_KINDS = (
    "oe",
    "stabilized_oe",
    "fixed_pole_observer",
    "fixed_pole_extended_observer",
    "free_gain_observer",
)

@dataclass(frozen=True)
class PredictorSpec:
    """Which prediction model to fit, plus its design data.

    ``poles`` is used by the fixed-pole kinds and ``virtual_controller`` by
    the stabilized output-error kind.  ``label`` names the predictor in
    reports and defaults to ``kind``.
    """

    kind: str
    poles: Optional[PoleSet] = None
    virtual_controller: Optional[TransferFunction] = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}; choose from {PREDICTOR_KINDS}")
        if self.poles is not None and not isinstance(self.poles, PoleSet):
            object.__setattr__(self, "poles", PoleSet(self.poles))
        if not self.label:
            object.__setattr__(self, "label", self.kind)
        make_kind(self)

    def with_real_part(self, re: float) -> "PredictorSpec":
        return replace(self, poles=self.poles.with_real_part(re))


def make_kind(spec: PredictorSpec):
    """Instantiate the predictor-kind object described by ``spec``."""
    if spec.kind == "oe":
        return OE()
    if spec.kind == "free_gain_observer":
        return FreeGainObserver()
    if spec.kind == "stabilized_oe":
        if spec.virtual_controller is None:
            raise ValueError("stabilized_oe needs a virtual controller")
        return StabilizedOE(spec.virtual_controller)
    if spec.poles is None:
        raise ValueError(f"{spec.kind} needs a pole set")
    if spec.kind == "fixed_pole_observer":
        return FixedPoleObserver(spec.poles)
    return FixedPoleExtendedObserver(spec.poles)


@dataclass(frozen=True)
class Scenario:
    """A closed-loop data-generating experiment and how to identify it.

    ``signals`` maps the exogenous channel names ``r_u``, ``r_y``, ``w``
    and ``eta`` to signal specifications.  ``hold`` is the inter-sample
    reconstruction used by the predictors, either one name for both
    channels or a ``(u_hold, y_hold)`` pair.
    """

    name: str
    structure: ModelStructure
    theta: np.ndarray
    controller: TransferFunction
    signals: dict
    h: float
    N: int
    warmup: int
    predictors: tuple
    trials: int = 20
    base_seed: int = 0
    hold: object = DEFAULT_HOLD
    options: LMOptions = field(default_factory=LMOptions)
    random_starts: int = 1

    def __post_init__(self):
        object.__setattr__(self, "theta", self.structure.check(self.theta))
        if self.h <= 0 or not math.isfinite(self.h):
            raise ValueError("sampling interval must be positive")
        if self.N < 2:
            raise ValueError("need at least two samples")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        if self.trials < 1:
            raise ValueError("trial count must be at least one")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base seed must be a 64-bit unsigned integer")
        if not self.predictors:
            raise ValueError("scenario needs at least one predictor")
        unknown = set(self.signals) - {"r_u", "r_y", "w", "eta"}
        if unknown:
            raise ValueError(f"unknown signal channels {sorted(unknown)}")

    @property
    def plant(self) -> TransferFunction:
        return self.structure.tf(self.theta)

    def predictor(self, label: Optional[str] = None) -> PredictorSpec:
        if label is None:
            return self.predictors[0]
        for p in self.predictors:
            if p.label == label or p.kind == label:
                return p
        raise KeyError(f"scenario {self.name!r} has no predictor {label!r}")

    def noise_free(self) -> "Scenario":
        """Same scenario with the disturbance and measurement noise removed."""
        sig = {k: v for k, v in self.signals.items() if k not in ("w", "eta")}
        return replace(self, signals=sig)


def trial_seed(base_seed: int, trial: int) -> int:
    """Seed of trial ``trial``: ``base_seed`` XOR ``trial`` on 64 bits."""
    return (int(base_seed) ^ int(trial)) & 0xFFFFFFFFFFFFFFFF


def _maglev_plant():
    return ModelStructure(3, 0), np.array([13.33, -494.4, -6593.0, 7148.0])


def _maglev_controller() -> TransferFunction:
    return TransferFunction.zpk(
        [-9.294, -13.99, -20.9],
        [-399.9, -0.1, -121.5 + 141.1j, -121.5 - 141.1j],
        1.197e5,
    )


def scenario_a(trials: int = 20, base_seed: int = 0) -> Scenario:
    """Unstable magnetic-levitation plant under an unknown stabilizing controller.

    A 0.5 s square wave drives the reference; disturbance and measurement
    noise are ZOH Gaussian with standard deviation 0.5 held for one
    sample.  The first two reference periods are discarded.
    """
    ms, theta = _maglev_plant()
    return Scenario(
        name="A",
        structure=ms,
        theta=theta,
        controller=_maglev_controller(),
        signals={
            "r_y": SignalSpec.square_wave(1.0, 0.5),
            "w": SignalSpec("zoh_gaussian", std=0.5, hold=1e-4, stream=0),
            "eta": SignalSpec("zoh_gaussian", std=0.5, hold=1e-4, stream=1),
        },
        h=1e-4,
        N=5000,
        warmup=10000,
        predictors=(PredictorSpec("fixed_pole_observer", PoleSet([-3, -3 + 1j, -3 - 1j])),),
        trials=trials,
        base_seed=base_seed,
    )


def scenario_b(trials: int = 20, base_seed: int = 0) -> Scenario:
    """Fourth-order benchmark plant in open loop with a constant input disturbance.

    The excitation is a ZOH Gaussian sequence (unit variance, 50 ms hold)
    that is the same in every trial; only the measurement noise changes.
    Predictors hold the piecewise-constant input exactly and interpolate
    the output.
    """
    return Scenario(
        name="B",
        structure=ModelStructure(4, 1),
        theta=np.array([5.0, 408.0, 416.0, 1600.0, -6400.0, 1600.0]),
        controller=TransferFunction.zero(),
        signals={
            "r_u": SignalSpec("zoh_gaussian", std=1.0, hold=0.05, seed=12345, stream=2),
            "w": SignalSpec.constant(10.0),
            "eta": SignalSpec("zoh_gaussian", std=0.4, hold=1e-3, stream=1),
        },
        h=1e-3,
        N=20000,
        warmup=0,
        predictors=(
            PredictorSpec(
                "fixed_pole_extended_observer",
                PoleSet([-3, -3 + 1j, -3 - 1j, -3 + 0.5j, -3 - 0.5j]),
            ),
            PredictorSpec("oe"),
        ),
        trials=trials,
        base_seed=base_seed,
        hold=("zoh", "eno3"),
    )


def scenario_c(trials: int = 20, base_seed: int = 0) -> Scenario:
    """Scenario A with the random disturbance replaced by a constant ``w = 1``."""
    a = scenario_a(trials, base_seed)
    sig = dict(a.signals)
    sig["w"] = SignalSpec.constant(1.0)
    return replace(
        a,
        name="C",
        signals=sig,
        predictors=(
            PredictorSpec("fixed_pole_observer", PoleSet([-3, -3 + 1j, -3 - 1j])),
            PredictorSpec(
                "fixed_pole_extended_observer",
                PoleSet([-3 + 1j, -3 - 1j, -3 + 0.5j, -3 - 0.5j]),
            ),
        ),
    )


BUILTIN_SCENARIOS = {"A": scenario_a, "B": scenario_b, "C": scenario_c}


def generate_data(sc: Scenario, seed: Optional[int] = None, shadow: bool = True) -> DataSet:
    """Simulate the scenario's closed loop with unseeded signals seeded by ``seed``."""
    signals = {}
    for name, spec in sc.signals.items():
        if spec.seed is None and spec.kind == "zoh_gaussian":
            spec = replace(spec, seed=0 if seed is None else int(seed))
        signals[name] = spec
    return simulate_closed_loop(sc.plant, sc.controller, signals, sc.h, sc.N, sc.warmup, shadow=shadow)


def default_starts(sc: Scenario, data: DataSet, kind, seed: int) -> list:
    """Starting points for one trial of ``sc`` (see :func:`estimation.default_starts`)."""
    return _default_starts(sc.structure, data, kind, seed, sc.random_starts, sc.hold)


def run_trial(sc: Scenario, trial: int, spec: PredictorSpec) -> dict:
    """Generate data for ``trial`` and fit predictor ``spec``; never raises."""
    seed = trial_seed(sc.base_seed, trial)
    row = {"trial": trial, "seed": seed, "predictor": spec.label}
    try:
        data = generate_data(sc, seed)
        kind = make_kind(spec)
        starts = default_starts(sc, data, kind, seed)
        if not starts:
            raise EstimationError("no feasible starting point")
        res = multi_start(sc.structure, data, kind, starts, sc.options, hold=sc.hold, state_init="lstsq")
    except (EstimationError, SimulationError, np.linalg.LinAlgError, ValueError) as exc:
        row.update(ok=False, reason=f"{type(exc).__name__}: {exc}")
        return row
    row.update(
        ok=True,
        theta=res.theta,
        cost=res.cost,
        iterations=res.iterations,
        termination=res.termination,
        converged=res.converged,
    )
    return row


@dataclass
class TrialStats:
    """Per-parameter statistics over the successful trials of one predictor."""

    scenario: str
    predictor: str
    theta_true: np.ndarray
    trials: list

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def estimates(self) -> np.ndarray:
        rows = [r["theta"] for r in self.trials if r["ok"]]
        return np.array(rows).reshape(len(rows), self.theta_true.size)

    @property
    def failures(self) -> list:
        return [r for r in self.trials if not r["ok"]]

    def _q(self, q):
        est = self.estimates
        if est.shape[0] == 0:
            return np.full(self.theta_true.size, np.nan)
        return np.quantile(est, q, axis=0)

    @property
    def median(self) -> np.ndarray:
        return self._q(0.5)

    @property
    def q1(self) -> np.ndarray:
        return self._q(0.25)

    @property
    def q3(self) -> np.ndarray:
        return self._q(0.75)

    @property
    def minimum(self) -> np.ndarray:
        return self._q(0.0)

    @property
    def maximum(self) -> np.ndarray:
        return self._q(1.0)

    def median_relative_error(self) -> np.ndarray:
        """Per-parameter median of ``|theta_hat / theta_true - 1|``."""
        est = self.estimates
        if est.shape[0] == 0:
            return np.full(self.theta_true.size, np.nan)
        return np.median(np.abs(est / self.theta_true - 1.0), axis=0)

    def table(self) -> list:
        """Per-trial rows ``trial, seed, ok, cost, termination, theta_1..``."""
        out = []
        for r in self.trials:
            row = {"trial": r["trial"], "seed": r["seed"], "ok": r["ok"]}
            if r["ok"]:
                row.update(cost=r["cost"], iterations=r["iterations"], termination=r["termination"])
                row.update({f"theta_{i + 1}": float(v) for i, v in enumerate(r["theta"])})
            else:
                row["reason"] = r["reason"]
            out.append(row)
        return out

    def summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "predictor": self.predictor,
            "trials": self.n_trials,
            "failed": len(self.failures),
            "theta_true": self.theta_true.tolist(),
            "median": self.median.tolist(),
            "q1": self.q1.tolist(),
            "q3": self.q3.tolist(),
            "min": self.minimum.tolist(),
            "max": self.maximum.tolist(),
            "median_relative_error": self.median_relative_error().tolist(),
        }


def _run_one(args):
    return run_trial(*args)


def run_monte_carlo(
    sc: Scenario,
    trials: Optional[int] = None,
    predictor: Optional[str] = None,
    workers: int = 1,
) -> TrialStats:
    """Repeat data generation and identification over independent noise draws.

    Parameters
    ----------
    sc : Scenario
    trials : int, optional
        Number of trials; defaults to ``sc.trials``.
    predictor : str, optional
        Label or kind of the predictor to fit; defaults to the scenario's
        first predictor.
    workers : int
        Worker processes.  Output is identical for any value.
    """
    trials = sc.trials if trials is None else int(trials)
    if trials < 1:
        raise ValueError("trial count must be at least one")
    spec = sc.predictor(predictor)
    jobs = [(sc, t, spec) for t in range(trials)]
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    for r in rows:
        if not r["ok"]:
            logger.warning("trial %d failed: %s", r["trial"], r["reason"])
    return TrialStats(sc.name, spec.label, sc.theta.copy(), rows)


def pole_sensitivity_sweep(
    sc: Scenario,
    real_parts: Sequence[float],
    trials: Optional[int] = None,
    predictor: Optional[str] = None,
    workers: int = 1,
) -> list:
    """Monte-Carlo runs with every observer pole's real part set to each value.

    Returns one row per real part with the per-parameter medians and the
    full :class:`TrialStats`.
    """
    spec = sc.predictor(predictor)
    if spec.kind not in ("fixed_pole_observer", "fixed_pole_extended_observer"):
        raise ValueError("pole sweep needs a fixed-pole predictor")
    rows = []
    for re in real_parts:
        moved = spec.with_real_part(float(re))
        others = tuple(p for p in sc.predictors if p is not spec)
        stats = run_monte_carlo(replace(sc, predictors=(moved,) + others), trials, moved.label, workers)
        rows.append({"real_part": float(re), "median": stats.median, "failed": len(stats.failures), "stats": stats})
    return rows


def bode_table(true_tf: TransferFunction, estimates, ms: ModelStructure, omega) -> dict:
    """Frequency-response comparison columns.

    Returns a dict of equal-length columns: ``omega``, ``true_mag_db``,
    ``true_phase_deg`` and ``est{i}_mag_db`` / ``est{i}_phase_deg`` for each
    estimate.  Phases are unwrapped along the grid.
    """
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.size == 0 or np.any(omega <= 0) or not np.all(np.isfinite(omega)):
        raise ValueError("frequency grid must be positive and finite")
    cols = {"omega": omega}

    def add(prefix, tf):
        g = freq_response(tf, omega)
        cols[f"{prefix}_mag_db"] = 20.0 * np.log10(np.abs(g))
        cols[f"{prefix}_phase_deg"] = np.degrees(np.unwrap(np.angle(g)))

    add("true", true_tf)
    for i, theta in enumerate(estimates):
        add(f"est{i}", ms.tf(theta))
    return cols
