"""scikit-learn style front end for transfer-function identification.

``X`` holds the sampled plant input ``u`` (one column) and ``y`` the
measured output; the sampling interval is a constructor parameter.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .estimation import default_starts, multi_start
from .lm import LMOptions
from .models import ModelStructure
from .placement import PoleSet
from .predictors import (
    DEFAULT_HOLD,
    OE,
    FixedPoleExtendedObserver,
    FixedPoleObserver,
    StabilizedOE,
    predictor_system,
    simulate_predictor,
)
from .simulate import DataSet

__all__ = ["ContinuousTimeIdentifier"]

_KINDS = ("fixed_pole_observer", "fixed_pole_extended_observer", "oe", "stabilized_oe")


class ContinuousTimeIdentifier(RegressorMixin, BaseEstimator):
    """Continuous-time transfer-function estimator for sampled closed-loop data.

    Parameters
    ----------
    h : float
        Sampling interval in seconds.
    den_degree, num_degree : int
        Degrees of the monic denominator and of the numerator.
    predictor : str
        ``"fixed_pole_observer"`` (default), ``"fixed_pole_extended_observer"``,
        ``"oe"`` or ``"stabilized_oe"``.
    poles : array-like of complex or of ``[re, im]`` pairs, optional
        Observer poles.  Defaults to every pole at ``-3``, one per predictor
        state.
    virtual_controller : TransferFunction, optional
        Error-feedback element, required by ``"stabilized_oe"``.
    hold : str or (str, str)
        Inter-sample reconstruction of ``(u, y)``.
    theta0 : array-like, optional
        Single start.  When omitted the default multi-start policy is used.
    random_starts : int
        Sampler draws added to the equation-error start.
    max_iterations : int
    random_state : int
        Seed of the start sampler.

    Attributes
    ----------
    theta_ : ndarray
        Estimated parameters, denominator (below the monic term) then
        numerator, both in descending powers.
    x0_ : ndarray
        Estimated predictor initial state.
    transfer_function_ : TransferFunction
    result_ : EstimationResult
    """

    def __init__(
        self,
        h=1.0,
        den_degree=2,
        num_degree=0,
        predictor="fixed_pole_observer",
        poles=None,
        virtual_controller=None,
        hold=DEFAULT_HOLD,
        theta0=None,
        random_starts=1,
        max_iterations=200,
        random_state=0,
    ):
        self.h = h
        self.den_degree = den_degree
        self.num_degree = num_degree
        self.predictor = predictor
        self.poles = poles
        self.virtual_controller = virtual_controller
        self.hold = hold
        self.theta0 = theta0
        self.random_starts = random_starts
        self.max_iterations = max_iterations
        self.random_state = random_state

    def _structure(self) -> ModelStructure:
        return ModelStructure(int(self.den_degree), int(self.num_degree))

    def _kind(self, ms: ModelStructure):
        if self.predictor not in _KINDS:
            raise ValueError(f"predictor must be one of {_KINDS}, got {self.predictor!r}")
        if self.predictor == "oe":
            return OE()
        if self.predictor == "stabilized_oe":
            if self.virtual_controller is None:
                raise ValueError("stabilized_oe needs a virtual_controller")
            return StabilizedOE(self.virtual_controller)
        extended = self.predictor == "fixed_pole_extended_observer"
        if self.poles is None:
            poles = PoleSet(np.full(ms.n + int(extended), -3.0))
        else:
            arr = np.asarray(self.poles)
            poles = PoleSet.from_pairs(arr) if arr.ndim == 2 else PoleSet(arr)
        return FixedPoleExtendedObserver(poles) if extended else FixedPoleObserver(poles)

    def _validate(self, X, y=None):
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError(f"X must hold one input channel, got {X.shape[1]} columns")
            X = X[:, 0]
        if y is None:
            return X, None
        y = check_array(y, ensure_2d=False, dtype=np.float64).reshape(-1)
        check_consistent_length(X, y)
        return X, y

    def fit(self, X, y):
        """Estimate the plant from input ``X`` and measured output ``y``."""
        u, y = self._validate(X, y)
        if not self.h > 0:
            raise ValueError("h must be positive")
        ms = self._structure()
        kind = self._kind(ms)
        data = DataSet(float(self.h), u, y)
        if self.theta0 is not None:
            starts = [ms.check(self.theta0)]
        else:
            starts = default_starts(ms, data, kind, self.random_state, self.random_starts, self.hold)
        opts = LMOptions(max_iterations=int(self.max_iterations))
        res = multi_start(ms, data, kind, starts, opts, hold=self.hold, state_init="lstsq")
        self.result_ = res
        self.theta_ = res.theta
        self.x0_ = res.x0
        self.transfer_function_ = ms.tf(res.theta)
        self.n_features_in_ = 1
        return self

    def predict(self, X, y=None):
        """Model output for input ``X``.

        Without ``y`` the fitted model is simulated open loop from rest;
        samples after a divergence are ``nan``.  With the measured ``y``
        the output of the fitted prediction model (observer) is returned,
        started from the estimated initial state.
        """
        check_is_fitted(self, "theta_")
        u, y = self._validate(X, y)
        ms = self._structure()
        data = DataSet(float(self.h), u, np.zeros_like(u) if y is None else y)
        if y is None:
            sys = predictor_system(ms, self.theta_, OE())
            r = simulate_predictor(sys, np.zeros(ms.n), data, self.hold, ratio=None)
        else:
            sys = predictor_system(ms, self.theta_, self._kind(ms))
            r = simulate_predictor(sys, self.x0_, data, self.hold)
        yhat = data.y - r.e
        if r.diverged:
            yhat = yhat.astype(float)
            yhat[r.first_bad :] = np.nan
        return yhat

    def score(self, X, y, sample_weight=None):
        """Coefficient of determination of the prediction-model output."""
        return r2_score(y, self.predict(X, y), sample_weight=sample_weight)
