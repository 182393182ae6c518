"""Prediction models and their residual sequences.

Every predictor is a linear system driven by the measured ``(u, y)``,
held constant between samples and discretized exactly.  The residual is
``e(kh) = y(kh) - C x_hat(kh)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import DIVERGENCE_LIMIT, propagate_stencil
from .models import ModelStructure, StateSpace, TransferFunction, realize_ccf
from .placement import PoleSet, extended_observer_gain, observer_gain
from .simulate import DataSet, expm, zoh_discretize

__all__ = [
    "OE",
    "StabilizedOE",
    "FixedPoleObserver",
    "FixedPoleExtendedObserver",
    "FreeGainObserver",
    "ResidualSeries",
    "oe_residuals",
    "stabilized_oe_residuals",
    "observer_residuals",
    "extended_observer_residuals",
    "free_gain_residuals",
    "predictor_system",
    "residuals",
    "n_initial_states",
    "simulate_predictor",
    "HOLDS",
    "DEFAULT_HOLD",
]

# prediction error this many times larger than the largest |y| counts as divergence
DIVERGENCE_RATIO = 1e2


@dataclass(frozen=True)
class OE:
    name = "oe"


@dataclass(frozen=True)
class StabilizedOE:
    virtual_controller: TransferFunction
    name = "stabilized_oe"


@dataclass(frozen=True)
class FixedPoleObserver:
    poles: PoleSet
    name = "fixed_pole_observer"


@dataclass(frozen=True)
class FixedPoleExtendedObserver:
    poles: PoleSet
    name = "fixed_pole_extended_observer"


@dataclass(frozen=True)
class FreeGainObserver:
    """Observer whose gain is a decision variable rather than placed.

    Only useful as a diagnostic: a large enough gain drives the residual to
    zero for any plant parameters.
    """

    name = "free_gain_observer"


@dataclass
class ResidualSeries:
    e: np.ndarray
    diverged: bool = False
    first_bad: int = -1

    @property
    def cost(self) -> float:
        if self.diverged:
            return np.inf
        return float(self.e @ self.e)

    def __len__(self):
        return self.e.size


@dataclass(frozen=True)
class PredictorSystem:
    """Continuous predictor ``xdot = A x + B [u, y]``, ``e = Ce x + De [u, y]``."""

    A: np.ndarray
    B: np.ndarray
    Ce: np.ndarray
    De: np.ndarray


def _system(A, B, C) -> PredictorSystem:
    return PredictorSystem(A, B, -np.asarray(C).reshape(1, -1), np.array([[0.0, 1.0]]))


def _observer_system(ss: StateSpace, K) -> PredictorSystem:
    K = np.asarray(K, dtype=float).reshape(-1)
    A = ss.A - np.outer(K, ss.C[0])
    B = np.column_stack([ss.B[:, 0], K])
    return _system(A, B, ss.C)


def _extended_system(ss: StateSpace, K_x, K_d) -> PredictorSystem:
    n = ss.n
    C = ss.C[0]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = ss.A - np.outer(K_x, C)
    A[:n, n] = ss.B[:, 0]
    A[n, :n] = -K_d * C
    B = np.zeros((n + 1, 2))
    B[:n, 0] = ss.B[:, 0]
    B[:n, 1] = K_x
    B[n, 1] = K_d
    return _system(A, B, np.r_[C, 0.0])


def _stabilized_system(ss: StateSpace, Khat: TransferFunction) -> PredictorSystem:
    # plant model driven by u_hat = u + Khat e, e = y - C x
    Kss = Khat.to_ss()
    n, nk = ss.n, Kss.n
    Bp, Cp = ss.B[:, 0], ss.C[0]
    Bk, Ck, Dk = Kss.B[:, 0], Kss.C[0], Kss.D
    A = np.zeros((n + nk, n + nk))
    A[:n, :n] = ss.A - Dk * np.outer(Bp, Cp)
    A[:n, n:] = np.outer(Bp, Ck)
    A[n:, :n] = -np.outer(Bk, Cp)
    A[n:, n:] = Kss.A
    B = np.zeros((n + nk, 2))
    B[:n, 0] = Bp
    B[:n, 1] = Dk * Bp
    B[n:, 1] = Bk
    return _system(A, B, np.r_[Cp, np.zeros(nk)])


def n_initial_states(ms: ModelStructure, kind) -> int:
    """Length of the initial-state block the predictor takes."""
    if isinstance(kind, FixedPoleExtendedObserver):
        return ms.n + 1
    if isinstance(kind, StabilizedOE):
        return ms.n + kind.virtual_controller.order
    return ms.n


def predictor_system(ms: ModelStructure, theta, kind, gain=None) -> PredictorSystem:
    """Continuous-time prediction system for ``kind`` at ``theta``.

    Placement failures propagate as :class:`~ctclid.placement.PlacementError`.
    """
    ss = realize_ccf(ms, theta)
    if isinstance(kind, OE):
        return _system(ss.A, np.column_stack([ss.B[:, 0], np.zeros(ss.n)]), ss.C)
    if isinstance(kind, StabilizedOE):
        return _stabilized_system(ss, kind.virtual_controller)
    if isinstance(kind, FixedPoleObserver):
        if len(kind.poles) != ss.n:
            raise ValueError(f"fixed-pole observer needs {ss.n} poles, got {len(kind.poles)}")
        return _observer_system(ss, observer_gain(ss, kind.poles).K_x)
    if isinstance(kind, FixedPoleExtendedObserver):
        if len(kind.poles) != ss.n + 1:
            raise ValueError(
                f"extended observer needs {ss.n + 1} poles, got {len(kind.poles)}"
            )
        g = extended_observer_gain(ss, kind.poles)
        return _extended_system(ss, g.K_x, g.K_d)
    if isinstance(kind, FreeGainObserver):
        if gain is None:
            raise ValueError("free-gain observer needs an explicit gain")
        return _observer_system(ss, gain)
    raise TypeError(f"unknown predictor kind {kind!r}")


HOLDS = ("zoh", "foh", "cubic", "eno3")
DEFAULT_HOLD = "eno3"

# every candidate stencil, as sample offsets relative to step k
_STENCILS = ((0,), (0, 1), (-2, -1, 0, 1), (-1, 0, 1, 2), (0, 1, 2, 3))
_WIDTH = 4
_PAD = 2


def _holds(hold):
    """Normalize ``hold`` to a ``(u_hold, y_hold)`` pair."""
    pair = (hold, hold) if isinstance(hold, str) else tuple(hold)
    if len(pair) != 2 or any(h not in HOLDS for h in pair):
        raise ValueError(f"hold must be one of {HOLDS} or a (u, y) pair of them, got {hold!r}")
    return pair


def discretize(sys: PredictorSystem, h: float):
    """Exact discretization of the predictor under interpolated inputs.

    Returns ``(Ad, Bs, first)`` where ``Bs[s, :, t, c]`` multiplies sample
    ``k + first[s] + t`` of input channel ``c`` when stencil ``s`` of
    ``_STENCILS`` interpolates that channel on ``[t_k, t_{k+1}]``.
    Narrow stencils are zero-padded to a common width.
    """
    n, m = sys.B.shape
    q = _WIDTH
    # chain of polynomial-basis blocks tau^j / j! feeding the state
    M = np.zeros((n + q * m, n + q * m))
    M[:n, :n] = sys.A * h
    M[:n, n : n + m] = sys.B * h
    for j in range(q - 1):
        M[n + j * m : n + (j + 1) * m, n + (j + 1) * m : n + (j + 2) * m] = np.eye(m)
    E = expm(M)
    gammas = [E[:n, n + j * m : n + (j + 1) * m] * math.factorial(j) for j in range(q)]
    Bs = np.zeros((len(_STENCILS), n, q, m))
    for s, offsets in enumerate(_STENCILS):
        w = len(offsets)
        # monomial coefficients of the interpolant on [0, 1] from its samples
        L = np.linalg.inv(np.vander(np.asarray(offsets, dtype=float), w, increasing=True))
        for t in range(w):
            Bs[s, :, t, :] = sum(gammas[j] * L[j, t] for j in range(w))
    first = np.array([st[0] for st in _STENCILS], dtype=np.int64)
    return E[:n, :n], Bs, first


def select_stencils(v: np.ndarray, hold: str) -> np.ndarray:
    """Index into ``_STENCILS`` for every step of one channel.

    ``zoh`` holds the sample, ``foh`` interpolates linearly, ``cubic``
    uses the centred four-point cubic and ``eno3`` grows the cubic stencil
    from ``{k, k+1}`` towards the side with the smaller divided
    difference, twice (ties favour the centred stencil), so it does not
    straddle kinks.  Cubic stencils are kept inside the record.
    """
    N = v.size
    if hold == "zoh":
        return np.zeros(N, dtype=np.int64)
    if hold == "foh":
        if N < 2:
            raise ValueError("foh interpolation needs at least two samples")
        return np.ones(N, dtype=np.int64)
    if N < 4:
        raise ValueError(f"{hold} interpolation needs at least four samples")
    k = np.arange(N)
    if hold == "cubic":
        s = np.ones(N, dtype=np.int64)
    else:
        inf = np.inf
        d2 = np.full(N + 2, inf)  # d2[j] centred at sample j
        d2[1 : N - 1] = np.abs(v[:-2] - 2 * v[1:-1] + v[2:])
        d3 = np.full(N + 2, inf)  # d3[j] over samples j-1 .. j+2; d3[-1] is inf
        d3[1 : N - 2] = np.abs(v[3:] - 3 * v[2:-1] + 3 * v[1:-2] - v[:-3])
        left = d2[k] <= d2[k + 1]
        s_left = np.where(d3[k - 1] < d3[k], 0, 1)
        s_right = np.where(d3[k] <= d3[k + 1], 1, 2)
        s = np.where(left, s_left, s_right)
    s = np.clip(np.clip(s, 2 - k, N - 2 - k), 0, 2)
    return s + 2


def simulate_predictor(
    sys: PredictorSystem, x0, data: DataSet, hold=DEFAULT_HOLD, ratio: Optional[float] = DIVERGENCE_RATIO
) -> ResidualSeries:
    """Propagate the predictor over ``data`` and return ``e = y - y_hat``.

    ``hold`` names the inter-sample model for both inputs, or is a
    ``(u_hold, y_hold)`` pair.  The run counts as diverged once a state
    leaves ``DIVERGENCE_LIMIT`` or, unless ``ratio`` is ``None``, once
    ``|e|`` exceeds ``ratio`` times the largest measured ``|y|``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != sys.A.shape[0]:
        raise ValueError(f"initial state must have {sys.A.shape[0]} entries, got {x0.size}")
    hu, hy = _holds(hold)
    Ad, Bs, first = discretize(sys, data.h)
    sel = np.column_stack([select_stencils(data.u, hu), select_stencils(data.y, hy)])
    V = np.zeros((data.N + _PAD + _WIDTH, 2))
    V[_PAD : _PAD + data.N, 0] = data.u
    V[_PAD : _PAD + data.N, 1] = data.y
    e, bad = propagate_stencil(
        Ad, Bs, first + _PAD, sys.Ce[0], sys.De[0], x0, V, sel, data.N, _PAD, DIVERGENCE_LIMIT
    )
    if bad >= 0:
        return ResidualSeries(e, True, min(bad, e.size))
    if ratio is None:
        return ResidualSeries(e)
    scale = ratio * max(np.max(np.abs(data.y)), np.finfo(float).tiny)
    big = np.flatnonzero(~(np.abs(e) <= scale))
    if big.size:
        return ResidualSeries(e, True, int(big[0]))
    return ResidualSeries(e)


def residuals(ms: ModelStructure, theta, x0, data: DataSet, kind, gain=None, hold=DEFAULT_HOLD) -> ResidualSeries:
    """Residual sequence of predictor ``kind`` at ``theta``."""
    return simulate_predictor(predictor_system(ms, theta, kind, gain), x0, data, hold)


def oe_residuals(ms, theta, x0, data, hold=DEFAULT_HOLD) -> ResidualSeries:
    """Plain output error: the model is simulated open loop from ``u``."""
    return residuals(ms, theta, x0, data, OE(), hold=hold)


def stabilized_oe_residuals(ms, theta, x0, data, virtual_controller, hold=DEFAULT_HOLD) -> ResidualSeries:
    """Output error with ``u_hat = u + Khat(p) e`` fed to the model.

    ``x0`` stacks the model states and then the virtual controller states.
    """
    return residuals(ms, theta, x0, data, StabilizedOE(virtual_controller), hold=hold)


def observer_residuals(ms, theta, x0, data, poles, hold=DEFAULT_HOLD) -> ResidualSeries:
    """Fixed-pole observer: the gain is placed from ``theta`` on every call."""
    return residuals(ms, theta, x0, data, FixedPoleObserver(_poles(poles)), hold=hold)


def extended_observer_residuals(ms, theta, x0, d0, data, poles, hold=DEFAULT_HOLD) -> ResidualSeries:
    x0 = np.r_[np.asarray(x0, dtype=float).reshape(-1), float(d0)]
    return residuals(ms, theta, x0, data, FixedPoleExtendedObserver(_poles(poles)), hold=hold)


def free_gain_residuals(ms, theta, gain, x0, data, hold=DEFAULT_HOLD) -> ResidualSeries:
    return residuals(ms, theta, x0, data, FreeGainObserver(), gain=gain, hold=hold)


def _poles(p) -> PoleSet:
    return p if isinstance(p, PoleSet) else PoleSet(p)
