"""Observer gains by pole placement.

SISO placement has a unique solution, so the gain comes from Ackermann's
formula applied to the dual pair ``(A', C')``.  Every placement is checked
afterwards with an eigensolver; a gain that misses its poles is an error,
not a warning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .models import Polynomial, StateSpace, eigenvalues

__all__ = [
    "PlacementError",
    "UnobservableError",
    "PoleSet",
    "ObserverGain",
    "poly_from_roots",
    "observability_matrix",
    "placement_error",
    "observer_gain",
    "extended_observer_gain",
    "augment_with_input_correction",
]

PLACEMENT_TOL = 1e-8
OBSERVABILITY_RTOL = 1e-10


class PlacementError(ValueError):
    """Pole placement failed or missed its target poles."""


class UnobservableError(PlacementError):
    """The output does not observe every state of the realization."""


def _conjugate_closed(poles: np.ndarray, tol: float) -> bool:
    remaining = list(poles)
    while remaining:
        z = remaining.pop()
        if abs(z.imag) <= tol * max(1.0, abs(z)):
            continue
        dist = [abs(w - np.conj(z)) for w in remaining]
        if not dist:
            return False
        k = int(np.argmin(dist))
        if dist[k] > tol * max(1.0, abs(z)):
            return False
        remaining.pop(k)
    return True


@dataclass(frozen=True)
class PoleSet:
    """Desired observer poles, closed under conjugation, open left half-plane."""

    poles: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.poles, dtype=complex))
        if p.ndim != 1 or p.size == 0:
            raise ValueError("a pole set needs at least one pole")
        if not np.all(np.isfinite(p)):
            raise ValueError("poles must be finite")
        if not _conjugate_closed(p, 1e-12):
            raise ValueError("pole set is not closed under complex conjugation")
        if np.any(p.real >= 0):
            raise ValueError("observer poles must have strictly negative real parts")
        p.setflags(write=False)
        object.__setattr__(self, "poles", p)

    @classmethod
    def from_pairs(cls, pairs) -> "PoleSet":
        """Build from ``[[re, im], ...]`` as written in config files."""
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("poles must be given as [re, im] pairs")
        return cls(arr[:, 0] + 1j * arr[:, 1])

    def to_pairs(self) -> list:
        return [[float(z.real), float(z.imag)] for z in self.poles]

    def with_real_part(self, re: float) -> "PoleSet":
        return PoleSet(re + 1j * self.poles.imag)

    def __len__(self):
        return len(self.poles)


@dataclass(frozen=True)
class ObserverGain:
    K_x: np.ndarray
    K_d: Optional[float] = None

    def __post_init__(self):
        K = np.asarray(self.K_x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(K)) or (
            self.K_d is not None and not np.isfinite(self.K_d)
        ):
            raise PlacementError("observer gain is not finite")
        object.__setattr__(self, "K_x", K)

    @property
    def extended(self) -> bool:
        return self.K_d is not None

    def stacked(self) -> np.ndarray:
        if self.K_d is None:
            return self.K_x.copy()
        return np.r_[self.K_x, self.K_d]


def poly_from_roots(poles) -> Polynomial:
    """Monic real polynomial whose roots are ``poles``."""
    if not isinstance(poles, PoleSet):
        p = np.atleast_1d(np.asarray(poles, dtype=complex))
        if not _conjugate_closed(p, 1e-12):
            raise ValueError("roots are not closed under complex conjugation")
    else:
        p = poles.poles
    coeffs = np.poly(p)
    return Polynomial(np.real(coeffs)[::-1])


def observability_matrix(A, C) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    rows = [C]
    for _ in range(A.shape[0] - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def _check_observable(O: np.ndarray, what: str):
    sv = np.linalg.svd(O, compute_uv=False)
    if sv[0] == 0 or sv[-1] <= OBSERVABILITY_RTOL * sv[0]:
        raise UnobservableError(
            f"{what} is not observable (observability matrix singular value "
            f"ratio {sv[-1] / sv[0] if sv[0] else 0.0:.3g})"
        )


def placement_error(M, poles) -> float:
    """Largest distance between requested poles and the eigenvalues of ``M``
    after optimal one-to-one matching.

    A pole requested ``m`` times is compared with the mean of its ``m``
    matched eigenvalues.  Computed eigenvalues of a multiple root scatter
    by about ``eps ** (1 / m)`` even for an exact gain, while their mean is
    as well conditioned as a simple eigenvalue.
    """
    target = np.asarray(poles.poles if isinstance(poles, PoleSet) else poles, dtype=complex).reshape(-1)
    ev = eigenvalues(M)
    cost = np.abs(target[:, None] - ev[None, :])
    rows, cols = linear_sum_assignment(cost)
    matched = ev[cols[np.argsort(rows)]]
    worst = 0.0
    for p in np.unique(target):
        group = target == p
        worst = max(worst, float(abs(matched[group].mean() - p)))
    return worst


def _ackermann_dual(A: np.ndarray, C: np.ndarray, poles: PoleSet, what: str) -> np.ndarray:
    n = A.shape[0]
    if len(poles) != n:
        raise ValueError(f"need {n} poles for {what}, got {len(poles)}")
    O = observability_matrix(A, C)
    _check_observable(O, what)
    # phi(A) by Horner, descending coefficients of the target polynomial
    phi = np.zeros_like(A)
    eye = np.eye(n)
    for c in poly_from_roots(poles).descending():
        phi = phi @ A + c * eye
    en = np.zeros(n)
    en[-1] = 1.0
    return phi @ np.linalg.solve(O, en)


def observer_gain(ss: StateSpace, poles: PoleSet, tol: float = PLACEMENT_TOL) -> ObserverGain:
    """Gain ``K_x`` with ``eig(A - K_x C)`` equal to ``poles``."""
    A, C = ss.A, ss.C
    K = _ackermann_dual(A, C, poles, "(A, C)")
    err = placement_error(A - np.outer(K, C[0]), poles)
    if not err <= tol:
        raise PlacementError(f"placed observer poles miss their targets by {err:.3g}")
    return ObserverGain(K)


def augment_with_input_correction(ss: StateSpace):
    """``([[A, B], [0, 0]], [C, 0])``: the plant with a constant input offset state."""
    n = ss.n
    A_aug = np.zeros((n + 1, n + 1))
    A_aug[:n, :n] = ss.A
    A_aug[:n, n] = ss.B[:, 0]
    C_aug = np.r_[ss.C[0], 0.0].reshape(1, n + 1)
    return A_aug, C_aug


def extended_observer_gain(
    ss: StateSpace, poles: PoleSet, tol: float = PLACEMENT_TOL
) -> ObserverGain:
    """Gains ``(K_x, K_d)`` placing the extended observer's ``n + 1`` poles.

    The closed-loop matrix is ``[[A - K_x C, B], [-K_d C, 0]]``.  Placement
    fails when the plant has a transmission zero at the origin, since the
    offset state is then invisible at the output.
    """
    A_aug, C_aug = augment_with_input_correction(ss)
    try:
        L = _ackermann_dual(A_aug, C_aug, poles, "augmented pair ([[A, B], [0, 0]], [C, 0])")
    except UnobservableError as exc:
        raise UnobservableError(
            f"{exc}; the plant likely has a zero at p = 0, which hides the input correction"
        ) from None
    err = placement_error(A_aug - np.outer(L, C_aug[0]), poles)
    if not err <= tol:
        raise PlacementError(f"placed extended-observer poles miss their targets by {err:.3g}")
    return ObserverGain(L[:-1], float(L[-1]))
