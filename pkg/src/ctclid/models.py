"""Continuous-time model algebra.

Polynomials are stored with ascending powers internally (``coeffs[i]``
multiplies ``p**i``).  Everything that crosses a file or config boundary
uses descending powers, matching how transfer functions are usually
written down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.polynomial import polynomial as P

__all__ = [
    "Polynomial",
    "TransferFunction",
    "StateSpace",
    "ModelStructure",
    "realize_ccf",
    "ss_to_tf",
    "eigenvalues",
    "is_hurwitz",
    "freq_response",
]


def _trim(coeffs: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(coeffs)
    if nz.size == 0:
        return np.zeros(1)
    return coeffs[: nz[-1] + 1]


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial in the differential operator ``p``, ascending powers."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1:
            raise ValueError("polynomial coefficients must be one-dimensional")
        if not np.all(np.isfinite(c)):
            raise ValueError("polynomial coefficients must be finite")
        c = _trim(c)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_descending(cls, coeffs) -> "Polynomial":
        return cls(np.asarray(coeffs, dtype=float)[::-1])

    def descending(self) -> np.ndarray:
        return self.coeffs[::-1].copy()

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0.0

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(s, self.coeffs)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(np.polynomial.polynomial.polymul(self.coeffs, other.coeffs))

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(np.polynomial.polynomial.polyadd(self.coeffs, other.coeffs))

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())


@dataclass(frozen=True)
class TransferFunction:
    """Proper rational function ``num(p) / den(p)`` with a monic denominator."""

    num: Polynomial
    den: Polynomial

    def __post_init__(self):
        num, den = self.num, self.den
        if not isinstance(num, Polynomial):
            num = Polynomial(num)
        if not isinstance(den, Polynomial):
            den = Polynomial(den)
        if den.is_zero():
            raise ValueError("denominator is identically zero")
        if num.degree > den.degree and not num.is_zero():
            raise ValueError("transfer function must be proper")
        lead = den.coeffs[-1]
        object.__setattr__(self, "num", Polynomial(num.coeffs / lead))
        object.__setattr__(self, "den", Polynomial(den.coeffs / lead))

    @classmethod
    def from_descending(cls, num, den) -> "TransferFunction":
        return cls(Polynomial.from_descending(num), Polynomial.from_descending(den))

    @classmethod
    def zpk(cls, zeros, poles, gain: float) -> "TransferFunction":
        num = np.real_if_close(np.poly(zeros) * gain) if len(zeros) else np.array([gain])
        den = np.real_if_close(np.poly(poles)) if len(poles) else np.array([1.0])
        return cls.from_descending(np.real(num), np.real(den))

    @classmethod
    def zero(cls) -> "TransferFunction":
        return cls(Polynomial([0.0]), Polynomial([1.0]))

    @property
    def order(self) -> int:
        return self.den.degree

    @property
    def strictly_proper(self) -> bool:
        return self.num.is_zero() or self.num.degree < self.den.degree

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def poles(self) -> np.ndarray:
        return np.roots(self.den.descending())

    def __call__(self, s):
        return self.num(s) / self.den(s)

    def __mul__(self, other: "TransferFunction") -> "TransferFunction":
        return TransferFunction(self.num * other.num, self.den * other.den)

    def to_ss(self) -> "StateSpace":
        """Controllable canonical realization, with a direct term when biproper."""
        n = self.den.degree
        a = self.den.coeffs  # monic, length n + 1
        b = np.zeros(n + 1)
        b[: len(self.num.coeffs)] = self.num.coeffs
        d = b[n]
        if n == 0:
            return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), d)
        A = np.zeros((n, n))
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -a[:n]
        B = np.zeros((n, 1))
        B[-1, 0] = 1.0
        C = (b[:n] - d * a[:n]).reshape(1, n)
        return StateSpace(A, B, C, d)


@dataclass(frozen=True)
class StateSpace:
    """Single-input single-output realization ``(A, B, C, D)``.

    The identified plant models always have ``D = 0``; the direct term is
    kept so controllers that are merely proper can be realized too.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n)
        B = np.asarray(self.B, dtype=float).reshape(n, 1)
        C = np.asarray(self.C, dtype=float).reshape(1, n)
        for name, M in (("A", A), ("B", B), ("C", C)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        object.__setattr__(self, "D", float(self.D))

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class ModelStructure:
    """Parametrized set of strictly proper SISO transfer functions.

    ``theta[:n]`` are the denominator coefficients below the monic leading
    term, ``theta[n:]`` the numerator coefficients, both in descending
    powers.  For ``n=3, m=0`` this is ``theta[3] / (p^3 + theta[0] p^2 +
    theta[1] p + theta[2])``.
    """

    den_degree: int
    num_degree: int = 0

    def __post_init__(self):
        if self.den_degree < 1:
            raise ValueError("den_degree must be >= 1")
        if not 0 <= self.num_degree < self.den_degree:
            raise ValueError("num_degree must satisfy 0 <= m < n")

    @property
    def n(self) -> int:
        return self.den_degree

    @property
    def n_params(self) -> int:
        return self.den_degree + self.num_degree + 1

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters, got shape {theta.shape}"
            )
        return theta

    def tf(self, theta) -> TransferFunction:
        theta = self.check(theta)
        n = self.den_degree
        return TransferFunction.from_descending(theta[n:], np.r_[1.0, theta[:n]])

    def theta_from_tf(self, tf: TransferFunction) -> np.ndarray:
        n, m = self.den_degree, self.num_degree
        if tf.den.degree != n or tf.num.degree > m:
            raise ValueError("transfer function does not belong to this structure")
        num = np.zeros(m + 1)
        num[: len(tf.num.coeffs)] = tf.num.coeffs
        return np.r_[tf.den.coeffs[:n][::-1], num[::-1]]


def realize_ccf(ms: ModelStructure, theta) -> StateSpace:
    """Controllable canonical realization of ``P(p, theta)``.

    ``A`` is the companion matrix of the monic denominator with the
    negated coefficients in its last row, ``B`` is the last unit vector and
    ``C`` carries the numerator coefficients in ascending order.
    """
    theta = ms.check(theta)
    n, m = ms.den_degree, ms.num_degree
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -theta[:n][::-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = np.zeros((1, n))
    C[0, : m + 1] = theta[n:][::-1]
    return StateSpace(A, B, C)


def ss_to_tf(ss: StateSpace) -> TransferFunction:
    """Transfer function of a SISO realization.

    The realization is brought to controller-Hessenberg form (``B`` along
    the first basis vector, ``A`` upper Hessenberg) and both polynomials
    are built by a division-free back recursion on the Hessenberg rows.
    The numerator is never formed as a difference of characteristic
    polynomials, so it does not suffer cancellation.
    """
    n = ss.n
    if n == 0:
        return TransferFunction.from_descending([ss.D], [1.0])
    b = ss.B[:, 0]
    beta = -np.copysign(np.linalg.norm(b), b[0])
    v = b.copy()
    v[0] -= beta
    vv = v @ v
    Q1 = np.eye(n) - 2.0 * np.outer(v, v) / vv if vv > 0 else np.eye(n)
    H, Q2 = scipy.linalg.hessenberg(Q1.T @ ss.A @ Q1, calc_q=True)
    c = (ss.C @ Q1 @ Q2)[0]
    sub = np.r_[0.0, 0.0, np.diag(H, -1)]  # sub[k] = H[k-1, k-2], 1-based rows

    # q[i] is the i-th entry of adj(pI - H) e1 divided by prod(sub[2..i])
    q = [None] * (n + 1)
    q[n] = np.array([1.0])
    for i in range(n, 1, -1):
        acc = P.polymul([-H[i - 1, i - 1], 1.0], q[i])
        for j in range(i + 1, n + 1):
            acc = P.polysub(acc, H[i - 1, j - 1] * np.prod(sub[i + 1 : j + 1]) * q[j])
        q[i - 1] = acc
    x = [np.prod(sub[2 : i + 1]) * q[i] for i in range(1, n + 1)]

    den = P.polymul([-H[0, 0], 1.0], x[0])
    num = np.zeros(1)
    for j in range(n):
        if j > 0:
            den = P.polysub(den, H[0, j] * x[j])
        num = P.polyadd(num, beta * c[j] * x[j])
    den = np.r_[den, np.zeros(n + 1)][: n + 1]
    num = P.polyadd(num, ss.D * den)
    return TransferFunction(Polynomial(num), Polynomial(den))


def eigenvalues(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    try:
        return np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigensolver failed: {exc}") from exc


def is_hurwitz(A, margin: float = 0.0) -> bool:
    """True when every eigenvalue of ``A`` has real part below ``-margin``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    ev = eigenvalues(A)
    return bool(np.all(ev.real < -margin))


def freq_response(tf: TransferFunction, omega) -> np.ndarray:
    """Evaluate ``tf`` at ``p = i*omega``.

    Grid points that hit a pole come back as ``nan`` instead of raising.
    """
    s = 1j * np.asarray(omega, dtype=float)
    num = tf.num(s)
    den = tf.den(s)
    out = np.full(s.shape, np.nan + 1j * np.nan, dtype=complex)
    ok = den != 0
    out[ok] = num[ok] / den[ok]
    return out
