"""Closed-loop data generation with exact zero-order-hold integration.

The data-generating loop is

    y = P(p) (u + w) + eta
    u = r_u + K(p) (r_y - y)

where every exogenous signal is piecewise constant on its own hold grid.
The interconnection is discretized once with the matrix exponential, so
integration is exact between hold instants and insensitive to stiffness.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.linalg

from ._kernels import DIVERGENCE_LIMIT, propagate
from .models import StateSpace, TransferFunction

__all__ = [
    "SimulationError",
    "DivergenceError",
    "SignalSpec",
    "DataSet",
    "expm",
    "zoh_discretize",
    "make_signal",
    "closed_loop_system",
    "simulate_closed_loop",
]

SIGNAL_NAMES = ("r_u", "r_y", "w", "eta")


class SimulationError(ValueError):
    pass


class DivergenceError(SimulationError):
    def __init__(self, time: float):
        super().__init__(f"closed-loop simulation diverged at t = {time:.6g} s")
        self.time = time


@dataclass(frozen=True)
class SignalSpec:
    """Piecewise-constant exogenous signal.

    ``kind`` is one of ``square_wave`` (``amplitude``, ``period``),
    ``constant`` (``value``), ``zoh_gaussian`` (``mean``, ``std``,
    ``hold``, ``seed``, ``stream``) or ``zero``.  Gaussian draws come from
    a PCG64 stream keyed by ``SeedSequence(seed, spawn_key=(stream,))``;
    a ``seed`` of ``None`` means "supplied later" and samples as seed 0.
    """

    kind: str = "zero"
    amplitude: float = 1.0
    period: float = 1.0
    value: float = 0.0
    mean: float = 0.0
    std: float = 0.0
    hold: float = 1.0
    seed: Optional[int] = None
    stream: int = 0

    def __post_init__(self):
        if self.kind not in ("square_wave", "constant", "zoh_gaussian", "zero"):
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.kind == "square_wave" and not self.period > 0:
            raise ValueError("square wave period must be positive")
        if self.kind == "zoh_gaussian":
            if not self.hold > 0:
                raise ValueError("hold interval must be positive")
            if not self.std >= 0:
                raise ValueError("std must be non-negative")

    @classmethod
    def square_wave(cls, amplitude: float, period: float) -> "SignalSpec":
        return cls("square_wave", amplitude=amplitude, period=period)

    @classmethod
    def constant(cls, value: float) -> "SignalSpec":
        return cls("constant", value=value)

    @classmethod
    def zoh_gaussian(
        cls, mean: float, std: float, hold: float, seed: Optional[int] = None, stream: int = 0
    ) -> "SignalSpec":
        return cls("zoh_gaussian", mean=mean, std=std, hold=hold, seed=seed, stream=stream)

    @classmethod
    def zero(cls) -> "SignalSpec":
        return cls("zero")

    @property
    def is_zero(self) -> bool:
        return (
            self.kind == "zero"
            or (self.kind == "constant" and self.value == 0)
            or (self.kind == "square_wave" and self.amplitude == 0)
            or (self.kind == "zoh_gaussian" and self.mean == 0 and self.std == 0)
        )

    def hold_interval(self) -> Optional[float]:
        """Spacing of the instants where the signal may jump."""
        if self.kind == "square_wave":
            return self.period / 2
        if self.kind == "zoh_gaussian":
            return self.hold
        return None

    def to_dict(self) -> dict:
        keys = {
            "square_wave": ("amplitude", "period"),
            "constant": ("value",),
            "zoh_gaussian": ("mean", "std", "hold", "seed", "stream"),
            "zero": (),
        }[self.kind]
        return {"kind": self.kind, **{k: getattr(self, k) for k in keys}}


@dataclass
class DataSet:
    """Sampled input/output record ``{u(kh), y(kh)}``, optionally with the
    noise-free signals ``u0``, ``y0`` of the same experiment."""

    h: float
    u: np.ndarray
    y: np.ndarray
    u0: Optional[np.ndarray] = None
    y0: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if not self.h > 0:
            raise ValueError("sampling time must be positive")
        if self.u.size < 1 or self.u.shape != self.y.shape:
            raise ValueError("u and y must be non-empty and of equal length")
        for name in ("u0", "y0"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).reshape(-1)
                if v.shape != self.u.shape:
                    raise ValueError(f"{name} must match u in length")
                setattr(self, name, v)

    @property
    def N(self) -> int:
        return self.u.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    @property
    def has_shadow(self) -> bool:
        return self.u0 is not None and self.y0 is not None

    def noise_free(self) -> "DataSet":
        if not self.has_shadow:
            raise ValueError("data set carries no noise-free signals")
        return DataSet(self.h, self.u0, self.y0, meta=dict(self.meta))

    def to_csv(self, path, shadow: bool = True):
        cols = [self.t, self.u, self.y]
        header = ["t", "u", "y"]
        if shadow and self.has_shadow:
            cols += [self.u0, self.y0]
            header += ["u0", "y0"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "DataSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [c.strip() for c in next(reader)]
            except StopIteration:
                raise ValueError(f"{path}: empty file") from None
            if header not in (["t", "u", "y"], ["t", "u", "y", "u0", "y0"]):
                raise ValueError(f"{path}: expected header t,u,y[,u0,y0], got {','.join(header)}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric field") from None
        if not rows:
            raise ValueError(f"{path}: no data rows")
        arr = np.array(rows)
        t = arr[:, 0]
        if len(t) > 1:
            dt = np.diff(t)
            h = float(np.mean(dt))
            if not h > 0 or np.max(np.abs(dt - h)) > 1e-6 * h:
                raise ValueError(f"{path}: time column is not uniformly spaced")
        else:
            raise ValueError(f"{path}: need at least two rows to infer the sampling time")
        kw = {}
        if arr.shape[1] == 5:
            kw = {"u0": arr[:, 3], "y0": arr[:, 4]}
        return cls(h, arr[:, 1], arr[:, 2], **kw)


def expm(M) -> np.ndarray:
    """Matrix exponential (scaling and squaring with a Pade approximant)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(M)
    if not np.all(np.isfinite(E)):
        raise OverflowError("matrix exponential overflowed")
    return E


def zoh_discretize(ss_or_A, h: float, B=None):
    """Exact discretization under piecewise-constant inputs.

    Accepts a :class:`StateSpace` or an ``(A, B)`` pair (``B`` may have
    several columns) and returns ``(Ad, Bd)``.
    """
    if not h > 0:
        raise ValueError("sampling time must be positive")
    if isinstance(ss_or_A, StateSpace):
        A, B = ss_or_A.A, ss_or_A.B
    else:
        A = np.asarray(ss_or_A, dtype=float)
        B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A * h
    M[:n, n:] = B * h
    E = expm(M)
    return E[:n, :n], E[:n, n:]


def _grid_step(h: float, specs) -> tuple[float, int]:
    """Finest step that puts ``h`` and every hold instant on the grid.

    Returns ``(dt, q)`` with ``h = q * dt``.
    """
    h_frac = Fraction(h).limit_denominator(10**12)
    q = 1
    for spec in specs:
        hold = spec.hold_interval()
        if hold is None or spec.is_zero:
            continue
        ratio = Fraction(hold).limit_denominator(10**12) / h_frac
        ratio = ratio.limit_denominator(10**6)
        if abs(float(ratio) - hold / h) > 1e-9 * max(1.0, hold / h):
            raise SimulationError(f"hold interval {hold} is incommensurate with h = {h}")
        q = q * ratio.denominator // math.gcd(q, ratio.denominator)
    if q > 10**4:
        raise SimulationError("simulation grid would need more than 1e4 substeps per sample")
    return h / q, q


def make_signal(spec: SignalSpec, h: float, N: int) -> np.ndarray:
    """Sample ``spec`` at ``k * h`` for ``k = 0..N-1``."""
    k = np.arange(N)
    if spec.kind == "zero":
        return np.zeros(N)
    if spec.kind == "constant":
        return np.full(N, float(spec.value))
    if spec.kind == "square_wave":
        half = np.floor(k * h / (spec.period / 2) + 1e-9).astype(np.int64)
        return np.where(half % 2 == 0, spec.amplitude, -spec.amplitude).astype(float)
    idx = np.floor(k * h / spec.hold + 1e-9).astype(np.int64)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(0 if spec.seed is None else spec.seed, spawn_key=(spec.stream,)))
    )
    draws = rng.standard_normal(int(idx[-1]) + 1 if N else 0)
    return spec.mean + spec.std * draws[idx]


@dataclass(frozen=True)
class LoopMatrices:
    """Continuous interconnection with exogenous input ``[r_u, r_y, w, eta]``.

    State is plant states followed by controller states; ``Cy, Dy`` give
    the measured output, ``Cu, Du`` the plant input.
    """

    A: np.ndarray
    B: np.ndarray
    Cy: np.ndarray
    Dy: np.ndarray
    Cu: np.ndarray
    Du: np.ndarray
    n_plant: int


def closed_loop_system(plant: TransferFunction, controller: TransferFunction) -> LoopMatrices:
    P = plant.to_ss()
    K = controller.to_ss()
    if P.D != 0 and K.D != 0:
        raise SimulationError("algebraic loop: plant and controller both have direct terms")
    if P.D != 0:
        raise SimulationError("plant must be strictly proper")
    n, nk = P.n, K.n
    Bp, Cp = P.B[:, 0], P.C[0]
    Bk, Ck = K.B[:, 0], K.C[0]
    Dk = K.D
    A = np.zeros((n + nk, n + nk))
    A[:n, :n] = P.A - Dk * np.outer(Bp, Cp)
    A[:n, n:] = np.outer(Bp, Ck)
    A[n:, :n] = -np.outer(Bk, Cp)
    A[n:, n:] = K.A
    B = np.zeros((n + nk, 4))
    B[:n, 0] = Bp
    B[:n, 1] = Dk * Bp
    B[:n, 2] = Bp
    B[:n, 3] = -Dk * Bp
    B[n:, 1] = Bk
    B[n:, 3] = -Bk
    Cy = np.r_[Cp, np.zeros(nk)].reshape(1, -1)
    Dy = np.array([[0.0, 0.0, 0.0, 1.0]])
    Cu = np.r_[-Dk * Cp, Ck].reshape(1, -1)
    Du = np.array([[1.0, Dk, 0.0, -Dk]])
    return LoopMatrices(A, B, Cy, Dy, Cu, Du, n)


def simulate_closed_loop(
    plant: TransferFunction,
    controller: TransferFunction,
    signals: dict,
    h: float,
    N: int,
    warmup: int = 0,
    shadow: bool = True,
) -> DataSet:
    """Generate ``N`` samples of the loop after discarding ``warmup`` samples.

    ``signals`` maps any of ``r_u``, ``r_y``, ``w``, ``eta`` to a
    :class:`SignalSpec`; missing entries are zero.  The loop starts at rest.
    Raises :class:`DivergenceError` if the state leaves ``|x| <= 1e12``.
    """
    if N < 1 or warmup < 0:
        raise ValueError("need N >= 1 and warmup >= 0")
    unknown = set(signals) - set(SIGNAL_NAMES)
    if unknown:
        raise ValueError(f"unknown signals: {sorted(unknown)}")
    specs = [signals.get(name, SignalSpec.zero()) for name in SIGNAL_NAMES]
    loop = closed_loop_system(plant, controller)
    dt, q = _grid_step(h, specs)
    steps = (warmup + N) * q
    V = np.column_stack([make_signal(s, dt, steps) for s in specs])
    Ad, Bd = zoh_discretize(loop.A, dt, loop.B)
    Cout = np.vstack([loop.Cu, loop.Cy])
    Dout = np.vstack([loop.Du, loop.Dy])

    def run(V):
        x = np.zeros(loop.A.shape[0])
        start = warmup * q
        if start:
            _, x, bad = propagate(Ad, Bd, Cout, Dout, x, np.ascontiguousarray(V[:start]), q, DIVERGENCE_LIMIT)
            if bad >= 0:
                raise DivergenceError(bad * dt)
        x_start = x.copy()
        out, _, bad = propagate(Ad, Bd, Cout, Dout, x, np.ascontiguousarray(V[start:]), q, DIVERGENCE_LIMIT)
        if bad >= 0:
            raise DivergenceError((start + bad) * dt)
        return out[:, 0], out[:, 1], x_start

    u, y, xs = run(V)
    # loop state at the first recorded sample, plant part in canonical coordinates
    meta = {"warmup": warmup, "substeps": q, "x_start": xs}
    u0 = y0 = None
    if shadow:
        V0 = V.copy()
        V0[:, 2:] = 0.0
        u0, y0, xs0 = run(V0)
        meta["x_start_noise_free"] = xs0
    meta["n_plant"] = loop.n_plant
    return DataSet(h, u, y, u0, y0, meta=meta)
