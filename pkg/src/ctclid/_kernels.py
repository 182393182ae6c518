"""Compiled inner loops."""

import numpy as np
from numba import njit

DIVERGENCE_LIMIT = 1e12


@njit(cache=True)
def propagate(Ad, Bd, Cy, Dy, x0, V, stride, limit):
    """Run ``x[k+1] = Ad x[k] + Bd v[k]`` and record ``Cy x[k] + Dy v[k]``
    every ``stride`` steps.

    Returns the recorded outputs, the final state and the first step index
    where a state component left ``[-limit, limit]`` (``-1`` if none).
    Recording stops at that point; the remaining rows are ``nan``.
    """
    n = Ad.shape[0]
    nv = Bd.shape[1]
    ny = Cy.shape[0]
    steps = V.shape[0]
    out = np.full((steps // stride, ny), np.nan)
    x = x0.copy()
    xn = np.empty(n)
    bad = -1
    for k in range(steps):
        if k % stride == 0:
            r = k // stride
            if r < out.shape[0]:
                for i in range(ny):
                    acc = 0.0
                    for j in range(n):
                        acc += Cy[i, j] * x[j]
                    for j in range(nv):
                        acc += Dy[i, j] * V[k, j]
                    out[r, i] = acc
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += Ad[i, j] * x[j]
            for j in range(nv):
                acc += Bd[i, j] * V[k, j]
            xn[i] = acc
        ok = True
        for i in range(n):
            x[i] = xn[i]
            if not (abs(xn[i]) <= limit):
                ok = False
        if not ok:
            bad = k + 1
            break
    return out, x, bad


@njit(cache=True)
def propagate_stencil(Ad, Bs, first, Cy, Dy, x0, V, sel, N, pad, limit):
    """Predictor recursion with per-step, per-channel interpolation stencils.

    ``V`` holds the ``N`` samples starting at row ``pad``, zero-padded on
    both sides.  ``Bs[s, i, t, c]`` weights row ``k + first[s] + t`` of
    channel ``c`` when stencil ``s`` is selected for step ``k``;
    ``sel[k, c]`` holds the selection.  Records ``Cy x[k] + Dy v[k]`` for
    every sample.
    """
    n = Ad.shape[0]
    nc = V.shape[1]
    q = Bs.shape[2]
    out = np.full(N, np.nan)
    x = x0.copy()
    xn = np.empty(n)
    bad = -1
    for k in range(N):
        acc = 0.0
        for j in range(n):
            acc += Cy[j] * x[j]
        for c in range(nc):
            acc += Dy[c] * V[k + pad, c]
        out[k] = acc
        if k == N - 1:
            break
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += Ad[i, j] * x[j]
            xn[i] = acc
        for c in range(nc):
            s = sel[k, c]
            base = k + first[s]
            for t in range(q):
                v = V[base + t, c]
                for i in range(n):
                    xn[i] += Bs[s, i, t, c] * v
        ok = True
        for i in range(n):
            x[i] = xn[i]
            if not (abs(xn[i]) <= limit):
                ok = False
        if not ok:
            bad = k + 1
            break
    return out, bad
