"""Batched trajectory-cost evaluation.

The generic path steps every sample one time step at a time through the
model's ``step`` method.  When the model is one of the built-in vehicle
models and the cost is a :class:`DrivingCost`, a fused kernel runs each
sample's whole horizon in one compiled loop instead.  Both paths perform the
same floating-point operations in the same order, so they agree bit for bit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .costs import DrivingCost, _driving_cost_row
from .dynamics import TireSaturationError, _basis_row_step, _bicycle_row


@njit(cache=True, nogil=True)
def _fused_rollout(kind, x0, V, coef, lo, hi, dt, theta, prm, substeps,
                   values, mx0, my0, res, cp, terminal):
    n, T, m = V.shape
    S = np.empty(n)
    x = np.empty(x0.shape[0])
    xn = np.empty(x0.shape[0])
    phi = np.empty(25)
    for i in range(n):
        x[:] = x0
        s = 0.0
        decay_t = 1.0
        for t in range(T):
            ctrl = 0.0
            for j in range(m):
                ctrl += coef[t, j] * V[i, t, j]
            v0 = min(max(V[i, t, 0], lo[0]), hi[0])
            v1 = min(max(V[i, t, 1], lo[1]), hi[1])
            if kind == 0:
                _basis_row_step(x, xn, v0, v1, dt, theta, phi)
            else:
                _bicycle_row(x, xn, v0, v1, dt, prm, substeps)
            x[:] = xn
            decay_t = cp[5] ** (t + 1)
            s += _driving_cost_row(x[0], x[1], x[4], x[5], decay_t, values, mx0, my0, res, cp) + ctrl
        if terminal:
            s += _driving_cost_row(x[0], x[1], x[4], x[5], decay_t, values, mx0, my0, res, cp)
        S[i] = s
    return S


def _fused(x0, V, coef, model, cost, dt, bounds):
    kind = getattr(model, "kernel", None)
    if kind not in ("basis", "bicycle") or type(cost) is not DrivingCost or V.shape[2] != 2:
        return None
    m = V.shape[2]
    lo = np.full(m, -np.inf) if bounds is None else np.asarray(bounds.lower, dtype=float)
    hi = np.full(m, np.inf) if bounds is None else np.asarray(bounds.upper, dtype=float)
    if kind == "basis":
        (theta,) = model.kernel_args()
        prm, substeps = np.zeros(9), 1
    else:
        prm, substeps = model.kernel_args()
        theta = np.zeros((25, 4))
        limit = prm[5] * prm[6]
        if np.any(np.abs(prm[8] * np.clip(V[:, :, 1], lo[1], hi[1])) > limit):
            raise TireSaturationError(f"commanded rear force exceeds mu*F_z = {limit:.6g} N")
    cm = cost.cmap
    return _fused_rollout(0 if kind == "basis" else 1, np.ascontiguousarray(x0, dtype=float),
                          np.ascontiguousarray(V), np.ascontiguousarray(coef), lo, hi, float(dt),
                          np.ascontiguousarray(theta), prm, int(substeps), cm.values, cm.x0, cm.y0,
                          cm.resolution, cost._cp, cost.params.terminal == "state")


def rollout_costs(x0, U, V, model, cost, params, bounds=None, base_mean=None,
                  fused: bool = True) -> np.ndarray:
    """Trajectory costs for realized input sequences ``V`` (``(N, T, m)``).

    Inputs are clamped by ``bounds`` before entering the model; the control
    coupling ``gamma (u_t - u~_t)^T Sigma^{-1} v_t`` uses the unclamped ``v``.
    State costs are taken at steps ``1..T`` and the terminal cost at ``x_T``.
    """
    V = np.asarray(V, dtype=float)
    U = np.asarray(U, dtype=float)
    n, T, m = V.shape
    coef = params.gamma * (U if base_mean is None else U - base_mean) * params.sigma_inv
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if fused:
        S = _fused(x0, V, coef, model, cost, params.dt, bounds)
        if S is not None:
            return S
    x = np.repeat(x0.reshape(1, -1), n, axis=0)
    S = np.zeros(n)
    for t in range(T):
        v = V[:, t, :]
        ctrl = np.zeros(n)
        for j in range(m):
            ctrl += coef[t, j] * v[:, j]
        vc = v if bounds is None else bounds.clip(v)
        x = model.step(x, np.ascontiguousarray(vc), params.dt)
        S += cost.stage(x, t + 1) + ctrl
    S += cost.terminal(x, T)
    return S
