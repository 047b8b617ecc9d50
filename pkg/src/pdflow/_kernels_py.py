"""Pure numpy implementation of the integration kernels.

Same signatures and return conventions as the compiled ``_kernels`` module;
used when the extension is unavailable or ``PDFLOW_PURE_PYTHON`` is set.
"""

import numpy as np

NAME = "numpy"


def vector_field(L, rinv, alpha, beta, gamma, H, c, ea, ec, ed, sa, sc, sd, X, Z):
    LX = L @ X
    dX = -(L @ Z) - alpha * LX
    dZ = beta * LX
    if gamma != 0.0:
        G = np.einsum("ikl,il->ik", H, X) + c
        if ec.size:
            w = ec * np.exp(np.einsum("qk,qk->q", ed, X[ea]))
            np.add.at(G, ea, w[:, None] * ed)
        if sc.size:
            w = sc * np.cos(np.einsum("qk,qk->q", sd, X[sa]))
            np.add.at(G, sa, w[:, None] * sd)
        dX -= gamma * rinv[:, None] * G
    return dX, dZ


def rk4(L, rinv, alpha, beta, gamma, H, c, ea, ec, ed, sa, sc, sd, X0, Z0,
        dt, n_steps, stride, blowup):
    args = (L, rinv, alpha, beta, gamma, H, c, ea, ec, ed, sa, sc, sd)
    X = np.array(X0, dtype=float)
    Z = np.array(Z0, dtype=float)
    Xrec, Zrec, steps = [X.copy()], [Z.copy()], [0]
    h2, h6 = 0.5 * dt, dt / 6.0
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4_loop(args, X, Z, Xrec, Zrec, steps, n_steps, stride, blowup, dt, h2, h6)


def _rk4_loop(args, X, Z, Xrec, Zrec, steps, n_steps, stride, blowup, dt, h2, h6):
    status, stop_step = 0, n_steps
    for step in range(1, n_steps + 1):
        k1x, k1z = vector_field(*args, X, Z)
        k2x, k2z = vector_field(*args, X + h2 * k1x, Z + h2 * k1z)
        k3x, k3z = vector_field(*args, X + h2 * k2x, Z + h2 * k2z)
        k4x, k4z = vector_field(*args, X + dt * k3x, Z + dt * k3z)
        Xn = X + h6 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        Zn = Z + h6 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        nrm = np.sum(Xn * Xn) + np.sum(Zn * Zn)
        if not np.isfinite(nrm) or nrm > blowup * blowup:
            status, stop_step = 1, step
            if steps[-1] != step - 1:
                Xrec.append(X.copy())
                Zrec.append(Z.copy())
                steps.append(step - 1)
            break
        X, Z = Xn, Zn
        if step % stride == 0 or step == n_steps:
            Xrec.append(X.copy())
            Zrec.append(Z.copy())
            steps.append(step)
    return np.array(Xrec), np.array(Zrec), np.array(steps, dtype=np.intp), status, stop_step
