# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled vector field and fixed-step RK4 loop for the primal-dual flow."""

import numpy as np
from libc.math cimport exp, sin, cos, sqrt, isfinite

NAME = "cython"


cdef void _field(const double[:, ::1] L, const double[::1] rinv,
                 double alpha, double beta, double gamma,
                 const double[:, :, ::1] H, const double[:, ::1] c,
                 const Py_ssize_t[::1] ea, const double[::1] ec, const double[:, ::1] ed,
                 const Py_ssize_t[::1] sa, const double[::1] sc, const double[:, ::1] sd,
                 const double[:, ::1] X, const double[:, ::1] Z,
                 double[:, ::1] dX, double[:, ::1] dZ) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], m = X.shape[1]
    cdef Py_ssize_t i, j, k, l, q
    cdef double lx, lz, g, s, w
    for i in range(n):
        for k in range(m):
            lx = 0.0
            lz = 0.0
            for j in range(n):
                lx = lx + L[i, j] * X[j, k]
                lz = lz + L[i, j] * Z[j, k]
            dX[i, k] = -lz - alpha * lx
            dZ[i, k] = beta * lx
    if gamma == 0.0:
        return
    for i in range(n):
        for k in range(m):
            g = c[i, k]
            for l in range(m):
                g = g + H[i, k, l] * X[i, l]
            dX[i, k] = dX[i, k] - gamma * rinv[i] * g
    for q in range(ec.shape[0]):
        i = ea[q]
        s = 0.0
        for l in range(m):
            s = s + ed[q, l] * X[i, l]
        w = gamma * rinv[i] * ec[q] * exp(s)
        for l in range(m):
            dX[i, l] = dX[i, l] - w * ed[q, l]
    for q in range(sc.shape[0]):
        i = sa[q]
        s = 0.0
        for l in range(m):
            s = s + sd[q, l] * X[i, l]
        w = gamma * rinv[i] * sc[q] * cos(s)
        for l in range(m):
            dX[i, l] = dX[i, l] - w * sd[q, l]


def vector_field(L, rinv, double alpha, double beta, double gamma,
                 H, c, ea, ec, ed, sa, sc, sd, X, Z):
    """Return ``(dX, dZ)`` for states shaped (N, m)."""
    Xc = np.ascontiguousarray(X, dtype=np.float64)
    Zc = np.ascontiguousarray(Z, dtype=np.float64)
    dX = np.empty_like(Xc)
    dZ = np.empty_like(Zc)
    _field(L, rinv, alpha, beta, gamma, H, c, ea, ec, ed, sa, sc, sd, Xc, Zc, dX, dZ)
    return dX, dZ


def rk4(L, rinv, double alpha, double beta, double gamma,
        H, c, ea, ec, ed, sa, sc, sd, X0, Z0,
        double dt, Py_ssize_t n_steps, Py_ssize_t stride, double blowup):
    """Classical RK4 with fixed step.

    Returns ``(Xrec, Zrec, steps, status, stop_step)`` where ``steps`` are
    the step indices of the records, ``status`` is 0 on completion and 1 when
    the state became non-finite or exceeded ``blowup`` in norm at step
    ``stop_step``.
    """
    cdef Py_ssize_t n = X0.shape[0], m = X0.shape[1]
    cdef Py_ssize_t n_rec = n_steps // stride + 1 + (1 if n_steps % stride else 0)
    Xrec_a = np.empty((n_rec + 1, n, m))
    Zrec_a = np.empty((n_rec + 1, n, m))
    steps_a = np.empty(n_rec + 1, dtype=np.intp)
    cdef double[:, :, ::1] Xrec = Xrec_a
    cdef double[:, :, ::1] Zrec = Zrec_a
    cdef Py_ssize_t[::1] steps = steps_a

    cdef double[:, ::1] X = np.array(X0, dtype=np.float64, order="C")
    cdef double[:, ::1] Z = np.array(Z0, dtype=np.float64, order="C")
    cdef double[:, ::1] Xt = np.empty((n, m))
    cdef double[:, ::1] Zt = np.empty((n, m))
    cdef double[:, ::1] k1x = np.empty((n, m)), k1z = np.empty((n, m))
    cdef double[:, ::1] k2x = np.empty((n, m)), k2z = np.empty((n, m))
    cdef double[:, ::1] k3x = np.empty((n, m)), k3z = np.empty((n, m))
    cdef double[:, ::1] k4x = np.empty((n, m)), k4z = np.empty((n, m))

    cdef const double[:, ::1] Lv = L
    cdef const double[::1] rv = rinv
    cdef const double[:, :, ::1] Hv = H
    cdef const double[:, ::1] cv = c
    cdef const Py_ssize_t[::1] eav = ea
    cdef const double[::1] ecv = ec
    cdef const double[:, ::1] edv = ed
    cdef const Py_ssize_t[::1] sav = sa
    cdef const double[::1] scv = sc
    cdef const double[:, ::1] sdv = sd

    cdef Py_ssize_t step, i, k, rec = 0, status = 0, stop_step = n_steps
    cdef double h2 = 0.5 * dt, h6 = dt / 6.0, nrm, v
    cdef double limit2 = blowup * blowup

    with nogil:
        Xrec[0, :, :] = X
        Zrec[0, :, :] = Z
        steps[0] = 0
        rec = 1
        for step in range(1, n_steps + 1):
            _field(Lv, rv, alpha, beta, gamma, Hv, cv, eav, ecv, edv, sav, scv, sdv, X, Z, k1x, k1z)
            for i in range(n):
                for k in range(m):
                    Xt[i, k] = X[i, k] + h2 * k1x[i, k]
                    Zt[i, k] = Z[i, k] + h2 * k1z[i, k]
            _field(Lv, rv, alpha, beta, gamma, Hv, cv, eav, ecv, edv, sav, scv, sdv, Xt, Zt, k2x, k2z)
            for i in range(n):
                for k in range(m):
                    Xt[i, k] = X[i, k] + h2 * k2x[i, k]
                    Zt[i, k] = Z[i, k] + h2 * k2z[i, k]
            _field(Lv, rv, alpha, beta, gamma, Hv, cv, eav, ecv, edv, sav, scv, sdv, Xt, Zt, k3x, k3z)
            for i in range(n):
                for k in range(m):
                    Xt[i, k] = X[i, k] + dt * k3x[i, k]
                    Zt[i, k] = Z[i, k] + dt * k3z[i, k]
            _field(Lv, rv, alpha, beta, gamma, Hv, cv, eav, ecv, edv, sav, scv, sdv, Xt, Zt, k4x, k4z)
            nrm = 0.0
            for i in range(n):
                for k in range(m):
                    v = X[i, k] + h6 * (k1x[i, k] + 2.0 * k2x[i, k] + 2.0 * k3x[i, k] + k4x[i, k])
                    Xt[i, k] = v
                    nrm = nrm + v * v
                    v = Z[i, k] + h6 * (k1z[i, k] + 2.0 * k2z[i, k] + 2.0 * k3z[i, k] + k4z[i, k])
                    Zt[i, k] = v
                    nrm = nrm + v * v
            if not isfinite(nrm) or nrm > limit2:
                status = 1
                stop_step = step
                if steps[rec - 1] != step - 1:
                    Xrec[rec, :, :] = X
                    Zrec[rec, :, :] = Z
                    steps[rec] = step - 1
                    rec = rec + 1
                break
            X[:, :] = Xt
            Z[:, :] = Zt
            if step % stride == 0 or step == n_steps:
                Xrec[rec, :, :] = X
                Zrec[rec, :, :] = Z
                steps[rec] = step
                rec = rec + 1

    return Xrec_a[:rec].copy(), Zrec_a[:rec].copy(), steps_a[:rec].copy(), int(status), int(stop_step)
