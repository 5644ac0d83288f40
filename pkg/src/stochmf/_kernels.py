"""Fused numba kernel for the batched orbital SSE step.

Same arithmetic as :func:`stochmf.sse.step_orbitals` (differential scheme),
written per trajectory so that stacks of tiny matrices do not pay numpy's
per-matrix overhead. The matrix exponential uses scaling and squaring with a
Taylor series truncated below double precision.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_TAYLOR_ORDER = 30
_SCALE_NORM = 0.125


@njit(cache=True, fastmath=True)
def _matmul(A, B, out):
    n, m = A.shape
    p = B.shape[1]
    for i in range(n):
        for j in range(p):
            acc = 0j
            for k in range(m):
                acc += A[i, k] * B[k, j]
            out[i, j] = acc


@njit(cache=True, fastmath=True)
def _inv(a, out):
    # Gauss-Jordan with partial pivoting; overwrites ``a``
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = 1.0 if i == j else 0.0
    for c in range(n):
        piv = c
        best = abs(a[c, c])
        for r in range(c + 1, n):
            if abs(a[r, c]) > best:
                best = abs(a[r, c])
                piv = r
        if piv != c:
            for j in range(n):
                a[c, j], a[piv, j] = a[piv, j], a[c, j]
                out[c, j], out[piv, j] = out[piv, j], out[c, j]
        d = a[c, c]
        for j in range(n):
            a[c, j] /= d
            out[c, j] /= d
        for r in range(n):
            if r != c:
                fct = a[r, c]
                if fct != 0:
                    for j in range(n):
                        a[r, j] -= fct * a[c, j]
                        out[r, j] -= fct * out[c, j]


@njit(cache=True, fastmath=True)
def _projector(W, rho, S, Si, X):
    M, A = W.shape
    for a in range(A):
        for b in range(A):
            acc = 0j
            for i in range(M):
                acc += np.conj(W[i, a]) * W[i, b]
            S[a, b] = acc
    _inv(S, Si)
    _matmul(W, Si, X)
    for i in range(M):
        for j in range(M):
            acc = 0j
            for a in range(A):
                acc += X[i, a] * np.conj(W[j, a])
            rho[i, j] = acc


@njit(cache=True, fastmath=True)
def _vbar(vidx, vval, rho, out):
    # sparse: out[i, j] = sum V[i, k, j, l] rho[l, k] over stored (i, j, l, k)
    out[:, :] = 0
    for n in range(vval.shape[0]):
        out[vidx[n, 0], vidx[n, 1]] += vval[n] * rho[vidx[n, 2], vidx[n, 3]]


@njit(cache=True, fastmath=True)
def _expm(Z, out, term, tmp):
    M = Z.shape[0]
    norm = 0.0
    for j in range(M):
        col = 0.0
        for i in range(M):
            col += abs(Z[i, j])
        norm = max(norm, col)
    s = 0
    while norm > _SCALE_NORM:
        norm *= 0.5
        s += 1
    scale = 1.0 / 2.0**s
    for i in range(M):
        for j in range(M):
            eye = 1.0 if i == j else 0.0
            out[i, j] = eye
            term[i, j] = eye
    # Taylor series, truncated once the next term drops below roundoff
    bound = 1.0
    for k in range(1, _TAYLOR_ORDER + 1):
        _matmul(Z, term, tmp)
        for i in range(M):
            for j in range(M):
                term[i, j] = tmp[i, j] * (scale / k)
                out[i, j] += term[i, j]
        bound *= norm / k
        if bound < 1e-18:
            break
    for _ in range(s):
        _matmul(out, out, tmp)
        out[:, :] = tmp


@njit(cache=True, fastmath=True, nogil=True)
def step_orbitals_batch(W, dW, T, vidx, vval, L, dt, hbar, midpoint, tol, max_iter):
    """Return the stepped orbitals and a per-trajectory convergence flag."""
    N, M, A = W.shape
    S = L.shape[0]
    out = np.empty_like(W)
    ok = np.ones(N, dtype=np.bool_)
    rho = np.empty((M, M), dtype=np.complex128)
    guess = np.empty((M, M), dtype=np.complex128)
    mid = np.empty((M, M), dtype=np.complex128)
    v = np.empty((M, M), dtype=np.complex128)
    h = np.empty((M, M), dtype=np.complex128)
    U = np.empty((M, M), dtype=np.complex128)
    tmp = np.empty((M, M), dtype=np.complex128)
    new = np.empty((M, M), dtype=np.complex128)
    G = np.empty((M, M), dtype=np.complex128)
    QG = np.empty((M, M), dtype=np.complex128)
    drift = np.empty((M, A), dtype=np.complex128)
    noise = np.empty((M, A), dtype=np.complex128)
    term = np.empty((M, M), dtype=np.complex128)
    tmp2 = np.empty((M, M), dtype=np.complex128)
    Sw = np.empty((A, A), dtype=np.complex128)
    Si = np.empty((A, A), dtype=np.complex128)
    X = np.empty((M, A), dtype=np.complex128)
    fac = dt / (1j * hbar)
    for n in range(N):
        Wn = W[n]
        _projector(Wn, rho, Sw, Si, X)
        # noise generator G = sum_s dW_s lambda_s O_s, applied as (1 - rho) G W
        for i in range(M):
            for j in range(M):
                acc = 0j
                for s in range(S):
                    acc += dW[n, s] * L[s, i, j]
                G[i, j] = acc
        _matmul(rho, G, QG)
        for i in range(M):
            for j in range(M):
                QG[i, j] = G[i, j] - QG[i, j]
        _matmul(QG, Wn, noise)
        if midpoint:
            guess[:, :] = rho
            converged = False
            for _ in range(max_iter):
                for i in range(M):
                    for j in range(M):
                        mid[i, j] = 0.5 * (rho[i, j] + guess[i, j])
                _vbar(vidx, vval, mid, v)
                for i in range(M):
                    for j in range(M):
                        h[i, j] = -1j * dt / hbar * (T[i, j] + v[i, j])
                _expm(h, U, term, tmp2)
                _matmul(U, rho, tmp)
                for i in range(M):
                    for j in range(M):
                        acc = 0j
                        for k in range(M):
                            acc += tmp[i, k] * np.conj(U[j, k])
                        new[i, j] = acc
                diff = 0.0
                for i in range(M):
                    for j in range(M):
                        diff = max(diff, abs(new[i, j] - guess[i, j]))
                guess[:, :] = new
                if diff <= tol:
                    converged = True
                    break
            ok[n] = converged
            # scalar gauge factor from the -rho vbar / 2 part of the drift
            z = 0j
            for i in range(M):
                for k in range(M):
                    z += mid[i, k] * v[k, i]
            z = -0.5 * fac * z
            g = np.exp(z / A)
            _matmul(U, Wn, drift)
            for i in range(M):
                for a in range(A):
                    drift[i, a] *= g
        else:
            _vbar(vidx, vval, rho, v)
            _matmul(rho, v, tmp)
            for i in range(M):
                for j in range(M):
                    h[i, j] = T[i, j] + v[i, j] - 0.5 * tmp[i, j]
            _matmul(h, Wn, drift)
            for i in range(M):
                for a in range(A):
                    drift[i, a] = Wn[i, a] + fac * drift[i, a]
        for i in range(M):
            for a in range(A):
                out[n, i, a] = drift[i, a] + noise[i, a]
    return out, ok


def kernel_arrays(model, dec):
    """Precomputed contiguous arrays consumed by :func:`step_orbitals_batch`."""
    Vt = model.V.transpose(0, 2, 3, 1)  # [i, j, l, k] = V[i, k, j, l]
    vidx = np.argwhere(Vt != 0).astype(np.int64)
    vval = Vt[tuple(vidx.T)].astype(complex)
    if dec.S:
        L = np.ascontiguousarray(dec.lambdas[:, None, None] * dec.ops)
    else:
        L = np.zeros((0, model.M, model.M), dtype=complex)
    return np.ascontiguousarray(model.T, dtype=complex), vidx, vval, L.astype(complex)
