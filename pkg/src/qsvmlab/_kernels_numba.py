"""numba-compiled hot loops. Signatures mirror ``_kernels_numpy`` exactly.

Basis index convention: bit ``i`` of the index is the state of qubit ``i``.
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@njit(cache=True, nogil=True)
def _hadamard_all(psi, q):
    dim = psi.shape[0]
    for i in range(q):
        step = 1 << i
        for base in range(0, dim, step << 1):
            for k in range(base, base + step):
                a = psi[k]
                b = psi[k + step]
                psi[k] = (a + b) * _INV_SQRT2
                psi[k + step] = (a - b) * _INV_SQRT2


@njit(cache=True, nogil=True)
def _ry(psi, qubit, angle):
    c = math.cos(0.5 * angle)
    s = math.sin(0.5 * angle)
    dim = psi.shape[0]
    step = 1 << qubit
    for base in range(0, dim, step << 1):
        for k in range(base, base + step):
            a = psi[k]
            b = psi[k + step]
            psi[k] = c * a - s * b
            psi[k + step] = s * a + c * b


@njit(cache=True, nogil=True)
def _cx(psi, control, target):
    dim = psi.shape[0]
    cmask = 1 << control
    tmask = 1 << target
    for z in range(dim):
        if (z & cmask) and not (z & tmask):
            w = z | tmask
            tmp = psi[z]
            psi[z] = psi[w]
            psi[w] = tmp


@njit(cache=True, nogil=True)
def _variational_inplace(psi, theta, q, layers):
    for i in range(q):
        _ry(psi, i, theta[i])
    for layer in range(1, layers + 1):
        for i in range(q - 1):
            _cx(psi, i, i + 1)
        for i in range(q):
            _ry(psi, i, theta[layer * q + i])


@njit(cache=True, nogil=True)
def _parity_expectation(psi):
    acc = 0.0
    for z in range(psi.shape[0]):
        p = psi[z].real * psi[z].real + psi[z].imag * psi[z].imag
        # popcount parity
        v = z
        par = 0
        while v:
            par ^= 1
            v &= v - 1
        if par:
            acc -= p
        else:
            acc += p
    return acc


@njit(cache=True, nogil=True)
def feature_states(X, reps, scale):
    n, q = X.shape
    dim = 1 << q
    out = np.zeros((n, dim), np.complex128)
    phase = np.empty(dim, np.complex128)
    for s in range(n):
        for z in range(dim):
            ang = 0.0
            for i in range(q):
                si = 1.0 - 2.0 * ((z >> i) & 1)
                ang += scale * X[s, i] * si
            for i in range(q - 1):
                si = 1.0 - 2.0 * ((z >> i) & 1)
                sj = 1.0 - 2.0 * ((z >> (i + 1)) & 1)
                ang += scale * X[s, i] * X[s, i + 1] * si * sj
            phase[z] = complex(math.cos(0.5 * ang), -math.sin(0.5 * ang))
        psi = out[s]
        psi[0] = 1.0
        for _ in range(reps):
            _hadamard_all(psi, q)
            for z in range(dim):
                psi[z] = psi[z] * phase[z]
    return out


@njit(cache=True, nogil=True)
def apply_variational(states, theta, q, layers):
    out = states.copy()
    for s in range(out.shape[0]):
        _variational_inplace(out[s], theta, q, layers)
    return out


@njit(cache=True, nogil=True)
def z_expectations(states):
    n = states.shape[0]
    out = np.empty(n)
    for s in range(n):
        out[s] = _parity_expectation(states[s])
    return out


@njit(cache=True, nogil=True)
def variational_expectations(states, thetas, q, layers):
    p_count = thetas.shape[0]
    n, dim = states.shape
    out = np.empty((p_count, n))
    psi = np.empty(dim, np.complex128)
    for p in range(p_count):
        for s in range(n):
            for z in range(dim):
                psi[z] = states[s, z]
            _variational_inplace(psi, thetas[p], q, layers)
            out[p, s] = _parity_expectation(psi)
    return out


@njit(cache=True, nogil=True)
def pegasos_exact(K, y, lam, indices, tau):
    """Exact-kernel Pegasos trajectory.

    Returns (alpha, margins, incremented, losses, steps). ``losses[t-1]`` is the
    mean hinge loss after step ``t``; the loop stops early at the first
    ``t >= 2`` with ``|L_t - L_{t-1}| < tau`` when ``tau > 0``.
    """
    m = K.shape[0]
    n_steps = indices.shape[0]
    alpha = np.zeros(m, np.int64)
    # running[k] = sum_j alpha_j y_j K[k, j]
    running = np.zeros(m)
    margins = np.zeros(n_steps)
    incremented = np.zeros(n_steps, np.bool_)
    losses = np.zeros(n_steps)
    done = 0
    for step in range(n_steps):
        t = step + 1
        i = indices[step]
        scale = lam * t
        margin = y[i] * running[i] / scale
        margins[step] = margin
        if margin < 1.0:
            alpha[i] += 1
            incremented[step] = True
            yi = y[i]
            for k in range(m):
                running[k] += yi * K[k, i]
        acc = 0.0
        for k in range(m):
            v = 1.0 - y[k] * running[k] / scale
            if v > 0.0:
                acc += v
        losses[step] = acc / m
        done = t
        if tau > 0.0 and t >= 2 and abs(losses[step] - losses[step - 1]) < tau:
            break
    return alpha, margins, incremented, losses, done
