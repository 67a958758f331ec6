"""Pure-numpy versions of the hot loops in ``_kernels_numba``.

Vectorized over the batch axis; the Pegasos loop stays a Python loop but
performs the same arithmetic in the same order as the compiled version.
"""

import numpy as np

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def _signs(q):
    z = np.arange(1 << q)
    return 1.0 - 2.0 * ((z[:, None] >> np.arange(q)[None, :]) & 1)


def _hadamard_all(states, q):
    n, dim = states.shape
    for i in range(q):
        v = states.reshape(n, dim >> (i + 1), 2, 1 << i)
        a = v[:, :, 0, :].copy()
        b = v[:, :, 1, :]
        v[:, :, 0, :] = (a + b) * _INV_SQRT2
        v[:, :, 1, :] = (a - b) * _INV_SQRT2


def _ry(states, qubit, angle):
    n, dim = states.shape
    c = np.cos(0.5 * angle)
    s = np.sin(0.5 * angle)
    v = states.reshape(n, dim >> (qubit + 1), 2, 1 << qubit)
    a = v[:, :, 0, :].copy()
    b = v[:, :, 1, :].copy()
    v[:, :, 0, :] = c * a - s * b
    v[:, :, 1, :] = s * a + c * b


def _cx(states, control, target):
    dim = states.shape[1]
    z = np.arange(dim)
    src = z[((z >> control) & 1 == 1) & ((z >> target) & 1 == 0)]
    dst = src | (1 << target)
    tmp = states[:, src].copy()
    states[:, src] = states[:, dst]
    states[:, dst] = tmp


def _variational_inplace(states, theta, q, layers):
    for i in range(q):
        _ry(states, i, theta[i])
    for layer in range(1, layers + 1):
        for i in range(q - 1):
            _cx(states, i, i + 1)
        for i in range(q):
            _ry(states, i, theta[layer * q + i])


def _parity(q):
    z = np.arange(1 << q)
    bits = (z[:, None] >> np.arange(max(q, 1))[None, :]) & 1
    return 1.0 - 2.0 * (bits.sum(axis=1) & 1)


def feature_states(X, reps, scale):
    X = np.asarray(X, dtype=np.float64)
    n, q = X.shape
    dim = 1 << q
    s = _signs(q)
    ang = (scale * X) @ s.T
    if q > 1:
        pair = s[:, :-1] * s[:, 1:]
        ang = ang + (scale * X[:, :-1] * X[:, 1:]) @ pair.T
    phase = np.cos(0.5 * ang) - 1j * np.sin(0.5 * ang)
    out = np.zeros((n, dim), np.complex128)
    out[:, 0] = 1.0
    for _ in range(reps):
        _hadamard_all(out, q)
        out *= phase
    return out


def apply_variational(states, theta, q, layers):
    out = np.array(states, dtype=np.complex128, copy=True)
    _variational_inplace(out, theta, q, layers)
    return out


def z_expectations(states):
    q = int(states.shape[1]).bit_length() - 1
    probs = states.real**2 + states.imag**2
    return probs @ _parity(q)


def variational_expectations(states, thetas, q, layers):
    thetas = np.atleast_2d(thetas)
    out = np.empty((thetas.shape[0], states.shape[0]))
    for p in range(thetas.shape[0]):
        out[p] = z_expectations(apply_variational(states, thetas[p], q, layers))
    return out


def pegasos_exact(K, y, lam, indices, tau):
    m = K.shape[0]
    n_steps = len(indices)
    alpha = np.zeros(m, np.int64)
    running = np.zeros(m)
    margins = np.zeros(n_steps)
    incremented = np.zeros(n_steps, bool)
    losses = np.zeros(n_steps)
    done = 0
    yf = y.astype(np.float64)
    for step in range(n_steps):
        t = step + 1
        i = indices[step]
        scale = lam * t
        margin = yf[i] * running[i] / scale
        margins[step] = margin
        if margin < 1.0:
            alpha[i] += 1
            incremented[step] = True
            running += yf[i] * K[:, i]
        # sequential sum, same order as the compiled loop
        losses[step] = np.cumsum(np.maximum(1.0 - yf * running / scale, 0.0))[-1] / m
        done = t
        if tau > 0.0 and t >= 2 and abs(losses[step] - losses[step - 1]) < tau:
            break
    return alpha, margins, incremented, losses, done
