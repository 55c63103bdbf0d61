"""Compiled per-sample forward/backward passes over flat tree arrays.

Nodes are stored parent-before-child; ``left``/``right`` hold child indices or
-1.  Tasks are encoded 0 = regression, 1 = binary, 2 = multiclass; targets are
an (N, K) float array for regression and an (N, 1) array of labels otherwise.
"""

import math

import numpy as np
from numba import njit

REGRESSION, BINARY, MULTICLASS = 0, 1, 2


@njit(cache=True, inline="always")
def _sig(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _forward(gamma, W, V, R, left, right, x, dist, Y, S, G, H):
    M, K = R.shape
    D = x.shape[0]
    for m in range(M - 1, -1, -1):
        z = 0.0
        for j in range(D):
            z += W[m, j] * x[j]
        g = _sig(z)
        if dist:
            z = 0.0
            for j in range(D):
                z += V[m, j] * x[j]
            h = _sig(z)
        else:
            h = 1.0 - g
        G[m] = g
        H[m] = h
        lc = left[m]
        rc = right[m]
        gm = gamma[m]
        for k in range(K):
            s = 0.0
            if lc >= 0:
                s += g * Y[lc, k]
            if rc >= 0:
                s += h * Y[rc, k]
            S[m, k] = s
            Y[m, k] = (1.0 - gm) * s + gm * R[m, k]


@njit(cache=True)
def _loss_delta(y, t, task, dY):
    """Per-sample loss of raw output ``y``; writes dLoss/dy into ``dY``."""
    K = y.shape[0]
    if task == REGRESSION:
        loss = 0.0
        for k in range(K):
            diff = y[k] - t[k]
            loss += 0.5 * diff * diff
            dY[k] = diff
        return loss
    if task == BINARY:
        z = y[0]
        tt = t[0]
        if z > 0:
            loss = z + math.log1p(math.exp(-z)) - tt * z
        else:
            loss = math.log1p(math.exp(z)) - tt * z
        dY[0] = _sig(z) - tt
        return loss
    label = int(t[0])
    mx = y[0]
    for k in range(1, K):
        if y[k] > mx:
            mx = y[k]
    tot = 0.0
    for k in range(K):
        dY[k] = math.exp(y[k] - mx)
        tot += dY[k]
    for k in range(K):
        dY[k] /= tot
    dY[label] -= 1.0
    return mx + math.log(tot) - y[label]


@njit(cache=True)
def _backward(gamma, R, left, right, x, dist, Y, S, G, H, dY, delta, scale, dgam, dW, dV, dR):
    M, K = R.shape
    D = x.shape[0]
    for k in range(K):
        delta[0, k] = dY[k]
    for m in range(M):
        gm = gamma[m]
        lc = left[m]
        rc = right[m]
        g = G[m]
        h = H[m]
        dg = 0.0
        dh = 0.0
        acc_gamma = 0.0
        for k in range(K):
            d = delta[m, k]
            dR[m, k] += scale * gm * d
            acc_gamma += d * (R[m, k] - S[m, k])
            dd = (1.0 - gm) * d
            if lc >= 0:
                dg += dd * Y[lc, k]
                delta[lc, k] = dd * g
            if rc >= 0:
                dh += dd * Y[rc, k]
                delta[rc, k] = dd * h
        dgam[m] += scale * acc_gamma
        if dist:
            cw = scale * dg * g * (1.0 - g)
            cv = scale * dh * h * (1.0 - h)
            for j in range(D):
                dW[m, j] += cw * x[j]
                dV[m, j] += cv * x[j]
        else:
            cw = scale * (dg - dh) * g * (1.0 - g)
            for j in range(D):
                dW[m, j] += cw * x[j]


@njit(cache=True)
def batch_forward(gamma, W, V, R, left, right, X, dist):
    """Raw outputs for every row of ``X`` (augmented inputs)."""
    M, K = R.shape
    N = X.shape[0]
    out = np.empty((N, K))
    Y = np.zeros((M, K))
    S = np.zeros((M, K))
    G = np.zeros(M)
    H = np.zeros(M)
    for i in range(N):
        _forward(gamma, W, V, R, left, right, X[i], dist, Y, S, G, H)
        for k in range(K):
            out[i, k] = Y[0, k]
    return out


@njit(cache=True)
def _accumulate(gamma, W, V, R, left, right, X, T, rows, task, dist, dgam, dW, dV, dR, buf):
    """Mean loss over ``rows``; adds mean gradients into the d* arrays."""
    Y, S, G, H, dY, delta = buf
    n = rows.shape[0]
    scale = 1.0 / n
    total = 0.0
    for i in range(n):
        r = rows[i]
        _forward(gamma, W, V, R, left, right, X[r], dist, Y, S, G, H)
        total += _loss_delta(Y[0], T[r], task, dY)
        _backward(gamma, R, left, right, X[r], dist, Y, S, G, H, dY, delta, scale, dgam, dW, dV, dR)
    return total * scale


@njit(cache=True)
def _scratch(M, K):
    return (
        np.zeros((M, K)),
        np.zeros((M, K)),
        np.zeros(M),
        np.zeros(M),
        np.zeros(K),
        np.zeros((M, K)),
    )


@njit(cache=True)
def batch_loss_grads(gamma, W, V, R, left, right, X, T, task, dist):
    """Mean data loss over the batch and its gradients (no penalty term)."""
    M, K = R.shape
    dgam = np.zeros(M)
    dW = np.zeros(W.shape)
    dV = np.zeros(V.shape)
    dR = np.zeros((M, K))
    rows = np.arange(X.shape[0])
    loss = _accumulate(gamma, W, V, R, left, right, X, T, rows, task, dist, dgam, dW, dV, dR, _scratch(M, K))
    return loss, dgam, dW, dV, dR


@njit(cache=True)
def sgd_pass(gamma, W, V, R, left, right, X, T, task, dist, order, start, bs, lr, lam, tau):
    """Minibatch SGD steps over ``order`` beginning at position ``start``.

    Parameters are updated in place and gammas clamped to [0, 1].  Stops early
    as soon as a childless node's gamma falls below ``1 - tau``, returning
    ``(next_start, summed_sample_loss, needs_growth)``.
    """
    M, K = R.shape
    n = order.shape[0]
    dgam = np.zeros(M)
    dW = np.zeros(W.shape)
    dV = np.zeros(V.shape)
    dR = np.zeros((M, K))
    buf = _scratch(M, K)
    loss_sum = 0.0
    pos = start
    while pos < n:
        stop = min(pos + bs, n)
        rows = order[pos:stop]
        dgam[:] = 0.0
        dW[:, :] = 0.0
        dV[:, :] = 0.0
        dR[:, :] = 0.0
        loss_sum += _accumulate(gamma, W, V, R, left, right, X, T, rows, task, dist, dgam, dW, dV, dR, buf) * (stop - pos)
        pos = stop
        if lr != 0.0:
            for m in range(M):
                gm = gamma[m] - lr * (dgam[m] - lam)
                gamma[m] = min(1.0, max(0.0, gm))
                for k in range(K):
                    R[m, k] -= lr * dR[m, k]
            W -= lr * dW
            if dist:
                V -= lr * dV
        for m in range(M):
            if left[m] < 0 and right[m] < 0 and gamma[m] < 1.0 - tau:
                return pos, loss_sum, True
    return pos, loss_sum, False
