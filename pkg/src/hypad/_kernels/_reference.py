"""Numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_core`` module; used when
the extension is unavailable or ``HYPAD_PURE_PYTHON`` is set.

Gate layout along the last axis of the pre-activation is (input, forget,
output, candidate), each of width H.
"""
import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(xproj, U):
    """Run the LSTM recurrence over a projected sequence.

    Parameters
    ----------
    xproj : ndarray, shape (T, B, 4H)
        Input projection plus bias for every step.
    U : ndarray, shape (H, 4H)
        Recurrent weights.

    Returns
    -------
    hs, cs : ndarray, shape (T, B, H)
        Hidden and cell states after each step.
    gates : ndarray, shape (T, B, 4H)
        Post-activation gates, kept for the backward pass.
    """
    T, B, G = xproj.shape
    H = G // 4
    hs = np.empty((T, B, H))
    cs = np.empty((T, B, H))
    gates = np.empty((T, B, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = xproj[t] + h @ U
        a = gates[t]
        a[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
        a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
        c = a[:, H : 2 * H] * c + a[:, :H] * a[:, 3 * H :]
        h = a[:, 2 * H : 3 * H] * np.tanh(c)
        hs[t] = h
        cs[t] = c
    return hs, cs, gates


def lstm_backward(dhs, U, hs, cs, gates):
    """Backpropagate through :func:`lstm_forward`.

    Returns the gradient with respect to ``xproj`` (shape (T, B, 4H)) and
    with respect to ``U``.
    """
    T, B, H = dhs.shape
    dz = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        a = gates[t]
        i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        c_prev = cs[t - 1] if t > 0 else np.zeros((B, H))
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        d = dz[t]
        d[:, :H] = dc * g * i * (1.0 - i)
        d[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        d[:, 3 * H :] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = d @ U.T
    h_prev = np.concatenate([np.zeros((1, B, H)), hs[:-1]], axis=0)
    dU = h_prev.reshape(-1, H).T @ dz.reshape(-1, 4 * H)
    return dz, dU


def dtw(a, b, radius=-1):
    """Dynamic time warping cost with absolute-difference local cost.

    Steps are (-1, 0), (0, -1) and (-1, -1).  ``radius >= 0`` restricts the
    path to ``|i - j| <= radius``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("dtw needs non-empty sequences")
    cost = np.abs(a[:, None] - b[None, :])
    if radius >= 0:
        i, j = np.indices((n, m))
        cost = np.where(np.abs(i - j) <= radius, cost, np.inf)
    prev = np.cumsum(cost[0])
    for i in range(1, n):
        row = np.empty(m)
        row[0] = prev[0] + cost[i, 0]
        # diagonal and vertical moves vectorize; the horizontal move is a scan
        best = np.minimum(prev[1:], prev[:-1]) + cost[i, 1:]
        for j in range(1, m):
            row[j] = min(best[j - 1], row[j - 1] + cost[i, j])
        prev = row
    return float(prev[-1])


def dtw_rows(X, Y, radius=-1):
    """Row-wise :func:`dtw` over two (N, L) arrays."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    return np.array([dtw(x, y, radius) for x, y in zip(X, Y)])
