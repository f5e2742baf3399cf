"""Pure numpy implementations of the hot kernels.

These mirror :mod:`netchoice._ckernels` exactly (same signatures, same
floating point results up to summation order) and are used whenever the
compiled extension is unavailable or ``NETCHOICE_PURE=1`` is set.
"""
import numpy as np
from scipy import sparse


def _segment_softmax(u, offsets):
    starts = offsets[:-1]
    sizes = np.diff(offsets)
    ev = np.repeat(np.arange(len(sizes)), sizes)
    umax = np.maximum.reduceat(u, starts)
    e = np.exp(u - umax[ev])
    z = np.add.reduceat(e, starts)
    lse = np.log(z) + umax
    p = e / z[ev]
    return ev, lse, p


def clogit_eval(X, offsets, chosen, theta, weights, util_offset=None, order=2):
    """Per-event log-probabilities and weighted gradient/Hessian of a
    conditional logit over ragged choice sets.

    Parameters
    ----------
    X : (R, F) float64
        Stacked alternative features; event ``k`` owns rows
        ``offsets[k]:offsets[k+1]``.
    offsets : (N+1,) int64
    chosen : (N,) int64
        Position of the chosen alternative inside each event.
    theta : (F,) float64
    weights : (N,) float64
        Event weights applied to the gradient and Hessian sums only.
    util_offset : (R,) float64 or None
        Fixed additive utility per row.
    order : int
        0 returns only log-probabilities, 1 adds the gradient, 2 the Hessian.

    Returns
    -------
    ll : (N,) float64
        Unweighted log-probability of each chosen alternative.
    grad : (F,) float64 or None
    hess : (F, F) float64 or None
    """
    n_feat = X.shape[1]
    u = X @ theta if n_feat else np.zeros(X.shape[0])
    if util_offset is not None:
        u = u + util_offset
    starts = offsets[:-1]
    ev, lse, p = _segment_softmax(u, offsets)
    crow = starts + chosen
    ll = u[crow] - lse
    if order < 1:
        return ll, None, None
    if n_feat:
        xbar = np.add.reduceat(p[:, None] * X, starts, axis=0)
    else:
        xbar = np.zeros((len(chosen), 0))
    grad = weights @ (X[crow] - xbar)
    if order < 2:
        return ll, grad, None
    wp = weights[ev] * p
    hess = -((X * wp[:, None]).T @ X - (xbar * weights[:, None]).T @ xbar)
    return ll, grad, hess


def categorical_eval(codes, log_count, offsets, chosen, theta, weights, order=2):
    """Grouped conditional logit with one coefficient per category.

    Row ``r`` stands for ``exp(log_count[r])`` identical alternatives of
    category ``codes[r]``; codes are distinct within an event.
    """
    n_cat = len(theta)
    u = theta[codes] + log_count
    starts = offsets[:-1]
    ev, lse, p = _segment_softmax(u, offsets)
    crow = starts + chosen
    ll = theta[codes[crow]] - lse
    if order < 1:
        return ll, None, None
    wp = weights[ev] * p
    grad = np.bincount(codes[crow], weights=weights, minlength=n_cat)
    grad = grad - np.bincount(codes, weights=wp, minlength=n_cat)
    if order < 2:
        return ll, grad, None
    q = sparse.csr_matrix(
        (np.sqrt(weights[ev]) * p, (ev, codes)), shape=(len(chosen), n_cat)
    )
    hess = (q.T @ q).toarray()
    hess -= np.diag(np.bincount(codes, weights=wp, minlength=n_cat))
    return ll, grad, hess


class Fenwick:
    """Binary indexed tree over non-negative weights with inverse-CDF lookup."""

    def __init__(self, n):
        self.n = int(n)
        self._tree = [0.0] * (self.n + 1)
        self._w = [0.0] * self.n
        step = 1
        while step * 2 <= self.n:
            step *= 2
        self._top = step

    def add(self, i, delta):
        self._w[i] += delta
        tree = self._tree
        n = self.n
        i += 1
        while i <= n:
            tree[i] += delta
            i += i & (-i)

    def set(self, i, w):
        self.add(i, w - self._w[i])

    def get(self, i):
        return self._w[i]

    def prefix(self, i):
        """Sum of weights ``[0, i)``."""
        s = 0.0
        tree = self._tree
        while i > 0:
            s += tree[i]
            i -= i & (-i)
        return s

    def total(self):
        return self.prefix(self.n)

    def find(self, x):
        """Smallest index whose inclusive prefix sum exceeds ``x``."""
        pos = 0
        rem = x
        step = self._top
        tree = self._tree
        n = self.n
        while step > 0:
            nxt = pos + step
            if nxt <= n and tree[nxt] <= rem:
                pos = nxt
                rem -= tree[nxt]
            step >>= 1
        if pos >= n or self._w[pos] <= 0.0:
            return self._last_positive(min(pos, n - 1))
        return pos

    def _last_positive(self, start):
        w = self._w
        for i in range(start, -1, -1):
            if w[i] > 0.0:
                return i
        for i in range(start + 1, self.n):
            if w[i] > 0.0:
                return i
        raise ValueError("all weights are zero")
