"""Generic trellis with 1-bit observations and log-domain recursions.

A branch (transition) ``t`` goes from ``src[t]`` to ``dst[t]`` with prior
log-probability ``log_prior[t]`` and produces ``means[t]``, the noiseless
values of the D real observation dimensions of one step. Observations are the
signs y in {-1, +1}^D and the branch likelihood is the independent-Gaussian
auxiliary law prod_d Phi(y_d mean_d / sigma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import log_ndtr

_TABLE_LIMIT = 1 << 22


@dataclass(frozen=True)
class Trellis:
    n_states: int
    src: np.ndarray
    dst: np.ndarray
    log_prior: np.ndarray
    means: np.ndarray  # (T, D)
    label: np.ndarray  # input label of the branch
    level: np.ndarray  # symbol emitted on the branch
    stationary: np.ndarray  # (S,) stationary state distribution

    @property
    def n_branches(self) -> int:
        return len(self.src)

    @property
    def dims(self) -> int:
        return self.means.shape[1]


def stationary_distribution(n_states, src, dst, prob, iters: int = 100000, tol: float = 1e-15):
    P = np.zeros((n_states, n_states))
    np.add.at(P, (src, dst), prob)
    w, v = np.linalg.eig(P.T)
    pi = np.abs(v[:, int(np.argmin(np.abs(w - 1.0)))].real)
    return pi / pi.sum()


def patterns_to_index(y) -> np.ndarray:
    """(N, D) array of +/-1 -> integer pattern index sum_d [y_d > 0] 2^d."""
    y = np.asarray(y)
    return ((y > 0).astype(np.int64) << np.arange(y.shape[1])).sum(axis=1)


def pattern_table(means, sigma: float) -> np.ndarray:
    """log W(pattern | branch) for all 2^D patterns, shape (T, 2^D)."""
    T, D = means.shape
    idx = np.arange(2**D)
    signs = np.where((idx[:, None] >> np.arange(D)) & 1, 1.0, -1.0)  # (P, D)
    return log_ndtr(signs[None, :, :] * means[:, None, :] / sigma).sum(axis=-1)


def branch_loglik(means, y, sigma: float, table=None) -> np.ndarray:
    """(N, T) branch log-likelihoods of the sign observations ``y`` (N, D)."""
    if sigma <= 0:
        raise ValueError("noise standard deviation must be positive")
    y = np.asarray(y)
    T, D = means.shape
    if table is None and T * 2**D <= _TABLE_LIMIT:
        table = pattern_table(means, sigma)
    if table is not None:
        return np.ascontiguousarray(table[:, patterns_to_index(y)].T)
    return log_ndtr(y[:, None, :] * means[None, :, :] / sigma).sum(axis=-1)


@numba.njit(cache=True)
def _forward(src, dst, logp, logW, la0, store):
    N, T = logW.shape
    S = la0.shape[0]
    la = la0.copy()
    norms = np.empty(N)
    alphas = np.empty((N + 1 if store else 1, S))
    alphas[0] = la0
    v = np.empty(T)
    acc = np.empty(S)
    for n in range(N):
        mx = -np.inf
        for t in range(T):
            v[t] = la[src[t]] + logp[t] + logW[n, t]
            if v[t] > mx:
                mx = v[t]
        if mx == -np.inf:
            norms[n] = -np.inf
            la[:] = -np.inf
            break
        acc[:] = 0.0
        for t in range(T):
            acc[dst[t]] += np.exp(v[t] - mx)
        tot = 0.0
        for s in range(S):
            tot += acc[s]
        for s in range(S):
            la[s] = np.log(acc[s] / tot) if acc[s] > 0 else -np.inf
        norms[n] = mx + np.log(tot)
        if store:
            alphas[n + 1] = la
    return norms, la, alphas


@numba.njit(cache=True)
def _backward(src, dst, logp, logW, lb_end):
    N, T = logW.shape
    S = lb_end.shape[0]
    betas = np.empty((N + 1, S))
    betas[N] = lb_end
    norms = np.empty(N)
    v = np.empty(T)
    acc = np.empty(S)
    for n in range(N - 1, -1, -1):
        mx = -np.inf
        for t in range(T):
            v[t] = betas[n + 1, dst[t]] + logp[t] + logW[n, t]
            if v[t] > mx:
                mx = v[t]
        acc[:] = 0.0
        if mx > -np.inf:
            for t in range(T):
                acc[src[t]] += np.exp(v[t] - mx)
        tot = 0.0
        for s in range(S):
            tot += acc[s]
        for s in range(S):
            betas[n, s] = np.log(acc[s] / tot) if acc[s] > 0 else -np.inf
        norms[n] = mx + np.log(tot) if tot > 0 else -np.inf
    return norms, betas


@numba.njit(cache=True)
def _edge_posteriors(src, dst, logp, logW, alphas, betas):
    N, T = logW.shape
    gam = np.empty((N, T))
    for n in range(N):
        mx = -np.inf
        for t in range(T):
            g = alphas[n, src[t]] + logp[t] + logW[n, t] + betas[n + 1, dst[t]]
            gam[n, t] = g
            if g > mx:
                mx = g
        tot = 0.0
        for t in range(T):
            e = np.exp(gam[n, t] - mx) if mx > -np.inf else 0.0
            gam[n, t] = e
            tot += e
        for t in range(T):
            gam[n, t] = gam[n, t] / tot if tot > 0 else 0.0
    return gam


class NumericFailure(RuntimeError):
    """All forward or backward metrics vanished (no branch explains the data)."""


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=float))


def forward(trellis: Trellis, logW, log_alpha0=None, store: bool = False):
    """Forward recursion. Returns (step log-normalizers, final log alpha, alphas).

    The sum of the normalizers is log W(y^N). Each stored alpha is normalized
    (log-sum-exp over states equals 0).
    """
    la0 = _log(trellis.stationary) if log_alpha0 is None else np.asarray(log_alpha0, float)
    norms, la, alphas = _forward(trellis.src, trellis.dst, trellis.log_prior,
                                 np.ascontiguousarray(logW, dtype=float), la0, store)
    if len(norms) and not np.isfinite(norms).all():
        raise NumericFailure("forward recursion: all state metrics vanished")
    return norms, la, alphas


@dataclass
class BcjrResult:
    gamma: np.ndarray  # (N, T) branch posteriors
    log_likelihood_fwd: float
    log_likelihood_bwd: float


def forward_backward(trellis: Trellis, logW, log_alpha0, log_beta_end) -> BcjrResult:
    logW = np.ascontiguousarray(logW, dtype=float)
    la0 = np.asarray(log_alpha0, float)
    lbe = np.asarray(log_beta_end, float)
    fn, la_end, alphas = _forward(trellis.src, trellis.dst, trellis.log_prior, logW, la0, True)
    if not np.isfinite(fn).all():
        raise NumericFailure("forward recursion: all state metrics vanished")
    bn, betas = _backward(trellis.src, trellis.dst, trellis.log_prior, logW, lbe)
    if not np.isfinite(bn).all():
        raise NumericFailure("backward recursion: all state metrics vanished")
    gam = _edge_posteriors(trellis.src, trellis.dst, trellis.log_prior, logW, alphas, betas)
    from scipy.special import logsumexp
    ll_f = fn.sum() + logsumexp(la_end + lbe)
    ll_b = bn.sum() + logsumexp(la0 + betas[0])
    return BcjrResult(gam, float(ll_f), float(ll_b))
