"""Reference implementations used to check the package from first principles.

Nothing here goes through the package trellises; the oracles recompute the
quantities by root finding, exhaustive enumeration or finite differences.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import log_ndtr, logsumexp


def hmax_root(d: int) -> float:
    """log2 of the largest real root of z^(d+1) - z^d - 1 (capacity of (d, inf))."""
    coeffs = np.zeros(d + 2)
    coeffs[0], coeffs[1], coeffs[-1] = 1.0, -1.0, -1.0
    roots = np.roots(coeffs)
    lam = max(r.real for r in roots if abs(r.imag) < 1e-9)
    return float(np.log2(lam))


def maxent_p_one(d: int) -> float:
    """P(emit 1 | free state) of the max-entropy (d, inf) chain: lambda^-(d+1)."""
    return float(2.0 ** (-(d + 1) * hmax_root(d)))


def sequence_log_prior(bits, d: int, start_zeros: int) -> float:
    """Log probability of ``bits`` under the max-entropy chain, ``start_zeros`` zeros already seen."""
    p1 = maxent_p_one(d)
    run = start_zeros
    lp = 0.0
    for b in bits:
        free = run >= d
        if b:
            if not free:
                return -np.inf
            lp += np.log(p1)
            run = 0
        else:
            lp += np.log(1 - p1) if free else 0.0
            run += 1
    return lp


def nrzi(bits, initial=-1):
    out, lv = [], initial
    for b in bits:
        if b:
            lv = -lv
        out.append(lv)
    return np.array(out, dtype=float)


def rail_means(levels, taps):
    """Noiseless rail samples by explicit double sum (zero before index 0)."""
    M, Lp1 = taps.shape
    n = len(levels)
    out = np.zeros((n, M))
    for k in range(n):
        for l in range(Lp1):
            if k - l >= 0:
                out[k] += taps[:, l] * levels[k - l]
    return out.reshape(-1) / np.sqrt(2)


def bruteforce_app(y_rail, taps, d: int, n_data: int, n0: float, preamble: int):
    """Exhaustive posteriors of one equalizer rail frame.

    Frame: ``preamble`` zero bits, ``n_data`` data bits, ``preamble`` zero tail
    bits, NRZI from -1. The chain is in its free state at the first data bit.
    Observed samples are those from the first data symbol on.
    Returns (P(level=+1) per data symbol, P(bit=1) per data bit, log evidence).
    """
    M = taps.shape[0]
    sigma = np.sqrt(n0 / 2)
    y = np.asarray(y_rail, dtype=float)[preamble * M:]
    logs, lv_plus, bit_one = [], [], []
    for data in itertools.product((0, 1), repeat=n_data):
        full = (0,) * preamble + data + (0,) * preamble
        lp = sequence_log_prior(data + (0,) * preamble, d, start_zeros=max(d, preamble))
        if not np.isfinite(lp):
            continue
        mu = rail_means(nrzi(full), taps)[preamble * M:]
        ll = float(np.sum(log_ndtr(y * mu / sigma)))
        logs.append(lp + ll)
        lv = nrzi(full)[preamble: preamble + n_data]
        lv_plus.append(lv > 0)
        bit_one.append(np.array(data) > 0)
    logs = np.array(logs)
    w = np.exp(logs - logsumexp(logs))
    return w @ np.array(lv_plus, float), w @ np.array(bit_one, float), float(logsumexp(logs))


def finite_difference(f, x: float, h: float = 1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def quantized_probs_direct(m: complex, n0: float):
    """P(sign pattern) for the four outcomes (+,+), (-,+), (-,-), (+,-) by erf."""
    from math import erf, sqrt

    s = sqrt(n0 / 2)

    def phi(x):
        return 0.5 * (1 + erf(x / sqrt(2)))

    pr, pi = phi(m.real / s), phi(m.imag / s)
    return np.array([pr * pi, (1 - pr) * pi, (1 - pr) * (1 - pi), pr * (1 - pi)])


def outcome_probs_mp(m: complex, n0: float, dps: int = 40):
    """Four outcome probabilities in extended precision (order as in OUTCOMES)."""
    import mpmath as mp

    with mp.workdps(dps):
        s = mp.sqrt(mp.mpf(2) / mp.mpf(n0))
        re, im = mp.mpf(m.real) * s, mp.mpf(m.imag) * s
        pr, pi = mp.ncdf(re), mp.ncdf(im)
        qr, qi = mp.ncdf(-re), mp.ncdf(-im)
        return [pr * pi, qr * pi, qr * qi, pr * qi]


def central_difference_mp(f, h: float = 1e-6, dps: int = 40):
    """Central difference of a vector function of a scalar, evaluated in extended precision."""
    import mpmath as mp

    with mp.workdps(dps):
        hp = mp.mpf(h)
        up, dn = f(hp), f(-hp)
        return np.array([float((a - b) / (2 * hp)) for a, b in zip(up, dn)])
