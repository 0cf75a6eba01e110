"""Phase/frequency estimation with 1-bit samples: Fisher information, CRLB, LS estimator.

Sample model (M_Tx = 1, sampling interval T_s = T/M)::

    r_k = u_k exp(j(Omega t_k + phi + dither_k)) + n_k,   n_k ~ CN(0, N0) i.i.d.
    u_k = sum_n x_n g(k T_s - n T - eps T)

with g the transmit pulse filtered by an ideal lowpass of one-sided bandwidth
1/(2 T_s), scaled so the noise samples have variance N0. ``t_k`` is measured
from the centre of the observation window, so phi is the phase at the centre
and the phi/Omega cross information vanishes for symmetric windows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .channel import complex_normal, stream
from .waveform import csign, rrc_spectrum

_P_FLOOR = 1e-300
_INV_SQRT_2PI = 1.0 / np.sqrt(2 * np.pi)


@dataclass(frozen=True)
class EstimationScenario:
    n_pilots: int = 100
    m: int = 1
    esn0_db: float = 0.0
    es: float = 1.0
    eps: float = 0.0
    phi: float = 0.0
    omega: float = 0.0
    dither: bool = False
    pulse: str = "rrc"  # "rrc" or "ideal" (u_k = x_k, one sample per pilot)
    rolloff: float = 0.2
    T: float = 1.0
    pilot_seed: int = 0

    def __post_init__(self):
        if self.n_pilots < 1 or self.m < 1:
            raise ValueError("n_pilots and m must be >= 1")
        if self.pulse not in ("rrc", "ideal"):
            raise ValueError(f"unknown pulse {self.pulse!r}")
        if self.pulse == "ideal" and self.m != 1:
            raise ValueError("the ideal pulse is defined for M = 1 only")

    @property
    def n0(self) -> float:
        return self.es / 10 ** (self.esn0_db / 10)

    @property
    def ts(self) -> float:
        return self.T / self.m

    @property
    def n_samples(self) -> int:
        return self.n_pilots * self.m

    def replace(self, **kw) -> "EstimationScenario":
        return replace(self, **kw)


def qpsk_pilots(n: int, es: float, rng: np.random.Generator) -> np.ndarray:
    b = rng.integers(0, 2, size=(n, 2))
    return np.sqrt(es / 2) * ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1]))


def pilots(sc: EstimationScenario) -> np.ndarray:
    return qpsk_pilots(sc.n_pilots, sc.es, stream(sc.pilot_seed, 0))


@lru_cache(maxsize=64)
def _lowpass_pulse(m: int, rolloff: float, eps: float, j_min: int, j_max: int, T: float = 1.0):
    """g((j/M - eps) T) for integer j in [j_min, j_max] (Gauss-Legendre in frequency)."""
    ts = T / m
    w = min(1.0 / (2 * ts), (1 + rolloff) / (2 * T))
    # split at the start of the roll-off region where the spectrum has a kink
    edges = [0.0, min(w, (1 - rolloff) / (2 * T)), w]
    t = (np.arange(j_min, j_max + 1) / m - eps) * T
    span = max(abs(t).max(), T)
    n_nodes = int(8 * w * span) + 64
    x, wq = np.polynomial.legendre.leggauss(n_nodes)
    out = np.zeros_like(t)
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        f = 0.5 * (b - a) * x + 0.5 * (b + a)
        H = rrc_spectrum(f, T, rolloff)
        out += 0.5 * (b - a) * (np.cos(2 * np.pi * np.outer(t, f)) @ (wq * H))
    g = 2 * np.sqrt(ts) * out
    g.setflags(write=False)
    return g


def noiseless_samples(sc: EstimationScenario, x=None) -> np.ndarray:
    """u_k for k = 0 .. N*M - 1 (before rotation, dither and noise)."""
    x = pilots(sc) if x is None else np.asarray(x, dtype=complex)
    if sc.pulse == "ideal":
        return x.copy()
    N, M = len(x), sc.m
    # t = k Ts - n T - eps T = (j/M - eps) T with j = k - n M
    j_min, j_max = -(N - 1) * M, N * M - 1
    g = _lowpass_pulse(M, sc.rolloff, float(sc.eps), j_min, j_max, sc.T)
    k = np.arange(N * M)
    J = k[:, None] - M * np.arange(N)[None, :] - j_min
    return g[J] @ x


def sample_times(sc: EstimationScenario, n_samples: int | None = None) -> np.ndarray:
    K = sc.n_samples if n_samples is None else n_samples
    return (np.arange(K) - (K - 1) / 2) * sc.ts


def dither_sequence(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 2 * np.pi, size=n)


def rotated(u, sc: EstimationScenario, phi=None, omega=None, dither=None) -> np.ndarray:
    phi = sc.phi if phi is None else phi
    omega = sc.omega if omega is None else omega
    ph = omega * sample_times(sc, len(u)) + phi
    if dither is not None:
        ph = ph + dither
    return np.asarray(u) * np.exp(1j * ph)


def unsync_frame(sc: EstimationScenario, rng: np.random.Generator, u=None):
    """Returns (u, dither, r, y) for one realization of the unsynchronized model."""
    u = noiseless_samples(sc) if u is None else u
    dith = dither_sequence(len(u), rng) if sc.dither else np.zeros(len(u))
    r = rotated(u, sc, dither=dith) + complex_normal(rng, len(u), sc.n0)
    return u, dith, r, csign(r)


# --- Fisher information ----------------------------------------------------

OUTCOMES = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j])


def outcome_probabilities(m, n0: float) -> np.ndarray:
    """P(y = outcome | m) for the four outcomes, shape (..., 4)."""
    s = np.sqrt(2.0 / n0)
    m = np.asarray(m, dtype=complex)[..., None]
    return ndtr(OUTCOMES.real * s * m.real) * ndtr(OUTCOMES.imag * s * m.imag)


def outcome_gradients(m, dm, n0: float) -> np.ndarray:
    """d P(y | m) / d theta given dm = d m / d theta, shape (..., 4)."""
    s = np.sqrt(2.0 / n0)
    m = np.asarray(m, dtype=complex)[..., None]
    dm = np.asarray(dm, dtype=complex)[..., None]
    aR = OUTCOMES.real * s * m.real
    aI = OUTCOMES.imag * s * m.imag
    pdfR = _INV_SQRT_2PI * np.exp(-0.5 * aR**2)
    pdfI = _INV_SQRT_2PI * np.exp(-0.5 * aI**2)
    return (pdfR * OUTCOMES.real * s * dm.real * ndtr(aI)
            + ndtr(aR) * pdfI * OUTCOMES.imag * s * dm.imag)


class FisherStats:
    """Counter of outcome probabilities clamped at 1e-300."""

    clamped = 0


def _fi_from_outcomes(m, dms, n0):
    p = outcome_probabilities(m, n0)
    low = p < _P_FLOOR
    if low.any():
        # far-tail outcomes underflow at high SNR; their gradients vanish too
        FisherStats.clamped += int(low.sum())
        p = np.maximum(p, _P_FLOOR)
    grads = [outcome_gradients(m, dm, n0) for dm in dms]
    P = len(dms)
    F = np.empty((P, P))
    for i in range(P):
        for j in range(i, P):
            F[i, j] = F[j, i] = float(np.sum(grads[i] * grads[j] / p))
    return F


def _phases(sc, K, dither):
    return np.exp(1j * (sc.omega * sample_times(sc, K) + sc.phi + dither))


def fisher_info_1bit(sc: EstimationScenario, u=None, dither=None, *, n_dither: int = 10**4,
                     dither_mode: str = "grid", rng: np.random.Generator | None = None) -> np.ndarray:
    """2x2 Fisher information of the 1-bit samples for (phi, Omega).

    With ``sc.dither`` and no explicit ``dither`` sequence, the per-sample FI is
    averaged over a uniform dither phase: either on an equispaced grid of
    ``n_dither`` phases (default, exact for this periodic integrand up to
    round-off) or by ``n_dither`` Monte Carlo draws.
    """
    u = noiseless_samples(sc) if u is None else np.asarray(u, dtype=complex)
    K = len(u)
    tk = sample_times(sc, K)
    if dither is not None or not sc.dither:
        d = np.zeros(K) if dither is None else np.asarray(dither, dtype=float)
        m = u * _phases(sc, K, d)
        return _fi_from_outcomes(m, [1j * m, 1j * tk * m], sc.n0)
    if dither_mode == "grid":
        grid = (np.arange(n_dither) + 0.5) * (2 * np.pi / n_dither)
    elif dither_mode == "mc":
        grid = (rng or np.random.default_rng(0)).uniform(0, 2 * np.pi, n_dither)
    else:
        raise ValueError(f"unknown dither_mode {dither_mode!r}")
    F = np.zeros((2, 2))
    base = u * _phases(sc, K, np.zeros(K))
    rot = np.exp(1j * grid)
    for lo in range(0, K, max(1, 2**20 // n_dither)):
        hi = min(K, lo + max(1, 2**20 // n_dither))
        m = base[lo:hi, None] * rot[None, :]
        t = tk[lo:hi, None]
        F += _fi_from_outcomes(m, [1j * m, 1j * t * m], sc.n0) / n_dither
    return F


def fisher_info_unquantized(sc: EstimationScenario, u=None) -> np.ndarray:
    u = noiseless_samples(sc) if u is None else np.asarray(u, dtype=complex)
    tk = sample_times(sc, len(u))
    m = u * _phases(sc, len(u), np.zeros(len(u)))
    dms = [1j * m, 1j * tk * m]
    F = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            F[i, j] = 2.0 / sc.n0 * float(np.sum((dms[i] * np.conj(dms[j])).real))
    return F


def crlb_phase(F) -> float:
    """1/F_phi_phi (cross term neglected)."""
    if F[0, 0] <= 0:
        raise np.linalg.LinAlgError("singular Fisher information")
    return 1.0 / F[0, 0]


def crlb_matrix(F) -> np.ndarray:
    return np.linalg.inv(F)


def chi_loss(esn0_db: float, phi: float) -> float:
    """Ratio of the phase CRLB without and with 1-bit quantization.

    Single QPSK symbol, one sample, no dither, frequency known: the ratio of the
    phi entries F_y / F_r.
    """
    sc = EstimationScenario(n_pilots=1, m=1, esn0_db=esn0_db, phi=phi, pulse="ideal")
    u = np.array([np.sqrt(sc.es) * np.exp(1j * np.pi / 4)])
    fy = fisher_info_1bit(sc, u)[0, 0]
    fr = fisher_info_unquantized(sc, u)[0, 0]
    if fy <= 0 or fr <= 0:
        raise np.linalg.LinAlgError("singular Fisher information")
    return float(fy / fr)


@dataclass(frozen=True)
class HighSnrConstants:
    c1: float = 1.0
    c2: float = 1.0
    calibrated: bool = False


def crlb_phase_bounds(esn0: float, n: int, m: int = 1, regime: str = "low",
                      constants: HighSnrConstants = HighSnrConstants()) -> float:
    """Closed-form lower bounds on the phase CRLB; ``esn0`` is linear (not dB).

    The high-SNR constants are not known here; the defaults (1, 1) are
    uncalibrated placeholders and trigger a warning.
    """
    if esn0 <= 0 or n <= 0 or m <= 0:
        raise ValueError("Es/N0, N and M must be positive")
    if regime == "low":
        return 1.0 / (4.0 / np.pi * esn0) / n
    if regime == "high":
        if not constants.calibrated:
            warnings.warn("high-SNR CRLB bound uses uncalibrated constants (c1, c2)", UserWarning, stacklevel=2)
        c1, c2 = constants.c1, constants.c2
        return 1.0 / (2 * c1 / np.sqrt(2 * np.pi**3 * c2) * np.sqrt(esn0)) / (n * np.sqrt(m))
    raise ValueError(f"unknown regime {regime!r}")


# --- least-squares phase estimator -------------------------------------------


def ls_phase_estimate(y, u, dither=None):
    """Returns (phi_hat in (-pi, pi], erased). Erased when the accumulator is zero."""
    y = np.asarray(y, dtype=complex)
    u = np.asarray(u, dtype=complex)
    if y.shape[-1] != u.shape[-1]:
        raise ValueError("length mismatch between y and u")
    w = np.conj(u)
    if dither is not None:
        w = w * np.exp(-1j * np.asarray(dither))
    acc = np.sum(w * y, axis=-1)
    erased = acc == 0
    phi = np.angle(acc)
    phi = np.where(phi == -np.pi, np.pi, phi)
    return phi, erased


def wrap_phase(x):
    """Principal value in (-pi, pi]."""
    w = np.angle(np.exp(1j * np.asarray(x, dtype=float)))
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class MseResult:
    mse: float
    ci_lo: float
    ci_hi: float
    trials: int
    erasures: int
    mean_error: float = field(default=0.0)


def _ls_trial(sc: EstimationScenario, u, seed: int, trial: int):
    rng = stream(seed, trial)
    K = len(u)
    dith = rng.uniform(0.0, 2 * np.pi, K) if sc.dither else np.zeros(K)
    # unit-variance draws scaled by the noise level: matched across SNR
    w = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) * np.sqrt(sc.n0 / 2)
    y = csign(rotated(u, sc, dither=dith) + w)
    return ls_phase_estimate(y, u, dith if sc.dither else None)


def mc_mse(sc: EstimationScenario, trials: int = 1000, seed: int = 0, estimator=None,
           n_boot: int = 2000, level: float = 0.95) -> MseResult:
    """Wrapped-error MSE of the LS phase estimator with a bootstrap CI.

    Trial ``i`` draws its dither and noise from the stream (seed, i); the noise
    is a fixed unit-variance draw scaled by sqrt(N0/2), so results at different
    SNRs use common random numbers.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    u = noiseless_samples(sc)
    est = estimator or (lambda i: _ls_trial(sc, u, seed, i))
    phis = np.empty(trials)
    erased = 0
    for i in range(trials):
        p, e = est(i)
        phis[i] = p
        erased += int(e)
    err = wrap_phase(phis - sc.phi)
    sq = err**2
    boot_rng = np.random.default_rng([seed, trials])
    bm = sq[boot_rng.integers(0, trials, size=(n_boot, trials))].mean(axis=1)
    a = (1 - level) / 2
    return MseResult(float(sq.mean()), float(np.quantile(bm, a)), float(np.quantile(bm, 1 - a)),
                     trials, erased, float(err.mean()))
