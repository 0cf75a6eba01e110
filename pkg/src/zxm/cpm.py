"""CPFSK with 1-bit oversampled reception at an intermediate frequency.

Phases are tracked in cycles (units of 2 pi). With u_n = (alpha_n + M_cpm - 1)/2
in {0, ..., M_cpm - 1}, h = 1/M_cpm and f_IF = Delta f + n_IF / T, the received
phase inside symbol n (tau in [0, T)) is

    psi(nT + tau) = x_n + (h u_n + n_IF) tau / T          [cycles]
    x_{n+1}       = x_n + h u_n + n_IF  (mod 1),   x_0 = h / 2

so for rational n_IF the tilted trellis has finitely many states, all exact
fractions. The samples of symbol n sit at tau = (k + offset) T / M, k = 0..M-1;
the default offset 1 puts them on the grid r_k = z(k T_s) with the sample at
the symbol end assigned to the symbol that drives it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import log_ndtr

from .channel import stream
from .rate import RateEstimate, block_bootstrap_stderr
from .trellis import Trellis, branch_loglik, forward, stationary_distribution
from .waveform import csign


def as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    return Fraction(v).limit_denominator(10**6)


@dataclass(frozen=True)
class CpmConfig:
    m_cpm: int = 8
    m: int = 5
    n_if: Fraction = Fraction(0)
    T: float = 1.0
    es: float = 1.0
    sample_offset: Fraction = Fraction(1)

    def __post_init__(self):
        if self.m_cpm < 2 or self.m_cpm % 2:
            raise ValueError("M_cpm must be even and >= 2")
        if self.m < 1:
            raise ValueError("M must be >= 1")
        object.__setattr__(self, "n_if", as_fraction(self.n_if))
        object.__setattr__(self, "sample_offset", as_fraction(self.sample_offset))
        if not 0 <= self.sample_offset <= 1:
            raise ValueError("sample_offset must lie in [0, 1]")

    @property
    def h(self) -> Fraction:
        return Fraction(1, self.m_cpm)

    @property
    def alphabet(self) -> np.ndarray:
        return np.arange(-(self.m_cpm - 1), self.m_cpm, 2)

    @property
    def phi0(self) -> float:
        return np.pi / self.m_cpm

    @property
    def delta_f(self) -> Fraction:
        return self.h * (self.m_cpm - 1) / 2  # in units of 1/T

    @property
    def amplitude(self) -> float:
        return math.sqrt(2 * self.es / self.T)


def tilted_if(cfg: CpmConfig) -> float:
    """f_IF = Delta f + n_IF / T."""
    return float(cfg.delta_f + cfg.n_if) / cfg.T


def n_if_min(h) -> Fraction:
    """Smallest IF offset index that resolves all symbols: ceil(1/(4h) - 1) h."""
    h = as_fraction(h)
    return max(0, math.ceil(1 / (4 * h) - 1)) * h


def q_cpfsk(t, T: float = 1.0):
    return np.clip(np.asarray(t, dtype=float) / (2 * T), 0.0, 0.5)


def cpfsk_phase(alpha, t, cfg: CpmConfig):
    """Baseband CPFSK phase (radians) at times ``t`` for symbols ``alpha``."""
    a = np.asarray(alpha, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = np.arange(len(a))
    q = q_cpfsk(t[:, None] - n[None, :] * cfg.T, cfg.T)
    return 2 * np.pi / cfg.m_cpm * (q @ a) + cfg.phi0


def cpm_signal(alpha, t, cfg: CpmConfig):
    return cfg.amplitude * np.exp(1j * cpfsk_phase(alpha, t, cfg))


def if_signal(alpha, t, cfg: CpmConfig):
    """c(t) exp(j 2 pi f_IF t), evaluated directly from the CPFSK definition."""
    t = np.asarray(t, dtype=float)
    return cpm_signal(alpha, t, cfg) * np.exp(2j * np.pi * tilted_if(cfg) * t)


# --- exact noise-free quantization and path counting ------------------------


def _csign_cycles(x: Fraction) -> complex:
    """csign(exp(j 2 pi x)) computed exactly; zero components map to -1."""
    f = x % 1
    re = 1 if (f < Fraction(1, 4) or f > Fraction(3, 4)) else -1
    im = 1 if Fraction(0) < f < Fraction(1, 2) else -1
    return complex(re, im)


def symbol_pattern(cfg: CpmConfig, state: Fraction, u: int) -> tuple:
    """Quantized sample vector of one symbol interval from phase state ``state``."""
    slope = cfg.h * u + cfg.n_if
    return tuple(_csign_cycles(state + slope * (k + cfg.sample_offset) / cfg.m) for k in range(cfg.m))


def next_state(cfg: CpmConfig, state: Fraction, u: int) -> Fraction:
    return (state + cfg.h * u + cfg.n_if) % 1


def reachable_states(cfg: CpmConfig) -> list:
    start = (cfg.h / 2) % 1
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for u in range(cfg.m_cpm):
            s2 = next_state(cfg, s, u)
            if s2 not in seen:
                seen.add(s2)
                queue.append(s2)
    return sorted(seen)


@dataclass(frozen=True)
class PathCount:
    n_d: float
    log2_nd: float
    per_state: tuple
    n_states: int


def count_distinguishable_paths(cfg: CpmConfig) -> PathCount:
    """Average number of quantization-distinguishable symbols per state.

    The average is uniform over the reachable tilted-trellis states.
    """
    states = reachable_states(cfg)
    counts = tuple(len({symbol_pattern(cfg, s, u) for u in range(cfg.m_cpm)}) for s in states)
    nd = float(np.mean(counts))
    return PathCount(nd, float(np.log2(nd)), counts, len(states))


def nd_sweep(m_cpm: int, ms, n_ifs) -> list:
    """Rows (M_cpm, M, n_IF, f_IF, log2_Nd) over the grid of M and n_IF."""
    rows = []
    for n_if in n_ifs:
        for m in ms:
            cfg = CpmConfig(m_cpm, m, as_fraction(n_if))
            rows.append((m_cpm, m, cfg.n_if, tilted_if(cfg), count_distinguishable_paths(cfg).log2_nd))
    return rows


def nd_period(m_cpm: int, m: int, max_period: int = 64, step=None) -> Fraction | None:
    """Smallest period (in n_IF) of log2(N_d) over one step grid, found empirically."""
    h = Fraction(1, m_cpm)
    step = h if step is None else as_fraction(step)
    n = int(max_period / step) + 1
    vals = [count_distinguishable_paths(CpmConfig(m_cpm, m, i * step)).per_state for i in range(2 * n)]
    nd = [float(np.mean(v)) for v in vals]
    for p in range(1, n + 1):
        if all(abs(nd[i] - nd[i + p]) < 1e-12 for i in range(len(nd) - p)):
            return p * step
    return None


# --- achievable rate ----------------------------------------------------------


def _window_integral(x0: float, slope: float, a: float, b: float) -> complex:
    """Integral over tau in [a, b] (units of T) of exp(j 2 pi (x0 + slope tau))."""
    w = 2 * np.pi * slope
    if abs(w) < 1e-12:
        return complex((b - a) * np.exp(2j * np.pi * x0))
    return complex(np.exp(2j * np.pi * x0) * (np.exp(1j * w * b) - np.exp(1j * w * a)) / (1j * w))


@dataclass(frozen=True)
class CpmTrellisInfo:
    trellis: Trellis
    states: list


def _sample_times(cfg: CpmConfig):
    return (np.arange(cfg.m) + float(cfg.sample_offset)) / cfg.m  # units of T within the symbol


def _rect_taus(m: int) -> np.ndarray:
    """Grid offsets i/M of the samples whose T/2 windows end inside the symbol."""
    i0 = math.floor(-m / 4) + 1  # smallest i with i/M > -1/4
    return np.arange(i0, i0 + m) / m


def build_cpm_trellis(cfg: CpmConfig, filt: str = "delta") -> CpmTrellisInfo:
    """Tilted-trellis for the rate computation.

    ``delta``: state = phase state; each branch emits the M samples of the
    current symbol, scaled by the CPM amplitude.
    ``rect``: integrate-over-T/2 receive window; the block of step n holds the
    M samples whose windows end inside symbol n, which depend on the previous
    and current symbols, so the state is (phase state of the previous symbol,
    previous symbol).
    """
    if cfg.n_if.denominator > 10**4:
        raise ValueError("n_IF must be a rational with a small denominator")
    phase_states = reachable_states(cfg)
    pidx = {s: i for i, s in enumerate(phase_states)}
    Mc = cfg.m_cpm
    tau = _sample_times(cfg)
    src, dst, means, label = [], [], [], []
    if filt == "delta":
        for s in phase_states:
            for u in range(Mc):
                slope = float(cfg.h * u + cfg.n_if)
                v = cfg.amplitude * np.exp(2j * np.pi * (float(s) + slope * tau))
                src.append(pidx[s])
                dst.append(pidx[next_state(cfg, s, u)])
                means.append(np.concatenate((v.real, v.imag)))
                label.append(u)
        n_states = len(phase_states)
        states = phase_states
    elif filt == "rect":
        # z_k = exp(j 2 pi f_IF t_k) sqrt(2/T) * integral of c(s) over [t_k - T/4, t_k + T/4]
        taus = _rect_taus(cfg.m)
        f_if = float(cfg.delta_f + cfg.n_if)
        dfs = float(cfg.delta_f)
        states = [(s, u) for s in phase_states for u in range(Mc)]
        sidx = {st: i for i, st in enumerate(states)}
        gain = math.sqrt(2 / cfg.T) * cfg.amplitude * cfg.T
        for (sp, up) in states:
            s = next_state(cfg, sp, up)  # phase state at the start of the current symbol
            for u in range(Mc):
                v = np.empty(cfg.m, dtype=complex)
                for k, tk in enumerate(taus):
                    a, b = tk - 0.25, tk + 0.25
                    acc = 0j
                    if a < 0:  # window part inside the previous symbol, tau' = tau + 1
                        acc += _window_integral(float(sp) + f_if * (1 + tk), float(cfg.h * up) - dfs, a + 1, 1.0)
                    acc += _window_integral(float(s) + f_if * tk, float(cfg.h * u) - dfs, max(a, 0.0), b)
                    v[k] = gain * acc
                src.append(sidx[(sp, up)])
                dst.append(sidx[(s, u)])
                means.append(np.concatenate((v.real, v.imag)))
                label.append(u)
        n_states = len(states)
    else:
        raise ValueError(f"unknown filter {filt!r}")
    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    logp = np.full(len(src), -np.log(Mc))
    pi = stationary_distribution(n_states, src, dst, np.exp(logp))
    tr = Trellis(n_states, src, dst, logp, np.array(means), np.array(label, dtype=np.int16),
                 np.array(label, dtype=np.int16), pi)
    return CpmTrellisInfo(tr, states)


def _rect_noise(n_blocks: int, cfg: CpmConfig, n0: float, rng) -> np.ndarray:
    """Receive-filtered white noise at the rect-filter sample times.

    Windows of consecutive samples are shifted by two sub-intervals of length
    T/(2M) and span M of them, so summing i.i.d. sub-interval integrals gives
    the exact correlated law. The bandpass filter adds the IF rotation of the
    sample instant.
    """
    M = cfg.m
    delta = cfg.T / (2 * M)
    K = M * n_blocks
    n_sub = 2 * K + M
    w = (rng.standard_normal(n_sub) + 1j * rng.standard_normal(n_sub)) * math.sqrt(n0 * delta / 2)
    c = np.concatenate(([0], np.cumsum(w)))
    starts = 2 * np.arange(K)
    t = (np.arange(n_blocks)[:, None] + _rect_taus(M)[None, :]).reshape(-1)
    rot = np.exp(2j * np.pi * float(cfg.delta_f + cfg.n_if) * t)
    return math.sqrt(2 / cfg.T) * (c[starts + M] - c[starts]) * rot


def cpm_rate(cfg: CpmConfig, esn0_db: float, n: int = 10**5, seed: int = 0,
             filt: str = "delta", chunk: int = 1 << 14) -> RateEstimate:
    """Auxiliary-channel lower bound for i.u.d. CPFSK symbols, bits per symbol.

    The noise is CN(0, N0) per sample for ``delta`` and the exact window-
    integrated noise for ``rect`` (correlated across overlapping windows and
    ignored by the auxiliary channel). Es/N0 is relative to Es = 1.
    """
    info = build_cpm_trellis(cfg, filt)
    tr = info.trellis
    n0 = cfg.es / 10 ** (esn0_db / 10)
    rng = stream(seed, 0)
    Mc = cfg.m_cpm
    u = rng.integers(0, Mc, size=n)
    # true state path
    st = np.empty(n, dtype=np.int64)
    nxt = {}
    for t in range(len(tr.src)):
        nxt[(int(tr.src[t]), int(tr.label[t]))] = t
    s = int(rng.choice(tr.n_states, p=tr.stationary))
    branch = np.empty(n, dtype=np.int64)
    for i in range(n):
        b = nxt[(s, int(u[i]))]
        branch[i] = b
        s = int(tr.dst[b])
    clean = tr.means[branch]  # (n, 2M)
    M = cfg.m
    if filt == "delta":
        noise = (rng.standard_normal((n, 2 * M))) * math.sqrt(n0 / 2)
    else:
        z = _rect_noise(n, cfg, n0, rng).reshape(n, M)
        noise = np.concatenate((z.real, z.imag), axis=1)
    y = np.where(clean + noise > 0, 1.0, -1.0)
    sigma = math.sqrt(n0 / 2)
    cond = log_ndtr(y * clean / sigma).sum(axis=1)
    la = np.log(np.maximum(tr.stationary, 1e-300))
    dens = np.empty(n)
    for lo in range(0, n, chunk):
        logW = branch_loglik(tr.means, y[lo:lo + chunk], sigma)
        norms, la, _ = forward(tr, logW, la)
        dens[lo:lo + chunk] = cond[lo:lo + chunk] - norms
    dens /= np.log(2)
    return RateEstimate(float(dens.mean()), block_bootstrap_stderr(dens, 20, seed=seed), n)


def quantized_samples(alpha, cfg: CpmConfig) -> np.ndarray:
    """csign of the IF signal sampled at (n + (k + offset)/M) T, from the direct definition."""
    n = len(alpha)
    t = (np.arange(n)[:, None] + _sample_times(cfg)[None, :]).reshape(-1) * cfg.T
    return csign(if_signal(alpha, t, cfg))
