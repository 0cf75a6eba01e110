"""Auxiliary-channel lower bound on the achievable rate and spectral efficiency.

Both rails see the same real taps, so the I and Q rails are processed as two
independent real channels and the complex rate is the sum of the rail rates.
The auxiliary channel treats the M samples of a block as conditionally
independent given the trellis branch, which is exact for M = 1 with the
integrate-and-dump receiver and a mismatched (still valid) bound otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import log_ndtr, ndtr

from .channel import integrator_noise
from .rll import RllFsm, build_fsm
from .trellis import Trellis, branch_loglik, forward, pattern_table, stationary_distribution
from .waveform import ChainConfig, apply_taps, sample_levels, sample_taps

SQRT2 = np.sqrt(2.0)


def source_fsm(source: str) -> RllFsm:
    """'iud' or 'rllD' (e.g. 'rll1') -> finite-state machine of the source."""
    if source == "iud":
        return build_fsm(0)
    if source.startswith("rll"):
        return build_fsm(int(source[3:]))
    raise ValueError(f"unknown source {source!r}")


def _recurrent(states, succ):
    cur = set(states)
    for _ in range(len(states) + 1):
        nxt = {t for s in cur for t in succ(s)}
        if nxt == cur:
            break
        cur = nxt
    return cur


def build_rail_trellis(cfg: ChainConfig, fsm: RllFsm) -> Trellis:
    """Trellis of one rail: state = (FSM state, last max(L, 1) levels).

    Branch labels are the (d,k) bits, branch levels the new rail level (+/-1),
    branch means the M noiseless rail samples (the 1/sqrt(2) symbol scaling
    included). Only recurrent states are kept, so no state or branch violates
    the runlength constraint.
    """
    return _rail_trellis(cfg.replace(n0=0.0, seed=0), fsm.d)[0]


@lru_cache(maxsize=32)
def _rail_trellis(cfg: ChainConfig, d: int):
    fsm = build_fsm(d)
    G = sample_taps(cfg)
    L = G.shape[1] - 1
    Lm = max(L, 1)
    out_edges = [[] for _ in range(fsm.n_states)]
    for e in range(len(fsm.edge_src)):
        out_edges[fsm.edge_src[e]].append((int(fsm.edge_dst[e]), int(fsm.edge_bit[e]), float(fsm.edge_prob[e])))

    def succ_edges(state):
        f, hist = state
        for f2, b, p in out_edges[f]:
            new = hist[-1] * (1 - 2 * b)
            yield (f2, hist[1:] + (new,)), b, new, p

    def succ(state):
        return [s for s, *_ in succ_edges(state)]

    all_states = [(f, tuple(1 - 2 * ((h >> i) & 1) for i in range(Lm)))
                  for f in range(fsm.n_states) for h in range(2**Lm)]
    keep = sorted(_recurrent(all_states, succ), key=lambda s: (s[0], s[1]))
    index = {s: i for i, s in enumerate(keep)}

    src, dst, logp, means, label, level = [], [], [], [], [], []
    for s in keep:
        f, hist = s
        for s2, b, new, p in succ_edges(s):
            window = np.array((new,) + hist[::-1][:L], dtype=float)  # a_n, a_{n-1}, ...
            src.append(index[s])
            dst.append(index[s2])
            logp.append(np.log(p))
            means.append(G @ window / SQRT2)
            label.append(b)
            level.append(new)
    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    logp = np.array(logp)
    pi = stationary_distribution(len(keep), src, dst, np.exp(logp))
    tr = Trellis(len(keep), src, dst, logp, np.array(means).reshape(len(src), -1),
                 np.array(label, dtype=np.int8), np.array(level, dtype=np.int8), pi)
    for a in (tr.src, tr.dst, tr.log_prior, tr.means, tr.label, tr.level, tr.stationary):
        a.setflags(write=False)
    return tr, index


def rail_state_index(cfg: ChainConfig, fsm: RllFsm) -> dict:
    """Map (fsm_state, history oldest first) -> trellis state index."""
    return dict(_rail_trellis(cfg.replace(n0=0.0, seed=0), fsm.d)[1])


def aux_block_likelihood(mu, y, n0: float) -> float:
    """Auxiliary-channel probability of the complex sign block ``y`` given means ``mu``.

    Product over the M samples and both rails of Phi(y mu / sigma) with
    sigma^2 = N0/2; the correlation of the noise samples is ignored.
    """
    if n0 <= 0:
        raise ValueError("N0 must be positive")
    mu = np.asarray(mu, dtype=complex)
    y = np.asarray(y, dtype=complex)
    s = np.sqrt(n0 / 2)
    return float(np.prod(ndtr(y.real * mu.real / s)) * np.prod(ndtr(y.imag * mu.imag / s)))


@dataclass(frozen=True)
class RateEstimate:
    rate: float  # bits per channel use (complex symbol)
    stderr: float
    n_symbols: int
    per_step: np.ndarray | None = None

    def __iter__(self):
        yield self.rate
        yield self.stderr


def _rail_information(tr: Trellis, G, levels, noise, sigma, chunk):
    """Per-step information density log2 W(y_n|x) - log2 W(y_n|y^{n-1}) of one rail."""
    L = G.shape[1] - 1
    Lm = max(L, 1)
    M = G.shape[0]
    clean = apply_taps(levels, G) / SQRT2
    r = clean + noise
    y = np.where(r > 0, 1.0, -1.0)
    # drop the start-up transient: the first Lm blocks only initialize the state
    clean = clean[Lm * M:].reshape(-1, M)
    y = y[Lm * M:].reshape(-1, M)
    cond = log_ndtr(y * clean / sigma).sum(axis=1)

    la = np.log(tr.stationary)
    table = None
    if len(tr.src) * 2**M <= 1 << 22:
        table = pattern_table(tr.means, sigma)
    out = np.empty(len(y))
    for s in range(0, len(y), chunk):
        logW = branch_loglik(tr.means, y[s:s + chunk], sigma, table=table)
        norms, la, _ = forward(tr, logW, la)
        out[s:s + chunk] = cond[s:s + chunk] - norms
    return out / np.log(2)


def block_bootstrap_stderr(values, n_blocks: int = 20, n_boot: int = 2000, seed: int = 0) -> float:
    """Standard error of the mean of ``values`` from a bootstrap over contiguous blocks."""
    v = np.asarray(values, dtype=float)
    nb = len(v) // n_blocks
    if nb < 1:
        raise ValueError("too few values for the requested block count")
    means = v[: nb * n_blocks].reshape(n_blocks, nb).mean(axis=1)
    rng = np.random.default_rng(seed)
    boot = means[rng.integers(0, n_blocks, size=(n_boot, n_blocks))].mean(axis=1)
    return float(boot.std(ddof=1))


def rate_lower_bound(cfg: ChainConfig, source: str | RllFsm, n: int = 10**6,
                     rng: np.random.Generator | None = None, *, n_blocks: int = 20,
                     chunk: int = 1 << 16, keep_steps: bool = False) -> RateEstimate:
    """Simulation-based auxiliary-channel lower bound in bits per channel use.

    Data are drawn from the source's stationary Markov law, passed through the
    effective sample-domain channel with exact integrator noise and quantized.
    The rate is (1/N)(log2 W(y|x) - log2 W(y)) summed over both rails.
    """
    if cfg.n0 <= 0:
        raise ValueError("N0 must be positive")
    if cfg.rx_filter != "integrate":
        raise ValueError("rate evaluation requires the integrate-and-dump receiver")
    fsm = source_fsm(source) if isinstance(source, str) else source
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    tr = build_rail_trellis(cfg, fsm)
    G = sample_taps(cfg)
    Lm = max(G.shape[1] - 1, 1)
    sigma = np.sqrt(cfg.n0 / 2)

    total = np.zeros(n)
    for _rail in range(2):
        levels = sample_levels(fsm, n + Lm, rng)
        noise = integrator_noise((n + Lm) * cfg.m, cfg, rng).real
        total += _rail_information(tr, G, levels, noise, sigma, chunk)
    se = block_bootstrap_stderr(total, n_blocks, seed=int(rng.integers(2**31)))
    return RateEstimate(float(total.mean()), se, n, total if keep_steps else None)


def spectral_efficiency(rate_bpcu: float, cfg: ChainConfig, b90: float) -> float:
    """Bits/s/Hz: rate per symbol interval T/M_Tx divided by the 90% bandwidth."""
    if b90 <= 0:
        raise ValueError("B90 must be positive")
    return rate_bpcu * cfg.m_tx / (cfg.T * b90)
