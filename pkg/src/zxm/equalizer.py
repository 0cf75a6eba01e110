"""MAP equalization of RLL frames and the coded FEC -> RLL -> NRZI chain.

Frame layout per rail (symbol indices):

    [0, P)              preamble, P = max(L, 1) levels at -1
    [P, P + N)          data
    [P + N, P + N + P)  tail of P zero (d,k)-bits, the level is held

The preamble puts the trellis into the known state (FSM state d, all -1
history) at the first data symbol. The tail lets the last data symbols be
observed in full; its branches are restricted to 0-bits and the final state
is left free (uniform backward initialization).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import stream, transmit_frame
from .ldpc import RegularLdpc
from .rate import build_rail_trellis, rail_state_index
from .rll import RllBlockCode, RllFsm, block_encode, build_block_code, build_fsm, nrzi_encode, rll_soft_decode
from .trellis import branch_loglik, forward_backward
from .waveform import ChainConfig, QuantizedFrame, build_symbols, sample_taps


def preamble_length(cfg: ChainConfig) -> int:
    return max(sample_taps(cfg).shape[1] - 1, 1)


def frame_dk_bits(dk_data, cfg: ChainConfig) -> np.ndarray:
    """Preamble zeros + data bits + tail zeros for one rail."""
    P = preamble_length(cfg)
    z = np.zeros(P, dtype=np.int8)
    return np.concatenate((z, np.asarray(dk_data, dtype=np.int8), z))


def frame_levels(dk_data, cfg: ChainConfig) -> np.ndarray:
    return nrzi_encode(frame_dk_bits(dk_data, cfg), initial=-1)


@dataclass
class AppMatrix:
    """Per-symbol posteriors of one rail.

    ``level[n]`` = (P(a_n = -1 | y), P(a_n = +1 | y)); ``bit[n]`` = P(b_n = 1 | y)
    for the underlying (d,k)-bit.
    """

    level: np.ndarray
    bit: np.ndarray
    log_likelihood_fwd: float = 0.0
    log_likelihood_bwd: float = 0.0


def equalize_rail(y_rail, cfg: ChainConfig, fsm: RllFsm, n_data: int, n0: float) -> AppMatrix:
    """BCJR on one rail of sign samples laid out as in the module docstring."""
    if n0 <= 0:
        raise ValueError("N0 must be positive")
    tr = build_rail_trellis(cfg, fsm)
    idx = rail_state_index(cfg, fsm)
    P = preamble_length(cfg)
    M = cfg.m
    y = np.asarray(y_rail, dtype=float)
    if len(y) != (2 * P + n_data) * M:
        raise ValueError("rail length does not match the frame layout")
    blocks = y[P * M:].reshape(-1, M)
    logW = branch_loglik(tr.means, blocks, np.sqrt(n0 / 2))
    logW[n_data:, tr.label == 1] = -np.inf  # known tail bits
    la0 = np.full(tr.n_states, -np.inf)
    la0[idx[(fsm.d, (-1,) * P)]] = 0.0
    res = forward_backward(tr, logW, la0, np.zeros(tr.n_states))
    g = res.gamma[:n_data]
    p_plus = g @ (tr.level > 0).astype(float)
    level = np.column_stack((1.0 - p_plus, p_plus))
    return AppMatrix(level, g @ tr.label.astype(float), res.log_likelihood_fwd, res.log_likelihood_bwd)


def bcjr_equalize(frame: QuantizedFrame, cfg: ChainConfig, fsm: RllFsm, n_data: int, n0: float):
    """Posteriors for both rails of a quantized frame: (I AppMatrix, Q AppMatrix)."""
    y = np.asarray(frame.y)
    return (equalize_rail(y.real, cfg, fsm, n_data, n0),
            equalize_rail(y.imag, cfg, fsm, n_data, n0))


def map_detect(apps) -> np.ndarray:
    """Symbol decisions in {-1, +1}; exact ties go to -1."""
    lv = apps.level if isinstance(apps, AppMatrix) else np.asarray(apps)
    return np.where(lv[:, 1] > lv[:, 0], 1, -1).astype(np.int8)


# --- coded chain ------------------------------------------------------------


@dataclass
class CodedSystem:
    """FEC + interleaver + rate-3/5 RLL block code mapped onto both rails."""

    cfg: ChainConfig
    fec: RegularLdpc = field(default_factory=RegularLdpc)
    rll: RllBlockCode = field(default_factory=build_block_code)
    interleaver_seed: int = 7

    def __post_init__(self):
        self.fsm = build_fsm(1)
        self.perm = np.random.default_rng(self.interleaver_seed).permutation(self.fec.n)
        unit = 2 * self.rll.k_bits
        self.n_pad = (-self.fec.n) % unit
        self.words_per_rail = (self.fec.n + self.n_pad) // unit
        self.n_data = self.words_per_rail * self.rll.n

    @property
    def bits_per_symbol(self) -> float:
        """Nominal information bits per complex symbol."""
        return 2 * self.fec.rate * self.rll.rate

    def n0_for_ebn0_db(self, ebn0_db: float, es: float = 1.0) -> float:
        return es / (10 ** (ebn0_db / 10) * self.bits_per_symbol)

    def modulate(self, info_bits):
        cw = self.fec.encode(info_bits)
        inter = np.concatenate((cw[self.perm], np.zeros(self.n_pad, dtype=np.uint8)))
        dk = block_encode(self.rll, inter)
        half = len(dk) // 2
        a = frame_levels(dk[:half], self.cfg)
        b = frame_levels(dk[half:], self.cfg)
        return build_symbols(a, b), dk

    def demodulate_llr(self, frame: QuantizedFrame, n0: float) -> np.ndarray:
        apps = bcjr_equalize(frame, self.cfg, self.fsm, self.n_data, n0)
        llrs = []
        for app in apps:
            llr, _, _ = rll_soft_decode(self.rll, app.bit.reshape(-1, self.rll.n))
            llrs.append(llr.reshape(-1))
        llr = np.concatenate(llrs)[: self.fec.n]
        out = np.empty(self.fec.n)
        out[self.perm] = llr
        return out


@dataclass
class BlerResult:
    ebn0_db: float
    m: int
    frames: int
    errors: int
    bit_errors: int

    @property
    def bler(self) -> float:
        return self.errors / self.frames


def coded_chain(bits, system: CodedSystem, n0: float, rng: np.random.Generator):
    """Send one block of information bits; returns (decoded bits, block error flag)."""
    x, _ = system.modulate(bits)
    _, frame = transmit_frame(x, system.cfg.replace(n0=n0), rng, method="taps")
    if n0 > 0:
        llr = system.demodulate_llr(frame, n0)
    else:
        llr = system.demodulate_llr(frame, 1e-12)
    dec, _ = system.fec.decode(llr)
    return dec, bool(np.any(dec != np.asarray(bits)))


def simulate_bler(system: CodedSystem, ebn0_db: float, n_frames: int, seed: int,
                  first_frame: int = 0) -> BlerResult:
    """BLER over frames ``first_frame .. first_frame + n_frames - 1``.

    Frame f uses the random stream derived from (seed, f), so any partition of
    the frame range across workers gives identical totals.
    """
    n0 = system.n0_for_ebn0_db(ebn0_db)
    llrs, infos = [], []
    for f in range(first_frame, first_frame + n_frames):
        rng = stream(seed, f)
        info = rng.integers(0, 2, system.fec.k)
        x, _ = system.modulate(info)
        _, frame = transmit_frame(x, system.cfg.replace(n0=n0), rng, method="taps")
        llrs.append(system.demodulate_llr(frame, n0))
        infos.append(info)
    dec, _ = system.fec.decode(np.array(llrs))
    wrong = dec != np.array(infos)
    return BlerResult(ebn0_db, system.cfg.m, n_frames, int(wrong.any(axis=1).sum()), int(wrong.sum()))


def ebn0_at_bler(ebn0_db, bler, target: float = 1e-2) -> float:
    """Interpolate log10(BLER) linearly in Eb/N0 to find the target crossing."""
    e = np.asarray(ebn0_db, dtype=float)
    b = np.asarray(bler, dtype=float)
    lt = np.log10(target)
    for i in range(len(e) - 1):
        if b[i] >= target > b[i + 1]:
            lo = np.log10(max(b[i], 1e-12))
            hi = np.log10(max(b[i + 1], 1e-12))
            return float(e[i] + (lt - lo) / (hi - lo) * (e[i + 1] - e[i]))
    return float("nan")
