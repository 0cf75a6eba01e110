"""Transmit/receive signal synthesis on a fine time grid.

Time is normalized to T = 1. Symbols are spaced T/M_Tx apart, the receiver
samples every T_s = T/(M_Tx M), and the simulation grid has ``k_sim`` cells per
T_s. Grid signals hold the value at each cell midpoint, so integrals over
windows that start and end on cell boundaries are midpoint-rule sums.

Symbol n (0-based) has its pulse starting at n*T/M_Tx. Sample k is taken at
(k + sample_offset)*T_s, and block n of the receive samples consists of
samples n*M .. n*M + M - 1.
"""

from __future__ import annotations

import functools
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as sps

from .rll import RllFsm, nrzi_encode, sample_dk_sequence

PULSES = ("cosine", "rrc", "delta")
RX_FILTERS = ("integrate", "brickwall")


@dataclass(frozen=True)
class ChainConfig:
    """Waveform and channel parameters of one experiment.

    ``sample_offset`` places the receive samples at (k + offset)*T_s; the
    default 0.5 samples the cosine/integrator chain at the centre of the
    effective pulse for M_Tx = M = 1.
    """

    m_tx: int = 1
    m: int = 1
    k_sim: int = 16
    pulse: str = "cosine"
    rolloff: float = 0.2
    rrc_span: int = 8
    rx_filter: str = "integrate"
    rx_bandwidth: float | None = None
    n0: float = 0.0
    seed: int = 0
    sample_offset: float = 0.5
    T: float = 1.0

    def __post_init__(self):
        if self.m_tx < 1 or self.m < 1 or self.k_sim < 1:
            raise ValueError("m_tx, m and k_sim must be positive integers")
        if self.pulse not in PULSES:
            raise ValueError(f"unknown pulse {self.pulse!r}")
        if self.rx_filter not in RX_FILTERS:
            raise ValueError(f"unknown receive filter {self.rx_filter!r}")
        if self.n0 < 0:
            raise ValueError("n0 must be non-negative")
        off = self.sample_offset * self.k_sim
        if abs(off - round(off)) > 1e-9 or not 0 <= self.sample_offset < 1:
            raise ValueError("sample_offset * k_sim must be an integer in [0, k_sim)")

    @property
    def spacing(self) -> float:
        return self.T / self.m_tx

    @property
    def ts(self) -> float:
        return self.spacing / self.m

    @property
    def dt(self) -> float:
        return self.ts / self.k_sim

    @property
    def cells_per_symbol(self) -> int:
        return self.m * self.k_sim

    def replace(self, **kw) -> "ChainConfig":
        d = asdict(self)
        d.update(kw)
        return ChainConfig(**d)


# --- pulses ---------------------------------------------------------------


def cosine_pulse(t, T: float = 1.0):
    t = np.asarray(t, dtype=float)
    inside = (t >= 0) & (t < 2 * T)
    return np.where(inside, np.sqrt(1.0 / (3 * T)) * (1 - np.cos(np.pi * t / T)), 0.0)


def cosine_pulse_spectrum(f, T: float = 1.0):
    """|H(f)| of the cosine pulse (closed form)."""
    x = 2 * np.asarray(f, dtype=float) * T
    return np.sqrt(1.0 / (3 * T)) * T * np.abs(2 * np.sinc(x) + np.sinc(x - 1) + np.sinc(x + 1))


def rrc_pulse(t, T: float = 1.0, beta: float = 0.2):
    """Unit-energy root-raised-cosine pulse centred at t = 0."""
    t = np.asarray(t, dtype=float) / T
    out = np.empty_like(t)
    at0 = np.isclose(t, 0.0)
    sing = np.isclose(np.abs(t), 1 / (4 * beta)) if beta > 0 else np.zeros_like(at0)
    reg = ~(at0 | sing)
    tr = t[reg]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
    out[reg] = num / den
    out[at0] = 1 - beta + 4 * beta / np.pi
    if beta > 0:
        out[sing] = beta / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                                         + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta)))
    return out / np.sqrt(T)


def rrc_spectrum(f, T: float = 1.0, beta: float = 0.2):
    """Real, even transfer function of the unit-energy RRC pulse."""
    af = np.abs(np.asarray(f, dtype=float))
    f1 = (1 - beta) / (2 * T)
    f2 = (1 + beta) / (2 * T)
    out = np.zeros_like(af)
    out[af <= f1] = np.sqrt(T)
    tr = (af > f1) & (af <= f2)
    if beta > 0:
        out[tr] = np.sqrt(T) * np.cos(np.pi * T / (2 * beta) * (af[tr] - f1))
    return out


def pulse_samples(cfg: ChainConfig) -> np.ndarray:
    """Transmit pulse at the grid cell midpoints, starting at t = 0.

    The RRC pulse is delayed by ``rrc_span`` symbols T to make it causal and
    renormalized to unit energy on the grid after truncation.
    """
    dt = cfg.dt
    if cfg.pulse == "cosine":
        n = int(round(2 * cfg.T / dt))
        return cosine_pulse((np.arange(n) + 0.5) * dt, cfg.T)
    if cfg.pulse == "rrc":
        n = int(round(2 * cfg.rrc_span * cfg.T / dt))
        t = (np.arange(n) + 0.5) * dt - cfg.rrc_span * cfg.T
        h = rrc_pulse(t, cfg.T, cfg.rolloff)
        return h / np.sqrt(np.sum(h**2) * dt)
    return np.array([1.0 / dt])  # unit-area delta


def pulse_energy(cfg: ChainConfig) -> float:
    return float(np.sum(pulse_samples(cfg) ** 2) * cfg.dt)


# --- transmit / receive chain ----------------------------------------------


def build_symbols(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"rail length mismatch: {a.shape} vs {b.shape}")
    return (a + 1j * b) / np.sqrt(2)


def modulate(x, cfg: ChainConfig) -> np.ndarray:
    """Pulse train sum_n x_n h(t - n T/M_Tx) on the simulation grid."""
    x = np.asarray(x)
    W = cfg.cells_per_symbol
    h = pulse_samples(cfg)
    up = np.zeros(len(x) * W, dtype=complex if np.iscomplexobj(x) else float)
    up[::W] = x
    return sps.oaconvolve(up, h)[: (len(x) - 1) * W + len(h)]


def sample_boundaries(cfg: ChainConfig, n_samples: int) -> np.ndarray:
    """Grid cell index of each sampling instant (k + offset) * T_s."""
    off = int(round(cfg.sample_offset * cfg.k_sim))
    return np.arange(n_samples) * cfg.k_sim + off


def rx_filter_and_sample(sig, cfg: ChainConfig, n_samples: int | None = None) -> np.ndarray:
    """Receive filtering followed by sampling at rate 1/T_s.

    The integrate-and-dump filter returns sqrt(M_Tx/T) times the integral of
    the signal over the window of length T/M_Tx ending at each sampling time.
    """
    sig = np.asarray(sig)
    W = cfg.cells_per_symbol
    if n_samples is None:
        n_samples = -(-len(sig) // cfg.k_sim)
    b = sample_boundaries(cfg, n_samples)
    need = int(b[-1]) + 1
    padded = np.concatenate([np.zeros(W, sig.dtype), sig, np.zeros(max(0, need - len(sig)), sig.dtype)])
    if cfg.rx_filter == "integrate":
        cs = np.concatenate([[0], np.cumsum(padded)])
        gain = np.sqrt(cfg.m_tx / cfg.T) * cfg.dt
        return gain * (cs[b + W] - cs[b])
    return _brickwall(padded, cfg)[b + W]


def _brickwall(sig, cfg: ChainConfig):
    """Ideal low-pass of one-sided bandwidth W_r (default 1/(2 T_s)), unit energy.

    The output is evaluated on cell boundaries: element i is z(i*dt - W*dt)
    for the W-cell padded input, matching the integrate-and-dump indexing.
    """
    wr = cfg.rx_bandwidth if cfg.rx_bandwidth is not None else 1 / (2 * cfg.ts)
    n = len(sig)
    f = np.fft.fftfreq(n, cfg.dt)
    H = (np.abs(f) <= wr) / np.sqrt(2 * wr)
    shift = np.exp(-2j * np.pi * f * cfg.dt / 2)  # midpoint -> left boundary
    out = np.fft.ifft(np.fft.fft(sig) * H * shift)
    return out if np.iscomplexobj(sig) else out.real


def csign(r) -> np.ndarray:
    """Complex 1-bit quantizer, sign(0) = -1 on both rails."""
    r = np.asarray(r)
    re = np.where(r.real > 0, 1.0, -1.0)
    im = np.where(np.imag(r) > 0, 1.0, -1.0)
    return re + 1j * im


@dataclass
class QuantizedFrame:
    """Complex 1-bit receive samples and their symbol alignment.

    ``alignment`` is the index of the first sample of the first data symbol.
    """

    y: np.ndarray
    m: int
    alignment: int = 0
    header: dict | None = None

    def block(self, n_symbols: int) -> np.ndarray:
        """Data samples as an (n_symbols, M) array."""
        s = self.alignment
        return self.y[s: s + n_symbols * self.m].reshape(n_symbols, self.m)

    def to_bytes(self) -> bytes:
        inter = np.empty(2 * len(self.y), dtype="<f8")
        inter[0::2] = self.y.real
        inter[1::2] = self.y.imag
        return inter.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, m: int, alignment: int = 0, header=None) -> "QuantizedFrame":
        inter = np.frombuffer(raw, dtype="<f8")
        return cls(inter[0::2] + 1j * inter[1::2], m, alignment, header)

    def save(self, stem: str) -> None:
        """Write ``stem.bin`` (interleaved re/im float64 LE) and ``stem.json``."""
        with open(stem + ".bin", "wb") as fh:
            fh.write(self.to_bytes())
        meta = {"m": self.m, "alignment": self.alignment, "n_samples": len(self.y),
                "layout": "interleaved re/im, little-endian float64",
                "config": self.header or {}}
        with open(stem + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, stem: str) -> "QuantizedFrame":
        with open(stem + ".json") as fh:
            meta = json.load(fh)
        with open(stem + ".bin", "rb") as fh:
            raw = fh.read()
        return cls.from_bytes(raw, meta["m"], meta["alignment"], meta.get("config"))


def quantize_1bit(r, m: int = 1, alignment: int = 0) -> QuantizedFrame:
    return QuantizedFrame(csign(r), m, alignment)


# --- effective channel taps ------------------------------------------------


def sample_taps(cfg: ChainConfig) -> np.ndarray:
    """Effective channel as an (M, L+1) array.

    Entry [m, l] is the noiseless sample m of a block due to a unit symbol
    l symbols earlier, i.e. g((m + offset) T_s + l T/M_Tx). Obtained by running
    a unit impulse through the grid pipeline, so the taps reproduce
    ``rx_filter_and_sample(modulate(x))`` up to round-off.
    """
    return _taps(cfg.replace(n0=0.0, seed=0))


@functools.lru_cache(maxsize=64)
def _taps(clean: ChainConfig, tol: float = 1e-12) -> np.ndarray:
    cfg = clean
    h_len = len(pulse_samples(clean))
    span = h_len // clean.cells_per_symbol + 3
    sig = modulate(np.array([1.0]), clean)
    r = rx_filter_and_sample(sig, clean, n_samples=span * cfg.m).real
    G = r.reshape(span, cfg.m).T
    keep = np.flatnonzero(np.max(np.abs(G), axis=0) > tol * np.max(np.abs(G)))
    G = G[:, : keep[-1] + 1]
    G.setflags(write=False)
    return G


def channel_memory(cfg: ChainConfig) -> int:
    return sample_taps(cfg).shape[1] - 1


def apply_taps(levels, taps) -> np.ndarray:
    """Noiseless rail samples for a level sequence (zero before index 0)."""
    lv = np.asarray(levels, dtype=float)
    M, Lp1 = taps.shape
    out = np.empty((len(lv), M))
    for m in range(M):
        out[:, m] = np.convolve(lv, taps[m])[: len(lv)]
    return out.reshape(-1)


# --- source statistics, PSD and bandwidth -----------------------------------


def sample_levels(fsm: RllFsm, n: int, rng: np.random.Generator) -> np.ndarray:
    return nrzi_encode(sample_dk_sequence(fsm, n, rng)).astype(float)


def level_autocorrelation(fsm: RllFsm, max_lag: int) -> np.ndarray:
    """E[a_n a_{n+m}] for m = 0..max_lag of the stationary NRZI level process."""
    Q = np.zeros((fsm.n_states, fsm.n_states))
    np.add.at(Q, (fsm.edge_src, fsm.edge_dst), fsm.edge_prob * (1 - 2 * fsm.edge_bit))
    out = np.empty(max_lag + 1)
    v = np.ones(fsm.n_states)
    for m in range(max_lag + 1):
        out[m] = fsm.stationary @ v
        v = Q @ v
    return out


def psd_estimate(cfg: ChainConfig, fsm: RllFsm, rng: np.random.Generator, *,
                 n_realizations: int = 100, n_symbols: int = 2**14, oversample: int = 16):
    """Averaged periodogram (rectangular window) of the transmit signal.

    Each realization is an independent frame of ``n_symbols`` QPSK symbols
    with rails drawn from ``fsm``; the signal is sampled with ``oversample``
    points per symbol spacing. Returns (f, psd), f in ascending order.
    """
    wcfg = ChainConfig(m_tx=cfg.m_tx, m=1, k_sim=oversample, pulse=cfg.pulse,
                       rolloff=cfg.rolloff, rrc_span=cfg.rrc_span, T=cfg.T)
    acc = None
    for _ in range(n_realizations):
        a = sample_levels(fsm, n_symbols, rng)
        b = sample_levels(fsm, n_symbols, rng)
        x = modulate(build_symbols(a, b), wcfg)[: n_symbols * oversample]
        p = np.abs(np.fft.fft(x)) ** 2
        acc = p if acc is None else acc + p
    n = n_symbols * oversample
    psd = acc / n_realizations * wcfg.dt / n
    f = np.fft.fftfreq(n, wcfg.dt)
    order = np.argsort(f)
    return f[order], psd[order]


def analytic_psd(f, cfg: ChainConfig, fsm: RllFsm, max_lag: int = 400) -> np.ndarray:
    """|H(f)|^2 / spacing * sum_m R(m) e^{-j 2 pi f m spacing} for the cosine pulse."""
    if cfg.pulse != "cosine":
        raise NotImplementedError("analytic PSD only for the cosine pulse")
    f = np.asarray(f, dtype=float)
    R = level_autocorrelation(fsm, max_lag)
    lags = np.arange(1, max_lag + 1)
    s = np.empty(f.shape)
    flat, out = f.reshape(-1), s.reshape(-1)
    for lo in range(0, flat.size, 8192):  # bounded memory for long frequency grids
        fc = flat[lo:lo + 8192]
        out[lo:lo + 8192] = R[0] + 2 * np.cos(2 * np.pi * np.outer(fc, lags) * cfg.spacing) @ R[1:]
    return cosine_pulse_spectrum(f, cfg.T) ** 2 / cfg.spacing * s


def containment_bandwidth(f, psd, fraction: float = 0.9) -> float:
    """Width of the smallest symmetric band [-B/2, B/2] holding ``fraction`` of the power."""
    f = np.asarray(f)
    psd = np.asarray(psd)
    af = np.abs(f)
    order = np.argsort(af, kind="stable")
    af, p = af[order], psd[order]
    # collapse +f / -f into one |f| entry
    uniq, inv = np.unique(af, return_inverse=True)
    pw = np.bincount(inv, weights=p)
    cum = np.cumsum(pw) / pw.sum()
    i = int(np.searchsorted(cum, fraction))
    if i == 0:
        return 2 * uniq[0]
    frac = (fraction - cum[i - 1]) / (cum[i] - cum[i - 1])
    return float(2 * (uniq[i - 1] + frac * (uniq[i] - uniq[i - 1])))


def b90_bandwidth(cfg: ChainConfig, fsm: RllFsm, rng: np.random.Generator, **kw) -> float:
    """90% power containment bandwidth (two-sided, in units of 1/T)."""
    f, psd = psd_estimate(cfg, fsm, rng, **kw)
    return containment_bandwidth(f, psd, 0.9)


def b90_analytic(cfg: ChainConfig, fsm: RllFsm, f_max: float | None = None, n_points: int = 400001) -> float:
    f_max = f_max if f_max is not None else 20.0 * cfg.m_tx / cfg.T
    f = np.linspace(-f_max, f_max, n_points)
    return containment_bandwidth(f, analytic_psd(f, cfg, fsm), 0.9)


def pulse_autocorrelation(cfg: ChainConfig, lag_cells: int) -> float:
    h = pulse_samples(cfg)
    if lag_cells >= len(h):
        return 0.0
    return float(np.dot(h[: len(h) - lag_cells], h[lag_cells:]) * cfg.dt)


def average_power(cfg: ChainConfig, fsm: RllFsm) -> float:
    """Time-averaged |x(t)|^2 from the symbol autocorrelation (unit-modulus symbols)."""
    W = cfg.cells_per_symbol
    n_h = len(pulse_samples(cfg))
    max_lag = n_h // W + 1
    R = level_autocorrelation(fsm, max_lag)
    total = R[0] * pulse_autocorrelation(cfg, 0)
    for m in range(1, max_lag + 1):
        total += 2 * R[m] * pulse_autocorrelation(cfg, m * W)
    return total / cfg.spacing


def empirical_power(cfg: ChainConfig, fsm: RllFsm, rng: np.random.Generator, n_symbols: int = 2**16) -> float:
    a = sample_levels(fsm, n_symbols, rng)
    b = sample_levels(fsm, n_symbols, rng)
    x = modulate(build_symbols(a, b), cfg)
    W = cfg.cells_per_symbol
    core = x[len(pulse_samples(cfg)): (n_symbols - 1) * W]  # drop start/end transients
    return float(np.mean(np.abs(core) ** 2))


def snr(power: float, n0: float, b90: float) -> float:
    if b90 <= 0:
        raise ValueError("B90 must be positive")
    return power / (n0 * b90)


def n0_for_snr_db(snr_db: float, power: float, b90: float) -> float:
    return power / (10 ** (snr_db / 10) * b90)


def write_psd_csv(path_or_buf, f, psd) -> None:
    buf = io.StringIO()
    buf.write("frequency,density\n")
    for fi, pi in zip(f, psd):
        buf.write(f"{fi:.17g},{pi:.17g}\n")
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(buf.getvalue())
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(buf.getvalue())
