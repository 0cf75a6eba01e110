"""Noise generation and end-to-end frame simulation.

Random streams are derived from ``(seed, *key)`` with
``numpy.random.SeedSequence(seed, spawn_key=key)``; a frame, trial or sweep
point always uses the key of its index, so results do not depend on the order
or the process in which work items are executed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .waveform import (ChainConfig, QuantizedFrame, apply_taps, csign, modulate,
                       rx_filter_and_sample, sample_taps)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def complex_normal(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with E|n|^2 = variance."""
    s = np.sqrt(variance / 2)
    return s * rng.standard_normal(shape) + 1j * s * rng.standard_normal(shape)


@dataclass(frozen=True)
class NoiseModel:
    """``grid``: white noise on the grid, then receive-filtered.
    ``sample-iid``: independent CN(0, N0) per sample (brickwall at the sampling rate).
    """

    kind: str = "grid"
    n0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("grid", "sample-iid"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def samples(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind != "sample-iid":
            raise ValueError("grid noise needs a ChainConfig, use awgn_grid")
        if self.n0 == 0:
            return np.zeros(n, complex)
        return complex_normal(rng, n, self.n0)


def awgn_grid(n: int, cfg: ChainConfig, rng: np.random.Generator) -> np.ndarray:
    """White noise of PSD N0 on the grid: per-cell variance N0 / dt."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if cfg.n0 == 0:
        return np.zeros(n, complex)
    return complex_normal(rng, n, cfg.n0 / cfg.dt)


def integrator_noise(n: int, cfg: ChainConfig, rng: np.random.Generator) -> np.ndarray:
    """Receive-filtered noise samples of the integrate-and-dump chain.

    Each sample integrates white noise over M consecutive sub-windows of length
    T_s, so n_k = M^{-1/2} (w_{k-M+1} + ... + w_k) with w iid CN(0, N0). This is
    the exact law of the continuous-time filtered noise (variance N0,
    correlation max(0, 1 - |lag|/M)).
    """
    if cfg.n0 == 0:
        return np.zeros(n, complex)
    M = cfg.m
    w = complex_normal(rng, n + M - 1, cfg.n0)
    cs = np.concatenate([[0], np.cumsum(w)])
    return (cs[M:] - cs[:-M]) / np.sqrt(M)


def integrator_noise_correlation(m: int, max_lag: int) -> np.ndarray:
    lags = np.arange(max_lag + 1)
    return np.maximum(0.0, 1.0 - lags / m)


def transmit_frame(x, cfg: ChainConfig, rng: np.random.Generator, method: str = "grid"):
    """Simulate the chain for symbols ``x``; returns (r, QuantizedFrame).

    ``r`` holds the M*N unquantized samples (blocks aligned with the symbols).
    ``method='grid'`` synthesizes the waveform and noise on the simulation grid;
    ``method='taps'`` uses the effective sample-domain taps and the exact
    filtered-noise law, which is equivalent and much faster for long frames
    (integrate-and-dump receiver only).
    """
    x = np.asarray(x, dtype=complex)
    n_samp = len(x) * cfg.m
    if method == "grid":
        sig = modulate(x, cfg)
        sig = sig + awgn_grid(len(sig), cfg, rng)
        r = rx_filter_and_sample(sig, cfg, n_samples=n_samp)
    elif method == "taps":
        if cfg.rx_filter != "integrate":
            raise ValueError("taps method supports the integrate-and-dump receiver only")
        r = noiseless_samples(x, cfg) + integrator_noise(n_samp, cfg, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    return r, QuantizedFrame(csign(r), cfg.m, 0)


def noiseless_samples(x, cfg: ChainConfig) -> np.ndarray:
    G = sample_taps(cfg)
    x = np.asarray(x, dtype=complex)
    return apply_taps(x.real, G) + 1j * apply_taps(x.imag, G)
