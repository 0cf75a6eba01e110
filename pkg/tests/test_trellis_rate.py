import itertools

import numpy as np
import pytest
from scipy.special import log_ndtr, logsumexp

from zxm.rate import (aux_block_likelihood, block_bootstrap_stderr, build_rail_trellis, rail_state_index,
                      rate_lower_bound, source_fsm, spectral_efficiency)
from zxm.trellis import NumericFailure, branch_loglik, forward, forward_backward, pattern_table
from zxm.waveform import ChainConfig, apply_taps, sample_taps

from oracles import hmax_root, nrzi, sequence_log_prior


@pytest.mark.parametrize("source,m_tx,states", [("iud", 1, 4), ("rll1", 2, 10), ("rll1", 4, 68), ("rll2", 4, 38)])
def test_trellis_sizes(source, m_tx, states):
    tr = build_rail_trellis(ChainConfig(m_tx=m_tx), source_fsm(source))
    assert tr.n_states == states
    # outgoing prior mass is one per state
    mass = np.zeros(tr.n_states)
    np.add.at(mass, tr.src, np.exp(tr.log_prior))
    assert np.allclose(mass, 1.0)


def test_trellis_branches_respect_runlength():
    cfg, fsm = ChainConfig(m_tx=2), source_fsm("rll2")
    for (f, hist), i in rail_state_index(cfg, fsm).items():
        rl = 1
        for a, b in zip(hist[::-1], hist[-2::-1]):
            if a != b:
                break
            rl += 1
        # zeros since the last 1 = run length - 1, unless the run fills the history
        assert f == min(rl - 1, fsm.d) or (rl == len(hist) and f >= min(rl - 1, fsm.d))


def test_branch_loglik_table_equals_direct():
    rng = np.random.default_rng(0)
    means = rng.standard_normal((12, 3))
    y = np.where(rng.standard_normal((50, 3)) > 0, 1.0, -1.0)
    direct = log_ndtr(y[:, None, :] * means[None] / 0.7).sum(-1)
    assert np.allclose(branch_loglik(means, y, 0.7), direct, atol=1e-13)
    assert pattern_table(means, 0.7).shape == (12, 8)
    with pytest.raises(ValueError):
        branch_loglik(means, y, 0.0)


@pytest.mark.parametrize("d,m_tx,m", [(1, 1, 1), (1, 2, 2), (2, 2, 1)])
def test_forward_equals_exhaustive_evidence(d, m_tx, m):
    """Sum of forward normalizers equals the auxiliary evidence by enumeration (fixed start state)."""
    cfg = ChainConfig(m_tx=m_tx, m=m)
    fsm = source_fsm(f"rll{d}")
    tr = build_rail_trellis(cfg, fsm)
    idx = rail_state_index(cfg, fsm)
    G = sample_taps(cfg)
    Lm = max(G.shape[1] - 1, 1)
    n, sigma = 6, 0.6
    rng = np.random.default_rng(7)
    y = np.where(rng.standard_normal((n, m)) > 0, 1.0, -1.0)
    la0 = np.full(tr.n_states, -np.inf)
    la0[idx[(d, (-1,) * Lm)]] = 0.0
    norms, _, _ = forward(tr, branch_loglik(tr.means, y, sigma), la0)
    terms = []
    for bits in itertools.product((0, 1), repeat=n):
        lp = sequence_log_prior(bits, d, start_zeros=d)
        if not np.isfinite(lp):
            continue
        lv = nrzi((0,) * Lm + bits)
        mu = apply_taps(lv, G).reshape(-1, m)[Lm:] / np.sqrt(2)
        terms.append(lp + log_ndtr(y * mu / sigma).sum())
    assert norms.sum() == pytest.approx(logsumexp(terms), abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_forward_backward_likelihoods_agree(seed):
    cfg = ChainConfig(m_tx=2, m=2)
    tr = build_rail_trellis(cfg, source_fsm("rll1"))
    rng = np.random.default_rng(seed)
    y = np.where(rng.standard_normal((400, 2)) > 0, 1.0, -1.0)
    logW = branch_loglik(tr.means, y, 0.8)
    res = forward_backward(tr, logW, np.log(tr.stationary), np.zeros(tr.n_states))
    assert res.log_likelihood_fwd == pytest.approx(res.log_likelihood_bwd, abs=1e-9)
    assert np.allclose(res.gamma.sum(axis=1), 1.0)


def test_impossible_observation_raises():
    tr = build_rail_trellis(ChainConfig(), source_fsm("iud"))
    logW = np.full((3, tr.n_branches), -np.inf)
    with pytest.raises(NumericFailure):
        forward(tr, logW)


def test_noiseless_iud_rate_is_two():
    est = rate_lower_bound(ChainConfig(n0=1e-8), "iud", 20000, np.random.default_rng(0))
    assert est.rate == pytest.approx(2.0, abs=1e-6)


def test_noiseless_rll_rate_is_twice_entropy():
    est = rate_lower_bound(ChainConfig(m_tx=2, n0=1e-8), "rll1", 100_000, np.random.default_rng(1))
    assert abs(est.rate - 2 * hmax_root(1)) < 4 * est.stderr + 1e-4


def test_rate_decreases_with_noise():
    rates = [rate_lower_bound(ChainConfig(m_tx=1, n0=n0), "iud", 20000, np.random.default_rng(0)).rate
             for n0 in (0.01, 0.3, 3.0)]
    assert rates[0] > rates[1] > rates[2] > 0


def test_rate_requires_noise_and_integrator():
    with pytest.raises(ValueError):
        rate_lower_bound(ChainConfig(n0=0.0), "iud", 100)


def test_aux_block_likelihood_sums_to_one():
    mu = np.array([0.3 - 0.2j, -0.1 + 0.5j])
    total = 0.0
    for s in itertools.product((-1, 1), repeat=4):
        y = np.array([s[0] + 1j * s[1], s[2] + 1j * s[3]])
        total += aux_block_likelihood(mu, y, 0.4)
    assert total == pytest.approx(1.0)


def test_bootstrap_stderr_scales_like_iid():
    v = np.random.default_rng(0).standard_normal(100_000)
    assert block_bootstrap_stderr(v) == pytest.approx(1 / np.sqrt(len(v)), rel=0.4)


def test_spectral_efficiency_definition():
    assert spectral_efficiency(2.0, ChainConfig(m_tx=2), 0.5) == pytest.approx(8.0)

