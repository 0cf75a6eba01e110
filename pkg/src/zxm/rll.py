"""Runlength-limited (d, k=inf) sequences.

The (d, inf) constraint is represented by the usual finite-state machine with
states 0..d: state i < d counts the zeros emitted since the last 1 and has a
single 0-edge to i+1; state d may emit another 0 (self loop) or a 1 (back to
state 0). Level sequences are obtained by NRZI with initial level -1, so every
run of equal levels is at least d+1 symbols long.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class RllFsm:
    """(d, inf) finite-state machine with its maximum-entropy Markov law.

    ``adjacency`` counts edges between states (it is 0/1 for d >= 1; the
    unconstrained d = 0 machine has a single state with two parallel edges).
    ``transitions`` is the row-stochastic state transition matrix and
    ``edge_prob`` the probability of each individual edge.
    """

    d: int
    adjacency: np.ndarray
    lam: float
    right_vector: np.ndarray
    transitions: np.ndarray
    stationary: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_bit: np.ndarray
    edge_prob: np.ndarray

    @property
    def n_states(self) -> int:
        return self.d + 1

    @property
    def p_one(self) -> float:
        """Probability of emitting a 1 from the free state d."""
        mask = (self.edge_src == self.d) & (self.edge_bit == 1)
        return float(self.edge_prob[mask][0])


def _edges(d: int):
    src, dst, bit = [], [], []
    for i in range(d):
        src.append(i), dst.append(i + 1), bit.append(0)
    src += [d, d]
    dst += [d, 0]
    bit += [0, 1]
    return np.array(src), np.array(dst), np.array(bit)


def build_fsm(d: int, k: int | None = None) -> RllFsm:
    """Build the (d, inf) machine; a finite ``k`` is not supported."""
    if k is not None:
        raise ValueError("only k = inf is supported")
    if d < 0:
        raise ValueError(f"minimum runlength d must be >= 0, got {d}")
    src, dst, bit = _edges(d)
    n = d + 1
    D = np.zeros((n, n), dtype=np.int64)
    np.add.at(D, (src, dst), 1)

    evals, evecs = np.linalg.eig(D.astype(float))
    idx = int(np.argmax(evals.real))
    lam = float(evals[idx].real)
    u = np.abs(evecs[:, idx].real)
    u = u / u.sum()

    edge_prob = u[dst] / (u[src] * lam)
    P = np.zeros((n, n))
    np.add.at(P, (src, dst), edge_prob)
    P = P / P.sum(axis=1, keepdims=True)  # removes eigensolver round-off

    # left eigenvector of P for eigenvalue 1
    w, v = np.linalg.eig(P.T)
    pi = np.abs(v[:, int(np.argmin(np.abs(w - 1.0)))].real)
    pi = pi / pi.sum()
    return RllFsm(d, D, lam, u, P, pi, src, dst, bit, edge_prob)


def max_entropy_rate(fsm: RllFsm) -> float:
    """Maximum entropy rate log2(lambda) in bits per (d,k)-symbol."""
    return float(np.log2(fsm.lam))


def markov_entropy_rate(fsm: RllFsm) -> float:
    """Entropy rate of the stationary edge process (pi, edge_prob)."""
    p = fsm.edge_prob
    return float(-np.sum(fsm.stationary[fsm.edge_src] * p * np.log2(p)))


def path_count_entropy(d: int, n: int = 64) -> float:
    """Entropy estimate from exact path counts, log2(S_{n+1} / S_n).

    ``S_n`` is the sum of the entries of D^n, computed with Python integers.
    The ratio of consecutive counts converges geometrically to lambda.
    """
    fsm = build_fsm(d)
    D = [[int(x) for x in row] for row in fsm.adjacency]
    vec = [1] * (d + 1)  # D^n @ 1, row sums of D^n
    sums = []
    for _ in range(n + 1):
        vec = [sum(D[i][j] * vec[j] for j in range(d + 1)) for i in range(d + 1)]
        sums.append(sum(vec))
    ratio = Fraction(sums[-1], sums[-2])
    return float(np.log2(float(ratio)))


def sample_dk_sequence(fsm: RllFsm, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` bits of a max-entropy (d, inf) sequence in steady state.

    The sequence is a renewal process: after every 1 there are d forced zeros
    followed by a geometric number of extra zeros. The chain is started from
    its stationary distribution.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = fsm.d
    p1 = fsm.p_one
    s0 = int(rng.choice(fsm.n_states, p=fsm.stationary))

    out = np.zeros(n, dtype=np.int8)
    pos = 0
    first = True
    mean_gap = d + 1.0 / p1
    while pos < n:
        m = int((n - pos) / mean_gap * 1.1) + 16
        steps = rng.geometric(p1, size=m) + d  # d forced zeros, extra zeros, the 1
        if first:
            steps[0] -= s0  # started s0 zeros into the forced block
            first = False
        ones = pos - 1 + np.cumsum(steps)
        out[ones[ones < n]] = 1
        pos = int(ones[-1]) + 1
    return out


def is_dk_valid(bits, d: int) -> bool:
    """True if every pair of consecutive 1s is separated by >= d zeros."""
    ones = np.flatnonzero(np.asarray(bits))
    if len(ones) < 2:
        return True
    return bool(np.all(np.diff(ones) > d))


def nrzi_encode(dk_bits, initial: int = -1) -> np.ndarray:
    """Map (d,k) bits to +/-1 levels; a 1 toggles the level, a 0 holds it."""
    bits = np.asarray(dk_bits, dtype=np.int64)
    if bits.size == 0:
        raise ValueError("empty input")
    parity = np.cumsum(bits) & 1
    return (initial * (1 - 2 * parity)).astype(np.int8)


def nrzi_decode(levels, initial: int = -1) -> np.ndarray:
    lv = np.asarray(levels)
    prev = np.concatenate(([initial], lv[:-1]))
    return (lv != prev).astype(np.int8)


def runlengths(levels) -> np.ndarray:
    lv = np.asarray(levels)
    if lv.size == 0:
        raise ValueError("empty input")
    edges = np.flatnonzero(lv[1:] != lv[:-1]) + 1
    bounds = np.concatenate(([0], edges, [lv.size]))
    return np.diff(bounds)


def bits_to_text(bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits))


def levels_to_text(levels) -> str:
    return "".join("+" if v > 0 else "-" for v in np.asarray(levels))


# --- rate 3/5 block code ----------------------------------------------------


@dataclass(frozen=True)
class RllBlockCode:
    k_bits: int
    n: int
    codebook: np.ndarray  # (2**k_bits, n) int8, row i encodes input integer i

    @property
    def rate(self) -> float:
        return self.k_bits / self.n

    def to_json(self) -> str:
        return json.dumps([bits_to_text(w) for w in self.codebook])

    @property
    def input_bits(self) -> np.ndarray:
        """(2**k, k) table of input bits per codeword index, MSB first."""
        idx = np.arange(2**self.k_bits)
        shifts = np.arange(self.k_bits - 1, -1, -1)
        return ((idx[:, None] >> shifts) & 1).astype(np.int8)


def build_block_code(k_bits: int = 3, n: int = 5) -> RllBlockCode:
    """Leading-zero, no-adjacent-ones words of length n in lexicographic order.

    Every word starts with 0 and obeys d=1 internally, so any concatenation of
    codewords obeys d=1 without coder state.
    """
    words = []
    for v in range(2**n):
        w = [(v >> (n - 1 - i)) & 1 for i in range(n)]
        if w[0] == 0 and is_dk_valid(w, 1):
            words.append(w)
    if len(words) < 2**k_bits:
        raise ValueError(f"only {len(words)} admissible words for n={n}")
    return RllBlockCode(k_bits, n, np.array(words[: 2**k_bits], dtype=np.int8))


def block_encode(code: RllBlockCode, bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64)
    if b.size % code.k_bits:
        raise ValueError(f"bit count must be a multiple of {code.k_bits}")
    groups = b.reshape(-1, code.k_bits)
    idx = groups @ (1 << np.arange(code.k_bits - 1, -1, -1))
    return code.codebook[idx].reshape(-1)


_LLR_CLIP = 50.0


def rll_soft_decode(code: RllBlockCode, p_one):
    """Soft demapping of codewords from per-position P(bit = 1).

    ``p_one`` has shape (..., n). Codeword scores are products of per-position
    probabilities. Returns ``(llrs, hard_bits, erased)`` where ``llrs`` are
    log(P(b=0)/P(b=1)) for the k input bits (clipped to +/-50), ``hard_bits``
    are the input bits of the highest-scoring codeword (lowest index on ties)
    and ``erased`` flags all-zero total score.
    """
    p = np.clip(np.asarray(p_one, dtype=float), 0.0, 1.0)
    cb = code.codebook.astype(float)  # (C, n)
    # scores[..., c] = prod_i (p_i if cb[c,i] else 1 - p_i)
    factors = np.where(cb > 0, p[..., None, :], 1.0 - p[..., None, :])
    scores = np.prod(factors, axis=-1)
    total = scores.sum(axis=-1)
    erased = total <= 0.0

    ib = code.input_bits  # (C, k)
    s0 = scores @ (1 - ib)
    s1 = scores @ ib
    with np.errstate(divide="ignore", invalid="ignore"):
        llr = np.log(s0) - np.log(s1)
    llr = np.nan_to_num(llr, nan=0.0, posinf=_LLR_CLIP, neginf=-_LLR_CLIP)
    llr = np.clip(llr, -_LLR_CLIP, _LLR_CLIP)
    llr = np.where(np.asarray(erased)[..., None], 0.0, llr)

    best = np.argmax(scores, axis=-1)  # first maximum = lowest index
    hard = ib[best]
    return llr, hard, erased
