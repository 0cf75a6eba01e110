"""Regular LDPC code with a flooding belief-propagation decoder.

LLR convention throughout: log P(b=0) / P(b=1), so a negative LLR favours 1.
"""

from __future__ import annotations

import numba
import numpy as np

_LLR_MAX = 50.0


def _configuration_model(n, dv, dc, rng, max_rounds=2000):
    m = n * dv // dc
    var_of_socket = np.repeat(np.arange(n), dv)
    check_of_slot = np.repeat(np.arange(m), dc)
    perm = rng.permutation(n * dv)
    for _ in range(max_rounds):
        var = var_of_socket[perm]
        H = np.zeros((m, n), dtype=np.float32)
        np.add.at(H, (check_of_slot, var), 1.0)
        overlap = H.T @ H
        np.fill_diagonal(overlap, 0)
        bad_vars = np.flatnonzero((overlap > 1).any(axis=1))
        dup = H > 1
        if dup.any():
            bad_vars = np.union1d(bad_vars, np.flatnonzero(dup.any(axis=0)))
        if bad_vars.size == 0:
            return H.astype(np.uint8)
        # swap one socket of each offending variable with a random socket
        slots = np.flatnonzero(np.isin(var, bad_vars))
        slots = rng.choice(slots, size=max(1, slots.size // dv), replace=False)
        for a, b in zip(slots, rng.integers(0, n * dv, size=slots.size)):
            perm[a], perm[b] = perm[b], perm[a]
    raise RuntimeError("could not remove 4-cycles; try another seed")


def _gf2_rref(H):
    A = H.copy().astype(np.uint8)
    m, n = A.shape
    pivots = []
    r = 0
    for c in range(n):
        if r == m:
            break
        rows = np.flatnonzero(A[r:, c]) + r
        if rows.size == 0:
            continue
        p = rows[0]
        if p != r:
            A[[r, p]] = A[[p, r]]
        hit = np.flatnonzero(A[:, c])
        hit = hit[hit != r]
        A[hit] ^= A[r]
        pivots.append(c)
        r += 1
    return A[:r], np.array(pivots)


@numba.njit(cache=True)
def _bp_decode(llr, check_ptr, edge_var, n_iter, out_bits, out_ok, out_iters):
    B, n = llr.shape
    m = check_ptr.shape[0] - 1
    E = edge_var.shape[0]
    v2c = np.empty(E)
    c2v = np.zeros(E)
    total = np.empty(n)
    hard = np.empty(n, dtype=np.uint8)
    t = np.empty(E)
    for b in range(B):
        for e in range(E):
            v2c[e] = llr[b, edge_var[e]]
        ok = False
        it = 0
        for it in range(1, n_iter + 1):
            for c in range(m):
                s, f = check_ptr[c], check_ptr[c + 1]
                prod = 1.0
                zeros = 0
                for e in range(s, f):
                    t[e] = np.tanh(0.5 * v2c[e])
                    if t[e] == 0.0:
                        zeros += 1
                    else:
                        prod *= t[e]
                for e in range(s, f):
                    if zeros > 1 or (zeros == 1 and t[e] != 0.0):
                        x = 0.0
                    elif zeros == 1:
                        x = prod
                    else:
                        x = prod / t[e]
                    if x > 1.0 - 1e-15:
                        x = 1.0 - 1e-15
                    elif x < -1.0 + 1e-15:
                        x = -1.0 + 1e-15
                    c2v[e] = 2.0 * np.arctanh(x)
            for v in range(n):
                total[v] = llr[b, v]
            for e in range(E):
                total[edge_var[e]] += c2v[e]
            for v in range(n):
                hard[v] = 1 if total[v] < 0 else 0
            ok = True
            for c in range(m):
                par = 0
                for e in range(check_ptr[c], check_ptr[c + 1]):
                    par ^= hard[edge_var[e]]
                if par:
                    ok = False
                    break
            if ok:
                break
            for e in range(E):
                x = total[edge_var[e]] - c2v[e]
                if x > _LLR_MAX:
                    x = _LLR_MAX
                elif x < -_LLR_MAX:
                    x = -_LLR_MAX
                v2c[e] = x
        out_bits[b] = hard
        out_ok[b] = ok
        out_iters[b] = it


class RegularLdpc:
    """Regular (dv, dc) LDPC code built from a seeded configuration model.

    Double edges and length-4 cycles are removed. Encoding is systematic on the
    non-pivot columns of the reduced parity-check matrix.
    """

    def __init__(self, n: int = 1024, dv: int = 3, dc: int = 6, seed: int = 1, max_iter: int = 50):
        if (n * dv) % dc:
            raise ValueError("n*dv must be divisible by dc")
        self.n, self.dv, self.dc, self.max_iter = n, dv, dc, max_iter
        self.H = _configuration_model(n, dv, dc, np.random.default_rng(seed))
        R, piv = _gf2_rref(self.H)
        self.rank = len(piv)
        self.pivots = piv
        self.info_pos = np.setdiff1d(np.arange(n), piv)
        self.k = n - self.rank
        self._P = R[:, self.info_pos].astype(np.int64)  # pivot bits = P @ info
        checks, vars_ = np.nonzero(self.H)
        order = np.lexsort((vars_, checks))
        self._edge_var = vars_[order].astype(np.int64)
        self._check_ptr = np.concatenate(([0], np.cumsum(np.bincount(checks, minlength=self.H.shape[0])))).astype(np.int64)

    @property
    def rate(self) -> float:
        return self.k / self.n

    def encode(self, bits) -> np.ndarray:
        u = np.atleast_2d(np.asarray(bits, dtype=np.int64))
        if u.shape[1] != self.k:
            raise ValueError(f"expected {self.k} information bits per block")
        c = np.zeros((u.shape[0], self.n), dtype=np.uint8)
        c[:, self.info_pos] = u
        c[:, self.pivots] = (u @ self._P.T) & 1
        return c if np.ndim(bits) > 1 else c[0]

    def syndrome(self, codeword) -> np.ndarray:
        return (self.H.astype(np.int64) @ np.asarray(codeword, dtype=np.int64).T % 2).T

    def decode(self, llr, max_iter: int | None = None):
        """Belief propagation. Returns (information bits, parity-satisfied flags)."""
        L = np.atleast_2d(np.asarray(llr, dtype=float))
        if L.shape[1] != self.n:
            raise ValueError(f"expected {self.n} LLRs per block")
        L = np.ascontiguousarray(np.clip(L, -_LLR_MAX, _LLR_MAX))
        B = L.shape[0]
        bits = np.empty((B, self.n), dtype=np.uint8)
        ok = np.empty(B, dtype=np.bool_)
        iters = np.empty(B, dtype=np.int64)
        _bp_decode(L, self._check_ptr, self._edge_var, max_iter or self.max_iter, bits, ok, iters)
        info = bits[:, self.info_pos]
        if np.ndim(llr) == 1:
            return info[0], bool(ok[0])
        return info, ok
