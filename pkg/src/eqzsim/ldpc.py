"""Binary LDPC codes: alist I/O, systematic encoding, sum-product decoding.

Decoding is vectorized over a batch of codewords; messages live on the edges
of the Tanner graph and use the LLR convention ``ln P(c=0)/P(c=1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

BP_CLAMP = 40.0
_TINY = 1e-300


class AlistError(ValueError):
    """Malformed alist text; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class LdpcCode:
    """Parity-check matrix plus a systematic encoder derived from it.

    ``info_columns`` carry the message bits; ``parity_columns`` are
    ``parity_matrix @ message (mod 2)``.
    """

    parity_check: sp.csr_matrix
    info_columns: np.ndarray
    parity_columns: np.ndarray
    parity_matrix: np.ndarray  # (n-k, k) uint8
    name: str = ""
    _edges: tuple = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.parity_check.shape[1]

    @property
    def k(self) -> int:
        return self.info_columns.size

    @property
    def rate(self) -> float:
        return self.k / self.n

    def syndrome(self, words) -> np.ndarray:
        """``H c^T mod 2`` for one word ``(n,)`` or a batch ``(B, n)``."""
        w = np.asarray(words, dtype=np.int64)
        return (self.parity_check @ w.T).T % 2

    def is_codeword(self, words) -> np.ndarray:
        return ~np.any(self.syndrome(words), axis=-1)


def from_parity_check(H, name: str = "", allow_redundant: bool = False) -> LdpcCode:
    """Build a code from a 0/1 parity-check matrix (dense or sparse)."""
    Hd = (np.asarray(H.todense() if sp.issparse(H) else H) % 2).astype(np.uint8)
    m, n = Hd.shape
    A = Hd.copy()
    pivots = []
    row = 0
    for col in range(n):
        if row == m:
            break
        hits = np.nonzero(A[row:, col])[0]
        if hits.size == 0:
            continue
        p = row + hits[0]
        if p != row:
            A[[row, p]] = A[[p, row]]
        others = np.nonzero(A[:, col])[0]
        others = others[others != row]
        A[others] ^= A[row]
        pivots.append(col)
        row += 1
    rank = row
    if rank < m and not allow_redundant:
        raise RankDeficientError(f"parity-check matrix has rank {rank} < {m} rows")
    pivot_cols = np.array(pivots, dtype=np.int64)
    info_cols = np.setdiff1d(np.arange(n), pivot_cols)
    parity = A[:rank][:, info_cols].astype(np.uint8)
    return LdpcCode(sp.csr_matrix(Hd.astype(np.int64)), info_cols, pivot_cols, parity, name)


def encode(code: LdpcCode, bits) -> np.ndarray:
    """Systematic encoding of one message ``(k,)`` or a batch ``(B, k)``."""
    u = np.asarray(bits)
    if u.shape[-1] != code.k:
        raise ValueError(f"message length {u.shape[-1]} != k = {code.k}")
    u = u.astype(np.int64)
    out = np.zeros(u.shape[:-1] + (code.n,), dtype=np.int8)
    out[..., code.info_columns] = u
    out[..., code.parity_columns] = (u @ code.parity_matrix.T.astype(np.int64)) % 2
    return out


# ----------------------------------------------------------------------------
# alist


def load_alist(text: str, name: str = "") -> LdpcCode:
    return from_parity_check(parse_alist(text), name)


def parse_alist(text: str) -> sp.csr_matrix:
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, toks) for no, toks in lines if toks]
    it = iter(lines)

    def ints(expected=None):
        try:
            no, toks = next(it)
        except StopIteration:
            raise AlistError("unexpected end of file") from None
        try:
            vals = [int(t) for t in toks]
        except ValueError:
            raise AlistError(f"non-integer token in {' '.join(toks)!r}", no) from None
        if expected is not None and len(vals) != expected:
            raise AlistError(f"expected {expected} integers, found {len(vals)}", no)
        return no, vals

    _, (n, m) = ints(2)
    ints(2)
    no_c, col_w = ints(n)
    no_r, row_w = ints(m)
    rows, cols = [], []
    for j in range(n):
        no, vals = ints()
        idx = [v for v in vals if v != 0]
        if len(idx) != col_w[j]:
            raise AlistError(f"column {j + 1} lists {len(idx)} rows, weight says {col_w[j]}", no)
        for r in idx:
            if not 1 <= r <= m:
                raise AlistError(f"row index {r} out of range 1..{m}", no)
            rows.append(r - 1)
            cols.append(j)
    H = sp.csr_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(m, n))
    for i in range(m):
        no, vals = ints()
        idx = sorted(v - 1 for v in vals if v != 0)
        if len(idx) != row_w[i]:
            raise AlistError(f"row {i + 1} lists {len(idx)} columns, weight says {row_w[i]}", no)
        if idx != sorted(H.indices[H.indptr[i]: H.indptr[i + 1]].tolist()):
            raise AlistError(f"row {i + 1} disagrees with the column lists", no)
    if H.max() > 1:
        raise AlistError("duplicate entries in column lists")
    return H


def to_alist(code_or_H) -> str:
    H = code_or_H.parity_check if isinstance(code_or_H, LdpcCode) else sp.csr_matrix(code_or_H)
    H = sp.csr_matrix(H)
    m, n = H.shape
    Hc = H.tocsc()
    col_lists = [sorted((Hc.indices[Hc.indptr[j]: Hc.indptr[j + 1]] + 1).tolist()) for j in range(n)]
    row_lists = [sorted((H.indices[H.indptr[i]: H.indptr[i + 1]] + 1).tolist()) for i in range(m)]
    dc = max(len(c) for c in col_lists)
    dr = max(len(r) for r in row_lists)
    out = [f"{n} {m}", f"{dc} {dr}",
           " ".join(str(len(c)) for c in col_lists),
           " ".join(str(len(r)) for r in row_lists)]
    out += [" ".join(map(str, c + [0] * (dc - len(c)))) for c in col_lists]
    out += [" ".join(map(str, r + [0] * (dr - len(r)))) for r in row_lists]
    return "\n".join(out) + "\n"


def shipped_code(name: str = "ldpc_1998_1776") -> LdpcCode:
    """Load a code fixture bundled under ``eqzsim/codes``."""
    text = resources.files("eqzsim").joinpath(f"codes/{name}.alist").read_text()
    return load_alist(text, name)


def load_alist_file(path) -> LdpcCode:
    p = Path(path)
    return load_alist(p.read_text(), p.stem)


# ----------------------------------------------------------------------------
# construction


def peg_parity_check(n: int, m: int, column_weight: int = 3, seed: int = 0) -> sp.csr_matrix:
    """Progressive edge-growth Tanner graph with constant column weight.

    Each new edge of variable ``j`` goes to a check outside (or farthest from)
    the current neighbourhood of ``j``; ties break on lowest check degree, then
    on a seeded random choice.
    """
    rng = np.random.default_rng(seed)
    check_adj = [[] for _ in range(m)]
    var_adj = [[] for _ in range(n)]
    deg = np.zeros(m, dtype=np.int64)
    for j in range(n):
        for e in range(column_weight):
            if e == 0:
                cand = np.nonzero(deg == deg.min())[0]
            else:
                cand = _peg_candidates(j, var_adj, check_adj, m)
                cand = cand[deg[cand] == deg[cand].min()]
            c = int(rng.choice(cand))
            var_adj[j].append(c)
            check_adj[c].append(j)
            deg[c] += 1
    rows = [c for j in range(n) for c in var_adj[j]]
    cols = [j for j in range(n) for _ in var_adj[j]]
    return sp.csr_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(m, n))


def _peg_candidates(root, var_adj, check_adj, m):
    """Checks farthest from ``root`` in the current graph (unreachable ones first)."""
    seen_c = np.zeros(m, dtype=bool)
    seen_c[var_adj[root]] = True
    seen_v = {root}
    frontier = [root]
    while True:
        nxt, new_checks = [], []
        for v in frontier:
            for c in var_adj[v]:
                for u in check_adj[c]:
                    if u in seen_v:
                        continue
                    seen_v.add(u)
                    nxt.append(u)
                    for c2 in var_adj[u]:
                        if not seen_c[c2]:
                            seen_c[c2] = True
                            new_checks.append(c2)
        if not new_checks:
            return np.nonzero(~seen_c)[0]
        if seen_c.all():
            return np.array(new_checks)
        frontier = nxt


# ----------------------------------------------------------------------------
# decoding


@dataclass
class DecodeResult:
    posterior: np.ndarray
    extrinsic: np.ndarray
    hard_bits: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


def _edge_structure(code: LdpcCode):
    if code._edges is None:
        H = code.parity_check.tocoo()
        order = np.lexsort((H.col, H.row))
        chk = H.row[order].astype(np.int64)
        var = H.col[order].astype(np.int64)
        E = chk.size
        check_sum = sp.csr_matrix((np.ones(E), (np.arange(E), chk)), shape=(E, code.parity_check.shape[0]))
        var_sum = sp.csr_matrix((np.ones(E), (np.arange(E), var)), shape=(E, code.n))
        object.__setattr__(code, "_edges", (chk, var, check_sum, var_sum))
    return code._edges


def decode(code: LdpcCode, channel_llrs, max_iterations: int = 50) -> DecodeResult:
    """Flooding sum-product decoding with per-word early stopping.

    ``channel_llrs`` is ``(n,)`` or ``(B, n)``. Words stop updating once their
    hard decisions satisfy every check; ``iterations`` records when.
    """
    L = np.asarray(channel_llrs, dtype=float)
    single = L.ndim == 1
    L = np.clip(np.atleast_2d(L), -BP_CLAMP, BP_CLAMP)
    if not np.all(np.isfinite(L)):
        raise ValueError("channel LLRs must be finite")
    if L.shape[1] != code.n:
        raise ValueError(f"LLR length {L.shape[1]} != n = {code.n}")
    chk, var, check_sum, var_sum = _edge_structure(code)
    B = L.shape[0]
    c2v = np.zeros((B, chk.size))
    post = L.copy()
    iters = np.zeros(B, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    active = np.arange(B)
    for it in range(1, max_iterations + 1):
        if active.size == 0:
            break
        Lc = L[active]
        m_in = c2v[active]
        total = Lc + (var_sum.T @ m_in.T).T
        v2c = np.clip(total[:, var] - m_in, -BP_CLAMP, BP_CLAMP)
        t = np.tanh(v2c / 2.0)
        mag = np.log(np.maximum(np.abs(t), _TINY))
        neg = (t < 0).astype(np.float64)
        mag_sum = (check_sum.T @ mag.T).T
        neg_sum = (check_sum.T @ neg.T).T
        prod = np.exp(mag_sum[:, chk] - mag)
        sign = 1.0 - 2.0 * ((neg_sum[:, chk] - neg) % 2)
        prod = np.minimum(prod, 1.0 - 1e-15)
        new = np.clip(2.0 * np.arctanh(sign * prod), -BP_CLAMP, BP_CLAMP)
        c2v[active] = new
        post_a = Lc + (var_sum.T @ new.T).T
        post[active] = post_a
        iters[active] = it
        ok = ~np.any(code.syndrome((post_a < 0).astype(np.int8)), axis=1)
        done[active[ok]] = True
        active = active[~ok]
    hard = (post < 0).astype(np.int8)
    res = DecodeResult(post, post - L, hard, done, iters)
    if single:
        return DecodeResult(post[0], res.extrinsic[0], hard[0], bool(done[0]), int(iters[0]))
    return res
