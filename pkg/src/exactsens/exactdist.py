"""Exact null distributions under the sensitivity model.

Conditioning on fixed treatment margins reduces the tilted assignment
distribution to a ratio of weighted assignment counts.  For a binary
confounder summarized by per-outcome counts ``ubar_j``, the two counting
kernels are

* ``kernel_q(q)``: assignments whose per-treatment u = 1 counts equal q,
* ``kernel_t_q(t, q)``: assignments additionally inducing the table t,

both exact non-negative integers given by products of binomial coefficients
(with C(n, k) = 0 outside 0 <= k <= n, so infeasible configurations vanish
without branching).  The significance level of an upper-tail test T >= c is

    alpha = sum_{t: T(t) >= c} sum_q e^{gamma delta'q} kernel_t_q(t, q)
            -----------------------------------------------------------
                      sum_q e^{gamma delta'q} kernel_q(q)

Two evaluation paths are provided.  The reference path aggregates exact
integer kernels per q and applies the gamma weights with compensated float
summation; it is the 1e-12-grade oracle used for small and moderate N.  The
fast path exploits that a binary delta only enters through the scalar
d = delta'q and that, once q is summed out subject to d, the within-column
choices telescope into closed-form binomials.  Each table then contributes a
weight that factors through its per-column delta-block sums, so one pass over
the reference set builds a gamma-free tensor from which any (ubar, gamma)
evaluation is a few small contractions.  A full Gamma sweep or candidate scan
therefore costs one enumeration.

``brute_force_alpha`` is the independent oracle: direct enumeration of every
multiset permutation of the treatment vector, supporting real-valued u and
dose models.  ``mvehg_*`` implement the multivariate extended (Fisher
noncentral) hypergeometric law that the I x 2 column counts follow at the
sign-score worst case.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from math import comb, fsum, lgamma
from typing import Iterator, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from exactsens.sensmodel import ConfounderClass, RawConfounder, SensitivityError, SensitivityModel
from exactsens.stats import TestStatistic
from exactsens.tables import ContingencyTable, Margins, enumerate_fixed_margin_array

__all__ = [
    "kernel_q",
    "kernel_t_q",
    "omega_q",
    "exact_alpha",
    "brute_force_alpha",
    "RejectionAggregate",
    "mvehg_support",
    "mvehg_pmf",
    "mvehg_sample",
    "signscore_tail",
    "multiset_permutations",
    "statistic_tolerance",
    "ORACLE_CAP",
]

ORACLE_CAP = 12  # N above this needs allow_large=True; factorial growth


def _c(n: int, k: int) -> int:
    if k < 0 or n < 0 or k > n:
        return 0
    return comb(n, k)


def statistic_tolerance(critical: float) -> float:
    """Tie tolerance for T >= c comparisons; shared by all evaluation paths."""
    return 1e-9 * max(1.0, abs(critical))


def omega_q(ubar: int, rows: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """Support of the per-treatment u=1 counts: sum q_i = ubar within bounds."""
    rows = tuple(int(v) for v in rows)
    N = sum(rows)
    I = len(rows)

    def bounds(i: int) -> tuple[int, int]:
        return max(0, ubar + rows[i] - N), min(ubar, rows[i])

    def rec(i: int, rem: int) -> Iterator[tuple[int, ...]]:
        lo, hi = bounds(i)
        if i == I - 1:
            if lo <= rem <= hi:
                yield (rem,)
            return
        for v in range(lo, min(hi, rem) + 1):
            yield from ((v,) + rest for rest in rec(i + 1, rem - v))

    yield from rec(0, ubar)


def kernel_q(q: Sequence[int], ubar_total: int, m: Margins) -> int:
    """Number of assignments with per-treatment u=1 counts q (exact integer)."""
    rows = m.rows
    N = m.N
    if len(q) != len(rows):
        raise ValueError("q must have one entry per treatment level")
    out = 1
    A = 0
    B = 0
    for i in range(len(rows) - 1):
        out *= _c(ubar_total - A, q[i]) * _c(N - ubar_total - B, rows[i] - q[i])
        if out == 0:
            return 0
        A += q[i]
        B += rows[i] - q[i]
    # the last treatment group absorbs every remaining subject, so q is
    # feasible only when it exactly exhausts both pools
    last = len(rows) - 1
    if q[last] != ubar_total - A or rows[last] - q[last] != N - ubar_total - B:
        return 0
    return out


def kernel_t_q(t: ContingencyTable, q: Sequence[int], c: ConfounderClass) -> int:
    """Assignments inducing table t with per-treatment u=1 counts q.

    Sums the closed-form binomial products over the inner allocation set:
    n[i][j] = number of u=1 subjects with treatment i and outcome j, free for
    i < I-1 and j < J-1, everything else forced by the q / ubar margins.
    """
    arr = t.as_array()
    I, J = arr.shape
    rows = arr.sum(axis=1)
    cols = arr.sum(axis=0)
    ubar_j = c.ubar
    if len(ubar_j) != J:
        raise ValueError("confounder class does not match table outcome levels")
    if any(u > col for u, col in zip(ubar_j, cols)):
        raise ValueError("ubar exceeds a column margin")
    if len(q) != I:
        raise ValueError("q must have one entry per treatment level")
    if sum(q) != sum(ubar_j):
        return 0

    idx = [(i, j) for i in range(I - 1) for j in range(J - 1)]
    ranges = []
    for (i, j) in idx:
        lo = max(0, ubar_j[j] + arr[i, j] - cols[j])
        hi = min(arr[i, j], q[i], ubar_j[j])
        if hi < lo:
            return 0
        ranges.append(range(lo, hi + 1))

    total = 0
    n = np.zeros((I - 1, J - 1), dtype=np.int64)
    for combo in itertools.product(*ranges):
        for (i, j), v in zip(idx, combo):
            n[i, j] = v
        p = 1
        for i in range(I - 1):
            for j in range(J - 1):
                used1 = int(n[:i, j].sum())
                used0 = int((arr[:i, j] - n[:i, j]).sum())
                p *= _c(ubar_j[j] - used1, int(n[i, j]))
                p *= _c(cols[j] - ubar_j[j] - used0, int(arr[i, j] - n[i, j]))
                if p == 0:
                    break
            if p == 0:
                break
            ni_last = q[i] - int(n[i, :].sum())
            e_used = sum(q[e] - int(n[e, :].sum()) for e in range(i))
            f_used = sum(
                int(rows[e]) - int(arr[e, : J - 1].sum()) - (q[e] - int(n[e, :].sum()))
                for e in range(i)
            )
            p *= _c(ubar_j[J - 1] - e_used, ni_last)
            p *= _c(
                cols[J - 1] - ubar_j[J - 1] - f_used,
                int(rows[i]) - int(arr[i, : J - 1].sum()) - ni_last,
            )
            if p == 0:
                break
        total += p
    return total


# --------------------------------------------------------------------------
# reference (exact-integer) evaluation
# --------------------------------------------------------------------------


def _ratio_from_buckets(
    num_buckets: dict[float, float], den_buckets: dict[float, float], gamma: float
) -> float:
    """Ratio of sums of count * exp(gamma * key) in the log domain.

    Counts are exact (possibly huge) integers; log2 handles big ints at full
    precision, so the only float error is the final log-sum-exp over
    positive terms.
    """
    def log_terms(buckets: dict[float, float]) -> list[float]:
        out = []
        for key, val in buckets.items():
            if val == 0:
                continue
            out.append(math.log2(val) * math.log(2.0) + gamma * key)
        return out

    num = log_terms(num_buckets)
    den = log_terms(den_buckets)
    if not den:
        raise ZeroDivisionError("empty reference set")
    if not num:
        return 0.0
    return float(np.exp(logsumexp(np.array(num)) - logsumexp(np.array(den))))


def exact_alpha(
    test: TestStatistic,
    t_obs: ContingencyTable,
    c: ConfounderClass,
    model: SensitivityModel,
    critical: float | None = None,
    method: str = "auto",
) -> float:
    """P(T >= critical) under the sensitivity model at confounder class c.

    ``critical`` defaults to the observed statistic, making this the exact
    one-sided p-value.  ``method`` is one of ``auto``, ``exact`` (integer
    kernels per q; the reference path), or ``fast`` (gamma-free tensor
    aggregation; preferred for large reference sets).
    """
    if not model.is_binary:
        raise SensitivityError(
            "exact_alpha requires a binary delta model; dose models are supported "
            "only by the sign-score closed form and the brute-force oracle"
        )
    m = t_obs.margins()
    c.validate_for(m)
    if len(model.delta) != m.I:  # type: ignore[arg-type]
        raise ValueError("delta length must match the number of treatment levels")
    if critical is None:
        critical = test(t_obs)
    if not math.isfinite(critical):
        raise ValueError("critical value must be finite")
    if method == "auto":
        method = "exact" if m.N <= 30 else "fast"
    if method == "exact":
        return _exact_alpha_integer(test, m, c, model, critical)
    if method == "fast":
        agg = RejectionAggregate(m, test, critical, model.delta)  # type: ignore[arg-type]
        return agg.alpha(c, model.gamma)
    raise ValueError(f"unknown method {method!r}")


def _bounded_compositions(total: int, bounds: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """Non-negative integer vectors with given sum and per-entry caps."""
    n = len(bounds)

    def rec(i: int, rem: int) -> Iterator[tuple[int, ...]]:
        if i == n - 1:
            if 0 <= rem <= bounds[i]:
                yield (rem,)
            return
        tail = sum(bounds[i + 1 :])
        for v in range(max(0, rem - tail), min(bounds[i], rem) + 1):
            yield from ((v,) + rest for rest in rec(i + 1, rem - v))

    yield from rec(0, total)


def _table_q_weights(
    arr: np.ndarray, ubar_j: Sequence[int], cols: Sequence[int]
) -> dict[tuple[int, ...], int]:
    """kernel_t_q(t, q) for every q at once, via one sweep of u-allocations.

    Allocations n_ij (u = 1 subjects of outcome j under treatment i) are
    enumerated column by column; each column contributes the exact count
    ubar_j! (N_.j - ubar_j)! / prod_i n_ij! (t_ij - n_ij)!, and q is the row
    sum of the allocation matrix.
    """
    I = arr.shape[0]
    per_col: list[list[tuple[tuple[int, ...], int]]] = []
    for j, (uj, cj) in enumerate(zip(ubar_j, cols)):
        col_counts = []
        base = math.factorial(uj) * math.factorial(cj - uj)
        for split in _bounded_compositions(uj, arr[:, j].tolist()):
            w = base
            for i in range(I):
                w //= math.factorial(split[i]) * math.factorial(int(arr[i, j]) - split[i])
            col_counts.append((split, w))
        per_col.append(col_counts)

    acc: dict[tuple[int, ...], int] = {tuple([0] * I): 1}
    for col_counts in per_col:
        nxt: dict[tuple[int, ...], int] = {}
        for q_prev, w_prev in acc.items():
            for split, w in col_counts:
                q_new = tuple(a + b for a, b in zip(q_prev, split))
                nxt[q_new] = nxt.get(q_new, 0) + w_prev * w
        acc = nxt
    return acc


@lru_cache(maxsize=256)
def _integer_buckets(
    test: TestStatistic,
    rows: tuple[int, ...],
    cols: tuple[int, ...],
    ubar: tuple[int, ...],
    critical: float,
) -> tuple[tuple[tuple[tuple[int, ...], int], ...], tuple[tuple[tuple[int, ...], int], ...]]:
    """(S(q), kernel_q(q)) as exact integers over the q support (gamma-free)."""
    m = Margins(rows, cols)
    tol = statistic_tolerance(critical)
    tables = enumerate_fixed_margin_array(m)
    tvals = test.evaluate_batch(tables)
    S: dict[tuple[int, ...], int] = {}
    for tab, tv in zip(tables, tvals):
        if tv >= critical - tol:
            for q, w in _table_q_weights(tab.astype(np.int64), ubar, cols).items():
                S[q] = S.get(q, 0) + w
    total = sum(ubar)
    K = {q: kernel_q(q, total, m) for q in omega_q(total, rows)}
    return tuple(S.items()), tuple(K.items())


def _exact_alpha_integer(
    test: TestStatistic,
    m: Margins,
    c: ConfounderClass,
    model: SensitivityModel,
    critical: float,
) -> float:
    delta = model.delta
    S_items, K_items = _integer_buckets(test, m.rows, m.cols, c.ubar, float(critical))
    num_buckets: dict[float, float] = {}
    den_buckets: dict[float, float] = {}
    for q, s in S_items:
        d = float(sum(dd * qq for dd, qq in zip(delta, q)))  # type: ignore[arg-type]
        num_buckets[d] = num_buckets.get(d, 0) + s
    for q, k in K_items:
        d = float(sum(dd * qq for dd, qq in zip(delta, q)))  # type: ignore[arg-type]
        den_buckets[d] = den_buckets.get(d, 0) + k
    return _ratio_from_buckets(num_buckets, den_buckets, model.gamma)


# --------------------------------------------------------------------------
# fast gamma-free aggregation
# --------------------------------------------------------------------------


class RejectionAggregate:
    """Gamma-free summary of a rejection region for one (margins, test, critical, delta).

    One pass over the fixed-margin reference set accumulates, for every
    vector b of per-column delta-block sums, the total of
    prod_j a_j! b_j! / prod_ij t_ij! over rejected tables (log-offset floats;
    all terms positive).  ``alpha(ubar, gamma)`` then contracts this tensor
    against per-column binomial profiles of the confounder class, yielding the
    d-bucketed numerator for any gamma at negligible cost.  The denominator
    has the closed form C(ubar, d) C(N - ubar, B - d) B! (N - B)! / prod N_i.!
    with B the delta-block treatment total.
    """

    def __init__(
        self,
        m: Margins,
        test: TestStatistic,
        critical: float,
        delta: Sequence[int],
        tables: np.ndarray | None = None,
        tvals: np.ndarray | None = None,
    ) -> None:
        if len(delta) != m.I:
            raise ValueError("delta length must match the number of treatment levels")
        if any(v not in (0, 1) for v in delta):
            raise ValueError("fast aggregation requires a binary delta")
        self.margins = m
        self.critical = float(critical)
        self.delta = tuple(int(v) for v in delta)
        cols = np.asarray(m.cols, dtype=np.int64)
        rows = np.asarray(m.rows, dtype=np.int64)
        one_rows = [i for i, dv in enumerate(self.delta) if dv == 1]
        self.block_total = int(rows[one_rows].sum())
        if tables is None:
            tables = enumerate_fixed_margin_array(m)
        if tvals is None:
            tvals = test.evaluate_batch(tables)
        tol = statistic_tolerance(self.critical)
        mask = tvals >= self.critical - tol
        self.ntables = int(tables.shape[0])
        self.nrejected = int(mask.sum())
        shape = tuple(int(cj) + 1 for cj in cols)
        self._shape = shape
        if self.nrejected == 0:
            self._R = np.zeros(shape)
            self._offset = 0.0
            return
        sel = tables[mask].astype(np.int64)
        b = sel[:, one_rows, :].sum(axis=1)
        a = sel.sum(axis=1) - b
        logw = (
            gammaln(a + 1).sum(axis=1)
            + gammaln(b + 1).sum(axis=1)
            - gammaln(sel + 1).sum(axis=(1, 2))
        )
        self._offset = float(logw.max())
        R = np.zeros(shape)
        np.add.at(R, tuple(b.T), np.exp(logw - self._offset))
        self._R = R

    def numerator_buckets(self, c: ConfounderClass) -> tuple[np.ndarray, float]:
        """(log S_d array indexed by d = 0..ubar, shared log offset)."""
        c.validate_for(self.margins)
        cols = self.margins.cols
        ubar = c.total
        M = self._R
        for j, (cj, uj) in enumerate(zip(cols, c.ubar)):
            bj = np.arange(cj + 1)
            chi = np.zeros((cj + 1, uj + 1))
            for d in range(uj + 1):
                cu = _c(uj, d)
                chi[:, d] = [cu * _c(cj - uj, int(bb) - d) for bb in bj]
            M = np.tensordot(M, chi, axes=([0], [0]))
        # M axes are now (d_1, ..., d_J); collapse to d = sum_j d_j
        S = np.zeros(ubar + 1)
        if M.size:
            grid = np.indices(M.shape).reshape(len(M.shape), -1).sum(axis=0)
            np.add.at(S, grid, M.ravel())
        logS = np.full(ubar + 1, -np.inf)
        nz = S > 0
        logS[nz] = np.log(S[nz]) + self._offset
        return logS, 0.0

    def denominator_buckets(self, c: ConfounderClass) -> np.ndarray:
        """log K_d array for d = 0..ubar (exact closed form)."""
        m = self.margins
        ubar = c.total
        B = self.block_total
        N = m.N
        scale = lgamma(B + 1) + lgamma(N - B + 1) - fsum(lgamma(r + 1) for r in m.rows)
        logK = np.full(ubar + 1, -np.inf)
        for d in range(ubar + 1):
            k = _c(ubar, d) * _c(N - ubar, B - d)
            if k:
                logK[d] = math.log2(k) * math.log(2.0) + scale
        return logK

    def alpha(self, c: ConfounderClass, gamma: float) -> float:
        return self.alpha_grid(c, [gamma])[0]

    def alpha_grid(self, c: ConfounderClass, gammas: Sequence[float]) -> list[float]:
        logS, _ = self.numerator_buckets(c)
        logK = self.denominator_buckets(c)
        d = np.arange(c.total + 1, dtype=float)
        out = []
        for g in gammas:
            num = logsumexp(logS + g * d)
            den = logsumexp(logK + g * d)
            out.append(float(np.exp(num - den)) if np.isfinite(num) else 0.0)
        return out


# --------------------------------------------------------------------------
# brute-force permutation oracle
# --------------------------------------------------------------------------


def multiset_permutations(base: Sequence[int]) -> Iterator[list[int]]:
    """All distinct permutations of ``base`` in lexicographic order."""
    a = sorted(int(v) for v in base)
    n = len(a)
    while True:
        yield list(a)
        i = n - 2
        while i >= 0 and a[i] >= a[i + 1]:
            i -= 1
        if i < 0:
            return
        j = n - 1
        while a[j] <= a[i]:
            j -= 1
        a[i], a[j] = a[j], a[i]
        a[i + 1 :] = reversed(a[i + 1 :])


def brute_force_alpha(
    test: TestStatistic,
    t_obs: ContingencyTable,
    u: RawConfounder,
    outcome_vector: Sequence[int],
    model: SensitivityModel,
    critical: float | None = None,
    allow_large: bool = False,
    chunk: int = 65536,
) -> float:
    """Direct enumeration of every treatment assignment (the oracle).

    Accepts any real-valued confounder vector and either bias form.  Refuses
    N above ORACLE_CAP unless ``allow_large=True`` (factorial cost).
    """
    m = t_obs.margins()
    N = m.N
    if len(outcome_vector) != N or len(u.u) != N:
        raise ValueError("outcome vector and confounder must have length N")
    if N > ORACLE_CAP and not allow_large:
        raise ValueError(
            f"N = {N} exceeds the oracle cap {ORACLE_CAP}; pass allow_large=True "
            "to run anyway"
        )
    outcomes = [int(r) for r in outcome_vector]
    counted = [0] * m.J
    for r in outcomes:
        counted[r] += 1
    if tuple(counted) != m.cols:
        raise ValueError("outcome vector does not match the table's column margins")
    if critical is None:
        critical = test(t_obs)
    tol = statistic_tolerance(critical)
    bias = np.asarray(model.bias, dtype=float)
    if len(bias) != m.I:
        raise ValueError("bias length must match the number of treatment levels")
    uvec = np.asarray(u.u, dtype=float)
    rvec = np.asarray(outcomes)

    base = []
    for i, cnt in enumerate(m.rows):
        base.extend([i] * cnt)

    num_terms: list[float] = []
    den_terms: list[float] = []

    def flush(zbuf: list[list[int]]) -> None:
        if not zbuf:
            return
        Z = np.asarray(zbuf, dtype=np.int64)
        # induced tables, vectorized over the chunk
        tab = np.zeros((len(Z), m.I, m.J), dtype=np.int64)
        np.add.at(
            tab,
            (np.repeat(np.arange(len(Z)), N), Z.ravel(), np.tile(rvec, len(Z))),
            1,
        )
        tv = test.evaluate_batch(tab)
        w = model.gamma * (bias[Z] @ uvec)
        ok = tv >= critical - tol
        den_terms.extend(np.exp(w).tolist())
        num_terms.extend(np.exp(w[ok]).tolist())

    buf: list[list[int]] = []
    for z in multiset_permutations(base):
        buf.append(z)
        if len(buf) >= chunk:
            flush(buf)
            buf = []
    flush(buf)
    return fsum(num_terms) / fsum(den_terms)


# --------------------------------------------------------------------------
# multivariate extended hypergeometric distribution
# --------------------------------------------------------------------------


def mvehg_support(m_rows: Sequence[int], n: int) -> list[tuple[int, ...]]:
    """All count vectors t with sum t_i = n, 0 <= t_i <= m_i."""
    m_rows = tuple(int(v) for v in m_rows)
    if n < 0 or n > sum(m_rows):
        return []
    out: list[tuple[int, ...]] = []

    def rec(i: int, rem: int, prefix: tuple[int, ...]) -> None:
        if i == len(m_rows) - 1:
            if 0 <= rem <= m_rows[i]:
                out.append(prefix + (rem,))
            return
        tail = sum(m_rows[i + 1 :])
        for v in range(max(0, rem - tail), min(m_rows[i], rem) + 1):
            rec(i + 1, rem - v, prefix + (v,))

    rec(0, n, ())
    return out


def _mvehg_logterms(
    support: list[tuple[int, ...]], m_rows: Sequence[int], weights: Sequence[float]
) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    arr = np.asarray(support, dtype=np.int64)
    logc = np.array(
        [fsum(math.log(_c(mi, ti)) for mi, ti in zip(m_rows, t)) for t in support]
    )
    return logc + arr @ w


def mvehg_pmf(
    counts: Sequence[int], m_rows: Sequence[int], n: int, weights: Sequence[float]
) -> float:
    """P(T = counts) for the multivariate extended hypergeometric law.

    Density proportional to prod_i C(m_i, t_i) e^{w_i t_i} on the simplex
    slice sum t_i = n; returns 0 off support.
    """
    counts = tuple(int(v) for v in counts)
    m_rows = tuple(int(v) for v in m_rows)
    if len(counts) != len(m_rows) or len(weights) != len(m_rows):
        raise ValueError("counts, m_rows, weights must share a length")
    if sum(counts) != n or any(t < 0 or t > mi for t, mi in zip(counts, m_rows)):
        return 0.0
    support = mvehg_support(m_rows, n)
    logterms = _mvehg_logterms(support, m_rows, weights)
    target = _mvehg_logterms([counts], m_rows, weights)[0]
    return float(np.exp(target - logsumexp(logterms)))


def _mvehg_suffix_normalizers(
    m_rows: tuple[int, ...], n: int, w: Sequence[float]
) -> list[np.ndarray]:
    """logf[i][r] = log sum_x C(m_i, x) e^{w_i x} f_{i+1}(r - x), r = 0..n."""
    I = len(m_rows)
    logf = [np.full(n + 1, -np.inf) for _ in range(I + 1)]
    logf[I][0] = 0.0
    for i in range(I - 1, -1, -1):
        xs = np.arange(0, min(m_rows[i], n) + 1)
        logbin = gammaln(m_rows[i] + 1) - gammaln(xs + 1) - gammaln(m_rows[i] - xs + 1)
        rr = np.arange(n + 1)
        diff = rr[:, None] - xs[None, :]
        terms = np.where(
            diff >= 0,
            logbin[None, :] + w[i] * xs[None, :]
            + np.take(logf[i + 1], np.maximum(diff, 0)),
            -np.inf,
        )
        logf[i] = logsumexp(terms, axis=1)
    return logf


def mvehg_sample_many(
    rng: np.random.Generator,
    m_rows: Sequence[int],
    n: int,
    weights: Sequence[float],
    size: int,
) -> np.ndarray:
    """(size, I) exact draws; sequential conditionals shared across the batch."""
    m_rows = tuple(int(v) for v in m_rows)
    I = len(m_rows)
    if len(weights) != I:
        raise ValueError("weights must match m_rows length")
    if not 0 <= n <= sum(m_rows):
        raise ValueError("infeasible total n")
    w = [float(v) for v in weights]
    logf = _mvehg_suffix_normalizers(m_rows, n, w)
    out = np.zeros((size, I), dtype=np.int64)
    rem = np.full(size, n, dtype=np.int64)
    for i in range(I - 1):
        xs = np.arange(0, min(m_rows[i], n) + 1)
        logbin = gammaln(m_rows[i] + 1) - gammaln(xs + 1) - gammaln(m_rows[i] - xs + 1)
        rr = np.arange(n + 1)
        diff = rr[:, None] - xs[None, :]
        logp = np.where(
            diff >= 0,
            logbin[None, :] + w[i] * xs[None, :]
            + np.take(logf[i + 1], np.maximum(diff, 0)),
            -np.inf,
        )
        # rows for unreachable remainders normalize to nan and are never picked
        with np.errstate(invalid="ignore"):
            logp -= logsumexp(logp, axis=1, keepdims=True)
            cdf = np.cumsum(np.exp(logp), axis=1)
            cdf /= cdf[:, -1:]
        rows_cdf = cdf[rem]
        u = rng.random(size)
        pick = (u[:, None] > rows_cdf).sum(axis=1)
        pick = np.minimum(pick, len(xs) - 1)
        out[:, i] = xs[pick]
        rem = rem - out[:, i]
    out[:, I - 1] = rem
    return out


def mvehg_sample(
    rng: np.random.Generator,
    m_rows: Sequence[int],
    n: int,
    weights: Sequence[float],
) -> np.ndarray:
    """One exact draw via sequential conditional sampling of each level.

    Level i is drawn from its exact conditional given the remaining total,
    computed from the suffix normalizers of the pmf recursion; the last level
    is forced.
    """
    return mvehg_sample_many(rng, m_rows, n, weights, 1)[0]


def signscore_tail(
    alpha_scores: Sequence[float],
    m_rows: Sequence[int],
    n: int,
    weights: Sequence[float],
    critical: float,
) -> float:
    """P(sum_i alpha_i M_i >= critical) with M multivariate extended hypergeometric."""
    support = mvehg_support(m_rows, n)
    if not support:
        raise ValueError("empty support")
    logterms = _mvehg_logterms(support, m_rows, weights)
    tvals = np.asarray(support, dtype=float) @ np.asarray(alpha_scores, dtype=float)
    tol = statistic_tolerance(critical)
    mask = tvals >= critical - tol
    if not mask.any():
        return 0.0
    return float(np.exp(logsumexp(logterms[mask]) - logsumexp(logterms)))
