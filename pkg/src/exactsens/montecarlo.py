"""Sampling-based p-value estimators over the fixed-margin table space.

The baseline proposal fills cells row-major: cell (i, j) is drawn from its
feasibility interval with probability proportional to
C(crem_j, x) * C(rest_j, rrem_i - x), the hypergeometric law of how the
remaining row quota splits between column j and the columns after it.  Every
fixed-margin table has positive proposal probability and the exact
log-probability h(t) accumulates cell by cell (forced cells contribute 0).

With v(t) = sum_q e^{gamma delta'q} kernel_t_q(t, q) and the normalizer
C(u) = sum_q e^{gamma delta'q} kernel_q(q), the estimators are

    SIS       : (1 / (M C(u))) sum_m 1{T(t_m) >= c} v(t_m) / h(t_m)
    snSIS     : sum_m 1{T >= c} v/h  /  sum_m v/h
    PermTreat : self-normalized importance ratio over uniformly sampled
                treatment permutations (no kernels; slow-converging baseline)

For binary delta, v(t) factors per outcome column through the delta-block
sums, which keeps the batch evaluator fully vectorized.  The same
factorization yields a confounder-aware proposal (draw the block sums from
their exact tilted marginal, then fill each block uniformly) whose
importance ratios are flat; the estimators use it by default and record the
choice in the trace, with the baseline selectable via ``proposal=``.

Reproducibility: sample m always consumes uniforms from the stream seeded by
(seed, m), so traces are identical under any batching or scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from exactsens.exactdist import statistic_tolerance
from exactsens.sensmodel import ConfounderClass, RawConfounder, SensitivityError, SensitivityModel
from exactsens.stats import TestStatistic
from exactsens.tables import ContingencyTable, Margins

__all__ = [
    "SampledTable",
    "EstimatorTrace",
    "sis_sample_table",
    "sis_sample_batch",
    "sis_log_proposal",
    "estimate_alpha_sis",
    "estimate_alpha_snsis",
    "estimate_alpha_permtreat",
    "PROPOSAL_NAME",
    "TILTED_PROPOSAL_NAME",
]

PROPOSAL_NAME = "conditional-hypergeometric-rowfill"
TILTED_PROPOSAL_NAME = "blocksum-exact-tilted"


@dataclass(frozen=True)
class SampledTable:
    table: ContingencyTable
    log_h: float


@dataclass(frozen=True)
class EstimatorTrace:
    method: str
    estimates: np.ndarray  # running estimate after each iteration
    final: float
    proposal: str = PROPOSAL_NAME


def _free_cells(m: Margins) -> int:
    return (m.I - 1) * (m.J - 1)


def _sis_fill(
    rows: Sequence[int], colmat: np.ndarray, U: np.ndarray, ucol0: int = 0
) -> tuple[np.ndarray, np.ndarray, int]:
    """Fill tables row-major from pre-drawn uniforms.

    ``colmat`` holds per-sample column margins (they differ across samples in
    the block-fill stage).  One column of U is consumed per free cell; forced
    cells contribute log-probability 0.  Returns (tables, log_h, next ucol).
    """
    size = U.shape[0]
    I = len(rows)
    J = colmat.shape[1]
    out = np.zeros((size, I, J), dtype=np.int64)
    crem = colmat.astype(np.int64).copy()
    log_h = np.zeros(size)
    ucol = ucol0
    for i in range(I - 1):
        rrem = np.full(size, rows[i], dtype=np.int64)
        for j in range(J - 1):
            rest = crem[:, j + 1 :].sum(axis=1)
            lo = np.maximum(0, rrem - rest)
            hi = np.minimum(rrem, crem[:, j])
            width = int((hi - lo).max()) + 1
            xs = lo[:, None] + np.arange(width)[None, :]
            feasible = xs <= hi[:, None]
            xs_c = np.where(feasible, xs, 0)
            logw = (
                gammaln(crem[:, j, None] + 1)
                - gammaln(xs_c + 1)
                - gammaln(crem[:, j, None] - xs_c + 1)
                + gammaln(rest[:, None] + 1)
                - gammaln(rrem[:, None] - xs_c + 1)
                - gammaln(rest[:, None] - (rrem[:, None] - xs_c) + 1)
            )
            logw = np.where(feasible, logw, -np.inf)
            norm = logsumexp(logw, axis=1)
            p = np.exp(logw - norm[:, None])
            p /= p.sum(axis=1, keepdims=True)
            cum = np.cumsum(p, axis=1)
            pick = (U[:, ucol, None] > cum).sum(axis=1)
            pick = np.minimum(pick, feasible.sum(axis=1) - 1)
            ucol += 1
            x = lo + pick
            log_h += logw[np.arange(size), pick] - norm
            out[:, i, j] = x
            crem[:, j] -= x
            rrem = rrem - x
        out[:, i, J - 1] = rrem  # forced cell, log-probability 0
        crem[:, J - 1] -= rrem
    out[:, I - 1, :] = crem  # last row forced
    return out, log_h, ucol


def _sequential_weighted_draw(
    U: np.ndarray,
    logweights: list[np.ndarray],
    total: int,
    ucol0: int = 0,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Draw (x_1, ..., x_J) with sum = total and P proportional to
    prod_j w_j[x_j], sequentially with exact suffix normalizers.

    ``logweights[j]`` gives log w_j over x_j = 0..len-1 (-inf = infeasible).
    Returns (draws (size, J), exact log-probabilities, next uniform column).
    """
    size = U.shape[0]
    J = len(logweights)
    # suffix[j][r] = log sum over allocations of r to columns j..J-1
    suffix = [np.full(total + 1, -np.inf) for _ in range(J + 1)]
    suffix[J][0] = 0.0
    for j in range(J - 1, -1, -1):
        wj = logweights[j]
        xs = np.arange(len(wj))
        rr = np.arange(total + 1)
        diff = rr[:, None] - xs[None, :]
        terms = np.where(
            diff >= 0, wj[None, :] + np.take(suffix[j + 1], np.maximum(diff, 0)), -np.inf
        )
        suffix[j] = logsumexp(terms, axis=1)
    out = np.zeros((size, J), dtype=np.int64)
    log_p = np.zeros(size)
    rem = np.full(size, total, dtype=np.int64)
    ucol = ucol0
    for j in range(J - 1):
        wj = logweights[j]
        xs = np.arange(len(wj))
        rr = np.arange(total + 1)
        diff = rr[:, None] - xs[None, :]
        logp = np.where(
            diff >= 0, wj[None, :] + np.take(suffix[j + 1], np.maximum(diff, 0)), -np.inf
        )
        with np.errstate(invalid="ignore"):
            norm = logsumexp(logp, axis=1, keepdims=True)
            logp_n = logp - norm
            cdf = np.cumsum(np.exp(logp_n), axis=1)
            cdf /= cdf[:, -1:]
        rows_cdf = cdf[rem]
        pick = (U[:, ucol, None] > rows_cdf).sum(axis=1)
        pick = np.minimum(pick, len(xs) - 1)
        ucol += 1
        out[:, j] = pick
        log_p += logp[rem, pick] - norm[rem, 0]
        rem = rem - out[:, j]
    out[:, J - 1] = rem
    return out, log_p, ucol


def _tilted_fill(
    m: Margins,
    c: ConfounderClass,
    model: SensitivityModel,
    U: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Confounder-aware proposal: exact block-sum marginal, uniform block fills.

    The target table law factorizes through the per-column sums b_j of the
    delta = 1 rows: P(b) ~ prod_j F_j(b_j) / (a_j! b_j!) with
    F_j(b) = sum_d C(a_j, u_j - d) C(b, d) e^{gamma d}, after which each block
    is a plain fixed-margin fill.  Drawing b from that exact marginal and the
    blocks uniformly reproduces the target law itself, so importance ratios
    v/h are flat; h stays exact and every table keeps positive probability.
    """
    delta = model.delta
    assert delta is not None
    one_rows = [i for i, dv in enumerate(delta) if dv == 1]
    zero_rows = [i for i, dv in enumerate(delta) if dv == 0]
    B = sum(m.rows[i] for i in one_rows)
    size = U.shape[0]
    J = m.J
    logweights = []
    for cj, uj in zip(m.cols, c.ubar):
        lw = np.full(cj + 1, -np.inf)
        for b in range(cj + 1):
            a = cj - b
            terms = []
            for d in range(min(b, uj) + 1):
                if uj - d > a:
                    continue
                k = math.comb(a, uj - d) * math.comb(b, d)
                if k:
                    terms.append(math.log(k) + model.gamma * d)
            if terms:
                lw[b] = logsumexp(np.asarray(terms)) - (
                    math.lgamma(a + 1) + math.lgamma(b + 1)
                )
        logweights.append(lw)
    bdraw, log_hb, ucol = _sequential_weighted_draw(U, logweights, B)
    adraw = np.asarray(m.cols, dtype=np.int64)[None, :] - bdraw
    out = np.zeros((size, m.I, J), dtype=np.int64)
    log_h = log_hb
    for rows_idx, colmat in ((zero_rows, adraw), (one_rows, bdraw)):
        rows_blk = tuple(m.rows[i] for i in rows_idx)
        if len(rows_blk) == 1:
            out[:, rows_idx[0], :] = colmat
            continue
        sub, lh, ucol = _sis_fill(rows_blk, colmat, U, ucol)
        out[:, rows_idx, :] = sub
        log_h += lh
    return out, log_h


def sis_log_proposal(m: Margins, table: np.ndarray | ContingencyTable) -> float:
    """Exact log h(t) of a given fixed-margin table under the proposal."""
    arr = table.as_array() if isinstance(table, ContingencyTable) else np.asarray(table)
    if tuple(arr.sum(axis=1)) != m.rows or tuple(arr.sum(axis=0)) != m.cols:
        raise ValueError("table margins do not match")
    crem = list(m.cols)
    log_h = 0.0
    for i in range(m.I - 1):
        rrem = m.rows[i]
        for j in range(m.J - 1):
            rest = sum(crem[j + 1 :])
            lo = max(0, rrem - rest)
            hi = min(rrem, crem[j])
            x = int(arr[i, j])
            num = math.lgamma(crem[j] + 1) - math.lgamma(x + 1) - math.lgamma(crem[j] - x + 1)
            num += (
                math.lgamma(rest + 1)
                - math.lgamma(rrem - x + 1)
                - math.lgamma(rest - (rrem - x) + 1)
            )
            den = logsumexp(
                np.array(
                    [
                        math.lgamma(crem[j] + 1)
                        - math.lgamma(v + 1)
                        - math.lgamma(crem[j] - v + 1)
                        + math.lgamma(rest + 1)
                        - math.lgamma(rrem - v + 1)
                        - math.lgamma(rest - (rrem - v) + 1)
                        for v in range(lo, hi + 1)
                    ]
                )
            )
            log_h += num - den
            crem[j] -= x
            rrem -= x
        crem[m.J - 1] -= rrem
    return float(log_h)


def sis_sample_table(rng: np.random.Generator, m: Margins) -> SampledTable:
    """One proposal draw with its exact log proposal probability."""
    U = rng.random((1, _free_cells(m)))
    tabs, log_h, _ = _sis_fill(m.rows, np.asarray([m.cols]), U)
    return SampledTable(ContingencyTable.from_array(tabs[0]), float(log_h[0]))


def sis_sample_batch(
    rng: np.random.Generator, m: Margins, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """(size, I, J) tables and (size,) log h values from one shared stream."""
    U = rng.random((size, _free_cells(m)))
    tabs, log_h, _ = _sis_fill(m.rows, np.tile(np.asarray(m.cols), (size, 1)), U)
    return tabs, log_h


def _stream_uniforms(seed: int, M: int, ncols: int) -> np.ndarray:
    """Row m comes from the dedicated stream (seed, m)."""
    U = np.empty((M, ncols))
    for mi in range(M):
        U[mi] = np.random.default_rng([seed, mi]).random(ncols)
    return U


def _log_v_batch(
    tables: np.ndarray, c: ConfounderClass, model: SensitivityModel
) -> np.ndarray:
    """log v(t) = log sum_q e^{gamma delta'q} kernel_t_q(t, q), vectorized.

    Per column j the within-column allocation telescopes to
    C(a_j, u_j - d) C(b_j, d) with (a_j, b_j) the per-column delta-block sums:
    v(t) = prod_j [ u_j! (N_.j - u_j)! / prod_i t_ij! ]
                  * sum_d C(a_j, u_j - d) C(b_j, d) e^{gamma d}.
    """
    delta = model.delta
    if delta is None:
        raise SensitivityError("the v(t) factorization requires a binary delta")
    one_rows = [i for i, dv in enumerate(delta) if dv == 1]
    cols = tables.sum(axis=1)
    b = tables[:, one_rows, :].sum(axis=1)
    a = cols - b
    uj = np.asarray(c.ubar, dtype=np.int64)
    logv = (
        float(gammaln(uj + 1).sum())
        + gammaln(cols - uj[None, :] + 1).sum(axis=1)
        - gammaln(tables + 1).sum(axis=(1, 2))
    )
    for j, u in enumerate(uj.tolist()):
        ds = np.arange(u + 1)
        keep1 = u - ds[None, :]
        bad = (a[:, j, None] < keep1) | (b[:, j, None] < ds[None, :])
        la = (
            gammaln(a[:, j, None] + 1)
            - gammaln(keep1 + 1)
            - gammaln(np.maximum(a[:, j, None] - keep1, 0) + 1)
        )
        lb = (
            gammaln(b[:, j, None] + 1)
            - gammaln(ds[None, :] + 1)
            - gammaln(np.maximum(b[:, j, None] - ds[None, :], 0) + 1)
        )
        terms = np.where(bad, -np.inf, la + lb + model.gamma * ds[None, :])
        logv += logsumexp(terms, axis=1)
    return logv


def _log_normalizer(c: ConfounderClass, m: Margins, model: SensitivityModel) -> float:
    """log C(u) = log sum_q e^{gamma delta'q} kernel_q(q) in closed block form."""
    delta = model.delta
    assert delta is not None
    N = m.N
    ubar = c.total
    B = sum(r for r, dv in zip(m.rows, delta) if dv == 1)
    scale = (
        math.lgamma(B + 1)
        + math.lgamma(N - B + 1)
        - math.fsum(math.lgamma(r + 1) for r in m.rows)
    )
    terms = []
    for d in range(ubar + 1):
        k = math.comb(ubar, d) * math.comb(N - ubar, B - d) if 0 <= B - d <= N - ubar else 0
        if k:
            terms.append(math.log2(k) * math.log(2.0) + model.gamma * d)
    return float(logsumexp(np.asarray(terms)) + scale)


def _validate_sampling_call(
    t_obs: ContingencyTable, c: ConfounderClass, model: SensitivityModel, M: int
) -> Margins:
    if M < 1:
        raise ValueError("M must be at least 1")
    if not model.is_binary:
        raise SensitivityError("kernel-weighted estimators require a binary delta")
    m = t_obs.margins()
    c.validate_for(m)
    return m


def _sample_and_weight(
    seed: int,
    test: TestStatistic,
    m: Margins,
    c: ConfounderClass,
    model: SensitivityModel,
    critical: float,
    M: int,
    proposal: str,
) -> tuple[np.ndarray, np.ndarray]:
    U = _stream_uniforms(seed, M, _free_cells(m))
    if proposal == PROPOSAL_NAME:
        tables, log_h, _ = _sis_fill(m.rows, np.tile(np.asarray(m.cols), (M, 1)), U)
    elif proposal == TILTED_PROPOSAL_NAME:
        tables, log_h = _tilted_fill(m, c, model, U)
    else:
        raise ValueError(f"unknown proposal {proposal!r}")
    tol = statistic_tolerance(critical)
    keep = test.evaluate_batch(tables) >= critical - tol
    log_ratio = _log_v_batch(tables, c, model) - log_h
    return keep, log_ratio


def estimate_alpha_sis(
    seed: int,
    test: TestStatistic,
    t_obs: ContingencyTable,
    c: ConfounderClass,
    model: SensitivityModel,
    critical: float | None = None,
    M: int = 10_000,
    proposal: str = TILTED_PROPOSAL_NAME,
) -> EstimatorTrace:
    """Unbiased kernel-weighted estimator (1/(M C(u))) sum 1{T>=c} v/h."""
    m = _validate_sampling_call(t_obs, c, model, M)
    if critical is None:
        critical = test(t_obs)
    keep, log_ratio = _sample_and_weight(seed, test, m, c, model, critical, M, proposal)
    logC = _log_normalizer(c, m, model)
    terms = np.where(keep, np.exp(log_ratio - logC), 0.0)
    running = np.cumsum(terms) / np.arange(1, M + 1)
    return EstimatorTrace("SIS", running, float(running[-1]), proposal)


def estimate_alpha_snsis(
    seed: int,
    test: TestStatistic,
    t_obs: ContingencyTable,
    c: ConfounderClass,
    model: SensitivityModel,
    critical: float | None = None,
    M: int = 10_000,
    proposal: str = TILTED_PROPOSAL_NAME,
) -> EstimatorTrace:
    """Self-normalized variant: weighted rejected mass over total weighted mass."""
    m = _validate_sampling_call(t_obs, c, model, M)
    if critical is None:
        critical = test(t_obs)
    keep, log_ratio = _sample_and_weight(seed, test, m, c, model, critical, M, proposal)
    w = np.exp(log_ratio - log_ratio.max())
    denom = np.cumsum(w)
    assert np.all(denom > 0), "positive proposal weights cannot vanish"
    running = np.cumsum(np.where(keep, w, 0.0)) / denom
    return EstimatorTrace("snSIS", running, float(running[-1]), proposal)


def estimate_alpha_permtreat(
    seed: int,
    test: TestStatistic,
    outcome_vector: Sequence[int],
    u: RawConfounder,
    model: SensitivityModel,
    critical: float,
    M: int = 10_000,
    treatment_margins: Sequence[int] | None = None,
) -> EstimatorTrace:
    """Kernel-free baseline: uniform treatment permutations, tilted weights.

    Converges slowly because the permutation space dwarfs the table space;
    kept as the documented comparison point, including dose models.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if treatment_margins is None:
        raise ValueError("treatment margins are required")
    outcomes = np.asarray([int(r) for r in outcome_vector])
    N = len(outcomes)
    if u.N != N:
        raise ValueError("confounder length must match the outcome vector")
    bias = np.asarray(model.bias, dtype=float)
    I = len(bias)
    rows = tuple(int(v) for v in treatment_margins)
    if sum(rows) != N:
        raise ValueError("treatment margins must sum to N")
    J = int(outcomes.max()) + 1
    base = np.repeat(np.arange(I), rows)
    uvec = np.asarray(u.u)

    Z = np.empty((M, N), dtype=np.int64)
    for mi in range(M):
        Z[mi] = np.random.default_rng([seed, mi]).permutation(base)
    tabs = np.zeros((M, I, J), dtype=np.int64)
    np.add.at(
        tabs,
        (np.repeat(np.arange(M), N), Z.ravel(), np.tile(outcomes, M)),
        1,
    )
    tol = statistic_tolerance(critical)
    keep = test.evaluate_batch(tabs) >= critical - tol
    logw = model.gamma * (bias[Z] @ uvec)
    w = np.exp(logw - logw.max())
    running = np.cumsum(np.where(keep, w, 0.0)) / np.cumsum(w)
    return EstimatorTrace("PermTreat", running, float(running[-1]))
