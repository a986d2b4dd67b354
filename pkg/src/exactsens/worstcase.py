"""Worst-case confounder search over finite candidate sets.

The worst-case p-value maximizes the exact significance level over all
admissible confounders.  The search space collapses by test family:

* permutation-invariant tests: it suffices to scan every distinct vector of
  per-outcome u=1 counts, at most prod_j (N_.j + 1) classes;
* ordinal tests (monotone scores, monotone delta): the maximizer is a
  suffix of ones over subjects sorted by outcome, N + 1 classes;
* sign-score tests (J = 2, monotone bias): the maximizer is pinned at
  ubar = (0, N_.2), a single class, where the column-2 counts follow a
  multivariate extended hypergeometric law.

``worst_case_pvalue`` picks the cheapest valid strategy, reuses one
gamma-free table aggregation across the whole candidate scan, and
tie-breaks deterministically toward the lexicographically smallest class.
Dose (phi) models are refused outside the sign-score family: interior
confounders can beat every corner there, so a corner scan would be wrong.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from exactsens.exactdist import (
    RejectionAggregate,
    mvehg_support,
    _mvehg_logterms,
    statistic_tolerance,
)
from exactsens.sensmodel import ConfounderClass, SensitivityError, SensitivityModel
from exactsens.stats import TestFamily, TestStatistic
from exactsens.tables import ContingencyTable, Margins

__all__ = [
    "WorstCaseResult",
    "MultiDeltaResult",
    "candidates_pi",
    "candidates_ordinal",
    "signscore_u_plus",
    "worst_case_pvalue",
    "worst_case_grid",
    "worst_case_multi_delta",
]

# classes whose p-values agree within this relative slack count as tied, so
# the reported argmax is stable against contraction-order float jitter
_TIE_REL = 1e-12


@dataclass(frozen=True)
class WorstCaseResult:
    pvalue: float
    argmax_class: ConfounderClass
    candidates_scanned: int
    family_used: TestFamily


@dataclass(frozen=True)
class MultiDeltaResult:
    pvalue: float
    delta: tuple[int, ...]
    per_delta: tuple[WorstCaseResult, ...]


def candidates_pi(m: Margins) -> Iterator[ConfounderClass]:
    """Every per-outcome count vector 0 <= ubar_j <= N_.j, each exactly once."""
    for combo in itertools.product(*(range(cj + 1) for cj in m.cols)):
        yield ConfounderClass(combo)


def candidates_ordinal(m: Margins) -> Iterator[ConfounderClass]:
    """The N + 1 suffix classes: k ones filling outcome levels from J down.

    With outcomes sorted ascending, the ordinal maximizer has u
    non-decreasing, so the k subjects with u = 1 occupy the top outcome
    levels; spill the remainder downward.
    """
    cols = m.cols
    J = m.J
    for k in range(m.N + 1):
        ubar = [0] * J
        rem = k
        for j in range(J - 1, -1, -1):
            take = min(rem, cols[j])
            ubar[j] = take
            rem -= take
        yield ConfounderClass(tuple(ubar))


def signscore_u_plus(m: Margins) -> ConfounderClass:
    """The closed-form sign-score maximizer: ones exactly on outcome level 2."""
    if m.J != 2:
        raise ValueError("the sign-score worst case requires a binary outcome")
    return ConfounderClass((0, m.cols[1]))


def _pick_strategy(test: TestStatistic, model: SensitivityModel, m: Margins) -> str:
    if not model.is_binary:
        if test.family is TestFamily.SIGN_SCORE and m.J == 2 and model.monotone_bias():
            return "signscore"
        raise SensitivityError(
            "dose (phi) models admit interior worst cases outside the sign-score "
            "family; refusing a corner scan"
        )
    if test.family is TestFamily.SIGN_SCORE and m.J == 2 and model.monotone_bias():
        return "signscore"
    if test.family in (TestFamily.ORDINAL, TestFamily.SIGN_SCORE) and model.monotone_bias():
        return "ordinal"
    return "pi"


def _signscore_result(
    test: TestStatistic,
    t_obs: ContingencyTable,
    model: SensitivityModel,
    critical: float,
    m: Margins,
) -> WorstCaseResult:
    # T is affine in the column-2 count vector M when J = 2, so evaluate the
    # statistic on the reconstructed tables over the MVEHG support
    rows = m.rows
    n2 = m.cols[1]
    support = mvehg_support(rows, n2)
    tabs = np.zeros((len(support), m.I, 2), dtype=np.int64)
    marr = np.asarray(support, dtype=np.int64)
    tabs[:, :, 1] = marr
    tabs[:, :, 0] = np.asarray(rows)[None, :] - marr
    tvals = test.evaluate_batch(tabs)
    weights = [model.gamma * b for b in model.bias]
    logterms = _mvehg_logterms(support, rows, weights)
    tol = statistic_tolerance(critical)
    mask = tvals >= critical - tol
    if mask.any():
        from scipy.special import logsumexp

        p = float(np.exp(logsumexp(logterms[mask]) - logsumexp(logterms)))
    else:
        p = 0.0
    return WorstCaseResult(
        pvalue=min(p, 1.0),
        argmax_class=signscore_u_plus(m),
        candidates_scanned=1,
        family_used=TestFamily.SIGN_SCORE,
    )


def worst_case_pvalue(
    test: TestStatistic,
    t_obs: ContingencyTable,
    model: SensitivityModel,
    critical: float | None = None,
    strategy: str = "auto",
) -> WorstCaseResult:
    """Maximize the exact significance level over the candidate classes."""
    return worst_case_grid(test, t_obs, model, [model.gamma], critical, strategy)[0]


def worst_case_grid(
    test: TestStatistic,
    t_obs: ContingencyTable,
    model: SensitivityModel,
    gammas: Sequence[float],
    critical: float | None = None,
    strategy: str = "auto",
) -> list[WorstCaseResult]:
    """Worst case at each gamma in one enumeration (the aggregate is gamma-free)."""
    m = t_obs.margins()
    if critical is None:
        critical = test(t_obs)
    if strategy == "auto":
        strategy = _pick_strategy(test, model, m)
    if strategy == "signscore":
        if m.J != 2:
            raise SensitivityError("sign-score strategy requires a binary outcome")
        if not model.monotone_bias():
            raise SensitivityError("sign-score strategy requires monotone bias")
        return [
            _signscore_result(test, t_obs, model.with_gamma(g), critical, m)
            for g in gammas
        ]
    if not model.is_binary:
        raise SensitivityError("candidate scans require a binary delta model")
    if strategy == "ordinal":
        if test.family not in (TestFamily.ORDINAL, TestFamily.SIGN_SCORE):
            raise SensitivityError("ordinal strategy needs an ordinal test statistic")
        if not model.monotone_bias():
            raise SensitivityError("ordinal strategy requires non-decreasing delta")
        cands = list(candidates_ordinal(m))
    elif strategy == "pi":
        cands = list(candidates_pi(m))
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    agg = RejectionAggregate(m, test, critical, model.delta)  # type: ignore[arg-type]
    # candidate streams are lexicographically ascending, so keeping the first
    # maximizer (up to _TIE_REL jitter) realizes the lex-smallest tie-break
    # while the reported p stays equal to alpha at the reported class
    best_p = [-1.0] * len(gammas)
    best_c: list[ConfounderClass | None] = [None] * len(gammas)
    for cand in cands:
        vals = agg.alpha_grid(cand, gammas)
        for k, v in enumerate(vals):
            if v > best_p[k] * (1.0 + _TIE_REL):
                best_p[k] = v
                best_c[k] = cand
    return [
        WorstCaseResult(
            pvalue=min(p, 1.0),
            argmax_class=c,  # type: ignore[arg-type]
            candidates_scanned=len(cands),
            family_used=test.family,
        )
        for p, c in zip(best_p, best_c)
    ]


def worst_case_multi_delta(
    test: TestStatistic,
    t_obs: ContingencyTable,
    gamma: float,
    deltas: Sequence[Sequence[int]],
    critical: float | None = None,
    strategy: str = "auto",
) -> MultiDeltaResult:
    """Max worst-case p over several candidate bias vectors; per-delta maxima combine."""
    if not deltas:
        raise ValueError("at least one delta is required")
    results = []
    for d in deltas:
        model = SensitivityModel(gamma=gamma, delta=tuple(int(v) for v in d))
        results.append((tuple(int(v) for v in d),
                        worst_case_pvalue(test, t_obs, model, critical, strategy)))
    best_delta, best = max(results, key=lambda dr: (dr[1].pvalue, tuple(-v for v in dr[0])))
    return MultiDeltaResult(
        pvalue=best.pvalue,
        delta=best_delta,
        per_delta=tuple(r for _, r in results),
    )
