"""Shared helpers: independent oracles used across test modules.

The table-law oracle computes the exact joint distribution of the table under
the sensitivity model at a confounder class by integer assignment counting
(per-column multinomial sweeps), independently of the production aggregation
order.  Moment and pmf checks compare against direct summation over this law.
"""

import math

import numpy as np
import pytest

from exactsens.exactdist import _table_q_weights
from exactsens.sensmodel import ConfounderClass, SensitivityModel
from exactsens.tables import Margins, enumerate_fixed_margin_array


def table_law(m: Margins, cclass: ConfounderClass, model: SensitivityModel):
    """(tables array, probability vector) of the exact table distribution."""
    tables = enumerate_fixed_margin_array(m)
    delta = model.delta
    logw = np.full(len(tables), -np.inf)
    for idx, tab in enumerate(tables):
        terms = []
        for q, w in _table_q_weights(tab.astype(np.int64), cclass.ubar, m.cols).items():
            if w:
                d = sum(dd * qq for dd, qq in zip(delta, q))
                terms.append(math.log2(w) * math.log(2.0) + model.gamma * d)
        if terms:
            logw[idx] = np.logaddexp.reduce(np.array(terms))
    logw -= logw.max()
    p = np.exp(logw)
    p /= p.sum()
    return tables, p


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
