"""Embedded datasets, available to the CLI as ``builtin:<name>``."""

from __future__ import annotations

import numpy as np

from .fit import ContingencyTable

# Wisconsin Longitudinal Study, 1,676 respondents; all variables binary.
# X: family income in 1957 above median, E: education beyond high school,
# M: employer has more than 100 employees, Y: income in 1992 above median.
# Axes are (X, E, M, Y).
_WLS = np.zeros((2, 2, 2, 2))
_WLS[0, 0] = [[241, 162], [53, 39]]
_WLS[1, 0] = [[161, 148], [33, 29]]
_WLS[0, 1] = [[82, 176], [13, 16]]
_WLS[1, 1] = [[113, 364], [16, 30]]

DATASETS = {"wls": ContingencyTable(("X", "E", "M", "Y"), _WLS)}


def dataset(name: str) -> ContingencyTable:
    try:
        t = DATASETS[name]
    except KeyError:
        raise KeyError(f"no builtin dataset {name!r}; choose from {sorted(DATASETS)}") from None
    return ContingencyTable(t.variables, t.counts.copy())
