"""Effective-multiplication accounting and portion-gate summaries.

Cost model for one cell evaluation with hidden size D:

* portion-gated cell: ``8*k**2 + 2*D`` with ``k = ceil(p*D)``; the eight
  gate products restricted to the active k x k block plus the two length-D
  dot products of the portion gate itself.
* ungated cell: ``8*D**2``.

Elementwise work and activations are not counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def active_width(p, size: int):
    k = np.ceil(np.asarray(p, dtype=np.float64) * size).astype(np.int64)
    return np.clip(k, 1, size)


def cell_mults(p, size: int):
    """Multiplications for one cell; ``p=None`` means an ungated cell.

    Vectorised over ``p``: returns an int64 array shaped like ``p``.
    """
    if p is None:
        return 8 * size * size
    k = active_width(p, size)
    return 8 * k * k + 2 * size


def effective_mults(trace, size: int) -> int:
    """Total multiplications of one :class:`StepTrace` (summed over cells and batch)."""
    total = 0
    for p in trace.p:
        total += int(np.sum(cell_mults(p, size)))
    return total


@dataclass(frozen=True)
class CostModel:
    size: int
    gated: bool

    def __call__(self, p=None):
        return cell_mults(p if self.gated else None, self.size)

    @property
    def full(self) -> int:
        return int(cell_mults(1.0 if self.gated else None, self.size))


def portion_mults(portions, size: int) -> int:
    """Total multiplications for an (n, cells, B) array of portion values."""
    return int(np.sum(cell_mults(portions, size)))


def portion_summary(reports, sweep_values=None):
    """Rows of ``(sweep value, mean converged p)``.

    ``reports`` is either a list of TrainReports (paired with ``sweep_values``)
    or a mapping ``value -> list of TrainReports``; with several reports per
    value (seeds) the means are averaged.
    """
    if isinstance(reports, dict):
        items = list(reports.items())
    else:
        if sweep_values is None:
            sweep_values = list(range(len(reports)))
        items = [(v, [r]) for v, r in zip(sweep_values, reports)]
    rows = []
    for value, group in items:
        if not isinstance(group, (list, tuple)):
            group = [group]
        ps = [r.converged_p for r in group]
        rows.append((value, float(np.mean(ps))))
    return rows
