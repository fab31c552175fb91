"""Domain types for multi-population trial designs.

A trial partitions patients into ``n`` disjoint subgroups; each target
population is a union of subgroups (an index set over ``1..n``), tests one
experimental treatment against the shared control, and populations may
overlap.  All procedures in this package consume data only through the
per-cell sufficient statistics stored in :class:`TrialSummary` (cell sizes,
cell means, centered sums of squares), which is what keeps large simulation
grids tractable.

Subgroups are 1-based in the public API.  Cell sizes are floats: observed
layouts are integer-valued, but bootstrap resampling and exactly balanced
simulation layouts produce fractional effective sizes on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import DegenerateSampleError, DesignError, InsufficientDataError

__all__ = [
    "TrialDesign",
    "PopulationModel",
    "SampleLayout",
    "TrialSummary",
    "TestResult",
    "true_effect",
    "population_mean",
    "pooled_variance",
]

Cell = tuple[int, str]


@dataclass(frozen=True)
class TrialDesign:
    """Combinatorial skeleton: subgroups, populations, treatment labels.

    Parameters
    ----------
    n_subgroups : int
        Number of disjoint subgroups, labelled ``1..n``.
    populations : tuple of frozenset of int
        Ordered collection of index sets; no duplicates, all nonempty.
    treatments : tuple of str
        Experimental treatment label per population.  Populations testing
        the same drug share a label; the correlation formulas only ever
        need the "same treatment?" predicate.
    control : str
        Reserved control label, shared by all subgroups.
    """

    n_subgroups: int
    populations: tuple[frozenset[int], ...]
    treatments: tuple[str, ...]
    control: str = "C"

    def __post_init__(self):
        pops = tuple(frozenset(int(i) for i in p) for p in self.populations)
        object.__setattr__(self, "populations", pops)
        object.__setattr__(self, "treatments", tuple(str(t) for t in self.treatments))
        if self.n_subgroups < 1:
            raise DesignError("need at least one subgroup")
        if not pops:
            raise DesignError("need at least one target population")
        if len(self.treatments) != len(pops):
            raise DesignError("one treatment label per population required")
        if len(set(pops)) != len(pops):
            raise DesignError("duplicate population index sets")
        for p in pops:
            if not p:
                raise DesignError("empty population index set")
            if not p <= set(range(1, self.n_subgroups + 1)):
                raise DesignError(f"population {sorted(p)} outside 1..{self.n_subgroups}")
        if self.control in self.treatments:
            raise DesignError("control label reused as an experimental label")

    @property
    def n_populations(self) -> int:
        return len(self.populations)

    def treatments_in(self, subgroup: int) -> tuple[str, ...]:
        """Treatment set of one subgroup: its experimental labels plus control."""
        labels = sorted({t for p, t in zip(self.populations, self.treatments) if subgroup in p})
        return tuple(labels) + (self.control,)

    def cells(self) -> tuple[Cell, ...]:
        """All (subgroup, treatment) cells in canonical order.

        Order is by subgroup, experimental labels alphabetically, control
        last.  This order fixes the coordinate system of the null-space
        projection and of serialized outputs.
        """
        out: list[Cell] = []
        for i in range(1, self.n_subgroups + 1):
            out.extend((i, t) for t in self.treatments_in(i))
        return tuple(out)

    def population_index(self, members) -> int:
        """Position of an index set in the collection."""
        key = frozenset(int(i) for i in members)
        try:
            return self.populations.index(key)
        except ValueError:
            raise DesignError(f"unknown population {sorted(key)}") from None

    def population_label(self, k: int) -> str:
        return "+".join(str(i) for i in sorted(self.populations[k]))


@dataclass(frozen=True)
class PopulationModel:
    """True prevalences, cell means, and cell variances.

    ``prevalences`` lives on the open simplex; every (subgroup, treatment)
    cell implied by the design must have a mean and a positive variance.
    """

    prevalences: np.ndarray
    cell_means: Mapping[Cell, float]
    cell_variances: Mapping[Cell, float]

    def __post_init__(self):
        prev = np.asarray(self.prevalences, dtype=float)
        object.__setattr__(self, "prevalences", prev)
        object.__setattr__(self, "cell_means", dict(self.cell_means))
        object.__setattr__(self, "cell_variances", dict(self.cell_variances))
        if np.any(prev <= 0) or abs(prev.sum() - 1.0) > 1e-12:
            raise DesignError("prevalences must be strictly positive and sum to 1")
        if any(v <= 0 for v in self.cell_variances.values()):
            raise DesignError("cell variances must be strictly positive")

    @classmethod
    def homogeneous(cls, design: TrialDesign, prevalences, cell_means, sigma2: float):
        """Model with one shared residual variance for every cell."""
        if sigma2 <= 0:
            raise DesignError("sigma2 must be positive")
        variances = {c: float(sigma2) for c in design.cells()}
        return cls(prevalences, cell_means, variances)

    def validate_against(self, design: TrialDesign):
        if len(self.prevalences) != design.n_subgroups:
            raise DesignError("prevalence vector length != number of subgroups")
        for c in design.cells():
            if c not in self.cell_means or c not in self.cell_variances:
                raise DesignError(f"missing mean/variance for cell {c}")


@dataclass(frozen=True)
class SampleLayout:
    """Per-cell sample sizes with derived totals and allocation rates."""

    cell_sizes: Mapping[Cell, float]

    def __post_init__(self):
        sizes = {k: float(v) for k, v in self.cell_sizes.items()}
        object.__setattr__(self, "cell_sizes", sizes)
        if any(v < 0 for v in sizes.values()):
            raise DesignError("cell sizes must be nonnegative")

    @property
    def total(self) -> float:
        return sum(self.cell_sizes.values())

    def size(self, subgroup: int, treatment: str) -> float:
        return self.cell_sizes.get((subgroup, treatment), 0.0)

    def stratum_size(self, subgroup: int) -> float:
        return sum(v for (i, _), v in self.cell_sizes.items() if i == subgroup)

    def population_size(self, members, treatment: str | None = None) -> float:
        members = set(members)
        if treatment is None:
            return sum(v for (i, _), v in self.cell_sizes.items() if i in members)
        return sum(self.size(i, treatment) for i in members)

    def allocation_rate(self, subgroup: int, treatment: str) -> float:
        total = self.stratum_size(subgroup)
        if total <= 0:
            raise DegenerateSampleError(f"subgroup {subgroup} has no patients")
        return self.size(subgroup, treatment) / total


@dataclass(frozen=True)
class TrialSummary:
    """Sufficient statistics: layout, cell means, centered sums of squares.

    ``cell_ss`` must be 0 for cells with at most one observation.  When the
    residual variance is treated as known, set ``known_variance`` and the
    pooled estimate is bypassed.
    """

    layout: SampleLayout
    cell_means: Mapping[Cell, float]
    cell_ss: Mapping[Cell, float]
    known_variance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "cell_means", {k: float(v) for k, v in self.cell_means.items()})
        object.__setattr__(self, "cell_ss", {k: float(v) for k, v in self.cell_ss.items()})
        if self.known_variance is not None and self.known_variance <= 0:
            raise DesignError("known_variance must be positive")
        for cell, ss in self.cell_ss.items():
            if ss < 0:
                raise DesignError(f"negative sum of squares for cell {cell}")
            if self.layout.size(*cell) <= 1 and ss != 0.0:
                raise DesignError(f"cell {cell} has <= 1 observation but nonzero ss")


@dataclass(frozen=True)
class TestResult:
    """Per-hypothesis outcome of one procedure at one alpha level.

    All arrays are aligned with ``design.populations``.  ``critical_values``
    or ``adjusted_p`` may be absent depending on the calibration, and when
    both are present the rejection flag agrees with both (up to ties at
    empirical quantiles).
    """

    method: str
    alpha: float
    statistics: np.ndarray
    estimates: np.ndarray
    standard_errors: np.ndarray
    reject: np.ndarray
    critical_values: np.ndarray | None = None
    adjusted_p: np.ndarray | None = None
    ci_lower: np.ndarray | None = None

    def __post_init__(self):
        for name in ("statistics", "estimates", "standard_errors"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "reject", np.asarray(self.reject, dtype=bool))
        for name in ("critical_values", "adjusted_p", "ci_lower"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float))
        if self.adjusted_p is not None:
            if np.any(self.adjusted_p < 0) or np.any(self.adjusted_p > 1):
                raise ValueError("adjusted p-values must lie in [0, 1]")


# ---------------------------------------------------------------------------
# operations


def true_effect(design: TrialDesign, model: PopulationModel, members) -> float:
    """Prevalence-weighted treatment effect of a population's experimental arm.

    Returns ``sum_{i in I} (pi_i / pi_I) * (mu_{i,E_I} - mu_{i,C})``.
    """
    k = design.population_index(members)
    pop = sorted(design.populations[k])
    label = design.treatments[k]
    prev = model.prevalences
    pi_pop = sum(prev[i - 1] for i in pop)
    return float(
        sum(
            prev[i - 1] / pi_pop * (model.cell_means[(i, label)] - model.cell_means[(i, design.control)])
            for i in pop
        )
    )


def population_mean(summary: TrialSummary, members, treatment: str) -> float:
    """Sample-size-weighted mean response of one population under one arm."""
    members = sorted(set(members))
    n_pop = summary.layout.population_size(members, treatment)
    if n_pop < 1:
        raise DegenerateSampleError(
            f"population {members} has no observations under treatment {treatment!r}"
        )
    return float(
        sum(
            summary.layout.size(i, treatment) * summary.cell_means[(i, treatment)]
            for i in members
            if summary.layout.size(i, treatment) > 0
        )
        / n_pop
    )


def pooled_variance(summary: TrialSummary) -> tuple[float, float]:
    """Pooled residual variance across all nonempty cells, with its df.

    Returns ``(sum of cell ss) / (N - s)`` and ``df = N - s``, where ``s``
    counts the cells holding at least one observation.
    """
    sizes = summary.layout.cell_sizes
    n_total = sum(sizes.values())
    s = sum(1 for v in sizes.values() if v >= 1)
    df = n_total - s
    if df <= 0:
        raise InsufficientDataError(f"cannot pool variance with N={n_total} over {s} cells")
    ss_total = sum(summary.cell_ss.get(c, 0.0) for c in sizes)
    return ss_total / df, df


# ---------------------------------------------------------------------------
# flat array view used by the statistic kernels


@dataclass(frozen=True)
class DesignIndex:
    """Array-indexing companion of a TrialDesign (internal).

    Cells are flattened in the design's canonical order; populations carry
    the index lists of their experimental and control cells so statistic
    kernels can gather from ``(..., n_cells)`` arrays.
    """

    design: TrialDesign
    cells: tuple[Cell, ...]
    cell_pos: dict[Cell, int] = field(repr=False)
    cell_subgroup: np.ndarray = field(repr=False)  # 0-based, (n_cells,)
    pop_members: tuple[np.ndarray, ...] = field(repr=False)  # 0-based subgroups
    pop_ecells: tuple[np.ndarray, ...] = field(repr=False)
    pop_ccells: tuple[np.ndarray, ...] = field(repr=False)
    same_treatment: np.ndarray = field(repr=False)  # (n_pops, n_pops) bool

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_pops(self) -> int:
        return len(self.pop_ecells)


@lru_cache(maxsize=64)
def design_index(design: TrialDesign) -> DesignIndex:
    cells = design.cells()
    pos = {c: j for j, c in enumerate(cells)}
    members, ecells, ccells = [], [], []
    for pop, label in zip(design.populations, design.treatments):
        subs = np.array(sorted(pop), dtype=np.intp)
        members.append(subs - 1)
        ecells.append(np.array([pos[(i, label)] for i in subs], dtype=np.intp))
        ccells.append(np.array([pos[(i, design.control)] for i in subs], dtype=np.intp))
    same = np.array(
        [[ti == tj for tj in design.treatments] for ti in design.treatments], dtype=bool
    )
    return DesignIndex(
        design=design,
        cells=cells,
        cell_pos=pos,
        cell_subgroup=np.array([i - 1 for i, _ in cells], dtype=np.intp),
        pop_members=tuple(members),
        pop_ecells=tuple(ecells),
        pop_ccells=tuple(ccells),
        same_treatment=same,
    )


def summary_arrays(summary: TrialSummary, design: TrialDesign):
    """Flatten a summary into (cell_sizes, cell_means, cell_ss) arrays."""
    idx = design_index(design)
    sizes = np.array([summary.layout.size(*c) for c in idx.cells], dtype=float)
    means = np.array([summary.cell_means.get(c, np.nan) for c in idx.cells], dtype=float)
    ss = np.array([summary.cell_ss.get(c, 0.0) for c in idx.cells], dtype=float)
    return idx, sizes, means, ss
