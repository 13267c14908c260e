"""Multi-way contingency tables and hierarchical log-linear models.

Tables are stored as flat integer vectors in a fixed cell order: the
*first* axis varies fastest.  For a table of shape (3, 3, 2) the flat
index of cell (i, j, k) is ``i + 3*j + 9*k``, so the vector reads
(n_111, n_211, n_311, n_121, ..., n_332).  All margins and expected
counts returned by this module use the same convention, restricted to
the axes of the facet in question.

A hierarchical model is given by its generating facets (maximal
interaction terms); the minimal sufficient statistics are the marginal
tables over those facets.  Expected counts under a model are computed
in closed form when the facet structure allows it and by iterative
proportional fitting otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TableShape",
    "ContingencyTable",
    "LogLinearModel",
    "MarginSet",
    "IPFResult",
    "Fiber",
    "InconsistentMarginsError",
    "FiberSizeError",
    "independence_model",
    "saturated_model",
    "no_top_interaction_model",
    "margins",
    "facet_projection",
    "closed_form_expected",
    "expected_counts",
    "ipf_fit",
    "chi_square",
    "enumerate_fiber",
    "read_table",
    "write_table",
]


class InconsistentMarginsError(ValueError):
    """Marginal tables that cannot all come from one table."""


class FiberSizeError(ValueError):
    """Fiber enumeration refused because the table total exceeds the cap."""


@dataclass(frozen=True)
class TableShape:
    """Axis sizes of a multi-way table, e.g. (3, 3, 2).

    Degenerate axes carry no information, so every size must be at
    least 2 and there must be at least two axes.
    """

    axis_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.axis_sizes)
        if len(sizes) < 2:
            raise ValueError("table must have at least two axes")
        if any(s < 2 for s in sizes):
            raise ValueError(f"every axis size must be at least 2, got {sizes}")
        object.__setattr__(self, "axis_sizes", sizes)

    @property
    def n_axes(self) -> int:
        return len(self.axis_sizes)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.axis_sizes))

    def flat_index(self, cell: Sequence[int]) -> int:
        """Flat position of a multi-index (first axis fastest)."""
        if len(cell) != self.n_axes:
            raise ValueError(f"cell {cell} has wrong arity for shape {self.axis_sizes}")
        idx = 0
        stride = 1
        for c, s in zip(cell, self.axis_sizes):
            if not 0 <= c < s:
                raise ValueError(f"cell {cell} out of bounds for shape {self.axis_sizes}")
            idx += c * stride
            stride *= s
        return idx


class ContingencyTable:
    """Nonnegative integer counts over the cells of a TableShape."""

    __slots__ = ("shape", "counts")

    def __init__(self, shape: TableShape, counts: Sequence[int] | np.ndarray):
        arr = np.asarray(counts, dtype=np.int64)
        if arr.ndim != 1:
            raise ValueError("counts must be a flat vector; use from_array for nd input")
        if arr.size != shape.n_cells:
            raise ValueError(
                f"expected {shape.n_cells} cells for shape {shape.axis_sizes}, got {arr.size}"
            )
        if (arr < 0).any():
            raise ValueError("cell counts must be nonnegative")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "counts", arr)

    def __setattr__(self, name: str, value) -> None:
        raise AttributeError("ContingencyTable is immutable")

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ContingencyTable":
        """Build from an nd array, flattening with the first axis fastest."""
        arr = np.asarray(array)
        shape = TableShape(tuple(arr.shape))
        return cls(shape, arr.ravel(order="F"))

    def to_array(self) -> np.ndarray:
        """Counts as an nd array indexed by the original multi-indices."""
        return self.counts.reshape(self.shape.axis_sizes, order="F").copy()

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, cell: Sequence[int]) -> int:
        return int(self.counts[self.shape.flat_index(cell)])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContingencyTable):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.counts, other.counts))

    def __hash__(self) -> int:
        return hash((self.shape, self.counts.tobytes()))

    def __repr__(self) -> str:
        return f"ContingencyTable(shape={self.shape.axis_sizes}, total={self.total})"


def _canonical_facet(facet: Iterable[int], n_axes: int) -> tuple[int, ...]:
    f = tuple(sorted(int(a) for a in facet))
    if len(f) == 0:
        raise ValueError("facet must name at least one axis")
    if len(set(f)) != len(f):
        raise ValueError(f"facet {f} repeats an axis")
    if f[0] < 0 or f[-1] >= n_axes:
        raise ValueError(f"facet {f} out of range for {n_axes} axes")
    return f


@dataclass(frozen=True)
class LogLinearModel:
    """Hierarchical log-linear model given by its generating facets.

    Each facet is a set of axis indices; together the facets must cover
    every axis, and no facet may be contained in another.  Facets are
    stored in canonical (lexicographic) order with the axes inside each
    facet sorted, so models compare equal regardless of how their
    facets were listed.
    """

    shape: TableShape
    facets: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        canon = tuple(
            sorted(_canonical_facet(f, self.shape.n_axes) for f in self.facets)
        )
        if len(canon) == 0:
            raise ValueError("model needs at least one facet")
        covered = set().union(*(set(f) for f in canon))
        if covered != set(range(self.shape.n_axes)):
            missing = sorted(set(range(self.shape.n_axes)) - covered)
            raise ValueError(f"facets leave axes {missing} uncovered")
        for i, a in enumerate(canon):
            for j, b in enumerate(canon):
                if i != j and set(a) <= set(b):
                    raise ValueError(f"facet {a} is contained in facet {b}")
        object.__setattr__(self, "facets", canon)


def independence_model(shape: TableShape) -> LogLinearModel:
    """Complete independence: one singleton facet per axis."""
    return LogLinearModel(shape, tuple((a,) for a in range(shape.n_axes)))


def saturated_model(shape: TableShape) -> LogLinearModel:
    """The unrestricted model: a single facet holding every axis."""
    return LogLinearModel(shape, (tuple(range(shape.n_axes)),))


def no_top_interaction_model(shape: TableShape) -> LogLinearModel:
    """Drop only the highest-order interaction: all (d-1)-subsets as facets.

    For a three-way table this is the no-three-way-interaction model
    whose sufficient statistics are the three pairwise margins.
    """
    d = shape.n_axes
    if d < 2:
        raise ValueError("need at least two axes to drop the top interaction")
    facets = tuple(tuple(a for a in range(d) if a != skip) for skip in reversed(range(d)))
    return LogLinearModel(shape, facets)


def facet_projection(flat: np.ndarray, facet: Sequence[int], shape: TableShape) -> np.ndarray:
    """Sum a flat cell vector onto a facet, returned flat in the same order.

    Works for any numeric vector (moves included), not just counts.
    """
    facet = _canonical_facet(facet, shape.n_axes)
    nd = np.asarray(flat).reshape(shape.axis_sizes, order="F")
    off = tuple(a for a in range(shape.n_axes) if a not in facet)
    proj = nd.sum(axis=off) if off else nd
    return np.asarray(proj).ravel(order="F")


def _expand_to_full(margin_flat: np.ndarray, facet: tuple[int, ...], shape: TableShape) -> np.ndarray:
    """Broadcast a facet margin back over the full table shape."""
    sizes = tuple(shape.axis_sizes[a] for a in facet)
    nd = np.asarray(margin_flat).reshape(sizes, order="F")
    off = tuple(a for a in range(shape.n_axes) if a not in facet)
    return np.expand_dims(nd, axis=off) if off else nd


@dataclass(frozen=True, eq=False)
class MarginSet:
    """Marginal tables of one model, aligned with the model's facets.

    Each entry is the margin over one facet's axes, stored flat with
    the facet's first axis varying fastest (same cell order as the full
    table).  Margins computed from a ContingencyTable are integer
    arrays; real valued targets are also accepted so that fitted
    tables can be refit.  All marginal tables must share one grand
    total.
    """

    model: LogLinearModel
    tables: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.tables) != len(self.model.facets):
            raise ValueError("one marginal table required per facet")
        shape = self.model.shape
        fixed = []
        for facet, t in zip(self.model.facets, self.tables):
            # multi-dim targets follow the table convention: first axis fastest
            arr = np.asarray(t).ravel(order="F")
            arr = arr.astype(np.int64) if arr.dtype.kind in "iub" else arr.astype(np.float64)
            want = int(np.prod([shape.axis_sizes[a] for a in facet]))
            if arr.size != want:
                raise ValueError(f"margin for facet {facet} has {arr.size} cells, expected {want}")
            if (arr < 0).any():
                raise ValueError(f"margin for facet {facet} has negative entries")
            fixed.append(arr.copy())
        totals = [t.sum() for t in fixed]
        if max(totals) - min(totals) > 1e-9 * max(1.0, max(totals)):
            raise InconsistentMarginsError(f"grand totals differ across margins: {totals}")
        for t in fixed:
            t.flags.writeable = False
        object.__setattr__(self, "tables", tuple(fixed))

    @property
    def total(self) -> float:
        return float(self.tables[0].sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MarginSet):
            return NotImplemented
        return self.model == other.model and all(
            np.array_equal(a, b) for a, b in zip(self.tables, other.tables)
        )


def margins(table: ContingencyTable, model: LogLinearModel) -> MarginSet:
    """The sufficient statistics of `table` under `model`."""
    if table.shape != model.shape:
        raise ValueError("table shape does not match model shape")
    projs = tuple(
        facet_projection(table.counts, f, table.shape).astype(np.int64) for f in model.facets
    )
    return MarginSet(model, projs)


def _pairwise_disjoint(facets: Sequence[tuple[int, ...]]) -> bool:
    seen: set[int] = set()
    for f in facets:
        if seen & set(f):
            return False
        seen |= set(f)
    return True


def closed_form_expected(table: ContingencyTable, model: LogLinearModel) -> np.ndarray | None:
    """Expected counts by direct margin formulas, or None if not available.

    Covers the saturated model (observed counts), any model with
    pairwise disjoint facets (product of margins over n^(k-1)), and any
    two-facet model (product of the two margins over their shared
    margin).  Zero margins contribute zero expected cells.
    """
    if table.shape != model.shape:
        raise ValueError("table shape does not match model shape")
    shape = model.shape
    facets = model.facets
    n = float(table.total)

    if len(facets) == 1:
        return table.counts.astype(np.float64)

    if _pairwise_disjoint(facets):
        if n == 0.0:
            return np.zeros(shape.n_cells)
        out = np.ones(shape.axis_sizes)
        for f in facets:
            m = facet_projection(table.counts, f, shape).astype(np.float64)
            out = out * _expand_to_full(m, f, shape)
        out /= n ** (len(facets) - 1)
        return out.ravel(order="F")

    if len(facets) == 2:
        a, b = facets
        shared = tuple(sorted(set(a) & set(b)))
        ma = _expand_to_full(facet_projection(table.counts, a, shape).astype(np.float64), a, shape)
        mb = _expand_to_full(facet_projection(table.counts, b, shape).astype(np.float64), b, shape)
        if shared:
            ms = _expand_to_full(
                facet_projection(table.counts, shared, shape).astype(np.float64), shared, shape
            )
        else:
            ms = np.full((1,) * shape.n_axes, n)
        num = ma * mb
        out = np.divide(num, ms, out=np.zeros(np.broadcast_shapes(num.shape, ms.shape)), where=ms > 0)
        return np.broadcast_to(out, shape.axis_sizes).ravel(order="F").copy()

    return None


@dataclass(frozen=True)
class IPFResult:
    """Outcome of iterative proportional fitting."""

    table: np.ndarray
    iterations: int
    converged: bool
    max_deviation: float


def ipf_fit(target: MarginSet, tol: float = 1e-10, max_iter: int = 10000) -> IPFResult:
    """Fit expected counts to a set of target margins by cyclic scaling.

    Starts from the all-ones table and rescales one facet at a time so
    its margin matches the target; one iteration is a full sweep over
    the facets.  Convergence is declared when every fitted margin is
    within `tol` of its target in max norm.  A non-convergent fit is
    returned with `converged=False` rather than raised, so callers can
    decide how hard to fail.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    shape = target.model.shape
    facets = target.model.facets
    want = [t.reshape(tuple(shape.axis_sizes[a] for a in f), order="F") for f, t in zip(facets, target.tables)]

    fit = np.ones(shape.axis_sizes)
    max_dev = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        for f, w in zip(facets, want):
            off = tuple(a for a in range(shape.n_axes) if a not in f)
            cur = fit.sum(axis=off) if off else fit
            factor = np.divide(w, cur, out=np.zeros_like(cur), where=cur > 0)
            fit = fit * np.expand_dims(factor, axis=off) if off else fit * factor
        max_dev = 0.0
        for f, w in zip(facets, want):
            off = tuple(a for a in range(shape.n_axes) if a not in f)
            cur = fit.sum(axis=off) if off else fit
            max_dev = max(max_dev, float(np.abs(cur - w).max()))
        if max_dev <= tol:
            return IPFResult(fit.ravel(order="F"), iterations, True, max_dev)
    return IPFResult(fit.ravel(order="F"), iterations, False, max_dev)


def expected_counts(
    table: ContingencyTable,
    model: LogLinearModel,
    tol: float = 1e-10,
    max_iter: int = 10000,
) -> np.ndarray:
    """Expected cell counts for `table` under `model`, flat float vector.

    Uses a closed-form margin formula when the facet structure is
    decomposable enough, and iterative proportional fitting otherwise.
    """
    if table.total == 0:
        raise ValueError("cannot fit expected counts to an empty table")
    closed = closed_form_expected(table, model)
    if closed is not None:
        return closed
    return ipf_fit(margins(table, model), tol=tol, max_iter=max_iter).table


def chi_square(observed: ContingencyTable | np.ndarray, expected: np.ndarray) -> float:
    """Pearson chi-square of observed counts against expected counts.

    Cells with zero expectation contribute nothing when the observed
    count is also zero; a positive observed count on a zero expected
    cell is an error (the statistic would be infinite).
    """
    obs = np.asarray(getattr(observed, "counts", observed), dtype=np.float64).ravel()
    exp = np.asarray(expected, dtype=np.float64).ravel()
    if obs.size != exp.size:
        raise ValueError("observed and expected must have the same number of cells")
    if (exp < 0).any():
        raise ValueError("expected counts must be nonnegative")
    dead = exp == 0
    if (obs[dead] > 0).any():
        raise ValueError("positive observed count on a cell with zero expected count")
    keep = ~dead
    d = obs[keep] - exp[keep]
    return float((d * d / exp[keep]).sum())


@dataclass(frozen=True, eq=False)
class Fiber:
    """All tables sharing one set of margins, with their conditional law.

    `tables` has one row per table (flat cell order); `weights` is the
    hypergeometric probability of each table given the margins, i.e.
    proportional to 1 / prod(n_c!), normalized to sum to one.
    """

    tables: np.ndarray
    log_weights: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.tables.shape[0]


def enumerate_fiber(target: MarginSet, cap: int = 40) -> Fiber:
    """Enumerate every nonnegative integer table with the given margins.

    Exhaustive depth-first search over cells in canonical order, pruning
    on per-facet residuals; when a cell is the last unfilled cell of
    some facet entry, its value is forced.  Exact but exponential, so
    the grand total is capped (default 40).
    """
    shape = target.model.shape
    totals = [float(t.sum()) for t in target.tables]
    total = totals[0]
    if total != int(total) or any(
        float(v) != int(v) for t in target.tables for v in t
    ):
        raise ValueError("fiber enumeration needs integer margins")
    if total > cap:
        raise FiberSizeError(f"grand total {int(total)} exceeds enumeration cap {cap}")

    # One linear constraint per (facet, margin cell): the cells of the
    # full table projecting onto it must sum to the margin entry.
    n_cells = shape.n_cells
    constraints_of_cell: list[list[int]] = [[] for _ in range(n_cells)]
    residual: list[int] = []
    cells_left: list[int] = []
    cid = 0
    for facet, margin in zip(target.model.facets, target.tables):
        sizes = tuple(shape.axis_sizes[a] for a in facet)
        for flat in range(n_cells):
            cell = np.unravel_index(flat, shape.axis_sizes, order="F")
            sub = tuple(cell[a] for a in facet)
            k = cid + int(np.ravel_multi_index(sub, sizes, order="F"))
            constraints_of_cell[flat].append(k)
        for v in margin:
            residual.append(int(v))
            cells_left.append(0)
        cid += int(np.prod(sizes))
    for flat in range(n_cells):
        for k in constraints_of_cell[flat]:
            cells_left[k] += 1

    assignment = np.zeros(n_cells, dtype=np.int64)
    found: list[np.ndarray] = []

    def descend(cell: int) -> None:
        if cell == n_cells:
            if all(r == 0 for r in residual):
                found.append(assignment.copy())
            return
        ks = constraints_of_cell[cell]
        hi = min(residual[k] for k in ks)
        forced = None
        for k in ks:
            if cells_left[k] == 1:
                if forced is not None and forced != residual[k]:
                    return
                forced = residual[k]
        values = (forced,) if forced is not None else range(hi + 1)
        if forced is not None and forced > hi:
            return
        for v in values:
            assignment[cell] = v
            for k in ks:
                residual[k] -= v
                cells_left[k] -= 1
            descend(cell + 1)
            for k in ks:
                residual[k] += v
                cells_left[k] += 1
        assignment[cell] = 0

    descend(0)
    if not found:
        raise InconsistentMarginsError("no table has the requested margins")

    tables = np.array(found, dtype=np.int64)
    lg = np.vectorize(math.lgamma)(tables + 1.0)
    log_w = -lg.sum(axis=1)
    shifted = np.exp(log_w - log_w.max())
    weights = shifted / shifted.sum()
    return Fiber(tables=tables, log_weights=log_w, weights=weights)


def write_table(table: ContingencyTable, path: str) -> None:
    """Write a table as text: axis sizes on the first line, then counts.

    Counts follow in the flat cell order, whitespace separated, wrapped
    one slice of the first axis per line for readability.  Lines
    starting with '#' are comments.
    """
    sizes = table.shape.axis_sizes
    first = sizes[0]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# axis sizes, then cell counts with the first axis fastest\n")
        fh.write(" ".join(str(s) for s in sizes) + "\n")
        counts = table.counts
        for start in range(0, counts.size, first):
            fh.write(" ".join(str(int(c)) for c in counts[start : start + first]) + "\n")


def read_table(path: str) -> ContingencyTable:
    """Read a table written by `write_table` (or any same-format text).

    The first non-comment line holds the axis sizes; every following
    token is a cell count in flat order.
    """
    lines: list[list[str]] = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            bare = line.split("#", 1)[0].strip()
            if bare:
                lines.append(bare.split())
    if not lines:
        raise ValueError(f"{path}: no data lines")
    try:
        sizes = tuple(int(t) for t in lines[0])
        counts = [int(t) for row in lines[1:] for t in row]
    except ValueError:
        raise ValueError(f"{path}: non-integer token in table file") from None
    shape = TableShape(sizes)
    if len(counts) != shape.n_cells:
        raise ValueError(
            f"{path}: expected {shape.n_cells} counts for shape {sizes}, found {len(counts)}"
        )
    return ContingencyTable(shape, counts)
