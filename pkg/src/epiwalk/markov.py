"""Markov bases: integer moves that preserve a model's margins.

A move is a flat integer vector over the cells of a table whose
projection onto every facet of the associated model is identically
zero, so adding or subtracting it never changes the sufficient
statistics.  A basis is a finite set of such moves; the one shipped
here connects the fibers of the no-three-way-interaction model on a
3 x 3 x 2 table.  Larger bases (different nulls, four-way tables) can
be computed externally and loaded from text files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tables import (
    ContingencyTable,
    LogLinearModel,
    TableShape,
    facet_projection,
    no_top_interaction_model,
)

__all__ = [
    "BasisError",
    "BasisCheck",
    "MarkovBasis",
    "builtin_no3way_basis",
    "validate_basis",
    "read_moves",
    "load_basis",
    "save_basis",
    "apply_move",
]


class BasisError(ValueError):
    """A candidate basis fails a structural requirement."""


# Moves of the pairwise-margins null on a 3 x 3 x 2 table, one row per
# move in flat cell order (first axis fastest).  Each row sums to zero
# on every pairwise margin; nine moves touch 8 cells, six touch 12.
_NO3WAY_MOVES = np.array(
    [
        [0, 0, 0, 1, 0, -1, -1, 0, 1, 0, 0, 0, -1, 0, 1, 1, 0, -1],
        [0, 0, 0, 0, 1, -1, 0, -1, 1, 0, 0, 0, 0, -1, 1, 0, 1, -1],
        [1, 0, -1, 0, 0, 0, -1, 0, 1, -1, 0, 1, 0, 0, 0, 1, 0, -1],
        [0, 1, -1, 0, 0, 0, 0, -1, 1, 0, -1, 1, 0, 0, 0, 0, 1, -1],
        [0, 0, 0, 1, -1, 0, -1, 1, 0, 0, 0, 0, -1, 1, 0, 1, -1, 0],
        [1, -1, 0, 0, 0, 0, -1, 1, 0, -1, 1, 0, 0, 0, 0, 1, -1, 0],
        [1, -1, 0, -1, 1, 0, 0, 0, 0, -1, 1, 0, 1, -1, 0, 0, 0, 0],
        [1, 0, -1, -1, 0, 1, 0, 0, 0, -1, 0, 1, 1, 0, -1, 0, 0, 0],
        [0, 1, -1, 0, -1, 1, 0, 0, 0, 0, -1, 1, 0, 1, -1, 0, 0, 0],
        [0, 1, -1, -1, 0, 1, 1, -1, 0, 0, -1, 1, 1, 0, -1, -1, 1, 0],
        [1, 0, -1, 0, -1, 1, -1, 1, 0, -1, 0, 1, 0, 1, -1, 1, -1, 0],
        [-1, 1, 0, 1, 0, -1, 0, -1, 1, 1, -1, 0, -1, 0, 1, 0, 1, -1],
        [1, -1, 0, 0, 1, -1, -1, 0, 1, -1, 1, 0, 0, -1, 1, 1, 0, -1],
        [1, 0, -1, -1, 1, 0, 0, -1, 1, -1, 0, 1, 1, -1, 0, 0, 1, -1],
        [0, 1, -1, 1, -1, 0, -1, 0, 1, 0, -1, 1, -1, 1, 0, 1, 0, -1],
    ],
    dtype=np.int64,
)


def _axis_labels(n_axes: int) -> list[str]:
    """Axis names for error messages: X, Y, ... with D for the last axis."""
    if n_axes == 1:
        return ["D"]
    pool = ["X", "Y", "Z", "W", "V", "U"]
    if n_axes - 1 <= len(pool):
        heads = pool[: n_axes - 1]
    else:
        heads = [f"A{i}" for i in range(n_axes - 1)]
    return heads + ["D"]


def _facet_name(facet: tuple[int, ...], n_axes: int) -> str:
    labels = _axis_labels(n_axes)
    return "{" + ",".join(labels[a] for a in facet) + "}"


@dataclass
class BasisCheck:
    """Validation report for a candidate set of moves."""

    ok: bool
    move_ok: list[bool]
    messages: list[str]
    warnings: list[str]


def validate_basis(moves: np.ndarray | "MarkovBasis", model: LogLinearModel | None = None) -> BasisCheck:
    """Check that every move annihilates every facet margin of the model.

    Also rejects all-zero moves and duplicate moves (up to sign).  Pass
    either a raw (n_moves, n_cells) integer array plus a model, or an
    already built MarkovBasis (whose own model is then used).
    """
    if isinstance(moves, MarkovBasis):
        model = moves.model
        arr = moves.moves
    else:
        if model is None:
            raise ValueError("a model is required to validate raw moves")
        arr = np.asarray(moves, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr[None, :]
    shape = model.shape
    messages: list[str] = []
    warnings: list[str] = []
    if arr.ndim != 2 or (arr.size and arr.shape[1] != shape.n_cells):
        raise BasisError(
            f"moves must be a (n_moves, {shape.n_cells}) array for shape {shape.axis_sizes}"
        )
    n = arr.shape[0]
    move_ok = [True] * n
    if n == 0:
        warnings.append("basis is empty; the walk it drives cannot move")
        return BasisCheck(True, move_ok, messages, warnings)

    for i in range(n):
        row = arr[i]
        if not row.any():
            move_ok[i] = False
            messages.append(f"move {i} is identically zero")
            continue
        bad = [
            _facet_name(f, shape.n_axes)
            for f in model.facets
            if facet_projection(row, f, shape).any()
        ]
        if bad:
            move_ok[i] = False
            messages.append(f"move {i} does not preserve facet margins {', '.join(bad)}")

    # a repeated move only reweights the proposal (still symmetric), so
    # this is worth flagging but not a failure
    seen: dict[bytes, int] = {}
    for i in range(n):
        row = arr[i]
        canon = row if (row.tobytes() >= (-row).tobytes()) else -row
        key = canon.tobytes()
        if key in seen:
            warnings.append(f"move {i} duplicates move {seen[key]} (up to sign)")
        else:
            seen[key] = i

    return BasisCheck(all(move_ok), move_ok, messages, warnings)


class MarkovBasis:
    """A validated set of margin-preserving moves for one model."""

    def __init__(self, model: LogLinearModel, moves: np.ndarray, validate: bool = True):
        arr = np.asarray(moves, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or (arr.size and arr.shape[1] != model.shape.n_cells):
            raise BasisError(
                f"moves must be (n_moves, {model.shape.n_cells}) for shape {model.shape.axis_sizes}"
            )
        if validate:
            check = validate_basis(arr, model)
            if not check.ok:
                raise BasisError("invalid basis: " + "; ".join(check.messages))
        arr = arr.copy()
        arr.flags.writeable = False
        self.model = model
        self.moves = arr

    def __len__(self) -> int:
        return self.moves.shape[0]

    def __repr__(self) -> str:
        return (
            f"MarkovBasis({len(self)} moves, shape={self.model.shape.axis_sizes}, "
            f"facets={self.model.facets})"
        )


def builtin_no3way_basis() -> MarkovBasis:
    """The 15-move basis for the no-three-way-interaction null on 3 x 3 x 2.

    This basis connects every fiber of the model: any two tables with
    the same three pairwise margins are joined by a path of these moves
    that stays nonnegative.
    """
    model = no_top_interaction_model(TableShape((3, 3, 2)))
    return MarkovBasis(model, _NO3WAY_MOVES)


def read_moves(path: str, shape: TableShape) -> np.ndarray:
    """Read raw moves from text: one move per line, whitespace-separated ints.

    Lines starting with '#' (and blank lines) are skipped.  Only the
    entry count per line is checked; use `validate_basis` or build a
    MarkovBasis to check the margin-preservation requirements.
    """
    rows: list[list[int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            bare = line.split("#", 1)[0].strip()
            if not bare:
                continue
            try:
                row = [int(t) for t in bare.split()]
            except ValueError:
                raise BasisError(f"{path}:{lineno}: non-integer token in move") from None
            if len(row) != shape.n_cells:
                raise BasisError(
                    f"{path}:{lineno}: move has {len(row)} entries, "
                    f"expected {shape.n_cells} for shape {shape.axis_sizes}"
                )
            rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(len(rows), shape.n_cells)


def load_basis(path: str, model: LogLinearModel) -> MarkovBasis:
    """Load and validate a basis file against a model.

    A BasisError names each offending move and the facets whose margins
    it fails to preserve.
    """
    return MarkovBasis(model, read_moves(path, model.shape))


def save_basis(basis: MarkovBasis, path: str) -> None:
    """Write a basis in the text format understood by `load_basis`."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(
            f"# {len(basis)} moves for shape {basis.model.shape.axis_sizes}, "
            f"facets {basis.model.facets}; flat cell order, first axis fastest\n"
        )
        for row in basis.moves:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def apply_move(table: ContingencyTable, move: np.ndarray, sign: int = 1) -> ContingencyTable | None:
    """Add `sign * move` to the table, or None if any cell would go negative."""
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    mv = np.asarray(move, dtype=np.int64).ravel()
    if mv.size != table.shape.n_cells:
        raise ValueError("move length does not match table cell count")
    new = table.counts + sign * mv
    if (new < 0).any():
        return None
    return ContingencyTable(table.shape, new)
