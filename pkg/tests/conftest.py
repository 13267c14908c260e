"""Shared fixtures and slow-reference helpers for the test suite."""

import numpy as np
import pytest

from epiwalk import (
    ContingencyTable,
    MarkovBasis,
    TableShape,
    builtin_no3way_basis,
    chi_square,
    enumerate_fiber,
    expected_counts,
    margins,
    no_top_interaction_model,
)

# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion, printed at the end
# of the run regardless of output capture

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE.append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# table factories and slow oracles


def random_table(rng: np.random.Generator, shape=(3, 3, 2), total=25) -> ContingencyTable:
    """Multinomial table with cell probabilities drawn from a flat Dirichlet."""
    n_cells = int(np.prod(shape))
    probs = rng.dirichlet(np.ones(n_cells))
    counts = rng.multinomial(total, probs)
    return ContingencyTable(TableShape(tuple(shape)), counts)


def exact_fiber_p(table: ContingencyTable, model=None, cap=60):
    """Exhaustive-enumeration p-value, the slow reference for the walker.

    Uses the same tie rule as the sampler: a fiber table counts when its
    chi-square is at or above the observed value (tiny slack for float
    noise in the summation order).
    """
    if model is None:
        model = no_top_interaction_model(table.shape)
    expected = expected_counts(table, model)
    obs = chi_square(table, expected)
    fiber = enumerate_fiber(margins(table, model), cap=cap)
    p = 0.0
    for t, w in zip(fiber.tables, fiber.weights):
        if chi_square(t, expected) >= obs - 1e-9 * max(1.0, obs):
            p += float(w)
    return min(p, 1.0), fiber


def contrast_moves_4way() -> np.ndarray:
    """Adjacent-pair four-way contrast moves on a 3x3x3x2 table.

    Each move is an outer product of one-dimensional contrasts, so every
    single-axis sum vanishes and all four three-variable margins are
    preserved.  Eight moves, matching the dimension of the model's
    integer kernel.
    """
    moves = []
    for i in range(2):
        for j in range(2):
            for k in range(2):
                m = np.zeros((3, 3, 3, 2), dtype=np.int64)
                for a in range(2):
                    for b in range(2):
                        for c in range(2):
                            for d in range(2):
                                m[i + a, j + b, k + c, d] = (-1) ** (a + b + c + d)
                moves.append(m.flatten(order="F"))
    return np.array(moves, dtype=np.int64)


@pytest.fixture(scope="session")
def no3way_basis() -> MarkovBasis:
    return builtin_no3way_basis()


@pytest.fixture(scope="session")
def basis_4way() -> MarkovBasis:
    model = no_top_interaction_model(TableShape((3, 3, 3, 2)))
    return MarkovBasis(model, contrast_moves_4way())
