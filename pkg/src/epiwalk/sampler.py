"""Exact conditional tests by Metropolis-Hastings walks over table fibers.

Conditioning on the sufficient statistics of a log-linear null leaves a
finite set of tables (the fiber) with a hypergeometric law proportional
to 1 / prod(n_c!).  The walk proposes a uniformly chosen basis move
with a uniform sign and accepts with probability
min(1, prod(n_c!) / prod(n'_c!)); proposals that would drive a cell
negative are rejected and the current table is recorded again, which
keeps the chain reversible with the correct stationary distribution.

The p-value of the observed table is the fraction of sampled tables
whose Pearson chi-square (against the expected counts fitted once from
the observed margins) is at least the observed statistic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .markov import MarkovBasis
from .tables import (
    ContingencyTable,
    closed_form_expected,
    ipf_fit,
    margins,
)

__all__ = [
    "ChainConfig",
    "ChainDiagnostics",
    "ExactTestResult",
    "NonConvergenceError",
    "ConvergenceWarning",
    "log_accept_ratio",
    "mh_step",
    "extended_fisher_test",
    "gelman_rubin",
    "autocorrelation",
    "write_traces",
]


class NonConvergenceError(RuntimeError):
    """Expected counts could not be fitted to the observed margins."""


class ConvergenceWarning(UserWarning):
    """The sampler ran but its own diagnostics look doubtful."""


@dataclass(frozen=True)
class ChainConfig:
    """Run lengths and seeding for the fiber walk.

    `iterations` counts proposals per chain; the first `burn_in` of
    them are discarded and the rest kept every `thin` steps.  Each
    chain gets an independent stream derived from `seed`, which may be
    a single integer or a tuple of integers (used by scans to give
    every variant pair its own reproducible stream).
    """

    n_chains: int = 3
    iterations: int = 40_000
    burn_in: int = 10_000
    thin: int = 1
    seed: int | tuple[int, ...] = 0

    def __post_init__(self) -> None:
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.burn_in < 0:
            raise ValueError("burn_in cannot be negative")
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        seeds = self.seed if isinstance(self.seed, tuple) else (self.seed,)
        if not seeds or any(not isinstance(s, int) or s < 0 for s in seeds):
            raise ValueError("seed must be a nonnegative int or a tuple of them")


@dataclass
class ChainDiagnostics:
    """Per-chain kept traces plus mixing summaries.

    `autocorrelations[c, k-1]` is chain c's sample autocorrelation at
    lag k.  `gelman_rubin` is NaN when only one chain was run.  The
    acceptance rate counts accepted moves over all proposals, burn-in
    and infeasible proposals included.
    """

    traces: list[np.ndarray]
    gelman_rubin: float
    autocorrelations: np.ndarray
    acceptance_rate: float


@dataclass
class ExactTestResult:
    observed_chi2: float
    p_value: float
    per_chain_p: np.ndarray
    n_samples: int
    diagnostics: ChainDiagnostics


# ---------------------------------------------------------------------------
# walk kernel

def _walk_py(counts, sup_idx, sup_delta, move_ptr, expected, inv_exp, lgam, idxs, signs, us, chi2_out):
    """One block of proposals; mutates `counts`, fills `chi2_out`.

    Moves are stored sparsely: move m touches cells
    sup_idx[move_ptr[m]:move_ptr[m+1]] with deltas from sup_delta.
    `lgam[n]` must hold lgamma(n + 1).  Returns the accepted count.
    Cells with zero expected count carry inv_exp == 0 and contribute
    nothing to the statistic; the walk cannot populate them because
    their margins are zero.
    """
    accepted = 0
    ncell = counts.size
    for t in range(idxs.size):
        m = idxs[t]
        s = signs[t]
        a = move_ptr[m]
        b = move_ptr[m + 1]
        feasible = True
        for p in range(a, b):
            if counts[sup_idx[p]] + s * sup_delta[p] < 0:
                feasible = False
                break
        if feasible:
            dlog = 0.0
            for p in range(a, b):
                i = sup_idx[p]
                old = counts[i]
                new = old + s * sup_delta[p]
                dlog += lgam[old] - lgam[new]
            if dlog >= 0.0 or us[t] < np.exp(dlog):
                for p in range(a, b):
                    counts[sup_idx[p]] += s * sup_delta[p]
                accepted += 1
        x = 0.0
        for i in range(ncell):
            d = counts[i] - expected[i]
            x += d * d * inv_exp[i]
        chi2_out[t] = x
    return accepted


try:
    from numba import njit as _njit

    _walk = _njit(cache=True, nogil=True)(_walk_py)
except ImportError:  # pragma: no cover - exercised only without numba
    _walk = _walk_py


def _move_csr(moves: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sparse row layout of a move matrix: (cell indices, deltas, offsets)."""
    sup_idx: list[int] = []
    sup_delta: list[int] = []
    ptr = [0]
    for row in moves:
        nz = np.nonzero(row)[0]
        sup_idx.extend(int(i) for i in nz)
        sup_delta.extend(int(row[i]) for i in nz)
        ptr.append(len(sup_idx))
    return (
        np.array(sup_idx, dtype=np.int64),
        np.array(sup_delta, dtype=np.int64),
        np.array(ptr, dtype=np.int64),
    )


def _chi2_seq(counts: np.ndarray, expected: np.ndarray, inv_exp: np.ndarray) -> float:
    """Chi-square accumulated cell by cell, exactly as the kernel does.

    Keeping the summation order identical makes the observed statistic
    bit-comparable with sampled ones, so ties count as >= reliably.
    """
    x = 0.0
    for i in range(counts.size):
        d = counts[i] - expected[i]
        x += d * d * inv_exp[i]
    return x


_BLOCK = 16384  # proposals per pregenerated random block; fixed for determinism


def _run_chain(counts, csr, expected, inv_exp, lgam, n_steps, rng):
    """Drive one chain for n_steps proposals, returning (trace, accepted)."""
    sup_idx, sup_delta, move_ptr = csr
    n_moves = move_ptr.size - 1
    chi2 = np.empty(n_steps, dtype=np.float64)
    accepted = 0
    done = 0
    while done < n_steps:
        b = min(_BLOCK, n_steps - done)
        idxs = rng.integers(0, n_moves, size=b)
        signs = 2 * rng.integers(0, 2, size=b) - 1
        us = rng.random(b)
        accepted += _walk(
            counts, sup_idx, sup_delta, move_ptr, expected, inv_exp, lgam,
            idxs, signs, us, chi2[done : done + b],
        )
        done += b
    return chi2, accepted


# ---------------------------------------------------------------------------
# public single-step interface

def log_accept_ratio(table: ContingencyTable, move: np.ndarray, sign: int = 1) -> float:
    """Log of the acceptance probability ratio for one proposed move.

    Equals sum(lgamma(n_c + 1)) - sum(lgamma(n'_c + 1)) over the cells
    the move touches; -inf when the move is infeasible.
    """
    mv = np.asarray(move, dtype=np.int64).ravel()
    if mv.size != table.shape.n_cells:
        raise ValueError("move length does not match table cell count")
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    new = table.counts + sign * mv
    if (new < 0).any():
        return -math.inf
    changed = np.nonzero(mv)[0]
    old_sum = sum(math.lgamma(table.counts[i] + 1.0) for i in changed)
    new_sum = sum(math.lgamma(new[i] + 1.0) for i in changed)
    return old_sum - new_sum


def mh_step(
    table: ContingencyTable, basis: MarkovBasis, rng: np.random.Generator
) -> tuple[ContingencyTable, bool]:
    """One Metropolis step: uniform move and sign, hypergeometric target.

    Returns the next state and whether the proposal was accepted; an
    infeasible or rejected proposal returns the input table unchanged.
    """
    if table.shape != basis.model.shape:
        raise ValueError("table shape does not match basis model shape")
    if len(basis) == 0:
        raise ValueError("empty basis cannot propose moves")
    m = int(rng.integers(0, len(basis)))
    sign = 2 * int(rng.integers(0, 2)) - 1
    u = float(rng.random())
    lr = log_accept_ratio(table, basis.moves[m], sign)
    if lr >= 0.0 or u < math.exp(lr):
        new = table.counts + sign * basis.moves[m]
        return ContingencyTable(table.shape, new), True
    return table, False


# ---------------------------------------------------------------------------
# the full test

def extended_fisher_test(
    observed: ContingencyTable,
    basis: MarkovBasis,
    config: ChainConfig | None = None,
    ipf_tol: float = 1e-10,
    ipf_max_iter: int = 10000,
) -> ExactTestResult:
    """Exact conditional goodness-of-fit test of the basis model.

    Expected counts are fitted once from the observed margins (closed
    form when available, otherwise iterative proportional fitting; a
    fit that fails to converge raises NonConvergenceError).  Every
    chain starts at the observed table.  The p-value is the pooled
    post-burn-in fraction of sampled chi-square values at or above the
    observed one.
    """
    if config is None:
        config = ChainConfig()
    model = basis.model
    if observed.shape != model.shape:
        raise ValueError("observed table shape does not match basis model shape")
    if observed.total == 0:
        raise ValueError("cannot test an empty table")
    if len(basis) == 0:
        raise ValueError("empty basis cannot propose moves")

    closed = closed_form_expected(observed, model)
    if closed is not None:
        expected = closed
    else:
        fit = ipf_fit(margins(observed, model), tol=ipf_tol, max_iter=ipf_max_iter)
        if not fit.converged and fit.max_deviation > 1e-3:
            raise NonConvergenceError(
                f"expected counts did not converge: max margin deviation "
                f"{fit.max_deviation:.3g} after {fit.iterations} iterations"
            )
        if not fit.converged:
            # sparse tables can put the fitted counts on the boundary of
            # the model, where the sweep stalls with a sublinearly
            # shrinking deviation; at well under one count the statistic
            # comparison is unaffected, so carry on
            warnings.warn(
                f"expected counts stalled at margin deviation "
                f"{fit.max_deviation:.3g} after {fit.iterations} sweeps",
                ConvergenceWarning,
                stacklevel=2,
            )
        expected = fit.table

    counts0 = observed.counts
    if ((expected == 0) & (counts0 > 0)).any():
        raise ValueError("fitted expected counts vanish on an occupied cell")
    inv_exp = np.divide(1.0, expected, out=np.zeros_like(expected), where=expected > 0)

    total = observed.total
    lgam = np.array([math.lgamma(i + 1.0) for i in range(total + 1)], dtype=np.float64)
    csr = _move_csr(basis.moves)
    chi2_obs = _chi2_seq(counts0, expected, inv_exp)

    streams = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    kept: list[np.ndarray] = []
    accepted_total = 0
    for child in streams:
        rng = np.random.default_rng(child)
        state = counts0.copy()
        trace, accepted = _run_chain(state, csr, expected, inv_exp, lgam, config.iterations, rng)
        accepted_total += accepted
        kept.append(trace[config.burn_in :: config.thin])

    per_chain_p = np.array([float((t >= chi2_obs).mean()) for t in kept])
    pooled = np.concatenate(kept)
    if pooled.size == 0:
        raise ValueError("no post-burn-in samples; check iterations/burn_in/thin")
    p_value = float((pooled >= chi2_obs).mean())

    rhat = gelman_rubin(np.stack(kept)) if config.n_chains >= 2 and kept[0].size >= 2 else math.nan
    n_lags = min(50, kept[0].size - 1)
    acf = np.zeros((config.n_chains, max(n_lags, 0)))
    for c, t in enumerate(kept):
        x = t - t.mean()
        denom = float((x * x).sum())
        for k in range(1, n_lags + 1):
            acf[c, k - 1] = float((x[: t.size - k] * x[k:]).sum() / denom) if denom > 0 else 0.0
    acceptance_rate = accepted_total / (config.n_chains * config.iterations)
    diag = ChainDiagnostics(
        traces=kept,
        gelman_rubin=rhat,
        autocorrelations=acf,
        acceptance_rate=acceptance_rate,
    )

    if config.n_chains >= 2 and not math.isnan(rhat) and rhat > 1.1:
        warnings.warn(
            f"chains may not have mixed: potential scale reduction {rhat:.3f} > 1.1",
            ConvergenceWarning,
            stacklevel=2,
        )
    if n_lags >= 10:
        worst = float(acf[:, 9].max())
        if worst > 0.5:
            warnings.warn(
                f"slow mixing: lag-10 autocorrelation {worst:.3f} > 0.5",
                ConvergenceWarning,
                stacklevel=2,
            )

    return ExactTestResult(
        observed_chi2=chi2_obs,
        p_value=p_value,
        per_chain_p=per_chain_p,
        n_samples=int(pooled.size),
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# diagnostics

def gelman_rubin(traces: np.ndarray) -> float:
    """Potential scale reduction factor over parallel chains.

    With m chains of length n, W the mean within-chain variance and B
    the between-chain variance (n times the variance of chain means),
    returns sqrt((((n-1)/n) W + B/n) / W).  Identical constant chains
    give 1.0; distinct constant chains give inf.
    """
    arr = np.asarray(traces, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("traces must be a (n_chains, n_samples) array")
    m, n = arr.shape
    if m < 2:
        raise ValueError("need at least two chains")
    if n < 2:
        raise ValueError("need at least two samples per chain")
    w = float(arr.var(axis=1, ddof=1).mean())
    b = n * float(arr.mean(axis=1).var(ddof=1))
    if w == 0.0:
        return 1.0 if b == 0.0 else math.inf
    return math.sqrt(((n - 1) / n * w + b / n) / w)


def autocorrelation(trace: np.ndarray, lag: int) -> float:
    """Sample autocorrelation at one lag, normalized by the lag-0 term.

    Lag 0 is 1.0 by definition.  A constant trace has no variance to
    normalize by; that returns 0.0 with a RuntimeWarning.
    """
    arr = np.asarray(trace, dtype=np.float64).ravel()
    n = arr.size
    if lag < 0:
        raise ValueError("lag cannot be negative")
    if lag >= n:
        raise ValueError(f"lag {lag} needs a trace longer than {n}")
    if lag == 0:
        return 1.0
    x = arr - arr.mean()
    denom = float((x * x).sum())
    if denom == 0.0:
        warnings.warn("autocorrelation of a constant trace is undefined; returning 0.0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return float((x[: n - lag] * x[lag:]).sum() / denom)


def write_traces(diagnostics: ChainDiagnostics, path: str) -> None:
    """Dump kept chain traces as TSV: chain index, sample index, chi2."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("chain\tsample\tchi2\n")
        for c, trace in enumerate(diagnostics.traces):
            for s, v in enumerate(trace):
                fh.write(f"{c}\t{s}\t{float(v)!r}\n")
