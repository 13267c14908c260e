"""Release criteria, one test per numbered criterion.

Each test computes its verdict, records a PASS/FAIL line for the
terminal summary, then asserts.  Seeds are frozen so every run of this
module reproduces the same draws, walks, and rates; the bounds below
are the shipped contract, not aspirations.
"""

import math
import time
import warnings
from collections import deque

import numpy as np
import pytest

from conftest import exact_fiber_p, random_table, record_criterion
from epiwalk import fisher_exact
from epiwalk.markov import builtin_no3way_basis
from epiwalk.models import (
    DesignTargets,
    PopulationSpec,
    prevalence,
    effect_size,
    simulate_study,
    solve_params,
)
from epiwalk.pipeline import pair_table, pairwise_scan, rank_snps, save_study
from epiwalk.sampler import (
    ChainConfig,
    ConvergenceWarning,
    extended_fisher_test,
    mh_step,
)
from epiwalk.tables import (
    ContingencyTable,
    LogLinearModel,
    MarginSet,
    TableShape,
    closed_form_expected,
    enumerate_fiber,
    facet_projection,
    independence_model,
    ipf_fit,
    margins,
    no_top_interaction_model,
    saturated_model,
)

SHAPE = TableShape((3, 3, 2))
MODEL = no_top_interaction_model(SHAPE)

# reference copy of the first builtin move; the basis module must ship
# exactly this vector in slot 0
F1 = np.array([0, 0, 0, 1, 0, -1, -1, 0, 1, 0, 0, 0, -1, 0, 1, 1, 0, -1])


def test_c01_builtin_basis_annihilates_margins():
    t0 = time.perf_counter()
    basis = builtin_no3way_basis()
    ok = len(basis) == 15
    for move in basis.moves:
        for facet in MODEL.facets:
            ok = ok and not facet_projection(move, facet, SHAPE).any()
    ok = ok and np.array_equal(basis.moves[0], F1)
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 1.0
    record_criterion(
        "C1 builtin basis exact", ok, f"15 moves, all margins zeroed, {elapsed:.3f}s"
    )
    assert ok


def test_c02_moves_connect_every_fiber():
    t0 = time.perf_counter()
    basis = builtin_no3way_basis()
    rng = np.random.default_rng(11)
    sizes = []
    all_connected = True
    for _ in range(30):
        # totals near the cap give the least-pinned margins, hence the
        # largest fibers this bound allows
        tab = random_table(rng, total=int(rng.integers(12, 21)))
        fiber = enumerate_fiber(margins(tab, MODEL), cap=200_000)
        sizes.append(len(fiber))
        members = {fiber.tables[k].tobytes() for k in range(len(fiber))}
        start = fiber.tables[0]
        seen = {start.tobytes()}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for mv in basis.moves:
                for sign in (1, -1):
                    nxt = cur + sign * mv
                    if (nxt >= 0).all():
                        key = nxt.astype(fiber.tables.dtype).tobytes()
                        if key in members and key not in seen:
                            seen.add(key)
                            queue.append(nxt)
        all_connected = all_connected and len(seen) == len(fiber)
    elapsed = time.perf_counter() - t0
    ok = all_connected and elapsed < 60.0
    record_criterion(
        "C2 fiber connectivity",
        ok,
        f"30 margin sets, fibers up to {max(sizes)} tables, {elapsed:.1f}s",
    )
    assert ok


def test_c03_walker_matches_enumeration():
    t0 = time.perf_counter()
    basis = builtin_no3way_basis()
    rng = np.random.default_rng(20260822)
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for i in range(20):
            tab = random_table(rng, total=int(rng.integers(12, 26)))
            p_exact, _ = exact_fiber_p(tab, cap=300_000)
            cfg = ChainConfig(n_chains=3, iterations=40_000, burn_in=10_000, seed=1000 + i)
            res = extended_fisher_test(tab, basis, cfg)
            worst = max(worst, abs(res.p_value - p_exact))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.03 and elapsed < 300.0
    record_criterion(
        "C3 walker vs enumeration", ok, f"worst |p - exact| = {worst:.4f}, {elapsed:.1f}s"
    )
    assert ok


def test_c04_visit_frequencies_match_conditional_law():
    # one fixed margin set whose fiber holds 22 tables; pooled post
    # burn-in visits against the exact table weights
    basis = builtin_no3way_basis()
    tab = ContingencyTable(SHAPE, [3, 1, 1, 3, 0, 1, 0, 2, 1, 1, 2, 1, 2, 0, 3, 8, 0, 1])
    fiber = enumerate_fiber(margins(tab, MODEL), cap=60)
    index = {fiber.tables[k].tobytes(): k for k in range(len(fiber))}
    dt = fiber.tables.dtype

    visits = np.zeros(len(fiber))
    for chain in range(3):
        rng = np.random.default_rng((4003, chain))
        state = tab
        for step in range(50_000):
            state, _ = mh_step(state, basis, rng)
            if step >= 10_000:
                visits[index[state.counts.astype(dt).tobytes()]] += 1
    pooled = int(visits.sum())
    tv = 0.5 * float(np.abs(visits / visits.sum() - fiber.weights).sum())
    ok = pooled == 120_000 and tv <= 0.02
    record_criterion(
        "C4 stationary law", ok, f"fiber of {len(fiber)}, TV = {tv:.4f} at {pooled} samples"
    )
    assert ok


def test_c05_fitting_matches_targets_and_closed_forms():
    rng = np.random.default_rng(3)
    worst_margin = 0.0
    worst_cell = 0.0
    for _ in range(20):
        # strictly positive cells keep the fitted table interior, where
        # the sweep converges geometrically to the 1e-8 contract
        tab = ContingencyTable(SHAPE, rng.integers(1, 20, SHAPE.n_cells))
        target = margins(tab, MODEL)
        fit = ipf_fit(target)
        assert fit.converged
        for facet, want in zip(MODEL.facets, target.tables):
            dev = np.abs(facet_projection(fit.table, facet, SHAPE) - want).max()
            worst_margin = max(worst_margin, float(dev))

        decomposable = (
            independence_model(SHAPE),
            saturated_model(SHAPE),
            LogLinearModel(SHAPE, ((0, 1), (1, 2))),
        )
        for model in decomposable:
            closed = closed_form_expected(tab, model)
            fitted = ipf_fit(margins(tab, model)).table
            worst_cell = max(worst_cell, float(np.abs(fitted - closed).max()))

    ok = worst_margin <= 1e-8 and worst_cell <= 1e-8
    record_criterion(
        "C5 proportional fitting",
        ok,
        f"margin dev {worst_margin:.2e}, closed-form dev {worst_cell:.2e}",
    )
    assert ok


def test_c06_design_solver_round_trip():
    targets = DesignTargets(effect_size=1.0, prevalence=0.5)
    worst = 0.0
    eps_exact = True
    for maf in (0.1, 0.25, 0.4):
        pop = PopulationSpec(maf, maf)
        control = solve_params("control", pop, targets)
        eps_exact = eps_exact and control.epsilon == 1.0
        worst = max(worst, abs(prevalence(control, pop) - 0.5))
        for kind in ("additive", "multiplicative"):
            model = solve_params(kind, pop, targets)
            worst = max(worst, abs(effect_size(model, pop, 0) - 1.0))
            worst = max(worst, abs(prevalence(model, pop) - 0.5))
    ok = eps_exact and worst <= 1e-6
    record_criterion(
        "C6 solver round trip", ok, f"worst target miss {worst:.2e}, control eps exact"
    )
    assert ok


def test_c07_null_rejection_rate():
    t0 = time.perf_counter()
    basis = builtin_no3way_basis()
    pop = PopulationSpec(0.25, 0.25)
    control = solve_params("control", pop, DesignTargets(1.0, 0.5))
    rejections = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for i in range(200):
            study = simulate_study(control, pop, 400, 400, seed=10_000 + i)
            res = extended_fisher_test(
                pair_table(study, 0, 1), basis, ChainConfig(seed=20_000 + i)
            )
            rejections += res.p_value <= 0.05
    rate = rejections / 200
    elapsed = time.perf_counter() - t0
    ok = rate <= 0.08
    record_criterion(
        "C7 type-I error", ok, f"{rejections}/200 rejected at alpha 0.05, {elapsed:.0f}s"
    )
    assert ok


def test_c08_power_rises_with_allele_frequency():
    t0 = time.perf_counter()
    basis = builtin_no3way_basis()
    rates = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for maf in (0.1, 0.25, 0.4):
            pop = PopulationSpec(maf, maf)
            model = solve_params("multiplicative", pop, DesignTargets(1.0, 0.5))
            rejections = 0
            for i in range(50):
                study = simulate_study(model, pop, 150, 150, seed=30_000 + i)
                res = extended_fisher_test(
                    pair_table(study, 0, 1), basis, ChainConfig(seed=40_000 + i)
                )
                rejections += res.p_value <= 0.05
            rates.append(rejections / 50)
    elapsed = time.perf_counter() - t0
    ok = rates[0] < rates[1] < rates[2] and rates[2] >= 0.6
    record_criterion(
        "C8 power ordering",
        ok,
        f"rates {rates[0]:.2f} < {rates[1]:.2f} < {rates[2]:.2f}, {elapsed:.0f}s",
    )
    assert ok


def test_c09_ranking_keeps_causative_pair():
    t0 = time.perf_counter()
    pop = PopulationSpec(0.25, 0.25)
    model = solve_params("multiplicative", pop, DesignTargets(1.0, 0.5))
    hits = 0
    for i in range(20):
        study = simulate_study(model, pop, 400, 400, seed=50_000 + i, n_noise_snps=998)
        top10 = {r.snp_id for r in rank_snps(study)[:10]}
        hits += {"1.5000", "2.5000"} <= top10
    elapsed = time.perf_counter() - t0
    ok = hits >= 16
    record_criterion(
        "C9 ranking keeps causative pair",
        ok,
        f"{hits}/20 studies kept both variants in the top 10, {elapsed:.0f}s",
    )
    assert ok


def _enumeration_p_2x3(table: np.ndarray) -> float:
    model = independence_model(TableShape((2, 3)))
    fiber = enumerate_fiber(
        MarginSet(model, (table.sum(axis=1), table.sum(axis=0))), cap=5000
    )
    obs_flat = table.flatten(order="F")
    obs_w = None
    for t, w in zip(fiber.tables, fiber.weights):
        if np.array_equal(t, obs_flat):
            obs_w = w
            break
    assert obs_w is not None
    p = float(sum(w for w in fiber.weights if w <= obs_w * (1 + 1e-12)))
    return min(p, 1.0)


def test_c10_single_locus_matches_enumeration():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(50):
        probs = rng.dirichlet(np.ones(6))
        t = rng.multinomial(int(rng.integers(5, 41)), probs).reshape(2, 3)
        worst = max(worst, abs(fisher_exact(t) - _enumeration_p_2x3(t)))
    third = abs(fisher_exact(np.array([[2, 0, 0], [0, 2, 0]])) - 1 / 3)
    ok = worst <= 1e-12 and third <= 1e-12
    record_criterion(
        "C10 single-locus exactness", ok, f"worst dev {worst:.1e}, 2x2 case dev {third:.1e}"
    )
    assert ok


def test_c11_scan_is_reproducible(tmp_path):
    from epiwalk.cli import main

    pop = PopulationSpec(0.3, 0.3)
    model = solve_params("multiplicative", pop, DesignTargets(1.0, 0.5))
    study = simulate_study(model, pop, 100, 100, seed=4242, n_noise_snps=10)
    study_path = tmp_path / "study.txt"
    save_study(study, str(study_path))

    outs = []
    for name, jobs in (("a.txt", "1"), ("b.txt", "1"), ("c.txt", "4")):
        out = tmp_path / name
        code = main(
            ["scan", str(study_path), "--out", str(out), "--k", "5",
             "--seed", "7", "--jobs", jobs]
        )
        assert code == 0
        outs.append(out.read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    record_criterion(
        "C11 scan determinism", ok, "reports byte-identical across reruns and job counts"
    )
    assert ok


def test_c12_scan_throughput():
    pop = PopulationSpec(0.25, 0.25)
    model = solve_params("multiplicative", pop, DesignTargets(1.0, 0.5))
    study = simulate_study(model, pop, 400, 400, seed=99, n_noise_snps=998)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        t0 = time.perf_counter()
        report = pairwise_scan(study, k=10)
        elapsed = time.perf_counter() - t0
    ok = elapsed < 600.0 and len(report.pairs) + len(report.skipped) > 0
    record_criterion(
        "C12 scan throughput",
        ok,
        f"1000 variants x 800 individuals, k=10, {elapsed:.1f}s (limit 600s)",
    )
    assert ok
