import warnings

import numpy as np
import pytest

from epiwalk import (
    ChainConfig,
    ConvergenceWarning,
    PopulationSpec,
    Study,
    StudyFormatError,
    load_study,
    pairwise_scan,
    rank_snps,
    read_report,
    save_study,
    simulate_study,
    snp_p_value,
    solve_params,
    triplet_scan,
    write_report,
)
from epiwalk.pipeline import pair_table, triplet_table

TINY = ChainConfig(n_chains=2, iterations=1200, burn_in=300, seed=13)


def small_study(seed=31, n_noise=6, n=120):
    pop = PopulationSpec(0.3, 0.3)
    model = solve_params("multiplicative", pop)
    return simulate_study(
        model, pop, n_cases=n // 2, n_controls=n // 2, seed=seed, n_noise_snps=n_noise
    )


# ---------------------------------------------------------------------------
# Study container


def test_study_validation():
    g = np.array([[0, 1], [2, 1], [1, 0]], dtype=np.int8)
    d = np.array([1, 0, 1], dtype=np.int8)
    Study(g, d, ["a", "b"])
    with pytest.raises(StudyFormatError):
        Study(g, np.array([1, 2, 1], dtype=np.int8), ["a", "b"])  # bad phenotype
    with pytest.raises(StudyFormatError):
        Study((g + 3).astype(np.int8), d, ["a", "b"])  # bad codes
    with pytest.raises(StudyFormatError):
        Study(g, d, ["a", "a"])  # duplicate ids
    with pytest.raises(StudyFormatError):
        Study(g, d, ["a"])  # id count mismatch
    with pytest.raises(StudyFormatError):
        Study(g, np.array([1, 1, 1], dtype=np.int8), ["a", "b"])  # no controls


def test_study_file_round_trip(tmp_path):
    study = small_study()
    path = str(tmp_path / "study.txt")
    save_study(study, path)
    again = load_study(path)
    assert np.array_equal(again.genotypes, study.genotypes)
    assert np.array_equal(again.phenotypes, study.phenotypes)
    assert again.snp_ids == study.snp_ids


def test_load_study_default_ids(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text("#individuals 2 #snps 2\n1 0 1\n0 2 3\n")
    study = load_study(str(path))
    assert study.n_snps == 2
    assert len(set(study.snp_ids)) == 2


@pytest.mark.parametrize(
    "content,where",
    [
        ("1 0 1\n", ":1:"),  # data before header
        ("#individuals 2 #snps 2\n1 0\n", ":2:"),  # short row
        ("#individuals 2 #snps 2\n1 0 x\n", ":2:"),  # non-integer
        ("#individuals 2 #snps 2\n2 0 1\n", ":2:"),  # bad phenotype
        ("#individuals 2 #snps 2\n1 0 7\n", ":2:"),  # bad genotype code
        ("#individuals 2 #snps 2\n#ids a\n", ":2:"),  # id count mismatch
        ("#individuals 2 #snps 2\n#individuals 2 #snps 2\n", ":2:"),  # dup header
        ("#individuals 3 #snps 1\n1 0\n0 1\n", "promises"),  # row count mismatch
    ],
)
def test_load_study_errors_name_the_line(tmp_path, content, where):
    path = tmp_path / "bad.txt"
    path.write_text(content)
    with pytest.raises(StudyFormatError, match=where):
        load_study(str(path))


# ---------------------------------------------------------------------------
# table builders


def test_pair_table_counts_and_missing():
    g = np.array(
        [[0, 1], [1, 1], [2, 0], [3, 2], [0, 3], [2, 2]],
        dtype=np.int8,
    )
    d = np.array([1, 1, 0, 0, 1, 0], dtype=np.int8)
    study = Study(g, d, ["s1", "s2"])
    t = pair_table(study, 0, 1)
    assert t.shape.axis_sizes == (3, 3, 2)
    assert t.total == 4  # individuals 3 and 4 dropped pairwise
    arr = t.to_array()
    assert arr[0, 1, 1] == 1  # (g1=0, g2=1, case)
    assert arr[1, 1, 1] == 1
    assert arr[2, 0, 0] == 1
    assert arr[2, 2, 0] == 1


def test_triplet_table_counts():
    g = np.array([[0, 1, 2], [1, 1, 1], [0, 1, 2], [3, 0, 0]], dtype=np.int8)
    d = np.array([1, 0, 1, 0], dtype=np.int8)
    study = Study(g, d, ["a", "b", "c"])
    t = triplet_table(study, 0, 1, 2)
    assert t.shape.axis_sizes == (3, 3, 3, 2)
    assert t.total == 3
    arr = t.to_array()
    assert arr[0, 1, 2, 1] == 2
    assert arr[1, 1, 1, 0] == 1


# ---------------------------------------------------------------------------
# stage 1


def test_rank_snps_orders_by_p_then_index():
    study = small_study()
    ranked = rank_snps(study)
    assert len(ranked) == study.n_snps
    assert [r.rank for r in ranked] == list(range(1, study.n_snps + 1))
    ps = [r.p_value for r in ranked]
    assert ps == sorted(ps)
    for r in ranked:
        ref = snp_p_value(study.genotypes[:, r.index], study.phenotypes)
        assert r.p_value == pytest.approx(ref)
        assert r.bonferroni_p == pytest.approx(min(1.0, r.p_value * study.n_snps))
        assert r.snp_id == study.snp_ids[r.index]
    # equal p-values fall back to column order
    for a, b in zip(ranked, ranked[1:]):
        if a.p_value == b.p_value:
            assert a.index < b.index


# ---------------------------------------------------------------------------
# scans


def test_pairwise_scan_smallest_k():
    study = small_study()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        report = pairwise_scan(study, k=2, config=TINY)
    assert report.settings["mode"] == "pairs"
    assert report.settings["n_comparisons"] == "1"
    assert len(report.pairs) == 1
    r = report.pairs[0]
    assert r.index_a < r.index_b
    assert r.bonferroni_p == pytest.approx(min(1.0, r.p_value * 1))
    assert report.triplets == []


def test_pairwise_scan_finds_causative_pair():
    study = small_study(seed=77, n=400)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        report = pairwise_scan(study, k=4, config=TINY)
    best = report.pairs[0]
    assert {best.id_a, best.id_b} == {"1.5000", "2.5000"}
    assert best.p_value < 0.05


def test_scan_skips_degenerate_pairs():
    study = small_study(n_noise=2)
    g = study.genotypes.copy()
    g[:, 2] = 0  # monomorphic column
    g[study.phenotypes == 0, 3] = 3  # complete rows are all cases
    broken = Study(g, study.phenotypes.copy(), list(study.snp_ids))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        report = pairwise_scan(broken, k=4, config=TINY)
    reasons = {s.ids: s.reason for s in report.skipped}
    assert len(reasons) >= 1
    joined = " ".join(reasons.values())
    assert "monomorphic" in joined or "phenotype" in joined
    # bonferroni still covers all candidate pairs, including skipped ones
    assert report.settings["n_comparisons"] == "6"
    assert int(report.settings["n_stage2_tests"]) == 6 - len(report.skipped)


def test_scan_argument_validation():
    study = small_study()
    with pytest.raises(ValueError):
        pairwise_scan(study, k=1, config=TINY)
    with pytest.raises(ValueError):
        pairwise_scan(study, k=3, config=TINY, alpha=0.0)
    with pytest.raises(ValueError):
        pairwise_scan(study, k=3, config=TINY, jobs=0)
    with pytest.raises(ValueError):
        pairwise_scan(study, k=3, config=ChainConfig(seed=(1, 2)))


def test_scan_k_clamps_to_snp_count():
    study = small_study(n_noise=1)  # 3 SNPs total
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        report = pairwise_scan(study, k=50, config=TINY)
    assert report.settings["k"] == "3"
    assert len(report.pairs) + len(report.skipped) == 3


def test_scan_jobs_do_not_change_results():
    study = small_study(seed=41)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        a = pairwise_scan(study, k=4, config=TINY, jobs=1)
        b = pairwise_scan(study, k=4, config=TINY, jobs=4)
    assert [(r.index_a, r.index_b, r.p_value) for r in a.pairs] == [
        (r.index_a, r.index_b, r.p_value) for r in b.pairs
    ]


def test_triplet_scan_runs_with_supplied_basis(basis_4way):
    study = small_study(seed=51, n_noise=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        report = triplet_scan(study, basis_4way, k=3, config=TINY)
    assert report.settings["mode"] == "triplets"
    assert len(report.triplets) + len(report.skipped) == 1
    if report.triplets:
        r = report.triplets[0]
        assert r.index_a < r.index_b < r.index_c
        assert 0.0 < r.p_value <= 1.0


def test_triplet_scan_rejects_pair_basis(no3way_basis):
    study = small_study()
    with pytest.raises(ValueError):
        triplet_scan(study, no3way_basis, k=3, config=TINY)


# ---------------------------------------------------------------------------
# reports


def test_report_round_trip(tmp_path):
    study = small_study(seed=61)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        report = pairwise_scan(study, k=3, config=TINY)
    path = str(tmp_path / "report.tsv")
    write_report(report, path)
    again = read_report(path)
    assert again.settings == report.settings
    assert len(again.stage1) == len(report.stage1)
    for a, b in zip(again.stage1, report.stage1):
        assert (a.rank, a.snp_id, a.index) == (b.rank, b.snp_id, b.index)
        assert a.p_value == pytest.approx(b.p_value, rel=1e-3)
    assert len(again.pairs) == len(report.pairs)
    for a, b in zip(again.pairs, report.pairs):
        assert (a.id_a, a.id_b) == (b.id_a, b.id_b)
        assert a.n_samples == b.n_samples
        assert a.p_value == pytest.approx(b.p_value, rel=1e-3)


def test_report_prints_resolution_bound_for_zero_p(tmp_path):
    study = small_study(seed=71, n=400)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        report = pairwise_scan(study, k=2, config=TINY)
    # force the display path for an off-support p-value
    from dataclasses import replace

    report.pairs[0] = replace(report.pairs[0], p_value=0.0, bonferroni_p=0.0)
    path = str(tmp_path / "report.tsv")
    write_report(report, path)
    text = open(path).read()
    assert "<" in text.split("#[stage2]")[1]
    again = read_report(path)
    assert again.pairs[0].p_value == 0.0


def test_read_report_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    with pytest.raises(ValueError):
        read_report(str(path))
