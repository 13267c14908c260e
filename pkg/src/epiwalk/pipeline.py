"""Two-stage interaction scans over case-control genotype studies.

Stage one ranks every variant by its exact single-locus association
p-value.  Stage two takes the k best-ranked variants and tests each
pair (optionally each triple) for interaction with the exact
conditional test, conditioning on all pairwise (three-way) margins.

Studies live in a plain text format: a header line

    #individuals <n> #snps <m>

optionally followed by `#ids <m variant names>`, then one line per
individual holding the phenotype (0 = control, 1 = case) and m
genotype codes 0/1/2 (minor allele copies) or 3 (missing).  Other
lines starting with '#' are comments.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .markov import MarkovBasis, builtin_no3way_basis
from .sampler import ChainConfig, ExactTestResult, extended_fisher_test
from .single_locus import snp_p_value
from .tables import ContingencyTable, TableShape

__all__ = [
    "Study",
    "StudyFormatError",
    "SnpResult",
    "PairResult",
    "TripletResult",
    "SkippedSet",
    "ScanReport",
    "load_study",
    "save_study",
    "rank_snps",
    "pair_table",
    "triplet_table",
    "pairwise_scan",
    "triplet_scan",
    "write_report",
    "read_report",
]

MISSING = 3


class StudyFormatError(ValueError):
    """A study file (or in-memory study) violates the expected layout."""


@dataclass
class Study:
    """Genotypes (individuals x variants), phenotypes, and variant names."""

    genotypes: np.ndarray
    phenotypes: np.ndarray
    snp_ids: list[str]

    def __post_init__(self) -> None:
        g = np.asarray(self.genotypes)
        d = np.asarray(self.phenotypes)
        if g.ndim != 2:
            raise StudyFormatError("genotypes must be a 2-d array")
        if d.shape != (g.shape[0],):
            raise StudyFormatError("one phenotype per individual is required")
        if g.size == 0:
            raise StudyFormatError("study holds no genotype calls")
        if not np.isin(g, (0, 1, 2, MISSING)).all():
            raise StudyFormatError("genotype codes must be 0, 1, 2 or 3 (missing)")
        if not np.isin(d, (0, 1)).all():
            raise StudyFormatError("phenotypes must be 0 or 1")
        if len(self.snp_ids) != g.shape[1]:
            raise StudyFormatError("one variant id per genotype column is required")
        if len(set(self.snp_ids)) != len(self.snp_ids):
            raise StudyFormatError("variant ids must be unique")
        if not (d == 1).any() or not (d == 0).any():
            raise StudyFormatError("study needs at least one case and one control")
        self.genotypes = g.astype(np.int8)
        self.phenotypes = d.astype(np.int8)
        self.snp_ids = list(self.snp_ids)

    @property
    def n_individuals(self) -> int:
        return self.genotypes.shape[0]

    @property
    def n_snps(self) -> int:
        return self.genotypes.shape[1]

    @property
    def n_cases(self) -> int:
        return int((self.phenotypes == 1).sum())


def load_study(path: str) -> Study:
    """Read a study file, validating the header and every line."""
    n = m = None
    ids: list[str] | None = None
    phen: list[int] = []
    rows: list[np.ndarray] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                fields = stripped.split()
                if fields[0] == "#individuals":
                    if n is not None:
                        raise StudyFormatError(f"{path}:{lineno}: duplicate header")
                    if len(fields) != 4 or fields[2] != "#snps":
                        raise StudyFormatError(
                            f"{path}:{lineno}: header must read '#individuals <n> #snps <m>'"
                        )
                    try:
                        n, m = int(fields[1]), int(fields[3])
                    except ValueError:
                        raise StudyFormatError(f"{path}:{lineno}: non-integer header counts") from None
                    if n < 1 or m < 1:
                        raise StudyFormatError(f"{path}:{lineno}: header counts must be positive")
                elif fields[0] == "#ids":
                    if m is None:
                        raise StudyFormatError(f"{path}:{lineno}: #ids before the size header")
                    ids = fields[1:]
                    if len(ids) != m:
                        raise StudyFormatError(
                            f"{path}:{lineno}: {len(ids)} ids for {m} variants"
                        )
                continue
            if n is None:
                raise StudyFormatError(f"{path}:{lineno}: data before the size header")
            parts = stripped.split()
            if len(parts) != m + 1:
                raise StudyFormatError(
                    f"{path}:{lineno}: expected phenotype plus {m} genotype codes, got {len(parts)} fields"
                )
            try:
                values = np.array([int(t) for t in parts], dtype=np.int64)
            except ValueError:
                raise StudyFormatError(f"{path}:{lineno}: non-integer field") from None
            if values[0] not in (0, 1):
                raise StudyFormatError(f"{path}:{lineno}: phenotype must be 0 or 1, got {values[0]}")
            bad = np.nonzero(~np.isin(values[1:], (0, 1, 2, MISSING)))[0]
            if bad.size:
                raise StudyFormatError(
                    f"{path}:{lineno}: invalid genotype code {values[1 + bad[0]]} in column {int(bad[0])}"
                )
            phen.append(int(values[0]))
            rows.append(values[1:].astype(np.int8))
    if n is None:
        raise StudyFormatError(f"{path}: missing '#individuals <n> #snps <m>' header")
    if len(rows) != n:
        raise StudyFormatError(f"{path}: header promises {n} individuals, found {len(rows)}")
    if ids is None:
        ids = [f"snp_{j:04d}" for j in range(m)]
    return Study(np.vstack(rows), np.array(phen, dtype=np.int8), ids)


def save_study(study: Study, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"#individuals {study.n_individuals} #snps {study.n_snps}\n")
        fh.write("#ids " + " ".join(study.snp_ids) + "\n")
        for d, row in zip(study.phenotypes, study.genotypes):
            fh.write(str(int(d)) + " " + " ".join(str(int(g)) for g in row) + "\n")


# ---------------------------------------------------------------------------
# stage one

@dataclass(frozen=True)
class SnpResult:
    rank: int
    index: int
    snp_id: str
    p_value: float
    bonferroni_p: float


def rank_snps(study: Study) -> list[SnpResult]:
    """Exact single-locus p-value per variant, best first.

    Ties are broken by column index so the ordering is total and
    reproducible.  The Bonferroni value multiplies by the number of
    variants tested.
    """
    m = study.n_snps
    pairs = sorted(
        ((snp_p_value(study.genotypes[:, j], study.phenotypes), j) for j in range(m)),
    )
    return [
        SnpResult(
            rank=r + 1,
            index=j,
            snp_id=study.snp_ids[j],
            p_value=p,
            bonferroni_p=min(1.0, p * m),
        )
        for r, (p, j) in enumerate(pairs)
    ]


# ---------------------------------------------------------------------------
# stage two

@dataclass(frozen=True)
class PairResult:
    index_a: int
    index_b: int
    id_a: str
    id_b: str
    observed_chi2: float
    p_value: float
    bonferroni_p: float
    n_samples: int
    gelman_rubin: float
    acceptance_rate: float


@dataclass(frozen=True)
class TripletResult:
    index_a: int
    index_b: int
    index_c: int
    id_a: str
    id_b: str
    id_c: str
    observed_chi2: float
    p_value: float
    bonferroni_p: float
    n_samples: int
    gelman_rubin: float
    acceptance_rate: float


@dataclass(frozen=True)
class SkippedSet:
    indices: tuple[int, ...]
    ids: tuple[str, ...]
    reason: str


@dataclass
class ScanReport:
    settings: dict[str, str]
    stage1: list[SnpResult]
    pairs: list[PairResult] = field(default_factory=list)
    triplets: list[TripletResult] = field(default_factory=list)
    skipped: list[SkippedSet] = field(default_factory=list)


def _complete_rows(study: Study, cols: tuple[int, ...]) -> np.ndarray:
    keep = np.ones(study.n_individuals, dtype=bool)
    for c in cols:
        keep &= study.genotypes[:, c] != MISSING
    return keep


def pair_table(study: Study, a: int, b: int) -> ContingencyTable:
    """3 x 3 x 2 table of (genotype a, genotype b, phenotype) counts.

    Individuals missing either genotype are dropped (pairwise
    deletion).  Axis order: variant a, variant b, phenotype.
    """
    keep = _complete_rows(study, (a, b))
    ga = study.genotypes[keep, a].astype(np.int64)
    gb = study.genotypes[keep, b].astype(np.int64)
    d = study.phenotypes[keep].astype(np.int64)
    flat = ga + 3 * gb + 9 * d
    return ContingencyTable(TableShape((3, 3, 2)), np.bincount(flat, minlength=18))


def triplet_table(study: Study, a: int, b: int, c: int) -> ContingencyTable:
    """3 x 3 x 3 x 2 table over three variants and the phenotype."""
    keep = _complete_rows(study, (a, b, c))
    ga = study.genotypes[keep, a].astype(np.int64)
    gb = study.genotypes[keep, b].astype(np.int64)
    gc = study.genotypes[keep, c].astype(np.int64)
    d = study.phenotypes[keep].astype(np.int64)
    flat = ga + 3 * gb + 9 * gc + 27 * d
    return ContingencyTable(TableShape((3, 3, 3, 2)), np.bincount(flat, minlength=54))


def _skip_reason(study: Study, cols: tuple[int, ...]) -> str | None:
    keep = _complete_rows(study, cols)
    if not keep.any():
        return "no individuals with complete genotypes"
    for c in cols:
        seen = np.unique(study.genotypes[keep, c])
        if seen.size < 2:
            return f"{study.snp_ids[c]} monomorphic on complete individuals"
    if np.unique(study.phenotypes[keep]).size < 2:
        return "single phenotype class on complete individuals"
    return None


def _scan(
    study: Study,
    k: int,
    basis: MarkovBasis,
    config: ChainConfig,
    alpha: float,
    jobs: int,
    order: int,
) -> ScanReport:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if k < order:
        raise ValueError(f"k must be at least {order} to form {order}-variant sets")
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    if not isinstance(config.seed, int):
        raise ValueError("scan configs need a plain integer seed")

    stage1 = rank_snps(study)
    top = sorted(r.index for r in stage1[: min(k, study.n_snps)])
    combos = list(itertools.combinations(top, order))
    build = pair_table if order == 2 else triplet_table

    tested: list[tuple[tuple[int, ...], ExactTestResult]] = []
    skipped: list[SkippedSet] = []
    jobs_todo: list[tuple[int, ...]] = []
    for cols in combos:
        reason = _skip_reason(study, cols)
        if reason is not None:
            skipped.append(
                SkippedSet(cols, tuple(study.snp_ids[c] for c in cols), reason)
            )
        else:
            jobs_todo.append(cols)

    def run(cols: tuple[int, ...]) -> tuple[tuple[int, ...], ExactTestResult]:
        table = build(study, *cols)
        cfg = replace(config, seed=(config.seed, *cols))
        return cols, extended_fisher_test(table, basis, cfg)

    if jobs > 1 and len(jobs_todo) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            tested = list(pool.map(run, jobs_todo))
    else:
        tested = [run(cols) for cols in jobs_todo]

    # correction spans every candidate set among the selected variants,
    # including the degenerate ones that were skipped rather than tested
    n_comparisons = len(combos)
    results = []
    for cols, res in tested:
        ids = tuple(study.snp_ids[c] for c in cols)
        common = dict(
            observed_chi2=res.observed_chi2,
            p_value=res.p_value,
            bonferroni_p=min(1.0, res.p_value * n_comparisons),
            n_samples=res.n_samples,
            gelman_rubin=res.diagnostics.gelman_rubin,
            acceptance_rate=res.diagnostics.acceptance_rate,
        )
        if order == 2:
            results.append(
                PairResult(cols[0], cols[1], ids[0], ids[1], **common)
            )
        else:
            results.append(
                TripletResult(cols[0], cols[1], cols[2], ids[0], ids[1], ids[2], **common)
            )
    results.sort(key=lambda r: (r.p_value, r.index_a, r.index_b))

    settings = {
        "mode": "pairs" if order == 2 else "triplets",
        "n_individuals": str(study.n_individuals),
        "n_snps": str(study.n_snps),
        "k": str(min(k, study.n_snps)),
        "alpha": repr(alpha),
        "seed": str(config.seed),
        "chains": str(config.n_chains),
        "iterations": str(config.iterations),
        "burn_in": str(config.burn_in),
        "thin": str(config.thin),
        "n_comparisons": str(n_comparisons),
        "n_stage2_tests": str(len(tested)),
    }
    report = ScanReport(settings=settings, stage1=stage1, skipped=skipped)
    if order == 2:
        report.pairs = results
    else:
        report.triplets = results
    return report


def pairwise_scan(
    study: Study,
    k: int = 10,
    basis: MarkovBasis | None = None,
    config: ChainConfig | None = None,
    alpha: float = 0.05,
    jobs: int = 1,
) -> ScanReport:
    """Rank variants, then test every pair among the k best for interaction.

    Each pair's chains get a stream derived from (seed, index a,
    index b), so results do not depend on scan order or thread count.
    `alpha` is recorded for downstream thresholding of the Bonferroni
    adjusted p-values.
    """
    if basis is None:
        basis = builtin_no3way_basis()
    if config is None:
        config = ChainConfig()
    return _scan(study, k, basis, config, alpha, jobs, order=2)


def triplet_scan(
    study: Study,
    basis: MarkovBasis,
    k: int = 10,
    config: ChainConfig | None = None,
    alpha: float = 0.05,
    jobs: int = 1,
) -> ScanReport:
    """Like pairwise_scan but over variant triples and 3^3 x 2 tables.

    There is no builtin basis for the four-way no-top-interaction
    model, so one must be supplied (its model shape must be
    (3, 3, 3, 2)).
    """
    if basis.model.shape != TableShape((3, 3, 3, 2)):
        raise ValueError("triplet scans need a basis on a (3, 3, 3, 2) table")
    if config is None:
        config = ChainConfig()
    return _scan(study, k, basis, config, alpha, jobs, order=3)


# ---------------------------------------------------------------------------
# report files

def _fmt_p(p: float, resolution: float) -> str:
    """p of exactly zero prints as a bound: no sampled value reached it."""
    if p == 0.0:
        return f"<{resolution:.4g}"
    return f"{p:.4g}"


def _fmt_stat(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.4f}"


def write_report(report: ScanReport, path: str) -> None:
    """Write a scan report as sectioned TSV (stable across reruns)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("#[settings]\n")
        for key, value in report.settings.items():
            fh.write(f"{key}\t{value}\n")
        fh.write("#[stage1]\n")
        fh.write("# rank\tsnp\tindex\tp\tbonferroni_p\n")
        for r in report.stage1:
            fh.write(
                f"{r.rank}\t{r.snp_id}\t{r.index}\t{r.p_value:.4g}\t{r.bonferroni_p:.4g}\n"
            )
        n_comp = int(report.settings.get("n_comparisons", "0") or 0)
        rows = report.pairs or report.triplets
        if report.settings.get("mode") in ("pairs", "triplets"):
            fh.write("#[stage2]\n")
            head = "# snp_a\tsnp_b" + ("\tsnp_c" if report.settings["mode"] == "triplets" else "")
            fh.write(head + "\tchi2\tp\tbonferroni_p\tn_samples\tgelman_rubin\tacceptance_rate\n")
            for r in rows:
                ids = [r.id_a, r.id_b] + ([r.id_c] if isinstance(r, TripletResult) else [])
                res = 1.0 / r.n_samples
                fh.write(
                    "\t".join(ids)
                    + f"\t{r.observed_chi2:.4f}"
                    + f"\t{_fmt_p(r.p_value, res)}"
                    + f"\t{_fmt_p(r.bonferroni_p, min(1.0, n_comp * res))}"
                    + f"\t{r.n_samples}"
                    + f"\t{_fmt_stat(r.gelman_rubin)}"
                    + f"\t{_fmt_stat(r.acceptance_rate)}\n"
                )
            fh.write("#[skipped]\n")
            fh.write("# snps\treason\n")
            for s in report.skipped:
                fh.write("+".join(s.ids) + "\t" + s.reason + "\n")


def read_report(path: str) -> ScanReport:
    """Parse a report written by write_report.

    Censored p-values ("<bound") come back as 0.0, matching the pooled
    estimate that produced them.
    """
    settings: dict[str, str] = {}
    stage1: list[SnpResult] = []
    pairs: list[PairResult] = []
    triplets: list[TripletResult] = []
    skipped: list[SkippedSet] = []
    section = None
    ids_by_name: dict[str, int] = {}

    def parse_p(token: str) -> float:
        return 0.0 if token.startswith("<") else float(token)

    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#["):
                section = line.strip("#[]").strip()
                continue
            if line.startswith("#"):
                continue
            fields = line.split("\t")
            if section == "settings":
                settings[fields[0]] = fields[1] if len(fields) > 1 else ""
            elif section == "stage1":
                rank, snp, index, p, bonf = fields
                stage1.append(SnpResult(int(rank), int(index), snp, float(p), float(bonf)))
                ids_by_name[snp] = int(index)
            elif section == "stage2":
                mode = settings.get("mode", "pairs")
                n_ids = 3 if mode == "triplets" else 2
                names = fields[:n_ids]
                chi2, p, bonf, n_samples, rhat, acc = fields[n_ids:]
                idx = tuple(ids_by_name.get(nm, -1) for nm in names)
                common = dict(
                    observed_chi2=float(chi2),
                    p_value=parse_p(p),
                    bonferroni_p=parse_p(bonf),
                    n_samples=int(n_samples),
                    gelman_rubin=float(rhat),
                    acceptance_rate=float(acc),
                )
                if mode == "triplets":
                    triplets.append(TripletResult(*idx, *names, **common))
                else:
                    pairs.append(PairResult(*idx, *names, **common))
            elif section == "skipped":
                names = tuple(fields[0].split("+"))
                skipped.append(
                    SkippedSet(tuple(ids_by_name.get(nm, -1) for nm in names), names, fields[1])
                )
    if not settings and not stage1:
        raise ValueError(f"{path}: not a scan report")
    return ScanReport(settings, stage1, pairs, triplets, skipped)
