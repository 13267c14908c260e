"""Command line interface.

Subcommands: filter (stage one only), scan (both stages), test (one
table), simulate (synthetic study), basis (export or validate move
files).  Exit codes: 0 success, 1 usage error, 2 malformed or
inconsistent data, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import sys
import warnings

from . import __version__
from .markov import (
    BasisError,
    builtin_no3way_basis,
    load_basis,
    read_moves,
    save_basis,
    validate_basis,
)
from .models import (
    DesignTargets,
    PopulationSpec,
    SolverError,
    effect_size,
    prevalence,
    simulate_study,
    solve_params,
)
from .pipeline import (
    ScanReport,
    StudyFormatError,
    load_study,
    pairwise_scan,
    rank_snps,
    save_study,
    triplet_scan,
    write_report,
)
from .sampler import (
    ChainConfig,
    ConvergenceWarning,
    NonConvergenceError,
    extended_fisher_test,
    write_traces,
)
from .tables import (
    FiberSizeError,
    InconsistentMarginsError,
    LogLinearModel,
    TableShape,
    no_top_interaction_model,
    read_table,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NONCONVERGENCE = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage problems instead of 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _add_chain_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--chains", type=int, default=3, help="parallel chains (default 3)")
    p.add_argument("--iters", type=int, default=40000, help="proposals per chain (default 40000)")
    p.add_argument("--burnin", type=int, default=10000, help="discarded prefix per chain (default 10000)")
    p.add_argument("--thin", type=int, default=1, help="keep every nth sample (default 1)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def _chain_config(args: argparse.Namespace) -> ChainConfig:
    return ChainConfig(
        n_chains=args.chains,
        iterations=args.iters,
        burn_in=args.burnin,
        thin=args.thin,
        seed=args.seed,
    )


def _pair_basis(args: argparse.Namespace):
    if args.model == "file" or args.basis:
        if not args.basis:
            raise _UsageError("--model file requires --basis PATH")
        if args.model == "no3way":
            raise _UsageError("--basis conflicts with --model no3way")
        return load_basis(args.basis, no_top_interaction_model(TableShape((3, 3, 2))))
    return builtin_no3way_basis()


def _fmt_p(p: float, n_samples: int) -> str:
    return f"<{1.0 / n_samples:.4g}" if p == 0.0 else f"{p:.4g}"


def cmd_filter(args: argparse.Namespace) -> int:
    study = load_study(args.study)
    ranked = rank_snps(study)
    print(f"{study.n_individuals} individuals, {study.n_snps} variants "
          f"({study.n_cases} cases)")
    for r in ranked[: args.top]:
        print(f"  {r.rank:4d}  {r.snp_id}  p={r.p_value:.4g}  bonferroni={r.bonferroni_p:.4g}")
    if args.out:
        report = ScanReport(
            settings={
                "mode": "filter",
                "n_individuals": str(study.n_individuals),
                "n_snps": str(study.n_snps),
            },
            stage1=ranked,
        )
        write_report(report, args.out)
        print(f"report written to {args.out}")
    return EXIT_OK


def cmd_scan(args: argparse.Namespace) -> int:
    # flag consistency before any file access
    if args.triplets and not args.basis:
        raise _UsageError("triplet scans need --basis (no builtin four-way basis)")
    study = load_study(args.study)
    config = _chain_config(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        if args.triplets:
            basis = load_basis(args.basis, no_top_interaction_model(TableShape((3, 3, 3, 2))))
            report = triplet_scan(
                study, basis, k=args.k, config=config, alpha=args.alpha, jobs=args.jobs
            )
            rows = report.triplets
        else:
            basis = _pair_basis(args)
            report = pairwise_scan(
                study, k=args.k, basis=basis, config=config, alpha=args.alpha, jobs=args.jobs
            )
            rows = report.pairs
    n_conv = sum(1 for w in caught if issubclass(w.category, ConvergenceWarning))

    n_tests = int(report.settings["n_stage2_tests"])
    n_comp = int(report.settings["n_comparisons"])
    print(f"stage 1 kept {report.settings['k']} of {study.n_snps} variants")
    print(f"stage 2 ran {n_tests} tests, skipped {len(report.skipped)}")
    if n_conv:
        print(f"warning: {n_conv} tests raised convergence warnings", file=sys.stderr)
    for r in rows[:5]:
        names = "+".join(
            [r.id_a, r.id_b] + ([r.id_c] if hasattr(r, "id_c") else [])
        )
        bonf_n = max(1, r.n_samples // max(1, n_comp))
        print(f"  {names}  chi2={r.observed_chi2:.2f}  p={_fmt_p(r.p_value, r.n_samples)}  "
              f"bonferroni={_fmt_p(r.bonferroni_p, bonf_n)}")
    n_sig = sum(1 for r in rows if r.bonferroni_p <= args.alpha)
    print(f"{n_sig} sets significant at alpha={args.alpha} after Bonferroni")
    write_report(report, args.out)
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_test(args: argparse.Namespace) -> int:
    table = read_table(args.table)
    if args.basis:
        model = no_top_interaction_model(table.shape)
        basis = load_basis(args.basis, model)
    else:
        if table.shape != TableShape((3, 3, 2)):
            raise _UsageError(
                "the builtin basis covers 3x3x2 tables; pass --basis for other shapes"
            )
        basis = builtin_no3way_basis()
    config = _chain_config(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        result = extended_fisher_test(table, basis, config)
    print(f"observed chi2 {result.observed_chi2:.4f}")
    print(f"p {_fmt_p(result.p_value, result.n_samples)}")
    print("per-chain p " + " ".join(f"{p:.4g}" for p in result.per_chain_p))
    print(f"pooled samples {result.n_samples}")
    diag = result.diagnostics
    rhat = "nan" if diag.gelman_rubin != diag.gelman_rubin else f"{diag.gelman_rubin:.4f}"
    print(f"gelman_rubin {rhat}")
    print(f"acceptance_rate {diag.acceptance_rate:.4f}")
    for w in caught:
        if issubclass(w.category, ConvergenceWarning):
            print(f"warning: {w.message}", file=sys.stderr)
    if args.traces:
        write_traces(diag, args.traces)
        print(f"traces written to {args.traces}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    maf_y = args.maf_y if args.maf_y is not None else args.maf
    pop = PopulationSpec(args.maf, maf_y)
    targets = DesignTargets(effect_size=args.effect_size, prevalence=args.prevalence)
    model = solve_params(args.kind, pop, targets)
    study = simulate_study(
        model,
        pop,
        n_cases=args.cases,
        n_controls=args.controls,
        seed=args.seed,
        n_noise_snps=args.noise_snps,
    )
    save_study(study, args.out)
    print(
        f"{args.kind} model: epsilon={model.epsilon:.6g} alpha={model.alpha:.6g} "
        f"beta={model.beta:.6g} delta={model.delta:.6g}"
    )
    print(f"population prevalence {prevalence(model, pop):.4f}")
    if args.kind != "control":
        print(f"marginal effect size {effect_size(model, pop, 0):.4f}")
    print(
        f"wrote {study.n_individuals} individuals x {study.n_snps} variants to {args.out}"
    )
    return EXIT_OK


def _parse_shape(text: str) -> TableShape:
    try:
        return TableShape(tuple(int(t) for t in text.split(",")))
    except ValueError:
        raise _UsageError(f"bad shape {text!r}; expected comma-separated sizes like 3,3,2") from None


def _parse_facets(text: str, shape: TableShape) -> LogLinearModel:
    facets = []
    for group in text.split(","):
        if not group.isdigit():
            raise _UsageError(f"bad facet group {group!r}; expected digit strings like 01,02,12")
        facets.append(tuple(int(ch) for ch in group))
    return LogLinearModel(shape, tuple(facets))


def cmd_basis(args: argparse.Namespace) -> int:
    if args.action == "export":
        basis = builtin_no3way_basis()
        save_basis(basis, args.out)
        print(f"wrote {len(basis)} moves to {args.out}")
        return EXIT_OK
    # validate
    shape = _parse_shape(args.shape)
    model = _parse_facets(args.facets, shape) if args.facets else no_top_interaction_model(shape)
    moves = read_moves(args.path, shape)
    check = validate_basis(moves, model)
    for msg in check.warnings:
        print(f"warning: {msg}")
    for msg in check.messages:
        print(msg)
    n_bad = sum(1 for ok in check.move_ok if not ok)
    print(f"{len(check.move_ok)} moves checked, {n_bad} invalid")
    return EXIT_OK if check.ok else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="epiwalk", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", parents=[], help="rank variants by single-locus p-value")
    p.add_argument("study", help="study file")
    p.add_argument("--out", help="write the ranking as a report")
    p.add_argument("--top", type=int, default=10, help="rows to print (default 10)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("scan", help="two-stage interaction scan")
    p.add_argument("study", help="study file")
    p.add_argument("--out", required=True, help="report path")
    p.add_argument("--k", type=int, default=10, help="variants kept after stage 1 (default 10)")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level (default 0.05)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    p.add_argument("--basis", help="move file for stage 2")
    p.add_argument("--model", choices=("no3way", "file"), default="no3way",
                   help="stage-2 null: builtin pairwise-margins basis or a loaded file")
    p.add_argument("--triplets", action="store_true", help="test variant triples (needs --basis)")
    _add_chain_flags(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("test", help="exact conditional test of one table")
    p.add_argument("table", help="table file (axis sizes, then counts)")
    p.add_argument("--basis", help="move file; default is the builtin 3x3x2 basis")
    p.add_argument("--traces", help="write kept chain traces as TSV")
    _add_chain_flags(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="simulate a case-control study")
    p.add_argument("--kind", choices=("control", "additive", "multiplicative"), required=True)
    p.add_argument("--maf", type=float, required=True, help="minor allele frequency of locus 1")
    p.add_argument("--maf-y", type=float, default=None, help="MAF of locus 2 (default: same)")
    p.add_argument("--effect-size", type=float, default=1.0, help="target marginal effect size")
    p.add_argument("--prevalence", type=float, default=0.5, help="target prevalence")
    p.add_argument("--cases", type=int, default=400)
    p.add_argument("--controls", type=int, default=400)
    p.add_argument("--noise-snps", type=int, default=0, help="phenotype-independent variants")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="study file to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("basis", help="export or validate move files")
    basis_sub = p.add_subparsers(dest="action", required=True)
    pe = basis_sub.add_parser("export", help="write the builtin basis")
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=cmd_basis)
    pv = basis_sub.add_parser("validate", help="check a move file against a model")
    pv.add_argument("path", help="move file")
    pv.add_argument("--shape", default="3,3,2", help="axis sizes, e.g. 3,3,2")
    pv.add_argument("--facets", default=None,
                    help="facets as digit groups, e.g. 01,02,12 (default: all but the top interaction)")
    pv.set_defaults(func=cmd_basis)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits for --help/--version/bad flags
        code = exc.code
        return code if isinstance(code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as err:
        sys.stderr.write(f"epiwalk: error: {err}\n")
        return EXIT_USAGE
    except (NonConvergenceError, SolverError) as err:
        sys.stderr.write(f"epiwalk: {err}\n")
        return EXIT_NONCONVERGENCE
    except (
        StudyFormatError,
        BasisError,
        InconsistentMarginsError,
        FiberSizeError,
        OSError,
        ValueError,
    ) as err:
        sys.stderr.write(f"epiwalk: {err}\n")
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
