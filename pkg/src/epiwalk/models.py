"""Two-locus disease models and case-control study simulation.

Disease odds for genotypes (i, j), each coded 0/1/2 copies of the
minor allele, follow odds(i, j) = eps * alpha^i * beta^j * delta^(i*j).
The control model fixes alpha = beta = delta = 1 (no genetic effect),
the additive model fixes delta = 1 (marginal effects only, no
interaction on the odds scale), and the multiplicative model leaves
delta free.  Penetrance is odds / (1 + odds).

Model parameters for simulations are pinned down by two design
targets: the marginal effect size

    lambda = odds(D | g = 1) / odds(D | g = 0) - 1

at a causative locus, and the study prevalence pi.  With alpha = beta
(and delta = 3 * alpha in the multiplicative model) those two targets
determine all parameters; `solve_params` recovers them numerically.
Genotypes are drawn under Hardy-Weinberg equilibrium from the minor
allele frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .pipeline import Study

__all__ = [
    "ModelKind",
    "InteractionModel",
    "PopulationSpec",
    "DesignTargets",
    "SolverError",
    "penetrance_matrix",
    "prevalence",
    "effect_size",
    "solve_params",
    "sample_population",
    "simulate_study",
]

ModelKind = Literal["control", "additive", "multiplicative"]

_KINDS = ("control", "additive", "multiplicative")


class SolverError(RuntimeError):
    """Parameter solving failed to reach the requested targets."""


@dataclass(frozen=True)
class InteractionModel:
    """Disease odds model odds(i, j) = eps * alpha^i * beta^j * delta^(ij)."""

    kind: ModelKind
    epsilon: float
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("epsilon", "alpha", "beta", "delta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        if self.kind == "control" and not (self.alpha == self.beta == self.delta == 1.0):
            raise ValueError("control model requires alpha = beta = delta = 1")
        if self.kind == "additive" and self.delta != 1.0:
            raise ValueError("additive model requires delta = 1")

    def odds(self, i: int, j: int) -> float:
        if not (0 <= i <= 2 and 0 <= j <= 2):
            raise ValueError("genotype codes must be 0, 1 or 2")
        return self.epsilon * self.alpha**i * self.beta**j * self.delta ** (i * j)

    def penetrance(self, i: int, j: int) -> float:
        o = self.odds(i, j)
        if math.isinf(o):
            return 1.0
        return o / (1.0 + o)


@dataclass(frozen=True)
class PopulationSpec:
    """Minor allele frequencies of the two causative loci."""

    maf_x: float
    maf_y: float

    def __post_init__(self) -> None:
        # minor allele by definition, so the frequency tops out at one half
        for name in ("maf_x", "maf_y"):
            v = getattr(self, name)
            if not 0.0 < v <= 0.5:
                raise ValueError(f"{name} must lie in (0, 0.5], got {v}")

    def genotype_probs(self, locus: int) -> np.ndarray:
        """Hardy-Weinberg genotype law (P(g=0), P(g=1), P(g=2)) at a locus."""
        if locus == 0:
            q = self.maf_x
        elif locus == 1:
            q = self.maf_y
        else:
            raise ValueError("locus must be 0 or 1")
        return np.array([(1 - q) ** 2, 2 * q * (1 - q), q * q])


@dataclass(frozen=True)
class DesignTargets:
    """Marginal effect size and prevalence a simulated model must hit."""

    effect_size: float = 1.0
    prevalence: float = 0.5

    def __post_init__(self) -> None:
        if not self.effect_size > -1.0:
            raise ValueError("effect_size must exceed -1 (an odds ratio minus one)")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError("prevalence must lie strictly between 0 and 1")


def penetrance_matrix(model: InteractionModel) -> np.ndarray:
    """P(D = 1 | g1 = i, g2 = j) as a 3 x 3 array.

    Overflowing odds saturate to a penetrance of exactly 1.
    """
    i = np.arange(3)[:, None]
    j = np.arange(3)[None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        odds = model.epsilon * model.alpha**i * model.beta**j * model.delta ** (i * j)
        return np.where(np.isinf(odds), 1.0, odds / (1.0 + odds))


def prevalence(model: InteractionModel, pop: PopulationSpec) -> float:
    """P(D = 1) when both genotypes are drawn from the population."""
    pen = penetrance_matrix(model)
    px = pop.genotype_probs(0)
    py = pop.genotype_probs(1)
    return float(px @ pen @ py)


def effect_size(model: InteractionModel, pop: PopulationSpec, locus: int = 0) -> float:
    """Odds ratio, minus one, of disease between one and zero minor alleles.

    The other locus is marginalized out under the population law.
    """
    pen = penetrance_matrix(model)
    if locus == 0:
        other = pop.genotype_probs(1)
        p1 = float(pen[1] @ other)
        p0 = float(pen[0] @ other)
    elif locus == 1:
        other = pop.genotype_probs(0)
        p1 = float(other @ pen[:, 1])
        p0 = float(other @ pen[:, 0])
    else:
        raise ValueError("locus must be 0 or 1")
    if not (0.0 < p0 < 1.0 and 0.0 < p1 < 1.0):
        raise ValueError("conditional disease probability degenerate; odds undefined")
    return (p1 / (1.0 - p1)) * ((1.0 - p0) / p0) - 1.0


def _assemble(kind: ModelKind, log_alpha: float, log_eps: float) -> InteractionModel:
    eps = math.exp(log_eps)
    if kind == "additive":
        a = math.exp(log_alpha)
        return InteractionModel("additive", eps, alpha=a, beta=a, delta=1.0)
    a = math.exp(log_alpha)
    return InteractionModel("multiplicative", eps, alpha=a, beta=a, delta=3.0 * a)


def _residuals(kind: ModelKind, u: np.ndarray, pop: PopulationSpec, targets: DesignTargets) -> np.ndarray:
    m = _assemble(kind, float(u[0]), float(u[1]))
    return np.array(
        [
            effect_size(m, pop, 0) - targets.effect_size,
            prevalence(m, pop) - targets.prevalence,
        ]
    )


def _solve_eps_for_prevalence(kind: ModelKind, log_alpha: float, pop: PopulationSpec, target: float) -> float:
    """Prevalence is strictly increasing in eps; bisect log eps."""
    lo, hi = -80.0, 80.0
    f = lambda le: prevalence(_assemble(kind, log_alpha, le), pop) - target
    if f(lo) > 0 or f(hi) < 0:
        raise SolverError("prevalence target out of reachable range")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_params(
    kind: ModelKind,
    pop: PopulationSpec,
    targets: DesignTargets | None = None,
    tol: float = 1e-9,
    max_iter: int = 200,
) -> InteractionModel:
    """Find model parameters hitting the design targets.

    The control model has no effect parameters, so only the prevalence
    target applies there and the closed form eps = pi / (1 - pi) is
    returned directly.  The other kinds are solved for (alpha, eps) by
    damped Newton iteration on log parameters, with a bisection
    fallback; failure to reach `tol` in the residuals raises
    SolverError.
    """
    if targets is None:
        targets = DesignTargets()
    if kind == "control":
        pi = targets.prevalence
        return InteractionModel("control", pi / (1.0 - pi))
    if kind not in _KINDS:
        raise ValueError(f"unknown model kind {kind!r}")

    u = np.array([0.1, math.log(targets.prevalence / (1.0 - targets.prevalence))])
    r = _residuals(kind, u, pop, targets)
    for _ in range(max_iter):
        if np.abs(r).max() < tol:
            break
        h = 1e-6
        jac = np.empty((2, 2))
        try:
            for c in range(2):
                step = np.zeros(2)
                step[c] = h
                jac[:, c] = (_residuals(kind, u + step, pop, targets) - _residuals(kind, u - step, pop, targets)) / (2 * h)
            delta = np.linalg.solve(jac, -r)
        except (np.linalg.LinAlgError, OverflowError, ValueError):
            break
        scale = 1.0
        for _ in range(60):
            cand = u + scale * delta
            try:
                rc = _residuals(kind, cand, pop, targets)
            except (OverflowError, ValueError):
                # candidate left the numerically representable region
                scale *= 0.5
                continue
            if np.abs(rc).max() < np.abs(r).max():
                u, r = cand, rc
                break
            scale *= 0.5
        else:
            break

    if np.abs(r).max() >= tol:
        u, r = _bisection_fallback(kind, pop, targets)
    if np.abs(r).max() >= tol:
        raise SolverError(
            f"residuals {r.tolist()} did not reach tolerance {tol} for kind {kind!r}"
        )
    return _assemble(kind, float(u[0]), float(u[1]))


def _bisection_fallback(kind: ModelKind, pop: PopulationSpec, targets: DesignTargets) -> tuple[np.ndarray, np.ndarray]:
    """Outer bisection on log alpha with eps solved per candidate."""

    def g(la: float) -> float:
        le = _solve_eps_for_prevalence(kind, la, pop, targets.prevalence)
        return effect_size(_assemble(kind, la, le), pop, 0) - targets.effect_size

    grid = np.linspace(-8.0, 8.0, 161)
    vals = []
    for x in grid:
        try:
            vals.append(g(x))
        except (SolverError, OverflowError, ValueError):
            vals.append(math.nan)
    lo = hi = None
    for i in range(len(grid) - 1):
        if math.isnan(vals[i]) or math.isnan(vals[i + 1]):
            continue
        if vals[i] == 0.0:
            lo = hi = grid[i]
            break
        if vals[i] * vals[i + 1] < 0:
            lo, hi = grid[i], grid[i + 1]
            flo = vals[i]
            break
    if lo is None:
        raise SolverError(f"no bracket for the effect size target {targets.effect_size}")
    for _ in range(200):
        if lo == hi:
            break
        mid = 0.5 * (lo + hi)
        fmid = g(mid)
        if flo * fmid <= 0:
            hi = mid
        else:
            lo, flo = mid, fmid
    la = 0.5 * (lo + hi)
    le = _solve_eps_for_prevalence(kind, la, pop, targets.prevalence)
    u = np.array([la, le])
    return u, _residuals(kind, u, pop, targets)


# ---------------------------------------------------------------------------
# simulation

_DRAW_BLOCK = 4096  # individuals per rejection-sampling block; fixed for determinism


def sample_population(
    model: InteractionModel, pop: PopulationSpec, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw n individuals from the population: (g1, g2, disease status)."""
    g1 = rng.binomial(2, pop.maf_x, size=n).astype(np.int8)
    g2 = rng.binomial(2, pop.maf_y, size=n).astype(np.int8)
    pen = penetrance_matrix(model)
    d = (rng.random(n) < pen[g1, g2]).astype(np.int8)
    return g1, g2, d


def simulate_study(
    model: InteractionModel,
    pop: PopulationSpec,
    n_cases: int = 400,
    n_controls: int = 400,
    seed: int = 0,
    n_noise_snps: int = 0,
    noise_maf_range: tuple[float, float] = (0.05, 0.5),
) -> "Study":
    """Simulate a case-control study with two causative loci.

    Individuals are drawn from the population and kept until the case
    and control quotas fill (rejection sampling on phenotype).  The
    causative loci land in the first two genotype columns; noise
    variants are phenotype-independent with allele frequencies drawn
    uniformly from `noise_maf_range`.  Rows hold cases first.
    """
    from .pipeline import Study

    if n_cases < 1 or n_controls < 1:
        raise ValueError("need at least one case and one control")
    if n_noise_snps < 0:
        raise ValueError("n_noise_snps cannot be negative")
    lo, hi = noise_maf_range
    if not (0.0 < lo <= hi < 1.0):
        raise ValueError("noise_maf_range must satisfy 0 < lo <= hi < 1")

    pi = prevalence(model, pop)
    if pi < 1e-9 and n_cases:
        raise ValueError(f"prevalence {pi:.3g} makes the case quota unreachable")
    if pi > 1 - 1e-9 and n_controls:
        raise ValueError(f"prevalence {pi:.3g} makes the control quota unreachable")

    rng = np.random.default_rng(seed)
    cases: list[np.ndarray] = []
    controls: list[np.ndarray] = []
    got_cases = got_controls = 0
    blocks = 0
    while got_cases < n_cases or got_controls < n_controls:
        blocks += 1
        if blocks > 100_000:
            raise RuntimeError("rejection sampling stalled; quotas look unreachable")
        g1, g2, d = sample_population(model, pop, _DRAW_BLOCK, rng)
        pair = np.stack([g1, g2], axis=1)
        need = n_cases - got_cases
        take = pair[d == 1][:need]
        cases.append(take)
        got_cases += take.shape[0]
        need = n_controls - got_controls
        take = pair[d == 0][:need]
        controls.append(take)
        got_controls += take.shape[0]

    causative = np.concatenate(cases + controls, axis=0)
    n_total = n_cases + n_controls
    phenotypes = np.concatenate(
        [np.ones(n_cases, dtype=np.int8), np.zeros(n_controls, dtype=np.int8)]
    )

    if n_noise_snps:
        mafs = rng.uniform(lo, hi, size=n_noise_snps)
        noise = rng.binomial(2, mafs, size=(n_total, n_noise_snps)).astype(np.int8)
        genotypes = np.concatenate([causative.astype(np.int8), noise], axis=1)
    else:
        genotypes = causative.astype(np.int8)

    # chromosome.position naming: causative pair on chromosomes 1 and 2,
    # noise markers spread along chromosome 3
    snp_ids = ["1.5000", "2.5000"] + [f"3.{1000 + 10 * j}" for j in range(n_noise_snps)]
    return Study(genotypes=genotypes, phenotypes=phenotypes, snp_ids=snp_ids)
