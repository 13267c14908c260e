"""Single-variant association: exact test on the 2 x 3 genotype table.

The table rows are phenotype (0 = control, 1 = case) and the columns
genotype codes 0, 1, 2 (copies of the minor allele).  Conditioning on
both margins gives the multivariate hypergeometric law over tables;
the two-sided p-value is the total probability of tables no more
probable than the observed one.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["genotype_table", "fisher_exact", "snp_p_value"]

# Relative tolerance when comparing table probabilities: tables whose
# probability exceeds the observed one by less than this count as ties.
TIE_RTOL = 1e-12


def genotype_table(genotypes: np.ndarray, phenotypes: np.ndarray) -> np.ndarray:
    """Cross-tabulate genotype codes 0/1/2 against phenotype 0/1.

    Returns a (2, 3) integer array with phenotype as the row axis.
    """
    g = np.asarray(genotypes)
    d = np.asarray(phenotypes)
    if g.shape != d.shape or g.ndim != 1:
        raise ValueError("genotypes and phenotypes must be equal-length vectors")
    if g.size == 0:
        raise ValueError("no individuals to tabulate")
    for name, arr, hi in (("genotype", g, 2), ("phenotype", d, 1)):
        bad = np.nonzero((arr < 0) | (arr > hi))[0]
        if bad.size:
            raise ValueError(f"invalid {name} code {arr[bad[0]]} at individual {int(bad[0])}")
    table = np.zeros((2, 3), dtype=np.int64)
    np.add.at(table, (d.astype(np.int64), g.astype(np.int64)), 1)
    return table


def fisher_exact(table: np.ndarray) -> float:
    """Two-sided exact test on a 2 x 3 table with both margins fixed.

    Sums the hypergeometric probability of every table with the same
    margins whose probability is at most the observed one (up to a
    small relative tie tolerance).  Zero rows or columns drop out of
    the conditioning naturally; the table must hold at least one count.
    """
    t = np.asarray(table, dtype=np.int64)
    if t.shape != (2, 3):
        raise ValueError(f"expected a 2x3 table, got shape {t.shape}")
    if (t < 0).any():
        raise ValueError("cell counts must be nonnegative")
    n = int(t.sum())
    if n == 0:
        raise ValueError("empty table has no sampling distribution")

    r0 = int(t[0].sum())
    c0, c1, c2 = (int(v) for v in t.sum(axis=0))

    lg = np.array([math.lgamma(k + 1.0) for k in range(n + 1)])

    # Enumerate the free cells (a, b) = (n_00, n_01) of the top row on a
    # grid; n_02 and the bottom row follow from the margins.
    a = np.arange(0, min(r0, c0) + 1)[:, None]
    b = np.arange(0, min(r0, c1) + 1)[None, :]
    c = r0 - a - b
    feasible = (c >= 0) & (c <= c2)
    cc = np.clip(c, 0, c2)  # keeps lgamma lookups in range; masked below
    # log P(table) differs from -(sum of cell lgammas) by a constant in
    # the margins, so only that sum matters for comparisons.
    neg = -(lg[a] + lg[b] + lg[cc] + lg[c0 - a] + lg[c1 - b] + lg[c2 - cc])
    neg = np.where(feasible, neg, -np.inf)

    obs = -(
        lg[t[0, 0]] + lg[t[0, 1]] + lg[t[0, 2]] + lg[t[1, 0]] + lg[t[1, 1]] + lg[t[1, 2]]
    )

    shift = neg.max()
    probs = np.exp(neg - shift)
    p = float(probs[neg <= obs + TIE_RTOL].sum() / probs.sum())
    return min(p, 1.0)


def snp_p_value(genotypes: np.ndarray, phenotypes: np.ndarray, missing_code: int = 3) -> float:
    """Exact association p-value for one variant, skipping missing calls.

    Individuals whose genotype equals `missing_code` are dropped before
    tabulation.  A variant with no called genotypes carries no evidence
    and returns 1.0.
    """
    g = np.asarray(genotypes)
    d = np.asarray(phenotypes)
    keep = g != missing_code
    if not keep.any():
        return 1.0
    return fisher_exact(genotype_table(g[keep], d[keep]))
