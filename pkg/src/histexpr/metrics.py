"""Correlation, multiple-testing, and classification statistics.

Conventions, fixed across the module: two-sided p-values; tied observations
get average ranks (Spearman) or half-credit (AUROC); Student-t and F tail
probabilities are evaluated through the regularized incomplete beta
function. Undefined correlations (zero variance on either side) come back
NaN-flagged rather than raising, so matrix-wide evaluation can carry on and
report them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import (
    AllEqual,
    ConstantInput,
    ConstantTruth,
    GroupTooSmall,
    LengthMismatch,
    OutOfRange,
    ShapeMismatch,
    SingleClass,
)


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float
    n: int

    @property
    def defined(self) -> bool:
        return not math.isnan(self.rho)


def average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tied values receiving the mean of their positions."""
    x = np.asarray(x)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _t_sf_two_sided(t: float, df: float) -> float:
    # 2 * P(T_df > |t|) via the regularized incomplete beta function
    if df <= 0:
        return math.nan
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def _corr_p_value(rho: float, n: int) -> float:
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return _t_sf_two_sided(t, n - 2)


def pearson(x, y) -> CorrelationResult:
    """Product-moment correlation with a t-distribution p-value."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"shapes {x.shape} vs {y.shape}")
    n = len(x)
    if n < 3:
        raise LengthMismatch(f"need n >= 3, got {n}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        return CorrelationResult(math.nan, math.nan, n)
    rho = float(xc @ yc) / math.sqrt(sxx * syy)
    rho = max(-1.0, min(1.0, rho))
    return CorrelationResult(rho, _corr_p_value(rho, n), n)


def spearman(x, y) -> CorrelationResult:
    """Rank correlation: Pearson correlation of average ranks.

    Constant input on either side leaves the statistic undefined; the
    result is NaN-flagged and downstream medians exclude it.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"shapes {x.shape} vs {y.shape}")
    if len(x) < 3:
        raise LengthMismatch(f"need n >= 3, got {len(x)}")
    return pearson(average_ranks(x), average_ranks(y))


def bh_fdr(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjustment, clipped at 1."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise OutOfRange("p-values must form a vector")
    if np.any((p < 0) | (p > 1) | ~np.isfinite(p)):
        raise OutOfRange("p-values must lie in [0, 1]")
    m = len(p)
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    adj_sorted = p[order] * m / np.arange(1, m + 1)
    running = np.minimum.accumulate(adj_sorted[::-1])[::-1]
    running = np.minimum(running, 1.0)
    out = np.empty(m, dtype=np.float64)
    out[order] = running
    return out


def r2(pred, truth) -> float:
    """Coefficient of determination; negative when pred is worse than the mean."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"shapes {pred.shape} vs {truth.shape}")
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ConstantTruth("truth has zero variance")
    ss_res = float(((truth - pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def welch_t(group_a, group_b) -> tuple[float, float]:
    """Welch's unequal-variance t-test, two-sided."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise GroupTooSmall("each group needs n >= 2")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise ConstantInput("both groups have zero variance")
    sa = va / len(a)
    sb = vb / len(b)
    t = (a.mean() - b.mean()) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1))
    return t, _t_sf_two_sided(t, df)


def anova_oneway(groups) -> tuple[float, float]:
    """One-way fixed-effects ANOVA over two or more groups."""
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(arrays) < 2 or any(len(g) < 2 for g in arrays):
        raise GroupTooSmall("need >= 2 groups with n >= 2 each")
    n_total = sum(len(g) for g in arrays)
    grand = sum(float(g.sum()) for g in arrays) / n_total
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in arrays)
    ss_within = sum(float(((g - g.mean()) ** 2).sum()) for g in arrays)
    if ss_between == 0.0 and ss_within == 0.0:
        raise AllEqual("no variance between or within groups")
    d1 = len(arrays) - 1
    d2 = n_total - len(arrays)
    if ss_within == 0.0:
        return math.inf, 0.0
    f = (ss_between / d1) / (ss_within / d2)
    p = float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))
    return f, p


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum identity; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise LengthMismatch(f"shapes {scores.shape} vs {labels.shape}")
    pos = labels.astype(bool)
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("need both classes present")
    ranks = average_ranks(scores)
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class EvalReport:
    """Per-gene and per-patient correlation report for a prediction matrix."""

    gene_names: list[str]
    patient_ids: list[str]
    gene_rho: np.ndarray
    gene_p: np.ndarray
    gene_fdr_p: np.ndarray
    gene_r2: np.ndarray
    patient_rho: np.ndarray
    patient_p: np.ndarray
    patient_fdr_p: np.ndarray
    median_gene_rho: float
    median_patient_rho: float
    n_significant: int        # genes with FDR-adjusted p < 0.05
    flagged_genes: list[str] = field(default_factory=list)
    flagged_patients: list[str] = field(default_factory=list)


def evaluate(pred: np.ndarray, truth: np.ndarray,
             gene_names=None, patient_ids=None) -> EvalReport:
    """Correlate predictions with truth along both axes of a P x G matrix.

    Per-patient correlations run across that patient's genes; per-gene
    correlations run across patients. BH-FDR is applied separately within
    each family; zero-variance rows/columns are flagged and excluded from
    medians.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ShapeMismatch(f"shapes {pred.shape} vs {truth.shape}")
    n_pat, n_gene = pred.shape
    if gene_names is None:
        gene_names = [f"g{j}" for j in range(n_gene)]
    if patient_ids is None:
        patient_ids = [f"p{i}" for i in range(n_pat)]

    gene_rho = np.full(n_gene, np.nan)
    gene_p = np.full(n_gene, np.nan)
    gene_r2 = np.full(n_gene, np.nan)
    for j in range(n_gene):
        res = spearman(pred[:, j], truth[:, j])
        gene_rho[j] = res.rho
        gene_p[j] = res.p_value
        try:
            gene_r2[j] = r2(pred[:, j], truth[:, j])
        except ConstantTruth:
            pass

    patient_rho = np.full(n_pat, np.nan)
    patient_p = np.full(n_pat, np.nan)
    for i in range(n_pat):
        res = spearman(pred[i, :], truth[i, :])
        patient_rho[i] = res.rho
        patient_p[i] = res.p_value

    def adjust(p):
        out = np.full_like(p, np.nan)
        ok = ~np.isnan(p)
        if ok.any():
            out[ok] = bh_fdr(p[ok])
        return out

    gene_fdr = adjust(gene_p)
    patient_fdr = adjust(patient_p)

    def median_defined(v):
        d = v[~np.isnan(v)]
        return float(np.median(d)) if len(d) else math.nan

    return EvalReport(
        gene_names=list(gene_names),
        patient_ids=list(patient_ids),
        gene_rho=gene_rho,
        gene_p=gene_p,
        gene_fdr_p=gene_fdr,
        gene_r2=gene_r2,
        patient_rho=patient_rho,
        patient_p=patient_p,
        patient_fdr_p=patient_fdr,
        median_gene_rho=median_defined(gene_rho),
        median_patient_rho=median_defined(patient_rho),
        n_significant=int(np.sum(gene_fdr[~np.isnan(gene_fdr)] < 0.05)),
        flagged_genes=[g for g, v in zip(gene_names, gene_rho) if math.isnan(v)],
        flagged_patients=[p for p, v in zip(patient_ids, patient_rho) if math.isnan(v)],
    )


def write_gene_csv(report: EvalReport, path) -> None:
    lines = ["symbol,rho,p,fdr_p,r2"]
    for j, name in enumerate(report.gene_names):
        lines.append(
            f"{name},{float(report.gene_rho[j])!r},{float(report.gene_p[j])!r},"
            f"{float(report.gene_fdr_p[j])!r},{float(report.gene_r2[j])!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_patient_csv(report: EvalReport, path) -> None:
    lines = ["patient_id,rho,p"]
    for i, pid in enumerate(report.patient_ids):
        lines.append(
            f"{pid},{float(report.patient_rho[i])!r},{float(report.patient_p[i])!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def summary_dict(report: EvalReport, pam50_symbols=()) -> dict:
    """JSON-ready summary: medians, significance count, top genes by rho."""
    order = np.argsort(-np.nan_to_num(report.gene_rho, nan=-2.0), kind="stable")
    top = [
        {
            "symbol": report.gene_names[j],
            "rho": report.gene_rho[j],
            "fdr_p": report.gene_fdr_p[j],
            "r2": report.gene_r2[j],
            "pam50": report.gene_names[j] in set(pam50_symbols),
        }
        for j in order[:20]
        if not math.isnan(report.gene_rho[j])
    ]
    return {
        "median_rho_across_patients": report.median_patient_rho,
        "median_rho_across_genes": report.median_gene_rho,
        "median_patient_fdr_p": float(np.nanmedian(report.patient_fdr_p))
        if np.any(~np.isnan(report.patient_fdr_p)) else None,
        "genes_significant_fdr_05": report.n_significant,
        "genes_total": len(report.gene_names),
        "flagged_genes": report.flagged_genes,
        "flagged_patients": report.flagged_patients,
        "top_genes_by_rho": top,
    }


def write_summary_json(report: EvalReport, path, pam50_symbols=()) -> None:
    payload = summary_dict(report, pam50_symbols)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
