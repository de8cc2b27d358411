"""Survival analysis: Kaplan-Meier, log-rank, Cox regression, c-index.

The Cox model maximizes the tie-corrected partial likelihood (Efron by
default, Breslow behind an option) by Newton-Raphson with step-halving, so
the objective never decreases across accepted steps. Confidence intervals
are normal-approximation Wald intervals on the log-hazard scale.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    ConstantCovariate,
    EmptyCohort,
    MissingValue,
    NoComparablePairs,
    NoEvents,
    NotConverged,
    ParseError,
    Separation,
)

Z_95 = 1.959964  # two-sided 95% normal quantile


@dataclass
class ClinicalRecord:
    patient_id: str
    time_months: float
    event: bool
    grade: int | None = None
    size_mm: float | None = None
    age_years: float | None = None
    ln_positive: bool | None = None
    er: str | None = None
    pr: str | None = None
    her2: str | None = None
    ki67_percent: float | None = None

    def __post_init__(self):
        if not self.time_months > 0:
            raise ValueError(f"{self.patient_id}: follow-up time must be > 0")
        if self.grade is not None and self.grade not in (1, 2, 3):
            raise ValueError(f"{self.patient_id}: grade must be 1, 2 or 3")


def _parse_marker(cell: str):
    cell = cell.strip().lower()
    if cell in ("", "na", "nan"):
        return None
    if cell in ("pos", "neg"):
        return cell
    raise ValueError(f"marker must be pos/neg/NA, got {cell!r}")


def _parse_optional_float(cell: str):
    cell = cell.strip()
    if cell.lower() in ("", "na", "nan"):
        return None
    return float(cell)


def load_clinical(path) -> list[ClinicalRecord]:
    """Read the clinical CSV (see README for the column contract)."""
    expected = ["patient_id", "time_months", "event", "grade", "size_mm",
                "age_years", "ln_positive", "er", "pr", "her2", "ki67_percent"]
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise ParseError(f"header must be {','.join(expected)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise ParseError(f"expected {len(expected)} fields", lineno)
            try:
                grade = _parse_optional_float(row[3])
                ln = _parse_optional_float(row[6])
                records.append(ClinicalRecord(
                    patient_id=row[0],
                    time_months=float(row[1]),
                    event=bool(int(row[2])),
                    grade=None if grade is None else int(grade),
                    size_mm=_parse_optional_float(row[4]),
                    age_years=_parse_optional_float(row[5]),
                    ln_positive=None if ln is None else bool(int(ln)),
                    er=_parse_marker(row[7]),
                    pr=_parse_marker(row[8]),
                    her2=_parse_marker(row[9]),
                    ki67_percent=_parse_optional_float(row[10]),
                ))
            except (ValueError, OverflowError) as exc:
                raise ParseError(str(exc), lineno) from None
    return records


def _times_events(records) -> tuple[np.ndarray, np.ndarray]:
    t = np.array([r.time_months for r in records], dtype=np.float64)
    e = np.array([1 if r.event else 0 for r in records], dtype=np.int64)
    return t, e


@dataclass
class KmCurve:
    """Product-limit survival estimate, stored at the distinct event times.

    ``survival_prob[k]`` is S(t) just after ``event_times[k]``; S is 1.0
    before the first event.
    """

    event_times: np.ndarray
    survival_prob: np.ndarray
    at_risk: np.ndarray

    def survival_at(self, t: float) -> float:
        idx = np.searchsorted(self.event_times, t, side="right") - 1
        return 1.0 if idx < 0 else float(self.survival_prob[idx])


def kaplan_meier(records) -> KmCurve:
    if len(records) == 0:
        raise EmptyCohort("no records")
    times, events = _times_events(records)
    order = np.argsort(times, kind="stable")
    times, events = times[order], events[order]
    n = len(times)

    event_times, probs, at_risk = [], [], []
    s = 1.0
    i = 0
    while i < n:
        j = i
        while j + 1 < n and times[j + 1] == times[i]:
            j += 1
        deaths = int(events[i:j + 1].sum())
        if deaths > 0:
            n_i = n - i
            s *= 1.0 - deaths / n_i
            event_times.append(times[i])
            probs.append(s)
            at_risk.append(n_i)
        i = j + 1
    return KmCurve(
        np.array(event_times), np.array(probs), np.array(at_risk, dtype=np.int64)
    )


def logrank(group_a, group_b) -> tuple[float, float]:
    """Two-group log-rank test; returns (chi-square, p) with 1 df."""
    if len(group_a) == 0 or len(group_b) == 0:
        raise EmptyCohort("both groups must be non-empty")
    ta, ea = _times_events(group_a)
    tb, eb = _times_events(group_b)
    if ea.sum() + eb.sum() == 0:
        raise NoEvents("no events in either group")

    death_times = np.unique(np.concatenate([ta[ea == 1], tb[eb == 1]]))
    observed_a = 0.0
    expected_a = 0.0
    variance = 0.0
    for t in death_times:
        n_a = int((ta >= t).sum())
        n_b = int((tb >= t).sum())
        d_a = int(((ta == t) & (ea == 1)).sum())
        d_b = int(((tb == t) & (eb == 1)).sum())
        n_tot = n_a + n_b
        d_tot = d_a + d_b
        observed_a += d_a
        expected_a += d_tot * n_a / n_tot
        if n_tot > 1:
            variance += (d_tot * (n_a / n_tot) * (1 - n_a / n_tot)
                         * (n_tot - d_tot) / (n_tot - 1))
    if variance == 0.0:
        return 0.0, 1.0
    chi2 = (observed_a - expected_a) ** 2 / variance
    p = math.erfc(math.sqrt(chi2 / 2.0))
    return chi2, p


def cox_partial_loglik(times, events, X, beta, ties: str = "efron") -> float:
    """Partial log-likelihood at ``beta`` (Efron or Breslow tie handling)."""
    ll, _, _ = _cox_quantities(
        np.asarray(times, dtype=np.float64),
        np.asarray(events, dtype=np.int64),
        np.atleast_2d(np.asarray(X, dtype=np.float64).T).T,
        np.atleast_1d(np.asarray(beta, dtype=np.float64)),
        ties,
    )
    return ll


def _cox_quantities(times, events, X, beta, ties):
    # One pass over unique times in descending order, growing the risk set.
    # Returns (loglik, gradient, observed information).
    if ties not in ("efron", "breslow"):
        raise ValueError(f"ties must be 'efron' or 'breslow', got {ties!r}")
    n, p = X.shape
    order = np.argsort(times, kind="stable")
    t = times[order]
    e = events[order]
    x = X[order]
    eta = x @ beta
    shift = eta.max()
    w = np.exp(eta - shift)

    loglik = 0.0
    grad = np.zeros(p)
    info = np.zeros((p, p))
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))

    i = n - 1
    n_deaths = 0
    while i >= 0:
        j = i
        while j > 0 and t[j - 1] == t[i]:
            j -= 1
        blk = slice(j, i + 1)
        wb = w[blk]
        xb = x[blk]
        s0 += wb.sum()
        s1 += wb @ xb
        s2 += (xb * wb[:, None]).T @ xb

        dead = e[blk] == 1
        m = int(dead.sum())
        if m > 0:
            n_deaths += m
            wd = wb[dead]
            xd = xb[dead]
            s0d = wd.sum()
            s1d = wd @ xd
            s2d = (xd * wd[:, None]).T @ xd
            loglik += float((eta[blk][dead] - shift).sum())
            grad += xd.sum(axis=0)
            fracs = np.arange(m) / m if ties == "efron" else np.zeros(m)
            for frac in fracs:
                denom = s0 - frac * s0d
                loglik -= math.log(denom)
                r = (s1 - frac * s1d) / denom
                grad -= r
                info += (s2 - frac * s2d) / denom - np.outer(r, r)
        i = j - 1

    # the eta shift cancels exactly: it is added back once per death in the
    # linear term and subtracted once per death through the log terms
    return loglik, grad, info


@dataclass
class CoxFit:
    names: list[str]
    coefficients: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    hr: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    p: np.ndarray
    n: int
    n_events: int
    converged: bool
    iterations: int
    loglik: float
    loglik_history: list[float]
    ties: str


def cox_fit(records, covariates, names=None, *, ties: str = "efron",
            tol: float = 1e-9, max_iter: int = 100) -> CoxFit:
    """Fit a proportional-hazards model to clinical records.

    ``covariates`` is the n x p design matrix aligned with ``records``.
    Newton-Raphson with step-halving; convergence when the accepted step
    changes no coefficient by more than ``tol``.
    """
    times, events = _times_events(records)
    X = np.asarray(covariates, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if n != len(records):
        raise ValueError("design matrix rows must match records")
    if int(events.sum()) == 0:
        raise NoEvents("no events in cohort")
    spans = np.ptp(X, axis=0)
    if np.any(spans == 0):
        which = int(np.argmin(spans))
        label = names[which] if names else f"column {which}"
        raise ConstantCovariate(f"covariate {label} is constant")
    if n < 10 * p:
        warnings.warn(
            f"only {n} records for {p} covariates; estimates may be unstable",
            stacklevel=2,
        )
    if names is None:
        names = [f"x{k}" for k in range(p)]

    # center columns: the partial likelihood is shift-invariant, the
    # exponentials better conditioned
    Xc = X - X.mean(axis=0)

    beta = np.zeros(p)
    loglik, grad, info = _cox_quantities(times, events, Xc, beta, ties)
    history = [loglik]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        try:
            delta = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            if np.max(np.abs(beta)) > 20:
                raise Separation(
                    "information matrix collapsed beyond |beta| = 20"
                ) from None
            raise NotConverged("information matrix is singular") from None
        step = 1.0
        while True:
            cand = beta + step * delta
            ll_new, g_new, i_new = _cox_quantities(times, events, Xc, cand, ties)
            if ll_new >= loglik - 1e-12:
                break
            step *= 0.5
            if step < 1e-12:
                cand = beta
                ll_new, g_new, i_new = loglik, grad, info
                break
        moved = np.max(np.abs(cand - beta))
        beta, loglik, grad, info = cand, ll_new, g_new, i_new
        history.append(loglik)
        if moved < tol:
            converged = True
            break
        if np.max(np.abs(beta)) > 20 and np.linalg.norm(grad) > 0:
            # still stepping with a huge coefficient: monotone likelihood,
            # the gradient decays but never reaches zero
            raise Separation(
                "coefficient magnitude exceeds 20 with non-vanishing gradient"
            )
    if not converged:
        raise NotConverged(f"no convergence in {max_iter} iterations")

    covariance = np.linalg.inv(info)
    se = np.sqrt(np.diag(covariance))
    z = np.abs(beta) / se
    p_values = np.array([math.erfc(v / math.sqrt(2.0)) for v in z])
    return CoxFit(
        names=list(names),
        coefficients=beta,
        covariance=covariance,
        se=se,
        hr=np.exp(beta),
        ci_low=np.exp(beta - Z_95 * se),
        ci_high=np.exp(beta + Z_95 * se),
        p=p_values,
        n=n,
        n_events=int(events.sum()),
        converged=converged,
        iterations=iterations,
        loglik=loglik,
        loglik_history=history,
        ties=ties,
    )


def c_index(risk_scores, records) -> float:
    """Harrell concordance of risk scores against observed survival.

    Comparable pairs: an event subject versus anyone observed strictly
    longer. Risk ties score half.
    """
    times, events = _times_events(records)
    risk = np.ascontiguousarray(risk_scores, dtype=np.float64)
    if len(risk) != len(records):
        raise ValueError("risk scores must match records")
    wins, ties_n, comparable = _kernels.cindex_counts(
        np.ascontiguousarray(times), np.ascontiguousarray(events), risk
    )
    if comparable == 0:
        raise NoComparablePairs("no comparable pairs (check events and ties)")
    return (wins + 0.5 * ties_n) / comparable


def dichotomize(records, parameter: str, cutoff=None):
    """Split records into (above-cutoff, rest) groups on one covariate.

    Numeric parameters follow the strict ``> cutoff`` convention, so the
    boundary value lands in the second group. Boolean parameters ignore the
    cutoff: the true group comes first.
    """
    first, second = [], []
    for r in records:
        value = getattr(r, parameter)
        if value is None:
            raise MissingValue(r.patient_id, parameter)
        if isinstance(value, bool):
            (first if value else second).append(r)
        else:
            if cutoff is None:
                raise ValueError(f"numeric parameter {parameter!r} needs a cutoff")
            (first if value > cutoff else second).append(r)
    return first, second


def write_km_csv(curve: KmCurve, path, n_total: int) -> None:
    """KM step function as CSV, including the implicit (0, 1.0) start."""
    lines = ["time,survival,at_risk"]
    lines.append(f"0.0,1.0,{n_total}")
    for t, s, r in zip(curve.event_times, curve.survival_prob, curve.at_risk):
        lines.append(f"{float(t)!r},{float(s)!r},{int(r)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
