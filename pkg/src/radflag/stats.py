"""Estimators and paired hypothesis tests for framework comparison.

Precision is summarized as PPV = TP/(TP+FP) with exact Clopper-Pearson
intervals, detection yield as adjusted TPR = TP/N.  Frameworks are compared
on the same reports: a report-level paired-cluster bootstrap for PPV
differences, the exact McNemar test for true-positive detection, a
Cochran-Armitage trend test across the framework ordering, and an overall
Cochran Q test.  Multiplicity is controlled with Holm-Bonferroni.

Every stochastic procedure is seed-deterministic via counter-based
per-replicate RNG streams, so results never depend on worker count or call
order.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .outcomes import Framework, FrameworkOutcome

_MAX_SEED = 2**64 - 1
_MAX_REDRAWS = 10_000


class StatsError(ValueError):
    """Undefined estimate, unmatched pairing, or missing adjudications."""


class TestMethod(str, Enum):
    BOOTSTRAP_PPV_DIFF = "paired_cluster_bootstrap"
    MCNEMAR_EXACT = "mcnemar_exact"
    MCNEMAR_CHI2 = "mcnemar_chi_square"
    COCHRAN_ARMITAGE = "cochran_armitage_trend"
    COCHRAN_Q = "cochran_q"


@dataclass(frozen=True)
class BinomialCount:
    successes: int
    trials: int

    def __post_init__(self) -> None:
        if not 0 <= self.successes <= self.trials:
            raise StatsError(
                f"successes must be within [0, trials]: {self.successes}/{self.trials}"
            )


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    lo: float
    hi: float
    level: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lo <= self.point <= self.hi <= 1.0:
            raise StatsError(
                f"interval must satisfy 0 <= lo <= point <= hi <= 1: "
                f"({self.lo}, {self.point}, {self.hi})"
            )


@dataclass(frozen=True)
class TestResult:
    """One hypothesis test: statistic, two-sided p, and provenance.

    ``replicates_or_df`` carries bootstrap replicates, discordant-pair
    counts (McNemar), or degrees of freedom, depending on the method.
    ``seed`` is set only for stochastic procedures.
    """

    statistic: float
    p_value: float
    method: TestMethod
    replicates_or_df: int
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise StatsError(f"p-value out of range: {self.p_value}")


@dataclass(frozen=True)
class PairedFlags:
    """Matched binary outcomes on the same reports, one column per framework."""

    report_ids: tuple[str, ...]
    frameworks: tuple[Framework, ...]
    flagged: Mapping[Framework, tuple[bool, ...]]
    true_positive: Mapping[Framework, tuple[bool, ...]]

    def __post_init__(self) -> None:
        n = len(self.report_ids)
        if len(set(self.report_ids)) != n:
            raise StatsError("duplicate report_id in paired flags")
        for mapping, label in ((self.flagged, "flagged"), (self.true_positive, "tp")):
            if set(mapping) != set(self.frameworks):
                raise StatsError(f"{label} columns must cover exactly the frameworks")
            for fw, column in mapping.items():
                if len(column) != n:
                    raise StatsError(
                        f"{label} column for {fw.value} has {len(column)} entries, "
                        f"expected {n}"
                    )
        for fw in self.frameworks:
            for is_tp, is_flag in zip(self.true_positive[fw], self.flagged[fw]):
                if is_tp and not is_flag:
                    raise StatsError(
                        f"true positive without a flag in framework {fw.value}"
                    )

    def __len__(self) -> int:
        return len(self.report_ids)

    def flag_count(self, framework: Framework) -> int:
        return sum(self.flagged[framework])

    def tp_count(self, framework: Framework) -> int:
        return sum(self.true_positive[framework])


def ppv(tp: int, fp: int) -> float:
    """Positive predictive value TP/(TP+FP); no flags means no estimate."""
    if tp < 0 or fp < 0:
        raise StatsError("counts must be >= 0")
    if tp + fp == 0:
        raise StatsError("PPV undefined: no flagged reports")
    return tp / (tp + fp)


def atpr(tp: int, n: int) -> float:
    """Adjusted true-positive rate TP/N over the whole corpus."""
    if n <= 0:
        raise StatsError("corpus size must be > 0")
    if not 0 <= tp <= n:
        raise StatsError(f"tp must be within [0, n]: {tp}/{n}")
    return tp / n


def clopper_pearson(count: BinomialCount, level: float = 0.95) -> ConfidenceInterval:
    """Exact two-sided binomial interval from Beta quantiles."""
    if not 0.0 < level < 1.0:
        raise StatsError(f"confidence level must be in (0, 1): {level}")
    k, n = count.successes, count.trials
    if n == 0:
        raise StatsError("cannot build an interval from zero trials")
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(_scipy_stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(_scipy_stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return ConfidenceInterval(point=k / n, lo=lo, hi=hi, level=level)


def _require_framework(flags: PairedFlags, framework: Framework) -> None:
    if framework not in flags.frameworks:
        raise StatsError(f"framework {framework.value} not present in paired flags")


def paired_cluster_bootstrap_ppv_diff(
    flags: PairedFlags,
    fw_a: Framework | str,
    fw_b: Framework | str,
    replicates: int = 10_000,
    seed: int = 0,
) -> TestResult:
    """Two-sided bootstrap test of PPV(a) - PPV(b) on matched reports.

    Reports are the resampling clusters: each replicate redraws report ids
    with replacement, carrying each report's flag and adjudication for both
    frameworks jointly so pairs stay intact.  Replicates where either
    framework has no flags are redrawn from the same per-replicate stream.
    p = min(1, 2 * min(share of diffs <= 0, share >= 0)), each share with a
    +1/(R+1) continuity adjustment.  Replicate streams are counter-based
    (keyed by seed and replicate index), so results are seed-stable.
    """
    fw_a, fw_b = Framework(fw_a), Framework(fw_b)
    _require_framework(flags, fw_a)
    _require_framework(flags, fw_b)
    if replicates < 1000:
        raise StatsError("bootstrap needs at least 1000 replicates")
    if not 0 <= seed <= _MAX_SEED:
        raise StatsError("seed must fit in an unsigned 64-bit integer")
    for fw in (fw_a, fw_b):
        if flags.flag_count(fw) == 0:
            raise StatsError(
                f"framework {fw.value} has no flags; PPV difference is undefined"
            )

    flag_a = np.asarray(flags.flagged[fw_a], dtype=bool)
    flag_b = np.asarray(flags.flagged[fw_b], dtype=bool)
    tp_a = np.asarray(flags.true_positive[fw_a], dtype=bool)
    tp_b = np.asarray(flags.true_positive[fw_b], dtype=bool)
    n = len(flags)

    observed = tp_a.sum() / flag_a.sum() - tp_b.sum() / flag_b.sum()

    at_most = 0
    at_least = 0
    for replicate in range(replicates):
        rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, replicate], dtype=np.uint64))
        )
        for _ in range(_MAX_REDRAWS):
            idx = rng.integers(0, n, size=n)
            denom_a = flag_a[idx].sum()
            denom_b = flag_b[idx].sum()
            if denom_a > 0 and denom_b > 0:
                break
        else:
            raise StatsError(
                "bootstrap could not draw a replicate with flags in both frameworks"
            )
        diff = tp_a[idx].sum() / denom_a - tp_b[idx].sum() / denom_b
        if diff <= 0.0:
            at_most += 1
        if diff >= 0.0:
            at_least += 1

    lower_share = (at_most + 1) / (replicates + 1)
    upper_share = (at_least + 1) / (replicates + 1)
    p = min(1.0, 2.0 * min(lower_share, upper_share))
    return TestResult(
        statistic=float(observed),
        p_value=p,
        method=TestMethod.BOOTSTRAP_PPV_DIFF,
        replicates_or_df=replicates,
        seed=seed,
    )


def mcnemar_exact_from_counts(b: int, c: int) -> TestResult:
    """Exact McNemar p from discordant counts: b (a-only) and c (b-only).

    p = min(1, 2 * P(X <= min(b, c))) for X ~ Binomial(b + c, 1/2); no
    discordance at all means p = 1.  The statistic reported is min(b, c)
    and replicates_or_df carries b + c.
    """
    if b < 0 or c < 0:
        raise StatsError("discordant counts must be >= 0")
    total = b + c
    if total == 0:
        p = 1.0
    else:
        p = min(1.0, 2.0 * float(_scipy_stats.binom.cdf(min(b, c), total, 0.5)))
    return TestResult(
        statistic=float(min(b, c)),
        p_value=p,
        method=TestMethod.MCNEMAR_EXACT,
        replicates_or_df=total,
    )


def discordant_counts(
    flags: PairedFlags, fw_a: Framework | str, fw_b: Framework | str
) -> tuple[int, int]:
    """(b, c): reports where only a detected a true error, and only b did."""
    fw_a, fw_b = Framework(fw_a), Framework(fw_b)
    _require_framework(flags, fw_a)
    _require_framework(flags, fw_b)
    column_a = flags.true_positive[fw_a]
    column_b = flags.true_positive[fw_b]
    b = sum(1 for x, y in zip(column_a, column_b) if x and not y)
    c = sum(1 for x, y in zip(column_a, column_b) if y and not x)
    return b, c


def mcnemar_exact(
    flags: PairedFlags,
    fw_a: Framework | str,
    fw_b: Framework | str,
    on: str = "tp_detection",
) -> TestResult:
    """Exact McNemar test on matched true-positive detection indicators."""
    if on != "tp_detection":
        raise StatsError(f"unsupported comparison target: {on!r}")
    b, c = discordant_counts(flags, fw_a, fw_b)
    return mcnemar_exact_from_counts(b, c)


def holm_bonferroni(p_values: Sequence[float]) -> list[float]:
    """Step-down Holm adjustment, returned in input order.

    Sort ascending, scale the i-th smallest by (m - i + 1), enforce
    monotone nondecreasing along the sorted order, cap at 1.
    """
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise StatsError(f"p-value out of range: {p}")
    m = len(p_values)
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank, index in enumerate(order):
        scaled = (m - rank) * p_values[index]
        running = max(running, min(1.0, scaled))
        adjusted[index] = running
    return adjusted


def cochran_armitage_trend(
    groups: Sequence[BinomialCount],
    scores: Sequence[float],
    continuity: bool = True,
) -> TestResult:
    """Trend in proportions across ordered groups, two-sided normal p.

    Applies a 0.5 continuity correction to |T| by default; the uncorrected
    statistic is available with ``continuity=False``.
    """
    if len(groups) < 3:
        raise StatsError("trend test needs at least 3 groups")
    if len(scores) != len(groups):
        raise StatsError("scores must match groups")
    if any(b <= a for a, b in zip(scores, scores[1:])):
        raise StatsError("scores must be strictly increasing")
    total_successes = sum(g.successes for g in groups)
    total_trials = sum(g.trials for g in groups)
    if total_trials == 0:
        raise StatsError("trend test needs nonempty groups")
    pooled = total_successes / total_trials
    if pooled == 0.0 or pooled == 1.0:
        raise StatsError("degenerate variance: all groups empty or all full")

    t = sum(
        s * (g.successes - g.trials * pooled) for s, g in zip(scores, groups)
    )
    weighted = sum(s * g.trials for s, g in zip(scores, groups))
    weighted_sq = sum(s * s * g.trials for s, g in zip(scores, groups))
    variance = pooled * (1 - pooled) * (weighted_sq - weighted**2 / total_trials)
    if variance <= 0:
        raise StatsError("degenerate variance: scores carry no spread")

    magnitude = abs(t) - (0.5 if continuity else 0.0)
    z = math.copysign(max(0.0, magnitude) / math.sqrt(variance), t)
    p = 2.0 * float(_scipy_stats.norm.sf(abs(z)))
    return TestResult(
        statistic=z,
        p_value=min(1.0, p),
        method=TestMethod.COCHRAN_ARMITAGE,
        replicates_or_df=1,
    )


def cochran_q_from_matrix(rows: Sequence[Sequence[bool]]) -> TestResult:
    """Cochran Q over an n x k binary matrix (reports x treatments).

    All-constant rows contribute nothing; when every row is constant the
    statistic is defined as 0 with p = 1.  With k = 2 the statistic equals
    the asymptotic McNemar chi-square.
    """
    if not rows:
        raise StatsError("Q test needs at least one row")
    k = len(rows[0])
    if k < 2:
        raise StatsError("Q test needs at least 2 treatments")
    if any(len(row) != k for row in rows):
        raise StatsError("all rows must have the same number of treatments")

    column_totals = [sum(row[j] for row in rows) for j in range(k)]
    row_totals = [sum(row) for row in rows]
    grand = sum(row_totals)
    denominator = k * grand - sum(r * r for r in row_totals)
    df = k - 1
    if denominator == 0:
        return TestResult(
            statistic=0.0, p_value=1.0, method=TestMethod.COCHRAN_Q, replicates_or_df=df
        )
    numerator = (k - 1) * (k * sum(c * c for c in column_totals) - grand * grand)
    q = numerator / denominator
    p = float(_scipy_stats.chi2.sf(q, df))
    return TestResult(
        statistic=q, p_value=p, method=TestMethod.COCHRAN_Q, replicates_or_df=df
    )


def cochran_q(flags: PairedFlags, on: str = "tp_detection") -> TestResult:
    """Overall Cochran Q across >= 3 frameworks on matched TP indicators."""
    if on != "tp_detection":
        raise StatsError(f"unsupported comparison target: {on!r}")
    if len(flags.frameworks) < 3:
        raise StatsError("Q test needs at least 3 frameworks")
    matrix = [
        [flags.true_positive[fw][i] for fw in flags.frameworks]
        for i in range(len(flags))
    ]
    return cochran_q_from_matrix(matrix)


def sample_size_two_proportions(
    p1: float, p2: float, alpha: float = 0.05, power: float = 0.80
) -> int:
    """Total sample size (two equal groups) to detect p1 vs p2.

    Pooled-variance normal approximation, per-group size rounded up.
    """
    for name, value in (("p1", p1), ("p2", p2)):
        if not 0.0 < value < 1.0:
            raise StatsError(f"{name} must be in (0, 1): {value}")
    if p1 == p2:
        raise StatsError("proportions must differ")
    if not 0.0 < alpha < 1.0 or not 0.0 < power < 1.0:
        raise StatsError("alpha and power must be in (0, 1)")
    z_alpha = float(_scipy_stats.norm.ppf(1 - alpha / 2))
    z_beta = float(_scipy_stats.norm.ppf(power))
    pooled = (p1 + p2) / 2
    numerator = (
        z_alpha * math.sqrt(2 * pooled * (1 - pooled))
        + z_beta * math.sqrt(p1 * (1 - p1) + p2 * (1 - p2))
    ) ** 2
    per_group = math.ceil(numerator / (p1 - p2) ** 2)
    return 2 * per_group


def expected_ppv(
    sensitivity: float, specificity: float, prevalence: float
) -> tuple[float, float]:
    """PPV and false-alarms-per-true-error implied by operating characteristics.

    ppv = s*pi / (s*pi + (1-spec)(1-pi)); fp_per_tp is the reciprocal odds.
    """
    for name, value in (
        ("sensitivity", sensitivity),
        ("specificity", specificity),
        ("prevalence", prevalence),
    ):
        if not 0.0 <= value <= 1.0:
            raise StatsError(f"{name} must be in [0, 1]: {value}")
    if prevalence == 0.0 or sensitivity == 0.0:
        raise StatsError("no true positives possible: sensitivity*prevalence = 0")
    true_rate = sensitivity * prevalence
    false_rate = (1 - specificity) * (1 - prevalence)
    return true_rate / (true_rate + false_rate), false_rate / true_rate


# ---------------------------------------------------------------------------
# Run-level evaluation: outcomes + human adjudications -> comparison report.

OVERALL = "overall"

VERDICT_TRUE = "true_error"
VERDICT_FALSE = "false_alarm"


@dataclass(frozen=True)
class Adjudication:
    """A human verdict on one framework's flag for one report."""

    report_id: str
    framework: Framework
    true_error: bool


def load_adjudications(path: str | Path) -> dict[tuple[str, str], bool]:
    """Load a verdict CSV (report_id, framework, verdict) to a lookup map.

    verdict must be "true_error" or "false_alarm"; duplicate
    (report, framework) rows are rejected.
    """
    lookup: dict[tuple[str, str], bool] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in ("report_id", "framework", "verdict"):
            if column not in header:
                raise StatsError(f"adjudication file missing column: {column}")
        for row in reader:
            key = (row["report_id"], Framework(row["framework"]).value)
            verdict = (row["verdict"] or "").strip().lower()
            if verdict not in (VERDICT_TRUE, VERDICT_FALSE):
                raise StatsError(
                    f"verdict for {key} must be {VERDICT_TRUE!r} or "
                    f"{VERDICT_FALSE!r}, got {row['verdict']!r}"
                )
            if key in lookup:
                raise StatsError(f"duplicate adjudication for {key}")
            lookup[key] = verdict == VERDICT_TRUE
    return lookup


@dataclass(frozen=True)
class FrameworkRow:
    """Descriptive precision/yield row for one framework in one stratum."""

    framework: Framework
    stratum: str
    n: int
    flagged: int
    tp: int
    fp: int
    ppv_ci: ConfidenceInterval | None  # None when nothing was flagged
    atpr_ci: ConfidenceInterval


@dataclass(frozen=True)
class PairwiseRow:
    """One framework pair: PPV bootstrap and TP-detection McNemar."""

    fw_a: Framework
    fw_b: Framework
    ppv_diff: float | None
    bootstrap_p: float | None
    bootstrap_p_holm: float | None
    mcnemar_p: float
    mcnemar_p_holm: float


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[FrameworkRow, ...]
    pairwise: tuple[PairwiseRow, ...]
    trend: TestResult | None
    q_test: TestResult | None
    n_reports: int
    excluded_failed: tuple[str, ...]
    excluded_pending: tuple[str, ...]
    replicates: int
    seed: int


def build_paired_flags(
    outcomes: Iterable[FrameworkOutcome],
    adjudications: Mapping[tuple[str, str], bool],
) -> PairedFlags:
    """Pair successful outcomes across frameworks with their verdicts.

    Every framework must cover the same report set, and every flagged
    outcome must have a verdict; violations name the offending reports.
    """
    by_framework: dict[Framework, dict[str, FrameworkOutcome]] = {}
    order: list[str] = []
    for outcome in outcomes:
        column = by_framework.setdefault(outcome.framework, {})
        if outcome.report_id in column:
            raise StatsError(
                f"duplicate outcome for report {outcome.report_id} "
                f"in framework {outcome.framework.value}"
            )
        column[outcome.report_id] = outcome
        if outcome.report_id not in order:
            order.append(outcome.report_id)
    if not by_framework:
        raise StatsError("no outcomes to evaluate")

    frameworks = tuple(sorted(by_framework, key=lambda f: f.value))
    id_sets = {fw: set(column) for fw, column in by_framework.items()}
    reference = id_sets[frameworks[0]]
    for fw in frameworks[1:]:
        if id_sets[fw] != reference:
            missing = sorted(reference ^ id_sets[fw])[:5]
            raise StatsError(
                f"frameworks cover different report sets (e.g. {missing})"
            )

    failed = sorted(
        {
            rid
            for fw in frameworks
            for rid, outcome in by_framework[fw].items()
            if outcome.failed
        }
    )
    if failed:
        raise StatsError(f"failed outcomes present for reports: {failed}")

    unadjudicated = sorted(
        {
            rid
            for fw in frameworks
            for rid, outcome in by_framework[fw].items()
            if outcome.flagged and (rid, fw.value) not in adjudications
        }
    )
    if unadjudicated:
        raise StatsError(f"flags without a verdict for reports: {unadjudicated}")

    flagged = {
        fw: tuple(by_framework[fw][rid].flagged for rid in order)
        for fw in frameworks
    }
    true_positive = {
        fw: tuple(
            by_framework[fw][rid].flagged and adjudications[(rid, fw.value)]
            for rid in order
        )
        for fw in frameworks
    }
    return PairedFlags(
        report_ids=tuple(order),
        frameworks=frameworks,
        flagged=flagged,
        true_positive=true_positive,
    )


def _descriptive_rows(
    outcomes_by_fw: Mapping[Framework, Mapping[str, FrameworkOutcome]],
    adjudications: Mapping[tuple[str, str], bool],
    report_ids: Sequence[str],
    level: float,
) -> tuple[FrameworkRow, ...]:
    modalities = sorted(
        {
            outcomes_by_fw[fw][rid].modality
            for fw in outcomes_by_fw
            for rid in report_ids
        }
    )
    strata: list[tuple[str, set[str]]] = [(OVERALL, set(report_ids))]
    for modality in modalities:
        members = {
            rid
            for rid in report_ids
            if next(iter(outcomes_by_fw.values()))[rid].modality == modality
        }
        strata.append((modality, members))

    rows: list[FrameworkRow] = []
    for fw in sorted(outcomes_by_fw, key=lambda f: f.value):
        for stratum, members in strata:
            chosen = [outcomes_by_fw[fw][rid] for rid in report_ids if rid in members]
            n = len(chosen)
            if n == 0:
                continue
            flags = [o for o in chosen if o.flagged]
            tp = sum(
                1 for o in flags if adjudications[(o.report_id, fw.value)]
            )
            fp = len(flags) - tp
            ppv_ci = (
                clopper_pearson(BinomialCount(tp, len(flags)), level)
                if flags
                else None
            )
            atpr_ci = clopper_pearson(BinomialCount(tp, n), level)
            rows.append(
                FrameworkRow(
                    framework=fw,
                    stratum=stratum,
                    n=n,
                    flagged=len(flags),
                    tp=tp,
                    fp=fp,
                    ppv_ci=ppv_ci,
                    atpr_ci=atpr_ci,
                )
            )
    return tuple(rows)


def evaluate_run(
    outcomes: Iterable[FrameworkOutcome],
    adjudications: Mapping[tuple[str, str], bool],
    *,
    replicates: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
    on_unadjudicated: str = "error",
) -> ComparisonReport:
    """Full comparison: descriptive rows, pairwise tests, trend and Q.

    Reports failed in any framework are excluded (and listed); flags
    lacking a verdict either abort (default) or exclude the whole report
    when ``on_unadjudicated="exclude"``.  ``replicates=0`` skips the
    bootstrap (descriptive rows, McNemar, trend, and Q still run).
    """
    if on_unadjudicated not in ("error", "exclude"):
        raise StatsError(f"unknown unadjudicated policy: {on_unadjudicated!r}")

    all_outcomes = list(outcomes)
    by_framework: dict[Framework, dict[str, FrameworkOutcome]] = {}
    order: list[str] = []
    for outcome in all_outcomes:
        column = by_framework.setdefault(outcome.framework, {})
        if outcome.report_id in column:
            raise StatsError(
                f"duplicate outcome for report {outcome.report_id} "
                f"in framework {outcome.framework.value}"
            )
        column[outcome.report_id] = outcome
        if outcome.report_id not in order:
            order.append(outcome.report_id)
    if not by_framework:
        raise StatsError("no outcomes to evaluate")

    frameworks = tuple(sorted(by_framework, key=lambda f: f.value))
    reference = set(by_framework[frameworks[0]])
    for fw in frameworks[1:]:
        if set(by_framework[fw]) != reference:
            missing = sorted(reference ^ set(by_framework[fw]))[:5]
            raise StatsError(
                f"frameworks cover different report sets (e.g. {missing})"
            )

    failed = sorted(
        {
            rid
            for fw in frameworks
            for rid, o in by_framework[fw].items()
            if o.failed
        }
    )
    unadjudicated = sorted(
        {
            rid
            for fw in frameworks
            for rid, o in by_framework[fw].items()
            if not o.failed
            and o.flagged
            and (rid, fw.value) not in adjudications
        }
    )
    if unadjudicated and on_unadjudicated == "error":
        raise StatsError(f"flags without a verdict for reports: {unadjudicated}")

    dropped = set(failed) | set(unadjudicated)
    kept = [rid for rid in order if rid not in dropped]
    if not kept:
        raise StatsError("no evaluable reports remain after exclusions")
    kept_by_fw = {
        fw: {rid: by_framework[fw][rid] for rid in kept} for fw in frameworks
    }

    survivors = [o for fw in frameworks for o in kept_by_fw[fw].values()]
    paired = build_paired_flags(survivors, adjudications)
    rows = _descriptive_rows(kept_by_fw, adjudications, kept, level)

    pairwise: list[PairwiseRow] = []
    if len(frameworks) >= 2:
        pairs = list(combinations(frameworks, 2))
        bootstrap_ps: list[float | None] = []
        diffs: list[float | None] = []
        mcnemar_ps: list[float] = []
        for fw_a, fw_b in pairs:
            mcnemar_ps.append(mcnemar_exact(paired, fw_a, fw_b).p_value)
            both_flagged = (
                paired.flag_count(fw_a) > 0 and paired.flag_count(fw_b) > 0
            )
            if replicates > 0 and both_flagged:
                result = paired_cluster_bootstrap_ppv_diff(
                    paired, fw_a, fw_b, replicates=replicates, seed=seed
                )
                bootstrap_ps.append(result.p_value)
                diffs.append(result.statistic)
            else:
                bootstrap_ps.append(None)
                diffs.append(None)
        defined = [p for p in bootstrap_ps if p is not None]
        adjusted_defined = holm_bonferroni(defined) if defined else []
        adjusted_iter = iter(adjusted_defined)
        bootstrap_holm = [
            next(adjusted_iter) if p is not None else None for p in bootstrap_ps
        ]
        mcnemar_holm = holm_bonferroni(mcnemar_ps)
        for i, (fw_a, fw_b) in enumerate(pairs):
            pairwise.append(
                PairwiseRow(
                    fw_a=fw_a,
                    fw_b=fw_b,
                    ppv_diff=diffs[i],
                    bootstrap_p=bootstrap_ps[i],
                    bootstrap_p_holm=bootstrap_holm[i],
                    mcnemar_p=mcnemar_ps[i],
                    mcnemar_p_holm=mcnemar_holm[i],
                )
            )

    trend: TestResult | None = None
    q_test: TestResult | None = None
    if len(frameworks) >= 3:
        groups = [
            BinomialCount(paired.tp_count(fw), paired.flag_count(fw))
            for fw in frameworks
        ]
        try:
            trend = cochran_armitage_trend(
                groups, scores=list(range(len(frameworks)))
            )
        except StatsError:
            trend = None  # degenerate flag pattern, no trend estimate
        q_test = cochran_q(paired)

    return ComparisonReport(
        rows=rows,
        pairwise=tuple(pairwise),
        trend=trend,
        q_test=q_test,
        n_reports=len(kept),
        excluded_failed=tuple(failed),
        excluded_pending=tuple(unadjudicated),
        replicates=replicates,
        seed=seed,
    )


def _format_ci(ci: ConfidenceInterval | None) -> str:
    if ci is None:
        return "undefined"
    return f"{ci.point:.3f} ({ci.lo:.3f}-{ci.hi:.3f})"


def render_comparison_csv(report: ComparisonReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(
        [
            "section",
            "framework",
            "stratum",
            "n",
            "flagged",
            "tp",
            "fp",
            "ppv",
            "ppv_lo",
            "ppv_hi",
            "atpr",
            "atpr_lo",
            "atpr_hi",
        ]
    )
    for row in report.rows:
        ppv_cells = (
            ["", "", ""]
            if row.ppv_ci is None
            else [
                f"{row.ppv_ci.point:.6f}",
                f"{row.ppv_ci.lo:.6f}",
                f"{row.ppv_ci.hi:.6f}",
            ]
        )
        writer.writerow(
            [
                "descriptive",
                row.framework.value,
                row.stratum,
                row.n,
                row.flagged,
                row.tp,
                row.fp,
                *ppv_cells,
                f"{row.atpr_ci.point:.6f}",
                f"{row.atpr_ci.lo:.6f}",
                f"{row.atpr_ci.hi:.6f}",
            ]
        )
    writer.writerow([])
    writer.writerow(
        [
            "section",
            "pair",
            "ppv_diff",
            "bootstrap_p",
            "bootstrap_p_holm",
            "mcnemar_p",
            "mcnemar_p_holm",
        ]
    )
    for pair in report.pairwise:
        writer.writerow(
            [
                "pairwise",
                f"{pair.fw_a.value} vs {pair.fw_b.value}",
                "" if pair.ppv_diff is None else f"{pair.ppv_diff:.6f}",
                "" if pair.bootstrap_p is None else f"{pair.bootstrap_p:.6f}",
                ""
                if pair.bootstrap_p_holm is None
                else f"{pair.bootstrap_p_holm:.6f}",
                f"{pair.mcnemar_p:.6f}",
                f"{pair.mcnemar_p_holm:.6f}",
            ]
        )
    writer.writerow([])
    writer.writerow(["section", "test", "statistic", "p", "df_or_replicates"])
    if report.trend is not None:
        writer.writerow(
            [
                "global",
                report.trend.method.value,
                f"{report.trend.statistic:.6f}",
                f"{report.trend.p_value:.6f}",
                report.trend.replicates_or_df,
            ]
        )
    if report.q_test is not None:
        writer.writerow(
            [
                "global",
                report.q_test.method.value,
                f"{report.q_test.statistic:.6f}",
                f"{report.q_test.p_value:.6f}",
                report.q_test.replicates_or_df,
            ]
        )
    return buffer.getvalue()


def render_comparison_table(report: ComparisonReport) -> str:
    """Aligned-text comparison: descriptive block, then pairwise footnotes."""
    headers = (
        "framework",
        "stratum",
        "n",
        "flagged",
        "TP",
        "FP",
        "PPV (95% CI)",
        "aTPR (95% CI)",
    )
    body = [
        (
            row.framework.value,
            row.stratum,
            str(row.n),
            str(row.flagged),
            str(row.tp),
            str(row.fp),
            _format_ci(row.ppv_ci),
            _format_ci(row.atpr_ci),
        )
        for row in report.rows
    ]
    widths = [
        max(len(headers[i]), *(len(line[i]) for line in body)) if body else len(headers[i])
        for i in range(len(headers))
    ]

    def fmt(line: Sequence[str]) -> str:
        return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip()

    lines = [fmt(headers), "  ".join("-" * w for w in widths)]
    lines.extend(fmt(line) for line in body)
    lines.append("")
    lines.append(f"reports evaluated: {report.n_reports}")
    if report.excluded_failed:
        lines.append(
            f"excluded (pipeline failure): {', '.join(report.excluded_failed)}"
        )
    if report.excluded_pending:
        lines.append(
            f"excluded (awaiting verdict): {', '.join(report.excluded_pending)}"
        )
    if report.pairwise:
        lines.append("")
        lines.append("pairwise comparisons (Holm-adjusted in brackets):")
        for pair in report.pairwise:
            label = f"{pair.fw_a.value} vs {pair.fw_b.value}"
            if pair.bootstrap_p is None:
                boot = "PPV bootstrap skipped"
            else:
                boot = (
                    f"PPV diff {pair.ppv_diff:+.3f}, "
                    f"p={pair.bootstrap_p:.4f} [{pair.bootstrap_p_holm:.4f}]"
                )
            lines.append(
                f"  {label}: {boot}; McNemar p={pair.mcnemar_p:.4f} "
                f"[{pair.mcnemar_p_holm:.4f}]"
            )
    if report.trend is not None:
        lines.append(
            f"trend across frameworks: z={report.trend.statistic:.3f}, "
            f"p={report.trend.p_value:.4f}"
        )
    if report.q_test is not None:
        lines.append(
            f"Cochran Q: Q={report.q_test.statistic:.3f} "
            f"(df={report.q_test.replicates_or_df}), p={report.q_test.p_value:.4f}"
        )
    return "\n".join(lines) + "\n"
