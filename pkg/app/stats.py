"""Nonparametric statistics and rankings used by the analysis.

Rank-based tests follow the usual conventions: ties share the average of the
ranks they span, two-sided p-values, and medians use the mid-average of the two
middle order statistics for even sample sizes.
"""

import itertools
import logging
import math
from enum import StrEnum
from functools import lru_cache
from typing import TYPE_CHECKING, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.stats import chi2, norm, rankdata

from app.models import BenchmarkKind

if TYPE_CHECKING:
    from app.scoring import ScoreTable, TimeToBugTable

logger = logging.getLogger(__name__)

EXACT_MWU_MAX_N = 12

# Nemenyi critical values q_alpha(k) = studentized range / sqrt(2), infinite df.
# Source: Demsar, "Statistical Comparisons of Classifiers over Multiple Data Sets", JMLR 7 (2006),
# Table 5, extended to k = 20 with the same construction (as tabulated in Orange's CD tooling).
_Q_ALPHA: Dict[float, Tuple[float, ...]] = {
    0.05: (
        1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030879, 3.101730, 3.163684, 3.218654,
        3.268004, 3.312739, 3.353618, 3.391230, 3.426041, 3.458425, 3.488685, 3.517073, 3.543799,
    ),
    0.10: (
        1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606, 2.919889, 2.977768,
        3.029694, 3.076733, 3.119693, 3.159199, 3.195743, 3.229723, 3.261461, 3.291224, 3.319233,
    ),
}  # fmt: skip
Q_TABLE_MIN_K = 2
Q_TABLE_MAX_K = 20


class RankingMethod(StrEnum):
    AVERAGE_RANK = "average_rank"
    RELATIVE_TO_BEST = "relative_to_best"


class PairwiseComparison(BaseModel):
    model_config = ConfigDict(frozen=True)

    fuzzer_a: str
    fuzzer_b: str
    benchmark: str
    u_statistic: float
    p_value: float
    a12: float


class RankingEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    fuzzer: str
    value: float
    rank: float


class Ranking(BaseModel):
    """Fuzzers ordered best-first; average_rank is lower-is-better, relative_to_best higher-is-better."""

    model_config = ConfigDict(frozen=True)

    method: RankingMethod
    metric: BenchmarkKind
    entries: Tuple[RankingEntry, ...]
    flagged_benchmarks: Tuple[str, ...] = ()


class CriticalDifference(BaseModel):
    model_config = ConfigDict(frozen=True)

    metric: BenchmarkKind
    alpha: float
    k: int
    n_benchmarks: int
    friedman_statistic: float
    friedman_p: float
    cd_value: float
    average_ranks: Dict[str, float]


class DiscriminationStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    std_dev: float
    iqr: float
    min: float
    max: float


def median(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("median of an empty sample")
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2


def mean(values: Sequence[float]) -> float:
    # fsum keeps means independent of summation order
    return math.fsum(values) / len(values)


def vargha_delaney_a12(x: Sequence[float], y: Sequence[float]) -> float:
    """Probability that a value drawn from x exceeds one drawn from y, ties counting one half."""
    if not x or not y:
        raise ValueError("A12 needs two non-empty samples")
    greater = sum(1 for a in x for b in y if a > b)
    equal = sum(1 for a in x for b in y if a == b)
    return (greater + 0.5 * equal) / (len(x) * len(y))


@lru_cache(maxsize=None)
def _exact_u_distribution(n: int, m: int) -> Tuple[float, ...]:
    """All U values for x over every placement of n labels among n + m untied ranks."""
    offset = n * (n + 1) / 2
    return tuple(sum(combo) - offset for combo in itertools.combinations(range(1, n + m + 1), n))


def mann_whitney_u(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """U for x and the two-sided p-value.

    p is exact by enumeration for small untied samples, otherwise it comes from
    the normal approximation with tie and continuity corrections.
    """
    if not x or not y:
        raise ValueError("Mann-Whitney U needs two non-empty samples")
    n, m = len(x), len(y)
    combined = np.asarray(list(x) + list(y), dtype=float)
    ranks = rankdata(combined, method="average")
    u = float(math.fsum(ranks[:n]) - n * (n + 1) / 2)

    _, tie_counts = np.unique(combined, return_counts=True)
    has_ties = bool(np.any(tie_counts > 1))

    if n + m <= EXACT_MWU_MAX_N and not has_ties:
        distribution = _exact_u_distribution(n, m)
        lower = sum(1 for value in distribution if value <= u)
        upper = sum(1 for value in distribution if value >= u)
        return u, min(1.0, 2 * min(lower, upper) / len(distribution))

    total = n + m
    tie_term = float(np.sum(tie_counts.astype(float) ** 3 - tie_counts))
    variance = n * m / 12 * ((total + 1) - tie_term / (total * (total - 1)))
    if variance <= 0:
        return u, 1.0
    z = max(abs(u - n * m / 2) - 0.5, 0.0) / math.sqrt(variance)
    return u, float(min(1.0, 2 * norm.sf(z)))


def _display_ranks(values: Sequence[float], descending: bool) -> List[float]:
    keys = [-round(v, 9) if descending else round(v, 9) for v in values]
    return [float(r) for r in rankdata(keys, method="average")]


def _ranking(method: RankingMethod, table: "ScoreTable", values: Dict[str, float], flagged: List[str]) -> Ranking:
    descending = method == RankingMethod.RELATIVE_TO_BEST
    fuzzers = sorted(values, key=lambda f: (-values[f] if descending else values[f], f))
    ranks = _display_ranks([values[f] for f in fuzzers], descending)
    return Ranking(
        method=method,
        metric=table.metric,
        entries=tuple(RankingEntry(fuzzer=f, value=values[f], rank=r) for f, r in zip(fuzzers, ranks)),
        flagged_benchmarks=tuple(sorted(flagged)),
    )


def rank_matrix(table: "ScoreTable") -> np.ndarray:
    """benchmarks x fuzzers matrix of per-benchmark ranks (1 = best score, ties averaged)."""
    return np.array([rankdata([-s for s in table.column(b)], method="average") for b in table.benchmarks])


def average_rank_ranking(table: "ScoreTable") -> Ranking:
    if table.is_empty:
        raise ValueError("cannot rank an empty score table")
    ranks = rank_matrix(table)
    values = {f: mean([float(r) for r in ranks[:, j]]) for j, f in enumerate(table.fuzzers)}
    return _ranking(RankingMethod.AVERAGE_RANK, table, values, [])


def relative_to_best_ranking(table: "ScoreTable") -> Ranking:
    if table.is_empty:
        raise ValueError("cannot rank an empty score table")
    relative: Dict[str, List[float]] = {f: [] for f in table.fuzzers}
    flagged = []
    for benchmark in table.benchmarks:
        best = max(table.column(benchmark))
        if best == 0:
            flagged.append(benchmark)
        for fuzzer in table.fuzzers:
            relative[fuzzer].append(100.0 if best == 0 else 100.0 * table.score(benchmark, fuzzer) / best)
    if flagged:
        logger.warning(f"Benchmarks with best score 0 count as 100 for every fuzzer: {', '.join(sorted(flagged))}")
    values = {f: mean(scores) for f, scores in relative.items()}
    return _ranking(RankingMethod.RELATIVE_TO_BEST, table, values, flagged)


def friedman_test(ranks: np.ndarray) -> Tuple[float, float]:
    """Friedman chi-square over a benchmarks x fuzzers rank matrix."""
    ranks = np.asarray(ranks, dtype=float)
    if ranks.ndim != 2 or ranks.shape[1] < 2:
        raise ValueError("Friedman test needs at least two fuzzers")
    n, k = ranks.shape
    if n < 1:
        raise ValueError("Friedman test needs at least one benchmark")
    centre = (k + 1) / 2
    mean_ranks = [mean([float(r) for r in ranks[:, j]]) for j in range(k)]
    statistic = 12 * n / (k * (k + 1)) * math.fsum((r - centre) ** 2 for r in mean_ranks)
    return statistic, float(chi2.sf(statistic, k - 1))


def nemenyi_cd(k: int, n_benchmarks: int, alpha: float = 0.05) -> float:
    table = _Q_ALPHA.get(alpha)
    if table is None:
        raise ValueError(f"unsupported alpha {alpha}; expected one of {sorted(_Q_ALPHA)}")
    if not Q_TABLE_MIN_K <= k <= Q_TABLE_MAX_K:
        raise ValueError(f"k={k} outside the embedded q table ({Q_TABLE_MIN_K}..{Q_TABLE_MAX_K})")
    if n_benchmarks < 1:
        raise ValueError("critical difference needs at least one benchmark")
    return table[k - Q_TABLE_MIN_K] * math.sqrt(k * (k + 1) / (6 * n_benchmarks))


def critical_difference(table: "ScoreTable", alpha: float = 0.05) -> Optional[CriticalDifference]:
    k, n = len(table.fuzzers), len(table.benchmarks)
    if n < 1 or not Q_TABLE_MIN_K <= k <= Q_TABLE_MAX_K:
        logger.info(f"No critical difference for {table.metric} (k={k}, benchmarks={n})")
        return None
    ranks = rank_matrix(table)
    statistic, p = friedman_test(ranks)
    return CriticalDifference(
        metric=table.metric,
        alpha=alpha,
        k=k,
        n_benchmarks=n,
        friedman_statistic=statistic,
        friedman_p=p,
        cd_value=nemenyi_cd(k, n, alpha),
        average_ranks={f: mean([float(r) for r in ranks[:, j]]) for j, f in enumerate(table.fuzzers)},
    )


def cd_groups(average_ranks: Mapping[str, float], cd_value: float) -> List[Tuple[str, ...]]:
    """Maximal runs of rank-adjacent fuzzers whose mean ranks all lie within cd_value of each other."""
    ordered = sorted(average_ranks, key=lambda f: (average_ranks[f], f))
    groups: List[Tuple[str, ...]] = []
    last_end = -1
    for start in range(len(ordered)):
        end = start
        while end + 1 < len(ordered) and average_ranks[ordered[end + 1]] - average_ranks[ordered[start]] < cd_value:
            end += 1
        if end > start and end > last_end:
            groups.append(tuple(ordered[start : end + 1]))
            last_end = end
    return groups


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> Optional[float]:
    """Cosine of the angle between u and v; None when either vector is all zeros."""
    if len(u) != len(v) or len(u) == 0:
        raise ValueError("cosine similarity needs two vectors of the same non-zero length")
    a = np.asarray(u, dtype=float)
    b = np.asarray(v, dtype=float)
    norm_a, norm_b = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if norm_a == 0 or norm_b == 0:
        return None
    return max(-1.0, min(1.0, float(np.dot(a, b)) / (norm_a * norm_b)))


def profile_similarity(profiles: Mapping[str, Sequence[float]]) -> Dict[str, Dict[str, Optional[float]]]:
    fuzzers = sorted(profiles)
    matrix: Dict[str, Dict[str, Optional[float]]] = {f: {} for f in fuzzers}
    for i, a in enumerate(fuzzers):
        for b in fuzzers[i:]:
            value = cosine_similarity(profiles[a], profiles[b])
            if a == b and value is not None:
                value = 1.0
            matrix[a][b] = value
            matrix[b][a] = value
    return matrix


def similarity_matrix(table: "ScoreTable") -> Dict[str, Dict[str, Optional[float]]]:
    """Pairwise cosine similarity of the fuzzers' per-benchmark score profiles."""
    return profile_similarity({f: table.profile(f) for f in table.fuzzers})


def time_to_bug_similarity(
    ttb: "TimeToBugTable", benchmarks: Sequence[str], censor_at: float
) -> Dict[str, Dict[str, Optional[float]]]:
    """Cosine similarity of mean time-to-bug profiles; benchmarks without a crash count as censor_at."""
    profiles = {}
    for fuzzer in ttb.fuzzers:
        times = [ttb.mean_time(b, fuzzer) for b in benchmarks]
        profiles[fuzzer] = [censor_at if t is None else t for t in times]
    return profile_similarity(profiles)


def benchmark_discrimination(table: "ScoreTable") -> Dict[str, DiscriminationStats]:
    result = {}
    for benchmark in table.benchmarks:
        scores = np.asarray(table.column(benchmark), dtype=float)
        if len(scores) < 2:
            std_dev, iqr = 0.0, 0.0
        else:
            std_dev = float(np.std(scores))
            q1, q3 = np.percentile(scores, [25, 75], method="linear")
            iqr = float(q3 - q1)
        result[benchmark] = DiscriminationStats(
            std_dev=std_dev, iqr=iqr, min=float(scores.min()), max=float(scores.max())
        )
    return result


def discriminating_bug_benchmarks(table: "ScoreTable") -> List[str]:
    """Benchmarks on which the fuzzers' scores are not all identical."""
    return [b for b in table.benchmarks if len(set(table.column(b))) > 1]
