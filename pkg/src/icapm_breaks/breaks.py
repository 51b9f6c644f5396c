"""Multiple mean-shift analysis of a scalar series.

Break dates minimize the total sum of squared residuals subject to every
regime spanning at least ``h = floor(trim * T)`` observations; the optimum
is found exactly by dynamic programming. Break ``k`` is reported as the last
(1-based) index of regime ``k``.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from . import _backend
from .data import MonthlySeries, format_month, parse_month
from .errors import ConfigError, InfeasibleError, NotApplicable, UndefinedIntervalError

log = logging.getLogger(__name__)

# Asymptotic 5% critical values for a pure mean-shift model (q = 1) with
# trimming 0.10, from the published Bai-Perron tables.
#   supf[k]:  supF(k) of 0 versus k breaks
#   seq[l]:   supF(l+1 | l)
CRITICAL_VALUES = {
    (0.10, 0.05): {
        "supf": {1: 9.10, 2: 7.92, 3: 6.84, 4: 6.03, 5: 5.37},
        "udmax": 9.52,
        "wdmax": 10.39,
        "seq": {0: 9.10, 1: 10.55, 2: 11.36, 3: 12.35, 4: 12.97},
    },
}


def critical_values(trim: float, alpha: float = 0.05) -> dict:
    key = (round(float(trim), 4), round(float(alpha), 4))
    try:
        return CRITICAL_VALUES[key]
    except KeyError:
        have = ", ".join(f"trim={t}, alpha={a}" for t, a in CRITICAL_VALUES)
        raise ConfigError(f"no critical values for trim={trim}, alpha={alpha} (available: {have})") from None


# ---------------------------------------------------------------------------
# problem and segment costs


class Prefix:
    """Prefix sums of a centred series for O(1) segment SSRs."""

    def __init__(self, y):
        y = np.asarray(y, dtype=float)
        self.T = y.size
        self.s1 = np.concatenate(([0.0], np.cumsum(y)))
        self.s2 = np.concatenate(([0.0], np.cumsum(y * y)))


def segment_ssr(prefix: Prefix, i: int, j: int) -> float:
    """SSR of observations ``i..j`` (1-based, inclusive) around their mean."""
    if not 1 <= i <= j <= prefix.T:
        raise IndexError(f"segment ({i}, {j}) outside 1..{prefix.T}")
    n = j - i + 1
    s = prefix.s1[j] - prefix.s1[i - 1]
    q = prefix.s2[j] - prefix.s2[i - 1]
    return max(q - s * s / n, 0.0)


def _centred(y: np.ndarray) -> np.ndarray:
    if np.all(y == y[0]):
        return np.zeros_like(y)
    return y - y.mean()


@dataclass(frozen=True)
class SegmentationProblem:
    y: np.ndarray
    max_breaks: int = 5
    trim: float = 0.10
    start: np.datetime64 | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        if y.size < 2 or not np.all(np.isfinite(y)):
            raise ConfigError("series must be finite with at least two observations")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if not 0.0 < self.trim < 0.5:
            raise ConfigError("trim must lie in (0, 0.5)")
        if int(self.max_breaks) < 1:
            raise ConfigError("max_breaks must be at least 1")
        object.__setattr__(self, "max_breaks", int(self.max_breaks))
        if self.h < 1:
            raise InfeasibleError(f"trim {self.trim} on T={self.T} gives a minimum segment length below 1")
        if (self.max_breaks + 1) * self.h > self.T:
            raise InfeasibleError(
                f"{self.max_breaks} breaks with minimum segment length {self.h} do not fit in T={self.T}"
            )
        if self.start is not None:
            object.__setattr__(self, "start", parse_month(self.start))

    @classmethod
    def from_series(cls, series: MonthlySeries, max_breaks: int = 5, trim: float = 0.10) -> "SegmentationProblem":
        return cls(series.values, max_breaks, trim, series.start)

    @property
    def T(self) -> int:
        return self.y.size

    @property
    def h(self) -> int:
        return int(math.floor(self.trim * self.T))

    @functools.cached_property
    def centred(self) -> np.ndarray:
        return _centred(self.y)

    @functools.cached_property
    def prefix(self) -> Prefix:
        return Prefix(self.centred)

    @functools.cached_property
    def _dp(self):
        yc = np.ascontiguousarray(self.centred)
        tol = 1e-12 * float(np.sum(yc * yc))
        return _backend.segment_dp(yc, self.max_breaks, self.h, tol)

    def feasible(self, m: int) -> bool:
        return m >= 0 and (m + 1) * self.h <= self.T

    def month(self, index: int):
        """Calendar month of 1-based observation ``index``."""
        if self.start is None:
            return None
        return self.start + (int(index) - 1)


@dataclass(frozen=True)
class BreakFit:
    m: int
    dates: tuple
    regime_means: tuple
    ssr: float
    T: int
    start: np.datetime64 | None = None
    mean_se: tuple | None = None
    date_cis: tuple | None = None

    @property
    def edges(self) -> tuple:
        return (0, *self.dates, self.T)

    @property
    def months(self):
        if self.start is None:
            return None
        return tuple(self.start + (d - 1) for d in self.dates)

    def fitted(self) -> np.ndarray:
        out = np.empty(self.T)
        e = self.edges
        for j, mu in enumerate(self.regime_means):
            out[e[j] : e[j + 1]] = mu
        return out


def _fit_from_dates(problem: SegmentationProblem, dates) -> BreakFit:
    edges = (0, *dates, problem.T)
    means = tuple(float(np.mean(problem.y[edges[j] : edges[j + 1]])) for j in range(len(edges) - 1))
    ssr = sum(segment_ssr(problem.prefix, edges[j] + 1, edges[j + 1]) for j in range(len(edges) - 1))
    return BreakFit(len(dates), tuple(int(d) for d in dates), means, float(ssr), problem.T, problem.start)


def dp_partition(problem: SegmentationProblem, m: int) -> BreakFit:
    """Globally SSR-minimal partition with ``m`` breaks.

    Ties are resolved toward the lexicographically smallest date vector.
    """
    if not problem.feasible(m):
        raise InfeasibleError(f"{m} breaks with minimum segment length {problem.h} do not fit in T={problem.T}")
    if m <= problem.max_breaks:
        _, brk = problem._dp
    else:
        yc = np.ascontiguousarray(problem.centred)
        _, brk = _backend.segment_dp(yc, m, problem.h, 1e-12 * float(np.sum(yc * yc)))
    return _fit_from_dates(problem, brk[m, :m].tolist())


# ---------------------------------------------------------------------------
# tests


def _f_stat(ssr0: float, ssrk: float, T: int, k: int) -> float:
    if ssrk <= 0.0:
        return 0.0 if ssr0 <= 0.0 else math.inf
    return (T - (k + 1)) / k * (ssr0 - ssrk) / ssrk


def sup_f(problem: SegmentationProblem, k: int) -> float:
    """F statistic of no break against ``k`` breaks at the optimal dates."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ssr0 = segment_ssr(problem.prefix, 1, problem.T)
    return _f_stat(ssr0, dp_partition(problem, k).ssr, problem.T, k)


def _weights(cv: dict, M: int) -> dict:
    c1 = cv["supf"][1]
    return {k: c1 / cv["supf"][k] for k in range(1, M + 1)}


def _max_testable(problem: SegmentationProblem) -> int:
    return min(problem.max_breaks, problem.T // problem.h - 1)


def ud_wd_max(problem: SegmentationProblem, alpha: float = 0.05):
    """``(UDmax, WDmax)`` over ``k = 1..M``.

    WDmax weights supF(k) by ``c(alpha, 1) / c(alpha, k)``.
    """
    cv = critical_values(problem.trim, alpha)
    M = _max_testable(problem)
    if M > max(cv["supf"]):
        raise ConfigError(f"critical values cover at most {max(cv['supf'])} breaks")
    w = _weights(cv, M)
    f = {k: sup_f(problem, k) for k in range(1, M + 1)}
    return max(f.values()), max(w[k] * f[k] for k in f)


def _best_split(prefix: Prefix, s: int, e: int, h: int):
    """Largest SSR reduction from one extra break inside ``s..e`` (1-based)."""
    js = np.arange(s + h - 1, e - h + 1)  # last index of the left part
    if js.size == 0:
        return None
    n_left = js - s + 1
    n_right = e - js
    sl = prefix.s1[js] - prefix.s1[s - 1]
    ql = prefix.s2[js] - prefix.s2[s - 1]
    sr = prefix.s1[e] - prefix.s1[js]
    qr = prefix.s2[e] - prefix.s2[js]
    split = np.maximum(ql - sl * sl / n_left, 0.0) + np.maximum(qr - sr * sr / n_right, 0.0)
    k = int(np.argmin(split))
    return segment_ssr(prefix, s, e) - float(split[k]), int(js[k])


def seq_test(problem: SegmentationProblem, l: int) -> float:
    """supF(l+1 | l): the best extra break within any regime of the l-break fit.

    The SSR reduction is scaled by the residual variance of the l-break
    model. Raises :class:`NotApplicable` when no regime has room for
    another break.
    """
    fit_l = dp_partition(problem, l)
    e = fit_l.edges
    best = None
    for j in range(l + 1):
        got = _best_split(problem.prefix, e[j] + 1, e[j + 1], problem.h)
        if got is not None and (best is None or got[0] > best):
            best = got[0]
    if best is None:
        raise NotApplicable(f"no regime of the {l}-break fit is long enough for another break")
    if fit_l.ssr <= 0.0:
        return 0.0 if best <= 0.0 else math.inf
    sigma2 = fit_l.ssr / (problem.T - (l + 1))
    return max(best, 0.0) / sigma2


@dataclass(frozen=True)
class BreakTests:
    supf: dict
    supf_crit: dict
    udmax: float
    udmax_crit: float
    wdmax: float
    wdmax_crit: float
    seq: dict = field(default_factory=dict)
    seq_crit: dict = field(default_factory=dict)
    m: int = 0
    alpha: float = 0.05
    trim: float = 0.10
    cap_reached: bool = False

    @property
    def any_break(self) -> bool:
        return self.udmax > self.udmax_crit or self.wdmax > self.wdmax_crit

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else (float(v) if math.isfinite(v) else str(v))

        return {
            "alpha": self.alpha,
            "trim": self.trim,
            "supf": [
                {"k": k, "statistic": num(v), "critical": self.supf_crit[k], "significant": bool(v > self.supf_crit[k])}
                for k, v in self.supf.items()
            ],
            "udmax": {"statistic": num(self.udmax), "critical": self.udmax_crit, "significant": bool(self.udmax > self.udmax_crit)},
            "wdmax": {"statistic": num(self.wdmax), "critical": self.wdmax_crit, "significant": bool(self.wdmax > self.wdmax_crit)},
            "sequential": [
                {
                    "l": l,
                    "statistic": num(v),
                    "critical": self.seq_crit[l],
                    "applicable": v is not None,
                    "significant": bool(v is not None and v > self.seq_crit[l]),
                }
                for l, v in self.seq.items()
            ],
            "selected_m": self.m,
            "cap_reached": self.cap_reached,
        }


def select_num_breaks(problem: SegmentationProblem, alpha: float = 0.05) -> BreakTests:
    """Double-maximum screening followed by sequential supF(l+1 | l) tests.

    With neither UDmax nor WDmax significant the answer is 0 breaks.
    Otherwise ``l`` starts at 1 and grows while supF(l+1 | l) rejects.
    """
    cv = critical_values(problem.trim, alpha)
    M = _max_testable(problem)
    if M > max(cv["supf"]):
        raise ConfigError(f"critical values cover at most {max(cv['supf'])} breaks")
    w = _weights(cv, M)
    supf = {k: sup_f(problem, k) for k in range(1, M + 1)}
    ud = max(supf.values())
    wd = max(w[k] * supf[k] for k in supf)
    seq, seq_crit = {}, {}
    cap = False
    if ud <= cv["udmax"] and wd <= cv["wdmax"]:
        m = 0
    else:
        m = 1
        while m < M:
            seq_crit[m] = cv["seq"][m]
            try:
                stat = seq_test(problem, m)
            except (NotApplicable, InfeasibleError):
                seq[m] = None
                break
            seq[m] = stat
            if stat > cv["seq"][m]:
                m += 1
            else:
                break
        if m == M and (M not in seq):
            cap = True
            log.warning("sequential procedure reached the maximum of %d breaks", M)
    return BreakTests(
        supf=supf,
        supf_crit={k: cv["supf"][k] for k in supf},
        udmax=ud,
        udmax_crit=cv["udmax"],
        wdmax=wd,
        wdmax_crit=cv["wdmax"],
        seq=seq,
        seq_crit=seq_crit,
        m=m,
        alpha=alpha,
        trim=problem.trim,
        cap_reached=cap,
    )


# ---------------------------------------------------------------------------
# inference on dates and regime means


def auto_bandwidth(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def bartlett_lrv(u, bandwidth: int | None = None) -> float:
    """Bartlett-kernel long-run variance of a mean-zero series."""
    u = np.asarray(u, dtype=float)
    n = u.size
    L = auto_bandwidth(n) if bandwidth is None else int(bandwidth)
    L = min(L, n - 1)
    lrv = float(u @ u) / n
    for j in range(1, L + 1):
        lrv += 2.0 * (1.0 - j / (L + 1.0)) * float(u[j:] @ u[:-j]) / n
    return max(lrv, 0.0)


def argmax_cdf(x: float) -> float:
    """CDF of ``argmax_s {W(s) - |s|/2}`` for two-sided Brownian motion ``W``."""
    if x < 0:
        return 1.0 - argmax_cdf(-x)
    if x == 0:
        return 0.5
    r = math.sqrt(x)
    # e^x Phi(-3 sqrt(x)/2) overflows naively for large x
    t3 = math.exp(x + special.log_ndtr(-1.5 * r))
    return 1.0 + math.sqrt(x / (2.0 * math.pi)) * math.exp(-x / 8.0) + 1.5 * t3 - 0.5 * (x + 5.0) * special.ndtr(-0.5 * r)


@functools.lru_cache(maxsize=32)
def argmax_quantile(p: float) -> float:
    """Inverse of :func:`argmax_cdf` by bisection."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -argmax_quantile(1.0 - p)
    lo, hi = 0.0, 1.0
    while argmax_cdf(hi) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if argmax_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def _residuals(fit: BreakFit, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.size != fit.T:
        raise ValueError("series length does not match the fit")
    return y - fit.fitted()


def break_confidence_interval(fit: BreakFit, y, k: int, level: float = 0.95) -> tuple[int, int]:
    """Interval for break ``k`` (1-based) as observation indices.

    Half-width ``ceil(c * lrv / delta^2)``, at least one period, where
    ``delta`` is the mean shift, ``lrv`` the Bartlett long-run variance of
    residuals in the two adjacent regimes and ``c`` the ``(1 + level) / 2``
    quantile of the argmax distribution.
    """
    if not 1 <= k <= fit.m:
        raise ValueError(f"break {k} not in 1..{fit.m}")
    delta = fit.regime_means[k] - fit.regime_means[k - 1]
    if delta == 0.0:
        raise UndefinedIntervalError(f"regimes {k} and {k + 1} have equal means")
    e = fit.edges
    u = _residuals(fit, y)[e[k - 1] : e[k + 1]]
    lrv = bartlett_lrv(u)
    c = argmax_quantile(0.5 * (1.0 + level))
    half = max(1, math.ceil(c * lrv / (delta * delta)))
    d = fit.dates[k - 1]
    return max(1, d - half), min(fit.T - 1, d + half)


def regime_means_hac(fit: BreakFit, y, bandwidth: int | None = None) -> list[tuple[float, float]]:
    """Regime means with Bartlett HAC standard errors ``sqrt(lrv_j / n_j)``."""
    u = _residuals(fit, y)
    e = fit.edges
    out = []
    for j, mu in enumerate(fit.regime_means):
        seg = u[e[j] : e[j + 1]]
        if seg.size < 2:
            raise ValueError(f"regime {j + 1} has fewer than 2 observations")
        out.append((mu, math.sqrt(bartlett_lrv(seg, bandwidth) / seg.size)))
    return out


def classical_se(fit: BreakFit, y) -> list[float]:
    u = _residuals(fit, y)
    e = fit.edges
    return [float(np.std(u[e[j] : e[j + 1]]) / math.sqrt(e[j + 1] - e[j])) for j in range(fit.m + 1)]


# ---------------------------------------------------------------------------
# full analysis and report


def analyze(problem: SegmentationProblem, alpha: float = 0.05, level: float = 0.95):
    """Select the number of breaks, then date them and attach inference."""
    tests = select_num_breaks(problem, alpha)
    fit = dp_partition(problem, tests.m)
    if fit.m:
        cis = tuple(break_confidence_interval(fit, problem.y, k, level) for k in range(1, fit.m + 1))
    else:
        cis = ()
    se = tuple(s for _, s in regime_means_hac(fit, problem.y))
    return replace(fit, mean_se=se, date_cis=cis), tests


def _month_label(problem_start, index):
    if problem_start is None:
        return None
    return format_month(problem_start + (int(index) - 1), "colon")


def table2_report(fit: BreakFit, tests: BreakTests, level: float = 0.95) -> dict:
    """Break dates with intervals and regime means with HAC standard errors."""
    start = fit.start
    breaks = []
    for k, d in enumerate(fit.dates):
        lo, hi = fit.date_cis[k] if fit.date_cis else (None, None)
        breaks.append(
            {
                "index": int(d),
                "month": _month_label(start, d),
                "ci_index": [lo, hi],
                "ci_month": [_month_label(start, lo), _month_label(start, hi)] if lo is not None else None,
                "formatted": (
                    f"{_month_label(start, d)} ({_month_label(start, lo)}-{_month_label(start, hi)})"
                    if start is not None and lo is not None
                    else None
                ),
            }
        )
    regimes = []
    e = fit.edges
    for j, mu in enumerate(fit.regime_means):
        se = fit.mean_se[j] if fit.mean_se else None
        regimes.append(
            {
                "regime": j + 1,
                "first_index": e[j] + 1,
                "last_index": e[j + 1],
                "mean": mu,
                "se": se,
                "formatted": f"{mu:.3f} ({se:.3f})" if se is not None else f"{mu:.3f}",
            }
        )
    return {
        "nobs": fit.T,
        "start": format_month(start) if start is not None else None,
        "m": fit.m,
        "ci_level": level,
        "breaks": breaks,
        "regimes": regimes,
        "ssr": fit.ssr,
        "tests": tests.to_dict(),
    }
