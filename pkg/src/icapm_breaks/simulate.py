"""Synthetic data: the full ICAPM data-generating process and mean-shift series."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import InfoSets, MonthlySeries, months_between, parse_month
from .errors import ConditioningError, ConfigError
from .icapm import (
    EXP_CLAMP,
    FilterOutput,
    ModelParams,
    c_lower_from_intercept,
    conditional_means,
    garch_step,
    stationarity_report,
    unconditional_covariance,
)

log = logging.getLogger(__name__)

LOG2PI = np.log(2.0 * np.pi)

TABLE2_MEANS = (0.471, 0.601, 0.504, 0.651, 0.790)
TABLE2_BREAK_MONTHS = ("1992-12", "1994-12", "2001-05", "2005-12")
SAMPLE_START = "1988-01"
SAMPLE_END = "2008-02"


def reference_params() -> ModelParams:
    """A parameter point with a strongly identified integration path.

    GARCH loadings are fixed at the Mexico/World target values. The intercept is
    set so the unconditional variances are 1 and 0.8 with correlation 0.85:
    with ARCH loadings this small, most of the information about ``b_m``
    comes through the covariance term, and a weak correlation leaves it
    close to unidentified at T = 1000. Much above 0.85 the implied
    intercept stops being positive definite.
    """
    a = np.array([0.103, 0.133])
    b = np.array([0.597, 0.821])
    cov = 0.85 * math.sqrt(0.8)
    target = np.array([[1.0, cov], [cov, 0.8]])
    intercept = target * (1.0 - np.outer(a, a) - np.outer(b, b))
    return ModelParams(
        kappa_w=[0.354, 0.25, -0.15, 0.2, -0.2],
        kappa_i=[1.0, -0.3, -0.1, -0.2],
        delta_int=[0.9, 0.5, 0.6, -0.4],
        c_lower=c_lower_from_intercept(intercept),
        a=a,
        b=b,
    )


@dataclass(frozen=True)
class DgpSpec:
    """ICAPM generator settings.

    Information variables follow independent Gaussian AR(1) processes with
    unit variance and coefficient ``persistence``.
    """

    params: ModelParams = field(default_factory=reference_params)
    T: int = 1000
    seed: int = 0
    persistence: float = 0.9
    start: str = SAMPLE_START

    def __post_init__(self):
        if int(self.T) < 10:
            raise ConfigError("DgpSpec.T must be at least 10")
        if not -1.0 < self.persistence < 1.0:
            raise ConfigError("persistence must lie in (-1, 1)")
        parse_month(self.start)


@dataclass(frozen=True)
class StepSpec:
    """Piecewise-constant mean plus Gaussian noise.

    ``breaks`` are the last (1-based) index of each regime but the final one.
    ``sigma`` is the marginal standard deviation of the noise, which is
    AR(1) with coefficient ``rho``.
    """

    means: tuple
    breaks: tuple
    sigma: float = 0.0
    T: int = 242
    seed: int = 0
    rho: float = 0.0
    clamp: bool = False
    start: str = SAMPLE_START

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        breaks = tuple(int(b) for b in self.breaks)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "breaks", breaks)
        if len(means) != len(breaks) + 1:
            raise ConfigError("need exactly one more regime mean than breaks")
        if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise ConfigError("break positions must be strictly increasing")
        if breaks and (breaks[0] <= 0 or breaks[-1] >= self.T):
            raise ConfigError("break positions must lie strictly inside (0, T)")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ConfigError("sigma must be finite and non-negative")
        if not -1.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (-1, 1)")
        parse_month(self.start)


def table2_step_spec(sigma: float = 0.05, seed: int = 0, **kw) -> StepSpec:
    """Five regimes at the target means (TABLE2_MEANS), breaking at TABLE2_BREAK_MONTHS."""
    breaks = tuple(months_between(SAMPLE_START, m) for m in TABLE2_BREAK_MONTHS)
    T = months_between(SAMPLE_START, SAMPLE_END)
    return StepSpec(TABLE2_MEANS, breaks, sigma=sigma, T=T, seed=seed, **kw)


def step_function(means, breaks, T: int) -> np.ndarray:
    edges = (0, *breaks, T)
    out = np.empty(T)
    for j, mu in enumerate(means):
        out[edges[j] : edges[j + 1]] = mu
    return out


def simulate_mean_shift(spec: StepSpec) -> MonthlySeries:
    rng = np.random.default_rng(spec.seed)
    y = step_function(spec.means, spec.breaks, spec.T)
    if spec.sigma > 0:
        e = rng.standard_normal(spec.T)
        if spec.rho == 0.0:
            u = spec.sigma * e
        else:
            u = np.empty(spec.T)
            u[0] = spec.sigma * e[0]
            innov = spec.sigma * np.sqrt(1.0 - spec.rho**2)
            for t in range(1, spec.T):
                u[t] = spec.rho * u[t - 1] + innov * e[t]
        y = y + u
    if spec.clamp:
        n = int(np.sum((y < 0) | (y > 1)))
        if n:
            log.info("clamped %d of %d observations to [0, 1]", n, spec.T)
        y = np.clip(y, 0.0, 1.0)
    return MonthlySeries(spec.start, y, "y")


def simulate_info(T: int, persistence: float, rng, start) -> InfoSets:
    """Ten unit-variance AR(1) information variables plus constants."""
    rho = persistence
    x = np.empty((T, 10))
    x[0] = rng.standard_normal(10)
    shocks = rng.standard_normal((T - 1, 10)) * np.sqrt(1.0 - rho * rho)
    for t in range(1, T):
        x[t] = rho * x[t - 1] + shocks[t - 1]
    one = np.ones((T, 1))
    return InfoSets(
        start,
        np.hstack([one, x[:, 0:4]]),
        np.hstack([one, x[:, 4:7]]),
        np.hstack([one, x[:, 7:10]]),
    )


def simulate_icapm(spec: DgpSpec):
    """Draw returns from the model.

    Returns
    -------
    returns : (T, 2) ndarray
        Mexico and world excess returns.
    info : InfoSets
    truth : FilterOutput
        The latent prices of risk, integration degree and covariances.
    """
    p = spec.params
    stat = stationarity_report(p)
    if not all(v["stationary"] for v in stat.values()):
        log.warning("non-stationary GARCH parameters: %s", stat)
    rng = np.random.default_rng(spec.seed)
    T = int(spec.T)
    info = simulate_info(T, spec.persistence, rng, parse_month(spec.start))
    z = rng.standard_normal((T, 2))

    H = unconditional_covariance(p)
    if H is None:
        H = p.intercept
    xw = np.clip(info.global_z @ p.kappa_w, -EXP_CLAMP, EXP_CLAMP)
    xi = np.clip(info.local_z @ p.kappa_i, -EXP_CLAMP, EXP_CLAMP)
    xs = info.integration_z @ p.delta_int
    dw, di = np.exp(xw), np.exp(xi)
    phi = 1.0 - np.exp(-xs * xs)

    R = np.empty((T, 2))
    Hs = np.empty((T, 2, 2))
    eps = np.empty((T, 2))
    ll = np.empty(T)
    for t in range(T):
        if t > 0:
            H = garch_step(p, eps[t - 1], H)
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise ConditioningError(f"simulated covariance not positive definite at t={t}", t=t) from None
        e = L @ z[t]
        R[t] = conditional_means(dw[t], di[t], phi[t], H) + e
        Hs[t], eps[t] = H, e
        det = H[0, 0] * H[1, 1] - H[0, 1] ** 2
        ll[t] = -LOG2PI - 0.5 * np.log(det) - 0.5 * float(z[t] @ z[t])
    truth = FilterOutput(info.start, dw, di, phi, Hs, eps, ll)
    return R, info, truth


# ---------------------------------------------------------------------------
# spec files


def spec_from_dict(d: dict):
    """Build a :class:`DgpSpec` or :class:`StepSpec` from a JSON object."""
    if not isinstance(d, dict):
        raise ConfigError("spec must be a JSON object")
    kind = d.get("kind")
    try:
        if kind == "icapm":
            params = ModelParams.from_dict(d["params"]) if "params" in d else reference_params()
            return DgpSpec(
                params=params,
                T=int(d.get("T", 1000)),
                seed=int(d.get("seed", 0)),
                persistence=float(d.get("persistence", 0.9)),
                start=str(d.get("start", SAMPLE_START)),
            )
        if kind == "mean_shift":
            if d.get("preset") == "table2":
                extra = {k: d[k] for k in ("rho", "clamp") if k in d}
                return table2_step_spec(float(d.get("sigma", 0.05)), int(d.get("seed", 0)), **extra)
            return StepSpec(
                means=tuple(d["means"]),
                breaks=tuple(d["breaks"]),
                sigma=float(d.get("sigma", 0.0)),
                T=int(d["T"]),
                seed=int(d.get("seed", 0)),
                rho=float(d.get("rho", 0.0)),
                clamp=bool(d.get("clamp", False)),
                start=str(d.get("start", SAMPLE_START)),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {kind} spec: {exc}") from None
    raise ConfigError(f"spec 'kind' must be 'icapm' or 'mean_shift', got {kind!r}")


def load_spec(path):
    try:
        return spec_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise ConfigError(f"no such spec file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec file {path} is not valid JSON: {exc}") from None
