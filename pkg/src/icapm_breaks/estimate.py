"""QML estimation, sandwich covariance, Wald constancy tests and residual checks."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .data import DiagnosticsReport, InfoSets, descriptive_stats, significance_stars
from .errors import ConditioningError, EstimationError
from .icapm import (
    A,
    B,
    C_LOWER,
    DELTA,
    KAPPA_I,
    KAPPA_W,
    N_PARAMS,
    PARAM_NAMES,
    PENALTY,
    FilterOutput,
    ModelParams,
    QmlObjective,
    c_lower_from_intercept,
    run_filter,
    stationarity_report,
)

log = logging.getLogger(__name__)

MIN_SAMPLE = 60

# the three constancy restrictions reported alongside the estimates
PANEL_D = {
    "world_price_constant": ((1, 2, 3, 4), "Is the price of world risk constant?"),
    "local_price_constant": ((6, 7, 8), "Is the price of Mexican risk constant?"),
    "integration_constant": ((10, 11, 12), "Is the degree of integration constant?"),
}


@dataclass(frozen=True)
class OptimizerConfig:
    starts: int = 8
    seed: int = 0
    gtol: float = 1e-5
    maxiter: int = 1000
    init: str = "sample"
    # relative finite-difference steps; the GARCH directions have large
    # higher derivatives, so coarser steps leave the Hessian indefinite
    grad_step: float = 1e-6
    hess_step: float = 1e-5
    robust: bool = True

    @classmethod
    def from_dict(cls, d) -> "OptimizerConfig":
        d = dict(d or {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            from .errors import ConfigError

            raise ConfigError(f"unknown optimizer setting(s): {sorted(unknown)}")
        return cls(**d)


def numeric_gradient(f, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``rel_step * max(|x_i|, 1)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    xp = x.copy()
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1.0)
        xp[i] = x[i] + h
        fp = f(xp)
        xp[i] = x[i] - h
        fm = f(xp)
        xp[i] = x[i]
        g[i] = (fp - fm) / (2.0 * h)
    return g


def numeric_hessian(f, x, rel_step: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    h = rel_step * np.maximum(np.abs(x), 1.0)
    f0 = f(x)
    Hm = np.empty((n, n))
    xp = x.copy()
    for i in range(n):
        xp[i] = x[i] + h[i]
        fp = f(xp)
        xp[i] = x[i] - h[i]
        fm = f(xp)
        xp[i] = x[i]
        Hm[i, i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i])
        for j in range(i):
            vals = []
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                xp[i] = x[i] + si * h[i]
                xp[j] = x[j] + sj * h[j]
                vals.append(f(xp))
            xp[i], xp[j] = x[i], x[j]
            Hm[i, j] = Hm[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * h[i] * h[j])
    return Hm


def default_start(returns) -> np.ndarray:
    """Zero slopes; world price ln 2, integration constant 0.5; GARCH (0.2, 0.7)."""
    S = np.cov(np.asarray(returns, dtype=float), rowvar=False)
    theta = np.zeros(N_PARAMS)
    theta[KAPPA_W.start] = math.log(2.0)
    theta[DELTA.start] = 0.5
    theta[C_LOWER] = c_lower_from_intercept(0.5 * S)
    theta[A] = 0.2
    theta[B] = 0.7
    return theta


def start_points(returns, n: int, seed: int) -> list[np.ndarray]:
    base = default_start(returns)
    rng = np.random.default_rng(seed)
    points = [base]
    for _ in range(max(n, 1) - 1):
        th = base.copy()
        th[:13] += rng.normal(0.0, 0.5, 13)
        th[C_LOWER] *= np.exp(rng.normal(0.0, 0.2, 3))
        th[A] = rng.uniform(0.05, 0.4, 2)
        th[B] = rng.uniform(0.5, 0.9, 2)
        points.append(th)
    return points


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float
    label: str = ""

    def format_row(self) -> str:
        if not math.isfinite(self.statistic):
            return f"(n/a, {self.df}, n/a)"
        return f"({self.statistic:.2f}, {self.df}, {self.p_value:.3f})"

    def to_dict(self) -> dict:
        return {
            "restriction": self.label,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "formatted": self.format_row(),
        }


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    robust_cov: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    grad_norm: float
    filter: FilterOutput
    nobs: int
    start_logliks: tuple = ()
    penalty_hits: int = 0
    warnings: tuple = ()

    @property
    def params(self) -> ModelParams:
        return ModelParams.from_vector(self.theta_hat)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.robust_cov), 0.0, None))

    @property
    def p_values(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.abs(self.theta_hat) / self.se
        return np.where(np.isfinite(z), 2.0 * stats.norm.sf(z), np.nan)

    @property
    def stars(self) -> list[str]:
        return [significance_stars(p) if np.isfinite(p) else "" for p in self.p_values]


def repair_start(obj, x0, max_halvings: int = 12):
    """Halve the ARCH loadings until the objective is finite.

    Large residuals feed back into the variance through the in-mean term;
    shrinking ``a`` removes that feedback. Returns ``None`` if it never helps.
    """
    x = np.array(x0, dtype=float)
    for _ in range(max_halvings + 1):
        f = obj(x)
        if math.isfinite(f) and f < PENALTY:
            return x, f
        x[A] *= 0.5
    return None


def _newton_polish(obj, x, fx, cfg: OptimizerConfig, steps: int = 3):
    """A few Newton steps with the numeric Hessian.

    BFGS tends to stall on line-search precision once the remaining
    decrease is near rounding level; a Newton step usually finishes the job.
    Negative or tiny curvatures are floored so each step is a descent one.
    """
    for _ in range(steps):
        g = numeric_gradient(obj, x, cfg.grad_step)
        if np.max(np.abs(g)) <= cfg.gtol * max(1.0, abs(fx)):
            break
        w, V = np.linalg.eigh(numeric_hessian(obj, x, cfg.hess_step))
        if not np.all(np.isfinite(w)) or w[-1] <= 0:
            break
        w = np.maximum(np.abs(w), 1e-8 * w[-1])
        step = -V @ ((V.T @ g) / w)
        t = 1.0
        while t > 1e-6:
            fn = obj(x + t * step)
            if fn <= fx:
                break
            t *= 0.5
        else:
            break
        x, fx = x + t * step, fn
    return x, fx


def _minimize(obj, x0, cfg: OptimizerConfig):
    fixed = repair_start(obj, x0)
    if fixed is None:
        return None
    x0, f0 = fixed
    scale = max(1.0, abs(f0))

    def jac(x):
        return numeric_gradient(obj, x, cfg.grad_step)

    def done(x, fx):
        gnorm = float(np.max(np.abs(jac(x))))
        return gnorm, gnorm <= cfg.gtol * max(1.0, abs(fx))

    x, nit = np.asarray(x0, dtype=float), 0
    # BFGS may stop on line-search precision loss; one warm restart
    # with a fresh Hessian approximation usually finishes the job
    for _ in range(2):
        res = optimize.minimize(
            obj, x, jac=jac, method="BFGS", options={"gtol": cfg.gtol * scale, "maxiter": cfg.maxiter}
        )
        x, nit = res.x, nit + int(res.nit)
        fx = float(obj(x))
        gnorm, conv = done(x, fx)
        if conv:
            break
    if not conv and fx < PENALTY:
        x, fx = _newton_polish(obj, x, fx, cfg)
        gnorm, conv = done(x, fx)
    return x, fx, nit, gnorm, conv


def fit(returns, info: InfoSets, config: OptimizerConfig | None = None, extra_starts=()) -> FitResult:
    """Maximize the Gaussian quasi-likelihood from several starting points.

    The best local optimum across starts is kept. Standard errors use the
    sandwich form (see :func:`robust_cov`) unless ``config.robust`` is off.
    ``extra_starts`` are tried before the generated points; with
    ``config.starts == 0`` they are the only ones.
    """
    cfg = config or OptimizerConfig()
    returns = np.asarray(returns, dtype=float)
    notes = []
    if returns.shape[0] < MIN_SAMPLE:
        msg = f"only {returns.shape[0]} observations; QML inference is unreliable below {MIN_SAMPLE}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    obj = QmlObjective(returns, info, cfg.init)
    best = None
    start_ll = []
    points = [np.asarray(x, dtype=float) for x in extra_starts]
    if cfg.starts > 0 or not points:
        points += start_points(returns, cfg.starts, cfg.seed)
    for k, x0 in enumerate(points):
        out = _minimize(obj, x0, cfg)
        if out is None:
            start_ll.append(None)
            log.info("start %d lies in the penalty region; skipped", k)
            continue
        x, fx, nit, gnorm, conv = out
        start_ll.append(-fx if fx < PENALTY else None)
        if fx >= PENALTY or not math.isfinite(fx):
            continue
        if best is None or fx < best[1]:
            best = (x, fx, nit, gnorm, conv)
    if best is None:
        raise EstimationError(
            "estimation failed: every start hit the penalty region",
            {"starts": cfg.starts, "penalty_hits": obj.penalty_hits},
        )
    x, fx, nit, gnorm, conv = best
    if not conv:
        msg = f"gradient norm {gnorm:.3g} above tolerance at the best optimum"
        notes.append(msg)
        log.warning(msg)
    filt = run_filter(ModelParams.from_vector(x), returns, info, cfg.init)
    if cfg.robust:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            V = robust_cov(x, returns, info, cfg.init, cfg.hess_step, cfg.grad_step)
        for w in caught:
            notes.append(str(w.message))
            warnings.warn(w.message, w.category, stacklevel=2)
    else:
        V = np.full((N_PARAMS, N_PARAMS), np.nan)
    return FitResult(
        theta_hat=x,
        robust_cov=V,
        loglik=-fx,
        converged=conv,
        n_iter=nit,
        grad_norm=gnorm,
        filter=filt,
        nobs=returns.shape[0],
        start_logliks=tuple(start_ll),
        penalty_hits=obj.penalty_hits,
        warnings=tuple(notes),
    )


def robust_cov(theta_hat, returns, info: InfoSets, init: str = "sample", hess_step: float = 1e-5, score_step: float = 1e-6) -> np.ndarray:
    """QML sandwich covariance ``A^-1 B A^-1 / T``.

    ``A`` is the numeric Hessian of the average negative log-likelihood and
    ``B`` the average outer product of per-period numeric scores.
    """
    obj = QmlObjective(returns, info, init)
    T = obj.nobs
    theta = np.asarray(theta_hat, dtype=float)

    def avg(th):
        return obj(th) / T

    hits = obj.penalty_hits
    Amat = numeric_hessian(avg, theta, hess_step)
    if obj.penalty_hits > hits:
        warnings.warn("Hessian evaluation touched the penalty region", RuntimeWarning, stacklevel=2)

    scores = np.empty((T, theta.size))
    tp = theta.copy()
    for i in range(theta.size):
        h = score_step * max(abs(theta[i]), 1.0)
        tp[i] = theta[i] + h
        up = obj.contributions(tp)
        tp[i] = theta[i] - h
        dn = obj.contributions(tp)
        tp[i] = theta[i]
        scores[:, i] = (up - dn) / (2.0 * h)
    Bmat = scores.T @ scores / T

    Amat = 0.5 * (Amat + Amat.T)
    if not np.all(np.isfinite(Amat)) or np.linalg.cond(Amat) > 1e12:
        warnings.warn("Hessian is numerically singular; using the pseudo-inverse", RuntimeWarning, stacklevel=2)
        Ainv = np.linalg.pinv(Amat)
    else:
        Ainv = np.linalg.inv(Amat)
    V = Ainv @ Bmat @ Ainv / T
    return 0.5 * (V + V.T)


def wald_test(theta_hat, cov, selector, label: str = "") -> WaldResult:
    """``W = theta_S' V_SS^-1 theta_S`` against chi2(|S|)."""
    idx = sorted(set(int(i) for i in selector))
    theta = np.asarray(theta_hat, dtype=float)
    V = np.asarray(cov, dtype=float)
    if not idx:
        raise ValueError("selector must be non-empty")
    if idx[0] < 0 or idx[-1] >= theta.size:
        raise ValueError("selector index out of range")
    ts = theta[idx]
    Vs = V[np.ix_(idx, idx)]
    if not np.all(np.isfinite(Vs)) or np.linalg.cond(Vs) > 1e14:
        raise EstimationError(f"covariance block for {label or idx} is singular")
    W = float(ts @ np.linalg.solve(Vs, ts))
    W = max(W, 0.0)
    return WaldResult(W, len(idx), float(stats.chi2.sf(W, len(idx))), label)


def panel_d_tests(fit_result: FitResult) -> dict[str, WaldResult]:
    """The three constancy tests; a singular block yields a NaN row, not an error."""
    out = {}
    for key, (sel, label) in PANEL_D.items():
        try:
            out[key] = wald_test(fit_result.theta_hat, fit_result.robust_cov, sel, label)
        except EstimationError as exc:
            log.warning("%s", exc)
            out[key] = WaldResult(math.nan, len(sel), math.nan, label)
    return out


def standardized_residuals(filt: FilterOutput, lb_lags: int = 12):
    """``z_t = L_t^-1 e_t`` with ``L_t`` the lower Cholesky factor of ``H_t``.

    Returns the ``T x 2`` residual matrix and a diagnostics report per column.
    """
    hm, hw, hmw = filt.h_m, filt.h_w, filt.h_mw
    if np.any(hm <= 0):
        t = int(np.flatnonzero(hm <= 0)[0])
        raise ConditioningError(f"Cholesky failure at t={t}: non-positive variance", t=t)
    l11 = np.sqrt(hm)
    l21 = hmw / l11
    rem = hw - l21 * l21
    if np.any(rem <= 0):
        t = int(np.flatnonzero(rem <= 0)[0])
        raise ConditioningError(f"Cholesky failure at t={t}: matrix not positive definite", t=t)
    l22 = np.sqrt(rem)
    z = np.empty_like(filt.eps)
    z[:, 0] = filt.eps[:, 0] / l11
    z[:, 1] = (filt.eps[:, 1] - l21 * z[:, 0]) / l22
    reports = [descriptive_stats(z[:, j], lb_lags) for j in range(2)]
    return z, reports


def _coef_block(fit_result: FitResult, sl: slice, names) -> dict:
    theta, se, p, st = fit_result.theta_hat, fit_result.se, fit_result.p_values, fit_result.stars
    return {
        "names": list(names),
        "coef": [float(v) for v in theta[sl]],
        "se": [float(v) for v in se[sl]],
        "p_value": [float(v) for v in p[sl]],
        "stars": st[sl],
    }


def table1_report(fit_result: FitResult, residual_reports: list[DiagnosticsReport], start_month: str | None = None) -> dict:
    """Estimates, GARCH loadings, residual diagnostics and constancy tests."""
    filt = fit_result.filter
    tests = panel_d_tests(fit_result)
    garch = {}
    for label, sl in (("a", A), ("b", B)):
        block = _coef_block(fit_result, sl, ["mexico", "world"])
        garch[label] = block
    garch["c_lower"] = _coef_block(fit_result, C_LOWER, ["c11", "c21", "c22"])
    diag = {name: rep.to_dict() for name, rep in zip(("mexico", "world"), residual_reports)}
    q = [rep.ljung_box for rep in residual_reports]
    return {
        "sample": {
            "nobs": fit_result.nobs,
            "start": start_month,
            "loglik": fit_result.loglik,
            "converged": fit_result.converged,
            "iterations": fit_result.n_iter,
            "gradient_norm": fit_result.grad_norm,
            "mean_price_world": float(np.mean(filt.price_world)),
            "mean_price_local": float(np.mean(filt.price_local)),
            "mean_phi": float(np.mean(filt.phi)),
            "stationarity": stationarity_report(fit_result.params),
            "warnings": list(fit_result.warnings),
        },
        "panel_a": {
            "price_world": _coef_block(fit_result, KAPPA_W, ["const", "WDY", "DUSTP", "USDP", "DWIR"]),
            "price_local": _coef_block(fit_result, KAPPA_I, ["const", "LDY", "DLIR", "DIP"]),
            "integration": _coef_block(fit_result, DELTA, ["const", "DDY", "DIR", "VER"]),
        },
        "panel_b": garch,
        "panel_c": {
            **diag,
            "q_formatted": f"Q({q[0][0]}) {q[0][1]:.3f} / {q[1][1]:.3f}",
        },
        "panel_d": [t.to_dict() for t in tests.values()],
        "parameter_names": list(PARAM_NAMES),
    }
