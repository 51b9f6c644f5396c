"""Partially segmented conditional ICAPM with diagonal-BEKK GARCH-in-mean.

Mean equations (row ``t`` of each information matrix is dated ``t-1``)::

    R_m,t = phi_t dw_t h_mw,t + (1 - phi_t) di_t h_m,t + e_m,t
    R_w,t = dw_t h_w,t + e_w,t

with ``dw = exp(kappa_w . z)``, ``di = exp(kappa_i . z_local)``,
``phi = 1 - exp(-(delta . z_int)^2)`` and

    H_t = C'C + aa' o e_{t-1}e_{t-1}' + bb' o H_{t-1}

where ``o`` is the elementwise product and ``C`` is lower triangular.

Note that ``phi`` is zero when the integration index is zero and rises
towards one as the index moves away from zero in either direction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .data import InfoSets, Panel, panel_to_csv_text, atomic_write_text
from .errors import ConditioningError, DataError, SaturationError

log = logging.getLogger(__name__)

N_PARAMS = 20
PARAM_NAMES = (
    [f"kappa_w[{n}]" for n in ("const", "WDY", "DUSTP", "USDP", "DWIR")]
    + [f"kappa_i[{n}]" for n in ("const", "LDY", "DLIR", "DIP")]
    + [f"delta[{n}]" for n in ("const", "DDY", "DIR", "VER")]
    + ["c11", "c21", "c22", "a_m", "a_w", "b_m", "b_w"]
)
# slices into the flat parameter vector
KAPPA_W = slice(0, 5)
KAPPA_I = slice(5, 9)
DELTA = slice(9, 13)
C_LOWER = slice(13, 16)
A = slice(16, 18)
B = slice(18, 20)

EXP_CLAMP = 50.0
SATURATION = 700.0
PENALTY = 1e10
INIT_POLICIES = ("sample", "unconditional")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """The 20 free parameters.

    Flat ordering: ``kappa_w`` (5), ``kappa_i`` (4), ``delta_int`` (4),
    ``c_lower = (c11, c21, c22)``, ``a = (a_m, a_w)``, ``b = (b_m, b_w)``.
    """

    kappa_w: np.ndarray
    kappa_i: np.ndarray
    delta_int: np.ndarray
    c_lower: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        sizes = {"kappa_w": 5, "kappa_i": 4, "delta_int": 4, "c_lower": 3, "a": 2, "b": 2}
        for name, k in sizes.items():
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if v.size != k:
                raise ValueError(f"{name} needs {k} entries, got {v.size}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return bool(np.array_equal(self.to_vector(), other.to_vector()))

    def __hash__(self):
        return hash(self.to_vector().tobytes())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.kappa_w, self.kappa_i, self.delta_int, self.c_lower, self.a, self.b])

    @classmethod
    def from_vector(cls, theta) -> "ModelParams":
        th = np.asarray(theta, dtype=float).reshape(-1)
        if th.size != N_PARAMS:
            raise ValueError(f"parameter vector must have {N_PARAMS} entries, got {th.size}")
        return cls(th[KAPPA_W], th[KAPPA_I], th[DELTA], th[C_LOWER], th[A], th[B])

    @property
    def C(self) -> np.ndarray:
        c11, c21, c22 = self.c_lower
        return np.array([[c11, 0.0], [c21, c22]])

    @property
    def intercept(self) -> np.ndarray:
        """``C'C``."""
        C = self.C
        return C.T @ C

    def to_dict(self) -> dict:
        return {
            "kappa_w": self.kappa_w.tolist(),
            "kappa_i": self.kappa_i.tolist(),
            "delta_int": self.delta_int.tolist(),
            "c_lower": self.c_lower.tolist(),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "ModelParams":
        try:
            return cls(d["kappa_w"], d["kappa_i"], d["delta_int"], d["c_lower"], d["a"], d["b"])
        except KeyError as exc:
            raise ValueError(f"parameter block {exc.args[0]!r} missing") from None


def c_lower_from_intercept(M) -> np.ndarray:
    """Solve ``C'C = M`` for lower-triangular ``C`` with non-negative diagonal."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        return np.full(3, np.nan)
    c22 = math.sqrt(max(M[1, 1], 0.0))
    c21 = M[0, 1] / c22 if c22 > 0 else 0.0
    c11 = math.sqrt(max(M[0, 0] - c21 * c21, 0.0))
    return np.array([c11, c21, c22])


# ---------------------------------------------------------------------------
# scalar building blocks


def price_of_risk(kappa, z_row) -> float:
    """``exp(kappa . z)``; raises :class:`SaturationError` beyond |700|."""
    k = np.asarray(kappa, dtype=float)
    z = np.asarray(z_row, dtype=float)
    if k.shape != z.shape:
        raise ValueError(f"length mismatch: {k.shape} vs {z.shape}")
    x = float(k @ z)
    if not math.isfinite(x) or abs(x) > SATURATION:
        raise SaturationError(f"price of risk saturates: kappa . z = {x}")
    return math.exp(x)


def integration_degree(delta_int, zstar_row) -> float:
    d = np.asarray(delta_int, dtype=float)
    z = np.asarray(zstar_row, dtype=float)
    if d.shape != z.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {z.shape}")
    x = float(d @ z)
    return 1.0 - math.exp(-x * x)


def garch_step(params: ModelParams, eps_prev, h_prev) -> np.ndarray:
    """One step of the diagonal BEKK recursion."""
    e = np.asarray(eps_prev, dtype=float).reshape(2)
    H = np.asarray(h_prev, dtype=float)
    if H.shape != (2, 2):
        raise ValueError("h_prev must be 2 x 2")
    if H[0, 1] != H[1, 0]:
        raise ValueError("h_prev is not symmetric")
    a, b = params.a, params.b
    return params.intercept + np.outer(a, a) * np.outer(e, e) + np.outer(b, b) * H


def conditional_means(delta_w: float, delta_i: float, phi: float, H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    h_m, h_w, h_mw = H[0, 0], H[1, 1], H[0, 1]
    mu_m = phi * delta_w * h_mw + (1.0 - phi) * delta_i * h_m
    mu_w = delta_w * h_w
    return np.array([mu_m, mu_w])


def stationarity_report(params: ModelParams) -> dict:
    """``a_i a_j + b_i b_j`` per covariance entry and whether it is below one."""
    a, b = params.a, params.b
    out = {}
    for i, ni in enumerate("mw"):
        for j, nj in enumerate("mw"):
            if j < i:
                continue
            v = float(a[i] * a[j] + b[i] * b[j])
            out[f"{ni}{nj}"] = {"persistence": v, "stationary": abs(v) < 1.0}
    return out


def unconditional_covariance(params: ModelParams):
    """``C'C / (1 - aa' - bb')`` elementwise, or ``None`` when not stationary."""
    a, b = params.a, params.b
    denom = 1.0 - np.outer(a, a) - np.outer(b, b)
    if np.any(np.abs(np.outer(a, a) + np.outer(b, b)) >= 1.0) or np.any(np.diag(denom) <= 0):
        return None
    H = params.intercept / denom
    if np.linalg.eigvalsh(H)[0] <= 0:
        return None
    return H


def initial_covariance(params: ModelParams, returns, policy: str = "sample") -> np.ndarray:
    if policy == "sample":
        return np.cov(np.asarray(returns, dtype=float), rowvar=False, bias=False)
    if policy == "unconditional":
        H = unconditional_covariance(params)
        if H is None:
            return np.cov(np.asarray(returns, dtype=float), rowvar=False, bias=False)
        return H
    raise ValueError(f"unknown initialization policy {policy!r}; use one of {INIT_POLICIES}")


# ---------------------------------------------------------------------------
# filter


@dataclass(frozen=True)
class FilterOutput:
    """Per-period output of the filter; row ``t`` refers to month ``start + t``."""

    start: np.datetime64
    price_world: np.ndarray
    price_local: np.ndarray
    phi: np.ndarray
    H: np.ndarray  # T x 2 x 2
    eps: np.ndarray  # T x 2
    ll: np.ndarray
    n_clamped: int = 0

    def __post_init__(self):
        for name in ("price_world", "price_local", "phi", "H", "eps", "ll"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.ll.size

    @property
    def loglik(self) -> float:
        return float(np.sum(self.ll))

    @property
    def h_m(self):
        return self.H[:, 0, 0]

    @property
    def h_w(self):
        return self.H[:, 1, 1]

    @property
    def h_mw(self):
        return self.H[:, 0, 1]

    @classmethod
    def from_kernel(cls, start, out: np.ndarray, n_clamped: int = 0) -> "FilterOutput":
        T = out.shape[0]
        H = np.empty((T, 2, 2))
        H[:, 0, 0] = out[:, 3]
        H[:, 1, 1] = out[:, 4]
        H[:, 0, 1] = H[:, 1, 0] = out[:, 5]
        return cls(start, out[:, 0], out[:, 1], out[:, 2], H, out[:, 6:8], out[:, 8], n_clamped)

    def to_panel(self) -> Panel:
        return Panel(
            self.start,
            {
                "phi": self.phi,
                "price_world": self.price_world,
                "price_local": self.price_local,
                "h_m": self.h_m,
                "h_w": self.h_w,
                "h_mw": self.h_mw,
                "eps_m": self.eps[:, 0],
                "eps_w": self.eps[:, 1],
                "ll": self.ll,
            },
        )

    def write_csv(self, path) -> None:
        atomic_write_text(path, panel_to_csv_text(self.to_panel()))


def _prepare(returns, info: InfoSets):
    R = np.ascontiguousarray(returns, dtype=float)
    if R.ndim != 2 or R.shape[1] != 2:
        raise DataError("returns must be a T x 2 matrix")
    if R.shape[0] != len(info):
        raise DataError(f"returns have {R.shape[0]} rows but information sets have {len(info)}")
    if R.shape[0] < 2:
        raise DataError("need at least two periods")
    Z = np.ascontiguousarray(info.global_z)
    Zi = np.ascontiguousarray(info.local_z)
    Zs = np.ascontiguousarray(info.integration_z)
    return R, Z, Zi, Zs


def _h1_vec(H) -> np.ndarray:
    return np.array([H[0, 0], H[1, 1], H[0, 1]], dtype=float)


def run_filter(params: ModelParams, returns, info: InfoSets, init: str = "sample", clamp: float = EXP_CLAMP) -> FilterOutput:
    """Run the recursion forward over the whole sample.

    Raises
    ------
    ConditioningError
        When some ``H_t`` has determinant below 1e-300 (``.t`` is the row).
    """
    R, Z, Zi, Zs = _prepare(returns, info)
    theta = np.ascontiguousarray(params.to_vector())
    h1 = _h1_vec(initial_covariance(params, R, init))
    out = np.empty((R.shape[0], 9))
    status, t_bad, n_clamped, _ = _backend.garch_m_filter(theta, R, Z, Zi, Zs, h1, clamp, out)
    if status:
        what = "singular" if status == 1 else "non-finite"
        raise ConditioningError(f"conditional covariance is {what} at t={t_bad}", t=t_bad)
    if n_clamped:
        log.warning("price-of-risk index clamped at +/-%g in %d evaluations", clamp, n_clamped)
    return FilterOutput.from_kernel(info.start, out, n_clamped)


filter = run_filter  # noqa: A001  public name used throughout the docs


class QmlObjective:
    """Negative Gaussian log-likelihood as a function of the flat parameters.

    Evaluations that hit a singular covariance return :data:`PENALTY`
    instead of raising; ``penalty_hits`` counts them.
    """

    def __init__(self, returns, info: InfoSets, init: str = "sample", clamp: float = EXP_CLAMP):
        if init not in INIT_POLICIES:
            raise ValueError(f"unknown initialization policy {init!r}")
        self.R, self.Z, self.Zi, self.Zs = _prepare(returns, info)
        self.info = info
        self.init = init
        self.clamp = clamp
        self.nobs = self.R.shape[0]
        self.penalty_hits = 0
        self._h1_sample = _h1_vec(np.cov(self.R, rowvar=False))

    def _h1(self, theta):
        if self.init == "sample":
            return self._h1_sample
        H = unconditional_covariance(ModelParams.from_vector(theta))
        return self._h1_sample if H is None else _h1_vec(H)

    def __call__(self, theta) -> float:
        th = np.ascontiguousarray(theta, dtype=float)
        if th.size != N_PARAMS or not np.all(np.isfinite(th)):
            self.penalty_hits += 1
            return PENALTY
        status, _, _, total = _backend.garch_m_filter(th, self.R, self.Z, self.Zi, self.Zs, self._h1(th), self.clamp, None)
        if status or not math.isfinite(total):
            self.penalty_hits += 1
            return PENALTY
        return -total

    def contributions(self, theta) -> np.ndarray:
        """Per-period log-likelihood contributions (raises on failure)."""
        th = np.ascontiguousarray(theta, dtype=float)
        out = np.empty((self.nobs, 9))
        status, t_bad, _, _ = _backend.garch_m_filter(th, self.R, self.Z, self.Zi, self.Zs, self._h1(th), self.clamp, out)
        if status:
            raise ConditioningError(f"conditional covariance is singular at t={t_bad}", t=t_bad)
        return out[:, 8].copy()


def neg_loglik(theta, returns, info: InfoSets, init: str = "sample") -> float:
    """``-sum(ll_t)``; a large finite penalty when the filter fails."""
    return QmlObjective(returns, info, init)(theta)
