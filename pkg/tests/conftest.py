import numpy as np
import pytest

from icapm_breaks import _backend, _pykernels
from icapm_breaks.icapm import N_PARAMS

KERNEL_BACKENDS = [_pykernels]
if _backend.BACKEND == "cython":
    KERNEL_BACKENDS.append(_backend.kernels)


@pytest.fixture(params=KERNEL_BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def kernels(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


RAW_COLUMNS = (
    "world_dy", "eurodollar", "us_term_spread", "us_default_premium", "mex_dy", "mex_short_rate",
    "industrial_production", "g7_real_rate", "mex_real_rate", "fx_rate", "mex_price", "world_price",
)


def raw_panel_text(n=150, seed=0, start=(1988, 1)):
    """A synthetic raw monthly panel in the ingestion CSV dialect."""
    rng = np.random.default_rng(seed)
    walk = lambda lvl, sd: lvl + np.cumsum(rng.normal(0, sd, n))
    cols = {
        "world_dy": np.abs(walk(0.03, 0.001)),
        "eurodollar": np.abs(walk(0.05, 0.002)),
        "us_term_spread": walk(0.01, 0.001),
        "us_default_premium": np.abs(walk(0.01, 0.0005)),
        "mex_dy": np.abs(walk(0.02, 0.001)),
        "mex_short_rate": np.abs(walk(0.2, 0.01)),
        "industrial_production": 100 * np.exp(walk(0.0, 0.01)),
        "g7_real_rate": walk(0.02, 0.001),
        "mex_real_rate": walk(0.05, 0.004),
        "fx_rate": 3 * np.exp(walk(0.0, 0.03)),
        "mex_price": 100 * np.exp(walk(0.0, 0.09)),
        "world_price": 100 * np.exp(walk(0.0, 0.04)),
    }
    y, m = start
    lines = ["month," + ",".join(RAW_COLUMNS)]
    for t in range(n):
        mm = (m - 1 + t) % 12 + 1
        yy = y + (m - 1 + t) // 12
        lines.append(f"{yy:04d}-{mm:02d}," + ",".join(repr(float(cols[c][t])) for c in RAW_COLUMNS))
    return "\n".join(lines) + "\n"


RAW_VARIABLES = {
    "ver_window": 12,
    "returns": {
        "mexico": {"price": "mex_price", "dividend_yield": "mex_dy", "riskfree": "eurodollar"},
        "world": {"price": "world_price", "dividend_yield": "world_dy", "riskfree": "eurodollar"},
    },
}


def random_theta(rng):
    """A random interior parameter point with a well-conditioned intercept."""
    th = np.empty(N_PARAMS)
    th[0:13] = rng.normal(0.0, 0.3, 13)
    th[13:16] = [rng.uniform(0.4, 1.0), rng.uniform(-0.4, 0.4), rng.uniform(0.4, 1.0)]
    th[16:18] = rng.uniform(0.05, 0.4, 2) * rng.choice([-1, 1], 2)
    th[18:20] = rng.uniform(0.5, 0.9, 2)
    return th
