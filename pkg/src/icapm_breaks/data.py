"""Monthly time-series containers, CSV ingestion and information variables.

The CSV dialect is UTF-8 with a header row, a ``month`` column holding
``YYYY-MM`` and numeric data columns written with a plain decimal point.
Floats are serialized with ``repr`` so a write/read cycle is lossless.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import stats

from .errors import DataError, DegenerateMomentsError, GapError

MONTH_COLUMN = "month"

GLOBAL_NAMES = ("const", "WDY", "DUSTP", "USDP", "DWIR")
LOCAL_NAMES = ("const", "LDY", "DLIR", "DIP")
INTEGRATION_NAMES = ("const", "DDY", "DIR", "VER")
INFO_COLUMNS = GLOBAL_NAMES[1:] + LOCAL_NAMES[1:] + INTEGRATION_NAMES[1:]
RETURN_COLUMNS = ("r_mexico", "r_world")


# ---------------------------------------------------------------------------
# months


def parse_month(text) -> np.datetime64:
    """Parse ``YYYY-MM`` (or a datetime64) into a month-resolution datetime64."""
    if isinstance(text, np.datetime64):
        return text.astype("datetime64[M]")
    s = str(text).strip()
    parts = s.split("-")
    if len(parts) != 2 or len(parts[0]) != 4 or len(parts[1]) != 2:
        raise DataError(f"invalid month {s!r}; expected YYYY-MM")
    try:
        year, mon = int(parts[0]), int(parts[1])
    except ValueError:
        raise DataError(f"invalid month {s!r}; expected YYYY-MM") from None
    if not 1 <= mon <= 12:
        raise DataError(f"invalid month {s!r}; month out of range")
    return np.datetime64(f"{year:04d}-{mon:02d}", "M")


def format_month(month, style: str = "iso") -> str:
    """``iso`` gives ``1992-12``; ``colon`` gives ``1992:12``."""
    m = parse_month(month)
    year = m.astype(int) // 12 + 1970
    mon = m.astype(int) % 12 + 1
    if style == "iso":
        return f"{year:04d}-{mon:02d}"
    if style == "colon":
        return f"{year}:{mon}"
    raise ValueError(f"unknown month style {style!r}")


def month_range(start, n: int) -> np.ndarray:
    return parse_month(start) + np.arange(n)


def months_between(first, last) -> int:
    """Inclusive count of months from ``first`` to ``last``."""
    return int((parse_month(last) - parse_month(first)).astype(int)) + 1


# ---------------------------------------------------------------------------
# containers


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MonthlySeries:
    """Gap-free monthly observations starting at ``start``."""

    start: np.datetime64
    values: np.ndarray
    name: str = "value"

    def __post_init__(self):
        object.__setattr__(self, "start", parse_month(self.start))
        vals = _frozen(self.values)
        if vals.ndim != 1 or vals.size < 1:
            raise DataError("a MonthlySeries needs a 1-d sequence with at least one value")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise DataError(
                f"non-finite value in {self.name!r} at {format_month(self.start + bad)}"
            )
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_months(cls, months, values, name: str = "value") -> "MonthlySeries":
        """Build from explicit (sorted) month labels, rejecting gaps and duplicates."""
        ms = np.array([parse_month(m) for m in months])
        if len(ms) != len(values):
            raise DataError("months and values differ in length")
        if len(ms) == 0:
            raise DataError("empty series")
        _check_consecutive(ms)
        return cls(ms[0], values, name)

    def __len__(self) -> int:
        return self.values.size

    @property
    def months(self) -> np.ndarray:
        return month_range(self.start, len(self))

    @property
    def end(self) -> np.datetime64:
        return self.start + (len(self) - 1)


def _check_consecutive(ms, rows=None):
    for k in range(1, len(ms)):
        step = int((ms[k] - ms[k - 1]).astype(int))
        row = None if rows is None else rows[k]
        where = "" if row is None else f" (row {row})"
        if step == 0:
            raise DataError(f"duplicate month {format_month(ms[k])}{where}")
        if step > 1:
            missing = ms[k - 1] + 1
            raise GapError(
                f"gap in monthly data: {format_month(missing)} is missing{where}",
                missing=format_month(missing),
                row=row,
            )
        if step < 0:
            raise DataError(f"months out of order at {format_month(ms[k])}{where}")


@dataclass(frozen=True)
class Panel:
    """Named, aligned monthly columns sharing one start month and length."""

    start: np.datetime64
    columns: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "start", parse_month(self.start))
        cols = {}
        n = None
        for name, vals in self.columns.items():
            arr = _frozen(vals)
            if arr.ndim != 1:
                raise DataError(f"column {name!r} is not one-dimensional")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise DataError(f"column {name!r} has length {arr.size}, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"column {name!r} has non-finite values")
            cols[str(name)] = arr
        if not cols:
            raise DataError("a Panel needs at least one column")
        if n < 1:
            raise DataError("a Panel needs at least one row")
        object.__setattr__(self, "columns", cols)

    def __len__(self) -> int:
        return next(iter(self.columns.values())).size

    def __contains__(self, name) -> bool:
        return name in self.columns

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"missing column {name!r}") from None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.columns)

    @property
    def months(self) -> np.ndarray:
        return month_range(self.start, len(self))

    def series(self, name: str) -> MonthlySeries:
        return MonthlySeries(self.start, self[name], name)

    @classmethod
    def from_series(cls, *series: MonthlySeries) -> "Panel":
        if not series:
            raise DataError("no series given")
        start = series[0].start
        cols = {}
        for s in series:
            if s.start != start or len(s) != len(series[0]):
                raise DataError(f"series {s.name!r} is not aligned with {series[0].name!r}")
            if s.name in cols:
                raise DataError(f"duplicate column name {s.name!r}")
            cols[s.name] = s.values
        return cls(start, cols)


# ---------------------------------------------------------------------------
# CSV


def _parse_float(cell: str, column: str, row: int) -> float:
    s = cell.strip()
    try:
        if s == "" or "," in s:
            raise ValueError
        v = float(s)
    except ValueError:
        raise DataError(f"non-numeric value {cell!r} in column {column!r} (row {row})") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {cell!r} in column {column!r} (row {row})")
    return v


def read_csv_text(text: str, schema: Mapping[str, str] | None = None) -> Panel:
    """Parse CSV text. ``schema`` maps output names to CSV header names."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV (no header row)") from None
    if MONTH_COLUMN not in header:
        raise DataError(f"CSV header lacks a {MONTH_COLUMN!r} column")
    if len(set(header)) != len(header):
        dup = next(h for h in header if header.count(h) > 1)
        raise DataError(f"duplicate column {dup!r} in CSV header")
    data_cols = [h for h in header if h != MONTH_COLUMN]
    if schema is None:
        selected = {h: h for h in data_cols}
    else:
        selected = {}
        for out_name, csv_name in schema.items():
            if csv_name not in data_cols:
                raise DataError(f"schema column {csv_name!r} (for {out_name!r}) not in CSV header")
            selected[out_name] = csv_name
    idx = {h: i for i, h in enumerate(header)}

    rows = []
    for line_no, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise DataError(f"row {line_no} has {len(rec)} fields, expected {len(header)}")
        try:
            month = parse_month(rec[idx[MONTH_COLUMN]])
        except DataError as exc:
            raise DataError(f"{exc} (row {line_no})") from None
        vals = [_parse_float(rec[idx[c]], c, line_no) for c in selected.values()]
        rows.append((month, line_no, vals))
    if not rows:
        raise DataError("CSV has no data rows")
    rows.sort(key=lambda r: (r[0], r[1]))
    months = np.array([r[0] for r in rows])
    _check_consecutive(months, [r[1] for r in rows])
    mat = np.array([r[2] for r in rows], dtype=float).reshape(len(rows), len(selected))
    return Panel(months[0], {name: mat[:, j] for j, name in enumerate(selected)})


def ingest_csv(path, schema: Mapping[str, str] | None = None) -> Panel:
    """Read a monthly CSV file into a :class:`Panel`.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV with a ``month`` column.
    schema : mapping, optional
        ``{output_name: csv_column}``; when given only those columns are kept.

    Raises
    ------
    GapError
        A month is missing; the message names it and the row.
    DataError
        Duplicate month, non-numeric cell or unknown schema column.
    """
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such file: {p}")
    return read_csv_text(p.read_text(encoding="utf-8"), schema)


def panel_to_csv_text(panel: Panel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([MONTH_COLUMN, *panel.names])
    cols = [panel[n] for n in panel.names]
    for i, m in enumerate(panel.months):
        w.writerow([format_month(m), *(repr(float(c[i])) for c in cols)])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=f".{p.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, p)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(panel: Panel, path) -> None:
    atomic_write_text(path, panel_to_csv_text(panel))


# ---------------------------------------------------------------------------
# returns and information variables


def _aligned(*series: MonthlySeries):
    first = series[0]
    for s in series[1:]:
        if s.start != first.start or len(s) != len(first):
            raise DataError(f"series {s.name!r} is not aligned with {first.name!r}")


def excess_returns(
    price_index: MonthlySeries,
    dividend_yield: MonthlySeries,
    riskfree_annualized: MonthlySeries,
    name: str = "excess_return",
) -> MonthlySeries:
    """Monthly continuously-compounded excess return.

    ``r_t = ln(P_t / P_{t-1}) + dy_t / 12 - rf_{t-1} / 12`` with yields and
    rates as annualized decimals. The deposit rate is the one quoted at the
    start of the holding month. The output starts one month after the inputs.
    """
    _aligned(price_index, dividend_yield, riskfree_annualized)
    p = price_index.values
    if np.any(p <= 0):
        bad = int(np.flatnonzero(p <= 0)[0])
        raise DataError(f"non-positive price at {format_month(price_index.start + bad)}")
    if len(p) < 2:
        raise DataError("need at least two prices to form a return")
    r = np.diff(np.log(p)) + dividend_yield.values[1:] / 12.0 - riskfree_annualized.values[:-1] / 12.0
    return MonthlySeries(price_index.start + 1, r, name)


def first_difference(x: np.ndarray) -> np.ndarray:
    """``x_t - x_{t-1}``; the first entry is NaN so the result stays aligned."""
    out = np.full(len(x), np.nan)
    out[1:] = np.diff(x)
    return out


def log_difference(x: np.ndarray, what: str = "series") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DataError(f"{what} must be positive for a log difference")
    return first_difference(np.log(x))


def rolling_std(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing sample standard deviation (ddof=1); NaN until the window fills.

    NaNs in the input propagate.
    """
    x = np.asarray(x, dtype=float)
    out = np.full(len(x), np.nan)
    if window < 2:
        raise DataError("rolling window must be at least 2")
    if len(x) < window:
        return out
    win = np.lib.stride_tricks.sliding_window_view(x, window)
    sd = win.std(axis=1, ddof=1)
    # exact zero for constant windows, no roundoff residue
    const = np.all(win == win[:, :1], axis=1)
    sd[const] = 0.0
    out[window - 1 :] = sd
    return out


DEFAULT_RAW_COLUMNS = {
    "world_dy": "world_dy",
    "eurodollar": "eurodollar",
    "us_term_spread": "us_term_spread",
    "us_default_premium": "us_default_premium",
    "mex_dy": "mex_dy",
    "mex_short_rate": "mex_short_rate",
    "industrial_production": "industrial_production",
    "g7_real_rate": "g7_real_rate",
    "mex_real_rate": "mex_real_rate",
    "fx_rate": "fx_rate",
}


@dataclass(frozen=True)
class VariableConfig:
    """How raw panel columns become returns and information variables.

    ``returns`` maps ``mexico``/``world`` to either a column of ready-made
    excess returns or a dict with ``price``, ``dividend_yield`` and
    ``riskfree`` column names.
    """

    columns: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_RAW_COLUMNS))
    ver_window: int = 12
    returns: Mapping[str, object] = field(
        default_factory=lambda: {"mexico": "r_mexico", "world": "r_world"}
    )

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "VariableConfig":
        d = dict(d or {})
        cols = dict(DEFAULT_RAW_COLUMNS)
        cols.update(d.get("columns", {}))
        unknown = set(cols) - set(DEFAULT_RAW_COLUMNS)
        if unknown:
            raise DataError(f"unknown raw variable(s): {sorted(unknown)}")
        kw = {"columns": cols}
        if "ver_window" in d:
            kw["ver_window"] = int(d["ver_window"])
        if "returns" in d:
            kw["returns"] = dict(d["returns"])
        return cls(**kw)


@dataclass(frozen=True)
class InfoSets:
    """Global, local and integration design matrices.

    Row ``t`` holds information dated ``t-1`` relative to the return observed
    in month ``start + t``; each matrix leads with a constant column.
    """

    start: np.datetime64
    global_z: np.ndarray
    local_z: np.ndarray
    integration_z: np.ndarray
    lag: int = 1

    def __post_init__(self):
        object.__setattr__(self, "start", parse_month(self.start))
        expected = {"global_z": 5, "local_z": 4, "integration_z": 4}
        n = None
        for name, k in expected.items():
            m = _frozen(getattr(self, name))
            if m.ndim != 2 or m.shape[1] != k:
                raise DataError(f"{name} must be T x {k}, got {m.shape}")
            if n is None:
                n = m.shape[0]
            elif m.shape[0] != n:
                raise DataError("information matrices have different row counts")
            if not np.all(np.isfinite(m)):
                raise DataError(f"{name} has non-finite entries")
            if not np.all(m[:, 0] == 1.0):
                raise DataError(f"first column of {name} must be identically 1")
            object.__setattr__(self, name, m)
        if n < 1:
            raise DataError("information matrices are empty")

    def __len__(self) -> int:
        return self.global_z.shape[0]

    @property
    def months(self) -> np.ndarray:
        return month_range(self.start, len(self))

    @classmethod
    def from_columns(cls, start, cols: Mapping[str, np.ndarray]) -> "InfoSets":
        """Assemble from the ten non-constant variables keyed by name."""
        missing = [c for c in INFO_COLUMNS if c not in cols]
        if missing:
            raise DataError(f"missing information variable(s): {missing}")
        n = len(cols[INFO_COLUMNS[0]])
        one = np.ones(n)

        def stack(names):
            return np.column_stack([one] + [np.asarray(cols[c], dtype=float) for c in names[1:]])

        return cls(start, stack(GLOBAL_NAMES), stack(LOCAL_NAMES), stack(INTEGRATION_NAMES))

    def to_panel(self) -> Panel:
        cols = {}
        for names, mat in (
            (GLOBAL_NAMES, self.global_z),
            (LOCAL_NAMES, self.local_z),
            (INTEGRATION_NAMES, self.integration_z),
        ):
            for j, c in enumerate(names[1:], start=1):
                cols[c] = mat[:, j]
        return Panel(self.start, cols)

    @classmethod
    def from_panel(cls, panel: Panel) -> "InfoSets":
        return cls.from_columns(panel.start, {c: panel[c] for c in INFO_COLUMNS})


def _raw(panel: Panel, config: VariableConfig, key: str) -> np.ndarray:
    col = config.columns[key]
    if col not in panel:
        raise DataError(f"missing raw column {col!r} (needed for {key})")
    return np.asarray(panel[col], dtype=float)


def construct_variables(panel: Panel, config: VariableConfig | None = None) -> dict[str, np.ndarray]:
    """Information variables dated by panel month (NaN where undefined)."""
    config = config or VariableConfig()
    wdy = _raw(panel, config, "world_dy")
    ed = _raw(panel, config, "eurodollar")
    mdy = _raw(panel, config, "mex_dy")
    msr = _raw(panel, config, "mex_short_rate")
    return {
        "WDY": wdy - ed,
        "DUSTP": first_difference(_raw(panel, config, "us_term_spread")),
        "USDP": _raw(panel, config, "us_default_premium"),
        "DWIR": first_difference(ed),
        "LDY": mdy - msr,
        "DLIR": first_difference(msr),
        "DIP": log_difference(_raw(panel, config, "industrial_production"), "industrial production"),
        "DDY": wdy - mdy,
        "DIR": _raw(panel, config, "g7_real_rate") - _raw(panel, config, "mex_real_rate"),
        "VER": rolling_std(log_difference(_raw(panel, config, "fx_rate"), "exchange rate"), config.ver_window),
    }


def _return_series(panel: Panel, spec, which: str) -> np.ndarray:
    """Returns aligned to panel months (NaN in the first month when derived from prices)."""
    if isinstance(spec, str):
        if spec not in panel:
            raise DataError(f"missing return column {spec!r} for {which}")
        return np.asarray(panel[spec], dtype=float)
    try:
        price, dy, rf = spec["price"], spec["dividend_yield"], spec["riskfree"]
    except (KeyError, TypeError):
        raise DataError(f"return spec for {which} needs price, dividend_yield and riskfree") from None
    r = excess_returns(panel.series(price), panel.series(dy), panel.series(rf), which)
    out = np.full(len(panel), np.nan)
    out[1:] = r.values
    return out


def build_info_sets(panel: Panel, config: VariableConfig | None = None) -> InfoSets:
    """Lagged global, local and integration matrices for the usable sample.

    The first usable return month is the one after the first month in which
    every variable is defined; rows are trimmed identically in all three
    matrices.
    """
    return estimation_sample(panel, config, need_returns=False)[1]


def estimation_sample(panel: Panel, config: VariableConfig | None = None, need_returns: bool = True):
    """Aligned ``(returns T x 2, InfoSets)`` for estimation.

    ``returns`` is ``None`` when ``need_returns`` is false.
    """
    config = config or VariableConfig()
    if config.ver_window < 2:
        raise DataError("VER window must be at least 2 months")
    variables = construct_variables(panel, config)
    n = len(panel)
    first_valid = max(1, config.ver_window)  # differencing loses 1, VER loses W
    rets = None
    if need_returns:
        rets = np.column_stack(
            [_return_series(panel, config.returns.get(k, d), k) for k, d in (("mexico", "r_mexico"), ("world", "r_world"))]
        )
    # return month t uses information from month t-1
    t0 = first_valid + 1
    if n - t0 < 2:
        raise DataError(
            f"sample too short: {n} months leaves {max(n - t0, 0)} usable rows with VER window {config.ver_window}"
        )
    cols = {k: v[t0 - 1 : n - 1] for k, v in variables.items()}
    for k, v in cols.items():
        if not np.all(np.isfinite(v)):
            raise DataError(f"variable {k} is not finite over the estimation sample")
    info = InfoSets.from_columns(panel.start + t0, cols)
    if rets is not None:
        rets = rets[t0:]
        if not np.all(np.isfinite(rets)):
            raise DataError("returns are not finite over the estimation sample")
    return rets, info


def sample_to_panel(returns: np.ndarray, info: InfoSets) -> Panel:
    """Combine returns and information into one panel for CSV output."""
    returns = np.asarray(returns, dtype=float)
    if returns.shape != (len(info), 2):
        raise DataError("returns must be T x 2 and match the information rows")
    cols = {RETURN_COLUMNS[0]: returns[:, 0], RETURN_COLUMNS[1]: returns[:, 1]}
    cols.update(info.to_panel().columns)
    return Panel(info.start, cols)


def sample_from_panel(panel: Panel):
    rets = np.column_stack([panel[RETURN_COLUMNS[0]], panel[RETURN_COLUMNS[1]]])
    return rets, InfoSets.from_panel(panel)


# ---------------------------------------------------------------------------
# diagnostics


def significance_stars(p: float) -> str:
    """``*`` at 1%, ``**`` at 5%, ``***`` at 10%."""
    if p < 0.01:
        return "*"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "***"
    return ""


@dataclass(frozen=True)
class DiagnosticsReport:
    nobs: int
    skewness: float
    excess_kurtosis: float
    jarque_bera: tuple[float, float]
    ljung_box: tuple[int, float, float]

    def to_dict(self) -> dict:
        n = self.nobs
        p_skew = 2 * stats.norm.sf(abs(self.skewness) / math.sqrt(6.0 / n))
        p_kurt = 2 * stats.norm.sf(abs(self.excess_kurtosis) / math.sqrt(24.0 / n))
        lags, q, pq = self.ljung_box
        return {
            "nobs": n,
            "skewness": {"value": self.skewness, "p_value": p_skew, "stars": significance_stars(p_skew)},
            "excess_kurtosis": {
                "value": self.excess_kurtosis,
                "p_value": p_kurt,
                "stars": significance_stars(p_kurt),
            },
            "jarque_bera": {
                "statistic": self.jarque_bera[0],
                "p_value": self.jarque_bera[1],
                "stars": significance_stars(self.jarque_bera[1]),
            },
            "ljung_box": {"lags": lags, "statistic": q, "p_value": pq, "stars": significance_stars(pq)},
        }


def _values(x) -> np.ndarray:
    if isinstance(x, MonthlySeries):
        return x.values
    return np.asarray(x, dtype=float)


def descriptive_stats(x, lb_lags: int = 12) -> DiagnosticsReport:
    """Skewness, excess kurtosis, Jarque-Bera and Ljung-Box Q for one series.

    Moments use the 1/T estimators. ``JB = T (S^2/6 + K^2/24)`` against
    chi2(2); ``Q(L) = T(T+2) sum_k rho_k^2 / (T-k)`` against chi2(L).
    """
    v = _values(x)
    n = v.size
    if lb_lags < 1:
        raise DataError("lb_lags must be positive")
    if n < lb_lags + 1:
        raise DataError(f"need at least {lb_lags + 1} observations for Q({lb_lags}), got {n}")
    d = v - v.mean()
    m2 = np.mean(d * d)
    scale = np.max(np.abs(v)) if n else 0.0
    if m2 <= (1e-14 * scale) ** 2 or m2 == 0.0:
        raise DegenerateMomentsError("constant series: moments are undefined")
    skew = float(np.mean(d**3) / m2**1.5)
    kurt = float(np.mean(d**4) / m2**2 - 3.0)
    jb = n * (skew**2 / 6.0 + kurt**2 / 24.0)
    denom = np.sum(d * d)
    acf = np.array([np.sum(d[k:] * d[:-k]) / denom for k in range(1, lb_lags + 1)])
    q = float(n * (n + 2) * np.sum(acf**2 / (n - np.arange(1, lb_lags + 1))))
    return DiagnosticsReport(
        nobs=n,
        skewness=skew,
        excess_kurtosis=kurt,
        jarque_bera=(float(jb), float(stats.chi2.sf(jb, 2))),
        ljung_box=(lb_lags, q, float(stats.chi2.sf(q, lb_lags))),
    )
