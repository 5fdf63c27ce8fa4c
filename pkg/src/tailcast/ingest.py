"""Vintage panels, FRED-MD style transformation codes and real-time design matrices."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "TRANSFORM_CODES",
    "LAGS_CONSUMED",
    "PanelParseError",
    "SeriesSpec",
    "VintagePanel",
    "DesignMatrix",
    "parse_panel",
    "read_vintage_csv",
    "apply_transform",
    "transform_frame",
    "assemble_design",
]

TRANSFORM_CODES = (1, 2, 3, 4, 5, 6, 7)
# leading observations lost by each code
LAGS_CONSUMED = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}
PREDICTOR_MODES = ("fred", "text", "both")


class PanelParseError(ValueError):
    """Raised for malformed vintage files (bad dates, bad codes rows)."""


@dataclass(frozen=True)
class SeriesSpec:
    id: str
    transform: int
    is_financial: bool = False

    def __post_init__(self):
        if self.transform not in TRANSFORM_CODES:
            raise ValueError(
                f"series {self.id!r}: transformation code {self.transform!r} not in 1..7"
            )


@dataclass(frozen=True)
class VintagePanel:
    """Ordered map of vintage month -> raw data matrix (rows: observation months).

    The frames are treated as read-only once the panel exists.
    """

    vintages: Mapping[pd.Period, pd.DataFrame]
    specs: tuple[SeriesSpec, ...]

    def __post_init__(self):
        ids = [s.id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise ValueError("series ids must be unique within a panel")
        keys = list(self.vintages)
        if keys != sorted(keys):
            raise ValueError("vintages must be ordered by vintage date")
        prev = -1
        for key in keys:
            frame = self.vintages[key]
            idx = frame.index
            if len(idx) and not (idx == pd.period_range(idx[0], periods=len(idx), freq="M")).all():
                raise ValueError(f"vintage {key}: observation months are not contiguous")
            if len(frame) < prev:
                raise ValueError(f"vintage {key} has fewer rows than its predecessor")
            prev = len(frame)

    @property
    def spec_map(self) -> dict[str, SeriesSpec]:
        return {s.id: s for s in self.specs}

    @property
    def final(self) -> pd.DataFrame:
        return self.vintages[list(self.vintages)[-1]]

    def vintage(self, month) -> pd.DataFrame:
        key = pd.Period(month, freq="M")
        try:
            return self.vintages[key]
        except KeyError:
            raise LookupError(f"no vintage for {key}") from None

    @classmethod
    def from_final(
        cls,
        data: pd.DataFrame,
        specs: Sequence[SeriesSpec],
        first_vintage=None,
    ) -> "VintagePanel":
        """Build real-time views of a single final panel by truncation.

        The vintage for month v holds every observation dated <= v, except that
        non-financial series are not yet published for month v itself.
        """
        data = data.copy()
        data.index = pd.PeriodIndex(data.index, freq="M")
        start = data.index[0] + 1 if first_vintage is None else pd.Period(first_vintage, freq="M")
        macro = [s.id for s in specs if not s.is_financial]
        vintages = {}
        for v in pd.period_range(start, data.index[-1], freq="M"):
            view = data.loc[:v].copy()
            view.loc[v, macro] = np.nan
            vintages[v] = view
        return cls(vintages=vintages, specs=tuple(specs))


@dataclass(frozen=True)
class DesignMatrix:
    """Timing-aligned, standardized predictors and the target for one origin."""

    X: np.ndarray
    y: np.ndarray
    h: int
    column_names: tuple[str, ...]
    means: np.ndarray
    sds: np.ndarray
    dates: pd.PeriodIndex
    origin: pd.Period
    x_new: np.ndarray
    x_new_raw: np.ndarray
    X_raw: np.ndarray
    provenance: tuple[str, ...] = field(default=())

    @property
    def target_date(self) -> pd.Period:
        return self.origin + self.h

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.means) / self.sds


# --------------------------------------------------------------------------- parsing


def _parse_month(text: str, row: int, path) -> pd.Period:
    try:
        return pd.Period(pd.Timestamp(str(text).strip()), freq="M")
    except (ValueError, TypeError):
        raise PanelParseError(f"{path}: row {row}: malformed date {text!r}") from None


def _load_sidecar(path) -> dict[str, dict]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def read_vintage_csv(path, sidecar=None) -> tuple[pd.DataFrame, list[SeriesSpec]]:
    """Read one vintage file.

    Layout: header row (date column first), a row starting ``transform`` with
    integer codes, an optional row starting ``financial`` with 0/1 flags, then
    observation rows keyed by ``YYYY-MM``.  When a sidecar mapping
    ``id -> {transform, financial}`` is given it takes precedence and the
    codes row may be omitted.
    """
    path = Path(path)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if raw.shape[1] < 2:
        raise PanelParseError(f"{path}: expected a date column and at least one series")
    date_col, ids = raw.columns[0], [str(c) for c in raw.columns[1:]]
    codes, flags = None, {c: False for c in ids}
    body_start = 0
    for i in range(min(2, len(raw))):
        label = raw.iloc[i, 0].strip().lower()
        if label in ("transform", "tcode", "transformation"):
            codes = {}
            for c in ids:
                cell = raw.iloc[i][c].strip()
                try:
                    code = int(float(cell))
                    if float(cell) != code:
                        raise ValueError
                except ValueError:
                    raise PanelParseError(f"{path}: column {c!r}: code {cell!r} is not an integer") from None
                if code not in TRANSFORM_CODES:
                    raise PanelParseError(f"{path}: column {c!r}: unknown transformation code {code}")
                codes[c] = code
            body_start = i + 1
        elif label == "financial":
            flags = {c: raw.iloc[i][c].strip() in ("1", "true", "True", "X", "x") for c in ids}
            body_start = i + 1
    if sidecar is not None:
        side = sidecar if isinstance(sidecar, Mapping) else _load_sidecar(sidecar)
        codes = {}
        for c in ids:
            if c not in side:
                raise PanelParseError(f"{path}: column {c!r} missing from sidecar spec")
            code = int(side[c]["transform"])
            if code not in TRANSFORM_CODES:
                raise PanelParseError(f"sidecar: column {c!r}: unknown transformation code {code}")
            codes[c] = code
            flags[c] = bool(side[c].get("financial", False))
    if codes is None:
        raise PanelParseError(f"{path}: no transformation codes row and no sidecar given")

    body = raw.iloc[body_start:]
    # +2: one header line, 1-based rows
    months = [_parse_month(d, body_start + k + 2, path) for k, d in enumerate(body[date_col])]
    values = body[ids].replace("", np.nan).apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    frame = pd.DataFrame(values, index=pd.PeriodIndex(months, freq="M"), columns=ids)
    specs = [SeriesSpec(c, codes[c], flags[c]) for c in ids]
    return frame, specs


def parse_panel(source, sidecar=None) -> VintagePanel:
    """Parse a directory of ``YYYY-MM.csv`` vintage files, or a single final panel.

    A single file is expanded into monthly vintages by truncation
    (see :meth:`VintagePanel.from_final`).
    """
    source = Path(source)
    if source.is_dir():
        files = sorted(source.glob("*.csv"))
        if not files:
            raise FileNotFoundError(f"no vintage files in {source}")
        vintages, specs = {}, None
        for f in files:
            key = _parse_month(f.stem, 0, f)
            frame, file_specs = read_vintage_csv(f, sidecar)
            if specs is None:
                specs = file_specs
            elif [s.id for s in specs] != [s.id for s in file_specs]:
                raise PanelParseError(f"{f}: series columns differ from earlier vintages")
            vintages[key] = frame
        return VintagePanel(vintages=dict(sorted(vintages.items())), specs=tuple(specs))
    if not source.exists():
        raise FileNotFoundError(source)
    frame, specs = read_vintage_csv(source, sidecar)
    return VintagePanel.from_final(frame, specs)


# --------------------------------------------------------------------------- transforms


def apply_transform(series, code: int) -> np.ndarray:
    """Apply a transformation code; leading entries consumed by differencing are NaN.

    1 level, 2 first difference, 3 second difference, 4 log, 5 diff of log,
    6 second difference of log, 7 first difference of the growth rate.
    """
    if code not in TRANSFORM_CODES:
        raise ValueError(f"unknown transformation code {code!r}")
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if code in (4, 5, 6, 7):
        bad = np.flatnonzero(np.isfinite(y) & (y <= 0))
        if bad.size:
            raise ValueError(f"code {code} needs strictly positive values; index {bad[0]} is {y[bad[0]]!r}")

    def diff(v):
        out = np.full_like(v, np.nan)
        out[1:] = v[1:] - v[:-1]
        return out

    if code == 1:
        return y.copy()
    if code == 2:
        return diff(y)
    if code == 3:
        return diff(diff(y))
    logy = np.log(y)
    if code == 4:
        return logy
    if code == 5:
        return diff(logy)
    if code == 6:
        return diff(diff(logy))
    growth = np.full_like(y, np.nan)
    growth[1:] = y[1:] / y[:-1] - 1.0
    return diff(growth)


def transform_frame(frame: pd.DataFrame, specs: Mapping[str, SeriesSpec]) -> pd.DataFrame:
    return pd.DataFrame(
        {c: apply_transform(frame[c].to_numpy(), specs[c].transform) for c in frame.columns},
        index=frame.index,
    )


def _fill_ragged_edge(col: pd.Series) -> pd.Series:
    """Carry the last observation forward over trailing gaps only."""
    last = col.last_valid_index()
    if last is None:
        return col
    out = col.copy()
    tail = out.index > last
    out[tail] = out[last]
    return out


# --------------------------------------------------------------------------- design


def assemble_design(
    panel: VintagePanel,
    text: pd.DataFrame | None,
    target_id: str,
    origin,
    h: int,
    predictor_mode: str = "fred",
    n_lags: int = 12,
    estimation_start=None,
) -> DesignMatrix:
    """Design matrix for forecasting ``target_id`` at ``origin + h``.

    Information set at the end of month ``origin``: macro predictors are the
    last observation in the origin vintage (dated ``origin - 1``), financial and
    text predictors are dated ``origin``, and ``n_lags`` lags of the transformed
    target (dated ``origin - 1`` backwards) are appended.
    """
    if h not in (0, 1):
        raise ValueError(f"horizon must be 0 or 1, got {h}")
    if predictor_mode not in PREDICTOR_MODES:
        raise ValueError(f"predictor_mode must be one of {PREDICTOR_MODES}")
    use_text = predictor_mode in ("text", "both")
    use_fred = predictor_mode in ("fred", "both")
    origin = pd.Period(origin, freq="M")
    if use_text and text is None:
        raise ValueError(f"predictor_mode={predictor_mode!r} requires a text predictor matrix")

    specs = panel.spec_map
    if target_id not in specs:
        raise LookupError(f"target {target_id!r} not in panel")
    vintage = panel.vintage(origin)
    trans = transform_frame(vintage, specs)
    index = pd.period_range(trans.index[0], max(trans.index[-1], origin), freq="M")
    trans = trans.reindex(index)

    target = trans[target_id]
    history = target.loc[: origin - 1].dropna()
    if len(history) < n_lags + 1:
        raise ValueError(
            f"insufficient history for {n_lags} lags of {target_id!r}: {len(history)} usable observations"
        )

    cols: dict[str, pd.Series] = {}
    prov: list[str] = []
    if use_fred:
        for s in panel.specs:
            if s.id == target_id:
                continue
            filled = _fill_ragged_edge(trans[s.id].loc[:origin] if s.is_financial else trans[s.id].loc[: origin - 1])
            filled = filled.reindex(index)
            cols[s.id] = filled if s.is_financial else filled.shift(1)
            prov.append("financial" if s.is_financial else "macro")
    if use_text:
        topics = text.copy()
        topics.index = pd.PeriodIndex(topics.index, freq="M")
        if origin not in topics.index:
            raise ValueError(f"text predictors do not cover origin month {origin}")
        topics = topics.loc[:origin].reindex(index)
        for c in topics.columns:
            cols[f"text:{c}"] = topics[c]
            prov.append("text")
    lag_source = _fill_ragged_edge(target.loc[: origin - 1]).reindex(index)
    for j in range(1, n_lags + 1):
        cols[f"{target_id}_lag{j}"] = lag_source.shift(j)
        prov.append("lag")
    features = pd.DataFrame(cols, index=index)
    labels = target.shift(-h)

    if features.loc[origin].isna().any():
        missing = list(features.columns[features.loc[origin].isna()])
        raise ValueError(f"origin {origin}: no observation available for {missing}")

    est = features.loc[: origin - 1].copy()
    est["__y__"] = labels.loc[: origin - 1]
    if estimation_start is not None:
        est = est.loc[pd.Period(estimation_start, freq="M") :]
    est = est.dropna()
    if len(est) < 2:
        raise ValueError(f"origin {origin}: fewer than two complete estimation rows")

    X_raw = est.drop(columns="__y__").to_numpy(dtype=float)
    means = X_raw.mean(axis=0)
    sds = X_raw.std(axis=0)
    sds = np.where(sds > 0, sds, 1.0)
    x_new_raw = features.loc[origin].to_numpy(dtype=float)
    return DesignMatrix(
        X=(X_raw - means) / sds,
        y=est["__y__"].to_numpy(dtype=float),
        h=h,
        column_names=tuple(features.columns),
        means=means,
        sds=sds,
        dates=pd.PeriodIndex(est.index, freq="M"),
        origin=origin,
        x_new=(x_new_raw - means) / sds,
        x_new_raw=x_new_raw,
        X_raw=X_raw,
        provenance=tuple(prov),
    )


def realized_value(panel: VintagePanel, target_id: str, date, source: str = "final") -> float:
    """Transformed realization of the target at ``date``.

    ``source='final'`` reads the last supplied vintage; ``'first_release'`` the
    earliest vintage in which the value appears.
    """
    date = pd.Period(date, freq="M")
    specs = panel.spec_map
    if source == "final":
        frames = [panel.final]
    elif source == "first_release":
        frames = [f for k, f in panel.vintages.items() if k > date]
    else:
        raise ValueError(f"unknown realization source {source!r}")
    for frame in frames:
        trans = transform_frame(frame[[target_id]], specs)[target_id]
        if date in trans.index and np.isfinite(trans.loc[date]):
            return float(trans.loc[date])
    return float("nan")
