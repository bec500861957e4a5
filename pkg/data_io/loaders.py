"""
Input series: loading, validation and alignment to one daily index.

Every series is a CSV file with header ``date,value`` and ISO-8601 dates,
one row per day with no gaps. An empty value marks a missing observation.
The IFR file lists change points instead: each row's value applies from its
date until the next row, and the first value also covers earlier days.
"""
import datetime
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from core.exceptions import DataValidationError
from dynamics.schedules import Schedules
from observation.series import ObservationSeries
from params.theta import FixedConfig
from .delay import DEFAULT_DELAY_CV, DEFAULT_DELAY_MEAN, default_delay_distribution, load_delay, write_delay

logger = logging.getLogger(__name__)

DEFAULT_IFR_VALUES = (0.01035, 0.0095, 0.007245, 0.004, 0.002)
DEFAULT_IFR_DATES = ("2020-07-18", "2020-10-01", "2021-01-30", "2021-06-01")
START_DEATHS = 10
MISSING_DATES_SHOWN = 10

FILE_NAMES = {
    "cases": "cases.csv",
    "deaths": "deaths.csv",
    "vaccinations": "vaccinations.csv",
    "under_reporting": "under_reporting.csv",
    "ifr": "ifr.csv",
    "delay": "delay.csv",
}


def _count(value):
    if value < 0:
        return "counts must be non-negative"
    if value != np.floor(value):
        return "counts must be whole numbers"
    return None


def _non_negative(value):
    return "values must be non-negative" if value < 0 else None


def _reporting(value):
    return None if 0 < value <= 1 else "under-reporting scores must lie in (0, 1]"


def _probability(value):
    return None if 0 < value < 1 else "IFR values must lie in (0, 1)"


CHECKS = {
    "cases": _count,
    "deaths": _count,
    "vaccinations": _non_negative,
    "under_reporting": _reporting,
    "ifr": _probability,
}


def read_series(path, name: str, allow_missing: bool = False, contiguous: bool = True) -> pd.Series:
    """
    Read one ``date,value`` CSV into a date-indexed float Series.

    Raises:
        DataValidationError: naming the file, and the row and column when the
            problem is in one cell; a gap lists the missing dates.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"{name} file not found", path=str(path))
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(frame.columns) != ["date", "value"]:
        raise DataValidationError(f"expected header 'date,value', found {','.join(frame.columns)}", path=str(path))
    if frame.empty:
        raise DataValidationError("file has no rows", path=str(path))
    check = CHECKS.get(name)
    dates = []
    values = np.empty(len(frame))
    for i, (raw_date, raw_value) in enumerate(zip(frame["date"], frame["value"])):
        row = i + 2
        try:
            dates.append(pd.Timestamp(datetime.date.fromisoformat(raw_date.strip())))
        except ValueError:
            raise DataValidationError(f"date {raw_date!r} is not ISO-8601", path=str(path), row=row, column="date")
        if raw_value.strip() == "":
            if not allow_missing:
                raise DataValidationError("value is missing", path=str(path), row=row, column="value")
            values[i] = np.nan
            continue
        try:
            values[i] = float(raw_value)
        except ValueError:
            raise DataValidationError(f"value {raw_value!r} is not a number", path=str(path), row=row,
                                      column="value")
        problem = "value is not finite" if not np.isfinite(values[i]) else (check(values[i]) if check else None)
        if problem:
            raise DataValidationError(problem, path=str(path), row=row, column="value")

    index = pd.DatetimeIndex(dates)
    if index.has_duplicates:
        first = index[index.duplicated()][0]
        raise DataValidationError(f"date {first.date().isoformat()} appears more than once", path=str(path))
    if not index.is_monotonic_increasing:
        raise DataValidationError("dates must be in increasing order", path=str(path))
    if contiguous:
        missing = pd.date_range(index[0], index[-1], freq="D").difference(index)
        if len(missing):
            shown = ", ".join(d.date().isoformat() for d in missing[:MISSING_DATES_SHOWN])
            more = f" and {len(missing) - MISSING_DATES_SHOWN} more" if len(missing) > MISSING_DATES_SHOWN else ""
            raise DataValidationError(f"missing dates: {shown}{more}", path=str(path))
    return pd.Series(values, index=index, name=name)


def _format_value(value) -> str:
    if np.isnan(value):
        return ""
    if value == np.floor(value) and abs(value) < 2 ** 53:
        return str(int(value))
    return repr(float(value))


def write_series(path, dates, values) -> Path:
    """Inverse of ``read_series``: NaN is written as an empty value."""
    path = Path(path)
    frame = pd.DataFrame({
        "date": [d.date().isoformat() for d in pd.DatetimeIndex(dates)],
        "value": [_format_value(v) for v in np.asarray(values, dtype=float)],
    })
    frame.to_csv(path, index=False, encoding="utf-8")
    return path


def ifr_step_function(dates, change_dates, values) -> np.ndarray:
    """
    Daily IFR. ``values[0]`` applies before ``change_dates[0]`` and
    ``values[i]`` from ``change_dates[i-1]`` on.
    """
    if len(values) != len(change_dates) + 1:
        raise DataValidationError(f"{len(values)} IFR values need {len(values) - 1} change dates, "
                                  f"got {len(change_dates)}")
    changes = pd.DatetimeIndex(pd.to_datetime(list(change_dates)))
    if not changes.is_monotonic_increasing:
        raise DataValidationError("IFR change dates must be in increasing order")
    positions = np.searchsorted(changes.values, pd.DatetimeIndex(dates).values, side="right")
    return np.asarray(values, dtype=float)[positions]


def ifr_change_points(dates, daily) -> pd.Series:
    """Change-point form of a daily IFR series (first day plus every day the value changes)."""
    daily = np.asarray(daily, dtype=float)
    keep = np.concatenate([[True], daily[1:] != daily[:-1]])
    return pd.Series(daily[keep], index=pd.DatetimeIndex(dates)[keep], name="ifr")


def start_index(deaths) -> int:
    """First day with at least ``START_DEATHS`` reported deaths."""
    hits = np.flatnonzero(np.nan_to_num(np.asarray(deaths, dtype=float), nan=0.0) >= START_DEATHS)
    if hits.size == 0:
        raise DataValidationError(f"no day reports at least {START_DEATHS} deaths")
    return int(hits[0])


@dataclass(frozen=True)
class Dataset:
    """
    Observations and schedules on one gap-free daily index.

    ``start`` is the first day with at least ten reported deaths; fits use
    the data from there on (see ``observations`` and ``fit_schedules``).
    """

    dates: pd.DatetimeIndex
    cases: np.ndarray
    deaths: np.ndarray
    schedules: Schedules
    start: int
    sources: Dict[str, str] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.dates)

    def observations(self, from_start: bool = True) -> ObservationSeries:
        first = self.start if from_start else 0
        return ObservationSeries(self.cases[first:].copy(), self.deaths[first:].copy(), self.dates[first:],
                                 {"start_date": self.dates[first].date().isoformat()})

    def fit_schedules(self, from_start: bool = True) -> Schedules:
        if not from_start:
            return self.schedules
        s = self.schedules
        return Schedules(nu=s.nu[self.start:], ifr=s.ifr[self.start:], ur=s.ur[self.start:], f_delay=s.f_delay)

    def write(self, directory) -> Dict[str, str]:
        """Write every series with the schemas ``load_dataset`` reads; returns the path mapping."""
        return write_dataset(directory, self.dates, self.cases, self.deaths, self.schedules)


def write_dataset(directory, dates, cases, deaths, schedules: Schedules) -> Dict[str, str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    T = len(dates)
    t = np.arange(T)
    paths = {name: str(directory / file_name) for name, file_name in FILE_NAMES.items()}
    write_series(paths["cases"], dates, cases)
    write_series(paths["deaths"], dates, deaths)
    write_series(paths["vaccinations"], dates, schedules.nu_lagged(t, 0))
    write_series(paths["under_reporting"], dates, schedules.ur_at(t))
    changes = ifr_change_points(dates, schedules.ifr_at(t))
    write_series(paths["ifr"], changes.index, changes.to_numpy())
    write_delay(paths["delay"], schedules.f_delay)
    logger.info(f"Wrote {T} days of data to {directory}")
    return paths


def _section(config, name) -> dict:
    if config is None:
        return {}
    if isinstance(config, dict):
        return dict(config.get(name, {}))
    return dict(config.section(name))


def load_dataset(paths: Optional[Dict[str, str]] = None, config=None) -> Dataset:
    """
    Load, validate and align the input series.

    Args:
        paths: file per series (``cases``, ``deaths``, ``vaccinations``,
            ``under_reporting``, ``ifr``, ``delay``); missing keys fall back
            to the config's ``data`` section. Only ``deaths`` is required.
        config: ``ModelConfig`` or a plain dict of sections. Its
            ``schedules`` section may set ``ifr_values``, ``ifr_dates``,
            ``delay_mean`` and ``delay_cv``. A ``start`` key in ``data`` (a day
            index) overrides the ten-deaths rule.
    """
    paths = {**_section(config, "data"), **(paths or {})}
    start_option = paths.pop("start", "auto")
    schedule_options = _section(config, "schedules")
    fixed = getattr(config, "fixed", None) or FixedConfig(n_pop=1)
    if not paths.get("deaths"):
        raise DataValidationError("a deaths file is required")

    deaths = read_series(paths["deaths"], "deaths", allow_missing=True)
    cases = read_series(paths["cases"], "cases", allow_missing=True) if paths.get("cases") else None
    first = min(deaths.index[0], cases.index[0]) if cases is not None else deaths.index[0]
    last = max(deaths.index[-1], cases.index[-1]) if cases is not None else deaths.index[-1]
    dates = pd.date_range(first, last, freq="D")
    deaths_aligned = deaths.reindex(dates).to_numpy()
    cases_aligned = cases.reindex(dates).to_numpy() if cases is not None else np.full(len(dates), np.nan)

    if paths.get("vaccinations"):
        vaccinations = read_series(paths["vaccinations"], "vaccinations").reindex(dates)
        if vaccinations.isna().any():
            logger.info(f"Vaccinations missing on {int(vaccinations.isna().sum())} days; set to zero")
        nu = vaccinations.fillna(0.0).to_numpy()
    else:
        nu = np.zeros(len(dates))

    if paths.get("under_reporting"):
        ur = read_series(paths["under_reporting"], "under_reporting").reindex(dates)
        if ur.isna().any():
            logger.warning(f"Under-reporting score missing on {int(ur.isna().sum())} days; holding nearest values")
        ur = ur.ffill().bfill().to_numpy()
    else:
        logger.info("No under-reporting file; using a score of 1 throughout")
        ur = np.ones(len(dates))

    if paths.get("ifr"):
        points = read_series(paths["ifr"], "ifr", contiguous=False)
        ifr = ifr_step_function(dates, points.index[1:], points.to_numpy())
    else:
        ifr = ifr_step_function(dates, schedule_options.get("ifr_dates", DEFAULT_IFR_DATES),
                                schedule_options.get("ifr_values", DEFAULT_IFR_VALUES))

    if paths.get("delay"):
        f_delay = load_delay(paths["delay"])
    else:
        f_delay = default_delay_distribution(fixed, schedule_options.get("delay_mean", DEFAULT_DELAY_MEAN),
                                             schedule_options.get("delay_cv", DEFAULT_DELAY_CV))

    start = start_index(deaths_aligned) if start_option in ("auto", None) else int(start_option)
    if not 0 <= start < len(dates):
        raise DataValidationError(f"start day {start} lies outside the {len(dates)} loaded days")
    dataset = Dataset(
        dates=dates,
        cases=cases_aligned,
        deaths=deaths_aligned,
        schedules=Schedules(nu=nu, ifr=ifr, ur=ur, f_delay=f_delay),
        start=start,
        sources={k: str(v) for k, v in paths.items() if v},
    )
    logger.info(f"Loaded {dataset.T} days from {first.date()} to {last.date()}; "
                f"fits start on {dates[start].date()} (t={start})")
    return dataset
