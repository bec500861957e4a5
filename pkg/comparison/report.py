"""
Comparison table across model runs.

The table is long-format CSV with one row per (panel, model, criterion).
Panels follow the usual layout: DIC block, WAIC block, cumulative daily
log predictive likelihood and cumulative weekly log predictive likelihood.
The two likelihood panels also carry the CLPBF of each model against the
first one over the days both runs cover.
"""
import logging
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from core.exceptions import DataValidationError
from .criteria import BatchCriteria, CriterionReport, clpbf

logger = logging.getLogger(__name__)

CRITERIA_FILE = "criteria.npz"
PL_DAILY_FILE = "predictive_likelihood.csv"
PL_WEEKLY_FILE = "predictive_likelihood_weekly.csv"

PANELS = (
    ("dic", ("dic", "loglik_at_mean", "p_dic")),
    ("waic", ("waic", "lppd", "p_waic")),
    ("daily_pl", ("cumulative_log_pl",)),
    ("weekly_pl", ("cumulative_log_pl_weekly",)),
)
TABLE_COLUMNS = ["panel", "model", "criterion", "value"]


def _aligned_clpbf(a: Optional[pd.Series], b: Optional[pd.Series], label: str) -> float:
    if a is None or b is None:
        return np.nan
    common = np.intersect1d(a.index.to_numpy(), b.index.to_numpy())
    if common.size == 0:
        logger.warning(f"Model {label} shares no predictive likelihood days with the reference")
        return np.nan
    if common.size < max(len(a), len(b)):
        logger.info(f"CLPBF for {label} uses the {common.size} days both runs cover")
    position = np.arange(1, common.size + 1)
    a = pd.Series(a.loc[common].to_numpy(), index=position)
    b = pd.Series(b.loc[common].to_numpy(), index=position)
    return clpbf(a, b, 0, common.size)


def comparison_table(reports: Iterable[CriterionReport]) -> pd.DataFrame:
    """Long-format table; CLPBF rows compare every model with the first."""
    reports = list(reports)
    if not reports:
        return pd.DataFrame(columns=TABLE_COLUMNS)
    reference = reports[0]
    rows = []
    for panel, names in PANELS:
        for report in reports:
            for name in names:
                rows.append((panel, report.label, name, float(getattr(report, name))))
            if panel == "daily_pl":
                value = _aligned_clpbf(report.log_pl, reference.log_pl, report.label)
                rows.append((panel, report.label, f"clpbf_vs_{reference.label}", value))
            elif panel == "weekly_pl":
                value = _aligned_clpbf(report.log_pl_weekly, reference.log_pl_weekly, report.label)
                rows.append((panel, report.label, f"clpbf_vs_{reference.label}", value))
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def write_table(table: pd.DataFrame, path) -> Path:
    path = Path(path)
    table.to_csv(path, index=False, float_format="%.10g", encoding="utf-8")
    return path


def load_report(run_dir, label: Optional[str] = None) -> CriterionReport:
    """Criteria stored by a fit command in ``run_dir``."""
    run_dir = Path(run_dir)
    label = label or run_dir.resolve().name
    report = CriterionReport(label)
    found = False
    criteria_path = run_dir / CRITERIA_FILE
    if criteria_path.exists():
        with np.load(criteria_path) as arrays:
            report = report.merged(CriterionReport.from_batch(label, BatchCriteria.from_arrays(arrays)))
        found = True
    daily_path = run_dir / PL_DAILY_FILE
    if daily_path.exists():
        daily = pd.read_csv(daily_path)
        weekly_path = run_dir / PL_WEEKLY_FILE
        weekly = pd.read_csv(weekly_path) if weekly_path.exists() else None
        report = report.merged(CriterionReport.from_history(label, daily, weekly))
        found = True
    if not found:
        raise DataValidationError(f"no {CRITERIA_FILE} or {PL_DAILY_FILE} in run directory", path=str(run_dir))
    return report


def merge_reports(reports: Iterable[CriterionReport]) -> List[CriterionReport]:
    """Combine reports that share a label (a batch and a sequential run of one model), keeping first-seen order."""
    merged = {}
    for report in reports:
        merged[report.label] = merged[report.label].merged(report) if report.label in merged else report
    return list(merged.values())
