"""Convergence diagnostics and the posterior summary table."""
import numpy as np
import pandas as pd

SUMMARY_QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)
SUMMARY_COLUMNS = ["Mean", "MCSE", "SD", "Rhat"] + [f"Q{q}" for q in SUMMARY_QUANTILES]


def _as_chains(draws) -> np.ndarray:
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[None, :]
    return draws


def split_rhat(draws) -> float:
    """
    Split potential scale reduction for one quantity.

    Args:
        draws: (chains x iterations) array; each chain is split in halves.
    """
    draws = _as_chains(draws)
    n = draws.shape[1] // 2
    if n < 2:
        return np.nan
    halves = np.concatenate([draws[:, :n], draws[:, -n:]], axis=0)
    chain_means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean()
    between = n * chain_means.var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else np.inf
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def batch_means_mcse(draws) -> float:
    """Monte Carlo standard error of the mean from non-overlapping batch means pooled over chains."""
    draws = _as_chains(draws)
    n = draws.shape[1]
    size = max(int(np.floor(np.sqrt(n))), 1)
    n_batches = n // size
    if n_batches < 2:
        return float(draws.std(ddof=1) / np.sqrt(draws.size)) if draws.size > 1 else np.nan
    trimmed = draws[:, :n_batches * size].reshape(draws.shape[0], n_batches, size)
    batch_means = trimmed.mean(axis=2).ravel()
    return float(np.sqrt(size * batch_means.var(ddof=1) / (draws.shape[0] * n_batches * size)))


def summarize(draws, names) -> pd.DataFrame:
    """
    Posterior summary with one row per parameter.

    Args:
        draws: (chains x iterations x parameters) retained draws.
        names: parameter labels.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[None, :, :]
    pooled = draws.reshape(-1, draws.shape[2])
    rows = []
    for j in range(draws.shape[2]):
        column = pooled[:, j]
        rows.append(
            [column.mean(), batch_means_mcse(draws[:, :, j]), column.std(ddof=1), split_rhat(draws[:, :, j])]
            + list(np.percentile(column, SUMMARY_QUANTILES))
        )
    return pd.DataFrame(rows, index=pd.Index(list(names), name="parameter"), columns=SUMMARY_COLUMNS)


def format_summary(table: pd.DataFrame) -> str:
    return table.to_string(float_format=lambda v: f"{v:.4g}")
