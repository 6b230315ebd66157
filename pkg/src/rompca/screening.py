"""Cellwise screening of a stacked data matrix.

A self-contained deviating-cells detector: columns are robustly standardized,
each cell is predicted from its most correlated other columns through robust
slopes, and cells whose prediction residual is large are flagged and given
the predicted value as imputation.  Rows whose truncated residuals are large
on average are flagged as candidate case outliers.  The screen is used for
initializing the robust fit and for rank selection; final outlier calls come
from the fitted model.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

__all__ = ["ScreenResult", "screen", "select_clean_subset", "DegenerateColumnWarning"]

CELL_CUTOFF = float(np.sqrt(chi2.ppf(0.99, 1)))  # ~2.5758


class DegenerateColumnWarning(RuntimeWarning):
    """A column had zero robust scale; a small positive floor was used."""


@dataclass
class ScreenResult:
    """Cell flags, imputed matrix, case flags and the cell cutoff used."""

    cell_flags: np.ndarray
    imputed: np.ndarray
    case_flags: np.ndarray
    cell_cutoff: float


def _robust_column_scale(values, what):
    med = np.nanmedian(values, axis=0)
    mad = 1.4826 * np.nanmedian(np.abs(values - med), axis=0)
    bad = ~(mad > 0)
    if bad.any():
        warnings.warn(
            f"{int(bad.sum())} degenerate {what} column(s): scale floored",
            DegenerateColumnWarning,
            stacklevel=3,
        )
        floor = 1e-8 * np.maximum(1.0, np.abs(med))
        mad = np.where(bad, floor, mad)
    return med, mad


def screen(x, n_predictors=15):
    """Flag and impute deviating cells of an ``(N, D)`` matrix.

    Missing entries are NaN.  Requires N >= 5 and at least two observed
    values per column.  Returns a :class:`ScreenResult` whose `imputed`
    matrix keeps observed unflagged values and replaces flagged and missing
    cells with predictions.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    n, d = x.shape
    if n < 5:
        raise ValueError(f"need at least 5 rows, got {n}")
    obs = ~np.isnan(x)
    if np.any(obs.sum(axis=0) < 2):
        raise ValueError("every column needs at least 2 observed values")

    cut = CELL_CUTOFF
    med, mad = _robust_column_scale(np.where(obs, x, np.nan), "data")
    z = (x - med) / mad  # NaN at missing cells

    # univariately clipped standardized values; missing treated as the median
    u = np.clip(z, -cut, cut)
    u0 = np.where(obs, u, 0.0)

    # correlations on the clipped data
    uc = u0 - u0.mean(axis=0)
    norms = np.sqrt(np.sum(uc**2, axis=0))
    norms = np.where(norms > 0, norms, 1.0)
    corr = (uc.T @ uc) / np.outer(norms, norms)
    np.fill_diagonal(corr, 0.0)

    k = min(n_predictors, d - 1)
    if k >= 1:
        # top-k predictor columns per target, ties broken by column index
        order = np.lexsort((np.tile(np.arange(d), (d, 1)), -np.abs(corr)), axis=1)
        pred_idx = order[:, :k]  # (D, k)
        w = np.abs(corr[np.arange(d)[:, None], pred_idx])  # (D, k)

        # robust slope of target on predictor: median ratio of standardized values
        zt = z[:, :, None]  # target, (N, D, 1) broadcast against predictors
        zp = z[:, pred_idx]  # (N, D, k)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(np.abs(zp) > 1e-12, zt / zp, np.nan)
        all_nan = np.all(np.isnan(ratios), axis=0)
        ratios[:, all_nan] = 0.0
        slopes = np.nanmedian(ratios, axis=0)  # (D, k)

        denom = w.sum(axis=1)
        contrib = np.einsum("ndk,dk->nd", u0[:, pred_idx], w * slopes)
        pred = np.where(denom > 0, contrib / np.where(denom > 0, denom, 1.0), 0.0)
    else:
        pred = np.zeros_like(u0)

    resid = z - pred  # NaN at missing
    _, res_scale = _robust_column_scale(resid, "residual")
    std_resid = resid / res_scale
    cell_flags = obs & (np.abs(np.where(obs, std_resid, 0.0)) > cut)

    imputed = np.where(obs & ~cell_flags, x, med + mad * pred)

    # case statistic: average truncated squared standardized residual
    chi99 = cut**2
    trunc = np.minimum(np.where(obs, std_resid, np.nan) ** 2, chi99)
    t_stat = np.nanmean(trunc, axis=1)
    t_med = np.median(t_stat)
    t_mad = 1.4826 * np.median(np.abs(t_stat - t_med))
    if t_mad == 0:
        t_mad = 1e-8 * max(1.0, abs(t_med))
    case_flags = (t_stat - t_med) / t_mad > cut

    return ScreenResult(cell_flags, imputed, case_flags, cut)


def select_clean_subset(result, n_total=None):
    """Indices of the cleanest ceil(0.75 N) cases.

    Case-flagged rows are excluded; the rest are ordered by ascending flagged
    cell count with ties broken by index.  If fewer than ceil(0.75 N) rows
    survive the case filter, all survivors are returned.
    """
    n = len(result.case_flags) if n_total is None else n_total
    h = math.ceil(0.75 * n)
    counts = result.cell_flags.sum(axis=1)
    keep = np.flatnonzero(~result.case_flags)
    order = keep[np.lexsort((keep, counts[keep]))]
    if order.size < h:
        return order.tolist()
    return order[:h].tolist()
