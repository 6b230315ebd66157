"""Outlier-resistant multilinear PCA fit.

The estimator minimizes a doubly robust loss: cellwise residuals pass
through a bounded loss with per-cell scales, the per-sample aggregates pass
through a second bounded loss with a global scale, and missing cells are
skipped.  The minimizer is computed by iteratively reweighted least squares
whose inner sweep is weighted alternating least squares: factor matrices,
core tensors and the center each solve their weighted normal equations
exactly, then the weights are refreshed from the new residuals.  Each sweep
cannot increase the loss, so the objective trace is nonincreasing.

Missing cells are encoded as NaN in the data stack.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    DEFAULT_MSCALE,
    DegenerateScaleWarning,
    MScaleSpec,
    RhoSpec,
    mscale,
    mscale_grid,
)
from .mpca import mpca_fit
from .screening import screen, select_clean_subset
from .tensor import (
    batch_expand,
    batch_unvec,
    batch_vec,
    kron_all,
    multi_mode_product,
    pseudo_solve,
)

__all__ = [
    "RompcaConfig",
    "RompcaModel",
    "InitResult",
    "InitCandidates",
    "RankSelection",
    "split_masked",
    "cell_residuals",
    "case_deviations",
    "objective",
    "compute_weights",
    "update_factor",
    "update_cores",
    "update_center",
    "initialize",
    "prepare_initialization",
    "choose_initialization",
    "irls_fit",
    "reestimate_center",
    "select_ranks",
    "impute_samples",
    "ZeroWeightCellWarning",
    "ZeroWeightSampleWarning",
]

_VARIANTS = ("full", "only_case", "only_cell")


class ZeroWeightCellWarning(RuntimeWarning):
    """Some cell has zero total weight; its center value was kept."""


class ZeroWeightSampleWarning(RuntimeWarning):
    """A sample lost all cell weight; its core was set to zero."""


@dataclass
class RompcaConfig:
    """Fit settings.

    `variant` selects the loss pair: "full" uses the bounded tanh loss for
    both cells and cases, "only_case" switches the cellwise loss to plain
    squares, "only_cell" switches the casewise loss to plain squares.
    Explicit `rho1` / `rho2` override the variant's choice.  The fit itself
    is deterministic; `seed` is carried along for downstream procedures that
    draw random numbers (such as the Monte Carlo case cutoff).
    """

    ranks: tuple
    variant: str = "full"
    rho1: RhoSpec = None
    rho2: RhoSpec = None
    mscale: MScaleSpec = field(default_factory=lambda: DEFAULT_MSCALE)
    irls_rel_tol: float = 1e-5
    irls_max_iter: int = 200
    init_l1_max_iter: int = 100
    seed: int = None

    def __post_init__(self):
        self.ranks = tuple(int(k) for k in self.ranks)
        if any(k < 1 for k in self.ranks):
            raise ValueError("ranks must be positive")
        if self.variant not in _VARIANTS:
            raise ValueError(f"variant must be one of {_VARIANTS}")
        if self.irls_rel_tol <= 0:
            raise ValueError("irls_rel_tol must be positive")
        if self.rho1 is None:
            self.rho1 = RhoSpec("square") if self.variant == "only_case" else RhoSpec("tanh")
        if self.rho2 is None:
            self.rho2 = RhoSpec("square") if self.variant == "only_cell" else RhoSpec("tanh")


@dataclass
class RompcaModel:
    """Fitted robust model.

    `cell_weights` and `case_weights` are the final IRLS weights; the total
    weight of a cell is their product times the observation mask.  `sigma1`
    holds the per-cell residual scales frozen at initialization and `sigma2`
    the casewise scale.  `objective_trace` records the loss after the
    initial fit and after every sweep.
    """

    factors: list
    center: np.ndarray
    cores: np.ndarray
    sigma1: np.ndarray
    sigma2: float
    cell_weights: np.ndarray
    case_weights: np.ndarray
    mask: np.ndarray
    objective_trace: list
    converged: bool
    n_iter: int
    init_candidate: int
    config: RompcaConfig

    @property
    def ranks(self):
        return tuple(f.shape[1] for f in self.factors)

    @property
    def dims(self):
        return tuple(f.shape[0] for f in self.factors)

    @property
    def n_samples(self):
        return self.cores.shape[0]

    def total_weights(self):
        shape = (-1,) + (1,) * (self.cores.ndim - 1)
        return self.cell_weights * self.case_weights.reshape(shape) * self.mask

    def reconstruct(self, n=None):
        """Fitted tensors, all of them or a single sample."""
        fits = self.center + batch_expand(self.cores, self.factors)
        if n is None:
            return fits
        if not 0 <= n < fits.shape[0]:
            raise IndexError(f"sample index {n} out of range")
        return fits[n]


@dataclass
class InitResult:
    """Chosen starting point with the frozen scales."""

    factors: list
    cores: np.ndarray
    center: np.ndarray
    sigma1: np.ndarray
    sigma2: float
    candidate: int
    sigma2_candidates: tuple


@dataclass
class RankSelection:
    """Per-mode eigenvalue curves with elbow and threshold rank choices.

    `ranks` is the headline suggestion: the stabilization point of each
    cumulative curve, found as the largest drop between consecutive
    eigenvalues.  `threshold_ranks` is the smallest dimension whose
    cumulative share reaches `threshold`.
    """

    ranks: tuple
    threshold_ranks: tuple
    eigenvalues: list
    q_curves: list
    threshold: float


def split_masked(data):
    """Split a NaN-marked stack into zero-filled values and a 0/1 mask."""
    data = np.asarray(data, dtype=float)
    if data.ndim < 2:
        raise ValueError("data must be (N, P1, ..., PL)")
    mask = np.isfinite(data).astype(float)
    return np.where(mask > 0, data, 0.0), mask


def _case_shape(arr):
    return (-1,) + (1,) * (arr.ndim - 1)


def cell_residuals(x0, mask, factors, cores, center):
    """Observed-cell residuals ``x - center - core x {V}``, zero elsewhere."""
    return (x0 - center - batch_expand(cores, factors)) * mask


def case_deviations(res, mask, sigma1, rho1):
    """Per-sample root mean robust cell deviation (the casewise statistic)."""
    m_n = mask.reshape(mask.shape[0], -1).sum(axis=1)
    if np.any(m_n == 0):
        raise ValueError("sample with no observed cells")
    contrib = mask * sigma1**2 * rho1.rho(res / sigma1)
    return np.sqrt(contrib.reshape(mask.shape[0], -1).sum(axis=1) / m_n)


def objective(res, mask, sigma1, sigma2, rho1, rho2):
    """Value of the robust loss at the given residuals and frozen scales."""
    m_n = mask.reshape(mask.shape[0], -1).sum(axis=1)
    m_total = m_n.sum()
    t = case_deviations(res, mask, sigma1, rho1)
    return float(sigma2**2 / m_total * np.sum(m_n * rho2.rho(t / sigma2)))


def compute_weights(res, mask, sigma1, sigma2, rho1, rho2):
    """Cellwise and casewise IRLS weights at the given residuals."""
    cell_w = rho1.weight(res / sigma1)
    t = case_deviations(res, mask, sigma1, rho1)
    case_w = rho2.weight(t / sigma2)
    return cell_w, case_w


def update_factor(x0, center, cores, factors, total_w, mode):
    """Weighted least squares update of one projection matrix.

    Solves the normal equations for the mode-`mode` factor at fixed cores,
    center and weights.  The Kronecker-with-identity structure of the system
    is exploited blockwise, so the Gram matrix costs O(N K^2 prod P) to
    assemble instead of materializing any (P K) x (prod P) operator.
    """
    n = x0.shape[0]
    p = x0.shape[mode + 1]
    k = cores.shape[mode + 1]
    u_minus = batch_expand(cores, factors, skip=mode)
    a = np.moveaxis(u_minus, mode + 1, 1).reshape(n, k, -1)
    wm = np.moveaxis(total_w, mode + 1, 1).reshape(n, p, -1)
    ym = np.moveaxis(x0 - center, mode + 1, 1).reshape(n, p, -1)
    t = np.einsum("nkq,npq,nlq->kpl", a, wm, a, optimize=True)
    rhs = np.einsum("nkq,npq,npq->kp", a, wm, ym, optimize=True)
    g4 = np.zeros((k, p, k, p))
    g4[:, np.arange(p), :, np.arange(p)] = t.transpose(1, 0, 2)
    sol = pseudo_solve(g4.reshape(k * p, k * p), rhs.reshape(-1))
    return sol.reshape(k, p).T


def update_cores(x0, center, factors, cell_mask_w, warn_empty=True):
    """Weighted least squares update of every core tensor.

    `cell_mask_w` is the cellwise weight times the observation mask (the
    casewise weight cancels from these normal equations).  Samples with all
    zero weight get a zero core.
    """
    n = x0.shape[0]
    ranks = tuple(f.shape[1] for f in factors)
    nk = int(np.prod(ranks))
    b = kron_all(factors)
    y = batch_vec(x0 - center)
    w = batch_vec(cell_mask_w)

    rhs = (w * y) @ b
    gram = np.empty((n, nk, nk))
    uniform = np.ptp(w, axis=1) == 0
    if uniform.any():
        g1 = kron_all([f.T @ f for f in factors])
        gram[uniform] = w[uniform, :1, None] * g1
    rest = np.flatnonzero(~uniform)
    if rest.size:
        # batched Gram assembly; chunked to bound the (n, prod P, prod K) buffer
        chunk = max(1, int(2**22 // max(b.size, 1)))
        for lo in range(0, rest.size, chunk):
            idx = rest[lo : lo + chunk]
            wb = w[idx, :, None] * b
            gram[idx] = np.matmul(b.T, wb)

    empty = w.sum(axis=1) == 0
    if warn_empty and empty.any():
        warnings.warn(
            f"{int(empty.sum())} sample(s) with all-zero cell weight: cores set to 0",
            ZeroWeightSampleWarning,
            stacklevel=2,
        )
    sol = pseudo_solve(gram, rhs)
    return batch_unvec(sol, ranks)


def update_center(x0, expanded, total_w, prev_center):
    """Weighted cellwise average of ``x - core x {V}``.

    Cells with zero total weight keep their previous center value.
    """
    den = total_w.sum(axis=0)
    num = ((x0 - expanded) * total_w).sum(axis=0)
    dead = den == 0
    if dead.any():
        warnings.warn(
            f"{int(dead.sum())} cell(s) with zero total weight: center kept",
            ZeroWeightCellWarning,
            stacklevel=2,
        )
    return np.where(dead, prev_center, num / np.where(dead, 1.0, den))


def _floor_positive(values, what):
    """Replace nonpositive scale entries by 1e-3 times the median positive one."""
    values = np.asarray(values, dtype=float)
    pos = values[values > 0]
    floor = 1e-3 * np.median(pos) if pos.size else 1e-12
    bad = ~(values > 0)
    if bad.any():
        warnings.warn(
            f"{int(np.count_nonzero(bad))} degenerate {what} value(s) floored at {floor:g}",
            DegenerateScaleWarning,
            stacklevel=3,
        )
    return np.where(bad, floor, values), float(floor)


@dataclass
class _Candidate:
    factors: list
    cores: np.ndarray
    center: np.ndarray
    residuals: np.ndarray
    sigma1: np.ndarray


@dataclass
class InitCandidates:
    """Both initialization candidates, before the loss-dependent choice.

    Building the candidates is independent of the fit's loss pair, so one
    prepared object can seed several variants on the same data.
    """

    x0: np.ndarray
    mask: np.ndarray
    mpca_candidate: "_Candidate"
    l1_candidate: "_Candidate"


def _candidate_sigma1(res, mask, mscale_spec):
    n = res.shape[0]
    dims = res.shape[1:]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateScaleWarning)
        grid = mscale_grid(
            res.reshape(n, -1), mask.reshape(n, -1).astype(bool), spec=mscale_spec
        )
    sigma1, _ = _floor_positive(grid, "cell scale")
    return sigma1.reshape(dims)


def _prepare_candidates(data, ranks, mscale_spec, rel_tol, l1_max_iter):
    """Build both initialization candidates (loss-independent part)."""
    x0, mask = split_masked(data)
    dims = x0.shape[1:]

    flat = batch_vec(np.where(mask > 0, x0, np.nan))
    scr = screen(flat)
    subset = select_clean_subset(scr)
    imputed = batch_unvec(scr.imputed, dims)
    base = mpca_fit(imputed[subset], ranks)

    cell_w0 = batch_unvec((~scr.cell_flags).astype(float), dims)
    cores1 = update_cores(x0, base.center, base.factors, cell_w0 * mask, warn_empty=False)
    res1 = cell_residuals(x0, mask, base.factors, cores1, base.center)
    cand1 = _Candidate(
        [f.copy() for f in base.factors],
        cores1,
        base.center.copy(),
        res1,
        _candidate_sigma1(res1, mask, mscale_spec),
    )

    # second candidate: absolute-value cell loss, squared case loss, unit
    # scales, refined by the same reweighted sweep starting from the first
    abs_rho = RhoSpec("abs")
    factors = [f.copy() for f in base.factors]
    cores = cores1.copy()
    center = base.center.copy()
    res = res1
    cell_w = abs_rho.weight(res)
    m_total = mask.sum()
    prev = float(np.sum(np.abs(res) * mask)) / m_total
    for _ in range(l1_max_iter):
        total_w = cell_w * mask
        for m in range(len(dims)):
            factors[m] = update_factor(x0, center, cores, factors, total_w, m)
        cores = update_cores(x0, center, factors, cell_w * mask, warn_empty=False)
        expanded = batch_expand(cores, factors)
        center = update_center(x0, expanded, total_w, center)
        res = (x0 - center - expanded) * mask
        cell_w = abs_rho.weight(res)
        obj = float(np.sum(np.abs(res) * mask)) / m_total
        if prev <= 0 or (prev - obj) <= rel_tol * prev:
            break
        prev = obj
    cand2 = _Candidate(factors, cores, center, res, _candidate_sigma1(res, mask, mscale_spec))
    return InitCandidates(x0, mask, cand1, cand2)


def prepare_initialization(data, config):
    """Build both initialization candidates for the given data.

    The result does not depend on the config's loss pair and can be passed
    to :func:`choose_initialization` for several variants.
    """
    return _prepare_candidates(
        data,
        config.ranks,
        config.mscale,
        config.irls_rel_tol,
        config.init_l1_max_iter,
    )


def initialize(data, config):
    """Construct the starting point for the reweighted fit.

    Two candidates are built: classical MPCA on the screened and imputed
    clean subset, and an absolute-loss refinement of it.  Both get per-cell
    residual scales and a casewise scale; the candidate with the smaller
    casewise scale wins (ties go to the refined one).
    """
    return choose_initialization(prepare_initialization(data, config), config)


def choose_initialization(candidates, config):
    """Pick the candidate with the smaller casewise scale under the config's loss."""
    mask = candidates.mask
    sigma2s = []
    for cand in (candidates.mpca_candidate, candidates.l1_candidate):
        t = case_deviations(cand.residuals, mask, cand.sigma1, config.rho1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateScaleWarning)
            s2 = mscale(t, config.mscale)
        if not s2 > 0:
            warnings.warn(
                "degenerate casewise scale floored at 1e-12",
                DegenerateScaleWarning,
                stacklevel=2,
            )
            s2 = 1e-12
        sigma2s.append(s2)
    pick = 2 if sigma2s[1] <= sigma2s[0] + 1e-12 * abs(sigma2s[0]) else 1
    cand = candidates.l1_candidate if pick == 2 else candidates.mpca_candidate
    return InitResult(
        cand.factors,
        cand.cores,
        cand.center,
        cand.sigma1,
        sigma2s[pick - 1],
        pick,
        tuple(sigma2s),
    )


def irls_fit(data, config, init=None):
    """Fit the robust multilinear model by iteratively reweighted least squares.

    Parameters
    ----------
    data : ndarray, shape (N, P1, ..., PL)
        Sample stack; missing cells are NaN.
    config : RompcaConfig
    init : InitResult, optional
        Starting point; computed by :func:`initialize` when omitted.

    Returns
    -------
    RompcaModel
        The center is re-centered onto the weighted data average and the
        factors are orthonormalized afterwards; neither step changes the
        fitted tensors.
    """
    x0, mask = split_masked(data)
    dims = x0.shape[1:]
    if len(config.ranks) != len(dims):
        raise ValueError(f"{len(config.ranks)} ranks for an order-{len(dims)} tensor")
    for k, p in zip(config.ranks, dims):
        if k > p:
            raise ValueError(f"rank {k} exceeds dimension {p}")
    if np.any(mask.reshape(mask.shape[0], -1).sum(axis=1) == 0):
        raise ValueError("sample with no observed cells")
    if np.any(mask.sum(axis=0) == 0):
        raise ValueError("cell missing in every sample")

    if init is None:
        init = initialize(data, config)
    factors = [f.copy() for f in init.factors]
    cores = init.cores.copy()
    center = init.center.copy()
    s1, s2 = init.sigma1, init.sigma2
    rho1, rho2 = config.rho1, config.rho2

    res = cell_residuals(x0, mask, factors, cores, center)
    cell_w, case_w = compute_weights(res, mask, s1, s2, rho1, rho2)
    trace = [objective(res, mask, s1, s2, rho1, rho2)]

    converged = False
    n_iter = 0
    for n_iter in range(1, config.irls_max_iter + 1):
        total_w = cell_w * case_w.reshape(_case_shape(cell_w)) * mask
        for m in range(len(dims)):
            factors[m] = update_factor(x0, center, cores, factors, total_w, m)
        cores = update_cores(x0, center, factors, cell_w * mask)
        expanded = batch_expand(cores, factors)
        center = update_center(x0, expanded, total_w, center)
        res = (x0 - center - expanded) * mask
        cell_w, case_w = compute_weights(res, mask, s1, s2, rho1, rho2)
        trace.append(objective(res, mask, s1, s2, rho1, rho2))
        prev, cur = trace[-2], trace[-1]
        if prev <= 0 or (prev - cur) <= config.irls_rel_tol * prev:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"IRLS not converged after {config.irls_max_iter} iterations",
            RuntimeWarning,
            stacklevel=2,
        )

    total_w = cell_w * case_w.reshape(_case_shape(cell_w)) * mask
    center, cores = reestimate_center(x0, factors, cores, center, total_w)
    factors, cores = _orthonormalize(factors, cores)

    return RompcaModel(
        factors,
        center,
        cores,
        s1,
        s2,
        cell_w,
        case_w,
        mask,
        trace,
        converged,
        n_iter,
        init.candidate,
        config,
    )


def reestimate_center(x0, factors, cores, center, total_w):
    """Move the center to the weighted data average along the fitted subspace.

    Returns the adjusted center and cores; reconstructions are unchanged
    because the shift is added to the center and subtracted from every core.
    """
    den = total_w.sum(axis=0)
    dead = den == 0
    if dead.any():
        warnings.warn(
            f"{int(dead.sum())} cell(s) with zero total weight: center value kept",
            ZeroWeightCellWarning,
            stacklevel=2,
        )
    xbar_w = np.where(dead, center, (x0 * total_w).sum(axis=0) / np.where(dead, 1.0, den))
    u0 = multi_mode_product(xbar_w - center, factors)
    new_center = center + multi_mode_product(u0, factors, transpose=True)
    return new_center, cores - u0[None]


def _orthonormalize(factors, cores):
    """Thin QR on each factor, absorbing the triangular part into the cores."""
    new_factors = []
    for m, f in enumerate(factors):
        q, r = np.linalg.qr(f)
        sign = np.sign(np.diag(r))
        sign[sign == 0] = 1.0
        q = q * sign
        r = sign[:, None] * r
        cores = np.moveaxis(np.tensordot(cores, r, axes=([m + 1], [1])), -1, m + 1)
        new_factors.append(q)
    return new_factors, cores


def _elbow_rank(w, flat_tol=0.01):
    """Stabilization point of the cumulative eigenvalue curve.

    The curve is considered flat once every remaining component holds less
    than `flat_tol` of the total variance, so the rank is the number of
    components above that share.
    """
    total = w.sum()
    if total <= 0:
        return 1
    return max(1, int(np.count_nonzero(w / total >= flat_tol)))


def select_ranks(data, threshold=0.8):
    """Choose per-mode ranks from the screened and imputed data.

    For each mode the eigenvalues of the unfolded scatter of the centered
    clean subset are computed.  The suggested rank is where the cumulative
    curve stabilizes (largest consecutive eigenvalue drop); the smallest
    dimension whose cumulative share reaches `threshold` is reported
    alongside, and the full curves are returned for elbow inspection.
    """
    data = np.asarray(data, dtype=float)
    dims = data.shape[1:]
    flat = batch_vec(data)
    scr = screen(flat)
    subset = select_clean_subset(scr)
    clean = batch_unvec(scr.imputed, dims)[subset]
    xc = clean - clean.mean(axis=0)

    ranks = []
    threshold_ranks = []
    eigenvalues = []
    q_curves = []
    for m, p in enumerate(dims):
        b = np.moveaxis(xc, m + 1, 1).reshape(xc.shape[0], p, -1)
        scatter = np.einsum("npq,nrq->pr", b, b)
        w = np.linalg.eigvalsh((scatter + scatter.T) / 2)[::-1]
        w = np.where(w > 1e-12 * max(w[0], 0.0), w, 0.0)
        total = w.sum()
        q = np.cumsum(w) / total if total > 0 else np.ones_like(w)
        threshold_ranks.append(int(np.argmax(q >= threshold - 1e-12)) + 1)
        ranks.append(_elbow_rank(w))
        eigenvalues.append(w)
        q_curves.append(q)
    return RankSelection(tuple(ranks), tuple(threshold_ranks), eigenvalues, q_curves, threshold)


def impute_samples(model, data):
    """Replace missing and downweighted cells by their fitted values.

    Observed cells with full cellwise weight are returned unchanged; the
    multilinear projection of the result reproduces the fitted tensors.
    """
    x0, mask = split_masked(data)
    if x0.shape != (model.n_samples,) + model.dims:
        raise ValueError("data shape does not match the fitted model")
    fits = model.reconstruct()
    wt = model.cell_weights * mask
    out = fits + wt * (x0 - fits)
    # full-weight observed cells are passed through untouched
    keep = (mask > 0) & (model.cell_weights == 1.0)
    return np.where(keep, x0, out)
