"""Dense tensor primitives: unfolding, mode products and Kronecker identities.

Conventions used throughout the package:

* a tensor is a plain ``numpy.ndarray``; modes are numbered from 0,
* the linear (vectorized) order puts the first index fastest, i.e.
  ``vec(t) = t.ravel(order="F")``,
* the mode-``m`` unfolding has the mode-``m`` fibers as columns, the columns
  enumerating the remaining indices in ascending mode order with the
  smallest mode varying fastest.

With these choices the usual identities hold exactly::

    vec(mode products of B by V0..VL)  ==  kron_all([V0..VL]) @ vec(B)
    unfold(B x {V}, m)  ==  Vm @ unfold(B, m) @ kron_all(others).T
"""

import numpy as np

__all__ = [
    "vec",
    "unvec",
    "unfold",
    "fold",
    "mode_product",
    "multi_mode_product",
    "contracted_product",
    "inner",
    "frobenius_norm",
    "hadamard",
    "kron_all",
    "batch_project",
    "batch_expand",
    "batch_vec",
    "batch_unvec",
    "pseudo_solve",
]


def vec(t):
    """Vectorize a tensor with the first index varying fastest."""
    return np.asarray(t).ravel(order="F")


def unvec(v, shape):
    """Inverse of :func:`vec` for the given shape."""
    v = np.asarray(v)
    if v.size != int(np.prod(shape)):
        raise ValueError(f"cannot reshape {v.size} values into shape {tuple(shape)}")
    return v.reshape(tuple(shape), order="F")


def unfold(t, mode):
    """Return the mode-`mode` unfolding of `t` as a 2-D array.

    The result has shape ``(t.shape[mode], prod(other dims))`` and its
    columns are the mode-`mode` fibers, ordered with the smallest remaining
    mode varying fastest.
    """
    t = np.asarray(t)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")
    return np.moveaxis(t, mode, 0).reshape((t.shape[mode], -1), order="F")


def fold(mat, mode, shape):
    """Inverse of :func:`unfold`: rebuild the tensor of `shape` from `mat`."""
    shape = tuple(shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    mat = np.asarray(mat)
    rest = shape[:mode] + shape[mode + 1 :]
    if mat.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"matrix shape {mat.shape} inconsistent with {shape} at mode {mode}")
    return np.moveaxis(mat.reshape((shape[mode],) + rest, order="F"), 0, mode)


def mode_product(t, m, mode):
    """Contract mode `mode` of `t` against the rows of the matrix `m`.

    `m` must have ``t.shape[mode]`` rows; the output replaces that dimension
    with ``m.shape[1]``.  In unfolded form the result is ``m.T @ unfold(t, mode)``.
    """
    t = np.asarray(t)
    m = np.asarray(m)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")
    if m.ndim != 2 or m.shape[0] != t.shape[mode]:
        raise ValueError(
            f"matrix with {m.shape} rows/cols does not match dimension "
            f"{t.shape[mode]} of mode {mode}"
        )
    return np.moveaxis(np.tensordot(t, m, axes=([mode], [0])), -1, mode)


def multi_mode_product(t, factors, skip=None, transpose=False):
    """Apply :func:`mode_product` for every mode, optionally skipping one.

    ``factors[m]`` is used for mode ``m``; ``None`` entries are skipped.  With
    ``transpose=True`` each factor is transposed first, which turns the
    projection ``t x {V^T}`` into the expansion ``t x {V}``.  The result does
    not depend on the order in which the modes are processed.
    """
    out = np.asarray(t)
    for mode, f in enumerate(factors):
        if f is None or mode == skip:
            continue
        out = mode_product(out, f.T if transpose else f, mode)
    return out


def contracted_product(a, b, n_contract):
    """Contract the first `n_contract` modes of `a` and `b`.

    The output carries the remaining modes of `a` followed by those of `b`;
    contracting all modes of two equal-shape tensors yields a scalar.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if n_contract < 0 or n_contract > min(a.ndim, b.ndim):
        raise ValueError("n_contract out of range")
    if a.shape[:n_contract] != b.shape[:n_contract]:
        raise ValueError(
            f"leading modes disagree: {a.shape[:n_contract]} vs {b.shape[:n_contract]}"
        )
    axes = list(range(n_contract))
    return np.tensordot(a, b, axes=(axes, axes))


def inner(a, b):
    """Inner product: sum of elementwise products of two equal-shape tensors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.vdot(a, b))


def frobenius_norm(t):
    """Frobenius norm, the square root of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(t).ravel()))


def hadamard(a, b):
    """Elementwise product of two equal-shape tensors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def kron_all(matrices):
    """Kronecker product ``matrices[-1] kron ... kron matrices[0]``.

    This is the factor ordering under which ``vec(B x {V}) = kron_all(V) @ vec(B)``
    holds for the first-index-fastest vectorization.
    """
    out = np.asarray(matrices[-1])
    for m in reversed(matrices[:-1]):
        out = np.kron(out, m)
    return out


def batch_project(x, factors, skip=None):
    """Apply ``x {V^T}`` to a stack of tensors (sample axis first).

    ``factors[m]`` has ``x.shape[m + 1]`` rows; mode ``m`` of every sample is
    contracted against those rows.  ``None`` entries and the ``skip`` mode are
    left untouched.
    """
    out = np.asarray(x)
    for m, f in enumerate(factors):
        if f is None or m == skip:
            continue
        out = np.moveaxis(np.tensordot(out, f, axes=([m + 1], [0])), -1, m + 1)
    return out


def batch_expand(cores, factors, skip=None):
    """Apply ``u {V}`` to a stack of core tensors (sample axis first)."""
    out = np.asarray(cores)
    for m, f in enumerate(factors):
        if f is None or m == skip:
            continue
        out = np.moveaxis(np.tensordot(out, f, axes=([m + 1], [1])), -1, m + 1)
    return out


def batch_vec(x):
    """Row-wise :func:`vec`: ``(N, P1, ..., PL) -> (N, prod P)``."""
    x = np.asarray(x)
    order = (0,) + tuple(range(x.ndim - 1, 0, -1))
    return x.transpose(order).reshape(x.shape[0], -1)


def batch_unvec(v, shape):
    """Inverse of :func:`batch_vec` for per-sample tensor `shape`."""
    v = np.asarray(v)
    shape = tuple(shape)
    rev = (v.shape[0],) + shape[::-1]
    order = (0,) + tuple(range(len(shape), 0, -1))
    return v.reshape(rev).transpose(order)


def pseudo_solve(g, rhs, rtol=1e-12):
    """Solve ``g @ x = rhs`` for symmetric PSD `g` via spectral pseudo-inverse.

    Eigenvalues below ``rtol`` times the largest one are treated as zero, so a
    rank deficient system returns the minimum norm solution.  Leading batch
    dimensions are supported: ``g`` of shape ``(..., M, M)`` with ``rhs`` of
    shape ``(..., M)``.
    """
    g = np.asarray(g, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if g.ndim < 2 or g.shape[-1] != g.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {g.shape}")
    gs = (g + np.swapaxes(g, -1, -2)) / 2.0
    w, v = np.linalg.eigh(gs)
    cut = rtol * np.maximum(w[..., -1:], 0.0)
    inv_w = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
    coeff = np.einsum("...ij,...i->...j", v, rhs) * inv_w
    return np.einsum("...ij,...j->...i", v, coeff)
