"""Covariance estimation, classical CCA, PCA, and the differentiable
canonical-correlation training objective.

``cca`` solves the generalized eigenpair problem

    Cxy Cyy^-1 Cyx a = lambda^2 Cxx a,    b = Cyy^-1 Cyx a / lambda,

which is the symmetric-definite pencil handed to LAPACK.  ``corr_objective``
is the trace-norm variant used to train embedding networks: the sum of
singular values of the whitened cross-covariance, with its exact analytic
gradient.  For one-dimensional inputs both reduce to |Pearson|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from cdctw.seqcore import SequenceView

EIG_FLOOR = 1e-10
CORR_FLOOR = 1e-8


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Covariance failed its Cholesky factorization; increase the ridge."""


@dataclass(frozen=True)
class CovarianceSet:
    """Auto- and cross-covariances of a sample-aligned view pair."""

    cxx: np.ndarray
    cyy: np.ndarray
    cxy: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        cxx = np.asarray(self.cxx, dtype=np.float64)
        cyy = np.asarray(self.cyy, dtype=np.float64)
        cxy = np.asarray(self.cxy, dtype=np.float64)
        if cxx.shape != (cxy.shape[0],) * 2 or cyy.shape != (cxy.shape[1],) * 2:
            raise ValueError("covariance shapes are inconsistent")
        for name, c in (("cxx", cxx), ("cyy", cyy)):
            if np.abs(c - c.T).max() > 1e-10:
                raise ValueError(f"{name} is not symmetric within 1e-10")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        object.__setattr__(self, "cxx", cxx)
        object.__setattr__(self, "cyy", cyy)
        object.__setattr__(self, "cxy", cxy)


@dataclass(frozen=True)
class CcaSolution:
    """Canonical directions (one per column) and their correlations."""

    a: np.ndarray
    b: np.ndarray
    correlations: np.ndarray


def covariances(x: SequenceView | np.ndarray, y: SequenceView | np.ndarray,
                ridge: float = 0.0) -> CovarianceSet:
    """Mean-centered empirical covariances with 1/(N-1) normalization.

    ``ridge * I`` is added to both auto-covariances.
    """
    xd = x.data if isinstance(x, SequenceView) else np.asarray(x, dtype=np.float64)
    yd = y.data if isinstance(y, SequenceView) else np.asarray(y, dtype=np.float64)
    if xd.shape[1] != yd.shape[1]:
        raise ValueError(f"frame counts differ: {xd.shape[1]} vs {yd.shape[1]}")
    n = xd.shape[1]
    if n < 2:
        raise ValueError("need at least 2 frames to estimate covariances")
    hx = xd - xd.mean(axis=1, keepdims=True)
    hy = yd - yd.mean(axis=1, keepdims=True)
    cxx = (hx @ hx.T) / (n - 1) + ridge * np.eye(xd.shape[0])
    cyy = (hy @ hy.T) / (n - 1) + ridge * np.eye(yd.shape[0])
    cxy = (hx @ hy.T) / (n - 1)
    cxx = 0.5 * (cxx + cxx.T)
    cyy = 0.5 * (cyy + cyy.T)
    return CovarianceSet(cxx=cxx, cyy=cyy, cxy=cxy, ridge=ridge)


def _fix_signs(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Sign rule anchors on a; b flips with it so each (a, b) pair keeps its
    # positive correlation, which downstream projections rely on.
    for i in range(a.shape[1]):
        s = np.sign(a[np.argmax(np.abs(a[:, i])), i])
        if s < 0:
            a[:, i] *= -1.0
            b[:, i] *= -1.0
    return a, b


def cca(cov: CovarianceSet, k: int) -> CcaSolution:
    """Top-k canonical directions from the generalized eigenpair problem.

    Directions are scaled to unit variance under their view covariances and
    sign-normalized so the largest-magnitude entry of each a-direction is
    positive.  Components with correlation below 1e-8 are dropped (the
    b-recovery formula divides by the correlation), so fewer than k pairs
    may be returned.
    """
    dx, dy = cov.cxy.shape
    if not (1 <= k <= min(dx, dy)):
        raise ValueError(f"k must be in [1, {min(dx, dy)}], got {k}")
    for name, c in (("cxx", cov.cxx), ("cyy", cov.cyy)):
        try:
            np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(
                f"{name} is not positive definite; increase the ridge"
            ) from None
    cyy_inv_cyx = np.linalg.solve(cov.cyy, cov.cxy.T)
    operator = cov.cxy @ cyy_inv_cyx
    operator = 0.5 * (operator + operator.T)
    eigvals, eigvecs = scipy.linalg.eigh(operator, cov.cxx)
    order = np.argsort(eigvals)[::-1][:k]
    lam = np.sqrt(np.clip(eigvals[order], 0.0, None))
    keep = lam >= CORR_FLOOR
    lam = lam[keep]
    a = eigvecs[:, order][:, keep]
    b = (cyy_inv_cyx @ a) / lam[None, :]
    a, b = _fix_signs(a, b)
    return CcaSolution(a=a, b=b, correlations=lam)


def cca_views(x: SequenceView | np.ndarray, y: SequenceView | np.ndarray,
              k: int, ridge: float) -> CcaSolution:
    """CCA straight from a sample-aligned view pair.

    Delegates to :func:`cca` on the explicit covariances; when either view
    has far more features than frames the dense covariances are wasteful
    (rank <= N-1), so a thin-SVD whitening in the sample space is used
    instead.  Both branches agree to machine precision, which the tests
    check against each other on mid-size problems.
    """
    xd = x.data if isinstance(x, SequenceView) else np.asarray(x, dtype=np.float64)
    yd = y.data if isinstance(y, SequenceView) else np.asarray(y, dtype=np.float64)
    n = xd.shape[1]
    if max(xd.shape[0], yd.shape[0]) <= max(2 * n, 64):
        return cca(covariances(xd, yd, ridge), k)
    if ridge <= 0:
        raise ValueError("high-dimensional CCA requires a positive ridge")
    hx = (xd - xd.mean(axis=1, keepdims=True)) / np.sqrt(n - 1)
    hy = (yd - yd.mean(axis=1, keepdims=True)) / np.sqrt(n - 1)
    ux, sx, vxt = np.linalg.svd(hx, full_matrices=False)
    uy, sy, vyt = np.linalg.svd(hy, full_matrices=False)
    wx = sx / np.sqrt(sx**2 + ridge)
    wy = sy / np.sqrt(sy**2 + ridge)
    core = (wx[:, None] * (vxt @ vyt.T)) * wy[None, :]
    um, sm, vmt = np.linalg.svd(core, full_matrices=False)
    kk = min(k, sm.size)
    lam = sm[:kk]
    keep = lam >= CORR_FLOOR
    lam = lam[keep]
    a = ux @ (um[:, :kk][:, keep] / np.sqrt(sx**2 + ridge)[:, None])
    b = uy @ (vmt.T[:, :kk][:, keep] / np.sqrt(sy**2 + ridge)[:, None])
    a, b = _fix_signs(a, b)
    return CcaSolution(a=a, b=b, correlations=lam)


def _inv_sqrt_sym(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    if w.max() < EIG_FLOOR:
        raise ValueError("degenerate covariance despite ridge")
    w = np.maximum(w, EIG_FLOOR)
    return (v / np.sqrt(w)[None, :]) @ v.T


def corr_objective(hx: np.ndarray, hy: np.ndarray,
                   ridge: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of canonical correlations between two o x N embeddings, with the
    exact gradient with respect to every embedding entry.

    value = sum of singular values of T = S11^-1/2 S12 S22^-1/2 computed on
    mean-centered inputs; always in [0, o].  With T = U diag(s) V^T the
    gradient follows from

        d value / d S12 = S11^-1/2 U V^T S22^-1/2
        d value / d S11 = -1/2 S11^-1/2 U diag(s) U^T S11^-1/2

    (and symmetrically for S22), chained through the covariance estimates.
    The centering projector is a no-op on the result because every term is a
    matrix product with a row-centered factor.
    """
    hx = np.asarray(hx, dtype=np.float64)
    hy = np.asarray(hy, dtype=np.float64)
    if hx.ndim != 2 or hy.ndim != 2 or hx.shape[1] != hy.shape[1]:
        raise ValueError("embeddings must be o x N with a shared N")
    m = hx.shape[1]
    if m < 2:
        raise ValueError("need at least 2 frames")
    ox, oy = hx.shape[0], hy.shape[0]
    hxc = hx - hx.mean(axis=1, keepdims=True)
    hyc = hy - hy.mean(axis=1, keepdims=True)
    s12 = (hxc @ hyc.T) / (m - 1)
    s11 = (hxc @ hxc.T) / (m - 1) + ridge * np.eye(ox)
    s22 = (hyc @ hyc.T) / (m - 1) + ridge * np.eye(oy)
    k11 = _inv_sqrt_sym(s11)
    k22 = _inv_sqrt_sym(s22)
    t = k11 @ s12 @ k22
    u, sing, vt = np.linalg.svd(t, full_matrices=False)
    value = float(sing.sum())
    d12 = k11 @ u @ vt @ k22
    d11 = -0.5 * k11 @ (u * sing[None, :]) @ u.T @ k11
    d22 = -0.5 * k22 @ (vt.T * sing[None, :]) @ vt @ k22
    grad_hx = (2.0 * d11 @ hxc + d12 @ hyc) / (m - 1)
    grad_hy = (2.0 * d22 @ hyc + d12.T @ hxc) / (m - 1)
    return value, grad_hx, grad_hy


def pca_basis(x: SequenceView | np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k principal directions (k x D, orthonormal rows) and the mean."""
    xd = x.data if isinstance(x, SequenceView) else np.asarray(x, dtype=np.float64)
    d = xd.shape[0]
    if not (1 <= k <= d):
        raise ValueError(f"k must be in [1, {d}], got {k}")
    mean = xd.mean(axis=1)
    centered = xd - mean[:, None]
    u, _, _ = np.linalg.svd(centered, full_matrices=(k > min(xd.shape)))
    comps = u[:, :k].T.copy()
    for i in range(k):
        if comps[i, np.argmax(np.abs(comps[i]))] < 0:
            comps[i] *= -1.0
    return comps, mean


def pca_project(x: SequenceView, k: int) -> SequenceView:
    """Project frames onto the top-k principal directions (output is k x N)."""
    comps, mean = pca_basis(x, k)
    proj = comps @ (x.data - mean[:, None])
    return SequenceView(proj, annotations=x.annotations, name=x.name)
