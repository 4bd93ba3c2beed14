"""Null models for the variance-component score test.

The test statistic needs a fit of the no-association model

    y = X alpha + e,            e ~ N(0, Sigma),
    Sigma = sigma_z^2 Z Z^T + sigma_eps^2 I,

where X collects fixed covariates (intercept included) and Z is an optional
background design matrix controlling population structure.  With no
background component Sigma = sigma_eps^2 I and the fit is ordinary least
squares.  With a background component the two variance parameters are
estimated by restricted maximum likelihood: Z Z^T is eigendecomposed once and
the 1-dimensional REML profile in the variance ratio gamma = sigma_z^2 /
sigma_eps^2 is maximized by bounded scalar search on a log grid.

The fit object exposes the pieces downstream code needs: GLS residuals,
Sigma^{-1} products, and products with the projection

    P = I - X (X^T Sigma^{-1} X)^{-1} X^T Sigma^{-1},

through which the score statistic and its null eigenvalues are formed.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import minimize_scalar

from .exceptions import NumericalError

RATIO_BOUNDS = (1e-8, 1e8)  # search range for sigma_z^2 / sigma_eps^2


def _as_design(x, n):
    """Covariate matrix as a 2-d float array; None means no covariates at all."""
    if x is None:
        return np.zeros((n, 0))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != n:
        raise NumericalError(
            f"covariate rows ({x.shape[0]}) do not match trait length ({n})"
        )
    return x


def _check_full_rank(x):
    if x.shape[1] == 0:
        return
    r = np.linalg.matrix_rank(x)
    if r < x.shape[1]:
        # identify offending columns through pivoted QR
        _, _, piv = linalg.qr(x, mode="economic", pivoting=True)
        bad = sorted(int(j) for j in piv[r:])
        raise NumericalError(
            f"covariate matrix is rank deficient; redundant columns: {bad}"
        )


@dataclass
class NullModelFit:
    """Fitted null model with cached projection data.

    ``eigvecs``/``eigvals`` hold the economical eigendecomposition of Z Z^T
    (empty for a plain OLS fit), so that

        Sigma = sigma2_eps * (I + ratio * U diag(s) U^T).
    """

    alpha_hat: np.ndarray
    residuals: np.ndarray
    sigma2_eps: float
    sigma2_z: float | None
    df: int
    x: np.ndarray
    eigvecs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    eigvals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ratio: float = 0.0
    degenerate: bool = False
    converged: bool = True

    # -- Sigma and projection products ------------------------------------

    @property
    def n(self):
        return self.x.shape[0]

    def _vinv(self, m):
        """(I + ratio * Z Z^T)^{-1} @ m."""
        if self.eigvals.size == 0 or self.ratio == 0.0:
            return np.array(m, copy=True)
        shrink = self.ratio * self.eigvals / (1.0 + self.ratio * self.eigvals)
        um = self.eigvecs.T @ m
        return m - self.eigvecs @ (shrink[..., None] * um if m.ndim > 1 else shrink * um)

    def sigma_inv(self, m):
        """Sigma^{-1} @ m."""
        return self._vinv(np.asarray(m, dtype=np.float64)) / self.sigma2_eps

    def sigma_sqrt(self, m):
        """Sigma^{1/2} @ m."""
        m = np.asarray(m, dtype=np.float64)
        if self.eigvals.size == 0 or self.ratio == 0.0:
            return m * np.sqrt(self.sigma2_eps)
        grow = np.sqrt(1.0 + self.ratio * self.eigvals) - 1.0
        um = self.eigvecs.T @ m
        out = m + self.eigvecs @ (grow[..., None] * um if m.ndim > 1 else grow * um)
        return out * np.sqrt(self.sigma2_eps)

    def sigma_inv_residuals(self):
        return self.sigma_inv(self.residuals)

    def p_tilde(self, m):
        """Symmetric projected inverse-covariance product

            P~ @ m  with  P~ = Sigma^{-1} - Sigma^{-1} X (X^T Sigma^{-1} X)^{-1} X^T Sigma^{-1}.
        """
        sm = self.sigma_inv(m)
        if self.x.shape[1] == 0:
            return sm
        six = self.sigma_inv(self.x)
        xtsx = self.x.T @ six
        coef = np.linalg.solve(xtsx, six.T @ m)
        return sm - six @ coef

    def half_project(self, m):
        """Sigma^{1/2} P~ @ m, the half factor of the projected kernel form."""
        return self.sigma_sqrt(self.p_tilde(m))


def fit_null_ols(y, x=None):
    """Least-squares null fit: y = X alpha + e, e ~ N(0, sigma_eps^2 I).

    ``x`` should already contain an intercept column when one is wanted;
    ``x=None`` fits the zero-covariate model (residuals are y itself).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    x = _as_design(x, n)
    p = x.shape[1]
    if n <= p:
        raise NumericalError(f"need more observations ({n}) than covariates ({p})")
    _check_full_rank(x)
    if p > 0:
        alpha, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ alpha
    else:
        alpha = np.zeros(0)
        resid = y.copy()
    df = n - p
    sigma2 = float(resid @ resid) / df
    return NullModelFit(
        alpha_hat=alpha,
        residuals=resid,
        sigma2_eps=sigma2,
        sigma2_z=None,
        df=df,
        x=x,
        degenerate=sigma2 <= 0.0,
    )


def _reml_neg2_profile(ratio, s, uty, utx, y_sq, xty, xtx, n, p):
    """-2 * restricted log-likelihood, profiled over the error variance.

    Works in the eigenbasis of Z Z^T: s are the nonzero eigenvalues, ut* are
    the projections of y and X onto the corresponding eigenvectors, and the
    complements enter through the full-space Gram pieces (y_sq, xty, xtx).
    """
    d = 1.0 + ratio * s
    shrink = ratio * s / d
    # quadratic forms with V^{-1} = I - U diag(shrink) U^T
    yvy = y_sq - shrink @ (uty**2)
    if p > 0:
        xvx = xtx - utx.T @ (shrink[:, None] * utx)
        xvy = xty - utx.T @ (shrink * uty)
        try:
            coef = np.linalg.solve(xvx, xvy)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular covariate system in REML profile") from exc
        ypy = yvy - xvy @ coef
        sign, logdet_xvx = np.linalg.slogdet(xvx)
        if sign <= 0:
            raise NumericalError("non-positive-definite covariate system in REML")
    else:
        ypy = yvy
        logdet_xvx = 0.0
    if ypy <= 0:
        return np.inf, 0.0
    logdet_v = float(np.sum(np.log(d)))
    neg2 = (n - p) * np.log(ypy) + logdet_v + logdet_xvx
    return neg2, ypy


def reml_neg2loglik(y, x, z, ratio):
    """Profile -2 log REML at a given variance ratio (diagnostic helper)."""
    y = np.asarray(y, dtype=np.float64).ravel()
    x = _as_design(x, y.size)
    u, s = _background_eig(np.asarray(z, dtype=np.float64), y.size)
    pieces = _lmm_pieces(y, x, u, s)
    return _reml_neg2_profile(ratio, *pieces)[0]


def _background_eig(z, n):
    """Economical eigendecomposition of Z Z^T via SVD of Z."""
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] != n:
        raise NumericalError("background matrix rows do not match trait length")
    u, sv, _ = np.linalg.svd(z, full_matrices=False)
    keep = sv > sv[0] * 1e-12 if sv.size and sv[0] > 0 else np.zeros(sv.size, bool)
    return u[:, keep], sv[keep] ** 2


def _lmm_pieces(y, x, u, s):
    n = y.size
    p = x.shape[1]
    uty = u.T @ y
    utx = u.T @ x
    y_sq = float(y @ y)
    xty = x.T @ y
    xtx = x.T @ x
    return s, uty, utx, y_sq, xty, xtx, n, p


def fit_null_lmm(y, x, z, fix_ratio=None, max_iter=200):
    """REML fit of y = X alpha + Z beta + e with beta ~ N(0, sigma_z^2 I).

    The restricted likelihood is maximized over the variance ratio
    gamma = sigma_z^2 / sigma_eps^2 on a log scale within RATIO_BOUNDS; the
    gamma = 0 boundary (plain OLS) is always evaluated and wins ties, so a
    zero background component reduces exactly to ``fit_null_ols``.
    ``fix_ratio`` pins gamma instead of estimating it.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    x = _as_design(x, n)
    p = x.shape[1]
    if n <= p:
        raise NumericalError(f"need more observations ({n}) than covariates ({p})")
    _check_full_rank(x)
    if np.ptp(y) == 0.0:
        raise NumericalError("trait vector has zero variance; cannot fit null model")
    z = np.asarray(z, dtype=np.float64)
    u, s = _background_eig(z, n)
    pieces = _lmm_pieces(y, x, u, s)

    if s.size == 0 or (fix_ratio is not None and fix_ratio == 0.0):
        fit = fit_null_ols(y, x if p > 0 else None)
        fit.sigma2_z = 0.0
        return fit

    converged = True
    if fix_ratio is not None:
        ratio = float(fix_ratio)
    else:
        lo, hi = np.log10(RATIO_BOUNDS[0]), np.log10(RATIO_BOUNDS[1])
        res = minimize_scalar(
            lambda t: _reml_neg2_profile(10.0**t, *pieces)[0],
            bounds=(lo, hi),
            method="bounded",
            options={"maxiter": max_iter, "xatol": 1e-10},
        )
        if not res.success:
            raise NumericalError(f"REML profile search did not converge: {res.message}")
        ratio = float(10.0**res.x)
        # boundary comparison: no background component at all
        neg2_zero = _reml_neg2_profile(0.0, *pieces)[0]
        if neg2_zero <= res.fun:
            fit = fit_null_ols(y, x if p > 0 else None)
            fit.sigma2_z = 0.0
            return fit

    neg2, ypy = _reml_neg2_profile(ratio, *pieces)
    if not np.isfinite(neg2):
        raise NumericalError("degenerate REML profile")
    sigma2_eps = ypy / (n - p)

    fit = NullModelFit(
        alpha_hat=np.zeros(p),
        residuals=np.zeros(n),
        sigma2_eps=float(sigma2_eps),
        sigma2_z=float(ratio * sigma2_eps),
        df=n - p,
        x=x,
        eigvecs=u,
        eigvals=s,
        ratio=float(ratio),
        converged=converged,
    )
    # GLS coefficients and residuals at the fitted ratio
    if p > 0:
        six = fit._vinv(x)
        xvx = x.T @ six
        alpha = np.linalg.solve(xvx, six.T @ y)
        fit.alpha_hat = alpha
        fit.residuals = y - x @ alpha
    else:
        fit.residuals = y.copy()
    return fit
