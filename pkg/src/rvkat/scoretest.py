"""Variance-component score tests against a fitted null model.

For a kernel K and null residuals r the statistic is

    Q = r^T Sigma^-1 K Sigma^-1 r,

and under the null Q is distributed as sum_i lambda_i chisq_1 where the
lambda_i are the nonzero eigenvalues of Sigma^(1/2) P~ K P~ Sigma^(1/2)
(P~ the projected inverse covariance of the fit).  With K = A A^T the same
eigenvalues come from the much smaller m x m Gram form A^T P~ A, which is
what the implementation uses whenever the half factor is available.

``skat`` tests the weighted linear kernel, ``skat_o`` scans the usual 11-point
grid of linear/burden mixtures K_rho = (1-rho) K_linear + rho K_burden and
combines the per-rho p-values into the omnibus minimum-p test via the
one-dimensional integral of the standard decomposition

    Q_rho ~ tau(rho) eta0 + (1-rho) kappa,   eta0 ~ chisq_1,

``test_new_kernel`` runs the plain score test on any prebuilt kernel.
"""

import hashlib
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import chi2

from .exceptions import NumericalError
from .quadform import _qf_davies, liu_params, liu_pvalue, mixture_survival

DEFAULT_RHO_GRID = (0.0, 0.01, 0.04, 0.09, 0.16, 0.25, 0.36, 0.49, 0.64, 0.81, 1.0)

RANK_TOL = 1e-10  # relative eigenvalue cutoff for the mixture weights


@dataclass
class TestResult:
    """One (gene, trait, method) test outcome; p_value None marks untestable."""

    gene: str
    trait: str
    method: str
    q_stat: float | None
    p_value: float | None
    pvalue_method: str | None
    eigencount: int
    n_variants: int
    rho_opt: float | None = None
    p_adj: float | None = None
    rho_pvalues: tuple | None = None

    @classmethod
    def untestable(cls, gene, trait, method, n_variants):
        return cls(
            gene=gene,
            trait=trait,
            method=method,
            q_stat=None,
            p_value=None,
            pvalue_method=None,
            eigencount=0,
            n_variants=n_variants,
        )

    @property
    def testable(self):
        return self.p_value is not None


def seed_from_names(master_seed, gene, trait, method):
    """Deterministic per-task seed for the Monte Carlo fallback."""
    digest = hashlib.sha256(
        f"{master_seed}:{gene}:{trait}:{method}".encode()
    ).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFF


def _check_fit(fit):
    if fit.degenerate or fit.sigma2_eps <= 0.0:
        raise NumericalError("null fit is degenerate (zero error variance)")


def _truncate_lambdas(lam):
    lam = np.asarray(lam, dtype=np.float64)
    if lam.size == 0:
        return lam
    lmax = float(lam.max())
    if lmax <= 0.0:
        return np.zeros(0)
    keep = lam > RANK_TOL * lmax
    return np.sort(lam[keep])[::-1]


def _projected_gram(fit, half):
    """A^T P~ A for a half factor A; symmetric PSD up to rounding."""
    c = half.T @ fit.p_tilde(half)
    return (c + c.T) / 2.0


def score_statistic(fit, kernel):
    """Score statistic and its null mixture weights for a kernel matrix.

    Returns (q, lambdas); an all-zero kernel yields (0.0, empty) so callers
    can emit the untestable marker instead of an error.
    """
    _check_fit(fit)
    if kernel.n != fit.n:
        raise NumericalError(
            f"kernel dimension {kernel.n} does not match fit dimension {fit.n}"
        )
    if kernel.is_zero():
        return 0.0, np.zeros(0)
    sir = fit.sigma_inv_residuals()
    half = kernel.half
    if half is not None and half.shape[1] <= fit.n:
        au = half.T @ sir
        q = float(au @ au)
        lam = np.linalg.eigvalsh(_projected_gram(fit, half))
    else:
        q = float(sir @ kernel.values @ sir)
        m1 = fit.half_project(kernel.values)
        b = fit.half_project(m1.T)
        lam = np.linalg.eigvalsh((b + b.T) / 2.0)
    return q, _truncate_lambdas(lam)


def _pvalue(q, lam, seed):
    return mixture_survival(q, lam, seed=seed)


def test_new_kernel(fit, kernel, trait="", method=None, seed=0):
    """Score test of an arbitrary kernel; provenance carried into the result."""
    name = method or (kernel.spec.name if kernel.spec is not None else "new-kernel")
    n_variants = kernel.half.shape[1] if kernel.half is not None else 0
    q, lam = score_statistic(fit, kernel)
    if lam.size == 0:
        return TestResult.untestable(kernel.gene, trait, name, n_variants)
    p, tag = _pvalue(q, lam, seed)
    return TestResult(
        gene=kernel.gene,
        trait=trait,
        method=name,
        q_stat=q,
        p_value=p,
        pvalue_method=tag,
        eigencount=int(lam.size),
        n_variants=n_variants,
    )


def skat(fit, g, w, gene="", trait="", method="skat", seed=0):
    """Weighted linear kernel test: K = G W W^T G^T."""
    _check_fit(fit)
    if g.m == 0:
        return TestResult.untestable(gene, trait, method, 0)
    if g.n != fit.n:
        raise NumericalError("genotype rows do not match fit dimension")
    half = g.dosages * w.sqrt[None, :]
    sir = fit.sigma_inv_residuals()
    au = half.T @ sir
    q = float(au @ au)
    lam = _truncate_lambdas(np.linalg.eigvalsh(_projected_gram(fit, half)))
    if lam.size == 0:
        return TestResult.untestable(gene, trait, method, g.m)
    p, tag = _pvalue(q, lam, seed)
    return TestResult(
        gene=gene,
        trait=trait,
        method=method,
        q_stat=q,
        p_value=p,
        pvalue_method=tag,
        eigencount=int(lam.size),
        n_variants=g.m,
    )


def _rho_lambdas(c_mat, c_row, s, rho):
    """Eigenvalues of R^(1/2) C R^(1/2) for R = (1-rho) I + rho 1 1^T."""
    m = c_mat.shape[0]
    if rho >= 1.0 - 1e-12:
        return _truncate_lambdas(np.array([s]))
    a = np.sqrt(1.0 - rho)
    b = (np.sqrt(1.0 - rho + m * rho) - a) / m
    outer = np.outer(c_row, np.ones(m))
    c_rho = (
        a * a * c_mat
        + a * b * (outer + outer.T)
        + b * b * s * np.ones((m, m))
    )
    return _truncate_lambdas(np.linalg.eigvalsh((c_rho + c_rho.T) / 2.0))


def _mixture_quantile(tail, lam):
    """Upper-tail quantile by moment matching (central chi-square inversion),
    the standard choice for calibrating the per-rho minimum-p thresholds."""
    mu_q, sigma_q, df, _d, _a = liu_params(lam)
    q_org = chi2.ppf(1.0 - tail, df)
    return float((q_org - df) / np.sqrt(2.0 * df) * sigma_q + mu_q)


@njit(cache=True)
def _skato_eval_nodes(ts, qmin, tau, rho, lams, mu_q, sd1, acc, lim):
    """F_kappa factor of the omnibus integrand at eta0 = t^2 for each node.

    A negative entry flags a Davies fault; the caller recomputes those nodes
    with the moment-matching tail.
    """
    big = 1e250
    out = np.empty(ts.size)
    for i in range(ts.size):
        x = ts[i] * ts[i]
        kx = 1e300
        for j in range(rho.size):
            if rho[j] >= 1.0 - 1e-10:
                continue
            v = (qmin[j] - tau[j] * x) / (1.0 - rho[j])
            if v < kx:
                kx = v
        if kx <= 0.0:
            out[i] = 0.0
            continue
        if lams.size == 0:
            out[i] = 1.0
            continue
        if kx >= big or kx > lams.sum() * 1e4:
            out[i] = 1.0
            continue
        kadj = (kx - mu_q) * sd1 + mu_q
        if kadj <= 0.0:
            out[i] = 0.0
            continue
        tail, ifault = _qf_davies(lams, kadj, lim, acc)
        if (ifault != 0 and ifault != 2) or not np.isfinite(tail):
            out[i] = -(kadj + 1.0)  # flag, carrying the adjusted quantile
        else:
            if tail < 0.0:
                tail = 0.0
            if tail > 1.0:
                tail = 1.0
            out[i] = 1.0 - tail
    return out


def _gauss_nodes(t_hi, panels=24, order=10):
    """Composite Gauss-Legendre nodes/weights on [0, t_hi]."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, t_hi, panels + 1)
    ts = []
    ws = []
    for a, b in zip(edges[:-1], edges[1:]):
        mid = (a + b) / 2.0
        hw = (b - a) / 2.0
        ts.append(mid + hw * xg)
        ws.append(hw * wg)
    return np.concatenate(ts), np.concatenate(ws)


def _skato_omnibus_pvalue(pmin, qmin, tau, rho, lam_s, var_remain):
    """P-value of the minimum-p statistic over the rho grid.

    Integrates P(kappa < min_rho (qmin_rho - tau_rho eta0)/(1-rho)) against
    the chisq_1 density of eta0, with the usual variance rescaling that
    absorbs the cross term, truncated at the hard eta0 cutoff imposed by any
    rho = 1 (pure burden) grid entries.
    """
    mu_q = float(lam_s.sum())
    var_q = 2.0 * float((lam_s**2).sum()) + var_remain
    sd1 = np.sqrt(2.0 * float((lam_s**2).sum()) / var_q) if var_q > 0 else 1.0

    x_max = np.inf
    for j, r in enumerate(rho):
        if r >= 1.0 - 1e-10:
            x_max = min(x_max, qmin[j] / tau[j])
    t_hi = min(np.sqrt(x_max), 8.0) if np.isfinite(x_max) else 8.0
    if t_hi <= 0.0:
        return 1.0

    ts, ws = _gauss_nodes(t_hi)
    factors = _skato_eval_nodes(
        ts, qmin, tau, np.asarray(rho, dtype=np.float64), lam_s, mu_q, sd1, 1e-6, 100_000
    )
    bad = factors < 0.0
    if bad.any():
        for i in np.where(bad)[0]:
            kadj = -factors[i] - 1.0
            factors[i] = 1.0 - min(max(liu_pvalue(kadj, lam_s), 0.0), 1.0)
    integral = np.sqrt(2.0 / np.pi) * float(
        ws @ (np.exp(-0.5 * ts**2) * factors)
    )
    p = 1.0 - integral
    if not np.isfinite(p):
        return min(1.0, pmin * len(rho))
    return min(max(p, 1e-300), 1.0, pmin * len(rho))


def skat_o(fit, g, w, rho_grid=DEFAULT_RHO_GRID, gene="", trait="", method="skat-o", seed=0):
    """Optimal unified test over linear/burden kernel mixtures.

    Per-rho statistics Q_rho = (1-rho) Q_linear + rho Q_burden are tested
    against their own eigenvalue mixtures; the minimum per-rho p-value is
    then calibrated by numerical integration.  The reported p is additionally
    capped at (grid size) x min-p.
    """
    _check_fit(fit)
    if g.m == 0:
        return TestResult.untestable(gene, trait, method, 0)
    if g.n != fit.n:
        raise NumericalError("genotype rows do not match fit dimension")
    rho = np.asarray(sorted(rho_grid), dtype=np.float64)
    if rho.size == 0 or rho[0] < 0.0 or rho[-1] > 1.0:
        raise NumericalError("rho grid must lie within [0, 1]")

    half = g.dosages * w.sqrt[None, :]
    sir = fit.sigma_inv_residuals()
    au = half.T @ sir
    q_lin = float(au @ au)
    q_bur = float(au.sum()) ** 2

    c_mat = _projected_gram(fit, half)
    tr_c = float(np.trace(c_mat))
    if tr_c <= 0.0 or not np.isfinite(tr_c):
        return TestResult.untestable(gene, trait, method, g.m)
    c_row = c_mat.sum(axis=1)
    s = float(c_row.sum())

    if g.m == 1 or s <= 1e-12 * tr_c:
        # burden and linear directions coincide or the burden direction is
        # annihilated by the projection: every rho gives the same test
        lam = _truncate_lambdas(np.linalg.eigvalsh(c_mat))
        if lam.size == 0:
            return TestResult.untestable(gene, trait, method, g.m)
        p, tag = _pvalue(q_lin, lam, seed)
        return TestResult(
            gene=gene,
            trait=trait,
            method=method,
            q_stat=q_lin,
            p_value=p,
            pvalue_method=tag,
            eigencount=int(lam.size),
            n_variants=g.m,
            rho_opt=0.0,
        )

    q_rho = (1.0 - rho) * q_lin + rho * q_bur
    lam_rho = [_rho_lambdas(c_mat, c_row, s, r) for r in rho]
    p_rho = []
    tags = []
    for qr, lr in zip(q_rho, lam_rho):
        if lr.size == 0:
            p_rho.append(1.0)
            tags.append(None)
            continue
        p, tag = _pvalue(qr, lr, seed)
        p_rho.append(p)
        tags.append(tag)
    p_rho = np.array(p_rho)
    i_opt = int(np.argmin(p_rho))
    pmin = float(p_rho[i_opt])

    # omnibus decomposition pieces
    cc = float(c_row @ c_row)
    lam_s = _truncate_lambdas(
        np.linalg.eigvalsh(c_mat - np.outer(c_row, c_row) / s)
    )
    var_remain = max(4.0 * (float(c_row @ c_mat @ c_row) / s - (cc / s) ** 2), 0.0)
    tau = rho * s + (1.0 - rho) * cc / s
    qmin = np.array(
        [
            _mixture_quantile(pmin, lr) if lr.size else np.inf
            for lr in lam_rho
        ]
    )
    p_omni = _skato_omnibus_pvalue(pmin, qmin, tau, rho, lam_s, var_remain)

    return TestResult(
        gene=gene,
        trait=trait,
        method=method,
        q_stat=float(q_rho[i_opt]),
        p_value=p_omni,
        pvalue_method=tags[i_opt] or "davies",
        eigencount=int(lam_rho[i_opt].size),
        n_variants=g.m,
        rho_opt=float(rho[i_opt]),
        rho_pvalues=tuple(float(p) for p in p_rho),
    )
