"""Tail probabilities for positive mixtures of 1-df chi-square variables.

Variance-component score statistics have null distributions of the form

    Q ~ sum_i  lambda_i * chisq_1,   lambda_i > 0,

and the quantity of interest is the upper tail P(Q > q).  Three engines are
provided:

- ``davies_pvalue``: numerical inversion of the characteristic function
  (Davies' algorithm, AS 155) with explicit truncation and integration error
  control.  The hot path is compiled with numba; a single evaluation is a few
  microseconds, which matters because calibration runs make millions of calls.
- ``liu_pvalue``: four-moment matching to a (non)central chi-square, the
  modified variant that matches kurtosis when possible.
- ``montecarlo_pvalue``: plain simulation, used as a last resort and as an
  independent check.

``mixture_survival`` chains them (davies -> moment-match -> montecarlo) and
reports which engine produced the returned value.
"""

import math

import numpy as np
from numba import njit
from scipy.stats import chi2, ncx2

from .exceptions import NumericalError

_PI = math.pi
_LOG28 = 0.0866  # ~ log(2)/8, threshold used by the cfe heuristic


@njit(cache=True)
def _exp1(x):
    if x < -50.0:
        return 0.0
    return math.exp(x)


@njit(cache=True)
def _log1(x, first):
    # log(1+x), or log(1+x)-x, via a series that stays accurate for small |x|
    if abs(x) > 0.1:
        if first:
            return math.log(1.0 + x)
        return math.log(1.0 + x) - x
    y = x / (2.0 + x)
    term = 2.0 * y * y * y
    k = 3.0
    if first:
        s = 2.0 * y
    else:
        s = -x * y
    y = y * y
    s1 = s + term / k
    while s1 != s:
        k = k + 2.0
        term = term * y
        s = s1
        s1 = s + term / k
    return s


@njit(cache=True)
def _errbd(u, lb, sigsq, counter):
    # tail bound from the mgf at u; also returns the matching cutoff point
    counter[0] += 1
    xconst = u * sigsq
    sum1 = u * xconst
    u2 = 2.0 * u
    for j in range(lb.size):
        x = u2 * lb[j]
        y = 1.0 - x
        xconst = xconst + lb[j] / y
        sum1 = sum1 + (x * x / y + _log1(-x, False))
    return _exp1(-0.5 * sum1), xconst


@njit(cache=True)
def _ctff(accx, upn, lb, sigsq, mean, lmax, lmin, counter):
    # cutoff c such that P(Q > c) < accx (upn > 0) or P(Q < c) < accx (upn < 0)
    u2 = upn
    u1 = 0.0
    c1 = mean
    if u2 > 0.0:
        rb = 2.0 * lmax
    else:
        rb = 2.0 * lmin
    u = u2 / (1.0 + u2 * rb)
    bd, c2 = _errbd(u, lb, sigsq, counter)
    while bd > accx:
        u1 = u2
        c1 = c2
        u2 = 2.0 * u2
        u = u2 / (1.0 + u2 * rb)
        bd, c2 = _errbd(u, lb, sigsq, counter)
    u = (c1 - mean) / (c2 - mean)
    while u < 0.9:
        u = (u1 + u2) / 2.0
        bd, xconst = _errbd(u / (1.0 + u * rb), lb, sigsq, counter)
        if bd > accx:
            u1 = u
            c1 = xconst
        else:
            u2 = u
            c2 = xconst
        u = (c1 - mean) / (c2 - mean)
    return c2, u2


@njit(cache=True)
def _truncation(u, tausq, lb, sigsq, counter):
    # bound on the integration error due to truncating the u-range at u
    counter[0] += 1
    sum2 = (sigsq + tausq) * u * u
    prod1 = 2.0 * sum2
    prod2 = 0.0
    prod3 = 0.0
    s = 0
    u2 = 2.0 * u
    for j in range(lb.size):
        x = u2 * lb[j]
        x = x * x
        if x > 1.0:
            prod2 = prod2 + math.log(x)
            prod3 = prod3 + _log1(x, True)
            s = s + 1
        else:
            prod1 = prod1 + _log1(x, True)
    prod2 = prod1 + prod2
    prod3 = prod1 + prod3
    x = _exp1(-0.25 * prod2) / _PI
    y = _exp1(-0.25 * prod3) / _PI
    if s == 0:
        err1 = 1.0
    else:
        err1 = x * 2.0 / s
    if prod3 > 1.0:
        err2 = 2.5 * y
    else:
        err2 = 1.0
    if err2 < err1:
        err1 = err2
    x = 0.5 * sum2
    if x <= y:
        err2 = 1.0
    else:
        err2 = y / x
    if err1 < err2:
        return err1
    return err2


@njit(cache=True)
def _findu(utx, accx, lb, sigsq, counter):
    # smallest u with truncation error below accx
    ut = utx
    u = ut / 4.0
    if _truncation(u, 0.0, lb, sigsq, counter) > accx:
        u = ut
        while _truncation(u, 0.0, lb, sigsq, counter) > accx:
            ut = ut * 4.0
            u = ut
    else:
        ut = u
        u = u / 4.0
        while _truncation(u, 0.0, lb, sigsq, counter) <= accx:
            ut = u
            u = u / 4.0
    for divis in (2.0, 1.4, 1.2, 1.1):
        u = ut / divis
        if _truncation(u, 0.0, lb, sigsq, counter) <= accx:
            ut = u
    return ut


@njit(cache=True)
def _integrate(nterm, interv, tausq, mainx, lb, sigsq, c, intl, ersm):
    inpi = interv / _PI
    for k in range(nterm, -1, -1):
        u = (k + 0.5) * interv
        sum1 = -2.0 * u * c
        sum2 = abs(sum1)
        sum3 = -0.5 * sigsq * u * u
        for j in range(lb.size):
            x = 2.0 * lb[j] * u
            y = x * x
            sum3 = sum3 - 0.25 * _log1(y, True)
            z = math.atan(x)
            sum1 = sum1 + z
            sum2 = sum2 + abs(z)
        x = inpi * _exp1(sum3) / u
        if not mainx:
            x = x * (1.0 - _exp1(-0.5 * tausq * u * u))
        intl = intl + math.sin(0.5 * sum1) * x
        ersm = ersm + 0.5 * sum2 * x
    return intl, ersm


@njit(cache=True)
def _cfe(x, lb, th, counter):
    # coefficient of tausq in the error when a convergence factor is applied
    counter[0] += 1
    fail = False
    axl = abs(x)
    if x > 0.0:
        sxl = 1.0
    else:
        sxl = -1.0
    sum1 = 0.0
    j = lb.size - 1
    while j >= 0:
        t = th[j]
        if lb[t] * sxl > 0.0:
            lj = abs(lb[t])
            axl1 = axl - lj
            axl2 = lj / _LOG28
            if axl1 > axl2:
                axl = axl1
            else:
                if axl > axl2:
                    axl = axl2
                sum1 = (axl - axl1) / lj
                for k in range(j - 1, -1, -1):
                    sum1 = sum1 + 1.0
                break
        j -= 1
    if sum1 > 100.0:
        return 1.0, True
    return 2.0 ** (sum1 / 4.0) / (_PI * axl * axl), fail


@njit(cache=True)
def _qf_davies(lb, c, lim, acc):
    """Upper tail P(sum lb_j chisq_1 > c) by characteristic function inversion.

    Returns (tail, ifault) with ifault 0 on success, 1 when the requested
    accuracy cannot be reached within ``lim`` integration terms, 2 when
    round-off may be significant, 4 when the term budget is exhausted while
    locating integration parameters.
    """
    r = lb.size
    acc1 = acc
    intl = 0.0
    ersm = 0.0
    counter = np.zeros(1, dtype=np.int64)

    sigsq = 0.0
    sd = 0.0
    mean = 0.0
    lmax = 0.0
    lmin = 0.0
    for j in range(r):
        lj = lb[j]
        sd = sd + 2.0 * lj * lj
        mean = mean + lj
        if lmax < lj:
            lmax = lj
        elif lmin > lj:
            lmin = lj
    if sd == 0.0:
        if c > 0.0:
            return 0.0, 0
        return 1.0, 0
    sd = math.sqrt(sd)
    if lmax < -lmin:
        almx = -lmin
    else:
        almx = lmax

    th = np.argsort(-np.abs(lb)).astype(np.int64)

    utx = 16.0 / sd
    up = 4.5 / sd
    un = -up
    xlim = float(lim)

    utx = _findu(utx, 0.5 * acc1, lb, sigsq, counter)
    if c != 0.0 and almx > 0.07 * sd:
        cf, failf = _cfe(c, lb, th, counter)
        if not failf:
            tausq = 0.25 * acc1 / cf
            if _truncation(utx, tausq, lb, sigsq, counter) < 0.2 * acc1:
                sigsq = sigsq + tausq
                utx = _findu(utx, 0.25 * acc1, lb, sigsq, counter)
    acc1 = 0.5 * acc1

    intv = 0.0
    xnt = 0.0
    while True:
        if counter[0] > lim:
            return np.nan, 4
        cup, up = _ctff(acc1, up, lb, sigsq, mean, lmax, lmin, counter)
        d1 = cup - c
        if d1 < 0.0:
            return 0.0, 0
        cun, un = _ctff(acc1, un, lb, sigsq, mean, lmax, lmin, counter)
        d2 = c - cun
        if d2 < 0.0:
            return 1.0, 0
        if d1 > d2:
            intv = 2.0 * _PI / d1
        else:
            intv = 2.0 * _PI / d2
        xnt = utx / intv
        xntm = 3.0 / math.sqrt(acc1)
        if xnt <= xntm * 1.5:
            break
        if xntm > xlim:
            return np.nan, 1
        ntm = int(math.floor(xntm + 0.5))
        intv1 = utx / ntm
        x = 2.0 * _PI / intv1
        if x <= abs(c):
            break
        cf1, f1 = _cfe(c - x, lb, th, counter)
        cf2, f2 = _cfe(c + x, lb, th, counter)
        if f1 or f2:
            break
        tausq = 0.33 * acc1 / (1.1 * (cf1 + cf2))
        acc1 = 0.67 * acc1
        intl, ersm = _integrate(ntm, intv1, tausq, False, lb, sigsq, c, intl, ersm)
        xlim = xlim - xntm
        sigsq = sigsq + tausq
        utx = _findu(utx, 0.25 * acc1, lb, sigsq, counter)
        acc1 = 0.75 * acc1

    if xnt > xlim:
        return np.nan, 1
    nt = int(math.floor(xnt + 0.5))
    intl, ersm = _integrate(nt, intv, 0.0, True, lb, sigsq, c, intl, ersm)

    ifault = 0
    x = ersm + acc / 10.0
    for rat in (1.0, 2.0, 4.0, 8.0):
        if rat * x == rat * ersm:
            ifault = 2
    tail = 0.5 + intl
    return tail, ifault


@njit(cache=True)
def _mc_exceed_counts(lb, qs, n_draws, seed):
    # exceedance counts of sum lb_j z_j^2 over each quantile in qs
    np.random.seed(seed)
    counts = np.zeros(qs.size, dtype=np.int64)
    for _ in range(n_draws):
        qv = 0.0
        for j in range(lb.size):
            z = np.random.standard_normal()
            qv += lb[j] * z * z
        for t in range(qs.size):
            if qv > qs[t]:
                counts[t] += 1
    return counts


def _as_lambda_array(lambdas):
    lb = np.ascontiguousarray(np.asarray(lambdas, dtype=np.float64).ravel())
    if lb.size == 0:
        raise NumericalError("empty eigenvalue list for mixture p-value")
    if not np.all(np.isfinite(lb)) or np.any(lb <= 0.0):
        raise NumericalError("mixture weights must be finite and positive")
    return lb


def davies_pvalue(q, lambdas, lim=1_000_000, acc=1e-9):
    """P(Q > q) via Davies' algorithm. Returns (p, ifault)."""
    lb = _as_lambda_array(lambdas)
    if q < 0:
        raise NumericalError("quantile must be non-negative")
    tail, ifault = _qf_davies(lb, float(q), int(lim), float(acc))
    return float(tail), int(ifault)


def liu_params(lambdas):
    """Moment-matching parameters (mu_q, sigma_q, df, noncentrality)."""
    lb = _as_lambda_array(lambdas)
    c1 = lb.sum()
    c2 = (lb**2).sum()
    c3 = (lb**3).sum()
    c4 = (lb**4).sum()
    s1 = c3 / c2**1.5
    s2 = c4 / c2**2
    mu_q = c1
    sigma_q = math.sqrt(2.0 * c2)
    if s1 * s1 > s2:
        a = 1.0 / (s1 - math.sqrt(s1 * s1 - s2))
        d = s1 * a**3 - a * a
        df = a * a - 2.0 * d
    else:
        df = 1.0 / s2
        a = math.sqrt(df)
        d = 0.0
    return mu_q, sigma_q, df, d, a


def liu_pvalue(q, lambdas):
    """P(Q > q) by matching four cumulants to a (non)central chi-square."""
    mu_q, sigma_q, df, d, a = liu_params(lambdas)
    mu_x = df + d
    sigma_x = math.sqrt(2.0) * a
    q_norm = (float(q) - mu_q) / sigma_q * sigma_x + mu_x
    if d > 0.0:
        p = float(ncx2.sf(q_norm, df, d))
    else:
        p = float(chi2.sf(q_norm, df))
    return p


def montecarlo_pvalue(q, lambdas, n_draws=1_000_000, seed=0):
    """P(Q > q) by simulation; returns (count+1)/(n+1) so the result stays in (0,1]."""
    lb = _as_lambda_array(lambdas)
    counts = _mc_exceed_counts(lb, np.array([float(q)]), int(n_draws), int(seed) & 0x7FFFFFFF)
    return (int(counts[0]) + 1.0) / (n_draws + 1.0)


def mixture_survival(q, lambdas, lim=1_000_000, acc=1e-9, mc_draws=1_000_000, seed=0):
    """Tail probability with the davies -> moment-match -> montecarlo chain.

    Returns (p, method) with method one of "davies", "moment-match",
    "montecarlo".  Davies output is accepted only when its fault flag is clear
    and the value exceeds the requested absolute accuracy; below that the
    moment-matching tail approximation is the more trustworthy number.
    """
    lb = _as_lambda_array(lambdas)
    if q < 0:
        raise NumericalError("quantile must be non-negative")
    p, ifault = davies_pvalue(q, lb, lim=lim, acc=acc)
    if ifault in (0, 2) and np.isfinite(p) and acc < p <= 1.0 + 1e-12:
        return min(p, 1.0), "davies"
    p = liu_pvalue(q, lb)
    if np.isfinite(p):
        return min(max(p, 1e-300), 1.0), "moment-match"
    p = montecarlo_pvalue(q, lb, n_draws=mc_draws, seed=seed)
    return p, "montecarlo"
