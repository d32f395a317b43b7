"""Compiled inner loops of the augmented-chain sampler.

State layout: ``theta = [p, psi, lam, d]``; latents ``N``, ``M`` are int64
arrays updated in place. Random numbers come from a caller-owned
``numpy.random.Generator``, so runs are reproducible from its seed.
"""

import math

import numpy as np
from numba import njit

BINOMIAL = 0
MULT = 1
DOUBLE = 2

TERM_LAM = 0
TERM_D = 1
TERM_P_GIBBS = 2
TERM_P_NUM = 3
TERM_P_DEN = 4
TERM_PSI_NUM = 5
TERM_PSI_DEN = 6
N_TERMS = 7

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def _xlogx(x):
    return x * math.log(x) if x > 0.0 else 0.0


@njit(cache=True)
def _log(x):
    return math.log(x) if x > 0.0 else -np.inf


@njit(cache=True)
def _lchoose(n, k):
    if k < 0 or k > n:
        return -np.inf
    return math.lgamma(n + 1.0) - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0)


@njit(cache=True)
def log_kernel(model, N, M, logp, log1mp, psi):
    F = N - M
    out = math.lgamma(N + 1.0) - math.lgamma(M + 1.0) - math.lgamma(F + 1.0)
    b = M * logp + F * log1mp
    if model == BINOMIAL or psi == 0.0:
        return out + b
    if model == MULT:
        return out + b + psi * M * F
    return out + (psi + 1.0) * b + psi * (_xlogx(N) - _xlogx(M) - _xlogx(F))


@njit(cache=True)
def kernel_row(model, N, logp, log1mp, psi, out):
    """out[M] = log kernel at (N, M) for M = 0..N; binomial coefficients built incrementally."""
    lc = 0.0
    xN = _xlogx(N)
    for M in range(N + 1):
        if M > 0:
            lc += math.log(N - M + 1.0) - math.log(M)
        F = N - M
        b = M * logp + F * log1mp
        if model == BINOMIAL or psi == 0.0:
            out[M] = lc + b
        elif model == MULT:
            out[M] = lc + b + psi * M * F
        else:
            out[M] = lc + (psi + 1.0) * b + psi * (xN - _xlogx(M) - _xlogx(F))


@njit(cache=True)
def log_norm(model, N, logp, log1mp, psi):
    """log of the kernel summed over M = 0..N (zero when the kernel is a pmf)."""
    if model == BINOMIAL or psi == 0.0:
        return 0.0
    row = np.empty(N + 1)
    kernel_row(model, N, logp, log1mp, psi, row)
    mx = row.max()
    s = 0.0
    for M in range(N + 1):
        s += math.exp(row[M] - mx)
    return mx + math.log(s)


@njit(cache=True)
def alloc_loglik(model, N, M, p, psi):
    """sum_i log P(M_i | N_i, p, psi)."""
    logp = math.log(p)
    log1mp = math.log1p(-p)
    nmax = 0
    for i in range(N.size):
        if N[i] > nmax:
            nmax = N[i]
    cache = np.full(nmax + 1, np.nan)
    total = 0.0
    generalised = model != BINOMIAL and psi != 0.0
    for i in range(N.size):
        total += log_kernel(model, N[i], M[i], logp, log1mp, psi)
        if generalised:
            if math.isnan(cache[N[i]]):
                cache[N[i]] = log_norm(model, N[i], logp, log1mp, psi)
            total -= cache[N[i]]
    return total


@njit(cache=True)
def alloc_table(model, nmax, p, psi):
    logp = math.log(p)
    log1mp = math.log1p(-p)
    table = np.full((nmax + 1, nmax + 1), -np.inf)
    generalised = model != BINOMIAL and psi != 0.0
    for N in range(nmax + 1):
        row = table[N, : N + 1]
        kernel_row(model, N, logp, log1mp, psi, row)
        if generalised:
            mx = row.max()
            s = 0.0
            for M in range(N + 1):
                s += math.exp(row[M] - mx)
            z = mx + math.log(s)
            for M in range(N + 1):
                row[M] -= z
    return table


@njit(cache=True)
def gamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


@njit(cache=True)
def beta_logpdf(x, a, b):
    return (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + (a - 1.0) * _log(x) + (b - 1.0) * _log(1.0 - x)
    )


@njit(cache=True)
def _logit(p):
    return math.log(p) - math.log1p(-p)


@njit(cache=True)
def _expit(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# --- conditional updates --------------------------------------------------


@njit(cache=True)
def draw_lambda(N, shape, rate, rng):
    """lam | N ~ Gamma(shape + sum N, rate + C)."""
    return rng.gamma(shape + N.sum(), 1.0 / (rate + N.size))


@njit(cache=True)
def draw_d(N, n, a, b, rng):
    """d | N, n ~ Beta(a + deaths, b + survivors)."""
    return rng.beta(a + (N - n).sum(), b + n.sum())


@njit(cache=True)
def draw_p_binomial(N, M, rng):
    return rng.beta(1.0 + M.sum(), 1.0 + (N - M).sum())


@njit(cache=True)
def _logtarget_eta(model, N, M, p, psi):
    # uniform prior on p, written on the logit scale
    return alloc_loglik(model, N, M, p, psi) + math.log(p) + math.log1p(-p)


@njit(cache=True)
def _logtarget_psi(model, N, M, p, psi, sigma):
    return alloc_loglik(model, N, M, p, psi) - 0.5 * (psi / sigma) ** 2


@njit(cache=True)
def mh_p(model, N, M, p, psi, scale, rng):
    """Random-walk Metropolis on logit(p); returns (p, accepted)."""
    eta_new = _logit(p) + scale * rng.normal(0.0, 1.0)
    p_new = _expit(eta_new)
    if not (0.0 < p_new < 1.0):
        return p, False
    lr = _logtarget_eta(model, N, M, p_new, psi) - _logtarget_eta(model, N, M, p, psi)
    if math.log(rng.random()) < lr:
        return p_new, True
    return p, False


@njit(cache=True)
def mh_psi(model, N, M, p, psi, sigma, scale, rng):
    psi_new = psi + scale * rng.normal(0.0, 1.0)
    lr = _logtarget_psi(model, N, M, p, psi_new, sigma) - _logtarget_psi(model, N, M, p, psi, sigma)
    if math.log(rng.random()) < lr:
        return psi_new, True
    return psi, False


@njit(cache=True)
def _window_logz(table, N, lo, hi):
    mx = -np.inf
    for M in range(lo, hi + 1):
        if table[N, M] > mx:
            mx = table[N, M]
    if mx == -np.inf:
        return -np.inf
    s = 0.0
    for M in range(lo, hi + 1):
        s += math.exp(table[N, M] - mx)
    return mx + math.log(s)


@njit(cache=True)
def latent_move(ni, mi, Ni, Mi, lam, d, table, rng):
    """One joint MH move on a clutch's (N, M); returns (N, M, accepted).

    N' = N +/- 1 reflected at n, then M' is drawn from the allocation pmf
    restricted to the window [m, m + N' - n] that keeps the counts feasible.
    """
    if rng.random() < 0.5:
        Np = Ni + 1
    else:
        Np = Ni - 1
    if Np < ni:
        Np = ni + 1
    q_fwd = 1.0 if Ni == ni else 0.5
    q_rev = 1.0 if Np == ni else 0.5

    lo = mi
    hi = mi + Np - ni
    logz_new = _window_logz(table, Np, lo, hi)
    if logz_new == -np.inf:
        return Ni, Mi, False
    u = rng.random()
    acc = 0.0
    Mp = hi
    for M in range(lo, hi + 1):
        acc += math.exp(table[Np, M] - logz_new)
        if u < acc:
            Mp = M
            break
    logz_old = _window_logz(table, Ni, mi, mi + Ni - ni)

    dn = Np - Ni
    if d == 0.0:
        if dn > 0:
            return Ni, Mi, False
        log_d_term = np.inf
    else:
        log_d_term = dn * math.log(d)
    lr = (
        dn * math.log(lam) - math.lgamma(Np + 1.0) + math.lgamma(Ni + 1.0)
        + log_d_term
        + _lchoose(Mp, mi) + _lchoose(Np - Mp, ni - mi)
        - _lchoose(Mi, mi) - _lchoose(Ni - Mi, ni - mi)
        + logz_new - logz_old
        + math.log(q_rev) - math.log(q_fwd)
    )
    if lr >= 0.0 or math.log(rng.random()) < lr:
        return Np, Mp, True
    return Ni, Mi, False


@njit(cache=True)
def latent_sweep(model, n, m, N, M, p, psi, lam, d, moves, rng):
    """Apply ``moves`` latent moves to every clutch in place; returns accept count."""
    nmax = 0
    for i in range(N.size):
        if N[i] > nmax:
            nmax = N[i]
    table = alloc_table(model, nmax + moves, p, psi)
    accepted = 0
    for _ in range(moves):
        for i in range(N.size):
            Ni, Mi, ok = latent_move(n[i], m[i], N[i], M[i], lam, d, table, rng)
            N[i] = Ni
            M[i] = Mi
            if ok:
                accepted += 1
    return accepted


# --- ordinate terms -------------------------------------------------------


@njit(cache=True)
def _normal_logpdf(x, mu, s):
    z = (x - mu) / s
    return -0.5 * z * z - math.log(s) - LOG_SQRT_2PI


@njit(cache=True)
def _terms(model, n, N, M, theta, priors, target, scales, mask, rng, out):
    p, psi, lam, d = theta[0], theta[1], theta[2], theta[3]
    ps, psis, lams, ds = target[0], target[1], target[2], target[3]
    sigma = priors[0]
    if mask[TERM_LAM]:
        out[TERM_LAM] = gamma_logpdf(lams, priors[1] + N.sum(), priors[2] + N.size)
    if mask[TERM_D]:
        out[TERM_D] = beta_logpdf(ds, priors[3] + (N - n).sum(), priors[4] + n.sum())
    if mask[TERM_P_GIBBS]:
        out[TERM_P_GIBBS] = beta_logpdf(ps, 1.0 + M.sum(), 1.0 + (N - M).sum())
    if mask[TERM_P_NUM]:
        cur = _logtarget_eta(model, N, M, p, psi)
        new = _logtarget_eta(model, N, M, ps, psi)
        out[TERM_P_NUM] = min(0.0, new - cur) + _normal_logpdf(_logit(ps), _logit(p), scales[0])
    if mask[TERM_P_DEN]:
        eta = _logit(ps) + scales[0] * rng.normal(0.0, 1.0)
        cur = _logtarget_eta(model, N, M, ps, psi)
        new = _logtarget_eta(model, N, M, _expit(eta), psi)
        out[TERM_P_DEN] = min(0.0, new - cur)
    if mask[TERM_PSI_NUM]:
        cur = _logtarget_psi(model, N, M, p, psi, sigma)
        new = _logtarget_psi(model, N, M, p, psis, sigma)
        out[TERM_PSI_NUM] = min(0.0, new - cur) + _normal_logpdf(psis, psi, scales[1])
    if mask[TERM_PSI_DEN]:
        prop = psis + scales[1] * rng.normal(0.0, 1.0)
        cur = _logtarget_psi(model, N, M, p, psis, sigma)
        new = _logtarget_psi(model, N, M, p, prop, sigma)
        out[TERM_PSI_DEN] = min(0.0, new - cur)


# --- full sweeps ----------------------------------------------------------


@njit(cache=True)
def run_sweeps(
    model, n, m, N, M, theta, priors, update, scales,
    iterations, burn_in, thin, adapt, latent_moves,
    target, term_mask, store_latents, rng,
):
    """Run the Metropolis-within-Gibbs chain.

    ``update`` flags blocks [p, psi, lam, d, latents]; ``priors`` is
    [sigma_psi, lam_shape, lam_rate, d_a, d_b]. Proposal scales adapt by
    Robbins-Monro towards 0.44 acceptance during burn-in only.
    Returns (draws, accept, propose, terms, latent_N, latent_M).
    """
    n_keep = (iterations - burn_in) // thin
    draws = np.empty((n_keep, 4))
    terms = np.zeros((n_keep if term_mask.any() else 0, N_TERMS))
    C = N.size
    lat_N = np.empty((n_keep if store_latents else 0, C), np.int64)
    lat_M = np.empty((n_keep if store_latents else 0, C), np.int64)
    accept = np.zeros(3)
    propose = np.zeros(3)
    row = np.zeros(N_TERMS)
    k = 0
    for it in range(iterations):
        post = it >= burn_in
        gain = 1.0 / (it + 1.0) ** 0.6
        if update[2]:
            theta[2] = draw_lambda(N, priors[1], priors[2], rng)
        if update[3]:
            theta[3] = draw_d(N, n, priors[3], priors[4], rng)
        if update[0]:
            if model == BINOMIAL:
                theta[0] = draw_p_binomial(N, M, rng)
            else:
                theta[0], ok = mh_p(model, N, M, theta[0], theta[1], scales[0], rng)
                if post:
                    accept[0] += ok
                    propose[0] += 1
                elif adapt:
                    scales[0] *= math.exp(gain * ((1.0 if ok else 0.0) - 0.44))
        if update[1] and model != BINOMIAL:
            theta[1], ok = mh_psi(model, N, M, theta[0], theta[1], priors[0], scales[1], rng)
            if post:
                accept[1] += ok
                propose[1] += 1
            elif adapt:
                scales[1] *= math.exp(gain * ((1.0 if ok else 0.0) - 0.44))
        if update[4]:
            acc = latent_sweep(model, n, m, N, M, theta[0], theta[1], theta[2], theta[3], latent_moves, rng)
            if post:
                accept[2] += acc
                propose[2] += latent_moves * C
        if post and (it - burn_in + 1) % thin == 0:
            for j in range(4):
                draws[k, j] = theta[j]
            if store_latents:
                lat_N[k] = N
                lat_M[k] = M
            if terms.shape[0] > 0:
                _terms(model, n, N, M, theta, priors, target, scales, term_mask, rng, row)
                terms[k] = row
            k += 1
    return draws, accept, propose, terms, lat_N, lat_M
