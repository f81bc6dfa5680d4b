"""Compiled inner loops for bivariate mixture EM.

Covariances are carried as (K, 3) arrays of (sxx, sxz, szz); everything here
is specialised to two dimensions so the 2x2 algebra is written out by hand.
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)

STATUS_OK = 0
STATUS_MAX_ITER = 1
STATUS_EMPTY_COMPONENT = 2


@njit(cache=True)
def clip_cov(sxx, sxz, szz, floor):
    """Project a symmetric 2x2 matrix onto {eigenvalues >= floor}.

    This is the exact constrained maximiser of the Gaussian covariance
    likelihood, so EM stays monotone.
    """
    half_tr = 0.5 * (sxx + szz)
    half_diff = 0.5 * (sxx - szz)
    rad = math.sqrt(half_diff * half_diff + sxz * sxz)
    lo = half_tr - rad
    hi = half_tr + rad
    if lo >= floor:
        return sxx, sxz, szz
    if hi <= floor:
        return floor, 0.0, floor
    # unit eigenvector of the small eigenvalue
    if sxz == 0.0:
        if sxx <= szz:
            ux, uz = 1.0, 0.0
        else:
            ux, uz = 0.0, 1.0
    else:
        ax, az = sxz, lo - sxx
        bx, bz = lo - szz, sxz
        if ax * ax + az * az >= bx * bx + bz * bz:
            ux, uz = ax, az
        else:
            ux, uz = bx, bz
        nrm = math.sqrt(ux * ux + uz * uz)
        ux /= nrm
        uz /= nrm
    bump = floor - lo
    return sxx + bump * ux * ux, sxz + bump * ux * uz, szz + bump * uz * uz


@njit(cache=True)
def component_log_density(X, mean, cov, out):
    n = X.shape[0]
    sxx, sxz, szz = cov[0], cov[1], cov[2]
    det = sxx * szz - sxz * sxz
    c = -LOG_2PI - 0.5 * math.log(det)
    for i in range(n):
        dx = X[i, 0] - mean[0]
        dz = X[i, 1] - mean[1]
        q = (szz * dx * dx - 2.0 * sxz * dx * dz + sxx * dz * dz) / det
        out[i] = c - 0.5 * q


@njit(cache=True)
def log_joint(X, pis, means, covs):
    """(n, K) array of log(pi_k) + log N(x_i; mu_k, Sigma_k)."""
    n = X.shape[0]
    K = pis.shape[0]
    lp = np.empty((n, K))
    col = np.empty(n)
    for k in range(K):
        component_log_density(X, means[k], covs[k], col)
        lw = math.log(pis[k])
        for i in range(n):
            lp[i, k] = col[i] + lw
    return lp


@njit(cache=True)
def normalize_rows(lp, resp, point_ll):
    """In-place log-sum-exp normalisation; fills responsibilities."""
    n, K = lp.shape
    for i in range(n):
        m = lp[i, 0]
        for k in range(1, K):
            if lp[i, k] > m:
                m = lp[i, k]
        s = 0.0
        for k in range(K):
            e = math.exp(lp[i, k] - m)
            resp[i, k] = e
            s += e
        for k in range(K):
            resp[i, k] /= s
        point_ll[i] = m + math.log(s)


@njit(cache=True)
def mean_loglik(X, w, pis, means, covs):
    lp = log_joint(X, pis, means, covs)
    n, K = lp.shape
    resp = np.empty((n, K))
    pll = np.empty(n)
    normalize_rows(lp, resp, pll)
    tot = 0.0
    wsum = 0.0
    for i in range(n):
        tot += w[i] * pll[i]
        wsum += w[i]
    return tot / wsum


@njit(cache=True)
def em_map(X, w, wsum, pis, means, covs, floor, out_pis, out_means, out_covs, scratch):
    """One EM step: returns (mean log-likelihood at the input, status).

    The updated parameters go to the ``out_*`` arrays. The E-step and the
    sufficient statistics share one pass over the data.
    """
    n = X.shape[0]
    K = pis.shape[0]
    cst = scratch[0]
    ixx = scratch[1]
    ixz = scratch[2]
    izz = scratch[3]
    lp = scratch[4]
    s0 = scratch[5]
    s1x = scratch[6]
    s1z = scratch[7]
    s2xx = scratch[8]
    s2xz = scratch[9]
    s2zz = scratch[10]
    for k in range(K):
        sxx, sxz, szz = covs[k, 0], covs[k, 1], covs[k, 2]
        det = sxx * szz - sxz * sxz
        cst[k] = math.log(pis[k]) - LOG_2PI - 0.5 * math.log(det)
        ixx[k] = szz / det
        ixz[k] = -sxz / det
        izz[k] = sxx / det
        s0[k] = 0.0
        s1x[k] = 0.0
        s1z[k] = 0.0
        s2xx[k] = 0.0
        s2xz[k] = 0.0
        s2zz[k] = 0.0
    ll = 0.0
    for i in range(n):
        xi = X[i, 0]
        zi = X[i, 1]
        m = -np.inf
        for k in range(K):
            dx = xi - means[k, 0]
            dz = zi - means[k, 1]
            v = cst[k] - 0.5 * (ixx[k] * dx * dx + 2.0 * ixz[k] * dx * dz + izz[k] * dz * dz)
            lp[k] = v
            if v > m:
                m = v
        s = 0.0
        for k in range(K):
            e = math.exp(lp[k] - m)
            lp[k] = e
            s += e
        ll += w[i] * (m + math.log(s))
        ws = w[i] / s
        for k in range(K):
            wr = ws * lp[k]
            # moments about the current mean keep the update well conditioned
            dx = xi - means[k, 0]
            dz = zi - means[k, 1]
            s0[k] += wr
            s1x[k] += wr * dx
            s1z[k] += wr * dz
            s2xx[k] += wr * dx * dx
            s2xz[k] += wr * dx * dz
            s2zz[k] += wr * dz * dz
    ll /= wsum
    for k in range(K):
        nk = s0[k]
        if nk <= 1e-10 * wsum:
            return ll, STATUS_EMPTY_COMPONENT
        ox = s1x[k] / nk
        oz = s1z[k] / nk
        a, b, c = clip_cov(
            s2xx[k] / nk - ox * ox,
            s2xz[k] / nk - ox * oz,
            s2zz[k] / nk - oz * oz,
            floor,
        )
        out_pis[k] = nk / wsum
        out_means[k, 0] = means[k, 0] + ox
        out_means[k, 1] = means[k, 1] + oz
        out_covs[k, 0] = a
        out_covs[k, 1] = b
        out_covs[k, 2] = c
    return ll, STATUS_OK


@njit(cache=True)
def run_em(X, w, pis, means, covs, tol, max_iter, floor):
    """Plain weighted EM from the given starting point.

    Returns (pis, means, covs, trace, n_iter, status). ``trace[t]`` is the
    weighted mean log-likelihood after t M-steps; the returned parameters
    are the ones whose log-likelihood was recorded last.
    """
    K = pis.shape[0]
    wsum = w.sum()
    cur_p, cur_m, cur_c = pis.copy(), means.copy(), covs.copy()
    nxt_p, nxt_m, nxt_c = pis.copy(), means.copy(), covs.copy()
    scratch = np.empty((11, K))
    trace = np.empty(max_iter + 1)
    it = 0
    while True:
        ll, st = em_map(X, w, wsum, cur_p, cur_m, cur_c, floor, nxt_p, nxt_m, nxt_c, scratch)
        trace[it] = ll
        if it > 0 and ll - trace[it - 1] < tol:
            return cur_p, cur_m, cur_c, trace[: it + 1], it, STATUS_OK
        if st != STATUS_OK:
            return cur_p, cur_m, cur_c, trace[: it + 1], it, st
        if it == max_iter:
            return cur_p, cur_m, cur_c, trace[: it + 1], it, STATUS_MAX_ITER
        cur_p, nxt_p = nxt_p, cur_p
        cur_m, nxt_m = nxt_m, cur_m
        cur_c, nxt_c = nxt_c, cur_c
        it += 1


@njit(cache=True)
def _valid(pis, covs, floor):
    # EM is only monotone from points inside the constrained set, so an
    # extrapolated covariance must respect the eigenvalue floor too
    lim = floor * (1.0 - 1e-9)
    for k in range(pis.shape[0]):
        if not (pis[k] > 0.0):
            return False
        sxx, sxz, szz = covs[k, 0], covs[k, 1], covs[k, 2]
        half_diff = 0.5 * (sxx - szz)
        lo = 0.5 * (sxx + szz) - math.sqrt(half_diff * half_diff + sxz * sxz)
        if not (lo >= lim):
            return False
    return True


@njit(cache=True)
def run_squarem(X, w, pis, means, covs, tol, max_iter, floor):
    """EM with squared extrapolation and a monotone safeguard.

    Each cycle takes two EM steps theta0 -> theta1 -> theta2, extrapolates
    along the step differences and applies one more EM step to the
    extrapolated point. The extrapolated result is kept only if its
    log-likelihood beats theta1's; otherwise the cycle falls back to theta2,
    so the recorded log-likelihood never decreases. ``max_iter`` bounds the
    number of EM steps, same as in :func:`run_em`.
    """
    K = pis.shape[0]
    P = 6 * K
    wsum = w.sum()
    th = np.empty((4, P))
    scratch = np.empty((11, K))
    trace = np.empty(max_iter + 1)
    th[0, :K] = pis
    th[0, K : 3 * K] = means.ravel()
    th[0, 3 * K :] = covs.ravel()
    n_steps = 0
    n_rec = 0
    while True:
        p0 = th[0, :K]
        m0 = th[0, K : 3 * K].reshape((K, 2))
        c0 = th[0, 3 * K :].reshape((K, 3))
        l0, st = em_map(
            X, w, wsum, p0, m0, c0, floor,
            th[1, :K], th[1, K : 3 * K].reshape((K, 2)), th[1, 3 * K :].reshape((K, 3)),
            scratch,
        )
        n_steps += 1
        trace[n_rec] = l0
        n_rec += 1
        if n_rec > 1 and l0 - trace[n_rec - 2] < tol:
            return p0.copy(), m0.copy(), c0.copy(), trace[:n_rec], n_steps, STATUS_OK
        if st != STATUS_OK:
            return p0.copy(), m0.copy(), c0.copy(), trace[:n_rec], n_steps, st
        if n_steps >= max_iter:
            return p0.copy(), m0.copy(), c0.copy(), trace[:n_rec], n_steps, STATUS_MAX_ITER
        l1, st = em_map(
            X, w, wsum, th[1, :K], th[1, K : 3 * K].reshape((K, 2)), th[1, 3 * K :].reshape((K, 3)),
            floor,
            th[2, :K], th[2, K : 3 * K].reshape((K, 2)), th[2, 3 * K :].reshape((K, 3)),
            scratch,
        )
        n_steps += 1
        if st != STATUS_OK:
            # theta1 is still an improvement over theta0
            th[0, :] = th[1, :]
            continue
        rr = 0.0
        vv = 0.0
        for j in range(P):
            r = th[1, j] - th[0, j]
            v = th[2, j] - 2.0 * th[1, j] + th[0, j]
            rr += r * r
            vv += v * v
        accepted = False
        if vv > 0.0 and rr > 0.0:
            alpha = -math.sqrt(rr / vv)
            if alpha > -1.0:
                alpha = -1.0
            for _ in range(4):
                for j in range(P):
                    r = th[1, j] - th[0, j]
                    v = th[2, j] - 2.0 * th[1, j] + th[0, j]
                    th[3, j] = th[0, j] - 2.0 * alpha * r + alpha * alpha * v
                if alpha == -1.0:
                    break
                if _valid(th[3, :K], th[3, 3 * K :].reshape((K, 3)), floor):
                    break
                alpha = 0.5 * (alpha - 1.0)
            ok = _valid(th[3, :K], th[3, 3 * K :].reshape((K, 3)), floor)
            if alpha != -1.0 and ok and n_steps < max_iter:
                lx, st = em_map(
                    X, w, wsum,
                    th[3, :K], th[3, K : 3 * K].reshape((K, 2)), th[3, 3 * K :].reshape((K, 3)),
                    floor,
                    th[0, :K], th[0, K : 3 * K].reshape((K, 2)), th[0, 3 * K :].reshape((K, 3)),
                    scratch,
                )
                n_steps += 1
                if st == STATUS_OK and lx >= l1:
                    accepted = True
        if not accepted:
            th[0, :] = th[2, :]


@njit(cache=True)
def _pick(p, total, u):
    target = u * total
    acc = 0.0
    last = 0
    for i in range(p.shape[0]):
        if p[i] > 0.0:
            last = i
            acc += p[i]
            if acc > target:
                return i
    return last


@njit(cache=True)
def kmeanspp(X, w, u):
    """k-means++ seeding driven by the uniforms ``u`` (one per centre).

    Returns the chosen row indices, or -1 entries when the remaining
    weighted squared distances are all zero.
    """
    n = X.shape[0]
    k = u.shape[0]
    idx = np.full(k, -1)
    p = w.copy()
    idx[0] = _pick(p, w.sum(), u[0])
    d2 = np.empty(n)
    for i in range(n):
        dx = X[i, 0] - X[idx[0], 0]
        dz = X[i, 1] - X[idx[0], 1]
        d2[i] = dx * dx + dz * dz
    for c in range(1, k):
        total = 0.0
        for i in range(n):
            p[i] = w[i] * d2[i]
            total += p[i]
        if not total > 0.0:
            return idx
        j = _pick(p, total, u[c])
        idx[c] = j
        for i in range(n):
            dx = X[i, 0] - X[j, 0]
            dz = X[i, 1] - X[j, 1]
            v = dx * dx + dz * dz
            if v < d2[i]:
                d2[i] = v
    return idx


@njit(cache=True)
def pooled_cov(X, w, floor):
    n = X.shape[0]
    ws = 0.0
    mx = 0.0
    mz = 0.0
    for i in range(n):
        ws += w[i]
        mx += w[i] * X[i, 0]
        mz += w[i] * X[i, 1]
    mx /= ws
    mz /= ws
    sxx = 0.0
    sxz = 0.0
    szz = 0.0
    for i in range(n):
        dx = X[i, 0] - mx
        dz = X[i, 1] - mz
        sxx += w[i] * dx * dx
        sxz += w[i] * dx * dz
        szz += w[i] * dz * dz
    out = np.empty(3)
    out[0], out[1], out[2] = clip_cov(sxx / ws, sxz / ws, szz / ws, floor)
    return out
