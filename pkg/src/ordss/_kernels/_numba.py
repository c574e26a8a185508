"""Numba-compiled implementations of the hot numeric kernels.

Loop-structured counterparts of :mod:`ordss._kernels._numpy`; the two
backends are independent implementations of the same contracts and are
cross-checked in the test suite.  All randomness comes in as pre-drawn
arrays except the counter-based redraw stream, which is implemented with
identical integer arithmetic in both backends.
"""

import math

import numpy as np
from numba import njit

LOG2PI = 1.8378770664093453
PROB_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# counter-based RNG used only for feasibility redraws


@njit(cache=True)
def _mix64(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    return int(_mix64(np.uint64(z)))


@njit(cache=True)
def _inv_norm_cdf(u):
    # Acklam's rational approximation to the standard normal quantile.
    if u < 0.02425:
        q = math.sqrt(-2.0 * math.log(u))
        return (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
                   - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
                 + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
               + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
    if u > 1.0 - 0.02425:
        q = math.sqrt(-2.0 * math.log(1.0 - u))
        return -(((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
                    - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
                  + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
               + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
    q = u - 0.5
    r = q * q
    return (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r
               - 2.759285104469687e+02) * r + 1.383577518672690e+02) * r
             - 3.066479806614716e+01) * r + 2.506628277459239e+00) * q / \
        (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r
            - 1.556989798598866e+02) * r + 6.680131188771972e+01) * r
          - 1.328068155288572e+01) * r + 1.0)


@njit(cache=True)
def _counter_normal(seed, a, b, c, d):
    h = seed
    h = _mix64(h ^ np.uint64(a))
    h = _mix64(h ^ np.uint64(b))
    h = _mix64(h ^ np.uint64(c))
    h = _mix64(h ^ np.uint64(d))
    u = (np.float64(h >> np.uint64(11)) + 0.5) * 1.1102230246251565e-16
    return _inv_norm_cdf(u)


def counter_normal(seed: int, a: int, b: int, c: int, d: int) -> float:
    """Deterministic N(0,1) draw keyed by (seed, a, b, c, d)."""
    return float(_counter_normal(np.uint64(seed), a, b, c, d))


# ---------------------------------------------------------------------------
# dynamics: spectral radius and identification


@njit(cache=True)
def _spectral_radius(A):
    p = A.shape[0]
    if p == 1:
        return abs(A[0, 0])
    if p == 2:
        tr = A[0, 0] + A[1, 1]
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        disc = tr * tr - 4.0 * det
        if disc >= 0.0:
            s = math.sqrt(disc)
            return max(abs(tr + s), abs(tr - s)) * 0.5
        return math.sqrt(det)
    ev = np.linalg.eigvals(A.astype(np.complex128))
    best = 0.0
    for i in range(ev.shape[0]):
        m = abs(ev[i])
        if m > best:
            best = m
    return best


def spectral_radius(A: np.ndarray) -> float:
    return float(_spectral_radius(np.ascontiguousarray(A)))


@njit(cache=True)
def _solve_small(M, b, x):
    """Gaussian elimination with partial pivoting; clobbers M and b."""
    n = M.shape[0]
    for col in range(n):
        piv = col
        best = abs(M[col, col])
        for r in range(col + 1, n):
            v = abs(M[r, col])
            if v > best:
                best = v
                piv = r
        if best == 0.0 or not math.isfinite(best):
            return False
        if piv != col:
            for c in range(n):
                tmp = M[col, c]
                M[col, c] = M[piv, c]
                M[piv, c] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        inv = 1.0 / M[col, col]
        for r in range(col + 1, n):
            f = M[r, col] * inv
            if f != 0.0:
                for c in range(col, n):
                    M[r, c] -= f * M[col, c]
                b[r] -= f * b[col]
    for r in range(n - 1, -1, -1):
        s = b[r]
        for c in range(r + 1, n):
            s -= M[r, c] * x[c]
        x[r] = s / M[r, r]
    return True


@njit(cache=True)
def _fill_pairs(p, pi, pj):
    c = 0
    for i in range(p):
        for j in range(i + 1, p):
            pi[c] = i
            pj[c] = j
            c += 1


@njit(cache=True)
def _identification(A, pi, pj, gamma, sigma, M, rhs, sol):
    """Fill gamma/sigma for one transition matrix; False if singular."""
    p = A.shape[0]
    m = pi.shape[0]
    for r in range(m):
        i = pi[r]
        j = pj[r]
        for c in range(m):
            a = pi[c]
            b = pj[c]
            M[r, c] = -(A[i, a] * A[j, b] + A[i, b] * A[j, a])
        M[r, r] += 1.0
        s = 0.0
        for k in range(p):
            s += A[i, k] * A[j, k]
        rhs[r] = s
    if m > 0:
        if not _solve_small(M, rhs, sol):
            return False
        for c in range(m):
            if not math.isfinite(sol[c]):
                return False
    for i in range(p):
        for j in range(p):
            gamma[i, j] = 1.0 if i == j else 0.0
    for c in range(m):
        gamma[pi[c], pj[c]] = sol[c]
        gamma[pj[c], pi[c]] = sol[c]
    for i in range(p):
        s = 0.0
        for j in range(p):
            for k in range(p):
                s += A[i, j] * gamma[j, k] * A[i, k]
        sigma[i] = 1.0 - s
    return True


@njit(cache=True)
def _identification_alloc(A):
    p = A.shape[0]
    m = (p * (p - 1)) // 2
    pi = np.empty(m, dtype=np.int64)
    pj = np.empty(m, dtype=np.int64)
    _fill_pairs(p, pi, pj)
    gamma = np.empty((p, p))
    sigma = np.empty(p)
    M = np.empty((m, m))
    rhs = np.empty(m)
    sol = np.empty(m)
    ok = _identification(A, pi, pj, gamma, sigma, M, rhs, sol)
    return sigma, gamma, ok


def identification_sigma(A: np.ndarray):
    """Single-matrix identification solve: ``(sigma, gamma, ok)``."""
    sigma, gamma, ok = _identification_alloc(np.ascontiguousarray(A))
    return sigma, gamma, bool(ok)


@njit(cache=True)
def _feasible(A, rho_max, pi, pj, gamma, sigma, M, rhs, sol):
    if _spectral_radius(A) >= rho_max:
        return False
    if not _identification(A, pi, pj, gamma, sigma, M, rhs, sol):
        return False
    for i in range(sigma.shape[0]):
        if not (sigma[i] > 0.0):
            return False
    return True


# ---------------------------------------------------------------------------
# measurement log-likelihoods over particle ensembles


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def gr_loglik_shared(x, y_t, item_state, alpha, beta_flat, beta_off):
    K = x.shape[0]
    q = y_t.shape[0]
    logw = np.zeros(K)
    for k in range(K):
        acc = 0.0
        for i in range(q):
            lo = beta_off[i]
            n_thresh = beta_off[i + 1] - lo
            y = y_t[i]
            xd = x[k, item_state[i]]
            if y >= 2:
                e_prev = _sigmoid(alpha[i] * (xd - beta_flat[lo + y - 2]))
            else:
                e_prev = 1.0
            if y <= n_thresh:
                e_cur = _sigmoid(alpha[i] * (xd - beta_flat[lo + y - 1]))
            else:
                e_cur = 0.0
            pcat = e_prev - e_cur
            if pcat < PROB_FLOOR:
                pcat = PROB_FLOOR
            acc += math.log(pcat)
        logw[k] = acc
    return logw


@njit(cache=True)
def linear_loglik_shared(x, y_t, C, psi):
    K = x.shape[0]
    q = y_t.shape[0]
    p = x.shape[1]
    logw = np.zeros(K)
    for k in range(K):
        acc = 0.0
        for i in range(q):
            mu = 0.0
            for j in range(p):
                mu += C[i, j] * x[k, j]
            z = y_t[i] - mu
            acc += -0.5 * (LOG2PI + math.log(psi[i]) + z * z / psi[i])
        logw[k] = acc
    return logw


@njit(cache=True)
def propagate_shared(x, A, sig_sqrt, normals):
    K, p = x.shape
    out = np.empty((K, p))
    for k in range(K):
        for i in range(p):
            mu = 0.0
            for j in range(p):
                mu += A[i, j] * x[k, j]
            out[k, i] = mu + sig_sqrt[i] * normals[k, i]
    return out


@njit(cache=True)
def simulate_states(A, sig_sqrt, x0, normals):
    T = normals.shape[0]
    p = x0.shape[0]
    out = np.empty((T, p))
    x = x0.copy()
    nxt = np.empty(p)
    for t in range(T):
        for i in range(p):
            mu = 0.0
            for j in range(p):
                mu += A[i, j] * x[j]
            nxt[i] = mu + sig_sqrt[i] * normals[t, i]
        for i in range(p):
            x[i] = nxt[i]
            out[t, i] = x[i]
    return out


# ---------------------------------------------------------------------------
# resampling


@njit(cache=True)
def _bsearch_right(cum, target):
    lo = 0
    hi = cum.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum[mid] > target:
            hi = mid
        else:
            lo = mid + 1
    if lo >= cum.shape[0]:
        lo = cum.shape[0] - 1
    return lo


@njit(cache=True)
def resample_from_uniforms(weights, unifs):
    K = weights.shape[0]
    cum = np.empty(K)
    s = 0.0
    for k in range(K):
        s += weights[k]
        cum[k] = s
    idx = np.empty(K, dtype=np.int64)
    for k in range(K):
        idx[k] = _bsearch_right(cum, unifs[k] * s)
    return idx


@njit(cache=True)
def systematic_from_uniform(weights, u):
    K = weights.shape[0]
    cum = np.empty(K)
    s = 0.0
    for k in range(K):
        s += weights[k]
        cum[k] = s
    idx = np.empty(K, dtype=np.int64)
    for k in range(K):
        idx[k] = _bsearch_right(cum, (u + k) / K * s)
    return idx


# ---------------------------------------------------------------------------
# bootstrap particle filter


@njit(cache=True)
def _pf_finish_step(logw, x, unifs_t, systematic, sys_u, means_t, K, p):
    """Normalize weights, record mean/ESS, and resample in place.

    Returns (loglik_increment, ess, ok).
    """
    shift = logw[0]
    for k in range(1, K):
        if logw[k] > shift:
            shift = logw[k]
    if not math.isfinite(shift):
        return 0.0, 0.0, False
    cum = np.empty(K)
    s = 0.0
    for k in range(K):
        s += math.exp(logw[k] - shift)
        cum[k] = s
    if s <= 0.0:
        return 0.0, 0.0, False
    for i in range(p):
        means_t[i] = 0.0
    sq = 0.0
    prev = 0.0
    for k in range(K):
        w = cum[k] - prev
        prev = cum[k]
        wn = w / s
        sq += wn * wn
        for i in range(p):
            means_t[i] += wn * x[k, i]
    inc = shift + math.log(s) - math.log(K)
    # resample into a scratch and copy back
    xb = np.empty_like(x)
    for k in range(K):
        if systematic:
            target = (sys_u + k) / K * s
        else:
            target = unifs_t[k] * s
        j = _bsearch_right(cum, target)
        for i in range(p):
            xb[k, i] = x[j, i]
    for k in range(K):
        for i in range(p):
            x[k, i] = xb[k, i]
    return inc, 1.0 / sq, True


@njit(cache=True)
def pf_gr(A, sig_sqrt, y, item_state, alpha, beta_flat, beta_off,
          init_x, prop_normals, unifs, systematic, sys_unifs):
    T = y.shape[0]
    K, p = init_x.shape
    x = init_x.copy()
    means = np.zeros((T, p))
    ess = np.zeros(T)
    loglik = 0.0
    for t in range(T):
        x = propagate_shared(x, A, sig_sqrt, prop_normals[t])
        logw = gr_loglik_shared(x, y[t], item_state, alpha, beta_flat, beta_off)
        inc, e, ok = _pf_finish_step(logw, x, unifs[t], systematic,
                                     sys_unifs[t], means[t], K, p)
        if not ok:
            return loglik, means, ess, t
        loglik += inc
        ess[t] = e
    return loglik, means, ess, -1


@njit(cache=True)
def pf_linear(A, sig_sqrt, y, C, psi, init_x, prop_normals, unifs,
              systematic, sys_unifs):
    T = y.shape[0]
    K, p = init_x.shape
    x = init_x.copy()
    means = np.zeros((T, p))
    ess = np.zeros(T)
    loglik = 0.0
    for t in range(T):
        x = propagate_shared(x, A, sig_sqrt, prop_normals[t])
        logw = linear_loglik_shared(x, y[t], C, psi)
        inc, e, ok = _pf_finish_step(logw, x, unifs[t], systematic,
                                     sys_unifs[t], means[t], K, p)
        if not ok:
            return loglik, means, ess, t
        loglik += inc
        ess[t] = e
    return loglik, means, ess, -1


# ---------------------------------------------------------------------------
# MIF2 inner loop


@njit(cache=True)
def _perturb_one(theta_row, p, sd, normals_row, rho_max, max_tries,
                 redraw_seed, t_key, k, A_buf, gamma_buf, sigma_buf,
                 pi, pj, M, rhs, sol, cand):
    """Perturb one particle's parameters; A block redrawn until feasible.

    Returns 0 when a perturbed A block was accepted, 1 when all redraws were
    infeasible and the previous (feasible) block was kept unchanged, and 2
    when even the previous block is infeasible (a hard failure).
    """
    psq = p * p
    D = theta_row.shape[0]
    for d in range(psq, D):
        theta_row[d] += sd[d] * normals_row[d]
    for r in range(max_tries):
        for e in range(psq):
            if r == 0:
                z = normals_row[e]
            else:
                z = _counter_normal(redraw_seed, t_key, k, r, e)
            cand[e] = theta_row[e] + sd[e] * z
        for i in range(p):
            for j in range(p):
                A_buf[i, j] = cand[i * p + j]
        if _feasible(A_buf, rho_max, pi, pj, gamma_buf, sigma_buf, M, rhs, sol):
            for e in range(psq):
                theta_row[e] = cand[e]
            return 0
    for i in range(p):
        for j in range(p):
            A_buf[i, j] = theta_row[i * p + j]
    if _feasible(A_buf, rho_max, pi, pj, gamma_buf, sigma_buf, M, rhs, sol):
        return 1
    return 2


@njit(cache=True)
def perturb_params(theta, p, sd, normals, rho_max, max_tries, redraw_seed,
                   t_key, A_out, sigsqrt_out):
    """Random-walk perturbation of the swarm with A-block rejection.

    Mutates ``theta`` in place; fills per-particle transition matrices and
    innovation SDs.  Returns ``(fail, n_kept)``: fail is -1 on success or the
    index of a particle whose current A block is infeasible; n_kept counts
    particles that kept their previous block after exhausting redraws.
    """
    K = theta.shape[0]
    psq = p * p
    m = (p * (p - 1)) // 2
    pi = np.empty(m, dtype=np.int64)
    pj = np.empty(m, dtype=np.int64)
    _fill_pairs(p, pi, pj)
    gamma = np.empty((p, p))
    sigma = np.empty(p)
    M = np.empty((m, m))
    rhs = np.empty(m)
    sol = np.empty(m)
    A_buf = np.empty((p, p))
    cand = np.empty(psq)
    n_kept = 0
    for k in range(K):
        code = _perturb_one(theta[k], p, sd, normals[k], rho_max, max_tries,
                            redraw_seed, t_key, k, A_buf, gamma, sigma,
                            pi, pj, M, rhs, sol, cand)
        if code == 2:
            return k, n_kept
        if code == 1:
            n_kept += 1
        for i in range(p):
            for j in range(p):
                A_out[k, i, j] = A_buf[i, j]
            sigsqrt_out[k, i] = math.sqrt(sigma[i])
    return -1, n_kept


@njit(cache=True)
def _gr_logw_one(theta_row, xk, y_t, item_state, alpha, th_off, ncat, psq):
    q = y_t.shape[0]
    acc = 0.0
    for i in range(q):
        base = psq + th_off[i]
        y = y_t[i]
        n_thresh = ncat[i] - 1
        xd = xk[item_state[i]]
        b = theta_row[base]
        if y >= 2:
            for l in range(1, y - 1):
                b += math.exp(theta_row[base + l])
            e_prev = _sigmoid(alpha[i] * (xd - b))
        else:
            e_prev = 1.0
        if y <= n_thresh:
            if y >= 2:
                b += math.exp(theta_row[base + y - 1])
            e_cur = _sigmoid(alpha[i] * (xd - b))
        else:
            e_cur = 0.0
        pcat = e_prev - e_cur
        if pcat < PROB_FLOOR:
            pcat = PROB_FLOOR
        acc += math.log(pcat)
    return acc


@njit(cache=True)
def _linear_logw_one(theta_row, xk, y_t, item_state, psq):
    # theta layout: loadings in log space, then log error variances
    q = y_t.shape[0]
    acc = 0.0
    for i in range(q):
        load = math.exp(theta_row[psq + i])
        lp = theta_row[psq + q + i]
        pv = math.exp(lp)
        z = y_t[i] - load * xk[item_state[i]]
        acc += -0.5 * (LOG2PI + lp + z * z / pv)
    return acc


@njit(cache=True)
def _mif2_chunk(kind, theta, x, y_gr, y_lin, item_state, alpha, th_off, ncat,
                p, sd, pert_normals, prop_normals, unifs, rho_max, max_tries,
                redraw_seed, t_base, loglik_out):
    Tc = unifs.shape[0]
    K, D = theta.shape
    psq = p * p
    m = (p * (p - 1)) // 2
    pi = np.empty(m, dtype=np.int64)
    pj = np.empty(m, dtype=np.int64)
    _fill_pairs(p, pi, pj)
    gamma = np.empty((p, p))
    sigma = np.empty(p)
    M = np.empty((m, m))
    rhs = np.empty(m)
    sol = np.empty(m)
    A_buf = np.empty((p, p))
    cand = np.empty(psq)
    xprop = np.empty(p)
    logw = np.empty(K)
    cum = np.empty(K)
    ta = theta
    tb = np.empty_like(theta)
    xa = x
    xb = np.empty_like(x)
    swapped = False
    n_kept = 0
    for tc in range(Tc):
        for k in range(K):
            code = _perturb_one(ta[k], p, sd, pert_normals[tc, k], rho_max,
                                max_tries, redraw_seed, t_base + tc, k,
                                A_buf, gamma, sigma, pi, pj, M, rhs, sol, cand)
            if code == 2:
                return 2, k, n_kept
            if code == 1:
                n_kept += 1
            for i in range(p):
                mu = 0.0
                for j in range(p):
                    mu += A_buf[i, j] * xa[k, j]
                xprop[i] = mu + math.sqrt(sigma[i]) * prop_normals[tc, k, i]
            for i in range(p):
                xa[k, i] = xprop[i]
            if kind == 0:
                logw[k] = _gr_logw_one(ta[k], xa[k], y_gr[tc], item_state,
                                       alpha, th_off, ncat, psq)
            else:
                logw[k] = _linear_logw_one(ta[k], xa[k], y_lin[tc],
                                           item_state, psq)
        shift = logw[0]
        for k in range(1, K):
            if logw[k] > shift:
                shift = logw[k]
        if not math.isfinite(shift):
            return 1, tc, n_kept
        s = 0.0
        for k in range(K):
            s += math.exp(logw[k] - shift)
            cum[k] = s
        if s <= 0.0:
            return 1, tc, n_kept
        loglik_out[tc] = shift + math.log(s) - math.log(K)
        for k in range(K):
            j = _bsearch_right(cum, unifs[tc, k] * s)
            for d in range(D):
                tb[k, d] = ta[j, d]
            for i in range(p):
                xb[k, i] = xa[j, i]
        tmp_t = ta
        ta = tb
        tb = tmp_t
        tmp_x = xa
        xa = xb
        xb = tmp_x
        swapped = not swapped
    if swapped:
        for k in range(K):
            for d in range(D):
                theta[k, d] = ta[k, d]
            for i in range(p):
                x[k, i] = xa[k, i]
    return 0, -1, n_kept


@njit(cache=True)
def mif2_chunk_gr(theta, x, y_chunk, item_state, alpha, th_off, ncat, p, sd,
                  pert_normals, prop_normals, unifs, rho_max, max_tries,
                  redraw_seed, t_base, loglik_out):
    """Perturb/propagate/weight/resample for a chunk of timepoints (GR model).

    Mutates ``theta`` (K, D) and ``x`` (K, p) in place and writes per-timepoint
    log-likelihood increments into ``loglik_out``.  Returns ``(code, index)``:
    code 0 = ok, 1 = weight underflow at chunk-local timepoint ``index``,
    2 = particle ``index`` exhausted its A-block redraws.
    """
    y_lin = np.zeros((1, 1))
    return _mif2_chunk(0, theta, x, y_chunk, y_lin, item_state, alpha, th_off,
                       ncat, p, sd, pert_normals, prop_normals, unifs,
                       rho_max, max_tries, redraw_seed, t_base, loglik_out)


@njit(cache=True)
def mif2_chunk_linear(theta, x, y_chunk, item_state, p, sd, pert_normals,
                      prop_normals, unifs, rho_max, max_tries, redraw_seed,
                      t_base, loglik_out):
    """Linear-measurement counterpart of :func:`mif2_chunk_gr`."""
    y_gr = np.zeros((1, 1), dtype=np.int64)
    alpha = np.zeros(0)
    th_off = np.zeros(0, dtype=np.int64)
    ncat = np.zeros(0, dtype=np.int64)
    return _mif2_chunk(1, theta, x, y_gr, y_chunk, item_state, alpha, th_off,
                       ncat, p, sd, pert_normals, prop_normals, unifs,
                       rho_max, max_tries, redraw_seed, t_base, loglik_out)
