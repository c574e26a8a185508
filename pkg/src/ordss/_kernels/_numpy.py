"""Pure-numpy implementations of the hot numeric kernels.

This is the fallback backend selected with ``ORDSS_NUMBA=0`` (or when numba
is unavailable).  Function signatures and semantics match
:mod:`ordss._kernels._numba`; randomness is always passed in as pre-drawn
arrays except for the counter-based redraw stream, which both backends
implement identically so that feasibility redraws do not depend on the
backend's random state.
"""

import numpy as np
from scipy.special import expit

LOG2PI = 1.8378770664093453
PROB_FLOOR = 1e-300
_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# counter-based RNG used only for feasibility redraws


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _inv_norm_cdf(u: float) -> float:
    # Acklam's rational approximation to the standard normal quantile.
    if u < 0.02425:
        q = np.sqrt(-2.0 * np.log(u))
        return (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
                   - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
                 + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
               + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
    if u > 1.0 - 0.02425:
        q = np.sqrt(-2.0 * np.log(1.0 - u))
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


def counter_normal(seed: int, a: int, b: int, c: int, d: int) -> float:
    """Deterministic N(0,1) draw keyed by (seed, a, b, c, d)."""
    h = int(seed) & _MASK64
    h = mix64(h ^ (int(a) & _MASK64))
    h = mix64(h ^ (int(b) & _MASK64))
    h = mix64(h ^ (int(c) & _MASK64))
    h = mix64(h ^ (int(d) & _MASK64))
    u = ((h >> 11) + 0.5) * 1.1102230246251565e-16  # 2^-53
    return _inv_norm_cdf(u)


# ---------------------------------------------------------------------------
# dynamics: spectral radius and identification


def spectral_radius(A: np.ndarray) -> float:
    p = A.shape[0]
    if p == 1:
        return abs(A[0, 0])
    if p == 2:
        tr = A[0, 0] + A[1, 1]
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        disc = tr * tr - 4.0 * det
        if disc >= 0.0:
            s = np.sqrt(disc)
            return max(abs(tr + s), abs(tr - s)) * 0.5
        return np.sqrt(det)
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _spectral_radius_batch(A: np.ndarray) -> np.ndarray:
    # A: (B, p, p)
    p = A.shape[1]
    if p == 1:
        return np.abs(A[:, 0, 0])
    if p == 2:
        tr = A[:, 0, 0] + A[:, 1, 1]
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        disc = tr * tr - 4.0 * det
        rho = np.empty(A.shape[0])
        real = disc >= 0.0
        s = np.sqrt(np.where(real, disc, 0.0))
        rho_real = np.maximum(np.abs(tr + s), np.abs(tr - s)) * 0.5
        rho_cplx = np.sqrt(np.maximum(det, 0.0))
        rho[:] = np.where(real, rho_real, rho_cplx)
        return rho
    return np.max(np.abs(np.linalg.eigvals(A)), axis=-1)


def _pair_index(p: int):
    return [(i, j) for i in range(p) for j in range(i + 1, p)]


def _identification_batch(A: np.ndarray):
    """Identification solve for a stack of transition matrices.

    Returns ``(sigma (B,p), gamma (B,p,p), ok (B,))`` where ``ok`` is False
    for particles whose off-diagonal system is singular or non-finite.
    ``sigma`` positivity is left to the caller.
    """
    B, p, _ = A.shape
    gamma = np.broadcast_to(np.eye(p), (B, p, p)).copy()
    ok = np.ones(B, dtype=bool)
    pairs = _pair_index(p)
    m = len(pairs)
    if m > 0:
        M = np.zeros((B, m, m))
        rhs = np.zeros((B, m))
        for r, (i, j) in enumerate(pairs):
            for c, (a, b) in enumerate(pairs):
                M[:, r, c] = -(A[:, i, a] * A[:, j, b] + A[:, i, b] * A[:, j, a])
            M[:, r, r] += 1.0
            rhs[:, r] = np.einsum("bk,bk->b", A[:, i, :], A[:, j, :])
        det = np.linalg.det(M)
        solvable = np.isfinite(det) & (det != 0.0)
        sol = np.zeros((B, m))
        if np.any(solvable):
            sol[solvable] = np.linalg.solve(M[solvable], rhs[solvable, :, None])[:, :, 0]
        ok &= solvable & np.all(np.isfinite(sol), axis=1)
        for c, (a, b) in enumerate(pairs):
            gamma[:, a, b] = sol[:, c]
            gamma[:, b, a] = sol[:, c]
    # sigma_i = 1 - (A Gamma A')_ii
    sigma = 1.0 - np.einsum("bij,bjk,bik->bi", A, gamma, A)
    return sigma, gamma, ok


def identification_sigma(A: np.ndarray):
    """Single-matrix identification solve: ``(sigma, gamma, ok)``.

    ``ok`` is False when the system is singular; non-positive sigma is
    reported through the values, not the flag.
    """
    sigma, gamma, ok = _identification_batch(A[None])
    return sigma[0], gamma[0], bool(ok[0])


def _feasible_batch(A: np.ndarray, rho_max: float):
    sigma, _, ok = _identification_batch(A)
    ok = ok & (_spectral_radius_batch(A) < rho_max) & np.all(sigma > 0.0, axis=1)
    return sigma, ok


def _feasible_single(A: np.ndarray, rho_max: float):
    sigma, ok = _feasible_batch(A[None], rho_max)
    return sigma[0], bool(ok[0])


# ---------------------------------------------------------------------------
# measurement log-likelihoods over particle ensembles


def gr_loglik_shared(x, y_t, item_state, alpha, beta_flat, beta_off):
    """GR log-likelihood of one observation vector for each particle.

    Thresholds are shared across particles (``beta_flat`` with per-item
    offsets ``beta_off``).  ``x`` is (K, p); returns (K,).
    """
    K = x.shape[0]
    logw = np.zeros(K)
    for i in range(y_t.shape[0]):
        lo, hi = beta_off[i], beta_off[i + 1]
        n_thresh = hi - lo  # J - 1
        y = int(y_t[i])
        xd = x[:, item_state[i]]
        if y >= 2:
            e_prev = expit(alpha[i] * (xd - beta_flat[lo + y - 2]))
        else:
            e_prev = 1.0
        if y <= n_thresh:
            e_cur = expit(alpha[i] * (xd - beta_flat[lo + y - 1]))
        else:
            e_cur = 0.0
        logw += np.log(np.maximum(e_prev - e_cur, PROB_FLOOR))
    return logw


def linear_loglik_shared(x, y_t, C, psi):
    """Linear-Gaussian log-likelihood of one observation vector per particle."""
    resid = y_t[None, :] - x @ C.T
    # overflow to -inf is the intended saturation for absurd residuals
    with np.errstate(over="ignore"):
        return -0.5 * np.sum(LOG2PI + np.log(psi) + resid * resid / psi, axis=1)


def propagate_shared(x, A, sig_sqrt, normals):
    """One dynamics step for all particles under shared parameters."""
    return x @ A.T + sig_sqrt[None, :] * normals


def simulate_states(A, sig_sqrt, x0, normals):
    """Iterate x[t] = A x[t-1] + sig_sqrt * z[t]; returns the T visited states."""
    T = normals.shape[0]
    p = x0.shape[0]
    out = np.empty((T, p))
    x = x0.copy()
    for t in range(T):
        x = A @ x + sig_sqrt * normals[t]
        out[t] = x
    return out


# ---------------------------------------------------------------------------
# resampling


def resample_from_uniforms(weights, unifs):
    """Multinomial resampling indices: P(idx = j) proportional to weights[j]."""
    cum = np.cumsum(weights)
    total = cum[-1]
    idx = np.searchsorted(cum, unifs * total, side="right")
    return np.minimum(idx, weights.shape[0] - 1).astype(np.int64)


def systematic_from_uniform(weights, u):
    """Systematic resampling indices from a single uniform draw."""
    K = weights.shape[0]
    cum = np.cumsum(weights)
    total = cum[-1]
    targets = (u + np.arange(K)) / K * total
    idx = np.searchsorted(cum, targets, side="right")
    return np.minimum(idx, K - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# bootstrap particle filter


def _pf_loop(weight_fn, A, sig_sqrt, T, init_x, prop_normals, unifs,
             systematic, sys_unifs):
    K, p = init_x.shape
    x = init_x.copy()
    means = np.zeros((T, p))
    ess = np.zeros(T)
    loglik = 0.0
    for t in range(T):
        x = propagate_shared(x, A, sig_sqrt, prop_normals[t])
        logw = weight_fn(x, t)
        shift = np.max(logw)
        if not np.isfinite(shift):
            return loglik, means, ess, t
        w = np.exp(logw - shift)
        cum = np.cumsum(w)
        total = cum[-1]
        if total <= 0.0:
            return loglik, means, ess, t
        loglik += shift + np.log(total) - np.log(K)
        wn = w / total
        means[t] = wn @ x
        ess[t] = 1.0 / np.sum(wn * wn)
        if systematic:
            targets = (sys_unifs[t] + np.arange(K)) / K * total
        else:
            targets = unifs[t] * total
        idx = np.minimum(np.searchsorted(cum, targets, side="right"), K - 1)
        x = x[idx]
    return loglik, means, ess, -1


def pf_gr(A, sig_sqrt, y, item_state, alpha, beta_flat, beta_off,
          init_x, prop_normals, unifs, systematic, sys_unifs):
    """Particle filter for graded-response measurements.

    Returns ``(loglik, filtered_means, ess, fail_t)`` with ``fail_t = -1``
    on success, else the 0-based timepoint where all weights underflowed.
    """
    def weight(x, t):
        return gr_loglik_shared(x, y[t], item_state, alpha, beta_flat, beta_off)

    return _pf_loop(weight, A, sig_sqrt, y.shape[0], init_x, prop_normals,
                    unifs, systematic, sys_unifs)


def pf_linear(A, sig_sqrt, y, C, psi, init_x, prop_normals, unifs,
              systematic, sys_unifs):
    """Particle filter for linear-Gaussian measurements."""
    def weight(x, t):
        return linear_loglik_shared(x, y[t], C, psi)

    return _pf_loop(weight, A, sig_sqrt, y.shape[0], init_x, prop_normals,
                    unifs, systematic, sys_unifs)


# ---------------------------------------------------------------------------
# MIF2 inner loop


def perturb_params(theta, p, sd, normals, rho_max, max_tries, redraw_seed, t_key,
                   A_out, sigsqrt_out):
    """Random-walk perturbation of the parameter swarm with A-block rejection.

    Mutates ``theta`` in place and fills the decoded per-particle transition
    matrices and innovation SDs.  Returns ``(fail, n_kept)``: fail is -1 on
    success or the index of a particle whose current A block is infeasible
    (hard failure); n_kept counts particles that kept their previous feasible
    block after exhausting all redraws.
    """
    K = theta.shape[0]
    psq = p * p
    theta[:, psq:] += sd[psq:] * normals[:, psq:]
    base = theta[:, :psq].copy()
    cand = base + sd[:psq] * normals[:, :psq]
    sigma, ok = _feasible_batch(cand.reshape(K, p, p), rho_max)
    bad = np.flatnonzero(~ok)
    n_kept = 0
    for k in bad:
        accepted = False
        for r in range(1, max_tries):
            for e in range(psq):
                z = counter_normal(redraw_seed, t_key, int(k), r, e)
                cand[k, e] = base[k, e] + sd[e] * z
            sig_k, ok_k = _feasible_single(cand[k].reshape(p, p), rho_max)
            if ok_k:
                sigma[k] = sig_k
                accepted = True
                break
        if not accepted:
            sig_k, ok_k = _feasible_single(base[k].reshape(p, p), rho_max)
            if not ok_k:
                return int(k), n_kept
            cand[k] = base[k]
            sigma[k] = sig_k
            n_kept += 1
    theta[:, :psq] = cand
    A_out[:] = cand.reshape(K, p, p)
    sigsqrt_out[:] = np.sqrt(sigma)
    return -1, n_kept


def _gr_loglik_swarm(theta, x, y_t, item_state, alpha, th_off, ncat, psq):
    """GR log-likelihood with per-particle thresholds decoded from theta."""
    K = theta.shape[0]
    logw = np.zeros(K)
    for i in range(y_t.shape[0]):
        base = psq + th_off[i]
        y = int(y_t[i])
        n_thresh = int(ncat[i]) - 1
        xd = x[:, item_state[i]]
        b = theta[:, base].copy()  # beta_1
        if y >= 2:
            if y >= 3:
                b += np.sum(np.exp(theta[:, base + 1:base + y - 1]), axis=1)
            e_prev = expit(alpha[i] * (xd - b))
        else:
            e_prev = 1.0
        if y <= n_thresh:
            if y >= 2:
                b += np.exp(theta[:, base + y - 1])
            e_cur = expit(alpha[i] * (xd - b))
        else:
            e_cur = 0.0
        logw += np.log(np.maximum(e_prev - e_cur, PROB_FLOOR))
    return logw


def _linear_loglik_swarm(theta, x, y_t, item_state, psq):
    """Linear log-likelihood with per-particle log-loadings and variances."""
    q = y_t.shape[0]
    loadings = np.exp(theta[:, psq:psq + q])
    logpsi = theta[:, psq + q:psq + 2 * q]
    psi = np.exp(logpsi)
    xd = x[:, item_state]  # (K, q)
    resid = y_t[None, :] - loadings * xd
    return -0.5 * np.sum(LOG2PI + logpsi + resid * resid / psi, axis=1)


def _mif2_chunk(kind, theta, x, y_chunk, item_state, alpha, th_off, ncat, p,
                sd, pert_normals, prop_normals, unifs, rho_max, max_tries,
                redraw_seed, t_base, loglik_out):
    Tc, K = unifs.shape
    psq = p * p
    A_buf = np.empty((K, p, p))
    sig_buf = np.empty((K, p))
    n_kept = 0
    for tc in range(Tc):
        fail_k, kept = perturb_params(theta, p, sd, pert_normals[tc], rho_max,
                                      max_tries, redraw_seed, t_base + tc,
                                      A_buf, sig_buf)
        n_kept += kept
        if fail_k >= 0:
            return 2, fail_k, n_kept
        x[:] = np.einsum("kij,kj->ki", A_buf, x) + sig_buf * prop_normals[tc]
        if kind == 0:
            logw = _gr_loglik_swarm(theta, x, y_chunk[tc], item_state, alpha,
                                    th_off, ncat, psq)
        else:
            logw = _linear_loglik_swarm(theta, x, y_chunk[tc], item_state, psq)
        shift = np.max(logw)
        if not np.isfinite(shift):
            return 1, tc, n_kept
        w = np.exp(logw - shift)
        cum = np.cumsum(w)
        total = cum[-1]
        if total <= 0.0:
            return 1, tc, n_kept
        loglik_out[tc] = shift + np.log(total) - np.log(K)
        idx = np.minimum(np.searchsorted(cum, unifs[tc] * total, side="right"), K - 1)
        theta[:] = theta[idx]
        x[:] = x[idx]
    return 0, -1, n_kept


def mif2_chunk_gr(theta, x, y_chunk, item_state, alpha, th_off, ncat, p, sd,
                  pert_normals, prop_normals, unifs, rho_max, max_tries,
                  redraw_seed, t_base, loglik_out):
    """Perturb/propagate/weight/resample for a chunk of timepoints (GR model).

    Mutates ``theta`` (K, D) and ``x`` (K, p) in place and writes per-timepoint
    log-likelihood increments into ``loglik_out``.  Returns ``(code, index)``:
    code 0 = ok, 1 = weight underflow at chunk-local timepoint ``index``,
    2 = particle ``index`` exhausted its A-block redraws.
    """
    return _mif2_chunk(0, theta, x, y_chunk, item_state, alpha, th_off, ncat,
                       p, sd, pert_normals, prop_normals, unifs, rho_max,
                       max_tries, redraw_seed, t_base, loglik_out)


def mif2_chunk_linear(theta, x, y_chunk, item_state, p, sd, pert_normals,
                      prop_normals, unifs, rho_max, max_tries, redraw_seed,
                      t_base, loglik_out):
    """Linear-measurement counterpart of :func:`mif2_chunk_gr`."""
    dummy = np.zeros(0, dtype=np.int64)
    return _mif2_chunk(1, theta, x, y_chunk, item_state, np.zeros(0), dummy,
                       dummy, p, sd, pert_normals, prop_normals, unifs,
                       rho_max, max_tries, redraw_seed, t_base, loglik_out)
