"""CAVI engine for variational-Bayes joint channel estimation and data
detection (JED) at the CPU of a cell-free massive MIMO uplink.

Three fronthaul scenarios share the machinery:
  * run_vb_pfl  - unquantized received signals from all APs;
  * run_vb_qe   - APs forward b-bit quantized signals; the CPU additionally
                  tracks truncated-Gaussian moments of the pre-quantizer
                  signal r (quantize-then-estimate);
  * run_vb_eq   - APs locally estimate channels, quantize the estimates and
                  the data signals, and the CPU fuses both
                  (estimate-then-quantize).

Update order follows the published pseudocode: noise precision first, then
(if quantized) the r moments, then a sequential sweep over the per-(user,
AP) channel factors, then a sequential sweep over users for the symbol
factors. Within a column the data symbols at different times never
interact, so those loops are vectorized over time without changing the
coordinate-ascent semantics.
"""

from dataclasses import dataclass

import numpy as np

from . import quantizer as qz
from . import truncgauss as tg
from .model import SystemConfig, TransmissionBlock

# Lower clamp for Gamma-update denominators; caps <gamma> at dof * 1e12.
_DENOM_CLAMP = 1e-12


class NumericsError(RuntimeError):
    """Raised when a CAVI trajectory produces non-finite state."""


@dataclass
class VariationalState:
    h_mean: np.ndarray        # (M*L, K) stacked <h_{i,l}>
    h_cov: np.ndarray         # (K, L, M, M) posterior covariances
    x_pmf: np.ndarray         # (K, T_d, |S|) symbol pmfs
    x_mean: np.ndarray        # (K, T_d)
    x_var: np.ndarray         # (K, T_d) tau^x
    gamma_p: float
    gamma_d: np.ndarray       # (T_d,)
    r_mean: np.ndarray        # (M*L, T) <r>, columns [pilot | data]
    r_var: np.ndarray         # (M*L, T) tau^r (total per complex entry)


def expected_residual(y_mean, y_var_total, A_mean, A_covs, x_mean, x_cov_diag):
    """<||y - A x||^2> for independent y, column-independent A, and x with
    diagonal covariance (the F = identity case of the quadratic-form lemma).
    """
    y_mean = np.asarray(y_mean, dtype=complex).ravel()
    A_mean = np.asarray(A_mean, dtype=complex)
    x_mean = np.asarray(x_mean, dtype=complex).ravel()
    x_cov_diag = np.asarray(x_cov_diag, dtype=float).ravel()
    if y_var_total < 0 or np.any(x_cov_diag < 0):
        raise ValueError("variances must be non-negative")
    tr = np.array([float(np.trace(c).real) for c in A_covs])
    if np.any(tr < 0):
        raise ValueError("covariance traces must be non-negative")
    e = y_mean - A_mean @ x_mean
    col_norms2 = np.sum(np.abs(A_mean) ** 2, axis=0)
    return float(
        np.sum(np.abs(e) ** 2)
        + np.abs(x_mean) ** 2 @ tr
        + y_var_total
        + x_cov_diag @ tr
        + x_cov_diag @ col_norms2
    )


def hard_decision(x_pmf: np.ndarray, constellation: np.ndarray) -> np.ndarray:
    """Per-symbol argmax over the constellation; ties go to the lowest index."""
    return constellation[np.argmax(x_pmf, axis=-1)]


# ---------------------------------------------------------------------------
# shared update blocks
# ---------------------------------------------------------------------------

def _prior_eig(sigma: np.ndarray):
    """Eigendecompositions of every prior covariance, reused all trial."""
    lam, U = np.linalg.eigh(sigma)
    lam = np.clip(lam.real, 1e-12, None)
    return lam, U


def _posterior_cov(lam_il, U_il, c):
    """[c I + Sigma^-1]^-1 through the cached eigenbasis of Sigma."""
    return (U_il * (1.0 / (c + 1.0 / lam_il))) @ U_il.conj().T


def _gamma_update(a, b, dof, resid):
    return (a + dof) / max(b + resid, _DENOM_CLAMP)


def _residual_blocks(r_mean, h_mean, X, L, M):
    """Full residual E = r - <H> X as per-AP blocks (L, M, T)."""
    return (r_mean - h_mean @ X).reshape(L, M, -1)


def _complex_box_bounds(Y: np.ndarray, spec: qz.QuantizerSpec):
    """Per-real-dimension bin bounds of quantized entries, in signal units."""
    s = spec.scale
    lo_re, up_re = qz.bin_bounds_array(spec, np.real(Y) / s)
    lo_im, up_im = qz.bin_bounds_array(spec, np.imag(Y) / s)
    return lo_re * s, up_re * s, lo_im * s, up_im * s


def _update_r(h_mean, X_cols, gamma, bounds):
    """Truncated complex-Gaussian moments of r for one signal phase.

    gamma is a scalar (pilot phase) or a per-column vector (data phase).
    """
    prior = h_mean @ X_cols
    nu = 1.0 / np.asarray(gamma, dtype=float)
    if nu.ndim == 1:
        nu = nu[None, :]
    return tg.trunc_cgauss_moments(prior, nu, *bounds)


def _h_sweep(h_mean, h_cov, cov_tr, lam, U, gamma_p, gamma_d,
             X_p, x_mean, xabs2, r_mean, M, L, use_pilots=True):
    """Sequential CAVI sweep over (user, AP) channel factors, in place.

    Per-AP residuals are maintained incrementally so every update sees
    the freshest means of all other factors.
    """
    K = h_mean.shape[1]
    T_p = X_p.shape[1] if use_pilots else 0
    X_full = np.hstack([X_p, x_mean]) if use_pilots else x_mean
    E = _residual_blocks(r_mean, h_mean, X_full, L, M)

    xp_energy = np.sum(np.abs(X_p) ** 2, axis=1) if use_pilots else np.zeros(K)
    xm_abs2 = np.abs(x_mean) ** 2
    max_delta = 0.0
    for i in range(K):
        wp = gamma_p * np.conj(X_p[i]) if use_pilots else None
        wd = gamma_d * np.conj(x_mean[i])
        c_i = gamma_p * xp_energy[i] + gamma_d @ xabs2[i]
        self_p = gamma_p * xp_energy[i]
        self_d = gamma_d @ xm_abs2[i]
        for l in range(L):
            rows = slice(l * M, (l + 1) * M)
            h_old = h_mean[rows, i]
            cov = _posterior_cov(lam[i, l], U[i, l], c_i)
            rhs = E[l, :, T_p:] @ wd + h_old * self_d
            if use_pilots:
                rhs = rhs + E[l, :, :T_p] @ wp + h_old * self_p
            h_new = cov @ rhs
            delta = h_new - h_old
            max_delta = max(max_delta, float(np.max(np.abs(delta))))
            h_mean[rows, i] = h_new
            h_cov[i, l] = cov
            cov_tr[i, l] = float(np.trace(cov).real)
            if use_pilots:
                E[l, :, :T_p] -= np.outer(delta, X_p[i])
            E[l, :, T_p:] -= np.outer(delta, x_mean[i])
    return max_delta


def _x_sweep(h_mean, cov_tr_sum, gamma_d, Rd_eff, x_pmf, x_mean, x_var,
             constellation, log_prior):
    """Sequential CAVI sweep over users' symbol factors, vectorized over
    the data columns (columns are independent given the other factors).
    Returns the largest |change| in any <x_{i,t}> for early-exit checks.
    """
    K = h_mean.shape[1]
    pts = constellation
    pts_abs2 = np.abs(pts) ** 2
    F = Rd_eff - h_mean @ x_mean
    max_delta = 0.0
    for i in range(K):
        hi = h_mean[:, i]
        hn2_mean = float(np.sum(np.abs(hi) ** 2))
        hn2 = hn2_mean + cov_tr_sum[i]
        z = (hi.conj() @ F + hn2_mean * x_mean[i]) / hn2
        # log q_i(a) up to normalization, then a log-sum-exp normalize
        ll = log_prior[None, :] - (gamma_d * hn2)[:, None] * np.abs(pts[None, :] - z[:, None]) ** 2
        ll -= ll.max(axis=1, keepdims=True)
        pmf = np.exp(ll)
        pmf /= pmf.sum(axis=1, keepdims=True)
        xm_new = pmf @ pts
        xv_new = np.clip((pmf @ pts_abs2).real - np.abs(xm_new) ** 2, 0.0, None)
        F -= np.outer(hi, xm_new - x_mean[i])
        max_delta = max(max_delta, float(np.max(np.abs(xm_new - x_mean[i]))))
        x_pmf[i] = pmf
        x_mean[i] = xm_new
        x_var[i] = xv_new
    return max_delta


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericsError("CAVI state diverged (non-finite values)")


# ---------------------------------------------------------------------------
# scenario drivers
# ---------------------------------------------------------------------------

def _init_state(cfg: SystemConfig, sigma, R_p, R_d):
    ML = cfg.num_aps * cfg.antennas_per_ap
    K, T_d = cfg.num_users, R_d.shape[1]
    n_sym = len(cfg.constellation)
    return VariationalState(
        h_mean=np.zeros((ML, K), dtype=complex),
        h_cov=sigma.astype(complex).copy(),
        x_pmf=np.tile(cfg.symbol_prior, (K, T_d, 1)),
        x_mean=np.zeros((K, T_d), dtype=complex),
        x_var=np.ones((K, T_d)),   # <|x|^2> = 1 under the unit-energy prior
        gamma_p=0.0,
        gamma_d=np.zeros(T_d),
        r_mean=np.hstack([R_p, R_d]).astype(complex),
        r_var=np.zeros((ML, R_p.shape[1] + T_d)),
    )


def _run_jed(cfg: SystemConfig, sigma: np.ndarray, X_p: np.ndarray,
             R_p: np.ndarray, R_d: np.ndarray,
             bounds_p=None, bounds_d=None):
    """Joint CAVI loop shared by the PFL and Q-E scenarios.

    Passing bounds enables the truncated r updates of the quantized
    scenario; with bounds None the r moments stay pinned to the raw
    signals and the loop reduces to the unquantized algorithm.
    """
    M, L, K = cfg.antennas_per_ap, cfg.num_aps, cfg.num_users
    ML = M * L
    T_p, T_d = X_p.shape[1], R_d.shape[1]
    quantized = bounds_p is not None or bounds_d is not None
    track_r_var = quantized and cfg.include_r_var_in_gamma

    state = _init_state(cfg, sigma, R_p, R_d)
    lam, U = _prior_eig(sigma)
    cov_tr = np.einsum("klmm->kl", sigma).real.copy()
    xp_energy = np.sum(np.abs(X_p) ** 2, axis=1)
    log_prior = np.log(cfg.symbol_prior)

    for _ in range(cfg.cavi_iters):
        tr_sum = cov_tr.sum(axis=1)
        # noise precision, pilot phase
        Ep = state.r_mean[:, :T_p] - state.h_mean @ X_p
        resid_p = float(np.sum(np.abs(Ep) ** 2) + xp_energy @ tr_sum)
        if track_r_var:
            resid_p += float(state.r_var[:, :T_p].sum())
        state.gamma_p = _gamma_update(cfg.a_p, cfg.b_p, ML * T_p, resid_p)
        if bounds_p is not None:
            state.r_mean[:, :T_p], state.r_var[:, :T_p] = _update_r(
                state.h_mean, X_p, state.gamma_p, bounds_p)

        if T_d > 0:
            # noise precision, data phase (per column), then r moments
            xabs2 = state.x_var + np.abs(state.x_mean) ** 2
            hn2_mean = np.sum(np.abs(state.h_mean) ** 2, axis=0)
            Ed = state.r_mean[:, T_p:] - state.h_mean @ state.x_mean
            resid_d = (np.sum(np.abs(Ed) ** 2, axis=0)
                       + state.x_var.T @ hn2_mean + xabs2.T @ tr_sum)
            if track_r_var:
                resid_d = resid_d + state.r_var[:, T_p:].sum(axis=0)
            state.gamma_d = (cfg.a_d + ML) / np.maximum(cfg.b_d + resid_d, _DENOM_CLAMP)
            if bounds_d is not None:
                state.r_mean[:, T_p:], state.r_var[:, T_p:] = _update_r(
                    state.h_mean, state.x_mean, state.gamma_d, bounds_d)
        else:
            xabs2 = state.x_var  # empty

        # Several (channel, symbol) sweeps between r/precision refreshes.
        # Letting the coordinate factors equilibrate against fixed r moments
        # keeps early, stale symbol commitments from being locked in by the
        # bin-truncated r posteriors.
        for _pass in range(cfg.sweep_passes):
            h_delta = _h_sweep(state.h_mean, state.h_cov, cov_tr, lam, U,
                               state.gamma_p, state.gamma_d, X_p, state.x_mean,
                               xabs2, state.r_mean, M, L)
            if T_d > 0:
                delta = _x_sweep(state.h_mean, cov_tr.sum(axis=1), state.gamma_d,
                                 state.r_mean[:, T_p:], state.x_pmf,
                                 state.x_mean, state.x_var,
                                 cfg.constellation, log_prior)
                xabs2 = state.x_var + np.abs(state.x_mean) ** 2
            else:
                delta = h_delta
        _check_finite(state.h_mean, state.x_mean, state.gamma_d)
        if cfg.early_exit_tol is not None and delta < cfg.early_exit_tol:
            break

    return state


def run_vb_pfl(cfg: SystemConfig, block: TransmissionBlock, sigma: np.ndarray):
    """JED on unquantized fronthaul signals. Returns (H_hat, X_hat, state)."""
    state = _run_jed(cfg, sigma, block.X_p, block.R_p, block.R_d)
    return state.h_mean.copy(), hard_decision(state.x_pmf, cfg.constellation), state


def run_vb_qe(cfg: SystemConfig, block: TransmissionBlock, sigma: np.ndarray):
    """JED on b-bit quantized fronthaul signals (quantize-then-estimate)."""
    if block.Y_p is None or block.quant is None:
        raise ValueError("block carries no quantized signals; run quantize_block first")
    bounds_p = _complex_box_bounds(block.Y_p, block.quant)
    bounds_d = _complex_box_bounds(block.Y_d, block.quant)
    state = _run_jed(cfg, sigma, block.X_p, block.Y_p, block.Y_d,
                     bounds_p=bounds_p, bounds_d=bounds_d)
    return state.h_mean.copy(), hard_decision(state.x_pmf, cfg.constellation), state


# ---------------------------------------------------------------------------
# estimate-then-quantize
# ---------------------------------------------------------------------------

def run_local_ap_ce(cfg: SystemConfig, R_p_ap: np.ndarray, X_p: np.ndarray,
                    sigma_ap: np.ndarray):
    """Pilot-only channel estimation at a single AP from its own M x T_p
    observations, alternating the local precision and per-user channel
    factors. Returns (H_loc (M, K), cov (K, M, M), gamma_loc).
    """
    M, T_p = R_p_ap.shape
    K = X_p.shape[0]
    lam, U = _prior_eig(sigma_ap)
    h = np.zeros((M, K), dtype=complex)
    cov = sigma_ap.astype(complex).copy()
    cov_tr = np.einsum("kmm->k", sigma_ap).real.copy()
    xp_energy = np.sum(np.abs(X_p) ** 2, axis=1)
    gamma = 0.0
    for _ in range(cfg.cavi_iters):
        E = R_p_ap - h @ X_p
        resid = float(np.sum(np.abs(E) ** 2) + xp_energy @ cov_tr)
        gamma = _gamma_update(cfg.a_p, cfg.b_p, M * T_p, resid)
        max_delta = 0.0
        for i in range(K):
            h_old = h[:, i]
            c = gamma * xp_energy[i]
            cov_i = _posterior_cov(lam[i], U[i], c)
            rhs = gamma * ((E @ np.conj(X_p[i])) + h_old * xp_energy[i])
            h_new = cov_i @ rhs
            E -= np.outer(h_new - h_old, X_p[i])
            max_delta = max(max_delta, float(np.max(np.abs(h_new - h_old))))
            h[:, i] = h_new
            cov[i] = cov_i
            cov_tr[i] = float(np.trace(cov_i).real)
        _check_finite(h)
        if cfg.early_exit_tol is not None and max_delta < cfg.early_exit_tol:
            break
    return h, cov, gamma


def _h_sweep_eq_cpu(h_mean, h_cov, cov_tr, lam, U, gamma_d, x_mean, xabs2,
                    r_mean_d, H_q, hq_bounds, err_var, M, L):
    """E-Q CPU channel sweep: a data-only Gaussian pseudo-prior per (user,
    AP) factor, fused elementwise with the quantized local estimate.
    The fused covariance is diagonal.
    """
    K = h_mean.shape[1]
    E = _residual_blocks(r_mean_d, h_mean, x_mean, L, M)
    xm_abs2 = np.abs(x_mean) ** 2
    lo_re, up_re, lo_im, up_im = hq_bounds
    for i in range(K):
        wd = gamma_d * np.conj(x_mean[i])
        c_i = gamma_d @ xabs2[i]
        self_d = gamma_d @ xm_abs2[i]
        for l in range(L):
            rows = slice(l * M, (l + 1) * M)
            h_old = h_mean[rows, i]
            cov_tilde = _posterior_cov(lam[i, l], U[i, l], c_i)
            h_tilde = cov_tilde @ (E[l] @ wd + h_old * self_d)
            sig_mm = np.diag(cov_tilde).real
            bounds = (lo_re[rows, i], up_re[rows, i], lo_im[rows, i], up_im[rows, i])
            h_new, var_mm = tg.quantized_channel_posterior(
                h_tilde, sig_mm, H_q[rows, i], bounds, err_var)
            delta = h_new - h_old
            h_mean[rows, i] = h_new
            h_cov[i, l] = np.diag(var_mm).astype(complex)
            cov_tr[i, l] = float(np.sum(var_mm))
            E[l] -= np.outer(delta, x_mean[i])


def run_vb_eq(cfg: SystemConfig, block: TransmissionBlock, sigma: np.ndarray):
    """JED with local AP channel estimation, quantized estimates and
    quantized data signals fused at the CPU (estimate-then-quantize).
    """
    if block.Y_d is None or block.quant is None:
        raise ValueError("block carries no quantized signals; run quantize_block first")
    M, L, K = cfg.antennas_per_ap, cfg.num_aps, cfg.num_users
    ML = M * L
    T_d = cfg.data_len

    # AP pre-processing: local CE on raw pilots, then quantize the estimates.
    H_loc = np.empty((ML, K), dtype=complex)
    for l in range(L):
        h_l, _, _ = run_local_ap_ce(cfg, block.R_p[l * M:(l + 1) * M], block.X_p,
                                    sigma[:, l])
        H_loc[l * M:(l + 1) * M] = h_l
    s_h = qz.channel_estimate_scale()
    spec_h = qz.QuantizerSpec(cfg.quant_bits, qz.step_for_bits(cfg.quant_bits), s_h)
    H_q = s_h * qz.quantize_complex(spec_h, H_loc / s_h)
    hq_bounds = _complex_box_bounds(H_q, spec_h)

    # CPU processing on the quantized data block.
    state = _init_state(cfg, sigma, np.zeros((ML, 0)), block.Y_d)
    state.h_mean = H_q.copy()
    state.h_cov = np.zeros((K, L, M, M), dtype=complex)
    cov_tr = np.zeros((K, L))
    lam, U = _prior_eig(sigma)
    bounds_d = _complex_box_bounds(block.Y_d, block.quant)
    log_prior = np.log(cfg.symbol_prior)
    err_var = cfg.ce_err_var
    track_r_var = cfg.include_r_var_in_gamma

    for _ in range(cfg.cavi_iters):
        tr_sum = cov_tr.sum(axis=1)
        xabs2 = state.x_var + np.abs(state.x_mean) ** 2
        hn2_mean = np.sum(np.abs(state.h_mean) ** 2, axis=0)
        Ed = state.r_mean - state.h_mean @ state.x_mean
        resid_d = (np.sum(np.abs(Ed) ** 2, axis=0)
                   + state.x_var.T @ hn2_mean + xabs2.T @ tr_sum)
        if track_r_var:
            resid_d = resid_d + state.r_var.sum(axis=0)
        state.gamma_d = (cfg.a_d + ML) / np.maximum(cfg.b_d + resid_d, _DENOM_CLAMP)
        state.r_mean, state.r_var = _update_r(
            state.h_mean, state.x_mean, state.gamma_d, bounds_d)

        # Same multi-sweep schedule as the joint loop (see _run_jed).
        for _pass in range(cfg.sweep_passes):
            _h_sweep_eq_cpu(state.h_mean, state.h_cov, cov_tr, lam, U,
                            state.gamma_d, state.x_mean, xabs2,
                            state.r_mean, H_q, hq_bounds, err_var, M, L)
            delta = _x_sweep(state.h_mean, cov_tr.sum(axis=1), state.gamma_d,
                             state.r_mean, state.x_pmf, state.x_mean, state.x_var,
                             cfg.constellation, log_prior)
            xabs2 = state.x_var + np.abs(state.x_mean) ** 2
        _check_finite(state.h_mean, state.x_mean, state.gamma_d)
        if cfg.early_exit_tol is not None and delta < cfg.early_exit_tol:
            break

    return state.h_mean.copy(), hard_decision(state.x_pmf, cfg.constellation), state
