"""Reference methods: LMMSE estimate+detect, genie-CSI VB data detection,
and genie-data VB channel estimation."""

import numpy as np

from . import vb
from .model import SystemConfig, TransmissionBlock


def lmmse_channel_estimate(R_p: np.ndarray, X_p: np.ndarray, sigma: np.ndarray,
                           N0: float) -> np.ndarray:
    """Exact linear MMSE estimate of H from the pilot block, per AP.

    vec(R_l) = (X_p^T kron I_M) vec(H_l) + n with block-diagonal prior
    covariance over users. Uses the covariance form so the noiseless case
    stays well defined (pseudo-inverse when the Gram matrix is singular).
    """
    K, T_p = X_p.shape
    ML = R_p.shape[0]
    L = sigma.shape[1]
    M = ML // L
    A = np.kron(X_p.T, np.eye(M))          # (M*T_p, M*K)
    H_hat = np.empty((ML, K), dtype=complex)
    for l in range(L):
        C = np.zeros((M * K, M * K), dtype=complex)
        for i in range(K):
            C[i * M:(i + 1) * M, i * M:(i + 1) * M] = sigma[i, l]
        CAh = C @ A.conj().T
        S = A @ CAh + N0 * np.eye(M * T_p)
        y = R_p[l * M:(l + 1) * M].flatten(order="F")
        if N0 > 0:
            w = np.linalg.solve(S, y)
        else:
            w = np.linalg.pinv(S, rcond=1e-12) @ y
        H_hat[l * M:(l + 1) * M] = (CAh @ w).reshape(M, K, order="F")
    return H_hat


def lmmse_detect(H_hat: np.ndarray, R_d: np.ndarray, N0: float,
                 constellation: np.ndarray) -> np.ndarray:
    """Regularized linear MMSE equalizer followed by nearest-symbol slicing."""
    K = H_hat.shape[1]
    G = H_hat.conj().T @ H_hat + N0 * np.eye(K)
    X_tilde = np.linalg.solve(G, H_hat.conj().T @ R_d)
    d2 = np.abs(X_tilde[..., None] - constellation[None, None, :]) ** 2
    return constellation[np.argmin(d2, axis=-1)]


def run_lmmse_pfl(cfg: SystemConfig, block: TransmissionBlock, sigma: np.ndarray):
    """Pilot-based LMMSE channel estimation, then LMMSE data detection."""
    H_hat = lmmse_channel_estimate(block.R_p, block.X_p, sigma, block.N0)
    X_hat = lmmse_detect(H_hat, block.R_d, block.N0, cfg.constellation)
    return H_hat, X_hat


def run_vb_dd_pfl(cfg: SystemConfig, block: TransmissionBlock, H_true: np.ndarray):
    """Genie-CSI VB data detection: only the precision and symbol factors
    iterate, with the channel pinned to the truth (zero covariance)."""
    ML = H_true.shape[0]
    K, T_d = cfg.num_users, cfg.data_len
    n_sym = len(cfg.constellation)
    x_pmf = np.tile(cfg.symbol_prior, (K, T_d, 1))
    x_mean = np.zeros((K, T_d), dtype=complex)
    x_var = np.ones((K, T_d))
    cov_tr_sum = np.zeros(K)
    hn2_mean = np.sum(np.abs(H_true) ** 2, axis=0)
    log_prior = np.log(cfg.symbol_prior)
    for _ in range(cfg.cavi_iters):
        Ed = block.R_d - H_true @ x_mean
        resid_d = np.sum(np.abs(Ed) ** 2, axis=0) + x_var.T @ hn2_mean
        gamma_d = (cfg.a_d + ML) / np.maximum(cfg.b_d + resid_d, 1e-12)
        delta = vb._x_sweep(H_true, cov_tr_sum, gamma_d, block.R_d,
                            x_pmf, x_mean, x_var, cfg.constellation, log_prior)
        if cfg.early_exit_tol is not None and delta < cfg.early_exit_tol:
            break
    return vb.hard_decision(x_pmf, cfg.constellation)


def run_vb_ce_pfl(cfg: SystemConfig, block: TransmissionBlock, sigma: np.ndarray):
    """Genie-data VB channel estimation: the whole block is treated as
    pilots, so only the precision and channel factors iterate."""
    X_all = np.hstack([block.X_p, block.X_d])
    R_all = np.hstack([block.R_p, block.R_d])
    ML = R_all.shape[0]
    state = vb._run_jed(cfg, sigma, X_all, R_all, np.zeros((ML, 0), dtype=complex))
    return state.h_mean.copy()
