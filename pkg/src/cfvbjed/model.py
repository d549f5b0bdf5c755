"""Physical-layer scenario generation.

Correlated Rayleigh channels between K single-antenna users and L access
points with M antennas each, QPSK pilots/data, AWGN uplink, and the
SNR-to-noise mapping N0 = K / SNR used for unit-diagonal covariances.
"""

from dataclasses import dataclass, field

import numpy as np

from . import quantizer as qz

# Unit-energy QPSK, Gray-ordered; index 0 is the hard-decision tie-break.
QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


@dataclass
class SystemConfig:
    """Scenario dimensions and algorithm hyperparameters."""

    num_aps: int = 8                 # L
    antennas_per_ap: int = 4         # M
    num_users: int = 16              # K
    pilot_len: int = 32              # T_p
    data_len: int = 128              # T_d
    snr_db: float = 10.0
    correlation_alpha: complex = 0.0  # |alpha| < 1; 0 = i.i.d. channels
    quant_bits: int | None = None    # None = unquantized fronthaul
    cavi_iters: int = 50
    sweep_passes: int = 3            # (channel, symbol) sweeps per CAVI iteration
    a_p: float = 0.0
    b_p: float = 0.0
    a_d: float = 0.0
    b_d: float = 0.0
    local_ce_err_var: float | None = None  # None = SNR-based schedule
    pilot_mode: str = "qpsk"         # "qpsk" | "dft"
    constellation: np.ndarray = field(default_factory=lambda: QPSK.copy())
    symbol_prior: np.ndarray | None = None  # None = uniform
    master_seed: int = 0
    early_exit_tol: float | None = 1e-6   # None disables early CAVI exit
    include_r_var_in_gamma: bool = True   # ablation switch for tau^r terms

    def __post_init__(self):
        L, M, K = self.num_aps, self.antennas_per_ap, self.num_users
        if min(L, M, K, self.pilot_len, self.data_len, self.cavi_iters,
               self.sweep_passes) < 1:
            raise ValueError("all dimensions must be >= 1")
        if not 1 <= K <= M * L:
            raise ValueError(f"need 1 <= K <= M*L, got K={K}, M*L={M * L}")
        if abs(self.correlation_alpha) >= 1:
            raise ValueError("|correlation_alpha| must be < 1")
        if self.quant_bits is not None and self.quant_bits < 1:
            raise ValueError("quant_bits must be >= 1 or None")
        if min(self.a_p, self.b_p, self.a_d, self.b_d) < 0:
            raise ValueError("Gamma hyperparameters must be non-negative")
        if self.symbol_prior is None:
            self.symbol_prior = np.full(len(self.constellation), 1.0 / len(self.constellation))
        else:
            self.symbol_prior = np.asarray(self.symbol_prior, dtype=float)
            if not np.isclose(self.symbol_prior.sum(), 1.0, atol=1e-9):
                raise ValueError("symbol_prior must sum to 1")

    @property
    def total_len(self) -> int:
        return self.pilot_len + self.data_len

    @property
    def noise_var(self) -> float:
        return snr_to_noise_var(self.snr_db, self.num_users)

    @property
    def ce_err_var(self) -> float:
        """Local channel-estimation error variance N^e for the E-Q CPU.

        Default schedule: 1e-2 up to 10 dB SNR, 1e-4 above.
        """
        if self.local_ce_err_var is not None:
            return self.local_ce_err_var
        return 1e-2 if self.snr_db <= 10.0 else 1e-4


@dataclass
class ChannelState:
    H: np.ndarray       # (M*L, K), AP blocks stacked: rows [l*M:(l+1)*M]
    sigma: np.ndarray   # (K, L, M, M) per-(user, AP) covariance matrices
    beta: np.ndarray    # (K, L) large-scale factors (1 after normalization)


@dataclass
class TransmissionBlock:
    X_p: np.ndarray     # (K, T_p) pilots
    X_d: np.ndarray     # (K, T_d) data symbols
    N0: float
    R_p: np.ndarray     # (M*L, T_p) noisy received pilots
    R_d: np.ndarray     # (M*L, T_d) noisy received data
    Y_p: np.ndarray | None = None   # quantized received pilots (signal units)
    Y_d: np.ndarray | None = None
    quant: qz.QuantizerSpec | None = None


def snr_to_noise_var(snr_db: float, num_users: int) -> float:
    """N0 = K / SNR for unit-diagonal channel covariances and unit symbols."""
    if num_users < 1:
        raise ValueError("num_users must be >= 1")
    return num_users / 10.0 ** (snr_db / 10.0)


def build_exp_correlation(M: int, alpha: complex) -> np.ndarray:
    """Exponential antenna-correlation matrix: [S]_km = alpha^(k-m), k >= m."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if abs(alpha) >= 1:
        raise ValueError("|alpha| must be < 1")
    k = np.arange(M)[:, None]
    m = np.arange(M)[None, :]
    d = k - m
    upper = np.asarray(alpha, dtype=complex) ** np.abs(d)
    sigma = np.where(d >= 0, upper, np.conj(upper))
    return sigma


def make_covariances(cfg: SystemConfig) -> np.ndarray:
    """(K, L, M, M) covariance set; one shared exponential model per AP."""
    base = build_exp_correlation(cfg.antennas_per_ap, cfg.correlation_alpha)
    return np.broadcast_to(base, (cfg.num_users, cfg.num_aps) + base.shape).copy()


def _matrix_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Cholesky factor, falling back to an eigen square root for PSD input."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(sigma)
        if np.min(w) < -1e-10:
            raise
        return v * np.sqrt(np.clip(w, 0.0, None))


def sample_channel(cfg: SystemConfig, sigma: np.ndarray, rng: np.random.Generator) -> ChannelState:
    """Draw h_{i,l} ~ CN(0, Sigma_{i,l}) independently across (i, l)."""
    K, L, M = cfg.num_users, cfg.num_aps, cfg.antennas_per_ap
    g = (rng.standard_normal((K, L, M)) + 1j * rng.standard_normal((K, L, M))) / np.sqrt(2.0)
    H = np.empty((M * L, K), dtype=complex)
    for i in range(K):
        for l in range(L):
            H[l * M:(l + 1) * M, i] = _matrix_sqrt(sigma[i, l]) @ g[i, l]
    return ChannelState(H=H, sigma=sigma, beta=np.ones((K, L)))


def gen_pilots(K: int, T_p: int, rng: np.random.Generator, mode: str = "qpsk") -> np.ndarray:
    """Pilot matrix: i.i.d. unit-power QPSK, or orthogonal DFT rows."""
    if K < 1 or T_p < 1:
        raise ValueError("K and T_p must be >= 1")
    if mode == "qpsk":
        idx = rng.integers(0, 4, size=(K, T_p))
        return QPSK[idx]
    if mode == "dft":
        if T_p < K:
            raise ValueError(f"dft pilots need T_p >= K, got T_p={T_p}, K={K}")
        n = np.arange(T_p)
        return np.exp(-2j * np.pi * np.outer(n[:K], n) / T_p)
    raise ValueError(f"unknown pilot mode {mode!r}")


def gen_data(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Data symbols drawn from the constellation under the symbol prior."""
    idx = rng.choice(len(cfg.constellation), size=(cfg.num_users, cfg.data_len),
                     p=cfg.symbol_prior)
    return cfg.constellation[idx]


def simulate_uplink(cfg: SystemConfig, channel: ChannelState, X_p: np.ndarray,
                    X_d: np.ndarray, rng: np.random.Generator) -> TransmissionBlock:
    """R = H X + N with i.i.d. CN(0, N0) noise entries."""
    ML = cfg.num_aps * cfg.antennas_per_ap
    if X_p.shape != (cfg.num_users, cfg.pilot_len) or X_d.shape != (cfg.num_users, cfg.data_len):
        raise ValueError("pilot/data shapes inconsistent with config")
    if channel.H.shape != (ML, cfg.num_users):
        raise ValueError("channel shape inconsistent with config")
    N0 = cfg.noise_var
    s = np.sqrt(N0 / 2.0)
    noise_p = s * (rng.standard_normal((ML, cfg.pilot_len)) + 1j * rng.standard_normal((ML, cfg.pilot_len)))
    noise_d = s * (rng.standard_normal((ML, cfg.data_len)) + 1j * rng.standard_normal((ML, cfg.data_len)))
    return TransmissionBlock(
        X_p=X_p, X_d=X_d, N0=N0,
        R_p=channel.H @ X_p + noise_p,
        R_d=channel.H @ X_d + noise_d,
    )


def received_quantizer(cfg: SystemConfig) -> qz.QuantizerSpec:
    """Quantizer for fronthaul received signals, bits from the config."""
    if cfg.quant_bits is None:
        raise ValueError("config has no quant_bits set")
    return qz.QuantizerSpec(
        bits=cfg.quant_bits,
        step=qz.step_for_bits(cfg.quant_bits),
        scale=qz.received_signal_scale(cfg.num_users, cfg.noise_var),
    )


def quantize_block(block: TransmissionBlock, spec: qz.QuantizerSpec) -> TransmissionBlock:
    """Attach per-real-dimension quantized fronthaul signals (signal units)."""
    s = spec.scale
    block.Y_p = s * qz.quantize_complex(spec, block.R_p / s)
    block.Y_d = s * qz.quantize_complex(spec, block.R_d / s)
    block.quant = spec
    return block


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Independent, order-insensitive per-trial stream."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, trial_index]))


def make_block(cfg: SystemConfig, trial_index: int) -> tuple[ChannelState, TransmissionBlock]:
    """Full trial realization: covariances, channel, pilots, data, noise.

    Deterministic in (cfg.master_seed, trial_index) and independent of the
    method that later consumes it (common random numbers across methods).
    """
    rng = trial_rng(cfg.master_seed, trial_index)
    sigma = make_covariances(cfg)
    channel = sample_channel(cfg, sigma, rng)
    X_p = gen_pilots(cfg.num_users, cfg.pilot_len, rng, cfg.pilot_mode)
    X_d = gen_data(cfg, rng)
    block = simulate_uplink(cfg, channel, X_p, X_d, rng)
    if cfg.quant_bits is not None:
        quantize_block(block, received_quantizer(cfg))
    return channel, block
