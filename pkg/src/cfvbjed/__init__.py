"""Variational-Bayes joint channel estimation and data detection for
cell-free massive MIMO uplinks with limited fronthaul."""

from .model import (
    QPSK,
    SystemConfig,
    ChannelState,
    TransmissionBlock,
    build_exp_correlation,
    make_block,
    snr_to_noise_var,
)
from .quantizer import QuantizerSpec, default_step, step_for_bits
from .truncgauss import trunc_norm_moments, trunc_cgauss_moments
from .vb import run_vb_pfl, run_vb_qe, run_vb_eq, NumericsError
from .baselines import run_lmmse_pfl, run_vb_dd_pfl, run_vb_ce_pfl
from .experiments import (
    compute_ser,
    compute_nmse_db,
    fronthaul_overhead_bits,
    run_trial,
    run_sweep,
)

__all__ = [
    "QPSK",
    "SystemConfig",
    "ChannelState",
    "TransmissionBlock",
    "build_exp_correlation",
    "make_block",
    "snr_to_noise_var",
    "QuantizerSpec",
    "default_step",
    "step_for_bits",
    "trunc_norm_moments",
    "trunc_cgauss_moments",
    "run_vb_pfl",
    "run_vb_qe",
    "run_vb_eq",
    "NumericsError",
    "run_lmmse_pfl",
    "run_vb_dd_pfl",
    "run_vb_ce_pfl",
    "compute_ser",
    "compute_nmse_db",
    "fronthaul_overhead_bits",
    "run_trial",
    "run_sweep",
]

__version__ = "0.1.0"
