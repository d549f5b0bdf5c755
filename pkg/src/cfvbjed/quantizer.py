"""Uniform scalar quantizer for fronthaul signals and local channel estimates.

The quantizer has 2^b - 1 thresholds d_i = (-2^(b-1) + i) * step for
i = 1 .. 2^b - 1, so every bin is the half-open interval (d_{i-1}, d_i]
with d_0 = -inf and d_{2^b} = +inf. The reconstruction level of bin i is
its midpoint, except for the two unbounded outer bins whose levels sit
step/2 beyond the outermost thresholds.

Inputs are assumed normalized to unit variance per real dimension; the
`scale` field records the normalization factor so callers can map levels
and bin bounds back to signal units.
"""

from dataclasses import dataclass

import numpy as np

# Minimum-MSE uniform step for a zero-mean unit-variance Gaussian input
# (classic uniform Lloyd-Max table).
_MSE_OPT_STEP = {1: 1.596, 2: 0.996, 3: 0.586, 4: 0.335}


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int
    step: float
    scale: float = 1.0

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def num_levels(self) -> int:
        return 2 ** self.bits

    def levels(self) -> np.ndarray:
        """All reconstruction levels, in increasing order (normalized units)."""
        i = np.arange(1, self.num_levels + 1)
        return (i - 2 ** (self.bits - 1) - 0.5) * self.step


def default_step(bits: int) -> float:
    """Minimum-MSE uniform quantizer step for N(0, 1) input, b in 1..4."""
    try:
        return _MSE_OPT_STEP[bits]
    except KeyError:
        raise ValueError(f"no default step for bits={bits}; supported: 1..4")


def step_for_bits(bits: int) -> float:
    """`default_step` extended past the table for high-resolution emulation.

    For b > 4 the levels span roughly [-5, 5], which is more than enough
    for unit-variance inputs; the per-bin width shrinks as 2^-b.
    """
    if bits <= 4:
        return default_step(bits)
    return 10.0 / 2 ** bits


def _bin_index(spec: QuantizerSpec, r):
    """1-based bin index of each entry of r; bin i is (d_{i-1}, d_i]."""
    half = 2 ** (spec.bits - 1)
    i = np.ceil(np.asarray(r, dtype=float) / spec.step) + half
    return np.clip(i, 1, spec.num_levels).astype(np.int64)


def quantize(spec: QuantizerSpec, r):
    """Quantize real input (normalized units) to its reconstruction level."""
    i = _bin_index(spec, r)
    q = (i - 2 ** (spec.bits - 1) - 0.5) * spec.step
    return q if np.ndim(r) else float(q)


def quantize_complex(spec: QuantizerSpec, r):
    """Apply `quantize` independently to real and imaginary parts."""
    q = quantize(spec, np.real(r)) + 1j * quantize(spec, np.imag(r))
    return q if np.ndim(r) else complex(q)


def bin_bounds(spec: QuantizerSpec, q: float) -> tuple[float, float]:
    """(low, up] bounds of the bin whose reconstruction level is q.

    The bottom bin has low = -inf, the top bin up = +inf. Raises if q is
    not a reconstruction level of `spec`.
    """
    half = 2 ** (spec.bits - 1)
    i_float = q / spec.step + 0.5 + half
    i = int(round(i_float))
    if not (1 <= i <= spec.num_levels) or abs(i_float - i) > 1e-9:
        raise ValueError(f"{q} is not a reconstruction level of {spec}")
    low = -np.inf if i == 1 else (i - 1 - half) * spec.step
    up = np.inf if i == spec.num_levels else (i - half) * spec.step
    return low, up


def bin_bounds_array(spec: QuantizerSpec, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized `bin_bounds` (no level validation) for real-valued q."""
    half = 2 ** (spec.bits - 1)
    i = np.rint(np.asarray(q, dtype=float) / spec.step + 0.5 + half).astype(np.int64)
    low = (i - 1 - half) * spec.step
    up = (i - half) * spec.step
    low = np.where(i <= 1, -np.inf, low)
    up = np.where(i >= spec.num_levels, np.inf, up)
    return low, up


def received_signal_scale(num_users: int, noise_var: float) -> float:
    """Per-real-dimension RMS of a received-signal entry.

    With unit-diagonal channel covariances and unit-energy symbols,
    E|r|^2 = K + N0, so each real dimension has variance (K + N0) / 2.
    Both ends compute it from the model, never from the realization.
    """
    return float(np.sqrt((num_users + noise_var) / 2.0))


def channel_estimate_scale() -> float:
    """Per-real-dimension RMS of a unit-variance channel coefficient."""
    return float(np.sqrt(0.5))
