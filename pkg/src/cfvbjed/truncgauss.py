"""Numerically stable moments of truncated Gaussians.

All routines are vectorized over numpy arrays and never return NaN/Inf:
tail ratios are evaluated through the scaled complementary error function
(erfcx), and bins whose probability mass underflows fall back to the
degenerate limit (mean clipped into the bin, a small positive variance).
"""

import numpy as np
from scipy.special import erfcx, ndtr

_SQRT_2PI = np.sqrt(2.0 * np.pi)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def _phi(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _xphi(x):
    """x * phi(x) with the convention inf * 0 = 0."""
    out = np.where(np.isinf(x), 0.0, x) * _phi(x)
    return out


def _tail_moments(a, b):
    """Standardized moments on (a, b] for 0 <= a < b (b may be +inf).

    Uses erfcx so that a deep right tail (a >> 0) stays accurate:
        phi(x) / (Phi(b) - Phi(a)) ratios reduce to erfcx quotients.
    Returns (mean, t) with t = (a*phi(a) - b*phi(b)) / Z.
    """
    with np.errstate(invalid="ignore", over="ignore"):
        expo = 0.5 * (a - b) * (a + b)  # (a^2 - b^2)/2 <= 0
        expo = np.where(np.isinf(b), -np.inf, expo)
        d = np.exp(expo)
        ea = erfcx(a / np.sqrt(2.0))
        eb = np.where(np.isinf(b), 0.0, erfcx(np.where(np.isinf(b), 0.0, b) / np.sqrt(2.0)))
        denom = ea - d * eb
        mean = _SQRT_2_OVER_PI * (1.0 - d) / denom
        t = _SQRT_2_OVER_PI * (a - np.where(np.isinf(b), 0.0, b) * d) / denom
    return mean, t


def _std_trunc_moments(a, b):
    """Mean/variance of N(0,1) truncated to (a, b], fully vectorized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    mean = np.zeros_like(a)
    var = np.ones_like(a)

    right = a >= 0  # whole bin in the right tail
    left = b <= 0   # whole bin in the left tail
    mid = ~(right | left)

    if np.any(right):
        m, t = _tail_moments(a[right], b[right])
        mean[right] = m
        var[right] = 1.0 + t - m * m
    if np.any(left):
        # reflect: (a, b] with b <= 0  ->  (-b, -a] in the right tail
        m, t = _tail_moments(-b[left], -a[left])
        mean[left] = -m
        var[left] = 1.0 + t - m * m
    if np.any(mid):
        am, bm = a[mid], b[mid]
        z = ndtr(bm) - ndtr(am)
        with np.errstate(divide="ignore", invalid="ignore"):
            m = (_phi(am) - _phi(bm)) / z
            t = (_xphi(am) - _xphi(bm)) / z
        mean[mid] = m
        var[mid] = 1.0 + t - m * m

    # Degenerate bins (mass underflow) -> point mass at the nearest feasible
    # location; variance from the finite bin width, else a tiny fraction.
    bad = ~(np.isfinite(mean) & np.isfinite(var)) | (var <= 0)
    if np.any(bad):
        both_finite = np.isfinite(a) & np.isfinite(b)
        fb_mean = np.where(both_finite, 0.5 * (a + b), np.where(np.isfinite(a), a, b))
        fb_mean = np.where(np.isfinite(fb_mean), fb_mean, 0.0)
        width2 = np.where(both_finite, (b - a) ** 2 / 12.0, 1e-6)
        mean = np.where(bad, fb_mean, mean)
        var = np.where(bad, np.minimum(width2, 1.0), var)

    # The truncated variance never exceeds the untruncated one.
    var = np.clip(var, 1e-300, 1.0)
    mean = np.clip(mean, np.where(np.isfinite(a), a, -np.inf), np.where(np.isfinite(b), b, np.inf))
    return mean, var


def trunc_norm_moments(mu, var, low, up):
    """Mean and variance of N(mu, var) restricted to the interval (low, up].

    Accepts scalars or broadcastable arrays; var must be positive.
    """
    var_arr = np.asarray(var, dtype=float)
    if np.any(var_arr <= 0):
        raise ValueError("variance must be positive")
    sigma = np.sqrt(var_arr)
    a = (np.asarray(low, dtype=float) - mu) / sigma
    b = (np.asarray(up, dtype=float) - mu) / sigma
    if np.any(a >= b):
        raise ValueError("interval must satisfy low < up")
    m, v = _std_trunc_moments(a, b)
    mean = mu + sigma * m
    out_var = var_arr * v
    if np.ndim(mean) == 0:
        return float(mean), float(out_var)
    return mean, out_var


def trunc_cgauss_moments(mu, nu, low_re, up_re, low_im, up_im):
    """Moments of CN(mu, nu) truncated per real dimension to a box.

    Real and imaginary parts are independent N(Re/Im mu, nu/2) restricted
    to (low_re, up_re] and (low_im, up_im]. Returns (complex mean, total
    variance = var_re + var_im).
    """
    half = np.asarray(nu, dtype=float) / 2.0
    m_re, v_re = trunc_norm_moments(np.real(mu), half, low_re, up_re)
    m_im, v_im = trunc_norm_moments(np.imag(mu), half, low_im, up_im)
    return m_re + 1j * m_im, v_re + v_im


def _fuse_real(m_prior, v_prior, low, up, v_err):
    """Posterior moments of h ~ N(m_prior, v_prior) given that h + e,
    e ~ N(0, v_err), fell into the quantization bin (low, up].

    Marginally z = h + e ~ N(m_prior, v_prior + v_err); conditioning on
    z in the bin gives the exact posterior through the joint-Gaussian
    regression of h on z.
    """
    s2 = v_prior + v_err
    mz, vz = trunc_norm_moments(m_prior, s2, low, up)
    c = v_prior / s2
    mean = m_prior + c * (mz - m_prior)
    var = v_prior * (1.0 - c) + c * c * vz
    return mean, var


def quantized_channel_posterior(h_tilde, sigma_mm, h_q, bounds, err_var):
    """Posterior mean/variance of a channel entry from its quantized local
    estimate and a complex-Gaussian pseudo-prior.

    Model per real dimension: prior N(Re h_tilde, sigma_mm / 2); local
    estimate = truth + error with error variance err_var / 2; the observed
    quantizer output pins the local estimate to its bin.

    Args:
      h_tilde:  pseudo-prior mean (complex, scalar or array)
      sigma_mm: pseudo-prior variance per complex dimension
      h_q:      quantized local estimate (unused beyond its bin -> kept for
                interface symmetry / sanity checks)
      bounds:   (low_re, up_re, low_im, up_im) bin bounds in signal units
      err_var:  local-estimation error variance per complex dimension

    Returns (posterior complex mean, posterior variance var_re + var_im).
    """
    del h_q
    low_re, up_re, low_im, up_im = bounds
    v = np.asarray(sigma_mm, dtype=float) / 2.0
    ve = np.asarray(err_var, dtype=float) / 2.0
    m_re, v_re = _fuse_real(np.real(h_tilde), v, low_re, up_re, ve)
    m_im, v_im = _fuse_real(np.imag(h_tilde), v, low_im, up_im, ve)
    mean = m_re + 1j * m_im
    var = v_re + v_im
    if np.ndim(mean) == 0:
        return complex(mean), float(var)
    return mean, var
