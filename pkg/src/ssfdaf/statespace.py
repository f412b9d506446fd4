"""Kalman E-step and closed-form M-steps of the DFT-domain state-space model.

All per-bin vectors are half spectra (``M // 2 + 1`` bins).  Every update is
elementwise across bins except the overlap-save constraint in the error
computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import constrain_half, constraint_kernel_power, n_bins, to_full, to_half

P_INIT = 1.0
PSI_S_INIT = 1e-3


@dataclass
class FilterState:
    w_hat: np.ndarray  # posterior mean, complex half spectrum
    p_diag: np.ndarray  # diagonal state uncertainty, real half spectrum

    @classmethod
    def initial(cls, n_fft: int, p0: float = P_INIT) -> "FilterState":
        nb = n_bins(n_fft)
        return cls(np.zeros(nb, dtype=complex), np.full(nb, float(p0)))

    def copy(self) -> "FilterState":
        return FilterState(self.w_hat.copy(), self.p_diag.copy())


@dataclass
class SsmParams:
    a: float
    psi_delta: np.ndarray
    psi_s: np.ndarray
    n_fft: int
    shift: int

    @property
    def m_over_r(self) -> float:
        return self.n_fft / self.shift

    def validate(self) -> None:
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"state transition coefficient must lie in (0, 1), got {self.a}")
        for name in ("psi_delta", "psi_s"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass
class EStepOutput:
    state: FilterState
    prior_error: np.ndarray
    gain: np.ndarray


def gain_floor(x_power: np.ndarray, p_pred: np.ndarray) -> float:
    return 1e-12 * max(1.0, float(np.mean(x_power * p_pred)))


def kalman_estep(prev: FilterState, X, y, params: SsmParams) -> EStepOutput:
    """One Kalman update of the DFT-domain filter posterior.

    Per bin::

        w+ = a * w_prev,   P+ = a^2 * P_prev + psi_delta
        gain = P+ / (|X|^2 P+ + (M/R) psi_s + eps)
        e+ = y - C(X w+)
        w = w+ + gain * conj(X) * e+,   P = (1 - (R/M) gain |X|^2) P+

    where ``C`` is the overlap-save constraint.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    for arr in (X, y, prev.w_hat, prev.p_diag, params.psi_delta, params.psi_s):
        if not np.all(np.isfinite(arr)):
            raise ValueError("nonfinite input to the Kalman update")
    n_fft, shift = params.n_fft, params.shift
    a = params.a

    w_pred = a * prev.w_hat
    p_pred = a * a * prev.p_diag + params.psi_delta
    x_power = X.real**2 + X.imag**2
    denom = x_power * p_pred + params.m_over_r * params.psi_s
    gain = p_pred / (denom + gain_floor(x_power, p_pred))

    prior_error = y - constrain_half(X * w_pred, n_fft, shift)
    w_hat = w_pred + gain * np.conj(X) * prior_error
    p_post = (1.0 - (shift / n_fft) * gain * x_power) * p_pred
    # guard the last ulp; the factor is >= 1 - R/M analytically
    np.maximum(p_post, 0.0, out=p_post)
    return EStepOutput(FilterState(w_hat, p_post), prior_error, gain)


def mstep_process_noise(state: FilterState, a: float) -> np.ndarray:
    """Diagonal process-noise covariance ``(1 - a^2)(|w|^2 + P)``."""
    return (1.0 - a * a) * (np.abs(state.w_hat) ** 2 + state.p_diag)


def posterior_error(y, X, state: FilterState, n_fft: int, shift: int) -> np.ndarray:
    return np.asarray(y) - constrain_half(np.asarray(X) * state.w_hat, n_fft, shift)


def mstep_observation_noise(y, X, state: FilterState, n_fft: int, shift: int) -> np.ndarray:
    """Expected posterior error power ``|e|^2 + (R/M)|X|^2 P`` per bin."""
    e = posterior_error(y, X, state, n_fft, shift)
    return np.abs(e) ** 2 + (shift / n_fft) * np.abs(X) ** 2 * state.p_diag


def expected_error_power_exact(y, X, state: FilterState, n_fft: int, shift: int) -> np.ndarray:
    """``|e|^2 + diag(C P C^H)`` evaluated without the diagonal approximation.

    ``diag(G D G^H)`` for the circulant constraint ``G`` is a circular
    convolution of ``D = |X|^2 P`` with the squared kernel.
    """
    e = posterior_error(y, X, state, n_fft, shift)
    d = to_full(np.abs(X) ** 2 * state.p_diag, n_fft)
    kern = constraint_kernel_power(n_fft, shift)
    smeared = np.fft.ifft(np.fft.fft(d) * np.fft.fft(kern)).real
    return np.abs(e) ** 2 + np.maximum(to_half(smeared), 0.0)


def recursive_noise_estimate(prev_psi_s, prior_error, lam: float) -> np.ndarray:
    """Recursive average ``lam * prev + (1 - lam) * |e+|^2``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"smoothing factor must lie in [0, 1], got {lam}")
    return lam * np.asarray(prev_psi_s) + (1.0 - lam) * np.abs(prior_error) ** 2
