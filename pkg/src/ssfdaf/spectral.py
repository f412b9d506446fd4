"""DFT helpers, overlap-save block framing and STFT training matrices.

Convention: the forward DFT is unnormalized and the inverse carries the 1/M
factor (``numpy.fft`` defaults).  Spectra of real blocks are stored as
non-redundant half spectra of ``M // 2 + 1`` bins; :func:`to_full` mirrors
them back to length ``M`` when a full spectrum is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window


def _check_even(n_fft: int) -> None:
    if n_fft < 2 or n_fft % 2:
        raise ValueError(f"block length must be even and >= 2, got {n_fft}")


def _check_shift(n_fft: int, shift: int) -> None:
    _check_even(n_fft)
    if not 0 < shift < n_fft:
        raise ValueError(f"block shift must satisfy 0 < R < M, got R={shift}, M={n_fft}")


def n_bins(n_fft: int) -> int:
    return n_fft // 2 + 1


def dft(block) -> np.ndarray:
    """Full-length forward DFT of a real block of even length."""
    block = np.asarray(block, dtype=float)
    if block.ndim != 1:
        raise ValueError("dft expects a 1-D block")
    _check_even(block.size)
    return np.fft.fft(block)


def idft(spectrum) -> np.ndarray:
    """Inverse of :func:`dft`; returns the real part (spectrum is assumed Hermitian)."""
    return np.fft.ifft(spectrum).real


def rdft(block) -> np.ndarray:
    """Half-spectrum forward DFT (bins 0..M/2)."""
    block = np.asarray(block, dtype=float)
    _check_even(block.shape[-1])
    return np.fft.rfft(block)


def irdft(half, n_fft: int) -> np.ndarray:
    return np.fft.irfft(half, n_fft)


def to_full(half, n_fft: int) -> np.ndarray:
    """Mirror a half spectrum (complex or real-valued covariance) to length ``n_fft``.

    The mirrored part is ``conj(half[M/2-1:0:-1])``; for real vectors this is a
    plain reversal, so covariance diagonals come out exactly symmetric.
    """
    half = np.asarray(half)
    if half.shape[0] != n_bins(n_fft):
        raise ValueError(f"expected {n_bins(n_fft)} bins, got {half.shape[0]}")
    tail = half[n_fft // 2 - 1 : 0 : -1]
    if np.iscomplexobj(half):
        tail = np.conj(tail)
    return np.concatenate([half, tail])


def to_half(full) -> np.ndarray:
    full = np.asarray(full)
    _check_even(full.shape[0])
    return full[: n_bins(full.shape[0])]


def make_input_block(stream, tau: int, n_fft: int, shift: int) -> np.ndarray:
    """Return input samples ``x[tau*R - M : tau*R]`` (0-based), zero before the stream start.

    ``tau`` is the 1-based block index, so block 1 ends at sample ``R - 1``.
    """
    _check_shift(n_fft, shift)
    stream = np.asarray(stream, dtype=float)
    stop = tau * shift
    start = stop - n_fft
    out = np.zeros(n_fft)
    lo = max(start, 0)
    hi = min(stop, stream.size)
    if hi > lo:
        out[lo - start : hi - start] = stream[lo:hi]
    return out


def make_observation_block(stream, tau: int, shift: int) -> np.ndarray:
    """Return observed samples ``y[tau*R - R : tau*R]`` (0-based), zero outside the stream."""
    stream = np.asarray(stream, dtype=float)
    stop = tau * shift
    start = stop - shift
    out = np.zeros(shift)
    lo = max(start, 0)
    hi = min(stop, stream.size)
    if hi > lo:
        out[lo - start : hi - start] = stream[lo:hi]
    return out


def filter_spectrum(taps, n_fft: int) -> np.ndarray:
    """Half spectrum of an FIR filter zero-padded to ``n_fft`` (the zero-padding structure)."""
    taps = np.asarray(taps, dtype=float)
    if taps.size > n_fft:
        raise ValueError("filter longer than the DFT length")
    padded = np.zeros(n_fft)
    padded[: taps.size] = taps
    return np.fft.rfft(padded)


def overlap_save_convolve(X, w, n_fft: int, shift: int) -> np.ndarray:
    """Last ``R`` samples of the circular convolution of the block with the filter.

    ``X`` and ``w`` are half spectra.  If ``w`` holds at most ``M - R`` taps,
    the result equals the linear convolution output for those samples.
    """
    _check_shift(n_fft, shift)
    return np.fft.irfft(np.asarray(X) * np.asarray(w), n_fft)[n_fft - shift :]


def freq_observation(block, n_fft: int) -> np.ndarray:
    """Half spectrum of an ``R``-sample block zero-padded in front to length ``n_fft``."""
    block = np.asarray(block, dtype=float)
    shift = block.size
    _check_shift(n_fft, shift)
    padded = np.zeros(n_fft)
    padded[n_fft - shift :] = block
    return np.fft.rfft(padded)


def apply_overlap_save_constraint(v, shift: int) -> np.ndarray:
    """Project a full-length spectrum onto signals supported on the last ``R`` time samples.

    Works for arbitrary complex vectors (no symmetry assumed).
    """
    v = np.asarray(v, dtype=complex)
    n_fft = v.shape[0]
    _check_shift(n_fft, shift)
    t = np.fft.ifft(v)
    t[: n_fft - shift] = 0.0
    return np.fft.fft(t)


def constrain_half(v_half, n_fft: int, shift: int) -> np.ndarray:
    """Half-spectrum version of :func:`apply_overlap_save_constraint` for Hermitian input."""
    t = np.fft.irfft(v_half, n_fft)
    t[: n_fft - shift] = 0.0
    return np.fft.rfft(t)


def constraint_kernel_power(n_fft: int, shift: int) -> np.ndarray:
    """Squared magnitude of the circulant constraint kernel, indexed by bin lag.

    The constraint ``F Q1 Q1^T F^-1`` is circulant with first column ``g``;
    ``[G D G^H]_mm = sum_n |g[m-n]|^2 d_n`` for a diagonal ``D``.  The entries
    sum to ``R / M``.
    """
    _check_shift(n_fft, shift)
    mask = np.zeros(n_fft)
    mask[n_fft - shift :] = 1.0
    g = np.fft.fft(mask) / n_fft
    return np.abs(g) ** 2


@dataclass
class TrainingMatrix:
    spectra: np.ndarray  # (M, N) complex, one column per frame
    frame_shift: int
    window: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.spectra.shape[1]

    def half_power(self) -> np.ndarray:
        """|S|^2 restricted to the non-redundant bins, shape (M/2+1, N)."""
        return np.abs(self.spectra[: n_bins(self.spectra.shape[0])]) ** 2


def make_window(name: str, n_fft: int) -> np.ndarray:
    # periodic (DFT-even) windows, as used for spectral analysis
    return get_window(name, n_fft, fftbins=True)


def stft_training(signal, n_fft: int, frame_shift: int, window="hamming") -> TrainingMatrix:
    """Frame, window and DFT a training signal; frames are not zero-padded.

    ``window`` is either a scipy window name or an explicit length-``n_fft``
    weight vector.
    """
    _check_even(n_fft)
    signal = np.asarray(signal, dtype=float)
    if frame_shift < 1:
        raise ValueError("frame shift must be positive")
    if signal.size < n_fft:
        raise ValueError(
            f"training signal has {signal.size} samples, need at least one frame of {n_fft}"
        )
    if isinstance(window, str):
        win = make_window(window, n_fft)
    else:
        win = np.asarray(window, dtype=float)
        if win.shape != (n_fft,):
            raise ValueError("window length must equal the frame length")
    n_frames = (signal.size - n_fft) // frame_shift + 1
    idx = np.arange(n_fft)[None, :] + frame_shift * np.arange(n_frames)[:, None]
    frames = signal[idx] * win[None, :]
    spectra = np.fft.fft(frames, axis=1).T
    return TrainingMatrix(spectra=spectra, frame_shift=frame_shift, window=win)
