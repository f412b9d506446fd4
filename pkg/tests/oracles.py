"""Independent reference implementations used as test oracles."""

import cmath

import numpy as np

from ssfdaf import spectral
from ssfdaf.statespace import FilterState, SsmParams, kalman_estep


def naive_dft(x):
    """Reference O(M^2) DFT sum."""
    n = len(x)
    return np.array(
        [sum(x[k] * cmath.exp(-2j * cmath.pi * k * m / n) for k in range(n)) for m in range(n)]
    )


def naive_linear_conv(x, w, n_out):
    """y[n] = sum_k w[k] x[n-k] for n < n_out, with x zero outside its support."""
    y = np.zeros(n_out)
    for n in range(n_out):
        acc = 0.0
        for k in range(len(w)):
            if 0 <= n - k < len(x):
                acc += w[k] * x[n - k]
        y[n] = acc
    return y


def innovation_time_domain(x_block, y_block, w_pred_half, n_fft, shift):
    """Prior error via explicit circular convolution in time, then zero-padded DFT."""
    w_time = np.fft.irfft(w_pred_half, n_fft)
    circ = np.array([sum(w_time[k] * x_block[(n - k) % n_fft] for k in range(n_fft)) for n in range(n_fft)])
    e_time = np.concatenate([np.zeros(n_fft - shift), y_block - circ[n_fft - shift :]])
    return np.fft.rfft(e_time)


def scalar_kalman(w_prev, p_prev, x, e, a, psi_delta, psi_s, r_over_m, eps):
    """Textbook scalar Kalman step with observation scale x, observation noise psi_s / (R/M)
    and the R/M variance contraction."""
    w_pred = a * w_prev
    p_pred = a * a * p_prev + psi_delta
    s = abs(x) ** 2 * p_pred + psi_s / r_over_m + eps
    k = p_pred / s
    w = w_pred + k * x.conjugate() * e
    p = (1.0 - r_over_m * k * abs(x) ** 2) * p_pred
    return w, p, k


def random_case(rng, n_fft, shift):
    nb = n_fft // 2 + 1
    x_block = rng.standard_normal(n_fft) * rng.uniform(0.1, 3)
    y_block = rng.standard_normal(shift) * rng.uniform(0.1, 3)
    w_prev = np.fft.rfft(rng.standard_normal(n_fft - shift), n_fft) * rng.uniform(0.01, 1)
    prev = FilterState(w_prev, rng.uniform(0, 2, nb))
    params = SsmParams(
        a=rng.uniform(0.5, 0.99999),
        psi_delta=rng.uniform(0, 1e-2, nb),
        psi_s=10.0 ** rng.uniform(-6, 1, nb),
        n_fft=n_fft,
        shift=shift,
    )
    return x_block, y_block, prev, params


def check_against_scalar_oracle(rng, n_fft, shift):
    x_block, y_block, prev, params = random_case(rng, n_fft, shift)
    X = spectral.rdft(x_block)
    y = spectral.freq_observation(y_block, n_fft)
    out = kalman_estep(prev, X, y, params)

    e = innovation_time_domain(x_block, y_block, params.a * prev.w_hat, n_fft, shift)
    p_pred = params.a**2 * prev.p_diag + params.psi_delta
    eps = 1e-12 * max(1.0, float(np.mean(np.abs(X) ** 2 * p_pred)))
    for m in range(len(X)):
        w, p, k = scalar_kalman(
            complex(prev.w_hat[m]), float(prev.p_diag[m]), complex(X[m]), complex(e[m]),
            params.a, float(params.psi_delta[m]), float(params.psi_s[m]), shift / n_fft, eps,
        )
        scale = max(1.0, abs(w))
        assert abs(out.state.w_hat[m] - w) <= 1e-10 * scale
        assert abs(out.state.p_diag[m] - p) <= 1e-10 * max(1.0, p)
        assert abs(out.gain[m] - k) <= 1e-10 * max(1.0, k)
        assert abs(out.prior_error[m] - e[m]) <= 1e-10 * max(1.0, abs(e[m]))


def known_psd_run(n_fft, shift, snr_db, exact, n_blocks, seed=0, variant="NMF_EM"):
    """Echo plus stationary FIR-coloured noise whose PSD is one dictionary atom.

    Returns (mean estimated psi_s over the second half, true per-bin noise power).
    """
    from scipy.signal import lfilter

    from ssfdaf.engine import EchoCanceller, VariantConfig
    from ssfdaf.harness import synth_rir
    from ssfdaf.noisemodel import NoiseDictionary

    rng = np.random.default_rng(seed)
    g = np.array([1.0, -0.6, 0.3])
    n = shift * n_blocks
    x = rng.standard_normal(n)
    h = synth_rir(rng, n_fft - shift, 0.03, 8, 8000)
    echo = np.convolve(x, h)[:n]
    s = lfilter(g, 1.0, rng.standard_normal(n))
    gain = np.sqrt(np.sum(echo**2) / np.sum(s**2) / 10 ** (snr_db / 10))
    # a zero-padded R-sample noise block has E|S_m|^2 = R * sigma^2 |G_m|^2
    true = shift * gain**2 * np.abs(np.fft.rfft(g, n_fft)) ** 2
    d = NoiseDictionary((true / true.max())[:, None], n_fft)
    cfg = VariantConfig.for_variant(variant, n_fft=n_fft, shift=shift, exact_error_power=exact)
    ec = EchoCanceller(cfg, d)
    acc = []
    ec.run(x, echo + gain * s, lambda tau, r: acc.append(r.psi_s) if tau > n_blocks // 2 else None)
    return np.mean(acc, axis=0), true
