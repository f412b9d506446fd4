"""Block-online echo canceller: E/M-step orchestration for the four adaptation variants.

``EM``      Kalman update then closed-form noise estimate, ``L >= 2`` iterations.
``ME``      recursive-average noise estimate from the prior error, then one Kalman update.
``NMF_EM``  as ``EM`` but the noise covariance is ``T v`` with ``v`` fitted by IS-NMF steps.
``NMF_ME``  dictionary fit to the instantaneous prior error power, then one Kalman update.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import spectral
from .noisemodel import (
    NoiseDictionary,
    TrainingBuffer,
    infer_activations,
    initial_activations,
    maybe_collect,
    synthesize_cov,
)
from .statespace import (
    P_INIT,
    PSI_S_INIT,
    FilterState,
    SsmParams,
    expected_error_power_exact,
    kalman_estep,
    mstep_observation_noise,
    mstep_process_noise,
    recursive_noise_estimate,
)

VARIANTS = ("EM", "ME", "NMF_EM", "NMF_ME")


@dataclass(frozen=True)
class VariantConfig:
    variant: str = "NMF_EM"
    n_iter: int = 2  # L
    mm_steps: int = 3  # P
    lam: float = 0.5
    a: float = 0.9999
    n_fft: int = 1536
    shift: int = 512
    k: int = 10
    exact_error_power: bool = False

    @classmethod
    def for_variant(cls, variant: str, **kw) -> "VariantConfig":
        """Config with the iteration count implied by the variant (2 for EM orders, 1 for ME)."""
        variant = normalize_variant(variant)
        kw.setdefault("n_iter", 2 if variant in ("EM", "NMF_EM") else 1)
        return cls(variant=variant, **kw)

    @property
    def uses_dictionary(self) -> bool:
        return self.variant.startswith("NMF")

    @property
    def label(self) -> str:
        return f"{self.variant.replace('_', '-')}-{self.n_iter}"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant: unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.variant in ("EM", "NMF_EM") and self.n_iter < 2:
            raise ValueError(f"n_iter: {self.variant} needs at least 2 iterations, got {self.n_iter}")
        if self.variant in ("ME", "NMF_ME") and self.n_iter != 1:
            raise ValueError(f"n_iter: {self.variant} is defined for exactly 1 iteration, got {self.n_iter}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam: must lie in [0, 1], got {self.lam}")
        if self.mm_steps < 1:
            raise ValueError(f"mm_steps: must be >= 1, got {self.mm_steps}")
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"a: must lie in (0, 1), got {self.a}")
        if self.n_fft < 2 or self.n_fft % 2:
            raise ValueError(f"n_fft: must be even, got {self.n_fft}")
        if not 0 < self.shift < self.n_fft:
            raise ValueError(f"shift: must satisfy 0 < R < M, got {self.shift}")
        if self.k < 1:
            raise ValueError(f"k: must be >= 1, got {self.k}")


def normalize_variant(name: str) -> str:
    """Accept ``NMF-EM-2``, ``nmf_em``, ``ssfdaf-me-1`` and similar spellings."""
    key = name.strip().upper().replace("-", "_")
    if key.startswith("SSFDAF_"):
        key = key[len("SSFDAF_"):]
    parts = key.split("_")
    if parts and parts[-1].isdigit():
        parts = parts[:-1]
    key = "_".join(parts)
    if key not in VARIANTS:
        raise ValueError(f"variant: unknown variant {name!r}, expected one of {VARIANTS}")
    return key


@dataclass
class BlockResult:
    echo_estimate: np.ndarray
    error: np.ndarray
    prior_error_time: np.ndarray
    state: FilterState
    psi_s: np.ndarray


class EchoCanceller:
    """One adaptive-filter context.  Not thread-safe; use one instance per worker."""

    def __init__(
        self,
        config: VariantConfig,
        dictionary: NoiseDictionary | None = None,
        p0: float = P_INIT,
        psi_s0: float = PSI_S_INIT,
        training_buffer: TrainingBuffer | None = None,
        collect_threshold: float | None = None,
    ):
        config.validate()
        if config.uses_dictionary:
            if dictionary is None:
                raise ValueError(f"variant {config.variant} requires a noise dictionary")
            if dictionary.n_fft != config.n_fft:
                raise ValueError(
                    f"dictionary was trained for M={dictionary.n_fft}, filter uses M={config.n_fft}"
                )
        self.config = config
        self.dictionary = dictionary
        self.p0 = p0
        self.psi_s0 = psi_s0
        self.training_buffer = training_buffer
        self.collect_threshold = collect_threshold
        self.reset()

    def reset(self) -> "EchoCanceller":
        cfg = self.config
        nb = spectral.n_bins(cfg.n_fft)
        self.state = FilterState.initial(cfg.n_fft, self.p0)
        self.psi_s = np.full(nb, float(self.psi_s0))
        self.psi_delta = mstep_process_noise(self.state, cfg.a)
        self.v = None  # lazily set from the first observed power
        self.n_blocks = 0
        self._x_power_mean = 0.0
        return self

    def _params(self) -> SsmParams:
        cfg = self.config
        return SsmParams(cfg.a, self.psi_delta, self.psi_s, cfg.n_fft, cfg.shift)

    def _error_power(self, y, X, state):
        cfg = self.config
        if cfg.exact_error_power:
            return expected_error_power_exact(y, X, state, cfg.n_fft, cfg.shift)
        return mstep_observation_noise(y, X, state, cfg.n_fft, cfg.shift)

    def _fit_noise(self, target) -> None:
        cfg = self.config
        self.v = infer_activations(self.dictionary, self.v, target, cfg.mm_steps)
        self.psi_s = synthesize_cov(self.dictionary, self.v)

    def process_block(self, x_block, y_block) -> BlockResult:
        """Advance the filter by one block.

        ``x_block`` holds the latest ``M`` input samples, ``y_block`` the
        latest ``R`` observed samples.
        """
        cfg = self.config
        x_block = np.asarray(x_block, dtype=float)
        y_block = np.asarray(y_block, dtype=float)
        if x_block.shape != (cfg.n_fft,) or y_block.shape != (cfg.shift,):
            raise ValueError(
                f"expected input block of {cfg.n_fft} and observation block of {cfg.shift} samples"
            )
        X = spectral.rdft(x_block)
        y = spectral.freq_observation(y_block, cfg.n_fft)

        if cfg.uses_dictionary and self.v is None:
            self.v = initial_activations(self.dictionary, np.abs(y) ** 2)
            self.psi_s = synthesize_cov(self.dictionary, self.v)

        prev = self.state
        prior_error = None
        if cfg.variant in ("EM", "NMF_EM"):
            for _ in range(cfg.n_iter):
                out = kalman_estep(prev, X, y, self._params())
                prior_error = out.prior_error
                self.psi_delta = mstep_process_noise(out.state, cfg.a)
                target = self._error_power(y, X, out.state)
                if cfg.variant == "EM":
                    self.psi_s = target
                else:
                    self._fit_noise(target)
            state = out.state
        else:
            w_pred = cfg.a * prev.w_hat
            prior_error = y - spectral.constrain_half(X * w_pred, cfg.n_fft, cfg.shift)
            if cfg.variant == "ME":
                self.psi_s = recursive_noise_estimate(self.psi_s, prior_error, cfg.lam)
            else:
                self._fit_noise(np.abs(prior_error) ** 2)
            out = kalman_estep(prev, X, y, self._params())
            state = out.state
            self.psi_delta = mstep_process_noise(state, cfg.a)

        self.state = state
        self.n_blocks += 1

        if self.training_buffer is not None:
            self._x_power_mean += (np.mean(x_block**2) - self._x_power_mean) / self.n_blocks
            threshold = self.collect_threshold
            if threshold is None:
                # 40 dB below the running mean input power
                threshold = 1e-4 * self._x_power_mean
            maybe_collect(self.training_buffer, x_block, y_block, threshold, shift=cfg.shift)

        echo = spectral.overlap_save_convolve(X, state.w_hat, cfg.n_fft, cfg.shift)
        prior_time = np.fft.irfft(prior_error, cfg.n_fft)[cfg.n_fft - cfg.shift :]
        return BlockResult(
            echo_estimate=echo,
            error=y_block - echo,
            prior_error_time=prior_time,
            state=state,
            psi_s=self.psi_s.copy(),
        )

    def filter_taps(self) -> np.ndarray:
        """Time-domain estimate: first ``M - R`` samples of the inverse DFT of the mean."""
        cfg = self.config
        return np.fft.irfft(self.state.w_hat, cfg.n_fft)[: cfg.n_fft - cfg.shift]

    def run(self, x, y, callback=None):
        """Stream whole signals block by block.

        Returns ``(echo_estimate, error)`` of length ``n_blocks * R``.
        ``callback(tau, result)`` is invoked after every block.
        """
        cfg = self.config
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n_blocks = min(x.size, y.size) // cfg.shift
        echo = np.zeros(n_blocks * cfg.shift)
        err = np.zeros(n_blocks * cfg.shift)
        for tau in range(1, n_blocks + 1):
            xb = spectral.make_input_block(x, tau, cfg.n_fft, cfg.shift)
            yb = y[(tau - 1) * cfg.shift : tau * cfg.shift]
            res = self.process_block(xb, yb)
            sl = slice((tau - 1) * cfg.shift, tau * cfg.shift)
            echo[sl] = res.echo_estimate
            err[sl] = res.error
            if callback is not None:
                callback(tau, res)
        return echo, err


def make_canceller(variant: str, dictionary=None, **overrides) -> EchoCanceller:
    cfg = VariantConfig.for_variant(variant, **overrides)
    return EchoCanceller(cfg, dictionary)


def with_variant(config: VariantConfig, variant: str) -> VariantConfig:
    variant = normalize_variant(variant)
    n_iter = config.n_iter if variant in ("EM", "NMF_EM") else 1
    if variant in ("EM", "NMF_EM") and n_iter < 2:
        n_iter = 2
    return replace(config, variant=variant, n_iter=n_iter)
