"""Itakura-Saito NMF noise dictionary: training, online activation inference, persistence."""

from __future__ import annotations

import io
import logging
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .spectral import n_bins, stft_training, to_full

logger = logging.getLogger(__name__)

FLOOR_T = 1e-10
FLOOR_V = 1e-10
POWER_FLOOR = 1e-12

DICT_MAGIC = "ssfdaf-dictionary v1"


@dataclass
class NoiseDictionary:
    """Nonnegative half-spectrum basis, shape ``(M/2 + 1, K)``."""

    t: np.ndarray
    n_fft: int
    sample_rate: int = 16000
    window: str = "hamming"
    frame_shift: int = 512

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.t.ndim != 2 or self.t.shape[1] < 1:
            raise ValueError("dictionary must be a 2-D matrix with at least one atom")
        if self.t.shape[0] != n_bins(self.n_fft):
            raise ValueError(
                f"dictionary has {self.t.shape[0]} rows, expected {n_bins(self.n_fft)} for M={self.n_fft}"
            )
        if np.any(~np.isfinite(self.t)) or np.any(self.t < FLOOR_T):
            raise ValueError("dictionary entries must be finite and >= the floor")

    @property
    def k(self) -> int:
        return self.t.shape[1]

    def full(self) -> np.ndarray:
        return to_full(self.t, self.n_fft)


def is_divergence(power, model) -> float:
    """Itakura-Saito divergence ``sum(p/q - log(p/q) - 1)``.

    Zero power entries contribute ``-log(0)``; callers floor the target first.
    """
    p = np.asarray(power, dtype=float)
    q = np.asarray(model, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    if np.any(q <= 0):
        raise ValueError("model entries must be strictly positive")
    r = p / q
    return float(np.sum(r - np.log(r) - 1.0))


def mm_update_activations(t, v, target, floor: float = FLOOR_V) -> np.ndarray:
    """One multiplicative IS-NMF update of the activations (vector or matrix)."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    model = t @ v
    num = t.T @ (target / model**2)
    den = t.T @ (1.0 / model)
    return np.maximum(v * np.sqrt(num / den), floor)


def mm_update_dictionary(t, v, target, floor: float = FLOOR_T) -> np.ndarray:
    """One multiplicative IS-NMF update of the dictionary (``v`` is K x N)."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    model = t @ v
    num = (target / model**2) @ v.T
    den = (1.0 / model) @ v.T
    return np.maximum(t * np.sqrt(num / den), floor)


def fit_is_nmf(power, k: int, iters: int = 200, seed: int = 0, tol: float = 1e-6):
    """Alternating multiplicative IS-NMF on a nonnegative power matrix.

    Returns ``(T, V, history)`` where ``history`` holds the divergence after
    initialization and after every iteration.  Stops early once the relative
    improvement drops below ``tol``.  ``T`` columns are scaled to unit maximum
    with the inverse scale folded into ``V``.
    """
    power = np.maximum(np.asarray(power, dtype=float), POWER_FLOOR)
    n_rows, n_cols = power.shape
    if k < 1:
        raise ValueError("need at least one atom")
    if n_cols < k:
        raise ValueError(f"{n_cols} training frames is too few for K={k} atoms")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(power.mean() / k)
    t = rng.uniform(0.1, 1.1, size=(n_rows, k)) * scale
    v = rng.uniform(0.1, 1.1, size=(k, n_cols)) * scale

    history = [is_divergence(power, t @ v)]
    for _ in range(iters):
        t = mm_update_dictionary(t, v, power)
        v = mm_update_activations(t, v, power)
        history.append(is_divergence(power, t @ v))
        prev, cur = history[-2], history[-1]
        if prev - cur < tol * abs(prev):
            break

    col_max = t.max(axis=0)
    t = np.maximum(t / col_max, FLOOR_T)
    v = v * col_max[:, None]
    return t, v, history


def train_dictionary(
    signal,
    n_fft: int,
    k: int,
    iters: int = 200,
    frame_shift: int = 512,
    window: str = "hamming",
    sample_rate: int = 16000,
    seed: int = 0,
):
    """Learn a noise dictionary from a time-domain training signal or :class:`TrainingBuffer`.

    Returns ``(dictionary, history)``.
    """
    if isinstance(signal, TrainingBuffer):
        signal = signal.signal()
    mat = stft_training(signal, n_fft, frame_shift, window)
    if mat.n_frames < k:
        raise ValueError(f"{mat.n_frames} training frames is too few for K={k} atoms")
    t, _, history = fit_is_nmf(mat.half_power(), k, iters=iters, seed=seed)
    logger.info("trained K=%d dictionary on %d frames, IS divergence %.6g", k, mat.n_frames, history[-1])
    d = NoiseDictionary(t, n_fft, sample_rate=sample_rate, window=window, frame_shift=frame_shift)
    return d, history


def infer_activations(dictionary, v_init, target, p_steps: int = 3) -> np.ndarray:
    """Run ``p_steps`` activation updates against a single-column target with T held fixed."""
    if p_steps < 1:
        raise ValueError("need at least one MM step")
    t = dictionary.t if isinstance(dictionary, NoiseDictionary) else np.asarray(dictionary)
    target = np.maximum(np.asarray(target, dtype=float), POWER_FLOOR)
    v = np.asarray(v_init, dtype=float)
    for _ in range(p_steps):
        v = mm_update_activations(t, v, target)
    return v


def activation_bound(dictionary, v, target) -> float:
    """Negated activation-only lower bound, i.e. the IS divergence of one column."""
    t = dictionary.t if isinstance(dictionary, NoiseDictionary) else np.asarray(dictionary)
    target = np.maximum(np.asarray(target, dtype=float), POWER_FLOOR)
    return is_divergence(target[:, None], (t @ v)[:, None])


def initial_activations(dictionary: NoiseDictionary, power) -> np.ndarray:
    """Uniform ``1/K`` activations scaled so the model mean matches ``mean(power)``."""
    k = dictionary.k
    base = dictionary.t @ np.full(k, 1.0 / k)
    level = max(float(np.mean(power)), POWER_FLOOR) / float(np.mean(base))
    return np.maximum(np.full(k, level / k), FLOOR_V)


def synthesize_cov(dictionary: NoiseDictionary, v, full: bool = False) -> np.ndarray:
    """Noise covariance diagonal ``T v`` (half spectrum, or mirrored to length M)."""
    half = dictionary.t @ np.asarray(v, dtype=float)
    return to_full(half, dictionary.n_fft) if full else half


@dataclass
class TrainingBuffer:
    """FIFO store of observation blocks collected while the input is inactive."""

    sample_rate: int
    cap_seconds: float = 25.0
    segments: deque = field(default_factory=deque)

    @property
    def n_samples(self) -> int:
        return sum(s.size for s in self.segments)

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def append(self, block) -> None:
        self.segments.append(np.array(block, dtype=float))
        cap = int(round(self.cap_seconds * self.sample_rate))
        while self.n_samples > cap and self.segments:
            self.segments.popleft()

    def signal(self) -> np.ndarray:
        if not self.segments:
            return np.zeros(0)
        return np.concatenate(list(self.segments))


def maybe_collect(buffer: TrainingBuffer, x_block, y_block, threshold: float, shift=None) -> bool:
    """Append ``y_block`` when the recent input power is below ``threshold``.

    The input power is averaged over the last ``max(R, M/2)`` samples of the
    input block.  Returns whether the block was appended.
    """
    x_block = np.asarray(x_block, dtype=float)
    shift = len(y_block) if shift is None else shift
    span = min(x_block.size, max(shift, x_block.size // 2))
    power = float(np.mean(x_block[-span:] ** 2))
    if power < threshold:
        buffer.append(y_block)
        return True
    return False


def save_dictionary(dictionary: NoiseDictionary, path) -> None:
    """Write the dictionary as a text matrix with a key=value header.

    Layout::

        # ssfdaf-dictionary v1
        # M=<int> K=<int> sample_rate=<int> window=<name> frame_shift=<int>
        <M/2+1 rows of K values, %.17g>

    ``%.17g`` round-trips float64 exactly.  The file is written atomically.
    """
    header = (
        f"# {DICT_MAGIC}\n"
        f"# M={dictionary.n_fft} K={dictionary.k} sample_rate={dictionary.sample_rate} "
        f"window={dictionary.window} frame_shift={dictionary.frame_shift}\n"
    )
    buf = io.StringIO()
    np.savetxt(buf, dictionary.t, fmt="%.17g")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header)
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_dictionary(path) -> NoiseDictionary:
    with open(path, encoding="ascii") as fh:
        magic = fh.readline().strip()
        if magic != f"# {DICT_MAGIC}":
            raise ValueError(f"{path}: not a dictionary file")
        fields = dict(item.split("=", 1) for item in fh.readline().lstrip("# ").split())
        t = np.loadtxt(fh, dtype=float, ndmin=2)
    d = NoiseDictionary(
        t,
        int(fields["M"]),
        sample_rate=int(fields["sample_rate"]),
        window=fields["window"],
        frame_shift=int(fields["frame_shift"]),
    )
    if d.k != int(fields["K"]):
        raise ValueError(f"{path}: header says K={fields['K']} but matrix has {d.k} columns")
    return d
