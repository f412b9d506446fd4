"""Acoustic echo cancellation experiment: signal synthesis, metrics, Monte-Carlo runs."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .engine import EchoCanceller, VariantConfig
from .noisemodel import train_dictionary
from .spectral import make_input_block
from . import wavio

logger = logging.getLogger(__name__)

ERLE_CAP = (-10.0, 80.0)
MISMATCH_FLOOR_DB = -120.0


@dataclass
class Scenario:
    rir_before: np.ndarray
    rir_after: np.ndarray
    x: np.ndarray
    noise: np.ndarray
    snr_db: float
    sample_rate: int
    change_time: float | None = None

    @property
    def duration(self) -> float:
        return self.x.size / self.sample_rate


@dataclass
class EchoSignals:
    x: np.ndarray
    y: np.ndarray
    y_ec: np.ndarray
    noise: np.ndarray  # scaled noise actually added
    change_sample: int | None
    rir_before: np.ndarray
    rir_after: np.ndarray
    sample_rate: int

    def active_rir(self, tau: int, shift: int) -> np.ndarray:
        """RIR in effect for 1-based block ``tau`` (blocks never straddle the change)."""
        if self.change_sample is None or (tau - 1) * shift < self.change_sample:
            return self.rir_before
        return self.rir_after


@dataclass
class MetricTrace:
    erle_db: np.ndarray
    mismatch_db: np.ndarray
    block_times: np.ndarray


def synth_rir(seed, length: int, rt60: float, delay: int, sample_rate: int) -> np.ndarray:
    """Direct path plus exponentially decaying Gaussian tail, normalized to unit energy.

    The tail envelope is ``exp(-3 ln(10) t / rt60)``, i.e. -60 dB after ``rt60``.
    """
    if rt60 <= 0:
        raise ValueError("rt60 must be positive")
    if delay >= length:
        raise ValueError("delay must be shorter than the RIR")
    rng = np.random.default_rng(seed)
    h = np.zeros(length)
    n_tail = length - delay - 1
    t = np.arange(1, n_tail + 1) / sample_rate
    h[delay] = 1.0
    h[delay + 1 :] = rng.standard_normal(n_tail) * np.exp(-3.0 * np.log(10.0) * t / rt60)
    return h / np.linalg.norm(h)


def _block_boundary(time_s: float, sample_rate: int, shift: int) -> int:
    return int(round(time_s * sample_rate / shift)) * shift


def simulate_echo(scenario: Scenario, shift: int) -> EchoSignals:
    """Convolve the input with the active RIR and add noise scaled to the requested SNR.

    The path switches at the block boundary nearest ``change_time``.  SNR is
    measured over the full signal; an all-zero noise source leaves ``y = y_ec``.
    """
    x = np.asarray(scenario.x, dtype=float)
    n = x.size
    noise = np.asarray(scenario.noise, dtype=float)
    if noise.size < n:
        raise ValueError("noise signal is shorter than the input signal")
    noise = noise[:n]

    y_before = fftconvolve(x, scenario.rir_before)[:n]
    change = None
    if scenario.change_time is not None:
        change = _block_boundary(scenario.change_time, scenario.sample_rate, shift)
        y_after = fftconvolve(x, scenario.rir_after)[:n]
        y_ec = np.concatenate([y_before[:change], y_after[change:]])
    else:
        y_ec = y_before

    p_echo = float(np.sum(y_ec**2))
    p_noise = float(np.sum(noise**2))
    if p_noise == 0.0:
        gain = 0.0
    elif p_echo == 0.0:
        raise ValueError("echo signal has zero power; SNR scaling is undefined")
    else:
        gain = math.sqrt(p_echo / (p_noise * 10.0 ** (scenario.snr_db / 10.0)))
    scaled = gain * noise
    return EchoSignals(
        x, y_ec + scaled, y_ec, scaled, change, scenario.rir_before, scenario.rir_after, scenario.sample_rate
    )


def _erle_from_powers(echo_power: float, residual_power: float) -> float:
    lo, hi = ERLE_CAP
    if residual_power <= 0.0:
        return hi if echo_power > 0.0 else 0.0
    if echo_power <= 0.0:
        return lo
    return float(np.clip(10.0 * np.log10(echo_power / residual_power), lo, hi))


def erle(y_ec_block, y_hat_block, smoothing: float = 0.0) -> float:
    """ERLE of a single block (with ``smoothing`` > 0 use :class:`ErleMeter`)."""
    meter = ErleMeter(smoothing)
    return meter.update(y_ec_block, y_hat_block)


class ErleMeter:
    """ERLE with expectations realized as exponentially smoothed block powers."""

    def __init__(self, smoothing: float = 0.98):
        self.smoothing = smoothing
        self.echo_power = 0.0
        self.residual_power = 0.0

    def update(self, y_ec_block, y_hat_block) -> float:
        y_ec_block = np.asarray(y_ec_block, dtype=float)
        y_hat_block = np.asarray(y_hat_block, dtype=float)
        if y_ec_block.shape != y_hat_block.shape:
            raise ValueError("ERLE blocks must have equal length")
        b = self.smoothing
        self.echo_power = b * self.echo_power + (1 - b) * float(np.sum(y_ec_block**2))
        self.residual_power = b * self.residual_power + (1 - b) * float(
            np.sum((y_ec_block - y_hat_block) ** 2)
        )
        return _erle_from_powers(self.echo_power, self.residual_power)


def system_mismatch(h_true, w_hat_time) -> float:
    """Normalized misalignment in dB against the first ``len(w_hat_time)`` RIR taps."""
    w = np.asarray(w_hat_time, dtype=float)
    h = np.zeros(w.size)
    h_true = np.asarray(h_true, dtype=float)[: w.size]
    h[: h_true.size] = h_true
    ref = float(np.sum(h**2))
    if ref == 0.0:
        raise ValueError("true RIR has zero energy over the modeled taps")
    err = float(np.sum((h - w) ** 2))
    if err == 0.0:
        return MISMATCH_FLOOR_DB
    return max(10.0 * np.log10(err / ref), MISMATCH_FLOOR_DB)


# --- synthetic sources ------------------------------------------------------


def white_noise(rng, n: int) -> np.ndarray:
    return rng.standard_normal(n)


def speechlike(rng, n: int, sample_rate: int, modulate: bool = True) -> np.ndarray:
    """Colored noise with a speech-like spectral envelope.

    White noise passes a random three-resonance all-pole filter and a
    first-order low-pass tilt; with ``modulate`` a random syllabic envelope
    (about 4 Hz, occasional pauses) is applied.  Normalized to unit power.
    """
    from scipy.signal import lfilter

    poles = []
    for lo, hi in ((300.0, 900.0), (900.0, 2200.0), (2200.0, 3400.0)):
        f = rng.uniform(lo, min(hi, 0.45 * sample_rate))
        r = np.exp(-np.pi * rng.uniform(60.0, 160.0) / sample_rate)
        poles += [r * np.exp(2j * np.pi * f / sample_rate), r * np.exp(-2j * np.pi * f / sample_rate)]
    den = np.real(np.poly(poles))
    sig = lfilter([1.0], den, rng.standard_normal(n))
    sig = lfilter([1.0], [1.0, -0.9], sig)
    if modulate:
        n_env = int(np.ceil(n / sample_rate * 4.0)) + 2
        knots = rng.uniform(0.2, 1.0, n_env) * (rng.uniform(size=n_env) > 0.15)
        env = np.interp(np.arange(n) / sample_rate * 4.0, np.arange(n_env), knots)
        sig = sig * env
    return sig / np.sqrt(np.mean(sig**2))


def harmonic_noise(rng, n: int, sample_rate: int, n_harmonics: int = 5, floor_db: float = -20.0):
    """Harmonic series with random fundamental, amplitudes and phases plus a white floor.

    The white floor power sits ``floor_db`` below the harmonic power.
    """
    f0 = rng.uniform(0.02, 0.12) * sample_rate / 2
    t = np.arange(n) / sample_rate
    tone = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        if h * f0 >= sample_rate / 2:
            break
        tone += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    p_tone = float(np.mean(tone**2))
    floor = rng.standard_normal(n) * math.sqrt(p_tone * 10.0 ** (floor_db / 10.0))
    return tone + floor


def _fit_length(sig: np.ndarray, n: int) -> np.ndarray:
    if sig.size >= n:
        return sig[:n]
    reps = int(np.ceil(n / sig.size))
    return np.tile(sig, reps)[:n]


def _load_mono(path: str, sample_rate: int) -> np.ndarray:
    data, sr = wavio.read_wav(path)
    if sr != sample_rate:
        raise ValueError(f"{path}: sample rate {sr} Hz does not match configured {sample_rate} Hz")
    return data


def draw_run(cfg, run_seed, snr_db: float):
    """Draw the random ingredients of one run: scenario plus noise training signal."""
    ss = np.random.SeedSequence(run_seed)
    s_rir1, s_rir2, s_x, s_noise = ss.spawn(4)
    fs = cfg.sample_rate
    n = int(round(cfg.duration * fs))
    n_train = int(round(cfg.train_seconds * fs))

    if cfg.rir == "synthetic":
        h1 = synth_rir(s_rir1, cfg.rir_length, cfg.rt60, cfg.delay, fs)
        h2 = synth_rir(s_rir2, cfg.rir_length, cfg.rt60, cfg.delay, fs)
    else:
        paths = [p.strip() for p in cfg.rir.split(",")]
        h1 = _load_mono(paths[0], fs)
        h2 = _load_mono(paths[-1], fs)

    rng_x = np.random.default_rng(s_x)
    if cfg.input in ("synthetic", "white"):
        x = white_noise(rng_x, n)
    elif cfg.input == "colored":
        x = speechlike(rng_x, n, fs, modulate=False)
    elif cfg.input == "speechlike":
        x = speechlike(rng_x, n, fs)
    else:
        x = _fit_length(_load_mono(cfg.input, fs), n)

    rng_noise = np.random.default_rng(s_noise)
    if cfg.noise == "synthetic":
        full = harmonic_noise(rng_noise, n_train + n, fs, cfg.harmonics, cfg.floor_db)
    elif cfg.noise == "white":
        full = white_noise(rng_noise, n_train + n)
    elif cfg.noise == "none":
        full = np.zeros(n_train + n)
    else:
        full = _fit_length(_load_mono(cfg.noise, fs), n_train + n)
    # training segment precedes and never overlaps the evaluation segment
    train, noise = full[:n_train], full[n_train:]
    scenario = Scenario(h1, h2, x, noise, snr_db, fs, cfg.change_time)
    return scenario, train


def run_variants(signals: EchoSignals, variant_configs, dictionary=None, erle_smoothing=0.98):
    """Run each variant over the signals and collect per-block metrics."""
    traces = {}
    for vc in variant_configs:
        shift = vc.shift
        n_blocks = signals.x.size // shift
        erle_db = np.empty(n_blocks)
        mismatch_db = np.empty(n_blocks)
        meter = ErleMeter(erle_smoothing)
        ctx = EchoCanceller(vc, dictionary if vc.uses_dictionary else None)
        for tau in range(1, n_blocks + 1):
            xb = make_input_block(signals.x, tau, vc.n_fft, shift)
            sl = slice((tau - 1) * shift, tau * shift)
            res = ctx.process_block(xb, signals.y[sl])
            erle_db[tau - 1] = meter.update(signals.y_ec[sl], res.echo_estimate)
            mismatch_db[tau - 1] = system_mismatch(signals.active_rir(tau, shift), ctx.filter_taps())
        times = np.arange(1, n_blocks + 1) * shift / signals.sample_rate
        traces[vc.label] = MetricTrace(erle_db, mismatch_db, times)
    return traces


def reconvergence_blocks(mismatch_db, change_block: int, tolerance_db: float = 3.0, floor_frac=0.1):
    """Blocks from the path change until mismatch is back within ``tolerance_db`` of the pre-change floor.

    The floor is the mean mismatch over the last ``floor_frac`` of pre-change
    blocks.  Returns ``None`` when the trace never re-attains it.
    """
    mismatch_db = np.asarray(mismatch_db)
    if change_block <= 0 or change_block >= mismatch_db.size:
        return None
    n_floor = max(1, int(change_block * floor_frac))
    floor = float(np.mean(mismatch_db[change_block - n_floor : change_block]))
    after = np.nonzero(mismatch_db[change_block:] <= floor + tolerance_db)[0]
    return int(after[0]) if after.size else None


def pre_change_floor(mismatch_db, change_block: int, floor_frac=0.1) -> float:
    n_floor = max(1, int(change_block * floor_frac))
    return float(np.mean(np.asarray(mismatch_db)[change_block - n_floor : change_block]))


@dataclass
class RunOutcome:
    index: int
    snr_db: float
    traces: dict  # label -> MetricTrace
    error: str | None = None


def run_single(cfg, index: int, run_seed, snr_db: float, dictionary=None) -> RunOutcome:
    """One Monte-Carlo run: draw signals, train the dictionary if needed, run every variant."""
    try:
        scenario, train = draw_run(cfg, run_seed, snr_db)
        signals = simulate_echo(scenario, cfg.shift)
        vcs = cfg.variant_configs()
        if dictionary is None and any(vc.uses_dictionary for vc in vcs):
            dictionary, _ = train_dictionary(
                train,
                cfg.n_fft,
                cfg.k,
                iters=cfg.dict_iters,
                frame_shift=cfg.frame_shift,
                sample_rate=cfg.sample_rate,
                seed=int(np.random.SeedSequence(run_seed).generate_state(1)[0]),
            )
        traces = run_variants(signals, vcs, dictionary, cfg.erle_smoothing)
        return RunOutcome(index, snr_db, traces)
    except (ValueError, FloatingPointError) as exc:
        logger.warning("run %d failed: %s", index, exc)
        return RunOutcome(index, snr_db, {}, error=str(exc))


def _run_task(args):
    return run_single(*args)


def run_experiment(cfg, jobs: int | None = None, dictionary=None):
    """Monte-Carlo evaluation over ``cfg.runs`` seeded runs for each SNR.

    Returns a list of :class:`RunOutcome` ordered by (SNR, run index).  The
    outcome does not depend on ``jobs``.
    """
    jobs = cfg.jobs if jobs is None else jobs
    tasks = [(cfg, i, [cfg.seed, i], snr, dictionary) for snr in cfg.snr_db for i in range(cfg.runs)]
    if jobs <= 1 or len(tasks) == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


def aggregate(outcomes, snr_db: float):
    """Mean ERLE / mismatch trace per variant over the successful runs at one SNR."""
    per_variant = {}
    for out in outcomes:
        if out.error is not None or out.snr_db != snr_db:
            continue
        for label, tr in out.traces.items():
            per_variant.setdefault(label, []).append(tr)
    result = {}
    for label, trs in per_variant.items():
        result[label] = MetricTrace(
            np.mean([t.erle_db for t in trs], axis=0),
            np.mean([t.mismatch_db for t in trs], axis=0),
            trs[0].block_times,
        )
    return result


def change_block_index(cfg) -> int | None:
    """0-based index of the first block processed with the new path."""
    if cfg.change_time is None:
        return None
    return _block_boundary(cfg.change_time, cfg.sample_rate, cfg.shift) // cfg.shift
