"""Command-line interface: ``ssfdaf train | filter | experiment``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, build_config, dump_config
from .engine import EchoCanceller
from .harness import (
    ErleMeter,
    MetricTrace,
    aggregate,
    change_block_index,
    pre_change_floor,
    reconvergence_blocks,
    run_experiment,
    system_mismatch,
)
from .noisemodel import load_dictionary, save_dictionary, train_dictionary
from .spectral import make_input_block
from .wavio import read_wav, write_text, write_wav

logger = logging.getLogger("ssfdaf")

EXIT_USAGE = 1
EXIT_RUNTIME = 2

CSV_HEADER = "block,time_s,variant,erle_db,mismatch_db\n"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return f"{v:.6f}"


def traces_csv(traces: dict) -> str:
    """Render ``{label: MetricTrace}`` in the fixed column layout."""
    lines = [CSV_HEADER]
    for label, tr in traces.items():
        for i, (t, e, m) in enumerate(zip(tr.block_times, tr.erle_db, tr.mismatch_db), start=1):
            lines.append(f"{i},{t:.6f},{label},{_fmt(float(e))},{_fmt(float(m))}\n")
    return "".join(lines)


def _common(p):
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--variant", action="append", help="variant(s): EM, ME, NMF_EM, NMF_ME (repeat or comma-separate)")
    p.add_argument("--snr", help="SNR(s) in dB, comma-separated")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out", help="output directory (default $SSFDAF_OUT or ./results)")
    p.add_argument("--dict", dest="dict_path", help="noise dictionary file")
    p.add_argument("--fast", action="store_true", default=None, help="reduced CI-scale profile")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config field")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssfdaf", description="Noise-robust DFT-domain Kalman echo cancellation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="learn a noise dictionary from WAV files")
    p.add_argument("noise_wavs", nargs="+")
    p.add_argument("-k", "--atoms", type=int, default=10)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--n-fft", type=int, default=1536)
    p.add_argument("--frame-shift", type=int, default=512)
    p.add_argument("--window", default="hamming")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="dictionary output file")

    p = sub.add_parser("filter", help="run one variant over an input/observation WAV pair")
    p.add_argument("x_wav", help="far-end input (loudspeaker) signal")
    p.add_argument("y_wav", help="observed microphone signal")
    p.add_argument("--echo", help="clean echo WAV for ERLE (default: the observation)")
    p.add_argument("--rir", help="true RIR WAV for system mismatch")
    _common(p)

    p = sub.add_parser("experiment", help="Monte-Carlo AEC experiment")
    p.add_argument("--jobs", type=int)
    _common(p)
    return parser


def _overrides(args) -> dict:
    ov = {}
    if args.variant:
        ov["variants"] = [v for item in args.variant for v in item.split(",") if v.strip()]
    for key, attr in (("snr_db", "snr"), ("seed", "seed"), ("runs", "runs"), ("out", "out"), ("fast", "fast")):
        val = getattr(args, attr, None)
        if val is not None:
            ov[key] = val
    if getattr(args, "jobs", None) is not None:
        ov["jobs"] = args.jobs
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"{item}: expected KEY=VALUE")
        k, v = item.split("=", 1)
        ov[k.strip()] = None if v.strip().lower() in ("none", "null") else v.strip()
    return ov


def cmd_train(args) -> int:
    signals = []
    sr = None
    for path in args.noise_wavs:
        data, rate = read_wav(path)
        if sr is not None and rate != sr:
            raise UsageError(f"{path}: sample rate {rate} differs from {sr}")
        sr = rate
        signals.append(data)
    signal = np.concatenate(signals)
    if signal.size < sr:
        raise UsageError(f"need at least 1 s of training audio, got {signal.size / sr:.2f} s")
    try:
        d, history = train_dictionary(
            signal,
            args.n_fft,
            args.atoms,
            iters=args.iters,
            frame_shift=args.frame_shift,
            window=args.window,
            sample_rate=sr,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    step = max(1, (len(history) - 1) // 10)
    for i in range(0, len(history), step):
        print(f"iter {i:4d}  IS divergence {history[i]:.9g}")
    print(f"final IS divergence {history[-1]:.9g} after {len(history) - 1} iterations")
    save_dictionary(d, args.out)
    print(f"wrote {args.out} (M={d.n_fft} K={d.k} frame_shift={d.frame_shift} sample_rate={d.sample_rate})")
    return 0


def _prepare_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_filter(args) -> int:
    cfg = build_config(args.config, _overrides(args))
    if len(cfg.variants) != 1:
        if args.variant:
            raise ConfigError("variants: filter runs exactly one variant")
        cfg.variants = ["NMF_EM" if args.dict_path else "EM"]
    vc = cfg.variant_configs()[0]

    x, sr_x = read_wav(args.x_wav)
    y, sr_y = read_wav(args.y_wav)
    if sr_x != sr_y:
        raise UsageError(f"sample rates differ: {sr_x} vs {sr_y} Hz")
    if x.size != y.size:
        raise UsageError(f"signal lengths differ: {x.size} vs {y.size} samples")
    echo_ref = y
    if args.echo:
        echo_ref, sr_e = read_wav(args.echo)
        if sr_e != sr_x or echo_ref.size != x.size:
            raise UsageError("clean echo must match the input length and sample rate")
    rir = None
    if args.rir:
        rir, _ = read_wav(args.rir)

    dictionary = None
    if vc.uses_dictionary:
        if not args.dict_path:
            raise UsageError(f"variant {vc.variant} needs --dict")
        dictionary = load_dictionary(args.dict_path)

    cfg.sample_rate = sr_x
    ctx = EchoCanceller(vc, dictionary)
    meter = ErleMeter(cfg.erle_smoothing)
    shift = vc.shift
    n_blocks = x.size // shift
    erle_db = np.empty(n_blocks)
    mismatch_db = np.full(n_blocks, np.nan)
    echo = np.zeros(x.size)
    err = y.copy()
    for tau in range(1, n_blocks + 1):
        sl = slice((tau - 1) * shift, tau * shift)
        res = ctx.process_block(make_input_block(x, tau, vc.n_fft, shift), y[sl])
        echo[sl] = res.echo_estimate
        err[sl] = res.error
        erle_db[tau - 1] = meter.update(echo_ref[sl], res.echo_estimate)
        if rir is not None:
            mismatch_db[tau - 1] = system_mismatch(rir, ctx.filter_taps())

    trace = MetricTrace(erle_db, mismatch_db, np.arange(1, n_blocks + 1) * shift / sr_x)
    out = _prepare_out(cfg.out)
    write_wav(os.path.join(out, "echo_estimate.wav"), echo, sr_x)
    write_wav(os.path.join(out, "error.wav"), err, sr_x)
    write_text(os.path.join(out, "metrics.csv"), traces_csv({vc.label: trace}))
    write_text(os.path.join(out, "config.yaml"), dump_config(cfg))
    print(f"{vc.label}: {n_blocks} blocks, final ERLE {erle_db[-1]:.2f} dB" if n_blocks else "no complete block")
    return 0


def _median_or_none(values):
    arr = np.array([np.inf if v is None else v for v in values], dtype=float)
    if arr.size == 0:
        return None
    med = float(np.median(arr))
    return None if np.isinf(med) else med


def summarize(cfg, outcomes) -> dict:
    """Deterministic JSON-ready summary of an experiment."""
    cb = change_block_index(cfg)
    summary = {
        # output location and worker count do not influence results
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("out", "jobs")},
        "erle_smoothing": cfg.erle_smoothing,
        "metric_caps_db": {"erle": [-10.0, 80.0], "mismatch_floor": -120.0},
        "reconvergence_tolerance_db": 3.0,
        "change_block": cb,
        "failures": [
            {"run": o.index, "snr_db": o.snr_db, "error": o.error} for o in outcomes if o.error is not None
        ],
        "results": {},
    }
    for snr in cfg.snr_db:
        agg = aggregate(outcomes, snr)
        per_snr = {}
        for label, tr in agg.items():
            n_tail = max(1, tr.erle_db.size // 10)
            runs = [o for o in outcomes if o.error is None and o.snr_db == snr and label in o.traces]
            entry = {
                "n_runs": len(runs),
                "final_erle_db": float(np.mean(tr.erle_db[-n_tail:])),
                "final_mismatch_db": float(np.mean(tr.mismatch_db[-n_tail:])),
            }
            if cb is not None:
                per_run = [reconvergence_blocks(o.traces[label].mismatch_db, cb) for o in runs]
                entry.update(
                    {
                        "pre_change_floor_db": pre_change_floor(tr.mismatch_db, cb),
                        "reconvergence_blocks": reconvergence_blocks(tr.mismatch_db, cb),
                        "reconvergence_blocks_per_run": per_run,
                        "median_reconvergence_blocks": _median_or_none(per_run),
                    }
                )
            per_snr[label] = entry
        summary["results"][f"{snr:g}"] = per_snr
    return summary


def cmd_experiment(args) -> int:
    cfg = build_config(args.config, _overrides(args))
    # a fixed dictionary replaces the per-run offline training
    dictionary = load_dictionary(args.dict_path) if args.dict_path else None
    out = _prepare_out(cfg.out)
    write_text(os.path.join(out, "config.yaml"), dump_config(cfg))

    outcomes = run_experiment(cfg, dictionary=dictionary)
    os.makedirs(os.path.join(out, "runs"), exist_ok=True)
    for o in outcomes:
        if o.error is None:
            write_text(os.path.join(out, "runs", f"snr{o.snr_db:g}_run{o.index:03d}.csv"), traces_csv(o.traces))
    for snr in cfg.snr_db:
        write_text(os.path.join(out, f"aggregate_snr{snr:g}.csv"), traces_csv(aggregate(outcomes, snr)))
    summary = summarize(cfg, outcomes)
    write_text(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")

    for snr, res in summary["results"].items():
        for label, entry in res.items():
            print(
                f"SNR {snr} dB  {label:9s} ERLE {entry['final_erle_db']:7.2f} dB  "
                f"mismatch {entry['final_mismatch_db']:7.2f} dB  "
                f"median reconvergence {entry.get('median_reconvergence_blocks')}"
            )
    if summary["failures"]:
        print(f"{len(summary['failures'])} run(s) failed; see summary.json", file=sys.stderr)
        return EXIT_RUNTIME if len(summary["failures"]) == len(outcomes) else 0
    return 0


COMMANDS = {"train": cmd_train, "filter": cmd_filter, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"ssfdaf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"ssfdaf {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
