"""Command-line entry point: ``ebidlma {mix,separate,train,eval,inspect}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig
from .errors import ConfigError, NumericalError
from .experiment import (
    load_scenario,
    run_experiment,
    synthesize,
    toy_training_pairs,
    write_metrics_csv,
)
from .metrics import best_permutation_metrics
from .separator import canonical_variant, separate
from .sourcemodel import (
    DEFAULT_ANCHORS,
    NetworkProvider,
    OracleEbProvider,
    OracleGaussProvider,
    load_grids,
    providers_from_grids,
    save_grids,
)
from .spectral import StftConfig, istft, read_wav, stft, write_wav

logger = logging.getLogger("ebidlma")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4

DEFAULT_MIX_SCENARIO = {
    "name": "default",
    "sample_rate": 8000,
    "duration": 8.0,
    "sources": [{"kind": "band_noise", "band": [50, 2000]}, {"kind": "band_noise", "band": [1000, 3900]}],
    "mixing": {"kind": "random", "condition_number": 3.0},
}


def _stft_from(settings, sample_rate):
    return StftConfig.from_ms(settings.window_ms, settings.hop_ms, sample_rate, settings.window_kind).validate()


def _load_run_config(args):
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    st = cfg.stft
    for flag, key in (("window_ms", "window_ms"), ("hop_ms", "hop_ms"), ("window_kind", "window_kind")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(st, key, value)
    return cfg


def _add_stft_flags(p):
    p.add_argument("--window-ms", type=float, help="analysis window (default 512 ms)")
    p.add_argument("--hop-ms", type=float, help="hop size (default 256 ms)")
    p.add_argument("--window-kind", choices=("hamming", "hann"))
    p.add_argument("--config", help="JSON run configuration; flags override it")


def cmd_mix(args):
    scenario = load_scenario(args.scenario) if args.scenario else json.loads(json.dumps(DEFAULT_MIX_SCENARIO))
    if args.tones:
        scenario["sources"] = [{"kind": "tone", "freq": f, "amplitude": 0.3} for f in args.tones]
    if args.mixing:
        scenario["mixing"] = dict(scenario.get("mixing", {}), kind=args.mixing)
    if args.condition_number is not None:
        scenario.setdefault("mixing", {})["condition_number"] = args.condition_number
    if args.duration is not None:
        scenario["duration"] = args.duration
    mix = synthesize(scenario, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_wav(os.path.join(args.out, "mixture.wav"), mix.observed, mix.sample_rate, args.format)
    for n, src in enumerate(mix.sources):
        write_wav(os.path.join(args.out, f"source_{n}.wav"), src, mix.sample_rate, args.format)
    sv = np.linalg.svd(mix.mixing, compute_uv=False)
    meta = {"seed": args.seed, "matrix": mix.mixing.tolist(), "condition_number": float(sv[0] / sv[-1]),
            "scenario": scenario}
    with open(os.path.join(args.out, "mixing.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(f"wrote {len(mix.sources)} sources and a {mix.observed.shape[0]}-channel mixture to {args.out}")
    return 0


def _build_providers(args, cfg, X, sample_rate):
    variant = cfg.separation.variant
    n_src = X.shape[0]
    expected = X.shape[1:] + (n_src,)
    if args.grid:
        grids = load_grids(args.grid, expected_shape=expected)
        fixed = cfg.separation.fixed_nu if variant != "gauss" else None
        return providers_from_grids(grids, "gauss" if variant == "gauss" else "eb", cfg.separation.eps, fixed)
    if args.checkpoint:
        from .trainer import SourceNetwork

        if len(args.checkpoint) != n_src:
            raise ConfigError(f"need {n_src} checkpoints (one per source), got {len(args.checkpoint)}")
        return [NetworkProvider(SourceNetwork.load(p), cfg.separation.eps) for p in args.checkpoint]
    if args.oracle:
        if len(args.oracle) != n_src:
            raise ConfigError(f"need {n_src} oracle source files, got {len(args.oracle)}")
        stft_cfg = _stft_from(cfg.stft, sample_rate)
        out = []
        for path in args.oracle:
            s, rate = read_wav(path)
            if rate != sample_rate:
                raise ConfigError(f"{path}: sample rate {rate} != mixture rate {sample_rate}")
            S = stft(s[0], stft_cfg)
            if S.shape != X.shape[1:]:
                raise ConfigError(f"{path}: frame axis J has size {S.shape[1]}, expected {X.shape[2]}")
            if variant == "gauss":
                out.append(OracleGaussProvider(S, cfg.separation.eps))
            else:
                nu = cfg.separation.fixed_nu or args.oracle_nu
                out.append(OracleEbProvider(S, nu, cfg.separation.eps))
        return out
    raise ConfigError("choose a source model: --grid, --checkpoint or --oracle")


def cmd_separate(args):
    cfg = _load_run_config(args)
    sep = cfg.separation
    if args.variant:
        sep.variant = args.variant
    variant = canonical_variant(sep.variant)
    if variant == "student_t_fixed_nu":
        if args.nu is not None:
            sep.fixed_nu = args.nu
    elif variant == "empirical_bayes" and args.fixed_nu is not None:
        sep.fixed_nu = args.fixed_nu
    for flag, key in (("iters", "spatial_iters"), ("refresh", "model_refresh_period"),
                      ("reference_channel", "reference_channel"), ("eps", "eps"), ("delta", "delta"),
                      ("threads", "num_threads"), ("backend", "backend")):
        value = getattr(args, flag)
        if value is not None:
            setattr(sep, key, value)
    cfg.validate()
    x, rate = read_wav(args.mixture)
    if args.checkpoint:
        from .trainer import SourceNetwork

        meta = SourceNetwork.load(args.checkpoint[0]).stft
        if meta:
            stft_cfg = StftConfig(**meta).validate()
            cfg.stft = replace(cfg.stft, window_ms=stft_cfg.window_length * 1000 / rate,
                               hop_ms=stft_cfg.hop_length * 1000 / rate, window_kind=stft_cfg.window_kind)
    stft_cfg = _stft_from(cfg.stft, rate)
    X = stft(x, stft_cfg)
    providers = _build_providers(args, cfg, X, rate)
    state = separate(X, providers, sep)
    est = istft(state.images, stft_cfg, x.shape[1])
    os.makedirs(args.out, exist_ok=True)
    for n, e in enumerate(est):
        write_wav(os.path.join(args.out, f"separated_{n}.wav"), e, rate, args.format)
    with open(os.path.join(args.out, "cost.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "cost", "variant", "phase"])
        for it, c in enumerate(state.cost_trace):
            w.writerow([it, repr(c), state.variant, "update"])
        for it, _, after in state.refresh_trace:
            w.writerow([it, repr(after), state.variant, "refresh"])
    summary = dict(state.summary(), config=cfg.to_dict(), sample_rate=rate,
                   n_bins=int(X.shape[1]), n_frames=int(X.shape[2]))
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    if args.dump_grids:
        save_grids(args.dump_grids, state.estimates)
    print(f"{state.variant}: cost {state.cost_trace[0]:.6g} -> {state.cost_trace[-1]:.6g}; wrote {args.out}")
    return 0


def _training_pairs(args, stft_cfg, seed):
    from .trainer import TrainingPair

    if args.toy:
        return toy_training_pairs(n_pairs=args.toy_pairs, cfg=stft_cfg, seed=seed)
    if not (args.target and args.interferer) or len(args.target) != len(args.interferer):
        raise ConfigError("give --toy or equally many --target and --interferer WAV files")
    pairs = []
    for t_path, i_path in zip(args.target, args.interferer):
        t, rt = read_wav(t_path)
        i, ri = read_wav(i_path)
        if rt != ri:
            raise ConfigError(f"{t_path} and {i_path} have different sample rates")
        T = min(t.shape[1], i.shape[1])
        pairs.append(TrainingPair(stft(t[0, :T], stft_cfg), stft(i[0, :T], stft_cfg)))
    return pairs


def cmd_train(args):
    from .trainer import train

    cfg = _load_run_config(args)
    tr = cfg.train
    for flag, key in (("loss", "loss"), ("epochs", "epochs"), ("lr", "learning_rate"),
                      ("batch_size", "batch_size"), ("hidden", "hidden"), ("context", "context_frames"),
                      ("seed", "rng_seed"), ("nu_mode", "nu_mode")):
        value = getattr(args, flag)
        if value is not None:
            setattr(tr, key, value)
    if args.window_ms is None and args.config is None and args.toy:
        cfg.stft.window_ms, cfg.stft.hop_ms = 8.0, 4.0
    cfg.validate()
    stft_cfg = _stft_from(cfg.stft, args.sample_rate)
    pairs = _training_pairs(args, stft_cfg, tr.rng_seed)
    result = train(pairs, tr, stft=stft_cfg.to_dict())
    result.network.save(args.out)
    if args.loss_csv:
        result.write_loss_csv(args.loss_csv)
    c = result.loss_curve
    print(f"validation loss {c[0]['val_loss']:.6g} -> {c[-1]['val_loss']:.6g}; checkpoint {args.out}")
    return 0


def cmd_eval(args):
    if args.scenario:
        result = run_experiment(args.scenario, args.out)
        for name in dict.fromkeys(r.name for r in result.runs):
            print(f"{name}: mean SI-SDR {result.mean_si_sdr(name):.2f} dB, "
                  f"improvement {result.mean_improvement(name):.2f} dB")
        return 0
    if not (args.estimates and args.references):
        raise ConfigError("give --scenario, or --estimates and --references")
    est = [read_wav(p)[0][0] for p in args.estimates]
    ref = [read_wav(p)[0][0] for p in args.references]
    mixture = read_wav(args.mixture)[0][args.reference_channel] if args.mixture else None
    report = best_permutation_metrics(est, ref, mixture, metadata={"scenario": "files", "variant": "-", "seed": "-"})
    os.makedirs(args.out, exist_ok=True)
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), [report])
    print(f"SI-SDR {np.round(report.si_sdr, 2).tolist()} dB, permutation {report.permutation}")
    return 0


def _describe(arr):
    arr = np.asarray(arr)
    if arr.dtype.kind in "US":
        return str(arr)
    return {"shape": list(arr.shape), "min": float(arr.min()), "max": float(arr.max()),
            "mean": float(arr.mean())}


def cmd_inspect(args):
    with np.load(args.path, allow_pickle=False) as data:
        files = list(data.files)
        if "__meta__" in files:
            meta = json.loads(str(data["__meta__"]))
            info = {"type": "checkpoint", "meta": meta,
                    "params": {k: list(data[k].shape) for k in files if k != "__meta__"}}
        else:
            info = {"type": "grid", "arrays": {k: _describe(data[k]) for k in files}}
    if info["type"] == "grid":
        load_grids(args.path)
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ebidlma", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", help="synthesize a mixture and its groundtruth sources")
    p.add_argument("--scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tones", type=float, nargs="+", help="use pure tones at these frequencies (Hz)")
    p.add_argument("--mixing", choices=("identity", "random", "fir"))
    p.add_argument("--condition-number", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--format", choices=("pcm16", "float32"), default="float32")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("separate", help="separate a multichannel mixture")
    p.add_argument("--mixture", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("gauss", "t", "eb", "student_t_fixed_nu", "empirical_bayes"))
    p.add_argument("--nu", type=float, help="degrees of freedom for --variant t")
    p.add_argument("--fixed-nu", type=float, help="replace the EB nu grid by this constant")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--grid", help="hyperparameter grid file (.npz)")
    src.add_argument("--checkpoint", nargs="+", help="one trained network per source")
    src.add_argument("--oracle", nargs="+", help="groundtruth source WAVs (oracle model)")
    p.add_argument("--oracle-nu", type=float, default=DEFAULT_ANCHORS[-1])
    p.add_argument("--iters", type=int)
    p.add_argument("--refresh", type=int)
    p.add_argument("--reference-channel", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--threads", type=int, help="cap on worker threads of the compiled kernel")
    p.add_argument("--backend", choices=("cython", "python"))
    p.add_argument("--dump-grids", help="write the final source-model grids here")
    p.add_argument("--format", choices=("pcm16", "float32"), default="float32")
    _add_stft_flags(p)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("train", help="train a source network")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--loss", choices=("gauss", "eb"))
    p.add_argument("--toy", action="store_true", help="use the built-in disjoint-band toy dataset")
    p.add_argument("--toy-pairs", type=int, default=24)
    p.add_argument("--target", nargs="+")
    p.add_argument("--interferer", nargs="+")
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--nu-mode", choices=("anchors", "clipped"))
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-csv")
    _add_stft_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score separated files or run a scenario")
    p.add_argument("--scenario")
    p.add_argument("--estimates", nargs="+")
    p.add_argument("--references", nargs="+")
    p.add_argument("--mixture")
    p.add_argument("--reference-channel", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a grid file or checkpoint")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
