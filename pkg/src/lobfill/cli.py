"""Command-line interface.

Subcommands cover the full pipeline: synthetic stream generation, book
replay verification, dataset construction, classical estimates, model
training, evaluation, benchmarking, attribution, and the kernel-size
sweep. Every command that writes an output file also writes a
``<output>.run.json`` manifest recording the exact command, a hash of
its configuration, hashes of all inputs, and the outputs produced, so a
run can be reproduced bit for bit.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import AutodiffError
from .book import BookError, replay
from .features import FeatureError
from .interpret import InterpretError, attention_lag_profile, beeswarm_export, model_shapley
from .lobster import LobsterParseError, parse_messages, parse_snapshots, write_messages, write_snapshots
from .models import ModelConfig, ModelError, SurvivalModel
from .probes import ProbeError, build_dataset, fill_stats, load_dataset, save_dataset
from .survival import ConvergenceError, SurvivalStatsError, kaplan_meier
from .synth import SynthConfig, generate
from .training import (
    Dataset,
    TrainConfig,
    TrainingError,
    compare_encoders,
    evaluate,
    fit,
    kernel_sweep,
    split_chronological,
)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DATA_ERRORS = (
    LobsterParseError,
    BookError,
    FeatureError,
    ProbeError,
    SurvivalStatsError,
    ModelError,
    InterpretError,
    FileNotFoundError,
    json.JSONDecodeError,
)
NUMERIC_ERRORS = (ConvergenceError, TrainingError, AutodiffError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, argv: list[str], inputs: list[Path], outputs: list[Path]) -> None:
    manifest = {
        "command": argv,
        "config_hash": hashlib.sha256(
            json.dumps(argv, sort_keys=True).encode()
        ).hexdigest(),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs},
        "version": __version__,
    }
    with open(out.with_suffix(out.suffix + ".run.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_split(path: str, fractions: tuple[float, float, float]):
    samples, manifest = load_dataset(path)
    tr, va, te = split_chronological(samples, fractions)
    return (
        Dataset.from_samples(tr),
        Dataset.from_samples(va),
        Dataset.from_samples(te),
        manifest,
    )


def _fractions(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise UsageError("--split needs three comma-separated fractions")
    return tuple(parts)


def _model_config(args, T: int, F: int) -> ModelConfig:
    return ModelConfig(
        T=T,
        F=F,
        encoder=args.encoder,
        latent=args.latent,
        hidden=args.hidden,
        heads=args.heads,
        kernel_size=args.kernel_size,
        seed=args.seed,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        patience=args.patience,
        seed=args.seed,
    )


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--latent", type=int, default=16)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=str, default="0.7,0.15,0.15")


def build_parser() -> _Parser:
    parser = _Parser(prog="lobfill", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate a synthetic message stream")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float, default=300.0)
    p.add_argument("--market-rate", type=float, default=1.0)
    p.add_argument("--limit-rate", type=float, default=4.0)
    p.add_argument("--regime-period", type=float, default=60.0)
    p.add_argument("--regime-market-mults", type=str, default="1.0")
    p.add_argument("--out", required=True)
    p.add_argument("--book-out", help="also write per-message book snapshots")
    p.add_argument("--levels", type=int, default=5)

    p = sub.add_parser("replay-check", help="verify snapshots against a replay")
    p.add_argument("--messages", required=True)
    p.add_argument("--book", required=True)
    p.add_argument("--levels", type=int, default=5)

    p = sub.add_parser("build-dataset", help="sample fill-time observations")
    p.add_argument("--messages", nargs="+", required=True)
    p.add_argument("--mode", default="pegged", help="tracked, pegged, or inside:<k>")
    p.add_argument("--n-per-day", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=50, help="lookback trades T")
    p.add_argument("--clock", choices=["wall", "transaction"], default="wall")
    p.add_argument("--feature-mode", choices=["raw", "orderflow"], default="raw")
    p.add_argument("--out", required=True)

    p = sub.add_parser("km", help="Kaplan-Meier estimate from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")

    p = sub.add_parser("fill-stats", help="fill probability and mean filltime")
    p.add_argument("--dataset", required=True)
    p.add_argument("--horizon", type=float, default=np.inf)
    p.add_argument("--out")

    p = sub.add_parser("fit", help="train a neural survival model")
    p.add_argument("--dataset", required=True)
    p.add_argument(
        "--encoder",
        choices=["mlp", "cnn", "conv_transformer"],
        default="conv_transformer",
    )
    _add_train_args(p)
    p.add_argument("--out", required=True, help="checkpoint path (.json)")

    p = sub.add_parser("evaluate", help="score a trained model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", type=str, default="0.7,0.15,0.15")
    p.add_argument("--subset", choices=["train", "val", "test"], default="test")
    p.add_argument("--out")

    p = sub.add_parser("benchmark", help="compare encoders across seeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--encoders", type=str, default="mlp,cnn,conv_transformer")
    p.add_argument("--seeds", type=str, default="0,1,2,3,4")
    _add_train_args(p)
    p.add_argument("--encoder", help=argparse.SUPPRESS, default="conv_transformer")
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="Shapley attribution and attention maps")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--time", type=float, help="horizon (default: sample's z)")
    p.add_argument("--permutations", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep-kernel", help="kernel-size sweep for the conv-transformer")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sizes", type=str, default="1,2,3,5,10,25,50")
    _add_train_args(p)
    p.add_argument("--encoder", help=argparse.SUPPRESS, default="conv_transformer")
    p.add_argument("--out", required=True)

    return parser


def _cmd_synth(args, argv):
    mults = tuple(float(v) for v in args.regime_market_mults.split(","))
    cfg = SynthConfig(
        seed=args.seed,
        horizon=args.horizon,
        market_rate=args.market_rate,
        limit_rate=args.limit_rate,
        regime_period=args.regime_period,
        regime_market_mults=mults,
    )
    out = Path(args.out)
    outputs = [out]
    if args.book_out:
        messages, snaps = generate(cfg, levels=args.levels)
        with open(args.book_out, "w") as fh:
            write_snapshots(snaps, fh)
        outputs.append(Path(args.book_out))
    else:
        messages = generate(cfg)
    with open(out, "w") as fh:
        write_messages(messages, fh)
    _write_manifest(out, argv, [], outputs)
    print(f"wrote {len(messages)} messages to {out}")
    return 0


def _cmd_replay_check(args, argv):
    with open(args.messages, "rb") as fh:
        messages = parse_messages(fh)
    with open(args.book, "rb") as fh:
        expected = parse_snapshots(fh, levels=args.levels)
    _, snaps = replay(messages, strict=True, levels=args.levels, check=True)
    if len(snaps) != len(expected):
        raise BookError(
            f"snapshot count mismatch: replay {len(snaps)} vs file {len(expected)}"
        )
    for i, (got, want) in enumerate(zip(snaps, expected)):
        if got != want:
            raise BookError(f"snapshot mismatch at message {i}: {got} != {want}")
    print(f"replay-check passed: {len(snaps)} snapshots identical")
    return 0


def _cmd_build_dataset(args, argv):
    streams = []
    for path in args.messages:
        with open(path, "rb") as fh:
            streams.append(parse_messages(fh))
    samples = build_dataset(
        streams,
        mode=args.mode,
        n_per_day=args.n_per_day,
        seed=args.seed,
        T=args.window,
        clock=args.clock,
        feature_mode=args.feature_mode,
    )
    out = Path(args.out)
    save_dataset(
        samples,
        out,
        {
            "mode": args.mode,
            "clock": args.clock,
            "feature_mode": args.feature_mode,
            "seed": args.seed,
            "sources": list(args.messages),
        },
    )
    _write_manifest(out, argv, [Path(p) for p in args.messages],
                    [out, out.with_suffix(out.suffix + ".manifest.json")])
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _cmd_km(args, argv):
    samples, _ = load_dataset(args.dataset)
    z = [s.z for s in samples]
    delta = [s.delta for s in samples]
    km = kaplan_meier(z, delta)
    payload = {
        "times": km.times.tolist(),
        "survival": km.surv.tolist(),
        "events": km.events.tolist(),
        "at_risk": km.at_risk.tolist(),
        "n": len(samples),
    }
    if args.out:
        out = Path(args.out)
        _write_json(out, payload)
        _write_manifest(out, argv, [Path(args.dataset)], [out])
    else:
        json.dump(payload, sys.stdout, indent=2)
        print()
    return 0


def _cmd_fill_stats(args, argv):
    samples, manifest = load_dataset(args.dataset)
    st = fill_stats(samples, horizon=args.horizon)
    payload = {
        "fill_probability": st.fill_probability,
        "mean_filltime": st.mean_filltime,
        "n": st.n,
        "mode": manifest.get("mode"),
    }
    if args.out:
        out = Path(args.out)
        _write_json(out, payload)
        _write_manifest(out, argv, [Path(args.dataset)], [out])
    else:
        json.dump(payload, sys.stdout, indent=2)
        print()
    return 0


def _cmd_fit(args, argv):
    train, val, _, _ = _load_split(args.dataset, _fractions(args.split))
    cfg = _model_config(args, train.x.shape[1], train.x.shape[2])
    res = fit(cfg, train, val, _train_config(args))
    out = Path(args.out)
    res.model.save(out)
    _write_manifest(out, argv, [Path(args.dataset)],
                    [out, out.with_suffix(".bin")])
    print(
        f"trained {args.encoder}: best val loss {res.best_val:.4f} "
        f"at epoch {res.best_epoch}; saved to {out}"
    )
    return 0


def _cmd_evaluate(args, argv):
    model = SurvivalModel.load(args.model)
    train, val, test, _ = _load_split(args.dataset, _fractions(args.split))
    data = {"train": train, "val": val, "test": test}[args.subset]
    report = evaluate(model, data)
    report["subset"] = args.subset
    if args.out:
        out = Path(args.out)
        _write_json(out, report)
        _write_manifest(out, argv, [Path(args.model), Path(args.dataset)], [out])
    else:
        json.dump(report, sys.stdout, indent=2)
        print()
    return 0


def _cmd_benchmark(args, argv):
    train, val, test, _ = _load_split(args.dataset, _fractions(args.split))
    cfg = _model_config(args, train.x.shape[1], train.x.shape[2])
    results = compare_encoders(
        train,
        val,
        test,
        cfg,
        encoders=tuple(args.encoders.split(",")),
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        train_config=_train_config(args),
    )
    out = Path(args.out)
    _write_json(out, results)
    _write_manifest(out, argv, [Path(args.dataset)], [out])
    for name, r in results.items():
        print(f"{name}: mean neg-rcll {r['mean_neg_rcll']:.4f}")
    return 0


def _cmd_explain(args, argv):
    model = SurvivalModel.load(args.model)
    samples, _ = load_dataset(args.dataset)
    if not 0 <= args.index < len(samples):
        raise InterpretError(f"sample index {args.index} out of range")
    sample = samples[args.index]
    background = np.mean([s.x for s in samples], axis=0).astype(np.float32)
    t = args.time if args.time is not None else float(sample.z)
    phi = model_shapley(
        model, sample.x, background, t, n_permutations=args.permutations,
        seed=args.seed,
    )
    payload = {
        "index": args.index,
        "t": t,
        "survival": model.survival(t, sample.x),
        "shapley": phi.tolist(),
        "efficiency_gap": float(
            phi.sum() - (model.survival(t, sample.x) - model.survival(t, background))
        ),
    }
    if model.config.encoder == "conv_transformer":
        heat = model.attention(sample.x)
        payload["attention_lag_profile"] = attention_lag_profile(heat).tolist()
    out = Path(args.out)
    _write_json(out, payload)
    _write_manifest(out, argv, [Path(args.model), Path(args.dataset)], [out])
    print(f"shapley sum {phi.sum():+.5f} for sample {args.index} at t={t:.4g}")
    return 0


def _cmd_sweep_kernel(args, argv):
    train, val, test, _ = _load_split(args.dataset, _fractions(args.split))
    cfg = _model_config(args, train.x.shape[1], train.x.shape[2])
    results = kernel_sweep(
        train,
        val,
        test,
        cfg,
        sizes=tuple(int(s) for s in args.sizes.split(",")),
        train_config=_train_config(args),
    )
    out = Path(args.out)
    _write_json(out, {str(k): v for k, v in results.items()})
    _write_manifest(out, argv, [Path(args.dataset)], [out])
    for size, score in sorted(results.items()):
        print(f"kernel {size}: neg-rcll {score:.4f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "replay-check": _cmd_replay_check,
    "build-dataset": _cmd_build_dataset,
    "km": _cmd_km,
    "fill-stats": _cmd_fill_stats,
    "fit": _cmd_fit,
    "evaluate": _cmd_evaluate,
    "benchmark": _cmd_benchmark,
    "explain": _cmd_explain,
    "sweep-kernel": _cmd_sweep_kernel,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.cmd](args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
