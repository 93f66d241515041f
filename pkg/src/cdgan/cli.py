"""Command-line entry points: ``train``, ``eval``, ``ablate``, ``infer`` and ``verify``.

A JSON config file (``--config``) is the base of every run; flags and
``--set key=value`` pairs override it. The resolved config is written to
the run directory, so ``--config RUN/config.json`` reproduces a run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .core import ABLATION_PRESETS, LossWeights, denormalize
from .data import DatasetError, DatasetManifest, KNOWN_DATASETS, make_toy_dataset, preprocess, save_image
from .trainer import TrainConfig, latest_checkpoint, load_state, train

log = logging.getLogger("cdgan")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "preset")
WEIGHT_KEYS = tuple(f"weights.{f.name}" for f in fields(LossWeights))


class UsageError(Exception):
    """Bad input from the command line; exits with code 2."""


# -- config resolution ---------------------------------------------------------


def _coerce(key: str, text: str):
    if key.startswith("weights."):
        return float(text)
    default = getattr(TrainConfig(), key)
    if isinstance(default, int):
        value = float(text)
        if value != int(value):
            raise ValueError(text)
        return int(value)
    return type(default)(text)


def parse_override(item: str) -> tuple[str, object]:
    key, sep, value = item.partition("=")
    key = key.strip()
    if not sep:
        raise UsageError(f"override {item!r} is not of the form key=value")
    if key == "preset":
        return key, value
    if key not in CONFIG_KEYS and key not in WEIGHT_KEYS:
        raise UsageError(f"unknown config key {key!r}; documented keys: {', '.join(('preset',) + CONFIG_KEYS + WEIGHT_KEYS)}")
    try:
        return key, _coerce(key, value)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {value!r}") from exc


def resolve_config(args) -> TrainConfig:
    """Config file, then ``--set`` overrides, then dedicated flags."""
    base = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        base = json.loads(path.read_text())
    unknown = set(base) - set(CONFIG_KEYS) - {"preset", "weights"}
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    base.setdefault("weights", {})
    explicit = set()
    for item in getattr(args, "set", None) or []:
        key, value = parse_override(item)
        explicit.add(key)
        if key.startswith("weights."):
            base["weights"][key.split(".", 1)[1]] = value
        else:
            base[key] = value
    if getattr(args, "preset", None):
        base["preset"] = args.preset
    if getattr(args, "profile", None):
        base["network_profile"] = args.profile
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        # keep the constant/decay proportion of the base schedule
        ref = TrainConfig.from_dict({k: v for k, v in base.items() if k != "preset"})
        base["epochs_total"] = args.epochs
        if "epochs_constant_lr" not in explicit:
            base["epochs_constant_lr"] = args.epochs * ref.epochs_constant_lr // ref.epochs_total
    try:
        return TrainConfig.from_dict(base)
    except KeyError as exc:
        raise UsageError(str(exc.args[0]) if exc.args else str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc


# -- datasets ------------------------------------------------------------------


def resolve_manifest(args) -> DatasetManifest | None:
    """``None`` for the toy dataset, else a manifest whose root exists."""
    name = args.dataset
    if name == "toy":
        return None
    if name.lower() in KNOWN_DATASETS:
        root = Path(args.data_root) if args.data_root else Path("data") / name.lower()
        manifest = DatasetManifest.for_dataset(name, root)
    else:
        path = Path(name)
        if not path.is_file():
            raise UsageError(
                f"dataset manifest not found: {path} (use 'toy', one of {sorted(KNOWN_DATASETS)}, or a manifest file)"
            )
        manifest = DatasetManifest.from_file(path)
        if args.data_root:
            manifest = replace(manifest, root=Path(args.data_root))
    if not manifest.root.exists():
        raise UsageError(f"dataset root not found: {manifest.root}")
    return manifest


def load_splits(args):
    manifest = resolve_manifest(args)
    if manifest is None:
        train_set = make_toy_dataset(args.toy_pairs, args.toy_size, args.toy_seed)
        test_set = make_toy_dataset(args.toy_test_pairs, args.toy_size, args.toy_seed + 1)
        return train_set, test_set
    from .data import load_dataset

    return load_dataset(manifest, workers=args.workers)


def lpips_backbone(args):
    if args.lpips_net or args.lpips_lin:
        if not (args.lpips_net and args.lpips_lin):
            raise UsageError("--lpips-net and --lpips-lin must be given together")
        from .metrics import AlexNetBackbone

        return AlexNetBackbone(args.lpips_net, args.lpips_lin)
    log.warning("no LPIPS weights given; LPIPS values use a random backbone and are not comparable to published scores")
    return None


def resolve_checkpoint(path) -> Path:
    path = Path(path)
    if path.is_dir():
        found = latest_checkpoint(path)
        if found is None:
            raise UsageError(f"no checkpoints under {path}")
        return found
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return path


# -- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    train_set, _ = load_splits(args)
    out = Path(args.out) if args.out else Path("runs") / cfg.preset.cli_name.replace("+", "_plus")
    result = train(cfg, train_set, run_dir=out, resume=args.resume)
    last = result.log[-1].report if result.log else None
    print(f"trained {cfg.preset.cli_name} for {result.state.epoch} epochs ({result.state.step} steps) -> {out}")
    if last is not None:
        print(f"final generator objective {last.total_generator:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate

    ckpt = resolve_checkpoint(args.checkpoint)
    state, _ = load_state(ckpt)
    _, test_set = load_splits(args)
    report = evaluate(state, test_set, args.direction, lpips_backbone(args))
    out = Path(args.out) if args.out else ckpt.parent.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.tsv").write_text(report.to_tsv())
    for metric, value in report.means.items():
        print(f"{metric}\t{value:.6g}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import run_ablation

    cfg = resolve_config(args)
    train_set, test_set = load_splits(args)
    out = Path(args.out) if args.out else Path("runs") / "ablation"
    result = run_ablation(cfg, train_set, test_set, out_dir=out, presets=ABLATION_PRESETS,
                          direction=args.direction, backbone=lpips_backbone(args), workers=args.parallel)
    print(result.table(), end="")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .trainer import infer

    state, _ = load_state(resolve_checkpoint(args.checkpoint))
    out = Path(args.out) if args.out else Path("translated")
    out.mkdir(parents=True, exist_ok=True)
    for src in args.inputs:
        src = Path(src)
        if not src.is_file():
            raise UsageError(f"input image not found: {src}")
        try:
            img = preprocess(src, args.size)
        except DatasetError as exc:
            raise UsageError(str(exc)) from exc
        dest = out / f"{src.stem}_{args.direction.lower()}.png"
        save_image(denormalize(infer(state, img, args.direction)), dest)
        print(dest)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_checks

    only = None
    if args.only:
        only = [s.strip() for item in args.only for s in item.split(",") if s.strip()]
        bad = [s for s in only if s not in SUITES]
        if bad:
            raise UsageError(f"unknown suite(s) {bad}; choose from {', '.join(SUITES)}")
    results = run_checks(only, echo=lambda line: print(line, flush=True))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_OK if not failed else EXIT_FAIL


# -- parser --------------------------------------------------------------------


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file (keys of config.json in a run directory)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. base_lr=1e-4 or weights.omega_a=20 (repeatable)")
    p.add_argument("--preset", help="loss preset, e.g. cdgan, cyclegan+ (default: cdgan)")
    p.add_argument("--profile", choices=("full", "test"), help="network size (default: test)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, help="total epochs; the constant-LR share keeps its proportion unless set explicitly")


def _add_data_flags(p):
    p.add_argument("--dataset", default="toy",
                   help=f"'toy', a known dataset name ({', '.join(sorted(KNOWN_DATASETS))}) or a manifest .ini file")
    p.add_argument("--data-root", help="root directory for a known dataset (default: data/<name>)")
    p.add_argument("--workers", type=int, default=1, help="image decoding threads")
    p.add_argument("--toy-pairs", type=int, default=64)
    p.add_argument("--toy-test-pairs", type=int, default=16)
    p.add_argument("--toy-size", type=int, default=64)
    p.add_argument("--toy-seed", type=int, default=0)


def _add_metric_flags(p):
    p.add_argument("--direction", choices=("A2B", "B2A"), default="A2B")
    p.add_argument("--lpips-net", help="AlexNet ImageNet weights (.pth)")
    p.add_argument("--lpips-lin", help="LPIPS linear-layer weights (.pth)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one preset")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--out", help="run directory (default: runs/<preset>)")
    p.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("checkpoint", help="checkpoint file or run directory")
    _add_data_flags(p)
    _add_metric_flags(p)
    p.add_argument("--out", help="directory for metrics.tsv (default: the run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score the nine ablation presets")
    _add_config_flags(p)
    _add_data_flags(p)
    _add_metric_flags(p)
    p.add_argument("--out", help="sweep directory (default: runs/ablation)")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="run N presets in parallel processes")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="translate images with a trained checkpoint")
    p.add_argument("checkpoint", help="checkpoint file or run directory")
    p.add_argument("inputs", nargs="+", help="input images")
    p.add_argument("--direction", choices=("A2B", "B2A"), default="A2B")
    p.add_argument("--size", type=int, default=256, help="resize inputs to SIZE x SIZE")
    p.add_argument("--out", help="output directory (default: translated/)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("verify", help="run the acceptance checks (no dataset needed)")
    p.add_argument("--only", action="append", metavar="SUITE",
                   help="comma-separated suites: losses, gradients, architecture, schedule, table, "
                        "metrics, presets, convergence, determinism, ablation")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cdgan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"cdgan {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
