"""
Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cnn import CnnModel
from .dataset import EncodedDataset, load_dataset, save_dataset
from .encoder import EncoderConfig
from .errors import HpcError
from .evaluation import bench_timing, compare_app_level, evaluate
from .pcap import SplitSpec, load_manifest, read_pcap
from .pipeline import HierarchicalClassifier, classify_batch, default_catalog, load_catalog
from .trainer import TrainConfig, load_model, save_model, train

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _catalog(args):
    return load_catalog(args.catalog) if args.catalog else default_catalog()


def _encoder(args) -> EncoderConfig:
    return EncoderConfig(args.target_bytes, args.full_side, args.reduced_side, args.strip_link_layer)


def _select(dataset: EncodedDataset, args) -> EncodedDataset:
    """Apply --classes / --service / --level label selection."""
    if args.classes:
        dataset = dataset.restrict([c.strip() for c in args.classes.split(",")])
    if args.service or args.level == "service":
        catalog = _catalog(args)
        if args.service:
            apps = [a for a in catalog.apps_of(args.service) if a in dataset.class_names]
            if not apps:
                raise HpcError(f"dataset has no applications of service {args.service!r}")
            dataset = dataset.restrict(apps)
        if args.level == "service":
            dataset = dataset.relabel(catalog.app_to_service, catalog.services)
    return dataset


def _split(args) -> SplitSpec:
    return SplitSpec(args.train_fraction, args.seed)


def _app_models(specs) -> dict[str, CnnModel]:
    models = {}
    for spec in specs or ():
        service, sep, path = spec.partition("=")
        if not sep:
            raise UsageError(f"--app-model expects SERVICE=PATH, got {spec!r}")
        models[service] = load_model(path)
    return models


def cmd_ingest(args) -> int:
    config = _encoder(args)
    raw = load_manifest(args.manifest)
    encoded = EncodedDataset.from_packets(raw, config)
    save_dataset(encoded, args.out)
    for name, count in encoded.counts.items():
        print(f"{name} {count}")
    print(f"total {len(encoded)}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = _select(load_dataset(args.dataset), args)
    train_set, _ = dataset.split(_split(args))
    side = dataset.encoder.reduced_side if args.size == "reduced" else dataset.encoder.full_side
    train_set = EncodedDataset(train_set.at_side(side), train_set.labels, train_set.class_names, train_set.encoder)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
        num_filters=args.filters, stride=args.stride, seed=args.seed,
    )
    model, _ = train(train_set, config, progress=print)
    save_model(model, args.out)
    return EXIT_OK


def cmd_classify(args) -> int:
    h = HierarchicalClassifier(
        service_model=load_model(args.service_model),
        catalog=_catalog(args),
        app_models=_app_models(args.app_model),
        encoder_config=_encoder(args),
    )
    _, packets = read_pcap(args.pcap, args.label)
    result = classify_batch(h, packets)
    lines = ["index,service,service_prob,application,application_prob,dscp"]
    for i, v in enumerate(result.verdicts):
        if v is None:
            print(f"packet {i}: {result.errors[i]}", file=sys.stderr)
            continue
        app_prob = "" if v.application_probability is None else f"{v.application_probability:.6f}"
        lines.append(f"{i},{v.service},{v.service_probability:.6f},{v.application or ''},{app_prob},{v.dscp}")
    _write("\n".join(lines) + "\n", args.out)
    print(f"# {len(packets)} packets in {result.seconds:.3f} s", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.service_model and args.model:
        raise UsageError("give either --model or --service-model, not both")
    if not (args.service_model or args.model):
        raise UsageError("evaluate needs --model or --service-model")
    if args.service_model and (args.classes or args.service):
        raise UsageError("--classes/--service apply to single-model evaluation only")
    dataset = load_dataset(args.dataset)
    split = _split(args)
    if args.service_model:
        classifier = HierarchicalClassifier(
            load_model(args.service_model), _catalog(args), _app_models(args.app_model), dataset.encoder
        )
        _, test_set = dataset.split(split)
    else:
        classifier = load_model(args.model)
        _, test_set = _select(dataset, args).split(split)
    report = evaluate(classifier, test_set, trials=args.trials, per_class=args.per_class, seed=args.seed, level=args.level, split=split)
    sys.stdout.write(report.to_text())
    if args.csv:
        _write(report.to_csv(), args.csv)
    return EXIT_OK


def cmd_bench(args) -> int:
    if not (args.manifest or args.dataset):
        raise UsageError("bench needs --manifest or --dataset")
    full, reduced = load_model(args.full_model), load_model(args.reduced_model)
    if args.manifest:
        config = _encoder(args)
        packets = list(load_manifest(args.manifest).packets)
        if args.limit:
            packets = packets[: args.limit]
        report = bench_timing(full, reduced, packets, config, args.repetitions, args.include_encode)
    else:
        dataset = load_dataset(args.dataset)
        if args.limit:
            dataset = dataset.subset(np.arange(min(args.limit, len(dataset))))
        report = bench_timing(full, reduced, dataset, dataset.encoder, args.repetitions, args.include_encode)
    sys.stdout.write(report.to_text())
    if args.csv:
        _write(report.to_csv(), args.csv)
    return EXIT_OK


def cmd_compare_app(args) -> int:
    _, test_set = load_dataset(args.dataset).split(_split(args))
    table = compare_app_level(load_model(args.full_model), load_model(args.reduced_model), test_set)
    sys.stdout.write(table.to_text())
    if args.csv:
        _write(table.to_csv(), args.csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hpcnn", description="Hierarchical CNN classification of encrypted packets.")
    parser.add_argument("--version", action="version", version=f"hpcnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, split=True):
        p.add_argument("--seed", type=int, default=0, help="seed for every random choice")
        if split:
            p.add_argument("--train-fraction", type=float, default=0.4)

    def encoder_flags(p):
        p.add_argument("--target-bytes", type=int, default=1500)
        p.add_argument("--full-side", type=int, default=39)
        p.add_argument("--reduced-side", type=int, default=20)
        p.add_argument("--strip-link-layer", action="store_true")

    def selection_flags(p):
        p.add_argument("--catalog", help="catalog file (default: built-in chat/video catalog)")
        p.add_argument("--level", choices=("application", "service"), default="application")
        p.add_argument("--service", help="keep only applications of this service")
        p.add_argument("--classes", help="comma-separated class subset")

    p = sub.add_parser("ingest", help="manifest of pcaps -> packed dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    encoder_flags(p)
    common(p, split=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="packed dataset -> model file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--filters", type=int, default=16)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--size", choices=("full", "reduced"), default="full")
    selection_flags(p)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify every packet of a pcap")
    p.add_argument("--service-model", required=True)
    p.add_argument("--app-model", action="append", metavar="SERVICE=PATH")
    p.add_argument("--catalog")
    p.add_argument("--pcap", required=True)
    p.add_argument("--label")
    p.add_argument("--out", help="verdict CSV path (default stdout)")
    encoder_flags(p)
    common(p, split=False)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="balanced repeated-trial accuracy report")
    p.add_argument("--model")
    p.add_argument("--service-model")
    p.add_argument("--app-model", action="append", metavar="SERVICE=PATH")
    p.add_argument("--dataset", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--per-class", type=int)
    p.add_argument("--csv", help="write the CSV report here")
    selection_flags(p)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="full- vs reduced-size inference timing")
    p.add_argument("--full-model", required=True)
    p.add_argument("--reduced-model", required=True)
    p.add_argument("--manifest")
    p.add_argument("--dataset")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--limit", type=int)
    p.add_argument("--include-encode", action="store_true")
    p.add_argument("--csv")
    encoder_flags(p)
    common(p, split=False)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare-app", help="per-application accuracy of two models")
    p.add_argument("--full-model", required=True)
    p.add_argument("--reduced-model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--csv")
    common(p)
    p.set_defaults(func=cmd_compare_app)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return e.code or EXIT_OK
    except (HpcError, OSError, UnicodeDecodeError) as e:
        print(f"hpcnn: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli_main())
