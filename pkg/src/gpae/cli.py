"""Command-line interface.

Subcommands: embed, timestamps, complexity, probe, init-weights, inspect.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import audio
from .arch import build_arch
from .complexity import complexity_report
from .embedder import scene_embedding, timestamp_embeddings
from .errors import (
    ConfigurationError,
    FormatError,
    GpaeError,
    InvalidConfigError,
    InvalidInputError,
    InvalidTaskError,
    ModelIntegrityError,
    NumericFailureError,
)
from .features import FeatureSelector
from .frontend import SAMPLE_RATE
from .modelio import (
    load_model,
    random_init,
    read_model_file,
    save_embeddings,
    save_model,
)
from .network import Model
from .probe import MlpConfig, load_references, load_task_dir, normalize_scores, train_probe

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(GpaeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_model_source(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="path to a model file")
    group.add_argument("--alpha", type=float,
                       help="width multiplier for a randomly initialized model")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for random weights (with --alpha)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gpae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    embed = sub.add_parser("embed", help="scene embedding per input WAV file")
    _add_model_source(embed)
    embed.add_argument("--features", default="M_B+L", help="feature selector, e.g. M_B+L")
    embed.add_argument("--out", required=True, help="output path")
    embed.add_argument("--format", choices=("binary", "csv"), default="binary")
    embed.add_argument("inputs", nargs="+", metavar="WAV")

    ts = sub.add_parser("timestamps", help="timestamp embeddings for one WAV file")
    _add_model_source(ts)
    ts.add_argument("--features", default="M_B+L")
    ts.add_argument("--out", required=True)
    ts.add_argument("--format", choices=("binary", "csv"), default="binary")
    ts.add_argument("inputs", nargs=1, metavar="WAV")

    comp = sub.add_parser("complexity", help="parameter and MAC report")
    comp.add_argument("--alpha", type=float, required=True)
    comp.add_argument("--seconds", type=float, default=10.0)
    comp.add_argument("--per-layer", action="store_true")
    comp.add_argument("--json", action="store_true")

    probe = sub.add_parser("probe", help="train probes on an embedding directory")
    probe.add_argument("--data", required=True, help="directory of task subdirectories")
    probe.add_argument("--references", required=True,
                       help="JSON map: task -> {reference, group}")
    probe.add_argument("--seed", type=int, default=0)
    probe.add_argument("--hidden-width", type=int, default=512)
    probe.add_argument("--epochs", type=int, default=200)
    probe.add_argument("--lr", type=float, default=1e-3)
    probe.add_argument("--patience", type=int, default=10)
    probe.add_argument("--json", action="store_true")

    init = sub.add_parser("init-weights", help="write a randomly initialized model file")
    init.add_argument("--alpha", type=float, required=True)
    init.add_argument("--seed", type=int, default=0)
    init.add_argument("--out", required=True)

    inspect = sub.add_parser("inspect", help="dump a model file's config and tensors")
    inspect.add_argument("model", metavar="MODELFILE")
    return parser


def _resolve_model(args) -> Model:
    if args.model is not None:
        return load_model(args.model)
    spec = build_arch(args.alpha)
    return Model(spec, random_init(spec, seed=args.seed))


def _worker_count(n_items: int) -> int:
    env = os.environ.get("GPAE_THREADS")
    try:
        limit = int(env) if env else (os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"GPAE_THREADS must be an integer, got {env!r}") from None
    return max(1, min(limit, n_items))


def _write_csv(path, vectors, timestamps=None):
    # 17 significant digits round-trip float32 exactly through decimal text.
    with open(path, "w") as fh:
        for k, row in enumerate(np.atleast_2d(vectors)):
            cells = [f"{float(v):.17g}" for v in row]
            if timestamps is not None:
                cells.insert(0, f"{float(timestamps[k]):.17g}")
            fh.write(",".join(cells) + "\n")


def _cmd_embed(args) -> int:
    model = _resolve_model(args)
    selector = FeatureSelector.parse(args.features)
    inputs = [Path(p) for p in args.inputs]
    for path in inputs:
        if not path.exists():
            raise InvalidInputError(f"input file {path} does not exist")

    def embed_one(path):
        clip = audio.load_clip(path, target_rate=SAMPLE_RATE)
        return scene_embedding(clip, model, selector).embedding.values

    workers = _worker_count(len(inputs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(embed_one, inputs))
    else:
        vectors = [embed_one(p) for p in inputs]
    matrix = np.stack(vectors)
    if args.format == "binary":
        save_embeddings(args.out, matrix, str(selector))
    else:
        _write_csv(args.out, matrix)
    print(f"wrote {len(inputs)} embedding(s) of dim {matrix.shape[1]} to {args.out}")
    return EXIT_OK


def _cmd_timestamps(args) -> int:
    model = _resolve_model(args)
    selector = FeatureSelector.parse(args.features)
    path = Path(args.inputs[0])
    if not path.exists():
        raise InvalidInputError(f"input file {path} does not exist")
    clip = audio.load_clip(path, target_rate=SAMPLE_RATE)
    result = timestamp_embeddings(clip, model, selector)
    matrix = np.stack([e.values for e in result.embeddings])
    if args.format == "binary":
        save_embeddings(args.out, matrix, str(selector), timestamps=result.timestamps_s)
    else:
        _write_csv(args.out, matrix, timestamps=result.timestamps_s)
    print(
        f"wrote {len(result.embeddings)} embeddings of dim {matrix.shape[1]} "
        f"to {args.out}"
    )
    return EXIT_OK


def _cmd_complexity(args) -> int:
    spec = build_arch(args.alpha)
    if args.seconds <= 0:
        raise UsageError(f"--seconds must be positive, got {args.seconds}")
    frames = int(args.seconds * SAMPLE_RATE) // 320 + 1
    report = complexity_report(spec, input_frames=frames)
    if args.json:
        payload = {
            "alpha": report.alpha,
            "input_frames": report.input_frames,
            "total_params": report.total_params,
            "total_macs": report.total_macs,
        }
        if args.per_layer:
            payload["per_layer"] = [
                {"name": l.name, "params": l.params, "macs": l.macs}
                for l in report.per_layer
            ]
        print(json.dumps(payload, indent=2))
        return EXIT_OK
    print(f"alpha          {report.alpha}")
    print(f"input frames   {report.input_frames} ({args.seconds:g} s)")
    print(f"total params   {report.total_params:,}")
    print(f"total MACs     {report.total_macs:,}")
    if args.per_layer:
        print(f"{'layer':<18}{'params':>12}{'MACs':>16}")
        for layer in report.per_layer:
            print(f"{layer.name:<18}{layer.params:>12,}{layer.macs:>16,}")
    return EXIT_OK


def _cmd_probe(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise InvalidInputError(f"--data {data_dir} is not a directory")
    reference, groups = load_references(args.references)
    cfg = MlpConfig(hidden_width=args.hidden_width, epochs=args.epochs,
                    learning_rate=args.lr, patience=args.patience, seed=args.seed)
    raw: dict[str, float] = {}
    task_dirs = sorted(p for p in data_dir.iterdir() if p.is_dir())
    if not task_dirs:
        raise InvalidInputError(f"--data {data_dir} contains no task directories")
    for task_dir in task_dirs:
        task = load_task_dir(task_dir, group=groups.get(task_dir.name))
        _, score = train_probe(task, cfg)
        raw[task.name] = score
    table = normalize_scores(raw, reference, groups)
    if args.json:
        print(json.dumps({
            "per_task": {
                name: {"raw": r, "reference": ref, "normalized": norm}
                for name, (r, ref, norm) in table.per_task.items()
            },
            "group_means": table.group_means,
            "overall_mean": table.overall_mean,
        }, indent=2))
        return EXIT_OK
    print(f"{'task':<24}{'raw':>10}{'reference':>12}{'normalized':>12}")
    for name, (r, ref, norm) in table.per_task.items():
        print(f"{name:<24}{r:>10.4f}{ref:>12.4f}{norm:>12.2f}")
    for group, mean in table.group_means.items():
        print(f"group {group:<18}{mean:>34.2f}")
    print(f"{'overall':<24}{table.overall_mean:>34.2f}")
    return EXIT_OK


def _cmd_init_weights(args) -> int:
    spec = build_arch(args.alpha)
    weights = random_init(spec, seed=args.seed)
    save_model(args.out, spec, weights)
    print(f"wrote alpha={args.alpha} model with seed {args.seed} to {args.out}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    config, tensors = read_model_file(args.model)
    print(json.dumps(config, indent=2, sort_keys=True))
    total = 0
    print(f"{'tensor':<28}{'shape':<22}{'values':>12}")
    for name, tensor in tensors.items():
        total += tensor.size
        print(f"{name:<28}{str(tuple(tensor.shape)):<22}{tensor.size:>12,}")
    print(f"{'total':<28}{'':<22}{total:>12,}")
    return EXIT_OK


_COMMANDS = {
    "embed": _cmd_embed,
    "timestamps": _cmd_timestamps,
    "complexity": _cmd_complexity,
    "probe": _cmd_probe,
    "init-weights": _cmd_init_weights,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UsageError, InvalidConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, FormatError, ModelIntegrityError, InvalidTaskError,
            ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
