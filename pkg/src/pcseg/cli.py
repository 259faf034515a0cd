"""Command-line entry point.

Subcommands: synth, audit, episodes, gradcheck, train, eval. Every
command takes --seed and produces byte-deterministic outputs for a fixed
seed. Exit codes: 0 success, 2 I/O failure, 64 usage error, 70 internal
numeric failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import gradcheck as G
from . import io as pio
from . import model as M
from .config import RunConfig
from .episodes import (
    EpisodeDescriptor,
    PoolExhaustedError,
    confusion_counts,
    generate_episode,
    make_split,
    miou,
)
from .geometry import grid_subsample, split_blocks
from .sampling import leakage_audit
from .seeding import derive_seed
from .synth import make_pool

EXIT_OK = 0
EXIT_IO = 2
EXIT_USAGE = 64
EXIT_NUMERIC = 70


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
        config.validate()
    return config


def _pool_paths(pool_args) -> list[str]:
    paths: list[str] = []
    for entry in pool_args:
        if os.path.isdir(entry):
            names = sorted(n for n in os.listdir(entry) if n.endswith(".pcseg"))
            if not names:
                raise FileNotFoundError(f"{entry}: no .pcseg files")
            paths.extend(os.path.join(entry, n) for n in names)
        else:
            paths.append(entry)
    return paths


def load_pool(pool_args, config: RunConfig):
    """Read scene files and preprocess: voxel subsample, then block split.

    Returns (clouds, sources); a file that splits into several blocks
    contributes entries tagged `path#k`.
    """
    clouds, sources = [], []
    for path in _pool_paths(pool_args):
        scene = grid_subsample(pio.read_cloud(path), config.grid_size)
        blocks = split_blocks(scene, config.block_size)
        for i, block in enumerate(blocks):
            clouds.append(block)
            sources.append(path if len(blocks) == 1 else f"{path}#{i}")
    return clouds, sources


def _pool_classes(clouds) -> list[int]:
    labels = np.unique(np.concatenate([c.labels for c in clouds]))
    return [int(c) for c in labels if c >= 0]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    pool = make_pool(
        derive_seed(args.seed, "synth"),
        args.scenes,
        range(1, args.classes + 1),
        blobs_per_scene=args.blobs,
        points_per_blob=args.points,
    )
    os.makedirs(args.out, exist_ok=True)
    for i, cloud in enumerate(pool):
        pio.write_cloud(os.path.join(args.out, f"scene_{i:03d}.pcseg"), cloud)
    print(f"wrote {len(pool)} scenes to {args.out}")
    return EXIT_OK


def cmd_audit(args) -> int:
    blocks = []
    for path in args.cloud:
        cloud = pio.read_cloud(path)
        for sampler in ("biased", "uniform"):
            report = leakage_audit(
                cloud, args.fg_class, args.m, sampler, args.trials,
                derive_seed(args.seed, f"audit-{sampler}"),
            )
            blocks.append(f"cloud={path}\nsampler={sampler}\n" + report.to_text())
    text = "\n".join(blocks)
    if args.out:
        pio.atomic_write_text(args.out, text)
        print(f"wrote audit report to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_episodes(args) -> int:
    config = _load_config(args)
    clouds, sources = load_pool(args.pool, config)
    split = make_split(_pool_classes(clouds), args.fold)
    descriptors = []
    for i in range(args.n):
        seed = derive_seed(config.seed, "episodes", i)
        episode = generate_episode(
            clouds, split, args.phase, config.n_way, config.k_shot,
            config.min_fg_points, config.max_points, seed,
        )
        descriptors.append(
            EpisodeDescriptor(
                seed=seed,
                target_classes=episode.target_classes,
                support_sources=tuple(sources[j] for way in episode.support_indices for j in way),
                query_source=sources[episode.query_index],
            )
        )
    pio.write_manifest(args.out, descriptors)
    print(f"wrote {len(descriptors)} episodes to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = G.run_suite(args.seed, trials=args.trials, include_corrupt=args.corrupt)
    lines = []
    failed = False
    for name, err in results:
        status = "PASS" if err < G.TOLERANCE else "FAIL"
        failed = failed or status == "FAIL"
        lines.append(f"{name} {status} max_rel_error={err:.3e}")
    text = "\n".join(lines) + "\n"
    if args.out:
        pio.atomic_write_text(args.out, text)
        print(f"wrote gradient report to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    clouds, _ = load_pool(args.pool, config)
    classes = _pool_classes(clouds)
    split = make_split(classes, args.fold)
    result = M.meta_train(clouds, split, config)
    meta = {"fold": args.fold, "classes": ",".join(str(c) for c in classes)}
    pio.save_model(args.out, result.params, result.bank, config, meta)
    if result.losses:
        tail = result.losses[-50:]
        print(f"trained {len(result.losses)} episodes, final-{len(tail)} mean loss {sum(tail) / len(tail):.6f}")
    else:
        print("trained 0 episodes (artifact equals initialization)")
    print(f"wrote model to {args.out}")
    return EXIT_OK


def _oracle_eval(clouds, split, config: RunConfig, n_episodes: int, seed: int):
    totals: dict[int, np.ndarray] = {}
    episode_mious = []
    for i in range(n_episodes):
        ep = generate_episode(
            clouds, split, "test", config.n_way, config.k_shot,
            config.min_fg_points, config.max_points, derive_seed(seed, "eval", i),
        )
        _, mean = miou(ep.query_gt, ep.query_gt, ep.n_way)
        if math.isfinite(mean):
            episode_mious.append(mean)
        for cid, counts in confusion_counts(ep.query_gt, ep.query_gt, ep.target_classes).items():
            totals.setdefault(cid, np.zeros(3, dtype=np.int64))
            totals[cid] += counts
    per_class = {c: float(tp / (tp + fp + fn)) for c, (tp, fp, fn) in sorted(totals.items()) if tp + fp + fn}
    mean_iou = float(np.mean(list(per_class.values()))) if per_class else math.nan
    ep_mean = float(np.mean(episode_mious)) if episode_mious else math.nan
    return M.EvalResult(per_class, mean_iou, ep_mean, n_episodes)


def cmd_eval(args) -> int:
    if not args.oracle and not args.model:
        sys.stderr.write("pcseg eval: error: provide --model (repeatable) or --oracle\n")
        return EXIT_USAGE
    pairs: list[tuple[str, object]] = [("episodes", args.episodes), ("seed", args.seed)]
    fold_means = []
    if args.oracle:
        config = _load_config(args)
        clouds, _ = load_pool(args.pool, config)
        split = make_split(_pool_classes(clouds), args.fold)
        result = _oracle_eval(clouds, split, config, args.episodes, args.seed)
        results = [(args.fold, result)]
    else:
        results = []
        for path in args.model:
            params, bank, config, meta = pio.load_model(path)
            fold = int(meta["fold"])
            classes = [int(c) for c in meta["classes"].split(",")]
            split = make_split(classes, fold)
            clouds, _ = load_pool(args.pool, config)
            if args.zero_bank:
                bank = bank.zeroed()
            result = M.evaluate(clouds, split, params, bank, config, args.episodes, args.seed)
            results.append((fold, result))
    for fold, result in results:
        prefix = f"fold{fold}_"
        for cid, iou in result.per_class.items():
            pairs.append((f"{prefix}iou_{cid}", iou))
        pairs.append((f"{prefix}mean_iou", result.mean_iou))
        pairs.append((f"{prefix}episode_miou_mean", result.episode_miou_mean))
        fold_means.append(result.mean_iou)
    pairs.append(("mean_iou", float(np.mean(fold_means))))
    pio.write_metrics(args.out, pairs)
    print(f"wrote metrics to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="pcseg", description="Few-shot point cloud segmentation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic blob scenes")
    p.add_argument("--out", required=True, help="output directory for .pcseg files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--blobs", type=int, default=3)
    p.add_argument("--points", type=int, default=400)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("audit", help="foreground-density audit of both samplers")
    p.add_argument("--cloud", required=True, nargs="+", help="input .pcseg file(s)")
    p.add_argument("--fg-class", required=True, type=int, dest="fg_class")
    p.add_argument("--m", type=int, default=2048, help="points per draw")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report file (stdout if omitted)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("episodes", help="write an episode manifest")
    p.add_argument("--pool", required=True, nargs="+", help="scene files or directories")
    p.add_argument("--config", help="config file (defaults applied if omitted)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--n", type=int, default=100, help="episode count")
    p.add_argument("--phase", choices=("train", "test"), default="test")
    p.add_argument("--fold", type=int, choices=(0, 1), default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_episodes)

    p = sub.add_parser("gradcheck", help="finite-difference gradient report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--corrupt", action="store_true", help="include a deliberately broken gradient (must FAIL)")
    p.add_argument("--out", help="report file (stdout if omitted)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="meta-train on a scene pool")
    p.add_argument("--pool", required=True, nargs="+")
    p.add_argument("--config", help="config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--fold", type=int, choices=(0, 1), default=0)
    p.add_argument("--out", required=True, help="model artifact path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained model(s) on held-out episodes")
    p.add_argument("--pool", required=True, nargs="+")
    p.add_argument("--model", action="append", default=[], help="model artifact (repeat for per-fold rows)")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero-bank", action="store_true", dest="zero_bank",
                   help="ablation: wipe the class-prototype bank before evaluating")
    p.add_argument("--oracle", action="store_true", help="score ground truth against itself (pipeline sanity)")
    p.add_argument("--fold", type=int, choices=(0, 1), default=0, help="fold for --oracle")
    p.add_argument("--config", help="config file for --oracle")
    p.add_argument("--out", required=True, help="metrics file")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except M.NonFiniteLossError as exc:
        sys.stderr.write(f"pcseg: numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (OSError, ValueError, PoolExhaustedError) as exc:
        sys.stderr.write(f"pcseg: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
