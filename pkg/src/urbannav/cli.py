"""``urbannav`` command line.

All subcommands share one run directory (``--out``)::

    data/      synth: pose logs, detection logs, descriptors, manifest.json
    shards/    process, tag: shard set + proportions report
    train/     train: checkpoints, train_log.txt, last.pt
    finetune/  finetune
    eval/      eval: report.json, report.txt, predictions.npz
    sim/       simulate: courses.yaml, trials.jsonl, success_table.*
    plots/     plot

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import AppConfig, ConfigError, dump_config, load_config
from .errors import CountMismatch, DataError, NumericalError, UrbanNavError

log = logging.getLogger("urbannav")

CONFIG_ENV = "URBANNAV_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _guard(path: Path, force: bool):
    """Refuse to overwrite an existing non-empty output unless ``--force``."""
    if path.exists() and (path.is_file() or any(path.iterdir())):
        if not force:
            raise UsageError(f"{path} already exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()


def _seeded(cfg: AppConfig, seed: int | None) -> AppConfig:
    if seed is None:
        return cfg
    from dataclasses import replace

    return replace(
        cfg,
        synth=replace(cfg.synth, seed=seed),
        data=replace(cfg.data, sampling=replace(cfg.data.sampling, seed=seed)),
        train=replace(cfg.train, seed=seed),
        sim=replace(cfg.sim, seed=seed),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: AppConfig) -> int:
    from .synthetic import write_synthetic_corpus

    out = args.out / "data"
    _guard(out, args.force)
    s = cfg.synth
    manifest = write_synthetic_corpus(out, s.seed, args.n or s.n, args.domain or s.domain, s.length,
                                      cfg.data.sampling, s.position_noise)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_process(args, cfg: AppConfig) -> int:
    from .pipeline import process_manifest

    manifest = args.manifest or args.out / "data" / "manifest.json"
    out = args.out / "shards"
    _guard(out, args.force)
    summary = process_manifest(manifest, out, cfg.data.sampling, workers=args.workers,
                               frame_stride=cfg.data.frame_stride)
    total = sum(summary.processed.values())
    print(f"{len(summary.processed)} trajectories, {total} samples -> {out}")
    for tid, msg in summary.failed.items():
        print(f"failed {tid}: {msg}", file=sys.stderr)
    return EXIT_DATA if summary.failed else EXIT_OK


def cmd_tag(args, cfg: AppConfig) -> int:
    from .pipeline import tag_shard_set

    shards = args.shards or args.out / "shards"
    report = tag_shard_set(shards, cfg.tagger)
    txt = Path(shards) / "proportions.txt"
    if txt.exists():
        print(txt.read_text(), end="")
    print(f"untaggable action angles: {report['untaggable_angle']}")
    return EXIT_OK


def _train_samples(paths):
    from .pipeline import load_samples

    samples = []
    for p in paths:
        samples.extend(load_samples(p, resolve_refs=True)[0])
    return samples


def _finish_training(result, out: Path):
    shutil.copyfile(result.checkpoint, out / "last.pt")
    summary = {"checkpoint": str(result.checkpoint.name), "epoch_losses": result.epoch_losses,
               "eval_maoe": result.eval_maoe, "steps": len(result.history)}
    (out / "result.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"checkpoint {out / 'last.pt'}")


def cmd_train(args, cfg: AppConfig) -> int:
    from .training import train

    paths = args.shards or cfg.train.shards or [args.out / "shards"]
    samples = _train_samples(paths)
    out = args.out / "train"
    _guard(out, args.force)
    out.mkdir(parents=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    result = train(cfg.model, cfg.train, samples, out, evaluate=cfg.train.eval_every > 0)
    _finish_training(result, out)
    return EXIT_OK


def cmd_finetune(args, cfg: AppConfig) -> int:
    from .training import finetune

    base = args.base or args.out / "train" / "last.pt"
    paths = args.shards or cfg.train.finetune_shards or [args.out / "shards"]
    samples = _train_samples(paths)
    out = args.out / "finetune"
    _guard(out, args.force)
    out.mkdir(parents=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    result = finetune(base, cfg.train, samples, out, evaluate=cfg.train.eval_every > 0)
    _finish_training(result, out)
    return EXIT_OK


def _load_predictions(path, samples):
    with np.load(path, allow_pickle=False) as z:
        actions, prob = z["actions"], z["arrival_prob"]
        if "trajectory_id" in z.files and len(z["trajectory_id"]) == len(samples):
            keys = list(zip(z["trajectory_id"].tolist(), z["t"].tolist()))
            if keys != [(s.trajectory_id, s.t) for s in samples]:
                raise CountMismatch("predictions are not aligned with the evaluation samples")
    return actions, prob


def cmd_eval(args, cfg: AppConfig) -> int:
    from .features import make_provider
    from .metrics import evaluate
    from .model import load_checkpoint
    from .pipeline import load_samples
    from .scenarios import scenario_proportions
    from .training import predict

    shards = args.shards or args.out / "shards"
    samples, _ = load_samples(shards, resolve_refs=True)
    out = args.out / "eval"
    _guard(out, args.force)
    out.mkdir(parents=True)
    if args.predictions:
        actions, prob = _load_predictions(args.predictions, samples)
    else:
        ckpt = args.checkpoint or args.out / "train" / "last.pt"
        net, _ = load_checkpoint(ckpt)
        provider = make_provider(net.cfg.backbone_id, net.cfg.token_dim, seed=net.cfg.provider_seed,
                                 weights=net.cfg.backbone_weights)
        actions, prob = predict(net, provider, samples, cfg.eval.batch_size)
    np.savez(out / "predictions.npz", actions=actions, arrival_prob=prob,
             trajectory_id=np.array([s.trajectory_id for s in samples], dtype=str),
             t=np.array([s.t for s in samples], dtype=np.int64))
    report = evaluate(samples, actions, prob, action_angle=cfg.tagger.action_step, eps=cfg.eval.eps,
                      aggregator=cfg.eval.aggregator, temperature=cfg.eval.softmax_temperature)
    tagged = [s.scenario_tags for s in samples if s.scenario_tags is not None]
    props = scenario_proportions(tagged) if len(tagged) == len(samples) and tagged else None
    d = report.to_dict()
    d["proportions"] = props
    (out / "report.json").write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")
    text = report.render_text(props)
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_simulate(args, cfg: AppConfig) -> int:
    from .sim import (ModelPolicy, OraclePolicy, SyntheticObservations, format_success_table,
                      generate_courses, read_courses, run_suite, success_table, write_courses,
                      write_results)

    out = args.out / "sim"
    _guard(out, args.force)
    out.mkdir(parents=True)
    courses = read_courses(args.courses) if args.courses else generate_courses(cfg.sim)
    write_courses(out / "courses.yaml", courses)
    obs = None
    context = cfg.model.context
    if args.policy == "oracle":
        policy = OraclePolicy(cfg.model.horizon, cfg.data.sampling.arrival_radius)
    elif args.policy == "never-arrive":
        policy = OraclePolicy(cfg.model.horizon, arrive=False)
    else:
        from .features import make_provider
        from .model import load_checkpoint

        net, _ = load_checkpoint(args.checkpoint or args.out / "train" / "last.pt")
        policy = ModelPolicy(net)
        obs = SyntheticObservations(make_provider("synthetic", net.obs_proj.in_features, seed=net.cfg.provider_seed))
        context = net.cfg.context
    results = run_suite(policy, courses, cfg.sim, obs, context)
    write_results(out / "trials.jsonl", results)
    (out / "paths.json").write_text(json.dumps({r.course_id: r.path for r in results}))
    table = success_table(results)
    (out / "success_table.json").write_text(json.dumps(table, indent=1) + "\n")
    text = format_success_table(table)
    (out / "success_table.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_plot(args, cfg: AppConfig) -> int:
    from .plotting import close, plot_sample, plot_trial

    out = args.out / "plots"
    out.mkdir(parents=True, exist_ok=True)
    if args.trial:
        from .sim import read_courses

        sim = args.out / "sim"
        courses = {c.id: c for c in read_courses(sim / "courses.yaml")}
        paths = json.loads((sim / "paths.json").read_text())
        outcomes = {}
        for line in (sim / "trials.jsonl").read_text().splitlines():
            rec = json.loads(line)
            outcomes[rec["course_id"]] = rec["outcome"]
        if args.trial not in courses:
            raise DataError(f"no trial {args.trial!r} in {sim}")
        target = out / f"trial-{args.trial}.png"
        _guard(target, args.force)
        fig, _ = plot_trial(paths[args.trial], courses[args.trial], target, outcomes.get(args.trial))
    else:
        from .pipeline import load_samples

        samples, _ = load_samples(args.shards or args.out / "shards")
        if not 0 <= args.index < len(samples):
            raise DataError(f"sample index {args.index} out of range (0..{len(samples) - 1})")
        pred = None
        pred_path = args.predictions or (args.out / "eval" / "predictions.npz")
        if Path(pred_path).exists():
            actions, _ = _load_predictions(pred_path, samples)
            pred = actions[args.index]
        s = samples[args.index]
        target = out / f"sample-{args.index:05d}.png"
        _guard(target, args.force)
        tags = ",".join(s.scenario_tags.names()) if s.scenario_tags else "untagged"
        fig, _ = plot_sample(s, pred, target, title=f"{s.trajectory_id} t={s.t} [{tags}]")
    close(fig)
    print(f"wrote {target}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "process": cmd_process, "tag": cmd_tag, "train": cmd_train,
    "finetune": cmd_finetune, "eval": cmd_eval, "simulate": cmd_simulate, "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, default=os.environ.get(CONFIG_ENV))
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("--out", type=Path, default=Path("run"))
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--force", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="urbannav", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic pose/detection corpus")
    s.add_argument("--n", type=int, default=None, help="number of samples")
    s.add_argument("--domain", choices=["walking", "driving", "teleop"], default=None)

    s = sub.add_parser("process", parents=[common], help="pose logs -> normalized trajectories -> shards")
    s.add_argument("--manifest", type=Path)

    s = sub.add_parser("tag", parents=[common], help="assign scenario tags to shards")
    s.add_argument("--shards", type=Path)

    s = sub.add_parser("train", parents=[common], help="train a policy from scratch")
    s.add_argument("--shards", type=Path, action="append")

    s = sub.add_parser("finetune", parents=[common], help="fine-tune a checkpoint")
    s.add_argument("--base", type=Path)
    s.add_argument("--shards", type=Path, action="append")

    s = sub.add_parser("eval", parents=[common], help="offline metrics report")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--shards", type=Path)
    s.add_argument("--predictions", type=Path, help="npz with actions and arrival_prob instead of a model")

    s = sub.add_parser("simulate", parents=[common], help="closed-loop course suite")
    s.add_argument("--courses", type=Path)
    s.add_argument("--policy", choices=["oracle", "never-arrive", "model"], default="model")
    s.add_argument("--checkpoint", type=Path)

    s = sub.add_parser("plot", parents=[common], help="plot a sample or a simulated trial")
    s.add_argument("--shards", type=Path)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--predictions", type=Path)
    s.add_argument("--trial", help="course id of a simulated trial")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _seeded(load_config(args.config, args.overrides), args.seed)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, UrbanNavError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
