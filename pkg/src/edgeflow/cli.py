"""Batch command-line surface: dataset generation, encoder pretraining,
model training, evaluation, ablation grids, and flow rendering.

Exit codes: 0 success, 2 configuration error, 3 numeric failure (NaN).
Every failure prints a single ``error: ...`` line to stderr.
"""

from __future__ import annotations

import os

# pin BLAS threads before numpy loads; tiny matrices gain nothing from
# threading and single-thread keeps training runs bit-reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, replace

import numpy as np

from . import model as mdl
from .checkpoint import CheckpointError
from .floio import FloError, read_flo, viz_flow, write_flo, write_ppm
from .metrics import aggregate_report
from .model import (ModelConfig, NumericError, TrainConfig, VARIANTS,
                    encoder_from_params, evaluate_checkpoint_params,
                    load_model, prepare_sample, pretrain_encoder, save_model,
                    train_model)
from .rng import Rng
from .synth import (DEGRADE_KINDS, SceneError, degrade, generate_sample,
                    load_dataset, random_scene, write_dataset)


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# key=value run configuration

_TUPLE_KEYS = {"channels": int, "level_weights": float,
               "edge_scale_weights": float, "milestones": int}


def _coerce(key: str, value: str, kind):
    if key in _TUPLE_KEYS:
        items = [v for v in value.split(",") if v != ""]
        return tuple(_TUPLE_KEYS[key](v) for v in items)
    return kind(value)


def _known_keys():
    keys = {}
    for f in fields(ModelConfig):
        keys[f.name] = ("model", f.name, type(getattr(ModelConfig(), f.name)))
    for f in fields(TrainConfig):
        keys[f.name] = ("train", f.name, type(getattr(TrainConfig(), f.name)))
    # spec-facing aliases for the loss weights
    keys["lambda_align"] = ("model", "w_align", float)
    keys["lambda_contra"] = ("model", "w_contra", float)
    keys["lambda_2d"] = ("model", "w_task2d", float)
    keys["lambda_3d"] = ("model", "w_task3d", float)
    return keys


def read_run_config(path) -> dict:
    """Parse a key=value file ('#' comments); unknown keys name their line."""
    known = _known_keys()
    out = {"model": {}, "train": {}}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            section, field, kind = known[key]
            try:
                out[section][field] = _coerce(field, value, kind)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for '{key}': {exc}")
    return out


def build_configs(args) -> tuple:
    overrides = read_run_config(args.config) if getattr(args, "config", None) else \
        {"model": {}, "train": {}}
    cfg = replace(ModelConfig(), **overrides["model"])
    tcfg = replace(TrainConfig(), **overrides["train"])
    for attr, field in (("seed", "seed"), ("epochs", "epochs")):
        if getattr(args, attr, None) is not None:
            tcfg = replace(tcfg, **{field: getattr(args, attr)})
    return cfg, tcfg


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_metrics_log(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    cfg, tcfg = build_configs(args)
    deg = None
    if args.degrade:
        try:
            kind, severity = args.degrade.split(":")
            severity = int(severity)
        except ValueError:
            raise ConfigError(f"--degrade expects kind:severity, got '{args.degrade}'")
        if kind not in DEGRADE_KINDS or severity not in (1, 2, 3):
            raise ConfigError(f"unknown degradation '{args.degrade}'")
        deg = (kind, severity)

    def build(i):
        seed = args.seed + i
        sample = generate_sample(random_scene(
            seed, height=cfg.height, width=cfg.width, n_points=args.points))
        if deg:
            sample = degrade(sample, deg[0], deg[1], seed=seed)
        return sample

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            samples = list(pool.map(build, range(args.n)))
    else:
        samples = [build(i) for i in range(args.n)]
    write_dataset(args.out, samples)
    print(f"gen: wrote {args.n} samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg, tcfg = build_configs(args)
    samples = load_dataset(args.data)
    log: list = []
    enc, heads = pretrain_encoder(samples, cfg, tcfg, log=log)
    params = dict(enc.params)
    params.update(heads)
    save_model(args.out, params, cfg, "full")
    _write_metrics_log(str(args.out) + ".metrics.ndjson", log)
    print(f"pretrain: {tcfg.epochs} epochs, final edge loss {log[-1]['loss']:.6f}, "
          f"checkpoint {args.out}")
    return 0


def _load_edge_encoder(path, cfg: ModelConfig):
    entries, enc_cfg, _ = load_model(path)
    if enc_cfg.channels != cfg.channels or enc_cfg.bins != cfg.bins:
        raise ConfigError(
            f"edge checkpoint built for channels={enc_cfg.channels} bins={enc_cfg.bins}, "
            f"run configured for channels={cfg.channels} bins={cfg.bins}")
    return encoder_from_params(entries, cfg)


def run_training(samples, cfg: ModelConfig, tcfg: TrainConfig, variant: str,
                 edge_ckpt=None, log=None) -> dict:
    """Train one model (or the two-model indep pair); returns checkpoint params."""
    if variant == "no-edge":
        enc = mdl.EventEncoder.create(Rng(tcfg.seed ^ 0x5EED), cfg.channels,
                                      cfg.bins).freeze()
    else:
        if edge_ckpt is None:
            raise ConfigError(f"variant '{variant}' needs --edge-ckpt")
        enc = _load_edge_encoder(edge_ckpt, cfg)
    preps = [prepare_sample(s, cfg, enc) for s in samples]
    frozen = dict(enc.params)
    if variant == "indep":
        out = {}
        for branch, prefix in (("2d", "m2d/"), ("3d", "m3d/")):
            sub_log: list = []
            params = train_model(preps, cfg, tcfg, variant, branches=(branch,),
                                 frozen=frozen, log=sub_log)
            out.update({prefix + k: v for k, v in params.items()})
            if log is not None:
                log.extend({**rec, "branch": branch} for rec in sub_log)
        return out
    return train_model(preps, cfg, tcfg, variant, frozen=frozen, log=log)


def cmd_train(args) -> int:
    cfg, tcfg = build_configs(args)
    if args.variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{args.variant}' (choose from {VARIANTS})")
    samples = load_dataset(args.data)
    log: list = []
    params = run_training(samples, cfg, tcfg, args.variant, args.edge_ckpt, log)
    save_model(args.out, params, cfg, args.variant)
    _write_metrics_log(str(args.out) + ".metrics.ndjson", log)
    print(f"train: variant {args.variant}, {tcfg.epochs} epochs, "
          f"final loss {log[-1]['loss']:.6f}, checkpoint {args.out}")
    return 0


def cmd_eval(args) -> int:
    params, cfg, variant = load_model(args.ckpt)
    samples = load_dataset(args.data)
    if args.jobs > 1:
        # metrics per sample are independent; aggregation preserves order
        def one(sample):
            return evaluate_checkpoint_params(params, cfg, variant, [sample])
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            parts = list(pool.map(one, samples))
        rows = []
        for part in parts:
            label = next(iter(part["breakdown"]))
            rows.append({**{k: part[k] for k in
                            ("epe2d", "acc1px", "fl", "epe3d", "acc05", "acc10")},
                         "label": label})
        report = aggregate_report(rows)
    else:
        report = evaluate_checkpoint_params(params, cfg, variant, samples)
    report["variant"] = variant
    _write_json(args.report, report)
    print(f"eval: {report['samples']} samples, epe2d {report['epe2d']:.4f}, "
          f"epe3d {report['epe3d']:.4f}, report {args.report}")
    return 0


def cmd_ablate(args) -> int:
    cfg, tcfg = build_configs(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant '{v}' (choose from {VARIANTS})")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    train_samples = load_dataset(args.data)
    val_samples = load_dataset(args.val_data) if args.val_data else train_samples
    records = []
    for seed in seeds:
        seed_t = replace(tcfg, seed=seed)
        edge_ckpt = None
        if any(v != "no-edge" for v in variants):
            pre_t = replace(seed_t, epochs=args.pretrain_epochs,
                            lr=args.pretrain_lr, milestones=args.pretrain_milestones)
            enc, heads = pretrain_encoder(train_samples, cfg, pre_t)
            edge_ckpt = os.path.join(args.workdir or os.path.dirname(args.report) or ".",
                                     f"edge_seed{seed}.ckpt")
            params = dict(enc.params)
            params.update(heads)
            save_model(edge_ckpt, params, cfg, "full")
        for variant in variants:
            params = run_training(train_samples, cfg, seed_t, variant, edge_ckpt)
            save_path = None
            if args.workdir:
                save_path = os.path.join(args.workdir, f"{variant}_seed{seed}.ckpt")
                save_model(save_path, params, cfg, variant)
            report = evaluate_checkpoint_params(
                {k: mdl.Tensor(v.data) for k, v in params.items()}, cfg, variant,
                val_samples)
            records.append({"variant": variant, "seed": seed,
                            "metrics": {k: report[k] for k in
                                        ("epe2d", "acc1px", "fl", "epe3d",
                                         "acc05", "acc10")}})
            print(f"ablate: {variant} seed {seed}: epe2d {report['epe2d']:.4f} "
                  f"epe3d {report['epe3d']:.4f}", flush=True)
    _write_json(args.report, records)
    print(f"ablate: wrote {len(records)} records to {args.report}")
    return 0


def cmd_viz(args) -> int:
    flow = read_flo(args.flo)
    write_ppm(args.out, viz_flow(flow))
    print(f"viz: wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# wiring

def make_parser() -> _Parser:
    parser = _Parser(prog="edgeflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--degrade", default=None, help="kind:severity")
    g.add_argument("--points", type=int, default=256)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--config", default=None)
    g.set_defaults(fn=cmd_gen)

    p = sub.add_parser("pretrain", help="pretrain the event edge encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_pretrain)

    t = sub.add_parser("train", help="train the fusion model")
    t.add_argument("--data", required=True)
    t.add_argument("--edge-ckpt", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--variant", default="full")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--config", default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="run a variant x seed grid")
    a.add_argument("--data", required=True)
    a.add_argument("--val-data", default=None)
    a.add_argument("--variants", required=True)
    a.add_argument("--seeds", required=True)
    a.add_argument("--report", required=True)
    a.add_argument("--epochs", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--pretrain-epochs", type=int, default=300)
    a.add_argument("--pretrain-lr", type=float, default=1e-3)
    a.add_argument("--pretrain-milestones", type=lambda s: tuple(
        int(v) for v in s.split(",") if v), default=(200,))
    a.add_argument("--workdir", default=None)
    a.add_argument("--config", default=None)
    a.set_defaults(fn=cmd_ablate)

    v = sub.add_parser("viz", help="render a .flo file to a color-wheel PPM")
    v.add_argument("--flo", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_viz)
    return parser


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.fn(args)
    except (ConfigError, SceneError, CheckpointError, FloError,
            FileNotFoundError, argparse.ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
