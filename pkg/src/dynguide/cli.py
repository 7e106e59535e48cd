"""Command line harness: train / sample / eval / plot / reproduce.

Config errors exit with status 2 and one `error: <field>: <message>` line on
stderr so wrapper scripts can point at the offending key without parsing a
traceback.
"""

import os
import sys

# single-threaded BLAS keeps runs reproducible across machines and avoids
# oversubscription; must happen before numpy is first imported
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    apply_overrides,
    config_hash,
    from_dict,
    load_config,
    save_config,
)


def _fail(field: str, message: str):
    print(f"error: {field}: {message}", file=sys.stderr)
    raise SystemExit(2)


def _load_cfg(args, preset=None):
    from .recipes import preset_config

    try:
        if getattr(args, "config", None):
            cfg = load_config(args.config)
        elif preset is not None:
            cfg = preset_config(preset)
        else:
            cfg = from_dict({})
        if getattr(args, "set", None):
            cfg = apply_overrides(cfg, args.set)
        if getattr(args, "out_dir", None):
            cfg = apply_overrides(cfg, [f"run.out_dir={args.out_dir}"])
        return cfg
    except ConfigError as exc:
        _fail(exc.field, str(exc).split(": ", 1)[-1])


def _cmd_reproduce(args) -> int:
    from .recipes import RECIPES

    cfg = _load_cfg(args, preset=args.target)
    out = RECIPES[args.target](cfg)
    print(f"done: {out} (config {config_hash(cfg)[:12]})")
    return 0


def _cmd_train(args) -> int:
    from .datasets.gmm import GmmSpec
    from .manifest import RunManifest
    from .recipes import _dirs, _schedule, _train_models

    cfg = _load_cfg(args)
    dirs = _dirs(cfg)
    manifest = RunManifest(config_hash(cfg))
    timings: dict = {}
    save_config(cfg, dirs["run"] / "config.toml")
    manifest.add_file(dirs["run"], dirs["run"] / "config.toml")
    spec = GmmSpec().scaled() if cfg.dataset.kind == "gmm" else None
    snap_paths, _ = _train_models(cfg, spec, _schedule(cfg), dirs, manifest, timings)
    manifest.notes["timings_s"] = timings
    manifest.write(dirs["run"])
    for step in sorted(snap_paths):
        print(f"checkpoint: {snap_paths[step]}")
    print(f"done: {dirs['run']}")
    return 0


def _cmd_sample(args) -> int:
    from .numerics import checkpoint
    from .numerics.rng import DOMAIN_EVAL, DOMAIN_INIT, DOMAIN_SAMPLER, Rng
    from .recipes import _interval, _make_classifier, _make_denoiser, _schedule
    from .samplers import GuidanceConfig, RecordSpec, sample
    from .trajstore import write_arrays

    cfg = _load_cfg(args)
    if args.mode != "none" and not args.classifier:
        _fail("sample.classifier", f"guidance mode {args.mode!r} needs --classifier")
    den = _make_denoiser(cfg, Rng(cfg.run.seed, DOMAIN_INIT, 0))
    try:
        den.load_state(checkpoint.load_checkpoint(args.denoiser))
    except (OSError, ValueError, KeyError) as exc:
        _fail("sample.denoiser", f"cannot load {args.denoiser}: {exc}")
    clf = None
    if args.classifier:
        clf = _make_classifier(cfg, Rng(cfg.run.seed, DOMAIN_INIT, 1))
        try:
            clf.load_state(checkpoint.load_checkpoint(args.classifier))
        except (OSError, ValueError, KeyError) as exc:
            _fail("sample.classifier", f"cannot load {args.classifier}: {exc}")

    fixed = None
    if args.mode == "static":
        from .datasets.labels import class_count

        k = class_count(cfg.dataset.kind)
        fixed = (args.fixed_class if args.fixed_class >= 0
                 else Rng(cfg.run.seed, DOMAIN_EVAL, 2).integers(0, k, (args.n,)))
    try:
        guidance = GuidanceConfig(mode=args.mode, scale=args.scale,
                                  fixed_class=fixed, interval=_interval(cfg),
                                  use_raw_prob_grad=cfg.guidance.use_raw_prob_grad)
    except ValueError as exc:
        _fail("guidance", str(exc))
    rng = Rng(cfg.run.seed, DOMAIN_SAMPLER, args.index)
    x, traj = sample(den, _schedule(cfg), args.n, cfg.sampler.kind, guidance, clf,
                     rng, ddim_steps=cfg.sampler.ddim_steps, record=RecordSpec())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_arrays(out, {"x0": x, "ids": traj.ids, "vf_scores": traj.vf_scores})
    print(f"wrote {args.n} samples to {out}")
    return 0


def _cmd_eval(args) -> int:
    from .datasets.gmm import GmmSpec
    from .recipes import _hall_flags
    from .trajstore import read_arrays

    try:
        arrays = read_arrays(args.samples)
    except Exception as exc:
        _fail("eval.samples", f"cannot read {args.samples}: {exc}")
    if "x0" not in arrays:
        _fail("eval.samples", f"{args.samples} has no 'x0' array")
    x0 = arrays["x0"]
    spec = GmmSpec().scaled() if args.kind == "gmm" else None
    count = int(_hall_flags(args.kind, spec, x0).sum())
    payload = {"kind": args.kind, "n": len(x0), "hallucinations": count,
               "rate": count / len(x0) if len(x0) else None}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _cmd_plot(args) -> int:
    from .svgplot import KIND_TITLES, plot_csv

    if args.kind not in KIND_TITLES:
        _fail("plot.kind", f"unknown kind {args.kind!r}; have {sorted(KIND_TITLES)}")
    if not Path(args.csv).exists():
        _fail("plot.csv", f"no such file: {args.csv}")
    out = plot_csv(args.kind, args.csv, args.out)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynguide",
                                description="diffusion guidance lab harness")
    sub = p.add_subparsers(dest="command", required=True)

    def add_cfg(sp):
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")

    sp = sub.add_parser("reproduce", help="run a full preset experiment")
    sp.add_argument("target", choices=["table1", "table2", "table4", "fig3"])
    add_cfg(sp)
    sp.add_argument("--out-dir", help="override run.out_dir")
    sp.set_defaults(fn=_cmd_reproduce)

    sp = sub.add_parser("train", help="train denoiser + classifier from a config")
    add_cfg(sp)
    sp.add_argument("--out-dir", help="override run.out_dir")
    sp.set_defaults(fn=_cmd_train)

    sp = sub.add_parser("sample", help="draw samples from a checkpoint")
    add_cfg(sp)
    sp.add_argument("--denoiser", required=True, help="denoiser checkpoint")
    sp.add_argument("--classifier", help="classifier checkpoint (for guidance)")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--mode", choices=["none", "static", "dynamic"], default="none")
    sp.add_argument("--scale", type=float, default=0.0)
    sp.add_argument("--fixed-class", type=int, default=-1,
                    help="static guidance class; -1 draws one per chain")
    sp.add_argument("--index", type=int, default=0, help="noise stream index")
    sp.add_argument("--out", required=True, help="output array store (.dga)")
    sp.set_defaults(fn=_cmd_sample)

    sp = sub.add_parser("eval", help="count hallucinations in a sample store")
    sp.add_argument("--samples", required=True, help="array store with 'x0'")
    sp.add_argument("--kind", choices=["gmm", "single", "mixed"], required=True)
    sp.add_argument("--out", help="also write the JSON report here")
    sp.set_defaults(fn=_cmd_eval)

    sp = sub.add_parser("plot", help="render a CSV to a deterministic SVG")
    sp.add_argument("--kind", required=True)
    sp.add_argument("--csv", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=_cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc.field}: {exc.message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
