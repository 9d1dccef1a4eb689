"""Command-line driver: pretrain -> reweight -> sample -> eval -> heatmap.

Exit codes: 0 success, 2 validation error, 3 numeric or starvation error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import fileio
from .bundle import FORMAT_VERSION, ModelBundle, config_hash
from .errors import ConfigError, ContractError, LatentReweightError, NumericError, StarvationError
from .heatmap import count_local_maxima, latent_grid, render_svg
from .metrics import evaluate_sets
from .pipeline import (METHODS, RunConfig, draw_samples, ensure_ratio, evaluate_methods, required_networks,
                       stage_pretrain, stage_reweight)

log = logging.getLogger("latent_reweighting")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


def eval_workers() -> int:
    raw = os.environ.get("LR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"LR_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("LR_THREADS must be >= 1")
    return n


def load_config(path: Optional[str], seed: Optional[int]) -> RunConfig:
    d = fileio.load_json(path) if path else {}
    if seed is not None:
        d = dict(d, seed=seed)
    return RunConfig.from_dict(d)


def _meta(seed: int, chash: str, **extra) -> dict:
    return {"seed": seed, "config_hash": chash, "format_version": FORMAT_VERSION, **extra}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.seed)
    bundle = stage_pretrain(cfg)
    out = _out_dir(args)
    path = bundle.save(out / "pretrain.bundle.json")
    fileio.write_json(out / "pretrain_log.json", {"meta": _meta(bundle.seed, bundle.config_hash),
                                                 "log": bundle.logs["pretrain"]})
    print(path)
    return EXIT_OK


def cmd_reweight(args) -> int:
    cfg = load_config(args.config, args.seed)
    bundle = ModelBundle.load(args.bundle)
    new = stage_reweight(bundle, cfg, reuse_critic=not args.fresh_critic)
    out = _out_dir(args)
    path = new.save(out / "reweight.bundle.json")
    fileio.write_json(out / "reweight_log.json", {"meta": _meta(new.seed, new.config_hash),
                                                 "log": new.logs["reweight"]})
    summary = new.provenance[-1]
    log.info("reweight: mean_w=%.4f ess=%.4f clip_violation=%.4f",
             summary["mean_w"], summary["ess"], summary["clip_violation"])
    print(path)
    return EXIT_OK


def _with_networks(bundle: ModelBundle, method: str, cfg: RunConfig, out: Path) -> ModelBundle:
    if "ratio" in required_networks(method) and not bundle.has("ratio"):
        bundle = ensure_ratio(bundle, cfg)
        path = bundle.save(out / "ratio.bundle.json")
        log.info("fine-tuned a real/fake classifier; cached in %s", path)
    return bundle


def cmd_sample(args) -> int:
    cfg = load_config(args.config, args.seed)
    bundle = ModelBundle.load(args.bundle)
    out = _out_dir(args)
    bundle = _with_networks(bundle, args.method, cfg, out)
    seed = cfg.seed
    try:
        res = draw_samples(bundle, args.method, args.n, np.random.default_rng([seed, 41]), cfg)
    except StarvationError as exc:
        raise StarvationError(f"method {args.method}: {exc}") from exc
    if res.acceptance_rate is not None:
        log.info("%s acceptance rate %.4f (%d draws)", args.method, res.acceptance_rate, res.draws)
    path = fileio.write_samples(out / f"samples_{args.method}.csv", res.points, args.method, seed, res.wall_time_us,
                                _meta(seed, bundle.config_hash, method=args.method,
                                      acceptance_rate=res.acceptance_rate))
    print(path)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.seed)
    fake_meta, fake = fileio.read_points(args.fake)
    if args.real:
        _, real = fileio.read_points(args.real)
        reals, fakes = [real], [fake]
    else:
        reals = [cfg.dataset.sample(len(fake), [cfg.seed, 1000 + r]) for r in range(cfg.eval.repeats)]
        fakes = [fake] * len(reals)
    report = evaluate_sets(reals, fakes, cfg.eval.k, workers=eval_workers())
    method = fake_meta.get("method", "unknown")
    rate = fake_meta.get("acceptance_rate")
    if rate not in (None, "None"):
        report.acceptance_rate = float(rate)
    out = _out_dir(args)
    chash = fake_meta.get("config_hash", config_hash(cfg.to_dict()))
    meta = _meta(cfg.seed, chash, method=method, dataset=cfg.dataset.name)
    fileio.write_json(out / f"metrics_{method}.json", {"meta": meta, **report.to_dict()})
    rows = [(cfg.dataset.name, method, m.name, m.mean, m.half_width, m.n_repeats) for m in report.metrics.values()]
    path = fileio.write_rows(out / f"metrics_{method}.csv", ("dataset", "method", "metric", "mean", "half_width",
                                                             "n_repeats"), rows, meta)
    for r in rows:
        print(",".join(str(v) for v in r))
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_table(args) -> int:
    cfg = load_config(args.config, args.seed)
    bundle = ModelBundle.load(args.bundle)
    methods = args.method.split(",") if args.method else [m for m in METHODS]
    out = _out_dir(args)
    for m in methods:
        bundle = _with_networks(bundle, m, cfg, out)
    reports = evaluate_methods(bundle, methods, cfg, cfg.seed)
    meta = _meta(cfg.seed, bundle.config_hash, dataset=cfg.dataset.name)
    fileio.write_json(out / "table.json", {"meta": meta, "methods": {m: r.to_dict() for m, r in reports.items()}})
    metric_names = ["emd", "precision", "recall", "frechet"]
    cols = ["method"] + [f"{n}{s}" for n in metric_names for s in ("", "_ci")] + ["wall_time_us", "acceptance_rate"]
    rows = []
    for m, r in reports.items():
        row = [m]
        for n in metric_names:
            row += [r.metrics[n].mean, r.metrics[n].half_width]
        row += [r.wall_time_us.mean, "" if r.acceptance_rate is None else r.acceptance_rate]
        rows.append(row)
    path = fileio.write_rows(out / "table.csv", cols, rows, meta)
    print(path)
    return EXIT_OK


def cmd_heatmap(args) -> int:
    bundle = ModelBundle.load(args.bundle)
    w = bundle.net("w")
    base = [float(v) for v in args.slice.split(",")] if args.slice else None
    dims = tuple(int(v) for v in args.dims.split(","))
    axis, z = latent_grid(bundle.prior, args.n, dims, base)
    vals = w(z).ravel()
    grid = vals.reshape(args.n, args.n)
    out = _out_dir(args)
    meta = _meta(bundle.seed, bundle.config_hash, resolution=args.n)
    fileio.write_heatmap_csv(out / "heatmap.csv", z, vals, dims, meta)
    (out / "heatmap.svg").write_text(render_svg(grid, axis, meta))
    peaks = count_local_maxima(grid)
    log.info("heatmap: %d local maxima", peaks)
    print(out / "heatmap.svg")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latent-reweighting", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, bundle=False, config=True):
        sp = sub.add_parser(name, help=help_)
        if config:
            sp.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        if bundle:
            sp.add_argument("--bundle", required=True, help="input model bundle")
        sp.add_argument("--seed", type=int, help="master seed, overrides the config")
        sp.add_argument("--out", default=".", help="output directory")
        sp.set_defaults(fn=fn)
        return sp

    add("pretrain", cmd_pretrain, "train the WGAN-GP generator/critic pair")
    sp = add("reweight", cmd_reweight, "train the latent importance network", bundle=True)
    sp.add_argument("--fresh-critic", action="store_true", help="warm up a new critic instead of reusing D")
    sp = add("sample", cmd_sample, "draw samples with one method", bundle=True)
    sp.add_argument("--method", required=True, choices=METHODS)
    sp.add_argument("--n", type=int, default=1024)
    sp = add("eval", cmd_eval, "score a sample CSV")
    sp.add_argument("--fake", required=True, help="sample CSV to score")
    sp.add_argument("--real", help="reference CSV; default: fresh dataset draws")
    sp = add("table", cmd_table, "evaluate several methods on one bundle", bundle=True)
    sp.add_argument("--method", help="comma-separated methods (default: all)")
    sp = add("heatmap", cmd_heatmap, "render w over a latent grid", bundle=True, config=False)
    sp.add_argument("--n", type=int, default=64, help="grid resolution per axis")
    sp.add_argument("--dims", default="0,1", help="latent coordinates to plot")
    sp.add_argument("--slice", help="comma-separated values for all latent coordinates (needed when d > 2)")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, StarvationError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LatentReweightError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
