"""``aftvo`` command line: generate, train, evaluate, ablate, export.

Exit codes: 0 success, 1 usage or config error, 2 data/checkpoint
mismatch, 3 training diverged (last good checkpoint kept), 4 at least one
ablation cell failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .aft import FusionTrainer, init_fusion
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, deep_merge, load_config
from .eval import figures
from .eval.harness import (AblationTable, camera_ablation_harness, ekf_comparison, module_ablation_harness,
                           write_csv)
from .eval.rpe import rpe_series
from .eval.trajectory import save_tum
from .numerics import NumericalError
from .pipeline import (Benchmark, derive_seed, evaluate_ekf, evaluate_fusion, fit_mdns, prepare_benchmark,
                       simulate_split, tune_ekf_on_val)
from .presets import PRESETS
from .store import (DataMismatchError, checkpoint_config, data_digest, fusion_meta, load_dataset, model_arrays,
                    restore_fusion, restore_mdns, restore_optimizer, save_dataset, sha256_file, write_manifest)

log = logging.getLogger("aftvo")

EXIT_USAGE, EXIT_MISMATCH, EXIT_DIVERGED, EXIT_CELLS = 1, 2, 3, 4


def resolve_config(args, base: dict | None = None) -> RunConfig:
    """defaults < preset < ``base`` < --config < --paper-scale < --set < AFTVO_SEED."""
    layers: dict = {}
    if getattr(args, "preset", None):
        layers = deep_merge(layers, PRESETS[args.preset])
    if base:
        layers = deep_merge(layers, base)
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "variant", None):
        overrides.append(f"aft.variant={args.variant}")
    return load_config(getattr(args, "config", None), overrides, getattr(args, "paper_scale", False),
                       base=layers)


def _print_rows(rows: list[dict]) -> None:
    if not rows:
        return
    print(",".join(rows[0]))
    for r in rows:
        print(",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in r.values()))


# -- generate -------------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    sequences = {split: simulate_split(cfg, split) for split in ("train", "val", "test")}
    manifest = save_dataset(sequences, cfg, out)
    counts = {s: [len(x) for x in sequences[s][0].streams] if sequences[s] else [] for s in sequences}
    log.info("wrote %s (stream lengths of first sequence per split: %s)", manifest, counts)
    print(f"data,{out}")
    print(f"data_digest,{data_digest(cfg)}")
    return 0


# -- train ----------------------------------------------------------------------------------

def _checkpoint(cfg: RunConfig, mdns, trainer: FusionTrainer | None, mdn_curves: dict) -> Checkpoint:
    meta = {"data_digest": data_digest(cfg), "config_digest": cfg.digest(), "mdn_nll": mdn_curves}
    step = 0
    if trainer is not None:
        meta.update(fusion_meta(trainer.model))
        meta.update({"epoch": trainer.epoch, "train_loss": trainer.train_loss, "val_loss": trainer.val_loss})
        step = trainer.optimizer.t
    arrays = model_arrays(mdns, trainer.model if trainer else None, trainer.optimizer if trainer else None)
    return Checkpoint(arrays, cfg.to_dict(), step, meta)


def _write_losses(path: Path, mdn_curves: dict, trainer: FusionTrainer | None) -> None:
    rows = []
    for k, c in sorted(mdn_curves.items()):
        for e, v in enumerate(c["train"], 1):
            rows.append({"stage": f"mdn.{k}", "epoch": e, "train": v, "val": c["val"][e] if e < len(c["val"]) else ""})
    if trainer is not None:
        for e, v in enumerate(trainer.train_loss, 1):
            val = trainer.val_loss[e - 1] if e - 1 < len(trainer.val_loss) else ""
            rows.append({"stage": "aft", "epoch": e, "train": v, "val": val})
    write_csv(path, rows)


def cmd_train(args) -> int:
    data_cfg, sequences = load_dataset(args.data, ("train", "val"))
    cfg = resolve_config(args, base=data_cfg.to_dict())
    if data_digest(cfg) != data_digest(data_cfg):
        raise DataMismatchError("simulator settings or seed differ from the ones that generated --data")
    out = Path(args.out)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        if resume.meta.get("config_digest") != cfg.digest():
            raise DataMismatchError("checkpoint was trained with different simulator/mdn/aft settings")
        mdns = restore_mdns(resume)
        mdn_curves = resume.meta.get("mdn_nll", {})
    else:
        fits = fit_mdns(cfg, sequences["train"], sequences["val"])
        mdns = {k: f.model for k, f in fits.items()}
        mdn_curves = {str(k): {"train": f.train_nll, "val": f.val_nll} for k, f in fits.items()}

    bench = prepare_benchmark(cfg, mdns, {**sequences, "test": []})
    windows = bench.windows("train")
    val_windows = bench.windows("val") or None
    tcfg = cfg.training.train_config()
    seed = derive_seed(cfg.seed, 200)
    if resume is not None and "aft_config" in resume.meta:
        model = restore_fusion(resume)
        trainer = FusionTrainer(model, tcfg, seed, resume.meta["epoch"], list(resume.meta["train_loss"]),
                                list(resume.meta["val_loss"]), restore_optimizer(resume, model, tcfg.lr))
    else:
        trainer = FusionTrainer(init_fusion(windows, cfg.aft.model_config(), bench.n_sources, seed), tcfg, seed)
    log.info("fusion model: %d parameters, %d training windows", trainer.model.num_parameters(), len(windows))

    last_good = ckpt_dir / "latest.ckpt"
    status = "complete"
    stop = tcfg.epochs if args.epochs is None else min(tcfg.epochs, trainer.epoch + args.epochs)
    while trainer.epoch < stop:
        try:
            loss = trainer.run_epoch(windows, val_windows)
        except NumericalError as exc:
            log.error("training diverged: %s; last good checkpoint: %s", exc, last_good)
            status = "diverged"
            break
        log.info("epoch %d/%d loss %.6f", trainer.epoch, tcfg.epochs, loss)
        if trainer.epoch % args.checkpoint_every == 0 or trainer.epoch == stop:
            ckpt = _checkpoint(cfg, mdns, trainer, mdn_curves)
            save_checkpoint(ckpt, ckpt_dir / f"epoch_{trainer.epoch:04d}.ckpt")
            save_checkpoint(ckpt, last_good)
    if not last_good.exists():
        save_checkpoint(_checkpoint(cfg, mdns, trainer if trainer.epoch else None, mdn_curves), last_good)

    _write_losses(out / "loss.csv", mdn_curves, trainer)
    curves = {f"mdn {k}": c["train"] for k, c in mdn_curves.items()}
    figures.plot_losses({"fusion": trainer.train_loss}, out / "figures" / "fusion_loss.png")
    figures.plot_losses(curves, out / "figures" / "mdn_nll.png", title="MDN training NLL", log_scale=False)
    write_manifest(out, "train", cfg, status=status, data=str(args.data), epoch=trainer.epoch,
                   resumed_from=str(args.resume) if args.resume else None,
                   checkpoint=str(last_good), checkpoint_sha256=sha256_file(last_good),
                   preset_values={"layers": cfg.aft.layers, "d_model": cfg.aft.d_model, "heads": cfg.aft.heads,
                                  "lr": cfg.training.lr, "batch": cfg.training.batch})
    print(f"checkpoint,{last_good}")
    print(f"status,{status}")
    return EXIT_DIVERGED if status == "diverged" else 0


# -- evaluate / export ----------------------------------------------------------------------

def _load_for_eval(args) -> tuple[Benchmark, object, Checkpoint]:
    ckpt = load_checkpoint(args.checkpoint)
    data_cfg, sequences = load_dataset(args.data)
    if ckpt.meta.get("data_digest") != data_digest(data_cfg):
        raise DataMismatchError("checkpoint and data were produced from different configs "
                                f"({ckpt.meta.get('data_digest')} vs {data_digest(data_cfg)})")
    bench = prepare_benchmark(checkpoint_config(ckpt), restore_mdns(ckpt), sequences)
    model = restore_fusion(ckpt)
    return bench, model, ckpt


def _estimates(bench: Benchmark, model, split: str, methods: list[str]) -> tuple[dict, dict]:
    reports, pairs = {}, {}
    if "aft" in methods:
        reports["aft"], pairs["aft"] = evaluate_fusion(bench, model, split)
    if "ekf" in methods:
        params, _ = tune_ekf_on_val(bench)
        reports["ekf"], pairs["ekf"] = evaluate_ekf(bench, params, split)
        reports["ekf"].params = params.as_dict()
    return reports, pairs


def _write_trajectories(bench: Benchmark, split: str, pairs: dict, out: Path) -> None:
    seqs = bench.split(split)
    for i, seq in enumerate(seqs):
        truth = None
        for method, plist in pairs.items():
            est, gt = plist[i]
            save_tum(est, out / f"{seq.name}_{method}.tum")
            truth = gt
        if truth is not None:
            save_tum(truth, out / f"{seq.name}_gt.tum")


def cmd_evaluate(args) -> int:
    bench, model, _ = _load_for_eval(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = args.methods.split(",")
    reports, pairs = _estimates(bench, model, args.split, methods)
    rows = [{"method": m, **r.row(), "pairs": len(r.errors)} for m, r in reports.items()]
    write_csv(out / "metrics.csv", rows)
    _write_trajectories(bench, args.split, pairs, out)
    for i, seq in enumerate(bench.split(args.split)):
        series_rows = []
        for method, plist in pairs.items():
            stamps, t_err, r_err = rpe_series(*plist[i])
            for t, e, r in zip(stamps, t_err, r_err):
                series_rows.append({"method": method, "timestamp_us": int(t), "ex": e[0], "ey": e[1], "ez": e[2],
                                    "rx": r[0], "ry": r[1], "rz": r[2],
                                    "trans": float((e ** 2).sum() ** 0.5), "rot": float((r ** 2).sum() ** 0.5)})
        if args.series:
            write_csv(out / f"{seq.name}_errors.csv", series_rows)
        first = next(iter(pairs.values()))[i]
        figures.plot_trajectories(first[1], {m: p[i][0] for m, p in pairs.items()},
                                  out / "figures" / f"{seq.name}_trajectory.png", title=seq.name)
    figures.plot_summary([{"method": r["method"], "median_rmse": r["rmse"]} for r in rows], "method",
                         out / "figures" / "metrics.png", title="RPE by method")
    extra = {"ekf_params": getattr(reports.get("ekf"), "params", None)}
    write_manifest(out, "evaluate", bench.cfg, checkpoint=str(args.checkpoint), data=str(args.data),
                   split=args.split, metrics=rows, **extra)
    _print_rows(rows)
    return 0


def cmd_export(args) -> int:
    bench, model, _ = _load_for_eval(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, pairs = _estimates(bench, model, args.split, args.methods.split(","))
    _write_trajectories(bench, args.split, pairs, out)
    write_manifest(out, "export", bench.cfg, checkpoint=str(args.checkpoint), data=str(args.data),
                   split=args.split, files=sorted(p.name for p in out.glob("*.tum")))
    print(f"exported,{out}")
    return 0


# -- ablate ---------------------------------------------------------------------------------

def _report_table(table: AblationTable, out: Path) -> None:
    table.write(out)
    figures.plot_summary(table.summary(), table.key, out / "figures" / f"{table.name}.png",
                         title=table.name.replace("_", " "))
    print(f"# {table.name}")
    _print_rows(table.summary())


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = args.tables.split(",")
    seeds = cfg.ablation.seeds
    if len(seeds) < 3:
        raise ConfigError("ablation.seeds: the tables report medians over at least 3 seeds")
    bench = prepare_benchmark(cfg)

    def progress(cell):
        status = f"rmse {cell.report.rmse:.5f}" if cell.ok else f"FAILED {cell.error}"
        log.info("%s seed %d: %s (%.0f s)", cell.label, cell.seed, status, cell.seconds)

    results: dict[str, AblationTable] = {}
    if "module" in tables:
        results["module"] = module_ablation_harness(bench, seeds, cfg.ablation.variants, args.workers, progress)
        _report_table(results["module"], out)
    if "camera" in tables:
        subsets = cfg.ablation.subsets or ([[s.name] for s in cfg.simulator.sensors]
                                           + [[s.name for s in cfg.simulator.sensors]])
        results["camera"] = camera_ablation_harness(bench, subsets, seeds, args.workers, progress)
        _report_table(results["camera"], out)
    if "methods" in tables:
        reuse = None
        if "module" in results:
            reuse = [c for c in results["module"].cells if c.label in ("full", "aft")]
        results["methods"] = ekf_comparison(bench, seeds, aft_cells=reuse, workers=args.workers, progress=progress)
        _report_table(results["methods"], out)

    failed = sum(len(t.failed) for t in results.values())
    write_manifest(out, "ablate", cfg, tables=sorted(results), failed_cells=failed,
                   summaries={k: t.summary() for k, t in results.items()},
                   ekf=results["methods"].extra if "methods" in results else None)
    return EXIT_CELLS if failed else 0


# -- entry point ------------------------------------------------------------------------------

def _config_args(p: argparse.ArgumentParser, preset: bool = True) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    p.add_argument("--paper-scale", action="store_true", help="4 layers, width 512, 4 heads, lr 5e-4, batch 32")
    if preset:
        p.add_argument("--preset", choices=sorted(PRESETS), help="named benchmark preset under the config file")


def build_parser() -> argparse.ArgumentParser:
    from . import __version__
    parser = argparse.ArgumentParser(prog="aftvo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"aftvo {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate trajectories and sensor streams")
    _config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit per-sensor MDNs, then the fusion transformer")
    _config_args(p, preset=False)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", help="full, -D-Equi, -D-None or -SE")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int, help="train at most this many more epochs in this invocation")
    p.add_argument("--checkpoint-every", type=int, default=1)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("evaluate", cmd_evaluate, "RPE tables, trajectories and figures"),
                                 ("export", cmd_export, "write estimated trajectories as TUM files")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--split", default="test", choices=("train", "val", "test"))
        p.add_argument("--methods", default="aft,ekf", help="comma-separated subset of aft,ekf")
        if name == "evaluate":
            p.add_argument("--series", action="store_true", help="also write per-axis error series")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="module/camera ablation tables and the EKF comparison")
    _config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--tables", default="module,camera,methods")
    p.add_argument("--workers", type=int, default=1, help="parallel harness cells")
    p.set_defaults(func=cmd_ablate)
    return parser


def _join_dash_values(argv: list[str]) -> list[str]:
    # variant tags start with a dash (``--variant -SE``); argparse would read them as flags
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--variant" and i + 1 < len(argv) and argv[i + 1].startswith("-") and argv[i + 1] != "--":
            out.append(f"--variant={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_join_dash_values(sys.argv[1:] if argv is None else list(argv)))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataMismatchError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
