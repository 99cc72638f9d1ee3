"""Module- and camera-ablation harnesses and the EKF comparison.

Each harness trains one model per cell (variant or sensor subset, times
seed) on a shared prepared benchmark and reports the median over seeds.
A failing cell is recorded and the remaining cells still run.
"""

from __future__ import annotations

import csv
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..aft import canonical_variant
from .rpe import RpeReport

log = logging.getLogger(__name__)

MODULE_VARIANTS = ("full", "-SE", "-D-None", "-D-Equi")
METRICS = ("rmse", "max", "mean", "std", "rot_rmse")


@dataclass
class CellResult:
    label: str
    seed: int
    report: RpeReport | None = None
    error: str | None = None
    seconds: float = 0.0
    train_loss: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.report is not None


@dataclass
class AblationTable:
    name: str
    key: str
    labels: list[str]
    cells: list[CellResult]
    extra: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if not c.ok]

    def median(self, label: str, metric: str = "rmse") -> float:
        vals = [c.report.row()[metric] for c in self.cells if c.label == label and c.ok]
        return float(np.median(vals)) if vals else float("nan")

    def summary(self) -> list[dict]:
        rows = []
        for label in self.labels:
            cells = [c for c in self.cells if c.label == label]
            row = {self.key: label, "seeds": sum(c.ok for c in cells), "failed": sum(not c.ok for c in cells)}
            row.update({f"median_{m}": self.median(label, m) for m in METRICS})
            rows.append(row)
        return rows

    def cell_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            row = {self.key: c.label, "seed": c.seed, "status": "ok" if c.ok else "failed"}
            row.update({m: (c.report.row()[m] if c.ok else float("nan")) for m in METRICS})
            row["error"] = c.error or ""
            rows.append(row)
        return rows

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = out_dir / f"{self.name}.csv"
        cells = out_dir / f"{self.name}_cells.csv"
        write_csv(summary, self.summary())
        write_csv(cells, self.cell_rows())
        return summary, cells


def write_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- cells ---------------------------------------------------------------------------------

def _train_and_score(bench, label: str, seed: int, variant: str, sources) -> CellResult:
    from ..pipeline import evaluate_fusion, train_model
    t0 = time.perf_counter()
    try:
        trainer = train_model(bench, variant, seed, sources)
        report, _ = evaluate_fusion(bench, trainer.model, "test", sources)
        return CellResult(label, seed, report, None, time.perf_counter() - t0, list(trainer.train_loss))
    except Exception as exc:  # recorded per cell; the harness keeps going
        log.warning("cell %s/seed %d failed: %s", label, seed, exc)
        msg = f"{type(exc).__name__}: {exc}"
        log.debug("%s", traceback.format_exc())
        return CellResult(label, seed, None, msg, time.perf_counter() - t0)


def _run_cells(bench, jobs: list[tuple], workers: int, progress=None) -> list[CellResult]:
    if workers <= 1:
        results = []
        for job in jobs:
            res = _train_and_score(bench, *job)
            if progress:
                progress(res)
            results.append(res)
        return results
    with ProcessPoolExecutor(workers) as pool:
        futures = [pool.submit(_train_and_score, bench, *job) for job in jobs]
        results = [f.result() for f in futures]
    if progress:
        for res in results:
            progress(res)
    return results


def module_ablation_harness(bench, seeds, variants=MODULE_VARIANTS, workers: int = 1,
                            progress=None) -> AblationTable:
    """Every variant is trained once per seed on the same prepared data."""
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ValueError("module ablation needs at least 3 seeds")
    variants = list(variants)
    for v in variants:
        canonical_variant(v)
    jobs = [(v, s, v, None) for v in variants for s in seeds]
    cells = _run_cells(bench, jobs, workers, progress)
    return AblationTable("module_ablation", "variant", variants, cells)


def subset_label(names) -> str:
    return "+".join(names)


def camera_ablation_harness(bench, subsets, seeds, workers: int = 1, progress=None) -> AblationTable:
    """Full model trained per sensor subset (given as lists of configured sensor names)."""
    seeds = list(seeds)
    jobs, labels = [], []
    for names in subsets:
        sources = bench.sources_named(names)
        label = subset_label(names)
        labels.append(label)
        jobs += [(label, s, "full", sources) for s in seeds]
    cells = _run_cells(bench, jobs, workers, progress)
    return AblationTable("camera_ablation", "subset", labels, cells)


def ekf_comparison(bench, seeds, grid: dict[str, list[float]] | None = None,
                   aft_cells: list[CellResult] | None = None, workers: int = 1, progress=None) -> AblationTable:
    """Tuned EKF against the full fusion model on the same test streams.

    ``aft_cells`` lets the caller reuse full-variant cells of a module
    ablation run instead of training them again.
    """
    from ..baselines import EkfParams
    from ..pipeline import evaluate_ekf, tune_ekf_on_val
    seeds = list(seeds)
    if aft_cells is None:
        aft_cells = _run_cells(bench, [("aft", s, "full", None) for s in seeds], workers, progress)
    aft_cells = [CellResult("aft", c.seed, c.report, c.error, c.seconds, c.train_loss) for c in aft_cells]
    t0 = time.perf_counter()
    try:
        params, score = tune_ekf_on_val(bench, grid)
        report, _ = evaluate_ekf(bench, params)
        ekf = CellResult("ekf", 0, report, None, time.perf_counter() - t0)
        extra = {"ekf_params": params.as_dict(), "ekf_val_rmse": score}
    except Exception as exc:
        ekf = CellResult("ekf", 0, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0)
        extra = {"ekf_params": EkfParams().as_dict()}
    if progress:
        progress(ekf)
    return AblationTable("method_comparison", "method", ["aft", "ekf"], aft_cells + [ekf], extra)
