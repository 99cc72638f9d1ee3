"""Acceptance criteria, one PASS/FAIL line each.

``python3 tests/test_acceptance.py`` prints the report directly; under pytest
the lines are repeated in the terminal summary.  Criteria 6 to 8 train the
ablation benchmarks (tens of minutes on one core) and carry the ``slow``
marker, so ``pytest -m "not slow"`` skips them.
"""

from __future__ import annotations

import functools
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from aftvo.aft import AftConfig, DiscretiserConfig, FusionTransformer, collate, discretise, fusion_loss  # noqa: E402
from aftvo.cli import main  # noqa: E402
from aftvo.config import config_from_dict  # noqa: E402
from aftvo.eval import camera_ablation_harness, ekf_comparison, module_ablation_harness  # noqa: E402
from aftvo.mdn import LOG_2PI, MixtureParams, mixture_moments, mixture_nll  # noqa: E402
from aftvo.pipeline import prepare_benchmark  # noqa: E402
from aftvo.presets import preset  # noqa: E402

from helpers import P, brute_force_bins, grad_error, op_cases, random_window  # noqa: E402

RESULTS: dict[int, str] = {}


def record(n: int, name: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n} ({name}): {detail}"
    RESULTS[n] = line
    print(line, flush=True)
    return ok


# -- 1 -----------------------------------------------------------------------------------------

def criterion_1() -> bool:
    t0 = time.perf_counter()
    ops = sorted(op_cases(np.random.default_rng(0)))
    worst_op = 0.0
    for seed in range(10):
        cases = op_cases(np.random.default_rng(seed))
        for op in ops:
            f, params = cases[op]
            worst_op = max(worst_op, grad_error(f, params))
    worst_model = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model = FusionTransformer(AftConfig(64, 4, 2, 128), 3, P, seed)
        batch = collate([random_window(rng, U=3, span_us=600_000) for _ in range(2)], "full",
                        model.cfg.discretiser)

        def loss():
            return fusion_loss(model.forward(batch), batch.targets, 100.0, batch.query_valid)
        # small h avoids relu kinks; key biases have an exactly zero gradient, checked absolutely via the floor
        worst_model = max(worst_model, grad_error(loss, model.parameters(), h=1e-6, max_entries=3, rng=rng,
                                                  floor=1e-2))
    secs = time.perf_counter() - t0
    ok = worst_op < 1e-4 and worst_model < 1e-3 and secs < 120
    return record(1, "gradient suite", ok, f"{len(ops)} ops x 10 seeds max rel err {worst_op:.2e} (< 1e-4); "
                  f"2-layer width-64 model x 10 seeds {worst_model:.2e} (< 1e-3); {secs:.0f} s (< 120 s)")


# -- 2 -----------------------------------------------------------------------------------------

def criterion_2() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    mismatches = shift_breaks = 0
    for i in range(10_000):
        step = (5_000, 20_000, 50_000)[i % 3]
        rates = rng.uniform(5, 40, rng.integers(1, 5))
        t = np.concatenate([
            rng.uniform(0, 1e6 / r) + np.arange(int(2e6 * r / 1e6)) * 1e6 / r
            + np.clip(rng.normal(0, 3e5 / r, int(2e6 * r / 1e6)), -4e5 / r, 4e5 / r) for r in rates])
        t = np.round(t + rng.integers(0, 10 ** 9)).astype(np.int64)
        cfg = DiscretiserConfig.for_window(int(np.ptp(t)) + 1, step)
        bins = discretise(t, t, cfg)
        mismatches += not np.array_equal(bins, brute_force_bins(t, t, step, cfg.max_bins))
        shift = int(rng.integers(-10 ** 8, 10 ** 8))
        shift_breaks += not np.array_equal(discretise(t + shift, t + shift, cfg), bins)
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and shift_breaks == 0 and secs < 60
    return record(2, "discretiser oracle", ok, f"10000 windows, {mismatches} oracle mismatches, "
                  f"{shift_breaks} shift-invariance failures; {secs:.0f} s (< 60 s)")


# -- 3, 4 --------------------------------------------------------------------------------------

def criterion_3() -> bool:
    rng = np.random.default_rng(3)
    model = FusionTransformer(AftConfig(64, 4, 2, 128), 3, P, 3)
    leaks = 0
    for _ in range(100):
        U = int(rng.integers(2, 9))
        batch = collate([random_window(rng, U=U)], "full", model.cfg.discretiser)
        memory = model.encode(batch)
        dec_in = rng.normal(size=(1, U, 6))
        ref = model.decode(batch, memory, dec_in).data
        u = int(rng.integers(0, U - 1))
        bumped = dec_in.copy()
        bumped[:, u + 1:] += rng.normal(0, 10, (1, U - u - 1, 6))
        leaks += not np.array_equal(model.decode(batch, memory, bumped).data[:, :u + 1], ref[:, :u + 1])
    return record(3, "decoder causality", leaks == 0, f"100 windows, {leaks} with any change at indices <= u")


def criterion_4() -> bool:
    rng = np.random.default_rng(4)
    model = FusionTransformer(AftConfig(64, 4, 2, 128), 3, P, 4)
    cfg = model.cfg.discretiser
    worst = 0.0
    for _ in range(100):
        w = random_window(rng)
        base = collate([w], "full", cfg)
        ref = model.encode(base).data[0]
        for _ in range(10):
            perm = rng.permutation(len(w.source_ids))
            shuffled = collate([w], "full", cfg)
            for name in ("payload", "sources", "item_pos"):
                getattr(shuffled, name)[0] = getattr(base, name)[0][perm]
            worst = max(worst, float(np.abs(model.encode(shuffled).data[0] - ref[perm]).max()))
    return record(4, "encoder permutation equivariance", worst < 1e-5,
                  f"100 windows x 10 permutations, max deviation {worst:.1e} (< 1e-5)")


# -- 5 -----------------------------------------------------------------------------------------

def criterion_5() -> bool:
    rng = np.random.default_rng(5)
    worst_nll = 0.0
    for _ in range(100):
        sigma, mu = rng.uniform(0.05, 3.0, 6), rng.normal(size=6)
        nll = mixture_nll(MixtureParams(np.ones(1), mu[None], sigma[None]), mu)
        worst_nll = max(worst_nll, abs(nll - (3 * LOG_2PI + np.log(sigma).sum())))
    worst_mc = 0.0
    for _ in range(5):
        x = 3
        p = MixtureParams(rng.dirichlet(np.ones(x)), rng.normal(5, 1, (x, 6)), rng.uniform(0.2, 1.5, (x, 6)))
        comp = rng.choice(x, size=1_000_000, p=p.alpha)
        y = p.mu[comp] + p.sigma[comp] * rng.standard_normal((1_000_000, 6))
        m, v = mixture_moments(p)
        worst_mc = max(worst_mc, float(np.max(np.abs(y.mean(0) / m - 1))), float(np.max(np.abs(y.var(0) / v - 1))))
    ok = worst_nll < 1e-10 and worst_mc < 0.01
    return record(5, "MDN closed forms", ok, f"NLL at mean max |err| {worst_nll:.1e} (< 1e-10); "
                  f"moments vs 1e6-sample Monte Carlo max rel err {worst_mc:.2%} (< 1%)")


# -- 6, 7, 8 -----------------------------------------------------------------------------------

@functools.cache
def module_run():
    t0 = time.perf_counter()
    cfg = config_from_dict(preset("module_ablation"))
    bench = prepare_benchmark(cfg)
    table = module_ablation_harness(bench, cfg.ablation.seeds, cfg.ablation.variants)
    return bench, table, time.perf_counter() - t0


def criterion_6() -> bool:
    _, table, secs = module_run()
    med = {v: table.median(v) for v in ("full", "-SE", "-D-None", "-D-Equi")}
    ordered = med["full"] <= med["-SE"] < med["-D-None"] < med["-D-Equi"]
    ratio = med["-D-Equi"] / med["full"]
    ok = ordered and ratio >= 2 and secs < 1200 and not table.failed
    detail = ", ".join(f"{k} {v:.4f}" for k, v in med.items())
    return record(6, "module-ablation ordering", ok,
                  f"median RMSE {detail}; need full <= -SE < -D-None < -D-Equi: {ordered}; "
                  f"-D-Equi/full {ratio:.2f} (>= 2); {secs:.0f} s (< 1200 s)")


def criterion_7() -> bool:
    cfg = config_from_dict(preset("camera_ablation"))
    bench = prepare_benchmark(cfg)
    table = camera_ablation_harness(bench, cfg.ablation.subsets, cfg.ablation.seeds)
    med = {r["subset"]: r["median_rmse"] for r in table.summary()}
    names = [s.name for s in cfg.simulator.sensors]
    everything = med["+".join(names)]
    singles = {k: v for k, v in med.items() if "+" not in k}
    all_best = all(everything <= v for v in singles.values())
    complementary = med["F+B"] < med["F+FL+FR"]
    ok = all_best and complementary and not table.failed
    detail = ", ".join(f"{k} {v:.4f}" for k, v in med.items())
    return record(7, "camera-ablation ordering", ok, f"median RMSE {detail}; all sensors <= every single: "
                  f"{all_best}; F+B < F+FL+FR: {complementary}")


def criterion_8() -> bool:
    bench, module, _ = module_run()
    full = [c for c in module.cells if c.label == "full"]
    table = ekf_comparison(bench, bench.cfg.ablation.seeds, aft_cells=full)
    aft, ekf = table.median("aft"), table.median("ekf")
    degraded = any(s.degradation for s in bench.cfg.simulator.sensors)
    ok = degraded and aft <= ekf and not table.failed
    return record(8, "EKF comparison", ok, f"degradation windows present: {degraded}; median RMSE AFT {aft:.4f} "
                  f"vs tuned EKF {ekf:.4f} (params {table.extra['ekf_params']})")


# -- 9 -----------------------------------------------------------------------------------------

def _tree(root: Path) -> dict:
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def criterion_9() -> bool:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        main(["generate", "--preset", "smoke", "--out", str(tmp / "a")])
        # regenerate from nothing but the manifest's recorded configuration
        manifest = yaml.safe_load((tmp / "a" / "manifest.yaml").read_text())
        (tmp / "cfg.yaml").write_text(yaml.safe_dump(manifest["config"]))
        main(["generate", "--config", str(tmp / "cfg.yaml"), "--out", str(tmp / "b")])
        a, b = _tree(tmp / "a"), _tree(tmp / "b")
        streams_same = a == b and any(k.name.startswith("stream_") for k in a)
        for run in ("r1", "r2"):
            main(["train", "--data", str(tmp / "a"), "--out", str(tmp / run), "--variant", "-D-Equi"])
        ck = [(tmp / r / "checkpoints" / "latest.ckpt").read_bytes() for r in ("r1", "r2")]
        ckpt_same = ck[0] == ck[1]
    return record(9, "reproducibility", streams_same and ckpt_same,
                  f"{len(a)} generated files byte-identical: {streams_same}; checkpoints bit-identical: {ckpt_same}")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}
SLOW = {6, 7, 8}


@pytest.mark.parametrize("n", [pytest.param(n, marks=pytest.mark.slow) if n in SLOW else n for n in CRITERIA])
def test_criterion(n):
    assert CRITERIA[n](), RESULTS[n]


if __name__ == "__main__":
    chosen = [int(a) for a in sys.argv[1:]] or list(CRITERIA)
    for n in chosen:
        try:
            CRITERIA[n]()
        except Exception as exc:  # report and keep going
            record(n, "error", False, f"{type(exc).__name__}: {exc}")
    print()
    for n in chosen:
        print(RESULTS[n])
    sys.exit(0 if all(RESULTS[n].startswith("PASS") for n in chosen) else 1)
