"""Data flow shared by the CLI and the harnesses.

simulate -> fit one MDN per sensor -> mixtures per stream entry -> fusion
windows -> train -> chained window predictions -> RPE.  Every random draw
is derived from the run seed, so the whole chain is reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .aft import FusionTransformer, FusionWindow, make_windows, predict_windows, query_grid, train_fusion
from .aft.train import FusionTrainer
from .baselines import EkfMeasurements, EkfParams, run_ekf, tune_ekf
from .config import RunConfig
from .eval.rpe import RpeReport, rpe
from .eval.trajectory import PoseTrajectory, compose_trajectory, from_simulation
from .mdn import MdnEstimator, MixtureParams, mixture_moments, stream_inputs, train_mdn
from .sim import MeasurementStream, Trajectory, generate_trajectory, random_outages, sample_sensor, stream_truth

log = logging.getLogger(__name__)

SPLITS = {"train": 0, "val": 1, "test": 2}


def derive_seed(*parts: int) -> int:
    """Deterministic 31-bit seed from a tuple of non-negative integers."""
    return int(np.random.default_rng([int(p) for p in parts]).integers(2 ** 31 - 1))


@dataclass
class Sequence:
    split: str
    index: int
    seed: int
    traj: Trajectory
    streams: list[MeasurementStream]

    @property
    def name(self) -> str:
        return f"{self.split}_{self.index:03d}"

    def stream(self, source_id: int) -> MeasurementStream:
        for s in self.streams:
            if s.source_id == source_id:
                return s
        raise KeyError(f"no stream for source {source_id} in {self.name}")

    @property
    def first_frame_us(self) -> int:
        return min(s.first_frame_us for s in self.streams)


def simulate_sequence(cfg: RunConfig, split: str, index: int) -> Sequence:
    sim = cfg.simulator
    seed = derive_seed(cfg.seed, SPLITS[split], index)
    traj = generate_trajectory(sim.trajectory, sim.duration, seed, speed=sim.speed,
                               speed_variation=sim.speed_variation, yaw_rate_scale=sim.yaw_rate_scale)
    fraction = sim.outage_fraction
    if split == "test" and sim.test_outage_fraction is not None:
        fraction = sim.test_outage_fraction
    rng = np.random.default_rng([seed, 1])
    streams = []
    for sensor in sim.sensors:
        extra = random_outages(rng, traj.duration_us, fraction, tuple(sim.outage_length))
        streams.append(sample_sensor(traj, sensor.to_spec(extra), seed))
    return Sequence(split, index, seed, traj, streams)


def simulate_split(cfg: RunConfig, split: str) -> list[Sequence]:
    n = {"train": cfg.simulator.n_train, "val": cfg.simulator.n_val, "test": cfg.simulator.n_test}[split]
    return [simulate_sequence(cfg, split, i) for i in range(n)]


# -- per-sensor estimators ------------------------------------------------------------

def fit_mdns(cfg: RunConfig, train: list[Sequence], val: list[Sequence] = ()) -> dict[int, "MdnFit"]:
    m = cfg.mdn
    seqs = train[:m.sequences]
    fits = {}
    for sensor in cfg.simulator.sensors:
        k = sensor.source_id
        xs = [stream_inputs(s.stream(k)) for s in seqs]
        ys = [stream_truth(s.traj, s.stream(k)) for s in seqs]
        vx = [stream_inputs(s.stream(k)) for s in val] or None
        vy = [stream_truth(s.traj, s.stream(k)) for s in val] or None
        res = train_mdn(xs, ys, hidden=m.hidden, n_components=m.components, epochs=m.epochs, lr=m.lr,
                        batch_size=m.batch, seq_len=m.seq_len, seed=derive_seed(cfg.seed, 100, k),
                        val_inputs=vx, val_targets=vy)
        log.info("mdn %s: train nll %.3f", sensor.name, res.train_nll[-1] if res.train_nll else float("nan"))
        fits[k] = MdnFit(res.model, res.train_nll, res.val_nll)
    return fits


@dataclass
class MdnFit:
    model: MdnEstimator
    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)


def sequence_mixtures(mdns: dict[int, MdnEstimator], seq: Sequence) -> dict[int, MixtureParams]:
    return {k: model.predict(stream_inputs(seq.stream(k))) for k, model in mdns.items()}


# -- fusion windows and estimates ---------------------------------------------------------

def evaluation_grid(seq: Sequence, rate_hz: float) -> np.ndarray:
    """Query stamps from the first captured frame on, so every method can report all of them."""
    return query_grid(seq.first_frame_us, int(seq.traj.times_us[-1]), rate_hz)


def sequence_windows(seq: Sequence, mixtures: dict[int, MixtureParams], cfg: RunConfig, stride: int,
                     sources=None, with_targets: bool = True) -> list[FusionWindow]:
    sources = sorted(mixtures) if sources is None else sorted(sources)
    U = queries_per_window(cfg)
    streams = [seq.stream(k) for k in sources]
    return make_windows([s.timestamps_us for s in streams],
                        [np.full(len(s), s.source_id) for s in streams],
                        [mixtures[s.source_id].payload() for s in streams],
                        evaluation_grid(seq, cfg.simulator.query_rate), U, stride,
                        seq.traj if with_targets else None)


def queries_per_window(cfg: RunConfig) -> int:
    return int(round(cfg.aft.window_s * cfg.simulator.query_rate))


def fusion_estimate(model: FusionTransformer, seq: Sequence, mixtures: dict[int, MixtureParams],
                    cfg: RunConfig, sources=None) -> PoseTrajectory:
    """Chain non-overlapping windows into one trajectory anchored at the true first pose."""
    U = queries_per_window(cfg)
    windows = sequence_windows(seq, mixtures, cfg, U, sources, with_targets=False)
    if not windows:
        raise ValueError(f"{seq.name}: no evaluation windows")
    for a, b in zip(windows, windows[1:]):
        if b.anchor_us != a.query_us[-1]:
            raise ValueError(f"{seq.name}: a window without measurements breaks the chain at {a.query_us[-1]} us")
    preds = predict_windows(model, windows)
    stamps = np.concatenate([w.query_us for w in windows])
    start_us = windows[0].anchor_us
    return compose_trajectory(stamps, np.concatenate(preds), seq.traj.pose_at(start_us), start_us)


def ekf_measurements(seq: Sequence, mixtures: dict[int, MixtureParams], sources=None) -> list[EkfMeasurements]:
    sources = sorted(mixtures) if sources is None else sorted(sources)
    out = []
    for k in sources:
        s = seq.stream(k)
        mean, var = mixture_moments(mixtures[k])
        out.append(EkfMeasurements(k, s.frame_starts_us, s.timestamps_us, mean, var))
    return out


def ekf_estimate(seq: Sequence, mixtures: dict[int, MixtureParams], params: EkfParams, stamps_us: np.ndarray,
                 sources=None) -> PoseTrajectory:
    return run_ekf(ekf_measurements(seq, mixtures, sources), params, query_us=stamps_us).queries


def pooled_rpe(pairs: list[tuple[PoseTrajectory, PoseTrajectory]]) -> RpeReport:
    """RPE over the consecutive pairs of several (estimate, truth) sequences together."""
    reports = [rpe(est, gt) for est, gt in pairs]
    return RpeReport.from_errors(np.concatenate([r.errors for r in reports]),
                                 np.concatenate([r.rot_errors for r in reports]))


def truth_for(seq: Sequence, est: PoseTrajectory) -> PoseTrajectory:
    return from_simulation(seq.traj, est.timestamps_us)


# -- the prepared benchmark --------------------------------------------------------------

@dataclass
class Benchmark:
    """Simulated splits plus fitted sensor estimators and their mixtures."""

    cfg: RunConfig
    train: list[Sequence]
    val: list[Sequence]
    test: list[Sequence]
    mdns: dict[int, MdnEstimator]
    mixtures: dict[str, dict[int, MixtureParams]]

    @property
    def source_ids(self) -> list[int]:
        return sorted(self.mdns)

    @property
    def n_sources(self) -> int:
        return max(self.source_ids) + 1

    def split(self, name: str) -> list[Sequence]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def windows(self, split: str, stride: int | None = None, sources=None) -> list[FusionWindow]:
        U = queries_per_window(self.cfg)
        stride = max(U // 2, 1) if stride is None else stride
        out = []
        for seq in self.split(split):
            out += sequence_windows(seq, self.mixtures[seq.name], self.cfg, stride, sources)
        return out

    def sources_named(self, names) -> list[int]:
        by_name = {s.name: s.source_id for s in self.cfg.simulator.sensors}
        unknown = [n for n in names if n not in by_name]
        if unknown:
            raise KeyError(f"unknown sensor name(s) {unknown}; configured: {sorted(by_name)}")
        return sorted(by_name[n] for n in names)


def prepare_benchmark(cfg: RunConfig, mdns: dict[int, MdnEstimator] | None = None,
                      sequences: dict[str, list[Sequence]] | None = None) -> Benchmark:
    seqs = sequences or {split: simulate_split(cfg, split) for split in SPLITS}
    if mdns is None:
        mdns = {k: f.model for k, f in fit_mdns(cfg, seqs["train"], seqs["val"]).items()}
    mixtures = {s.name: sequence_mixtures(mdns, s) for split in SPLITS for s in seqs[split]}
    return Benchmark(cfg, seqs["train"], seqs["val"], seqs["test"], mdns, mixtures)


def train_model(bench: Benchmark, variant: str | None = None, seed: int | None = None,
                sources=None, val: bool = False) -> FusionTrainer:
    cfg = bench.cfg
    aft_cfg = cfg.aft.model_config()
    if variant is not None:
        aft_cfg = replace(aft_cfg, variant=variant)
    seed = cfg.seed if seed is None else seed
    windows = bench.windows("train", sources=sources)
    val_windows = bench.windows("val", sources=sources) if val else None
    return train_fusion(windows, aft_cfg, cfg.training.train_config(), n_sources=bench.n_sources,
                        seed=derive_seed(seed, 200), val_windows=val_windows)


def evaluate_fusion(bench: Benchmark, model: FusionTransformer, split: str = "test",
                    sources=None) -> tuple[RpeReport, list[tuple[PoseTrajectory, PoseTrajectory]]]:
    pairs = []
    for seq in bench.split(split):
        est = fusion_estimate(model, seq, bench.mixtures[seq.name], bench.cfg, sources)
        pairs.append((est, truth_for(seq, est)))
    return pooled_rpe(pairs), pairs


def evaluate_ekf(bench: Benchmark, params: EkfParams, split: str = "test",
                 sources=None) -> tuple[RpeReport, list[tuple[PoseTrajectory, PoseTrajectory]]]:
    """EKF reported at the same stamps the fusion model is evaluated on."""
    U = queries_per_window(bench.cfg)
    pairs = []
    for seq in bench.split(split):
        grid = evaluation_grid(seq, bench.cfg.simulator.query_rate)
        stamps = grid[:((len(grid) - 1) // U) * U + 1]
        est = ekf_estimate(seq, bench.mixtures[seq.name], params, stamps, sources)
        pairs.append((est, truth_for(seq, est)))
    return pooled_rpe(pairs), pairs


def tune_ekf_on_val(bench: Benchmark, grid: dict[str, list[float]] | None = None,
                    sources=None) -> tuple[EkfParams, float]:
    split = "val" if bench.val else "train"
    return tune_ekf(lambda p: evaluate_ekf(bench, p, split, sources)[0].rmse, grid)
