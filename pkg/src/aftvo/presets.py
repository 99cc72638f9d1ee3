"""Named configuration presets (partial config mappings layered under a config file).

``module_ablation``, ``camera_ablation`` and ``ekf_comparison`` are the
desk-scale benchmarks behind the ablation tables; ``synchronous`` is the
equal-rate sanity setting; ``smoke`` is a seconds-long run for tests.
"""

from __future__ import annotations

import copy


def _sensor(source_id, name, rate, phase_us, **kw) -> dict:
    return {"source_id": source_id, "name": name, "rate": rate, "phase_us": phase_us, **kw}


_DEGRADED = {
    "F": [[8.0, 16.0, 6.0], [40.0, 46.0, 6.0]],
    "L": [[20.0, 28.0, 6.0]],
    "R": [[30.0, 38.0, 6.0], [50.0, 56.0, 6.0]],
    # cameras facing the same way lose texture together; the rear one fails elsewhere
    "front": [[8.0, 16.0, 6.0], [30.0, 38.0, 6.0], [48.0, 54.0, 6.0]],
    "back": [[20.0, 26.0, 6.0]],
}

MODULE_ABLATION = {
    "experiment": "module_ablation",
    "simulator": {
        "duration": 60.0, "n_train": 24, "n_val": 1, "n_test": 3,
        "sensors": [_sensor(0, "F", 12.0, 3_000, degradation=_DEGRADED["F"]),
                    _sensor(1, "L", 17.0, 11_000, degradation=_DEGRADED["L"]),
                    _sensor(2, "R", 25.0, 7_000, degradation=_DEGRADED["R"])],
    },
    "training": {"lr": 2e-3, "epochs": 6, "teacher_noise": 1.0},
    "ablation": {"seeds": [0, 1, 2], "variants": ["full", "-SE", "-D-None", "-D-Equi"]},
}

CAMERA_ABLATION = {
    "experiment": "camera_ablation",
    "simulator": {
        "duration": 60.0, "n_train": 24, "n_val": 1, "n_test": 3,
        "sensors": [
            *(_sensor(k, name, 12.0, phase, noise_group="front", noise_correlation=0.8,
                      degradation=_DEGRADED["front"])
              for k, name, phase in ((0, "F", 3_000), (1, "FL", 31_000), (2, "FR", 59_000))),
            _sensor(3, "B", 12.0, 17_000, degradation=_DEGRADED["back"]),
        ],
    },
    "training": {"lr": 1e-3, "epochs": 7, "teacher_noise": 1.0},
    "ablation": {"seeds": [0, 1, 2], "subsets": [["F"], ["B"], ["F", "B"], ["F", "FL", "FR"],
                                                 ["F", "FL", "FR", "B"]]},
}

SYNCHRONOUS = {
    "experiment": "synchronous",
    "simulator": {
        "duration": 60.0, "n_train": 24, "n_val": 1, "n_test": 3,
        "sensors": [_sensor(k, n, 20.0, 5_000, jitter_us=0.0, dropout=0.0) for k, n in enumerate("FLR")],
    },
    "training": {"lr": 1e-3, "epochs": 7, "teacher_noise": 1.0},
    "ablation": {"seeds": [0, 1, 2], "variants": ["full", "-D-Equi"]},
}

SMOKE = {
    "experiment": "smoke",
    "simulator": {"duration": 6.0, "n_train": 2, "n_val": 1, "n_test": 1},
    "mdn": {"sequences": 2, "hidden": 8, "components": 2, "epochs": 1, "seq_len": 8},
    "aft": {"layers": 1, "d_model": 8, "heads": 2, "ff_dim": 16, "window_s": 1.0},
    "training": {"epochs": 2, "batch": 8},
    "ablation": {"seeds": [0, 1, 2]},
}

PRESETS = {"module_ablation": MODULE_ABLATION, "camera_ablation": CAMERA_ABLATION,
           "synchronous": SYNCHRONOUS, "smoke": SMOKE}


def preset(name: str) -> dict:
    """A deep copy of the named preset mapping."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
