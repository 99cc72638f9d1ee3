from .rpe import RpeReport, relative_step_errors, rpe, rpe_series
from .trajectory import PoseTrajectory, compose_trajectory, from_simulation, load_tum, save_tum
from .harness import (MODULE_VARIANTS, AblationTable, CellResult, camera_ablation_harness, ekf_comparison,
                      module_ablation_harness, read_csv, write_csv)
