"""remdiff: coordinate-conditioned diffusion for radio environment maps.

Learns, from a corpus of REMs tagged with transmitter coordinates, to
synthesize the REM for an arbitrary query coordinate in the same scene, and
evaluates the synthesis against ground truth (slice RMSE, intensity CDFs,
ensemble stability).
"""

from . import errors
from .checkpoints import (CheckpointManifest, DenoiserCheckpoint, load_checkpoint,
                          save_checkpoint)
from .datasets import (DatasetManifest, load_dataset, read_manifest, save_dataset,
                       split_records)
from .evaluation import (CdfCurve, EvalProtocol, SliceSpec, cdf_distance,
                         ensemble_stats, evaluate_checkpoint, intensity_cdf,
                         slice_rmse)
from .grids import (GRAYSCALE_8BIT, CoordHeatmap, DatasetRecord, EnvStats, RemGrid,
                    TxCoordinate, ValueRange, denormalize, extract_tx,
                    gaussian_heatmap, normalize, per_image_normalize, zscore_env)
from .network import Denoiser, DenoiserConfig, film_modulate, sinusoidal_embedding
from .sampling import PredictedRecord, SampleRequest, sample, store_predicted
from .scene import SceneSpec, generate_dataset, generate_scene
from .schedule import (DiffusionSchedule, build_schedule, ddim_step, ddim_time_grid,
                       invert_q_sample, q_sample, reverse_step)
from .training import TrainConfig, TrainLogRecord, run_training, train_step

__version__ = "0.1.0"

__all__ = [
    "CheckpointManifest", "DenoiserCheckpoint", "load_checkpoint", "save_checkpoint",
    "DatasetManifest", "load_dataset", "read_manifest", "save_dataset",
    "split_records",
    "CdfCurve", "EvalProtocol", "SliceSpec", "cdf_distance", "ensemble_stats",
    "evaluate_checkpoint", "intensity_cdf", "slice_rmse",
    "GRAYSCALE_8BIT", "CoordHeatmap", "DatasetRecord", "EnvStats", "RemGrid",
    "TxCoordinate", "ValueRange", "denormalize", "extract_tx", "gaussian_heatmap",
    "normalize", "per_image_normalize", "zscore_env",
    "Denoiser", "DenoiserConfig", "film_modulate", "sinusoidal_embedding",
    "PredictedRecord", "SampleRequest", "sample", "store_predicted",
    "SceneSpec", "generate_dataset", "generate_scene",
    "DiffusionSchedule", "build_schedule", "ddim_step", "ddim_time_grid",
    "invert_q_sample", "q_sample", "reverse_step",
    "TrainConfig", "TrainLogRecord", "run_training", "train_step",
    "errors",
]
