"""Train a small conditional denoiser on a synthetic dataset.

The model sees a two-channel input (noisy map + Gaussian coordinate bump)
and learns to predict the injected noise. With an untrained network the loss
starts at ~1.0 (the expected squared norm of standard-normal noise); watch it
fall as the model picks up scene structure and the coordinate conditioning.

This is sized to finish in a few minutes on a laptop CPU. A desk-scale run
(64x64, 200 maps, 2000 iterations) is what the acceptance suite uses; see
tests/test_acceptance.py.

Run:  python demos/03_train_denoiser.py
"""

import pathlib

import numpy as np

from remdiff import (DenoiserConfig, SceneSpec, TrainConfig, build_schedule,
                     generate_dataset, run_training)
from remdiff.training import load_training_log

OUT = pathlib.Path(__file__).parent / "output" / "training"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    data = OUT / "dataset"
    if not (data / "manifest.json").exists():
        spec = SceneSpec(height=32, width=32, n_buildings=4,
                         building_min_side=3, building_max_side=7, seed=11)
        generate_dataset(spec, n_records=60, root=data)
        print(f"generated 60 maps at 32x32 under {data}")

    config = TrainConfig(iterations=300, batch_size=8, lr_peak=3e-4,
                         warmup=60, val_period=100, ckpt_period=100,
                         seed=0, sigma=3.0, train_fraction=0.9)
    net = DenoiserConfig(height=32, width=32, base_channels=16,
                         time_embed_dim=128)
    best, log_path = run_training(data, config, OUT / "run",
                                  denoiser_config=net,
                                  schedule=build_schedule(1000))
    print(f"best checkpoint: {best}")

    entries = load_training_log(log_path)
    losses = [e.loss for e in entries]
    print(f"loss: first-50 mean {np.mean(losses[:50]):.3f}, "
          f"last-50 mean {np.mean(losses[-50:]):.3f}")
    for lo in range(0, len(losses), 50):
        chunk = losses[lo:lo + 50]
        bar = "#" * int(40 * np.mean(chunk))
        print(f"  iter {lo:4d}+ {np.mean(chunk):6.3f} {bar}")
    print(f"full log: {log_path}")


if __name__ == "__main__":
    main()
