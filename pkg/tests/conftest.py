import numpy as np
import pytest
import torch

from remdiff.checkpoints import CheckpointManifest, load_checkpoint, save_checkpoint
from remdiff.network import Denoiser, DenoiserConfig
from remdiff.scene import SceneSpec, generate_dataset
from remdiff.schedule import build_schedule


@pytest.fixture(scope="session")
def tiny_dataset_root(tmp_path_factory):
    """24 maps at 16x16 over one fixed layout; fast enough for unit tests."""
    spec = SceneSpec(height=16, width=16, n_buildings=2, building_min_side=2,
                     building_max_side=4, seed=123)
    return generate_dataset(spec, 24, tmp_path_factory.mktemp("tiny") / "data")


@pytest.fixture(scope="session")
def tiny_checkpoint_dir(tmp_path_factory):
    """Untrained tiny denoiser with a randomized head and a T=10 schedule."""
    torch.manual_seed(99)
    config = DenoiserConfig(height=16, width=16, base_channels=8, time_embed_dim=32)
    model = Denoiser(config)
    with torch.no_grad():
        model.head_out.weight.normal_(0, 0.05)
        model.head_out.bias.normal_(0, 0.05)
    manifest = CheckpointManifest(
        config=config, schedule=build_schedule(10).to_dict(), sigma=2.0,
        value_min=0.0, value_max=255.0, iteration=0, seed=99)
    out = tmp_path_factory.mktemp("ckpt") / "tiny"
    save_checkpoint(out, model, manifest)
    return out


@pytest.fixture()
def tiny_checkpoint(tiny_checkpoint_dir):
    return load_checkpoint(tiny_checkpoint_dir)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
