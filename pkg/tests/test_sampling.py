"""Sampler: seeded determinism, output contracts, the predicted store."""

import numpy as np
import pytest
import torch

from remdiff.datasets import load_dataset
from remdiff.errors import DuplicateId, IncompatibleCheckpoint, RemdiffError
from remdiff.grids import TxCoordinate, gaussian_heatmap
from remdiff.sampling import (DDIM, DDPM_FULL, SampleRequest, load_predicted,
                              reverse_trajectory, sample, store_predicted)


class TestSample:
    def test_same_seed_byte_identical(self, tiny_checkpoint):
        req = SampleRequest(tx=TxCoordinate(5, 9), n_samples=2, seed=31)
        a = sample(tiny_checkpoint, req)
        b = sample(tiny_checkpoint, req)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.map.values, rb.map.values)

    def test_different_seeds_differ(self, tiny_checkpoint):
        a = sample(tiny_checkpoint, SampleRequest(tx=TxCoordinate(5, 9), seed=1))
        b = sample(tiny_checkpoint, SampleRequest(tx=TxCoordinate(5, 9), seed=2))
        assert not np.array_equal(a[0].map.values, b[0].map.values)

    def test_output_range_and_dims(self, tiny_checkpoint):
        for kind, steps in ((DDPM_FULL, 0), (DDIM, 5)):
            req = SampleRequest(tx=TxCoordinate(3, 3), n_samples=2,
                                sampler_kind=kind, substeps=max(steps, 1), seed=7)
            for rec in sample(tiny_checkpoint, req):
                assert rec.map.values.shape == (16, 16)
                assert rec.map.values.min() >= 0.0
                assert rec.map.values.max() <= 255.0

    def test_sample_count_and_provenance(self, tiny_checkpoint):
        req = SampleRequest(tx=TxCoordinate(8, 2), n_samples=100,
                            sampler_kind=DDIM, substeps=2, seed=5)
        records = sample(tiny_checkpoint, req)
        assert len(records) == 100
        assert len({r.id for r in records}) == 100
        for i, rec in enumerate(records):
            assert rec.sample_index == i
            assert rec.seed == 5
            assert rec.requested_x == 8 and rec.requested_y == 2
            assert rec.checkpoint_id

    def test_sample_independent_of_batch_position(self, tiny_checkpoint):
        # the i-th sample is a function of (seed, i), not of n_samples
        one = sample(tiny_checkpoint, SampleRequest(
            tx=TxCoordinate(4, 4), n_samples=1, sampler_kind=DDIM, substeps=3,
            seed=13))
        three = sample(tiny_checkpoint, SampleRequest(
            tx=TxCoordinate(4, 4), n_samples=3, sampler_kind=DDIM, substeps=3,
            seed=13))
        assert np.allclose(one[0].map.values, three[0].map.values, atol=1e-3)

    def test_tx_outside_grid_rejected(self, tiny_checkpoint):
        with pytest.raises(IncompatibleCheckpoint):
            sample(tiny_checkpoint, SampleRequest(tx=TxCoordinate(99, 4)))

    def test_env_mismatch_rejected(self, tiny_checkpoint):
        with pytest.raises(IncompatibleCheckpoint):
            sample(tiny_checkpoint, SampleRequest(tx=TxCoordinate(4, 4),
                                                  env=np.array([1.0, 2.0])))

    def test_bad_request_parameters(self):
        with pytest.raises(ValueError):
            SampleRequest(tx=TxCoordinate(1, 1), n_samples=0)
        with pytest.raises(ValueError):
            SampleRequest(tx=TxCoordinate(1, 1), sampler_kind="euler")


class TestDeterministicPathEquivalence:
    def test_full_ddim_close_to_zero_noise_ddpm(self, tiny_checkpoint):
        # the eta=0 jump and the zero-noise ancestral update are O(beta^2)-
        # apart per step; over the whole walk they stay numerically close
        schedule = tiny_checkpoint.build_schedule()
        cfg = tiny_checkpoint.manifest.config
        heat = gaussian_heatmap(TxCoordinate(6, 6), 16, 16, 2.0)
        cond = torch.from_numpy(heat.values).to(torch.float32).unsqueeze(0)
        gen = torch.Generator().manual_seed(123)
        x_init = torch.randn((1, 1, cfg.height, cfg.width), generator=gen)

        ddpm = reverse_trajectory(tiny_checkpoint, cond, x_init.clone(),
                                  DDPM_FULL, 0, force_zero_noise=True)
        ddim = reverse_trajectory(tiny_checkpoint, cond, x_init.clone(),
                                  DDIM, schedule.T)
        mae = float((ddpm - ddim).abs().mean())
        assert mae < 0.05


class TestPredictedStore:
    def test_round_trip_with_provenance(self, tiny_checkpoint, tmp_path):
        records = sample(tiny_checkpoint, SampleRequest(
            tx=TxCoordinate(8, 8), n_samples=5, sampler_kind=DDIM, substeps=2,
            seed=17))
        store = tmp_path / "predicted"
        store_predicted(records, store)
        loaded = load_predicted(store)
        assert len(loaded) == 5
        for rec in loaded:
            assert rec.origin == "predicted"
            assert rec.checkpoint_id
            assert rec.sampler_kind == DDIM
            assert (rec.requested_x, rec.requested_y) == (8.0, 8.0)

    def test_refuses_original_dataset_root(self, tiny_checkpoint,
                                           tiny_dataset_root):
        records = sample(tiny_checkpoint, SampleRequest(
            tx=TxCoordinate(2, 2), sampler_kind=DDIM, substeps=2, seed=3))
        with pytest.raises(RemdiffError):
            store_predicted(records, tiny_dataset_root)

    def test_duplicate_id_rejected(self, tiny_checkpoint, tmp_path):
        records = sample(tiny_checkpoint, SampleRequest(
            tx=TxCoordinate(2, 2), sampler_kind=DDIM, substeps=2, seed=3))
        store_predicted(records, tmp_path / "store")
        with pytest.raises(DuplicateId):
            store_predicted(records, tmp_path / "store")

    def test_opt_in_union_loading(self, tiny_checkpoint, tiny_dataset_root):
        base = load_dataset(tiny_dataset_root)
        records = sample(tiny_checkpoint, SampleRequest(
            tx=TxCoordinate(6, 3), n_samples=3, sampler_kind=DDIM, substeps=2,
            seed=29))
        store_predicted(records, tiny_dataset_root / "predicted")
        merged = load_dataset(tiny_dataset_root, include_predicted=True)
        assert len(merged) == len(base) + 3
        origins = {rec.origin for rec in merged}
        assert origins == {"original", "predicted"}
        # default loading still excludes them
        assert len(load_dataset(tiny_dataset_root)) == len(base)
