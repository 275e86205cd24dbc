"""On-disk dataset layout: round-trips, error contracts, seeded splits."""

import json

import numpy as np
import pytest

from remdiff.datasets import (DatasetManifest, load_dataset, read_manifest,
                              save_dataset, split_records)
from remdiff.errors import DimensionMismatch, MissingMetadata
from remdiff.grids import DatasetRecord, RemGrid, TxCoordinate


def make_records(n, h=16, w=16, with_env=False, seed=0):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        arr = np.round(rng.uniform(0, 255, size=(h, w)))
        env = rng.normal(size=3) if with_env else None
        records.append(DatasetRecord(
            id=f"rec-{i:03d}", map=RemGrid(arr, units_mode="raw"),
            tx=TxCoordinate(float(rng.integers(0, w)), float(rng.integers(0, h))),
            env=env))
    return records


class TestRoundTrip:
    def test_pixels_and_metadata_survive(self, tmp_path):
        records = make_records(10)
        save_dataset(records, tmp_path / "data")
        loaded = load_dataset(tmp_path / "data")
        assert [r.id for r in loaded] == [r.id for r in records]
        for orig, back in zip(records, loaded):
            assert np.array_equal(orig.map.values, back.map.values)
            assert back.tx == orig.tx

    def test_env_round_trip(self, tmp_path):
        records = make_records(4, with_env=True)
        save_dataset(records, tmp_path / "data")
        loaded = load_dataset(tmp_path / "data")
        for orig, back in zip(records, loaded):
            assert np.allclose(back.env, orig.env, atol=1e-12)
        assert read_manifest(tmp_path / "data").P == 3

    def test_records_sorted_by_id(self, tmp_path):
        records = make_records(5)[::-1]
        save_dataset(records, tmp_path / "data")
        loaded = load_dataset(tmp_path / "data")
        assert [r.id for r in loaded] == sorted(r.id for r in loaded)


class TestErrorContracts:
    def test_missing_image_names_the_id(self, tmp_path):
        records = make_records(3)
        save_dataset(records, tmp_path / "data")
        (tmp_path / "data" / "maps" / "rec-001.png").unlink()
        with pytest.raises(MissingMetadata, match="rec-001"):
            load_dataset(tmp_path / "data")

    def test_dimension_mismatch(self, tmp_path):
        records = make_records(2, h=16, w=16)
        save_dataset(records, tmp_path / "data")
        manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
        manifest["H"] = 32
        (tmp_path / "data" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DimensionMismatch):
            load_dataset(tmp_path / "data")

    def test_corrupt_image(self, tmp_path):
        from remdiff.errors import CorruptImage

        records = make_records(2)
        save_dataset(records, tmp_path / "data")
        (tmp_path / "data" / "maps" / "rec-000.png").write_bytes(b"not a png")
        with pytest.raises(CorruptImage):
            load_dataset(tmp_path / "data")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingMetadata):
            load_dataset(tmp_path / "nowhere")


class TestSplit:
    def test_paper_scale_split(self):
        records = make_records(10)  # stand-ins; split logic ignores content
        ids = [DatasetRecord(id=f"r{i}", map=records[0].map,
                             tx=records[0].tx) for i in range(1000)]
        train, held = split_records(ids, 0.9, seed=42)
        assert len(train) == 900
        assert len(held) == 100
        assert {r.id for r in train} | {r.id for r in held} == {r.id for r in ids}

    def test_split_deterministic_under_seed(self):
        records = make_records(20)
        a = split_records(records, 0.75, seed=7)
        b = split_records(records, 0.75, seed=7)
        assert [r.id for r in a[0]] == [r.id for r in b[0]]
        c = split_records(records, 0.75, seed=8)
        assert [r.id for r in a[0]] != [r.id for r in c[0]]

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            split_records(make_records(4), 1.0, seed=0)


class TestManifest:
    def test_round_trip(self):
        m = DatasetManifest(H=64, W=64, P=2)
        assert DatasetManifest.from_dict(m.to_dict()) == m
