"""Synthetic scene generator: propagation formula, shadowing, determinism."""

import numpy as np
import pytest

from remdiff.datasets import load_dataset
from remdiff.errors import TxInsideBuilding
from remdiff.grids import TxCoordinate, extract_tx
from remdiff.scene import (Building, SceneSpec, building_mask, free_space_mask,
                           generate_dataset, generate_scene, scene_buildings,
                           segment_crossings)


def open_spec(**kwargs):
    """A scene with no buildings, for pure path-loss checks."""
    defaults = dict(height=32, width=32, n_buildings=0, seed=1)
    defaults.update(kwargs)
    return SceneSpec(**defaults)


def sampled_crossings(tx, pixel, building, n=20_000):
    """Independent oracle: dense point sampling along the segment."""
    ts = np.linspace(0.0, 1.0, n)
    xs = tx.x + ts * (pixel[0] - tx.x)
    ys = tx.y + ts * (pixel[1] - tx.y)
    inside = ((building.x0 <= xs) & (xs <= building.x1) &
              (building.y0 <= ys) & (ys <= building.y1))
    return int(inside.any())


class TestPropagationFormula:
    def test_unit_distance_equals_reference_power(self):
        spec = open_spec()
        rec = generate_scene(spec, TxCoordinate(16, 16))
        assert rec.map.values[16, 17] == spec.reference_power
        assert rec.map.values[15, 16] == spec.reference_power

    def test_monotone_along_open_ray(self):
        spec = open_spec()
        rec = generate_scene(spec, TxCoordinate(2, 16))
        ray = rec.map.values[16, 2:]
        assert np.all(np.diff(ray) <= 0)

    def test_blocked_pixel_dimmer_by_penetration_loss(self):
        building = Building(x0=14, y0=14, x1=17, y1=17)
        spec = SceneSpec(height=32, width=32, n_buildings=1, seed=3,
                         penetration_loss=40.0, noise_floor=0.0)
        tx = TxCoordinate(4, 16)
        behind = (28, 16)  # (x, y), straight behind the building
        crossings = segment_crossings(tx, [building], 32, 32)
        assert crossings[behind[1], behind[0]] == 1
        assert sampled_crossings(tx, behind, building) == 1

        field_open = generate_scene(open_spec(noise_floor=0.0), tx).map.values
        rec = generate_scene(spec, tx, buildings=[building])
        drop = field_open[behind[1], behind[0]] - rec.map.values[behind[1], behind[0]]
        assert drop == pytest.approx(40.0 * crossings[behind[1], behind[0]], abs=1e-9)

    def test_shadow_monotonicity(self):
        # one more building on the segment never brightens a pixel
        tx = TxCoordinate(2, 16)
        b1 = Building(x0=8, y0=14, x1=10, y1=18)
        b2 = Building(x0=20, y0=14, x1=22, y1=18)
        spec = SceneSpec(height=32, width=32, n_buildings=0, seed=0,
                         penetration_loss=30.0, noise_floor=0.0)
        one = generate_scene(spec, tx, buildings=[b1]).map.values
        two = generate_scene(spec, tx, buildings=[b1, b2]).map.values
        free = ~building_mask(spec, [b1, b2])
        assert np.all(two[free] <= one[free] + 1e-12)

    def test_building_interiors_are_black(self):
        spec = SceneSpec(height=32, width=32, n_buildings=3, seed=5)
        buildings = scene_buildings(spec)
        free = free_space_mask(spec, buildings)
        ys, xs = np.nonzero(free)
        rec = generate_scene(spec, TxCoordinate(float(xs[0]), float(ys[0])),
                             buildings=buildings)
        assert np.all(rec.map.values[building_mask(spec, buildings)] == 0.0)

    def test_rejects_tx_inside_building(self):
        spec = SceneSpec(height=32, width=32, n_buildings=1, seed=3)
        b = scene_buildings(spec)[0]
        with pytest.raises(TxInsideBuilding):
            generate_scene(spec, TxCoordinate(b.x0, b.y0), buildings=[b])


class TestSegmentCrossings:
    def test_against_dense_sampling_oracle(self):
        rng = np.random.default_rng(9)
        building = Building(x0=10, y0=12, x1=15, y1=20)
        tx = TxCoordinate(3.0, 3.0)
        grid = segment_crossings(tx, [building], 32, 32)
        for _ in range(60):
            px = int(rng.integers(0, 32))
            py = int(rng.integers(0, 32))
            if building.contains(px, py):
                continue
            assert grid[py, px] == sampled_crossings(tx, (px, py), building), (px, py)

    def test_tx_pixel_never_crosses(self):
        building = Building(x0=10, y0=10, x1=12, y1=12)
        grid = segment_crossings(TxCoordinate(5, 5), [building], 32, 32)
        assert grid[5, 5] == 0


class TestGenerateDataset:
    def test_tx_recovery_and_count(self, tmp_path):
        spec = SceneSpec(seed=11)
        root = generate_dataset(spec, 20, tmp_path / "data")
        records = load_dataset(root)
        assert len(records) == 20
        for rec in records:
            assert extract_tx(rec.map) == rec.tx

    def test_same_seed_byte_identical(self, tmp_path):
        spec = SceneSpec(seed=21)
        r1 = generate_dataset(spec, 8, tmp_path / "a")
        r2 = generate_dataset(spec, 8, tmp_path / "b")
        for p1 in sorted((r1 / "maps").iterdir()):
            p2 = r2 / "maps" / p1.name
            assert p1.read_bytes() == p2.read_bytes()
        assert (r1 / "metadata.jsonl").read_text() == (r2 / "metadata.jsonl").read_text()

    def test_scene_json_written(self, tmp_path):
        spec = SceneSpec(seed=2)
        root = generate_dataset(spec, 3, tmp_path / "data")
        assert SceneSpec.from_dict(
            __import__("json").loads((root / "scene.json").read_text())) == spec

    def test_sampler_that_never_lands_free_raises(self, tmp_path):
        spec = SceneSpec(seed=4)
        b = scene_buildings(spec)[0]

        def stubborn(rng, free):
            return TxCoordinate(float(b.x0), float(b.y0))

        with pytest.raises(TxInsideBuilding):
            generate_dataset(spec, 2, tmp_path / "data", tx_sampler=stubborn)
