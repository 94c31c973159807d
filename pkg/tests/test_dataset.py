import json
import math

import numpy as np
import pytest

from dsloc.dataset import (
    CityConfig,
    ImageRecord,
    SchemaError,
    generate_synthetic_city,
    load_dataset,
    read_jsonl,
    record_to_json,
    save_dataset,
    write_jsonl,
)
from dsloc.geo import EARTH_RADIUS_M, LocalProjection, haversine_m

SMALL = CityConfig(grid=3, n_queries=4, descriptors_per_image=5, descriptor_dim=8)


def assert_same_records(a, b):
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.image_id == rb.image_id
        assert ra.gps == rb.gps
        assert ra.local_descriptors.tobytes() == rb.local_descriptors.tobytes()
        assert ra.global_features.keys() == rb.global_features.keys()
        for k in ra.global_features:
            assert ra.global_features[k].tobytes() == rb.global_features[k].tobytes()


@pytest.mark.parametrize("fmt", ["jsonl", "npz"])
def test_round_trip_is_bit_identical(tmp_path, fmt):
    refs, queries = generate_synthetic_city(SMALL)
    save_dataset(tmp_path, refs, queries, fmt)
    r2, q2 = load_dataset(tmp_path)
    assert_same_records(refs, r2)
    assert_same_records(queries, q2)


def test_empty_reference_set(tmp_path):
    (tmp_path / "references.jsonl").write_text("")
    with pytest.raises(SchemaError, match="empty reference set"):
        load_dataset(tmp_path)


def test_latitude_out_of_range(tmp_path):
    rec = ImageRecord("a", (10.0, 10.0), np.zeros((1, 2)))
    obj = record_to_json(rec)
    obj["gps"] = [91.0, 10.0]
    (tmp_path / "references.jsonl").write_text(json.dumps(obj) + "\n")
    with pytest.raises(SchemaError, match="'gps'") as info:
        load_dataset(tmp_path)
    assert "references.jsonl:1" in str(info.value)


def test_missing_field_is_named(tmp_path):
    obj = record_to_json(ImageRecord("a", (1.0, 1.0), np.zeros((1, 2))))
    del obj["descriptor_dim"]
    path = tmp_path / "x.jsonl"
    path.write_text(json.dumps(obj) + "\n")
    with pytest.raises(SchemaError, match="descriptor_dim"):
        read_jsonl(path)


def test_duplicate_ids_and_mixed_dimensions(tmp_path):
    a = ImageRecord("a", (1.0, 1.0), np.zeros((1, 2)))
    write_jsonl(tmp_path / "references.jsonl", [a, a])
    with pytest.raises(SchemaError, match="duplicate"):
        load_dataset(tmp_path)
    b = ImageRecord("b", (1.0, 1.0), np.zeros((1, 3)))
    write_jsonl(tmp_path / "references.jsonl", [a, b])
    with pytest.raises(SchemaError, match="dimensions"):
        load_dataset(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


def test_generator_is_deterministic():
    a = generate_synthetic_city(SMALL)
    b = generate_synthetic_city(SMALL)
    assert_same_records(a[0], b[0])
    assert_same_records(a[1], b[1])


def test_noise_free_queries_contain_true_descriptors():
    cfg = CityConfig(grid=4, n_queries=10, noise=0.0, distractor_rate=0.0, descriptor_dim=16)
    refs, queries = generate_synthetic_city(cfg)
    by_gps = {r.gps: r for r in refs}
    for q in queries:
        true = by_gps[q.gps].local_descriptors
        rows = {row.tobytes() for row in q.local_descriptors}
        assert all(row.tobytes() in rows for row in true)


def test_twin_grid_duplicates_local_content():
    cfg = CityConfig(grid=3, n_queries=2, twin_offset_m=1500.0, descriptor_dim=8)
    refs, _ = generate_synthetic_city(cfg)
    assert len(refs) == 18
    for a, b in zip(refs[:9], refs[9:]):
        assert np.array_equal(a.local_descriptors, b.local_descriptors)
        assert haversine_m(a.gps, b.gps) == pytest.approx(1500.0, rel=1e-3)


def test_grid_spacing():
    refs, _ = generate_synthetic_city(CityConfig(grid=2, n_queries=0, descriptor_dim=4))
    assert haversine_m(refs[0].gps, refs[1].gps) == pytest.approx(12.0, rel=1e-4)


def test_haversine_examples():
    assert haversine_m((10.0, 20.0), (10.0, 20.0)) == 0.0
    assert haversine_m((0.0, 0.0), (0.0, 1.0)) == pytest.approx(2 * math.pi * EARTH_RADIUS_M / 360)
    assert round(haversine_m((0.0, 0.0), (0.0, 1.0))) == 111195
    assert haversine_m((0.0, 0.0), (0.0, 180.0)) == pytest.approx(math.pi * EARTH_RADIUS_M)
    assert round(haversine_m((0.0, 0.0), (0.0, 180.0))) == 20015087


def test_projection_round_trip(rng):
    proj = LocalProjection(45.0, 12.0)
    xy = rng.uniform(-2000, 2000, size=(20, 2))
    assert np.allclose(proj.to_xy(proj.to_gps(xy)), xy, atol=1e-6)
