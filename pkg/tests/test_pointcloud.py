import math
import struct

import numpy as np
import pytest

from pillarkit.pointcloud import (CropRange, DensityProfile, GroundTruthBox, PointCloud, crop,
                                  load_lidar_bin, save_lidar_bin, synth_scene, wrap_angle)


def test_empty_file_gives_empty_cloud(tmp_path):
    f = tmp_path / "e.bin"
    f.write_bytes(b"")
    assert len(load_lidar_bin(f)) == 0


def test_single_point_decode(tmp_path):
    f = tmp_path / "p.bin"
    f.write_bytes(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    cloud = load_lidar_bin(f)
    np.testing.assert_array_equal(cloud.points, [[1.0, 2.0, 3.0, 0.5]])


def test_round_trip_32_points(tmp_path):
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-50, 50, (32, 3)), rng.uniform(0, 1, 32)]).astype(np.float32)
    f = tmp_path / "r.bin"
    f.write_bytes(pts.tobytes())
    cloud = load_lidar_bin(f)
    np.testing.assert_array_equal(cloud.points, pts.astype(np.float64))
    save_lidar_bin(cloud, tmp_path / "s.bin")
    assert (tmp_path / "s.bin").read_bytes() == f.read_bytes()


def test_truncated_file_rejected(tmp_path):
    f = tmp_path / "t.bin"
    f.write_bytes(bytes(20))
    with pytest.raises(ValueError):
        load_lidar_bin(f)


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        load_lidar_bin(tmp_path / "nope.bin")


def test_reflectance_clamped_on_ingest(tmp_path):
    f = tmp_path / "c.bin"
    f.write_bytes(struct.pack("<8f", 0, 0, 0, 1.7, 0, 0, 0, -0.2))
    np.testing.assert_array_equal(load_lidar_bin(f).reflectance, [1.0, 0.0])


def test_non_finite_coordinates_rejected():
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.nan, 0, 0, 0.5]]))


def test_crop_range_validation():
    with pytest.raises(ValueError):
        CropRange((1.0, 1.0), (0, 1), (0, 1))


def test_crop_identity_when_inside():
    pts = np.array([[0.0, 1.0, 0.0, 0.1], [3.0, 2.0, 1.0, 0.2]])
    np.testing.assert_array_equal(crop(PointCloud(pts), CropRange()).points, pts)


def test_crop_half_open_upper_bound():
    rng_ = CropRange()
    pts = np.array([[39.68, 1.0, 0.0, 0.0], [-39.68, 1.0, 0.0, 0.0], [0.0, 69.12, 0.0, 0.0]])
    out = crop(PointCloud(pts), rng_).points
    np.testing.assert_array_equal(out, pts[1:2])


def test_crop_matches_predicate_oracle_and_is_idempotent():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(-50, 50, 500), rng.uniform(-10, 80, 500),
                           rng.uniform(-3, 5, 500), rng.uniform(0, 1, 500)])
    cr = CropRange()
    out = crop(PointCloud(pts), cr).points
    keep = [p for p in pts if -39.68 <= p[0] < 39.68 and 0 <= p[1] < 69.12 and -1 <= p[2] < 3]
    np.testing.assert_array_equal(out, np.array(keep))
    np.testing.assert_array_equal(crop(PointCloud(out), cr).points, out)


def test_box_yaw_wrapped_and_csv_round_trip():
    b = GroundTruthBox((1.0, 2.0, -0.5), (1.6, 3.9, 1.56), 3 * math.pi / 2)
    assert b.yaw == pytest.approx(-math.pi / 2)
    assert wrap_angle(-math.pi) == math.pi
    back = GroundTruthBox.from_csv(b.to_csv())
    np.testing.assert_array_equal(back.as_array(), b.as_array())
    with pytest.raises(ValueError):
        GroundTruthBox((0, 0, 0), (0.0, 1, 1), 0.0)


def test_synth_scene_without_boxes():
    cloud, boxes = synth_scene(3, 0)
    assert boxes == []
    assert len(cloud) == DensityProfile().clutter_points


def test_near_box_gets_more_points_than_far_box():
    prof = DensityProfile(crop=CropRange((-50, 50), (0, 50), (-1, 3)), clutter_points=0)
    near = GroundTruthBox((0.0, 5.0, -0.2), (1.6, 3.9, 1.56), 0.0)
    far = GroundTruthBox((0.0, 40.0, -0.2), (1.6, 3.9, 1.56), 0.0)
    n_near = len(synth_scene(0, 1, prof, boxes=[near])[0])
    n_far = len(synth_scene(0, 1, prof, boxes=[far])[0])
    assert n_near > n_far


def test_synth_scene_deterministic_and_inside_crop():
    a, ba = synth_scene(11, 2)
    b, bb = synth_scene(11, 2)
    np.testing.assert_array_equal(a.points, b.points)
    assert [x.as_array().tolist() for x in ba] == [x.as_array().tolist() for x in bb]
    cr = DensityProfile().crop
    assert np.all((a.points[:, 0] >= cr.x[0]) & (a.points[:, 0] < cr.x[1]))
    assert np.all((a.points[:, 1] >= cr.y[0]) & (a.points[:, 1] < cr.y[1]))
