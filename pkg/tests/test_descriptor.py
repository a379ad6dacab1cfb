import struct

import numpy as np
import pytest

from tactile_servo.descriptor import (BadMagicError, DescriptorError,
                                      DescriptorMap, DescriptorParams,
                                      DimensionOverflowError,
                                      TruncatedFileError,
                                      VersionMismatchError, cosine_similarity,
                                      extract, load_descriptor_file,
                                      save_descriptor_file)
from tactile_servo.sensor_core import SensorCalibration, TactileImage

CAL = SensorCalibration()


def image_from_array(arr):
    cal = SensorCalibration(working_width_px=arr.shape[1],
                            working_height_px=arr.shape[0])
    return TactileImage(pixels=arr.astype(np.uint8), calibration=cal)


def textured_image(w=96, h=96, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.uniform(40, 200, size=(h // 8, w // 8, 3))
    up = np.repeat(np.repeat(base, 8, axis=0), 8, axis=1)
    return image_from_array(np.clip(up, 0, 255))


class TestParams:
    def test_default_dim(self):
        assert DescriptorParams().dim == 86

    def test_dim_formula(self):
        p = DescriptorParams(patch_radius=1, orientation_bins=4, scales=(1,))
        assert p.dim == 9 + 4 + 3

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            DescriptorParams(stride=0)
        with pytest.raises(ValueError):
            DescriptorParams(scales=())
        with pytest.raises(ValueError):
            DescriptorParams(orientation_bins=2)


class TestExtract:
    def test_shape_and_origin(self, gear_goal_map):
        m = gear_goal_map
        assert m.dim == 86
        assert m.origin == (2.0, 2.0)
        assert m.stride == 4
        assert (m.source_w, m.source_h) == (CAL.working_width_px,
                                            CAL.working_height_px)
        u, v = m.cell_center_px(0, 1)
        assert (u, v) == (6.0, 2.0)

    def test_deterministic(self, gear_goal_image):
        a = extract(gear_goal_image)
        b = extract(gear_goal_image)
        assert np.array_equal(a.data, b.data)

    def test_nonvoid_cells_unit_norm(self, gear_goal_map):
        norms = np.linalg.norm(gear_goal_map.data, axis=2)
        void = gear_goal_map.void_mask()
        assert np.all(np.abs(norms[~void] - 1.0) < 1e-5)
        assert np.all(norms[void] == 0.0)

    def test_uniform_image_is_all_void(self):
        img = image_from_array(np.full((64, 64, 3), 120.0))
        m = extract(img)
        assert np.all(m.void_mask())

    def test_textured_image_mostly_nonvoid(self):
        m = extract(textured_image())
        assert np.mean(m.void_mask()) < 0.5

    def test_too_small_image_rejected(self):
        img = image_from_array(np.zeros((8, 8, 3)))
        with pytest.raises(DescriptorError):
            extract(img)

    def test_stride_shift_equivariance(self):
        # shifting content by one stride moves descriptors by one grid cell
        img = textured_image(w=128, h=128, seed=3)
        stride = DescriptorParams().stride
        rolled = image_from_array(np.roll(np.asarray(img.pixels), stride, axis=1))
        a = extract(img)
        b = extract(rolled)
        margin = 4  # skip cells whose footprint touches the wrap seam
        for row in range(margin, a.grid_h - margin):
            for col in range(margin, a.grid_w - margin - 1):
                s = cosine_similarity(a.data[row, col], b.data[row, col + 1])
                assert s >= 0.99

    def test_brightness_invariance(self, gear_goal_image):
        px = np.asarray(gear_goal_image.pixels, dtype=np.float64)
        brighter = image_from_array(np.clip(px * 1.2, 0, 255))
        a = extract(gear_goal_image)
        b = extract(brighter)
        keep = ~(a.void_mask() | b.void_mask())
        sims = np.einsum("ijk,ijk->ij", a.data.astype(np.float64),
                         b.data.astype(np.float64))[keep]
        assert np.all(sims > 0.95)


class TestSimilarity:
    def test_identical_unit_vectors(self):
        v = np.zeros(86)
        v[0] = 1.0
        assert cosine_similarity(v, v) == 1.0

    def test_void_ranks_below_everything(self):
        v = np.zeros(86)
        u = np.zeros(86)
        u[0] = 1.0
        assert cosine_similarity(v, u) == float("-inf")
        assert cosine_similarity(u, v) == float("-inf")

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity(np.ones(4), np.ones(5))

    def test_clipped_to_unit_interval(self):
        v = np.full(4, 0.5000001)
        assert cosine_similarity(v, v) == 1.0


class TestDescriptorFile:
    def test_roundtrip_bit_exact(self, gear_goal_map, tmp_path):
        p = tmp_path / "map.tdsc"
        save_descriptor_file(gear_goal_map, p)
        back = load_descriptor_file(p)
        assert np.array_equal(back.data, gear_goal_map.data)
        assert back.stride == gear_goal_map.stride
        assert back.origin == gear_goal_map.origin
        assert (back.source_w, back.source_h) == (gear_goal_map.source_w,
                                                  gear_goal_map.source_h)

    def make_file(self, tmp_path, name="f.tdsc"):
        data = np.zeros((2, 3, 4), dtype=np.float32)
        data[:, :, 0] = 1.0
        dmap = DescriptorMap(data=data, stride=4, origin=(2.0, 2.0),
                             source_w=12, source_h=8)
        p = tmp_path / name
        save_descriptor_file(dmap, p)
        return p

    def test_bad_magic(self, tmp_path):
        p = self.make_file(tmp_path)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"XDSC"
        p.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            load_descriptor_file(p)

    def test_version_mismatch(self, tmp_path):
        p = self.make_file(tmp_path)
        raw = bytearray(p.read_bytes())
        struct.pack_into("<H", raw, 4, 99)
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            load_descriptor_file(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "short.tdsc"
        p.write_bytes(b"TDSC\x01")
        with pytest.raises(TruncatedFileError):
            load_descriptor_file(p)

    def test_truncated_payload(self, tmp_path):
        p = self.make_file(tmp_path)
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(TruncatedFileError):
            load_descriptor_file(p)

    def test_zero_cell_header_rejected(self, tmp_path):
        p = self.make_file(tmp_path)
        raw = bytearray(p.read_bytes())
        struct.pack_into("<I", raw, 6, 0)  # grid_h = 0
        p.write_bytes(bytes(raw))
        with pytest.raises(DimensionOverflowError):
            load_descriptor_file(p)

    def test_drifted_norms_renormalized(self, tmp_path):
        data = np.zeros((1, 2, 4), dtype=np.float32)
        data[0, 0, 0] = 1.5  # non-unit cell
        dmap = DescriptorMap(data=data, stride=4, origin=(2.0, 2.0),
                             source_w=8, source_h=4)
        p = tmp_path / "drift.tdsc"
        save_descriptor_file(dmap, p)
        back = load_descriptor_file(p)
        assert np.linalg.norm(back.data[0, 0]) == pytest.approx(1.0)
        assert np.all(back.data[0, 1] == 0.0)  # void stays void
