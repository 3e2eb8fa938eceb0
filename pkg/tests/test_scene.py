import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsvlc.scene import (
    ConfigError,
    LedConfig,
    MirrorArrayConfig,
    ReceiverConfig,
    RoomConfig,
    build_scene,
    lambertian_order,
    mirror_centers,
    scene_from_dict,
    with_mirrors,
)


class TestLambertianOrder:
    def test_sixty_degrees_is_one(self):
        assert lambertian_order(math.radians(60)) == pytest.approx(1.0, rel=1e-15)

    def test_thirty_degrees(self):
        # -ln 2 / ln(sqrt(3)/2) = 4.818841679...
        assert lambertian_order(math.radians(30)) == pytest.approx(4.818841679306, rel=1e-12)

    def test_near_right_angle_is_finite(self):
        n = lambertian_order(math.radians(89.9))
        assert math.isfinite(n) and 0 < n < 0.2

    def test_narrow_beam_is_large_and_finite(self):
        n = lambertian_order(math.radians(0.1))
        assert math.isfinite(n) and n > 1e5

    @pytest.mark.parametrize("bad", [0.0, -0.1, math.pi / 2, 2.0])
    def test_domain_error(self, bad):
        with pytest.raises(ValueError):
            lambertian_order(bad)

    @given(st.floats(0.01, 1.5), st.floats(0.01, 1.5))
    def test_strictly_decreasing(self, a, b):
        # wider beams are less directive
        if a == b:
            return
        lo, hi = sorted((a, b))
        assert lambertian_order(lo) > lambertian_order(hi)

    def test_led_config_exposes_order(self):
        assert LedConfig(math.radians(60)).lambertian_order == pytest.approx(1.0)


class TestBuildScene:
    def test_ap_at_ceiling_center(self):
        s = build_scene()
        assert tuple(s.ap) == (2.5, 2.5, 3.0)

    def test_default_order_is_one(self):
        assert build_scene().lambertian_order == pytest.approx(1.0)

    def test_zero_rows_rejected(self):
        with pytest.raises(ConfigError) as exc:
            MirrorArrayConfig(rows=0)
        assert exc.value.field == "rows"

    @pytest.mark.parametrize("field,kwargs", [
        ("width_x", {"width_x": 0}),
        ("height_z", {"height_z": -1}),
        ("receiver_height", {"receiver_height": 3.0}),
        ("ap_position", {"ap_position": (9.0, 1.0, 3.0)}),
    ])
    def test_room_errors_name_field(self, field, kwargs):
        with pytest.raises(ConfigError) as exc:
            RoomConfig(**kwargs)
        assert exc.value.field == field

    @pytest.mark.parametrize("field,kwargs", [
        ("detector_area", {"detector_area": 0}),
        ("fov_semiangle", {"fov_semiangle": 2.0}),
        ("responsivity", {"responsivity": 0}),
        ("bandwidth", {"bandwidth": -5}),
    ])
    def test_receiver_errors(self, field, kwargs):
        with pytest.raises(ConfigError) as exc:
            ReceiverConfig(**kwargs)
        assert exc.value.field == field

    def test_reflectivity_range(self):
        with pytest.raises(ConfigError):
            MirrorArrayConfig(reflectivity=1.2)

    def test_overflow_beyond_wall(self):
        # 10 columns of 0.6 m mirrors cannot fit a 5 m wall
        with pytest.raises(ConfigError) as exc:
            build_scene(mirrors=MirrorArrayConfig(rows=1, cols=10, mirror_width=0.6))
        assert exc.value.field == "cols"

    def test_vertical_overflow(self):
        with pytest.raises(ConfigError) as exc:
            build_scene(mirrors=MirrorArrayConfig(rows=20, cols=1))
        assert exc.value.field == "rows"

    def test_ten_by_ten_fits(self):
        s = build_scene(mirrors=MirrorArrayConfig(rows=10, cols=10))
        assert s.centers.shape == (100, 3)

    def test_angles_start_at_zero(self):
        st_ = build_scene().initial_mirror_state()
        assert np.all(st_.yaw == 0) and np.all(st_.roll == 0)

    def test_deterministic(self):
        a, b = build_scene(), build_scene()
        assert a.centers.tobytes() == b.centers.tobytes()
        assert a == b

    def test_centers_read_only(self):
        with pytest.raises(ValueError):
            build_scene().centers[0, 0] = 1.0


class TestMirrorLayout:
    def test_row_major_top_row_first(self):
        arr = MirrorArrayConfig(rows=2, cols=3)
        c = mirror_centers(RoomConfig(), arr)
        assert np.all(c[:3, 2] > c[3:, 2])
        assert np.allclose(c[:3, 2], c[0, 2])

    def test_on_wall_plane_and_centered(self):
        room = RoomConfig()
        c = mirror_centers(room, MirrorArrayConfig())
        assert np.allclose(c[:, 1], room.depth_y - 0.05)
        assert c[:, 0].mean() == pytest.approx(room.width_x / 2)
        assert c[:, 2].mean() == pytest.approx(room.height_z / 2)

    @pytest.mark.parametrize("wall", ["y_max", "y_min", "x_min", "x_max"])
    def test_uniform_pitch(self, wall):
        arr = MirrorArrayConfig(rows=3, cols=4, wall=wall)
        c = mirror_centers(RoomConfig(), arr).reshape(3, 4, 3)
        horiz = np.linalg.norm(np.diff(c[:, :, :2], axis=1), axis=-1)
        vert = np.abs(np.diff(c[:, :, 2], axis=0))
        assert np.allclose(horiz, arr.mirror_width + arr.gap)
        assert np.allclose(vert, arr.mirror_height + arr.gap)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 8), st.floats(0.0, 0.1))
    def test_pairwise_separation(self, rows, cols, gap):
        arr = MirrorArrayConfig(rows=rows, cols=cols, gap=gap)
        c = mirror_centers(RoomConfig(), arr)
        if len(c) < 2:
            return
        d = np.linalg.norm(c[:, None] - c[None], axis=-1)
        d[np.eye(len(c), dtype=bool)] = np.inf
        assert d.min() >= min(arr.mirror_height, arr.mirror_width) + gap - 1e-12

    def test_element_area(self):
        assert MirrorArrayConfig().element_area == pytest.approx(0.025)


class TestSceneFromDict:
    def test_degrees_converted(self):
        s = scene_from_dict({"led": {"half_power_semiangle": 30}, "receiver": {"fov_semiangle": 60}})
        assert s.led.half_power_semiangle == pytest.approx(math.radians(30))
        assert s.receiver.fov_semiangle == pytest.approx(math.radians(60))

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as exc:
            scene_from_dict({"room": {"widht_x": 4}})
        assert exc.value.field == "room.widht_x"

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            scene_from_dict({"lights": {}})

    def test_with_mirrors(self):
        s = with_mirrors(build_scene(), rows=2, cols=2)
        assert s.mirrors.count == 4 and len(s.centers) == 4


class TestMirrorState:
    def test_rejects_out_of_range(self):
        m = build_scene().initial_mirror_state()
        with pytest.raises(ValueError):
            m.set_angles(np.full(m.count, 2.0), np.zeros(m.count))

    def test_copy_is_independent(self):
        m = build_scene().initial_mirror_state()
        c = m.copy()
        c.yaw[0] = 0.3
        assert m.yaw[0] == 0.0
