"""Channel model, beam oracle, camera rendering and the dataset format"""

import math

import numpy as np
import pytest
from PIL import Image

from beamcast.airsim import (
    MANIFEST_NAME,
    SAMPLES_NAME,
    Camera,
    CameraConfig,
    ChannelState,
    RadioConfig,
    SceneConfig,
    UavState,
    beam_gains,
    bearing,
    blob_alpha,
    dft_codebook,
    flight_for,
    generate_dataset,
    label_histogram,
    load_dataset,
    make_channel,
    optimal_beam,
    received_signal,
    render_image,
    save_previews,
    sensor_reading,
    sky_background,
    steering_vector,
    uav_state_at,
    write_dataset,
)
from beamcast.errors import ConfigurationError, DatasetError, FrustumError, GeometryError


def brute_force_beam(per_subcarrier, beams, snr_scale):
    """Direct evaluation of mean_k |h_k^T f_q|^2 * P / sigma^2 with explicit loops"""
    best, best_gain = 0, -1.0
    for q, f in enumerate(beams):
        total = 0.0
        for h in per_subcarrier:
            total += abs(sum(h[m] * f[m] for m in range(len(f)))) ** 2
        gain = total / len(per_subcarrier) * snr_scale
        if gain > best_gain:
            best, best_gain = q, gain
    return best


class TestSteeringAndCodebook:
    def test_broadside_is_all_ones(self):
        np.testing.assert_allclose(steering_vector(6, 0.0), np.ones(6))

    def test_thirty_degrees(self):
        np.testing.assert_allclose(steering_vector(4, math.radians(30)), [1, 1j, -1, -1j], atol=1e-12)

    def test_beams_are_unit_norm(self):
        cb = dft_codebook(16, 64)
        assert cb.beams.shape == (64, 16)
        np.testing.assert_allclose(np.linalg.norm(cb.beams, axis=1), 1.0)

    def test_zero_angle_beam(self):
        cb = dft_codebook(8, 16)
        q = int(np.argmin(np.abs(cb.grid_sines)))
        assert cb.grid_sines[q] == 0.0
        np.testing.assert_allclose(cb.beams[q], np.full(8, 1 / math.sqrt(8)))

    def test_grid_is_uniform_in_sine(self):
        cb = dft_codebook(4, 8)
        np.testing.assert_allclose(cb.grid_sines, -1.0 + 2.0 * np.arange(8) / 8, atol=1e-12)

    def test_negative_angle_is_conjugate(self):
        theta = math.radians(17)
        np.testing.assert_allclose(steering_vector(8, -theta), np.conj(steering_vector(8, theta)))

    def test_own_steering_vector_maximizes_inner_product(self):
        cb = dft_codebook(8, 64)
        for q, angle in enumerate(cb.steering_angles):
            inner = np.abs(cb.beams.conj() @ steering_vector(8, angle))
            assert int(np.argmax(inner)) == q
            assert inner[q] == pytest.approx(math.sqrt(8))


class TestChannel:
    def test_broadside_channel_is_proportional_to_ones(self, rng):
        uav = UavState([0.0, 60.0, 10.0], [0, 0, 0], [0, 0])
        ch = make_channel(uav, (0.0, 0.0, 10.0), RadioConfig(num_antennas=4, num_subcarriers=3), rng)
        assert ch.per_subcarrier.shape == (3, 4)
        np.testing.assert_allclose(ch.per_subcarrier / ch.per_subcarrier[0, 0], np.ones((3, 4)))
        assert abs(ch.path_gain) == pytest.approx(1 / 60.0)

    def test_zero_distance_is_geometry_error(self, rng):
        uav = UavState([0.0, 0.0, 10.0], [0, 0, 0], [0, 0])
        with pytest.raises(GeometryError):
            make_channel(uav, (0.0, 0.0, 10.0), RadioConfig(), rng)

    def test_grounded_uav_rejected(self):
        with pytest.raises(GeometryError):
            UavState([0.0, 10.0, 0.0], [0, 0, 0], [0, 0])

    def test_norm_is_subcarriers_times_antennas_times_gain(self, rng):
        cfg = RadioConfig(num_antennas=8, num_subcarriers=6)
        uav = UavState([-20.0, 75.0, 40.0], [0, 0, 0], [0, 0])
        ch = make_channel(uav, (0.0, 0.0, 10.0), cfg, rng)
        assert np.sum(np.abs(ch.per_subcarrier) ** 2) == pytest.approx(6 * 8 * abs(ch.path_gain) ** 2)

    def test_doubling_distance_halves_gain(self, rng):
        bs = np.array([0.0, 0.0, 10.0])
        delta = np.array([10.0, 60.0, 20.0])
        near = make_channel(UavState(bs + delta, [0, 0, 0], [0, 0]), bs, RadioConfig(), rng)
        far = make_channel(UavState(bs + 2 * delta, [0, 0, 0], [0, 0]), bs, RadioConfig(), rng)
        assert far.path_angle == pytest.approx(near.path_angle)
        assert abs(far.path_gain) == pytest.approx(abs(near.path_gain) / 2)

    def test_nlos_path_changes_channel(self):
        uav = UavState([10.0, 60.0, 30.0], [0, 0, 0], [0, 0])
        los = make_channel(uav, (0, 0, 10), RadioConfig(), np.random.default_rng(4))
        mixed = make_channel(uav, (0, 0, 10), RadioConfig(nlos_power_ratio=0.2), np.random.default_rng(4))
        assert not np.allclose(los.per_subcarrier, mixed.per_subcarrier)


class TestOptimalBeam:
    def test_single_antenna_ties_to_zero(self):
        cfg = RadioConfig(num_antennas=1, num_beams=8)
        ch = ChannelState(np.full((4, 1), 0.3 + 0.1j), 0.0, 1.0)
        assert optimal_beam(ch, dft_codebook(1, 8), cfg) == 0

    @pytest.mark.parametrize("q", [0, 5, 17, 63])
    def test_matched_beam(self, q):
        cb = dft_codebook(16, 64)
        ch = ChannelState(np.tile(np.conj(cb.beams[q]) * (2 - 1j), (4, 1)), 0.0, 1.0)
        assert optimal_beam(ch, cb, RadioConfig()) == q

    def test_agrees_with_brute_force(self, rng):
        cfg = RadioConfig(num_antennas=8, num_subcarriers=4, num_beams=16)
        cb = dft_codebook(8, 16)
        for _ in range(1000):
            h = rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))
            ch = ChannelState(h, 0.0, 1.0)
            assert optimal_beam(ch, cb, cfg) == brute_force_beam(h, cb.beams, cfg.snr_scale)

    def test_los_channel_picks_nearest_grid_angle(self, rng):
        cfg = RadioConfig(num_antennas=16, num_subcarriers=2, num_beams=64)
        cb = dft_codebook(16, 64)
        checked = 0
        for _ in range(10_000):
            s = rng.uniform(-0.9, 0.9)
            distances = np.sort(np.abs(cb.grid_sines - s))
            if distances[1] - distances[0] < 1e-6:
                continue  # grid midpoint
            theta = math.asin(s)
            h = np.exp(1j * rng.uniform(0, 2 * np.pi)) * np.conj(steering_vector(16, theta))
            ch = ChannelState(np.tile(h, (2, 1)), theta, 1.0)
            assert optimal_beam(ch, cb, cfg) == cb.nearest_beam(theta)
            checked += 1
        assert checked >= 9990

    def test_invariant_to_power_and_noise_scaling(self, rng):
        cb = dft_codebook(8, 32)
        for _ in range(1000):
            h = rng.standard_normal((3, 8)) + 1j * rng.standard_normal((3, 8))
            ch = ChannelState(h, 0.0, 1.0)
            base = optimal_beam(ch, cb, RadioConfig(num_antennas=8, num_beams=32))
            scaled = RadioConfig(
                num_antennas=8,
                num_beams=32,
                tx_power=10 ** rng.uniform(-3, 3),
                noise_var=10 ** rng.uniform(-3, 3),
            )
            assert optimal_beam(ch, cb, scaled) == base

    def test_gains_scale_with_snr(self, rng):
        cb = dft_codebook(4, 8)
        ch = ChannelState(rng.standard_normal((2, 4)) + 0j, 0.0, 1.0)
        low = beam_gains(ch, cb, RadioConfig(num_antennas=4, num_beams=8, tx_power=1.0))
        high = beam_gains(ch, cb, RadioConfig(num_antennas=4, num_beams=8, tx_power=10.0))
        np.testing.assert_allclose(high, 10.0 * low)


class TestReceivedSignal:
    def test_noiseless_matched(self, rng):
        cb = dft_codebook(8, 16)
        h = np.tile(np.conj(cb.beams[3]) * 0.5, (4, 1))
        ch = ChannelState(h, 0.0, 0.5)
        y = received_signal(ch, cb.beams[3], 1.0, RadioConfig(num_antennas=8, num_beams=16), rng, noise_var=0.0)
        np.testing.assert_allclose(y, h @ cb.beams[3])

    def test_linear_in_symbol_for_shared_noise(self, rng):
        cfg = RadioConfig(num_antennas=4, num_subcarriers=5, noise_var=0.1)
        ch = ChannelState(rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4)), 0.0, 1.0)
        beam = dft_codebook(4, 8).beams[2]
        x = 0.7 - 0.3j

        def draw(symbol):
            return received_signal(ch, beam, symbol, cfg, np.random.default_rng(11))

        noise = draw(0.0)
        np.testing.assert_allclose(draw(2 * x) - noise, 2 * (draw(x) - noise), atol=1e-12)

    def test_zero_symbol_is_noise_with_configured_variance(self, rng):
        cfg = RadioConfig(num_antennas=4, num_subcarriers=4, noise_var=0.02)
        ch = ChannelState(np.ones((4, 4), dtype=complex), 0.0, 1.0)
        draws = np.concatenate([received_signal(ch, np.ones(4), 0.0, cfg, rng) for _ in range(2500)])
        assert np.mean(np.abs(draws) ** 2) == pytest.approx(0.02, rel=0.1)


class TestCamera:
    def setup_method(self):
        self.cfg = CameraConfig(image_size=64, background_noise=0.0, illumination_jitter=0.0)
        self.camera = Camera.from_config(self.cfg, (0.0, 0.0, 10.0))

    def test_optical_axis_projects_to_center(self):
        point = self.camera.position + 40.0 * self.camera.forward
        u, v, depth = self.camera.project(point)
        assert (u, v) == pytest.approx(self.camera.center)
        assert depth == pytest.approx(40.0)
        alpha = blob_alpha(self.camera, u, v, depth)
        row, col = np.unravel_index(np.argmax(alpha), alpha.shape)
        assert row in (31, 32) and col in (31, 32)

    def test_behind_camera(self):
        with pytest.raises(FrustumError):
            self.camera.project(self.camera.position - 5.0 * self.camera.forward)

    def test_render_range_and_blob(self, rng):
        uav = UavState(self.camera.position + 50.0 * self.camera.forward, [0, 0, 0], [0, 0])
        img = render_image(uav, self.camera, rng)
        assert img.shape == (3, 64, 64) and img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0
        # the blob darkens the sky where it sits
        sky = sky_background(64, 64)
        assert (sky - img)[:, 31:33, 31:33].mean() > 0.3
        assert np.abs(sky - img)[:, :4, :4].max() < 0.05

    def _render_alpha(self, position, rng):
        """Blob opacity recovered from a noise-free render through the red channel"""
        img = render_image(UavState(position, [0, 0, 0], [0, 0]), self.camera, rng)
        sky = sky_background(self.camera.height, self.camera.width)[0]
        return (sky - img[0]) / (sky - self.cfg.blob_color[0])

    @staticmethod
    def _moments(alpha):
        rows, cols = np.indices(alpha.shape)
        total = alpha.sum()
        u, v = (alpha * cols).sum() / total, (alpha * rows).sum() / total
        spread = math.sqrt((alpha * (cols - u) ** 2).sum() / total)
        return u, v, spread

    @pytest.mark.parametrize("right, up", [(20.0, -10.0), (-30.0, 15.0), (8.0, 12.0)])
    def test_centroid_matches_projection(self, rng, right, up):
        cam = self.camera
        point = cam.position + 100.0 * cam.forward + right * cam.right + up * cam.up
        u, v, _ = cam.project(point)
        cu, cv, _ = self._moments(self._render_alpha(point, rng))
        assert abs(cu - u) < 1.0 and abs(cv - v) < 1.0

    def test_azimuth_shifts_blob_horizontally(self, rng):
        elevation = math.radians(20)

        def at(azimuth_deg):
            az = math.radians(azimuth_deg)
            offset = np.array([math.sin(az) * math.cos(elevation), math.cos(az) * math.cos(elevation), math.sin(elevation)])
            return self.camera.position + 100.0 * offset

        (ul, vl, _), (ur, vr, _) = self.camera.project(at(-20)), self.camera.project(at(20))
        cx, _ = self.camera.center
        assert ul < cx < ur
        assert vl == pytest.approx(vr)
        left_u, _, _ = self._moments(self._render_alpha(at(-20), rng))
        right_u, _, _ = self._moments(self._render_alpha(at(20), rng))
        assert right_u - left_u == pytest.approx(ur - ul, abs=1.0)

    def test_blob_width_inversely_proportional_to_distance(self, rng):
        cam = self.camera
        _, _, near = self._moments(self._render_alpha(cam.position + 50.0 * cam.forward, rng))
        _, _, far = self._moments(self._render_alpha(cam.position + 100.0 * cam.forward, rng))
        assert near / far == pytest.approx(2.0, rel=0.05)


class TestFlightsAndSensors:
    def test_flights_stay_in_volume(self):
        scene = SceneConfig()
        for index in range(0, 300, 7):
            pos = uav_state_at(index, scene, seed=9).position
            assert scene.x_range[0] <= pos[0] <= scene.x_range[1]
            assert scene.y_range[0] <= pos[1] <= scene.y_range[1]
            assert scene.z_range[0] <= pos[2] <= scene.z_range[1]

    def test_attitude_follows_velocity(self):
        state = flight_for(0, SceneConfig(), seed=1).state_at(3.0)
        vx, vy, vz = state.velocity
        pitch, yaw = state.attitude
        assert yaw == pytest.approx(math.atan2(vy, vx))
        assert pitch == pytest.approx(math.atan2(vz, math.hypot(vx, vy)))

    def test_noise_free_sensor_is_exact(self, rng):
        scene = SceneConfig(position_noise_m=0.0, velocity_noise_mps=0.0, attitude_noise_deg=0.0)
        uav = uav_state_at(5, scene, seed=0)
        np.testing.assert_array_equal(sensor_reading(uav, scene, rng), uav.struct_vector())


class TestDataset:
    def test_same_seed_is_identical(self, small_radio):
        cam = CameraConfig(image_size=16)
        a = generate_dataset(12, radio=small_radio, camera=cam, seed=7, workers=1)
        b = generate_dataset(12, radio=small_radio, camera=cam, seed=7, workers=1)
        assert a.to_records().tobytes() == b.to_records().tobytes()

    def test_worker_count_does_not_matter(self, small_radio):
        cam = CameraConfig(image_size=16)
        serial = generate_dataset(10, radio=small_radio, camera=cam, seed=2, workers=1)
        threaded = generate_dataset(10, radio=small_radio, camera=cam, seed=2, workers=3)
        assert serial.to_records().tobytes() == threaded.to_records().tobytes()

    def test_zero_samples_rejected(self):
        with pytest.raises(ConfigurationError, match="samples"):
            generate_dataset(0)

    def test_labels_and_histogram(self, small_dataset):
        hist = label_histogram(small_dataset.labels, small_dataset.num_beams)
        assert hist.sum() == len(small_dataset)
        assert small_dataset.labels.min() >= 0 and small_dataset.labels.max() < small_dataset.num_beams

    def test_wide_flight_volume_covers_most_beams(self):
        dataset = generate_dataset(5000, radio=RadioConfig(), camera=CameraConfig(image_size=16), seed=0, workers=1)
        assert np.count_nonzero(label_histogram(dataset.labels, 64)) > 32

    def test_image_and_struct_agree_on_position(self):
        scene = SceneConfig(position_noise_m=0.0, velocity_noise_mps=0.0, attitude_noise_deg=0.0)
        cam_cfg = CameraConfig(image_size=64, background_noise=0.0, illumination_jitter=0.0)
        radio = RadioConfig(num_antennas=8, num_beams=16)
        dataset = generate_dataset(40, scene, radio, cam_cfg, seed=4, workers=1)
        camera = Camera.from_config(cam_cfg, scene.bs_position)
        codebook = dft_codebook(8, 16)
        sky = sky_background(64, 64)[0]
        inside = 0
        for image, struct_vec, label in zip(dataset.images, dataset.structs, dataset.labels):
            position = struct_vec[:3].astype(np.float64)
            azimuth, _ = bearing(position, scene.bs_position)
            assert label == codebook.nearest_beam(azimuth)
            u, v, _ = camera.project(position)
            if not (0 <= u <= 63 and 0 <= v <= 63):
                continue
            alpha = (sky - image[0]) / (sky - cam_cfg.blob_color[0])
            row, col = np.unravel_index(np.argmax(alpha), alpha.shape)
            assert abs(col - u) <= 1.0 and abs(row - v) <= 1.0
            inside += 1
        assert inside > 0

    def test_write_then_load(self, tmp_path, small_dataset):
        write_dataset(tmp_path, small_dataset)
        loaded = load_dataset(tmp_path)
        np.testing.assert_array_equal(loaded.images, small_dataset.images)
        np.testing.assert_array_equal(loaded.structs, small_dataset.structs)
        np.testing.assert_array_equal(loaded.labels, small_dataset.labels)
        assert loaded.manifest["Q"] == small_dataset.num_beams
        assert loaded.image_size == 16

    def test_load_rejects_truncated_samples(self, dataset_dir):
        samples = dataset_dir / SAMPLES_NAME
        samples.write_bytes(samples.read_bytes()[:-10])
        with pytest.raises(DatasetError):
            load_dataset(dataset_dir)

    def test_load_rejects_unknown_version(self, dataset_dir):
        manifest = dataset_dir / MANIFEST_NAME
        manifest.write_text(manifest.read_text().replace('"format_version": 1', '"format_version": 99'))
        with pytest.raises(DatasetError, match="version"):
            load_dataset(dataset_dir)

    def test_load_missing_directory(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nope")

    def test_previews(self, tmp_path, small_dataset):
        written = save_previews(small_dataset, tmp_path / "preview", 3)
        assert len(written) == 3
        with Image.open(written[0]) as img:
            assert img.size == (16, 16)
            assert img.mode == "RGB"


def test_radio_config_validation_names_field():
    with pytest.raises(ConfigurationError, match="radio.noise_var"):
        RadioConfig(noise_var=0.0)
