#!/usr/bin/env python3
"""
Synthetic air-to-ground scene and channel simulator
ULA channels, the beam codebook, the optimal-beam oracle, UAV flights,
camera rendering, noisy GPS/IMU vectors and the on-disk dataset format
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from beamcast.errors import ConfigurationError, DatasetError, DimensionError, FrustumError, GeometryError
from beamcast.path_utils import atomic_path, atomic_write_text
from beamcast.utils.runtime import get_worker_count

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
SAMPLES_NAME = "samples.bin"
STRUCT_DIM = 8
STRUCT_FIELDS = ("x", "y", "z", "vx", "vy", "vz", "pitch", "yaw")

# Independent RNG streams derived from the run seed
_FLIGHT_STREAM = 1
_SAMPLE_STREAM = 2


def _check_positive(value: float, name: str) -> None:
    if not value > 0:
        raise ConfigurationError(f"must be > 0, got {value}", name)


def _check_range(bounds: tuple[float, float], name: str) -> None:
    if len(bounds) != 2 or not bounds[0] < bounds[1]:
        raise ConfigurationError(f"must be an increasing (low, high) pair, got {bounds}", name)


# =========================================================================== configs
@dataclass(frozen=True)
class RadioConfig:
    """Link parameters: M antennas, K subcarriers, Q beams, transmit power P, noise variance"""

    num_antennas: int = 16
    num_subcarriers: int = 32
    num_beams: int = 64
    tx_power: float = 1.0
    noise_var: float = 1e-3
    nlos_power_ratio: float = 0.0

    def __post_init__(self):
        for name in ("num_antennas", "num_subcarriers", "num_beams", "tx_power", "noise_var"):
            _check_positive(getattr(self, name), f"radio.{name}")
        if not 0.0 <= self.nlos_power_ratio < 1.0:
            raise ConfigurationError(
                f"must be in [0, 1), got {self.nlos_power_ratio}", "radio.nlos_power_ratio"
            )

    @property
    def snr_scale(self) -> float:
        return self.tx_power / self.noise_var


@dataclass(frozen=True)
class SceneConfig:
    """
    Flight volume, BS placement and sensor noise.

    Coordinates are local Cartesian meters: BS array broadside along +y,
    x to the right, z up.
    """

    x_range: tuple[float, float] = (-50.0, 50.0)
    y_range: tuple[float, float] = (40.0, 140.0)
    z_range: tuple[float, float] = (20.0, 80.0)
    bs_position: tuple[float, float, float] = (0.0, 0.0, 10.0)
    samples_per_flight: int = 50
    segments_per_flight: int = 4
    speed_range: tuple[float, float] = (5.0, 15.0)
    sample_period_s: float = 0.5
    position_noise_m: float = 1.0
    velocity_noise_mps: float = 0.1
    attitude_noise_deg: float = 0.5

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range", "speed_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
            _check_range(getattr(self, name), f"scene.{name}")
        object.__setattr__(self, "bs_position", tuple(float(v) for v in self.bs_position))
        if len(self.bs_position) != 3:
            raise ConfigurationError("must have 3 coordinates", "scene.bs_position")
        if self.z_range[0] <= 0:
            raise ConfigurationError("UAV altitude range must be above ground (> 0)", "scene.z_range")
        for name in ("samples_per_flight", "segments_per_flight", "sample_period_s"):
            _check_positive(getattr(self, name), f"scene.{name}")
        for name in ("position_noise_m", "velocity_noise_mps", "attitude_noise_deg"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"must be >= 0, got {getattr(self, name)}", f"scene.{name}")


@dataclass(frozen=True)
class CameraConfig:
    """Pinhole camera at the BS plus rendering parameters"""

    image_size: int = 64
    hfov_deg: float = 120.0
    pitch_deg: float = 30.0
    blob_radius_m: float = 15.0
    blob_color: tuple[float, float, float] = (0.15, 0.15, 0.2)
    background_noise: float = 0.02
    illumination_jitter: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "blob_color", tuple(float(c) for c in self.blob_color))
        _check_positive(self.image_size, "camera.image_size")
        _check_positive(self.blob_radius_m, "camera.blob_radius_m")
        if not 0 < self.hfov_deg < 180:
            raise ConfigurationError(f"must be in (0, 180), got {self.hfov_deg}", "camera.hfov_deg")
        if len(self.blob_color) != 3 or not all(0.0 <= c <= 1.0 for c in self.blob_color):
            raise ConfigurationError("must be 3 values in [0, 1]", "camera.blob_color")
        if self.background_noise < 0:
            raise ConfigurationError("must be >= 0", "camera.background_noise")
        if not 0.0 <= self.illumination_jitter < 1.0:
            raise ConfigurationError("must be in [0, 1)", "camera.illumination_jitter")


# =========================================================================== radio
def steering_vector(num_antennas: int, theta: float) -> np.ndarray:
    """Half-wavelength ULA response: element m = exp(i*pi*m*sin(theta))"""
    if num_antennas < 1:
        raise ConfigurationError(f"must be >= 1, got {num_antennas}", "num_antennas")
    m = np.arange(num_antennas)
    return np.exp(1j * np.pi * m * np.sin(theta))


@dataclass
class BeamCodebook:
    """Q unit-norm beams [Q, M] on a grid uniform in sin(theta) over [-1, 1)"""

    num_beams: int
    num_antennas: int
    beams: np.ndarray
    steering_angles: np.ndarray

    @property
    def grid_sines(self) -> np.ndarray:
        return np.sin(self.steering_angles)

    def nearest_beam(self, theta: float) -> int:
        """Grid index whose steering angle is nearest theta in sin-space (lowest on ties)"""
        return int(np.argmin(np.abs(self.grid_sines - np.sin(theta))))


def dft_codebook(num_antennas: int, num_beams: int) -> BeamCodebook:
    """Oversampled DFT codebook: beam q = steering(theta_q)/sqrt(M), sin(theta_q) = -1 + 2q/Q"""
    _check_positive(num_antennas, "num_antennas")
    _check_positive(num_beams, "num_beams")
    if num_beams < num_antennas:
        logger.warning("Codebook with Q=%d < M=%d is undersampled", num_beams, num_antennas)
    sines = -1.0 + 2.0 * np.arange(num_beams) / num_beams
    angles = np.arcsin(sines)
    beams = np.stack([steering_vector(num_antennas, a) for a in angles]) / np.sqrt(num_antennas)
    return BeamCodebook(num_beams, num_antennas, beams, angles)


@dataclass
class ChannelState:
    """
    Per-subcarrier channel vectors h_k [K, M].

    The line-of-sight path is stored as path_gain * conj(steering(path_angle)) so
    that the transmit beam steered toward path_angle maximizes |h_k^T f|.
    """

    per_subcarrier: np.ndarray
    path_angle: float
    path_gain: complex

    @property
    def num_subcarriers(self) -> int:
        return self.per_subcarrier.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.per_subcarrier.shape[1]


@dataclass
class UavState:
    """Ground-truth kinematics at one time step (local frame, meters/seconds/radians)"""

    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray  # pitch, yaw
    time_index: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(3)
        self.attitude = np.asarray(self.attitude, dtype=np.float64).reshape(2)
        values = np.concatenate([self.position, self.velocity, self.attitude])
        if not np.all(np.isfinite(values)):
            raise GeometryError("UAV state has non-finite components")
        if self.position[2] <= 0:
            raise GeometryError(f"UAV must be airborne (z > 0), got z={self.position[2]}")

    def struct_vector(self) -> np.ndarray:
        """The 8 structured features: position (3), velocity (3), attitude (2)"""
        return np.concatenate([self.position, self.velocity, self.attitude])


def bearing(uav_position: np.ndarray, bs_position: np.ndarray) -> tuple[float, float]:
    """(azimuth from array broadside, distance) of the UAV seen from the BS"""
    delta = np.asarray(uav_position, dtype=np.float64) - np.asarray(bs_position, dtype=np.float64)
    distance = float(np.linalg.norm(delta))
    if distance < 1e-9:
        raise GeometryError("UAV coincides with the BS position")
    return math.atan2(delta[0], delta[1]), distance


def make_channel(
    uav: UavState,
    bs_position: Any,
    cfg: RadioConfig,
    rng: np.random.Generator,
) -> ChannelState:
    """
    Frequency-flat far-field channel for the BS->UAV link.

    The LoS gain has amplitude 1/distance and a uniform random phase. With
    cfg.nlos_power_ratio > 0 a second path at a random angle is added with
    that fraction of the LoS power.

    Raises:
        GeometryError: if the UAV sits on the BS
    """
    theta, distance = bearing(uav.position, bs_position)
    gain = complex((1.0 / distance) * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi)))
    h = gain * np.conj(steering_vector(cfg.num_antennas, theta))

    if cfg.nlos_power_ratio > 0:
        nlos_theta = float(np.arcsin(rng.uniform(-1.0, 1.0)))
        nlos_gain = math.sqrt(cfg.nlos_power_ratio) * abs(gain) * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
        h = h + nlos_gain * np.conj(steering_vector(cfg.num_antennas, nlos_theta))

    per_subcarrier = np.tile(h, (cfg.num_subcarriers, 1))
    return ChannelState(per_subcarrier=per_subcarrier, path_angle=theta, path_gain=gain)


def beam_gains(ch: ChannelState, cb: BeamCodebook, cfg: RadioConfig) -> np.ndarray:
    """(1/K) * sum_k |h_k^T f_q|^2 * P/sigma^2 for every beam q"""
    if cb.num_antennas != ch.num_antennas:
        raise DimensionError(
            f"codebook has M={cb.num_antennas} antennas, channel has M={ch.num_antennas}"
        )
    responses = ch.per_subcarrier @ cb.beams.T  # [K, Q]
    return np.mean(np.abs(responses) ** 2, axis=0) * cfg.snr_scale


def optimal_beam(ch: ChannelState, cb: BeamCodebook, cfg: RadioConfig) -> int:
    """
    Beam maximizing mean subcarrier gain; ties go to the lowest index.

    The positive factor P/sigma^2 cannot change the argmax, so the index is
    taken on the unscaled mean gain.
    """
    if cb.num_antennas != ch.num_antennas:
        raise DimensionError(
            f"codebook has M={cb.num_antennas} antennas, channel has M={ch.num_antennas}"
        )
    responses = ch.per_subcarrier @ cb.beams.T
    return int(np.argmax(np.mean(np.abs(responses) ** 2, axis=0)))


def received_signal(
    ch: ChannelState,
    beam: np.ndarray,
    symbol: complex,
    cfg: RadioConfig,
    rng: np.random.Generator,
    noise_var: Optional[float] = None,
) -> np.ndarray:
    """
    y_k = h_k^T f x + v_k with v_k ~ CN(0, sigma^2), one value per subcarrier.

    Args:
        noise_var: override for cfg.noise_var (0 gives the noiseless signal)
    """
    beam = np.asarray(beam, dtype=np.complex128)
    if beam.shape != (ch.num_antennas,):
        raise DimensionError(f"beam has shape {list(beam.shape)}, channel has M={ch.num_antennas}")
    sigma2 = cfg.noise_var if noise_var is None else noise_var
    clean = (ch.per_subcarrier @ beam) * symbol
    if sigma2 <= 0:
        return clean
    scale = math.sqrt(sigma2 / 2.0)
    noise = scale * (rng.standard_normal(ch.num_subcarriers) + 1j * rng.standard_normal(ch.num_subcarriers))
    return clean + noise


# =========================================================================== camera
@dataclass
class Camera:
    """Pinhole camera posed at the BS, looking along +y and pitched up"""

    position: np.ndarray
    height: int
    width: int
    focal_px: float
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    config: CameraConfig = field(default_factory=CameraConfig)

    @classmethod
    def from_config(cls, cfg: CameraConfig, position: Any) -> "Camera":
        pitch = math.radians(cfg.pitch_deg)
        size = cfg.image_size
        return cls(
            position=np.asarray(position, dtype=np.float64),
            height=size,
            width=size,
            focal_px=(size / 2.0) / math.tan(math.radians(cfg.hfov_deg) / 2.0),
            right=np.array([1.0, 0.0, 0.0]),
            up=np.array([0.0, -math.sin(pitch), math.cos(pitch)]),
            forward=np.array([0.0, math.cos(pitch), math.sin(pitch)]),
            config=cfg,
        )

    @property
    def center(self) -> tuple[float, float]:
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    def project(self, point: Any) -> tuple[float, float, float]:
        """
        World point -> (u, v, depth) in pixels; u grows right, v grows down.

        Raises:
            FrustumError: if the point is not in front of the camera
        """
        d = np.asarray(point, dtype=np.float64) - self.position
        z_c = float(d @ self.forward)
        if z_c <= 1e-9:
            raise FrustumError(f"Point {np.round(point, 2).tolist()} is behind the camera")
        cx, cy = self.center
        u = cx + self.focal_px * float(d @ self.right) / z_c
        v = cy - self.focal_px * float(d @ self.up) / z_c
        return u, v, float(np.linalg.norm(d))


def sky_background(height: int, width: int) -> np.ndarray:
    """Noise-free vertical sky gradient [3, H, W]: deeper blue at the top"""
    top = np.array([0.45, 0.65, 0.95])
    bottom = np.array([0.85, 0.90, 0.95])
    t = np.linspace(0.0, 1.0, height)[:, None]
    column = (1.0 - t) * top[None, :] + t * bottom[None, :]  # [H, 3]
    return np.broadcast_to(column.T[:, :, None], (3, height, width)).copy()


def blob_alpha(camera: Camera, u: float, v: float, distance: float) -> np.ndarray:
    """Gaussian opacity map [H, W] centered at (u, v), width proportional to 1/distance"""
    sigma = camera.config.blob_radius_m * camera.focal_px / distance
    rows = np.arange(camera.height)[:, None]
    cols = np.arange(camera.width)[None, :]
    return np.exp(-((cols - u) ** 2 + (rows - v) ** 2) / (2.0 * sigma**2))


def render_image(uav: UavState, camera: Camera, rng: np.random.Generator) -> np.ndarray:
    """
    Render the UAV as a Gaussian blob over a noisy sky gradient.

    Returns:
        float32 array [3, H, W] with values in [0, 1]

    Raises:
        FrustumError: if the UAV is behind the camera
    """
    cfg = camera.config
    u, v, distance = camera.project(uav.position)
    alpha = blob_alpha(camera, u, v, distance)[None, :, :]
    color = np.asarray(cfg.blob_color)[:, None, None]
    img = sky_background(camera.height, camera.width) * (1.0 - alpha) + color * alpha

    if cfg.illumination_jitter > 0:
        img = img * rng.uniform(1.0 - cfg.illumination_jitter, 1.0 + cfg.illumination_jitter)
    if cfg.background_noise > 0:
        img = img + rng.normal(0.0, cfg.background_noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# =========================================================================== flights
@dataclass
class Flight:
    """Piecewise-straight flight path traversed at constant speed"""

    waypoints: np.ndarray  # [S+1, 3]
    speed: float

    @classmethod
    def generate(cls, scene: SceneConfig, rng: np.random.Generator) -> "Flight":
        low = np.array([scene.x_range[0], scene.y_range[0], scene.z_range[0]])
        high = np.array([scene.x_range[1], scene.y_range[1], scene.z_range[1]])
        waypoints = rng.uniform(low, high, size=(scene.segments_per_flight + 1, 3))
        speed = float(rng.uniform(*scene.speed_range))
        return cls(waypoints, speed)

    def state_at(self, time_s: float, time_index: int = 0) -> UavState:
        """Kinematics at a time; the path restarts from the first waypoint once completed"""
        segments = np.diff(self.waypoints, axis=0)
        lengths = np.linalg.norm(segments, axis=1)
        total = float(lengths.sum())
        s = (self.speed * time_s) % total if total > 0 else 0.0
        ends = np.cumsum(lengths)
        seg = min(int(np.searchsorted(ends, s, side="right")), len(lengths) - 1)
        start = ends[seg] - lengths[seg]
        direction = segments[seg] / lengths[seg] if lengths[seg] > 0 else np.array([0.0, 1.0, 0.0])
        position = self.waypoints[seg] + direction * (s - start)
        velocity = direction * self.speed
        pitch = math.atan2(velocity[2], math.hypot(velocity[0], velocity[1]))
        yaw = math.atan2(velocity[1], velocity[0])
        return UavState(position, velocity, np.array([pitch, yaw]), time_index)


def flight_for(flight_index: int, scene: SceneConfig, seed: int) -> Flight:
    return Flight.generate(scene, np.random.default_rng([seed, _FLIGHT_STREAM, flight_index]))


def uav_state_at(index: int, scene: SceneConfig, seed: int) -> UavState:
    """Noise-free UAV state behind sample `index`"""
    flight = flight_for(index // scene.samples_per_flight, scene, seed)
    t = index % scene.samples_per_flight
    return flight.state_at(t * scene.sample_period_s, t)


def sensor_reading(uav: UavState, scene: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """GPS/IMU vector with additive Gaussian noise (exact when all sigmas are 0)"""
    sigmas = np.array(
        [scene.position_noise_m] * 3
        + [scene.velocity_noise_mps] * 3
        + [math.radians(scene.attitude_noise_deg)] * 2
    )
    noise = rng.standard_normal(STRUCT_DIM) * sigmas
    return uav.struct_vector() + noise


# =========================================================================== dataset
@dataclass
class Sample:
    """One time instant: image [3, H, W] in [0, 1], 8 structured values, beam label"""

    image: np.ndarray
    struct_vec: np.ndarray
    label: int

    def __post_init__(self):
        if np.shape(self.struct_vec) != (STRUCT_DIM,):
            raise DimensionError(f"struct_vec must have {STRUCT_DIM} values, got {np.shape(self.struct_vec)}")


def sample_dtype(height: int, width: int) -> np.dtype:
    """On-disk record: f32 image planes, 8 f32 struct values, u16 label (little-endian, packed)"""
    return np.dtype(
        [("image", "<f4", (3, height, width)), ("struct", "<f4", (STRUCT_DIM,)), ("label", "<u2")]
    )


@dataclass
class Dataset:
    """Column-major view of a generated dataset plus its manifest"""

    images: np.ndarray  # [n, 3, H, W] float32
    structs: np.ndarray  # [n, 8] float32
    labels: np.ndarray  # [n] int64
    manifest: dict[str, Any]

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __getitem__(self, index: int) -> Sample:
        return Sample(self.images[index], self.structs[index], int(self.labels[index]))

    @property
    def num_beams(self) -> int:
        return int(self.manifest["Q"])

    @property
    def image_size(self) -> int:
        return int(self.manifest["H_img"])

    def to_records(self) -> np.ndarray:
        records = np.zeros(len(self), dtype=sample_dtype(self.images.shape[2], self.images.shape[3]))
        records["image"] = self.images
        records["struct"] = self.structs
        records["label"] = self.labels
        return records


@dataclass
class _Generator:
    """Everything needed to produce sample i independently of every other sample"""

    scene: SceneConfig
    radio: RadioConfig
    camera: Camera
    codebook: BeamCodebook
    seed: int

    def __call__(self, index: int) -> Sample:
        uav = uav_state_at(index, self.scene, self.seed)
        rng = np.random.default_rng([self.seed, _SAMPLE_STREAM, index])
        channel = make_channel(uav, self.scene.bs_position, self.radio, rng)
        label = optimal_beam(channel, self.codebook, self.radio)
        struct_vec = sensor_reading(uav, self.scene, rng)
        image = render_image(uav, self.camera, rng)
        return Sample(image, struct_vec.astype(np.float32), label)


def generate_dataset(
    n: int,
    scene: Optional[SceneConfig] = None,
    radio: Optional[RadioConfig] = None,
    camera: Optional[CameraConfig] = None,
    seed: int = 0,
    workers: Optional[int] = None,
) -> Dataset:
    """
    Generate n labeled samples.

    Every sample draws from its own RNG stream derived from (seed, index), so
    the output is byte-identical for any worker count.

    Raises:
        ConfigurationError: if n < 1 or a config is invalid
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"must be >= 1, got {n}", "samples")
    scene = scene or SceneConfig()
    radio = radio or RadioConfig()
    camera_cfg = camera or CameraConfig()
    if radio.num_beams > np.iinfo(np.uint16).max + 1:
        raise ConfigurationError("labels must fit in 16 bits", "radio.num_beams")

    make_sample = _Generator(
        scene=scene,
        radio=radio,
        camera=Camera.from_config(camera_cfg, scene.bs_position),
        codebook=dft_codebook(radio.num_antennas, radio.num_beams),
        seed=seed,
    )
    workers = workers or get_worker_count()
    logger.info("Generating %d samples (seed=%d, workers=%d)", n, seed, workers)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(make_sample, range(n)))
    else:
        samples = [make_sample(i) for i in range(n)]

    size = camera_cfg.image_size
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "n": n,
        "H_img": size,
        "W_img": size,
        "Q": radio.num_beams,
        "M": radio.num_antennas,
        "K": radio.num_subcarriers,
        "seed": seed,
        "struct_fields": list(STRUCT_FIELDS),
        "scene": asdict(scene),
        "radio": asdict(radio),
        "camera": asdict(camera_cfg),
    }
    return Dataset(
        images=np.stack([s.image for s in samples]).astype(np.float32),
        structs=np.stack([s.struct_vec for s in samples]).astype(np.float32),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        manifest=manifest,
    )


def label_histogram(labels: np.ndarray, num_beams: int) -> np.ndarray:
    """Count of samples per beam index"""
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_beams)


def write_dataset(directory: Union[str, Path], dataset: Dataset) -> Path:
    """Write manifest.json and samples.bin atomically into directory"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with atomic_path(directory / SAMPLES_NAME) as tmp:
        dataset.to_records().tofile(tmp)
    atomic_write_text(directory / MANIFEST_NAME, json.dumps(dataset.manifest, indent=2, sort_keys=True) + "\n")
    logger.info("Wrote %d samples to %s", len(dataset), directory)
    return directory


def load_dataset(directory: Union[str, Path]) -> Dataset:
    """
    Read a dataset directory.

    Raises:
        DatasetError: missing files, unknown format version, or a samples.bin
            whose size disagrees with the manifest
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    samples_path = directory / SAMPLES_NAME
    if not manifest_path.is_file() or not samples_path.is_file():
        raise DatasetError(f"Not a dataset directory (need {MANIFEST_NAME} and {SAMPLES_NAME}): {directory}")

    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        version = manifest["format_version"]
        n, height, width = int(manifest["n"]), int(manifest["H_img"]), int(manifest["W_img"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"Unreadable manifest {manifest_path}: {e}")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetError(f"Unsupported dataset format version {version} (expected {DATASET_FORMAT_VERSION})")

    dtype = sample_dtype(height, width)
    expected = n * dtype.itemsize
    actual = samples_path.stat().st_size
    if actual != expected:
        raise DatasetError(f"{samples_path} has {actual} bytes, manifest implies {expected}")

    records = np.fromfile(samples_path, dtype=dtype, count=n)
    labels = records["label"].astype(np.int64)
    if labels.size and labels.max() >= int(manifest["Q"]):
        raise DatasetError(f"Label {labels.max()} exceeds Q={manifest['Q']}")
    return Dataset(
        images=np.ascontiguousarray(records["image"], dtype=np.float32),
        structs=np.ascontiguousarray(records["struct"], dtype=np.float32),
        labels=labels,
        manifest=manifest,
    )


def save_previews(dataset: Dataset, directory: Union[str, Path], count: int) -> list[Path]:
    """Write the first `count` images as PNG files (sample_00000.png, ...)"""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(min(count, len(dataset))):
        pixels = np.round(dataset.images[i].transpose(1, 2, 0) * 255.0).astype(np.uint8)
        path = directory / f"sample_{i:05d}.png"
        with atomic_path(path) as tmp:
            Image.fromarray(pixels).save(tmp, format="PNG")
        written.append(path)
    return written
