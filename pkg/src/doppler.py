"""
Multi-static Doppler scenario: constant-velocity motion, bistatic Doppler
measurements at M receivers sharing one transmitter, range-dependent true
detection probability and Poisson clutter.

The true detection probability and its scale `beta_true` belong to the
simulator. The filter only ever receives DetectionPossibility intervals.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from .bernoulli import ClutterModel, DetectionPossibility, Sensor
from .errors import ModelViolationError, PossibilityError
from .possibility import GaussianPossibility

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 2.99792458e8
# Rejection attempts before a detection outside [-f0, f0] is dropped.
MAX_REJECTIONS = 1000

ScanSet = Tuple[Tuple[float, ...], ...]


@dataclass(frozen=True)
class TargetState:
    """[x, vx, y, vy] in meters and meters/second."""
    x: float
    vx: float
    y: float
    vy: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.vx, self.y, self.vy)):
            raise PossibilityError("target state components must be finite")

    @classmethod
    def from_array(cls, a) -> "TargetState":
        a = np.asarray(a, dtype=float).reshape(4)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.vx, self.y, self.vy])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])


@dataclass(frozen=True)
class Geometry:
    transmitter: Tuple[float, float]
    receivers: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if len(self.receivers) < 1:
            raise PossibilityError("at least one receiver is required")

    @property
    def m(self) -> int:
        return len(self.receivers)


@dataclass(frozen=True)
class RadarParams:
    fc: float
    f0: float
    T: float
    q: float
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        for name in ("fc", "f0", "T", "q", "c"):
            if not getattr(self, name) > 0:
                raise PossibilityError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def space(self) -> Tuple[float, float]:
        return -self.f0, self.f0


@dataclass(frozen=True)
class SensorParams:
    sigma: float
    lam: float
    det: DetectionPossibility
    beta_true: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise PossibilityError(f"sigma must be positive, got {self.sigma}")
        if not self.lam >= 0:
            raise PossibilityError(f"lambda must be non-negative, got {self.lam}")
        if not self.beta_true > 0:
            raise PossibilityError(f"beta_true must be positive, got {self.beta_true}")


def cv_matrices(T: float, q: float) -> Tuple[np.ndarray, np.ndarray]:
    """F = I2 (x) [[1, T], [0, 1]],  Q = I2 (x) q [[T^3/3, T^2/2], [T^2/2, T]]."""
    if not (T > 0 and q > 0):
        raise PossibilityError(f"T and q must be positive, got T={T}, q={q}")
    F = np.kron(np.eye(2), np.array([[1.0, T], [0.0, 1.0]]))
    Q = np.kron(np.eye(2), q * np.array([[T ** 3 / 3.0, T ** 2 / 2.0], [T ** 2 / 2.0, T]]))
    return F, Q


def _unit_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=-1)
    if np.any(norms == 0):
        raise ModelViolationError("target coincides with the transmitter or a receiver")
    return v / norms[..., None]


def doppler_shift(states: np.ndarray, receiver, transmitter, fc: float, c: float) -> np.ndarray:
    """Bistatic Doppler for a batch of [x, vx, y, vy] rows."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    p = states[:, [0, 2]]
    v = states[:, [1, 3]]
    los = _unit_rows(p - np.asarray(receiver, dtype=float)) + _unit_rows(p - np.asarray(transmitter, dtype=float))
    return -np.sum(v * los, axis=1) * fc / c


def doppler_h(x, i: int, geometry: Geometry, fc: float, c: float = SPEED_OF_LIGHT) -> float:
    """-pdot^T [(p - r_i)/|p - r_i| + (p - t)/|p - t|] fc / c."""
    state = x.as_array() if isinstance(x, TargetState) else np.asarray(x, dtype=float)
    return float(doppler_shift(state, geometry.receivers[i], geometry.transmitter, fc, c)[0])


class DopplerSensor:
    """g_i(z | x) = N(z; h_i(x), sigma_i^2) on Z = [-f0, f0]."""

    def __init__(self, receiver, transmitter, sigma: float, radar: RadarParams):
        self.receiver = np.asarray(receiver, dtype=float)
        self.transmitter = np.asarray(transmitter, dtype=float)
        self.noise = GaussianPossibility([0.0], [[sigma ** 2]])
        self.radar = radar

    def contains(self, z: float) -> bool:
        return -self.radar.f0 <= z <= self.radar.f0

    def predict(self, states: np.ndarray) -> np.ndarray:
        return doppler_shift(states, self.receiver, self.transmitter, self.radar.fc, self.radar.c)

    def likelihood(self, z: float, states: np.ndarray) -> np.ndarray:
        return self.noise((z - self.predict(states))[:, None])


def doppler_likelihood(z: float, x, i: int, geometry: Geometry, radar: RadarParams,
                       sensors: Sequence[SensorParams]) -> float:
    if not -radar.f0 <= z <= radar.f0:
        raise ModelViolationError(f"measurement {z} Hz lies outside [-{radar.f0}, {radar.f0}]")
    state = x.as_array() if isinstance(x, TargetState) else np.asarray(x, dtype=float)
    g = DopplerSensor(geometry.receivers[i], geometry.transmitter, sensors[i].sigma, radar)
    return float(g.likelihood(z, state[None, :])[0])


def filter_sensors(geometry: Geometry, radar: RadarParams, sensors: Sequence[SensorParams]) -> List[Sensor]:
    """Filter-side sensor models: detection interval, Doppler likelihood, clutter. No beta_true."""
    low, high = radar.space
    return [
        Sensor(
            detection=params.det,
            measurement=DopplerSensor(receiver, geometry.transmitter, params.sigma, radar),
            clutter=ClutterModel.from_rate(params.lam, low, high),
        )
        for receiver, params in zip(geometry.receivers, sensors)
    ]


def true_detection_prob(d: float, beta: float) -> float:
    """exp(-(d / beta)^4)."""
    if d < 0 or not beta > 0:
        raise PossibilityError(f"need d >= 0 and beta > 0, got d={d}, beta={beta}")
    return math.exp(-((d / beta) ** 4))


def half_detection_range(beta: float) -> float:
    """Range where exp(-(d / beta)^4) = 1/2."""
    return beta * math.log(2.0) ** 0.25


def simulate_truth(x1: TargetState, steps: int, F, Q, rng: np.random.Generator,
                   noisy: bool = True) -> List[TargetState]:
    """Trajectory x_1..x_steps of x_k = F x_{k-1} + v, v ~ N(0, Q) (or 0)."""
    if steps < 1:
        raise PossibilityError(f"steps must be at least 1, got {steps}")
    F = np.asarray(F, dtype=float)
    chol = linalg.cholesky(np.asarray(Q, dtype=float), lower=True) if noisy else None
    x = x1.as_array()
    out = [x1]
    for _ in range(steps - 1):
        x = F @ x
        if noisy:
            x = x + chol @ rng.standard_normal(x.shape[0])
        out.append(TargetState.from_array(x))
    return out


def generate_scan(x_true: TargetState, sensors: Sequence[SensorParams], geometry: Geometry,
                  radar: RadarParams, rng: np.random.Generator,
                  clutter_rng: np.random.Generator = None) -> ScanSet:
    """
    One scan per receiver: the target detection with probability
    exp(-(range / beta_true)^4), Doppler noise redrawn until it lands in
    [-f0, f0], plus Poisson(lambda) uniform false detections.
    """
    clutter_rng = clutter_rng if clutter_rng is not None else rng
    state = x_true.as_array()
    scans = []
    for i, params in enumerate(sensors):
        z: List[float] = []
        receiver = geometry.receivers[i]
        distance = float(np.linalg.norm(x_true.position - np.asarray(receiver, dtype=float)))
        if rng.random() < true_detection_prob(distance, params.beta_true):
            h = float(doppler_shift(state, receiver, geometry.transmitter, radar.fc, radar.c)[0])
            for _ in range(MAX_REJECTIONS):
                candidate = h + params.sigma * rng.standard_normal()
                if -radar.f0 <= candidate <= radar.f0:
                    z.append(candidate)
                    break
            else:
                logger.warning("sensor %d: Doppler %.2f Hz stays outside Z, detection dropped", i, h)
        n_clutter = int(clutter_rng.poisson(params.lam)) if params.lam > 0 else 0
        z.extend(float(v) for v in clutter_rng.uniform(-radar.f0, radar.f0, n_clutter))
        scans.append(tuple(z))
    return tuple(scans)
