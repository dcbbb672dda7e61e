"""
Possibilistic Bernoulli filter.

The posterior is the triplet (q0, q1, pi): the possibility that the target is
absent, that it is present, and the spatial possibility of its state given
presence. Prediction uses a 2x2 transitional possibility matrix on presence
and a birth possibility; the update combines any number of sensors whose
scans mix at most one target detection with Poisson-possibility clutter.

Clutter terms only ever enter as the ratio kappa(Z \\ {z}) / kappa(Z), which is
computed in closed form, so a common scale on kappa cancels and long scans do
not underflow.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateUpdateError, ModelViolationError, PossibilityError
from .possibility import (
    NORMALIZATION_TOL,
    DiscretePossibility,
    GaussianPossibility,
    UniformPossibility,
    poisson_possibility,
)
from .smc import (
    SUP_MODES,
    LinearGaussianTransition,
    ParticleSet,
    effective_size,
    propagate,
    resample,
    sample_from_possibility,
    select,
    sup_weights,
)

logger = logging.getLogger(__name__)

# Below this a per-particle factor switches the weight product to log space.
LOG_DOMAIN_THRESHOLD = 1e-300

Scan = Tuple[float, ...]


def _check_unit(name: str, value: float):
    if not (0.0 <= value <= 1.0):
        raise PossibilityError(f"{name} must lie in [0, 1], got {value}")


def _check_pair(names: str, a: float, b: float):
    if abs(max(a, b) - 1.0) > NORMALIZATION_TOL:
        raise PossibilityError(f"max({names}) must equal 1, got {max(a, b)!r}")


@dataclass(frozen=True)
class ExistenceTpm:
    """tau_ij: possibility of going from presence state i to presence state j."""
    tau00: float
    tau01: float
    tau10: float
    tau11: float

    def __post_init__(self):
        for name in ("tau00", "tau01", "tau10", "tau11"):
            _check_unit(name, getattr(self, name))
        _check_pair("tau00, tau01", self.tau00, self.tau01)
        _check_pair("tau10, tau11", self.tau10, self.tau11)

    @classmethod
    def symmetric(cls, switch: float) -> "ExistenceTpm":
        return cls(1.0, switch, switch, 1.0)


@dataclass(frozen=True)
class DetectionPossibility:
    """
    (d0, d1): possibility of non-detection and of detection. Encodes the
    detection probability interval [1 - d0, d1]; d0 = d1 = 1 is total ignorance.
    """
    d0: float
    d1: float

    def __post_init__(self):
        _check_unit("d0", self.d0)
        _check_unit("d1", self.d1)
        _check_pair("d0, d1", self.d0, self.d1)

    @property
    def probability_interval(self) -> Tuple[float, float]:
        return 1.0 - self.d0, self.d1

    @classmethod
    def from_interval(cls, low: float, high: float) -> "DetectionPossibility":
        if not (0.0 <= low <= high <= 1.0):
            raise PossibilityError(f"invalid detection probability interval [{low}, {high}]")
        return cls(1.0 - low, high)

    @classmethod
    def total_ignorance(cls) -> "DetectionPossibility":
        return cls(1.0, 1.0)


@dataclass(frozen=True)
class ClutterModel:
    """
    kappa(Z) = scale * nu(|Z|) * prod mu(z). `scale` only exists to show that
    the update does not depend on it.
    """
    cardinality: DiscretePossibility
    spatial: UniformPossibility
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise PossibilityError(f"clutter scale must be positive, got {self.scale}")

    @classmethod
    def from_rate(cls, lam: float, low: float, high: float) -> "ClutterModel":
        cardinality = poisson_possibility(lam) if lam > 0 else DiscretePossibility.no_clutter()
        return cls(cardinality, UniformPossibility(low, high))

    def contains(self, z: float) -> bool:
        return bool(np.all(self.spatial.contains(np.array([z]))))


@dataclass(frozen=True)
class BirthModel:
    birth: GaussianPossibility


class LinearGaussianMeasurement:
    """g(z | x) = N(z; H x, R) for scalar z, restricted to [low, high]."""

    def __init__(self, H, R: float, low: float = -math.inf, high: float = math.inf):
        self.H = np.asarray(H, dtype=float).reshape(-1)
        self.noise = GaussianPossibility([0.0], [[R]])
        self.low = float(low)
        self.high = float(high)

    def contains(self, z: float) -> bool:
        return self.low <= z <= self.high

    def predict(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=float) @ self.H

    def likelihood(self, z: float, states: np.ndarray) -> np.ndarray:
        return self.noise((z - self.predict(states))[:, None])


@dataclass(frozen=True)
class Sensor:
    """What the filter knows about one sensor. `measurement` provides likelihood(z, states)."""
    detection: DetectionPossibility
    measurement: object
    clutter: ClutterModel


@dataclass(frozen=True, eq=False)
class BernoulliState:
    q0: float
    q1: float
    spatial: ParticleSet
    # False when q1 collapsed to zero; the particles are then stale.
    spatial_valid: bool = True

    def __post_init__(self):
        _check_unit("q0", self.q0)
        _check_unit("q1", self.q1)
        _check_pair("q0, q1", self.q0, self.q1)
        if abs(self.spatial.max_weight - 1.0) > NORMALIZATION_TOL:
            raise PossibilityError(f"spatial max weight must be 1, got {self.spatial.max_weight!r}")


@dataclass(frozen=True)
class SmcControls:
    particles: int = 10000
    birth_fraction: float = 0.1
    sup_mode: str = "ancestor"
    resample_threshold: float = 0.5
    resample_scheme: str = "multinomial"
    roughening: float = 0.0
    # Keep the support fixed: no motion, no births, no resampling (grid filters).
    frozen_grid: bool = False

    def __post_init__(self):
        if self.particles < 1:
            raise PossibilityError(f"particles must be at least 1, got {self.particles}")
        if not (0.0 <= self.birth_fraction < 1.0):
            raise PossibilityError(f"birth_fraction must lie in [0, 1), got {self.birth_fraction}")
        if self.sup_mode not in SUP_MODES:
            raise PossibilityError(f"sup_mode must be one of {SUP_MODES}, got {self.sup_mode!r}")


def predict_existence(q0: float, q1: float, tpm: ExistenceTpm) -> Tuple[float, float]:
    return max(tpm.tau00 * q0, tpm.tau10 * q1), max(tpm.tau01 * q0, tpm.tau11 * q1)


def predict_spatial(state: BernoulliState, tpm: ExistenceTpm, birth: BirthModel,
                    transition: LinearGaussianTransition, controls: SmcControls,
                    rng: np.random.Generator) -> ParticleSet:
    """
    Particles for (1/q1') max{tau01 q0 b(x), tau11 q1 sup_x' rho(x|x') pi(x')}.

    A `birth_fraction` share of the budget is drawn from the birth model,
    the rest moves the survivors. Every particle is weighted by both branches.
    The survival branch of a moved survivor is its ancestor weight in
    ancestor mode and the sup over the whole prior set in exact mode; newborn
    particles always take that sup.
    """
    _, q1_pred = predict_existence(state.q0, state.q1, tpm)
    if q1_pred <= 0:
        raise DegenerateUpdateError("predicted presence possibility is zero; spatial prediction undefined")
    c_birth = tpm.tau01 * state.q0
    c_surv = tpm.tau11 * state.q1 if state.spatial_valid else 0.0
    spatial = state.spatial

    if controls.frozen_grid:
        surv = sup_weights(spatial.states, spatial, transition) if c_surv > 0 else 0.0
        weights = np.maximum(c_birth * birth.birth(spatial.states), c_surv * surv) / q1_pred
        return ParticleSet(spatial.states, weights).normalized()

    n_total = controls.particles
    if c_surv <= 0:
        n_birth = n_total
    elif c_birth <= 0:
        n_birth = 0
    else:
        n_birth = min(n_total - 1, int(round(controls.birth_fraction * n_total)))
    n_surv = n_total - n_birth

    states, weights = [], []
    if n_surv > 0:
        survivors = spatial if n_surv == spatial.size else select(spatial, n_surv, rng)
        moved = propagate(survivors, transition, controls.sup_mode, rng)
        if controls.sup_mode == "exact":
            # propagate rescales to max 1; the mixture needs the raw sup.
            w = c_surv * sup_weights(moved.states, spatial, transition)
        else:
            w = c_surv * moved.weights
        if c_birth > 0:
            w = np.maximum(w, c_birth * birth.birth(moved.states))
        states.append(moved.states)
        weights.append(w)
    if n_birth > 0:
        born = sample_from_possibility(birth.birth, n_birth, rng)
        w = c_birth * birth.birth(born.states)
        if c_surv > 0:
            w = np.maximum(w, c_surv * sup_weights(born.states, spatial, transition))
        states.append(born.states)
        weights.append(w)

    return ParticleSet(np.vstack(states), np.concatenate(weights) / q1_pred).normalized()


def _scan_array(Z: Sequence[float]) -> np.ndarray:
    return np.asarray(list(Z), dtype=float).reshape(-1)


def clutter_possibility(Z: Sequence[float], clutter: ClutterModel) -> float:
    """kappa(Z) = nu(|Z|) prod mu(z)."""
    z = _scan_array(Z)
    for value in z:
        if not clutter.contains(value):
            raise ModelViolationError(f"measurement {value} lies outside the measurement space")
    mu = clutter.spatial(z[:, None]) if z.size else np.empty(0)
    return clutter.scale * clutter.cardinality(z.size) * float(np.prod(mu))


def clutter_ratio(Z: Sequence[float], z: float, clutter: ClutterModel) -> float:
    """
    kappa(Z \\ {z}) / kappa(Z) = [nu(m-1)/nu(m)] / mu(z).

    Returns inf when Z is impossible as pure clutter but Z \\ {z} is not (no
    clutter and a single measurement).
    """
    scan = _scan_array(Z)
    if not np.any(scan == z):
        raise ModelViolationError(f"measurement {z} is not in the scan")
    mu = float(clutter.spatial(np.array([[z]]))[0])
    if not mu > 0:
        raise ModelViolationError(f"clutter possibility is zero at {z}")
    card = clutter.cardinality.predecessor_ratio(scan.size)
    if math.isnan(card):
        raise ModelViolationError(f"a scan of {scan.size} measurements is impossible under the clutter model")
    return card / mu


def _ratios(Z: Sequence[float], clutter: ClutterModel) -> np.ndarray:
    scan = _scan_array(Z)
    return np.array([clutter_ratio(scan, z, clutter) for z in scan])


def _likelihood_rows(Z: Sequence[float], states: np.ndarray, g) -> np.ndarray:
    scan = _scan_array(Z)
    if scan.size == 0:
        return np.empty((0, states.shape[0]))
    return np.vstack([g.likelihood(z, states) for z in scan])


def likelihood_factor(Z: Sequence[float], x, det: DetectionPossibility, g, clutter: ClutterModel) -> float:
    """L(Z | x) = max{d0, d1 max_z [ratio(z) g(z|x)]}; the inner max is dropped for empty Z."""
    states = np.atleast_2d(np.asarray(x, dtype=float))
    ratios = _ratios(Z, clutter)
    if ratios.size == 0:
        return det.d0
    rows = _likelihood_rows(Z, states, g)[:, 0]
    return max(det.d0, det.d1 * float(np.max(ratios * rows)))


def sensor_ratio(Z: Sequence[float], predicted: ParticleSet, det: DetectionPossibility, g,
                 clutter: ClutterModel) -> float:
    """
    R(Z) = max{d0, d1 max_z [ratio(z) sup_x g(z|x) pi(x)]}, the sup taken over
    the particles. Not a possibility: it may exceed 1.
    """
    ratios = _ratios(Z, clutter)
    if ratios.size == 0:
        return det.d0
    rows = _likelihood_rows(Z, predicted.states, g)
    sups = np.max(rows * predicted.weights[None, :], axis=1)
    return max(det.d0, det.d1 * float(np.max(ratios * sups)))


@dataclass
class SensorTerm:
    """R_i and the per-particle factor L_i / R_i for one sensor."""
    ratio: float
    factor: Optional[np.ndarray]


def _sensor_term(Z: Sequence[float], predicted: ParticleSet, sensor: Sensor) -> SensorTerm:
    det, g = sensor.detection, sensor.measurement
    ratios = _ratios(Z, sensor.clutter)
    n = predicted.size
    if ratios.size == 0:
        if det.d0 == 0:
            return SensorTerm(0.0, None)
        return SensorTerm(det.d0, np.ones(n))

    rows = _likelihood_rows(Z, predicted.states, g)
    if np.any(np.isinf(ratios)):
        # No clutter: the measurement must be the target, so R is unbounded
        # and L/R tends to g(z|x) / sup_x g(z|x) pi(x).
        rows = rows[np.isinf(ratios)]
        likelihood = rows.max(axis=0)
        top = float(np.max(likelihood * predicted.weights))
        if not top > 0 or det.d1 == 0:
            raise ModelViolationError("measurement without clutter is incompatible with every particle")
        return SensorTerm(math.inf, likelihood / top)

    terms = ratios[:, None] * rows
    L = np.maximum(det.d0, det.d1 * terms.max(axis=0))
    R = max(det.d0, det.d1 * float(np.max(terms * predicted.weights[None, :])))
    if R == 0:
        return SensorTerm(0.0, None)
    return SensorTerm(R, L / R)


def _combine(weights: np.ndarray, factors: List[np.ndarray]) -> np.ndarray:
    if not factors:
        return weights
    stacked = np.vstack(factors)
    tiny = (stacked > 0) & (stacked < LOG_DOMAIN_THRESHOLD)
    product = weights * np.prod(stacked, axis=0)
    if not np.any(tiny) and product.max() > 0:
        return product
    logger.warning("weight factors below %g; combining in log space", LOG_DOMAIN_THRESHOLD)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights) + np.sum(np.log(stacked), axis=0)
    top = np.max(log_w)
    if not np.isfinite(top):
        raise ModelViolationError("posterior spatial possibility vanishes on the whole support")
    return np.exp(log_w - top)


def update(state_pred: BernoulliState, scans: Sequence[Sequence[float]], sensors: Sequence[Sensor]) -> BernoulliState:
    """
    Multi-sensor update.

    alpha = prod R_i; q0 and q1 are rescaled by max{q0, alpha q1}; particle
    weights are multiplied by prod L_i / R_i and renormalised. A zero alpha
    leaves the particles in place but marks them invalid.
    """
    if len(sensors) < 1:
        raise ModelViolationError("at least one sensor is required")
    if len(scans) != len(sensors):
        raise ModelViolationError(f"{len(scans)} scans for {len(sensors)} sensors")
    for Z, sensor in zip(scans, sensors):
        for z in Z:
            if not sensor.clutter.contains(z):
                raise ModelViolationError(f"measurement {z} lies outside the measurement space")

    predicted = state_pred.spatial
    terms = [_sensor_term(Z, predicted, s) for Z, s in zip(scans, sensors)]
    ratios = [t.ratio for t in terms]
    q0p, q1p = state_pred.q0, state_pred.q1

    if any(math.isinf(r) for r in ratios):
        if any(r == 0 for r in ratios):
            raise DegenerateUpdateError("sensors disagree: one requires the target, another excludes it")
        if q1p <= 0:
            raise DegenerateUpdateError("a clutter-free detection arrived while presence is impossible")
        alpha = math.inf
        q0, q1 = 0.0, 1.0
    else:
        alpha = float(np.prod(ratios))
        denom = max(q0p, alpha * q1p)
        if denom <= 0:
            raise DegenerateUpdateError("alpha = 0 with zero absence possibility; no valid normaliser")
        q0 = q0p / denom
        q1 = alpha * q1p / denom
    logger.debug("update: alpha=%s q0=%.6g q1=%.6g", alpha, q0, q1)

    if alpha == 0 or q1 == 0 or not state_pred.spatial_valid:
        return BernoulliState(q0, q1, predicted, spatial_valid=False)
    weights = _combine(predicted.weights, [t.factor for t in terms])
    return BernoulliState(q0, q1, ParticleSet(predicted.states, weights).normalized())


@dataclass
class StepDiagnostics:
    q0_pred: float
    q1_pred: float
    effective_size: float
    resampled: bool


class BernoulliFilter:
    """One filter configuration: motion, birth, presence dynamics, sensors and SMC controls."""

    def __init__(self, tpm: ExistenceTpm, birth: BirthModel, transition: LinearGaussianTransition,
                 sensors: Sequence[Sensor], controls: SmcControls):
        if len(sensors) < 1:
            raise ModelViolationError("at least one sensor is required")
        self.tpm = tpm
        self.birth = birth
        self.transition = transition
        self.sensors = list(sensors)
        self.controls = controls

    def initial_state(self, q0: float, q1: float, rng: np.random.Generator) -> BernoulliState:
        spatial = sample_from_possibility(self.birth.birth, self.controls.particles, rng)
        return BernoulliState(q0, q1, spatial)

    def predict(self, state: BernoulliState, rng: np.random.Generator) -> BernoulliState:
        q0p, q1p = predict_existence(state.q0, state.q1, self.tpm)
        if q1p <= 0:
            logger.warning("predicted presence possibility is zero; spatial possibility retained as invalid")
            return BernoulliState(q0p, q1p, state.spatial, spatial_valid=False)
        spatial = predict_spatial(state, self.tpm, self.birth, self.transition, self.controls, rng)
        return BernoulliState(q0p, q1p, spatial)

    def update(self, state_pred: BernoulliState, scans: Sequence[Sequence[float]]) -> BernoulliState:
        return update(state_pred, scans, self.sensors)

    def maybe_resample(self, state: BernoulliState, rng: np.random.Generator) -> Tuple[BernoulliState, float, bool]:
        n_eff = effective_size(state.spatial)
        c = self.controls
        if c.frozen_grid or not state.spatial_valid or n_eff >= c.resample_threshold * state.spatial.size:
            return state, n_eff, False
        spatial = resample(state.spatial, rng, c.resample_scheme, c.roughening)
        return replace(state, spatial=spatial), n_eff, True

    def step(self, state: BernoulliState, scans: Sequence[Sequence[float]],
             rng: np.random.Generator) -> Tuple[BernoulliState, StepDiagnostics]:
        predicted = self.predict(state, rng)
        posterior = self.update(predicted, scans)
        posterior, n_eff, resampled = self.maybe_resample(posterior, rng)
        logger.debug("step: q0=%.6g q1=%.6g n_eff=%.1f resampled=%s",
                     posterior.q0, posterior.q1, n_eff, resampled)
        return posterior, StepDiagnostics(predicted.q0, predicted.q1, n_eff, resampled)
