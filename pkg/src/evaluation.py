"""
Experiment drivers: OSPA position error, track confirmation, single trials
and seeded Monte-Carlo batches over the Doppler scenario.
"""
import concurrent.futures
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bernoulli import (
    BernoulliFilter,
    BirthModel,
    DetectionPossibility,
    ExistenceTpm,
    SmcControls,
)
from .config import ScenarioConfig, with_overrides
from .doppler import (
    Geometry,
    RadarParams,
    ScanSet,
    SensorParams,
    TargetState,
    cv_matrices,
    filter_sensors,
    generate_scan,
    simulate_truth,
)
from .errors import PossibilityError
from .possibility import GaussianPossibility
from .smc import LinearGaussianTransition, RngStreams, point_estimate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OspaParams:
    p: float = 1.0
    c: float = 1e4

    def __post_init__(self):
        if self.p < 1:
            raise PossibilityError(f"OSPA order p must be at least 1, got {self.p}")
        if not self.c > 0:
            raise PossibilityError(f"OSPA cutoff c must be positive, got {self.c}")


def ospa_position(est: Sequence, truth: Sequence, params: OspaParams = OspaParams()) -> float:
    """
    OSPA distance between two finite sets of positions, solved as an
    assignment problem on the cut-off distances.
    """
    X = [np.asarray(x, dtype=float) for x in est]
    Y = [np.asarray(y, dtype=float) for y in truth]
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m > n:
        X, Y = Y, X
        m, n = n, m
    c, p = params.c, params.p
    if m == 0:
        return float(c)

    D = np.full((n, n), c ** p)
    for i in range(m):
        for j in range(n):
            D[i, j] = min(c, float(np.linalg.norm(X[i] - Y[j]))) ** p
    rows, cols = linear_sum_assignment(D)
    local = float(D[rows[:m], cols[:m]].sum())
    cardinality = c ** p * (n - m)
    return float(min(c, ((local + cardinality) / n) ** (1.0 / p)))


def confirm_track(q0: float, q1: float, threshold: float = 0.5) -> bool:
    """q1 - q0 >= threshold."""
    return q1 - q0 >= threshold


@dataclass
class StepRecord:
    step: int
    q0: float
    q1: float
    confirmed: bool
    estimate: Optional[Tuple[float, ...]]
    ospa: float
    truth: Tuple[float, ...]
    scans: ScanSet
    q0_pred: float
    q1_pred: float
    effective_size: float
    resampled: bool


@dataclass
class TrialRecord:
    seed: int
    steps: List[StepRecord]
    established: bool
    establishment_step: Optional[int]
    track_breaks: int

    @property
    def ospa(self) -> List[float]:
        return [s.ospa for s in self.steps]

    def summary(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "established": self.established,
            "establishment_step": self.establishment_step,
            "track_breaks": self.track_breaks,
            "q0": [s.q0 for s in self.steps],
            "q1": [s.q1 for s in self.steps],
            "confirmed": [s.confirmed for s in self.steps],
            "ospa": self.ospa,
        }


@dataclass
class McReport:
    mean_ospa: List[float]
    confirmed_fraction: List[float]
    establishment_rate: float
    mean_establishment_step: Optional[float]
    seeds: List[int]
    trials: List[TrialRecord] = field(repr=False)

    @property
    def runs(self) -> int:
        return len(self.seeds)

    @property
    def failure_rate(self) -> float:
        return 1.0 - self.establishment_rate

    def steady_state_ospa(self, after_step: int) -> float:
        """Mean of the per-step mean OSPA over steps k > after_step."""
        tail = self.mean_ospa[after_step:]
        if not tail:
            raise ValueError(f"no steps after {after_step}")
        return float(np.mean(tail))

    def summary(self) -> Dict[str, Any]:
        return {
            "runs": self.runs,
            "seeds": list(self.seeds),
            "mean_ospa": list(self.mean_ospa),
            "confirmed_fraction": list(self.confirmed_fraction),
            "establishment_rate": self.establishment_rate,
            "mean_establishment_step": self.mean_establishment_step,
            "track_breaks": [t.track_breaks for t in self.trials],
            "established": [t.established for t in self.trials],
            "establishment_step": [t.establishment_step for t in self.trials],
        }


@dataclass
class Scenario:
    """Simulator and filter objects resolved from a ScenarioConfig."""
    geometry: Geometry
    radar: RadarParams
    sensor_params: List[SensorParams]
    F: np.ndarray
    Q: np.ndarray
    filter: BernoulliFilter
    x1: TargetState
    steps: int
    noisy: bool
    q0: float
    q1: float
    ospa: OspaParams
    confirmation_threshold: float
    establish_steps: int


def build_scenario(config: ScenarioConfig) -> Scenario:
    geometry = Geometry(tuple(config.geometry.transmitter), tuple(tuple(r) for r in config.geometry.receivers))
    r = config.radar
    radar = RadarParams(fc=r.fc, f0=r.f0, T=r.T, q=r.q, c=r.c)
    sensor_params = [
        SensorParams(sigma=s.sigma, lam=s.lam, det=DetectionPossibility(s.d0, s.d1), beta_true=s.beta_true)
        for s in config.sensors
    ]
    F, Q = cv_matrices(radar.T, radar.q)
    sm = config.smc
    controls = SmcControls(
        particles=sm.particles,
        birth_fraction=sm.birth_fraction,
        sup_mode=sm.sup_mode,
        resample_threshold=sm.resample_threshold,
        resample_scheme=sm.resample_scheme,
        roughening=sm.roughening,
    )
    t = config.tpm
    bernoulli_filter = BernoulliFilter(
        tpm=ExistenceTpm(t.tau00, t.tau01, t.tau10, t.tau11),
        birth=BirthModel(GaussianPossibility(config.birth.mean, config.birth.covariance)),
        transition=LinearGaussianTransition(F, Q),
        sensors=filter_sensors(geometry, radar, sensor_params),
        controls=controls,
    )
    ev = config.evaluation
    return Scenario(
        geometry=geometry,
        radar=radar,
        sensor_params=sensor_params,
        F=F,
        Q=Q,
        filter=bernoulli_filter,
        x1=TargetState.from_array(config.truth.x1),
        steps=config.truth.steps,
        noisy=config.truth.noisy,
        q0=config.initial.q0,
        q1=config.initial.q1,
        ospa=OspaParams(ev.ospa_p, ev.ospa_c),
        confirmation_threshold=ev.confirmation_threshold,
        establish_steps=ev.establish_steps,
    )


def establishment(confirmed: Sequence[bool], establish_steps: int) -> Tuple[bool, Optional[int], int]:
    """
    (established, first step of the first confirmed run of at least
    `establish_steps` steps, number of confirmed -> unconfirmed transitions).
    Steps are numbered from 1.
    """
    start, run, first = None, 0, None
    breaks = 0
    for k, flag in enumerate(confirmed, start=1):
        if flag:
            if run == 0:
                start = k
            run += 1
            if first is None and run >= establish_steps:
                first = start
        else:
            if run > 0:
                breaks += 1
            run = 0
    return first is not None, first, breaks


def run_trial(config: ScenarioConfig, seed: int, scenario: Optional[Scenario] = None) -> TrialRecord:
    """One filter run against one simulated trajectory."""
    scenario = scenario or build_scenario(config)
    streams = RngStreams.from_seed(seed)
    pbf = scenario.filter
    truth = simulate_truth(scenario.x1, scenario.steps, scenario.F, scenario.Q, streams.truth, scenario.noisy)
    state = pbf.initial_state(scenario.q0, scenario.q1, streams.particles)

    records: List[StepRecord] = []
    for k, x_true in enumerate(truth, start=1):
        predicted = pbf.predict(state, streams.particles)
        scans = generate_scan(x_true, scenario.sensor_params, scenario.geometry, scenario.radar,
                              streams.detection, streams.clutter)
        posterior = pbf.update(predicted, scans)
        state, n_eff, resampled = pbf.maybe_resample(posterior, streams.particles)

        confirmed = state.spatial_valid and confirm_track(state.q0, state.q1, scenario.confirmation_threshold)
        estimate = tuple(float(v) for v in point_estimate(state.spatial)) if confirmed else None
        est_set = [TargetState.from_array(estimate).position] if estimate is not None else []
        ospa = ospa_position(est_set, [x_true.position], scenario.ospa)
        logger.debug("seed %d step %d: q0=%.4g q1=%.4g confirmed=%s ospa=%.1f",
                     seed, k, state.q0, state.q1, confirmed, ospa)
        records.append(StepRecord(
            step=k,
            q0=state.q0,
            q1=state.q1,
            confirmed=confirmed,
            estimate=estimate,
            ospa=ospa,
            truth=tuple(float(v) for v in x_true.as_array()),
            scans=scans,
            q0_pred=predicted.q0,
            q1_pred=predicted.q1,
            effective_size=n_eff,
            resampled=resampled,
        ))

    established, first, breaks = establishment([r.confirmed for r in records], scenario.establish_steps)
    logger.info("seed %d: established=%s step=%s breaks=%d", seed, established, first, breaks)
    return TrialRecord(seed, records, established, first, breaks)


def aggregate(trials: Sequence[TrialRecord]) -> McReport:
    if not trials:
        raise ValueError("at least one trial is required")
    ospa = np.array([t.ospa for t in trials], dtype=float)
    confirmed = np.array([[s.confirmed for s in t.steps] for t in trials], dtype=float)
    steps = [t.establishment_step for t in trials if t.established]
    return McReport(
        mean_ospa=[float(v) for v in ospa.mean(axis=0)],
        confirmed_fraction=[float(v) for v in confirmed.mean(axis=0)],
        establishment_rate=len(steps) / len(trials),
        mean_establishment_step=float(np.mean(steps)) if steps else None,
        seeds=[t.seed for t in trials],
        trials=list(trials),
    )


def run_monte_carlo(config: ScenarioConfig, n_runs: int, base_seed: int, parallelism: int = 1) -> McReport:
    """
    Trials with seeds base_seed + i, i = 0..n_runs-1. Results are placed by
    run index, so the report does not depend on `parallelism`.
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be at least 1, got {n_runs}")
    seeds = [base_seed + i for i in range(n_runs)]
    logger.info("Running %d trials (seeds %d..%d) with %d workers", n_runs, seeds[0], seeds[-1], parallelism)
    results: List[Optional[TrialRecord]] = [None] * n_runs

    if parallelism <= 1:
        for i, seed in enumerate(seeds):
            results[i] = run_trial(config, seed)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as executor:
            future_to_index = {executor.submit(run_trial, config, seed): i for i, seed in enumerate(seeds)}
            for future in concurrent.futures.as_completed(future_to_index):
                i = future_to_index[future]
                try:
                    results[i] = future.result()
                except Exception:
                    logger.error("Trial with seed %d failed", seeds[i])
                    raise

    report = aggregate(results)
    logger.info("Finished %d trials: establishment rate %.2f", n_runs, report.establishment_rate)
    return report


def interval_label(interval: Tuple[float, float]) -> str:
    return f"[{interval[0]:g},{interval[1]:g}]"


def run_sweep(config: ScenarioConfig, intervals: Sequence[Tuple[float, float]], n_runs: int,
              base_seed: int, parallelism: int = 1) -> Dict[str, McReport]:
    """One Monte-Carlo batch per detection probability interval, same seeds for each."""
    reports: Dict[str, McReport] = {}
    for interval in intervals:
        logger.info("Sweep: P_d interval %s", interval_label(interval))
        swept = with_overrides(config, pd_interval=interval)
        reports[interval_label(interval)] = run_monte_carlo(swept, n_runs, base_seed, parallelism)
    return reports
