"""
Scenario configuration: JSON on disk, frozen dataclasses in memory.

Missing keys fall back to the `paper-default` preset, unknown keys are
rejected, and every model invariant is checked on load so that a bad file
fails with the path of the offending field.
"""
import copy
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

from .errors import ConfigError, PbfError
from .possibility import GaussianPossibility

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_PRESET = "paper-default"

DEFAULT_SCENARIO: Dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "geometry": {
        "transmitter": [0.0, 0.0],
        "receivers": [
            [-8000.0, 3000.0],
            [-9000.0, 11000.0],
            [-2000.0, 2000.0],
            [1000.0, 11000.0],
            [9000.0, 9000.0],
        ],
    },
    "radar": {"fc": 900e6, "c": 2.99792458e8, "f0": 200.0, "T": 2.0, "q": 0.1},
    "sensors": [
        {"sigma": 2.5, "lambda": 0.5, "d0": 0.4, "d1": 1.0, "beta_true": 12000.0}
        for _ in range(5)
    ],
    "tpm": {"tau00": 1.0, "tau01": 0.01, "tau10": 0.01, "tau11": 1.0},
    "birth": {
        "mean": [0.0, 0.0, 0.0, 0.0],
        "covariance": [
            [4000.0 ** 2, 0.0, 0.0, 0.0],
            [0.0, 30.0 ** 2, 0.0, 0.0],
            [0.0, 0.0, 4000.0 ** 2, 0.0],
            [0.0, 0.0, 0.0, 30.0 ** 2],
        ],
    },
    "initial": {"q0": 1.0, "q1": 1.0},
    "truth": {"x1": [-4000.0, 30.0, 7000.0, -12.0], "steps": 70, "noisy": True},
    "smc": {
        "particles": 10000,
        "birth_fraction": 0.1,
        "resample_threshold": 0.5,
        "sup_mode": "ancestor",
        "resample_scheme": "multinomial",
        "roughening": 0.2,
    },
    "evaluation": {"ospa_p": 1.0, "ospa_c": 1e4, "confirmation_threshold": 0.5, "establish_steps": 5},
    "runs": {"n_runs": 100, "base_seed": 42},
}


@dataclass(frozen=True)
class GeometryConfig:
    transmitter: Tuple[float, float]
    receivers: Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class RadarConfig:
    fc: float
    c: float
    f0: float
    T: float
    q: float


@dataclass(frozen=True)
class SensorConfig:
    sigma: float
    lam: float
    d0: float
    d1: float
    beta_true: float


@dataclass(frozen=True)
class TpmConfig:
    tau00: float
    tau01: float
    tau10: float
    tau11: float


@dataclass(frozen=True)
class BirthConfig:
    mean: Tuple[float, ...]
    covariance: Tuple[Tuple[float, ...], ...]


@dataclass(frozen=True)
class InitialConfig:
    q0: float
    q1: float


@dataclass(frozen=True)
class TruthConfig:
    x1: Tuple[float, ...]
    steps: int
    noisy: bool


@dataclass(frozen=True)
class SmcConfig:
    particles: int
    birth_fraction: float
    resample_threshold: float
    sup_mode: str
    resample_scheme: str
    roughening: float


@dataclass(frozen=True)
class EvaluationConfig:
    ospa_p: float
    ospa_c: float
    confirmation_threshold: float
    establish_steps: int


@dataclass(frozen=True)
class RunsConfig:
    n_runs: int
    base_seed: int


@dataclass(frozen=True)
class ScenarioConfig:
    schema_version: int
    geometry: GeometryConfig
    radar: RadarConfig
    sensors: Tuple[SensorConfig, ...]
    tpm: TpmConfig
    birth: BirthConfig
    initial: InitialConfig
    truth: TruthConfig
    smc: SmcConfig
    evaluation: EvaluationConfig
    runs: RunsConfig


# JSON key -> dataclass field, where they differ.
_SENSOR_KEYS = {"sigma": "sigma", "lambda": "lam", "d0": "d0", "d1": "d1", "beta_true": "beta_true"}


def _check_keys(data: Any, allowed: Sequence[str], path: str):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path or "<root>")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", path or "<root>")


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    value = float(value)
    if math.isnan(value):
        raise ConfigError("NaN is not allowed", path)
    return value


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", path)
    return value


def _vector(value: Any, length: Optional[int], path: str) -> Tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"expected a list, got {value!r}", path)
    if length is not None and len(value) != length:
        raise ConfigError(f"expected {length} entries, got {len(value)}", path)
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _positive(value: float, path: str) -> float:
    if not value > 0 or math.isinf(value):
        raise ConfigError(f"must be positive and finite, got {value}", path)
    return value


def _unit(value: float, path: str) -> float:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"must lie in [0, 1], got {value}", path)
    return value


def _row_max(a: float, b: float, names: str, path: str):
    if max(a, b) != 1.0:
        raise ConfigError(f"max({names}) must equal 1, got {max(a, b)}", path)


def _section(data: Dict[str, Any], key: str, allowed: Sequence[str]) -> Dict[str, Any]:
    merged = dict(DEFAULT_SCENARIO[key])
    given = data.get(key, {})
    _check_keys(given, allowed, key)
    merged.update(given)
    return merged


def parse_config(data: Dict[str, Any]) -> ScenarioConfig:
    """Validate a JSON-like mapping and build the config tree."""
    _check_keys(data, list(DEFAULT_SCENARIO), "")
    version = _integer(data.get("schema_version", SCHEMA_VERSION), "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version}, expected {SCHEMA_VERSION}", "schema_version")

    g = _section(data, "geometry", ["transmitter", "receivers"])
    transmitter = _vector(g["transmitter"], 2, "geometry.transmitter")
    if not isinstance(g["receivers"], list) or not g["receivers"]:
        raise ConfigError("at least one receiver is required", "geometry.receivers")
    receivers = tuple(_vector(r, 2, f"geometry.receivers[{i}]") for i, r in enumerate(g["receivers"]))
    geometry = GeometryConfig(transmitter, receivers)

    r = _section(data, "radar", ["fc", "c", "f0", "T", "q"])
    radar = RadarConfig(**{k: _positive(_number(r[k], f"radar.{k}"), f"radar.{k}") for k in ("fc", "c", "f0", "T", "q")})

    if "sensors" in data:
        raw_sensors = data["sensors"]
        if not isinstance(raw_sensors, list):
            raise ConfigError("expected a list", "sensors")
    else:
        raw_sensors = [DEFAULT_SCENARIO["sensors"][0]] * len(receivers)
    if len(raw_sensors) != len(receivers):
        raise ConfigError(f"{len(raw_sensors)} sensors for {len(receivers)} receivers", "sensors")
    sensors = []
    for i, s in enumerate(raw_sensors):
        path = f"sensors[{i}]"
        _check_keys(s, list(_SENSOR_KEYS), path)
        merged = dict(DEFAULT_SCENARIO["sensors"][0])
        merged.update(s)
        values = {field: _number(merged[key], f"{path}.{key}") for key, field in _SENSOR_KEYS.items()}
        _positive(values["sigma"], f"{path}.sigma")
        if not values["lam"] >= 0 or math.isinf(values["lam"]):
            raise ConfigError(f"must be non-negative and finite, got {values['lam']}", f"{path}.lambda")
        _unit(values["d0"], f"{path}.d0")
        _unit(values["d1"], f"{path}.d1")
        _row_max(values["d0"], values["d1"], "d0, d1", f"{path}.d0")
        if not values["beta_true"] > 0:
            raise ConfigError(f"must be positive, got {values['beta_true']}", f"{path}.beta_true")
        sensors.append(SensorConfig(**values))

    t = _section(data, "tpm", ["tau00", "tau01", "tau10", "tau11"])
    taus = {k: _unit(_number(t[k], f"tpm.{k}"), f"tpm.{k}") for k in ("tau00", "tau01", "tau10", "tau11")}
    _row_max(taus["tau00"], taus["tau01"], "tau00, tau01", "tpm.tau00")
    _row_max(taus["tau10"], taus["tau11"], "tau10, tau11", "tpm.tau10")
    tpm = TpmConfig(**taus)

    b = _section(data, "birth", ["mean", "covariance"])
    mean = _vector(b["mean"], 4, "birth.mean")
    if not isinstance(b["covariance"], list) or len(b["covariance"]) != 4:
        raise ConfigError("expected a 4x4 matrix", "birth.covariance")
    cov = tuple(_vector(row, 4, f"birth.covariance[{i}]") for i, row in enumerate(b["covariance"]))
    try:
        GaussianPossibility(mean, cov)
    except PbfError as e:
        raise ConfigError(str(e), "birth.covariance") from e
    birth = BirthConfig(mean, cov)

    q = _section(data, "initial", ["q0", "q1"])
    q0 = _unit(_number(q["q0"], "initial.q0"), "initial.q0")
    q1 = _unit(_number(q["q1"], "initial.q1"), "initial.q1")
    _row_max(q0, q1, "q0, q1", "initial.q0")
    initial = InitialConfig(q0, q1)

    tr = _section(data, "truth", ["x1", "steps", "noisy"])
    steps = _integer(tr["steps"], "truth.steps")
    if steps < 1:
        raise ConfigError(f"must be at least 1, got {steps}", "truth.steps")
    if not isinstance(tr["noisy"], bool):
        raise ConfigError(f"expected true or false, got {tr['noisy']!r}", "truth.noisy")
    truth = TruthConfig(_vector(tr["x1"], 4, "truth.x1"), steps, tr["noisy"])

    sm = _section(data, "smc", list(DEFAULT_SCENARIO["smc"]))
    particles = _integer(sm["particles"], "smc.particles")
    if particles < 1:
        raise ConfigError(f"must be at least 1, got {particles}", "smc.particles")
    birth_fraction = _number(sm["birth_fraction"], "smc.birth_fraction")
    if not 0.0 <= birth_fraction < 1.0:
        raise ConfigError(f"must lie in [0, 1), got {birth_fraction}", "smc.birth_fraction")
    threshold = _unit(_number(sm["resample_threshold"], "smc.resample_threshold"), "smc.resample_threshold")
    if sm["sup_mode"] not in ("ancestor", "exact"):
        raise ConfigError(f"must be 'ancestor' or 'exact', got {sm['sup_mode']!r}", "smc.sup_mode")
    if sm["resample_scheme"] not in ("multinomial", "systematic"):
        raise ConfigError(f"must be 'multinomial' or 'systematic', got {sm['resample_scheme']!r}",
                          "smc.resample_scheme")
    roughening = _number(sm["roughening"], "smc.roughening")
    if roughening < 0:
        raise ConfigError(f"must be non-negative, got {roughening}", "smc.roughening")
    smc = SmcConfig(particles, birth_fraction, threshold, sm["sup_mode"], sm["resample_scheme"], roughening)

    ev = _section(data, "evaluation", list(DEFAULT_SCENARIO["evaluation"]))
    ospa_p = _number(ev["ospa_p"], "evaluation.ospa_p")
    if ospa_p < 1:
        raise ConfigError(f"must be at least 1, got {ospa_p}", "evaluation.ospa_p")
    ospa_c = _positive(_number(ev["ospa_c"], "evaluation.ospa_c"), "evaluation.ospa_c")
    confirm = _unit(_number(ev["confirmation_threshold"], "evaluation.confirmation_threshold"),
                    "evaluation.confirmation_threshold")
    establish = _integer(ev["establish_steps"], "evaluation.establish_steps")
    if establish < 1:
        raise ConfigError(f"must be at least 1, got {establish}", "evaluation.establish_steps")
    evaluation = EvaluationConfig(ospa_p, ospa_c, confirm, establish)

    ru = _section(data, "runs", ["n_runs", "base_seed"])
    n_runs = _integer(ru["n_runs"], "runs.n_runs")
    if n_runs < 1:
        raise ConfigError(f"must be at least 1, got {n_runs}", "runs.n_runs")
    base_seed = _integer(ru["base_seed"], "runs.base_seed")
    if base_seed < 0:
        raise ConfigError(f"must be non-negative, got {base_seed}", "runs.base_seed")
    runs = RunsConfig(n_runs, base_seed)

    return ScenarioConfig(version, geometry, radar, tuple(sensors), tpm, birth, initial, truth, smc, evaluation, runs)


def load_config(path: str) -> ScenarioConfig:
    """`paper-default` or the path of a JSON file."""
    if path == DEFAULT_PRESET:
        logger.debug("Using preset %s", DEFAULT_PRESET)
        return parse_config(copy.deepcopy(DEFAULT_SCENARIO))
    if not os.path.exists(path):
        raise ConfigError(f"no such file or preset: {path}")
    logger.info("Loading config from %s", path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    return parse_config(data)


def config_to_dict(config: ScenarioConfig) -> Dict[str, Any]:
    """The JSON form of a config, with file keys (`lambda`, not `lam`)."""
    data = asdict(config)

    def listify(value):
        if isinstance(value, (tuple, list)):
            return [listify(v) for v in value]
        if isinstance(value, dict):
            return {k: listify(v) for k, v in value.items()}
        return value

    data = listify(data)
    data["sensors"] = [{key: s[field] for key, field in _SENSOR_KEYS.items()} for s in data["sensors"]]
    return data


def parse_interval(text: str) -> Tuple[float, float]:
    """'0.6,1.0' -> (0.6, 1.0)."""
    try:
        low, high = (float(part) for part in text.split(","))
    except ValueError as e:
        raise ConfigError(f"expected 'low,high', got {text!r}", "pd_interval") from e
    if not 0.0 <= low <= high <= 1.0:
        raise ConfigError(f"interval must satisfy 0 <= low <= high <= 1, got [{low}, {high}]", "pd_interval")
    if low != 0.0 and high != 1.0:
        raise ConfigError(f"interval [{low}, {high}] has neither low = 0 nor high = 1", "pd_interval")
    return low, high


def with_overrides(config: ScenarioConfig, particles: Optional[int] = None,
                   pd_interval: Optional[Tuple[float, float]] = None, sup_mode: Optional[str] = None,
                   n_runs: Optional[int] = None, base_seed: Optional[int] = None) -> ScenarioConfig:
    """A new config with command-line overrides applied and re-validated."""
    data = config_to_dict(config)
    if particles is not None:
        data["smc"]["particles"] = particles
    if sup_mode is not None:
        data["smc"]["sup_mode"] = sup_mode
    if pd_interval is not None:
        low, high = pd_interval
        for s in data["sensors"]:
            s["d0"], s["d1"] = 1.0 - low, high
    if n_runs is not None:
        data["runs"]["n_runs"] = n_runs
    if base_seed is not None:
        data["runs"]["base_seed"] = base_seed
    return parse_config(data)
