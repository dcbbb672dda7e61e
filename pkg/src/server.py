from mcp.server.fastmcp import FastMCP
from typing import Optional
import json
try:
    from .config import DEFAULT_PRESET, config_to_dict, load_config, parse_config, parse_interval, with_overrides
    from .errors import ConfigError, PbfError
    from .evaluation import run_monte_carlo, run_trial
    from .possibility import poisson_possibility
except ImportError:
    # Loaded by path (`mcp run src/server.py`): import through the package.
    import os
    import sys
    sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from src.config import DEFAULT_PRESET, config_to_dict, load_config, parse_config, parse_interval, with_overrides
    from src.errors import ConfigError, PbfError
    from src.evaluation import run_monte_carlo, run_trial
    from src.possibility import poisson_possibility

# Initialize FastMCP server
mcp = FastMCP("Possibilistic Bernoulli Filter")


def _resolve(config: str):
    """A preset name, a path, or an inline JSON object."""
    text = config.strip()
    if text.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"inline config is not valid JSON: {e.msg}") from e
        return parse_config(data)
    return load_config(text)


@mcp.tool()
def describe_preset(name: str = DEFAULT_PRESET) -> str:
    """
    Return the fully resolved scenario config of a preset (or config file) as JSON.
    The only built-in preset is "paper-default".
    """
    try:
        return json.dumps(config_to_dict(load_config(name)), indent=2)
    except ConfigError as e:
        return f"Error loading config: {e}"


@mcp.tool()
def validate_config(config: str) -> str:
    """
    Validate a scenario config. `config` is a preset name, a path to a JSON
    file, or an inline JSON object. Missing keys take the paper-default values.
    Returns "OK" or the first offending field with its message.
    """
    try:
        _resolve(config)
    except ConfigError as e:
        return f"Error in config: {e}"
    return "OK"


@mcp.tool()
def run_single_trial(config: str = DEFAULT_PRESET, seed: int = 42, particles: Optional[int] = None) -> str:
    """
    Run one filter trial and return per-step q0, q1, confirmation flags and
    OSPA position error, plus whether and when the track was established.
    Use a small particle count (e.g. 1000) for quick answers.
    """
    try:
        scenario = with_overrides(_resolve(config), particles=particles)
        record = run_trial(scenario, seed)
    except ConfigError as e:
        return f"Error in config: {e}"
    except PbfError as e:
        return f"Error running trial: {e}"
    return json.dumps(record.summary())


@mcp.tool()
def run_experiment(config: str = DEFAULT_PRESET, runs: int = 10, seed: int = 42, pd_interval: Optional[str] = None,
                   particles: Optional[int] = None, workers: int = 1) -> str:
    """
    Monte-Carlo experiment: `runs` trials with seeds seed, seed+1, ...
    `pd_interval` is "low,high" (e.g. "0.6,1.0") and overrides the detection
    probability interval of every sensor. Returns mean OSPA per step, the
    confirmed fraction per step and establishment statistics. No files are written.
    """
    try:
        interval = parse_interval(pd_interval) if pd_interval else None
        scenario = with_overrides(_resolve(config), particles=particles, pd_interval=interval,
                                  n_runs=runs, base_seed=seed)
        report = run_monte_carlo(scenario, scenario.runs.n_runs, scenario.runs.base_seed, workers)
    except ConfigError as e:
        return f"Error in config: {e}"
    except PbfError as e:
        return f"Error running experiment: {e}"
    return json.dumps(report.summary())


@mcp.tool()
def poisson_possibility_table(lam: float, n_max: int = 20) -> str:
    """
    Poisson possibility c(n) = Poisson PMF(n) / PMF(mode) for n = 0..n_max.
    The mode floor(lam) has possibility 1.
    """
    if n_max < 0:
        return "Error: n_max must be non-negative."
    try:
        c = poisson_possibility(lam)
    except PbfError as e:
        return f"Error building possibility: {e}"
    return json.dumps({"lambda": lam, "mode": c.mode, "beta": c.beta, "values": [c(n) for n in range(n_max + 1)]})


if __name__ == "__main__":
    mcp.run()
