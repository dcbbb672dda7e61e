"""
Particle representation of spatial possibility functions.

Particles are support points of a possibility function; a weight is the
possibility value at that point, so after normalisation the largest weight is
exactly 1. States are drawn from the induced PDF (the possibility divided by
its integral), which for a Gaussian possibility is the Gaussian density with
the same mean and covariance.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ModelViolationError, PossibilityError
from .possibility import GaussianPossibility

logger = logging.getLogger(__name__)

SUP_MODES = ("ancestor", "exact")
RESAMPLE_SCHEMES = ("multinomial", "systematic")

# Bytes budget for one block of the O(N^2) sup reduction.
_EXACT_BLOCK_BYTES = 64 * 1024 * 1024


@dataclass(frozen=True, eq=False)
class ParticleSet:
    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=float, copy=True)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        weights = np.array(self.weights, dtype=float, copy=True).reshape(-1)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ModelViolationError("a particle set needs at least one particle")
        if weights.shape[0] != states.shape[0]:
            raise PossibilityError(f"{states.shape[0]} states but {weights.shape[0]} weights")
        if np.any(~np.isfinite(weights)) or np.any(weights < 0):
            raise PossibilityError("weights must be finite and non-negative")
        states.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def max_weight(self) -> float:
        return float(self.weights.max())

    def normalized(self) -> "ParticleSet":
        """Divide by the largest weight so that it becomes exactly 1."""
        top = self.weights.max()
        if not top > 0:
            raise ModelViolationError("all particle weights are zero")
        weights = self.weights / top
        weights[np.argmax(self.weights)] = 1.0
        return ParticleSet(self.states, weights)


@dataclass(frozen=True)
class RngStreams:
    """
    Independent generators for one run. Derived from a single seed with
    SeedSequence(seed).spawn(4), assigned in the order
    truth, clutter, detection, particles.
    """
    seed: int
    truth: np.random.Generator = field(repr=False)
    clutter: np.random.Generator = field(repr=False)
    detection: np.random.Generator = field(repr=False)
    particles: np.random.Generator = field(repr=False)

    ORDER = ("truth", "clutter", "detection", "particles")

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        children = np.random.SeedSequence(seed).spawn(len(cls.ORDER))
        gens = [np.random.Generator(np.random.PCG64(c)) for c in children]
        return cls(seed, *gens)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class LinearGaussianTransition:
    """rho(x | x') = N(x; F x', Q), as a possibility in x."""

    def __init__(self, F, Q):
        self.F = np.atleast_2d(np.asarray(F, dtype=float))
        d = self.F.shape[0]
        if self.F.shape != (d, d):
            raise PossibilityError(f"F must be square, got {self.F.shape}")
        self.noise = GaussianPossibility(np.zeros(d), Q)
        self._chol = linalg.cholesky(self.noise.covariance, lower=True)

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    def predict_mean(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=float) @ self.F.T

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One draw per state from the induced PDF of rho(. | state)."""
        mean = self.predict_mean(states)
        return mean + rng.standard_normal(mean.shape) @ self._chol.T

    def possibility(self, x: np.ndarray, x_prev: np.ndarray) -> np.ndarray:
        """rho(x_j | x_prev_j), row by row."""
        return self.noise(np.asarray(x, dtype=float) - self.predict_mean(x_prev))

    def pairwise(self, targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
        """Matrix rho(targets_j | sources_i), shape (len(targets), len(sources))."""
        a = self.noise.whiten(targets)
        b = self.noise.whiten(self.predict_mean(sources))
        diff = a[:, None, :] - b[None, :, :]
        return np.exp(-0.5 * np.sum(diff * diff, axis=-1))


def sample_from_possibility(pi: GaussianPossibility, n: int, rng: np.random.Generator) -> ParticleSet:
    if n < 1:
        raise ModelViolationError(f"particle count must be at least 1, got {n}")
    chol = linalg.cholesky(pi.covariance, lower=True)
    states = pi.mean + rng.standard_normal((n, pi.dim)) @ chol.T
    return ParticleSet(states, pi(states)).normalized()


def sup_weights(targets: np.ndarray, p: ParticleSet, transition: LinearGaussianTransition) -> np.ndarray:
    """
    max_i rho(target_j | x_i) w_i for every target, exact O(N^2).
    Evaluated in row blocks to bound memory.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n_src = p.size
    block = max(1, _EXACT_BLOCK_BYTES // (8 * n_src * max(1, p.dim)))
    out = np.empty(targets.shape[0])
    for start in range(0, targets.shape[0], block):
        stop = min(start + block, targets.shape[0])
        rho = transition.pairwise(targets[start:stop], p.states)
        out[start:stop] = np.max(rho * p.weights[None, :], axis=1)
    return out


def propagate(p: ParticleSet, transition: LinearGaussianTransition, mode: str, rng: np.random.Generator) -> ParticleSet:
    """
    Sup-prediction of the spatial possibility.

    ancestor: each particle moves by a draw from rho(. | own state) and keeps
    its weight (proposal and target possibility coincide along the ancestor).
    exact: same draws, weights recomputed as the max over all previous particles.
    """
    if mode not in SUP_MODES:
        raise ValueError(f"unknown sup mode {mode!r}, expected one of {SUP_MODES}")
    new_states = transition.sample(p.states, rng)
    if mode == "ancestor":
        weights = p.weights
    else:
        weights = sup_weights(new_states, p, transition)
    return ParticleSet(new_states, weights).normalized()


def bayes_style_update(p: ParticleSet, likelihood) -> ParticleSet:
    """
    w_j <- g_j w_j / max_i g_i w_i. `likelihood` is either the per-particle
    values or a callable evaluated on the states.
    """
    g = likelihood(p.states) if callable(likelihood) else likelihood
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.shape[0] != p.size:
        raise PossibilityError(f"{g.shape[0]} likelihood values for {p.size} particles")
    products = g * p.weights
    if not products.max() > 0:
        raise ModelViolationError("likelihood is zero on the whole particle support")
    return ParticleSet(p.states, products).normalized()


def effective_size(p: ParticleSet) -> float:
    w = p.weights
    return float(w.sum() ** 2 / np.sum(w * w))


def _draw_indices(weights: np.ndarray, n: int, rng: np.random.Generator, scheme: str) -> np.ndarray:
    probs = weights / weights.sum()
    if scheme == "multinomial":
        return rng.choice(weights.shape[0], size=n, replace=True, p=probs)
    if scheme == "systematic":
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        u = (rng.random() + np.arange(n)) / n
        return np.searchsorted(cdf, u, side="right")
    raise ValueError(f"unknown resample scheme {scheme!r}, expected one of {RESAMPLE_SCHEMES}")


def resample(p: ParticleSet, rng: np.random.Generator, scheme: str = "multinomial",
             roughening: float = 0.0) -> ParticleSet:
    """
    N draws with replacement in proportion to the weights; every output
    weight is 1. With roughening K > 0 each coordinate gets Gaussian jitter
    of std K * E_d * N^(-1/d), E_d being the sample range along that axis.
    """
    idx = _draw_indices(p.weights, p.size, rng, scheme)
    states = p.states[idx]
    logger.debug("%s resampling: %d distinct ancestors of %d", scheme, np.unique(idx).size, p.size)
    if roughening > 0:
        spread = np.ptp(p.states, axis=0)
        sigma = roughening * spread * p.size ** (-1.0 / p.dim)
        states = states + rng.standard_normal(states.shape) * sigma
    return ParticleSet(states, np.ones(p.size))


def select(p: ParticleSet, n: int, rng: np.random.Generator) -> ParticleSet:
    """
    Thin the set to n support points drawn in proportion to weight, keeping
    their weights. The heaviest particle is always kept so the maximum stays 1.

    Weights stay the possibility values at the kept points. Points were drawn
    in proportion to weight, so `point_estimate` of a selected set averages
    with w^2 and leans towards the mode.
    """
    if n < 1:
        raise ModelViolationError(f"cannot select {n} particles")
    best = int(np.argmax(p.weights))
    rest = _draw_indices(p.weights, n - 1, rng, "multinomial") if n > 1 else np.empty(0, dtype=int)
    idx = np.concatenate(([best], rest))
    return ParticleSet(p.states[idx], p.weights[idx]).normalized()


def point_estimate(p: ParticleSet) -> np.ndarray:
    total = p.weights.sum()
    if not total > 0:
        raise ModelViolationError("cannot average a particle set with zero total weight")
    return p.weights @ p.states / total
