"""
Possibility functions and the probability <-> possibility transforms.

A possibility function maps a space to [0, 1] and has supremum 1. Everything
here is immutable once built, so instances can be shared between threads.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg, stats

from .errors import PossibilityError

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-12
# Stored cardinality values stop once they fall below this; the tail is closed form.
TAIL_EPS = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class GaussianPossibility:
    """
    exp(-1/2 (x - mean)^T P^-1 (x - mean)).

    The covariance is factorised once at construction; a matrix that is not
    symmetric positive-definite is rejected there.
    """

    def __init__(self, mean, covariance):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if mean.ndim != 1:
            raise PossibilityError(f"mean must be a vector, got shape {mean.shape}")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise PossibilityError(f"covariance shape {cov.shape} does not match mean dimension {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise PossibilityError("mean and covariance must be finite")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
            raise PossibilityError("covariance is not symmetric")
        try:
            self._chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as e:
            raise PossibilityError(f"covariance is not positive-definite: {e}") from e
        self.mean = _readonly(mean)
        self.covariance = _readonly(cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def whiten(self, x) -> np.ndarray:
        """
        Map points (..., d) into coordinates where the covariance is the
        identity: L^-1 x, with L the lower Cholesky factor.
        """
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        out = linalg.solve_triangular(self._chol, flat.T, lower=True).T
        return out.reshape(x.shape)

    def mahalanobis(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise PossibilityError(f"point dimension {x.shape[-1]} does not match {self.dim}")
        y = self.whiten(x - self.mean)
        return np.sum(y * y, axis=-1)

    def __call__(self, x) -> np.ndarray:
        """Evaluate at one point (d,) or a batch (N, d)."""
        return np.exp(-0.5 * self.mahalanobis(x))

    def __repr__(self):
        return f"GaussianPossibility(mean={self.mean.tolist()}, covariance={self.covariance.tolist()})"


def gauss_eval(x, g: GaussianPossibility) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise PossibilityError(f"point shape {x.shape} does not match mean shape {g.mean.shape}")
    return float(g(x))


def gauss_predict(g: GaussianPossibility, F, Q) -> GaussianPossibility:
    """
    sup over x' of N(x; F x', Q) N(x'; mean, P), which is again Gaussian with
    the Kalman predicted moments.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    P = F @ g.covariance @ F.T + Q
    return GaussianPossibility(F @ g.mean, 0.5 * (P + P.T))


def gauss_update(g: GaussianPossibility, z, H, R) -> GaussianPossibility:
    """Normalised product with the likelihood N(z; H x, R): the Kalman update."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = g.covariance
    S = H @ P @ H.T + R
    K = linalg.solve(S, H @ P, assume_a="pos").T
    mean = g.mean + K @ (z - H @ g.mean)
    cov = (np.eye(g.dim) - K @ H) @ P
    return GaussianPossibility(mean, 0.5 * (cov + cov.T))


class UniformPossibility:
    """Indicator of a box: 1 inside [low, high], 0 outside."""

    def __init__(self, low, high):
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        if low.shape != high.shape or np.any(high <= low):
            raise PossibilityError("UniformPossibility needs low < high componentwise")
        self.low = _readonly(low)
        self.high = _readonly(high)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or (x.ndim == 1 and self.low.shape[0] == 1):
            x = x.reshape(-1, 1)
        return np.all((x >= self.low) & (x <= self.high), axis=-1)

    def __call__(self, x) -> np.ndarray:
        return self.contains(x).astype(float)


class PossibilityFunction:
    """A plain evaluator known to have supremum 1."""

    def __init__(self, evaluator: Callable[[np.ndarray], np.ndarray]):
        self._evaluator = evaluator

    def __call__(self, x):
        return self._evaluator(x)


@dataclass(frozen=True)
class BoundedPdf:
    """
    A probability density with a known supremum. `gaussian` holds (mean, cov)
    when the density is a Gaussian, so the conversions can stay closed form.
    """
    density: Callable[[np.ndarray], np.ndarray]
    supremum: float
    gaussian: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @classmethod
    def from_gaussian(cls, mean, covariance) -> "BoundedPdf":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        dist = stats.multivariate_normal(mean=mean, cov=cov)
        return cls(density=dist.pdf, supremum=float(dist.pdf(mean)), gaussian=(mean, cov))

    def __call__(self, x):
        return self.density(x)


def pdf_to_possibility(p: BoundedPdf):
    """x -> p(x) / sup p."""
    if not p.supremum > 0:
        raise PossibilityError(f"supremum must be positive, got {p.supremum}")
    if p.gaussian is not None:
        return GaussianPossibility(*p.gaussian)
    sup = p.supremum
    return PossibilityFunction(lambda x: np.asarray(p.density(x), dtype=float) / sup)


def possibility_to_pdf(pi, domain: Optional[Tuple[float, float]] = None) -> BoundedPdf:
    """
    x -> pi(x) / integral of pi.

    Gaussian possibilities convert in closed form. Anything else must be 1-D
    and is integrated numerically over `domain`.
    """
    if isinstance(pi, GaussianPossibility):
        return BoundedPdf.from_gaussian(pi.mean, pi.covariance)
    if domain is None:
        raise PossibilityError("a 1-D integration domain is required for non-Gaussian possibilities")
    low, high = float(domain[0]), float(domain[1])
    if not high > low:
        raise PossibilityError(f"empty integration domain [{low}, {high}]")

    def scalar(t: float) -> float:
        return float(np.asarray(pi(np.array([t]))).reshape(-1)[0])

    total, _ = integrate.quad(scalar, low, high, limit=200)
    if not math.isfinite(total) or total <= 0:
        raise PossibilityError(f"possibility is not integrable to a positive value (got {total})")

    def density(x):
        x = np.asarray(x, dtype=float)
        inside = (x >= low) & (x <= high)
        return np.where(inside, np.asarray(pi(x), dtype=float) / total, 0.0)

    return BoundedPdf(density=density, supremum=1.0 / total)


def possibility_measure(pi, points) -> float:
    """Pi(A) = sup over A, with A given by sample points."""
    values = np.asarray(pi(np.asarray(points, dtype=float)), dtype=float)
    return float(np.max(values)) if values.size else 0.0


def necessity(pi, complement_points) -> float:
    """N(A) = 1 - Pi(complement of A)."""
    return 1.0 - possibility_measure(pi, complement_points)


class DiscretePossibility:
    """
    A possibility function on n = 0, 1, 2, ...

    Values for n <= n_max are stored; beyond that `tail(n)` is used.
    """

    def __init__(self, values: Sequence[float], tail: Optional[Callable[[int], float]] = None):
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise PossibilityError("values must be a non-empty sequence")
        if np.any(values < 0) or np.any(values > 1 + NORMALIZATION_TOL):
            raise PossibilityError("values must lie in [0, 1]")
        if abs(float(values.max()) - 1.0) > NORMALIZATION_TOL:
            raise PossibilityError(f"maximum must be 1, got {values.max()!r}")
        self.values = _readonly(values)
        self._tail = tail or (lambda n: 0.0)

    @property
    def n_max(self) -> int:
        return self.values.size - 1

    @classmethod
    def no_clutter(cls) -> "DiscretePossibility":
        """Only n = 0 is possible."""
        return cls([1.0])

    def __call__(self, n: int) -> float:
        if n < 0:
            return 0.0
        if n <= self.n_max:
            return float(self.values[n])
        return float(self._tail(n))

    def predecessor_ratio(self, m: int) -> float:
        """c(m-1) / c(m); inf when only the numerator is positive, nan when both vanish."""
        num, den = self(m - 1), self(m)
        if den > 0:
            return num / den
        return math.inf if num > 0 else math.nan


class PoissonPossibility(DiscretePossibility):
    """Poisson PMF divided by its value at the mode floor(lam)."""

    def __init__(self, lam: float):
        if not (lam > 0 and math.isfinite(lam)):
            raise PossibilityError(f"Poisson rate must be positive and finite, got {lam}")
        self.lam = float(lam)
        self.mode = int(math.floor(lam))
        # Recurrence outward from the mode keeps c(n-1)/c(n) = n/lam to one rounding.
        below = [1.0]
        for n in range(self.mode, 0, -1):
            below.append(below[-1] * n / self.lam)
        values = below[::-1]
        n = self.mode
        while values[-1] >= TAIL_EPS:
            n += 1
            values.append(values[-1] * self.lam / n)
        logger.debug("Poisson possibility lam=%g: mode %d, %d stored values", self.lam, self.mode, len(values))
        super().__init__(values, tail=self._closed_form)

    @property
    def beta(self) -> float:
        """The PMF at the mode, i.e. the maximum PMF value."""
        return float(stats.poisson.pmf(self.mode, self.lam))

    def _closed_form(self, n: int) -> float:
        log_c = (n - self.mode) * math.log(self.lam) - math.lgamma(n + 1) + math.lgamma(self.mode + 1)
        return math.exp(log_c)

    def predecessor_ratio(self, m: int) -> float:
        if m < 1:
            return 0.0
        return m / self.lam


def poisson_possibility(lam: float) -> PoissonPossibility:
    return PoissonPossibility(lam)
