"""Ground-truth-labeled data generation: inliers, adversaries, streams.

Inlier covariances are specified structurally (diagonal plus rank-one
spikes) so samples can be drawn without any matrix factorization and the
generating covariance is known exactly. Adversaries replace a fixed fraction
of points (finite-set model) or mix in an outlier distribution at a fixed
rate (stream model); labels ride along for oracle metrics only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .oracle import dense_spectrum
from .sources import SampleSource, SyntheticSource

__all__ = [
    "InlierFamily",
    "InlierSpec",
    "AdversaryKind",
    "AdversarySpec",
    "gen_inliers",
    "strong_contaminate",
    "tv_contaminated_source",
]


class InlierFamily(enum.Enum):
    GAUSSIAN = "gaussian"
    BOUNDED_UNIFORM_SPHEREMIX = "bounded_uniform_spheremix"


@dataclass(frozen=True)
class InlierSpec:
    """Mean-zero inlier distribution with covariance diag + sum a_i v_i v_i^T.

    A spike is (direction, added variance); the direction may be an axis
    index or an arbitrary vector (normalized on construction). The bounded
    family mixes a uniform sphere direction with a uniform radial scalar,
    giving the same covariance on compact support; its support radius
    relative to sqrt(d * op-norm) is reported by ``subgaussian_radius``.
    """

    dim: int
    diag: tuple[float, ...] | float = 1.0
    spikes: tuple = ()   # ((axis | vector, added variance), ...)
    family: InlierFamily = InlierFamily.GAUSSIAN

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        diag = self.diag
        if np.isscalar(diag):
            diag = (float(diag),) * self.dim
        diag = tuple(float(v) for v in diag)
        if len(diag) != self.dim or any(v < 0 for v in diag):
            raise ValueError("diag must be d nonnegative variances")
        object.__setattr__(self, "diag", diag)
        spikes = []
        for direction, add in self.spikes:
            add = float(add)
            if add < 0:
                raise ValueError(f"spike variance must be nonnegative, got {add}")
            if np.isscalar(direction):
                ax = int(direction)
                if not (0 <= ax < self.dim):
                    raise ValueError(f"spike axis {ax} out of range")
                spikes.append((ax, add))
            else:
                v = np.asarray(direction, dtype=np.float64)
                nrm = float(np.linalg.norm(v))
                if v.shape != (self.dim,) or nrm == 0:
                    raise ValueError("spike direction must be a nonzero d-vector")
                spikes.append((tuple(v / nrm), add))
        object.__setattr__(self, "spikes", tuple(spikes))

    def _spike_vector(self, direction) -> np.ndarray:
        if isinstance(direction, int):
            v = np.zeros(self.dim)
            v[direction] = 1.0
            return v
        return np.asarray(direction, dtype=np.float64)

    def covariance(self) -> np.ndarray:
        cov = np.diag(np.asarray(self.diag, dtype=np.float64))
        for direction, add in self.spikes:
            v = self._spike_vector(direction)
            cov += add * np.outer(v, v)
        return cov

    def op_norm(self) -> float:
        cov = self.covariance()
        off = cov - np.diag(np.diag(cov))
        if not off.any():
            return float(np.max(np.diag(cov)))
        return float(dense_spectrum(cov).eigenvalues[0])

    def support_radius(self) -> float:
        """Hard bound on ||X||, or inf for the Gaussian family."""
        if self.family is InlierFamily.GAUSSIAN:
            return math.inf
        base = math.sqrt(self.dim * max(self.diag))
        spike = sum(math.sqrt(add) for _ax, add in self.spikes)
        return math.sqrt(3.0) * (base + spike)

    def subgaussian_radius(self) -> float:
        """Empirical proxy radius r with support inside r*sqrt(d*op-norm)."""
        if self.family is InlierFamily.GAUSSIAN:
            return 1.0
        return max(1.0, self.support_radius() / math.sqrt(self.dim * self.op_norm()))


def gen_inliers(spec: InlierSpec, n: int, rng: np.random.Generator):
    """n i.i.d. mean-zero samples with spec's exact covariance, labeled inlier."""
    if n < 1:
        raise ValueError("n must be positive")
    d = spec.dim
    scale = np.sqrt(np.asarray(spec.diag, dtype=np.float64))
    if spec.family is InlierFamily.GAUSSIAN:
        pts = rng.standard_normal((n, d)) * scale
        for direction, add in spec.spikes:
            v = spec._spike_vector(direction)
            pts += np.outer(math.sqrt(add) * rng.standard_normal(n), v)
    else:
        g = rng.standard_normal((n, d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        sphere = g / norms * math.sqrt(d)          # covariance exactly I
        radial = rng.uniform(0.0, math.sqrt(3.0), size=(n, 1))  # E[b^2] = 1
        pts = radial * sphere * scale
        for direction, add in spec.spikes:
            v = spec._spike_vector(direction)
            signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
            pts += np.outer(radial[:, 0] * math.sqrt(add) * signs, v)
    return pts, np.ones(n, dtype=bool)


class AdversaryKind(enum.Enum):
    NONE = "none"
    ORTHOGONAL_SPIKE = "orthogonal_spike"
    MULTI_DIRECTION_HIDE = "multi_direction_hide"
    SCHATTEN_BLIND = "schatten_blind"


@dataclass(frozen=True)
class AdversarySpec:
    """Replacement strategy and rate for the finite-set and stream models.

    ``inspect`` lets the strategy react to the realized clean sample: it
    receives (points, labels, sigma_truth) before any replacement and returns
    the AdversarySpec actually used (e.g. retargeting the spike axis at the
    empirically quietest coordinate).
    """

    kind: AdversaryKind = AdversaryKind.NONE
    rate: float = 0.0
    spike_axis: int | None = None        # None: lowest-variance axis of truth
    spike_multiplier: float = 2.0
    n_directions: int = 3
    hide_boost: float = 0.5
    projection_rank: int | None = None   # SCHATTEN_BLIND: rank of true Sigma
    inspect: object = None               # callable or None; see above

    def __post_init__(self):
        if not (0.0 <= self.rate < 0.5):
            raise ValueError(f"rate must lie in [0, 0.5), got {self.rate}")


def _axes_by_variance(sigma_truth: np.ndarray) -> np.ndarray:
    return np.argsort(np.diag(sigma_truth))


def _outlier_bank(adv: AdversarySpec, sigma_truth: np.ndarray, d: int) -> np.ndarray:
    """Rows are the (unsigned) outlier positions the adversary cycles over."""
    lam1 = float(dense_spectrum(sigma_truth).eigenvalues[0])
    rate = adv.rate
    if adv.kind is AdversaryKind.ORTHOGONAL_SPIKE:
        axis = adv.spike_axis
        if axis is None:
            axis = int(_axes_by_variance(sigma_truth)[0])
        mag = adv.spike_multiplier * math.sqrt(lam1 / rate)
        bank = np.zeros((1, d))
        bank[0, axis] = mag
        return bank
    if adv.kind is AdversaryKind.MULTI_DIRECTION_HIDE:
        h = min(adv.n_directions, d)
        axes = _axes_by_variance(sigma_truth)[:h]
        mag = math.sqrt(adv.hide_boost * lam1 * h / rate)
        bank = np.zeros((h, d))
        for i, ax in enumerate(axes):
            bank[i, ax] = mag
        return bank
    if adv.kind is AdversaryKind.SCHATTEN_BLIND:
        r = adv.projection_rank
        if r is None or not (0 < r < d):
            raise ValueError("SCHATTEN_BLIND needs projection_rank in (0, d)")
        mag = math.sqrt(lam1 * (d - r) / rate)
        bank = np.zeros((d - r, d))
        for i, ax in enumerate(range(r, d)):
            bank[i, ax] = mag
        return bank
    raise ValueError(f"no outlier bank for {adv.kind}")


def strong_contaminate(points: np.ndarray, labels: np.ndarray, adv: AdversarySpec,
                       sigma_truth: np.ndarray, rng: np.random.Generator):
    """Replace exactly floor(rate * n) points with adversarial positions.

    Replaced slots are chosen uniformly; replacements cycle through the
    adversary's outlier bank with random signs and get outlier labels.
    """
    points = np.asarray(points, dtype=np.float64).copy()
    labels = np.asarray(labels, dtype=bool).copy()
    n, d = points.shape
    if adv.inspect is not None:
        adv = adv.inspect(points, labels, sigma_truth)
    n_out = int(math.floor(adv.rate * n))
    if adv.kind is AdversaryKind.NONE or n_out == 0:
        return points, labels
    bank = _outlier_bank(adv, sigma_truth, d)
    slots = rng.choice(n, size=n_out, replace=False)
    signs = rng.integers(0, 2, size=n_out) * 2.0 - 1.0
    points[slots] = bank[np.arange(n_out) % bank.shape[0]] * signs[:, None]
    labels[slots] = False
    return points, labels


def tv_contaminated_source(inlier: InlierSpec, adv: AdversarySpec,
                           rng: np.random.Generator) -> SampleSource:
    """Bernoulli mixture stream: outlier with probability rate, else inlier."""
    bank = None
    if adv.kind is not AdversaryKind.NONE and adv.rate > 0:
        bank = _outlier_bank(adv, inlier.covariance(), inlier.dim)

    def draw_fn(r: np.random.Generator, k: int):
        pts, _ = gen_inliers(inlier, k, r)
        labels = np.ones(k, dtype=bool)
        if bank is not None:
            is_out = r.random(k) < adv.rate
            n_out = int(np.count_nonzero(is_out))
            if n_out:
                rows = bank[r.integers(0, bank.shape[0], size=n_out)]
                signs = r.integers(0, 2, size=n_out) * 2.0 - 1.0
                pts[is_out] = rows * signs[:, None]
                labels[is_out] = False
        return pts, labels

    return SyntheticSource(inlier.dim, draw_fn, rng)
