"""Candidate generation and acceptance.

A candidate direction is a power-iterated Gaussian vector. It is accepted
when (a) its robustly estimated variance is a fixed fraction of its
empirical weighted variance, and (b) its empirical Rayleigh quotient is a
fixed fraction of an independently estimated top Rayleigh quotient.
Acceptance certifies the direction carries close to the top true variance;
rejection means the surviving data still over-weights some direction and
filtering should continue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AlgoConfig, FilterStack
from .errors import DegenerateStateError
from .estimators import (
    stream_mean_estimate,
    streaming_quantile,
    weighted_quantile,
)
from .linops import (
    Normalization,
    SecondMomentOp,
    approx_power_iteration,
    power_direction,
    power_iteration,
    rejection_batch,
    streamed_power_apply,
)
from .sources import SampleSource, ScalarLedger

__all__ = ["Candidate", "acceptance_factors", "sample_top_eigenvector",
           "sample_top_eigenvector_streaming"]

# Floors keep the two acceptance tests meaningful when gamma is large enough
# that the nominal (1 - c*gamma) factors would go nonpositive. The robust/
# empirical floor sits below the trimming bias of light-tailed scores, the
# Rayleigh floor below plain power-iteration slack.
ACCEPT_ROBUST_FLOOR = 0.25
ACCEPT_RAYLEIGH_FLOOR = 0.5

_CAND_RETRIES = 8


@dataclass(frozen=True)
class Candidate:
    """A unit direction with the quantities its acceptance was judged on."""

    u: np.ndarray
    rayleigh_emp: float
    sigma_robust: float
    reference_rayleigh: float
    accepted: bool


def acceptance_factors(gamma: float, c_acc: float) -> tuple[float, float]:
    f1 = min(1.0, max(1.0 - c_acc * gamma, ACCEPT_ROBUST_FLOOR))
    f2 = min(1.0, max(1.0 - gamma, ACCEPT_RAYLEIGH_FLOOR))
    return f1, f2


def _decide(sigma_robust: float, rayleigh_emp: float, reference: float,
            gamma: float, c_acc: float) -> bool:
    f1, f2 = acceptance_factors(gamma, c_acc)
    return sigma_robust >= f1 * rayleigh_emp and rayleigh_emp >= f2 * reference


def sample_top_eigenvector(points: np.ndarray, weights: np.ndarray, eps: float,
                           gamma: float, fail_prob: float, config: AlgoConfig,
                           rng: np.random.Generator) -> Candidate:
    """Batch candidate: u = normalize(B^p z) judged against batch estimates.

    The reference Rayleigh quotient comes from an independent power
    iteration; the robust variance from the 3*eps-tail trimmed mean of
    squared projections onto u. All reported scalars are per unit norm of u.
    """
    points = np.asarray(points, dtype=np.float64)
    weights = np.asarray(weights, dtype=bool)
    n, d = points.shape
    if not weights.any():
        raise DegenerateStateError("certificate requested with no surviving points")

    op_norm = SecondMomentOp(points, weights, Normalization.NORMALIZED)
    op_raw = SecondMomentOp(points, weights, Normalization.UNNORMALIZED)

    _y, r_hat = power_iteration(op_norm, config.ref_power(d, fail_prob), rng)

    u = None
    for _ in range(_CAND_RETRIES):
        z = rng.standard_normal(d)
        u = power_direction(op_raw, config.cert_power(d), z)
        if u is not None:
            break
    if u is None:
        raise DegenerateStateError("candidate power iterate collapsed to zero")

    rayleigh_emp = float(u @ op_norm.matvec(u))

    f_u = (points @ u) ** 2
    tail = 3.0 * eps
    cap = weighted_quantile(f_u, weights, tail).value if tail > 0 else math.inf
    sigma = float(np.sum(f_u[weights & (f_u <= cap)])) / n

    accepted = _decide(sigma, rayleigh_emp, r_hat, gamma, config.c_acc)
    return Candidate(u=u, rayleigh_emp=rayleigh_emp, sigma_robust=sigma,
                     reference_rayleigh=r_hat, accepted=accepted)


def _normalize_retry(source: SampleSource, stack: FilterStack, p: int,
                     batch_size: int, rng: np.random.Generator,
                     ledger: ScalarLedger | None):
    for _ in range(_CAND_RETRIES):
        z = rng.standard_normal(source.dim)
        y, _w = streamed_power_apply(source, stack, p, batch_size, z, ledger=ledger)
        nrm = float(np.linalg.norm(y))
        if nrm > 0 and math.isfinite(nrm):
            return y / nrm
    raise DegenerateStateError("candidate power iterate collapsed to zero")


def sample_top_eigenvector_streaming(source: SampleSource, stack: FilterStack,
                                     eps: float, gamma: float, fail_prob: float,
                                     config: AlgoConfig, rng: np.random.Generator,
                                     batch_size: int, mean_batch: int,
                                     sigma_op_proxy: float, r_radius: float,
                                     ledger: ScalarLedger | None = None) -> Candidate:
    """Streaming candidate: every batch quantity becomes a minibatch estimate.

    The reference Rayleigh quotient is boosted over ceil(log2(1/fail_prob))
    repetitions; the trim cutoff comes from a one-pass quantile block; the
    robust variance and its slack come from the median-of-means estimator.
    """
    d = source.dim

    reps = max(1, int(math.ceil(math.log2(1.0 / fail_prob))))
    p_ref = config.ref_power(d, fail_prob)
    r_hat = approx_power_iteration(source, stack, p_ref, reps, batch_size, rng,
                                   ledger=ledger)

    u = _normalize_retry(source, stack, config.cert_power(d), batch_size, rng, ledger)

    accepted_pts, _rate = rejection_batch(source, stack, batch_size)
    proj = accepted_pts @ u
    rayleigh_emp = float(proj @ proj) / accepted_pts.shape[0]

    tail = 3.0 * eps
    if tail > 0:

        def draw_scores(k: int) -> np.ndarray:
            pts, _ = rejection_batch(source, stack, max(k, 1))
            got = (pts @ u) ** 2
            while got.size < k:
                pts, _ = rejection_batch(source, stack, k - got.size + 8)
                got = np.concatenate([got, (pts @ u) ** 2])
            return got[:k]

        cap = streaming_quantile(draw_scores, tail, fail_prob,
                                 c_q=config.c_q, ledger=ledger).value
    else:
        cap = math.inf

    def draw_means(k: int) -> np.ndarray:
        pts = source.draw(k)
        w = stack.weights(pts)
        f = (pts @ u) ** 2
        return np.where(w & (f <= cap), f, 0.0)

    sigma = stream_mean_estimate(
        draw_means, rel_tol=0.01 * gamma,
        abs_tol=0.01 * gamma / (r_radius ** 2 * d) * sigma_op_proxy,
        fail_prob=fail_prob, n_batch=mean_batch, ledger=ledger,
    ).value

    accepted = _decide(sigma, rayleigh_emp, r_hat, gamma, config.c_acc)
    return Candidate(u=u, rayleigh_emp=rayleigh_emp, sigma_robust=sigma,
                     reference_rayleigh=r_hat, accepted=accepted)
