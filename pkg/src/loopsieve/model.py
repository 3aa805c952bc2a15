"""Mixture model linking cycle errors to per-edge inlier/outlier states.

A cycle with s outlier members out of k free (loop-closure) edges plus
n_fixed trusted ego edges has error standard deviation

    std(s) = sqrt(s * sigma_bar^2 + (n_fixed + k - s) * sigma^2)

and the cycle error z follows a truncated Gaussian on [0, pi] with that
scale. Likelihoods depend on a configuration only through its outlier
count, which the inference back-ends exploit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .cycles import CycleBasis, cycle_error
from .graph import EdgeKind, PoseGraph

DEFAULT_LC_CAP = 16

_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


class CycleCapError(ValueError):
    """Cycle has too many loop-closure members for a 2^k state space."""

    def __init__(self, cycle_id: int, size: int, cap: int):
        super().__init__(
            f"cycle {cycle_id} has {size} loop-closure members, over the cap of "
            f"{cap}; raise the cap or prune the cycle"
        )
        self.cycle_id = cycle_id


@dataclass(frozen=True)
class ModelParams:
    """Noise scales (radians) and per-edge prior inlier probabilities."""

    sigma: float
    sigma_bar: float
    priors: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 < self.sigma < self.sigma_bar):
            raise ValueError(
                f"need 0 < sigma < sigma_bar, got sigma={self.sigma}, "
                f"sigma_bar={self.sigma_bar}"
            )
        for eid, p in self.priors.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"prior for edge {eid} must be in [0, 1], got {p}")
        object.__setattr__(self, "priors", dict(self.priors))

    def prior(self, edge_id: int) -> float:
        try:
            return self.priors[edge_id]
        except KeyError:
            raise KeyError(f"no prior recorded for edge {edge_id}") from None

    @classmethod
    def from_graph(cls, g: PoseGraph, sigma: float, sigma_bar: float) -> "ModelParams":
        """Take loop-closure priors from the graph's per-edge values."""
        priors = {
            e.id: e.prior_inlier for e in g.edges if e.kind is EdgeKind.LOOP_CLOSURE
        }
        return cls(sigma, sigma_bar, priors)


@dataclass(frozen=True)
class CycleFactor:
    """One basis cycle as evidence: free members, fixed count, observed error."""

    cycle_id: int
    lc_members: tuple[int, ...]
    n_fixed: int
    z: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "lc_members", tuple(self.lc_members))
        if len(set(self.lc_members)) != len(self.lc_members):
            raise ValueError(f"cycle {self.cycle_id}: duplicate loop-closure member")
        if self.n_fixed < 0:
            raise ValueError(f"cycle {self.cycle_id}: negative n_fixed")
        if not 0.0 <= self.z <= math.pi + 1e-12:
            raise ValueError(f"cycle {self.cycle_id}: z must be in [0, pi], got {self.z}")

    @property
    def length(self) -> int:
        return self.n_fixed + len(self.lc_members)


@dataclass(frozen=True, eq=False)
class CycleDistribution:
    """Probabilities over the 2^k outlier configurations of a cycle.

    Bit k of the index mask is 1 when lc_members[k] is an outlier.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        n = vals.shape[0]
        if vals.ndim != 1 or n == 0 or n & (n - 1):
            raise ValueError("values must be a length-2^k vector")
        if np.any(vals < 0) or abs(float(vals.sum()) - 1.0) > 1e-9:
            raise ValueError("values must be a normalized probability vector")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_members(self) -> int:
        return int(self.values.shape[0]).bit_length() - 1

    def inlier_marginal(self, member_index: int) -> float:
        """P(member is an inlier): total mass of masks with that bit clear."""
        masks = np.arange(self.values.shape[0])
        keep = (masks >> member_index) & 1 == 0
        return float(self.values[keep].sum())

    def inlier_marginals(self) -> np.ndarray:
        return np.array(
            [self.inlier_marginal(j) for j in range(self.n_members)]
        )

    def outlier_count_marginals(self) -> np.ndarray:
        """Distribution of the outlier count s; length n_members + 1."""
        masks = np.arange(self.values.shape[0])
        counts = _popcounts(masks)
        return np.bincount(counts, weights=self.values, minlength=self.n_members + 1)


def truncated_gaussian_mass(sigma: float) -> float:
    """Integral of exp(-t^2 / (2 sigma^2)) over [0, pi]."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return sigma * _SQRT_HALF_PI * math.erf(math.pi / (sigma * math.sqrt(2.0)))


def mixture_std(factor: CycleFactor, s: int, params: ModelParams) -> float:
    """Error scale of the cycle when s of its free members are outliers."""
    k = len(factor.lc_members)
    if not 0 <= s <= k:
        raise ValueError(f"s must be in [0, {k}], got {s}")
    n_inlier = factor.n_fixed + k - s
    return math.sqrt(s * params.sigma_bar**2 + n_inlier * params.sigma**2)


def log_cycle_likelihood(factor: CycleFactor, s: int, params: ModelParams) -> float:
    """log p(z | s outliers), up to the per-cycle constant that cancels
    in inference: -3 ln(std) - z^2 / (2 std^2) - ln(truncated mass)."""
    std = mixture_std(factor, s, params)
    return (
        -3.0 * math.log(std)
        - factor.z**2 / (2.0 * std**2)
        - math.log(truncated_gaussian_mass(std))
    )


def log_likelihood_table(factor: CycleFactor, params: ModelParams) -> np.ndarray:
    """log p(z | s) for s = 0 .. k."""
    k = len(factor.lc_members)
    return np.array([log_cycle_likelihood(factor, s, params) for s in range(k + 1)])


def log_psi(factor: CycleFactor, params: ModelParams) -> float:
    """Log of the configuration-sum normalizer: sum_s C(k, s) p(z | s).

    Constant per cycle for fixed parameters, so it never enters inference;
    it matters only when comparing parameter values in the EM objective.
    """
    k = len(factor.lc_members)
    table = log_likelihood_table(factor, params)
    log_binom = np.array(
        [math.lgamma(k + 1) - math.lgamma(s + 1) - math.lgamma(k - s + 1) for s in range(k + 1)]
    )
    return float(_logsumexp(log_binom + table))


def log_prior_vector(member_priors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(log pi, log pi_bar) with -inf where a prior is exactly 0 or 1."""
    pri = np.asarray(member_priors, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(pri), np.log1p(-pri)


def cycle_conditional(
    factor: CycleFactor, params: ModelParams, cap: int = DEFAULT_LC_CAP
) -> CycleDistribution:
    """Posterior over the cycle's own configurations given its error alone.

    p(mask) is proportional to p(z | popcount(mask)) times the member priors.
    """
    k = len(factor.lc_members)
    if k == 0:
        raise ValueError(f"cycle {factor.cycle_id} has no loop-closure members")
    if k > cap:
        raise CycleCapError(factor.cycle_id, k, cap)
    table = log_likelihood_table(factor, params)
    masks = np.arange(1 << k)
    log_p = table[_popcounts(masks)]
    priors = np.array([params.prior(eid) for eid in factor.lc_members])
    log_in, log_out = log_prior_vector(priors)
    for j in range(k):
        bit = (masks >> j) & 1
        log_p = log_p + np.where(bit == 1, log_out[j], log_in[j])
    log_p -= np.max(log_p)
    p = np.exp(log_p)
    return CycleDistribution(p / p.sum())


def factors_from_basis(g: PoseGraph, basis: CycleBasis) -> tuple[CycleFactor, ...]:
    """One factor per basis cycle, members ordered as they occur in the walk."""
    factors = []
    for cycle_id, cycle in enumerate(basis.cycles):
        members = []
        n_fixed = 0
        for eid, _ in cycle.steps:
            if g.edge_by_id[eid].kind is EdgeKind.LOOP_CLOSURE:
                members.append(eid)
            else:
                n_fixed += 1
        factors.append(CycleFactor(cycle_id, tuple(members), n_fixed, cycle_error(g, cycle)))
    return tuple(factors)


def joint_log_density(
    g: PoseGraph,
    basis: CycleBasis,
    x: Mapping[int, int],
    params: ModelParams,
) -> float:
    """Log of the unnormalized joint: edge priors times cycle likelihoods.

    ``x`` must assign 0 (inlier) or 1 (outlier) to every loop-closure edge.
    """
    total = 0.0
    for edge in g.edges:
        if edge.kind is not EdgeKind.LOOP_CLOSURE:
            continue
        if edge.id not in x:
            raise ValueError(f"configuration is missing loop-closure edge {edge.id}")
        state = x[edge.id]
        if state not in (0, 1):
            raise ValueError(f"edge {edge.id}: state must be 0 or 1, got {state}")
        pi = params.prior(edge.id)
        term = pi if state == 0 else 1.0 - pi
        total += math.log(term) if term > 0 else -math.inf
    for factor in factors_from_basis(g, basis):
        s = sum(x[eid] for eid in factor.lc_members)
        total += log_cycle_likelihood(factor, s, params)
    return total


def _popcounts(masks: np.ndarray) -> np.ndarray:
    counts = np.zeros_like(masks)
    work = masks.copy()
    while np.any(work):
        counts += work & 1
        work >>= 1
    return counts


def _logsumexp(values: np.ndarray) -> float:
    peak = np.max(values)
    if not np.isfinite(peak):
        return float(peak)
    return float(peak + np.log(np.sum(np.exp(values - peak))))
