"""Factor graph over loop-closure edges, plus exact inference by enumeration.

Every loop-closure edge is a binary variable (0 = inlier, 1 = outlier) with a
unary prior factor; every basis cycle that contains at least one loop-closure
edge contributes an evidence factor. Exact posterior marginals are available
by enumerating configurations, which is the reference all approximate
back-ends are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cycles import CycleBasis
from .graph import PoseGraph, loop_closure_edges
from .model import (
    DEFAULT_LC_CAP,
    CycleCapError,
    CycleDistribution,
    CycleFactor,
    ModelParams,
    factors_from_basis,
    log_likelihood_table,
    log_prior_vector,
)

# Exact enumeration is O(2^n); refuse beyond this many coupled variables.
EXACT_ENUMERATION_LIMIT = 22


class InferenceMethod(Enum):
    BP = "bp"
    ADMM = "admm"
    EXACT = "exact"


@dataclass(frozen=True)
class FactorGraph:
    """Variables are loop-closure edge ids; factors are basis cycles."""

    variables: tuple[int, ...]
    factors: tuple[CycleFactor, ...]

    @property
    def var_factors(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {eid: [] for eid in self.variables}
        for f_idx, factor in enumerate(self.factors):
            for eid in factor.lc_members:
                out[eid].append(f_idx)
        return {eid: tuple(v) for eid, v in out.items()}

    @property
    def covered_variables(self) -> tuple[int, ...]:
        in_cycle = {eid for f in self.factors for eid in f.lc_members}
        return tuple(eid for eid in self.variables if eid in in_cycle)


@dataclass(frozen=True)
class InferenceResult:
    """Marginals from any back-end, in a common shape.

    edge_marginals maps every loop-closure edge id to its inlier probability;
    cycle_beliefs align with the factor graph's factors. log_evidence is
    filled in only by exact enumeration.
    """

    edge_marginals: dict[int, float]
    cycle_beliefs: tuple[CycleDistribution, ...]
    converged: bool
    iterations: int
    log_evidence: float = float("nan")


def build_factor_graph(
    g: PoseGraph, basis: CycleBasis, cap: int = DEFAULT_LC_CAP
) -> FactorGraph:
    """Assemble the factor graph; rejects cycles over the member cap."""
    variables = tuple(e.id for e in loop_closure_edges(g))
    factors = []
    for factor in factors_from_basis(g, basis):
        if not factor.lc_members:
            continue  # all-ego cycles carry no free variables
        if len(factor.lc_members) > cap:
            raise CycleCapError(factor.cycle_id, len(factor.lc_members), cap)
        factors.append(factor)
    return FactorGraph(variables, tuple(factors))


def _connected_components(fg: FactorGraph) -> list[tuple[list[int], list[int]]]:
    """(variable ids, factor indices) per connected block of the factor graph."""
    var_factors = fg.var_factors
    seen_vars: set[int] = set()
    seen_factors: set[int] = set()
    components = []
    for start in fg.covered_variables:
        if start in seen_vars:
            continue
        vars_here: list[int] = []
        factors_here: list[int] = []
        stack = [start]
        seen_vars.add(start)
        while stack:
            eid = stack.pop()
            vars_here.append(eid)
            for f_idx in var_factors[eid]:
                if f_idx in seen_factors:
                    continue
                seen_factors.add(f_idx)
                factors_here.append(f_idx)
                for other in fg.factors[f_idx].lc_members:
                    if other not in seen_vars:
                        seen_vars.add(other)
                        stack.append(other)
        components.append((sorted(vars_here), sorted(factors_here)))
    return components


def exact_marginals(
    fg: FactorGraph, params: ModelParams, limit: int = EXACT_ENUMERATION_LIMIT
) -> InferenceResult:
    """Posterior marginals by enumeration, one connected block at a time.

    Blocks of the factor graph are independent, so each is enumerated
    separately; the per-block size limit is what matters. Edges outside
    every cycle factor keep their prior.
    """
    marginals: dict[int, float] = {
        eid: params.prior(eid) for eid in fg.variables
    }
    beliefs: list[CycleDistribution | None] = [None] * len(fg.factors)
    log_z = 0.0
    for var_ids, factor_indices in _connected_components(fg):
        n = len(var_ids)
        if n > limit:
            raise ValueError(
                f"exact enumeration over a {n}-edge block exceeds the limit of {limit}"
            )
        position = {eid: i for i, eid in enumerate(var_ids)}
        masks = np.arange(1 << n, dtype=np.int64)
        log_p = np.zeros(1 << n)
        for eid in var_ids:
            log_in, log_out = log_prior_vector(np.array([params.prior(eid)]))
            bit = (masks >> position[eid]) & 1
            log_p = log_p + np.where(bit == 1, log_out[0], log_in[0])
        local_masks = {}
        for f_idx in factor_indices:
            factor = fg.factors[f_idx]
            table = log_likelihood_table(factor, params)
            s = np.zeros(1 << n, dtype=np.int64)
            local = np.zeros(1 << n, dtype=np.int64)
            for j, eid in enumerate(factor.lc_members):
                bit = (masks >> position[eid]) & 1
                s += bit
                local += bit << j
            log_p = log_p + table[s]
            local_masks[f_idx] = local
        peak = float(np.max(log_p))
        weights = np.exp(log_p - peak)
        total = float(weights.sum())
        prob = weights / total
        log_z += peak + np.log(total)
        for eid in var_ids:
            bit = (masks >> position[eid]) & 1
            marginals[eid] = float(prob[bit == 0].sum())
        for f_idx in factor_indices:
            factor = fg.factors[f_idx]
            k = len(factor.lc_members)
            values = np.bincount(local_masks[f_idx], weights=prob, minlength=1 << k)
            beliefs[f_idx] = CycleDistribution(values / values.sum())

    return InferenceResult(
        marginals,
        tuple(beliefs),  # type: ignore[arg-type]
        True,
        1,
        log_evidence=log_z,
    )


def exact_log_evidence(fg: FactorGraph, params: ModelParams) -> float:
    """log of the joint density summed over all configurations.

    Prior terms of uncoupled edges each sum to exactly 1, so only the
    coupled block matters.
    """
    return exact_marginals(fg, params).log_evidence
