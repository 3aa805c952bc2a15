"""Loopy belief propagation on the edge/cycle factor graph.

Messages are 2-vectors over {inlier, outlier}, normalized to sum 1. Updates
run in a fixed deterministic schedule (factors in id order, then variables
in id order) and are damped: new = damping * old + (1 - damping) * computed.
Cycle factors depend on a configuration only through its outlier count, so
factor-to-variable messages marginalize via an O(k^2) counting convolution
instead of 2^(k-1) enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .factorgraph import FactorGraph, InferenceResult
from .model import CycleDistribution, ModelParams, log_likelihood_table

MESSAGE_FLOOR = 1e-300

DEFAULT_DAMPING = 0.5
DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-6


@dataclass
class MessageState:
    """Mutable message tables for one BP run.

    to_var[(f_idx, eid)] and to_factor[(eid, f_idx)] are normalized 2-vectors.
    """

    to_var: dict[tuple[int, int], np.ndarray]
    to_factor: dict[tuple[int, int], np.ndarray]


def prior_message(params: ModelParams, edge_id: int) -> np.ndarray:
    pi = params.prior(edge_id)
    return np.array([pi, 1.0 - pi])


def likelihood_weights(factor, params: ModelParams) -> np.ndarray:
    """exp of the per-count log-likelihoods, rescaled by the max.

    Beliefs are invariant to positive per-factor scaling, so the shift only
    guards against underflow.
    """
    table = log_likelihood_table(factor, params)
    return np.exp(table - table.max())


def _normalize(vec: np.ndarray) -> np.ndarray:
    clipped = np.maximum(vec, MESSAGE_FLOOR)
    return clipped / clipped.sum()


def var_to_factor(
    state: MessageState,
    fg: FactorGraph,
    params: ModelParams,
    edge_id: int,
    f_idx: int,
) -> np.ndarray:
    """Product of the prior and all other incoming factor messages."""
    out = prior_message(params, edge_id).copy()
    for other in fg.var_factors[edge_id]:
        if other != f_idx:
            out = out * state.to_var[(other, edge_id)]
    return _normalize(out)


def factor_to_var(
    state: MessageState,
    fg: FactorGraph,
    params: ModelParams,
    f_idx: int,
    edge_id: int,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Marginalize the cycle factor against the other members' messages.

    Convolves the incoming Bernoulli messages into a distribution over the
    other members' outlier count, then contracts with the likelihood table.
    """
    factor = fg.factors[f_idx]
    if weights is None:
        weights = likelihood_weights(factor, params)
    poly = np.array([1.0])
    for member in factor.lc_members:
        if member == edge_id:
            continue
        n0, n1 = state.to_factor[(member, f_idx)]
        nxt = np.zeros(poly.shape[0] + 1)
        nxt[:-1] += poly * n0
        nxt[1:] += poly * n1
        poly = nxt
    out = np.array(
        [
            float(poly @ weights[: poly.shape[0]]),
            float(poly @ weights[1 : poly.shape[0] + 1]),
        ]
    )
    return _normalize(out)


def factor_to_var_enumerated(
    state: MessageState,
    fg: FactorGraph,
    params: ModelParams,
    f_idx: int,
    edge_id: int,
) -> np.ndarray:
    """Reference marginalization by explicit 2^(k-1) enumeration."""
    factor = fg.factors[f_idx]
    weights = likelihood_weights(factor, params)
    others = [m for m in factor.lc_members if m != edge_id]
    out = np.zeros(2)
    for value in (0, 1):
        total = 0.0
        for mask in range(1 << len(others)):
            term = 1.0
            s = value
            for j, member in enumerate(others):
                bit = (mask >> j) & 1
                term *= state.to_factor[(member, f_idx)][bit]
                s += bit
            total += term * weights[s]
        out[value] = total
    return _normalize(out)


def init_messages(fg: FactorGraph, params: ModelParams) -> MessageState:
    to_var = {}
    to_factor = {}
    for f_idx, factor in enumerate(fg.factors):
        for eid in factor.lc_members:
            to_var[(f_idx, eid)] = np.array([0.5, 0.5])
            to_factor[(eid, f_idx)] = prior_message(params, eid)
    return MessageState(to_var, to_factor)


def run_bp(
    fg: FactorGraph,
    params: ModelParams,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    damping: float = DEFAULT_DAMPING,
) -> InferenceResult:
    """Damped loopy BP; non-convergence yields best-effort beliefs."""
    state = init_messages(fg, params)
    weights = [likelihood_weights(f, params) for f in fg.factors]
    var_factors = fg.var_factors
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        delta = 0.0
        for f_idx, factor in enumerate(fg.factors):
            for eid in factor.lc_members:
                fresh = factor_to_var(state, fg, params, f_idx, eid, weights[f_idx])
                old = state.to_var[(f_idx, eid)]
                blended = _normalize(damping * old + (1.0 - damping) * fresh)
                delta = max(delta, float(np.max(np.abs(blended - old))))
                state.to_var[(f_idx, eid)] = blended
        for eid in fg.variables:
            for f_idx in var_factors[eid]:
                fresh = var_to_factor(state, fg, params, eid, f_idx)
                old = state.to_factor[(eid, f_idx)]
                blended = _normalize(damping * old + (1.0 - damping) * fresh)
                delta = max(delta, float(np.max(np.abs(blended - old))))
                state.to_factor[(eid, f_idx)] = blended
        if delta < tol:
            converged = True
            break

    marginals: dict[int, float] = {}
    for eid in fg.variables:
        belief = prior_message(params, eid).copy()
        for f_idx in var_factors[eid]:
            belief = belief * state.to_var[(f_idx, eid)]
        belief = _normalize(belief)
        marginals[eid] = float(belief[0])

    beliefs = []
    for f_idx, factor in enumerate(fg.factors):
        k = len(factor.lc_members)
        masks = np.arange(1 << k)
        log_b = np.zeros(1 << k)
        counts = np.zeros(1 << k, dtype=int)
        for j, member in enumerate(factor.lc_members):
            bit = (masks >> j) & 1
            counts += bit
            msg = np.maximum(state.to_factor[(member, f_idx)], MESSAGE_FLOOR)
            log_b += np.where(bit == 1, np.log(msg[1]), np.log(msg[0]))
        log_b += np.log(np.maximum(weights[f_idx][counts], MESSAGE_FLOOR))
        log_b -= log_b.max()
        b = np.exp(log_b)
        beliefs.append(CycleDistribution(b / b.sum()))

    return InferenceResult(marginals, tuple(beliefs), converged, iterations)
