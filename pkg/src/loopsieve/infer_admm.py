"""Consensus ADMM over per-cycle distributions.

Each cycle keeps a local distribution v_c over its 2^k configurations,
pulled toward the data-only conditional v_hat_c, while the marginal inlier
probability each cycle implies for a shared edge is forced to agree on a
global consensus value w_e in [0, 1]:

    minimize   sum_c ||v_c - v_hat_c||^2
    subject to P_c v_c = w_c for every cycle c, 0 <= w <= 1,
               every v_c on the probability simplex,

where row e of P_c indicates the configurations in which edge e is an
inlier. The cycle subproblems are strongly convex QPs over the simplex,
solved by accelerated projected gradient with an exact sort-based simplex
projection; cycles of equal member count are solved in one vectorized
batch. The penalty parameter adapts from the primal/dual residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .factorgraph import FactorGraph, InferenceResult
from .model import CycleDistribution, ModelParams, cycle_conditional


@dataclass(frozen=True)
class AdmmOptions:
    """Solver knobs. rho_rule picks the penalty schedule:

    - "balanced": grow rho when the primal residual dominates, shrink when
      the dual residual dominates (the standard residual-balancing rule;
      default because it is the one that actually drives consensus).
    - "printed": the transposed variant implemented by :func:`update_rho`.
    - "fixed": keep rho at rho0.
    """

    rho0: float = 1.0
    max_iters: int = 500
    tol: float = 1e-6
    scale_tol: bool = True
    mu: float = 10.0
    tau_incr: float = 2.0
    tau_decr: float = 2.0
    rho_min: float = 1e-4
    rho_max: float = 1e4
    rho_rule: str = "balanced"
    # Adapting rho forever can limit-cycle near the solution; after this many
    # iterations the penalty stays fixed, restoring plain (convergent) ADMM.
    rho_freeze_after: int = 100
    subproblem_tol: float = 1e-8
    subproblem_max_iters: int = 10000
    record_trace: bool = False

    def __post_init__(self) -> None:
        if self.rho_rule not in ("balanced", "printed", "fixed"):
            raise ValueError(f"unknown rho_rule {self.rho_rule!r}")


@dataclass(frozen=True)
class AdmmIterationStats:
    iteration: int
    primal_residual: float
    dual_residual: float
    rho: float
    max_simplex_gap: float  # worst |1^T v - 1| across cycles
    min_v: float
    w_min: float
    w_max: float


@dataclass(frozen=True)
class AdmmResult(InferenceResult):
    rho_final: float = 1.0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    trace: tuple[AdmmIterationStats, ...] = field(default_factory=tuple)


def marginalization_matrix(k: int) -> np.ndarray:
    """(k, 2^k) indicator rows: row j is 1 where bit j of the mask is 0."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    masks = np.arange(1 << k)
    rows = np.zeros((k, 1 << k))
    for j in range(k):
        rows[j, ((masks >> j) & 1) == 0] = 1.0
    return rows


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1}."""
    return _project_rows(np.asarray(v, dtype=float)[None, :])[0]


def _project_rows(matrix: np.ndarray) -> np.ndarray:
    n = matrix.shape[1]
    ordered = -np.sort(-matrix, axis=1)
    cumulative = (np.cumsum(ordered, axis=1) - 1.0) / np.arange(1, n + 1)
    support = np.sum(ordered > cumulative, axis=1) - 1
    threshold = cumulative[np.arange(matrix.shape[0]), support]
    return np.maximum(matrix - threshold[:, None], 0.0)


def _gradient(
    v: np.ndarray,
    v_hat: np.ndarray,
    y_p: np.ndarray,
    w_rows: np.ndarray,
    rho: float,
    p_matrix: np.ndarray,
) -> np.ndarray:
    return 2.0 * (v - v_hat) + y_p + rho * ((v @ p_matrix.T) - w_rows) @ p_matrix


def _solve_batch(
    v0: np.ndarray,
    v_hat: np.ndarray,
    y: np.ndarray,
    w_rows: np.ndarray,
    rho: float,
    p_matrix: np.ndarray,
    lam_max: float,
    tol: float,
    max_iters: int,
) -> np.ndarray:
    """Accelerated projected gradient on a batch of simplex QPs.

    The objective is 2-strongly convex with curvature at most
    2 + rho * lam_max(P P^T), so a constant-momentum scheme converges
    linearly. Stops on the projected-gradient residual.
    """
    lipschitz = 2.0 + rho * lam_max
    kappa = np.sqrt(2.0 / lipschitz)
    momentum = (1.0 - kappa) / (1.0 + kappa)
    y_p = y @ p_matrix
    x = v0
    z = v0
    for _ in range(max_iters):
        grad = _gradient(z, v_hat, y_p, w_rows, rho, p_matrix)
        x_new = _project_rows(z - grad / lipschitz)
        z = x_new + momentum * (x_new - x)
        residual = float(np.max(np.abs(x_new - x)))
        x = x_new
        if residual <= tol:
            grad = _gradient(x, v_hat, y_p, w_rows, rho, p_matrix)
            mapped = _project_rows(x - grad / lipschitz)
            if float(np.max(np.abs(mapped - x))) <= tol:
                break
            z = x
    return x


def solve_cycle_subproblem(
    v_hat: np.ndarray,
    y: np.ndarray,
    w_c: np.ndarray,
    rho: float,
    tol: float = 1e-8,
    max_iters: int = 10000,
) -> np.ndarray:
    """Minimize ||v - v_hat||^2 + y^T P v + (rho/2)||P v - w_c||^2 on the simplex."""
    v_hat = np.asarray(v_hat, dtype=float)
    k = int(v_hat.shape[0]).bit_length() - 1
    p_matrix = marginalization_matrix(k)
    lam = float(np.linalg.eigvalsh(p_matrix @ p_matrix.T).max())
    v0 = _project_rows(v_hat[None, :])
    out = _solve_batch(
        v0,
        v_hat[None, :],
        np.asarray(y, dtype=float)[None, :],
        np.asarray(w_c, dtype=float)[None, :],
        rho,
        p_matrix,
        lam,
        tol,
        max_iters,
    )
    return out[0]


def update_w(
    marginals: list[np.ndarray],
    duals: list[np.ndarray],
    members_pos: list[np.ndarray],
    rho: float,
    w_prev: np.ndarray,
) -> np.ndarray:
    """Average the per-cycle marginals (plus scaled duals) and clamp to [0, 1].

    Edges in no cycle keep their previous value.
    """
    numerator = np.zeros_like(w_prev)
    counts = np.zeros(w_prev.shape[0])
    for marg, y, pos in zip(marginals, duals, members_pos):
        np.add.at(numerator, pos, marg + y / rho)
        np.add.at(counts, pos, 1.0)
    w = w_prev.copy()
    covered = counts > 0
    w[covered] = np.clip(numerator[covered] / counts[covered], 0.0, 1.0)
    return w


def update_duals(
    duals: list[np.ndarray],
    marginals: list[np.ndarray],
    members_pos: list[np.ndarray],
    w: np.ndarray,
    rho: float,
) -> list[np.ndarray]:
    """Dual ascent: y_c += rho (P_c v_c - w_c), with the fresh w."""
    return [
        y + rho * (marg - w[pos])
        for y, marg, pos in zip(duals, marginals, members_pos)
    ]


def residuals(
    marginals: list[np.ndarray],
    members_pos: list[np.ndarray],
    w: np.ndarray,
    w_prev: np.ndarray,
    rho: float,
) -> tuple[float, float]:
    """Primal: sum of squared consensus gaps. Dual: rho^2 times the squared
    w change, counted once per (edge, cycle) incidence."""
    primal = 0.0
    counts = np.zeros(w.shape[0])
    for marg, pos in zip(marginals, members_pos):
        primal += float(np.sum((marg - w[pos]) ** 2))
        np.add.at(counts, pos, 1.0)
    dual = float(rho**2 * np.sum(counts * (w - w_prev) ** 2))
    return primal, dual


def update_rho(
    rho: float,
    r: float,
    t: float,
    mu: float = 10.0,
    tau_incr: float = 2.0,
    tau_decr: float = 2.0,
    rho_min: float = 1e-4,
    rho_max: float = 1e4,
) -> float:
    """Penalty schedule: grow when r <= mu t, shrink when t <= mu r, and
    leave rho unchanged when both tests fire at once.

    Note the direction: this grows rho only when the dual residual
    dominates. The consensus iteration itself defaults to the opposite,
    residual-balancing direction (see AdmmOptions.rho_rule), which is what
    makes the primal residual contract.
    """
    if mu <= 1.0 or tau_incr <= 1.0 or tau_decr <= 1.0:
        raise ValueError("mu, tau_incr and tau_decr must all exceed 1")
    grow = r <= mu * t
    shrink = t <= mu * r
    if grow and not shrink:
        rho = rho * tau_incr
    elif shrink and not grow:
        rho = rho / tau_decr
    return float(np.clip(rho, rho_min, rho_max))


def _next_rho(rho: float, r: float, t: float, opts: AdmmOptions) -> float:
    if opts.rho_rule == "fixed":
        return rho
    if opts.rho_rule == "printed":
        return update_rho(
            rho, r, t,
            mu=opts.mu, tau_incr=opts.tau_incr, tau_decr=opts.tau_decr,
            rho_min=opts.rho_min, rho_max=opts.rho_max,
        )
    # "balanced": swap the residual roles so rho grows when the primal
    # residual dominates and shrinks when the dual residual dominates.
    return update_rho(
        rho, t, r,
        mu=opts.mu, tau_incr=opts.tau_incr, tau_decr=opts.tau_decr,
        rho_min=opts.rho_min, rho_max=opts.rho_max,
    )


def run_admm(
    fg: FactorGraph,
    params: ModelParams,
    opts: AdmmOptions | None = None,
) -> AdmmResult:
    """Consensus ADMM until both residuals fall under tolerance.

    Returns the consensus inlier probabilities w as edge marginals and the
    per-cycle distributions v_c as cycle beliefs.
    """
    opts = opts or AdmmOptions()
    variables = fg.variables
    var_index = {eid: i for i, eid in enumerate(variables)}
    n_edges = len(variables)
    n_factors = len(fg.factors)

    groups: dict[int, list[int]] = {}
    for f_idx, factor in enumerate(fg.factors):
        groups.setdefault(len(factor.lc_members), []).append(f_idx)

    p_matrices = {k: marginalization_matrix(k) for k in groups}
    lam_max = {
        k: float(np.linalg.eigvalsh(p @ p.T).max()) for k, p in p_matrices.items()
    }
    v_batches: dict[int, np.ndarray] = {}
    v_hat_batches: dict[int, np.ndarray] = {}
    y_batches: dict[int, np.ndarray] = {}
    pos_batches: dict[int, np.ndarray] = {}
    for k, f_indices in groups.items():
        hats = np.stack(
            [cycle_conditional(fg.factors[i], params).values for i in f_indices]
        )
        v_hat_batches[k] = hats
        v_batches[k] = hats.copy()
        y_batches[k] = np.zeros((len(f_indices), k))
        pos_batches[k] = np.array(
            [[var_index[eid] for eid in fg.factors[i].lc_members] for i in f_indices],
            dtype=int,
        )

    def flatten(per_group: dict[int, np.ndarray]) -> list[np.ndarray]:
        flat: list[np.ndarray] = [np.empty(0)] * n_factors
        for k, f_indices in groups.items():
            for row, f_idx in enumerate(f_indices):
                flat[f_idx] = per_group[k][row]
        return flat

    members_pos = flatten(pos_batches)
    rho = opts.rho0

    # Warm start w at the average of the incident data-only marginals,
    # and uncovered edges at their prior.
    w = np.array([params.prior(eid) for eid in variables])
    marginals = flatten({k: v_hat_batches[k] @ p_matrices[k].T for k in groups})
    duals = flatten(y_batches)
    w = update_w(marginals, duals, members_pos, rho, w)

    n_rows = sum(len(f.lc_members) for f in fg.factors)
    eps = opts.tol * (np.sqrt(max(n_rows, 1)) if opts.scale_tol else 1.0)

    converged = False
    iterations = 0
    primal = float("nan")
    dual = float("nan")
    trace: list[AdmmIterationStats] = []
    for iterations in range(1, opts.max_iters + 1):
        for k, f_indices in groups.items():
            w_rows = w[pos_batches[k]]
            v_batches[k] = _solve_batch(
                v_batches[k],
                v_hat_batches[k],
                y_batches[k],
                w_rows,
                rho,
                p_matrices[k],
                lam_max[k],
                opts.subproblem_tol,
                opts.subproblem_max_iters,
            )
        marginals = flatten({k: v_batches[k] @ p_matrices[k].T for k in groups})
        duals = flatten(y_batches)

        w_prev = w
        w = update_w(marginals, duals, members_pos, rho, w_prev)
        duals = update_duals(duals, marginals, members_pos, w, rho)
        for k, f_indices in groups.items():
            y_batches[k] = np.stack([duals[f_idx] for f_idx in groups[k]])

        primal, dual = residuals(marginals, members_pos, w, w_prev, rho)
        if opts.record_trace:
            sums = [float(np.abs(v_batches[k].sum(axis=1) - 1.0).max()) for k in groups]
            mins = [float(v_batches[k].min()) for k in groups]
            trace.append(
                AdmmIterationStats(
                    iterations,
                    primal,
                    dual,
                    rho,
                    max(sums),
                    min(mins),
                    float(w.min()) if n_edges else 0.0,
                    float(w.max()) if n_edges else 0.0,
                )
            )
        if primal <= eps and dual <= eps:
            converged = True
            break
        if iterations >= opts.rho_freeze_after:
            continue
        new_rho = _next_rho(rho, primal, dual, opts)
        if new_rho != rho:
            scale = new_rho / rho
            for k in groups:
                y_batches[k] = y_batches[k] * scale
            rho = new_rho

    marginal_map = {eid: float(w[var_index[eid]]) for eid in variables}
    v_flat = flatten(v_batches)
    beliefs = []
    for row in v_flat:
        total = row.sum()
        beliefs.append(CycleDistribution(np.maximum(row, 0.0) / total))
    return AdmmResult(
        edge_marginals=marginal_map,
        cycle_beliefs=tuple(beliefs),
        converged=converged,
        iterations=iterations,
        rho_final=rho,
        primal_residual=primal,
        dual_residual=dual,
        trace=tuple(trace),
    )
