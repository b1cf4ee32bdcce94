"""Three-block ADMM for total-variation regularized tensor-on-scalar fits.

The fitted means theta (one row per subject) are split against two copies:
eta, constrained to the span of the design, and mu, carrying the smoothing
penalty. All blocks are n-by-M matrices; the Kronecker-extended operators
of the stacked formulation act row-block-wise, so nothing of size nM is
ever materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fused import GflState, plan_for, prox_rows
from .graphs import PenaltyGraph, incidence
from .tensor import Dataset, SpanProjector, gamma_from_theta, make_projector


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs of the ADMM fit.

    ``rho`` is the splitting penalty (the common choice 1 is the default),
    distinct from the inverse scaling factor of the incidence matrix used
    in the theory diagnostics. ``batch_size`` only groups the per-subject
    prox calls; any grouping gives identical results. Random initialization
    is drawn from numpy's default generator (PCG64) seeded with ``seed``,
    in the order theta, eta, mu, so fits are reproducible bit for bit.
    """

    lam: float
    rho: float = 1.0
    tol: float = 1e-5
    max_iter: int = 2000
    batch_size: int | None = None
    prox_tol: float | None = None
    prox_max_iter: int = 5000
    seed: int = 0
    warm_theta: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 when given")


@dataclass
class AdmmState:
    """Primal blocks, scaled duals, and the per-row prox warm state."""

    theta: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    U: np.ndarray
    V: np.ndarray
    iteration: int = 0
    gfl: GflState | None = None


@dataclass(frozen=True)
class TvtrFit:
    """Fitted coefficient maps with the convergence record."""

    gamma: np.ndarray  # p x M
    theta: np.ndarray  # n x M fitted means
    trace: np.ndarray  # iterations x 3: rel change, feasibility, objective
    converged: bool
    iterations: int

    @property
    def rel_change(self) -> np.ndarray:
        return self.trace[:, 0]

    @property
    def feasibility(self) -> np.ndarray:
        return self.trace[:, 1]

    @property
    def objective_trace(self) -> np.ndarray:
        return self.trace[:, 2]


def objective(
    X: np.ndarray,
    Y: np.ndarray,
    gamma: np.ndarray,
    lam: float,
    graph: PenaltyGraph,
) -> float:
    """Value of the penalized least-squares loss at coefficient maps."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if X.shape[1] != gamma.shape[0] or Y.shape[1] != gamma.shape[1]:
        raise ValueError("shape mismatch between X, Y, and gamma")
    if Y.shape[1] != graph.node_count:
        raise ValueError("outcome width does not match graph node count")
    fitted = X @ gamma
    rss = 0.5 * float(np.sum((Y - fitted) ** 2))
    if lam == 0.0 or graph.edge_count == 0:
        return rss
    diffs = incidence(graph).edge_diff(fitted)
    return rss + lam * float(np.sum(np.abs(diffs)))


def theta_update(
    Y: np.ndarray,
    eta: np.ndarray,
    mu: np.ndarray,
    U: np.ndarray,
    V: np.ndarray,
    rho: float,
) -> np.ndarray:
    """Closed-form minimizer of the quadratic theta subproblem."""
    return (Y + rho * (eta - U + mu - V)) / (2.0 * rho + 1.0)


def eta_update(
    theta: np.ndarray, U: np.ndarray, projector: SpanProjector
) -> np.ndarray:
    """Project theta + U onto the span of the design, row-block-wise."""
    return projector.apply(theta + U)


def mu_update(
    theta: np.ndarray,
    V: np.ndarray,
    lam: float,
    rho: float,
    graph: PenaltyGraph,
    batch_size: int | None = None,
    state: GflState | None = None,
    tol: float = 1e-5,
    prox_tol: float | None = None,
    prox_max_iter: int = 5000,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise graph prox of theta + V at penalty lam / rho.

    Rows are independent (the extended incidence matrix has no edges across
    subjects), so solving in batches of any size reproduces the joint solve
    exactly. Returns (mu, kkt bounds, iteration counts per row).
    """
    W = theta + V
    n = W.shape[0]
    plan = state.plan if state is not None else plan_for(graph)
    if state is None:
        state = GflState(plan, n, W)
    if prox_tol is not None:
        tols = np.full(n, float(prox_tol))
    else:
        # tie the inner certificate target to the outer tolerance and scale
        tols = 0.1 * tol * (1.0 + np.max(np.abs(W), axis=1, initial=0.0))
    if batch_size is None or batch_size >= n:
        return prox_rows(
            np.ascontiguousarray(W), lam / rho, plan, state, tols,
            prox_max_iter,
        )
    mu = np.empty_like(W)
    res = np.empty(n)
    iters = np.empty(n, dtype=np.int64)
    for lo in range(0, n, batch_size):
        rows = np.arange(lo, min(lo + batch_size, n))
        sub = GflState(plan, 0)
        sub.Z = state.Z[rows]
        sub.U = state.U[rows]
        sub.B = state.B[rows]
        out, r, it = prox_rows(
            np.ascontiguousarray(W[rows]), lam / rho, plan, sub,
            tols[rows], prox_max_iter,
        )
        mu[rows] = out
        res[rows] = r
        iters[rows] = it
        state.Z[rows] = sub.Z
        state.U[rows] = sub.U
        state.B[rows] = sub.B
    return mu, res, iters


def fit(
    dataset: Dataset,
    graph: PenaltyGraph,
    config: SolverConfig,
) -> TvtrFit:
    """Run the ADMM to convergence and back-substitute coefficient maps.

    Stops when both the relative change of theta and the relative residual
    of theta against the design span fall below ``config.tol``; hitting
    ``max_iter`` first returns the fit flagged unconverged with its full
    trace. The objective trace is evaluated at the projected iterate, which
    is always representable by coefficient maps.
    """
    X, Y = dataset.X, dataset.Y
    n, M = Y.shape
    if graph.node_count != M:
        raise ValueError(
            f"graph has {graph.node_count} nodes but outcomes have {M} entries"
        )
    projector = make_projector(X)
    if projector.rank < dataset.p:
        from .tensor import RankDeficientError

        raise RankDeficientError(
            "design matrix is rank deficient; drop collinear columns"
        )
    plan = plan_for(graph)
    op = incidence(graph)
    # one factorization serves every per-iteration coefficient solve
    from scipy.linalg import solve_triangular

    Qx, Rx = np.linalg.qr(X)

    rng = np.random.default_rng(config.seed)
    theta = rng.standard_normal((n, M))
    eta = rng.standard_normal((n, M))
    mu = rng.standard_normal((n, M))
    if config.warm_theta is not None:
        theta = np.array(config.warm_theta, dtype=float, copy=True)
        eta = projector.apply(theta)
        mu = theta.copy()
    U = np.zeros((n, M))
    V = np.zeros((n, M))
    state = AdmmState(theta=theta, eta=eta, mu=mu, U=U, V=V)
    state.gfl = GflState(plan, n, theta)

    trace = np.empty((config.max_iter, 3))
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        theta_new = theta_update(Y, state.eta, state.mu, state.U, state.V, config.rho)
        state.eta = eta_update(theta_new, state.U, projector)
        state.mu, _, _ = mu_update(
            theta_new, state.V, config.lam, config.rho, graph,
            batch_size=config.batch_size, state=state.gfl,
            tol=config.tol, prox_tol=config.prox_tol,
            prox_max_iter=config.prox_max_iter,
        )
        state.U = state.U + theta_new - state.eta
        state.V = state.V + theta_new - state.mu

        denom = np.linalg.norm(state.theta)
        rel_change = float(
            np.linalg.norm(theta_new - state.theta) / denom
        ) if denom > 0 else np.inf
        feas = float(
            np.linalg.norm(projector.apply_complement(theta_new))
            / max(1.0, np.linalg.norm(theta_new))
        )
        state.theta = theta_new
        state.iteration = it

        gamma_it = solve_triangular(Rx, Qx.T @ theta_new, lower=False)
        fitted = X @ gamma_it
        obj = 0.5 * float(np.sum((Y - fitted) ** 2))
        if config.lam > 0 and graph.edge_count > 0:
            obj += config.lam * float(np.sum(np.abs(op.edge_diff(fitted))))
        trace[it - 1] = (rel_change, feas, obj)

        if max(rel_change, feas) < config.tol:
            converged = True
            break

    gamma = gamma_from_theta(X, state.theta)
    return TvtrFit(
        gamma=gamma,
        theta=state.theta,
        trace=trace[:it].copy(),
        converged=converged,
        iterations=it,
    )


def convergence_trace(fit_result: TvtrFit) -> np.ndarray:
    """Per-iteration (relative change, feasibility, objective) series."""
    return fit_result.trace
