"""Model selection and theory diagnostics.

Cross-validation scores held-out prediction error (the quantity available
in practice), bootstrap bands resample whole subjects, and the diagnostics
evaluate the quantities appearing in the high-probability prediction bound:
the inverse scaling factor of the incidence matrix, the degree-based lower
bound on the compatibility factor, and the recommended penalty level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import PenaltyGraph, incidence
from .solver import SolverConfig, fit
from .tensor import Dataset, RankDeficientError, design_rank, gamma_from_theta

DENSE_CUTOFF = 5000


@dataclass(frozen=True)
class CvReport:
    """Cross-validation grid search record."""

    grid: tuple[float, ...]
    fold_mse: np.ndarray  # len(grid) x folds
    mean_mse: np.ndarray  # len(grid)
    selected: float
    seed: int

    @property
    def folds(self) -> int:
        return self.fold_mse.shape[1]


@dataclass(frozen=True)
class BootstrapBand:
    """Entrywise quantile envelope of coefficient maps over resamples."""

    lower: np.ndarray  # p x M
    upper: np.ndarray  # p x M
    B: int
    alpha: float


@dataclass(frozen=True)
class TheoryDiag:
    """Graph quantities entering the prediction-error bound.

    ``bound_components`` holds the three right-hand-side terms of the bound
    when a truth was supplied to evaluate them, else None.
    """

    inv_scaling: float
    max_degree: int
    lambda_rec: float
    bound_components: tuple[float, float, float] | None = None


def _fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Random balanced fold labels per subject (deterministic in seed)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    labels = np.empty(n, dtype=np.int64)
    for k in range(folds):
        labels[perm[k::folds]] = k
    return labels


def cross_validate(
    dataset: Dataset,
    graph: PenaltyGraph,
    grid,
    folds: int = 4,
    seed: int = 0,
    config: SolverConfig | None = None,
    estimator=None,
) -> CvReport:
    """Grid search over the penalty by k-fold prediction error.

    Subjects are partitioned at random by ``seed``; for each candidate the
    model is fitted on the training folds and scored by the mean squared
    prediction error on the held-out subjects. Ties select the smaller
    penalty. ``estimator`` defaults to the ADMM fit and must map
    (dataset, graph, lam) to coefficient maps.
    """
    grid = tuple(float(g) for g in grid)
    if len(grid) == 0:
        raise ValueError("grid must be non-empty")
    if any(g < 0 for g in grid):
        raise ValueError("grid values must be >= 0")
    n = dataset.n
    if n < folds:
        raise ValueError(f"need at least {folds} subjects for {folds} folds")
    if estimator is None:
        base = config if config is not None else SolverConfig(lam=0.0)

        def estimator(ds, g, lam):
            cfg = SolverConfig(
                lam=lam, rho=base.rho, tol=base.tol, max_iter=base.max_iter,
                batch_size=base.batch_size, prox_tol=base.prox_tol,
                prox_max_iter=base.prox_max_iter, seed=base.seed,
            )
            return fit(ds, g, cfg).gamma

    labels = _fold_assignment(n, folds, seed)
    fold_mse = np.empty((len(grid), folds))
    for k in range(folds):
        val = labels == k
        train = ~val
        X_tr, Y_tr = dataset.X[train], dataset.Y[train]
        if design_rank(X_tr) < dataset.p:
            raise RankDeficientError(
                f"training design in fold {k} is rank deficient"
            )
        ds_tr = Dataset(X=X_tr, Y=Y_tr, layout=dataset.layout)
        X_va, Y_va = dataset.X[val], dataset.Y[val]
        for gi, lam in enumerate(grid):
            gamma = estimator(ds_tr, graph, lam)
            resid = Y_va - X_va @ gamma
            fold_mse[gi, k] = float(np.sum(resid**2)) / (
                X_va.shape[0] * dataset.layout.M
            )
    mean_mse = fold_mse.mean(axis=1)
    best = min(range(len(grid)), key=lambda i: (mean_mse[i], grid[i]))
    return CvReport(
        grid=grid,
        fold_mse=fold_mse,
        mean_mse=mean_mse,
        selected=grid[best],
        seed=seed,
    )


def bootstrap_bands(
    dataset: Dataset,
    graph: PenaltyGraph,
    lam: float,
    B: int = 100,
    alpha: float = 0.05,
    seed: int = 0,
    config: SolverConfig | None = None,
) -> BootstrapBand:
    """Entrywise quantile bands of the coefficient maps over B resamples.

    Whole subjects (rows of X and Y jointly) are drawn with replacement.
    Draws with a rank-deficient design are redrawn; more than 10 * B failed
    draws abort. Quantiles are empirical order statistics (inverse ECDF),
    so B = 2 yields min/max bands.
    """
    if B < 2:
        raise ValueError("need at least 2 resamples")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    base = config if config is not None else SolverConfig(lam=lam)
    rng = np.random.default_rng(seed)
    n = dataset.n
    gammas = np.empty((B, dataset.p, dataset.layout.M))
    failures = 0
    done = 0
    while done < B:
        rows = rng.integers(0, n, size=n)
        X_b = dataset.X[rows]
        if design_rank(X_b) < dataset.p:
            failures += 1
            if failures > 10 * B:
                raise RankDeficientError(
                    f"bootstrap aborted: {failures} rank-deficient resamples"
                )
            continue
        ds_b = Dataset(X=X_b, Y=dataset.Y[rows], layout=dataset.layout)
        cfg = SolverConfig(
            lam=lam, rho=base.rho, tol=base.tol, max_iter=base.max_iter,
            batch_size=base.batch_size, prox_tol=base.prox_tol,
            prox_max_iter=base.prox_max_iter, seed=base.seed,
        )
        gammas[done] = fit(ds_b, graph, cfg).gamma
        done += 1
    lower = np.quantile(gammas, alpha / 2, axis=0, method="inverted_cdf")
    upper = np.quantile(gammas, 1 - alpha / 2, axis=0, method="inverted_cdf")
    return BootstrapBand(lower=lower, upper=upper, B=B, alpha=alpha)


def estimate_sigma(dataset: Dataset) -> float:
    """Pooled residual noise scale from the per-entry least-squares fit."""
    n, p = dataset.n, dataset.p
    if n <= p:
        raise ValueError(f"need n > p to estimate the noise scale (n={n}, p={p})")
    gamma = gamma_from_theta(dataset.X, dataset.Y)
    resid = dataset.Y - dataset.X @ gamma
    return float(
        np.sqrt(np.sum(resid**2) / ((n - p) * dataset.layout.M))
    )


def inverse_scaling_factor(
    graph: PenaltyGraph, dense_cutoff: int = DENSE_CUTOFF
) -> float:
    """Largest column norm of the pseudo-inverse of the edge-difference map.

    Dense computation; graphs beyond ``dense_cutoff`` nodes are refused
    rather than approximated.
    """
    if graph.edge_count == 0:
        raise ValueError("graph has no edges; the maximum is undefined")
    if graph.node_count > dense_cutoff:
        raise ValueError(
            f"graph has {graph.node_count} nodes, above the dense cutoff "
            f"{dense_cutoff}"
        )
    Dt = incidence(graph).D.toarray().T  # m x M
    S = np.linalg.pinv(Dt)  # M x m, columns indexed by edges
    return float(np.max(np.linalg.norm(S, axis=0)))


def compat_lower_bound(d: int, t: int) -> float:
    """Degree-based lower bound on the compatibility factor."""
    if d < 1 or t < 1:
        raise ValueError("max degree and support size must be >= 1")
    return 1.0 / (2.0 * min(math.sqrt(d), math.sqrt(t)))


def lambda_recommend(
    graph: PenaltyGraph, n: int, sigma: float, delta: float
) -> float:
    """Penalty level at which the prediction bound holds with prob. 1 - delta."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    m = graph.edge_count
    M = graph.node_count
    rho = inverse_scaling_factor(graph)
    return float(rho * sigma * math.sqrt(math.log(m * n * M / delta)))


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool
    components: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))


def oracle_bound_check(
    theta_star: np.ndarray,
    theta_hat: np.ndarray,
    graph: PenaltyGraph,
    sigma: float,
    delta: float,
    T: np.ndarray | None = None,
    kappa_bound: float | None = None,
    lam: float | None = None,
    feas_tol: float = 1e-6,
) -> BoundCheck:
    """Evaluate both sides of the prediction-error bound at the truth.

    ``theta_star`` and ``theta_hat`` are n-by-M matrices of per-subject
    means; the comparison point in the bound is taken to be the truth
    itself, so its approximation term vanishes and the remaining terms are
    the off-support total variation, the Gaussian tail term, and the
    support-size term scaled by the compatibility bound. ``T`` defaults to
    the support of the per-subject edge differences of the truth.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_star.shape != theta_hat.shape:
        raise ValueError("theta_star and theta_hat shapes differ")
    n, M = theta_star.shape
    if M != graph.node_count:
        raise ValueError("column count does not match graph node count")
    m = graph.edge_count
    op = incidence(graph)
    diffs = op.edge_diff(theta_star)  # n x m
    if T is None:
        T = np.abs(diffs) > 0
    else:
        T = np.asarray(T, dtype=bool)
        if T.shape != diffs.shape:
            raise ValueError("T must be a boolean mask of shape (n, edges)")
    t_size = int(np.sum(T))
    if lam is None:
        lam = lambda_recommend(graph, n, sigma, delta)
    if kappa_bound is None:
        kappa_bound = compat_lower_bound(max(graph.max_degree(), 1), max(t_size, 1))

    lhs = float(np.sum((theta_star - theta_hat) ** 2))
    off_support = 4.0 * lam * float(np.sum(np.abs(diffs[~T])))
    gauss_term = 64.0 * sigma**2 * math.log(2.0 * math.e * n * M / delta)
    rho = inverse_scaling_factor(graph)
    support_term = (
        8.0
        * rho**2
        * sigma**2
        * math.log(m * n * M / delta)
        * t_size
        / kappa_bound**2
    )
    rhs = off_support + gauss_term + support_term
    return BoundCheck(
        lhs=lhs,
        rhs=rhs,
        holds=bool(lhs <= rhs),
        components=(off_support, gauss_term, support_term),
    )


def theory_diagnostics(
    graph: PenaltyGraph, n: int, sigma: float, delta: float
) -> TheoryDiag:
    """Bundle the graph diagnostics printed by the command-line tool."""
    rho = inverse_scaling_factor(graph)
    lam = float(rho * sigma * math.sqrt(
        math.log(graph.edge_count * n * graph.node_count / delta)
    ))
    return TheoryDiag(
        inv_scaling=rho,
        max_degree=graph.max_degree(),
        lambda_rec=lam,
    )
