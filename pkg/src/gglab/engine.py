"""Fixed-point operator on ``g`` and its Banach iteration.

For a reduced observation ``y`` the operator reconstructs the root value of
the singled-out share from ``g(y)``, forms each peer's conditional signal
means, and averages the standard normal CDF of the peer's root margin over
the peer's conditional noise:

    T g(y) = 1 + sum_l E_eps[ Phi(M_{eps,l} g(y)) ]

The expectation runs either on a tensor Gauss-Hermite rule mapped through the
Cholesky factor of the noise covariance, or on seeded Monte-Carlo draws.
"""

from __future__ import annotations

import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr

from .belief import BeliefCoefficients, GameParams, compute_coefficients, peer_signal_means
from .errors import DivergenceError, InvalidInputError, NumericalFailureError
from .grid import (GridFunction, GridSpec, ThresholdFunction, check_lipschitz, default_grid,
                   eval_g, symmetrize)

log = logging.getLogger(__name__)

GAUSS_HERMITE = "gauss-hermite"
MONTE_CARLO = "monte-carlo"
MAX_GH_DIM = 4
MIN_MC_SAMPLES = 10**4
DIVERGENCE_PATIENCE = 10
_CHUNK_ELEMENTS = 2_000_000


class ConditionWarning(UserWarning):
    """The sufficient condition for a contraction does not hold."""


@dataclass(frozen=True)
class IntegrationScheme:
    kind: str = GAUSS_HERMITE
    nodes_per_dim: int = 32
    sample_count: int = MIN_MC_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (GAUSS_HERMITE, MONTE_CARLO):
            raise InvalidInputError(f"unknown integration scheme {self.kind!r}")
        if self.kind == GAUSS_HERMITE and self.nodes_per_dim < 1:
            raise InvalidInputError("nodes_per_dim must be positive")
        if self.kind == MONTE_CARLO and self.sample_count < MIN_MC_SAMPLES:
            raise InvalidInputError(f"monte-carlo needs sample_count >= {MIN_MC_SAMPLES}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must fit in 64 unsigned bits")

    @classmethod
    def gauss_hermite(cls, nodes_per_dim: int = 32) -> "IntegrationScheme":
        return cls(GAUSS_HERMITE, nodes_per_dim=nodes_per_dim)

    @classmethod
    def monte_carlo(cls, sample_count: int = MIN_MC_SAMPLES, seed: int = 0) -> "IntegrationScheme":
        return cls(MONTE_CARLO, sample_count=sample_count, seed=seed)

    def to_dict(self) -> dict:
        if self.kind == GAUSS_HERMITE:
            return {"kind": self.kind, "nodes_per_dim": self.nodes_per_dim}
        return {"kind": self.kind, "sample_count": self.sample_count, "seed": self.seed}


@dataclass(frozen=True)
class ConditionReport:
    lipschitz_bound_lhs: float
    contraction_factor: float
    w_n: float
    tau: float
    lipschitz_ok: bool
    contraction_ok: bool
    banach_ok: bool
    n2_reformulated_lhs: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def check_conditions(params: GameParams, coeffs: BeliefCoefficients | None = None) -> ConditionReport:
    coeffs = coeffs or compute_coefficients(params)
    tau = params.tau
    n2 = None
    if params.n == 2:
        a = coeffs.a_n
        n2 = (4 * a * a + 3 * a - 1) / (a * (1 - a))
    return ConditionReport(
        lipschitz_bound_lhs=coeffs.lipschitz_numerator,
        contraction_factor=coeffs.contraction_numerator / tau,
        w_n=coeffs.w_n,
        tau=tau,
        lipschitz_ok=coeffs.lipschitz_numerator <= tau,
        contraction_ok=coeffs.contraction_numerator < tau,
        banach_ok=coeffs.w_n < tau,
        n2_reformulated_lhs=n2,
    )


def banach_params(n: int, ratio: float, safety: float = 1.05) -> GameParams:
    """Smallest-ish noise scale with ``tau / sigma = ratio`` that satisfies ``w_n < tau``.

    ``w_n`` depends on the noise only through the ratio, so the scale follows
    in closed form: ``sigma = safety * w_n / ratio``.
    """
    if ratio <= 0 or safety <= 1:
        raise InvalidInputError("need ratio > 0 and safety > 1")
    w = compute_coefficients(GameParams(n, 1.0, ratio * ratio)).w_n
    sigma = safety * w / ratio
    return GameParams(n, sigma * sigma, (ratio * sigma) ** 2)


# -- quadrature ---------------------------------------------------------------

def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"peer noise covariance is not positive definite: {cov!r}") from exc


def gauss_hermite_rule(cov: np.ndarray, nodes_per_dim: int) -> tuple:
    """Tensor Gauss-Hermite points and weights for ``N(0, cov)``."""
    dim = cov.shape[0]
    if dim > MAX_GH_DIM:
        raise InvalidInputError(f"gauss-hermite supports at most {MAX_GH_DIM} dimensions, got {dim}")
    z1, w1 = hermegauss(nodes_per_dim)
    w1 = w1 / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([z1] * dim), indexing="ij")
    z = np.stack([gr.ravel() for gr in grids], axis=-1)
    w = np.ones(z.shape[0])
    for wg in np.meshgrid(*([w1] * dim), indexing="ij"):
        w = w * wg.ravel()
    return z @ _cholesky(cov).T, w


def _mc_draws(scheme: IntegrationScheme, node_ids: np.ndarray, chol: np.ndarray) -> np.ndarray:
    dim = chol.shape[0]
    out = np.empty((node_ids.size, scheme.sample_count, dim))
    for r, node in enumerate(node_ids):
        rng = np.random.default_rng([int(scheme.seed), int(node)])
        out[r] = rng.standard_normal((scheme.sample_count, dim)) @ chol.T
    return out


def _thread_count() -> int:
    raw = os.environ.get("GGLAB_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, min(cap, int(raw)))
        except ValueError:
            raise InvalidInputError(f"GGLAB_THREADS must be an integer, got {raw!r}")
    return cap


# -- the operator ---------------------------------------------------------------

def peer_margins(g: GridFunction, coeffs: BeliefCoefficients, reduced: np.ndarray,
                 g_at: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """``M_{eps,l}`` for every node, noise draw and peer slot.

    Args:
        g: the function inside the CDF (peer's root function).
        reduced: reduced observations, shape ``(m, n-1)``.
        g_at: values used to reconstruct the singled-out share, shape ``(m,)``.
        eps: noise draws, shape ``(q, n-1)`` shared by all nodes or
            ``(m, q, n-1)`` per node.

    Returns:
        Array of shape ``(n-1, m, q)``, one slab per peer slot ``l``.
    """
    n = coeffs.n
    a, b, tau = coeffs.a_n, coeffs.b_n, coeffs.tau
    x = reduced[:, 0]
    u = reduced[:, 1:]
    root = g_at / b - (a / b) * x - u.sum(axis=-1)
    shared = np.concatenate([root[:, None], u], axis=1)
    means = peer_signal_means(coeffs, x, shared)
    if eps.ndim == 2:
        eps = eps[None, :, :]
    out = np.empty((n - 1, reduced.shape[0], eps.shape[1]))
    for l in range(n - 1):
        order = [l] + [m for m in range(n - 1) if m != l]
        args = means[:, order][:, None, :] + eps
        gv = eval_g(g, args)
        out[l] = (gv - a * args[..., 0] - b * args[..., 1:].sum(axis=-1) - b * x[:, None]) / (b * tau)
    return out


def eval_M(g: GridFunction, coeffs: BeliefCoefficients, y, l: int, eps) -> float:
    """Single evaluation of ``M_{eps,l} g(y)`` at reduced point ``y``."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    eps = np.asarray(eps, dtype=float).reshape(1, -1)
    if y.shape[1] != coeffs.n - 1 or eps.shape[1] != coeffs.n - 1:
        raise InvalidInputError(f"y and eps must have length n-1 = {coeffs.n - 1}")
    if not 0 <= l < coeffs.n - 1:
        raise InvalidInputError(f"peer slot must be in 0..{coeffs.n - 2}")
    return float(peer_margins(g, coeffs, y, np.atleast_1d(eval_g(g, y)), eps)[l, 0, 0])


def operator_values(g: GridFunction, coeffs: BeliefCoefficients, scheme: IntegrationScheme,
                    points: np.ndarray | None = None, node_ids: np.ndarray | None = None) -> tuple:
    """``T g`` at ``points`` (grid nodes by default) and a per-point error estimate.

    The error estimate is the Monte-Carlo standard error (zero for the
    deterministic Gauss-Hermite rule).
    """
    if g.spec.dim != coeffs.n - 1:
        raise InvalidInputError("grid dimension does not match the game")
    if points is None:
        points = g.spec.nodes()
        g_at = g.values
    else:
        points = np.asarray(points, dtype=float).reshape(-1, g.spec.dim)
        g_at = np.atleast_1d(eval_g(g, points))
    m = points.shape[0]
    if node_ids is None:
        node_ids = np.arange(m)
    dim = coeffs.n - 1

    if scheme.kind == GAUSS_HERMITE:
        eps, w = gauss_hermite_rule(coeffs.peer_cov, scheme.nodes_per_dim)
        q = w.size
    else:
        chol = _cholesky(coeffs.peer_cov)
        q = scheme.sample_count
    chunk = max(1, _CHUNK_ELEMENTS // (q * dim))
    slices = [slice(s, min(s + chunk, m)) for s in range(0, m, chunk)]
    mean = np.empty(m)
    err = np.zeros(m)

    def work(sl):
        if scheme.kind == GAUSS_HERMITE:
            draws = eps
        else:
            draws = _mc_draws(scheme, node_ids[sl], chol)
        phi = ndtr(peer_margins(g, coeffs, points[sl], g_at[sl], draws)).sum(axis=0)
        if scheme.kind == GAUSS_HERMITE:
            mean[sl] = 1.0 + phi @ w
        else:
            mean[sl] = 1.0 + phi.mean(axis=1)
            err[sl] = phi.std(axis=1, ddof=1) / math.sqrt(q)

    threads = min(_thread_count(), len(slices))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, slices))
    else:
        for sl in slices:
            work(sl)
    return np.clip(mean, 1.0, float(coeffs.n)), err


def apply_T(g: GridFunction, coeffs: BeliefCoefficients,
            scheme: IntegrationScheme | None = None) -> GridFunction:
    """One application of the operator on the grid, re-symmetrized."""
    scheme = scheme or IntegrationScheme()
    values, _ = operator_values(g, coeffs, scheme)
    return symmetrize(g.with_values(values))


def integration_error(g: GridFunction, coeffs: BeliefCoefficients, scheme: IntegrationScheme) -> float:
    """Sup-norm estimate of the integration error of ``T g``.

    Gauss-Hermite: difference against a rule with 1.5x the nodes per
    dimension.  Monte-Carlo: the largest per-node standard error.
    """
    full, err = operator_values(g, coeffs, scheme)
    if scheme.kind == MONTE_CARLO:
        return float(err.max())
    finer, _ = operator_values(g, coeffs, IntegrationScheme.gauss_hermite(scheme.nodes_per_dim * 3 // 2 + 1))
    return float(np.max(np.abs(full - finer)))


# -- iteration ------------------------------------------------------------------

@dataclass
class SolveDiagnostics:
    iterations: int
    sup_deltas: list
    converged: bool
    condition: ConditionReport
    wall_time: float
    final_lipschitz_ratio: float
    lipschitz_ratios: list = field(default_factory=list)
    integration_error: float = 0.0
    tol: float = 0.0
    max_iter: int = 0
    warnings: list = field(default_factory=list)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        d["condition"] = self.condition.to_dict()
        if not include_timing:
            d.pop("wall_time")
        return d


def solve(params: GameParams, scheme: IntegrationScheme | None = None,
          g0: GridFunction | None = None, tol: float = 1e-6, max_iter: int = 200,
          grid: GridSpec | None = None,
          callback: Callable[[int, GridFunction], None] | None = None,
          estimate_error: bool = True) -> tuple:
    """Iterate ``g <- T g`` until the sup-norm step is at most ``tol``.

    ``callback(t, g)`` is invoked for the initial function (``t = 0``) and
    every iterate.  When the sufficient condition fails the solver still
    runs, emits a :class:`ConditionWarning`, and raises
    :class:`DivergenceError` if the step grows for ten iterations in a row.
    """
    if not tol > 0:
        raise InvalidInputError(f"tol must be > 0, got {tol}")
    if max_iter < 0:
        raise InvalidInputError("max_iter must be >= 0")
    scheme = scheme or IntegrationScheme()
    coeffs = compute_coefficients(params)
    condition = check_conditions(params, coeffs)
    if g0 is None:
        spec = grid or default_grid(coeffs)
        g0 = GridFunction.constant(spec, (params.n + 1) / 2, coeffs)
    elif g0.spec.dim != params.n - 1:
        raise InvalidInputError("initial function has the wrong dimension")

    notes = []
    if not condition.banach_ok:
        msg = (f"w_n = {condition.w_n:.6g} >= tau = {condition.tau:.6g}: contraction not guaranteed, "
               "iterating with divergence detection")
        warnings.warn(msg, ConditionWarning, stacklevel=2)
        notes.append("banach_condition_unmet")

    start = time.perf_counter()
    g = g0
    deltas, ratios = [], []
    rising = 0
    last = math.inf
    if callback:
        callback(0, g)
    while last > tol and len(deltas) < max_iter:
        g_next = apply_T(g, coeffs, scheme)
        last = g_next.sup_distance(g)
        if deltas and last > deltas[-1]:
            rising += 1
        else:
            rising = 0
        deltas.append(last)
        ratios.append(check_lipschitz(g_next)[1])
        g = g_next
        log.debug("iteration %d: sup delta %.3e", len(deltas), last)
        if callback:
            callback(len(deltas), g)
        if not condition.banach_ok and rising >= DIVERGENCE_PATIENCE:
            diag = SolveDiagnostics(len(deltas), deltas, False, condition, time.perf_counter() - start,
                                    ratios[-1], ratios, math.nan, tol, max_iter, notes + ["diverged"])
            raise DivergenceError(f"sup delta increased {rising} times in a row", diag)

    _, final_ratio = check_lipschitz(g)
    if final_ratio >= 1.0:
        notes.append("lipschitz_ratio_reached_1")
    err = integration_error(g, coeffs, scheme) if estimate_error and deltas else 0.0
    diag = SolveDiagnostics(
        iterations=len(deltas), sup_deltas=deltas, converged=last <= tol, condition=condition,
        wall_time=time.perf_counter() - start, final_lipschitz_ratio=final_ratio,
        lipschitz_ratios=ratios, integration_error=err, tol=tol, max_iter=max_iter, warnings=notes,
    )
    return ThresholdFunction(g, coeffs), diag


def shifted_view(tf: ThresholdFunction) -> tuple:
    """Nodes and ``g - 1`` on the grid: the curve plotted for the two-agent case."""
    return tf.g.spec.nodes(), tf.g.values - 1.0
