"""Gaussian belief algebra for global games with noisy information sharing.

Agent ``i`` observes its own signal ``x_i = theta + xi_i`` and the relayed
signals ``y_ji = x_j + zeta_ji`` of every other agent.  The fundamental
``theta`` carries an improper flat prior, so every conditional law below is
the infinite-prior-variance limit of an ordinary Gaussian conditioning.

The shared observations are kept in a fixed canonical order ("slots"):
agent ``i``'s peers are the other agents in increasing index order, and slot
``m`` holds the relayed signal of the ``m``-th peer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, NumericalFailureError


@dataclass(frozen=True)
class GameParams:
    """A game instance: ``n`` agents, signal noise ``sigma2``, sharing noise ``tau2``."""

    n: int
    sigma2: float
    tau2: float

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n:
            raise InvalidInputError(f"n must be an integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if self.n < 2:
            raise InvalidInputError(f"n must be >= 2 (need at least one peer), got {self.n}")
        for name in ("sigma2", "tau2"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0:
                raise InvalidInputError(f"{name} must be finite and > 0, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def tau(self) -> float:
        return math.sqrt(self.tau2)

    def scaled(self, c: float) -> "GameParams":
        """Same noise ratio, standard deviations multiplied by ``c``."""
        return GameParams(self.n, self.sigma2 * c * c, self.tau2 * c * c)


@dataclass(frozen=True)
class ObservationVector:
    """One agent's private information ``(x_i, y_ji for each peer slot)``."""

    x_i: float
    shared: tuple
    z_i: float = field(init=False)

    def __post_init__(self):
        shared = tuple(float(v) for v in self.shared)
        object.__setattr__(self, "x_i", float(self.x_i))
        object.__setattr__(self, "shared", shared)
        object.__setattr__(self, "z_i", math.fsum(shared))

    @property
    def n(self) -> int:
        return len(self.shared) + 1

    def as_array(self) -> np.ndarray:
        return np.array((self.x_i,) + self.shared)

    @classmethod
    def from_array(cls, y) -> "ObservationVector":
        y = np.asarray(y, dtype=float).ravel()
        return cls(float(y[0]), tuple(y[1:]))


def fuse_gaussian_observations(obs: Sequence[tuple]) -> tuple:
    """Posterior of a flat-prior scalar from independent Gaussian readings.

    Args:
        obs: ``(value, variance)`` pairs, each an unbiased reading of the
            unknown with independent noise of the given variance.

    Returns:
        ``(mean, variance)`` with ``variance = 1 / sum(1/var_i)`` and
        ``mean = variance * sum(value_i / var_i)``.
    """
    obs = list(obs)
    if not obs:
        raise InvalidInputError("at least one observation is required")
    precisions = []
    weighted = []
    for value, var in obs:
        var = float(var)
        if not math.isfinite(var) or var <= 0:
            raise InvalidInputError(f"observation variance must be > 0, got {var!r}")
        precisions.append(1.0 / var)
        weighted.append(float(value) / var)
    # fsum is correctly rounded, so the result does not depend on input order
    variance = 1.0 / math.fsum(precisions)
    return variance * math.fsum(weighted), variance


def _own_weights(n: int, sigma2: float, tau2: float) -> tuple:
    """(eta2, a, b) for an agent holding its own signal and ``n - 1`` relays."""
    eta2 = 1.0 / (1.0 / sigma2 + (n - 1) / (sigma2 + tau2))
    return eta2, eta2 / sigma2, eta2 / (sigma2 + tau2)


@dataclass(frozen=True, eq=False)
class BeliefCoefficients:
    """Closed-form conditioning constants of a game instance.

    ``diag_n``/``offdiag_n`` are the diagonal and off-diagonal entries of the
    peer block of ``V`` (the second and third of the three constants that
    accompany ``beta_n``); they are unrelated to the variance ``gamma2_n``.
    """

    params: GameParams
    eta2_n: float
    a_n: float
    b_n: float
    eta2_prev: float
    a_prev: float
    b_prev: float
    gamma2_n: float
    c_n: float
    d_n: float
    e_n: float
    w_n: float
    lipschitz_numerator: float
    contraction_numerator: float
    beta_n: float
    diag_n: float
    offdiag_n: float
    V: np.ndarray
    peer_cov: np.ndarray

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def tau(self) -> float:
        return self.params.tau

    def to_dict(self) -> dict:
        """JSON-ready mapping with the field names used by the CLI."""
        names = ("eta2_n", "a_n", "b_n", "gamma2_n", "c_n", "d_n", "e_n", "w_n",
                 "beta_n", "diag_n", "offdiag_n")
        out = {k: float(getattr(self, k)) for k in names}
        out["V"] = [[float(v) for v in row] for row in self.V]
        return out


def compute_coefficients(params: GameParams) -> BeliefCoefficients:
    n, s2, t2 = params.n, params.sigma2, params.tau2
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    eta2, a, b = _own_weights(n, s2, t2)
    eta2_p, a_p, b_p = _own_weights(n - 1, s2, t2)

    gamma2 = 1.0 / (1.0 / t2 + 1.0 / (eta2_p + s2))
    c = gamma2 / (eta2_p + s2)
    d = gamma2 / t2
    e = max(c * a_p, d, c * b_p)

    spread = n * a + (n - 2) * b
    contraction_num = (n - 1) * (e * spread + b) / b**2
    lipschitz_num = (n - 1) * (e * spread * (b + 2 * a) + b**2) / (a * b**2)
    w = max(contraction_num, lipschitz_num)

    beta = b + a * c * a_p + (n - 2) * b * c * a_p
    diag = a * d + (n - 2) * b * c * b_p
    offdiag = a * c * b_p + b * d + (n - 3) * b * c * b_p

    coeffs = BeliefCoefficients(
        params=params, eta2_n=eta2, a_n=a, b_n=b,
        eta2_prev=eta2_p, a_prev=a_p, b_prev=b_p,
        gamma2_n=gamma2, c_n=c, d_n=d, e_n=e, w_n=w,
        lipschitz_numerator=lipschitz_num, contraction_numerator=contraction_num,
        beta_n=beta, diag_n=diag, offdiag_n=offdiag,
        V=_assemble_V(n, a, b, beta, diag, offdiag),
        peer_cov=peer_noise_covariance(params),
    )
    coeffs.V.setflags(write=False)
    coeffs.peer_cov.setflags(write=False)
    return coeffs


def _assemble_V(n, a, b, beta, diag, offdiag) -> np.ndarray:
    V = np.full((n, n), offdiag)
    V[0, 0] = a
    V[0, 1:] = b
    V[1:, 0] = beta
    V[np.arange(1, n), np.arange(1, n)] = diag
    return V


def build_V(coeffs: BeliefCoefficients) -> np.ndarray:
    """Map from ``y_i`` to own posterior mean and expected peer posterior means.

    Row 0 gives ``E[theta | y_i]``; row ``1 + m`` gives
    ``E[ E[theta | y_j] | y_i ]`` for the peer in slot ``m``.
    """
    return np.array(coeffs.V)


def posterior_theta(coeffs: BeliefCoefficients, y: ObservationVector) -> tuple:
    if y.n != coeffs.n:
        raise InvalidInputError(f"observation has {y.n} entries, game has n={coeffs.n}")
    return coeffs.a_n * y.x_i + coeffs.b_n * y.z_i, coeffs.eta2_n


def condition_flat_prior(target_loads, obs_loads, noise_var) -> tuple:
    """Gaussian conditioning when every variable loads with weight 1 on a flat-prior scalar.

    Observations are ``Y = 1*theta + B w`` and targets ``T = 1*theta + A w``
    where ``w`` has independent components with variances ``noise_var``.
    Returns ``(G, S)`` such that ``T | Y ~ N(G Y, S)`` in the limit of
    infinite prior variance on ``theta``.
    """
    A = np.atleast_2d(np.asarray(target_loads, dtype=float))
    B = np.atleast_2d(np.asarray(obs_loads, dtype=float))
    W = np.asarray(noise_var, dtype=float)
    R = (B * W) @ B.T
    C = (A * W) @ B.T
    S0 = (A * W) @ A.T
    Ri = np.linalg.inv(R)
    ones_y = np.ones(B.shape[0])
    ones_t = np.ones(A.shape[0])
    ri1 = Ri @ ones_y
    q = ones_y @ ri1
    u = ones_t - C @ ri1
    G = C @ Ri + np.outer(u, ri1) / q
    S = S0 - C @ Ri @ C.T + np.outer(u, u) / q
    return G, 0.5 * (S + S.T)


def _peer_system(n: int, sigma2: float, tau2: float) -> tuple:
    """Loadings on (xi_0..xi_{n-1}, zeta_{j,m} for j != m) for agent 0's view of peer 1.

    Targets: ``x_1``, then ``y_l1`` for ``l = 2..n-1``, then ``y_01`` last.
    """
    pairs = [(j, m) for j in range(n) for m in range(n) if j != m]
    zeta_idx = {p: n + t for t, p in enumerate(pairs)}
    width = n + len(pairs)
    noise_var = np.concatenate([np.full(n, sigma2), np.full(len(pairs), tau2)])

    def signal(j):
        row = np.zeros(width)
        row[j] = 1.0
        return row

    def relay(j, m):
        row = signal(j)
        row[zeta_idx[(j, m)]] = 1.0
        return row

    obs = [signal(0)] + [relay(j, 0) for j in range(1, n)]
    targets = [signal(1)] + [relay(l, 1) for l in range(2, n)] + [relay(0, 1)]
    return np.array(targets), np.array(obs), noise_var


def peer_noise_covariance(params: GameParams) -> np.ndarray:
    """Covariance of ``(eps_k, eps_lk for l not in {i, k})`` given ``y_i``."""
    targets, obs, var = _peer_system(params.n, params.sigma2, params.tau2)
    _, S = condition_flat_prior(targets, obs, var)
    cov = S[:-1, :-1]
    # the relay back from agent i must be independent of the block
    if np.max(np.abs(S[-1, :-1])) > 1e-9 * max(1.0, params.tau2):
        raise NumericalFailureError("relay noise eps_ik is not independent of the peer block")
    return np.ascontiguousarray(cov)


@dataclass(frozen=True, eq=False)
class ConditionalPeerLaw:
    """Law of peer ``k``'s reduced observation given ``y_i``.

    ``x_k = mean_xk + eps_k``, ``y_lk = mean_y_lk[l] + eps_lk`` (``l`` over
    the other peer slots in canonical order) and ``y_ik = x_i + eps_ik`` with
    ``eps_ik ~ N(0, var_eps_ik)`` independent of the ``eps`` block.
    """

    mean_xk: float
    mean_y_lk: tuple
    cov_eps: np.ndarray
    var_eps_ik: float
    x_i: float

    @property
    def mean(self) -> np.ndarray:
        return np.array((self.mean_xk,) + self.mean_y_lk)


def peer_signal_means(coeffs: BeliefCoefficients, x_i, shared) -> np.ndarray:
    """``E[x_m | y_i]`` for every peer slot ``m``; vectorized over leading axes.

    ``shared`` has shape ``(..., n-1)``; the result has the same shape.
    """
    shared = np.asarray(shared, dtype=float)
    x_i = np.asarray(x_i, dtype=float)[..., None]
    c, d = coeffs.c_n, coeffs.d_n
    total = shared.sum(axis=-1, keepdims=True)
    return c * coeffs.a_prev * x_i + d * shared + c * coeffs.b_prev * (total - shared)


def peer_conditional_law(coeffs: BeliefCoefficients, y: ObservationVector, k: int) -> ConditionalPeerLaw:
    if y.n != coeffs.n:
        raise InvalidInputError(f"observation has {y.n} entries, game has n={coeffs.n}")
    if isinstance(k, bool) or not 0 <= int(k) < coeffs.n - 1 or int(k) != k:
        raise InvalidInputError(f"peer slot must be in 0..{coeffs.n - 2}, got {k!r}")
    k = int(k)
    means = peer_signal_means(coeffs, y.x_i, y.shared)
    others = tuple(float(means[m]) for m in range(coeffs.n - 1) if m != k)
    return ConditionalPeerLaw(
        mean_xk=float(means[k]),
        mean_y_lk=others,
        cov_eps=np.array(coeffs.peer_cov),
        var_eps_ik=coeffs.params.tau2,
        x_i=y.x_i,
    )


def peer_posterior_variance(coeffs: BeliefCoefficients) -> float:
    """Variance of a peer's posterior mean ``E[theta | y_j]`` given ``y_i``."""
    n, a, b = coeffs.n, coeffs.a_n, coeffs.b_n
    w = np.concatenate([[a], np.full(n - 2, b)])
    return float(w @ coeffs.peer_cov @ w + b * b * coeffs.params.tau2)
