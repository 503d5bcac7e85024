"""Monte-Carlo best-response checks, forward playouts and the linear-policy witness.

Everything here conditions on an explicit observation ``y_i``: the flat
prior on ``theta`` leaves no unconditional law to sample from.  A peer's
observation is drawn from its conditional law given ``y_i``; the relay it
received from agent ``i`` is ``x_i`` plus independent sharing noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.stats import qmc

from .belief import (BeliefCoefficients, GameParams, ObservationVector, compute_coefficients,
                     peer_conditional_law, peer_posterior_variance, posterior_theta)
from .errors import InvalidInputError, NumericalFailureError
from .grid import GridFunction, GridSpec, ThresholdFunction

MIN_SAMPLES = 10**4
BAND_SIGMAS = 3.0
LINEAR = "linear-threshold"
FUNCTION = "threshold-function"


@dataclass(frozen=True, eq=False)
class Strategy:
    """A symmetric threshold-function profile or a per-agent linear-threshold profile."""

    kind: str
    thresholds: tuple | None = None
    tf: ThresholdFunction | None = None

    def __post_init__(self):
        if self.kind == LINEAR:
            if self.thresholds is None:
                raise InvalidInputError("linear-threshold strategy needs thresholds")
            object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        elif self.kind == FUNCTION:
            if self.tf is None:
                raise InvalidInputError("threshold-function strategy needs a ThresholdFunction")
        else:
            raise InvalidInputError(f"unknown strategy kind {self.kind!r}")

    @classmethod
    def linear(cls, thresholds) -> "Strategy":
        return cls(LINEAR, thresholds=tuple(thresholds))

    @classmethod
    def function(cls, tf: ThresholdFunction) -> "Strategy":
        return cls(FUNCTION, tf=tf)

    def check_agents(self, n: int):
        if self.kind == LINEAR and len(self.thresholds) != n:
            raise InvalidInputError(f"need exactly {n} thresholds, got {len(self.thresholds)}")
        if self.kind == FUNCTION and self.tf.coeffs.n != n:
            raise InvalidInputError("threshold function belongs to a game with a different n")

    def margin(self, agent: int, full, coeffs: BeliefCoefficients, slot: int = 0) -> np.ndarray:
        """Signed margin, ``>= 0`` means risky.  ``full`` is ``(..., n)``.

        For a threshold function the margin is ``h`` with ``slot`` as the
        singled-out share; for a linear profile it is ``t_agent`` minus the
        posterior mean.
        """
        full = np.asarray(full, dtype=float)
        if self.kind == FUNCTION:
            return self.tf.h_values(full, slot)
        post = coeffs.a_n * full[..., 0] + coeffs.b_n * full[..., 1:].sum(axis=-1)
        return self.thresholds[agent] - post

    def risky(self, agent: int, full, coeffs: BeliefCoefficients, slot: int = 0) -> np.ndarray:
        return self.margin(agent, full, coeffs, slot) >= 0


def peers_of(agent: int, n: int) -> list:
    return [j for j in range(n) if j != agent]


@dataclass
class BestResponseReport:
    y_i: ObservationVector
    lhs: float
    rhs: float
    mc_stderr: float
    h_value: float
    consistent: bool
    action: int
    indeterminate: bool
    peer_risky: list = field(default_factory=list)
    samples: int = 0

    @property
    def gap(self) -> float:
        return self.lhs - self.rhs

    def to_dict(self) -> dict:
        return {"y_i": list(self.y_i.as_array()), "lhs": self.lhs, "rhs": self.rhs,
                "mc_stderr": self.mc_stderr, "h_value": self.h_value, "action": self.action,
                "consistent": self.consistent, "indeterminate": self.indeterminate,
                "peer_risky": self.peer_risky, "samples": self.samples}


def sample_peer_observations(coeffs: BeliefCoefficients, y_i: ObservationVector, k: int,
                             samples: int, rng: np.random.Generator) -> tuple:
    """Draw the peer in slot ``k``'s full observation given ``y_i``.

    Returns ``(full, slot_of_i)`` where ``full`` has shape ``(samples, n)``
    in the peer's own canonical order ``(x_k, shares...)`` and ``slot_of_i``
    is the position of agent ``i``'s relay among the peer's shares.
    """
    n = coeffs.n
    law = peer_conditional_law(coeffs, y_i, k)
    try:
        chol = np.linalg.cholesky(law.cov_eps)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError("degenerate peer covariance") from exc
    block = law.mean + rng.standard_normal((samples, n - 1)) @ chol.T
    relay_from_i = law.x_i + math.sqrt(law.var_eps_ik) * rng.standard_normal(samples)

    # agent i is 0 and the peer is slot k + 1 in i's labelling; the peer's
    # shares follow the other agents in increasing index order
    peer = k + 1
    others = [m for m in range(n - 1) if m != k]
    full = np.empty((samples, n))
    full[:, 0] = block[:, 0]
    col = 1
    slot_of_i = None
    for agent in range(n):
        if agent == peer:
            continue
        if agent == 0:
            full[:, col] = relay_from_i
            slot_of_i = col - 1
        else:
            full[:, col] = block[:, 1 + others.index(agent - 1)]
        col += 1
    return full, slot_of_i


def best_response_gap(strategy: Strategy, coeffs: BeliefCoefficients, y_i: ObservationVector,
                      samples: int = 10**5, seed: int = 0, agent: int = 0) -> BestResponseReport:
    """Compare ``1 + sum_k P(peer k risky | y_i)`` with ``E[theta | y_i]``.

    ``agent`` names the agent whose observation ``y_i`` is; its peers are
    the remaining agents in increasing order, which fixes whose threshold
    applies to each share slot of a linear profile.
    """
    n = coeffs.n
    if samples < MIN_SAMPLES:
        raise InvalidInputError(f"samples must be >= {MIN_SAMPLES}")
    if y_i.n != n:
        raise InvalidInputError(f"observation has {y_i.n} entries, game has n={n}")
    strategy.check_agents(n)
    rhs, _ = posterior_theta(coeffs, y_i)
    peers = peers_of(agent, n)
    probs, var = [], 0.0
    for k in range(n - 1):
        rng = np.random.default_rng([int(seed), int(k)])
        full, slot_of_i = sample_peer_observations(coeffs, y_i, k, samples, rng)
        hits = int(np.count_nonzero(strategy.risky(peers[k], full, coeffs, slot_of_i)))
        probs.append(hits / samples)
        # continuity correction keeps the error estimate positive at 0 or N hits
        p_cc = (hits + 0.5) / (samples + 1)
        var += p_cc * (1 - p_cc) / samples
    lhs = 1.0 + math.fsum(probs)
    stderr = math.sqrt(var)
    h_val = float(strategy.margin(agent, y_i.as_array(), coeffs, 0))
    action = int(h_val >= 0)
    gap = lhs - rhs
    indeterminate = abs(gap) <= BAND_SIGMAS * stderr
    agrees = gap > 0 if action == 1 else gap < 0
    return BestResponseReport(y_i=y_i, lhs=lhs, rhs=rhs, mc_stderr=stderr, h_value=h_val,
                              consistent=bool(agrees or indeterminate), action=action,
                              indeterminate=bool(indeterminate), peer_risky=probs, samples=samples)


# -- equilibrium verification -----------------------------------------------------

@dataclass
class VerificationSummary:
    probes: int
    consistent: int
    indeterminate: int
    inconsistent: int
    worst_gap: float
    seed: int
    passed: bool
    near_probes: int
    near_in_band: int
    far_probes: int
    far_consistent: int
    reports: list = field(default_factory=list)
    near_mask: list = field(default_factory=list)

    def to_dict(self, include_reports: bool = False) -> dict:
        d = {k: getattr(self, k) for k in ("probes", "consistent", "indeterminate", "inconsistent",
                                           "worst_gap", "seed", "passed", "near_probes", "near_in_band",
                                           "far_probes", "far_consistent")}
        if include_reports:
            d["reports"] = [dict(r.to_dict(), near_root=bool(nr))
                            for r, nr in zip(self.reports, self.near_mask)]
        return d


def stratified_probes(tf: ThresholdFunction, probe_count: int, seed: int,
                      near_fraction: float = 0.5, far_offset: tuple = (0.05, 1.0),
                      box: GridSpec | None = None) -> tuple:
    """Probe observations: half on the root surface, half pushed off it.

    Reduced points come from a Latin hypercube over the grid box.  Near-root
    probes set the singled-out share to the root value ``Ih``; far probes
    shift it so that the posterior mean moves by an amount drawn uniformly
    from ``far_offset``, alternating the direction.
    """
    spec = box or tf.g.spec
    coeffs = tf.coeffs
    sampler = qmc.LatinHypercube(d=spec.dim, seed=np.random.default_rng(seed))
    reduced = qmc.scale(sampler.random(probe_count), spec.lower, spec.upper)
    roots = tf.root_share(reduced)
    near_count = int(round(near_fraction * probe_count))
    rng = np.random.default_rng([int(seed), 1])
    shift = rng.uniform(*far_offset, size=probe_count) / coeffs.b_n
    shift *= np.where(np.arange(probe_count) % 2 == 0, 1.0, -1.0)
    near = np.arange(probe_count) < near_count
    share = np.where(near, roots, roots + shift)
    full = np.concatenate([reduced[:, :1], share[:, None], reduced[:, 1:]], axis=1)
    return [ObservationVector.from_array(f) for f in full], near


def verify_equilibrium(tf: ThresholdFunction, coeffs: BeliefCoefficients | None = None,
                       probe_count: int = 200, samples: int = 10**5, seed: int = 0,
                       far_required: float = 0.99, probes=None) -> VerificationSummary:
    """Best-response check of the symmetric profile induced by ``tf``.

    Passes when every near-root probe sits inside the Monte-Carlo
    indeterminate band and at least ``far_required`` of the far probes are
    consistent.
    """
    coeffs = coeffs or tf.coeffs
    strategy = Strategy.function(tf)
    if probes is None:
        probes, near = stratified_probes(tf, probe_count, seed)
    else:
        probes, near = probes
    reports = [best_response_gap(strategy, coeffs, y, samples, seed=int(seed) * 100_003 + idx)
               for idx, y in enumerate(probes)]
    near = np.asarray(near, dtype=bool)
    in_band = np.array([r.indeterminate for r in reports])
    ok = np.array([r.consistent for r in reports])
    n_near = int(near.sum())
    n_far = len(reports) - n_near
    near_in = int((in_band & near).sum())
    far_ok = int((ok & ~near).sum())
    passed = near_in == n_near and (n_far == 0 or far_ok >= far_required * n_far)
    worst = max((abs(r.gap) for r, nr in zip(reports, near) if nr), default=0.0)
    return VerificationSummary(
        probes=len(reports), consistent=int(ok.sum()), indeterminate=int(in_band.sum()),
        inconsistent=int((~ok).sum()), worst_gap=float(worst), seed=int(seed), passed=bool(passed),
        near_probes=n_near, near_in_band=near_in, far_probes=n_far, far_consistent=far_ok,
        reports=reports, near_mask=list(map(bool, near)),
    )


def linear_threshold_function(coeffs: BeliefCoefficients, t: float, spec: GridSpec) -> ThresholdFunction:
    """The common-threshold linear policy seen as a threshold function.

    ``a x + b z <= t`` has root ``y_ki`` where ``g`` equals ``t``, so the
    policy corresponds to the constant ``g = t``.
    """
    return ThresholdFunction(GridFunction.constant(spec, t, coeffs), coeffs)


# -- non-existence witness ----------------------------------------------------------

@dataclass
class Witness:
    y_i: ObservationVector
    report: BestResponseReport
    agent: int
    direction: str
    target: list
    posterior_mean: float
    chebyshev_bounds: list
    gaussian_tail: list
    lhs_bound: float
    violated: bool

    @property
    def mc_peer_risky(self) -> float:
        return max(self.report.peer_risky)

    def to_dict(self) -> dict:
        return {"agent": self.agent, "direction": self.direction, "y_i": list(self.y_i.as_array()),
                "target": self.target, "posterior_mean": self.posterior_mean,
                "mc_peer_risky": self.mc_peer_risky, "peer_risky": self.report.peer_risky,
                "chebyshev_bounds": self.chebyshev_bounds, "gaussian_tail": self.gaussian_tail,
                "lhs": self.report.lhs, "rhs": self.report.rhs, "lhs_bound_99": self.lhs_bound,
                "action": self.report.action, "violated": self.violated}


def _binomial_bound(successes: int, trials: int, alpha: float, upper: bool) -> float:
    """One-sided Clopper-Pearson bound at confidence ``1 - alpha``."""
    if upper:
        return 1.0 if successes == trials else float(stats.beta.ppf(1 - alpha, successes + 1, trials - successes))
    return 0.0 if successes == 0 else float(stats.beta.ppf(alpha, successes, trials - successes + 1))


def nonexistence_witness(params: GameParams, t, eps: float = 0.01, M: float = 1e6, agent: int = 0,
                         direction: str = "below", samples: int = 10**5, seed: int = 0,
                         confidence: float = 0.99) -> Witness:
    """Observation at which a linear-threshold profile is not a best response.

    ``direction="below"`` puts agent ``agent``'s posterior mean at
    ``t_agent - eps`` while every peer's expected posterior mean is ``M``:
    the agent is told to go risky but expects almost no company.
    ``direction="above"`` mirrors it at ``t_agent + eps`` and ``-M``.
    """
    coeffs = compute_coefficients(params)
    n = params.n
    t = [float(v) for v in t]
    if len(t) != n:
        raise InvalidInputError(f"need {n} thresholds, got {len(t)}")
    if not eps > 0:
        raise InvalidInputError("eps must be > 0")
    if direction not in ("below", "above"):
        raise InvalidInputError("direction must be 'below' or 'above'")
    sign = 1.0 if direction == "below" else -1.0
    target = np.array([t[agent] - sign * eps] + [sign * M] * (n - 1))
    V = coeffs.V
    try:
        y = np.linalg.solve(V, target)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError("V is singular") from exc
    # one step of iterative refinement: entries are O(M)
    y = y + np.linalg.solve(V, target - V @ y)
    y_i = ObservationVector.from_array(y)
    strategy = Strategy.linear(t)
    report = best_response_gap(strategy, coeffs, y_i, samples, seed, agent)

    peers = peers_of(agent, n)
    expected = V[1:] @ y
    sd = math.sqrt(peer_posterior_variance(coeffs))
    cheb, tail = [], []
    for m, j in enumerate(peers):
        dist = (expected[m] - t[j]) * sign
        cheb.append(float(sd * sd / dist**2) if dist > 0 else 1.0)
        tail.append(float(stats.norm.cdf(-dist / sd)))

    alpha = (1 - confidence) / (n - 1)
    counts = [round(p * samples) for p in report.peer_risky]
    if direction == "below":
        # prescribed risky; refuted when even the upper bound of lhs is below rhs
        bound = 1.0 + sum(_binomial_bound(c, samples, alpha, True) for c in counts)
        violated = report.action == 1 and bound < report.rhs
    else:
        bound = 1.0 + sum(_binomial_bound(c, samples, alpha, False) for c in counts)
        violated = report.action == 0 and bound > report.rhs
    return Witness(y_i=y_i, report=report, agent=agent, direction=direction, target=list(target),
                   posterior_mean=posterior_theta(coeffs, y_i)[0], chebyshev_bounds=cheb,
                   gaussian_tail=tail, lhs_bound=bound, violated=bool(violated))


# -- forward playout -------------------------------------------------------------------

@dataclass
class PlayoutResult:
    theta: float
    actions: list
    payoffs: list
    observations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "actions": self.actions, "payoffs": self.payoffs,
                "observations": self.observations}


def payoffs(actions, theta: float) -> list:
    total = sum(actions)
    return [a * (total - theta) if a else 0.0 for a in actions]


def simulate_playout(params: GameParams, strategy: Strategy, theta: float, seed: int = 0) -> PlayoutResult:
    """Draw every agent's observation for a fixed ``theta`` and play the strategy."""
    n = params.n
    coeffs = compute_coefficients(params)
    strategy.check_agents(n)
    rng = np.random.default_rng(seed)
    x = theta + params.sigma * rng.standard_normal(n)
    relay = x[:, None] + params.tau * rng.standard_normal((n, n))  # relay[j, i] = y_ji
    obs = []
    actions = []
    for i in range(n):
        full = np.array([x[i]] + [relay[j, i] for j in peers_of(i, n)])
        obs.append(list(map(float, full)))
        actions.append(int(strategy.risky(i, full, coeffs, 0)))
    return PlayoutResult(theta=float(theta), actions=actions, payoffs=payoffs(actions, float(theta)),
                         observations=obs)
