"""MCMC kernels on parameter space.

Three pieces: the adaptive truncated-Gaussian random-walk proposal fitted
to the weighted particle cloud, the plain tolerance-based MCMC step (one
fresh simulation per proposal), and the pseudo-marginal rejuvenation move
whose acceptance ratio compares a fresh latent-sampler likelihood
estimate against the stored one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .core import ContractError, stream, STREAM_CHAIN
from .inner_smc import fresh_populations

__all__ = [
    "TruncNormalProposal",
    "fit_proposal",
    "ChainState",
    "abc_mcmc_step",
    "run_abc_mcmc",
    "re_abc_mcmc_move",
]

SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class TruncNormalProposal:
    """Componentwise Gaussian random walk truncated to a box.

    The acceptance ratio of a truncated random walk is not symmetric: the
    truncation normaliser depends on the centre, and :meth:`log_ratio`
    accounts for it exactly.
    """

    scales: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if np.any(s <= 0):
            raise ContractError("proposal scales must be positive")
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, dtype=float)))

    def sample(self, center, rng):
        """Inverse-CDF draw; consumes exactly one uniform per component."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        a = ndtr((self.lower - c) / self.scales)
        b = ndtr((self.upper - c) / self.scales)
        p = a + rng.random(c.size) * (b - a)
        p = np.clip(p, 1e-15, 1.0 - 1e-15)
        return c + self.scales * ndtri(p)

    def _log_z(self, center):
        z = ndtr((self.upper - center) / self.scales) - ndtr((self.lower - center) / self.scales)
        return float(np.sum(np.log(z)))

    def log_ratio(self, proposed, current):
        """log q(current | proposed) - log q(proposed | current)."""
        cur = np.atleast_1d(np.asarray(current, dtype=float))
        new = np.atleast_1d(np.asarray(proposed, dtype=float))
        return self._log_z(cur) - self._log_z(new)


def fit_proposal(components, weights, lower, upper):
    """Proposal scales from the weighted particle variance, per component.

    ``components`` is the (n, p) particle matrix and ``weights`` the
    normalised outer weights.  Scales are floored at ``1e-8``; a floored
    component flags the proposal as degenerate.
    """
    comps = np.atleast_2d(np.asarray(components, dtype=float))
    if comps.shape[0] < 2:
        raise ContractError("proposal fitting needs at least two particles")
    probs = weights.linear()
    mean = probs @ comps
    var = probs @ (comps - mean) ** 2
    scales = np.sqrt(var)
    degenerate = bool(np.any(scales < SCALE_FLOOR))
    return TruncNormalProposal(
        np.maximum(scales, SCALE_FLOOR), lower, upper, degenerate=degenerate
    )


# ---------------------------------------------------------------------------
# Plain tolerance-based MCMC (one simulation per proposal)

@dataclass(frozen=True)
class ChainState:
    theta: object  # ParameterPoint
    x: object
    distance: float


def abc_mcmc_step(state, y, epsilon, proposal, prior, model, rng):
    """One Metropolis-Hastings step against the indicator target.

    Proposes a parameter, simulates once, and accepts only when the fresh
    simulation lands within the tolerance, then with the prior times
    proposal-correction ratio.  Returns ``(state, accepted)``.
    """
    if not state.distance <= epsilon:
        raise ContractError("current state violates the tolerance")
    cur = state.theta.components
    log_prior_cur = prior.log_density(cur)
    if log_prior_cur == -np.inf:
        raise ContractError("current parameter has zero prior density")
    proposed = proposal.sample(cur, rng)
    if not prior.contains(proposed):
        return state, False
    theta_new = prior.point(proposed)
    u = model.sample_u(theta_new, rng)
    x = model.transform(u, theta_new)
    dist = model.distance(y, x)
    if dist > epsilon:
        return state, False
    log_a = (
        prior.log_density(proposed) - log_prior_cur
        + proposal.log_ratio(proposed, cur)
    )
    if log_a < 0 and not np.log(rng.random()) < log_a:
        return state, False
    return ChainState(theta_new, x, dist), True


def run_abc_mcmc(model, y, epsilon, n_iterations, proposal_scale, seed, replicate=0,
                 init_max_tries=1_000_000):
    """A full tolerance-based MCMC chain at fixed tolerance.

    Initialises by rejection from the prior predictive (simulate until a
    draw lands inside the tolerance), then runs ``n_iterations`` steps.
    Returns ``(theta_matrix, acceptance_rate)``.
    """
    rng = stream(seed, replicate, STREAM_CHAIN)
    prior = model.prior
    proposal = TruncNormalProposal(
        np.full(prior.dim, proposal_scale), prior.lower, prior.upper
    )
    state = None
    for _ in range(init_max_tries):
        theta = prior.sample(rng)
        x = model.transform(model.sample_u(theta, rng), theta)
        dist = model.distance(y, x)
        if dist <= epsilon:
            state = ChainState(theta, x, dist)
            break
    if state is None:
        raise RuntimeError("could not initialise the chain inside the tolerance")
    out = np.empty((n_iterations, prior.dim))
    accepted = 0
    for i in range(n_iterations):
        state, ok = abc_mcmc_step(state, y, epsilon, proposal, prior, model, rng)
        accepted += ok
        out[i] = state.theta.components
    return out, accepted / n_iterations


# ---------------------------------------------------------------------------
# Pseudo-marginal rejuvenation move

def re_abc_mcmc_move(theta, payload, model, y, eps_current, proposal, prior,
                     payload_cfg, realized, rng):
    """Rejuvenate one particle with a fresh latent-sampler estimate.

    Proposes a parameter (rejecting out-of-prior draws before spending any
    simulation), runs a fresh latent sampler down to the current
    tolerance, and accepts with the pseudo-marginal ratio of the fresh
    estimate over the particle's stored one.  Returns
    ``(theta, payload, accepted)``; rejection leaves both inputs
    untouched.
    """
    if payload.dead or payload.cum_log_estimate == -np.inf:
        raise ContractError("rejuvenation requires a live stored estimate")
    cur = theta.components
    proposed = proposal.sample(cur, rng)
    if not prior.contains(proposed):
        return theta, payload, False
    theta_new = prior.point(proposed)
    pops, cums = fresh_populations(
        model, y, [theta_new], eps_current, payload_cfg, realized,
        init_rng_for=lambda b: rng, shared_rng=rng,
    )
    if cums[0] == -np.inf:
        return theta, payload, False
    log_a = (
        prior.log_density(proposed) - prior.log_density(cur)
        + proposal.log_ratio(proposed, cur)
        + cums[0] - payload.cum_log_estimate
    )
    if log_a < 0 and not np.log(rng.random()) < log_a:
        return theta, payload, False
    return theta_new, pops[0], True
