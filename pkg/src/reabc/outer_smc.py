"""Parameter-space SMC samplers with adaptive tolerances and rejuvenation.

Two public algorithms share one driver:

* ``run_abc_smc`` -- each particle carries a bank of stored simulations
  that is reweighted as the tolerance falls and refreshed only when a
  rejuvenation kernel replaces the particle.
* ``run_re_abc_smc2`` -- each particle carries a full latent-randomness
  population (see :mod:`inner_smc`) that advances one tolerance step per
  sampler step, supplying low-variance likelihood ratios.

The driver loop: choose the next tolerance by CESS bisection, reweight
every particle (accumulating the evidence estimate), fit the random-walk
proposal to the reweighted cloud, and resample-move when the ESS drops
below its threshold, with the number of move iterations adapted from a
probe acceptance rate.  The first algorithm is exactly the second with an
empty moved block, no latent resampling, and matched population sizes;
with matched seeds the two produce bit-identical weight trajectories.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    STREAM_INIT,
    STREAM_INNER_MOVE,
    STREAM_INNER_RESAMPLE,
    STREAM_KERNEL,
    STREAM_KERNEL_MOVE,
    STREAM_PRIOR,
    STREAM_RESAMPLE,
    ContractError,
    DegenerateWeightsError,
    LogWeights,
    apply_log_ratios,
    bisect_tolerance,
    conditional_ess,
    ess,
    multinomial_resample,
    stream,
)
from .inner_smc import (
    MoveConfig,
    advance_populations,
    fresh_populations,
    init_population,
    reweight_to,
)
from .mcmc import fit_proposal

__all__ = [
    "AdaptConfig",
    "StopRule",
    "PayloadConfig",
    "SamplerConfig",
    "ParamParticle",
    "StepDiagnostics",
    "SamplerOutput",
    "cess",
    "adapt_num_moves",
    "choose_tolerance",
    "outer_reweight_baseline",
    "outer_reweight_re",
    "resample_move",
    "run_abc_smc",
    "run_re_abc_smc2",
    "evidence_estimate",
]


@dataclass(frozen=True)
class AdaptConfig:
    """Resampling threshold, CESS target, and move-count adaptation."""

    alpha: float = 0.5
    beta: float = 0.9
    move_scale: float = 0.2
    move_cap: int = 100

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ContractError("resample fraction must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ContractError("CESS fraction must lie in (0, 1)")
        if not 0.0 < self.move_scale < 1.0:
            raise ContractError("move-adaptation constant must lie in (0, 1)")
        if self.move_cap < 1:
            raise ContractError("move cap must be >= 1")


@dataclass(frozen=True)
class StopRule:
    """Whichever fires first ends the run."""

    eps_target: float = 0.0
    max_steps: int = 1000
    min_acceptance: float = 0.015
    budget_seconds: float | None = None
    eps_floor: float = 0.0


@dataclass(frozen=True)
class PayloadConfig:
    """Size and behaviour of each particle's simulation payload."""

    n: int
    move: MoveConfig = field(default_factory=lambda: MoveConfig(mover="none"))
    alpha: float = 0.0  # latent-population resample threshold
    fresh: str = "adapt"  # kernel fresh-run schedule: "adapt" | "replay"
    fresh_beta: float = 0.5
    # A fresh run needing more halvings than this has an estimate so small
    # the proposal is rejected regardless; cap the straggler tail.
    fresh_max_steps: int = 60

    def __post_init__(self):
        if self.n < 1:
            raise ContractError("payload size must be >= 1")
        if self.fresh not in ("adapt", "replay"):
            raise ContractError(f"unknown fresh-run mode {self.fresh!r}")
        if not 0.0 < self.fresh_beta <= 1.0:
            raise ContractError("fresh-run CESS fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SamplerConfig:
    n_theta: int
    payload: PayloadConfig
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    stop: StopRule = field(default_factory=StopRule)
    seed: int = 0
    replicate: int = 0
    record_weight_trajectory: bool = False

    def __post_init__(self):
        if self.n_theta < 2:
            raise ContractError("need at least two parameter particles")


@dataclass(frozen=True)
class ParamParticle:
    theta: object  # ParameterPoint
    payload: object  # LatentPopulation


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    epsilon: float
    ess: float
    cess: float
    resampled: bool
    acceptance: float
    moves: int
    increment: float
    log_evidence: float
    elapsed_seconds: float


@dataclass(frozen=True)
class SamplerOutput:
    """Weighted parameter sample plus the realized schedule and evidence."""

    algorithm: str
    theta_components: np.ndarray
    log_weights: np.ndarray
    schedule: tuple
    log_evidence: float
    stop_reason: str
    failed: bool
    elapsed_seconds: float
    final_epsilon: float
    seed: int
    replicate: int
    weight_trajectory: tuple | None = None

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def posterior_mean(self):
        return self.weights @ self.theta_components


def evidence_estimate(output):
    """Cumulative log of the per-step summed unnormalised weights."""
    return output.log_evidence


def cess(prev_weights, ratios):
    """Conditional ESS between successive targets (see :mod:`core`)."""
    return conditional_ess(prev_weights, ratios)


def adapt_num_moves(p_acc, c, cap):
    """Move count giving each particle probability ``1 - c`` of moving.

    ``ceil(log c / log(1 - p_acc))`` clamped to ``[1, cap]``; a certain
    acceptance needs one move, a zero acceptance gets the cap.
    """
    if not 0.0 <= p_acc <= 1.0:
        raise ContractError("acceptance rate must lie in [0, 1]")
    if not 0.0 < c < 1.0:
        raise ContractError("move-adaptation constant must lie in (0, 1)")
    if cap < 1:
        raise ContractError("cap must be >= 1")
    if p_acc >= 1.0:
        return 1
    if p_acc <= 0.0:
        return int(cap)
    n = int(np.ceil(np.log(c) / np.log1p(-p_acc)))
    return max(1, min(int(cap), n))


def _payload_stacks(particles):
    d_mat = np.stack([p.payload.distances for p in particles])
    pw = np.stack([np.exp(p.payload.weights.log_weights) for p in particles])
    return d_mat, pw


def candidate_ratios(particles, eps):
    """Per-particle reweighting ratios at a candidate tolerance.

    Evaluated from cached distances only -- no fresh simulation.  For the
    stored-simulation payload this is the ratio of indicator counts; for
    latent populations it is the surviving weight fraction.
    """
    d_mat, pw = _payload_stacks(particles)
    return np.sum(pw * (d_mat <= eps), axis=1)


def choose_tolerance(particles, weights, beta, eps_floor, eps_current):
    """Next tolerance by CESS bisection over ``[eps_floor, eps_current]``.

    Candidate ratios are recomputed from cached distances at every probe;
    50 bisection iterations; returns the floor when even the floor keeps
    the CESS at or above ``beta * n``.  Raises
    :class:`DegenerateWeightsError` when no tolerance in the bracket
    leaves any particle alive (a stall; the caller stops the run).
    """
    d_mat, pw = _payload_stacks(particles)
    probs = weights.linear()
    n = len(particles)
    target = beta * n

    def cess_at(eps):
        r = np.sum(pw * (d_mat <= eps), axis=1)
        num = np.sum(probs * r)
        den = np.sum(probs * r * r)
        if den == 0.0:
            return 0.0
        return n * num * num / den

    if np.isfinite(eps_current):
        hi = eps_current
    else:
        live = pw > 0.0
        hi = float(np.max(np.where(live, d_mat, -np.inf)))
    if cess_at(hi) <= 0.0:
        raise DegenerateWeightsError("no live candidate at any tolerance", "adapt")
    if not eps_floor < hi:
        return eps_floor
    return bisect_tolerance(cess_at, eps_floor, hi, target, iters=50)


def outer_reweight_baseline(particles, weights, eps_new):
    """Reweight stored-simulation payloads to a tighter tolerance.

    No latent resampling or moves: only the indicator counts over each
    particle's stored simulations change.  Returns
    ``(particles, weights, evidence_increment, per_particle_incs)``.
    """
    return _reweight(particles, weights, eps_new, None, None, None, None, None)


def outer_reweight_re(particles, weights, eps_new, model, y, payload_cfg,
                      resample_rng_for, move_rng):
    """Advance each latent population one tolerance step and reweight.

    Per particle: tolerance-constrained reweight (the increment), then
    latent resampling when that population's ESS degrades, then the
    latent move.  A population that dies contributes a ``-inf`` increment
    (its particle weight goes to zero); the update only fails when every
    particle dies.
    """
    return _reweight(particles, weights, eps_new, model, y, payload_cfg,
                     resample_rng_for, move_rng)


def _reweight(particles, weights, eps_new, model, y, payload_cfg,
              resample_rng_for, move_rng):
    pops = [p.payload for p in particles]
    if payload_cfg is None:
        incs = np.empty(len(pops))
        stepped = []
        for m, pop in enumerate(pops):
            if pop.dead:
                incs[m] = -np.inf
                stepped.append(pop)
            else:
                pop, incs[m] = reweight_to(pop, eps_new)
                stepped.append(pop)
    else:
        stepped, incs = advance_populations(
            pops, model, y, eps_new, payload_cfg.alpha, payload_cfg.move,
            resample_rng_for, move_rng,
        )
    new_particles = [
        ParamParticle(p.theta, pop) for p, pop in zip(particles, stepped)
    ]
    new_weights, increment = apply_log_ratios(
        weights, incs, context=f"tolerance {eps_new:.6g}"
    )
    return new_particles, new_weights, increment, incs


def resample_move(particles, weights, ctx, t, eps_t, realized, proposal,
                  acceptance_floor=None, kernel=None):
    """Multinomial resample of whole particles, then adaptive rejuvenation.

    One probe kernel iteration runs on every particle; the probe
    acceptance rate sets the total iteration count through
    :func:`adapt_num_moves`.  When ``acceptance_floor`` is given and the
    probe falls below it the remaining iterations are skipped (the run is
    about to stop on its acceptance rule anyway).  Returns
    ``(particles, uniform_weights, probe_acceptance, iterations_run)``.
    """
    kernel = kernel if kernel is not None else _kernel_sweep
    n = len(particles)
    anc = multinomial_resample(weights, stream(ctx.seed, ctx.replicate, STREAM_RESAMPLE, t))
    particles = [particles[i] for i in anc]
    probe_acc, particles = kernel(particles, ctx, t, 0, eps_t, realized, proposal)
    planned = adapt_num_moves(probe_acc, ctx.adapt.move_scale, ctx.adapt.move_cap)
    done = 1
    if acceptance_floor is None or probe_acc >= acceptance_floor:
        for i in range(1, planned):
            if ctx.deadline is not None and time.monotonic() >= ctx.deadline:
                break  # each completed sweep is a valid rejuvenation
            _, particles = kernel(particles, ctx, t, i, eps_t, realized, proposal)
            done += 1
    return particles, LogWeights.uniform(n), probe_acc, done


def _kernel_sweep(particles, ctx, t, i, eps_t, realized, proposal):
    """One pseudo-marginal move applied to every particle.

    Per-particle streams cover the proposal draw, the fresh payload's
    initial draws, and the acceptance uniform (in that order); batched
    move draws inside the fresh runs come from a shared
    ``(step, iteration)``-keyed stream.  Out-of-prior proposals reject
    before any simulation.
    """
    prior = ctx.model.prior
    n = len(particles)
    rngs = [stream(ctx.seed, ctx.replicate, STREAM_KERNEL, t, i, m) for m in range(n)]
    proposed = [proposal.sample(p.theta.components, rngs[m]) for m, p in enumerate(particles)]
    valid = [m for m in range(n) if prior.contains(proposed[m])]
    shared = stream(ctx.seed, ctx.replicate, STREAM_KERNEL_MOVE, t, i)
    pops, cums = fresh_populations(
        ctx.model, ctx.y, [prior.point(proposed[m]) for m in valid], eps_t,
        ctx.payload, realized,
        init_rng_for=lambda j: rngs[valid[j]], shared_rng=shared,
    )
    out = list(particles)
    accepted = 0
    for j, m in enumerate(valid):
        if cums[j] == -np.inf:
            continue
        cur = particles[m].theta.components
        log_a = (
            prior.log_density(proposed[m]) - prior.log_density(cur)
            + proposal.log_ratio(proposed[m], cur)
            + cums[j] - particles[m].payload.cum_log_estimate
        )
        if log_a >= 0 or np.log(rngs[m].random()) < log_a:
            out[m] = ParamParticle(prior.point(proposed[m]), pops[j])
            accepted += 1
    return accepted / n, out


@dataclass(frozen=True)
class _Context:
    model: object
    y: object
    payload: PayloadConfig
    adapt: AdaptConfig
    stop: StopRule
    seed: int
    replicate: int
    deadline: float | None = None  # monotonic time after which kernel sweeps stop


def run_abc_smc(model, y, cfg):
    """Tolerance-annealed SMC with stored-simulation likelihood estimates."""
    pc = replace(cfg.payload, move=MoveConfig(mover="none"), alpha=0.0, fresh="replay")
    return _run(model, y, replace(cfg, payload=pc), "abc-smc")


def run_re_abc_smc2(model, y, cfg):
    """Nested sampler: latent-population likelihood estimates per particle."""
    return _run(model, y, cfg, "re-abc-smc2")


def _run(model, y, cfg, algorithm):
    start = time.monotonic()
    prior = model.prior
    seed, rep = cfg.seed, cfg.replicate
    particles = []
    for m in range(cfg.n_theta):
        theta = prior.sample(stream(seed, rep, STREAM_PRIOR, m))
        pop = init_population(model, y, theta, cfg.payload.n,
                              stream(seed, rep, STREAM_INIT, m))
        particles.append(ParamParticle(theta, pop))
    weights = LogWeights.uniform(cfg.n_theta)
    deadline = (start + cfg.stop.budget_seconds
                if cfg.stop.budget_seconds is not None else None)
    ctx = _Context(model, y, cfg.payload, cfg.adapt, cfg.stop, seed, rep, deadline)
    advances_payload = cfg.payload.move.mover != "none" or cfg.payload.alpha > 0.0

    eps = np.inf
    log_ev = 0.0
    realized = []
    diags = []
    trajectory = [] if cfg.record_weight_trajectory else None
    stop_reason = None
    failed = False
    t = 0
    floor = cfg.stop.eps_floor
    if np.isfinite(cfg.stop.eps_target):
        floor = max(floor, cfg.stop.eps_target)

    while True:
        if eps <= cfg.stop.eps_target:
            stop_reason = "tolerance_reached"
            break
        if t >= cfg.stop.max_steps:
            stop_reason = "max_steps"
            break
        if (cfg.stop.budget_seconds is not None
                and time.monotonic() - start >= cfg.stop.budget_seconds):
            stop_reason = "budget"
            break
        t += 1
        try:
            eps_new = choose_tolerance(particles, weights, cfg.adapt.beta, floor, eps)
        except DegenerateWeightsError:
            stop_reason = "stalled"
            failed = True
            break
        if not eps_new < eps:
            stop_reason = "stalled"
            break
        prev_weights = weights
        try:
            if advances_payload:
                particles, weights, inc, incs = outer_reweight_re(
                    particles, weights, eps_new, model, y, cfg.payload,
                    resample_rng_for=lambda m, _t=t: stream(
                        seed, rep, STREAM_INNER_RESAMPLE, _t, m
                    ),
                    move_rng=stream(seed, rep, STREAM_INNER_MOVE, t),
                )
            else:
                particles, weights, inc, incs = outer_reweight_baseline(
                    particles, weights, eps_new
                )
        except DegenerateWeightsError:
            stop_reason = "degenerate"
            failed = True
            break
        log_ev += inc
        realized.append(eps_new)
        cess_achieved = conditional_ess(prev_weights, np.exp(incs))
        theta_matrix = np.stack([p.theta.components for p in particles])
        proposal = fit_proposal(theta_matrix, weights, prior.lower, prior.upper)
        ess_val = ess(weights)
        do_resample = ess_val < cfg.adapt.alpha * cfg.n_theta
        acceptance = np.nan
        moves = 0
        if do_resample:
            particles, weights, acceptance, moves = resample_move(
                particles, weights, ctx, t, eps_new, realized, proposal,
                acceptance_floor=cfg.stop.min_acceptance,
            )
        diags.append(StepDiagnostics(
            step=t, epsilon=eps_new, ess=ess_val, cess=cess_achieved,
            resampled=do_resample, acceptance=acceptance, moves=moves,
            increment=inc, log_evidence=log_ev,
            elapsed_seconds=time.monotonic() - start,
        ))
        if trajectory is not None:
            trajectory.append((t, eps_new, weights.log_weights.copy()))
        eps = eps_new
        if eps <= cfg.stop.eps_target:
            stop_reason = "tolerance_reached"
            break
        if do_resample and acceptance < cfg.stop.min_acceptance:
            stop_reason = "acceptance_floor"
            break

    return SamplerOutput(
        algorithm=algorithm,
        theta_components=np.stack([p.theta.components for p in particles]),
        log_weights=weights.log_weights.copy(),
        schedule=tuple(diags),
        log_evidence=log_ev,
        stop_reason=stop_reason,
        failed=failed,
        elapsed_seconds=time.monotonic() - start,
        final_epsilon=eps,
        seed=seed,
        replicate=rep,
        weight_trajectory=tuple(trajectory) if trajectory is not None else None,
    )
