"""Rare-event SMC over simulator randomness, conditional on one parameter.

A :class:`LatentPopulation` carries ``n`` latent draws for a single
parameter point together with cached data-space distances, normalised
log-weights, the current tolerance, and the running log of the
normalising-constant estimate (the ABC likelihood estimate): the product
over steps of the summed unnormalised weights.

The per-population operations implement one tolerance step each:
reweight by the indicator kernel, resample when the ESS degrades, move
the latent block with a tolerance-respecting MCMC kernel.  The batched
helpers at the bottom advance many populations at once (one per
parameter particle, or one per rejuvenation proposal) and are what the
parameter-space samplers call; models that support it get their moves
vectorised across every live particle of every population in a single
call.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    ContractError,
    DegenerateWeightsError,
    LogWeights,
    bisect_tolerance,
    conditional_ess,
    ess,
    indicator_reweight,
    multinomial_resample,
    normalize,
)

__all__ = [
    "MoveConfig",
    "AdaptiveSchedule",
    "LatentPopulation",
    "init_population",
    "reweight_to",
    "maybe_resample",
    "move_population",
    "adapt_epsilon",
    "candidate_log_increment",
    "run_to_tolerance",
]


@dataclass(frozen=True)
class MoveConfig:
    """How the moved latent block is rejuvenated at each tolerance step."""

    mover: str = "slice"  # "slice" | "edge-flip" | "none"
    sweeps: int = 1
    slice_width: float = 0.25

    def __post_init__(self):
        if self.mover not in ("slice", "edge-flip", "none"):
            raise ContractError(f"unknown mover {self.mover!r}")
        if self.sweeps < 1:
            raise ContractError("sweeps must be >= 1")
        if not self.slice_width > 0:
            raise ContractError("slice width must be positive")


@dataclass(frozen=True)
class AdaptiveSchedule:
    """Choose each tolerance so the population CESS lands near ``beta * n``."""

    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ContractError("CESS fraction must lie in (0, 1]")


@dataclass(frozen=True)
class LatentPopulation:
    """Latent-randomness particle system for one parameter point.

    ``moved`` and ``streams`` hold the two latent blocks row-per-particle;
    ``distances`` caches ``distance(y, H(u_n, theta))`` and always equals a
    from-scratch recomputation.  ``cum_log_estimate`` accumulates the log
    of each reweighting's summed unnormalised weights.  Populations are
    immutable; operations return updated copies.
    """

    theta: object  # ParameterPoint
    moved: np.ndarray
    streams: np.ndarray
    distances: np.ndarray
    weights: LogWeights
    epsilon: float
    cum_log_estimate: float
    step: int = 0
    last_ancestors: np.ndarray | None = None
    dead: bool = False
    dead_step: int | None = None
    last_move_accept: float = float("nan")

    @property
    def n(self):
        return self.distances.size

    def live_mask(self):
        return np.isfinite(self.weights.log_weights)


def init_population(model, y, theta, n, rng):
    """Draw ``n`` latents from the model prior and cache their distances.

    Uniform weights, infinite tolerance, zero running estimate.
    """
    if n < 1:
        raise ContractError("population size must be >= 1")
    moved, streams = model.sample_u_batch(theta, n, rng)
    distances = np.asarray(model.distances_batch(moved, streams, theta, y), dtype=float)
    return LatentPopulation(
        theta=theta,
        moved=moved,
        streams=streams,
        distances=distances,
        weights=LogWeights.uniform(n),
        epsilon=np.inf,
        cum_log_estimate=0.0,
    )


def reweight_to(pop, eps_new):
    """Tighten the tolerance and reweight by the indicator kernel.

    Returns ``(population, log_increment)``.  A population whose particles
    all fall outside the new tolerance comes back flagged dead with a
    ``-inf`` increment; the caller decides whether that is fatal.
    """
    if pop.dead:
        raise ContractError("cannot reweight a dead population")
    if not eps_new <= pop.epsilon:
        raise ContractError("tolerances must be nonincreasing")
    new_w, inc = indicator_reweight(
        pop.weights, pop.distances, eps_new, context=f"latent step {pop.step + 1}"
    )
    if inc == -np.inf:
        dead = replace(
            pop,
            weights=new_w,
            epsilon=eps_new,
            cum_log_estimate=-np.inf,
            step=pop.step + 1,
            dead=True,
            dead_step=pop.step + 1,
        )
        return dead, -np.inf
    return (
        replace(
            pop,
            weights=new_w,
            epsilon=eps_new,
            cum_log_estimate=pop.cum_log_estimate + inc,
            step=pop.step + 1,
        ),
        inc,
    )


def maybe_resample(pop, alpha, rng):
    """Multinomial-resample the population when ``ess < alpha * n``."""
    if pop.dead:
        raise ContractError("cannot resample a dead population")
    if alpha <= 0.0 or ess(pop.weights) >= alpha * pop.n:
        return pop
    idx = multinomial_resample(pop.weights, rng)
    return replace(
        pop,
        moved=pop.moved[idx].copy(),
        streams=pop.streams[idx].copy() if pop.streams.size else pop.streams,
        distances=pop.distances[idx].copy(),
        weights=LogWeights.uniform(pop.n),
        last_ancestors=idx,
    )


def _move_live(pop, model, y, cfg, rng):
    """Move the live particles' moved block; dead rows are left untouched."""
    if cfg.mover == "none" or model.moved_size == 0:
        return pop
    live = pop.live_mask()
    if not live.any():
        return pop
    if np.any(pop.distances[live] > pop.epsilon):
        raise ContractError("live particle beyond the current tolerance")
    moved = pop.moved.copy()
    streams = pop.streams.copy() if pop.streams.size else pop.streams
    dists = pop.distances.copy()
    k = int(np.count_nonzero(live))
    if model.supports_batch_moves:
        theta_rows = np.tile(pop.theta.components, (k, 1))
        eps_rows = np.full(k, pop.epsilon)
        mv, st, dd, frac = model.move_population_batch(
            pop.moved[live], pop.streams[live], pop.distances[live],
            theta_rows, y, eps_rows, cfg, rng,
        )
    else:
        mv, st, dd, frac = model.move_population(
            pop.moved[live], pop.streams[live], pop.distances[live],
            pop.theta, y, pop.epsilon, cfg, rng,
        )
    moved[live] = mv
    if streams.size:
        streams[live] = st
    dists[live] = dd
    return replace(
        pop, moved=moved, streams=streams, distances=dists, last_move_accept=frac
    )


def move_population(pop, model, y, cfg, rng):
    """Apply ``cfg.sweeps`` tolerance-invariant moves to the moved block.

    Strict form of the move step: every particle must carry finite weight
    (populations holding excluded particles must be resampled or have
    their dead rows handled by the step drivers, which move only live
    rows).
    """
    if not np.all(np.isfinite(pop.weights.log_weights)):
        raise ContractError("move called with excluded (zero-weight) particles")
    return _move_live(pop, model, y, cfg, rng)


def candidate_log_increment(pop, eps):
    """Log reweighting increment at a candidate tolerance, without mutation."""
    _, inc = indicator_reweight(pop.weights, pop.distances, eps)
    return inc


def adapt_epsilon(pop, beta, eps_floor):
    """Pick the next tolerance so the population CESS is near ``beta * n``.

    Bisection over ``[eps_floor, pop.epsilon]`` (bracketed at the largest
    cached distance when the tolerance is still infinite), 50 iterations
    or a bracket narrower than ``1e-8`` of the current tolerance.  Returns
    ``eps_floor`` when even the floor keeps the CESS at or above target.
    """
    if pop.dead:
        raise DegenerateWeightsError("cannot adapt a dead population", "adapt")
    target = beta * pop.n
    if target >= _cess_at(pop, pop.epsilon):
        return pop.epsilon
    live = pop.live_mask()
    hi = pop.epsilon if np.isfinite(pop.epsilon) else float(np.max(pop.distances[live]))
    if not eps_floor <= hi:
        return hi
    width = 1e-8 * (pop.epsilon if np.isfinite(pop.epsilon) else hi)
    return bisect_tolerance(
        lambda e: _cess_at(pop, e), eps_floor, hi, target, iters=50, min_width=width
    )


def _cess_at(pop, eps):
    ratios = np.where(pop.distances <= eps, 1.0, 0.0)
    try:
        return conditional_ess(pop.weights, ratios)
    except DegenerateWeightsError:
        return 0.0


def run_to_tolerance(model, y, theta, eps_target, schedule, n, cfg, alpha, rng,
                     max_steps=10_000, diagnostics=None):
    """Run the full latent sampler from the prior down to ``eps_target``.

    ``schedule`` is either an explicit decreasing tolerance list or an
    :class:`AdaptiveSchedule`.  Each step reweights, resamples when the
    ESS degrades past ``alpha * n``, and moves the live particles.
    Returns ``(population, log_estimate)``; a population that dies on the
    way returns ``-inf`` with the failing step recorded on it.  When a
    list is passed as ``diagnostics`` it receives one
    ``(step, epsilon, ess, acceptance, increment)`` row per step.
    """
    if not eps_target >= 0:
        raise ContractError("target tolerance must be nonnegative")
    pop = init_population(model, y, theta, n, rng)
    explicit = not isinstance(schedule, AdaptiveSchedule)
    remaining = list(schedule) if explicit else None
    while pop.epsilon > eps_target:
        if pop.step >= max_steps:
            raise RuntimeError(
                f"latent sampler exceeded {max_steps} steps before reaching the target"
            )
        if explicit:
            if not remaining:
                raise ContractError("tolerance schedule exhausted before the target")
            eps_next = remaining.pop(0)
            if not eps_next <= pop.epsilon:
                raise ContractError("explicit schedule must be nonincreasing")
        else:
            eps_next = adapt_epsilon(pop, schedule.beta, eps_target)
        pop, inc = reweight_to(pop, eps_next)
        if pop.dead:
            if diagnostics is not None:
                diagnostics.append((pop.step, pop.epsilon, 0.0, np.nan, -np.inf))
            return pop, -np.inf
        pop = maybe_resample(pop, alpha, rng)
        pop = _move_live(pop, model, y, cfg, rng)
        if diagnostics is not None:
            diagnostics.append((pop.step, pop.epsilon, ess(pop.weights),
                                pop.last_move_accept, inc))
    return pop, pop.cum_log_estimate


# ---------------------------------------------------------------------------
# Batched helpers used by the parameter-space samplers

def advance_populations(pops, model, y, eps_new, alpha, cfg, resample_rng_for, move_rng):
    """Advance every live population one tolerance step, moves batched.

    Returns ``(new_pops, increments)``.  Dead populations pass through
    with a ``-inf`` increment.  Resampling draws come from per-population
    streams (``resample_rng_for(m)``); move draws come from the shared
    ``move_rng`` (batch-capable models consume it in one vectorised call,
    others sequentially in population order).
    """
    incs = np.empty(len(pops))
    stepped = []
    for m, pop in enumerate(pops):
        if pop.dead:
            incs[m] = -np.inf
            stepped.append(pop)
            continue
        pop, inc = reweight_to(pop, eps_new)
        incs[m] = inc
        if not pop.dead and alpha > 0.0:
            pop = maybe_resample(pop, alpha, resample_rng_for(m))
        stepped.append(pop)
    if cfg.mover == "none" or model.moved_size == 0:
        return stepped, incs
    if model.supports_batch_moves:
        return _batch_move(stepped, model, y, cfg, move_rng), incs
    out = []
    for pop in stepped:
        out.append(pop if pop.dead else _move_live(pop, model, y, cfg, move_rng))
    return out, incs


def _batch_move(pops, model, y, cfg, rng):
    """One vectorised move over the live rows of every population."""
    rows_theta, rows_eps, sel = [], [], []
    for m, pop in enumerate(pops):
        if pop.dead:
            continue
        live = np.flatnonzero(pop.live_mask())
        if live.size == 0:
            continue
        if np.any(pop.distances[live] > pop.epsilon):
            raise ContractError("live particle beyond the current tolerance")
        sel.append((m, live))
        rows_theta.append(np.tile(pop.theta.components, (live.size, 1)))
        rows_eps.append(np.full(live.size, pop.epsilon))
    if not sel:
        return list(pops)
    moved = np.concatenate([pops[m].moved[live] for m, live in sel], axis=0)
    streams = np.concatenate([pops[m].streams[live] for m, live in sel], axis=0)
    dists = np.concatenate([pops[m].distances[live] for m, live in sel])
    mv, st, dd, frac = model.move_population_batch(
        moved, streams, dists,
        np.concatenate(rows_theta, axis=0), y, np.concatenate(rows_eps), cfg, rng,
    )
    out = list(pops)
    offset = 0
    for m, live in sel:
        k = live.size
        pop = out[m]
        new_moved = pop.moved.copy()
        new_moved[live] = mv[offset:offset + k]
        new_streams = pop.streams
        if new_streams.size:
            new_streams = new_streams.copy()
            new_streams[live] = st[offset:offset + k]
        new_d = pop.distances.copy()
        new_d[live] = dd[offset:offset + k]
        out[m] = replace(
            pop, moved=new_moved, streams=new_streams, distances=new_d,
            last_move_accept=frac,
        )
        offset += k
    return out


def fresh_populations(model, y, thetas, eps_target, payload_cfg, realized, init_rng_for,
                      shared_rng):
    """Run independent fresh latent samplers down to ``eps_target``.

    One sampler per entry of ``thetas``.  The tolerance path either
    replays ``realized`` (the parameter sampler's schedule so far) or
    adapts per-population at ``payload_cfg.fresh_beta``.  Initial draws
    come from per-proposal streams; resampling and move draws come from
    the shared stream.  Returns ``(populations, log_estimates)``.
    """
    if payload_cfg.fresh == "replay":
        static = payload_cfg.move.mover == "none" or model.moved_size == 0
        if static and payload_cfg.alpha == 0.0:
            return _fresh_replay_static(model, y, thetas, eps_target,
                                        payload_cfg.n, realized, init_rng_for)
        pops = []
        for b, th in enumerate(thetas):
            pops.append(init_population(model, y, th, payload_cfg.n, init_rng_for(b)))
        for s in range(len(realized)):
            eps_s = realized[s]
            live_idx = [b for b, p in enumerate(pops) if not p.dead and p.epsilon > eps_target]
            if not live_idx:
                break
            subset, incs = advance_populations(
                [pops[b] for b in live_idx], model, y, eps_s,
                payload_cfg.alpha, payload_cfg.move,
                resample_rng_for=lambda m: shared_rng, move_rng=shared_rng,
            )
            for j, b in enumerate(live_idx):
                pops[b] = subset[j]
        return pops, np.array([p.cum_log_estimate for p in pops])

    if model.supports_batch_moves and payload_cfg.move.mover != "none":
        return _fresh_adaptive_batch(
            model, y, thetas, eps_target, payload_cfg, init_rng_for, shared_rng
        )
    pops = []
    cums = np.empty(len(thetas))
    for b, th in enumerate(thetas):
        rng_b = init_rng_for(b)
        pop = init_population(model, y, th, payload_cfg.n, rng_b)
        while not pop.dead and pop.epsilon > eps_target:
            if pop.step >= payload_cfg.fresh_max_steps:
                pop = replace(pop, dead=True, dead_step=pop.step,
                              cum_log_estimate=-np.inf)
                break
            eps_next = adapt_epsilon(pop, payload_cfg.fresh_beta, eps_target)
            pop, _ = reweight_to(pop, eps_next)
            if pop.dead:
                break
            if payload_cfg.alpha > 0.0:
                pop = maybe_resample(pop, payload_cfg.alpha, shared_rng)
            pop = _move_live(pop, model, y, payload_cfg.move, shared_rng)
        pops.append(pop)
        cums[b] = pop.cum_log_estimate
    return pops, cums


def _fresh_replay_static(model, y, thetas, eps_target, n, realized, init_rng_for):
    """Replayed fresh runs for payloads that never move or resample.

    Row-vectorised across proposals; each row's arithmetic mirrors
    :func:`core.indicator_reweight` exactly (identity fast path included),
    so the results match the per-population path bit for bit.
    """
    b_total = len(thetas)
    pops = [
        init_population(model, y, th, n, init_rng_for(b))
        for b, th in enumerate(thetas)
    ]
    if not realized:
        return pops, np.array([p.cum_log_estimate for p in pops])
    d_mat = np.stack([p.distances for p in pops])
    lw = np.stack([p.weights.log_weights for p in pops])
    cum = np.zeros(b_total)
    eps_state = np.full(b_total, np.inf)
    step = np.zeros(b_total, dtype=int)
    dead = np.zeros(b_total, dtype=bool)
    for eps_s in realized:
        act = ~dead & (eps_state > eps_target)
        if not act.any():
            break
        kernel = np.where(d_mat[act] <= eps_s, 0.0, -np.inf)
        excluded = np.isfinite(lw[act]) & (kernel == -np.inf)
        updated = lw[act] + kernel
        m = np.max(updated, axis=1)
        with np.errstate(invalid="ignore"):
            inc = np.log(np.sum(np.exp(updated - m[:, None]), axis=1)) + m
        identity = ~excluded.any(axis=1)
        inc[identity] = 0.0
        rows_dead = m == -np.inf
        new_lw = np.where(identity[:, None], lw[act], updated - inc[:, None])
        idx = np.flatnonzero(act)
        lw[idx] = new_lw
        cum[idx] = np.where(rows_dead, -np.inf, cum[idx] + inc)
        step[idx] += 1
        eps_state[idx] = eps_s
        dead[idx[rows_dead]] = True
    out = []
    for b, pop in enumerate(pops):
        out.append(replace(
            pop,
            weights=LogWeights(lw[b], normalized=not dead[b],
                               log_sum=-np.inf if dead[b] else np.nan),
            epsilon=float(eps_state[b]),
            cum_log_estimate=float(cum[b]),
            step=int(step[b]),
            dead=bool(dead[b]),
            dead_step=int(step[b]) if dead[b] else None,
        ))
    return out, cum.copy()


def _fresh_adaptive_batch(model, y, thetas, eps_target, payload_cfg, init_rng_for,
                          shared_rng):
    """Adaptive fresh runs in lockstep, one vectorised move per round."""
    pops = [
        init_population(model, y, th, payload_cfg.n, init_rng_for(b))
        for b, th in enumerate(thetas)
    ]
    while True:
        active = [
            b for b, p in enumerate(pops) if not p.dead and p.epsilon > eps_target
        ]
        if not active:
            break
        for b in list(active):
            if pops[b].step >= payload_cfg.fresh_max_steps:
                pops[b] = replace(pops[b], dead=True, dead_step=pops[b].step,
                                  cum_log_estimate=-np.inf)
                active.remove(b)
        if not active:
            break
        eps_next = _adapt_epsilons_batch(
            [pops[b] for b in active], payload_cfg.fresh_beta, eps_target
        )
        movers = []
        for j, b in enumerate(active):
            pop, _ = reweight_to(pops[b], eps_next[j])
            if not pop.dead and payload_cfg.alpha > 0.0:
                pop = maybe_resample(pop, payload_cfg.alpha, shared_rng)
            pops[b] = pop
            if not pop.dead:
                movers.append(b)
        if movers:
            updated = _batch_move(
                [pops[b] for b in movers], model, y, payload_cfg.move, shared_rng
            )
            for j, b in enumerate(movers):
                pops[b] = updated[j]
    return pops, np.array([p.cum_log_estimate for p in pops])


def _adapt_epsilons_batch(pops, beta, floor):
    """Vectorised per-population tolerance adaptation (0/1 ratio CESS)."""
    n = pops[0].n
    d_mat = np.stack([p.distances for p in pops])
    pw = np.stack([np.exp(p.weights.log_weights) for p in pops])
    target = beta * n
    eps_cur = np.array([p.epsilon for p in pops])

    totals = np.sum(pw, axis=1)

    def cess_rows(eps_col):
        w = np.sum(pw * (d_mat <= eps_col[:, None]), axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = n * (w * w) / w
        # Full survival keeps exactly n (constant unit ratios).
        return np.where(w == totals, float(n), np.where(w > 0.0, c, 0.0))

    live_max = np.max(np.where(pw > 0.0, d_mat, -np.inf), axis=1)
    lo = np.full(len(pops), floor)
    hi = np.where(np.isfinite(eps_cur), eps_cur, live_max)
    c_lo, c_hi = cess_rows(lo), cess_rows(hi)
    result = np.where(c_lo >= target, lo, np.nan)
    result = np.where(np.isnan(result) & (c_hi <= target), hi, result)
    todo = np.isnan(result)
    a, b = lo.copy(), hi.copy()
    for _ in range(50):
        if not todo.any():
            break
        mid = 0.5 * (a + b)
        go_hi = cess_rows(mid) >= target
        b = np.where(todo & go_hi, mid, b)
        a = np.where(todo & ~go_hi, mid, a)
    c_a, c_b = cess_rows(a), cess_rows(b)
    pick_a = (c_a > 0.0) & (np.abs(c_a - target) < np.abs(c_b - target))
    result[todo] = np.where(pick_a, a, b)[todo]
    return result
