"""Shared domain types and log-space weight arithmetic.

Everything downstream (the latent-space sampler, the parameter-space
samplers, the benchmark models) builds on the pieces here: observed data
and parameter containers, the split latent-randomness container, the
indicator ABC kernel, normalised log-weights with ESS/CESS diagnostics,
multinomial resampling, and the derived-stream RNG contract.

RNG contract
------------
Every run owns a single integer root seed.  Any consumer of randomness
derives an independent generator with ``stream(root, *key)``, where the
key is a tuple of small integers identifying the consumer (replicate id,
phase tag, step, particle index, ...).  Phase tags are the ``STREAM_*``
constants below.  Because streams are keyed rather than consumed from a
shared generator, serial and parallel schedules produce bit-identical
results.

Canonical serialization
-----------------------
``LatentRandomness`` serializes as a little-endian byte layout:
``uint32 moved_size | uint32 stream_size | float64 moved[] | float64
stream[]``.  Graphs serialize through their sorted edge list (see
``models.graph``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ContractError",
    "DegenerateWeightsError",
    "stream",
    "kernel_log_weight",
    "IndicatorKernel",
    "LogWeights",
    "normalize",
    "ess",
    "multinomial_resample",
    "indicator_reweight",
    "conditional_ess",
    "ObservedData",
    "ParameterPoint",
    "BoxPrior",
    "LatentRandomness",
    "SimulatorModel",
]

# Phase tags for derived RNG streams (see module docstring).
STREAM_PRIOR = 0        # initial parameter draws
STREAM_INIT = 1         # initial latent/simulation draws, per particle
STREAM_RESAMPLE = 2     # outer multinomial resampling, per step
STREAM_KERNEL = 3       # rejuvenation kernels, per (step, iteration, particle)
STREAM_INNER_RESAMPLE = 4  # latent-population resampling, per (step, particle)
STREAM_INNER_MOVE = 5   # latent-population moves, per (step, particle)
STREAM_DATA = 6         # data synthesis
STREAM_CHAIN = 7        # plain MCMC chains
STREAM_KERNEL_MOVE = 8  # shared move draws inside rejuvenation kernels, per (step, iteration)


class ContractError(ValueError):
    """An operation was called outside its stated preconditions."""


class DegenerateWeightsError(RuntimeError):
    """Every weight in a population is zero; carries the failing step."""

    def __init__(self, message, context=""):
        super().__init__(f"{message} [{context}]" if context else message)
        self.context = context


def stream(root_seed, *key):
    """Derive an independent ``numpy.random.Generator`` for a keyed consumer."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(root_seed, spawn_key=tuple(int(k) for k in key)))
    )


# ---------------------------------------------------------------------------
# ABC kernel

def kernel_log_weight(distance, epsilon):
    """Log weight of the uniform (indicator) ABC kernel.

    Returns 0.0 when ``distance <= epsilon`` (closed interval) and -inf
    otherwise.  ``epsilon`` may be +inf, giving the always-accept kernel.
    Vectorises over ``distance``.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ContractError("distance must be nonnegative")
    if not (epsilon >= 0):
        raise ContractError("tolerance must be nonnegative or +inf")
    out = np.where(d <= epsilon, 0.0, -np.inf)
    return float(out) if np.ndim(distance) == 0 else out


@dataclass(frozen=True)
class IndicatorKernel:
    """Uniform ABC kernel: closed acceptance interval ``distance <= epsilon``."""

    epsilon: float

    def __post_init__(self):
        if not (self.epsilon >= 0):
            raise ContractError("tolerance must be nonnegative or +inf")

    def log_weight(self, distance):
        return kernel_log_weight(distance, self.epsilon)


# ---------------------------------------------------------------------------
# Log-space weights

def _logsumexp(log_values):
    """Stable log-sum-exp; returns -inf when every entry is -inf."""
    m = np.max(log_values)
    if m == -np.inf:
        return -np.inf
    return float(np.log(np.sum(np.exp(log_values - m))) + m)


@dataclass(frozen=True)
class LogWeights:
    """A weight vector stored in log space.

    ``log_sum`` records the log of the pre-normalisation weight sum and is
    populated by :func:`normalize`; ``normalized`` guards operations that
    require probability weights.
    """

    log_weights: np.ndarray
    normalized: bool = False
    log_sum: float = np.nan

    def __post_init__(self):
        object.__setattr__(self, "log_weights", np.asarray(self.log_weights, dtype=float))

    def __len__(self):
        return self.log_weights.size

    @classmethod
    def uniform(cls, n):
        lw = np.full(n, -np.log(n))
        return cls(lw, normalized=True, log_sum=0.0)

    def linear(self):
        """Weights in linear space (requires normalisation)."""
        if not self.normalized:
            raise ContractError("linear weights requested from unnormalized set")
        return np.exp(self.log_weights)


def normalize(w, context=""):
    """Normalise a :class:`LogWeights`, recording ``log_sum`` stably.

    Idempotent: a normalised input is returned unchanged (bit-exact).
    Raises :class:`DegenerateWeightsError` when every weight is -inf.
    """
    if w.normalized:
        return w
    total = _logsumexp(w.log_weights)
    if total == -np.inf:
        raise DegenerateWeightsError("all weights are zero", context)
    return LogWeights(w.log_weights - total, normalized=True, log_sum=total)


def ess(w):
    """Effective sample size ``1 / sum(w_n^2)`` of normalised weights."""
    if not w.normalized:
        raise ContractError("ess requires normalized weights")
    lw = w.log_weights
    finite = lw[np.isfinite(lw)]
    if finite.size == 0:
        raise DegenerateWeightsError("all weights are zero", "ess")
    if np.all(finite == finite[0]):
        # Equal support weights: the value is exactly the support size.
        return float(finite.size)
    return float(1.0 / np.sum(np.exp(lw) ** 2))


def multinomial_resample(w, rng):
    """Draw ``n`` ancestor indices i.i.d. from the categorical given by ``w``.

    The caller resets weights to uniform afterwards.  An inverse-CDF
    search keeps the draw count fixed at ``n`` uniforms.
    """
    if not w.normalized:
        raise ContractError("resampling requires normalized weights")
    probs = w.linear()
    cdf = np.cumsum(probs)
    u = rng.random(len(w))
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, len(w) - 1)


# Hook for alternative resampling schemes; only the multinomial scheme is
# registered (and used) -- the samplers assume i.i.d. ancestor draws.
RESAMPLERS = {"multinomial": multinomial_resample}


def resample(w, rng, scheme="multinomial"):
    try:
        return RESAMPLERS[scheme](w, rng)
    except KeyError:
        raise ContractError(f"unknown resampling scheme {scheme!r}") from None


def indicator_reweight(w, distances, epsilon, context=""):
    """Reweight by the indicator kernel at ``epsilon``; shared by every payload.

    Returns ``(new_weights, log_increment)`` where ``log_increment`` is the
    log of the sum of the updated unnormalised weights (one factor of the
    SMC normalising-constant estimate).  When every particle falls outside
    the tolerance the increment is -inf and the returned weights are the
    (degenerate, unnormalised) updated vector.
    """
    if not w.normalized:
        raise ContractError("reweight requires normalized weights")
    kernel = kernel_log_weight(distances, epsilon)
    live = np.isfinite(w.log_weights)
    if not np.any(live & (kernel == -np.inf)):
        # No live particle is excluded: exact identity (the normalised
        # weights sum to one by contract, so the increment is exactly 0).
        return w, 0.0
    updated = w.log_weights + kernel
    increment = _logsumexp(updated)
    if increment == -np.inf:
        return LogWeights(updated, normalized=False, log_sum=-np.inf), -np.inf
    return LogWeights(updated - increment, normalized=True, log_sum=increment), increment


def apply_log_ratios(w, log_ratios, context=""):
    """Multiply normalised weights by per-particle ratios, renormalising.

    Returns ``(new_weights, log_increment)`` with the increment being the
    log of the summed unnormalised products (one evidence factor).  A
    step whose ratios are all exactly one is an exact identity.
    """
    if not w.normalized:
        raise ContractError("weight update requires normalized weights")
    lr = np.asarray(log_ratios, dtype=float)
    if np.all(lr == 0.0):
        return w, 0.0
    updated = w.log_weights + lr
    inc = _logsumexp(updated)
    if inc == -np.inf:
        raise DegenerateWeightsError("all weights are zero after the update", context)
    return LogWeights(updated - inc, normalized=True, log_sum=inc), inc


def conditional_ess(w, ratios):
    """CESS between consecutive targets: ``N (sum w r)^2 / sum(w r^2)``.

    ``ratios`` are per-particle nonnegative reweighting factors in linear
    space; ``w`` must be normalised.
    """
    if not w.normalized:
        raise ContractError("cess requires normalized weights")
    r = np.asarray(ratios, dtype=float)
    if np.any(r < 0) or np.any(~np.isfinite(r) & (r != 0)):
        raise ContractError("ratios must be finite and nonnegative")
    probs = w.linear()
    support = r[probs > 0.0]
    if support.size and np.all(support == support[0]) and support[0] > 0.0:
        # Constant ratios over the support: exactly n (scale invariance).
        return float(len(w))
    num = np.sum(probs * r)
    den = np.sum(probs * r * r)
    if den == 0.0:
        raise DegenerateWeightsError("all reweighting ratios are zero", "cess")
    return float(len(w) * num * num / den)


def bisect_tolerance(cess_at, lo, hi, target, iters=50, min_width=0.0):
    """Bisect a nondecreasing ``cess_at(epsilon)`` toward ``target``.

    Searches ``[lo, hi]`` for the tolerance whose CESS is closest to
    ``target``; assumes ``cess_at(hi) >= target`` (callers guarantee this
    because the current tolerance keeps every live particle inside the
    kernel).  Returns ``lo`` immediately when even the floor keeps the
    CESS at or above the target.  ``cess_at`` returns 0.0 for a tolerance
    that would kill the whole population.
    """
    c_lo = cess_at(lo)
    if c_lo >= target:
        return lo
    c_hi = cess_at(hi)
    if c_hi <= target:
        return hi
    a, b = lo, hi
    for _ in range(iters):
        if (b - a) < min_width:
            break
        mid = 0.5 * (a + b)
        if cess_at(mid) >= target:
            b = mid
        else:
            a = mid
    # Prefer the endpoint closest to the target among candidates that keep
    # the population alive; ties go to the larger tolerance.
    c_a, c_b = cess_at(a), cess_at(b)
    if c_a > 0.0 and abs(c_a - target) < abs(c_b - target):
        return a
    return b


# ---------------------------------------------------------------------------
# Domain containers

@dataclass(frozen=True)
class ObservedData:
    """Observed data: either a length-``d`` real vector or a graph."""

    kind: str  # "vector" | "graph"
    values: object

    def __post_init__(self):
        if self.kind == "vector":
            v = np.asarray(self.values, dtype=float)
            if v.ndim != 1 or v.size < 1:
                raise ContractError("vector data must be 1-d with d >= 1")
            object.__setattr__(self, "values", v)
        elif self.kind == "graph":
            if self.values.n < 1:
                raise ContractError("graph data needs at least one node")
        else:
            raise ContractError(f"unknown data kind {self.kind!r}")

    @classmethod
    def vector(cls, values):
        return cls("vector", values)

    @classmethod
    def graph(cls, g):
        return cls("graph", g)

    @property
    def dim(self):
        return self.values.size if self.kind == "vector" else self.values.n


@dataclass(frozen=True)
class ParameterPoint:
    """A parameter vector constrained to per-component box bounds."""

    components: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.components, dtype=float))
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if not (c.shape == lo.shape == hi.shape):
            raise ContractError("components and bounds must share a shape")
        if np.any(c < lo) or np.any(c > hi):
            raise ContractError("parameter outside its box bounds")
        object.__setattr__(self, "components", c)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def __getitem__(self, i):
        return float(self.components[i])

    @property
    def dim(self):
        return self.components.size


@dataclass(frozen=True)
class BoxPrior:
    """Independent uniform prior over a box; the prior for both models."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if np.any(hi <= lo):
            raise ContractError("box upper bounds must exceed lower bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def sample(self, rng):
        c = self.lower + rng.random(self.dim) * (self.upper - self.lower)
        return ParameterPoint(c, self.lower, self.upper)

    def contains(self, components):
        c = np.atleast_1d(np.asarray(components, dtype=float))
        return bool(np.all(c >= self.lower) and np.all(c <= self.upper))

    def log_density(self, components):
        if not self.contains(components):
            return -np.inf
        return float(-np.sum(np.log(self.upper - self.lower)))

    def point(self, components):
        return ParameterPoint(np.atleast_1d(components), self.lower, self.upper)


@dataclass(frozen=True)
class LatentRandomness:
    """Simulator randomness split into a moved block and a replay stream.

    ``moved`` has a fixed shape for a given model configuration and is the
    only block MCMC moves may touch.  ``stream`` is a flat bank of
    unit-interval draws that the simulator consumes positionally and that
    is never moved; replays with a mutated ``moved`` block reuse it
    positionally.  Together with the parameter they determine the
    simulator output exactly.
    """

    moved: np.ndarray
    stream: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "moved", np.asarray(self.moved, dtype=float))
        object.__setattr__(self, "stream", np.asarray(self.stream, dtype=float))

    def to_bytes(self):
        """Canonical byte layout (see module docstring)."""
        head = struct.pack("<II", self.moved.size, self.stream.size)
        return (
            head
            + self.moved.astype("<f8").tobytes()
            + self.stream.astype("<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, raw):
        n_m, n_s = struct.unpack_from("<II", raw, 0)
        off = 8
        moved = np.frombuffer(raw, dtype="<f8", count=n_m, offset=off).copy()
        off += 8 * n_m
        stream_block = np.frombuffer(raw, dtype="<f8", count=n_s, offset=off).copy()
        return cls(moved, stream_block)


class SimulatorModel:
    """Capability bundle every benchmark model implements.

    Required surface:

    * ``prior`` -- :class:`BoxPrior` over the parameter box
    * ``moved_size`` / ``stream_size`` -- block widths of the latent split
    * ``sample_u(theta, rng)`` / ``sample_u_batch(theta, n, rng)``
    * ``log_density_moved(u, theta)`` -- log density of the moved block
    * ``transform(u, theta)`` -- deterministic map to a data-space point
    * ``distance(y, x)`` -- nonnegative, symmetric, zero at ``x == y``
    * ``distances_batch(moved, streams, theta, y)`` -- cached-distance path
    * ``mover`` -- "slice" | "edge-flip" | "none"; movers also expose
      ``move_population(...)`` and, when vectorisable, a batched variant.
    """

    mover = "none"
    supports_batch_moves = False

    def sample_u(self, theta, rng):
        moved, streams = self.sample_u_batch(theta, 1, rng)
        return LatentRandomness(moved[0], streams[0])

    def sample_u_batch(self, theta, n, rng):
        raise NotImplementedError

    def log_density_moved(self, u, theta):
        raise NotImplementedError

    def transform(self, u, theta):
        raise NotImplementedError

    def distance(self, y, x):
        raise NotImplementedError

    def distances_batch(self, moved, streams, theta, y):
        n = moved.shape[0]
        out = np.empty(n)
        for i in range(n):
            u = LatentRandomness(moved[i], streams[i] if streams.size else np.empty(0))
            out[i] = self.distance(y, self.transform(u, theta))
        return out


def replace_fields(obj, **kw):
    """`dataclasses.replace` re-export used by population updates."""
    return replace(obj, **kw)
