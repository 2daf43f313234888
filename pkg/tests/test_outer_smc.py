import math
from dataclasses import replace

import numpy as np
import pytest

from reabc.core import ContractError, DegenerateWeightsError, LogWeights, stream
from reabc.inner_smc import MoveConfig, init_population
from reabc.mcmc import TruncNormalProposal
from reabc.models import GaussianModel, GaussianModelConfig
from reabc.models.gaussian import gaussian_posterior_oracle
from reabc.outer_smc import (
    AdaptConfig,
    ParamParticle,
    PayloadConfig,
    SamplerConfig,
    StopRule,
    adapt_num_moves,
    cess,
    choose_tolerance,
    evidence_estimate,
    outer_reweight_baseline,
    outer_reweight_re,
    resample_move,
    run_abc_smc,
    run_re_abc_smc2,
)
from reabc.outer_smc import _Context


def gaussian(d=1, **kw):
    return GaussianModel(GaussianModelConfig(d=d, **kw))


def make_particles(model, y, n_theta, n_payload, seed=0):
    particles = []
    for m in range(n_theta):
        theta = model.prior.sample(stream(seed, 0, m))
        pop = init_population(model, y, theta, n_payload, stream(seed, 1, m))
        particles.append(ParamParticle(theta, pop))
    return particles, LogWeights.uniform(n_theta)


class TestCess:
    def test_constant_ratio_attains_n(self):
        for k in (0.001, 1.0, 7.5):
            assert cess(LogWeights.uniform(5), np.full(5, k)) == 5.0

    def test_hand_value(self):
        assert cess(LogWeights.uniform(2), [1.0, 0.0]) == pytest.approx(1.0)

    def test_permutation(self):
        rng = np.random.default_rng(0)
        w = rng.random(7)
        w /= w.sum()
        r = rng.random(7)
        perm = rng.permutation(7)
        a = cess(LogWeights(np.log(w), normalized=True), r)
        b = cess(LogWeights(np.log(w[perm]), normalized=True), r[perm])
        assert a == pytest.approx(b, rel=1e-12)


class TestAdaptNumMoves:
    def test_formula_value(self):
        assert adapt_num_moves(0.5, 0.2, 100) == 3

    def test_certain_acceptance(self):
        assert adapt_num_moves(1.0, 0.2, 100) == 1

    def test_zero_acceptance_hits_cap(self):
        assert adapt_num_moves(0.0, 0.2, 100) == 100

    def test_cap_clamps(self):
        assert adapt_num_moves(0.01, 0.2, 10) == 10

    def test_validation(self):
        with pytest.raises(ContractError):
            adapt_num_moves(1.5, 0.2, 10)
        with pytest.raises(ContractError):
            adapt_num_moves(0.5, 1.2, 10)


class TestChooseTolerance:
    def test_floor_when_target_unattainable(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 8, 6, seed=1)
        floor = float(max(p.payload.distances.max() for p in particles)) + 1.0
        # every payload survives wholly at the floor: ratios are all one
        assert choose_tolerance(particles, weights, 0.9, floor, np.inf) == floor

    def test_matches_grid_oracle(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 20, 10, seed=2)
        out = choose_tolerance(particles, weights, 0.9, 0.0, np.inf)
        d_mat = np.stack([p.payload.distances for p in particles])
        pw = np.exp(np.stack([p.payload.weights.log_weights for p in particles]))
        hi = float(d_mat.max())
        grid = np.linspace(0.0, hi, 10_001)
        probs = np.exp(weights.log_weights)

        def cess_at(e):
            r = np.sum(pw * (d_mat <= e), axis=1)
            den = np.sum(probs * r * r)
            if den == 0.0:
                return 0.0
            return 20 * np.sum(probs * r) ** 2 / den

        vals = np.array([cess_at(e) for e in grid])
        best = grid[int(np.argmin(np.abs(vals - 0.9 * 20)))]
        assert abs(out - best) <= hi / 10_000 + 1e-12

    def test_strictly_decreases_when_distances_span(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 10, 8, seed=3)
        eps1 = choose_tolerance(particles, weights, 0.9, 0.0, np.inf)
        assert eps1 < max(p.payload.distances.max() for p in particles)


class TestReweightOps:
    def test_identity_when_tolerance_unchanged(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 6, 5, seed=4)
        eps = float(max(p.payload.distances.max() for p in particles))
        p2, w2, inc, _ = outer_reweight_baseline(particles, weights, eps)
        assert inc == 0.0
        np.testing.assert_array_equal(w2.log_weights, weights.log_weights)
        p3, w3, inc3, _ = outer_reweight_baseline(p2, w2, eps)
        assert inc3 == 0.0

    def test_count_ratio(self):
        # two stored simulations, tolerance drops to keep one: ratio 1/2
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 2, 2, seed=5)
        pop0 = particles[0].payload
        eps_keep_all = float(max(p.payload.distances.max() for p in particles))
        particles, weights, _, _ = outer_reweight_baseline(particles, weights,
                                                           eps_keep_all)
        cut = float(np.sort(pop0.distances)[0])
        if np.sort(particles[1].payload.distances)[0] > cut:
            # both particles keep exactly one of two simulations
            cut = float(max(np.sort(p.payload.distances)[0] for p in particles))
        p2, w2, inc, incs = outer_reweight_baseline(particles, weights, cut)
        kept = [int(np.sum(p.payload.distances <= cut)) for p in particles]
        for k, i in zip(kept, incs):
            if k > 0:
                assert i == pytest.approx(math.log(k / 2), rel=1e-12)

    def test_re_increments_update_weights(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 2, 4, seed=6)
        pc = PayloadConfig(n=4, move=MoveConfig("slice"), alpha=0.5)
        # choose a tolerance keeping all of particle 1 and half of particle 0
        d0 = np.sort(particles[0].payload.distances)
        d1 = particles[1].payload.distances
        eps = float(d0[1])
        if d1.max() > eps:
            pytest.skip("fixture landed awkwardly; covered by other seeds")
        p2, w2, inc, incs = outer_reweight_re(
            particles, weights, eps, m, y, pc,
            resample_rng_for=lambda j: stream(6, 9, j), move_rng=stream(6, 10),
        )
        np.testing.assert_allclose(
            np.exp(w2.log_weights),
            np.exp(incs) / np.sum(np.exp(incs)), rtol=1e-12,
        )

    def test_all_dead_raises(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 3, 3, seed=7)
        tiny = float(min(p.payload.distances.min() for p in particles)) * 0.5
        with pytest.raises(DegenerateWeightsError):
            outer_reweight_baseline(particles, weights, tiny)


class TestResampleMove:
    def _ctx(self, model, y, pc):
        return _Context(model, y, pc, AdaptConfig(), StopRule(), 11, 0)

    def test_probe_half_acceptance_gives_three_iterations(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 10, 4, seed=8)
        calls = []

        def stub_kernel(parts, ctx, t, i, eps, realized, proposal):
            calls.append(i)
            return 0.5, parts

        ctx = self._ctx(m, y, PayloadConfig(n=4))
        resample_move(particles, weights, ctx, 1, 5.0, [5.0],
                      TruncNormalProposal([1.0], [0.0], [10.0]),
                      kernel=stub_kernel)
        assert calls == [0, 1, 2]

    def test_degenerate_weights_duplicate_before_moves(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 6, 4, seed=9)
        point_mass = LogWeights(
            np.array([0.0] + [-np.inf] * 5), normalized=True
        )
        seen = {}

        def stub_kernel(parts, ctx, t, i, eps, realized, proposal):
            if i == 0:
                seen["thetas"] = [p.theta.components[0] for p in parts]
            return 1.0, parts

        ctx = self._ctx(m, y, PayloadConfig(n=4))
        resample_move(particles, point_mass, ctx, 1, 5.0, [5.0],
                      TruncNormalProposal([1.0], [0.0], [10.0]),
                      kernel=stub_kernel)
        assert len(set(seen["thetas"])) == 1
        assert seen["thetas"][0] == particles[0].theta.components[0]

    def test_acceptance_floor_preempts_iterations(self):
        m = gaussian(2)
        y = np.array([1.0, 2.0])
        particles, weights = make_particles(m, y, 5, 4, seed=10)
        calls = []

        def stub_kernel(parts, ctx, t, i, eps, realized, proposal):
            calls.append(i)
            return 0.001, parts

        ctx = self._ctx(m, y, PayloadConfig(n=4))
        _, _, acc, done = resample_move(
            particles, weights, ctx, 1, 5.0, [5.0],
            TruncNormalProposal([1.0], [0.0], [10.0]),
            acceptance_floor=0.015, kernel=stub_kernel,
        )
        assert calls == [0] and done == 1 and acc == 0.001


class _ConstantDistanceModel(GaussianModel):
    """Every simulation lands at the same distance: the run must stall."""

    def distances_batch(self, moved, streams, theta, y):
        return np.full(moved.shape[0], 7.0)


class TestRunners:
    def test_infinite_target_returns_prior_sample(self):
        m = gaussian(1)
        y = np.array([3.0])
        cfg = SamplerConfig(n_theta=50, payload=PayloadConfig(n=3),
                            stop=StopRule(eps_target=np.inf), seed=12)
        out = run_abc_smc(m, y, cfg)
        assert out.stop_reason == "tolerance_reached"
        assert out.log_evidence == 0.0
        assert len(out.schedule) == 0
        # prior sample: weighted mean near 5 with uniform weights
        np.testing.assert_allclose(out.weights, 1.0 / 50)
        assert abs(out.posterior_mean()[0] - 5.0) < 1.5

    def test_same_seed_bitwise_reproducible(self):
        m = gaussian(1)
        y = np.array([3.0])
        cfg = SamplerConfig(
            n_theta=40, payload=PayloadConfig(n=10, move=MoveConfig("slice"),
                                              alpha=0.5),
            stop=StopRule(eps_target=1.0, max_steps=30), seed=13,
        )
        a = run_re_abc_smc2(m, y, cfg)
        b = run_re_abc_smc2(m, y, cfg)
        assert [s.epsilon for s in a.schedule] == [s.epsilon for s in b.schedule]
        assert a.log_evidence == b.log_evidence
        np.testing.assert_array_equal(a.theta_components, b.theta_components)
        np.testing.assert_array_equal(a.log_weights, b.log_weights)

    def test_posterior_mean_tracks_quadrature_wide_tolerance(self):
        m = gaussian(1)
        y = np.array([3.0])
        oracle_mean, _ = gaussian_posterior_oracle(y, 0.0, 10.0, 4.0)
        means = []
        for rep in range(12):
            cfg = SamplerConfig(
                n_theta=400, payload=PayloadConfig(n=4),
                stop=StopRule(eps_target=4.0, max_steps=60), seed=14,
                replicate=rep,
            )
            means.append(run_abc_smc(m, y, cfg).posterior_mean()[0])
        se = np.std(means, ddof=1) / math.sqrt(len(means))
        assert abs(np.mean(means) - oracle_mean) < 3 * se

    def test_evidence_increments_nonpositive_and_matches_product(self):
        m = gaussian(1)
        y = np.array([3.0])
        cfg = SamplerConfig(
            n_theta=60, payload=PayloadConfig(n=8, move=MoveConfig("slice"),
                                              alpha=0.5),
            stop=StopRule(eps_target=0.5, max_steps=40), seed=15,
        )
        out = run_re_abc_smc2(m, y, cfg)
        incs = [s.increment for s in out.schedule]
        assert all(i <= 0.0 for i in incs)
        assert evidence_estimate(out) == pytest.approx(sum(incs), rel=1e-12)

    def test_schedule_strictly_decreasing_and_resample_audit(self):
        m = gaussian(1)
        y = np.array([3.0])
        cfg = SamplerConfig(
            n_theta=80, payload=PayloadConfig(n=8, move=MoveConfig("slice"),
                                              alpha=0.5),
            adapt=AdaptConfig(alpha=0.5),
            stop=StopRule(eps_target=0.25, max_steps=60), seed=16,
        )
        out = run_re_abc_smc2(m, y, cfg)
        eps_seq = [s.epsilon for s in out.schedule]
        assert all(b < a for a, b in zip(eps_seq, eps_seq[1:]))
        for s in out.schedule:
            assert s.resampled == (s.ess < 0.5 * 80)

    def test_cess_achieved_near_target_or_at_floor(self):
        m = gaussian(1)
        y = np.array([3.0])
        cfg = SamplerConfig(
            n_theta=150, payload=PayloadConfig(n=10, move=MoveConfig("slice"),
                                               alpha=0.5),
            adapt=AdaptConfig(beta=0.9),
            stop=StopRule(eps_target=0.5, max_steps=60), seed=22,
        )
        out = run_re_abc_smc2(m, y, cfg)
        target = 0.9 * 150
        for s in out.schedule:
            # at the target tolerance the bracket floor wins; elsewhere the
            # bisected CESS sits at or just above the target (monotone jump)
            assert s.cess >= target * 0.95 or s.epsilon == 0.5
            assert s.cess <= 150.0 + 1e-9

    def test_budget_stop(self):
        m = gaussian(1)
        y = np.array([3.0])
        cfg = SamplerConfig(n_theta=30, payload=PayloadConfig(n=4),
                            stop=StopRule(eps_target=0.0, budget_seconds=0.0),
                            seed=17)
        out = run_abc_smc(m, y, cfg)
        assert out.stop_reason == "budget"
        assert len(out.schedule) == 0

    def test_max_steps_stop(self):
        m = gaussian(1)
        y = np.array([3.0])
        cfg = SamplerConfig(n_theta=30, payload=PayloadConfig(n=4),
                            stop=StopRule(eps_target=0.0, max_steps=2), seed=18)
        out = run_abc_smc(m, y, cfg)
        assert out.stop_reason == "max_steps"
        assert len(out.schedule) == 2

    def test_constant_distances_stall(self):
        m = _ConstantDistanceModel(GaussianModelConfig(d=1))
        y = np.array([3.0])
        cfg = SamplerConfig(n_theta=20, payload=PayloadConfig(n=4),
                            stop=StopRule(eps_target=0.0, max_steps=10), seed=19)
        out = run_abc_smc(m, y, cfg)
        assert out.stop_reason == "stalled"


class TestReductionIdentity:
    def test_bit_exact_containment(self):
        # the stored-simulation sampler is the latent sampler with an empty
        # moved block, matched sizes, no latent resampling, and replayed
        # kernel schedules
        m_moved = gaussian(2)
        m_stream = gaussian(2, move_block=False)
        rng = stream(20, 0)
        y = 3.0 * np.abs(rng.standard_normal(2))
        cfg = SamplerConfig(
            n_theta=40,
            payload=PayloadConfig(n=12, move=MoveConfig("none"), alpha=0.0,
                                  fresh="replay"),
            stop=StopRule(eps_target=0.0, max_steps=5), seed=21,
            record_weight_trajectory=True,
        )
        a = run_abc_smc(m_moved, y, cfg)
        b = run_re_abc_smc2(m_stream, y, cfg)
        assert len(a.schedule) == len(b.schedule) == 5
        for da, db in zip(a.schedule, b.schedule):
            assert da.epsilon == db.epsilon
            assert da.increment == db.increment
        for (ta, ea, wa), (tb, eb, wb) in zip(a.weight_trajectory,
                                              b.weight_trajectory):
            assert ta == tb and ea == eb
            np.testing.assert_array_equal(wa, wb)
        assert a.log_evidence == b.log_evidence
        np.testing.assert_array_equal(a.theta_components, b.theta_components)
        np.testing.assert_array_equal(a.log_weights, b.log_weights)
