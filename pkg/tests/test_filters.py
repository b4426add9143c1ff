import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mpfusion import filters
from mpfusion import gaussian as gs
from mpfusion.gaussian import Gaussian
from mpfusion.linear import kalman_filter, make_linear_gaussian_oracle
from mpfusion.model import BenchmarkModel, make_partitioning


def run(variant, model, K, N, seed, obs, **kw):
    state = filters.init(variant, model, make_partitioning(model.d_x, K), N, seed, **kw)
    return state, filters.run_filter(state, obs)


def linear_model(d=2, **kw):
    A = 0.8 * np.eye(d) + 0.1 * np.eye(d, k=1)
    return make_linear_gaussian_oracle(d, A, np.eye(d), 0.5 * np.eye(d), 0.8 * np.eye(d), **kw)


def conjugate_model(K, theta=0.7):
    # y_i = theta + v_i; the state never enters the observation
    d = K
    return make_linear_gaussian_oracle(
        d, np.zeros((d, d)), np.zeros((d, d)), np.eye(d), np.eye(d),
        D=np.ones((d, 1)), theta_global_true=[theta], global_prior_mean=[0.0], global_prior_cov=[[2.0]],
    )


class TestInit:
    def test_single_cloud_shape(self):
        s = filters.init("spf", BenchmarkModel(d_x=10, dim_global=2), None, 2000, 0)
        assert len(s.clouds) == 1
        assert s.clouds[0].samples.shape == (2000, 12)
        assert_allclose(s.clouds[0].weights, 1 / 2000)
        assert s.fused_prior is None

    def test_mpf_cloud_shapes(self):
        s = filters.init("mpf-fusion", BenchmarkModel(d_x=10, dim_global=2), make_partitioning(10, 5), 2000, 0)
        assert [c.samples.shape for c in s.clouds] == [(400, 4)] * 5
        assert_array_equal(s.fused_prior.mean, [1.0, 1.0])
        assert_array_equal(s.fused_prior.cov, 2 * np.eye(2))

    def test_initial_draws_follow_priors(self):
        s = filters.init("spf", BenchmarkModel(d_x=3, dim_global=2), None, 200_000, 1)
        z = s.clouds[0].samples
        assert_allclose(z.mean(axis=0), [0, 0, 0, 1, 1], atol=0.02)
        assert_allclose(z.var(axis=0), [2.0] * 5, rtol=0.02)

    def test_same_seed_same_clouds(self):
        m = BenchmarkModel(d_x=4)
        a = filters.init("mpf", m, make_partitioning(4, 2), 100, 7)
        b = filters.init("mpf", m, make_partitioning(4, 2), 100, 7)
        for ca, cb in zip(a.clouds, b.clouds):
            assert_array_equal(ca.samples, cb.samples)

    def test_errors(self):
        m = BenchmarkModel(d_x=10)
        with pytest.raises(ValueError, match="divisible"):
            filters.init("mpf", m, make_partitioning(10, 5), 2001, 0)
        with pytest.raises(ValueError):
            filters.init("nope", m, None, 100, 0)
        with pytest.raises(ValueError):
            filters.init("spf", m, make_partitioning(5, 1), 100, 0)


class TestReductions:
    def test_mpf_with_one_block_is_spf(self):
        m = BenchmarkModel(d_x=4, dim_global=2)
        obs = m.simulate(8, np.random.default_rng(0)).observations
        _, a = run("spf", m, 1, 300, 42, obs)
        _, b = run("mpf", m, 1, 300, 42, obs)
        for ea, eb in zip(a, b):
            assert_array_equal(ea.state_mean, eb.state_mean)
            assert_array_equal(ea.theta_mean, eb.theta_mean)

    def test_fusion_with_one_block_resamples_from_the_dapf_fit(self):
        m = BenchmarkModel(d_x=3, dim_global=2)
        obs = m.simulate(6, np.random.default_rng(1)).observations
        d = filters.init("dapf", m, None, 500, 9)
        f = filters.init("mpf-fusion", m, make_partitioning(3, 1), 500, 9)
        for y in obs:
            f.clouds = [c.copy() for c in d.clouds]
            filters.step(d, y)
            filters.step(f, y)
            joint = filters.resampling_distribution(f.last_fits[0], f.last_fused, f.clouds[0].layout)
            assert_allclose(joint.mean, d.last_fits[0].mean, rtol=0, atol=1e-12)
            assert_allclose(joint.cov, d.last_fits[0].cov, rtol=0, atol=1e-12)

    def test_identical_theta_copies_average_to_themselves(self):
        m = BenchmarkModel(d_x=4, dim_global=2)
        s = filters.init("mpf", m, make_partitioning(4, 2), 200, 0, sigma_rw2=0.0)
        for c in s.clouds:
            c.samples[:, c.layout.glob] = [1.5, -0.5]
        _, est = filters.step(s, np.zeros(4))
        assert_allclose(est.theta_mean, [1.5, -0.5], rtol=1e-14)
        assert_allclose(est.per_filter_theta, [[1.5, -0.5]] * 2, rtol=1e-14)


class TestFusionStep:
    def test_fused_prior_chain(self, monkeypatch):
        m = BenchmarkModel(d_x=4, dim_global=2)
        obs = m.simulate(6, np.random.default_rng(3)).observations
        seen = []
        real = gs.fuse_with_info

        def spy(locals_, prior, floor=gs.DEFAULT_FLOOR):
            res = real(locals_, prior, floor)
            seen.append((prior, res))
            return res

        monkeypatch.setattr(gs, "fuse_with_info", spy)
        s = filters.init("mpf-fusion", m, make_partitioning(4, 2), 400, 5)
        initial = s.fused_prior
        for y in obs:
            filters.step(s, y)
        assert seen[0][0] is initial
        for (_, prev), (prior, _) in zip(seen, seen[1:]):
            assert prev.fallback == "none"
            assert_array_equal(prior.mean, prev.gaussian.mean)
            assert_array_equal(prior.cov, prev.gaussian.cov)
        assert_array_equal(s.fused_prior.mean, seen[-1][1].gaussian.mean)

    def test_fusion_failure_reuses_prior(self, monkeypatch):
        def broken(*a, **k):
            raise gs.NumericalFailure("boom")

        monkeypatch.setattr(gs, "fuse_with_info", broken)
        m = BenchmarkModel(d_x=4, dim_global=2)
        s = filters.init("mpf-fusion", m, make_partitioning(4, 2), 200, 0)
        prior = s.fused_prior
        filters.step(s, np.zeros(4))
        assert s.fusion_failures == 1 and not s.failed
        assert s.fused_prior is prior

    def test_theta_estimate_is_fused_mean(self):
        m = BenchmarkModel(d_x=4, dim_global=2)
        s = filters.init("mpf-fusion", m, make_partitioning(4, 2), 400, 5)
        _, est = filters.step(s, m.simulate(1, np.random.default_rng(0)).observations[0])
        assert_array_equal(est.theta_mean, s.fused_prior.mean)

    def test_resample_uses_only_own_fit_and_stream(self):
        rng = np.random.default_rng(0)
        lay = filters.CloudLayout(2, 0, 1)
        fits = [Gaussian(rng.normal(size=3), np.eye(3) + 0.3) for _ in range(3)]
        fused = Gaussian([0.2], [[0.5]])

        def draw(fits):
            rngs = [np.random.default_rng(s) for s in (1, 2, 3)]
            return filters.fusion_resample(fits, fused, [lay] * 3, [50] * 3, rngs)

        base = draw(fits)
        other = draw([fits[0], Gaussian(fits[1].mean + 5, 2 * fits[1].cov), fits[2]])
        assert_array_equal(base[0].samples, other[0].samples)
        assert_array_equal(base[2].samples, other[2].samples)
        assert not np.array_equal(base[1].samples, other[1].samples)

    def test_block_output_ignores_other_blocks_given_fused(self, monkeypatch):
        fixed = Gaussian([1.1, 0.9], [[0.3, 0.05], [0.05, 0.2]])
        monkeypatch.setattr(gs, "fuse_with_info", lambda *a, **k: gs.FusionResult(fixed, "none"))
        m = BenchmarkModel(d_x=4, dim_global=2)
        y = m.simulate(1, np.random.default_rng(0)).observations[0]
        a = filters.init("mpf-fusion", m, make_partitioning(4, 2), 300, 4)
        b = filters.init("mpf-fusion", m, make_partitioning(4, 2), 300, 4)
        filters.step(a, y)
        y2 = y.copy()
        y2[2:] += 3.0
        filters.step(b, y2)
        assert_array_equal(a.clouds[0].samples, b.clouds[0].samples)
        assert not np.array_equal(a.clouds[1].samples, b.clouds[1].samples)

    def test_conjugate_static_model(self):
        K = 4
        model, kal = conjugate_model(K)
        obs = model.simulate(10, np.random.default_rng(1)).observations
        exact = kal(obs)[0][-1, -1]
        ests = []
        for s in range(30):
            st, _ = run("mpf-fusion", model, K, 2000, s, obs)
            ests.append(st.fused_prior.mean[0])
        ests = np.array(ests)
        assert abs(ests.mean() - exact) <= 3 * ests.std(ddof=1) / np.sqrt(len(ests))

    def test_local_parameters(self):
        d, K = 4, 2
        p = make_partitioning(d, K)
        model, kal = make_linear_gaussian_oracle(
            d, 0.5 * np.eye(d), np.eye(d), 0.2 * np.eye(d), 0.5 * np.eye(d),
            D=np.ones((d, 1)), theta_global_true=[1.0], global_prior_mean=[0.0], global_prior_cov=[[1.0]],
            local_partitioning=p, theta_local_true=[0.5, -0.5], local_prior_var=1.0,
        )
        obs = model.simulate(15, np.random.default_rng(2)).observations
        km, _ = kal(obs)
        st, est = run("mpf-fusion", model, K, 8000, 0, obs)
        assert [c.samples.shape[1] for c in st.clouds] == [4, 4]
        locals_ = [c.theta_local.mean() for c in st.clouds]
        assert_allclose(locals_, km[-1, d : d + K], atol=0.25)
        assert_allclose(est[-1].theta_mean, km[-1, -1:], atol=0.25)
        with pytest.raises(ValueError, match="local"):
            filters.init("spf", model, None, 100, 0)


class TestAgainstKalman:
    @pytest.mark.parametrize("variant", ["spf", "dapf"])
    def test_single_filters(self, variant):
        model, kal = linear_model()
        obs = model.simulate(10, np.random.default_rng(0)).observations
        km, _ = kal(obs)
        runs = np.array([[e.state_mean for e in run(variant, model, 1, 2000, s, obs)[1]] for s in range(10)])
        se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
        assert np.all(np.abs(runs.mean(axis=0) - km) <= 3 * se + 1e-3)

    def test_mpf_blocks_against_block_kalman(self):
        d = 4
        A = np.kron(np.eye(2), [[0.8, 0.1], [0.0, 0.8]])
        model, _ = make_linear_gaussian_oracle(d, A, np.eye(d), 0.5 * np.eye(d), 0.8 * np.eye(d))
        obs = model.simulate(10, np.random.default_rng(0)).observations
        runs = np.array([[e.state_mean for e in run("mpf", model, 2, 4000, s, obs)[1]] for s in range(10)])
        se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
        for sl in make_partitioning(d, 2).state_blocks:
            km, _ = kalman_filter(obs[:, sl], A[sl, sl], 0.5 * np.eye(2), np.eye(2), 0.8 * np.eye(2), np.zeros(2), np.eye(2))
            assert np.all(np.abs(runs.mean(axis=0)[:, sl] - km) <= 3 * se[:, sl] + 1e-3)


class TestBehaviour:
    def test_uninformative_likelihood_gives_prior_predictive(self):
        m = BenchmarkModel(d_x=3, dim_global=2, sigma_v2=1e6)
        s = filters.init("spf", m, None, 50_000, 0)
        _, est = filters.step(s, np.zeros(3))
        # prior predictive: x1 = th1 * sigmoid(x0 - 3) + th2 + u with th ~ N(1, 2), x0 ~ N(0, 2)
        rng = np.random.default_rng(1)
        th, x0 = rng.normal(1, np.sqrt(2), (10**6, 2)), rng.normal(0, np.sqrt(2), 10**6)
        ref = np.mean(th[:, 0] / (1 + np.exp(3 - x0)) + th[:, 1])
        assert_allclose(est.state_mean, ref, atol=0.05)
        assert_allclose(est.theta_mean, [1.0, 1.0], atol=0.05)

    def test_dapf_redraw_preserves_gaussian_cloud(self):
        d = 2
        model, _ = make_linear_gaussian_oracle(d, np.eye(d), np.eye(d), 1e-12 * np.eye(d), 1e12 * np.eye(d),
                                               m0=[1.0, -1.0], P0=[[2.0, 0.5], [0.5, 1.0]])
        s = filters.init("dapf", model, None, 100_000, 3)
        before = s.clouds[0].samples.copy()
        filters.step(s, np.zeros(d))
        after = s.clouds[0].samples
        se = np.sqrt(np.diag(np.cov(before.T)) / len(before))
        assert np.all(np.abs(after.mean(axis=0) - before.mean(axis=0)) <= 5 * np.sqrt(2) * se)
        assert_allclose(np.cov(after.T), np.cov(before.T), atol=0.05)

    @pytest.mark.parametrize("variant", filters.VARIANTS)
    def test_determinism_and_normalized_weights(self, variant):
        m = BenchmarkModel(d_x=4, dim_global=2)
        obs = m.simulate(5, np.random.default_rng(0)).observations
        K = 1 if variant in ("spf", "dapf") else 2
        sa, a = run(variant, m, K, 200, 11, obs)
        _, b = run(variant, m, K, 200, 11, obs)
        for ea, eb in zip(a, b):
            assert_array_equal(ea.state_mean, eb.state_mean)
            assert_array_equal(ea.theta_mean, eb.theta_mean)
            assert np.all(np.isfinite(ea.state_mean)) and np.all(np.isfinite(ea.theta_mean))
        for c in sa.clouds:
            assert abs(c.weights.sum() - 1) <= 1e-12

    @pytest.mark.parametrize("variant", filters.VARIANTS)
    def test_degenerate_weights_flag_failure(self, variant):
        m = BenchmarkModel(d_x=4, dim_global=1)
        K = 1 if variant in ("spf", "dapf") else 2
        s = filters.init(variant, m, make_partitioning(4, K), 100, 0)
        _, good = filters.step(s, np.zeros(4))
        frozen = good.state_mean.copy()
        _, est = filters.step(s, np.full(4, np.nan))
        assert s.failed
        assert_array_equal(est.state_mean, frozen)
        _, est = filters.step(s, np.zeros(4))
        assert s.failed and s.t == 3
        assert_array_equal(est.state_mean, frozen)

    def test_wrong_step_for_variant(self):
        s = filters.init("spf", BenchmarkModel(d_x=2), None, 10, 0)
        with pytest.raises(ValueError):
            filters.dapf_step(s, np.zeros(2))


class TestLinearOracle:
    def test_noiseless_update_recovers_state(self):
        d = 3
        model, kal = make_linear_gaussian_oracle(d, 0.9 * np.eye(d), np.eye(d), np.zeros((d, d)), np.zeros((d, d)))
        traj = model.simulate(1, np.random.default_rng(0))
        assert_allclose(kal(traj.observations)[0][0], traj.states[0], atol=1e-10)

    def test_scalar_conjugate_variance(self):
        P0 = 4.0
        _, kal = make_linear_gaussian_oracle(1, [[1.0]], [[1.0]], [[0.0]], [[1.0]], P0=[[P0]])
        _, covs = kal(np.zeros((6, 1)))
        assert_allclose(covs[:, 0, 0], 1 / (1 / P0 + np.arange(1, 7)), rtol=1e-12)

    def test_dimensions(self):
        model, kal = linear_model(d=5)
        means, covs = kal(model.simulate(4, np.random.default_rng(0)).observations)
        assert means.shape == (4, 5) and covs.shape == (4, 5, 5)
        with pytest.raises(ValueError):
            make_linear_gaussian_oracle(3, np.eye(2), np.eye(2), np.eye(2), np.eye(2))
