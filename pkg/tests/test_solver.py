import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densewalk.dense_sets import (CloudSpec, DensityError, LatticeCloud, PointCloud, Region,
                                  generate, translate)
from densewalk.geometry import SQRT2, hull_distance
from densewalk.solver import (ExtractionError, RootSearchConfig, RootSearchError, Solution,
                              boundary_extension, evaluate_h, extract_path, find_root,
                              resolve_layers, select, solve, verify_solution)

EPS = 1e-6
BOUND = SQRT2 + EPS + 1e-9


def lattice(n, dim=1, extra=0.0, spacing=1.0):
    return LatticeCloud(Region.ball_box(3 * n + 1 + extra, dim), spacing)


def jittered(n, dim, seed, t=None, spacing=0.5, jitter=0.2):
    extra = 0.0 if t is None else float(np.abs(t).max())
    return generate(CloudSpec("jittered_grid", spacing, jitter, seed=seed),
                    Region.ball_box(3 * n + 1 + extra, dim))


class TestSelect:
    def test_single_point(self):
        sel = select(PointCloud([[0.3, 0.1], [5.0, 5.0]]), [0.0, 0.0])
        np.testing.assert_array_equal(sel.value, [0.3, 0.1])

    def test_symmetric_pair(self):
        sel = select(PointCloud([[-0.5], [0.5]]), [0.0])
        np.testing.assert_allclose(sel.weights, [0.5, 0.5])
        assert sel.value[0] == 0.0

    def test_weight_formula(self):
        # raw weights 0.2 and 0.6 give value (1/5, 3/10)
        sel = select(PointCloud([[0.8, 0.0], [0.0, 0.4]]), [0.0, 0.0])
        np.testing.assert_allclose(sel.weights, [0.25, 0.75], atol=1e-12)
        np.testing.assert_allclose(sel.value, [0.2, 0.3], atol=1e-12)

    def test_boundary_support_dropped(self):
        sel = select(PointCloud([[1.0, 0.0], [0.0, 0.5]]), [0.0, 0.0])
        np.testing.assert_array_equal(sel.supports, [[0.0, 0.5]])
        np.testing.assert_array_equal(sel.ids, [1])

    def test_empty_ball(self):
        with pytest.raises(DensityError) as info:
            select(PointCloud([[3.0, 0.0]]), [0.0, 0.0])
        np.testing.assert_array_equal(info.value.center, [0.0, 0.0])

    def test_all_on_sphere(self):
        with pytest.raises(DensityError, match="unit sphere"):
            select(PointCloud([[1.0, 0.0], [0.0, -1.0]]), [0.0, 0.0])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 3), st.integers(0, 10_000), st.data())
    def test_value_in_hull(self, dim, seed, data):
        cloud = generate(CloudSpec("jittered_grid", 0.6, 0.3, seed=seed), Region.cube(-3, 3, dim))
        c = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=dim, max_size=dim)))
        sel = select(cloud, c)
        _, ball = cloud.query(c, 1.0)
        assert hull_distance(sel.value, ball) <= 1e-9
        raw = 1.0 - np.linalg.norm(sel.supports - c, axis=1)
        np.testing.assert_allclose(sel.weights, raw / raw.sum(), atol=1e-12)
        assert np.all(np.linalg.norm(sel.supports - c, axis=1) <= 1.0)


class TestEvaluateH:
    def test_lattice_origin(self):
        n = 6
        value, trace = evaluate_h([lattice(n)] * n, n, [0.0])
        assert value[0] == 0.0
        assert all(level.value[0] == 0.0 for level in trace.levels)
        np.testing.assert_array_equal(trace.levels[0].weights, [1.0])

    def test_half_step(self):
        value, trace = evaluate_h([lattice(1)], 1, [0.5])
        level = trace.levels[0]
        assert level.center[0] == 0.5
        np.testing.assert_array_equal(level.supports.ravel(), [0.0, 1.0])
        np.testing.assert_allclose(level.weights, [0.5, 0.5])
        assert value[0] == 0.5

    def test_too_few_layers(self):
        with pytest.raises(ValueError):
            evaluate_h([lattice(2)], 2, [0.0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 8), st.integers(0, 1000), st.data())
    def test_trace_invariants(self, dim, n, seed, data):
        cloud = jittered(n, dim, seed)
        s = np.array(data.draw(st.lists(st.floats(-1.7, 1.7), min_size=dim, max_size=dim)))
        value, trace = evaluate_h([cloud] * n, n, s)
        np.testing.assert_array_equal(trace.levels[0].center, s)
        for i, level in enumerate(trace.levels, start=1):
            assert np.linalg.norm(level.value - i * s) <= i + 1e-9
            if i < n:
                np.testing.assert_array_equal(trace.levels[i].center, level.value + s)
        np.testing.assert_array_equal(value, trace.value)


class TestBoundaryExtension:
    def test_outer_sphere_is_identity(self):
        cloud = jittered(3, 2, 1)
        s = np.array([3.0, 0.0])
        np.testing.assert_allclose(boundary_extension([cloud] * 3, 3, s), s)

    def test_inner_sphere_is_h(self):
        cloud = jittered(3, 2, 1)
        s = np.array([0.0, -2.0])
        np.testing.assert_allclose(boundary_extension([cloud] * 3, 3, s),
                                   evaluate_h([cloud] * 3, 3, s)[0])

    def test_lattice_value(self):
        # h_2(2) = 4 on the integer lattice, so f(2.5) = 0.5 * 4 + 0.5 * 2.5
        assert boundary_extension([lattice(2)] * 2, 2, [2.5])[0] == pytest.approx(3.25)

    def test_outside_annulus(self):
        with pytest.raises(ValueError):
            boundary_extension([lattice(2)] * 2, 2, [1.5])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 8), st.integers(0, 1000), st.floats(2.0, 3.0),
           st.data())
    def test_positivity(self, dim, n, seed, r, data):
        cloud = jittered(n, dim, seed)
        u = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim)))
        if np.linalg.norm(u) < 1e-3:
            u = np.ones(dim)
        s = r * u / np.linalg.norm(u)
        layers = [cloud] * n
        h_term = evaluate_h(layers, n, 2.0 * s / np.linalg.norm(s))[0]
        assert h_term @ s >= n * np.linalg.norm(s) - 1e-6
        f = boundary_extension(layers, n, s)
        r = np.linalg.norm(s)
        assert f @ s >= (3 - r) * n * r + (r - 2) * r * r - 1e-6
        assert f @ s > 0

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 8), st.integers(0, 1000), st.data())
    def test_inner_sphere_bound(self, dim, n, seed, data):
        cloud = jittered(n, dim, seed)
        u = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim)))
        if np.linalg.norm(u) < 1e-3:
            u = np.ones(dim)
        s = 2.0 * u / np.linalg.norm(u)
        assert boundary_extension([cloud] * n, n, s) @ s >= 2 * n - 1e-6

    def test_outer_product_can_fall_below_n_norm(self):
        # f(s) = s on |s| = 3, so <f(s), s> = 9 < 3n once n > 3
        s = np.array([3.0])
        f = boundary_extension([lattice(4)] * 4, 4, s)
        assert f @ s == pytest.approx(9.0)
        assert f @ s < 4 * 3.0


class TestFindRoot:
    def test_lattice_origin(self):
        s0, trace, report = find_root([lattice(5)] * 5, 5)
        np.testing.assert_array_equal(s0, [0.0])
        assert report.method == "origin" and report.evaluations == 1

    @pytest.mark.parametrize("dim", [1, 2])
    def test_fine_grid_root_near_origin(self, dim):
        n = 3
        cloud = lattice(n, dim, spacing=0.05)
        s0, trace, report = find_root([cloud] * n, n)
        assert report.residual <= EPS
        assert np.linalg.norm(s0) <= 0.1

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_postconditions_and_determinism(self, dim):
        n = 12
        cloud = jittered(n, dim, 3)
        t = np.linspace(-1.5, 2.0, dim)
        layers = [translate(cloud, -(i / n) * t) for i in range(1, n + 1)]
        s0, trace, report = find_root(layers, n, RootSearchConfig(seed=4))
        assert np.linalg.norm(trace.value) <= EPS
        assert np.linalg.norm(s0) <= 2.0 + 1e-9
        again, _, _ = find_root(layers, n, RootSearchConfig(seed=4))
        np.testing.assert_array_equal(s0, again)

    def test_budget_exhaustion_is_loud(self):
        n = 10
        cloud = jittered(n, 2, 9)
        t = np.array([3.3, -1.2])
        layers = [translate(cloud, -(i / n) * t) for i in range(1, n + 1)]
        with pytest.raises(RootSearchError) as info:
            find_root(layers, n, RootSearchConfig(max_evals=5, multistart=1))
        assert info.value.best_residual > EPS
        assert info.value.best_s.shape == (2,)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RootSearchConfig(eps_root=0.0)
        with pytest.raises(ValueError):
            RootSearchConfig(multistart=0)


class TestExtractPath:
    def test_single_step(self):
        cloud = jittered(1, 2, 5)
        s0, trace, _ = find_root([cloud], 1)
        y = s0 + np.array([0.3, -0.4])
        path = extract_path(trace, y)
        np.testing.assert_array_equal(path.points, [[0.0, 0.0], y])

    def test_lattice_zero_path(self):
        n = 5
        _, trace = evaluate_h([lattice(n)] * n, n, [0.0])
        path = extract_path(trace)
        np.testing.assert_array_equal(path.points, np.zeros((n + 1, 1)))
        np.testing.assert_array_equal(path.residuals, np.zeros(n))

    def test_random_2d_bound(self):
        n = 10
        cloud = jittered(n, 2, 17, spacing=1.0)
        s0, trace, _ = find_root([cloud] * n, n)
        path = extract_path(trace)
        assert path.residuals.max() <= BOUND
        assert np.all(path.residuals[:-1] <= SQRT2 + 1e-9)
        for i in range(1, n):
            assert path.ids[i] in set(trace.levels[i - 1].ids.tolist())

    def test_target_too_far(self):
        _, trace = evaluate_h([lattice(2)] * 2, 2, [0.0])
        with pytest.raises(ValueError):
            extract_path(trace, [1.5])

    def test_caratheodory_threshold(self):
        n = 4
        cloud = lattice(n, 2, spacing=0.2)
        s0, trace, _ = find_root([cloud] * n, n)
        full = extract_path(trace, threshold=10**9)
        thin = extract_path(trace, threshold=8)
        assert thin.residuals.max() <= BOUND
        assert full.residuals.max() <= BOUND

    def test_bug_is_loud(self):
        n = 3
        _, trace = evaluate_h([lattice(n)] * n, n, [0.0])
        # forge a trace whose shift is far from every support
        forged = type(trace)(np.array([2.5]), trace.levels)
        with pytest.raises(ExtractionError):
            extract_path(forged)


class TestSolve:
    def test_zero_target(self):
        n = 5
        sol = solve(lattice(n), n, [0.0])
        np.testing.assert_array_equal(sol.path, np.zeros((n + 1, 1)))
        assert sol.delta_prime == 0.0

    def test_lattice_walk(self):
        sol = solve(lattice(4, extra=4.0), 4, [4.0])
        np.testing.assert_array_equal(sol.path.ravel(), [0, 1, 2, 3, 4])
        assert sol.s0[0] == 1.0
        np.testing.assert_array_equal(sol.residuals, np.zeros(4))

    @pytest.mark.parametrize("dim,n,seed", [(1, 7, 0), (2, 10, 1), (2, 20, 2), (3, 8, 3)])
    def test_certified_random(self, dim, n, seed):
        rng = np.random.default_rng(seed)
        t = rng.uniform(-n, n, dim)
        cloud = jittered(n, dim, seed, t)
        sol = solve(cloud, n, t)
        assert np.all(sol.path[0] == 0) and np.all(sol.path[-1] == t)
        assert sol.max_residual <= BOUND
        assert sol.delta_prime <= 2 * BOUND
        assert sol.delta <= sol.delta_prime + 1e-12
        assert sol.root_residual <= EPS
        for i in range(1, n):
            assert cloud.find(sol.path[i]) == sol.path_ids[i]
        assert verify_solution(sol, cloud).passed

    def test_layer_mode(self):
        n = 6
        t = np.array([2.0, -1.0])
        layers = [jittered(n, 2, seed, t) for seed in range(n - 1)]
        sol = solve(layers, n, t)
        for i in range(1, n):
            assert layers[i - 1].find(sol.path[i]) is not None
        assert verify_solution(sol, layers).passed
        assert len(resolve_layers(layers, n, t)) == n

    def test_translation_equivariance(self):
        n = 8
        t = np.array([3.0, 1.5])
        cloud = jittered(n, 2, 21, t)
        sol = solve(cloud, n, t)
        pre = [translate(cloud, -(i / n) * t) for i in range(1, n + 1)]
        zero = solve(pre, n, np.zeros(2))
        steps = np.arange(n + 1)[:, None] / n * t
        np.testing.assert_allclose(zero.path + steps, sol.path, atol=1e-12)
        np.testing.assert_allclose(zero.s0 + t / n, sol.s0, atol=1e-12)

    def test_deterministic(self):
        n = 9
        t = np.array([1.0, 2.0, -2.0])
        a = solve(jittered(n, 3, 8, t), n, t).to_json()
        b = solve(jittered(n, 3, 8, t), n, t).to_json()
        assert a == b

    def test_density_violation(self):
        cloud = LatticeCloud(Region.cube(-3, 3, 2), 1.0)
        with pytest.raises(DensityError):
            solve(cloud, 5, [1.0, 1.0])

    def test_force_downgrades(self, caplog):
        cloud = LatticeCloud(Region.cube(-4, 4, 1), 1.0)
        sol = solve(cloud, 2, [0.0], force=True)
        assert "not certified" in caplog.text
        assert sol.delta_prime == 0.0

    def test_json_round_trip(self):
        n = 5
        t = np.array([1.5])
        sol = solve(jittered(n, 1, 2, t), n, t)
        back = Solution.from_json(sol.to_json())
        assert back.to_json() == sol.to_json()


class TestVerify:
    @pytest.fixture
    def solved(self):
        n = 8
        t = np.array([2.0, -3.0])
        cloud = jittered(n, 2, 6, t)
        return solve(cloud, n, t), cloud

    def test_untampered(self, solved):
        sol, cloud = solved
        assert verify_solution(sol, cloud).passed

    def test_non_member(self, solved):
        sol, cloud = solved
        sol.path[3] = sol.path[3] + 1e-7
        report = verify_solution(sol, cloud)
        assert not report.passed
        assert not report.checks["membership"][0]

    def test_shifted_s0(self, solved):
        sol, cloud = solved
        sol.s0 = sol.s0 + np.array([3.0, 0.0])
        report = verify_solution(sol, cloud)
        assert not report.checks["residual_bound"][0]

    def test_wrong_endpoint(self, solved):
        sol, cloud = solved
        sol.path[-1] = sol.path[-1] + 0.5
        assert not verify_solution(sol, cloud).checks["endpoints"][0]

    def test_bad_delta(self, solved):
        sol, cloud = solved
        sol.delta_prime = sol.delta_prime / 2
        assert not verify_solution(sol, cloud).checks["delta_prime"][0]
