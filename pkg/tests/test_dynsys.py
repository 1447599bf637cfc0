import numpy as np
import pytest

from deepkkl.dynsys import (
    BENCHMARKS,
    make_system,
    observe,
    rk4_step,
    sample_initial,
    simulate,
    training_box,
    vector_field,
)
from deepkkl.errors import InvalidArgumentError, NumericOverflowError


class TestVectorField:
    def test_vanderpol_equilibrium(self):
        assert np.array_equal(vector_field("vanderpol", [0.0, 0.0]), [0.0, 0.0])

    def test_lotka_volterra_equilibrium(self):
        dx = vector_field("lotka_volterra", [1.0, 8.0 / 9.0])
        assert np.allclose(dx, 0.0, atol=1e-16)

    def test_lorenz_hand_value(self):
        # substitution of (1, 1, 1): (10(1-1), 24-1-1, 1 - 8/3)
        dx = vector_field("lorenz", [1.0, 1.0, 1.0])
        assert np.allclose(dx, [0.0, 22.0, -5.0 / 3.0], rtol=0, atol=1e-15)

    def test_mean_field_equilibrium_at_origin(self):
        assert np.array_equal(vector_field("mean_field", [0.0, 0.0, 0.0]), [0.0, 0.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            vector_field("lorenz", [1.0, 2.0])

    def test_unknown_system(self):
        with pytest.raises(InvalidArgumentError):
            vector_field("pendulum", [0.0])

    def test_batched_evaluation_matches_single(self, rng):
        xs = rng.uniform(-2, 2, size=(7, 3))
        batch = vector_field("lorenz", xs)
        single = np.stack([vector_field("lorenz", x) for x in xs])
        assert np.array_equal(batch, single)


class TestObserve:
    @pytest.mark.parametrize(
        "x,expected",
        [([0.5, -2.0], 0.5), ([0.0, 0.0, 0.0], 0.0), ([-1.25, 3.0, 7.0], -1.25)],
    )
    def test_first_component(self, x, expected):
        assert observe("any", x) == expected


class TestRk4Step:
    def test_zero_field_fixed_point(self):
        x = np.array([1.0, -2.0, 3.0])
        out = rk4_step(lambda s: np.zeros_like(s), x, 0.3)
        assert np.array_equal(out, x)

    def test_exponential_taylor_polynomial(self):
        # RK4 on f(x) = x reproduces the degree-4 Taylor polynomial of exp
        out = rk4_step(lambda s: s, np.array([1.0]), 0.1)
        expected = 1.0 + 0.1 + 0.005 + 1.0 / 6000.0 + 1.0 / 240000.0
        assert abs(out[0] - expected) < 1e-15

    def test_fourth_order_convergence(self):
        # global error at t=1 against exp(-t) shrinks ~16x per halving
        def run(h):
            x = np.array([1.0])
            for _ in range(int(round(1.0 / h))):
                x = rk4_step(lambda s: -s, x, h)
            return abs(x[0] - np.exp(-1.0))

        for h in (0.1, 0.05, 0.025):
            ratio = run(h) / run(h / 2)
            assert 12.0 <= ratio <= 20.0

    def test_rejects_nonpositive_step(self):
        with pytest.raises(InvalidArgumentError):
            rk4_step(lambda s: s, np.array([1.0]), 0.0)

    def test_nonfinite_result_raises(self):
        with np.errstate(over="ignore"), pytest.raises(NumericOverflowError):
            rk4_step(lambda s: s * 1e308, np.array([1.0]), 1.0)


class TestSimulate:
    def test_equilibria_stay_fixed(self):
        cases = {
            "vanderpol": [0.0, 0.0],
            "lotka_volterra": [1.0, 8.0 / 9.0],
            "mean_field": [0.0, 0.0, 0.0],
            "lorenz": [0.0, 0.0, 0.0],
        }
        for name, x0 in cases.items():
            traj = simulate(make_system(name), np.array(x0), 100)
            assert np.abs(traj.states - np.array(x0)).max() < 1e-10

    def test_scalar_decay_matches_closed_form(self):
        spec = make_system("scalar_decay")  # dt 0.25, oversample 10
        traj = simulate(spec, np.array([1.0]), 100)
        assert np.abs(traj.outputs - np.exp(-traj.times)).max() < 1e-8

    def test_shapes_and_times(self):
        spec = make_system("vanderpol")
        traj = simulate(spec, np.array([1.0, 1.0]), 50)
        assert traj.states.shape == (51, 2)
        assert traj.outputs.shape == (51,)
        assert np.allclose(np.diff(traj.times), spec.dt)
        assert np.array_equal(traj.outputs, traj.states[:, 0])

    def test_deterministic(self):
        spec = make_system("lorenz")
        a = simulate(spec, np.array([1.0, 1.0, 1.0]), 40)
        b = simulate(spec, np.array([1.0, 1.0, 1.0]), 40)
        assert np.array_equal(a.states, b.states)

    def test_blowup_carries_step_index(self):
        spec = make_system("scalar_growth", dt=5.0)
        with pytest.raises(NumericOverflowError) as err:
            simulate(spec, np.array([1.0]), 10)
        assert err.value.step_index is not None


class TestSampleInitial:
    def test_vanderpol_box(self):
        spec = make_system("vanderpol")
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(200):
            x = sample_initial(spec, rng)
            assert np.all(x >= -5.0) and np.all(x <= 5.0)

    def test_lorenz_box(self):
        spec = make_system("lorenz")
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(200):
            x = sample_initial(spec, rng)
            assert -20 <= x[0] <= 20 and -1 <= x[1] <= 1 and -1 <= x[2] <= 1

    def test_mean_field_polar_consistency(self):
        spec = make_system("mean_field")
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(200):
            x = sample_initial(spec, rng)
            assert x[2] == x[0] * x[0] + x[1] * x[1]
            assert x[0] ** 2 + x[1] ** 2 <= 1.1**2 + 1e-12

    def test_seed_determinism(self):
        spec = make_system("vanderpol")
        assert np.array_equal(sample_initial(spec, 7), sample_initial(spec, 7))


def test_training_box_only_for_2d():
    assert training_box(make_system("vanderpol")) == ((-5.0, 5.0), (-5.0, 5.0))
    with pytest.raises(InvalidArgumentError):
        training_box(make_system("lorenz"))


def test_benchmark_registry():
    assert BENCHMARKS == ("vanderpol", "lorenz", "lotka_volterra", "mean_field")
    dims = {"vanderpol": 2, "lorenz": 3, "lotka_volterra": 2, "mean_field": 3}
    dts = {"vanderpol": 0.25, "lorenz": 0.02, "lotka_volterra": 0.25, "mean_field": 0.05}
    for name in BENCHMARKS:
        spec = make_system(name)
        assert spec.n == dims[name]
        assert spec.dt == dts[name]
        assert spec.oversample == 10
