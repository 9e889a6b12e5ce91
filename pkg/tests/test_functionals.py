import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qns_galerkin.functionals import (
    BD_DISSIPATION_NAMES,
    DISSIPATION_NAMES,
    ModelParams,
    NonPositiveDensityError,
    bd_entropy,
    bohm_force_divform,
    bohm_force_strong,
    bohm_potential,
    dissipation_rates,
    energy,
    ibp_identity_residual,
    jungel_terms,
    log_minus_mass,
    sqrt_density,
)
from qns_galerkin.spectral import PeriodicGrid, ScalarField, VectorField
from qns_galerkin.verification import random_density

from .conftest import TWO_PI, quad_periodic

seeds = st.integers(0, 2**32 - 1)


def field1d(fn, n=64):
    g = PeriodicGrid(1, n)
    return g.sample(fn)


def velocity1d(fn, n=64):
    g = PeriodicGrid(1, n)
    return VectorField.from_array(g, [fn(g.coords[0])])


class TestModelParams:
    def test_defaults(self):
        p = ModelParams()
        assert p.gamma == 1.5 and p.kappa == 0 and p.floor_rho == 1e-8

    @pytest.mark.parametrize("gamma", [1.0, 0.5, -2.0])
    def test_gamma_must_exceed_one(self, gamma):
        with pytest.raises(ValueError, match="gamma > 1"):
            ModelParams(gamma=gamma)

    @pytest.mark.parametrize("name", ["kappa", "r0", "r1", "epsilon", "mu", "eta", "delta"])
    def test_coefficients_nonnegative(self, name):
        with pytest.raises(ValueError, match=name):
            ModelParams(**{name: -1e-3})

    def test_floor_positive(self):
        with pytest.raises(ValueError):
            ModelParams(floor_rho=0.0)

    def test_replace(self):
        assert ModelParams().replace(kappa=0.5).kappa == 0.5


class TestSqrtDensity:
    def test_constant(self):
        f, floored = sqrt_density(ScalarField.constant(PeriodicGrid(1, 16), 4.0), 1e-8)
        assert np.all(f.values == 2.0) and not floored

    def test_floor(self):
        f, floored = sqrt_density(ScalarField.constant(PeriodicGrid(1, 16), 0.0), 1e-8)
        assert np.allclose(f.values, 1e-4, rtol=1e-15) and floored

    def test_pointwise(self):
        rho = field1d(lambda x: 1 + 0.5 * np.sin(x))
        f, _ = sqrt_density(rho, 1e-8)
        assert np.abs(f.values - np.sqrt(1 + 0.5 * np.sin(rho.grid.coords[0]))).max() < 1e-14

    def test_floor_must_be_positive(self):
        with pytest.raises(ValueError):
            sqrt_density(ScalarField.constant(PeriodicGrid(1, 16), 1.0), 0.0)


class TestBohm:
    def test_constant_potential(self):
        assert np.abs(bohm_potential(ScalarField.constant(PeriodicGrid(2, 16), 3.0)).values).max() < 1e-14

    def test_squared_profile(self):
        rho = field1d(lambda x: (1 + 0.3 * np.cos(x)) ** 2)
        x = rho.grid.coords[0]
        expect = -0.3 * np.cos(x) / (1 + 0.3 * np.cos(x))
        assert np.abs(bohm_potential(rho).values - expect).max() < 1e-8

    def test_reflection(self):
        g = PeriodicGrid(1, 64)
        rho = random_density(g, np.random.default_rng(5))
        reflected = ScalarField(g, np.roll(rho.values[::-1], 1))
        b = bohm_potential(rho).values
        br = bohm_potential(reflected).values
        assert np.abs(np.roll(b[::-1], 1) - br).max() < 1e-12

    def test_nonpositive_rejected(self):
        with pytest.raises(NonPositiveDensityError):
            bohm_potential(field1d(lambda x: np.sin(x)))

    @pytest.mark.parametrize("force", [bohm_force_strong, bohm_force_divform])
    def test_constant_density_no_force(self, force):
        f = force(ScalarField.constant(PeriodicGrid(2, 16), 2.0), 1.0)
        assert np.abs(f.array()).max() < 1e-13

    @pytest.mark.parametrize("force", [bohm_force_strong, bohm_force_divform])
    def test_zero_kappa(self, force):
        f = force(field1d(lambda x: 1 + 0.2 * np.sin(x)), 0.0)
        assert np.all(f.array() == 0)

    def test_strong_form_closed_form(self):
        # kappa rho (B)' with B = s''/s, s = sqrt(rho), expanded by hand:
        # kappa (rho'''/2 - rho' rho''/rho + rho'^3 / (2 rho^2))
        kappa = 0.7
        rho = field1d(lambda x: 1 + 0.2 * np.sin(x))
        x = rho.grid.coords[0]
        r, r1, r2, r3 = 1 + 0.2 * np.sin(x), 0.2 * np.cos(x), -0.2 * np.sin(x), -0.2 * np.cos(x)
        expect = kappa * (0.5 * r3 - r1 * r2 / r + 0.5 * r1**3 / r**2)
        got = bohm_force_strong(rho, kappa).array()[0]
        assert np.abs(got - expect).max() < 1e-7

    def test_forms_agree_on_bump(self):
        g = PeriodicGrid(1, 128)
        rho = g.sample(lambda x: 0.5 + np.exp(2.0 * (np.cos(x - 1.0) - 1.0)))
        s, d = bohm_force_strong(rho, 1.0).array(), bohm_force_divform(rho, 1.0).array()
        assert np.linalg.norm(s - d) / np.linalg.norm(d) < 1e-6

    @given(seeds, st.sampled_from([(1, 128), (2, 64)]))
    def test_forms_agree(self, seed, shape):
        rho = random_density(PeriodicGrid(*shape), np.random.default_rng(seed))
        s, d = bohm_force_strong(rho, 1.0).array(), bohm_force_divform(rho, 1.0).array()
        assert np.linalg.norm(s - d) <= 1e-6 * np.linalg.norm(d)


class TestEnergy:
    def test_constant_state(self):
        g = PeriodicGrid(1, 16)
        e = energy(ScalarField.constant(g, 1.0), VectorField.zeros(g), ModelParams(gamma=2.0))
        assert e.total == pytest.approx(TWO_PI, rel=1e-14)
        assert e.kinetic == e.cold == e.quantum == e.hyper == 0

    def test_unit_velocity_2d(self):
        g = PeriodicGrid(2, 16)
        e = energy(ScalarField.constant(g, 1.0), VectorField.constant(g, [1.0, 0.0]), ModelParams())
        assert e.kinetic == pytest.approx(0.5 * g.volume, rel=1e-14)

    def test_against_quadrature(self):
        p = ModelParams(gamma=1.5, kappa=1.0)
        rho = field1d(lambda x: 1 + 0.5 * np.sin(x))
        e = energy(rho, VectorField.zeros(rho.grid), p)
        pressure = quad_periodic(lambda x: (1 + 0.5 * np.sin(x)) ** 1.5) / 0.5
        quantum = quad_periodic(lambda x: (0.5 * np.cos(x)) ** 2 / (4 * (1 + 0.5 * np.sin(x))))
        assert pressure == pytest.approx(13.162787913589599, rel=1e-12)
        assert quantum == pytest.approx(0.21044680361923323, rel=1e-12)
        assert e.pressure == pytest.approx(pressure, rel=1e-9)
        assert e.quantum == pytest.approx(quantum, rel=1e-9)

    def test_cold_and_hyper(self):
        p = ModelParams(eta=1e-3, delta=1e-2)
        rho = field1d(lambda x: 1 + 0.4 * np.sin(x))
        e = energy(rho, VectorField.zeros(rho.grid), p)
        # (eta / 11) int rho^-10, and (delta / 2) int |d^9 rho|^2 = (delta / 2) 0.16 pi
        assert e.cold == pytest.approx(1e-3 / 11 * 171.1686192044049, rel=1e-9)
        assert e.hyper == pytest.approx(0.5e-2 * 0.16 * math.pi, rel=1e-10)

    def test_negative_density_rejected(self):
        rho = field1d(lambda x: np.cos(x))
        with pytest.raises(NonPositiveDensityError):
            energy(rho, VectorField.zeros(rho.grid), ModelParams())

    def test_total_is_sum(self):
        p = ModelParams(kappa=0.1, eta=1e-3, delta=1e-4)
        rho = field1d(lambda x: 1 + 0.3 * np.cos(x))
        e = energy(rho, velocity1d(np.sin), p)
        parts = [e.kinetic, e.pressure, e.cold, e.quantum, e.hyper]
        assert e.total == pytest.approx(sum(parts), rel=1e-12)
        assert min(parts) >= 0

    @given(seeds, st.integers(1, 63))
    def test_translation_invariant(self, seed, shift):
        p = ModelParams(kappa=0.1, eta=1e-3, delta=1e-6)
        g = PeriodicGrid(1, 64)
        rng = np.random.default_rng(seed)
        rho = random_density(g, rng)
        u = np.zeros((1, 64))
        u[0] = np.sin(g.coords[0] + rng.uniform(0, 6))
        e0 = energy(rho, VectorField.from_array(g, u), p).total
        e1 = energy(
            ScalarField(g, np.roll(rho.values, shift)), VectorField.from_array(g, np.roll(u, shift, axis=1)), p
        ).total
        assert e1 == pytest.approx(e0, rel=1e-12)

    @given(seeds)
    def test_kinetic_quadratic(self, seed):
        g = PeriodicGrid(2, 16)
        rng = np.random.default_rng(seed)
        rho = random_density(g, rng)
        u = rng.normal(size=(2, 16, 16))
        k1 = energy(rho, VectorField.from_array(g, u), ModelParams()).kinetic
        k2 = energy(rho, VectorField.from_array(g, 2 * u), ModelParams()).kinetic
        assert k2 == pytest.approx(4 * k1, rel=1e-14)

    @given(st.floats(0.1, 10.0), st.floats(1.01, 3.0))
    def test_pressure_scaling(self, c, gamma):
        g = PeriodicGrid(1, 16)
        p = ModelParams(gamma=gamma)
        e1 = energy(ScalarField.constant(g, 1.0), VectorField.zeros(g), p).pressure
        ec = energy(ScalarField.constant(g, c), VectorField.zeros(g), p).pressure
        assert ec == pytest.approx(c**gamma * e1, rel=1e-12)


class TestDissipation:
    def test_rest_state(self):
        g = PeriodicGrid(2, 16)
        p = ModelParams(kappa=1, r0=1, r1=1, epsilon=1, mu=1, eta=1, delta=1)
        d = dissipation_rates(ScalarField.constant(g, 1.0), VectorField.zeros(g), p)
        assert set(d) == set(DISSIPATION_NAMES)
        assert max(abs(v) for v in d.values()) < 1e-12

    def test_linear_drag(self):
        g = PeriodicGrid(3, 8)
        d = dissipation_rates(ScalarField.constant(g, 1.0), VectorField.constant(g, [1, 0, 0]), ModelParams(r0=0.3))
        assert d["drag_linear"] == pytest.approx(0.3 * g.volume, rel=1e-14)

    def test_viscous_against_quadrature(self):
        rho = field1d(lambda x: 1 + 0.3 * np.sin(x))
        d = dissipation_rates(rho, velocity1d(np.sin), ModelParams())
        oracle = 2 * quad_periodic(lambda x: (1 + 0.3 * np.sin(x)) * np.cos(x) ** 2)
        assert oracle == pytest.approx(2 * math.pi, rel=1e-12)
        assert d["viscous"] == pytest.approx(oracle, rel=1e-9)

    @given(seeds, st.sampled_from([(1, 32), (2, 16)]))
    def test_nonnegative(self, seed, shape):
        g = PeriodicGrid(*shape)
        rng = np.random.default_rng(seed)
        rho = random_density(g, rng, min_range=(0.2, 0.9))
        u = VectorField.from_array(g, [random_density(g, rng).values - 1 for _ in range(g.dim)])
        p = ModelParams(kappa=0.1, r0=0.1, r1=0.1, epsilon=0.1, mu=0.1, eta=0.1, delta=0.1)
        assert min(dissipation_rates(rho, u, p).values()) >= -1e-12


class TestJungel:
    def test_constant(self):
        assert jungel_terms(ScalarField.constant(PeriodicGrid(2, 16), 2.0)) == (0.0, 0.0, 0.0)

    def test_sine_profile(self):
        D, A, B = jungel_terms(field1d(lambda x: 1 + 0.5 * np.sin(x), n=128))
        assert D >= A / 7 and D >= B / 8
        # in 1D the sharper constants D >= 4A and D >= 64B/3 hold
        assert D >= 4 * A - 1e-12 and D >= 64 / 3 * B - 1e-12

    def test_exponential_against_quadrature(self):
        rho = field1d(lambda x: np.exp(0.4 * np.cos(x)))
        oracle = quad_periodic(lambda x: np.exp(0.4 * np.cos(x)) * (0.4 * np.cos(x)) ** 2)
        assert oracle == pytest.approx(0.5331507851080208, rel=1e-12)
        assert jungel_terms(rho)[0] == pytest.approx(oracle, rel=1e-8)

    def test_nonpositive_rejected(self):
        with pytest.raises(NonPositiveDensityError):
            jungel_terms(ScalarField.constant(PeriodicGrid(1, 16), 0.0))

    @given(seeds, st.sampled_from([(1, 128), (2, 64)]))
    def test_lemma_inequalities(self, seed, shape):
        rho = random_density(PeriodicGrid(*shape), np.random.default_rng(seed), kmax=3, min_range=(0.05, 0.9))
        D, A, B = jungel_terms(rho)
        tol = 1e-9 * (1 + D)
        assert min(D, A, B) >= 0
        assert D - A / 7 >= -tol
        assert D - B / 8 >= -tol


class TestIbpIdentity:
    def test_constant(self):
        assert ibp_identity_residual(ScalarField.constant(PeriodicGrid(1, 16), 1.5)) == 0.0

    def test_squared_profile(self):
        assert ibp_identity_residual(field1d(lambda x: (1 + 0.3 * np.cos(x)) ** 2, n=128)) < 1e-8

    @given(seeds, st.sampled_from([(1, 128), (2, 64)]))
    def test_random(self, seed, shape):
        rho = random_density(PeriodicGrid(*shape), np.random.default_rng(seed))
        assert ibp_identity_residual(rho) < 1e-6


class TestLogMinus:
    def test_above_one(self):
        assert log_minus_mass(field1d(lambda x: 2 + np.sin(x))) == 0.0

    def test_constant(self):
        assert log_minus_mass(ScalarField.constant(PeriodicGrid(2, 16), math.exp(-1))) == pytest.approx(
            TWO_PI**2, rel=1e-14
        )

    def test_against_closed_form(self):
        # int log(a + b sin x) = 2 pi log((a + sqrt(a^2 - b^2)) / 2)
        exact = -TWO_PI * math.log((0.5 + math.sqrt(0.21)) / 2)
        assert exact == pytest.approx(4.623078879785689, rel=1e-14)
        assert log_minus_mass(field1d(lambda x: 0.5 + 0.2 * np.sin(x))) == pytest.approx(exact, rel=1e-10)


BD_PARAMS = ModelParams(gamma=1.5, kappa=0.3, r0=0.2, r1=0.1, epsilon=0.05, mu=0.02, eta=1e-3, delta=1e-3)


@pytest.fixture(scope="module")
def bd():
    rho = field1d(lambda x: 1 + 0.4 * np.sin(x), n=128)
    return bd_entropy(rho, velocity1d(np.cos, n=128), BD_PARAMS)


class TestBDEntropy:
    PARAMS = BD_PARAMS

    # 30-digit quadrature of each integral for rho = 1 + 0.4 sin x, u = cos x
    ORACLE = {
        "effective_kinetic": 3.0897088142621256,
        "hyper": 0.00025132741228718348,
        "quantum": 0.01967065695234837,
        "pressure": 12.94630650897024,
        "cold": 0.01711686192044049,
        "log_term": 0.053581339835697,
    }
    DISSIPATIONS = {
        "pressure": 0.28725453218386677,
        "rotation": 0.0,
        "quantum": 0.16453241300334182,
        "cold": 0.22501950711453459,
        "hyper_density": 0.001030442390377452,
        "hyper_velocity": 0.062831853071795866,
        "parabolic": 0.02861659506464945,
    }
    REMAINDERS = {
        "R1": 0.0027370034360320313,
        "R2": 0.0011945262307591437,
        "R3": -0.065568856507827903,
        "R4": -0.02622754260313116,
        "R5": -0.094247779607693808,
        "R6": -0.26227542603131161,
        "log_rate": -0.25655210701838172,
        "eps_correction": 0.0057233190129298908,
    }

    @pytest.mark.parametrize("name", list(ORACLE))
    def test_functional_terms(self, bd, name):
        assert getattr(bd, name) == pytest.approx(self.ORACLE[name], rel=1e-8, abs=1e-12)

    @pytest.mark.parametrize("name", list(DISSIPATIONS))
    def test_dissipations(self, bd, name):
        assert bd.dissipations[name] == pytest.approx(self.DISSIPATIONS[name], rel=1e-8, abs=1e-12)

    @pytest.mark.parametrize("name", list(REMAINDERS))
    def test_remainders(self, bd, name):
        assert bd.remainders[name] == pytest.approx(self.REMAINDERS[name], rel=1e-8, abs=1e-12)

    def test_r6_decomposition(self, bd):
        r = bd.remainders
        assert r["R6"] == pytest.approx(r["log_rate"] - r["eps_correction"], rel=1e-12)

    def test_gradient_velocity_cancels(self):
        g = PeriodicGrid(1, 64)
        rho = g.sample(lambda x: np.exp(0.3 * np.sin(x)))
        u = VectorField.from_array(g, [-0.3 * np.cos(g.coords[0])])
        assert bd_entropy(rho, u, ModelParams()).effective_kinetic < 1e-20

    def test_no_parabolic_remainders_without_eps_mu(self):
        rho = field1d(lambda x: 1 + 0.4 * np.sin(x))
        bd = bd_entropy(rho, velocity1d(np.cos), self.PARAMS.replace(epsilon=0.0, mu=0.0))
        for name in ("R1", "R2", "R3", "R4", "eps_correction"):
            assert bd.remainders[name] == 0.0

    @given(seeds)
    def test_dissipations_nonnegative(self, seed):
        g = PeriodicGrid(2, 16)
        rng = np.random.default_rng(seed)
        rho = random_density(g, rng)
        u = VectorField.from_array(g, rng.normal(size=(2, 16, 16)))
        bd = bd_entropy(rho, u, self.PARAMS)
        assert set(bd.dissipations) == set(BD_DISSIPATION_NAMES)
        assert min(bd.dissipations.values()) >= 0
        assert bd.effective_kinetic >= 0
