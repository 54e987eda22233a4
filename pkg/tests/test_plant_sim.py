import math

import numpy as np
import pytest

from src.errors import ConfigurationError, IntegrationFaultError
from src.plant_sim import (
    EnvironmentModel,
    ImpedanceGains,
    PlantConfig,
    PlantState,
    SurrogatePlant,
    contact_force,
    max_stable_dt,
    mechanical_energy,
    step,
    tangential_speed,
)


def free_state(x0=(0.0, 0.0, 1.0)) -> PlantState:
    """Состояние высоко над поверхностью, чтобы контакта не было."""
    return PlantState(np.array([x0], dtype=float), np.zeros((1, 3)), np.zeros(1), 0.0)


def simulate(gains, env, x_c, dt, duration, state=None):
    state = state or free_state()
    trajectory = [state.x[0].copy()]
    for _ in range(int(round(duration / dt))):
        state = step(state, x_c, dt, gains, env)
        trajectory.append(state.x[0].copy())
    return np.array(trajectory), state


class TestContactForce:
    """Тесты для contact_force."""

    def test_no_force_above_surface(self):
        """Без проникновения сила равна нулю."""
        env = EnvironmentModel()
        assert contact_force(0.001, -0.5, 0.3, env) == 0.0

    def test_static_penetration(self):
        """Проникновение 1 мм без движения даёт k_e * delta."""
        env = EnvironmentModel(k_e=1e4, d_e=20.0, c_v=0.5)
        assert contact_force(-0.001, 0.0, 0.0, env) == pytest.approx(10.0)

    def test_velocity_coupling(self):
        """Касательная скорость увеличивает жёсткость в (1 + c_v * v) раз."""
        env = EnvironmentModel(k_e=1e4, d_e=20.0, c_v=0.5)
        assert contact_force(-0.001, 0.0, 0.5, env) == pytest.approx(12.5)

    def test_no_adhesion(self):
        """Быстрый отрыв не создаёт притягивающей силы."""
        env = EnvironmentModel()
        assert contact_force(-0.0001, 10.0, 0.0, env) == 0.0

    def test_returns_float_for_scalars(self):
        assert isinstance(contact_force(-0.001, 0.0, 0.0, EnvironmentModel()), float)

    def test_batched(self):
        """Пачка входов обрабатывается поэлементно."""
        env = EnvironmentModel(c_v=0.0)
        forces = contact_force(np.array([0.001, -0.001, -0.002]), np.zeros(3), np.zeros(3), env)
        np.testing.assert_allclose(forces, [0.0, 10.0, 20.0])

    def test_non_finite_input(self):
        with pytest.raises(IntegrationFaultError):
            contact_force(float("nan"), 0.0, 0.0, EnvironmentModel())


class TestTangentialSpeed:
    """Тесты для tangential_speed."""

    def test_plane_speed(self):
        assert tangential_speed(np.array([3.0, 4.0, 100.0])) == pytest.approx(5.0)


class TestStep:
    """Тесты интегратора RK4 на свободном движении."""

    def test_critically_damped_step_response(self):
        """M_v = 0.25 при xi = 1 даёт критическое демпфирование; сравнение с точным решением."""
        gains = ImpedanceGains(K_d_t=1700.0, xi=1.0, M_v=0.25)
        env = EnvironmentModel()
        amplitude = 0.01
        x_c = np.array([[amplitude, 0.0, 1.0]])
        trajectory, _ = simulate(gains, env, x_c, 1e-3, 1.0)

        omega = math.sqrt(1700.0 / 0.25)
        t = np.arange(len(trajectory)) * 1e-3
        exact = amplitude * (1.0 - (1.0 + omega * t) * np.exp(-omega * t))
        assert np.max(np.abs(trajectory[:, 0] - exact)) < 1e-6

    def test_underdamped_step_response(self):
        """M_v = 1: zeta = xi / 2; сравнение с общим решением осциллятора."""
        gains = ImpedanceGains(K_d_t=1700.0, xi=1.0, M_v=1.0)
        amplitude = 0.01
        trajectory, _ = simulate(gains, EnvironmentModel(), np.array([[amplitude, 0.0, 1.0]]), 1e-3, 1.0)

        omega = math.sqrt(1700.0)
        zeta = math.sqrt(1700.0) / (2.0 * omega)
        omega_d = omega * math.sqrt(1.0 - zeta ** 2)
        t = np.arange(len(trajectory)) * 1e-3
        envelope = np.exp(-zeta * omega * t)
        exact = amplitude * (1.0 - envelope * (np.cos(omega_d * t) + zeta / math.sqrt(1.0 - zeta ** 2) * np.sin(omega_d * t)))
        assert np.max(np.abs(trajectory[:, 0] - exact)) < 1e-6

    def test_fourth_order_convergence(self):
        """Уменьшение шага вдвое уменьшает ошибку хотя бы в 8 раз."""
        gains = ImpedanceGains(K_d_t=1700.0, xi=1.0, M_v=0.25)
        omega = math.sqrt(1700.0 / 0.25)
        amplitude = 0.01
        x_c = np.array([[amplitude, 0.0, 1.0]])

        errors = []
        for dt in (1e-3, 5e-4):
            trajectory, _ = simulate(gains, EnvironmentModel(), x_c, dt, 1.0)
            t = np.arange(len(trajectory)) * dt
            exact = amplitude * (1.0 - (1.0 + omega * t) * np.exp(-omega * t))
            errors.append(np.max(np.abs(trajectory[:, 0] - exact)))
        assert errors[0] / errors[1] >= 8.0

    def test_energy_does_not_grow_without_contact(self):
        """Без контакта энергия импедансного контура не растёт."""
        gains = ImpedanceGains()
        env = EnvironmentModel()
        state = PlantState(np.array([[0.02, -0.01, 1.0]]), np.array([[0.1, 0.3, 0.0]]), np.zeros(1), 0.0)
        x_c = np.array([[0.0, 0.0, 1.0]])
        initial = mechanical_energy(state, x_c, gains)[0]
        energies = []
        for _ in range(1000):
            state = step(state, x_c, 1e-3, gains, env)
            energies.append(mechanical_energy(state, x_c, gains)[0])
        assert max(energies) <= initial * (1.0 + 1e-9)
        assert energies[-1] < 0.01 * initial

    def test_rejects_unstable_dt(self):
        gains = ImpedanceGains()
        with pytest.raises(ConfigurationError):
            step(free_state(), np.zeros(3), 1.1 * max_stable_dt(gains), gains, EnvironmentModel())

    def test_rejects_non_positive_dt(self):
        with pytest.raises(ConfigurationError):
            step(free_state(), np.zeros(3), 0.0, ImpedanceGains(), EnvironmentModel())

    def test_non_finite_setpoint(self):
        with pytest.raises(IntegrationFaultError):
            step(free_state(), np.full(3, np.nan), 1e-3, ImpedanceGains(), EnvironmentModel())


class TestContact:
    """Тесты контакта с поверхностью."""

    def test_complementarity(self):
        """Сила неотрицательна и равна нулю над поверхностью на всём прогоне."""
        plant = SurrogatePlant()
        plant.reset(np.zeros((4, 2)))
        rng = np.random.default_rng(7)
        for k in range(1500):
            if k % 100 == 0:
                x_c = np.zeros((4, 3))
                x_c[:, :2] = rng.uniform(-0.05, 0.05, (4, 2))
                x_c[:, 2] = rng.uniform(-0.01, 0.005, 4)
            state = plant.advance(x_c)
            assert np.all(state.f_z >= 0.0)
            assert np.all(state.f_z[state.z > 0.0] == 0.0)

    def test_static_equilibrium(self):
        """После затухания положение и сила совпадают с аналитическим равновесием."""
        plant = SurrogatePlant()
        plant.reset(np.zeros((1, 2)))
        x_c = np.array([[0.0, 0.0, -0.005]])
        for _ in range(2000):
            state = plant.advance(x_c)
        delta, force = plant.static_penetration(-0.005)
        assert state.z[0] == pytest.approx(-delta, rel=1e-6)
        assert state.f_z[0] == pytest.approx(force, rel=1e-6)

    def test_reset_places_above_surface(self):
        plant = SurrogatePlant(config=PlantConfig(start_height=0.002))
        state = plant.reset(np.array([[0.1, 0.2], [0.3, 0.4]]))
        assert state.x.shape == (2, 3)
        np.testing.assert_allclose(state.z, [0.002, 0.002])
        np.testing.assert_array_equal(state.f_z, [0.0, 0.0])


class TestConfiguration:
    """Тесты проверки параметров."""

    def test_negative_stiffness(self):
        with pytest.raises(ConfigurationError):
            EnvironmentModel(k_e=-1.0).validate()

    def test_gains_damping_law(self):
        """D_d = xi * sqrt(K_d) по каждой оси."""
        gains = ImpedanceGains(K_d_t=1700.0, K_d_r=300.0, xi=0.7)
        np.testing.assert_allclose(gains.D_d, 0.7 * np.sqrt([1700.0] * 3 + [300.0] * 3))

    def test_plant_config_stability(self):
        with pytest.raises(ConfigurationError):
            PlantConfig(dt=0.1).validate(ImpedanceGains())
