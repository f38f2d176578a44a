"""Angle metric properties: range, symmetry, scale invariance."""

import numpy as np
import pytest

from splitsim.errors import InputError
from splitsim.rotation import (
    AngularState,
    angular_displacement,
    angular_velocity,
    rotational_displacement,
    smallest_majority_sum,
)


def test_known_angles():
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    assert angular_displacement(e1, e1) == 0.0
    assert abs(angular_displacement(e1, e2) - np.pi / 2) < 1e-12
    assert abs(angular_displacement(e1, -e1) - np.pi) < 1e-12


def test_angle_properties_random():
    rng = np.random.default_rng(100)
    for _ in range(200):
        dim = int(rng.integers(2, 40))
        u = rng.normal(size=dim)
        v = rng.normal(size=dim)
        theta = angular_displacement(u, v)
        assert 0.0 <= theta <= np.pi
        assert abs(theta - angular_displacement(v, u)) <= 1e-12
        a, b = rng.uniform(0.1, 50.0, size=2)
        assert abs(theta - angular_displacement(a * u, b * v)) <= 1e-12


def test_zero_norm_vectors_have_no_direction():
    v = np.array([1.0, 2.0])
    assert angular_displacement(np.zeros(2), v) == 0.0
    assert angular_displacement(v, np.full(2, 1e-13)) == 0.0


def test_angle_input_validation():
    with pytest.raises(InputError):
        angular_displacement(np.zeros(2), np.zeros(3))
    with pytest.raises(InputError):
        angular_displacement(np.array([]), np.array([]))


def test_smallest_majority_sum_basics():
    assert smallest_majority_sum([5.0, 1.0, 3.0], 2) == 4.0
    assert smallest_majority_sum([2.0], 1) == 2.0
    assert smallest_majority_sum([1.0, 2.0, 3.0], 3) == 6.0
    with pytest.raises(InputError):
        smallest_majority_sum([1.0, 2.0], 0)
    with pytest.raises(InputError):
        smallest_majority_sum([1.0, 2.0], 3)
    with pytest.raises(InputError):
        smallest_majority_sum([], 1)


def test_smallest_majority_sum_permutation_invariant():
    rng = np.random.default_rng(101)
    for _ in range(100):
        size = int(rng.integers(1, 20))
        values = rng.normal(size=size)
        m = int(rng.integers(1, size + 1))
        reference = smallest_majority_sum(values, m)
        shuffled = rng.permutation(values)
        assert abs(smallest_majority_sum(shuffled, m) - reference) <= 1e-12


def test_velocity_uses_zero_before_first_score():
    fresh = AngularState(adn_current=1.0)
    assert angular_velocity(fresh) == 1.0  # previous defaults to zero
    seen = AngularState(adn_current=0.8, adn_previous=0.5)
    assert abs(angular_velocity(seen) - 0.3) < 1e-15
    slow = AngularState(adn_current=0.8, adn_previous=0.5, delta_t=2.0)
    assert abs(angular_velocity(slow) - 0.15) < 1e-15


def test_rotational_displacement_in_turns():
    assert abs(rotational_displacement(np.pi) - 0.5) < 1e-15
    assert abs(rotational_displacement(-2.0 * np.pi) - 1.0) < 1e-15
    assert rotational_displacement(0.0) == 0.0


def test_angular_state_validation():
    with pytest.raises(InputError):
        AngularState(adn_current=-0.1)
    with pytest.raises(InputError):
        AngularState(delta_t=0.0)
