import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import skorohod_case_analysis
from queue_mfg.errors import DomainError
from queue_mfg.skorohod import estimate_lipschitz_constant, lipschitz_ratio, reflect_path


def random_walks(rng, n, K, L, scale=None):
    scale = scale or 4.0 * L / np.sqrt(K)
    x0 = rng.uniform(0, L, size=(n, 1))
    return x0 + np.cumsum(np.c_[np.zeros(n), rng.normal(0, scale, (n, K - 1))], axis=1)


def walk(L=1.0):
    steps = arrays(np.float64, st.integers(1, 60), elements=st.floats(-0.9 * L, 0.9 * L))
    return st.tuples(st.floats(0, L), steps).map(lambda a: np.r_[a[0], a[0] + np.cumsum(a[1])])


def test_constant_path_is_untouched():
    out = reflect_path(np.full(50, 0.3), 1.0)
    assert np.all(out.phi == 0.3)
    assert np.all(out.zeta1 == 0) and np.all(out.zeta2 == 0)


def test_one_sided_formula_for_a_falling_line():
    t = np.linspace(0, 2, 2001)
    psi = 1 - t
    out = reflect_path(psi, 10.0)
    expected = psi + np.maximum.accumulate(np.maximum(-psi, 0))
    np.testing.assert_allclose(out.phi, np.maximum(1 - t, 0), atol=1e-12)
    np.testing.assert_allclose(out.phi, expected, atol=1e-12)
    assert out.zeta1[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(out.zeta2 == 0)


def test_matches_case_analysis_oracle_on_boundary_crossing_walks():
    rng = np.random.default_rng(5)
    psi = random_walks(rng, 200, 400, 1.0)
    out = reflect_path(psi, 1.0)
    phi, z1, z2 = skorohod_case_analysis(psi, 1.0)
    assert np.abs(out.phi - phi).max() <= 1e-12
    assert np.abs(out.zeta1 - z1).max() <= 1e-12
    assert np.abs(out.zeta2 - z2).max() <= 1e-12
    # the walks really do visit both ends
    assert (z1[:, -1] > 0).mean() > 0.5 and (z2[:, -1] > 0).mean() > 0.5


@given(psi=walk())
def test_triple_invariants(psi):
    out = reflect_path(psi, 1.0)
    assert np.all((out.phi >= 0) & (out.phi <= 1.0))
    for z in (out.zeta1, out.zeta2):
        assert z[0] == 0 and np.all(np.diff(z) >= 0)
    np.testing.assert_allclose(out.phi, psi + out.zeta1 - out.zeta2, atol=1e-12)
    d1, d2 = np.diff(out.zeta1), np.diff(out.zeta2)
    assert np.all(out.phi[1:][d1 > 0] == 0)
    assert np.all(out.phi[1:][d2 > 0] == 1.0)


@given(psi=walk(), c=st.sampled_from([0.5, 2.0, 4.0, 0.25]))
def test_scale_equivariance(psi, c):
    a = reflect_path(psi, 1.0)
    b = reflect_path(c * psi, c)
    for u, v in ((a.phi, b.phi), (a.zeta1, b.zeta1), (a.zeta2, b.zeta2)):
        assert np.array_equal(c * u, v)


def test_jump_longer_than_interval_matches_subdivided_jump():
    # a single jump across the whole interval, versus the same jump in short pieces
    psi = np.array([0.5, 3.0, -2.0])
    fine = np.r_[0.5, np.linspace(0.5, 3.0, 26)[1:], np.linspace(3.0, -2.0, 51)[1:]]
    a, b = reflect_path(psi, 1.0), reflect_path(fine, 1.0)
    assert a.phi[-1] == b.phi[-1] == 0.0
    assert a.zeta1[-1] == pytest.approx(b.zeta1[-1], abs=1e-12)
    assert a.zeta2[-1] == pytest.approx(b.zeta2[-1], abs=1e-12)


def test_refinement_changes_outputs_by_at_most_one_step_modulus():
    L = 1.0
    f = lambda t: 0.5 + 0.9 * np.sin(7 * t) + 0.4 * np.sin(23 * t)  # noqa: E731
    for K in (200, 400, 800):
        t_c = np.linspace(0, 2, K + 1)
        t_f = np.linspace(0, 2, 2 * K + 1)
        coarse = reflect_path(f(t_c), L).phi
        fine = reflect_path(f(t_f), L).phi[::2]
        dense = np.linspace(0, 2, 200 * K + 1)
        step = 2 / K
        lag = int(round(step / (dense[1] - dense[0])))
        modulus = np.abs(f(dense[lag:]) - f(dense[:-lag])).max()
        assert np.abs(coarse - fine).max() <= modulus


@pytest.mark.parametrize("bad", [np.array([1.5, 0.2]), np.array([0.2, np.nan]), np.array([-0.1])])
def test_rejects_invalid_paths(bad):
    with pytest.raises(DomainError):
        reflect_path(bad, 1.0)


def test_lipschitz_ratio_on_identical_offsets():
    # shifting a path that never touches the boundary moves phi by the shift only
    psi = 0.5 + 0.1 * np.sin(np.linspace(0, 6, 300))
    r = lipschitz_ratio(psi[None], psi[None] + 0.01, 1.0)
    assert r[0] == pytest.approx(1.0, abs=1e-9)


def test_lipschitz_estimate_is_deterministic_and_finite():
    a = estimate_lipschitz_constant(n_pairs=100, n_steps=200, seed=3)
    assert a == estimate_lipschitz_constant(n_pairs=100, n_steps=200, seed=3)
    assert 1.0 <= a < 10.0
