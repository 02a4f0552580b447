import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from hflow_lab import catalog
from hflow_lab.errors import ConfigurationError
from hflow_lab.frame_calculus import algebroid_curvature, gamma, torsion
from hflow_lab.grid_core import Chart, FrameField, norm


def frame_of(recipe, res=12):
    return FrameField.from_recipe(recipe, recipe.default_chart(res))


@pytest.mark.parametrize("name", ["abelian", "heisenberg", "affine"])
def test_builtin_self_check(name):
    assert catalog.builtin(name).self_check() <= catalog.SELF_CHECK_TOL


def test_unknown_builtin():
    with pytest.raises(ConfigurationError):
        catalog.builtin("sphere")


def test_abelian_has_no_invariants():
    frame = frame_of(catalog.builtin("abelian", 3), 8)
    conn = gamma(frame)
    assert norm(conn) == 0.0
    assert norm(torsion(conn)) == 0.0
    assert norm(algebroid_curvature(conn)) == 0.0


def test_heisenberg_columns_and_inverse():
    recipe = catalog.builtin("heisenberg")
    x = np.array([[0.4, -0.3, 0.9]])
    E, dE, d2E = recipe.evaluate(x)
    want = np.eye(3)
    want[2, 1] = 0.4  # second column is d2 + x1 d3
    assert np.array_equal(E[0], want)
    inv = np.linalg.inv(E[0])
    assert inv[2, 1] == -0.4 and inv[1, 2] == 0.0
    assert dE[0, 0, 2, 1] == 1.0 and np.count_nonzero(dE) == 1
    assert not d2E.any()


def test_heisenberg_torsion_is_the_structure_constant():
    frame = frame_of(catalog.builtin("heisenberg"), 9)
    T = torsion(gamma(frame)).values
    expected = np.zeros((3, 3, 3))
    expected[2, 0, 1], expected[2, 1, 0] = 1.0, -1.0
    assert np.abs(T - expected).max() <= 1e-14


def test_affine_torsion_orientation_recorded():
    recipe = catalog.builtin("affine")
    T = torsion(gamma(frame_of(recipe, 9))).values
    (idx, val), = recipe.expected["torsion"].items()
    assert np.abs(T[(Ellipsis,) + idx] - val).max() <= 1e-13
    assert recipe.params["orientation"] == "+1"


def test_zero_amplitude_perturbation_is_identity():
    chart = Chart.periodic(16, n=2)
    E, dE, d2E = catalog.perturbation(5, 0.0, 2, chart).evaluate(chart.points)
    assert np.array_equal(E, np.broadcast_to(np.eye(2), E.shape))
    assert not dE.any() and not d2E.any()


def test_reference_perturbation_is_safely_invertible():
    chart = Chart.periodic(64, n=2)
    E, _, _ = catalog.perturbation(0, 0.1, 2, chart).evaluate(chart.points)
    assert np.abs(np.linalg.det(E)).min() > 0.5


def test_perturbation_is_deterministic():
    chart = Chart.periodic(16, n=2)
    a = catalog.perturbation(3, 0.2, 2, chart).evaluate(chart.points)
    b = catalog.perturbation(3, 0.2, 2, chart).evaluate(chart.points)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()
    c = catalog.perturbation(4, 0.2, 2, chart).evaluate(chart.points)
    assert not np.array_equal(a[0], c[0])


def test_perturbation_rejects_large_amplitude():
    with pytest.raises(ConfigurationError):
        catalog.perturbation(0, 0.5)


def test_expm_jet_matches_scipy_and_differences():
    rng = np.random.default_rng(2)
    A0, A1, A2 = (0.3 * rng.standard_normal((3, 3)) for _ in range(3))

    def A(t):
        return A0 + t * A1 + t * t * A2

    t, h = 0.2, 1e-4
    dA = (A1 + 2 * t * A2)[None]
    d2A = (2 * A2)[None, None]
    E, dE, d2E = catalog.expm_jet(A(t)[None], dA[None], d2A[None])
    assert np.abs(E[0] - expm(A(t))).max() <= 1e-13
    fd1 = (expm(A(t + h)) - expm(A(t - h))) / (2 * h)
    fd2 = (expm(A(t + h)) - 2 * expm(A(t)) + expm(A(t - h))) / h**2
    assert np.abs(dE[0, 0] - fd1).max() <= 1e-7
    assert np.abs(d2E[0, 0, 0] - fd2).max() <= 1e-5


def test_trig_polynomial_respects_amplitude_bound():
    chart = Chart.periodic(32, n=2)
    rng = np.random.default_rng(0)
    poly = catalog.random_trig_polynomial(rng, chart, (2, 2), 2, 0.3)
    vals, _, _ = poly.evaluate(chart.points)
    assert np.abs(vals).max() <= 0.3


def test_parse_frame_spec_variants():
    chart = Chart.periodic(16, n=2)
    r = catalog.parse_frame_spec("perturbation:seed=2,amp=0.05,bandlimit=1", chart)
    assert r.params == {"seed": 2, "amp": 0.05, "bandlimit": 1}
    assert catalog.parse_frame_spec("abelian:n=3").n == 3
    assert catalog.parse_frame_spec("heisenberg").name == "heisenberg"
    assert catalog.parse_frame_spec(r.spec_string(), chart).params == r.params
    for bad in ("perturbation:seed=x", "perturbation:color=1", "heisenberg:n=2", "abelian:oops"):
        with pytest.raises(ConfigurationError):
            catalog.parse_frame_spec(bad, chart)


def test_random_field_carries_exact_gradient():
    chart = Chart.periodic(32, n=2)
    f = catalog.random_field(9, chart, ("u",))
    grid = np.stack([chart.derivative(f.values, ax) for ax in range(2)], axis=2)
    assert np.abs(grid - f.grad).max() <= 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.floats(min_value=0.0, max_value=0.49))
def test_any_perturbation_passes_self_check(seed, amp):
    chart = Chart.periodic(8, n=2)
    recipe = catalog.perturbation(seed, amp, 2, chart)
    assert recipe.self_check() <= catalog.SELF_CHECK_TOL
    E, _, _ = recipe.evaluate(chart.points)
    assert np.abs(np.linalg.det(E)).min() >= np.exp(-2 * amp) - 1e-12
