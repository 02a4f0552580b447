import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hflow_lab import catalog
from hflow_lab.errors import ContinuationError
from hflow_lab.frame_calculus import algebroid_curvature, gamma
from hflow_lab.grid_core import Chart, FrameField
from hflow_lab.groupoid import (
    TwoPointSplitting,
    develop,
    groupoid_curvature,
    linearize_groupoid_curvature,
    monodromy,
    solution_map,
    tilde_splitting,
)


def builtin_frame(name, res=9):
    recipe = catalog.builtin(name)
    return FrameField.from_recipe(recipe, recipe.default_chart(res))


def perturbed(res=32, sampled=False):
    chart = Chart.periodic(res, n=2)
    frame = FrameField.from_recipe(catalog.perturbation(0, 0.1, 2, chart), chart)
    return FrameField.sampled(chart, frame.values) if sampled else frame


# Heisenberg group law whose left-invariant fields are d1, d2 + x1 d3, d3.
def mul(a, b):
    return np.array([a[0] + b[0], a[1] + b[1], a[2] + b[2] + a[0] * b[1]])


def inv(a):
    return np.array([-a[0], -a[1], -a[2] + a[0] * a[1]])


P = np.array([-0.3, -0.2, 0.1])
Q = np.array([0.2, 0.3, -0.1])


@pytest.mark.parametrize("sampled", [False, True])
def test_cocycle_and_identity(sampled):
    S = TwoPointSplitting(perturbed(sampled=sampled))
    rng = np.random.default_rng(0)
    for _ in range(5):
        x, y, z = rng.uniform(0, 2 * np.pi, (3, 2))
        assert np.abs(S(z, y) @ S(x, z) - S(x, y)).max() <= 1e-8
        assert np.abs(S(x, x) - np.eye(2)).max() <= 1e-10


def test_groupoid_curvature_vanishes_on_diagonal():
    S = TwoPointSplitting(perturbed())
    x = np.array([1.0, 4.0])
    assert np.abs(groupoid_curvature(S, x, x)).max() <= 1e-14


def test_groupoid_curvature_of_lie_and_generic_frames():
    rng = np.random.default_rng(1)
    S = TwoPointSplitting(builtin_frame("heisenberg"))
    for _ in range(10):
        x, y = rng.uniform(-1, 1, (2, 3))
        assert np.abs(groupoid_curvature(S, x, y)).max() <= 1e-8
    G = TwoPointSplitting(perturbed())
    assert np.abs(groupoid_curvature(G, [0.5, 1.0], [2.0, 0.3])).max() > 1e-3


def test_linearization_matches_algebroid_curvature():
    frame = perturbed(res=32)
    S = TwoPointSplitting(frame)
    node = (3, 5)
    x = frame.chart.node(node)
    r = algebroid_curvature(gamma(frame)).values[node]
    assert np.abs(linearize_groupoid_curvature(S, x, np.zeros(2))).max() == 0.0
    for m in range(2):
        lin = linearize_groupoid_curvature(S, x, np.eye(2)[m])
        assert np.abs(lin - r[..., m]).max() <= 1e-6


def test_linearization_vanishes_on_heisenberg():
    S = TwoPointSplitting(builtin_frame("heisenberg"))
    lin = linearize_groupoid_curvature(S, [0.1, 0.2, -0.3], [0.3, -1.0, 0.5])
    assert np.abs(lin).max() <= 1e-8


def test_develop_identity_frame_is_translation():
    frame = builtin_frame("abelian", 8)
    p, q = np.array([0.5, 1.0]), np.array([2.0, -1.0])
    dev = develop(frame, p, q, path=[p, [1.5, 2.0], [3.0, 0.5]], steps=50)
    assert np.abs(dev.values - (dev.points + (q - p))).max() <= 1e-12
    assert dev.residual <= 1e-10


def test_develop_heisenberg_is_left_translation():
    frame = builtin_frame("heisenberg")
    end = np.array([0.4, 0.5, 0.2])
    dev = develop(frame, P, Q, path=[P, end], steps=1000)
    assert dev.residual <= 1e-8
    assert np.abs(dev.jet_value - mul(mul(Q, inv(P)), end)).max() <= 1e-12


def test_develop_residual_on_generic_frame_is_reported():
    frame = perturbed()
    p = np.array([1.0, 2.0])
    dev = develop(frame, p, p + [0.5, 0.5], path=[p, p + [0.6, 0.3]], steps=200)
    assert np.isfinite(dev.residual) and dev.residual > 1e-5
    assert abs(np.linalg.det(dev.jet)) > 0


def test_develop_is_fourth_order():
    frame = perturbed()
    p = np.array([1.0, 2.0])
    path = [p, p + [0.8, 0.2], p + [0.3, 0.9]]
    ends = [develop(frame, p, p + 0.4, path=path, steps=s).jet_value for s in (10, 20, 40)]
    ratio = np.abs(ends[0] - ends[1]).max() / np.abs(ends[1] - ends[2]).max()
    assert 12 < ratio < 20


def test_develop_leaving_box_raises():
    frame = builtin_frame("heisenberg")
    p = np.zeros(3)
    with pytest.raises(ContinuationError):
        develop(frame, p, np.array([0.5, 0.5, 0.5]), path=[p, [0.5, 0.5, 0.5]], steps=100)


def test_develop_path_must_start_at_p():
    with pytest.raises(ValueError):
        develop(builtin_frame("heisenberg"), P, Q, path=[Q, P])


def test_development_csv():
    frame = builtin_frame("heisenberg")
    dev = develop(frame, P, Q, steps=4)
    lines = dev.to_csv().splitlines()
    assert lines[0] == "s,c0,c1,c2,f0,f1,f2,residual"
    assert len(lines) == 6


def test_monodromy_identity_and_heisenberg():
    loop2 = [np.zeros(2), [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    assert monodromy(builtin_frame("abelian", 8), np.zeros(2), loop2, steps=40).deviation <= 1e-12
    loop3 = [P, P + [0.4, 0, 0], P + [0.4, 0.4, 0], P + [0, 0.4, 0.3]]
    frame = builtin_frame("heisenberg")
    assert monodromy(frame, P, loop3, steps=400).deviation <= 1e-7
    assert monodromy(frame, P, loop3, steps=400, target=Q).deviation <= 1e-7


def test_monodromy_on_generic_frame_is_nonzero():
    frame = perturbed()
    p = np.array([1.0, 1.0])
    loop = [p, p + [1, 0], p + [1, 1], p + [0, 1]]
    assert monodromy(frame, p, loop, steps=200, target=p + 0.5).deviation > 1e-4


def test_tilde_splitting_basic_cases():
    ident = tilde_splitting(builtin_frame("abelian", 8), np.array([1.0, 2.0]), np.array([3.0, 0.5]))
    assert np.abs(ident - np.eye(2)).max() <= 1e-8
    frame = builtin_frame("heisenberg")
    assert np.abs(tilde_splitting(frame, P, P) - np.eye(3)).max() <= 1e-8


def test_tilde_splitting_is_right_translation_derivative():
    frame = builtin_frame("heisenberg")
    h = mul(inv(P), Q)
    want = np.eye(3)
    want[2, 0] = h[1]
    assert np.abs(tilde_splitting(frame, P, Q) - want).max() <= 1e-8


def test_tilde_splitting_derivative_reproduces_connection():
    frame = builtin_frame("heisenberg")
    x = np.array([0.2, -0.1, 0.3])
    d = 1e-3
    dd = np.stack([(tilde_splitting(frame, x, x + d * e) - tilde_splitting(frame, x, x - d * e)) / (2 * d)
                   for e in np.eye(3)], axis=-1)
    G = gamma(frame).values[0, 0, 0]  # constant on Heisenberg
    assert np.abs(dd - G).max() <= 1e-5


def test_left_and_right_families_commute():
    frame = builtin_frame("heisenberg")
    phi = solution_map(frame, np.zeros(3), np.array([0.1, -0.2, 0.05]))

    def psi(x):
        return develop(frame, P, np.asarray(x), path=[P, Q], steps=200).jet_value

    for x in ([-0.1, 0.0, 0.1], [0.05, -0.15, -0.2]):
        x = P + np.array(x) * 0.5
        assert np.abs(phi(psi(x)) - psi(phi(x))).max() <= 1e-6


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(min_value=-0.9, max_value=0.9), min_size=9, max_size=9))
def test_heisenberg_cocycle_property(coords):
    S = TwoPointSplitting(builtin_frame("heisenberg"))
    x, y, z = np.reshape(coords, (3, 3))
    assert np.abs(S(z, y) @ S(x, z) - S(x, y)).max() <= 1e-12
