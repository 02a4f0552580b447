import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hflow_lab import catalog
from hflow_lab.errors import IllegalIndexError
from hflow_lab.frame_calculus import (
    GaugeField,
    algebroid_curvature,
    bianchi_lines,
    canonical_metric,
    christoffel_sigma,
    classical_christoffel,
    deturck_operator,
    deturck_vector,
    gamma,
    gauge_act,
    gauge_transform_curvature,
    homogeneous_operator,
    metric_compat_residual,
    move_index,
    nabla,
    nabla_tilde,
    parallel_extend,
    select_sigma_weight,
    tilde_curvature,
    torsion,
    variation_check,
)
from hflow_lab.grid_core import Chart, FrameField, TensorField, norm


def builtin_frame(name, res=12, n=None):
    recipe = catalog.builtin(name, n)
    return FrameField.from_recipe(recipe, recipe.default_chart(res))


def perturbed(seed=0, amp=0.1, res=16, n=2):
    chart = Chart.periodic(res, n=n)
    return FrameField.from_recipe(catalog.perturbation(seed, amp, 2, chart), chart)


def test_gamma_matches_definition_pointwise():
    frame = perturbed(res=8)
    G = gamma(frame).values
    node = (3, 5)
    want = np.einsum("jia,ak->ijk", frame.d1[node], np.linalg.inv(frame.values[node]))
    assert np.abs(G[node] - want).max() <= 1e-15


def test_connection_gradient_matches_grid_derivative():
    frame = perturbed(res=32)
    conn = gamma(frame)
    grid = np.stack([frame.chart.derivative(conn.values, ax) for ax in range(2)], axis=2)
    assert np.abs(grid - conn.grad).max() <= 1e-9


@pytest.mark.parametrize("name", ["abelian", "heisenberg", "affine"])
def test_lie_group_frames_have_flat_algebroid_and_parallel_torsion(name):
    frame = builtin_frame(name)
    conn = gamma(frame)
    assert norm(algebroid_curvature(conn)) <= 1e-10
    assert norm(nabla(torsion(conn), conn)) <= 1e-10


def test_tilde_curvature_vanishes_for_sampled_frame():
    frame = perturbed(res=64)
    sampled = FrameField.sampled(frame.chart, frame.values)
    assert norm(tilde_curvature(gamma(sampled))) <= 1e-6


def test_alternation_weight_is_pinned_by_torsion_derivative():
    frame = perturbed(res=16)
    conn = gamma(frame)
    dT = np.einsum("...rijk->...ijkr", nabla(torsion(conn), conn).values)
    r = algebroid_curvature(conn).values
    assert np.abs(dT - r).max() <= 1e-12
    assert np.abs(dT - 0.5 * r).max() > 1e-3  # a halved alternation would not match


def test_metric_is_parallel_and_positive():
    frame = perturbed(res=16)
    conn = gamma(frame)
    metric = canonical_metric(frame)
    assert metric.min_eigenvalue > 0
    assert np.abs(metric.g.values @ metric.inv.values - np.eye(2)).max() <= 1e-13
    assert norm(nabla(metric.g, conn)) <= 1e-12
    assert norm(nabla(metric.inv, conn)) <= 1e-12


def test_connection_difference_reading_of_trailing_index():
    # nabla - nabla~ acting on a vector is -T_ra^i xi^a with T_jk = Gamma_jk - Gamma_kj
    frame = perturbed(res=16)
    conn = gamma(frame)
    xi = catalog.random_field(4, frame.chart, ("u",))
    T = torsion(conn).values
    diff = nabla(xi, conn).values - nabla_tilde(xi, conn).values
    Txi = np.einsum("...ira,...a->...ri", T, xi.values)
    assert np.abs(diff + Txi).max() <= 1e-13
    assert np.abs(diff - Txi).max() > 1e-2


def test_rn_indices_are_inert():
    frame = perturbed(res=16)
    conn = gamma(frame)
    v = catalog.random_field(1, frame.chart, ("U",))
    grad = np.stack([frame.chart.derivative(v.values, ax) for ax in range(2)], axis=2)
    assert np.abs(nabla(v, conn).values - grad).max() <= 1e-10


def test_move_index_round_trip_and_tags():
    frame = perturbed(res=8)
    t = catalog.random_field(2, frame.chart, ("u", "d"))
    moved = move_index(t, 1, frame)
    assert moved.signature == ("u", "D")
    back = move_index(moved, 1, frame)
    assert back.signature == ("u", "d")
    assert np.abs(back.values - t.values).max() <= 1e-13
    with pytest.raises(IllegalIndexError):
        move_index(t, 2, frame)


def test_parallel_extension_is_parallel():
    frame = perturbed(res=16)
    conn = gamma(frame)
    value = np.array([[0.3, -1.0], [2.0, 0.5]])
    field = parallel_extend(frame, value, (4, 9), ("u", "d"))
    assert np.abs(field.values[4, 9] - value).max() <= 1e-14
    assert norm(nabla(field, conn)) <= 1e-12


def test_flow_operator_vanishes_on_lie_frames_and_has_frame_signature():
    h = homogeneous_operator(builtin_frame("heisenberg", 9))
    assert h.signature == ("u", "D")
    assert norm(h) <= 1e-12
    assert norm(homogeneous_operator(perturbed())) > 1e-3


def test_deturck_vector_on_identity_and_self_reference():
    ident = builtin_frame("abelian", 8)
    assert norm(deturck_vector(ident)) == 0.0
    assert norm(deturck_operator(ident)) == 0.0
    frame = perturbed(res=16)
    assert norm(deturck_vector(frame, gamma(frame))) == 0.0


def test_deturck_vector_on_heisenberg_matches_explicit_contraction():
    frame = builtin_frame("heisenberg", 9)
    W = deturck_vector(frame).values
    G = gamma(frame).values
    ginv = canonical_metric(frame).inv.values
    node = (2, 6, 4)
    want = [sum(ginv[node][a, b] * G[node][i, a, b] for a in range(3) for b in range(3)) for i in range(3)]
    assert np.abs(W[node] - want).max() <= 1e-15
    assert W[node][2] == pytest.approx(ginv[node][0, 1])


def test_deturck_gradient_matches_grid():
    frame = perturbed(res=32)
    W = deturck_vector(frame)
    grid = np.stack([frame.chart.derivative(W.values, ax) for ax in range(2)], axis=2)
    assert np.abs(grid - W.grad).max() <= 1e-9


def test_variation_zero_direction():
    frame = perturbed(res=8)
    h = TensorField(frame.chart, ("u", "D"), np.zeros(frame.values.shape), np.zeros(frame.d1.shape))
    assert variation_check(frame, h).discrepancy == 0.0


def test_variation_identity_frame_constant_direction():
    frame = builtin_frame("abelian", 8)
    M = np.array([[0.2, -0.7], [1.1, 0.4]])
    h = TensorField(frame.chart, ("u", "D"), np.broadcast_to(M, frame.values.shape).copy(),
                    np.zeros(frame.d1.shape))
    assert variation_check(frame, h).discrepancy <= 1e-8


def test_variation_heisenberg_random_direction():
    frame = builtin_frame("heisenberg", 10)
    h = catalog.random_field(5, frame.chart, ("u", "D"), amplitude=0.5)
    assert variation_check(frame, h).discrepancy <= 1e-6


def test_variation_rejects_wrong_signature():
    frame = perturbed(res=8)
    with pytest.raises(IllegalIndexError):
        variation_check(frame, catalog.random_field(0, frame.chart, ("u", "d")))


def test_bianchi_lines_on_heisenberg():
    frame = builtin_frame("heisenberg", 9)
    xi, eta, sigma = (catalog.random_field(k, frame.chart, ("u",)) for k in range(3))
    assert bianchi_lines(frame, xi, eta, sigma).residual <= 1e-12


def test_bianchi_jacobi_member_has_opposite_sign():
    frame = perturbed(res=12, n=3)
    xi, eta, sigma = (catalog.random_field(k, frame.chart, ("u",)) for k in range(3))
    rep = bianchi_lines(frame, xi, eta, sigma)
    assert norm(rep.nabla_torsion - rep.curvature) <= 1e-15
    assert norm(rep.nabla_torsion + rep.jacobi) <= 1e-15
    assert norm(rep.jacobi) > 1e-8


def test_gauge_act_keeps_jets_consistent():
    frame = perturbed(res=32)
    gauge = GaugeField.random(1, frame.chart)
    acted = gauge_act(gauge, frame)
    grid = np.stack([frame.chart.derivative(acted.values, ax) for ax in range(2)], axis=2)
    assert np.abs(grid - acted.d1).max() <= 1e-9


def test_gauge_law_holds_for_identity_and_scalar_gauges():
    frame = perturbed(res=16)
    curv = algebroid_curvature(gamma(frame))
    for gauge in (GaugeField.identity(frame.chart), GaugeField.constant(frame.chart, 2.5 * np.eye(2))):
        law = gauge_transform_curvature(gauge, curv).values
        direct = algebroid_curvature(gamma(gauge_act(gauge, frame))).values
        assert np.abs(law - direct).max() <= 1e-12


def test_sigma_identity_and_symmetry():
    assert norm(christoffel_sigma(builtin_frame("abelian", 8))) == 0.0
    S = christoffel_sigma(perturbed(res=16)).values
    assert np.array_equal(S, np.swapaxes(S, -1, -2))


def test_sigma_equals_classical_christoffel_and_its_negative_is_compatible():
    frame = builtin_frame("heisenberg", 12)
    metric = canonical_metric(frame)
    S = christoffel_sigma(frame)
    C = classical_christoffel(metric).values
    assert np.abs(S.values - C).max() <= 1e-10
    assert metric_compat_residual(-S.values, metric) <= 1e-10
    assert metric_compat_residual(gamma(frame), metric) <= 1e-10


def test_sigma_weight_selection_records_candidates():
    rep = select_sigma_weight(builtin_frame("heisenberg", 12))
    assert rep.weight == 1.0
    assert set(rep.candidates) == {1.0, 0.5}
    assert rep.flipped_oracle_error <= 1e-10


@settings(max_examples=8, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_identities_hold_for_random_perturbations(seed):
    frame = perturbed(seed=seed, amp=0.3, res=12)
    conn = gamma(frame)
    T = torsion(conn).values
    r = algebroid_curvature(conn).values
    assert np.array_equal(T, -np.swapaxes(T, -1, -2))
    assert np.array_equal(r, -np.swapaxes(r, -3, -2))
    assert norm(tilde_curvature(conn)) <= 1e-12
    dT = np.einsum("...rijk->...ijkr", nabla(torsion(conn), conn).values)
    assert np.abs(dT - r).max() <= 1e-12
