"""Differential invariants of a frame field.

Array layouts (after the grid axes):

* connection ``Gamma[i, j, k]`` = Gamma_jk^i, ``j`` the differentiation index;
* torsion ``T[i, j, k]`` = T_jk^i;
* algebroid curvature ``r[i, r, j, k]`` = r_rj,k^i, antisymmetric in (r, j);
* frame ``E[i, j]`` = eps_j^i(0, x) and its inverse ``F[a, k]`` = eps_k^a(x, 0).

Derivative arrays put the derivative index first: ``dGamma[r, i, j, k]``.
Alternations are unnormalized: ``X_[rj] = X_rj - X_jr``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IdentityViolation, IllegalIndexError
from .grid_core import (
    COORD_DOWN,
    COORD_UP,
    RN_DOWN,
    RN_UP,
    FrameField,
    TensorField,
    check_invertible,
    gradient_values,
    norm,
)

_LETTERS = "abcdefgh"
H_IDENTITY_TOL = 1e-8


# -- connection and its curvatures -------------------------------------------


def gamma(frame):
    """Gamma_jk^i = eps_k^a(x, 0) d_j eps_a^i(0, x), with exact first partials."""
    F = frame.inverse_values
    d1, d2 = frame.d1, frame.d2
    G = np.einsum("...jia,...ak->...ijk", d1, F)
    dF = -F[..., None, :, :] @ d1 @ F[..., None, :, :]  # [r, a, k]
    dG = np.einsum("...rjia,...ak->...rijk", d2, F) + np.einsum("...jia,...rak->...rijk", d1, dF)
    return TensorField(frame.chart, (COORD_UP, COORD_DOWN, COORD_DOWN), G, dG)


def torsion(conn):
    """T_jk^i = Gamma_jk^i - Gamma_kj^i."""
    T = conn.values - np.swapaxes(conn.values, -1, -2)
    grad = None
    if conn.grad is not None:
        grad = conn.grad - np.swapaxes(conn.grad, -1, -2)
    return TensorField(conn.chart, conn.signature, T, grad)


def _connection_derivative(conn):
    return gradient_values(conn)


def _swap_rj(X):
    return np.swapaxes(X, -3, -2)


def algebroid_curvature(conn):
    """r_rj,k^i = [d_r Gamma_kj^i + Gamma_kr^a Gamma_aj^i]_[rj]."""
    G = conn.values
    dG = _connection_derivative(conn)
    Y = np.einsum("...rikj->...irjk", dG) + np.einsum("...akr,...iaj->...irjk", G, G)
    return TensorField(conn.chart, (COORD_UP,) + (COORD_DOWN,) * 3, Y - _swap_rj(Y))


def tilde_curvature(conn):
    """R~_rj,k^i = [d_r Gamma_jk^i + Gamma_rk^a Gamma_ja^i]_[rj]; vanishes for every frame."""
    G = conn.values
    dG = _connection_derivative(conn)
    Y = np.einsum("...rijk->...irjk", dG) + np.einsum("...ark,...ija->...irjk", G, G)
    return TensorField(conn.chart, (COORD_UP,) + (COORD_DOWN,) * 3, Y - _swap_rj(Y))


# -- covariant derivatives ---------------------------------------------------


def _covariant(t, conn, tilde):
    G = conn.values
    # C[r, i, a] multiplies index a into slot i for derivative direction r
    C = np.einsum("...iar->...ria", G) if tilde else np.einsum("...ira->...ria", G)
    out = np.array(gradient_values(t), copy=True)
    letters = _LETTERS[: t.rank]
    for pos, tag in enumerate(t.signature):
        if tag in (RN_UP, RN_DOWN):
            continue
        src = letters[:pos] + "z" + letters[pos + 1:]
        if tag == COORD_UP:
            out -= np.einsum(f"...r{letters[pos]}z,...{src}->...r{letters}", C, t.values)
        else:
            out += np.einsum(f"...rz{letters[pos]},...{src}->...r{letters}", C, t.values)
    return TensorField(t.chart, (COORD_DOWN,) + t.signature, out)


def nabla(t, conn):
    """Covariant derivative with the differentiation index first in Gamma_{r.}^.

    Up indices get ``-Gamma_ra^i t^a``, down indices ``+Gamma_rj^a t_a``;
    R^n indices are inert. The result's leading index is the derivative.
    """
    return _covariant(t, conn, tilde=False)


def nabla_tilde(t, conn):
    """As :func:`nabla` but contracting the second lower index of Gamma."""
    return _covariant(t, conn, tilde=True)


# -- metric and index moving ---------------------------------------------------


@dataclass
class CanonicalMetric:
    g: TensorField
    inv: TensorField

    @property
    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.g.values).min())


def canonical_metric(frame):
    """g_ij = sum_a eps_i^a(x, 0) eps_j^a(x, 0), with its pointwise inverse."""
    E, F, d1 = frame.values, frame.inverse_values, frame.d1
    g = np.swapaxes(F, -1, -2) @ F
    ginv = E @ np.swapaxes(E, -1, -2)
    dF = -F[..., None, :, :] @ d1 @ F[..., None, :, :]
    dg = np.swapaxes(dF, -1, -2) @ F[..., None, :, :] + np.swapaxes(F, -1, -2)[..., None, :, :] @ dF
    dginv = d1 @ np.swapaxes(E, -1, -2)[..., None, :, :] + E[..., None, :, :] @ np.swapaxes(d1, -1, -2)
    chart = frame.chart
    return CanonicalMetric(
        TensorField(chart, (COORD_DOWN, COORD_DOWN), g, dg),
        TensorField(chart, (COORD_UP, COORD_UP), ginv, dginv),
    )


def _apply_at(values, A, pos, rank):
    """Contract ``A[..., new, old]`` into slot ``pos`` of a rank-``rank`` component array."""
    letters = _LETTERS[:rank]
    src = letters[:pos] + "z" + letters[pos + 1:]
    return np.einsum(f"...{letters[pos]}z,...{src}->...{letters}", A, values)


def _apply_at_grad(values, grad, A, dA, pos, rank):
    """Product rule for :func:`_apply_at` when both factors carry derivatives."""
    letters = _LETTERS[:rank]
    src = letters[:pos] + "z" + letters[pos + 1:]
    out = np.einsum(f"...r{letters[pos]}z,...{src}->...r{letters}", dA, values)
    out += np.einsum(f"...{letters[pos]}z,...r{src}->...r{letters}", A, grad)
    return out


def _frame_map(frame, kind):
    """Matrix ``A[new, old]`` (and its partials) that moves an index of ``kind``."""
    E, F, d1 = frame.values, frame.inverse_values, frame.d1
    dF = -F[..., None, :, :] @ d1 @ F[..., None, :, :]
    if kind == COORD_UP:  # t^(j) = eps_a^j(x,0) t^a
        return F, dF
    if kind == RN_UP:  # t^i = eps_j^i(0,x) t^(j)
        return E, d1
    if kind == COORD_DOWN:  # t_(k) = t_a eps_k^a(0,x)
        return np.swapaxes(E, -1, -2), np.swapaxes(d1, -1, -2)
    if kind == RN_DOWN:  # t_k = t_(b) eps_k^b(x,0)
        return np.swapaxes(F, -1, -2), np.swapaxes(dF, -1, -2)
    raise IllegalIndexError(kind)


_MOVED = {COORD_UP: RN_UP, RN_UP: COORD_UP, COORD_DOWN: RN_DOWN, RN_DOWN: COORD_DOWN}


def move_index(t, position, frame):
    """Move one index to the base point (coordinate -> R^n) or back (R^n -> coordinate)."""
    if not 0 <= position < t.rank:
        raise IllegalIndexError(f"position {position} out of range for rank {t.rank}")
    kind = t.signature[position]
    A, dA = _frame_map(frame, kind)
    values = _apply_at(t.values, A, position, t.rank)
    grad = None
    if t.grad is not None and frame.grad is not None:
        grad = _apply_at_grad(t.values, t.grad, A, dA, position, t.rank)
    sig = t.signature[:position] + (_MOVED[kind],) + t.signature[position + 1:]
    return TensorField(t.chart, sig, values, grad)


def parallel_extend(frame, value, node, signature):
    """The eps-parallel field equal to ``value`` at grid node ``node``.

    Coordinate indices are transported with eps(p, x) = eps(0, x) eps(p, 0);
    R^n indices are constant.
    """
    chart = frame.chart
    value = np.asarray(value, dtype=float)
    rank = len(signature)
    node = tuple(node)
    E, F, d1 = frame.values, frame.inverse_values, frame.d1
    Ep, Fp = E[node], F[node]
    dF = -F[..., None, :, :] @ d1 @ F[..., None, :, :]
    maps = []
    for tag in signature:
        if tag == COORD_UP:  # t^i(x) = eps_a^i(p,x) t^a(p)
            maps.append((E @ Fp, d1 @ Fp))
        elif tag == COORD_DOWN:  # t_j(x) = t_b(p) eps_j^b(x,p)
            maps.append((np.swapaxes(Ep @ F, -1, -2), np.swapaxes(Ep @ dF, -1, -2)))
        else:
            eye = np.broadcast_to(np.eye(chart.n), chart.shape + (chart.n, chart.n))
            maps.append((eye, np.zeros(chart.shape + (chart.n,) * 3)))
    values = np.broadcast_to(value, chart.shape + value.shape)
    grad = np.zeros(chart.shape + (chart.n,) + value.shape)
    for pos, (A, dA) in enumerate(maps):
        values, grad = _apply_at(values, A, pos, rank), _apply_at_grad(values, grad, A, dA, pos, rank)
    return TensorField(chart, signature, values, grad)


# -- the flow operator -------------------------------------------------------


def homogeneous_from_curvature(curv, metric_inv, frame_values):
    """Pointwise h_j^i = -eps_j^a(0,x) g^{bc} r_ac,b^i from array inputs."""
    return -np.einsum("...aj,...bc,...iacb->...ij", frame_values, metric_inv, curv)


def homogeneous_operator(frame, check=True):
    """h(eps)_j^i = -g^{bc} r_(j)c,b^i, signature of eps(0, x).

    With ``check`` the torsion form -g^{bc} nabla_b T_(j)c^i is evaluated too
    and must agree to 1e-8 (relative to max(1, sup|h|)).
    """
    conn = gamma(frame)
    metric = canonical_metric(frame)
    curv = algebroid_curvature(conn)
    h = homogeneous_from_curvature(curv.values, metric.inv.values, frame.values)
    if check:
        moved = move_index(torsion(conn), 1, frame)  # T_(j)c^i
        dT = nabla(moved, conn).values  # [b, i, j, c]
        h_torsion = -np.einsum("...bc,...bijc->...ij", metric.inv.values, dT)
        gap = np.abs(h - h_torsion).max() if h.size else 0.0
        scale = max(1.0, float(np.abs(h).max()) if h.size else 0.0)
        if not gap <= H_IDENTITY_TOL * scale:
            raise IdentityViolation(
                f"curvature and torsion forms of the flow operator differ by {gap:.3e}"
            )
    return TensorField(frame.chart, (COORD_UP, RN_DOWN), h)


# -- brackets and Bianchi ----------------------------------------------------


def torsion_bracket(T, xi, eta):
    """T(xi, eta)^i = T_ab^i xi^a eta^b."""
    out = np.einsum("...iab,...a,...b->...i", T.values, xi.values, eta.values)
    return TensorField(T.chart, (COORD_UP,), out)


def jacobi_form(T, xi, eta, sigma):
    """J = T(xi, T(eta, sigma)) + T(eta, T(sigma, xi)) + T(sigma, T(xi, eta))."""
    return (
        torsion_bracket(T, xi, torsion_bracket(T, eta, sigma))
        + torsion_bracket(T, eta, torsion_bracket(T, sigma, xi))
        + torsion_bracket(T, sigma, torsion_bracket(T, xi, eta))
    )


@dataclass
class BianchiReport:
    nabla_torsion: TensorField  # cyclic sum of (nabla_xi T)(eta, sigma)
    curvature: TensorField  # cyclic sum of r(eta, sigma)(xi)
    jacobi: TensorField

    @property
    def pairwise(self):
        return {
            "nablaT-curvature": norm(self.nabla_torsion - self.curvature),
            "nablaT-jacobi": norm(self.nabla_torsion - self.jacobi),
            "curvature-jacobi": norm(self.curvature - self.jacobi),
        }

    @property
    def residual(self):
        return max(self.pairwise.values())


def bianchi_lines(frame, xi, eta, sigma, nabla_T=None):
    conn = gamma(frame)
    T = torsion(conn)
    if nabla_T is None:
        nabla_T = nabla(T, conn)
    curv = algebroid_curvature(conn)
    dT, r = nabla_T.values, curv.values

    def cov(w, u, v):  # (nabla_w T)(u, v)
        return np.einsum("...rijk,...r,...j,...k->...i", dT, w.values, u.values, v.values)

    def rc(u, v, w):  # r(u, v)(w) = r_jk,r^i u^j v^k w^r
        return np.einsum("...ijkr,...j,...k,...r->...i", r, u.values, v.values, w.values)

    chart = frame.chart
    line1 = cov(xi, eta, sigma) + cov(eta, sigma, xi) + cov(sigma, xi, eta)
    line2 = rc(eta, sigma, xi) + rc(sigma, xi, eta) + rc(xi, eta, sigma)
    return BianchiReport(
        TensorField(chart, (COORD_UP,), line1),
        TensorField(chart, (COORD_UP,), line2),
        jacobi_form(T, xi, eta, sigma),
    )


def bianchi_residual(frame, xi, eta, sigma):
    """Max pairwise sup-norm gap among the three members of the first Bianchi chain."""
    return bianchi_lines(frame, xi, eta, sigma).residual


# -- gauge action ------------------------------------------------------------


class GaugeField:
    """Invertible matrix field a_j^i acting on frames by left composition."""

    def __init__(self, chart, values, grad=None, hess=None):
        self.chart = chart
        self.values = np.asarray(values, dtype=float)
        self.grad = grad
        self.hess = hess
        check_invertible(self.values)

    @classmethod
    def identity(cls, chart):
        n = chart.n
        return cls(chart, np.broadcast_to(np.eye(n), chart.shape + (n, n)).copy(),
                   np.zeros(chart.shape + (n, n, n)), np.zeros(chart.shape + (n,) * 4))

    @classmethod
    def constant(cls, chart, matrix):
        matrix = np.asarray(matrix, dtype=float)
        n = chart.n
        return cls(chart, np.broadcast_to(matrix, chart.shape + (n, n)).copy(),
                   np.zeros(chart.shape + (n, n, n)), np.zeros(chart.shape + (n,) * 4))

    @classmethod
    def random(cls, seed, chart, amplitude=0.2, bandlimit=2):
        from .catalog import random_gauge_jet

        return cls(chart, *random_gauge_jet(seed, chart, amplitude, bandlimit))

    @classmethod
    def between(cls, target, source):
        """The unique gauge taking ``source`` to ``target``: a = eps' eps^-1."""
        return cls(target.chart, target.values @ source.inverse_values)

    @property
    def inverse_values(self):
        return np.linalg.inv(self.values)


def gauge_act(gauge, frame):
    """(a eps)(0, p) = a(p) o eps(0, p), keeping exact jets when both sides have them."""
    a, E = gauge.values, frame.values
    values = a @ E
    if gauge.grad is None or frame.grad is None:
        return FrameField(frame.chart, values)
    da, dE = gauge.grad, frame.d1
    grad = da @ E[..., None, :, :] + a[..., None, :, :] @ dE
    hess = None
    if gauge.hess is not None and frame._hess is not None:
        hess = (
            gauge.hess @ E[..., None, None, :, :]
            + da[..., :, None, :, :] @ dE[..., None, :, :, :]
            + da[..., None, :, :, :] @ dE[..., :, None, :, :]
            + a[..., None, None, :, :] @ frame._hess
        )
    return FrameField(frame.chart, values, grad, hess)


def gauge_transform_curvature(gauge, curv):
    """Gauge law r'_jk,m^i = a_a^i r_jk,b^a b_m^b, lower pair untouched.

    Also usable pointwise: ``gauge`` may be a bare matrix array.
    """
    a = gauge.values if isinstance(gauge, GaugeField) else np.asarray(gauge)
    r = curv.values if isinstance(curv, TensorField) else np.asarray(curv)
    b = np.linalg.inv(a)
    out = np.einsum("...ia,...ajkb,...bm->...ijkm", a, r, b)
    if isinstance(curv, TensorField):
        return TensorField(curv.chart, curv.signature, out)
    return out


# -- DeTurck terms -----------------------------------------------------------


def _difference_tensor(frame, reference):
    conn = gamma(frame)
    if reference is None:
        return conn, conn.values, conn.grad
    ref_grad = gradient_values(reference)
    return conn, conn.values - reference.values, conn.grad - ref_grad


def deturck_vector(frame, reference=None):
    """W^i = g^{ab} (Gamma_ab^i - Gammabar_ab^i); the reference defaults to zero."""
    conn, D, dD = _difference_tensor(frame, reference)
    metric = canonical_metric(frame)
    W = np.einsum("...ab,...iab->...i", metric.inv.values, D)
    dW = np.einsum("...rab,...iab->...ri", metric.inv.grad, D) + np.einsum(
        "...ab,...riab->...ri", metric.inv.values, dD
    )
    return TensorField(frame.chart, (COORD_UP,), W, dW)


def deturck_operator(frame, reference=None):
    """W_j^i = eps_j^a(0, x) nabla_a W^i (signature of eps(0, x))."""
    conn = gamma(frame)
    W = deturck_vector(frame, reference)
    dW = nabla(W, conn).values  # [a, i]
    return TensorField(frame.chart, (COORD_UP, RN_DOWN), np.einsum("...aj,...ai->...ij", frame.values, dW))


# -- variation formulas ------------------------------------------------------


@dataclass
class VariationReport:
    dgamma_fd: np.ndarray
    dgamma_formula: np.ndarray
    dtorsion_fd: np.ndarray
    dtorsion_formula: np.ndarray

    @property
    def gamma_discrepancy(self):
        return norm(self.dgamma_fd - self.dgamma_formula)

    @property
    def torsion_discrepancy(self):
        return norm(self.dtorsion_fd - self.dtorsion_formula)

    @property
    def discrepancy(self):
        return max(self.gamma_discrepancy, self.torsion_discrepancy)


def _shifted(frame, h, s):
    values = frame.values + s * h.values
    if frame.grad is not None and h.grad is not None:
        return FrameField(frame.chart, values, frame.d1 + s * h.grad)
    return FrameField(frame.chart, values)


def variation_check(frame, h, step=1e-5):
    """Compare d/ds Gamma and d/ds T along eps + s h with nabla_r h_(k)^i forms."""
    if h.signature != (COORD_UP, RN_DOWN):
        raise IllegalIndexError("variation direction must have the signature of eps(0, x)")
    if frame.grad is not None and h.grad is None:
        frame = FrameField(frame.chart, frame.values)
    plus, minus = _shifted(frame, h, step), _shifted(frame, h, -step)
    Gp, Gm = gamma(plus), gamma(minus)
    dG_fd = (Gp.values - Gm.values) / (2 * step)
    Tp, Tm = torsion(Gp), torsion(Gm)
    dT_fd = (Tp.values - Tm.values) / (2 * step)

    conn = gamma(frame)
    h_moved = move_index(h, 1, frame)  # h_(k)^i
    nh = nabla(h_moved, conn).values  # [r, i, k]
    dG = np.einsum("...rik->...irk", nh)
    dT = dG - np.swapaxes(dG, -1, -2)
    return VariationReport(dG_fd, dG, dT_fd, dT)


# -- Christoffel symbols of the canonical metric -----------------------------


def christoffel_sigma(frame, weight=1.0):
    """Sigma_jk^i = -1/2 weight (Gamma_jk^i + T_jb^a g_ka g^{ib} + (j <-> k)).

    ``weight=1`` is the unnormalized symmetrization, ``weight=0.5`` the
    normalized one.
    """
    conn = gamma(frame)
    T = torsion(conn).values
    metric = canonical_metric(frame)
    X = conn.values + np.einsum("...ajb,...ka,...ib->...ijk", T, metric.g.values, metric.inv.values)
    S = -0.5 * weight * (X + np.swapaxes(X, -1, -2))
    return TensorField(frame.chart, conn.signature, S)


def metric_compat_residual(gamma_like, metric):
    """sup |d_r g_ij + G_ri^a g_aj + G_rj^a g_ia| for any connection-shaped field."""
    G = gamma_like.values if isinstance(gamma_like, TensorField) else np.asarray(gamma_like)
    g = metric.g.values
    dg = gradient_values(metric.g)
    res = dg + np.einsum("...ari,...aj->...rij", G, g) + np.einsum("...arj,...ia->...rij", G, g)
    return norm(res)


def classical_christoffel(metric):
    """Textbook 1/2 g^{ia}(d_j g_ak + d_k g_aj - d_a g_jk), metric partials taken on the grid."""
    g = metric.g
    chart = g.chart
    dg = np.stack([chart.derivative(g.values, ax) for ax in range(chart.n)], axis=chart.n)  # [r,i,j]
    ginv = metric.inv.values
    C = 0.5 * (
        np.einsum("...ia,...jak->...ijk", ginv, dg)
        + np.einsum("...ia,...kaj->...ijk", ginv, dg)
        - np.einsum("...ia,...ajk->...ijk", ginv, dg)
    )
    return TensorField(chart, (COORD_UP, COORD_DOWN, COORD_DOWN), C)


@dataclass
class SigmaWeightReport:
    weight: float
    symmetry_error: float
    compat_residual: float
    oracle_error: float  # |Sigma - (-classical)|
    flipped_oracle_error: float  # |Sigma - (+classical)|
    candidates: dict


def select_sigma_weight(frame):
    """Try symmetrization weights 1 and 1/2 against the classical-Christoffel oracle.

    The weight whose Sigma matches the oracle up to an overall sign wins; the
    signed errors of every candidate are kept for the report.
    """
    metric = canonical_metric(frame)
    C = classical_christoffel(metric).values
    rows = {}
    for w in (1.0, 0.5):
        S = christoffel_sigma(frame, w)
        rows[w] = {
            "symmetry_error": norm(S.values - np.swapaxes(S.values, -1, -2)),
            "compat_residual": metric_compat_residual(S, metric),
            "oracle_error": norm(S.values + C),
            "flipped_oracle_error": norm(S.values - C),
        }
    best = min(rows, key=lambda w: min(rows[w]["oracle_error"], rows[w]["flipped_oracle_error"]))
    return SigmaWeightReport(best, candidates=rows, **rows[best])
