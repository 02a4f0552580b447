"""Closed-form example frames and seeded band-limited perturbations."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .grid_core import Chart, TensorField

SELF_CHECK_TOL = 1e-6


@dataclass(frozen=True)
class FrameRecipe:
    """A frame eps(0, x) given in closed form with first and second partials.

    ``func(points)`` maps points of shape ``(..., n)`` to ``(E, dE, d2E)`` with
    layouts ``[..., i, j]``, ``[..., r, i, j]`` and ``[..., r, s, i, j]``.
    ``expected`` flags which invariants vanish identically.
    """

    name: str
    n: int
    chart_kind: str
    default_extent: tuple
    func: object = field(repr=False, compare=False)
    expected: dict = field(default_factory=dict, compare=False)
    params: dict = field(default_factory=dict, compare=False)

    def evaluate(self, points):
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.n:
            raise ConfigurationError(f"recipe {self.name!r} expects points with {self.n} coordinates")
        return self.func(points)

    def default_chart(self, resolution):
        if self.chart_kind == "periodic":
            return Chart.periodic(resolution, self.default_extent, n=self.n)
        return Chart("box", (int(resolution),) * self.n if np.ndim(resolution) == 0 else tuple(resolution),
                     self.default_extent)

    def spec_string(self):
        if not self.params:
            return self.name
        return self.name + ":" + ",".join(f"{k}={v}" for k, v in self.params.items())

    def self_check(self, seed=12345, samples=4, step=1e-5):
        """Largest mismatch between supplied derivatives and central differences."""
        rng = np.random.default_rng(seed)
        chart = self.default_chart(8)
        lo, hi = chart.lower, chart.upper
        pad = 0.1 * (hi - lo)
        pts = lo + pad + (hi - lo - 2 * pad) * rng.random((samples, self.n))
        E, dE, d2E = self.evaluate(pts)
        worst = 0.0
        for r in range(self.n):
            e = np.zeros(self.n)
            e[r] = step
            Ep, dEp, _ = self.evaluate(pts + e)
            Em, dEm, _ = self.evaluate(pts - e)
            worst = max(worst, np.abs((Ep - Em) / (2 * step) - dE[:, r]).max())
            worst = max(worst, np.abs((dEp - dEm) / (2 * step) - d2E[:, r]).max())
        return float(worst)


# -- band-limited trigonometric polynomials ----------------------------------


class TrigPolynomial:
    """Sum of cos/sin modes with integer wavevectors, evaluated with exact derivatives."""

    def __init__(self, wavevectors, omega, origin, cos_coef, sin_coef):
        self.wavevectors = np.asarray(wavevectors, dtype=float)
        self.omega = np.asarray(omega, dtype=float)
        self.origin = np.asarray(origin, dtype=float)
        self.cos_coef = np.asarray(cos_coef, dtype=float)
        self.sin_coef = np.asarray(sin_coef, dtype=float)
        self.comp_shape = self.cos_coef.shape[1:]

    @property
    def n(self):
        return self.wavevectors.shape[1]

    def evaluate(self, points):
        points = np.asarray(points, dtype=float)
        K = self.wavevectors * self.omega  # (M, n) physical wavevectors
        theta = (points - self.origin) @ K.T  # (..., M)
        c, s = np.cos(theta), np.sin(theta)
        C = self.cos_coef.reshape(len(K), -1)
        S = self.sin_coef.reshape(len(K), -1)
        batch = points.shape[:-1]
        value = c @ C + s @ S
        slope = -s[..., :, None] * C + c[..., :, None] * S  # (..., M, comps)
        curv = -(c[..., :, None] * C + s[..., :, None] * S)
        grad = np.einsum("...mc,mr->...rc", slope, K)
        hess = np.einsum("...mc,mr,ms->...rsc", curv, K, K)
        n = self.n
        return (
            value.reshape(batch + self.comp_shape),
            grad.reshape(batch + (n,) + self.comp_shape),
            hess.reshape(batch + (n, n) + self.comp_shape),
        )


def _half_lattice(n, bandlimit):
    """Wavevectors with max-norm <= bandlimit, one of each +-k pair, zero first."""
    out = [tuple([0] * n)]
    for k in itertools.product(range(-bandlimit, bandlimit + 1), repeat=n):
        nz = [v for v in k if v != 0]
        if nz and nz[0] > 0:
            out.append(k)
    return np.array(out, dtype=int)


def random_trig_polynomial(rng, chart, comp_shape, bandlimit, amplitude):
    """Seeded trig polynomial whose every component is bounded by ``amplitude``."""
    n = chart.n
    ks = _half_lattice(n, int(bandlimit))
    M = len(ks)
    shape = (M,) + tuple(comp_shape)
    cos_coef = rng.uniform(-1.0, 1.0, size=shape)
    sin_coef = rng.uniform(-1.0, 1.0, size=shape)
    sin_coef[0] = 0.0
    scale = amplitude / (np.sqrt(2.0) * M)
    omega = 2 * np.pi / chart.lengths
    return TrigPolynomial(ks, omega, chart.lower, cos_coef * scale, sin_coef * scale)


def random_field(seed, chart, signature, bandlimit=2, amplitude=1.0):
    """Band-limited random tensor field with exact first derivatives."""
    rng = np.random.default_rng(seed)
    poly = random_trig_polynomial(rng, chart, (chart.n,) * len(signature), bandlimit, amplitude)
    value, grad, _ = poly.evaluate(chart.points)
    return TensorField(chart, signature, value, grad)


def expm_jet(A, dA, d2A, max_terms=80, tol=1e-18):
    """exp(A) with first and second partials, by the Taylor series in jet arithmetic.

    Layouts: ``A[..., i, j]``, ``dA[..., r, i, j]``, ``d2A[..., r, s, i, j]``.
    Terms are added until every part of the next term is below ``tol``.
    """
    n = A.shape[-1]
    eye = np.broadcast_to(np.eye(n), A.shape)
    P, dP, d2P = eye.copy(), np.zeros_like(dA), np.zeros_like(d2A)
    E, dE, d2E = P.copy(), dP.copy(), d2P.copy()
    Ar = A[..., None, :, :]
    Ars = A[..., None, None, :, :]
    for m in range(1, max_terms + 1):
        d2P = (
            d2P @ Ars
            + dP[..., :, None, :, :] @ dA[..., None, :, :, :]
            + dP[..., None, :, :, :] @ dA[..., :, None, :, :]
            + P[..., None, None, :, :] @ d2A
        ) / m
        dP = (dP @ Ar + P[..., None, :, :] @ dA) / m
        P = (P @ A) / m
        E, dE, d2E = E + P, dE + dP, d2E + d2P
        if max(np.abs(P).max(), np.abs(dP).max(), np.abs(d2P).max()) < tol:
            break
    else:
        raise ConfigurationError("matrix exponential series did not converge")
    return E, dE, d2E


# -- builtin recipes ---------------------------------------------------------


def _abelian(n):
    def func(points):
        batch = points.shape[:-1]
        E = np.broadcast_to(np.eye(n), batch + (n, n)).copy()
        return E, np.zeros(batch + (n, n, n)), np.zeros(batch + (n, n, n, n))

    return FrameRecipe(
        "abelian", n, "periodic", (2 * np.pi,) * n, func,
        expected={"r_zero": True, "T_zero": True, "h_zero": True}, params={"n": n} if n != 2 else {},
    )


def _heisenberg():
    # columns d1, d2 + x1 d3, d3
    def func(points):
        batch = points.shape[:-1]
        E = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
        E[..., 2, 1] = points[..., 0]
        dE = np.zeros(batch + (3, 3, 3))
        dE[..., 0, 2, 1] = 1.0
        return E, dE, np.zeros(batch + (3, 3, 3, 3))

    return FrameRecipe(
        "heisenberg", 3, "box", ((-1.0, 1.0),) * 3, func,
        expected={"r_zero": True, "T_zero": False, "h_zero": True, "torsion": {(2, 0, 1): 1.0}},
    )


def _affine():
    # columns d1, exp(x1) d2; torsion T_12^2 = +1 with this orientation
    def func(points):
        batch = points.shape[:-1]
        ex = np.exp(points[..., 0])
        E = np.zeros(batch + (2, 2))
        E[..., 0, 0] = 1.0
        E[..., 1, 1] = ex
        dE = np.zeros(batch + (2, 2, 2))
        dE[..., 0, 1, 1] = ex
        d2E = np.zeros(batch + (2, 2, 2, 2))
        d2E[..., 0, 0, 1, 1] = ex
        return E, dE, d2E

    return FrameRecipe(
        "affine", 2, "box", ((-1.0, 1.0),) * 2, func,
        expected={"r_zero": True, "T_zero": False, "h_zero": True, "torsion": {(1, 0, 1): 1.0}},
        params={"orientation": "+1"},
    )


BUILTINS = {"abelian": _abelian, "heisenberg": _heisenberg, "affine": _affine}


def builtin(name, n=None):
    """Named closed-form frame; the derivative self-check runs on every load."""
    if name not in BUILTINS:
        raise ConfigurationError(f"unknown builtin frame {name!r}; known: {sorted(BUILTINS)}")
    if name == "abelian":
        recipe = _abelian(2 if n is None else int(n))
    else:
        recipe = BUILTINS[name]()
        if n is not None and int(n) != recipe.n:
            raise ConfigurationError(f"{name!r} is only defined for n={recipe.n}")
    _verify(recipe)
    return recipe


def perturbation(seed, amplitude, bandlimit=2, chart=None):
    """eps(0, x) = exp(A(x)) with A a seeded band-limited matrix field, |A_ij| <= amplitude."""
    if not 0.0 <= amplitude < 0.5:
        raise ConfigurationError(f"amplitude {amplitude} outside [0, 0.5)")
    if chart is None:
        chart = Chart.periodic(64, 2 * np.pi, n=2)
    rng = np.random.default_rng(seed)
    n = chart.n
    poly = random_trig_polynomial(rng, chart, (n, n), bandlimit, amplitude)

    def func(points):
        A, dA, d2A = poly.evaluate(points)
        return expm_jet(A, dA, d2A)

    extent = chart.extent
    recipe = FrameRecipe(
        "perturbation", n, chart.kind, extent, func,
        expected={"r_zero": False, "T_zero": False, "h_zero": False},
        params={"seed": seed, "amp": amplitude, "bandlimit": bandlimit},
    )
    _verify(recipe)
    return recipe


def random_gauge_jet(seed, chart, amplitude=0.2, bandlimit=2):
    """exp(B(x)) for a seeded band-limited matrix field B: values, grad, hess on the grid."""
    rng = np.random.default_rng(seed)
    poly = random_trig_polynomial(rng, chart, (chart.n, chart.n), bandlimit, amplitude)
    return expm_jet(*poly.evaluate(chart.points))


def _verify(recipe):
    err = recipe.self_check()
    if err > SELF_CHECK_TOL:
        raise ConfigurationError(f"recipe {recipe.name!r} derivative self-check failed: {err:.2e}")
    return err


def parse_frame_spec(spec, chart=None):
    """Parse ``name`` or ``name:key=val,...`` into a recipe (``perturbation:seed=0,amp=0.1``)."""
    name, _, rest = spec.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise ConfigurationError(f"bad frame parameter {item!r} in {spec!r}")
            params[key.strip()] = val.strip()
    if name == "perturbation":
        try:
            seed = int(params.pop("seed", 0))
            amp = float(params.pop("amp", params.pop("amplitude", 0.1)))
            band = int(params.pop("bandlimit", 2))
        except ValueError as exc:
            raise ConfigurationError(f"bad perturbation parameters in {spec!r}") from exc
        if params:
            raise ConfigurationError(f"unknown perturbation parameters {sorted(params)}")
        return perturbation(seed, amp, band, chart)
    n = params.pop("n", None)
    params.pop("orientation", None)
    if params:
        raise ConfigurationError(f"unknown parameters {sorted(params)} for {name!r}")
    return builtin(name, n)
