"""Executable property checks, grouped into named suites.

Every check reports a measured value against a tolerance. The acceptance
tests and the ``validate`` command both run these functions, so the numbers
they print are the same.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import catalog
from .frame_calculus import (
    GaugeField,
    algebroid_curvature,
    bianchi_lines,
    canonical_metric,
    christoffel_sigma,
    gamma,
    gauge_act,
    gauge_transform_curvature,
    homogeneous_operator,
    metric_compat_residual,
    move_index,
    nabla,
    nabla_tilde,
    select_sigma_weight,
    tilde_curvature,
    torsion,
    variation_check,
)
from .flows import cross_validate, exp_subgroup, gauge_ode_integrate, hf_pde_integrate, scalar_blowup
from .grid_core import COORD_UP, RN_DOWN, Chart, FrameField, invert_frame, norm
from .groupoid import (
    TwoPointSplitting,
    develop,
    groupoid_curvature,
    monodromy,
    tilde_splitting,
)


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: measured {self.measured:.3e} (tolerance {self.tolerance:.1e})"

    def as_dict(self):
        return asdict(self)


def check(name, measured, tolerance, **detail):
    measured = float(measured)
    return Check(name, measured, float(tolerance), bool(measured <= tolerance), detail)


# -- shared fixtures -----------------------------------------------------------

RES_2D = 64
RES_3D = 32


def catalog_frames():
    """(label, FrameField) for every catalog entry at acceptance resolution, analytic jets."""
    out = []
    for name in ("abelian", "heisenberg", "affine"):
        recipe = catalog.builtin(name)
        res = RES_2D if recipe.n == 2 else RES_3D
        out.append((name, FrameField.from_recipe(recipe, recipe.default_chart(res))))
    out.append(("perturbation", perturbation_frame()))
    return out


def perturbation_frame(seed=0, amplitude=0.1, resolution=None, n=2):
    if resolution is None:
        resolution = RES_2D if n == 2 else RES_3D
    chart = Chart.periodic(resolution, 2 * np.pi, n=n)
    return FrameField.from_recipe(catalog.perturbation(seed, amplitude, 2, chart), chart)


def _builtin_frame(name):
    recipe = catalog.builtin(name)
    res = RES_2D if recipe.n == 2 else RES_3D
    return FrameField.from_recipe(recipe, recipe.default_chart(res))


# -- identities ------------------------------------------------------------------


def tilde_curvature_checks():
    return [
        check(f"tilde-curvature/{label}", norm(tilde_curvature(gamma(frame))), 1e-10)
        for label, frame in catalog_frames()
    ]


def torsion_derivative_checks():
    """nabla_r T_jk^i = r_jk,r^i, analytic jets and a sampled frame."""
    out = []
    frames = catalog_frames() + [("perturbation-sampled", FrameField.sampled(perturbation_frame().chart,
                                                                             perturbation_frame().values))]
    for label, frame in frames:
        conn = gamma(frame)
        dT = nabla(torsion(conn), conn).values  # [r, i, j, k]
        r = algebroid_curvature(conn).values  # [i, j, k, r]
        gap = np.abs(np.einsum("...rijk->...ijkr", dT) - r).max()
        out.append(check(f"nabla-torsion-equals-curvature/{label}", gap,
                         1e-6 if label.endswith("sampled") else 1e-10))
    return out


def parallelism_checks():
    out = []
    for label, frame in catalog_frames():
        conn = gamma(frame)
        metric = canonical_metric(frame)
        out.append(check(f"nabla-metric/{label}", norm(nabla(metric.g, conn)), 1e-10))
        out.append(check(f"nabla-frame/{label}", norm(nabla(frame, conn)), 1e-10))
        out.append(check(f"nabla-coframe/{label}", norm(nabla(invert_frame(frame), conn)), 1e-10))
    return out


def antisymmetry_checks():
    out = []
    for label, frame in catalog_frames():
        conn = gamma(frame)
        T = torsion(conn).values
        r = algebroid_curvature(conn).values
        out.append(check(f"torsion-antisymmetry/{label}", np.abs(T + np.swapaxes(T, -1, -2)).max(), 0.0))
        out.append(check(f"curvature-antisymmetry/{label}", np.abs(r + np.swapaxes(r, -3, -2)).max(), 0.0))
    return out


def connection_difference_checks(seed=3):
    """nabla_r xi^i - nabla~_r xi^i + T_ra^i xi^a = 0 for a random vector field."""
    out = []
    for label, frame in catalog_frames():
        conn = gamma(frame)
        xi = catalog.random_field(seed, frame.chart, (COORD_UP,))
        T = torsion(conn).values
        diff = nabla(xi, conn).values - nabla_tilde(xi, conn).values  # [r, i]
        gap = np.abs(diff + np.einsum("...ira,...a->...ri", T, xi.values)).max()
        out.append(check(f"connection-difference-is-torsion/{label}", gap, 1e-10))
    return out


def flow_operator_checks():
    """Curvature and torsion forms of the flow operator agree (raises internally if not)."""
    out = []
    for label, frame in catalog_frames():
        conn = gamma(frame)
        metric = canonical_metric(frame)
        h = homogeneous_operator(frame, check=False).values
        dT = nabla(move_index(torsion(conn), 1, frame), conn).values
        h_torsion = -np.einsum("...bc,...bijc->...ij", metric.inv.values, dT)
        scale = max(1.0, float(np.abs(h).max()))
        out.append(check(f"flow-operator-forms/{label}", np.abs(h - h_torsion).max() / scale, 1e-8))
    return out


def lie_group_checks(pairs=20, seed=7):
    out = []
    rng = np.random.default_rng(seed)
    for name in ("heisenberg", "affine"):
        frame = _builtin_frame(name)
        out.append(check(f"algebroid-curvature/{name}", norm(algebroid_curvature(gamma(frame))), 1e-10))
        S = TwoPointSplitting(frame)
        lo, hi = frame.chart.lower, frame.chart.upper
        worst = 0.0
        for _ in range(pairs):
            x, y = lo + (hi - lo) * rng.random((2, frame.chart.n))
            worst = max(worst, np.abs(groupoid_curvature(S, x, y)).max())
        out.append(check(f"groupoid-curvature/{name}", worst, 1e-8, pairs=pairs))
    return out


def bianchi_checks(seeds=(0, 1, 2, 3, 4)):
    """The three members of the first Bianchi chain, pairwise, for random field triples.

    Each member is alternating in its three arguments, so in two dimensions
    all of them vanish; the three-dimensional perturbation is the frame that
    actually exercises the identity.
    """
    frames = {
        "heisenberg": _builtin_frame("heisenberg"),
        "perturbation-2d": perturbation_frame(),
        "perturbation-3d": perturbation_frame(n=3),
    }
    out = []
    for name, frame in frames.items():
        conn = gamma(frame)
        nT = nabla(torsion(conn), conn)
        worst, pair, flipped = 0.0, {}, 0.0
        for seed in seeds:
            xi, eta, sigma = (catalog.random_field(100 * seed + k, frame.chart, (COORD_UP,)) for k in range(3))
            rep = bianchi_lines(frame, xi, eta, sigma, nabla_T=nT)
            flipped = max(flipped, norm(rep.nabla_torsion + rep.jacobi))
            if rep.residual >= worst:
                worst, pair = rep.residual, rep.pairwise
        out.append(check(f"first-bianchi/{name}", worst, 1e-6, pairwise=pair, nablaT_plus_jacobi=flipped))
    return out


def gauge_checks(seeds=(1, 2, 3)):
    """Gauge law for the algebroid curvature against recomputation after acting."""
    frame = perturbation_frame()
    curv = algebroid_curvature(gamma(frame))
    out = []
    for seed in seeds:
        gauge = GaugeField.random(seed, frame.chart)
        law = gauge_transform_curvature(gauge, curv).values
        direct = algebroid_curvature(gamma(gauge_act(gauge, frame))).values
        out.append(check(f"gauge-law/seed{seed}", np.abs(law - direct).max(), 1e-6,
                         sup_curvature=float(np.abs(direct).max())))
    return out


def variation_checks(seeds=(11, 12, 13)):
    frame = perturbation_frame()
    out = []
    for seed in seeds:
        h = catalog.random_field(seed, frame.chart, (COORD_UP, RN_DOWN), amplitude=0.5)
        rep = variation_check(frame, h)
        out.append(check(f"variation/seed{seed}", rep.discrepancy, 1e-6,
                         gamma=rep.gamma_discrepancy, torsion=rep.torsion_discrepancy))
    return out


def keystone_checks(t_end=0.05, dt=1e-3, threads=1):
    frame = perturbation_frame()
    start = time.perf_counter()
    rep = cross_validate(frame, t_end, dt, threads=threads)
    elapsed = time.perf_counter() - start
    return [check("gauge-ode-reconstructs-flow/perturbation", rep.max_deviation, 1e-5,
                  t_reached=rep.t_reached, pde=rep.pde_trace.termination, ode=rep.ode_status,
                  seconds=elapsed, per_time=[[float(t), float(d)] for t, d in zip(rep.times, rep.deviations)])]


def slope_checks(step=1e-6, horizon=1e-2, node=(5, 7)):
    frame = perturbation_frame()
    conn = gamma(frame)
    curv = algebroid_curvature(conn).values
    ginv = canonical_metric(frame).inv.values
    E, F = frame.values, frame.inverse_values
    h_moved = homogeneous_operator(frame).values @ F  # h_(j)^i
    c, g, e = curv[node], ginv[node], E[node]
    plus = gauge_ode_integrate(c, g, e, step, rtol=1e-12, atol=1e-15).matrices[-1]
    minus = gauge_ode_integrate(c, g, e, -step, rtol=1e-12, atol=1e-15).matrices[-1]
    slope = (plus - minus) / (2 * step)
    out = [check("gauge-ode-initial-slope", np.abs(slope - h_moved[node]).max(), 1e-6, node=list(node))]
    times = np.linspace(0.0, horizon, 11)
    nodes = int(np.prod(frame.chart.shape))
    n = frame.chart.n
    traj = gauge_ode_integrate(curv.reshape(nodes, n, n, n, n), ginv.reshape(nodes, n, n),
                               E.reshape(nodes, n, n), horizon, times=times)
    M = h_moved.reshape(nodes, n, n)
    worst = 0.0
    for k, t in enumerate(traj.times):
        sub = np.stack([exp_subgroup(m, t) for m in M])
        worst = max(worst, np.abs(sub - traj.matrices[k]).max())
    out.append(check("one-parameter-subgroup-vs-gauge-ode", worst, 1e-6, horizon=horizon))
    return out


def blowup_checks():
    run = scalar_blowup(1.0, 0.5, 2.0)
    t_num = np.inf if run.t_star_numeric is None else run.t_star_numeric
    flat = scalar_blowup(1.0, 0.0, 2.0)
    return [
        check("scalar-blowup-time", abs(t_num - run.t_star), 1e-3, numeric=run.t_star_numeric),
        check("scalar-constant-when-flat", np.abs(flat.numeric - 1.0).max(), 1e-10),
    ]


def development_checks(steps=1000):
    frame = _builtin_frame("heisenberg")
    p = np.array([-0.3, -0.2, 0.1])
    q = np.array([0.2, 0.3, -0.1])
    dev = develop(frame, p, q, steps=steps)
    loop = [p, p + [0.4, 0, 0], p + [0.4, 0.4, 0], p + [0, 0.4, 0.3], p]
    mono = monodromy(frame, p, loop, steps=steps, target=q)
    mono_id = monodromy(frame, p, loop, steps=steps)
    conn = gamma(frame)
    x = frame.chart.node((12, 20, 16))
    G = conn.values[(12, 20, 16)]
    d = 2e-3
    dd = np.stack([(tilde_splitting(frame, x, x + d * e) - tilde_splitting(frame, x, x - d * e)) / (2 * d)
                   for e in np.eye(3)], axis=-1)  # d eps~_j^i / d y^k
    return [
        check("development-residual/heisenberg", dev.residual, 1e-8, steps=steps),
        check("monodromy/heisenberg", max(mono.deviation, mono_id.deviation), 1e-7),
        check("tilde-splitting-derivative-is-connection/heisenberg", np.abs(dd - G).max(), 1e-5),
    ]


def christoffel_checks():
    frame = _builtin_frame("heisenberg")
    rep = select_sigma_weight(frame)
    metric = canonical_metric(frame)
    S = christoffel_sigma(frame, rep.weight).values
    detail = {"weight": rep.weight, "candidates": {str(k): v for k, v in rep.candidates.items()}}
    return [
        check("sigma-symmetric/heisenberg", np.abs(S - np.swapaxes(S, -1, -2)).max(), 0.0, **detail),
        check("sigma-metric-compatibility/heisenberg", metric_compat_residual(S, metric), 1e-6, **detail),
        check("sigma-is-negated-classical-christoffel/heisenberg", rep.oracle_error, 1e-6, **detail),
    ]


def stationarity_checks(t_end=0.01, dt=1e-3):
    frame = _builtin_frame("heisenberg")
    trace = hf_pde_integrate(frame, t_end, dt, snapshot_every=int(round(t_end / dt)))
    last = trace.snapshots[max(trace.snapshots)]
    drift = np.abs(last - frame.values).max() / t_end
    return [check("flow-stationary/heisenberg", drift, 1e-12, termination=trace.termination)]


# -- registry ------------------------------------------------------------------

SUITES = {
    "identities": (tilde_curvature_checks, torsion_derivative_checks, parallelism_checks,
                   antisymmetry_checks, connection_difference_checks, flow_operator_checks),
    "lie": (lie_group_checks,),
    "bianchi": (bianchi_checks,),
    "gauge": (gauge_checks,),
    "variation": (variation_checks,),
    "keystone": (keystone_checks,),
    "slope": (slope_checks,),
    "blowup": (blowup_checks,),
    "develop": (development_checks,),
    "christoffel": (christoffel_checks,),
    "stationarity": (stationarity_checks,),
}


def run_suite(name="all", tolerances=None, threads=1):
    """Run one suite (or ``all``); ``tolerances`` maps check-name prefixes to overrides."""
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise KeyError(f"unknown suite {name!r}; known: {sorted(SUITES)} or 'all'")
    checks = []
    for suite in names:
        for fn in SUITES[suite]:
            checks.extend(fn(threads=threads) if fn is keystone_checks else fn())
    for c in checks:
        for prefix, tol in (tolerances or {}).items():
            if c.name.startswith(prefix):
                c.tolerance = float(tol)
                c.passed = c.measured <= c.tolerance
    return checks
