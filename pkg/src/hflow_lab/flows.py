"""Homogeneous flow integrators and the pointwise gauge-ODE reduction."""

from __future__ import annotations

import io
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import SingularFrameError
from .frame_calculus import (
    algebroid_curvature,
    canonical_metric,
    deturck_operator,
    gamma,
    gauge_transform_curvature,
    homogeneous_from_curvature,
    homogeneous_operator,
    torsion,
)
from .grid_core import FrameField, norm

BLOWUP_MAGNITUDE = 1e6
FLOW_DET_FLOOR = 1e-6
GAUGE_RTOL = 1e-9
GAUGE_ATOL = 1e-12
GAUGE_CHUNK = 256


@dataclass
class FlowState:
    t: float
    frame: FrameField

    @cached_property
    def connection(self):
        return gamma(self.frame)

    @cached_property
    def torsion(self):
        return torsion(self.connection)

    @cached_property
    def curvature(self):
        return algebroid_curvature(self.connection)

    @cached_property
    def metric(self):
        return canonical_metric(self.frame)


@dataclass
class FlowTrace:
    times: list = field(default_factory=list)
    sup_torsion: list = field(default_factory=list)
    sup_curvature: list = field(default_factory=list)
    sup_h: list = field(default_factory=list)
    min_det: list = field(default_factory=list)
    sup_frame: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    termination: str = "completed"
    t_star: float | None = None
    last_state: FlowState | None = None

    def record(self, state, rhs_norm):
        E = state.frame.values
        self.times.append(float(state.t))
        self.sup_torsion.append(norm(state.torsion))
        self.sup_curvature.append(norm(state.curvature))
        self.sup_h.append(float(rhs_norm))
        self.min_det.append(float(np.abs(np.linalg.det(E)).min()))
        self.sup_frame.append(norm(E))
        self.last_state = state

    COLUMNS = ("t", "sup_T", "sup_r", "sup_h", "min_det", "sup_eps")

    def rows(self):
        return zip(self.times, self.sup_torsion, self.sup_curvature, self.sup_h, self.min_det, self.sup_frame)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _hf_rhs(frame):
    return homogeneous_operator(frame).values


def _make_deturck_rhs(reference):
    def rhs(frame):
        return homogeneous_operator(frame).values + deturck_operator(frame, reference).values

    return rhs


def _interior_mask(chart):
    """1 on interior nodes, 0 on the faces of a box chart (all ones on periodic charts)."""
    mask = np.ones(chart.shape)
    if chart.kind == "box":
        for ax in range(chart.n):
            idx = [slice(None)] * chart.n
            idx[ax] = [0, -1]
            mask[tuple(idx)] = 0.0
    return mask[..., None, None]


def _integrate_pde(frame0, base_rhs, t_end, dt, snapshot_every):
    if dt <= 0:
        raise ValueError("dt must be positive")
    chart = frame0.chart
    # Box faces carry Dirichlet data (the initial frame): without boundary
    # conditions the one-sided stencils there amplify round-off.
    mask = _interior_mask(chart)

    def rhs(frame):
        return base_rhs(frame) * mask

    trace = FlowTrace()
    state = FlowState(0.0, FrameField.sampled(chart, frame0.values))
    k1 = rhs(state.frame)
    trace.record(state, norm(k1))
    if snapshot_every:
        trace.snapshots[0.0] = state.frame.values.copy()
    nsteps = int(np.ceil(t_end / dt - 1e-9))
    for step in range(nsteps):
        t = state.t
        h = min(dt, t_end - t)
        E = state.frame.values
        try:
            k2 = rhs(FrameField.sampled(chart, E + 0.5 * h * k1))
            k3 = rhs(FrameField.sampled(chart, E + 0.5 * h * k2))
            k4 = rhs(FrameField.sampled(chart, E + h * k3))
            new = E + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(new)):
                trace.termination = "step-failure"
                return trace
            t_new = (step + 1) * dt if step + 1 < nsteps else t_end
            if np.abs(new).max() > BLOWUP_MAGNITUDE or np.abs(np.linalg.det(new)).min() < FLOW_DET_FLOOR:
                trace.termination, trace.t_star = "blow-up", float(t_new)
                return trace
            state = FlowState(t_new, FrameField.sampled(chart, new))
            k1 = rhs(state.frame)
        except SingularFrameError:
            trace.termination, trace.t_star = "blow-up", float(t + h)
            return trace
        if not np.all(np.isfinite(k1)):
            trace.termination = "step-failure"
            return trace
        trace.record(state, norm(k1))
        if snapshot_every and (step + 1) % snapshot_every == 0:
            trace.snapshots[state.t] = state.frame.values.copy()
    return trace


def hf_pde_integrate(frame0, t_end, dt, snapshot_every=0):
    """Method-of-lines RK4 for d eps/dt = h(eps) on the frame's chart.

    On box charts the boundary nodes keep their initial values.
    """
    return _integrate_pde(frame0, _hf_rhs, t_end, dt, snapshot_every)


def deturck_pde_integrate(frame0, reference, t_end, dt, snapshot_every=0):
    """As :func:`hf_pde_integrate` with right-hand side h + W (reference connection fixed)."""
    return _integrate_pde(frame0, _make_deturck_rhs(reference), t_end, dt, snapshot_every)


# -- pointwise gauge ODE -------------------------------------------------------


def gauge_rhs(a, curv0, metric_inv0, frame0):
    """d a/dt = h(a eps0) eps0^-1 with h evaluated through the gauge and metric laws.

    All arguments are arrays with matching leading batch axes.
    """
    E = a @ frame0
    ginv = a @ metric_inv0 @ np.swapaxes(a, -1, -2)
    curv = gauge_transform_curvature(a, curv0)
    h = homogeneous_from_curvature(curv, ginv, E)
    return h @ np.linalg.inv(frame0)


@dataclass
class GaugeTrajectory:
    times: np.ndarray
    matrices: np.ndarray  # [t, ..., n, n]
    status: str = "completed"
    t_star: float | None = None
    t_star_bracket: tuple | None = None
    node: tuple | None = None

    def frames(self, frame0):
        """Reconstructed eps(0, x, t) = a(x, t) eps(0, x, 0)."""
        return self.matrices @ frame0

    def to_csv(self):
        n = self.matrices.shape[-1]
        flat = self.matrices.reshape(len(self.times), -1, n, n)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"a_{i}{j}" for i in range(n) for j in range(n)])
        for t, m in zip(self.times, flat[:, 0]):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in m.ravel()])
        return buf.getvalue()


def gauge_ode_integrate(curv0, metric_inv0, frame0, t_end, dt=None, rtol=GAUGE_RTOL,
                        atol=GAUGE_ATOL, times=None, node=None):
    """Adaptive RK45 for the gauge ODE at one node (or a batch of nodes).

    ``curv0``, ``metric_inv0``, ``frame0`` are the node's r, g^{-1} and eps(0, x)
    at t = 0; a batch has extra leading axes. Output is sampled every ``dt``
    or at ``times``. A norm above 1e6 or a collapsed step ends the run with a
    blow-up record.
    """
    curv0 = np.asarray(curv0, dtype=float)
    metric_inv0 = np.asarray(metric_inv0, dtype=float)
    frame0 = np.asarray(frame0, dtype=float)
    n = frame0.shape[-1]
    batch = frame0.shape[:-2]
    if times is None:
        if dt is None:
            times = np.array([0.0, t_end])
        else:
            count = int(np.ceil(abs(t_end) / dt - 1e-9))
            times = np.sign(t_end) * np.minimum(np.arange(count + 1) * dt, abs(t_end))
    times = np.asarray(times, dtype=float)
    a0 = np.broadcast_to(np.eye(n), batch + (n, n))

    def fun(_, y):
        a = y.reshape(batch + (n, n))
        out = gauge_rhs(a, curv0, metric_inv0, frame0)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite gauge right-hand side")
        return out.ravel()

    def too_large(_, y):
        return BLOWUP_MAGNITUDE - np.abs(y).max()

    too_large.terminal = True
    status, t_star, bracket = "completed", None, None
    try:
        sol = solve_ivp(fun, (0.0, float(times[-1])), a0.ravel().copy(), method="RK45", t_eval=times,
                        rtol=rtol, atol=atol, events=too_large)
    except FloatingPointError:
        sol = None
    if sol is None:
        status = "blow-up"
        matrices = a0[None].copy()
        out_times = times[:1]
    else:
        out_times = sol.t
        matrices = sol.y.T.reshape((len(out_times),) + batch + (n, n))
        if sol.status == 1:
            status, t_star = "blow-up", float(sol.t_events[0][0])
            bracket = (float(out_times[-1]) if len(out_times) else 0.0, t_star)
        elif sol.status == -1:
            status = "blow-up"
            t_star = float(sol.t[-1]) if len(sol.t) else 0.0
            bracket = (t_star, float(times[-1]))
    if len(out_times) and out_times[0] == 0.0:
        matrices[0] = a0
    return GaugeTrajectory(np.asarray(out_times), matrices, status, t_star, bracket, node)


def exp_subgroup(M, t):
    """One-parameter subgroup a(t) = exp(t M), the solution of da/dt = a M."""
    M = np.asarray(M, dtype=float)
    if np.ndim(t) == 0:
        return expm(float(t) * M)
    return np.stack([expm(float(s) * M) for s in np.asarray(t)])


@dataclass
class ScalarBlowup:
    a0: float
    R: float
    times: np.ndarray
    numeric: np.ndarray
    t_star: float | None  # closed form
    t_star_numeric: float | None
    status: str

    def closed_form(self, t):
        t = np.asarray(t, dtype=float)
        base = 1.0 - 2.0 * self.R * self.a0**2 * t
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(base > 0, self.a0 / np.sqrt(np.where(base > 0, base, 1.0)), np.inf)


def scalar_blowup(a0, R, t_end, rtol=1e-10, atol=1e-12):
    """The scalar analog da/dt = a^3 R, integrated numerically beside its closed form."""
    if a0 == 0:
        raise ValueError("a0 must be nonzero")
    k = R * a0**2
    t_star = 1.0 / (2.0 * k) if k > 0 else None

    def large(_, y):
        return BLOWUP_MAGNITUDE - abs(y[0])

    large.terminal = True
    sol = solve_ivp(lambda _, y: R * y**3, (0.0, t_end), [float(a0)], method="RK45", rtol=rtol, atol=atol,
                    events=large, dense_output=False)
    status, t_num = "completed", None
    if sol.status == 1:
        status, t_num = "blow-up", float(sol.t_events[0][0])
    elif sol.status == -1:
        status, t_num = "blow-up", float(sol.t[-1])
    return ScalarBlowup(float(a0), float(R), sol.t, sol.y[0], t_star, t_num, status)


# -- PDE versus pointwise gauge ODE ------------------------------------------


@dataclass
class CrossValidationReport:
    times: np.ndarray
    deviations: np.ndarray
    pde_trace: FlowTrace
    ode_status: str
    t_reached: float

    @property
    def max_deviation(self):
        return float(np.max(self.deviations)) if len(self.deviations) else 0.0

    def as_dict(self):
        return {
            "max_relative_deviation": self.max_deviation,
            "t_reached": self.t_reached,
            "pde_termination": self.pde_trace.termination,
            "ode_status": self.ode_status,
            "per_time": [{"t": float(t), "deviation": float(d)} for t, d in zip(self.times, self.deviations)],
        }


def _chunked_gauge(curv, ginv, E, times, chunk, threads):
    B = E.shape[0]
    bounds = [(s, min(s + chunk, B)) for s in range(0, B, chunk)]

    def run(bound):
        s, e = bound
        return gauge_ode_integrate(curv[s:e], ginv[s:e], E[s:e], times[-1], times=times)

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        return list(pool.map(run, bounds))


def cross_validate(frame0, t_end, dt, chunk=GAUGE_CHUNK, threads=1):
    """Run the flow PDE and, independently, the gauge ODE at every node; compare frames.

    Both start from the same sampled eps0. The deviation at each sample time is
    sup|eps_pde - a eps0| / sup|eps_pde|.
    """
    chart = frame0.chart
    start = FrameField.sampled(chart, frame0.values)
    trace = hf_pde_integrate(start, t_end, dt, snapshot_every=1)
    conn = gamma(start)
    curv = algebroid_curvature(conn).values
    ginv = canonical_metric(start).inv.values
    n = chart.n
    nodes = int(np.prod(chart.shape))
    E0 = start.values.reshape(nodes, n, n)
    curv_flat = curv.reshape(nodes, n, n, n, n)
    ginv_flat = ginv.reshape(nodes, n, n)
    pde_times = np.array(sorted(trace.snapshots))
    results = _chunked_gauge(curv_flat, ginv_flat, E0, pde_times, chunk, threads)
    usable = min(len(r.times) for r in results)
    status = "completed" if all(r.status == "completed" for r in results) else "blow-up"
    mats = np.concatenate([r.matrices[:usable] for r in results], axis=1)  # [t, nodes, n, n]
    devs = []
    for k in range(usable):
        E_pde = trace.snapshots[pde_times[k]].reshape(nodes, n, n)
        E_ode = mats[k] @ E0
        devs.append(np.abs(E_pde - E_ode).max() / np.abs(E_pde).max())
    t_reached = float(pde_times[usable - 1]) if usable else 0.0
    return CrossValidationReport(pde_times[:usable], np.array(devs), trace, status, t_reached)
