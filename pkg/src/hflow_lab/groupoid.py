"""Two-point splitting, groupoid curvature and developments of the frame PDE.

The frame PDE is df/dx = eps(x, f(x)). A development continues its local
solution along a polygonal path by RK4, carrying the transverse jet of the
family of straight segments from each segment's start so that the PDE
residual can be measured at every step.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ContinuationError


class TwoPointSplitting:
    """eps(x, y) = eps(0, y) o eps(x, 0), evaluated off-grid."""

    def __init__(self, frame):
        self.frame = frame
        self.chart = frame.chart

    def _frame_at(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        for p in pts:
            if not self.chart.contains(p):
                raise ContinuationError(f"point {p} outside chart")
        E, dE = self.frame.evaluate(pts)
        return E, dE

    def __call__(self, x, y):
        Ex, _ = self._frame_at(x)
        Ey, _ = self._frame_at(y)
        return (Ey @ np.linalg.inv(Ex))[0]

    def jet(self, x, y):
        """eps(x, y) with its partials: ``dx[m, i, k]`` and ``dy[m, i, k]``."""
        E, dE = self._frame_at(np.stack([np.asarray(x, float), np.asarray(y, float)]))
        Fx = np.linalg.inv(E[0])
        eps = E[1] @ Fx
        dx = -eps[None] @ dE[0] @ Fx[None]
        dy = dE[1] @ Fx[None]
        return eps, dx, dy


def groupoid_curvature(S, x, y):
    """R_jk^i(x, y) = [d_{x^j} eps_k^i + d_{y^a} eps_k^i eps_j^a]_[jk], array ``[i, j, k]``."""
    eps, dx, dy = S.jet(x, y)
    X = np.einsum("jik->ijk", dx) + np.einsum("aik,aj->ijk", dy, eps)
    return X - np.swapaxes(X, 1, 2)


def linearize_groupoid_curvature(S, x, xi, step=1e-4):
    """Central difference of R(x, x + t xi) at t = 0."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return (groupoid_curvature(S, x, x + step * xi) - groupoid_curvature(S, x, x - step * xi)) / (2 * step)


@dataclass
class Development:
    s: np.ndarray  # cumulative path parameter, one per sample
    points: np.ndarray  # c(s)
    values: np.ndarray  # f(c(s))
    residuals: np.ndarray  # |Df - eps(c, f)| per sample
    jet_value: np.ndarray  # f at the end of the path
    jet: np.ndarray  # eps(c_end, f_end), the terminal 1-arrow

    @property
    def residual(self):
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0

    def to_csv(self):
        n = self.points.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s"] + [f"c{i}" for i in range(n)] + [f"f{i}" for i in range(n)] + ["residual"])
        for s, c, f, r in zip(self.s, self.points, self.values, self.residuals):
            w.writerow([repr(float(v)) for v in (s, *c, *f, r)])
        return buf.getvalue()


def _segment_rhs(S, a, v, s, f, J):
    c = a + s * v
    eps, dx, dy = S.jet(c, f)
    df = eps @ v
    dJ = s * np.einsum("jik,k->ij", dx, v) + np.einsum("mik,k,mj->ij", dy, v, J) + eps
    return df, dJ


def develop(frame, p, q, path=None, steps=1000):
    """Continue the solution of df/dx = eps(x, f) with f(p) = q along ``path``.

    ``path`` is a vertex list starting at ``p`` (default: the segment p -> q).
    Classical RK4 with ``steps`` steps split over segments by length.
    """
    S = TwoPointSplitting(frame)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    verts = [p, q] if path is None else [np.asarray(v, dtype=float) for v in path]
    if not np.allclose(verts[0], p):
        raise ValueError("path must start at p")
    n = p.size
    lengths = np.array([np.linalg.norm(b - a) for a, b in zip(verts[:-1], verts[1:])])
    total = lengths.sum()
    if total == 0:
        eps = S(p, q)
        return Development(np.zeros(1), p[None], q[None], np.zeros(1), q.copy(), eps)
    counts = np.maximum(1, np.round(steps * lengths / total).astype(int))
    f = q.copy()
    s_acc = 0.0
    s_out, c_out, f_out, r_out = [0.0], [p.copy()], [f.copy()], [0.0]
    for a, b, count, seg_len in zip(verts[:-1], verts[1:], counts, lengths):
        if seg_len == 0:
            continue
        v = b - a
        J = np.zeros((n, n))
        h = 1.0 / count
        for k in range(count):
            s = k * h
            try:
                k1 = _segment_rhs(S, a, v, s, f, J)
                k2 = _segment_rhs(S, a, v, s + h / 2, f + h / 2 * k1[0], J + h / 2 * k1[1])
                k3 = _segment_rhs(S, a, v, s + h / 2, f + h / 2 * k2[0], J + h / 2 * k2[1])
                k4 = _segment_rhs(S, a, v, s + h, f + h * k3[0], J + h * k3[1])
            except ContinuationError as exc:
                raise ContinuationError(f"development left the chart near c = {a + s * v}: {exc}") from exc
            f = f + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            J = J + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            s_new = (k + 1) * h
            c = a + s_new * v
            if not S.chart.contains(f):
                raise ContinuationError(f"development left the chart: f = {f}")
            r_out.append(float(np.abs(J / s_new - S(c, f)).max()))
            s_out.append(s_acc + s_new * seg_len)
            c_out.append(c)
            f_out.append(f.copy())
        s_acc += seg_len
    jet = S(verts[-1], f)
    return Development(np.array(s_out), np.array(c_out), np.array(f_out), np.array(r_out), f.copy(), jet)


@dataclass
class Monodromy:
    displacement: np.ndarray
    jet_deviation: np.ndarray
    development: Development

    @property
    def deviation(self):
        return float(max(np.abs(self.displacement).max(), np.abs(self.jet_deviation).max()))


def monodromy(frame, p, loop, steps=1000, target=None):
    """Develop around a closed loop at ``p``; report how far value and jet drift.

    ``target`` is the starting value f(p) (default ``p``, the identity jet).
    """
    p = np.asarray(p, dtype=float)
    q = p.copy() if target is None else np.asarray(target, dtype=float)
    verts = [np.asarray(v, dtype=float) for v in loop]
    if not np.allclose(verts[0], p):
        verts = [p] + verts
    if not np.allclose(verts[-1], p):
        verts = verts + [p]
    dev = develop(frame, p, q, path=verts, steps=steps)
    S = TwoPointSplitting(frame)
    return Monodromy(dev.jet_value - q, dev.jet - S(p, q), dev)


def solution_map(frame, a, b, steps=200):
    """x -> f(x) for the solution with f(a) = b, continued along the segment a -> x."""

    def f(x):
        return develop(frame, a, b, path=[a, np.asarray(x, dtype=float)], steps=steps).jet_value

    return f


def tilde_splitting(frame, p, q, h=None, steps=200):
    """eps~_j^i(p, q) = d f^i(p, x, q)/d x^j at x = p by central differences.

    f(p, x, .) is the solution taking p to x, read off at q after developing
    along the segment p -> q. ``h`` defaults to 1e-4 of each axis extent.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = p.size
    steps_h = 1e-4 * frame.chart.lengths if h is None else np.full(n, float(h))
    out = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = steps_h[j]
        fp = develop(frame, p, p + e, path=[p, q], steps=steps).jet_value
        fm = develop(frame, p, p - e, path=[p, q], steps=steps).jet_value
        out[:, j] = (fp - fm) / (2 * steps_h[j])
    return out
