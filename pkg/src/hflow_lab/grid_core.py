"""Charts, typed tensor fields, differentiation, norms and serialization.

Field arrays are stored point-major: the leading ``chart.ndim`` axes index
grid nodes, the trailing axes index tensor components in signature order.
An optional ``grad`` array carries exact first derivatives with the
derivative index inserted right after the grid axes.
"""

from __future__ import annotations

import base64
import csv
import io
import json
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import (
    ConfigurationError,
    FieldFileError,
    FieldFileShapeError,
    FieldFileVersionError,
    IllegalIndexError,
    SingularFrameError,
)

COORD_UP = "u"
COORD_DOWN = "d"
RN_UP = "U"
RN_DOWN = "D"
INDEX_KINDS = (COORD_UP, COORD_DOWN, RN_UP, RN_DOWN)

DET_FLOOR = 1e-8
MIN_RESOLUTION = 8
FIELD_FILE_VERSION = 1


@dataclass(frozen=True)
class Chart:
    """A single-chart grid: periodic box (flat torus) or open box.

    ``extent`` holds one length per axis for periodic charts and one
    ``(lo, hi)`` pair per axis for boxes.
    """

    kind: str
    resolution: tuple
    extent: tuple

    def __post_init__(self):
        if self.kind not in ("periodic", "box"):
            raise ConfigurationError(f"unknown chart kind {self.kind!r}")
        res = tuple(int(r) for r in self.resolution)
        if len(res) != len(self.extent):
            raise ConfigurationError("resolution and extent disagree on dimension")
        if len(res) < 1:
            raise ConfigurationError("chart needs at least one axis")
        if min(res) < MIN_RESOLUTION:
            raise ConfigurationError(
                f"resolution {res} too small: need >= {MIN_RESOLUTION} nodes per axis"
            )
        if self.kind == "periodic":
            ext = tuple(float(L) for L in self.extent)
            if min(ext) <= 0:
                raise ConfigurationError("periodic lengths must be positive")
        else:
            ext = tuple((float(a), float(b)) for a, b in self.extent)
            if any(b <= a for a, b in ext):
                raise ConfigurationError("box intervals must satisfy lo < hi")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "extent", ext)

    @classmethod
    def periodic(cls, resolution, lengths=2 * np.pi, n=None):
        resolution, lengths = _broadcast_axes(resolution, lengths, n)
        return cls("periodic", resolution, lengths)

    @classmethod
    def box(cls, resolution, bounds=(-1.0, 1.0), n=None):
        if np.ndim(bounds) == 1:
            count = n if n is not None else (1 if np.ndim(resolution) == 0 else len(resolution))
            bounds = [tuple(bounds)] * count
        if np.ndim(resolution) == 0:
            resolution = [int(resolution)] * len(bounds)
        return cls("box", tuple(resolution), tuple(tuple(b) for b in bounds))

    @property
    def n(self):
        return len(self.resolution)

    @property
    def shape(self):
        return self.resolution

    @property
    def periodic_kind(self):
        return self.kind == "periodic"

    @property
    def lower(self):
        if self.periodic_kind:
            return np.zeros(self.n)
        return np.array([a for a, _ in self.extent])

    @property
    def upper(self):
        if self.periodic_kind:
            return np.array(self.extent)
        return np.array([b for _, b in self.extent])

    @property
    def lengths(self):
        return self.upper - self.lower

    @property
    def spacing(self):
        if self.periodic_kind:
            return tuple(L / N for L, N in zip(self.extent, self.resolution))
        return tuple((b - a) / (N - 1) for (a, b), N in zip(self.extent, self.resolution))

    @cached_property
    def axes(self):
        if self.periodic_kind:
            return tuple(np.arange(N) * (L / N) for L, N in zip(self.extent, self.resolution))
        return tuple(np.linspace(a, b, N) for (a, b), N in zip(self.extent, self.resolution))

    @cached_property
    def points(self):
        """Node coordinates, shape ``resolution + (n,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def node(self, index):
        return np.array([ax[i] for ax, i in zip(self.axes, index)])

    def contains(self, point, tol=1e-12):
        point = np.asarray(point, dtype=float)
        if self.periodic_kind:
            return bool(np.all(np.isfinite(point)))
        return bool(np.all(point >= self.lower - tol) and np.all(point <= self.upper + tol))

    def descriptor(self):
        return {
            "kind": self.kind,
            "resolution": list(self.resolution),
            "extent": [list(e) if isinstance(e, tuple) else e for e in self.extent],
        }

    @classmethod
    def from_descriptor(cls, desc):
        extent = desc["extent"]
        if desc["kind"] == "box":
            extent = tuple(tuple(e) for e in extent)
        else:
            extent = tuple(extent)
        return cls(desc["kind"], tuple(desc["resolution"]), extent)

    # -- differentiation ---------------------------------------------------

    def derivative(self, values, axis):
        """Partial derivative of a point-major array along grid ``axis``."""
        if not 0 <= axis < self.n:
            raise ConfigurationError(f"axis {axis} out of range for n={self.n}")
        values = np.asarray(values, dtype=float)
        N = self.resolution[axis]
        if self.periodic_kind:
            L = self.extent[axis]
            k = _spectral_multiplier(N, L)
            shape = [1] * values.ndim
            shape[axis] = k.size
            vhat = np.fft.rfft(values, axis=axis)
            return np.fft.irfft(vhat * k.reshape(shape), n=N, axis=axis)
        D = _fd4_matrix(N, self.spacing[axis])
        out = np.tensordot(D, values, axes=([1], [axis]))
        return np.moveaxis(out, 0, axis)

    # -- off-grid evaluation -----------------------------------------------

    def interpolate(self, values, points):
        """Evaluate a point-major field at arbitrary points, shape ``(P, n)``.

        Trigonometric interpolation on periodic charts, cubic splines on boxes.
        """
        values = np.asarray(values, dtype=float)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        comp_shape = values.shape[self.n:]
        if self.periodic_kind:
            coeffs = np.fft.fftn(values, axes=tuple(range(self.n)))
            out = None
            for ax in range(self.n):
                W = _trig_weights(self.resolution[ax], self.extent[ax], points[:, ax])
                if out is None:
                    out = np.tensordot(W, coeffs, axes=([1], [0]))
                else:
                    out = np.einsum("pk,pk...->p...", W, out)
            return out.real.reshape((points.shape[0],) + comp_shape)
        from scipy.interpolate import RegularGridInterpolator

        if not all(self.contains(p) for p in points):
            raise ConfigurationError("interpolation point outside box chart")
        flat = values.reshape(self.shape + (-1,))
        interp = RegularGridInterpolator(self.axes, flat, method="cubic")
        return interp(points).reshape((points.shape[0],) + comp_shape)


def _broadcast_axes(resolution, lengths, n):
    if n is None:
        n = len(resolution) if np.ndim(resolution) else (len(lengths) if np.ndim(lengths) else 2)
    if np.ndim(resolution) == 0:
        resolution = [int(resolution)] * n
    if np.ndim(lengths) == 0:
        lengths = [float(lengths)] * len(resolution)
    return tuple(resolution), tuple(lengths)


@lru_cache(maxsize=None)
def _spectral_multiplier(N, L):
    k = 2j * np.pi * np.fft.rfftfreq(N, d=L / N)
    if N % 2 == 0:
        k[-1] = 0.0
    return k


@lru_cache(maxsize=None)
def _fd4_matrix(N, h):
    if N < 5:
        raise ConfigurationError("4th-order stencils need at least 5 nodes")
    D = np.zeros((N, N))
    for i in range(2, N - 2):
        D[i, i - 2: i + 3] = [1.0, -8.0, 0.0, 8.0, -1.0]
    left = np.array([[-25.0, 48.0, -36.0, 16.0, -3.0], [-3.0, -10.0, 18.0, -6.0, 1.0]])
    D[0, :5] = left[0]
    D[1, :5] = left[1]
    D[N - 1, N - 5:] = -left[0][::-1]
    D[N - 2, N - 5:] = -left[1][::-1]
    D /= 12.0 * h
    D.setflags(write=False)
    return D


def _trig_weights(N, L, x):
    k = np.fft.fftfreq(N, d=1.0 / N)
    phase = np.outer(x * (2 * np.pi / L), k)
    W = np.exp(1j * phase)
    if N % 2 == 0:
        W[:, N // 2] = np.cos(phase[:, N // 2])
    return W / N


class TensorField:
    """Typed multi-index field on a chart.

    ``signature`` lists one tag per index: ``"u"``/``"d"`` for coordinate
    up/down, ``"U"``/``"D"`` for R^n up/down.
    """

    def __init__(self, chart, signature, values, grad=None):
        signature = tuple(signature)
        for tag in signature:
            if tag not in INDEX_KINDS:
                raise IllegalIndexError(f"unknown index tag {tag!r}")
        values = np.asarray(values, dtype=float)
        expected = chart.shape + (chart.n,) * len(signature)
        if values.shape != expected:
            raise ConfigurationError(f"values shape {values.shape} != expected {expected}")
        if grad is not None:
            grad = np.asarray(grad, dtype=float)
            if grad.shape != chart.shape + (chart.n,) + expected[chart.n:]:
                raise ConfigurationError(f"grad shape {grad.shape} inconsistent with values")
        self.chart = chart
        self.signature = signature
        self.values = values
        self.grad = grad

    @property
    def rank(self):
        return len(self.signature)

    @property
    def n(self):
        return self.chart.n

    def __repr__(self):
        return f"{type(self).__name__}(signature={''.join(self.signature)!r}, shape={self.values.shape})"

    def _like(self, values, grad=None):
        return TensorField(self.chart, self.signature, values, grad)

    def __add__(self, other):
        _check_compatible(self, other)
        grad = None
        if self.grad is not None and other.grad is not None:
            grad = self.grad + other.grad
        return self._like(self.values + other.values, grad)

    def __sub__(self, other):
        _check_compatible(self, other)
        grad = None
        if self.grad is not None and other.grad is not None:
            grad = self.grad - other.grad
        return self._like(self.values - other.values, grad)

    def __neg__(self):
        return self._like(-self.values, None if self.grad is None else -self.grad)

    def __mul__(self, scalar):
        scalar = float(scalar)
        return self._like(self.values * scalar, None if self.grad is None else self.grad * scalar)

    __rmul__ = __mul__

    def at(self, index):
        return self.values[tuple(index)]


def _check_compatible(a, b):
    if a.chart != b.chart or a.signature != b.signature:
        raise IllegalIndexError(
            f"incompatible fields: {a.signature} on {a.chart.kind} vs {b.signature} on {b.chart.kind}"
        )


def differentiate(f, axis):
    """Partial derivative of ``f`` along one coordinate axis (same signature)."""
    if not 0 <= axis < f.chart.n:
        raise ConfigurationError(f"axis {axis} out of range for n={f.chart.n}")
    if f.grad is not None:
        return TensorField(f.chart, f.signature, f.grad[(slice(None),) * f.chart.n + (axis,)])
    return TensorField(f.chart, f.signature, f.chart.derivative(f.values, axis))


def gradient(f):
    """All partial derivatives; the derivative index is a leading coord-down index."""
    return TensorField(f.chart, (COORD_DOWN,) + f.signature, gradient_values(f))


def gradient_values(f):
    if f.grad is not None:
        return f.grad
    chart = f.chart
    return np.stack([chart.derivative(f.values, ax) for ax in range(chart.n)], axis=chart.n)


class FrameField(TensorField):
    """The splitting slice eps(0, x): entry ``[..., i, j]`` is eps_j^i.

    ``grad`` / ``hess`` hold exact first and second partials when the frame
    comes from a closed-form recipe; otherwise they are produced by the
    chart's differentiation scheme on demand.
    """

    def __init__(self, chart, values, grad=None, hess=None, recipe=None):
        super().__init__(chart, (COORD_UP, RN_DOWN), values, grad)
        if hess is not None:
            hess = np.asarray(hess, dtype=float)
        self._hess = hess
        self.recipe = recipe
        check_invertible(self.values)

    @classmethod
    def from_recipe(cls, recipe, chart):
        if recipe.n != chart.n:
            raise ConfigurationError(f"recipe {recipe.name!r} has n={recipe.n}, chart has n={chart.n}")
        E, dE, d2E = recipe.evaluate(chart.points)
        return cls(chart, E, dE, d2E, recipe=recipe)

    @classmethod
    def sampled(cls, chart, values):
        return cls(chart, values)

    @property
    def backing(self):
        return "analytic" if self.grad is not None else "sampled"

    @cached_property
    def inverse_values(self):
        return np.linalg.inv(self.values)

    @cached_property
    def d1(self):
        """First partials, ``[..., r, i, j] = d_r eps_j^i``."""
        return gradient_values(self)

    @cached_property
    def d2(self):
        """Second partials, ``[..., r, s, i, j]``, symmetric in (r, s)."""
        if self._hess is not None:
            return self._hess
        chart = self.chart
        d1 = self.d1
        cols = [
            np.stack([chart.derivative(d1[(slice(None),) * chart.n + (r,)], s) for s in range(chart.n)],
                     axis=chart.n)
            for r in range(chart.n)
        ]
        d2 = np.stack(cols, axis=chart.n)
        return 0.5 * (d2 + np.swapaxes(d2, chart.n, chart.n + 1))

    def evaluate(self, points):
        """Frame values and first partials at arbitrary chart points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.recipe is not None:
            E, dE, _ = self.recipe.evaluate(points)
            return E, dE
        return self.chart.interpolate(self.values, points), self.chart.interpolate(self.d1, points)


def check_invertible(values, floor=DET_FLOOR, grid_ndim=None):
    """Raise :class:`SingularFrameError` naming the worst node if |det| < floor."""
    det = np.linalg.det(values)
    if not np.all(np.isfinite(det)):
        bad = np.argwhere(~np.isfinite(det))[0]
        raise SingularFrameError(bad, np.nan)
    absdet = np.abs(det)
    idx = np.unravel_index(np.argmin(absdet), absdet.shape)
    if absdet[idx] < floor:
        raise SingularFrameError(idx, det[idx])
    return float(absdet[idx])


_SWAP = {COORD_UP: RN_UP, RN_UP: COORD_UP, COORD_DOWN: RN_DOWN, RN_DOWN: COORD_DOWN}
_DUAL = {COORD_UP: COORD_DOWN, COORD_DOWN: COORD_UP, RN_UP: RN_DOWN, RN_DOWN: RN_UP}


def invert_frame(frame):
    """Pointwise inverse of eps(0, x) giving eps(x, 0), or back again.

    The row index keeps its position but changes kind (coordinate <-> R^n)
    and the column likewise, so ``("u", "D")`` becomes ``("U", "d")``.
    """
    sig = frame.signature
    if len(sig) != 2 or sig[1] != _DUAL[_SWAP[sig[0]]]:
        raise IllegalIndexError(f"cannot invert a field with signature {sig}")
    check_invertible(frame.values)
    inv = np.linalg.inv(frame.values)
    grad = None
    if frame.grad is not None:
        grad = -inv[..., None, :, :] @ frame.grad @ inv[..., None, :, :]
    new_sig = (_SWAP[sig[0]], _SWAP[sig[1]])
    if new_sig == (COORD_UP, RN_DOWN):
        return FrameField(frame.chart, inv, grad)
    return TensorField(frame.chart, new_sig, inv, grad)


def norm(f, which="sup"):
    """Sup norm (max |component|) or L2 (root mean square over nodes and components)."""
    values = f.values if isinstance(f, TensorField) else np.asarray(f, dtype=float)
    if values.size == 0:
        return 0.0
    flat = np.abs(values).ravel()
    if which == "sup":
        return float(flat.max())
    if which == "L2":
        return float(np.sqrt(np.mean(flat * flat)))
    raise ConfigurationError(f"unknown norm {which!r}")


# -- serialization -------------------------------------------------------------


def dumps(fields, chart=None):
    """Serialize ``{name: TensorField}`` to a field-file JSON string."""
    items = list(fields.items()) if isinstance(fields, dict) else list(fields)
    for _, f in items:
        if chart is None:
            chart = f.chart
        elif f.chart != chart:
            raise FieldFileError("all fields in one file must share a chart")
    entries = []
    for name, f in items:
        payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
        entries.append(
            {
                "name": name,
                "signature": list(f.signature),
                "shape": list(f.values.shape),
                "dtype": "<f8",
                "data": base64.b64encode(payload).decode("ascii"),
            }
        )
    doc = {
        "format": "hflow-lab-fieldfile",
        "version": FIELD_FILE_VERSION,
        "chart": None if chart is None else chart.descriptor(),
        "fields": entries,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def loads(text):
    """Parse a field-file string; returns ``(chart, {name: TensorField})``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FieldFileError(f"not a field file: {exc}") from exc
    if doc.get("format") != "hflow-lab-fieldfile":
        raise FieldFileError("missing field-file format marker")
    if doc.get("version") != FIELD_FILE_VERSION:
        raise FieldFileVersionError(
            f"field file version {doc.get('version')!r}, expected {FIELD_FILE_VERSION}"
        )
    chart = None if doc["chart"] is None else Chart.from_descriptor(doc["chart"])
    fields = {}
    for entry in doc["fields"]:
        shape = tuple(entry["shape"])
        raw = base64.b64decode(entry["data"])
        if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
            raise FieldFileShapeError(
                f"field {entry['name']!r}: payload has {len(raw)} bytes, shape {shape} needs "
                f"{8 * int(np.prod(shape, dtype=np.int64))}"
            )
        values = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)
        sig = tuple(entry["signature"])
        if shape != chart.shape + (chart.n,) * len(sig):
            raise FieldFileShapeError(f"field {entry['name']!r}: shape {shape} inconsistent with chart")
        if sig == (COORD_UP, RN_DOWN):
            fields[entry["name"]] = FrameField(chart, values)
        else:
            fields[entry["name"]] = TensorField(chart, sig, values)
    return chart, fields


def save(path, fields, chart=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(fields, chart))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def component_labels(name, signature, n):
    labels = []
    for multi in np.ndindex(*((n,) * len(signature))):
        labels.append(name + "_" + "".join(f"{tag}{i}" for tag, i in zip(signature, multi)))
    return labels


def to_csv(fields):
    """CSV text: one row per node, coordinates then every component of every field."""
    items = list(fields.items()) if isinstance(fields, dict) else list(fields)
    chart = items[0][1].chart
    header = [f"x{i}" for i in range(chart.n)]
    columns = [chart.points.reshape(-1, chart.n)]
    for name, f in items:
        if f.chart != chart:
            raise FieldFileError("CSV export needs fields on one chart")
        header += component_labels(name, f.signature, chart.n)
        columns.append(f.values.reshape(int(np.prod(chart.shape)), -1))
    table = np.concatenate(columns, axis=1)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in table:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def export_csv(path, fields):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(to_csv(fields))
