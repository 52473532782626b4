"""Uniform-lattice grid functions on rectangle/disc domains, finite differences, binary IO.

A :class:`GridFunction` is the discrete stand-in for a measurable map
``u : R^n >= Omega -> R^d``: values sampled at lattice nodes, extended by
zero outside the active mask.  The mask marks the *open* domain, so the
zero extension doubles as homogeneous Dirichlet data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MASK_KINDS = ("rect", "disc")
GRID_FORMAT = "diffusepde-grid-v1"


@dataclass(frozen=True)
class Domain:
    """Uniform axis-aligned lattice with a rectangular or disc-shaped mask.

    Nodes sit at ``origin + spacing * index``.  For ``mask_kind == "rect"``
    the active set is the open box (outermost node ring excluded); for
    ``"disc"`` it is the open disc inscribed in the bounding box.
    """

    shape: tuple
    spacing: float
    origin: tuple
    mask_kind: str = "rect"

    def __post_init__(self):
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.mask_kind!r}")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if len(self.origin) != len(self.shape):
            raise ValueError("origin/shape dimension mismatch")

    @property
    def dim(self):
        return len(self.shape)

    @property
    def extent(self):
        return tuple((m - 1) * self.spacing for m in self.shape)

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    def axis_coords(self, axis):
        return self.origin[axis] + self.spacing * np.arange(self.shape[axis])

    def node_coords(self):
        """Coordinate arrays of shape ``(*shape, dim)``."""
        axes = [self.axis_coords(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def mask(self):
        """Boolean array of active (in-domain) nodes."""
        if self.mask_kind == "rect":
            m = np.ones(self.shape, dtype=bool)
            for k in range(self.dim):
                sl = [slice(None)] * self.dim
                sl[k] = 0
                m[tuple(sl)] = False
                sl[k] = -1
                m[tuple(sl)] = False
            return m
        center = np.array(self.origin) + 0.5 * np.array(self.extent)
        radius = 0.5 * min(self.extent)
        x = self.node_coords() - center
        return np.einsum("...k,...k->...", x, x) < radius**2 * (1 - 1e-12)

    def interior_mask(self, margin):
        """Active nodes farther than ``margin`` (a length) from any masked-out node."""
        m = self.mask()
        steps = int(np.ceil(margin / self.spacing))
        out = m.copy()
        for _ in range(steps):
            eroded = out.copy()
            for k in range(self.dim):
                eroded &= shift_array(out, k, 1, fill=False)
                eroded &= shift_array(out, k, -1, fill=False)
            out = eroded
        return out

    def boundary_ring(self):
        """Active nodes with at least one masked-out lattice neighbour."""
        m = self.mask()
        ring = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            ring |= m & ~shift_array(m, k, 1, fill=False)
            ring |= m & ~shift_array(m, k, -1, fill=False)
        return ring

    def diameter(self):
        if self.mask_kind == "disc":
            return float(min(self.extent))
        return float(np.sqrt(sum(e**2 for e in self.extent)))

    # common constructors -------------------------------------------------
    @staticmethod
    def unit_square(resolution):
        h = 1.0 / resolution
        return Domain(shape=(resolution + 1, resolution + 1), spacing=h,
                      origin=(0.0, 0.0), mask_kind="rect")

    @staticmethod
    def unit_disc(resolution):
        h = 2.0 / resolution
        return Domain(shape=(resolution + 1, resolution + 1), spacing=h,
                      origin=(-1.0, -1.0), mask_kind="disc")

    @staticmethod
    def interval(a, b, resolution):
        h = (b - a) / resolution
        return Domain(shape=(resolution + 1,), spacing=h, origin=(a,),
                      mask_kind="rect")


def shift_array(values, axis, steps, fill=0.0):
    """Shift along ``axis`` by ``steps`` nodes, filling vacated entries.

    ``shift(v, axis, +1)[i] == v[i+1]`` (reads the forward neighbour).
    """
    if steps == 0:
        return values.copy()
    out = np.full_like(values, fill)
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    if steps > 0:
        src[axis] = slice(steps, None)
        dst[axis] = slice(None, -steps)
    else:
        src[axis] = slice(None, steps)
        dst[axis] = slice(-steps, None)
    out[tuple(dst)] = values[tuple(src)]
    return out


class GridFunction:
    """Componentwise lattice samples of a map Omega -> R^d, zero outside the mask."""

    def __init__(self, domain, values):
        values = np.asarray(values, dtype=float)
        if values.shape[: domain.dim] != domain.shape:
            raise ValueError("values do not match domain shape")
        if values.ndim == domain.dim:
            values = values[..., None]
        if values.ndim != domain.dim + 1:
            raise ValueError("values must have one trailing component axis")
        self.domain = domain
        mask = domain.mask()
        if not np.isfinite(values[mask]).all():
            raise ValueError("non-finite values on active nodes")
        self.values = np.where(mask[..., None], values, 0.0)

    @property
    def components(self):
        return self.values.shape[-1]

    @staticmethod
    def from_callable(domain, fn, components=None):
        """Sample ``fn(x)`` (vectorized over points ``(..., dim)``) on the lattice."""
        x = domain.node_coords()
        vals = np.asarray(fn(x), dtype=float)
        if vals.shape == domain.shape:
            vals = vals[..., None]
        if components is not None and vals.shape[-1] != components:
            raise ValueError("component count mismatch")
        vals = np.where(domain.mask()[..., None], vals, 0.0)
        return GridFunction(domain, vals)

    def zeros_like(self, components):
        return GridFunction(self.domain, np.zeros(self.domain.shape + (components,)))

    def l2_norm(self, where=None):
        """Cell-volume-weighted discrete L2 norm over the mask (or ``where``)."""
        sel = self.domain.mask() if where is None else where
        w = self.domain.spacing ** self.domain.dim
        return float(np.sqrt(w * np.sum(self.values[sel] ** 2)))

    def linf_norm(self, where=None):
        sel = self.domain.mask() if where is None else where
        if not sel.any():
            return 0.0
        return float(np.max(np.abs(self.values[sel])))

    def __add__(self, other):
        self._check_compatible(other)
        return GridFunction(self.domain, self.values + other.values)

    def __sub__(self, other):
        self._check_compatible(other)
        return GridFunction(self.domain, self.values - other.values)

    def __mul__(self, scalar):
        return GridFunction(self.domain, self.values * scalar)

    __rmul__ = __mul__

    def _check_compatible(self, other):
        if other.domain != self.domain or other.components != self.components:
            raise ValueError("incompatible grid functions")


# finite differences ------------------------------------------------------

def gradient_central(gf):
    """Central-difference gradient; zero extension supplies out-of-mask values.

    Returns a GridFunction with ``d * dim`` components laid out row-major
    as ``(component, axis)``.
    """
    dom = gf.domain
    h = dom.spacing
    pieces = []
    for c in range(gf.components):
        v = gf.values[..., c]
        for k in range(dom.dim):
            der = (shift_array(v, k, 1) - shift_array(v, k, -1)) / (2 * h)
            pieces.append(der)
    vals = np.stack(pieces, axis=-1)
    return GridFunction(dom, vals)


def second_difference(v, axis_i, axis_j, h, one_sided_mask=None):
    """Second difference of a scalar array: central stencils, zero extension.

    With ``one_sided_mask`` given, nodes flagged there use second-order
    one-sided stencils along the pure directions (mixed terms stay central).
    """
    if axis_i == axis_j:
        out = (shift_array(v, axis_i, 1) - 2 * v + shift_array(v, axis_i, -1)) / h**2
        if one_sided_mask is not None and one_sided_mask.any():
            fwd = (2 * v - 5 * shift_array(v, axis_i, 1) + 4 * shift_array(v, axis_i, 2)
                   - shift_array(v, axis_i, 3)) / h**2
            bwd = (2 * v - 5 * shift_array(v, axis_i, -1) + 4 * shift_array(v, axis_i, -2)
                   - shift_array(v, axis_i, -3)) / h**2
            # prefer the side with more in-mask support: pick forward on the
            # low-index side, backward on the high-index side
            idx = np.arange(v.shape[axis_i])
            shape = [1] * v.ndim
            shape[axis_i] = -1
            low = idx.reshape(shape) < v.shape[axis_i] // 2
            one_sided = np.where(low, fwd, bwd)
            out = np.where(one_sided_mask, one_sided, out)
        return out
    pp = shift_array(shift_array(v, axis_i, 1), axis_j, 1)
    pm = shift_array(shift_array(v, axis_i, 1), axis_j, -1)
    mp = shift_array(shift_array(v, axis_i, -1), axis_j, 1)
    mm = shift_array(shift_array(v, axis_i, -1), axis_j, -1)
    return (pp - pm - mp + mm) / (4 * h**2)


def hessian_central(gf, one_sided_boundary=False):
    """Discrete hessian field with ``d * dim * dim`` components, ``(c, i, j)`` row-major.

    ``one_sided_boundary=True`` switches pure second differences to one-sided
    stencils on the boundary ring, avoiding the zero-extension bias there.
    """
    dom = gf.domain
    h = dom.spacing
    ring = dom.boundary_ring() if one_sided_boundary else None
    d = gf.components
    vals = np.zeros(dom.shape + (d, dom.dim, dom.dim))
    for c in range(d):
        v = gf.values[..., c]
        for i in range(dom.dim):
            for j in range(i, dom.dim):
                der = second_difference(v, i, j, h, one_sided_mask=ring if i == j else None)
                vals[..., c, i, j] = der
                vals[..., c, j, i] = der
    return GridFunction(dom, vals.reshape(dom.shape + (d * dom.dim**2,)))


# binary IO ---------------------------------------------------------------

def save_grid(path, gf):
    """Grid file: one JSON header line, then little-endian float64, row-major,
    components innermost.  Round-trips bit-exactly."""
    header = {
        "format": GRID_FORMAT,
        "dims": list(gf.domain.shape),
        "spacing": gf.domain.spacing,
        "origin": list(gf.domain.origin),
        "components": gf.components,
        "mask": gf.domain.mask_kind,
        "byte_order": "little",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(gf.values, dtype="<f8").tobytes())


def load_grid(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("format") != GRID_FORMAT:
            raise ValueError(f"not a grid file: {path}")
        dom = Domain(shape=tuple(header["dims"]), spacing=header["spacing"],
                     origin=tuple(header["origin"]), mask_kind=header["mask"])
        count = dom.n_nodes * header["components"]
        raw = fh.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError("truncated grid file")
        values = np.frombuffer(raw, dtype="<f8").reshape(dom.shape + (header["components"],))
    return GridFunction(dom, values.copy())
