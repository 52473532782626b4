"""Orthonormal frames of the value/domain spaces and difference quotients along them.

Difference quotients follow the projection recipe: project the map onto each
value-frame vector, take iterated one-directional quotients along the
matching domain-frame vectors, and assemble the results into a full tensor
in standard coordinates.  Off-lattice evaluations use multilinear
interpolation with the zero extension outside the mask.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .grids import GridFunction
from .tensors import eigh_deterministic, range_basis

TOL_LIN = 1e-10


@dataclass(frozen=True)
class Frame:
    """Value-space frame ``E_range[a]`` plus one domain frame ``E_domain[a, i]`` per a."""

    E_range: np.ndarray   # (N, N), rows are frame vectors
    E_domain: np.ndarray  # (N, n, n), rows are frame vectors per value direction

    def __post_init__(self):
        er = np.asarray(self.E_range, float)
        ed = np.asarray(self.E_domain, float)
        if er.ndim != 2 or er.shape[0] != er.shape[1]:
            raise ValueError("E_range must be square")
        if ed.ndim != 3 or ed.shape[0] != er.shape[0] or ed.shape[1] != ed.shape[2]:
            raise ValueError("E_domain must be (N, n, n)")
        if np.linalg.norm(er @ er.T - np.eye(er.shape[0])) > 1e-8:
            raise ValueError("value frame not orthonormal")
        for a in range(ed.shape[0]):
            if np.linalg.norm(ed[a] @ ed[a].T - np.eye(ed.shape[1])) > 1e-8:
                raise ValueError(f"domain frame {a} not orthonormal")
        object.__setattr__(self, "E_range", er)
        object.__setattr__(self, "E_domain", ed)

    @property
    def N(self):
        return self.E_range.shape[0]

    @property
    def n(self):
        return self.E_domain.shape[1]

    def induced_basis_element(self, alpha, idx, normalized=True):
        """``E^alpha (x) sym(e_{i1}, ..., e_{ip})`` for a tuple of domain indices."""
        vecs = [self.E_domain[alpha, i] for i in idx]
        t = symmetrized_outer(vecs)
        e = np.tensordot(self.E_range[alpha], t, axes=0)
        if normalized:
            e = e / np.linalg.norm(e)
        return e


def symmetrized_outer(vecs):
    """Symmetrized outer product of a list of vectors (order p tensor)."""
    p = len(vecs)
    if p == 1:
        return np.asarray(vecs[0], float)
    total = None
    for perm in itertools.permutations(range(p)):
        t = np.asarray(vecs[perm[0]], float)
        for k in perm[1:]:
            t = np.tensordot(t, vecs[k], axes=0)
        total = t if total is None else total + t
    return total / float(np.prod(range(1, p + 1)))


def build_frame(mode="standard", dec=None, N=None, n=None):
    """Standard canonical frames, or frames adapted to a factored tensor.

    In adapted mode the value frame is assembled from orthonormal bases of
    the per-factor value subspaces (completed canonically), and the domain
    frame attached to a value vector of factor g lists the eigenvectors of
    ``A^g`` in ascending order, so the trailing vectors span its range.
    """
    if mode == "standard":
        if N is None or n is None:
            raise ValueError("standard mode needs N and n")
        return Frame(np.eye(N), np.broadcast_to(np.eye(n), (N, n, n)).copy())
    if mode != "from_decomposition":
        raise ValueError(f"unknown mode {mode!r}")
    if dec is None:
        raise ValueError("decomposition required")
    N, n = dec.N, dec.n
    value_vecs = []
    domain_frames = []
    for b, a in zip(dec.B_factors, dec.A_factors):
        basis = range_basis(b)
        if basis.shape[1] == 0:
            continue
        _, vecs = eigh_deterministic(a)
        for r in range(basis.shape[1]):
            value_vecs.append(basis[:, r])
            domain_frames.append(vecs.T.copy())
    completion = gram_schmidt_complete(value_vecs, N)
    for _ in range(len(completion) - len(value_vecs)):
        domain_frames.append(np.eye(n))
    return Frame(np.stack(completion), np.stack(domain_frames))


def gram_schmidt_complete(vectors, dim):
    """Complete a partial orthonormal family deterministically with canonical seeds."""
    out = [np.asarray(v, float) for v in vectors]
    for k in range(dim):
        if len(out) == dim:
            break
        cand = np.zeros(dim)
        cand[k] = 1.0
        for v in out:
            cand = cand - (cand @ v) * v
        norm = np.linalg.norm(cand)
        if norm > 1e-8:
            out.append(cand / norm)
    if len(out) != dim:
        raise ArithmeticError("orthonormal completion failed")
    return out


def expand_in_frame(t, frame, order=None):
    """Coefficients of a tensor in the induced (normalized) frame basis.

    Order-1 tensors (N, n) expand over all index pairs; order-p symmetric
    tensors (N, n, ..., n) expand over nondecreasing index tuples.
    Returns ``(labels, coefficients)``.
    """
    t = np.asarray(t, float)
    N, n = frame.N, frame.n
    p = t.ndim - 1 if order is None else order
    if t.shape != (N,) + (n,) * p:
        raise ValueError("tensor shape does not match the frame")
    labels, coeffs = [], []
    for alpha in range(N):
        for idx in itertools.combinations_with_replacement(range(n), p):
            e = frame.induced_basis_element(alpha, idx, normalized=True)
            labels.append((alpha,) + idx)
            coeffs.append(float(np.tensordot(e, t, axes=p + 1)))
    return labels, np.array(coeffs)


def reassemble_from_frame(labels, coeffs, frame):
    """Inverse of :func:`expand_in_frame` for symmetric tensors."""
    p = len(labels[0]) - 1
    out = np.zeros((frame.N,) + (frame.n,) * p)
    for lab, c in zip(labels, coeffs):
        e = frame.induced_basis_element(lab[0], lab[1:], normalized=True)
        out += c * e
    return out


@dataclass(frozen=True)
class HSchedule:
    """One evaluation point of step sizes for an order-p quotient jet.

    ``rows[q-1]`` holds the q steps of the order-q iterated quotient; a plain
    order-p vector schedule is a single row.  Every step must resolve at
    least one lattice spacing.
    """

    rows: tuple

    def __post_init__(self):
        rows = tuple(tuple(float(h) for h in row) for row in self.rows)
        if not rows:
            raise ValueError("empty schedule")
        for q, row in enumerate(rows, start=1):
            if len(row) != q:
                raise ValueError("row q must hold q steps")
            if any(h == 0 for h in row):
                raise ValueError("zero step")
        object.__setattr__(self, "rows", rows)

    @property
    def order(self):
        return len(self.rows)

    def validate_for(self, domain):
        for row in self.rows:
            for h in row:
                if abs(h) < domain.spacing * (1 - 1e-12):
                    raise ValueError(
                        f"step {h} below the lattice spacing {domain.spacing}")

    @staticmethod
    def first_order(h):
        return HSchedule(rows=((h,),))

    @staticmethod
    def second_order(h1, h2=None):
        """Second-order jet point; ``h2`` defaults to the separated scale ``h1``."""
        h2 = h1 if h2 is None else h2
        return HSchedule(rows=((h1,), (h1, h2)))

    def scale_separation(self):
        """Largest ratio of a later step to an earlier one within a row."""
        worst = 0.0
        for row in self.rows:
            for k in range(len(row) - 1):
                worst = max(worst, abs(row[k]) / abs(row[k + 1]))
        return worst


def schedule_window(base_step, count, ratio=0.5, order=1, separation=1.0):
    """A refining family of schedules: steps ``base_step * ratio^k``.

    ``separation`` multiplies successive in-row steps for higher orders
    (earlier limit indices get smaller steps, approximating successive
    separate limits; the ratio used is recorded on the schedule itself).
    """
    out = []
    for k in range(count):
        h = base_step * ratio**k
        if order == 1:
            out.append(HSchedule.first_order(h))
        else:
            rows = []
            for q in range(1, order + 1):
                row = tuple(h * separation ** (q - 1 - j) for j in range(q))
                rows.append(row)
            out.append(HSchedule(rows=tuple(rows)))
    return out


def schedule_battery(base_step, levels, count, order, spacing, rng=None):
    """Three families of refining windows: dyadic, geometric ratio 1/3, and
    randomized steps.  Checks run over the whole battery report the worst
    case; all steps stay at or above the lattice spacing.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    families = {}
    for name, ratio in (("dyadic", 0.5), ("geometric3", 1.0 / 3.0)):
        fam = []
        for lvl in range(levels):
            win = [s for s in schedule_window(base_step * 0.5**lvl, count,
                                              ratio=ratio, order=order)
                   if min(abs(h) for row in s.rows for h in row) >= spacing]
            if win:
                fam.append(win)
        families[name] = fam
    fam = []
    for lvl in range(levels):
        top = base_step * 0.5**lvl
        win = []
        for _ in range(count):
            steps = rng.uniform(max(spacing, top / 3), top, size=order)
            rows = tuple(tuple(steps[:q]) for q in range(1, order + 1))
            win.append(HSchedule(rows=rows))
        fam.append(win)
    families["randomized"] = fam
    return families


def _interp_shifted(values, domain, offset):
    """Multilinear interpolation of a scalar lattice field at ``x + offset``."""
    coords = [np.arange(m, dtype=float) for m in domain.shape]
    mesh = np.meshgrid(*coords, indexing="ij")
    shift = np.asarray(offset, float) / domain.spacing
    sample = [m + s for m, s in zip(mesh, shift)]
    return map_coordinates(values, sample, order=1, mode="constant", cval=0.0)


def directional_quotient(values, domain, direction, h):
    """``(v(x + h a) - v(x)) / h`` on the lattice, zero extension off the mask."""
    shifted = _interp_shifted(values, domain, h * np.asarray(direction, float))
    return (shifted - values) / h


def difference_quotient_1(u, frame, h):
    """First-order quotient tensor field, standard coordinates, d = N * n.

    Components laid out row-major as ``(value index, domain index)``.
    """
    dom = u.domain
    if abs(h) < dom.spacing * (1 - 1e-12):
        raise ValueError("step below lattice spacing")
    N, n = frame.N, frame.n
    if u.components != N or dom.dim != n:
        raise ValueError("frame does not match the grid function")
    out = np.zeros(dom.shape + (N, n))
    for alpha in range(N):
        proj = u.values @ frame.E_range[alpha]
        for i in range(n):
            q = directional_quotient(proj, dom, frame.E_domain[alpha, i], h)
            out += q[..., None, None] * np.tensordot(
                frame.E_range[alpha], frame.E_domain[alpha, i], axes=0)
    return GridFunction(dom, out.reshape(dom.shape + (N * n,)))


def jet_difference_quotients(u, frame, sched):
    """Iterated quotients of orders 1..p, assembled as symmetric tensors.

    The order-q output is a GridFunction with ``N * n^q`` components in
    standard coordinates, symmetrized over the domain indices.
    """
    dom = u.domain
    sched.validate_for(dom)
    N, n = frame.N, frame.n
    if u.components != N or dom.dim != n:
        raise ValueError("frame does not match the grid function")
    outputs = []
    for q, row in enumerate(sched.rows, start=1):
        raw = np.zeros(dom.shape + (N,) + (n,) * q)
        for alpha in range(N):
            proj = u.values @ frame.E_range[alpha]
            # iterate quotients over all index tuples, reusing prefixes
            stack = {(): proj}
            for depth in range(q):
                nxt = {}
                for prefix, vals in stack.items():
                    for i in range(n):
                        nxt[prefix + (i,)] = directional_quotient(
                            vals, dom, frame.E_domain[alpha, i], row[depth])
                stack = nxt
            for idx, vals in stack.items():
                raw[(Ellipsis, alpha) + idx] = vals
        assembled = _assemble_symmetric(raw, frame, q)
        outputs.append(GridFunction(dom, assembled.reshape(dom.shape + (N * n**q,))))
    return outputs


def _mode_multiply(t, m, mode):
    """Contract axis ``mode`` of ``t`` with the first axis of matrix ``m``."""
    moved = np.moveaxis(t, mode, -1)
    return np.moveaxis(moved @ m, -1, mode)


def _assemble_symmetric(raw, frame, q):
    """Rotate per-value-direction quotient arrays to standard coordinates and
    symmetrize over the domain slots."""
    N, n = frame.N, frame.n
    grid_ndim = raw.ndim - 1 - q
    grid_shape = raw.shape[:grid_ndim]
    out = np.zeros(grid_shape + (N,) + (n,) * q)
    for alpha in range(N):
        block = raw[(Ellipsis, alpha) + (slice(None),) * q]
        r = frame.E_domain[alpha]  # rows are frame vectors
        for mode in range(q):
            block = _mode_multiply(block, r, grid_ndim + mode)
        sym = np.zeros_like(block)
        base_axes = list(range(grid_ndim))
        for perm in itertools.permutations(range(q)):
            sym += block.transpose(base_axes + [grid_ndim + p for p in perm])
        sym /= float(np.prod(range(1, q + 1)))
        contrib = np.tensordot(sym, frame.E_range[alpha], axes=0)
        out += np.moveaxis(contrib, -1, grid_ndim)
    return out
