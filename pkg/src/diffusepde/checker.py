"""Verifiable solution criteria for measure-valued generalized solutions.

A candidate map passes when, cell by cell, the measure built from its
difference quotients charges (off infinity) only the zero set of the PDE
coefficients.  Several equivalent readings of that statement are computed
side by side on identical inputs:

* ``pairing``  -- duality pairings against a family of compactly supported
  test functions vanish;
* ``support``  -- the coefficients vanish on every finite atom;
* ``integral`` -- the finite-part integral of the absolute coefficients vanishes;
* ``cutoff``   -- coefficients evaluated on radius-R cut-off quotients tend to zero;
* ``distance`` -- cut-off quotients approach the coefficient zero set inside
  the R-ball.

All residuals decrease under schedule refinement for true solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frames import difference_quotient_1, jet_difference_quotients
from .grids import GridFunction
from .measures import bump, diffuse_field, pair

TOL_ZERO = 1e-8


@dataclass
class CoefficientSystem:
    """Coefficients of a PDE system of order ``p`` in ``M`` equations.

    ``evaluate(x, uval, X)`` is vectorized over stacked cells: ``x`` has shape
    ``(cells, n)``, ``uval`` ``(cells, du)`` and ``X`` ``(cells, D)`` with the
    top-order tensor flattened row-major; it returns ``(cells, M)``.

    ``u_source`` names what fills the ``uval`` slot: the map values
    themselves or a fixed fine-step gradient quotient of the map.

    Linear-in-jet systems may provide ``jet_linearization(x, uval)``
    returning per-cell ``(L, c)`` with ``F = L X + c``; it enables exact
    zero-set distances and the trivial cut-off selection.  Other systems
    supply ``zero_set_oracle(x, uval, R)`` returning representative points
    (``(cells, k, D)``) of the zero set inside the R-ball.
    """

    order: int
    n: int
    N: int
    M: int
    evaluate: callable
    u_source: str = "value"
    zero_set_oracle: callable | None = None
    jet_linearization: callable | None = None
    name: str = "system"

    @property
    def jet_dim(self):
        return self.N * self.n**self.order

    @property
    def linear_in_jet(self):
        return self.jet_linearization is not None


def tensor_system(tensor):
    """Linear constant-coefficient system: the tensor contracted with the hessian."""
    N, n = tensor.N, tensor.n
    L = tensor.entries.reshape(N, n, N, n)
    # hessian action matrix: rows are equations, columns flattened (b, i, j)
    Lmat = np.einsum("aibj->abij", L).reshape(N, N * n * n)

    def evaluate(x, uval, X):
        return X @ Lmat.T

    def jet_linearization(x, uval):
        cells = x.shape[0]
        Lb = np.broadcast_to(Lmat, (cells,) + Lmat.shape)
        return Lb, np.zeros((cells, N))

    return CoefficientSystem(order=2, n=n, N=N, M=N, evaluate=evaluate,
                             u_source="value", jet_linearization=jet_linearization,
                             name="linear-tensor")


def infinity_laplace_system(n, rank_tol=1e-9):
    """Second-order coefficients of the vectorial supremal-energy system.

    For a gradient value ``P`` the coefficient tensor reads
    ``P (x) P + |P|^2 Proj_{range(P)^perp} (x) I``; the projection uses the
    singular value decomposition of ``P`` with a relative rank cutoff.
    """

    def coefficient_matrices(P):
        cells = P.shape[0]
        Pm = P.reshape(cells, n, n)
        u, s, vt = np.linalg.svd(Pm)
        smax = s[:, :1]
        keep = s > rank_tol * np.maximum(smax, 1e-300)
        proj_range = np.einsum("cak,ck,cbk->cab", u, keep.astype(float), u)
        proj_perp = np.eye(n)[None] - proj_range
        p2 = np.einsum("cai,cai->c", Pm, Pm)
        L = (np.einsum("cai,cbj->cabij", Pm, Pm)
             + p2[:, None, None, None, None]
             * np.einsum("cab,ij->cabij", proj_perp, np.eye(n)))
        return L.reshape(cells, n, n * n * n)

    def evaluate(x, uval, X):
        L = coefficient_matrices(uval)
        return np.einsum("cmd,cd->cm", L, X)

    def jet_linearization(x, uval):
        L = coefficient_matrices(uval)
        return L, np.zeros((x.shape[0], n))

    return CoefficientSystem(order=2, n=n, N=n, M=n, evaluate=evaluate,
                             u_source="gradient",
                             jet_linearization=jet_linearization,
                             name="infinity-laplace")


def eikonal_system(n, N, speed):
    """First-order system ``|Du|^2 - speed^2 = 0`` with an exact zero-set oracle."""

    def evaluate(x, uval, X):
        return (np.einsum("cd,cd->c", X, X) - speed**2)[:, None]

    def zero_set_oracle(x, uval, R):
        if R < speed:
            raise ValueError("zero set does not meet the ball")
        cells = x.shape[0]
        D = N * n
        pts = np.zeros((cells, 1, D))
        pts[:, 0, 0] = speed
        return pts

    def gradient_entries(x, uval, X):
        return 2.0 * X.reshape(X.shape[0], 1, -1)

    sys = CoefficientSystem(order=1, n=n, N=N, M=1, evaluate=evaluate,
                            u_source="value", zero_set_oracle=zero_set_oracle,
                            name="eikonal")
    sys.jet_gradient = gradient_entries
    sys.x_gradient = lambda x, uval, X: np.zeros((x.shape[0], 1, n))
    return sys


def tangent_system(base, F_x=None, F_X=None, fd_step=None):
    """Differentiated system of a first-order base system.

    The new system has order two and ``M * n`` equations indexed ``(mu, i)``:
    the x-derivative of the coefficients plus the jet-derivative contracted
    with the next-order tensor.  Derivative callables are analytic closures
    ``(x, uval, X) -> (cells, M, n)`` resp. ``(cells, M, N*n)``; when ``F_X``
    is omitted a finite-difference fallback in the jet variable is used and
    flagged as lower trust on the returned system.
    """
    if base.order != 1:
        raise ValueError("tangent construction implemented for first-order systems")
    F_x = F_x or getattr(base, "x_gradient", None)
    F_X_eff = F_X or getattr(base, "jet_gradient", None)
    fd_fallback = False
    if F_X_eff is None:
        fd_fallback = True
        step = fd_step or 1e-6

        def F_X_eff(x, uval, P):
            cells, D = P.shape
            out = np.zeros((cells, base.M, D))
            for d in range(D):
                e = np.zeros(D)
                e[d] = step
                out[:, :, d] = (base.evaluate(x, uval, P + e)
                                - base.evaluate(x, uval, P - e)) / (2 * step)
            return out
    if F_x is None:
        def F_x(x, uval, P):
            return np.zeros((x.shape[0], base.M, base.n))

    n, N, M = base.n, base.N, base.M

    def evaluate(x, uval, X):
        """``uval`` carries the first-order jet (gradient values) of the base map."""
        P = uval
        cells = x.shape[0]
        gx = F_x(x, uval, P)                      # (cells, M, n)
        gX = F_X_eff(x, uval, P).reshape(cells, M, N, n)
        Xt = X.reshape(cells, N, n, n)
        # equation (mu, i): gx[mu, i] + sum_{b j} gX[mu, b, j] X[b, j, i]
        out = gx + np.einsum("cmbj,cbji->cmi", gX, Xt)
        return out.reshape(cells, M * n)

    def jet_linearization(x, uval):
        P = uval
        cells = x.shape[0]
        gx = F_x(x, uval, P).reshape(cells, M * n)
        gX = F_X_eff(x, uval, P).reshape(cells, M, N, n)
        L = np.zeros((cells, M, n, N, n, n))
        for i in range(n):
            L[:, :, i, :, :, i] = gX
        return L.reshape(cells, M * n, N * n * n), gx

    sys = CoefficientSystem(order=2, n=n, N=N, M=M * n, evaluate=evaluate,
                            u_source="gradient",
                            jet_linearization=jet_linearization,
                            name=f"tangent({base.name})")
    sys.fd_fallback = fd_fallback
    return sys


def _uval_grid(u, F, frame, fine_step):
    if F.u_source == "value":
        return u
    if F.u_source == "gradient":
        return difference_quotient_1(u, frame, fine_step)
    raise ValueError(f"unknown u_source {F.u_source!r}")


def cutoff(U, F, u, R, uval=None, f=None):
    """Radius-R cut-off of a jet-valued grid function.

    Cells with in-ball jet values pass through; overflowing cells receive a
    zero of the residual coefficients (``F = f``) inside the ball.  For
    jet-linear systems this is the minimal-norm solution of the affine
    equation (the origin when the data vanish); otherwise an oracle point.
    The replacement is verified to be an in-ball zero; cells where the zero
    set misses the ball raise.
    """
    dom = U.domain
    vals = U.values.reshape(-1, U.components)
    norms = np.linalg.norm(vals, axis=1)
    over = norms > R
    out = vals.copy()
    if over.any():
        x = dom.node_coords().reshape(-1, dom.dim)[over]
        if uval is None:
            uv = u.values.reshape(-1, u.components)[over]
        else:
            uv = uval.values.reshape(-1, uval.components)[over]
        if f is not None:
            fv = f.values.reshape(-1, f.components)[over]
        else:
            fv = None
        if F.linear_in_jet:
            L, c = F.jet_linearization(x, uv)
            rhs = -c if fv is None else fv - c
            sel = np.einsum("cdm,cm->cd", np.linalg.pinv(L), rhs)
            sel_norm = np.linalg.norm(sel, axis=1)
            if np.max(sel_norm) > R * (1 + 1e-9):
                raise ValueError(
                    f"zero set misses the radius-{R} ball at "
                    f"{int(np.sum(sel_norm > R))} cells")
            resid = np.einsum("cmd,cd->cm", L, sel) + c - (0.0 if fv is None else fv)
            if np.max(np.abs(resid)) > 1e3 * TOL_ZERO * max(
                    1.0, float(np.max(np.abs(rhs)))):
                raise ValueError("data not in the range of the jet map; "
                                 "no zero exists")
            out[over] = sel
        elif F.zero_set_oracle is not None:
            if fv is not None and np.max(np.abs(fv)) > TOL_ZERO:
                raise ValueError("oracle systems need the data folded into "
                                 "the coefficients")
            pts = F.zero_set_oracle(x, uv, R)
            sel = pts[:, 0, :]
            res = F.evaluate(x, uv, sel)
            if np.max(np.linalg.norm(res, axis=1)) > TOL_ZERO:
                raise ValueError("oracle points are not zeros of the system")
            if np.max(np.linalg.norm(sel, axis=1)) > R * (1 + 1e-9):
                raise ValueError("oracle produced points outside the ball")
            out[over] = sel
        else:
            raise ValueError("cut-off needs a linear system or a zero-set oracle")
    return GridFunction(dom, out.reshape(U.values.shape))


@dataclass
class CheckReport:
    """Residuals, verdicts and metadata of one solution check."""

    residuals: dict          # name -> list over levels (interior max, in F units)
    verdicts: dict           # name -> bool
    trends: dict             # name -> bool (non-increasing within 10%)
    tolerance: float
    scale: float
    levels: list             # finest step per level
    R_values: list
    R_inf: float
    skipped: list
    metadata: dict = field(default_factory=dict)
    residual_field: GridFunction | None = None  # finest-level per-cell residual

    @property
    def passed(self):
        return all(self.verdicts.values())

    def to_json_dict(self):
        return {
            "residuals": {k: [float(x) for x in v] for k, v in self.residuals.items()},
            "verdicts": {k: bool(v) for k, v in self.verdicts.items()},
            "trends": {k: bool(v) for k, v in self.trends.items()},
            "tolerance": self.tolerance,
            "scale": self.scale,
            "levels": [float(x) for x in self.levels],
            "R_values": [float(x) for x in self.R_values],
            "R_inf": self.R_inf,
            "skipped": list(self.skipped),
            "metadata": self.metadata,
            "passed": bool(self.passed),
        }


def default_phi_family(field, rng=None, radii_factors=(1.0, 2.0, 4.0), where=None):
    """Compactly supported witnesses near the finite atoms plus one at the origin.

    Bumps sit at the centroid of the finite atoms with radii at multiples of
    a robust (median) atom spread, so they discriminate the bulk cluster
    while escaping outliers fall outside every support.
    """
    mask = field.domain.mask() if where is None else where
    pts = field.points[mask]
    fin = ~field.infinite[mask]
    D = field.space_dim
    finite_pts = pts[fin]
    phis = []
    if finite_pts.size:
        centroid = finite_pts.mean(axis=0)
        spread = float(np.median(np.linalg.norm(finite_pts - centroid, axis=1)))
        base = max(spread, 1e-3 * max(np.linalg.norm(centroid), 1.0), 1e-6)
        for f in radii_factors:
            phis.append(bump(centroid, f * base))
        origin_radius = max(np.linalg.norm(centroid) + base, base)
    else:
        origin_radius = 1.0
    for f in radii_factors:
        phis.append(bump(np.zeros(D), f * origin_radius))
    return phis


def check_dsolution(u, F, frame, schedules, R_list=None, Phi_family=None, f=None,
                    project=None, C_disc=50.0, interior_margin=None,
                    R_inf=None, fine_step=None, distance_in_coefficient_units=True):
    """Run every characterization of the solution property on one candidate map.

    ``schedules`` is a list of windows (each a list of step schedules), coarse
    to fine; residual trends are reported across them.  ``project`` optionally
    projects jet values onto a subspace the coefficients depend on before
    measures are built (admissible whenever the coefficients are constant
    along the complement).  Verdicts compare the finest-level interior
    residual against ``max(C_disc * h_finest, 1e-6 * scale)``.
    """
    dom = u.domain
    if f is None:
        f = GridFunction(dom, np.zeros(dom.shape + (F.M,)))
    if f.components != F.M:
        raise ValueError("right-hand side does not match the system")
    fine = fine_step or min(abs(h) for row in schedules[-1][-1].rows for h in row)
    uval = _uval_grid(u, F, frame, fine)

    x_flat = dom.node_coords().reshape(-1, dom.dim)
    uval_flat = uval.values.reshape(-1, uval.components)
    f_flat = f.values.reshape(-1, F.M)

    def residual_fn(x, X):
        idx = _cell_index_of(dom, x)
        return F.evaluate(x, uval_flat[idx], X) - f_flat[idx]

    zeros = F.evaluate(x_flat, uval_flat, np.zeros((x_flat.shape[0], F.jet_dim)))
    mask = dom.mask()
    scale = float(np.median(np.abs(f.values[mask])) +
                  np.median(np.abs(zeros.reshape(dom.shape + (F.M,))[mask])))
    # tolerance tracks the resolution of the finest level as a whole, i.e.
    # the coarsest step appearing in its window
    h_finest = max(abs(h) for sched in schedules[-1] for row in sched.rows
                   for h in row)
    tol = max(C_disc * h_finest, 1e-6 * scale)

    margin = interior_margin
    if margin is None:
        margin = max(sum(abs(h) for h in sched.rows[-1])
                     for window in schedules for sched in window) + 2 * dom.spacing
    interior = dom.interior_mask(margin)
    if not interior.any():
        raise ValueError("no interior cells at this margin; refine the grid")

    if R_inf is None:
        R_inf = _default_checker_cutoff(u, F, frame, schedules[0])

    skipped = []
    oracle_ok = F.linear_in_jet or F.zero_set_oracle is not None
    if not oracle_ok:
        skipped.extend(["cutoff", "distance"])

    names = ["pairing", "support", "integral"] + (["cutoff", "distance"] if oracle_ok else [])
    residuals = {name: [] for name in names}
    levels = []
    infeasible_R = {}

    fields = []
    for window in schedules:
        field_lvl = diffuse_field(u, frame, F.order, window, R_inf)
        if project is not None:
            field_lvl = field_lvl.map_payloads(
                lambda X: project.project(X.reshape((-1,) + project.ambient_shape))
                .reshape(X.shape))
        fields.append(field_lvl)

    # witnesses are fixed once, near where the finest-level mass settles,
    # and reused across every refinement level
    phi_family = Phi_family
    if phi_family is None:
        phi_family = default_phi_family(fields[-1], where=interior)

    if R_list is None:
        # radii comfortably containing the settled finite mass
        fin = ~fields[-1].infinite & interior[..., None]
        if fin.any():
            s = float(np.linalg.norm(fields[-1].points[fin], axis=-1).max())
        else:
            s = 1.0
        s = max(s, 1.0)
        R_list = [2.0 * s, 8.0 * s]

    for level, (window, field_lvl) in enumerate(zip(schedules, fields)):
        pairing = 0.0
        for phi in phi_family:
            paired = pair(field_lvl, phi, residual_fn)
            pairing = max(pairing, float(np.max(
                np.linalg.norm(paired.values[interior], axis=-1))))
        residuals["pairing"].append(pairing)

        sup_res, int_res, sup_field = _finite_atom_residuals(
            field_lvl, residual_fn, interior, dom)
        residuals["support"].append(sup_res)
        residuals["integral"].append(int_res)

        if oracle_ok:
            finest = window[-1]
            jet = jet_difference_quotients(u, frame, finest)[F.order - 1]
            if project is not None:
                vals = project.project(
                    jet.values.reshape((-1,) + project.ambient_shape))
                jet = GridFunction(dom, vals.reshape(jet.values.shape))
            cut_res, dist_res = 0.0, 0.0
            feasible = 0
            for R in R_list:
                try:
                    cut = cutoff(jet, F, u, R, uval=uval, f=f)
                except ValueError as exc:
                    infeasible_R.setdefault(level, []).append((float(R), str(exc)))
                    continue
                feasible += 1
                res = F.evaluate(x_flat, uval_flat,
                                 cut.values.reshape(-1, F.jet_dim)) - f_flat
                res = np.linalg.norm(res, axis=1).reshape(dom.shape)
                cut_res = max(cut_res, float(np.max(res[interior])))
                dist_res = max(dist_res, _distance_residual(
                    cut, F, x_flat, uval_flat, f_flat, R, dom, interior,
                    distance_in_coefficient_units))
            if feasible == 0:
                raise ValueError(
                    "no cut-off radius admits a zero inside its ball; "
                    f"raise the R values (details: {infeasible_R.get(level)})")
            residuals["cutoff"].append(cut_res)
            residuals["distance"].append(dist_res)
        levels.append(h_finest_of(window))

    verdicts = {name: residuals[name][-1] <= tol for name in names}
    trends = {name: _non_increasing(residuals[name]) for name in names}
    return CheckReport(residuals=residuals, verdicts=verdicts, trends=trends,
                       tolerance=tol, scale=scale, levels=levels,
                       R_values=list(R_list), R_inf=float(R_inf), skipped=skipped,
                       metadata={"system": F.name, "C_disc": C_disc,
                                 "interior_margin": margin,
                                 "projected": project is not None,
                                 "infeasible_R": {str(k): v for k, v in
                                                  infeasible_R.items()}},
                       residual_field=sup_field)


def check_dsolution_battery(u, F, frame, batteries, **kwargs):
    """Run the characterizations over several schedule families and report the
    worst case per characterization (a finite surrogate of quantifying over
    every refinement sequence)."""
    reports = {name: check_dsolution(u, F, frame, fam, **kwargs)
               for name, fam in batteries.items()}
    worst = {}
    verdicts = {}
    for name, rep in reports.items():
        for char, seq in rep.residuals.items():
            if char not in worst or seq[-1] > worst[char][1]:
                worst[char] = (name, seq[-1])
            verdicts[char] = verdicts.get(char, True) and rep.verdicts[char]
    return {"reports": reports, "worst": worst, "verdicts": verdicts,
            "passed": all(verdicts.values())}


def h_finest_of(window):
    return min(abs(h) for sched in window for row in sched.rows for h in row)


def _cell_index_of(dom, x):
    # pairing callbacks receive node coordinates replicated per atom; recover
    # flat cell indices from the coordinates
    idx = np.rint((x - np.asarray(dom.origin)) / dom.spacing).astype(int)
    flat = np.zeros(x.shape[0], dtype=int)
    stride = 1
    for k in reversed(range(dom.dim)):
        flat += idx[:, k] * stride
        stride *= dom.shape[k]
    return flat


def _default_checker_cutoff(u, F, frame, coarsest_window):
    jet = jet_difference_quotients(u, frame, coarsest_window[0])[F.order - 1]
    scale = float(np.max(np.linalg.norm(
        jet.values[u.domain.mask()], axis=-1)))
    return 1e6 * max(scale, 1.0)


def _finite_atom_residuals(field_lvl, residual_fn, interior, dom):
    k = field_lvl.n_atoms
    x = dom.node_coords().reshape(-1, dom.dim)
    x_rep = np.repeat(x, k, axis=0)
    pts = field_lvl.points.reshape(-1, field_lvl.space_dim)
    res = np.linalg.norm(residual_fn(x_rep, pts), axis=1)
    res = res.reshape(dom.shape + (k,))
    res = np.where(field_lvl.infinite, 0.0, res)
    sup_cell = res.max(axis=-1)
    int_cell = np.sum(np.where(field_lvl.infinite, 0.0, field_lvl.weights) * res, axis=-1)
    field = GridFunction(dom, np.where(dom.mask(), sup_cell, 0.0)[..., None])
    return float(sup_cell[interior].max()), float(int_cell[interior].max()), field


def _distance_residual(cut, F, x_flat, uval_flat, f_flat, R, dom, interior,
                       coefficient_units):
    """Distance from cut-off jets to the zero set, optionally rescaled to
    coefficient units by a per-cell operator-norm estimate."""
    vals = cut.values.reshape(-1, F.jet_dim)
    if F.linear_in_jet:
        L, c = F.jet_linearization(x_flat, uval_flat)
        res = np.einsum("cmd,cd->cm", L, vals) + c - f_flat
        dist = np.zeros(vals.shape[0])
        lip = np.zeros(vals.shape[0])
        pinv = np.linalg.pinv(L)
        dist = np.linalg.norm(np.einsum("cdm,cm->cd", pinv, res), axis=1)
        lip = np.linalg.norm(L, axis=(1, 2))
    else:
        pts = F.zero_set_oracle(x_flat, uval_flat, R)
        diffs = vals[:, None, :] - pts
        dist = np.min(np.linalg.norm(diffs, axis=2), axis=1)
        # local slope estimate of the coefficients near the ball
        probe = F.evaluate(x_flat, uval_flat, vals)
        denom = np.maximum(dist, 1e-30)
        lip = np.linalg.norm(probe - f_flat, axis=1) / denom
    out = (dist * lip if coefficient_units else dist).reshape(dom.shape)
    return float(out[interior].max())


def _non_increasing(seq, slack=0.1):
    return all(seq[k + 1] <= seq[k] * (1 + slack) + 1e-14 for k in range(len(seq) - 1))
