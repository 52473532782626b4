"""Regularized solves of degenerate linear tensor systems and the nearness iteration.

The linear problem contracts a factored fourth-order tensor with the
hessian.  Degenerate tensors are regularized into strictly rank-one
positive ones, each regularized problem is solved with second-order central
differences and zero Dirichlet data, and the projected solution triple
(values, gradient, hessian restricted to the tensor's subspaces) is
extrapolated to the vanishing-regularization limit.  Fully nonlinear
systems close to the linear one are solved by a fixed-point iteration whose
contraction factor comes from the nearness constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import GridFunction, gradient_central, hessian_central, shift_array
from .tensors import (Decomposition, canonicalize_decomposition,
                      ranges_and_subspaces, reconstruct, regularize)

SOLVER_TOL = 1e-10


@dataclass
class FibreData:
    """Projected solution triple: values, gradient and hessian components
    restricted to the admissible subspaces of the tensor."""

    sigma_u: GridFunction
    pi_Du: GridFunction
    xi_D2u: GridFunction

    def norms(self):
        return fibre_norms(self)


def fibre_norms(fd):
    """Cell-volume-weighted discrete L2 norms of the three components."""
    return (fd.sigma_u.l2_norm(), fd.pi_Du.l2_norm(), fd.xi_D2u.l2_norm())


class DiscreteOperator:
    """Sparse second-order central-difference discretization of the tensor
    contraction with the hessian, zero Dirichlet data on the mask."""

    def __init__(self, tensor, domain):
        if domain.dim != tensor.n:
            raise ValueError("tensor domain dimension does not match the grid")
        self.tensor = tensor
        self.domain = domain
        self.N = tensor.N
        self.mask = domain.mask()
        self.index = -np.ones(domain.shape, dtype=int)
        self.index[self.mask] = np.arange(int(self.mask.sum()))
        self.n_cells = int(self.mask.sum())
        self.matrix = self._assemble()
        self._lu = None

    def _assemble(self):
        dom = self.domain
        h = dom.spacing
        n, N = dom.dim, self.N
        ent = self.tensor.entries
        # symmetric-in-(i,j) effective coefficients
        eff = 0.5 * (ent + ent.transpose(0, 3, 2, 1))

        rows, cols, vals = [], [], []
        cell_idx = self.index[self.mask]

        def add(alpha, beta, offset, coeff):
            if coeff == 0.0:
                return
            neigh = self.index.copy()
            for k, s in enumerate(offset):
                if s:
                    neigh = shift_array(neigh, k, s, fill=-1)
            neigh = neigh[self.mask]
            ok = neigh >= 0
            rows.append(cell_idx[ok] * N + alpha)
            cols.append(neigh[ok] * N + beta)
            vals.append(np.full(ok.sum(), coeff))

        for alpha in range(N):
            for beta in range(N):
                for i in range(n):
                    for j in range(n):
                        c = eff[alpha, i, beta, j]
                        if c == 0.0:
                            continue
                        if i == j:
                            off_p = [0] * n
                            off_p[i] = 1
                            off_m = [0] * n
                            off_m[i] = -1
                            add(alpha, beta, off_p, c / h**2)
                            add(alpha, beta, off_m, c / h**2)
                            add(alpha, beta, [0] * n, -2 * c / h**2)
                        elif i < j:
                            for si in (1, -1):
                                for sj in (1, -1):
                                    off = [0] * n
                                    off[i] = si
                                    off[j] = sj
                                    add(alpha, beta, off, si * sj * 2 * c / (4 * h**2))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        m = sp.coo_matrix((vals, (rows, cols)),
                          shape=(self.n_cells * N, self.n_cells * N))
        return m.tocsc()

    def factorize(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.matrix)
            except RuntimeError as exc:
                cond = self.condition_estimate()
                raise ArithmeticError(
                    f"discrete operator numerically singular "
                    f"(condition estimate {cond:.2e}): {exc}") from exc
        return self._lu

    def condition_estimate(self):
        try:
            norm_a = spla.onenormest(self.matrix)
            lu = spla.splu(self.matrix)
            op = spla.LinearOperator(self.matrix.shape, matvec=lu.solve)
            return float(norm_a * spla.onenormest(op))
        except Exception:
            return float("inf")

    def rhs_vector(self, f):
        vals = f.values[self.mask]
        return vals.reshape(-1)

    def solve(self, f, solver_tol=SOLVER_TOL):
        lu = self.factorize()
        b = self.rhs_vector(f)
        x = lu.solve(b)
        if not np.isfinite(x).all():
            raise ArithmeticError("linear solve produced non-finite values "
                                  f"(condition estimate {self.condition_estimate():.2e})")
        resid = self.matrix @ x - b
        bnorm = np.linalg.norm(b)
        if bnorm > 0 and np.linalg.norm(resid) > solver_tol * bnorm:
            # one step of iterative refinement before giving up
            x = x + lu.solve(-resid)
            resid = self.matrix @ x - b
            if np.linalg.norm(resid) > solver_tol * bnorm:
                raise ArithmeticError(
                    "discrete residual above the solver tolerance: "
                    f"{np.linalg.norm(resid) / bnorm:.3e}")
        out = np.zeros(self.domain.shape + (self.N,))
        out[self.mask] = x.reshape(-1, self.N)
        return GridFunction(self.domain, out)


def assemble_and_solve_eps(a_eps, f, domain, solver_tol=SOLVER_TOL):
    """Solve the coupled second-order system for one regularized tensor."""
    if f.components != a_eps.N:
        raise ValueError("right-hand side component count mismatch")
    op = DiscreteOperator(a_eps, domain)
    return op.solve(f, solver_tol=solver_tol)


@dataclass
class LinearSolveReport:
    eps_sequence: list
    cauchy_differences: list
    final_residual: float
    compatibility_defect: float
    condition_checked: bool = True

    def to_json_dict(self):
        return {"eps_sequence": [float(e) for e in self.eps_sequence],
                "cauchy_differences": [float(c) for c in self.cauchy_differences],
                "final_residual": float(self.final_residual),
                "compatibility_defect": float(self.compatibility_defect)}


def _project_field(proj, gf):
    vals = proj.project(gf.values.reshape(gf.domain.shape + proj.ambient_shape))
    return GridFunction(gf.domain, vals.reshape(gf.values.shape))


def fibre_projections(u, data, one_sided_boundary=False):
    """Project the solution, its central-difference gradient and hessian onto
    the tensor subspaces."""
    sigma_u = _project_field(data.sigma, u)
    pi_du = _project_field(data.pi, gradient_central(u))
    xi_d2u = _project_field(data.xi, hessian_central(u, one_sided_boundary=one_sided_boundary))
    return FibreData(sigma_u=sigma_u, pi_Du=pi_du, xi_D2u=xi_d2u)


def check_sigma_valued(f, data, tol=1e-8):
    """Relative size of the right-hand-side component outside the admissible
    value subspace."""
    defect = f.values - data.sigma.project(f.values)
    denom = max(float(np.max(np.abs(f.values))), 1e-300)
    return float(np.max(np.abs(defect))) / denom


def solve_linear(dec, f, eps_sequence, domain=None, solver_tol=SOLVER_TOL,
                 compat_tol=1e-8, operators=None, subspaces=None):
    """Vanishing-regularization solve of the factored linear system.

    Solves the strictly rank-one positive regularization for each epsilon,
    projects onto the tensor subspaces and extrapolates linearly in epsilon
    to zero.  The right-hand side must take values in the admissible value
    subspace; a mismatch is a structural incompatibility, not a numerical
    failure, and is rejected.
    """
    domain = f.domain if domain is None else domain
    eps_sequence = list(eps_sequence)
    if len(eps_sequence) < 2 or any(e2 >= e1 for e1, e2 in zip(eps_sequence, eps_sequence[1:])):
        raise ValueError("need a strictly decreasing epsilon sequence")
    data = ranges_and_subspaces(dec, cross_check=False) if subspaces is None else subspaces
    defect = check_sigma_valued(f, data)
    if defect > compat_tol:
        raise ValueError(
            "right-hand side has a component outside the admissible value "
            f"subspace (relative size {defect:.3e}); the degenerate system is "
            "incompatible with it")

    canon = canonicalize_decomposition(dec)
    triples = []
    for k, eps in enumerate(eps_sequence):
        if operators is not None and eps in operators:
            op = operators[eps]
        else:
            a_eps = regularize(canon, eps)
            op = DiscreteOperator(a_eps, domain)
            if operators is not None:
                operators[eps] = op
        u_eps = op.solve(f, solver_tol=solver_tol)
        triples.append(fibre_projections(u_eps, data))

    cauchy = []
    for a, b in zip(triples, triples[1:]):
        cauchy.append((a.sigma_u - b.sigma_u).l2_norm()
                      + (a.pi_Du - b.pi_Du).l2_norm()
                      + (a.xi_D2u - b.xi_D2u).l2_norm())
    if len(cauchy) >= 2 and cauchy[-1] > 2.0 * cauchy[0] + 1e-12:
        raise ArithmeticError("epsilon refinement is not settling; "
                              f"differences {cauchy}")

    e1, e2 = eps_sequence[-2], eps_sequence[-1]
    w = e2 / (e1 - e2)

    def extrapolate(a, b):
        return GridFunction(a.domain, b.values + (b.values - a.values) * w)

    fd = FibreData(
        sigma_u=extrapolate(triples[-2].sigma_u, triples[-1].sigma_u),
        pi_Du=extrapolate(triples[-2].pi_Du, triples[-1].pi_Du),
        xi_D2u=extrapolate(triples[-2].xi_D2u, triples[-1].xi_D2u),
    )
    tensor = reconstruct(dec)
    resid = _tensor_hessian_residual(tensor, fd.xi_D2u, f)
    report = LinearSolveReport(eps_sequence=eps_sequence, cauchy_differences=cauchy,
                               final_residual=resid, compatibility_defect=defect)
    return fd, report


def _tensor_hessian_residual(tensor, xi_d2u, f):
    dom = f.domain
    N, n = tensor.N, tensor.n
    X = xi_d2u.values.reshape(dom.shape + (N, n, n))
    Av = np.einsum("aibj,...bij->...a", tensor.entries, X)
    resid = GridFunction(dom, Av - f.values)
    interior = dom.interior_mask(2 * dom.spacing)
    denom = max(f.l2_norm(where=interior), 1e-300)
    return resid.l2_norm(where=interior) / denom


def verify_hessian_estimate(dec, u, eps, tol_est=0.05, one_sided_boundary=False,
                            subspaces=None):
    """Check the degenerate hessian bound on one boundary-vanishing map.

    Both sides use the same central-difference hessian; the factored tensor
    is canonicalized (uniform minimal factor eigenvalues, admissible B scale)
    before regularizing, which leaves the assembled tensor and its rank-one
    energy unchanged.  When the tensor is the identity contraction the
    classical convex-domain hessian-vs-trace comparison is reported as well.
    """
    dom = u.domain
    data = ranges_and_subspaces(dec, cross_check=False) if subspaces is None else subspaces
    canon = canonicalize_decomposition(dec)
    a_eps = regularize(canon, eps)
    hess = hessian_central(u, one_sided_boundary=one_sided_boundary)
    N, n = dec.N, dec.n
    X = hess.values.reshape(dom.shape + (N, n, n))

    xi_part = _project_field(data.xi, hess)
    lhs = xi_part.l2_norm()
    Av = np.einsum("aibj,...bij->...a", a_eps.entries, X)
    rhs_field = GridFunction(dom, Av)
    rhs = rhs_field.l2_norm() / data.nu

    report = {
        "lhs": float(lhs),
        "rhs": float(rhs),
        "nu": float(data.nu),
        "eps": float(eps),
        "passed": bool(lhs <= rhs * (1 + tol_est)),
        "tol_est": float(tol_est),
    }
    identity = reconstruct(dec).entries
    lap = np.einsum("ab,ij->aibj", np.eye(N), np.eye(n))
    if np.allclose(identity, lap, atol=1e-12):
        full_hess = hess.l2_norm()
        trace = GridFunction(dom, np.einsum("...bii->...b", X))
        report["hessian_norm"] = float(full_hess)
        report["trace_norm"] = float(trace.l2_norm())
    return report


@dataclass
class EllipticityCertificate:
    """Nearness constants tying a nonlinear system to a factored linear one."""

    dec: Decomposition
    A_of_x: GridFunction
    B: float
    C: float
    margin_stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.B < 0 or self.C < 0 or self.B + self.C >= 1:
            raise ValueError("need nonnegative constants with B + C < 1")
        mask = self.A_of_x.domain.mask()
        vals = self.A_of_x.values[mask]
        if vals.min() <= 0 or not np.isfinite(vals).all():
            raise ValueError("scaling function must be positive and finite")

    @property
    def kappa(self):
        return self.B + self.C


def make_nonlinearity(dec, A_of_x, gamma, g=None, lipschitz_g=0.0, subspaces=None):
    """Factory of certified nonlinear systems near a factored linear one.

    ``F(x, X) = A(x)^(-1) [(1 + gamma) T : X + P_sigma g(P_xi X)]`` with ``g``
    Lipschitz of constant ``lipschitz_g``.  Valid when
    ``nu * |gamma| + lipschitz_g < nu``; the certificate carries
    ``B = lipschitz_g / nu`` and ``C = |gamma|`` (derivation: subtract the
    tensor action from the scaled increment and bound the two remainders
    separately).  The returned evaluator is constant along the complement of
    the hessian subspace by construction.
    """
    data = ranges_and_subspaces(dec, cross_check=False) if subspaces is None else subspaces
    nu = data.nu
    if nu * abs(gamma) + lipschitz_g >= nu:
        raise ValueError("parameters violate the nearness requirement "
                         f"nu*|gamma| + Lip(g) < nu (nu={nu:.3e})")
    tensor = reconstruct(dec)
    N, n = dec.N, dec.n
    dom = A_of_x.domain
    a_flat = A_of_x.values.reshape(-1)
    # masked-out nodes carry zeroed scaling values; results there are unused
    a_flat = np.where(a_flat > 0, a_flat, 1.0)

    from .checker import CoefficientSystem
    from .checker import _cell_index_of

    def evaluate(x, uval, X):
        idx = _cell_index_of(dom, x)
        Xp = data.xi.project(X.reshape((-1, N, n, n)))
        lin = np.einsum("aibj,cbij->ca", tensor.entries, Xp)
        out = (1.0 + gamma) * lin
        if g is not None:
            gv = np.asarray(g(Xp.reshape(X.shape[0], -1)), float)
            out = out + data.sigma.project(gv)
        return out / a_flat[idx][:, None]

    system = CoefficientSystem(order=2, n=n, N=N, M=N, evaluate=evaluate,
                               u_source="value", name="certified-nonlinearity")
    cert = EllipticityCertificate(dec=dec, A_of_x=A_of_x,
                                  B=lipschitz_g / nu, C=abs(gamma))
    return system, cert


def check_degenerate_ellipticity(F, cert, sample_count=200, rng=None, tol=1e-9,
                                 subspaces=None):
    """Sample the nearness inequality and the value-subspace constraint.

    Draws cells and tensor pairs, evaluates the increment defect and compares
    it against the certified bound; reports the worst margin (negative means
    a violation) and the largest component outside the value subspace.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    dec = cert.dec
    data = ranges_and_subspaces(dec, cross_check=False) if subspaces is None else subspaces
    tensor = reconstruct(dec)
    N, n = dec.N, dec.n
    dom = cert.A_of_x.domain
    mask_idx = np.argwhere(dom.mask())
    pick = mask_idx[rng.integers(0, len(mask_idx), size=sample_count)]
    x = np.asarray(dom.origin) + dom.spacing * pick
    a_vals = cert.A_of_x.values[tuple(pick.T)][:, 0]

    D = N * n * n
    X = rng.standard_normal((sample_count, D))
    Z = rng.standard_normal((sample_count, D))
    X = 0.5 * (X.reshape(-1, N, n, n) + X.reshape(-1, N, n, n).transpose(0, 1, 3, 2)).reshape(-1, D)
    Z = 0.5 * (Z.reshape(-1, N, n, n) + Z.reshape(-1, N, n, n).transpose(0, 1, 3, 2)).reshape(-1, D)

    FZ = F.evaluate(x, None, X + Z) - F.evaluate(x, None, X)
    AZ = np.einsum("aibj,cbij->ca", tensor.entries, Z.reshape(-1, N, n, n))
    xiZ = data.xi.project(Z.reshape(-1, N, n, n)).reshape(-1, D)
    lhs = np.linalg.norm(AZ - a_vals[:, None] * FZ, axis=1)
    rhs = (cert.B * data.nu * np.linalg.norm(xiZ, axis=1)
           + cert.C * np.linalg.norm(AZ, axis=1))
    margins = rhs + tol - lhs
    FX = F.evaluate(x, None, X)
    sigma_defect = np.max(np.abs(FX - data.sigma.project(FX)))
    violations = int(np.sum(margins < 0))
    return {
        "worst_margin": float(margins.min()),
        "violations": violations,
        "sigma_defect": float(sigma_defect),
        "samples": int(sample_count),
        "passed": bool(violations == 0 and sigma_defect <= 1e-6),
    }


@dataclass
class IterationLog:
    increments: list
    ratios: list
    residuals: list

    def to_rows(self):
        rows = []
        for k, inc in enumerate(self.increments):
            rows.append({"iteration": k + 1, "increment": inc,
                         "ratio": self.ratios[k] if k < len(self.ratios) else "",
                         "residual": self.residuals[k]})
        return rows


def campanato_solve(F, cert, f, eps_sequence, domain=None, max_iter=40,
                    tol=1e-10, tol_final=1e-6, solver_tol=SOLVER_TOL):
    """Fixed-point solve of a certified nonlinear system.

    Iterates ``b <- b - A(x) (F(x, G2(u_b)) - f)`` where ``u_b`` solves the
    factored linear problem with data ``b``; the nearness constants make the
    update a contraction with factor ``kappa = B + C``.  Stops when the
    update is small relative to the data; three consecutive non-contractive
    steps abort with a certificate-violation error.
    """
    domain = f.domain if domain is None else domain
    dec = cert.dec
    data = ranges_and_subspaces(dec, cross_check=False)
    defect = check_sigma_valued(f, data)
    if defect > 1e-8:
        raise ValueError("right-hand side not valued in the admissible subspace")

    dom = domain
    a_vals = cert.A_of_x.values
    x_flat = dom.node_coords().reshape(-1, dom.dim)
    f_norm = max(f.l2_norm(), 1e-300)

    operators = {}
    b = GridFunction(dom, a_vals * f.values)
    log = IterationLog(increments=[], ratios=[], residuals=[])
    bad_streak = 0
    fd = None
    for k in range(max_iter):
        fd, _ = solve_linear(dec, b, eps_sequence, domain=dom,
                             solver_tol=solver_tol, operators=operators,
                             subspaces=data)
        FX = F.evaluate(x_flat, None,
                        fd.xi_D2u.values.reshape(-1, fd.xi_D2u.components))
        FX = FX.reshape(dom.shape + (dec.N,))
        resid_field = GridFunction(dom, FX - f.values)
        resid = resid_field.l2_norm() / f_norm
        update = GridFunction(dom, a_vals * resid_field.values)
        b_next = b - update
        inc = update.l2_norm()
        log.increments.append(inc)
        log.residuals.append(resid)
        if len(log.increments) >= 2 and log.increments[-2] > 0:
            ratio = inc / log.increments[-2]
            log.ratios.append(ratio)
            if ratio >= 1.0:
                bad_streak += 1
                if bad_streak >= 3:
                    raise ArithmeticError(
                        "iteration is not contracting (three consecutive "
                        "ratios >= 1); the nearness certificate looks violated")
            else:
                bad_streak = 0
        b = b_next
        if inc <= tol * f_norm:
            break
    else:
        if log.residuals[-1] > tol_final:
            raise ArithmeticError(f"no convergence within {max_iter} iterations "
                                  f"(last residual {log.residuals[-1]:.3e})")
    final_resid = log.residuals[-1]
    if final_resid > tol_final:
        raise ArithmeticError(
            f"converged iteration but final residual {final_resid:.3e} "
            f"exceeds {tol_final:.1e}")
    return fd, log


def poincare_check(u, directions, tol_factor=1.0):
    """Directional Poincare comparison for boundary-vanishing grid functions.

    For each pair ``(eta, a)`` checks that the norm of the projected values is
    bounded by the domain diameter times the norm of the discrete directional
    derivative, with an O(h) discretization allowance.
    """
    dom = u.domain
    diam = dom.diameter()
    h = dom.spacing
    grad = gradient_central(u)
    g = grad.values.reshape(dom.shape + (u.components, dom.dim))
    results = []
    for eta, a in directions:
        eta = np.asarray(eta, float)
        a = np.asarray(a, float)
        eta = eta / np.linalg.norm(eta)
        a = a / np.linalg.norm(a)
        proj = GridFunction(dom, u.values @ eta)
        dproj = GridFunction(dom, np.einsum("...cd,c,d->...", g, eta, a)[..., None])
        lhs = proj.l2_norm()
        rhs = diam * dproj.l2_norm()
        tol_disc = tol_factor * h * max(dproj.l2_norm(), 1.0)
        results.append({"eta": eta.tolist(), "a": a.tolist(),
                        "lhs": float(lhs), "rhs": float(rhs),
                        "tol_disc": float(tol_disc),
                        "passed": bool(lhs <= rhs + tol_disc)})
    return {"results": results,
            "passed": all(r["passed"] for r in results),
            "diameter": float(diam)}


def boundary_ring_norm(gf):
    """Cell-weighted L2 norm over the ring of active cells that touch the
    masked-out region."""
    return gf.l2_norm(where=gf.domain.boundary_ring())
