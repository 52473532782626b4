import numpy as np
import pytest

from diffusepde.checker import (CheckReport, check_dsolution, cutoff,
                                default_phi_family, eikonal_system,
                                infinity_laplace_system, tangent_system,
                                tensor_system)
from diffusepde.frames import HSchedule, build_frame, schedule_window
from diffusepde.grids import Domain, GridFunction
from diffusepde.measures import bump
from diffusepde.tensors import Tensor4


def manufactured_laplace(res=64, eta=(1.0, 0.0)):
    dom = Domain.unit_square(res)
    x = dom.node_coords()
    eta = np.asarray(eta)
    base = np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
    u = GridFunction(dom, base[..., None] * eta)
    f = GridFunction(dom, -2 * np.pi**2 * base[..., None] * eta)
    return dom, u, f


def default_windows(dom, levels=3, base_factor=8, count=2, order=2):
    h = dom.spacing
    return [schedule_window(base_factor * h / 2**lvl, count, ratio=0.5, order=order)
            for lvl in range(levels)]


# coefficient systems -------------------------------------------------------

def test_infinity_laplace_full_rank_drops_projection():
    F = infinity_laplace_system(2)
    P = np.array([[1.0, 0.0], [0.0, 2.0]])  # full rank
    X = np.arange(8, dtype=float).reshape(2, 2, 2)
    X = 0.5 * (X + X.transpose(0, 2, 1))
    x = np.zeros((1, 2))
    out = F.evaluate(x, P.reshape(1, 4), X.reshape(1, 8))[0]
    expected = np.einsum("ai,bj,bij->a", P, P, X)
    assert np.allclose(out, expected)


def test_infinity_laplace_zero_gradient():
    F = infinity_laplace_system(2)
    X = np.ones((1, 8))
    out = F.evaluate(np.zeros((1, 2)), np.zeros((1, 4)), X)
    assert np.allclose(out, 0.0)


def test_infinity_laplace_scalar_case():
    # one dimension: the system collapses to (u')^2 u''
    F = infinity_laplace_system(1)
    P = np.array([[3.0]])
    X = np.array([[2.0]])
    out = F.evaluate(np.zeros((1, 1)), P, X)
    assert out[0, 0] == pytest.approx(9.0 * 2.0)


def test_infinity_laplace_rank_deficient_adds_orthogonal_term():
    F = infinity_laplace_system(2)
    P = np.zeros((1, 4))
    P[0, 0] = 2.0  # gradient e1 (x) e1: range span{e1}
    X = np.zeros((1, 2, 2, 2))
    X[0, 1, 0, 0] = 1.0  # second-component pure-11 curvature
    out = F.evaluate(np.zeros((1, 2)), P, X.reshape(1, 8))
    # coefficient: P(x)P + |P|^2 proj_{e2} (x) I acting on X
    assert out[0, 0] == pytest.approx(0.0)
    assert out[0, 1] == pytest.approx(4.0 * 1.0)


def test_eikonal_tangent_matches_hand_contraction():
    base = eikonal_system(2, 2, speed=1.5)
    tang = tangent_system(base)
    assert tang.order == 2 and tang.M == 2
    P = np.array([[0.3, -0.4], [1.0, 0.2]])
    X = np.arange(8, dtype=float).reshape(2, 2, 2)
    X = 0.5 * (X + X.transpose(0, 2, 1))
    out = tang.evaluate(np.zeros((1, 2)), P.reshape(1, 4), X.reshape(1, 8))[0]
    # per direction i: 2 sum_{b j} P[b, j] X[b, j, i]
    expected = 2 * np.einsum("bj,bji->i", P, X)
    assert np.allclose(out, expected)
    assert not tang.fd_fallback


def test_linear_system_tangent_with_fd_fallback():
    # F(P) = a . P - c with fixed coefficients: the jet derivative is a itself
    a = np.array([1.0, -2.0])

    def evaluate(x, uval, X):
        return (X @ a)[:, None] - 3.0

    from diffusepde.checker import CoefficientSystem
    base = CoefficientSystem(order=1, n=2, N=1, M=1, evaluate=evaluate,
                             name="affine")
    tang = tangent_system(base)
    assert tang.fd_fallback
    P = np.zeros((1, 2))
    X = np.arange(4, dtype=float).reshape(1, 1, 2, 2)
    X = 0.5 * (X + X.transpose(0, 1, 3, 2))
    out = tang.evaluate(np.zeros((1, 2)), P, X.reshape(1, 4))[0]
    expected = np.einsum("j,ji->i", a, X[0, 0])
    assert np.allclose(out, expected, atol=1e-5)


def test_linear_tangent_with_space_dependence():
    # F(x, P) = a . P - f(x): the differentiated system reads a :: X = Df
    a = np.array([2.0, 1.0])

    def evaluate(x, uval, X):
        return (X @ a - np.sin(x[:, 0]))[:, None]

    def F_x(x, uval, P):
        return np.stack([-np.cos(x[:, 0]), np.zeros(x.shape[0])],
                        axis=1)[:, None, :]

    def F_X(x, uval, P):
        return np.broadcast_to(a, (x.shape[0], 1, 2)).copy()

    from diffusepde.checker import CoefficientSystem
    base = CoefficientSystem(order=1, n=2, N=1, M=1, evaluate=evaluate,
                             name="affine-x")
    tang = tangent_system(base, F_x=F_x, F_X=F_X)
    x = np.array([[0.3, 0.7]])
    X = np.arange(4, dtype=float).reshape(1, 1, 2, 2)
    X = 0.5 * (X + X.transpose(0, 1, 3, 2))
    out = tang.evaluate(x, np.zeros((1, 2)), X.reshape(1, 4))[0]
    expected = (np.einsum("j,ji->i", a, X[0, 0])
                - np.array([np.cos(0.3), 0.0]))
    assert np.allclose(out, expected)


def test_constant_system_tangent_vanishes():
    from diffusepde.checker import CoefficientSystem
    base = CoefficientSystem(order=1, n=2, N=1, M=1,
                             evaluate=lambda x, u, X: np.full((x.shape[0], 1), 7.0),
                             name="constant")
    tang = tangent_system(base)
    X = np.random.default_rng(0).standard_normal((3, 4))
    out = tang.evaluate(np.zeros((3, 2)), np.zeros((3, 2)), X)
    assert np.allclose(out, 0.0, atol=1e-5)


# cut-offs -------------------------------------------------------------------

def test_cutoff_identity_inside_ball():
    dom = Domain.unit_square(8)
    U = GridFunction(dom, np.full(dom.shape + (8,), 0.1))
    F = tensor_system(Tensor4.laplacian(2, 2))
    u = GridFunction(dom, np.zeros(dom.shape + (2,)))
    out = cutoff(U, F, u, R=10.0)
    assert np.array_equal(out.values, U.values)


def test_cutoff_linear_overflow_to_zero():
    dom = Domain.unit_square(8)
    vals = np.full(dom.shape + (8,), 0.1)
    vals[4, 4] = 100.0
    U = GridFunction(dom, vals)
    F = tensor_system(Tensor4.laplacian(2, 2))
    u = GridFunction(dom, np.zeros(dom.shape + (2,)))
    out = cutoff(U, F, u, R=10.0)
    assert np.allclose(out.values[4, 4], 0.0)
    assert np.allclose(out.values[3, 3], 0.1)


def test_cutoff_eikonal_projects_to_sphere():
    dom = Domain.unit_square(8)
    speed = 2.0
    F = eikonal_system(2, 1, speed)
    vals = np.zeros(dom.shape + (2,))
    vals[4, 4] = [30.0, 40.0]
    U = GridFunction(dom, vals)
    u = GridFunction(dom, np.zeros(dom.shape + (1,)))
    out = cutoff(U, F, u, R=3.0)
    assert np.linalg.norm(out.values[4, 4]) == pytest.approx(speed)
    with pytest.raises(ValueError):
        cutoff(U, F, u, R=1.0)  # ball misses the zero set


# full checker ---------------------------------------------------------------

def test_manufactured_solution_passes_all_characterizations():
    dom, u, f = manufactured_laplace()
    F = tensor_system(Tensor4.laplacian(2, 2))
    fr = build_frame("standard", N=2, n=2)
    rep = check_dsolution(u, F, fr, default_windows(dom), R_list=[100.0], f=f)
    assert rep.passed, rep.residuals
    assert all(rep.trends.values())


def test_perturbed_solution_fails_all_characterizations():
    dom, u, f = manufactured_laplace()
    x = dom.node_coords()
    wob = 1 + 0.5 * np.sin(3 * np.pi * x[..., 0:1]) * np.sin(2 * np.pi * x[..., 1:2])
    pert = GridFunction(dom, u.values * wob)
    F = tensor_system(Tensor4.laplacian(2, 2))
    fr = build_frame("standard", N=2, n=2)
    rep = check_dsolution(pert, F, fr, default_windows(dom), R_list=[100.0], f=f)
    assert not any(rep.verdicts.values()), rep.residuals


def test_noise_keeps_support_residual_bounded_away():
    dom, u, f = manufactured_laplace(res=48)
    rng = np.random.default_rng(0)
    noisy = GridFunction(dom, u.values * (1 + 0.1 * rng.standard_normal(u.values.shape)))
    F = tensor_system(Tensor4.laplacian(2, 2))
    fr = build_frame("standard", N=2, n=2)
    rep = check_dsolution(noisy, F, fr, default_windows(dom), R_list=[100.0], f=f)
    support = rep.residuals["support"]
    assert min(support) > 10 * rep.tolerance
    assert support[-1] >= support[0]  # refining makes rough quotients worse


def test_strong_solution_compatibility_both_directions():
    """The checker verdict matches the strong residual for twice
    differentiable maps: small strong residual iff pass."""
    dom, u, f = manufactured_laplace(res=48)
    F = tensor_system(Tensor4.laplacian(2, 2))
    fr = build_frame("standard", N=2, n=2)
    windows = default_windows(dom)
    good = check_dsolution(u, F, fr, windows, R_list=[50.0], f=f)
    assert good.passed
    wrong_f = GridFunction(dom, 1.25 * f.values)
    bad = check_dsolution(u, F, fr, windows, R_list=[50.0], f=wrong_f)
    assert not bad.passed


def test_monotone_refinement_for_solutions():
    dom, u, f = manufactured_laplace(res=96)
    F = tensor_system(Tensor4.laplacian(2, 2))
    fr = build_frame("standard", N=2, n=2)
    rep = check_dsolution(u, F, fr, default_windows(dom, levels=3), R_list=[50.0], f=f)
    for name, seq in rep.residuals.items():
        for a, b in zip(seq, seq[1:]):
            assert b <= a * 1.1 + 1e-14, (name, seq)


def test_report_serialization_and_metadata():
    dom, u, f = manufactured_laplace(res=32)
    F = tensor_system(Tensor4.laplacian(2, 2))
    fr = build_frame("standard", N=2, n=2)
    rep = check_dsolution(u, F, fr, default_windows(dom, levels=2, base_factor=4),
                          R_list=[50.0], f=f)
    doc = rep.to_json_dict()
    assert set(doc) >= {"residuals", "verdicts", "tolerance", "R_inf", "levels"}
    assert doc["metadata"]["system"] == "linear-tensor"


def test_skipped_characterizations_without_oracle():
    from diffusepde.checker import CoefficientSystem
    dom, u, f = manufactured_laplace(res=32)

    def evaluate(x, uval, X):
        return np.tanh(X[:, :2])  # nonlinear, no oracle supplied

    F = CoefficientSystem(order=2, n=2, N=2, M=2, evaluate=evaluate, name="opaque")
    fr = build_frame("standard", N=2, n=2)
    rep = check_dsolution(u, F, fr, default_windows(dom, levels=2, base_factor=4),
                          R_list=[10.0])
    assert set(rep.skipped) == {"cutoff", "distance"}
    assert "cutoff" not in rep.residuals


def test_schedule_battery_worst_case():
    from diffusepde.checker import check_dsolution_battery
    from diffusepde.frames import schedule_battery
    dom, u, f = manufactured_laplace(res=64)
    F = tensor_system(Tensor4.laplacian(2, 2))
    fr = build_frame("standard", N=2, n=2)
    h = dom.spacing
    batteries = schedule_battery(8 * h, levels=2, count=2, order=2,
                                 spacing=h, rng=np.random.default_rng(5))
    assert set(batteries) == {"dyadic", "geometric3", "randomized"}
    out = check_dsolution_battery(u, F, fr, batteries, f=f)
    assert out["passed"], out["worst"]
    # worst-case bookkeeping names the offending family
    assert all(fam in batteries for fam, _ in out["worst"].values())


def test_phi_family_shapes():
    dom, u, f = manufactured_laplace(res=32)
    fr = build_frame("standard", N=2, n=2)
    from diffusepde.measures import diffuse_field
    h = dom.spacing
    field = diffuse_field(u, fr, 2, schedule_window(4 * h, 2, 0.5, order=2), 1e9)
    phis = default_phi_family(field)
    assert len(phis) == 6
    assert all(p.compactly_supported for p in phis)


def test_sawtooth_escaping_cluster_pairing_decreases():
    """A witness centered on the coarse-level curvature cluster sees the mass
    march to infinity: its pairing decays to zero across refinements."""
    from diffusepde.reference import sawtooth_map
    case = sawtooth_map(1.0, 2, 128)
    u = case.grids["map"]
    dom = u.domain
    h = dom.spacing
    fr = build_frame("standard", N=2, n=2)
    F = infinity_laplace_system(2)
    # one schedule per level with steps (s, s): curvature atoms live on the
    # lattice {2mh/s^2} which coarsens by a factor four per refinement
    windows = [[HSchedule.second_order(8 * h)],
               [HSchedule.second_order(4 * h)],
               [HSchedule.second_order(2 * h)]]
    center = np.zeros(8)
    center[0] = -1.0 / (32 * h)  # smallest level-0 curvature magnitude
    phi = bump(center, radius=0.5 / (32 * h))
    rep = check_dsolution(u, F, fr, windows, R_list=[1e6],
                          Phi_family=[phi])
    pairing = rep.residuals["pairing"]
    assert pairing[0] > 0.0
    assert pairing[-1] == 0.0
    assert pairing[0] >= pairing[1] >= pairing[2]
