import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffusepde.frames import (Frame, HSchedule, build_frame,
                               difference_quotient_1, expand_in_frame,
                               jet_difference_quotients, reassemble_from_frame,
                               schedule_window, symmetrized_outer)
from diffusepde.grids import Domain, GridFunction
from diffusepde.reference import fat_cantor_indicator, sawtooth_map


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_standard_frame_canonical():
    fr = build_frame("standard", N=2, n=3)
    assert np.array_equal(fr.E_range, np.eye(2))
    assert np.array_equal(fr.E_domain[0], np.eye(3))


def test_frame_from_diag_decomposition(diag_dec):
    fr = build_frame("from_decomposition", dec=diag_dec)
    assert np.allclose(np.abs(fr.E_range), np.eye(2))
    # domain frames list eigenvectors ascending, so the range vector comes last
    for a in range(2):
        assert np.allclose(np.abs(fr.E_domain[a, -1]), [1.0, 0.0])


def test_frame_completion_deterministic():
    dec_b = (np.diag([1.0, 0.0, 0.0]), np.zeros((3, 3)), np.zeros((3, 3)))
    dec_a = (np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    from diffusepde.tensors import Decomposition
    dec = Decomposition(dec_b, dec_a)
    f1 = build_frame("from_decomposition", dec=dec)
    f2 = build_frame("from_decomposition", dec=dec)
    assert np.array_equal(f1.E_range, f2.E_range)
    assert np.array_equal(f1.E_domain, f2.E_domain)
    assert f1.E_range.shape == (3, 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_frame_orthonormality_random_rotations(seed):
    rng = np.random.default_rng(seed)
    q_n = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    q_d = np.stack([np.linalg.qr(rng.standard_normal((2, 2)))[0] for _ in range(3)])
    fr = Frame(q_n, q_d)
    assert np.linalg.norm(fr.E_range @ fr.E_range.T - np.eye(3)) < 1e-10
    for a in range(3):
        gram = fr.E_domain[a] @ fr.E_domain[a].T
        assert np.linalg.norm(gram - np.eye(2)) < 1e-10


def test_induced_basis_orthonormal():
    rng = np.random.default_rng(3)
    q_n = np.linalg.qr(rng.standard_normal((2, 2)))[0]
    q_d = np.stack([np.linalg.qr(rng.standard_normal((3, 3)))[0] for _ in range(2)])
    fr = Frame(q_n, q_d)
    elems = []
    for alpha in range(2):
        for idx in itertools.combinations_with_replacement(range(3), 2):
            elems.append(fr.induced_basis_element(alpha, idx).reshape(-1))
    gram = np.array([[u @ v for v in elems] for u in elems])
    assert np.linalg.norm(gram - np.eye(len(elems))) < 1e-10


def test_symmetrized_outer_symmetric():
    t = symmetrized_outer([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert np.allclose(t, t.T)
    assert t[0, 1] == pytest.approx(0.5)


def test_expand_standard_frame_is_identity_layout():
    fr = build_frame("standard", N=2, n=2)
    t = np.arange(4, dtype=float).reshape(2, 2)
    labels, coeffs = expand_in_frame(t, fr)
    lookup = dict(zip(labels, coeffs))
    for a in range(2):
        for i in range(2):
            assert lookup[(a, i)] == t[a, i]


def test_expand_rotated_indicator():
    rng = np.random.default_rng(5)
    q_n = np.linalg.qr(rng.standard_normal((2, 2)))[0]
    q_d = np.stack([np.linalg.qr(rng.standard_normal((2, 2)))[0] for _ in range(2)])
    fr = Frame(q_n, q_d)
    t = fr.induced_basis_element(0, (0,))
    labels, coeffs = expand_in_frame(t, fr)
    lookup = dict(zip(labels, coeffs))
    assert lookup[(0, 0)] == pytest.approx(1.0)
    others = [v for k, v in lookup.items() if k != (0, 0)]
    assert np.max(np.abs(others)) < 1e-12


def test_expand_reassemble_roundtrip():
    rng = np.random.default_rng(6)
    q_n = np.linalg.qr(rng.standard_normal((2, 2)))[0]
    q_d = np.stack([np.linalg.qr(rng.standard_normal((3, 3)))[0] for _ in range(2)])
    fr = Frame(q_n, q_d)
    t = rng.standard_normal((2, 3, 3))
    t = 0.5 * (t + t.transpose(0, 2, 1))
    labels, coeffs = expand_in_frame(t, fr)
    back = reassemble_from_frame(labels, coeffs, fr)
    assert np.linalg.norm(back - t) < 1e-12


def test_quotient_exact_on_linear_map():
    dom = Domain.unit_square(32)
    m = np.array([[1.0, 2.0], [3.0, -1.0]])
    u = GridFunction.from_callable(dom, lambda x: x @ m.T)
    fr = build_frame("standard", N=2, n=2)
    q = difference_quotient_1(u, fr, 2 * dom.spacing)
    inner = dom.interior_mask(3 * dom.spacing)
    assert np.abs(q.values[inner] - m.reshape(-1)).max() < 1e-10


def test_quotient_of_absolute_value():
    dom = Domain.interval(-1.0, 1.0, 64)
    u = GridFunction.from_callable(dom, lambda x: np.abs(x[..., 0])[..., None])
    fr = build_frame("standard", N=1, n=1)
    h = 4 * dom.spacing
    q = difference_quotient_1(u, fr, h)
    x = dom.axis_coords(0)
    right = (x > h) & (x < 1.0 - 2 * h)
    assert np.allclose(q.values[right, 0], 1.0)


def test_fat_cantor_quotient_blowup_adjacent_to_holes():
    case = fat_cantor_indicator(depth=4, resolution=2048)
    u = case.grids["indicator"]
    dom = u.domain
    h = dom.spacing
    fr = build_frame("standard", N=1, n=1)
    q = difference_quotient_1(u, fr, h)
    x = dom.axis_coords(0)
    in_k = u.values[:, 0] > 0.5
    hole = np.zeros_like(in_k)
    for a, b in case.expected["removed_intervals"]:
        hole |= (x + h > a) & (x + h < b)
    witness = in_k & hole & (x + h < 1.0)
    assert witness.any()
    assert np.allclose(np.abs(q.values[witness, 0]), 1.0 / h)


def test_jet_exact_on_quadratic():
    dom = Domain.unit_square(32)
    s = np.array([[2.0, 0.5], [0.5, -1.0]])
    u = GridFunction.from_callable(
        dom, lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, s, x)[..., None])
    fr = build_frame("standard", N=1, n=2)
    sched = HSchedule(rows=((2 * dom.spacing,), (2 * dom.spacing, 3 * dom.spacing)))
    jets = jet_difference_quotients(u, fr, sched)
    inner = dom.interior_mask(6 * dom.spacing)
    assert np.abs(jets[1].values[inner] - s.reshape(-1)).max() < 1e-9


def test_jet_second_order_taylor_rate():
    dom = Domain.unit_square(128)
    u = GridFunction.from_callable(
        dom, lambda x: (np.sin(x[..., 0]) * np.sin(2 * x[..., 1]))[..., None])
    fr = build_frame("standard", N=1, n=2)
    x = dom.node_coords()
    true = np.stack([
        -np.sin(x[..., 0]) * np.sin(2 * x[..., 1]),
        2 * np.cos(x[..., 0]) * np.cos(2 * x[..., 1]),
        2 * np.cos(x[..., 0]) * np.cos(2 * x[..., 1]),
        -4 * np.sin(x[..., 0]) * np.sin(2 * x[..., 1])], axis=-1)
    errs = []
    for steps in (8, 4):
        h = steps * dom.spacing
        sched = HSchedule(rows=((h,), (h, h)))
        jets = jet_difference_quotients(u, fr, sched)
        inner = dom.interior_mask(2 * h + 2 * dom.spacing)
        errs.append(np.abs(jets[1].values[inner] - true[inner]).max())
    # first-order一sided error: halving the step roughly halves the error
    assert errs[1] < 0.65 * errs[0]


def test_sawtooth_second_quotient_scales_inverse_step():
    case = sawtooth_map(1.0, 2, 64)
    u = case.grids["map"]
    dom = u.domain
    fr = build_frame("standard", N=2, n=2)
    vals = {}
    for steps in (2, 4):
        h2 = steps * dom.spacing
        sched = HSchedule(rows=((h2,), (h2, h2)))
        jets = jet_difference_quotients(u, fr, sched)
        x = jets[1].values.reshape(dom.shape + (2, 2, 2))
        # one step below the fold at x1 = 1/4 the stencil straddles the peak:
        # the first quotients are +1 and -1, so the second quotient is -2/h
        i = int(round((0.25 - h2) / dom.spacing))
        j = dom.shape[1] // 2
        vals[steps] = x[i, j, 0, 0, 0]
    assert vals[2] == pytest.approx(-2.0 / (2 * dom.spacing), rel=1e-9)
    assert vals[4] == pytest.approx(-2.0 / (4 * dom.spacing), rel=1e-9)


def test_frame_covariance_of_first_quotient():
    dom = Domain.unit_square(128)
    u = GridFunction.from_callable(
        dom, lambda x: np.stack([np.sin(x[..., 0] + 0.3 * x[..., 1]),
                                 np.cos(0.5 * x[..., 0])], axis=-1))
    h = 4 * dom.spacing
    std = build_frame("standard", N=2, n=2)
    q_std = difference_quotient_1(u, std, h)
    rot = rotation(0.37)
    fr = Frame(np.eye(2), np.stack([rot.T, rot.T]))
    q_rot = difference_quotient_1(u, fr, h)
    inner = dom.interior_mask(2 * h)
    err = np.abs(q_rot.values[inner] - q_std.values[inner]).max()
    assert err < 10 * h * 1.0  # both approximate the same gradient to O(h)


def test_schedule_validation():
    with pytest.raises(ValueError):
        HSchedule(rows=((0.0,),))
    with pytest.raises(ValueError):
        HSchedule(rows=((0.1, 0.1),))
    sched = HSchedule(rows=((0.1,), (0.1, 0.05)))
    dom = Domain.unit_square(8)
    with pytest.raises(ValueError):
        sched.validate_for(dom)  # 0.05 is below the spacing 0.125
    assert sched.scale_separation() == pytest.approx(2.0)


def test_schedule_window_shapes():
    win = schedule_window(0.5, 3, ratio=0.5, order=2, separation=2.0)
    assert len(win) == 3
    assert win[0].rows[1] == (1.0, 0.5)
    assert win[1].rows[0] == (0.25,)
