import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from mimo_ident.errors import (DivergentTail, GridMismatch, GridTooCoarse,
                               NumericalRankFull, PlanNotOverspread)
from mimo_ident.geometry import GridSupport, pack_offsets, parse_supports
from mimo_ident.identification import PilotSet
from mimo_ident.necessity import (
    GaborFrameSpec, SlantedMatrixSpec, kernel_tail_bound, build_prototype, build_slanted,
    composition_instability, composition_setup, delta_train, empirical_decay,
    family_indices, fine_pilots, gaussian_frame_bounds, kernel_vector,
    lattice_for_density, riesz_gram_check, slant_for, tail_sum)
from mimo_ident.spark import IdentifierSequence
from mimo_ident.tfcore import conjugate_operator, modulate, operator_from_spreading, translate
from mimo_ident.util import complex_gaussian, make_rng


def loop_double_tail(w, start, k_max=20000):
    k = np.arange(1, k_max + 1, dtype=float)
    terms = k * w(k) ** 2
    return sum(K * terms[K - 1:].sum() for K in range(start, k_max + 1))


# -- slanted matrices -------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ValueError):
        SlantedMatrixSpec(1.0)
    with pytest.raises(ValueError):
        SlantedMatrixSpec(2.0, poly_degree=1, decay_power=3)
    assert SlantedMatrixSpec(2.0, poly_degree=2).decay_power == 5


@pytest.mark.parametrize("K1,N,Nt", [(3, 8, 7), (1, 4, 3)])
def test_window_sizes(K1, N, Nt):
    spec = SlantedMatrixSpec(2.0, K1=K1)
    sec = build_slanted(spec)
    assert (sec.N, sec.N_tilde) == (N, Nt)
    assert sec.matrix.shape == ((2 * Nt + 1) ** 2, (2 * N + 1) ** 2)


def test_slanted_entries_against_loop():
    spec = SlantedMatrixSpec(1.5, poly_degree=1, K1=1)
    sec = build_slanted(spec)
    rng = make_rng(0)
    for _ in range(50):
        i, j = rng.integers(sec.matrix.shape[0]), rng.integers(sec.matrix.shape[1])
        jp, jj = sec.rows[i], sec.cols[j]
        d = max(abs(1.5 * jp[0] - jj[0]), abs(1.5 * jp[1] - jj[1]))
        expected = (1 + d) ** -4 * (1 + max(abs(jj[0]), abs(jj[1])))
        assert sec.matrix[i, j] == pytest.approx(expected, rel=1e-14)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(1.3, 4.0), K1=st.integers(1, 3), Lp=st.integers(0, 2))
def test_sections_are_wide(lam, K1, Lp):
    spec = SlantedMatrixSpec(lam, poly_degree=Lp, K1=K1)
    assert spec.N_tilde < spec.N
    rows, cols = (2 * spec.N_tilde + 1) ** 2, (2 * spec.N + 1) ** 2
    assert rows < cols


@settings(max_examples=8, deadline=None)
@given(lam=st.floats(1.6, 3.0), K1=st.integers(1, 2))
def test_kernel_vector_property(lam, K1):
    spec = SlantedMatrixSpec(lam, K1=K1)
    x, norm_Mx = kernel_vector(spec)
    sec = build_slanted(spec)
    assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(sec.matrix @ x.ravel())) <= 1e-10
    assert norm_Mx**2 <= kernel_tail_bound(spec)


def test_kernel_vector_decreases_and_is_bounded():
    norms = []
    for K1 in (1, 2, 3, 4):
        spec = SlantedMatrixSpec(2.0, poly_degree=1, decay_power=4, K1=K1)
        x, nm = kernel_vector(spec)
        assert x.shape == (2 * spec.N + 1,) * 2
        assert nm**2 <= kernel_tail_bound(spec)
        norms.append(nm)
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_kernel_vector_radius_converged():
    spec = SlantedMatrixSpec(2.0, K1=2)
    _, a = kernel_vector(spec)
    _, b = kernel_vector(spec, radius=5 * spec.N)
    # rows past 3N only add a small tail
    assert a <= b <= a * (1 + 1e-3)


def test_rank_full_guard():
    class Square(SlantedMatrixSpec):
        @property
        def N_tilde(self):
            return self.N

    with pytest.raises(NumericalRankFull):
        kernel_vector(Square(2.0, K1=1))


def test_kernel_tail_bound_against_loop():
    spec = SlantedMatrixSpec(2.0, poly_degree=1, decay_power=4, K1=2)
    start = math.ceil(spec.N / 2) + 2
    expected = 2**6 * 2.0**2 * 5**2 * loop_double_tail(spec.w, start)
    assert kernel_tail_bound(spec) == pytest.approx(expected, rel=1e-9)


def test_tail_sum_against_loop():
    w = lambda k: (1.0 + k) ** -4
    (value,) = tail_sum(w, 1, [3])
    assert value == pytest.approx(9 * loop_double_tail(w, 3), rel=1e-9)


def test_tail_sum_limits():
    fast = tail_sum(lambda k: (1.0 + k) ** -4, 1, [2, 4, 8, 16])
    assert np.all(np.diff(fast) < 0)
    assert fast[-1] <= fast[0] / 2
    boundary = tail_sum(lambda k: (1.0 + k) ** -3, 1, [2, 4, 8, 16])
    assert np.all(np.diff(boundary) > 0)
    assert np.isfinite(tail_sum(lambda k: (1.0 + k) ** -4, 1, [1])[0])


def test_divergent_tail():
    with pytest.raises(DivergentTail):
        tail_sum(lambda k: (1.0 + k) ** -0.5, 1, [1])


# -- prototype and family -----------------------------------------------------------

@pytest.fixture(scope="module")
def proto64():
    return build_prototype(64, 2, 4, 1.2)


@pytest.fixture(scope="module")
def proto675():
    return build_prototype(675, 2, 3, 15 / 14)[0]


def test_prototype_regression(proto64):
    proto, kernel = proto64
    assert (proto.n_t, proto.n_f) == (4, 4)
    assert np.linalg.norm(kernel) == pytest.approx(24.0, rel=1e-12)
    assert_allclose(kernel, operator_from_spreading(proto.eta))


def test_plateau_and_support():
    proto, _ = build_prototype(900, 2, 4, 1.2)
    for eta, n in ((proto.eta1, proto.n_t), (proto.eta2, proto.n_f)):
        d = np.minimum(np.arange(900), 900 - np.arange(900))
        assert np.all(eta[d <= n / (2 * proto.lam)] == 1.0)
        assert np.all(eta[d >= n / 2] == 0.0)
        assert np.all((eta >= 0) & (eta <= 1))
        taper = eta[(d > n / (2 * proto.lam)) & (d < n / 2)]
        assert taper.size and np.all((taper > 0) & (taper < 1))


def test_spreading_inside_cell(proto675):
    k = np.minimum(np.arange(675), 675 - np.arange(675))
    outside = (k[:, None] >= proto675.n_t / 2) | (k[None, :] >= proto675.n_f / 2)
    assert np.all(proto675.eta[outside] == 0)


def test_grid_too_coarse():
    with pytest.raises(GridTooCoarse):
        build_prototype(12, 2, 3, 1.2)
    with pytest.raises(GridTooCoarse):
        build_prototype(64, 2, 5, 1.2)


def test_apply_matches_kernel(proto64):
    proto, kernel = proto64
    f = complex_gaussian(make_rng(1), 64)
    assert_allclose(proto.apply(f), kernel @ f, atol=1e-12)


@pytest.mark.parametrize("cell,k,l", [((0, 0), 0, 0), ((1, 2), 1, -1), ((0, 3), -1, 1)])
def test_member_three_routes(proto64, cell, k, l):
    proto, kernel = proto64
    f = complex_gaussian(make_rng(2), 64)
    by_conjugation = conjugate_operator(kernel, *proto.member_params(cell, k, l)) @ f
    by_spreading = operator_from_spreading(proto.member_spreading(cell, k, l)) @ f
    assert_allclose(proto.member_apply(cell, k, l, f), by_conjugation, atol=1e-10)
    assert_allclose(by_spreading, by_conjugation, atol=1e-10)


def test_family_indices():
    assert family_indices(1) == [(0, 0)]
    assert len(set(family_indices(9))) == 9
    assert max(max(abs(k), abs(l)) for k, l in family_indices(9)) == 1


def test_riesz_size_one(proto64):
    rep = riesz_gram_check(proto64[0], 1)
    assert rep.condition == pytest.approx(1.0)


def test_riesz_disjoint_cells(proto64):
    proto, kernel = proto64
    cells = ((0, 0), (1, 0), (0, 2), (1, 3))
    rep = riesz_gram_check(proto, 1, cells=cells)
    norms = [np.linalg.norm(operator_from_spreading(proto.member_spreading(c, 0, 0))) ** 2
             for c in cells]
    assert rep.lam_min == pytest.approx(min(norms))
    assert rep.lam_max == pytest.approx(max(norms))


def test_riesz_gram_against_kernels(proto64):
    proto, _ = proto64
    members = [operator_from_spreading(proto.member_spreading((0, 0), k, l))
               for k, l in family_indices(4)]
    gram = np.array([[np.vdot(b, a) for b in members] for a in members])
    ev = np.linalg.eigvalsh(gram)
    rep = riesz_gram_check(proto, 4)
    assert rep.lam_min == pytest.approx(ev[0], rel=1e-9)
    assert rep.lam_max == pytest.approx(ev[-1], rel=1e-9)


def test_riesz_regression(proto64):
    rep = riesz_gram_check(proto64[0], 9)
    assert rep.lam_min == pytest.approx(253.20023239237474, rel=1e-9)
    assert rep.lam_max == pytest.approx(858.6959208416351, rel=1e-9)


def test_riesz_bounded_below_as_family_grows(proto675):
    lows = [riesz_gram_check(proto675, s).lam_min for s in (4, 9, 16, 25)]
    assert min(lows) > 0.99 * lows[0]
    assert lows[-1] == pytest.approx(133106.58144264575, rel=1e-9)


def test_empirical_decay(proto675):
    g = GaborFrameSpec(675, 1, 1).window()
    dist, env, slope = empirical_decay(proto675, g, [(0, 0), (40, 30), (-100, 75)])
    assert env[0] == 1.0
    assert np.all(np.diff(env) <= 0)
    assert env[-1] < 1e-10
    assert slope < -2


# -- Gaussian frames -----------------------------------------------------------------

def test_analysis_matrix_against_loop():
    spec = GaborFrameSpec(12, 3, 4)
    g = spec.window()
    x = np.arange(12)
    rows = [np.conj(np.exp(2j * np.pi * l * x / 12) * np.roll(g, k))
            for k in range(0, 12, 3) for l in range(0, 12, 4)]
    assert_allclose(spec.analysis_matrix(), rows, atol=1e-13)


def test_window_is_symmetric_gaussian():
    g = GaborFrameSpec(60, 1, 1).window()
    assert_allclose(g[1:], g[1:][::-1])
    assert g[0] == pytest.approx(1.0, abs=1e-6)


def test_full_lattice_is_tight():
    spec = GaborFrameSpec(60, 1, 1)
    A, B = gaussian_frame_bounds(spec)
    expected = 60 * np.linalg.norm(spec.window()) ** 2
    assert A > 0
    assert A == pytest.approx(expected, rel=1e-10)
    assert B == pytest.approx(expected, rel=1e-10)


def test_density_08_regression():
    spec = GaborFrameSpec(60, 4, 12)
    assert spec.density == pytest.approx(0.8)
    A, B = gaussian_frame_bounds(spec)
    assert A / B >= 0.046
    assert A / B == pytest.approx(0.046080401257773365, rel=1e-6)


def test_frame_sweep_monotone():
    steps = [(5, 6), (6, 6), (4, 12), (5, 12), (5, 15)]
    A = [gaussian_frame_bounds(GaborFrameSpec(60, a, b))[0] for a, b in steps]
    dens = [a * b / 60 for a, b in steps]
    assert dens == sorted(dens) and dens[-1] > 1
    assert all(y < x for x, y in zip(A, A[1:]))
    assert all(a > 0 for a, d in zip(A, dens) if d < 1)


def test_lattice_steps_must_divide():
    with pytest.raises(ValueError):
        GaborFrameSpec(60, 7, 6)


def test_lattice_for_density():
    spec = lattice_for_density(675, 0.9884)
    assert (spec.time_step, spec.freq_step) == (25, 25)
    assert lattice_for_density(60, 0.8).density <= 0.8
    with pytest.raises(ValueError):
        lattice_for_density(7, 0.1)


# -- composition --------------------------------------------------------------------

@pytest.fixture(scope="module")
def over_plan():
    text = "2 3\nsubchannel 0 0\n0 0\n0 1\nsubchannel 0 1\n1 0\n1 2\n"
    return pack_offsets(parse_supports(text))


@pytest.fixture(scope="module")
def control_plan():
    text = "2 3\nsubchannel 0 0\n0 0\n0 1\nsubchannel 0 1\n1 0\n"
    return pack_offsets(parse_supports(text))


@pytest.fixture(scope="module")
def setup(over_plan):
    return composition_setup(over_plan)


@pytest.fixture(scope="module")
def pilot_c():
    return IdentifierSequence(complex_gaussian(make_rng(3, 0), 3))


def test_slant_choice():
    lam = slant_for(15, 4 / 3)
    assert lam == pytest.approx(15 / 14)
    assert 1 < lam**4 < 4 / 3
    with pytest.raises(ValueError):
        slant_for(3, 1.01)


def test_delta_train_pilots(setup, over_plan, pilot_c):
    proto, _ = setup
    f = fine_pilots(PilotSet.for_plan(over_plan, pilot_c), proto)
    assert f.shape == (2, proto.P)
    base = delta_train(pilot_c.c, proto.n_t, proto.P)
    assert_allclose(f[0], modulate(base, over_plan.offsets[0] * proto.n_f))
    assert np.count_nonzero(base) == proto.P // proto.n_t
    with pytest.raises(GridMismatch):
        delta_train(pilot_c.c, 4, 50)


def test_composition_overspread(setup, over_plan, pilot_c):
    proto, gabor = setup
    rep = composition_instability(over_plan, PilotSet.for_plan(over_plan, pilot_c), proto, gabor)
    assert rep.cells == 4 and rep.L == 3
    assert len(rep.sections) == 3
    assert [s.section_size for s in rep.sections] == sorted(s.section_size for s in rep.sections)
    assert rep.decreasing
    assert rep.sections[-1].sigma_min < rep.sections[-1].bound_rhs
    assert rep.metadata["analysis_density"] <= rep.metadata["target_density"] < 1
    assert rep.metadata["lam4"] < rep.metadata["mu_S"]


def test_composition_control_keeps_floor(setup, control_plan, pilot_c):
    proto, gabor = setup
    pilots = PilotSet.for_plan(control_plan, pilot_c)
    with pytest.raises(PlanNotOverspread):
        composition_instability(control_plan, pilots, proto, gabor)
    rep = composition_instability(control_plan, pilots, proto, gabor, allow_underspread=True)
    assert rep.floor_held
    assert not rep.unstable


def test_composition_explicit_signals(setup, over_plan):
    proto, gabor = setup
    rng = make_rng(4)
    signals = complex_gaussian(rng, (2, proto.P))
    rep = composition_instability(over_plan, signals, proto, gabor, radii=[2, 4])
    assert [s.radius for s in rep.sections] == [2, 4]
    with pytest.raises(GridMismatch):
        composition_instability(over_plan, signals[:1], proto, gabor)


def test_composition_checks_slant(over_plan, pilot_c):
    proto, _ = build_prototype(675, 2, 3, 1.2)
    gabor = lattice_for_density(675, 0.5)
    with pytest.raises(ValueError, match="lam"):
        composition_instability(over_plan, PilotSet.for_plan(over_plan, pilot_c), proto, gabor)


def test_composition_grid_mismatch(setup, pilot_c):
    proto, gabor = setup
    plan = pack_offsets([[GridSupport(2, 5, {(0, n) for n in range(5)} | {(1, 0)})]])
    with pytest.raises(GridMismatch):
        composition_instability(plan, np.zeros((1, proto.P)), proto, gabor)


def test_family_member_is_conjugated_prototype(setup):
    # spot-check the fine-grid family against explicit shifts
    proto, _ = setup
    f = complex_gaussian(make_rng(5), proto.P)
    omega, p, r, xi = proto.member_params((1, 2), 2, -3)
    g = modulate(translate(proto.apply(translate(modulate(f, xi - omega), r)), p - r), omega)
    assert_allclose(proto.member_apply((1, 2), 2, -3, f), g)
    assert (p, xi) == (proto.n_t, 2 * proto.n_f)
