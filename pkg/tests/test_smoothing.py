import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugecocycle.builtins import (
    charge_k_sphere_pair,
    coboundary_su2,
    flux_k_torus_pair,
    global_u1_form,
    perturb_connection,
    random_smooth_gauge,
    smooth_scalar,
    trivial_bundle,
)
from gaugecocycle.bundle import Cocycle, cocycle_residual, gluing_residual
from gaugecocycle.errors import OscillationTooLarge, OutsideInjectivityDomain, SmallnessViolated
from gaugecocycle.grid import build_partition_of_unity, default_cover, sphere, torus
from gaugecocycle.lie import SU2, U1, dagger, exp_map, from_coords, geodesic_distance, is_group_element, u1
from gaugecocycle.smoothing import (
    bump_kernel,
    compare_cocycles,
    mollify_cocycle,
    mollify_group_map,
    patch_extend,
    perturb_cocycle,
    repair_cocycle,
    smooth_cocycle,
    smooth_connection_on_bundle,
)
from gaugecocycle.topology import class_of_cocycle, sphere_equator_winding, winding_number


def _cap():
    return default_cover(sphere(64)).charts[0]


def _wavy(c, amp=0.3, seed=0):
    return u1(amp * smooth_scalar(c, np.random.default_rng(seed)))


def test_kernel_normalised_and_degenerate_at_h():
    c = _cap()
    k = bump_kernel(c, 3 * max(c.spacing))
    assert abs(sum(k.values()) - 1) < 1e-14 and len(k) > 9
    assert bump_kernel(c, min(c.spacing)) == {(0, 0): 1.0}


def test_mollify_constant_is_fixed():
    c = _cap()
    g = np.broadcast_to(exp_map(SU2, from_coords(SU2, np.array([0.4, -0.2, 1.0]))), c.shape + (2, 2)).copy()
    out = mollify_group_map(SU2, g, c, 4 * max(c.spacing))
    assert np.max(np.abs(out - g)) < 1e-15


def test_mollify_width_h_is_within_1e6():
    c = _cap()
    g = _wavy(c)
    out = mollify_group_map(U1, g, c, min(c.spacing))
    assert np.max(geodesic_distance(U1, g, out)) < 1e-6


def test_mollify_keeps_winding_of_noisy_loop():
    c = _cap()
    phi = c.mesh()[1]
    noise = np.random.default_rng(1).uniform(-0.05, 0.05, c.shape)
    g = u1(phi + noise)
    out = mollify_group_map(U1, g, c, 3 * max(c.spacing))
    row = c.shape[0] // 2
    assert winding_number(g[row, :, 0, 0]) == 1
    assert winding_number(out[row, :, 0, 0]) == 1
    assert is_group_element(U1, out)


def test_mollify_reproduces_linear_phase_exactly():
    c = default_cover(torus(2, 64)).charts[5]
    x, y = c.mesh()
    g = u1(3.0 * x - 2.0 * y)
    out = mollify_group_map(U1, g, c, 4 * c.spacing[0])
    assert np.max(geodesic_distance(U1, g, out)) < 1e-12


def test_mollify_distance_monotone_in_width():
    c = _cap()
    rng = np.random.default_rng(2)
    for g in (_wavy(c, 0.5), _wavy(c, 0.5) @ u1(0.02 * rng.standard_normal(c.shape))):
        d = [np.max(geodesic_distance(U1, g, mollify_group_map(U1, g, c, w * max(c.spacing))))
             for w in (1.5, 2.5, 3.5, 5.0)]
        assert all(a < b for a, b in zip(d, d[1:]))


def test_mollify_constraint_region_exact():
    c = _cap()
    g = _wavy(c) @ u1(0.02 * np.random.default_rng(3).standard_normal(c.shape))
    region = np.zeros(c.shape, bool)
    region[10:20, 5:30] = True
    out = mollify_group_map(U1, g, c, 3 * max(c.spacing), constraint_region=region)
    assert np.array_equal(out[region], g[region])
    assert not np.array_equal(out[~region], g[~region])


def test_mollify_su2_stays_in_group():
    c = _cap()
    rho = random_smooth_gauge(default_cover(sphere(64)), SU2, np.random.default_rng(0)).locals[0]
    out = mollify_group_map(SU2, rho, c, 3 * max(c.spacing))
    assert is_group_element(SU2, out, 1e-12)
    assert np.max(geodesic_distance(SU2, rho, out)) < 0.05


def test_mollify_rejects_rough_input():
    c = _cap()
    g = u1(np.random.default_rng(0).uniform(-np.pi, np.pi, c.shape))
    with pytest.raises(OscillationTooLarge):
        mollify_group_map(U1, g, c, 3 * max(c.spacing))


def test_patch_identity_and_plateau():
    c = _cap()
    plateau = np.zeros(c.shape, bool)
    plateau[8:16, 10:30] = True
    eye = U1.identity(c.shape)
    assert np.array_equal(patch_extend(U1, eye, c, plateau, 3), eye)
    F = _wavy(c, 0.8)
    out = patch_extend(U1, F, c, plateau, 3)
    assert np.array_equal(out[plateau], F[plateau])
    far = np.zeros(c.shape, bool)
    far[30:, :] = True
    assert np.all(out[far] == 1)


def test_patch_output_stays_in_identity_neighbourhood():
    c = _cap()
    rho = random_smooth_gauge(default_cover(sphere(64)), SU2, np.random.default_rng(4), amplitude=0.4).locals[0]
    plateau = np.zeros(c.shape, bool)
    plateau[5:25, 20:40] = True
    out = patch_extend(SU2, rho, c, plateau, 4)
    assert np.max(geodesic_distance(SU2, out)) <= np.max(geodesic_distance(SU2, rho)) + 1e-12
    assert np.max(geodesic_distance(SU2, out)) < np.pi / 2


def test_patch_outside_injectivity_domain():
    c = _cap()
    plateau = np.zeros(c.shape, bool)
    plateau[5:10, 5:10] = True
    with pytest.raises(OutsideInjectivityDomain):
        patch_extend(U1, u1(np.full(c.shape, 2.0)), c, plateau, 3)


def test_extension_keeps_target_near_plateau_and_base_far():
    c = _cap()
    base = _wavy(c, 1.0, seed=1)
    F = base @ _wavy(c, 0.1, seed=2)
    plateau = np.zeros(c.shape, bool)
    plateau[:, :20] = True
    out = patch_extend(U1, F, c, plateau, 4, base=base)
    assert np.array_equal(out[plateau], F[plateau])
    assert np.array_equal(out[:, 30:], base[:, 30:])
    with pytest.raises(SmallnessViolated):
        patch_extend(U1, base @ u1(np.full(c.shape, 0.9)), c, plateau, 4, base=base)


def test_repair_exact_in_identical_out():
    P, _ = flux_k_torus_pair(64, 1)
    assert repair_cocycle(P) is P


@pytest.mark.parametrize("group", [U1, SU2], ids=["U1", "SU2"])
def test_repair_perturbed_trivial(group):
    P, _ = trivial_bundle(default_cover(torus(2, 64)), group)
    eps = 1e-3
    Pt = perturb_cocycle(P, eps, np.random.default_rng(0))
    assert cocycle_residual(Pt) > eps
    h = repair_cocycle(Pt)
    assert cocycle_residual(h) <= 1e-12
    assert compare_cocycles(Pt, h).max_sup <= 10 * eps


def test_repair_smallness_violated():
    P, _ = trivial_bundle(default_cover(torus(2, 64)))
    with pytest.raises(SmallnessViolated):
        repair_cocycle(perturb_cocycle(P, 1.0, np.random.default_rng(0)))


def test_charge_one_mollify_repair_keeps_winding():
    P, _ = charge_k_sphere_pair(64, 1)
    Pt = perturb_cocycle(P, 1e-3, np.random.default_rng(1))
    h, rep = smooth_cocycle(Pt, 3 * np.pi / 64)
    assert sphere_equator_winding(h) == 1
    assert rep.residual_after <= 1e-12 and compare_cocycles(P, h).max_sup <= 1e-2


def test_flux_torus_smooth_cocycle_report():
    P, _ = flux_k_torus_pair(64, -1)
    Pt = perturb_cocycle(P, 1e-3, np.random.default_rng(2))
    h, rep = smooth_cocycle(Pt, 3 / 64)
    assert rep.residual_before > 1e-3 and rep.residual_after <= 1e-12
    assert class_of_cocycle(h).invariant == -1
    d = rep.as_dict()
    assert set(d["overlap_sup"]) == set(d["overlap_w1n"]) and d["max_w1n"] > 0


def test_constraint_flag():
    P, _ = flux_k_torus_pair(64, 1)
    Pt = perturb_cocycle(P, 1e-3, np.random.default_rng(3))
    region = np.zeros(P.cover.charts[0].shape, bool)
    region[10:14, 10:14] = True
    region &= P.cover.overlap(0, 1).mask
    M = mollify_cocycle(Pt, 3 / 64, {(0, 1): region})
    assert compare_cocycles(Pt, M, {(0, 1): region}).constraints_preserved


@settings(max_examples=8, deadline=None)
@given(amp=st.floats(0.0, 0.49), k=st.sampled_from([-1, 1, 2]), seed=st.integers(0, 2**16))
def test_winding_preserved_below_half(amp, k, seed):
    P, _ = charge_k_sphere_pair(64, k)
    cover = P.cover
    # smooth perturbation of sup size amp, then pointwise noise
    f = smooth_scalar(cover.charts[0], np.random.default_rng(seed))
    gij = P.g(0, 1) @ u1(amp * f / max(1.0, np.max(np.abs(f))))
    Q = Cocycle.from_function(cover, U1, lambda i, j: gij)
    Q = perturb_cocycle(Q, 1e-3, np.random.default_rng(seed))
    h, rep = smooth_cocycle(Q, 3 * np.pi / 64)
    assert sphere_equator_winding(h) == k


def test_connection_trivial_is_convex_recombination():
    cover = default_cover(torus(2, 32))
    P = Cocycle.trivial(cover, SU2)
    rng = np.random.default_rng(0)
    arrs = [from_coords(SU2, rng.standard_normal((2,) + c.shape + (3,))) for c in cover.charts]
    B = smooth_connection_on_bundle(P, arrs)
    pou = build_partition_of_unity(cover)
    j = 5
    expect = sum(cover.gather(j, l, pou.weights[l], fill=0.0)[None, ..., None, None]
                 * np.moveaxis(cover.gather(j, l, np.moveaxis(arrs[l], 0, 2), fill=0.0), 2, 0)
                 for l in range(len(cover)))
    assert np.max(np.abs(B.locals[j].comps - expect)) < 1e-12
    # a single global form comes back unchanged
    X = [from_coords(SU2, np.stack([np.stack([smooth_scalar(c, np.random.default_rng(9)) for _ in range(3)], -1)] * 2))
         for c in cover.charts]
    B = smooth_connection_on_bundle(P, X)
    assert max(np.max(np.abs(b.comps - x)) for b, x in zip(B.locals, X)) < 1e-12


def test_connection_exact_glue_is_fixed():
    for P, A in (flux_k_torus_pair(64, 2), charge_k_sphere_pair(64, 0)):
        if not P.transitions:
            A = perturb_connection(A, global_u1_form(P.cover, np.random.default_rng(1)))
        assert gluing_residual(A) < 1e-12
        B = smooth_connection_on_bundle(P, A)
        assert max(np.max(np.abs(b.comps - a.comps)) for b, a in zip(B.locals, A.locals)) < 1e-12


def _su2_recombination(d):
    cover = default_cover(torus(2, d))
    P = coboundary_su2(cover, np.random.default_rng(0))
    arrs = []
    for c in cover.charts:
        r = np.random.default_rng(7)  # the same global function on every chart
        coeff = np.stack([smooth_scalar(c, r) for _ in range(3)], -1)
        arrs.append(0.5 * np.stack([from_coords(SU2, coeff)] * 2))
    return P, arrs


def test_connection_gluing_residual_second_order():
    errs = [gluing_residual(smooth_connection_on_bundle(*_su2_recombination(d))) for d in (32, 64, 128)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


def test_connection_conjugation_equivariant():
    P, arrs = _su2_recombination(32)
    c = exp_map(SU2, from_coords(SU2, np.array([0.7, -0.3, 1.2])))
    ci = dagger(c)
    Q = Cocycle(P.cover, SU2, {k: ci @ v @ c for k, v in P.transitions.items()})
    B = smooth_connection_on_bundle(P, arrs)
    B2 = smooth_connection_on_bundle(Q, [ci @ a @ c for a in arrs])
    assert max(np.max(np.abs(ci @ b.comps @ c - b2.comps)) for b, b2 in zip(B.locals, B2.locals)) < 1e-12
