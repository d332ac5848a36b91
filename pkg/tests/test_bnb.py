import numpy as np
import pytest

from crsn import bnb, conic, matcore, riccati, sysmodel
from crsn.bnb import Box, BnbNode
from crsn.errors import InfeasibleQualityBoundError, InvalidInputError


def test_envelope_exact_on_corner():
    assert bnb.convex_envelope((1.0, 2.0), (3.0, 5.0), 2.0, 5.0) == pytest.approx(10.0)
    assert bnb.convex_envelope((1.0, 2.0), (3.0, 5.0), 1.0, 3.0) == pytest.approx(3.0)


def test_envelope_interior_slack():
    val = bnb.convex_envelope((0.0, 1.0), (0.0, 1.0), 0.5, 0.5)
    assert val == pytest.approx(0.0)
    assert val <= 0.25


def test_envelope_two_pieces():
    # max(3*1.5 + 1*4 - 3, 5*1.5 + 2*4 - 10) = max(5.5, 5.5) = 5.5 <= 6
    val = bnb.convex_envelope((1.0, 2.0), (3.0, 5.0), 1.5, 4.0)
    assert val == pytest.approx(5.5)
    assert val <= 1.5 * 4.0


def test_envelope_underestimates_everywhere():
    rng = np.random.default_rng(0)
    for _ in range(300):
        xl, zl = rng.uniform(-2, 1, size=2)
        xh, zh = xl + rng.uniform(0.1, 3), zl + rng.uniform(0.1, 3)
        x = rng.uniform(xl, xh)
        z = rng.uniform(zl, zh)
        vex = bnb.convex_envelope((xl, xh), (zl, zh), x, z)
        assert vex <= x * z + 1e-12


def test_envelope_boundary_equality():
    rng = np.random.default_rng(1)
    for _ in range(100):
        xl, zl = rng.uniform(-2, 1, size=2)
        xh, zh = xl + rng.uniform(0.1, 3), zl + rng.uniform(0.1, 3)
        x = rng.uniform(xl, xh)
        for z in (zl, zh):
            assert bnb.convex_envelope((xl, xh), (zl, zh), x, z) == pytest.approx(x * z, abs=1e-10)


def test_envelope_domain_error():
    with pytest.raises(InvalidInputError):
        bnb.convex_envelope((0.0, 1.0), (0.0, 1.0), 2.0, 0.5)


def test_initial_box_scalar_collapse(scalar_sys):
    lam = 0.8
    m_bound = np.array([[2.0]])
    x0 = riccati.x_zero(scalar_sys, lam)
    zstar = conic.solve_zstar(scalar_sys, lam, m_bound, X0=x0)
    box = bnb.initial_box(scalar_sys, lam, m_bound, x0=x0, zstar=zstar)
    assert box.x_lo[0] == pytest.approx(x0[0, 0])
    assert box.x_hi[0] == pytest.approx(2.0)
    # C = 1 so the z-side is just the Z box [0, z*]
    assert box.z_lo[0] == pytest.approx(0.0)
    assert box.z_hi[0] == pytest.approx(zstar)


def test_initial_box_identity_output_map():
    sys = sysmodel.LtiSystem([[0.9, 0.3], [0.0, 0.92]], np.eye(2), np.eye(2), np.eye(2))
    lam = 0.8
    # quality bound between the large-trigger limit and the silent steady
    # state: communication is genuinely required, so z* > 0
    limit = riccati.fixed_point(riccati.RiccatiOp(sys, lam, W=sys.R * (1 + 1e-9)))
    m_bound = limit + 0.3 * np.eye(2)
    assert not matcore.is_psd(m_bound - sysmodel.steady_state(sys).Sigma)
    box = bnb.initial_box(sys, lam, m_bound)
    # C = I means G = I: z bounds equal the vec'd Z-box bounds directly
    zstar = conic.solve_zstar(sys, lam, m_bound)
    assert zstar > 1e-3
    assert box.z_hi == pytest.approx(np.full(4, zstar), rel=1e-6)
    assert box.z_lo[0] == pytest.approx(0.0, abs=1e-12)
    assert box.z_lo[1] == pytest.approx(-zstar, rel=1e-6)


def test_initial_box_compact(design_sys):
    lam = 0.8
    m_bound = riccati.x_zero(design_sys, lam) + 5.0 * np.eye(2)
    box = bnb.initial_box(design_sys, lam, m_bound)
    for arr in (box.x_lo, box.x_hi, box.z_lo, box.z_hi):
        assert np.all(np.isfinite(arr))
    assert np.all(box.x_hi > box.x_lo)
    assert np.all(box.z_hi > box.z_lo)
    # mirrored coordinates share bounds
    assert box.x_lo[1] == box.x_lo[2]
    assert box.x_hi[1] == box.x_hi[2]
    assert box.z_lo[1] == box.z_lo[2]


def test_initial_box_rejects_small_m(design_sys):
    with pytest.raises(InfeasibleQualityBoundError):
        bnb.initial_box(design_sys, 0.8, riccati.x_zero(design_sys, 0.8) * 0.5)


def _scalar_ctx_and_box(sys, lam=0.8, m_val=2.0):
    m_bound = np.array([[m_val]])
    x0 = riccati.x_zero(sys, lam)
    zstar = conic.solve_zstar(sys, lam, m_bound, X0=x0)
    ctx = bnb.BnbContext(sys, lam, m_bound, x0, zstar)
    box = bnb.initial_box(sys, lam, m_bound, x0=x0, zstar=zstar)
    return ctx, box


def test_relaxation_underestimates(scalar_sys):
    ctx, box = _scalar_ctx_and_box(scalar_sys)
    out = bnb.solve_relaxation(box, ctx)
    assert out.value <= out.true_objective + 1e-7


def test_relaxation_near_degenerate_box_is_exact(scalar_sys):
    ctx, box = _scalar_ctx_and_box(scalar_sys)
    out = bnb.solve_relaxation(box, ctx)
    # shrink to a thin rectangle around the incumbent: envelope gap vanishes
    vi = 0
    x_pt, z_pt = out.x_vec[vi], out.z_vec[vi]
    thin = box.copy()
    half = 1e-5
    thin.x_lo[:] = np.clip(x_pt - half, box.x_lo, box.x_hi)
    thin.x_hi[:] = np.clip(x_pt + half, box.x_lo, box.x_hi)
    thin.z_lo[:] = np.clip(z_pt - half, box.z_lo, box.z_hi)
    thin.z_hi[:] = np.clip(z_pt + half, box.z_lo, box.z_hi)
    out2 = bnb.solve_relaxation(thin, ctx)
    assert out2.true_objective - out2.value < 1e-6


def test_children_tighten_the_bound(design_sys):
    lam = 0.8
    x0 = riccati.x_zero(design_sys, lam)
    m_bound = x0 + 5.0 * np.eye(2)
    zstar = conic.solve_zstar(design_sys, lam, m_bound, X0=x0)
    ctx = bnb.BnbContext(design_sys, lam, m_bound, x0, zstar)
    box = bnb.initial_box(design_sys, lam, m_bound, x0=x0, zstar=zstar)
    out = bnb.solve_relaxation(box, ctx)
    node = BnbNode(box=box, nu=out.value, point=(out.x_vec, out.y_vec, out.z_vec),
                   stage=(1, 1), true_objective=out.true_objective)
    deltas = bnb._deltas(node, ctx)
    assert deltas.max() > 1e-12  # root relaxation is not exact here
    for child_box in bnb.split(node, ctx):
        child = bnb.solve_relaxation(child_box, ctx)
        assert child.value >= out.value - 1e-7
        assert child.value <= child.true_objective + 1e-7


def test_split_partitions_parent(design_sys):
    lam = 0.8
    m_bound = riccati.x_zero(design_sys, lam) + 5.0 * np.eye(2)
    box = bnb.initial_box(design_sys, lam, m_bound)
    ctx = bnb.BnbContext(design_sys, lam, m_bound, riccati.x_zero(design_sys, lam), 1.0)
    # synthetic incumbent at the center of representative 1 (off-diagonal)
    x_vec = 0.5 * (box.x_lo + box.x_hi)
    z_vec = 0.5 * (box.z_lo + box.z_hi)
    # force a positive product gap on representative 0
    node = BnbNode(box=box, nu=0.0, point=(x_vec, np.zeros(4), z_vec),
                   stage=(1, 1), true_objective=1.0)
    children = bnb.split(node, ctx)
    assert len(children) == 4
    # the four children partition the parent rectangle exactly
    assert sum(c.volume() for c in children) == pytest.approx(box.volume(), rel=1e-9)
    # mirrored coordinates stay consistent
    for c in children:
        assert c.x_lo[1] == c.x_lo[2] and c.x_hi[1] == c.x_hi[2]
        assert c.z_lo[1] == c.z_lo[2] and c.z_hi[1] == c.z_hi[2]
    # pairwise distinct quadrants in the split plane
    splits = set()
    for c in children:
        k = int(np.argmax([abs(c.x_lo[i] - box.x_lo[i]) + abs(c.x_hi[i] - box.x_hi[i])
                           + abs(c.z_lo[i] - box.z_lo[i]) + abs(c.z_hi[i] - box.z_hi[i])
                           for i in range(4)]))
        splits.add((c.x_lo[k], c.x_hi[k], c.z_lo[k], c.z_hi[k]))
    assert len(splits) == 4


def test_split_center_gives_equal_areas(scalar_sys):
    ctx, box = _scalar_ctx_and_box(scalar_sys)
    x_mid = 0.5 * (box.x_lo[0] + box.x_hi[0])
    z_mid = 0.5 * (box.z_lo[0] + box.z_hi[0])
    node = BnbNode(box=box, nu=0.0,
                   point=(np.array([x_mid]), np.zeros(1), np.array([z_mid])),
                   stage=(1, 1), true_objective=1.0)
    children = bnb.split(node, ctx)
    areas = [(c.x_hi[0] - c.x_lo[0]) * (c.z_hi[0] - c.z_lo[0]) for c in children]
    assert np.allclose(areas, areas[0])
    assert sum(areas) == pytest.approx((box.x_hi[0] - box.x_lo[0]) * (box.z_hi[0] - box.z_lo[0]))


def test_split_edge_incumbent_clamped(scalar_sys):
    ctx, box = _scalar_ctx_and_box(scalar_sys)
    # incumbent just inside an edge: the split point is clamped away from
    # the boundary so no child degenerates
    x_edge = box.x_lo[0] + 1e-4 * (box.x_hi[0] - box.x_lo[0])
    z_mid = 0.5 * (box.z_lo[0] + box.z_hi[0])
    node = BnbNode(box=box, nu=0.0,
                   point=(np.array([x_edge]), np.zeros(1), np.array([z_mid])),
                   stage=(1, 1), true_objective=1.0)
    children = bnb.split(node, ctx)
    width_x = box.x_hi[0] - box.x_lo[0]
    for c in children:
        assert c.x_hi[0] - c.x_lo[0] >= 0.009 * width_x
        assert c.z_hi[0] - c.z_lo[0] > 0


def test_split_refuses_exact_corner(scalar_sys):
    ctx, box = _scalar_ctx_and_box(scalar_sys)
    node = BnbNode(box=box, nu=0.0,
                   point=(np.array([box.x_lo[0]]), np.zeros(1), np.array([box.z_hi[0]])),
                   stage=(1, 1), true_objective=1.0)
    with pytest.raises(InvalidInputError):
        bnb.split(node, ctx)


def test_design_closed_scalar_matches_grid_oracle(scalar_sys):
    res = bnb.design_closed(scalar_sys, 0.8, [[2.0]], eps=1e-4)
    assert res.status == "eps-optimal"
    assert res.Upsilon_star - res.upsilon_star <= 1e-4 + 1e-12
    assert res.nodes < 500

    def xbar(z):
        return riccati.fixed_point(riccati.RiccatiOp(scalar_sys, 0.8, W=[[1 + 1 / z]]))[0, 0]

    zlo, zhi = 1e-4, 10.0
    best = (None, np.inf)
    for _ in range(4):
        zs = np.linspace(zlo, zhi, 400)
        vals = np.array([(xbar(z) + 1.0) * z if xbar(z) <= 2.0 + 1e-12 else np.inf for z in zs])
        i = int(np.argmin(vals))
        best = (zs[i], vals[i])
        zlo, zhi = zs[max(0, i - 2)], zs[min(len(zs) - 1, i + 2)]
    assert abs(res.Upsilon_star - best[1]) < 2e-4


def test_design_closed_monotone_bounds(design_sys):
    lam = 0.8
    m_bound = riccati.x_zero(design_sys, lam) + 5.0 * np.eye(2)
    res = bnb.design_closed(design_sys, lam, m_bound, eps=0.05, node_cap=400)
    nus = [r["nu"] for r in res.trace]
    ups = [r["Upsilon"] for r in res.trace]
    assert all(nus[i] <= nus[i + 1] + 1e-8 for i in range(len(nus) - 1))
    assert all(ups[i] >= ups[i + 1] - 1e-8 for i in range(len(ups) - 1))
    assert all(u >= n - 1e-8 for n, u in zip(nus, ups))
    assert res.status == "eps-optimal"


def test_design_closed_final_invariants(design_sys):
    lam = 0.8
    m_bound = riccati.x_zero(design_sys, lam) + 5.0 * np.eye(2)
    res = bnb.design_closed(design_sys, lam, m_bound, eps=0.05, node_cap=400)
    assert matcore.min_eigenvalue(res.X_star - res.x_bar_cl) >= -1e-5
    assert matcore.min_eigenvalue(m_bound - res.X_star) >= -1e-5
    assert matcore.min_eigenvalue(res.Z_star) >= -1e-10
    assert res.gap >= -1e-8


def test_design_closed_partition_soundness(scalar_sys):
    res = bnb.design_closed(scalar_sys, 0.8, [[1.8]], eps=1e-5, keep_covered=True)
    total = sum(b.volume() for b in res.covered_boxes)
    assert total == pytest.approx(res.initial_box.volume(), rel=1e-9)


def test_boundary_check_scalar(scalar_sys):
    res = bnb.design_closed(scalar_sys, 0.8, [[2.0]], eps=1e-4)
    # scalar optimum sits on the quality boundary X = M, i.e. the box edge
    assert res.boundary_distance == pytest.approx(0.0, abs=1e-3)


def test_node_limit_status(design_sys):
    lam = 0.8
    m_bound = riccati.x_zero(design_sys, lam) + 5.0 * np.eye(2)
    res = bnb.design_closed(design_sys, lam, m_bound, eps=1e-9, node_cap=9)
    assert res.status == "node-limit"
    assert res.Upsilon_star >= res.upsilon_star - 1e-8
