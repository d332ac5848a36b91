"""Global closed-loop trigger design by convex-envelope branch and bound.

The closed-loop design minimizes the bilinear objective

    f(X, Z) = tr((C X C^T + R) Z) = x~ . z~ + tr(R Z),
    x~ = vec(X),  z~ = (C^T kron C^T) vec(Z)

over the jointly convex feasible set (quality LMIs).  On a rectangle the
product x~_i z~_i admits a two-piece affine convex envelope that is exact
on the rectangle boundary; branch and bound splits the rectangle of the
worst coordinate at the incumbent point, four children per stage, keeping
best-first order on the relaxation values until the global gap closes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic, matcore, rates, riccati
from .errors import InvalidInputError, SolverError
from .sysmodel import LtiSystem, feasibility_check

PRUNE_SLACK = 1e-9


@dataclass
class Box:
    """Per-coordinate rectangle over (x~, z~) in vec coordinates.

    Mirrored coordinates (i, j)/(j, i) always carry identical bounds; the
    branching logic only ever touches lower-triangle representatives.
    """

    x_lo: np.ndarray
    x_hi: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray

    def __post_init__(self):
        for lo, hi in ((self.x_lo, self.x_hi), (self.z_lo, self.z_hi)):
            if np.any(lo > hi + 1e-15):
                raise InvalidInputError("box has inverted bounds")

    def copy(self) -> "Box":
        return Box(self.x_lo.copy(), self.x_hi.copy(), self.z_lo.copy(), self.z_hi.copy())

    def volume(self) -> float:
        """Rectangle volume over the symmetry-reduced coordinates (each
        mirrored pair counted once), so child volumes add up exactly."""
        n = int(round(np.sqrt(self.x_lo.size)))
        idx = [j * n + i for j in range(n) for i in range(j, n)]
        return float(
            np.prod((self.x_hi - self.x_lo)[idx]) * np.prod((self.z_hi - self.z_lo)[idx])
        )

    def contains(self, x_vec, z_vec, tol: float = 1e-7) -> bool:
        sx = max(1.0, np.abs(self.x_hi).max(), np.abs(self.x_lo).max())
        sz = max(1.0, np.abs(self.z_hi).max(), np.abs(self.z_lo).max())
        return bool(
            np.all(x_vec >= self.x_lo - tol * sx)
            and np.all(x_vec <= self.x_hi + tol * sx)
            and np.all(z_vec >= self.z_lo - tol * sz)
            and np.all(z_vec <= self.z_hi + tol * sz)
        )


@dataclass
class BnbNode:
    """Open node: rectangle, relaxation bound, incumbent point, stage tag."""

    box: Box
    nu: float
    point: tuple[np.ndarray, np.ndarray, np.ndarray]  # (x~, y~, z~)
    stage: tuple[int, int]
    true_objective: float


@dataclass
class BnbResult:
    """Outcome of the epsilon-accuracy search."""

    X_star: np.ndarray
    Z_star: np.ndarray
    upsilon_star: float
    Upsilon_star: float
    stages: int
    status: str
    nodes: int = 0
    gamma_bar: float | None = None
    gap: float | None = None
    x_bar_cl: np.ndarray | None = None
    boundary_distance: float | None = None
    z_vec_star: np.ndarray | None = None
    trace: list = field(default_factory=list)
    covered_boxes: list = field(default_factory=list)
    initial_box: Box | None = None


def convex_envelope(x_bounds, z_bounds, x: float, z: float) -> float:
    """Two-piece affine convex envelope of the product x*z on a rectangle.

    Underestimates the product everywhere on the rectangle and is exact
    exactly on its boundary.
    """
    xl, xh = map(float, x_bounds)
    zl, zh = map(float, z_bounds)
    sx = max(1.0, abs(xl), abs(xh))
    sz = max(1.0, abs(zl), abs(zh))
    if not (xl - 1e-9 * sx <= x <= xh + 1e-9 * sx and zl - 1e-9 * sz <= z <= zh + 1e-9 * sz):
        raise InvalidInputError("envelope point lies outside the rectangle")
    return max(zl * x + xl * z - zl * xl, zh * x + xh * z - zh * xh)


class BnbContext:
    """Problem data shared by every node of one design run."""

    def __init__(self, sys: LtiSystem, lam: float, M, x0, zstar: float,
                 sdp_tol: float = 1e-9, max_newton: int = 600):
        self.sys = sys
        self.lam = lam
        self.M = matcore.symmetrize(M)
        self.x0 = matcore.symmetrize(x0)
        self.zstar = float(zstar)
        self.sdp_tol = sdp_tol
        self.max_newton = max_newton
        self.n = sys.n
        self.m = sys.m
        self.G = matcore.kron(sys.C.T, sys.C.T)
        self.tri = matcore.tri_pairs(sys.n)  # branching representatives
        # vec indices of (i, j) and its mirror for each representative
        self.vec_idx = [(j * sys.n + i, i * sys.n + j) for i, j in self.tri]

    def rep_bounds(self, box: Box, k: int):
        vi = self.vec_idx[k][0]
        return (box.x_lo[vi], box.x_hi[vi]), (box.z_lo[vi], box.z_hi[vi])


def initial_box(sys: LtiSystem, lam: float, M, x0=None, zstar=None,
                sdp_tol: float = 1e-9) -> Box:
    """Root rectangle containing the global optimum.

    X coordinates: diagonal from the scheduler floor up to sqrt(Mii Mjj);
    Z-side coordinates are the range of (C^T kron C^T) vec(Z) over the
    trace-bounded Z box (a linear function over a rectangle, extremized
    coordinate-wise at the vertices).
    """
    M = matcore.symmetrize(M)
    if x0 is None:
        x0 = riccati.x_zero(sys, lam)
    if matcore.min_eigenvalue(M - x0) <= 0:
        from .errors import InfeasibleQualityBoundError

        raise InfeasibleQualityBoundError(
            "quality bound M must strictly dominate the scheduler-independent floor"
        )
    if zstar is None:
        zstar = conic.solve_zstar(sys, lam, M, X0=x0, tol=sdp_tol)
    n, m = sys.n, sys.m
    g = matcore.kron(sys.C.T, sys.C.T)

    x_lo = np.empty(n * n)
    x_hi = np.empty(n * n)
    for j in range(n):
        for i in range(n):
            hi = np.sqrt(M[i, i] * M[j, j])
            x_hi[j * n + i] = hi
            x_lo[j * n + i] = x0[i, i] if i == j else -hi

    # vec-coordinate bounds of the Z box: diagonal in [0, z*], off-diagonal
    # in [-z*, z*]
    y_lo = np.empty(m * m)
    y_hi = np.empty(m * m)
    for j in range(m):
        for i in range(m):
            y_hi[j * m + i] = zstar
            y_lo[j * m + i] = 0.0 if i == j else -zstar

    z_lo = np.where(g >= 0, g * y_lo[None, :], g * y_hi[None, :]).sum(axis=1)
    z_hi = np.where(g >= 0, g * y_hi[None, :], g * y_lo[None, :]).sum(axis=1)
    return Box(x_lo=x_lo, x_hi=x_hi, z_lo=z_lo, z_hi=z_hi)


@dataclass
class RelaxationOutcome:
    value: float
    x_vec: np.ndarray
    y_vec: np.ndarray
    z_vec: np.ndarray
    true_objective: float
    X: np.ndarray
    Z: np.ndarray
    S: np.ndarray
    solution: conic.SdpSolution


def solve_relaxation(box: Box, ctx: BnbContext) -> RelaxationOutcome:
    """Convex relaxation on one rectangle.

    Variables (X, Z, S) plus one epigraph scalar per representative
    coordinate; the bilinear objective is replaced by the rectangle's
    envelope, the linear identity z~ = (C^T kron C^T) vec(Z) is enforced
    as equalities, and the feasible-set LMIs are shared with the
    open-loop design.
    """
    sys, n, m = ctx.sys, ctx.n, ctx.m
    prob = conic.SdpProblem()
    s_var = prob.add_variable("S", n)
    x_var = prob.add_variable("X", n)
    z_var = prob.add_variable("Z", m)

    # scalar stacks: one epigraph t_k and one z-tilde coordinate per
    # representative; modeled as 1x1 matrix variables
    t_vars = [prob.add_variable(f"t{k}", 1) for k in range(len(ctx.tri))]
    zt_vars = [prob.add_variable(f"zt{k}", 1) for k in range(len(ctx.tri))]

    # objective: sum_k w_k t_k + tr(R Z), w doubled off the diagonal
    for k, (i, j) in enumerate(ctx.tri):
        prob.add_objective_coord(t_vars[k], 0, 0, 1.0 if i == j else 2.0)
    prob.add_objective(z_var, sys.R)

    conic.add_schur_pair(prob, x_var, s_var)
    conic.add_schur_pair(prob, s_var, ctx.M)
    conic.build_psi(prob, s_var, z_var, sys, ctx.lam)
    prob.add_psd_variable_block(z_var)

    for k, (i, j) in enumerate(ctx.tri):
        (xl, xh), (zl, zh) = ctx.rep_bounds(box, k)
        # envelope epigraph: t_k >= zl x + xl z - zl xl and the upper piece
        for zc, xc in ((zl, xl), (zh, xh)):
            blk = prob.new_block(1)
            blk.add_term(0, 0, t_vars[k], 0, 0, 1.0)
            blk.add_term(0, 0, x_var, i, j, -zc)
            blk.add_term(0, 0, zt_vars[k], 0, 0, -xc)
            blk.add_const(0, 0, zc * xc)
        # box
        prob.set_bounds(x_var, i, j, xl, xh)
        prob.set_bounds(zt_vars[k], 0, 0, zl, zh)
        # equality zt_k = (C^T Z C)[i, j]
        terms = {zt_vars[k].coord(0, 0): 1.0}
        for a, b in matcore.tri_pairs(m):
            coeff = sys.C[a, i] * sys.C[b, j] + (sys.C[b, i] * sys.C[a, j] if a != b else 0.0)
            if coeff != 0.0:
                terms[z_var.coord(a, b)] = terms.get(z_var.coord(a, b), 0.0) - coeff
        prob.add_equality(terms, 0.0)

    sol = conic.solve(prob, tol=ctx.sdp_tol, max_newton=ctx.max_newton)
    if sol.status == "infeasible":
        raise SolverError("relaxation infeasible on this rectangle", status=sol.status, solution=sol)

    X = matcore.symmetrize(sol.value("X"))
    Z = matcore.symmetrize(sol.value("Z"))
    S = matcore.symmetrize(sol.value("S"))
    x_vec = matcore.vec(X)
    y_vec = matcore.vec(Z)
    zt = np.array([float(sol.value(f"zt{k}")[0, 0]) for k in range(len(ctx.tri))])
    z_vec = np.empty(n * n)
    for k, (vi, vj) in enumerate(ctx.vec_idx):
        z_vec[vi] = zt[k]
        z_vec[vj] = zt[k]
    # keep the bookkeeping point inside the rectangle
    x_vec = np.clip(x_vec, box.x_lo, box.x_hi)
    z_vec = np.clip(z_vec, box.z_lo, box.z_hi)
    true_obj = float(np.trace((sys.C @ X @ sys.C.T + sys.R) @ Z))
    return RelaxationOutcome(
        value=float(sol.objective_value),
        x_vec=x_vec,
        y_vec=y_vec,
        z_vec=z_vec,
        true_objective=true_obj,
        X=X,
        Z=Z,
        S=S,
        solution=sol,
    )


def _deltas(node: BnbNode, ctx: BnbContext) -> np.ndarray:
    """Envelope gaps x~_k z~_k - Vex_k at the node's incumbent point."""
    x_vec, _, z_vec = node.point
    out = np.empty(len(ctx.tri))
    for k in range(len(ctx.tri)):
        vi = ctx.vec_idx[k][0]
        xb, zb = ctx.rep_bounds(node.box, k)
        out[k] = x_vec[vi] * z_vec[vi] - convex_envelope(xb, zb, x_vec[vi], z_vec[vi])
    return out


def split(node: BnbNode, ctx: BnbContext, edge_margin: float = 0.01) -> list[Box]:
    """四-way split of the worst coordinate's rectangle at the incumbent.

    The split point is clamped at least edge_margin of the width away
    from each edge so children never degenerate.
    """
    deltas = _deltas(node, ctx)
    best = int(np.argmax(deltas))
    if deltas[best] <= 1e-12:
        raise InvalidInputError("node has no envelope gap left to split")
    vi, vj = ctx.vec_idx[best]
    (xl, xh), (zl, zh) = ctx.rep_bounds(node.box, best)
    x_pt = float(node.point[0][vi])
    z_pt = float(node.point[2][vi])
    xw, zw = xh - xl, zh - zl
    xs = min(max(x_pt, xl + edge_margin * xw), xh - edge_margin * xw)
    zs = min(max(z_pt, zl + edge_margin * zw), zh - edge_margin * zw)

    children = []
    # (x-lo, x-hi, z-lo, z-hi) per child, in the documented order
    quads = (
        (xl, xs, zl, zs),
        (xs, xh, zl, zs),
        (xs, xh, zs, zh),
        (xl, xs, zs, zh),
    )
    for a, b, c, d in quads:
        child = node.box.copy()
        for v in (vi, vj):
            child.x_lo[v], child.x_hi[v] = a, b
            child.z_lo[v], child.z_hi[v] = c, d
        children.append(child)
    return children


def boundary_check(result: BnbResult, box: Box | None = None) -> float:
    """Smallest normalized distance from the solution point (x~*, z~*) to
    the initial box boundary; ~0 when the boundary-solution property binds
    there (an interior value only means the binding boundary belongs to
    the feasible set, not the rectangle)."""
    if box is None:
        box = result.initial_box
    x_vec = matcore.vec(result.X_star)
    z_vec = result.z_vec_star
    dists = []
    for lo, hi, val in ((box.x_lo, box.x_hi, x_vec), (box.z_lo, box.z_hi, z_vec)):
        width = np.where(hi - lo > 0, hi - lo, 1.0)
        d = np.minimum(np.abs(val - lo), np.abs(hi - val)) / width
        dists.append(float(d.min()))
    return min(dists)


def design_closed(
    sys: LtiSystem,
    lam: float,
    M,
    eps: float | None = None,
    node_cap: int = 10_000,
    sdp_tol: float = 1e-9,
    max_newton: int = 600,
    keep_covered: bool = False,
) -> BnbResult:
    """Epsilon-accuracy global closed-loop trigger design.

    Best-first branch and bound: the open node with the smallest
    relaxation bound is split, its four children solved in fixed order,
    the incumbent and the global lower bound updated, and nodes whose
    bound exceeds the incumbent pruned.  Terminates when the incumbent
    and the bound meet within eps (default 1e-4 of the initial incumbent
    scale) or the node cap is reached.
    """
    from .errors import InfeasibleLambdaError

    if not feasibility_check(sys, lam):
        raise InfeasibleLambdaError(f"lambda={lam} infeasible for rho={sys.spectral_radius:.4g}")
    M = matcore.symmetrize(M)
    x0 = riccati.x_zero(sys, lam)
    zstar = conic.solve_zstar(sys, lam, M, X0=x0, tol=sdp_tol)
    ctx = BnbContext(sys, lam, M, x0, zstar, sdp_tol=sdp_tol, max_newton=max_newton)
    box0 = initial_box(sys, lam, M, x0=x0, zstar=zstar, sdp_tol=sdp_tol)

    def tightened(out: RelaxationOutcome):
        """Best feasible value reachable from a node's Z: push X down to the
        Riccati upper fixed point (the paper's S^{-1} = X argument)."""
        z = matcore.symmetrize(out.Z)
        try:
            xt = riccati.fixed_point(riccati.RiccatiOp(sys, lam, trigger=z))
        except Exception:
            return out.true_objective, out.X, out.Z
        scale = max(1.0, matcore.spectral_norm_sym(M))
        if matcore.min_eigenvalue(M - xt) < -1e-7 * scale:
            return out.true_objective, out.X, out.Z
        val = float(np.trace((sys.C @ xt @ sys.C.T + sys.R) @ z))
        if val <= out.true_objective:
            return val, xt, z
        return out.true_objective, out.X, out.Z

    root = solve_relaxation(box0, ctx)
    if eps is None:
        eps = 1e-4 * max(1.0, abs(root.true_objective))
    if eps <= 0:
        raise InvalidInputError("eps must be positive")

    upper, inc_x, inc_z = tightened(root)
    nodes_solved = 1
    stage = 1
    open_nodes: list[BnbNode] = [
        BnbNode(box=box0, nu=root.value, point=(root.x_vec, root.y_vec, root.z_vec),
                stage=(1, 1), true_objective=root.true_objective)
    ]
    covered: list[tuple[Box, str]] = []
    trace = [{"stage": 1, "nu": root.value, "Upsilon": upper, "open": 1}]
    status = "eps-optimal"

    while open_nodes:
        lower = min(node.nu for node in open_nodes)
        if upper - lower <= eps:
            break
        if nodes_solved >= node_cap:
            status = "node-limit"
            break
        # best-first selection, deterministic tie-break on stage/child tag
        open_nodes.sort(key=lambda nd: (nd.nu, nd.stage))
        node = open_nodes.pop(0)
        try:
            child_boxes = split(node, ctx)
        except InvalidInputError:
            # envelope exact at this node: it cannot improve the bound
            covered.append((node.box, "exact"))
            continue
        stage += 1
        for t, child_box in enumerate(child_boxes, start=1):
            try:
                out = solve_relaxation(child_box, ctx)
            except SolverError:
                covered.append((child_box, "infeasible"))
                continue
            nodes_solved += 1
            cand_val, cand_x, cand_z = tightened(out)
            if cand_val < upper:
                upper = cand_val
                inc_x, inc_z = cand_x, cand_z
            child = BnbNode(
                box=child_box,
                nu=max(out.value, node.nu),  # refinement cannot loosen the bound
                point=(out.x_vec, out.y_vec, out.z_vec),
                stage=(stage, t),
                true_objective=out.true_objective,
            )
            if child.nu > upper + PRUNE_SLACK * max(1.0, abs(upper)):
                covered.append((child_box, "pruned"))
            else:
                open_nodes.append(child)
        # prune stale nodes against the improved incumbent
        still_open = []
        for nd in open_nodes:
            if nd.nu > upper + PRUNE_SLACK * max(1.0, abs(upper)):
                covered.append((nd.box, "pruned"))
            else:
                still_open.append(nd)
        open_nodes = still_open
        lower = min((nd.nu for nd in open_nodes), default=upper)
        trace.append({"stage": stage, "nu": lower, "Upsilon": upper, "open": len(open_nodes)})

    lower = min((nd.nu for nd in open_nodes), default=upper)
    x_star = matcore.symmetrize(inc_x)
    z_star = matcore.psd_project(inc_z)

    # tie the abstract SDP answer back to the estimation semantics
    x_bar_cl = riccati.fixed_point(riccati.RiccatiOp(sys, lam, trigger=z_star))
    gamma_bar = rates.closed_loop_rate_upper(x_bar_cl, z_star, sys, lam)
    gap = rates.gap_closed(lam, lower, x_star, z_star, sys)

    result = BnbResult(
        X_star=x_star,
        Z_star=z_star,
        upsilon_star=float(lower),
        Upsilon_star=float(upper),
        stages=stage,
        status=status,
        nodes=nodes_solved,
        gamma_bar=float(gamma_bar),
        gap=float(gap),
        x_bar_cl=x_bar_cl,
        z_vec_star=ctx.G @ matcore.vec(z_star),
        trace=trace,
        covered_boxes=([b for b, _ in covered] + [nd.box for nd in open_nodes]) if keep_covered else [],
        initial_box=box0,
    )
    result.boundary_distance = boundary_check(result, box0)
    return result
