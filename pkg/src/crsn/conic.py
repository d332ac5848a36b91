"""Small self-contained SDP solver plus the design-problem builders.

The solver handles

    min  c . u
    s.t. B_j(u) >= 0 (PSD)  for each affine block map B_j
         E u = f
         lo <= u <= hi  (coordinate box)

where u collects the lower-triangle coordinates of all symmetric matrix
variables.  It runs an over-relaxed operator-splitting scheme (ADMM)
alternating a cached KKT solve with per-block PSD projections; every
problem in the toolkit has matrix variables of dimension <= ~10, so
robustness and determinism matter more than raw speed.

On top of the solver sit the builders for the open-loop trigger design
(trace-proxy objective under the five-block LMI), the z* trace-bound
problem, and the feasible-set blocks reused by the branch-and-bound
relaxations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import matcore, rates, riccati
from .errors import (
    InfeasibleQualityBoundError,
    InvalidInputError,
    SingularQError,
    SolverError,
    UnstablePlantError,
)
from .sysmodel import LtiSystem, feasibility_check, steady_state


# ---------------------------------------------------------------------------
# problem container
# ---------------------------------------------------------------------------

class MatrixVar:
    """Symmetric matrix decision variable, parametrized by its lower triangle."""

    def __init__(self, name: str, dim: int, offset: int):
        self.name = name
        self.dim = dim
        self.offset = offset
        self.size = dim * (dim + 1) // 2

    def coord(self, i: int, j: int) -> int:
        return self.offset + matcore.tri_index(self.dim, i, j)

    def unpack(self, u: np.ndarray) -> np.ndarray:
        return matcore.unvech(u[self.offset : self.offset + self.size])


def _svec_maps(dim: int):
    """Index arrays and weights for the isometric svec of dim-by-dim
    symmetric matrices (off-diagonals scaled by sqrt(2))."""
    pairs = matcore.tri_pairs(dim)
    rows = np.array([i for i, _ in pairs])
    cols = np.array([j for _, j in pairs])
    w = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, w


class BlockBuilder:
    """Accumulates one affine PSD block entry by entry (lower triangle)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.const = np.zeros((dim, dim))
        self.terms: dict[int, np.ndarray] = {}

    def _mirror(self, mat, r, c, val):
        mat[r, c] += val
        if r != c:
            mat[c, r] += val

    def add_const(self, r: int, c: int, val: float):
        if r < c:
            raise InvalidInputError("block entries are specified on the lower triangle")
        self._mirror(self.const, r, c, float(val))

    def add_term(self, r: int, c: int, var: MatrixVar, i: int, j: int, coeff: float):
        """entry (r, c) += coeff * X_var[i, j] (order of (i, j) is immaterial)."""
        if r < c:
            raise InvalidInputError("block entries are specified on the lower triangle")
        k = var.coord(i, j)
        if k not in self.terms:
            self.terms[k] = np.zeros((self.dim, self.dim))
        self._mirror(self.terms[k], r, c, float(coeff))


class SdpProblem:
    """Linear objective over symmetric matrix variables with affine PSD
    blocks, scalar equalities, and coordinate bounds."""

    def __init__(self):
        self.variables: list[MatrixVar] = []
        self._by_name: dict[str, MatrixVar] = {}
        self.blocks: list[BlockBuilder] = []
        self.eqs: list[tuple[dict[int, float], float]] = []
        self._objective: dict[int, float] = {}
        self._bounds: dict[int, tuple[float, float]] = {}

    # -- variables ---------------------------------------------------------
    def add_variable(self, name: str, dim: int) -> MatrixVar:
        if name in self._by_name:
            raise InvalidInputError(f"duplicate variable {name!r}")
        var = MatrixVar(name, dim, self.n_coords)
        self.variables.append(var)
        self._by_name[name] = var
        return var

    @property
    def n_coords(self) -> int:
        return sum(v.size for v in self.variables)

    # -- objective ----------------------------------------------------------
    def add_objective(self, var: MatrixVar, coeff_matrix):
        """Add <coeff_matrix, X_var> to the (minimized) objective."""
        cm = matcore.symmetrize(coeff_matrix)
        for i, j in matcore.tri_pairs(var.dim):
            factor = 1.0 if i == j else 2.0
            k = var.coord(i, j)
            self._objective[k] = self._objective.get(k, 0.0) + factor * cm[i, j]

    def add_objective_coord(self, var: MatrixVar, i: int, j: int, coeff: float):
        k = var.coord(i, j)
        self._objective[k] = self._objective.get(k, 0.0) + coeff

    # -- constraints ---------------------------------------------------------
    def new_block(self, dim: int) -> BlockBuilder:
        blk = BlockBuilder(dim)
        self.blocks.append(blk)
        return blk

    def add_psd_variable_block(self, var: MatrixVar):
        blk = self.new_block(var.dim)
        for i, j in matcore.tri_pairs(var.dim):
            blk.add_term(i, j, var, i, j, 1.0)
        return blk

    def add_equality(self, terms: dict[int, float], rhs: float):
        self.eqs.append((dict(terms), float(rhs)))

    def set_bounds(self, var: MatrixVar, i: int, j: int, lo: float, hi: float):
        if lo > hi:
            raise InvalidInputError(f"empty bound interval [{lo}, {hi}]")
        self._bounds[var.coord(i, j)] = (float(lo), float(hi))

    # -- assembly ------------------------------------------------------------
    def compile(self):
        n = self.n_coords
        c = np.zeros(n)
        for k, v in self._objective.items():
            c[k] = v
        block_rows = []
        block_meta = []  # (dim, rows, cols, weights, scale, slice)
        offset = 0
        a_parts = []
        b_parts = []
        for blk in self.blocks:
            rows, cols, w = _svec_maps(blk.dim)
            d = len(w)
            a_blk = np.zeros((d, n))
            for k, mat in blk.terms.items():
                a_blk[:, k] = mat[rows, cols] * w
            b_blk = blk.const[rows, cols] * w
            scale = max(np.abs(b_blk).max(initial=0.0), np.abs(a_blk).max(initial=0.0))
            scale = scale if scale > 1e-12 else 1.0
            a_parts.append(a_blk / scale)
            b_parts.append(b_blk / scale)
            block_meta.append((blk.dim, rows, cols, w, scale, slice(offset, offset + d)))
            offset += d
            block_rows.append(d)
        a = np.vstack(a_parts) if a_parts else np.zeros((0, n))
        b = np.concatenate(b_parts) if b_parts else np.zeros(0)

        if self.eqs:
            e = np.zeros((len(self.eqs), n))
            f = np.zeros(len(self.eqs))
            for r, (terms, rhs) in enumerate(self.eqs):
                for k, v in terms.items():
                    e[r, k] = v
                f[r] = rhs
                s = max(np.abs(e[r]).max(), abs(rhs), 1e-12)
                e[r] /= s
                f[r] /= s
        else:
            e = np.zeros((0, n))
            f = np.zeros(0)

        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        for k, (l, h) in self._bounds.items():
            lo[k], hi[k] = l, h
        return _Compiled(self, c, a, b, e, f, lo, hi, block_meta)


@dataclass
class _Compiled:
    problem: SdpProblem
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    E: np.ndarray
    f: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    block_meta: list

    def block_values(self, u: np.ndarray):
        """Unscaled numeric blocks at u."""
        out = []
        for blk, (dim, rows, cols, w, scale, sl) in zip(self.problem.blocks, self.block_meta):
            mat = blk.const.copy()
            for k, term in blk.terms.items():
                mat = mat + u[k] * term
            out.append(mat)
        return out


@dataclass
class SdpSolution:
    """Solver output: variable values plus accuracy diagnostics."""

    values: dict[str, np.ndarray]
    objective_value: float
    primal_infeasibility: float
    iterations: int
    status: str
    eq_violation: float = 0.0
    residuals: tuple[float, float] = (0.0, 0.0)
    notes: dict = field(default_factory=dict)
    state: dict | None = None

    def value(self, name: str) -> np.ndarray:
        return self.values[name]


# ---------------------------------------------------------------------------
# barrier engine
# ---------------------------------------------------------------------------

def _unsvec(seg: np.ndarray, dim: int, rows, cols, w) -> np.ndarray:
    mat = np.zeros((dim, dim))
    vals = seg / w
    mat[rows, cols] = vals
    mat[cols, rows] = vals
    return mat


class _BarrierBlocks:
    """Affine block maps in reduced coordinates: B_j(v) = C0_j + sum v_l T_jl.

    1x1 blocks (linear inequalities a.v + b > 0) are batched into stacked
    arrays; matrix blocks keep per-block tensors.
    """

    def __init__(self, nv: int):
        self.nv = nv
        self.dims: list[int] = []
        self.consts: list[np.ndarray] = []
        self.terms: list[np.ndarray] = []  # (nv, d, d) each
        self._lin_rows: list[np.ndarray] = []
        self._lin_consts: list[float] = []
        self.lin_A = np.zeros((0, nv))
        self.lin_b = np.zeros(0)

    def add(self, const: np.ndarray, terms: np.ndarray):
        if const.shape[0] == 1:
            self._lin_rows.append(terms[:, 0, 0].copy())
            self._lin_consts.append(float(const[0, 0]))
            self.lin_A = np.vstack([self.lin_A, terms[:, 0, 0][None, :]])
            self.lin_b = np.append(self.lin_b, float(const[0, 0]))
            return
        self.dims.append(const.shape[0])
        self.consts.append(const)
        self.terms.append(terms)

    @property
    def nu(self) -> int:
        return sum(self.dims) + self.lin_b.size

    def lin_values(self, v: np.ndarray) -> np.ndarray:
        return self.lin_b + self.lin_A @ v

    def value(self, j: int, v: np.ndarray) -> np.ndarray:
        t = self.terms[j]
        return self.consts[j] + np.tensordot(v, t, axes=(0, 0))

    def cholesky_all(self, v: np.ndarray):
        """Cholesky factors of matrix blocks, or None if anything is not PD
        (including the batched linear rows)."""
        if self.lin_b.size and np.min(self.lin_values(v)) <= 0.0:
            return None
        factors = []
        for j in range(len(self.dims)):
            try:
                factors.append(np.linalg.cholesky(self.value(j, v)))
            except np.linalg.LinAlgError:
                return None
        return factors

    def barrier_value(self, v: np.ndarray, factors) -> float:
        total = 0.0
        if self.lin_b.size:
            total -= float(np.sum(np.log(self.lin_values(v))))
        for l in factors:
            total -= 2.0 * float(np.sum(np.log(np.diag(l))))
        return total

    def grad_hess(self, v: np.ndarray):
        nv = v.size
        grad = np.zeros(nv)
        hess = np.zeros((nv, nv))
        if self.lin_b.size:
            vals = self.lin_values(v)
            inv = 1.0 / vals
            grad -= self.lin_A.T @ inv
            hess += (self.lin_A * (inv**2)[:, None]).T @ self.lin_A
        for j in range(len(self.dims)):
            mat = self.value(j, v)
            t = self.terms[j]
            zinv = matcore.inv_psym(mat)
            # grad_l = -tr(Z^-1 T_l); H_lk = tr(Z^-1 T_l Z^-1 T_k)
            zt = np.einsum("ab,lbc->lac", zinv, t)
            grad -= np.einsum("laa->l", zt)
            hess += np.einsum("lab,kba->lk", zt, zt)
        return grad, hess

    def max_step(self, v: np.ndarray, factors, dv: np.ndarray) -> float:
        """Largest alpha with all blocks still PD along v + alpha dv."""
        alpha = np.inf
        if self.lin_b.size:
            vals = self.lin_values(v)
            rates = self.lin_A @ dv
            neg = rates < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-vals[neg] / rates[neg])))
        for j in range(len(self.dims)):
            delta = np.tensordot(dv, self.terms[j], axes=(0, 0))
            l = factors[j]
            w = scipy.linalg.solve_triangular(l, delta, lower=True)
            w = scipy.linalg.solve_triangular(l, w.T, lower=True)
            lam_min = np.linalg.eigvalsh(0.5 * (w + w.T))[0]
            if lam_min < 0:
                alpha = min(alpha, -1.0 / lam_min)
        return alpha


def _newton_center(
    blocks: _BarrierBlocks,
    c_lin: np.ndarray,
    v: np.ndarray,
    mu: float,
    decrement_tol: float,
    max_steps: int,
    early_stop=None,
):
    """Center the barrier objective c.v/mu + sum -logdet B_j(v)."""
    steps = 0
    for _ in range(max_steps):
        try:
            grad_b, hess_b = blocks.grad_hess(v)
        except (np.linalg.LinAlgError, InvalidInputError):
            return v, steps, False
        grad = c_lin / mu + grad_b
        hess = hess_b + 1e-13 * np.eye(v.size)
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            return v, steps, False
        try:
            dv = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(hess), grad)
        except (np.linalg.LinAlgError, ValueError):
            try:
                dv = -np.linalg.solve(hess + 1e-9 * np.diag(np.diag(hess)), grad)
            except np.linalg.LinAlgError:
                return v, steps, False
        if not np.all(np.isfinite(dv)):
            return v, steps, False
        decrement2 = float(-grad @ dv)
        if decrement2 <= decrement_tol**2:
            return v, steps, True
        factors = blocks.cholesky_all(v)
        alpha = min(1.0, 0.98 * blocks.max_step(v, factors, dv))
        phi0 = float(c_lin @ v) / mu + blocks.barrier_value(v, factors)
        slope = float(grad @ dv)
        for _ in range(60):
            cand = v + alpha * dv
            f_cand = blocks.cholesky_all(cand)
            if f_cand is not None:
                phi = float(c_lin @ cand) / mu + blocks.barrier_value(cand, f_cand)
                if phi <= phi0 + 1e-4 * alpha * slope:
                    break
            alpha *= 0.5
        else:
            return v, steps, False
        v = cand
        steps += 1
        if early_stop is not None and early_stop(v):
            return v, steps, True
    return v, steps, False


def _solve_barrier(comp: _Compiled, problem: SdpProblem, tol: float, max_newton: int) -> SdpSolution:
    n = comp.c.size
    c_scale = max(1.0, np.linalg.norm(comp.c))
    c_s = comp.c / c_scale

    # eliminate equalities: u = u_p + N v
    if comp.f.size:
        u_p, *_ = np.linalg.lstsq(comp.E, comp.f, rcond=None)
        if np.abs(comp.E @ u_p - comp.f).max() > 1e-9:
            return SdpSolution(
                values={v.name: v.unpack(np.zeros(n)) for v in problem.variables},
                objective_value=np.nan,
                primal_infeasibility=np.inf,
                iterations=0,
                status="infeasible",
                notes={"reason": "inconsistent equalities"},
            )
        nbasis = scipy.linalg.null_space(comp.E)
    else:
        u_p = np.zeros(n)
        nbasis = np.eye(n)
    nv = nbasis.shape[1]

    blocks = _BarrierBlocks(nv)
    for dim, rows, cols, w, scale, sl in comp.block_meta:
        a_blk = comp.A[sl]
        const = _unsvec(comp.b[sl] + a_blk @ u_p, dim, rows, cols, w)
        cols_v = a_blk @ nbasis  # (D, nv)
        terms = np.stack(
            [_unsvec(cols_v[:, l], dim, rows, cols, w) for l in range(nv)], axis=0
        ) if nv else np.zeros((0, dim, dim))
        blocks.add(const, terms)
    # box rows become 1x1 blocks in v-space
    for k in range(n):
        for sign, bound in ((1.0, comp.lo[k]), (-1.0, comp.hi[k])):
            if not np.isfinite(bound):
                continue
            const = np.array([[sign * (u_p[k] - bound)]])
            terms = (sign * nbasis[k]).reshape(nv, 1, 1)
            blocks.add(const, terms)

    c_v = nbasis.T @ c_s
    obj_offset = float(c_s @ u_p)
    total_newton = 0

    # phase 1: find a strictly feasible v (minimize the uniform relaxation s)
    v = np.zeros(nv)
    if blocks.cholesky_all(v) is None:
        worst = 0.0
        for j in range(len(blocks.dims)):
            worst = min(worst, matcore.min_eigenvalue(blocks.value(j, v)))
        if blocks.lin_b.size:
            worst = min(worst, float(np.min(blocks.lin_values(v))))
        p1 = _BarrierBlocks(nv + 1)
        for j in range(len(blocks.dims)):
            d = blocks.dims[j]
            terms = np.concatenate([blocks.terms[j], np.eye(d)[None]], axis=0)
            p1.add(blocks.consts[j].copy(), terms)
        for row, b0 in zip(blocks.lin_A, blocks.lin_b):
            terms = np.append(row, 1.0).reshape(nv + 1, 1, 1)
            p1.add(np.array([[b0]]), terms)
        # keep s bounded below and every coordinate capped: the relaxed set is
        # unbounded (bigger matrices only widen the cone) and would otherwise
        # have no analytic center to chase
        p1.add(np.array([[1.0]]), np.concatenate([np.zeros((nv, 1, 1)), np.ones((1, 1, 1))]))
        cap = 1e6
        for k in range(nv):
            tk = np.zeros((nv + 1, 1, 1))
            tk[k, 0, 0] = 1.0
            p1.add(np.array([[cap]]), -tk)
            p1.add(np.array([[cap]]), tk)
        s0 = -worst * 1.05 + 0.1
        v1 = np.concatenate([v, [s0]])
        c1 = np.zeros(nv + 1)
        c1[-1] = 1.0
        mu = max(1.0, s0)
        feasible = False
        while total_newton < max_newton:
            v1, steps, _ = _newton_center(
                p1, c1, v1, mu, 0.5, max_newton - total_newton,
                early_stop=lambda vv: vv[-1] < -1e-8,
            )
            total_newton += steps
            if v1[-1] < -1e-8 and blocks.cholesky_all(v1[:-1]) is not None:
                feasible = True
                break
            if mu * p1.nu < 1e-12:
                break
            mu *= 0.05
        if not feasible:
            return SdpSolution(
                values={va.name: va.unpack(u_p + nbasis @ v) for va in problem.variables},
                objective_value=np.nan,
                primal_infeasibility=np.inf,
                iterations=total_newton,
                status="infeasible",
                notes={"phase1_s": float(v1[-1])},
            )
        v = v1[:-1]

    # phase 2: path following on the real objective
    nu_total = blocks.nu
    mu = min(max(1e-2, (abs(float(c_v @ v)) + 1.0) / nu_total), 1e3)
    gap_target = max(tol, 1e-10)
    status = "iteration-limit"
    while total_newton < max_newton:
        final_stage = nu_total * mu <= gap_target
        dec_tol = 0.05 if final_stage else 0.3
        v, steps, centered = _newton_center(
            blocks, c_v, v, mu, dec_tol, min(80, max_newton - total_newton)
        )
        total_newton += steps
        if final_stage:
            status = "optimal"
            break
        if not centered and steps == 0:
            # numerical floor reached before the target gap
            status = "optimal" if nu_total * mu <= 1e4 * gap_target else "iteration-limit"
            break
        mu *= 0.15

    u = u_p + nbasis @ v
    values = {va.name: va.unpack(u) for va in problem.variables}
    worst = 0.0
    for mat in comp.block_values(u):
        if mat.shape[0] == 1:
            worst = min(worst, float(mat[0, 0]))
        else:
            worst = min(worst, matcore.min_eigenvalue(mat))
    eq_violation = float(np.abs(comp.E @ u - comp.f).max()) if comp.f.size else 0.0
    return SdpSolution(
        values=values,
        objective_value=float(comp.c @ u),
        primal_infeasibility=max(0.0, -worst),
        iterations=total_newton,
        status=status,
        eq_violation=eq_violation,
        residuals=(0.0, float(nu_total * mu * c_scale)),
        notes={"gap_bound": float(nu_total * mu * c_scale)},
        state=None,
    )


def _project_blocks(v: np.ndarray, block_meta) -> np.ndarray:
    out = v.copy()
    for dim, rows, cols, w, scale, sl in block_meta:
        seg = v[sl]
        if dim == 1:
            out[sl] = max(seg[0], 0.0)
            continue
        mat = np.zeros((dim, dim))
        vals = seg / w
        mat[rows, cols] = vals
        mat[cols, rows] = vals
        ew, ev = np.linalg.eigh(mat)
        ew = np.clip(ew, 0.0, None)
        proj = (ev * ew) @ ev.T
        out[sl] = proj[rows, cols] * w
    return out


def solve(
    problem: SdpProblem,
    tol: float = 1e-8,
    max_iter: int = 200_000,
    method: str = "barrier",
    rho: float = 1.0,
    over_relax: float = 1.5,
    warm: dict | None = None,
    compiled: _Compiled | None = None,
    max_newton: int = 600,
) -> SdpSolution:
    """Solve the problem to tolerance tol.

    Two engines share the same contract:

    * ``barrier`` (default): primal interior-point path following after
      eliminating equalities; strictly feasible iterates, duality gap
      bounded by the barrier parameter.  Infeasibility is certified by a
      phase-1 relaxation that cannot reach the interior.
    * ``splitting``: over-relaxed operator splitting (cached KKT solve +
      per-block PSD projections, relaxation 1.5, adaptive penalty).
      Infeasibility is declared through the divergence signature of
      splitting methods (plateaued primal residual, growing duals).

    The splitting engine is accurate on well-scaled problems but stalls
    on near-degenerate design instances, hence the barrier default.
    """
    comp = compiled if compiled is not None else problem.compile()
    if method == "barrier":
        return _solve_barrier(comp, problem, tol, max_newton)
    if method != "splitting":
        raise InvalidInputError(f"unknown solve method {method!r}")
    n = comp.c.size
    a_mat, b_vec = comp.A, comp.b
    d_total = b_vec.size

    c_scale = max(1.0, np.linalg.norm(comp.c))
    c_s = comp.c / c_scale

    n_eq = comp.f.size
    h_mat = a_mat.T @ a_mat + np.eye(n)
    if n_eq:
        kkt = np.zeros((n + n_eq, n + n_eq))
        kkt[:n, :n] = h_mat
        kkt[:n, n:] = comp.E.T
        kkt[n:, :n] = comp.E
        lu = scipy.linalg.lu_factor(kkt)
    else:
        lu = scipy.linalg.cho_factor(h_mat)

    if warm is not None and warm.get("n") == n and warm.get("d") == d_total:
        u = warm["u"].copy()
        z = warm["z"].copy()
        w = warm["w"].copy()
        y = warm["y"].copy()
        yw = warm["yw"].copy()
        rho = warm.get("rho", rho)
    else:
        u = np.zeros(n)
        z = _project_blocks(a_mat @ u + b_vec, comp.block_meta)
        w = np.clip(u, comp.lo, comp.hi)
        y = np.zeros(d_total)
        yw = np.zeros(n)

    alpha = over_relax
    status = "iteration-limit"
    it = 0
    r_rel = s_rel = np.inf
    stall_hist: list[float] = []
    dual_hist: list[float] = []

    for it in range(1, max_iter + 1):
        rhs_top = a_mat.T @ (z - b_vec - y) + (w - yw) - c_s / rho
        if n_eq:
            rhs = np.concatenate([rhs_top, comp.f])
            u = scipy.linalg.lu_solve(lu, rhs)[:n]
        else:
            u = scipy.linalg.cho_solve(lu, rhs_top)

        au = a_mat @ u
        hz = alpha * (au + b_vec) + (1.0 - alpha) * z
        hw = alpha * u + (1.0 - alpha) * w
        z_old, w_old = z, w
        z = _project_blocks(hz + y, comp.block_meta)
        w = np.clip(hw + yw, comp.lo, comp.hi)
        y = y + hz - z
        yw = yw + hw - w

        r_norm = np.sqrt(np.linalg.norm(au + b_vec - z) ** 2 + np.linalg.norm(u - w) ** 2)
        s_norm = rho * np.linalg.norm(a_mat.T @ (z - z_old) + (w - w_old))
        p_scale = max(
            1.0,
            np.sqrt(np.linalg.norm(au + b_vec) ** 2 + np.linalg.norm(u) ** 2),
            np.sqrt(np.linalg.norm(z) ** 2 + np.linalg.norm(w) ** 2),
        )
        d_scale = max(1.0, rho * np.linalg.norm(a_mat.T @ y + yw))
        r_rel = r_norm / p_scale
        s_rel = s_norm / d_scale
        if r_rel < tol and s_rel < tol:
            status = "optimal"
            break

        if it % 25 == 0:
            if r_rel > 10.0 * s_rel and rho < 1e6:
                rho *= 2.0
                y *= 0.5
                yw *= 0.5
            elif s_rel > 10.0 * r_rel and rho > 1e-6:
                rho *= 0.5
                y *= 2.0
                yw *= 2.0

        if it % 100 == 0:
            stall_hist.append(r_rel)
            dual_hist.append(rho * np.sqrt(np.linalg.norm(y) ** 2 + np.linalg.norm(yw) ** 2))
            if len(stall_hist) >= 30:
                window = stall_hist[-30:]
                duals = dual_hist[-30:]
                plateaued = min(window) > max(1e4 * tol, 1e-6) and window[-1] > 0.99 * window[0]
                diverging = duals[-1] > 1.5 * max(duals[0], 1e-12)
                if plateaued and diverging:
                    status = "infeasible"
                    break

    values = {v.name: v.unpack(u) for v in problem.variables}
    blocks = comp.block_values(u)
    worst = 0.0
    for mat in blocks:
        if mat.shape[0] == 1:
            worst = min(worst, float(mat[0, 0]))
        else:
            worst = min(worst, matcore.min_eigenvalue(mat))
    eq_violation = float(np.abs(comp.E @ u - comp.f).max()) if n_eq else 0.0
    return SdpSolution(
        values=values,
        objective_value=float(comp.c @ u),
        primal_infeasibility=max(0.0, -worst),
        iterations=it,
        status=status,
        eq_violation=eq_violation,
        residuals=(float(r_rel), float(s_rel)),
        state={"u": u, "z": z, "w": w, "y": y, "yw": yw, "rho": rho, "n": n, "d": d_total},
    )


# ---------------------------------------------------------------------------
# LMI builders
# ---------------------------------------------------------------------------

def _q_inverse(sys: LtiSystem, strict: bool):
    """Q^{-1} for the big LMI block, with the documented ridge fallback
    for singular Q."""
    w = np.linalg.eigvalsh(sys.Q)
    scale = max(1.0, abs(w[-1]))
    if w[0] <= 1e-12 * scale:
        if strict:
            raise SingularQError("Q is singular and Q^{-1} is required")
        return matcore.inv_psym(sys.Q + 1e-9 * np.eye(sys.n)), True
    return matcore.inv_psym(sys.Q), False


def build_psi(
    problem: SdpProblem,
    s_var: MatrixVar,
    yz_var: MatrixVar,
    sys: LtiSystem,
    lam: float,
    strict_q: bool = False,
) -> tuple[BlockBuilder, bool]:
    """Append the five-block feasibility LMI Psi(S, T) >= 0.

    Block layout (row offsets n, 2n, 3n, 4n):

        [ S              sqrt(lam) S A   sqrt(1-lam) S A   S       0          ]
        [ sqrt(lam)A^T S S + C^T R^-1 C  0                 0       C^T R^-1   ]
        [ sqrt(1-l)A^T S 0               S                 0       0          ]
        [ S              0               0                 Q^-1    0          ]
        [ 0              R^-1 C          0                 0       T + R^-1   ]

    Returns the block and whether Q was ridge-perturbed.
    """
    n, m = sys.n, sys.m
    r_inv = matcore.inv_psym(sys.R)
    q_inv, perturbed = _q_inverse(sys, strict_q)
    crc = matcore.symmetrize(sys.C.T @ r_inv @ sys.C)
    ric = r_inv @ sys.C
    sl = np.sqrt(lam)
    sl1 = np.sqrt(max(0.0, 1.0 - lam))

    blk = problem.new_block(4 * n + m)
    r0, r1, r2, r3, r4 = 0, n, 2 * n, 3 * n, 4 * n
    # (0,0) = S
    for i, j in matcore.tri_pairs(n):
        blk.add_term(r0 + i, r0 + j, s_var, i, j, 1.0)
    # (1,0) = sqrt(lam) A^T S  (transpose of sqrt(lam) S A)
    for a in range(n):
        for b in range(n):
            for t in range(n):
                if sl * sys.A[t, a] != 0.0:
                    blk.add_term(r1 + a, r0 + b, s_var, t, b, sl * sys.A[t, a])
    # (2,0) = sqrt(1-lam) A^T S
    if sl1 > 0.0:
        for a in range(n):
            for b in range(n):
                for t in range(n):
                    if sys.A[t, a] != 0.0:
                        blk.add_term(r2 + a, r0 + b, s_var, t, b, sl1 * sys.A[t, a])
    # (3,0) = S
    for a in range(n):
        for b in range(n):
            blk.add_term(r3 + a, r0 + b, s_var, a, b, 1.0)
    # (1,1) = S + C^T R^-1 C
    for i, j in matcore.tri_pairs(n):
        blk.add_term(r1 + i, r1 + j, s_var, i, j, 1.0)
        blk.add_const(r1 + i, r1 + j, crc[i, j])
    # (4,1) = R^-1 C
    for a in range(m):
        for b in range(n):
            blk.add_const(r4 + a, r1 + b, ric[a, b])
    # (2,2) = S
    for i, j in matcore.tri_pairs(n):
        blk.add_term(r2 + i, r2 + j, s_var, i, j, 1.0)
    # (3,3) = Q^-1
    for i, j in matcore.tri_pairs(n):
        blk.add_const(r3 + i, r3 + j, q_inv[i, j])
    # (4,4) = T + R^-1
    for i, j in matcore.tri_pairs(m):
        blk.add_term(r4 + i, r4 + j, yz_var, i, j, 1.0)
        blk.add_const(r4 + i, r4 + j, r_inv[i, j])
    return blk, perturbed


def psi_value(S, T, sys: LtiSystem, lam: float, strict_q: bool = False) -> np.ndarray:
    """Numeric Psi(S, T) for direct feasibility checks."""
    n, m = sys.n, sys.m
    S = matcore.symmetrize(S)
    T = matcore.symmetrize(T)
    r_inv = matcore.inv_psym(sys.R)
    q_inv, _ = _q_inverse(sys, strict_q)
    sl = np.sqrt(lam)
    sl1 = np.sqrt(max(0.0, 1.0 - lam))
    psi = np.zeros((4 * n + m, 4 * n + m))
    r0, r1, r2, r3, r4 = 0, n, 2 * n, 3 * n, 4 * n
    psi[r0:r1, r0:r1] = S
    psi[r0:r1, r1:r2] = sl * S @ sys.A
    psi[r0:r1, r2:r3] = sl1 * S @ sys.A
    psi[r0:r1, r3:r4] = S
    psi[r1:r2, r1:r2] = S + sys.C.T @ r_inv @ sys.C
    psi[r1:r2, r4:] = sys.C.T @ r_inv
    psi[r2:r3, r2:r3] = S
    psi[r3:r4, r3:r4] = q_inv
    psi[r4:, r4:] = T + r_inv
    # blocks were written in the upper triangle; mirror it down
    full = np.triu(psi) + np.triu(psi, 1).T
    return matcore.symmetrize(full)


def add_schur_pair(problem: SdpProblem, top_var: MatrixVar, bottom) -> BlockBuilder:
    """Block [[X, I], [I, B]] >= 0 with X a variable and B a variable or a
    constant matrix."""
    n = top_var.dim
    blk = problem.new_block(2 * n)
    for i, j in matcore.tri_pairs(n):
        blk.add_term(i, j, top_var, i, j, 1.0)
    for i in range(n):
        blk.add_const(n + i, i, 1.0)
    if isinstance(bottom, MatrixVar):
        for i, j in matcore.tri_pairs(n):
            blk.add_term(n + i, n + j, bottom, i, j, 1.0)
    else:
        bot = matcore.symmetrize(bottom)
        for i, j in matcore.tri_pairs(n):
            blk.add_const(n + i, n + j, bot[i, j])
    return blk


# ---------------------------------------------------------------------------
# design problems
# ---------------------------------------------------------------------------

@dataclass
class OpenLoopDesign:
    """Result of the open-loop trigger design."""

    Y: np.ndarray
    S: np.ndarray
    report: rates.RateReport
    x_bar: np.ndarray
    solution: SdpSolution
    polish_alpha: float = 1.0


def _quality_floor_check(sys: LtiSystem, lam: float, M) -> np.ndarray:
    x0 = riccati.x_zero(sys, lam)
    if matcore.min_eigenvalue(matcore.symmetrize(M) - x0) <= 0:
        raise InfeasibleQualityBoundError(
            "quality bound M must strictly dominate the scheduler-independent floor"
        )
    return x0


def design_open(
    sys: LtiSystem,
    lam: float,
    M,
    tol: float = 1e-8,
    max_iter: int = 200_000,
    max_newton: int = 600,
    verify_slack: float = 1e-6,
) -> OpenLoopDesign:
    """Open-loop trigger design: minimize tr(Pi Y) under the quality LMI.

    After solving, the resulting upper fixed point is re-verified through
    the Riccati recursion; a marginally infeasible Y is repaired by the
    smallest uniform inflation (recorded as polish_alpha).
    """
    if not sys.stable:
        raise UnstablePlantError("open-loop design applies to stable plants only")
    if not feasibility_check(sys, lam):
        raise InfeasibleQualityBoundError(f"lambda={lam} infeasible for this plant")
    M = matcore.symmetrize(M)
    _quality_floor_check(sys, lam, M)
    pi = steady_state(sys).Pi

    prob = SdpProblem()
    s_var = prob.add_variable("S", sys.n)
    y_var = prob.add_variable("Y", sys.m)
    prob.add_objective(y_var, pi)
    build_psi(prob, s_var, y_var, sys, lam)
    add_schur_pair(prob, s_var, M)
    prob.add_psd_variable_block(y_var)

    sol = solve(prob, tol=tol, max_iter=max_iter, max_newton=max_newton)
    if sol.status == "infeasible":
        raise SolverError(
            "open-loop design SDP is infeasible for this quality bound",
            status=sol.status,
            solution=sol,
        )
    y_star = matcore.psd_project(sol.value("Y"))
    s_star = sol.value("S")

    # a-posteriori quality verification through the Riccati fixed point,
    # with a minimal uniform inflation if the solver left Y marginally short
    scale = max(1.0, matcore.spectral_norm_sym(M))
    alpha = 1.0
    x_bar = None
    for alpha in (1.0, 1.0005, 1.001, 1.005, 1.01):
        cand = riccati.fixed_point(riccati.RiccatiOp(sys, lam, trigger=alpha * y_star))
        if matcore.min_eigenvalue(M + verify_slack * scale * np.eye(sys.n) - cand) >= -matcore.PSD_RTOL * scale:
            x_bar = cand
            break
    if x_bar is None:
        raise SolverError(
            "designed trigger violates the quality bound beyond repair slack",
            status=sol.status,
            solution=sol,
        )
    y_star = alpha * y_star

    gamma = rates.open_loop_rate(lam, pi, y_star)
    f1, f2 = rates.rate_sandwich(lam, float(np.trace(pi @ y_star)))
    report = rates.RateReport(
        gamma=gamma, f1=f1, f2=f2, kappa_bound=rates.gap_open(lam, pi, y_star)
    )
    return OpenLoopDesign(
        Y=y_star, S=s_star, report=report, x_bar=x_bar, solution=sol, polish_alpha=alpha
    )


def solve_zstar(
    sys: LtiSystem,
    lam: float,
    M,
    X0=None,
    tol: float = 1e-8,
    max_iter: int = 200_000,
    max_newton: int = 600,
) -> float:
    """Trace bound z* for the closed-loop box: minimize
    tr((C M C^T + R) Z) / tr(C X0 C^T + R) over the quality-feasible set."""
    M = matcore.symmetrize(M)
    x0 = matcore.symmetrize(X0) if X0 is not None else _quality_floor_check(sys, lam, M)
    denom = float(np.trace(sys.C @ x0 @ sys.C.T + sys.R))

    prob = SdpProblem()
    s_var = prob.add_variable("S", sys.n)
    z_var = prob.add_variable("Z", sys.m)
    prob.add_objective(z_var, (sys.C @ M @ sys.C.T + sys.R) / denom)
    add_schur_pair(prob, s_var, M)
    build_psi(prob, s_var, z_var, sys, lam)
    prob.add_psd_variable_block(z_var)

    sol = solve(prob, tol=tol, max_iter=max_iter, max_newton=max_newton)
    if sol.status == "infeasible":
        raise SolverError(
            "z* problem infeasible: quality bound unreachable by any trigger",
            status=sol.status,
            solution=sol,
        )
    return max(float(sol.objective_value), 0.0)
