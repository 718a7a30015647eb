"""Corrector for the approximate lattice state.

The equation F(v + w) = 0 is split with the gauge projection P (onto the
span of the gauge modes G_gamma at v) and its complement Pbar.  The
complement equation is solved by the fixed-point iteration

    w <- -Lbar^{-1} Pbar [F(v) + N_v(w)] = -Lbar^{-1} Pbar [F(v + w) - L w]

on odd perturbations with P w = 0, where Lbar = Pbar L Pbar.  Each inner
solve is preconditioned CG on the symmetric form Pbar^T H Pbar restricted to
the odd subspace.  A damped Newton iteration on the same constraint set is
provided as an independent check.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell_discretization import FieldState
from .gl_operator import DiscreteGL, trig_gammas

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message: str, history: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_history: list
    w_norm: float
    final_residual: float
    gauge_pairing: float
    parity_defect: float
    contraction_ratio: float = float("nan")
    non_contraction: bool = False
    energy_history: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SolveReport":
        return cls(**json.loads(text))


def odd_basis(perm: np.ndarray) -> sp.csr_matrix:
    """Columns (e_k - e_{perm k}) / sqrt 2 over orbit representatives k < perm k."""
    k = np.flatnonzero(np.arange(perm.size) < perm)
    if 2 * k.size != perm.size:
        raise SolverError("reflection has fixed points; odd basis needs a free involution")
    s = 1 / math.sqrt(2)
    cols = np.arange(k.size)
    rows = np.concatenate([k, perm[k]])
    vals = np.concatenate([np.full(k.size, s), np.full(k.size, -s)])
    return sp.csr_matrix((vals, (rows, np.concatenate([cols, cols]))), shape=(perm.size, k.size))


class ProjectedSystem:
    """Gauge projection at a fixed base plus the odd-subspace reduction."""

    def __init__(self, gl: DiscreteGL, x_base: np.ndarray, penalty: float = 1.0):
        self.gl = gl
        self.x_base = np.asarray(x_base, float).copy()
        psi0, _ = gl.split(self.x_base)
        N = gl.N
        self.G = sp.vstack([sp.diags(-psi0.imag), sp.diags(psi0.real), gl.Dplus]).tocsr()
        self.B = gl.gauge_constraint_matrix(self.x_base)
        self.A = (gl.neg_laplacian() + sp.diags(np.abs(psi0) ** 2)).tocsc()
        self._A_lu = spla.splu(self.A)
        self.Q = odd_basis(gl.reflection)
        self.penalty = penalty

    # P w = G A^{-1} B w ;  Pbar^T y = y - B^T A^{-1} G^T y
    def pbar(self, w):
        return w - self.G @ self._A_lu.solve(self.B @ w)

    def pbar_T(self, y):
        return y - self.B.T @ self._A_lu.solve(self.G.T @ y)

    def gauge_defect(self, w) -> float:
        return float(np.max(np.abs(self.B @ w)))

    def preconditioner(self, H: sp.spmatrix):
        K = self.Q.T @ (H + self.penalty * self.gl.dA * (self.B.T @ self.B)) @ self.Q
        lu = spla.splu(K.tocsc())
        n = self.Q.shape[1]
        return spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)

    def solve(self, H, rhs_M, M_pre=None, rtol=1e-12, maxiter=2000):
        """Solve Pbar^T H Pbar w = Pbar^T rhs_M for odd w with P w = 0.

        ``H`` is a sparse matrix or a callable v -> H v.
        """
        Q = self.Q
        hv = H.__matmul__ if sp.issparse(H) else H
        n = Q.shape[1]

        def mv(eta):
            return Q.T @ self.pbar_T(hv(self.pbar(Q @ eta)))

        op = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        b = Q.T @ self.pbar_T(rhs_M)
        if M_pre is None and sp.issparse(H):
            M_pre = self.preconditioner(H)
        eta, info = spla.cg(op, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M_pre)
        res = np.linalg.norm(mv(eta) - b)
        if info != 0 and res > 1e3 * rtol * np.linalg.norm(b):
            raise SolverError(f"inner CG stagnated (info={info}, residual {res:.3e})")
        return self.pbar(Q @ eta)


def h1_norm(gl: DiscreteGL, x_base: np.ndarray, w: np.ndarray) -> float:
    """Discrete H^1 norm: M-norm plus covariant differences of xi and plain differences of c."""
    psi, c = gl.split(x_base)
    xi, dc = gl.split(w)
    total = gl.inner(w, w)
    for t in gl.types:
        theta = t.phase + t.S @ c
        z = np.exp(-1j * theta) * xi[t.q] - xi[t.p]
        total += t.weight * gl.dA * float(np.sum(np.abs(z) ** 2))
        for comp in (dc[: gl.N], dc[gl.N :]):
            total += t.weight * gl.dA * float(np.sum((comp[t.q] - comp[t.p]) ** 2))
    return math.sqrt(total)


def _pairing(gl: DiscreteGL, x_base, F, gammas) -> float:
    worst = 0.0
    for gam in gammas:
        G = gl.gauge_mode(x_base, gam)
        nG = gl.norm(G)
        if nG > 0:
            worst = max(worst, abs(gl.inner(G, F)) / nG)
    return worst


def verify_projected_equation(
    u: FieldState, kappa: float, test_gammas: Optional[Sequence[np.ndarray]] = None, base: Optional[FieldState] = None
) -> float:
    """max over test gamma of |<G_gamma, F(u)>| / ||G_gamma||, G_gamma taken at ``base`` (default u).

    With base = u the pairing vanishes identically by gauge invariance of the
    discrete energy; with base = v it tests that F(u) itself is small.
    """
    gl = DiscreteGL(u.background, kappa)
    if test_gammas is None:
        test_gammas = trig_gammas(u.grid, 20)
    xb = (base or u).as_vector()
    return _pairing(gl, xb, gl.residual(u.as_vector()), test_gammas)


def _parity_defect(gl, w):
    return float(np.max(np.abs(gl.reflect(w) + w))) if w.size else 0.0


def solve_corrector(
    v: FieldState,
    kappa: float,
    tol: float = 1e-8,
    max_iter: int = 50,
    damping: float = 1.0,
    inner_rtol: float = 1e-12,
    atol: float = 1e-12,
) -> tuple[np.ndarray, SolveReport]:
    """Fixed-point corrector; returns (w, report).

    ``tol`` is relative to ||F(v)||; ``atol`` is a round-off floor so that an
    already solved v is accepted after one step.
    """
    gl = DiscreteGL(v.background, kappa)
    x = v.as_vector()
    sysp = ProjectedSystem(gl, x)
    H = gl.hessian(x)
    pre = sysp.preconditioner(H)
    F0 = gl.residual(x)
    nF0 = gl.norm(F0)
    target = max(tol * nF0, atol)
    w = np.zeros_like(x)
    history, steps, energies = [], [], [gl.energy(x)]
    F = F0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        r = F - gl.M_solve(H @ w)  # F(v + w) - L w
        w_new = sysp.solve(H, -(gl.M @ r), M_pre=pre, rtol=inner_rtol)
        if damping != 1.0:
            w_new = w + damping * (w_new - w)
        steps.append(gl.norm(w_new - w))
        w = w_new
        F = gl.residual(x + w)
        res = gl.norm(sysp.pbar(F))
        history.append(res)
        energies.append(gl.energy(x + w))
        log.debug("fixed point %d: projected residual %.3e", it, res)
        if res <= target:
            converged = True
            break
        if len(steps) >= 3 and steps[-1] >= steps[-2] >= steps[-3]:
            break
    ratios = [steps[k + 1] / steps[k] for k in range(len(steps) - 1) if steps[k] > 0]
    ratio = float(np.max(ratios[1:])) if len(ratios) > 1 else (ratios[0] if ratios else 0.0)
    if nF0 == 0:
        converged, history, ratio = True, [0.0], 0.0
    report = SolveReport(
        converged=converged,
        iterations=it,
        residual_history=[float(h) for h in history],
        w_norm=h1_norm(gl, x, w),
        final_residual=gl.norm(F),
        gauge_pairing=_pairing(gl, x, F, trig_gammas(v.grid, 20)),
        parity_defect=_parity_defect(gl, w),
        contraction_ratio=float(ratio),
        non_contraction=bool(ratio >= 1.0),
        energy_history=[float(e) for e in energies],
    )
    return w, report


def newton_solve(
    v: FieldState,
    kappa: float,
    tol: float = 1e-8,
    max_iter: int = 30,
    w0: Optional[np.ndarray] = None,
    atol: float = 1e-12,
) -> tuple[FieldState, dict]:
    """Damped Newton for Pbar F(v + w) = 0 over odd w with P w = 0 (projection at v)."""
    gl = DiscreteGL(v.background, kappa)
    x = v.as_vector()
    sysp = ProjectedSystem(gl, x)
    nF0 = gl.norm(gl.residual(x))
    target = max(tol * nF0, atol)
    w = np.zeros_like(x) if w0 is None else sysp.pbar(np.asarray(w0, float))

    def merit(ww):
        return gl.norm(sysp.pbar(gl.residual(x + ww)))

    history = [merit(w)]
    accepted = 0
    for _ in range(max_iter):
        if history[-1] <= target:
            break
        u = x + w
        H = gl.hessian(u)
        F = gl.residual(u)
        dw = sysp.solve(H, -(gl.M @ F), rtol=1e-13)
        t = 1.0
        while t > 1e-4:
            m = merit(w + t * dw)
            if m < history[-1]:
                break
            t *= 0.5
        else:
            raise SolverError("Newton line search failed", history)
        w = w + t * dw
        history.append(m)
        accepted += 1
    if history[-1] > target:
        raise SolverError(f"Newton did not converge (residual {history[-1]:.3e})", history)
    u = FieldState.from_vector(v.background, x + w)
    return u, {"steps": accepted, "history": history, "w": w}


# ---------------------------------------------------------------- tiling

def tile_solution(u: FieldState, m: int, kappa: float, path=None) -> dict:
    """Fields on an m x m block of cells.

    Copy (k1, k2) holds psi(x + k1 omega1 + k2 omega2) = exp(i phi) psi(x) and
    a(x + s) = a(x) + grad g_s(x); gauge-invariant observables are copied
    exactly.  Returns arrays (positions, psi, a, |psi|^2, B per node) and
    optionally writes a field dump with the combined grid.
    """
    from .cell_discretization import wrap_phase
    from .lattice_geometry import gauge_exponent_gradient

    g = u.grid
    sh = g.shape
    n = u.background.n
    a = u.a_cartesian()
    B = _node_field(u)
    pos, psi, aa, rho, bb, idx = [], [], [], [], [], []
    i, j = g.ij(np.arange(g.size))
    for k1 in range(m):
        for k2 in range(m):
            s = k1 * sh.omega1 + k2 * sh.omega2
            if k1 or k2:
                phi = wrap_phase(g.nodes, k1, k2, sh, n)
                shift = _lift_gradient(g.nodes, k1, k2, sh, n)
            else:
                phi = np.zeros(g.size)
                shift = np.zeros((g.size, 2))
            pos.append(g.nodes + s)
            psi.append(np.exp(1j * phi) * u.psi)
            aa.append(a + shift)
            rho.append(np.abs(u.psi) ** 2)
            bb.append(B)
            idx.append(np.column_stack([i + k1 * g.N1, j + k2 * g.N2]))
    out = {
        "positions": np.concatenate(pos),
        "psi": np.concatenate(psi),
        "a": np.concatenate(aa),
        "density": np.concatenate(rho),
        "B": np.concatenate(bb),
        "index": np.concatenate(idx),
        "m": m,
    }
    if path is not None:
        _write_tiled(path, out, u, kappa)
    return out


def _lift_gradient(x, k1, k2, shape, n):
    from .lattice_geometry import gauge_exponent_gradient

    y = np.array(x, float, copy=True)
    total = np.zeros_like(y)
    for kk, w in ((k2, shape.omega2), (k1, shape.omega1)):
        for _ in range(kk):
            total += gauge_exponent_gradient(y, w, n)
            y = y + w
    return total


def _node_field(u: FieldState) -> np.ndarray:
    """B at nodes: mean of the four plaquettes touching each node."""
    g = u.grid
    Bp = u.plaquette_flux() / g.dA
    qa, _, _ = g.shift(-1, 0)
    qb, _, _ = g.shift(0, -1)
    qc, _, _ = g.shift(-1, -1)
    return 0.25 * (Bp + Bp[qa] + Bp[qb] + Bp[qc])


def _write_tiled(path, out, u, kappa):
    from .cell_discretization import DUMP_HEADER

    g = u.grid
    sh = g.shape
    m = out["m"]
    data = np.column_stack([out["index"], out["positions"], out["psi"].real, out["psi"].imag, out["a"]])
    order = np.lexsort((data[:, 1], data[:, 0]))
    with open(path, "w") as fh:
        fh.write(DUMP_HEADER + "\n")
        fh.write(
            f"# {m * g.N1} {m * g.N2} {sh.R:.17g} {sh.tau.real:.17g} {sh.tau.imag:.17g} {kappa:.17g} {u.background.n}\n"
        )
        np.savetxt(fh, data[order], fmt=["%d", "%d"] + ["%.17g"] * 6)
