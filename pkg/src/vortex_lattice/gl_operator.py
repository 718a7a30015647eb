"""Discrete Ginzburg-Landau energy, residual, linearization and symmetry modes.

Unknowns are flat real vectors x = [Re psi, Im psi, c1, c2] with psi per node
and c_k the periodic link perturbation alpha . e_k on the edge p -> p + e_k.
The discrete energy is

    E = 1/2 sum_edges w dA |exp(-i Theta) psi_q - psi_p|^2
        + dA kappa^2/4 sum_nodes (1 - |psi|^2)^2
        + 1/2 sum_plaquettes Phi_P^2 / dA

with Theta the background link phase plus the perturbation, Phi_P the
plaquette flux.  Everything else is derived from E: the residual is
F = M^{-1} grad E, the linearization L = M^{-1} Hess E in the inner product
<u, w> = u^T M w, and N_v(w) = F(v + w) - F(v) - L w.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell_discretization import (
    Background,
    CellGrid,
    FieldState,
    reflection_permutation,
    vector_reflect,
)


class OperatorError(ValueError):
    pass


def _diag_map(grid: CellGrid, sign: int) -> sp.csr_matrix:
    """Link value on the diagonal edge p -> p + e1 + sign e2 as the mean of the two two-step paths."""
    N = grid.size
    q1, _, _ = grid.shift(1, 0)
    if sign < 0:
        # p -> p+e1 -> p+e1-e2 :  c1(p) - c2(p+e1-e2)
        # p -> p-e2 -> p-e2+e1 : -c2(p-e2) + c1(p-e2)
        qd, _, _ = grid.shift(1, -1)
        qm2, _, _ = grid.shift(0, -1)
        rows = np.tile(np.arange(N), 4)
        cols = np.concatenate([np.arange(N), N + qd, N + qm2, qm2])
        vals = np.concatenate([np.full(N, 0.5), np.full(N, -0.5), np.full(N, -0.5), np.full(N, 0.5)])
    else:
        # p -> p+e1 -> p+e1+e2 : c1(p) + c2(p+e1)
        # p -> p+e2 -> p+e2+e1 : c2(p) + c1(p+e2)
        q2, _, _ = grid.shift(0, 1)
        rows = np.tile(np.arange(N), 4)
        cols = np.concatenate([np.arange(N), N + q1, N + np.arange(N), q2])
        vals = np.full(4 * N, 0.5)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, 2 * N))


@dataclass
class _EdgeType:
    p: np.ndarray
    q: np.ndarray
    phase: np.ndarray
    weight: float
    S: sp.csr_matrix  # (c1, c2) -> link value on this edge type


class DiscreteGL:
    """Energy functional and its derivatives on one background."""

    def __init__(self, background: Background, kappa: float):
        if not kappa > 0:
            raise OperatorError("kappa must be positive")
        self.background = background
        self.grid = grid = background.grid
        self.kappa = float(kappa)
        N = grid.size
        self.N = N
        self.dA = grid.dA
        w1, w2, wd = grid.weights
        eye = sp.identity(N, format="csr")
        zero = sp.csr_matrix((N, N))
        types = [
            _EdgeType(np.arange(N), background.edges["1"].q, background.edges["1"].phase0, w1,
                      sp.hstack([eye, zero]).tocsr()),
            _EdgeType(np.arange(N), background.edges["2"].q, background.edges["2"].phase0, w2,
                      sp.hstack([zero, eye]).tocsr()),
        ]
        if grid.diagonal:
            types.append(
                _EdgeType(np.arange(N), background.edges["d"].q, background.edges["d"].phase0, wd,
                          _diag_map(grid, grid.diagonal))
            )
        self.types = types
        q1, q2 = background.edges["1"].q, background.edges["2"].q
        # plaquette circulation of c: c1(p) + c2(p+e1) - c1(p+e2) - c2(p)
        rows = np.tile(np.arange(N), 4)
        cols = np.concatenate([np.arange(N), N + q1, q2, N + np.arange(N)])
        vals = np.concatenate([np.ones(N), np.ones(N), -np.ones(N), -np.ones(N)])
        self.Cp = sp.csr_matrix((vals, (rows, cols)), shape=(N, 2 * N))
        self.plaq0 = background.plaquette0

    # ------------------------------------------------------------ helpers
    def split(self, x):
        N = self.N
        return x[:N] + 1j * x[N : 2 * N], x[2 * N :]

    def join(self, g_psi, g_c):
        return np.concatenate([g_psi.real, g_psi.imag, g_c])

    @property
    def dim(self) -> int:
        return 4 * self.N

    @cached_property
    def M_alpha(self) -> sp.csr_matrix:
        """Gram matrix of the link perturbations: dA (w1 c1^2 + w2 c2^2 + wd cd^2)."""
        M = sp.csr_matrix((2 * self.N, 2 * self.N))
        for t in self.types:
            M = M + t.weight * self.dA * (t.S.T @ t.S)
        return M.tocsr()

    @cached_property
    def M(self) -> sp.csr_matrix:
        return sp.block_diag([self.dA * sp.identity(2 * self.N), self.M_alpha]).tocsr()

    @cached_property
    def _M_alpha_lu(self):
        return spla.splu(self.M_alpha.tocsc())

    @cached_property
    def M_alpha_is_identity_multiple(self) -> Optional[float]:
        d = self.M_alpha.diagonal()
        off = self.M_alpha - sp.diags(d)
        if abs(off).max() == 0 and np.allclose(d, d[0], rtol=1e-14, atol=0):
            return float(d[0])
        return None

    def M_solve(self, y):
        """M^{-1} y."""
        N = self.N
        out = np.empty_like(y, dtype=float)
        out[: 2 * N] = y[: 2 * N] / self.dA
        s = self.M_alpha_is_identity_multiple
        out[2 * N :] = y[2 * N :] / s if s is not None else self._M_alpha_lu.solve(y[2 * N :])
        return out

    def inner(self, u, w) -> float:
        return float(u @ (self.M @ w))

    def norm(self, u) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    # ------------------------------------------------------------ energy
    def energy_terms(self, x) -> dict:
        psi, c = self.split(x)
        kin = 0.0
        for t in self.types:
            theta = t.phase + t.S @ c
            z = np.exp(-1j * theta) * psi[t.q] - psi[t.p]
            kin += 0.5 * t.weight * self.dA * float(np.sum(np.abs(z) ** 2))
        pot = 0.25 * self.dA * self.kappa**2 * float(np.sum((1 - np.abs(psi) ** 2) ** 2))
        phi = self.plaq0 + self.Cp @ c
        field = 0.5 * float(np.sum(phi**2)) / self.dA
        return {"kinetic": kin, "potential": pot, "field": field}

    def energy(self, x) -> float:
        return float(sum(self.energy_terms(x).values()))

    def flux(self, x) -> float:
        _, c = self.split(x)
        return float(np.sum(self.plaq0 + self.Cp @ c))

    def gradient(self, x) -> np.ndarray:
        """Euclidean gradient of E in the flat coordinates."""
        psi, c = self.split(x)
        gpsi = np.zeros(self.N, complex)
        gc = np.zeros(2 * self.N)
        for t in self.types:
            theta = t.phase + t.S @ c
            U = np.exp(-1j * theta)
            Uq = U * psi[t.q]
            z = Uq - psi[t.p]
            wda = t.weight * self.dA
            np.add.at(gpsi, t.p, -wda * z)
            np.add.at(gpsi, t.q, wda * np.conj(U) * z)
            gc += t.S.T @ (wda * np.imag(np.conj(z) * Uq))
        gpsi += -self.dA * self.kappa**2 * (1 - np.abs(psi) ** 2) * psi
        gc += self.Cp.T @ (self.plaq0 + self.Cp @ c) / self.dA
        return self.join(gpsi, gc)

    def hvp(self, x, v) -> np.ndarray:
        """Hessian of E at x applied to v."""
        psi, c = self.split(x)
        dpsi, dc = self.split(v)
        gpsi = np.zeros(self.N, complex)
        gc = np.zeros(2 * self.N)
        for t in self.types:
            theta = t.phase + t.S @ c
            dth = t.S @ dc
            U = np.exp(-1j * theta)
            Uq = U * psi[t.q]
            z = Uq - psi[t.p]
            Udq = U * dpsi[t.q]
            dz = Udq - dpsi[t.p] - 1j * Uq * dth
            wda = t.weight * self.dA
            np.add.at(gpsi, t.p, -wda * dz)
            np.add.at(gpsi, t.q, wda * np.conj(U) * (dz + 1j * dth * z))
            gc += t.S.T @ (wda * np.imag(np.conj(dz) * Uq + np.conj(z) * (Udq - 1j * Uq * dth)))
        rho = np.abs(psi) ** 2
        gpsi += -self.dA * self.kappa**2 * ((1 - rho) * dpsi - 2 * np.real(np.conj(psi) * dpsi) * psi)
        gc += self.Cp.T @ (self.Cp @ dc) / self.dA
        return self.join(gpsi, gc)

    # ------------------------------------------------------------ residual and linearization
    def residual(self, x) -> np.ndarray:
        return self.M_solve(self.gradient(x))

    def apply_L(self, x, w) -> np.ndarray:
        return self.M_solve(self.hvp(x, w))

    def nonlinearity(self, x, w) -> np.ndarray:
        return self.residual(x + w) - self.residual(x) - self.apply_L(x, w)

    def hessian(self, x) -> sp.csr_matrix:
        """Assembled Hessian of E at x, from Hessian-vector products on a periodic colouring."""
        g = self.grid
        s1, s2 = _colour_spacing(g.N1), _colour_spacing(g.N2)
        i, j = np.divmod(np.arange(g.size), g.N2)
        N = self.N
        rows, cols, vals = [], [], []
        # offsets of the nearest seed in each direction
        for a in range(s1):
            for b in range(s2):
                seed = (i % s1 == a) & (j % s2 == b)
                di = ((a - i + s1 // 2) % s1) - s1 // 2
                dj = ((b - j + s2 // 2) % s2) - s2 // 2
                nearest = g.index(i + di, j + dj)
                for comp in range(4):
                    v = np.zeros(4 * N)
                    v[comp * N + np.flatnonzero(seed)] = 1.0
                    hv = self.hvp(x, v)
                    nz = np.flatnonzero(hv)
                    col = comp * N + nearest[nz % N]
                    rows.append(nz)
                    cols.append(col)
                    vals.append(hv[nz])
        H = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(4 * N, 4 * N)
        )
        H.sum_duplicates()
        return H

    # ------------------------------------------------------------ symmetry modes
    @cached_property
    def Dplus(self) -> sp.csr_matrix:
        """Node scalar -> link differences on the e1 and e2 edges."""
        N = self.N
        q1, q2 = self.background.edges["1"].q, self.background.edges["2"].q
        eye = sp.identity(N, format="csr")
        S1 = sp.csr_matrix((np.ones(N), (np.arange(N), q1)), shape=(N, N))
        S2 = sp.csr_matrix((np.ones(N), (np.arange(N), q2)), shape=(N, N))
        return sp.vstack([S1 - eye, S2 - eye]).tocsr()

    def gauge_mode(self, x, gamma) -> np.ndarray:
        """G_gamma = (i gamma psi, D+ gamma)."""
        gamma = np.asarray(gamma, float)
        psi, _ = self.split(x)
        return self.join(1j * gamma * psi, self.Dplus @ gamma)

    def gauge_constraint(self, x0, w) -> np.ndarray:
        """B w = Im(conj(psi0) xi) - div_h alpha, with <G_gamma, w> = dA gamma . B w."""
        psi0, _ = self.split(x0)
        xi, c = self.split(w)
        return np.imag(np.conj(psi0) * xi) + (self.Dplus.T @ (self.M_alpha @ c)) / self.dA

    def divergence(self, w) -> np.ndarray:
        """Discrete divergence of the link field: the negative adjoint of D+ in the M inner products."""
        _, c = self.split(w)
        return -(self.Dplus.T @ (self.M_alpha @ c)) / self.dA

    def gauge_constraint_matrix(self, x0) -> sp.csr_matrix:
        psi0, _ = self.split(x0)
        left = sp.hstack([sp.diags(-psi0.imag), sp.diags(psi0.real)])
        right = (self.Dplus.T @ self.M_alpha) / self.dA
        return sp.hstack([left, right]).tocsr()

    def neg_laplacian(self) -> sp.csr_matrix:
        """-Delta_h = D+^T M_alpha D+ / dA on node scalars."""
        return (self.Dplus.T @ self.M_alpha @ self.Dplus / self.dA).tocsr()

    def translation_mode(self, x, k: int) -> np.ndarray:
        """T_k = ((grad_a psi)_k, B J e_k) with Cartesian direction k in {1, 2}."""
        if k not in (1, 2):
            raise OperatorError("k must be 1 or 2")
        g = self.grid
        psi, c = self.split(x)
        dirs = []
        for t in self.types[:2]:
            theta = t.phase + t.S @ c
            fwd = np.exp(-1j * theta) * psi[t.q] - psi
            # backward difference at q: psi_q - exp(i theta) psi_p
            bwd = np.zeros(self.N, complex)
            bwd[t.q] = psi[t.q] - np.exp(1j * theta) * psi[t.p]
            dirs.append(0.5 * (fwd + bwd))
        # directional derivatives along e1, e2 -> Cartesian components
        recip = g.reciprocal()  # rows e^1, e^2
        grad_k = dirs[0] * recip[0, k - 1] + dirs[1] * recip[1, k - 1]
        B = (self.plaq0 + self.Cp @ c) / self.dA
        q1m, _, _ = g.shift(0, -1)
        q2m, _, _ = g.shift(-1, 0)
        B1 = 0.5 * (B + B[q1m])  # e1 edges border plaquettes at p and p-e2
        B2 = 0.5 * (B + B[q2m])  # e2 edges border plaquettes at p and p-e1
        Je = np.array([0.0, 1.0]) if k == 1 else np.array([-1.0, 0.0])
        c1 = B1 * (Je @ g.e1)
        c2 = B2 * (Je @ g.e2)
        return self.join(grad_k, np.concatenate([c1, c2]))

    # ------------------------------------------------------------ parity
    @cached_property
    def reflection(self) -> np.ndarray:
        return reflection_permutation(self.grid)

    def reflect(self, w) -> np.ndarray:
        return w[self.reflection]


def _colour_spacing(N: int) -> int:
    for s in range(5, N + 1):
        if N % s == 0:
            return s
    return N


# ---------------------------------------------------------------- gauge projection

class GaugeProjector:
    """Orthogonal projection (in M) onto the complement of {G_gamma} at the base x0."""

    def __init__(self, gl: DiscreteGL, x0: np.ndarray):
        self.gl = gl
        self.x0 = np.asarray(x0, float).copy()
        psi0, _ = gl.split(self.x0)
        A = gl.neg_laplacian() + sp.diags(np.abs(psi0) ** 2)
        self.A = A.tocsc()
        self._lu = spla.splu(self.A)

    def solve_gamma(self, w) -> np.ndarray:
        rhs = self.gl.gauge_constraint(self.x0, w)
        gamma = self._lu.solve(rhs)
        res = np.linalg.norm(self.A @ gamma - rhs)
        if not res <= 1e-8 * (1 + np.linalg.norm(rhs)):
            raise OperatorError(f"gauge projection solve failed (residual {res:.3e})")
        return gamma

    def complement(self, w) -> np.ndarray:
        """P-bar w = w - G_{gamma*}."""
        return w - self.gl.gauge_mode(self.x0, self.solve_gamma(w))

    def gauge_part(self, w) -> np.ndarray:
        return self.gl.gauge_mode(self.x0, self.solve_gamma(w))

    def max_pairing(self, w) -> float:
        """max_p |B w| scaled: the node-wise gauge-orthogonality defect."""
        return float(np.max(np.abs(self.gl.gauge_constraint(self.x0, w))))


# ---------------------------------------------------------------- state level API

@dataclass
class OperatorHandle:
    """Linearization of the discrete equations at a state."""

    gl: DiscreteGL
    x: np.ndarray

    def apply(self, w) -> np.ndarray:
        return self.gl.apply_L(self.x, w)

    def matvec_M(self, w) -> np.ndarray:
        """M L w = Hess E w."""
        return self.gl.hvp(self.x, w)

    @cached_property
    def hessian(self) -> sp.csr_matrix:
        return self.gl.hessian(self.x)

    def assembled(self) -> sp.csr_matrix:
        """Matrix of L = M^{-1} H (only cheap when M is a multiple of the identity)."""
        s = self.gl.M_alpha_is_identity_multiple
        N = self.gl.N
        if s is not None:
            scale = np.concatenate([np.full(2 * N, 1 / self.gl.dA), np.full(2 * N, 1 / s)])
            return (sp.diags(scale) @ self.hessian).tocsr()
        Minv = spla.inv(self.gl.M.tocsc())
        return (Minv @ self.hessian).tocsr()


def residual_F(state: FieldState, kappa: float) -> np.ndarray:
    gl = DiscreteGL(state.background, kappa)
    return gl.residual(state.as_vector())


def energy(state: FieldState, kappa: float) -> float:
    return DiscreteGL(state.background, kappa).energy(state.as_vector())


def gibbs_energy(state: FieldState, kappa: float, h: float) -> float:
    gl = DiscreteGL(state.background, kappa)
    x = state.as_vector()
    return gl.energy(x) - gl.flux(x) * h


def make_handle(state: FieldState, kappa: float) -> OperatorHandle:
    return OperatorHandle(DiscreteGL(state.background, kappa), state.as_vector())


def apply_L(handle: OperatorHandle, w) -> np.ndarray:
    w = np.asarray(w, float)
    if w.shape != (handle.gl.dim,):
        raise OperatorError(f"perturbation has shape {w.shape}, expected ({handle.gl.dim},)")
    return handle.apply(w)


def nonlinearity_N(v: FieldState, w, kappa: float) -> np.ndarray:
    gl = DiscreteGL(v.background, kappa)
    return gl.nonlinearity(v.as_vector(), np.asarray(w, float))


def gauge_mode(base: FieldState, gamma, kappa: float = 1.0) -> np.ndarray:
    """G_gamma at the base state; gamma is a node array or a callable of positions (checked periodic)."""
    gl = DiscreteGL(base.background, kappa)
    g = base.grid
    if callable(gamma):
        vals = np.asarray(gamma(g.nodes), float)
        for w in (g.shape.omega1, g.shape.omega2):
            if np.max(np.abs(np.asarray(gamma(g.nodes + w), float) - vals)) > 1e-10 * (1 + np.max(np.abs(vals))):
                raise OperatorError("gamma is not lattice periodic")
        gamma = vals
    return gl.gauge_mode(base.as_vector(), gamma)


def translation_mode(base: FieldState, k: int, kappa: float = 1.0) -> np.ndarray:
    return DiscreteGL(base.background, kappa).translation_mode(base.as_vector(), k)


def project_gauge_orthogonal(base: FieldState, w, kappa: float = 1.0) -> np.ndarray:
    gl = DiscreteGL(base.background, kappa)
    return GaugeProjector(gl, base.as_vector()).complement(np.asarray(w, float))


def trig_gammas(grid: CellGrid, count: int = 20) -> list[np.ndarray]:
    """Low-frequency even periodic test functions: 1 and cos(2 pi (k1 r1 + k2 r2))."""
    r = grid.shape.to_lattice_coords(grid.nodes)
    K = int(np.ceil(np.sqrt(count))) + 1
    ks = [(a, b) for a in range(K + 1) for b in range(-K, K + 1) if a > 0 or b > 0]
    ks.sort(key=lambda t: (t[0] ** 2 + t[1] ** 2, t))
    out = [np.ones(grid.size)]
    for a, b in ks[: count - 1]:
        out.append(np.cos(2 * np.pi * (a * r[:, 0] + b * r[:, 1])))
    return out


def export_coo(matrix: sp.spmatrix, path) -> None:
    """Write a sparse matrix as text: header '# rows cols nnz', then 'row col value' lines."""
    A = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def read_coo(path) -> sp.csr_matrix:
    with open(path) as fh:
        head = fh.readline().lstrip("#").split()
        rows, cols, nnz = map(int, head)
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise ValueError(f"expected {nnz} entries, found {data.shape[0]}")
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(rows, cols))
