"""Complexified linearization, the gauge-fixed operator K_#, angular-momentum
fibre blocks of the single-vortex K_#, and desk-scale spectral checks.

Real perturbations are mapped to M-orthonormal coordinates first, so the
complexification sigma(w) = (xi, conj xi, alpha^c, conj alpha^c) / sqrt 2 is an
exact isometry.  With alpha^c = alpha_1 - i alpha_2 the real-linear L becomes
z -> A z + B conj z, and K = [[A, B], [conj B, conj A]].

Gauge-fixed operator (in the normalization of the energy used throughout):

    xi-row:    [-Delta_A + k^2 (2|Psi|^2 - 1) + |Psi|^2 / 2] xi
               + (k^2 - 1/2) Psi^2 conj(xi) + 2i (grad_A Psi) . alpha
    alpha-row: 2 Im[conj(grad_A Psi) xi] + (-Delta + |Psi|^2) alpha

which is L plus B^* B for the gauge condition B w = Im(conj Psi xi) - div alpha.
Far from the vortex the xi-block tends to eigenvalues 1 and 2 k^2.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell_discretization import FieldState
from .gl_operator import DiscreteGL, OperatorError
from .vortex_profile import VortexProfile


class SpectralError(RuntimeError):
    pass


@dataclass
class SpectralReport:
    operator: str
    parameters: dict
    eigenvalues: list
    residuals: list
    deflation_basis_size: int = 0
    constraint: str = ""
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SpectralReport":
        return cls(**json.loads(text))


# ---------------------------------------------------------------- complexification

class Complexifier:
    """sigma, pi and the complex-linear extension K of L on one base state."""

    def __init__(self, gl: DiscreteGL, x: np.ndarray, sharp: bool = False, dense_limit: int = 6000):
        self.gl = gl
        self.x = np.asarray(x, float)
        N = gl.N
        self.N = N
        s = gl.M_alpha_is_identity_multiple
        if s is not None:
            self._sa = math.sqrt(s)
            self._Sa = self._Sa_inv = None
        else:
            if 2 * N > dense_limit:
                raise OperatorError("skewed grid too large for the dense M^(1/2)")
            w, V = np.linalg.eigh(gl.M_alpha.toarray())
            self._Sa = (V * np.sqrt(w)) @ V.T
            self._Sa_inv = (V / np.sqrt(w)) @ V.T
            self._sa = None
        self.sharp = sharp
        self._K = None

    # hat coordinates: X = M^(1/2) x
    def to_hat(self, w):
        N = self.N
        out = np.empty_like(w, dtype=float)
        out[: 2 * N] = math.sqrt(self.gl.dA) * w[: 2 * N]
        out[2 * N :] = self._sa * w[2 * N :] if self._sa is not None else self._Sa @ w[2 * N :]
        return out

    def from_hat(self, X):
        N = self.N
        out = np.empty_like(X, dtype=float)
        out[: 2 * N] = X[: 2 * N] / math.sqrt(self.gl.dA)
        out[2 * N :] = X[2 * N :] / self._sa if self._sa is not None else self._Sa_inv @ X[2 * N :]
        return out

    def _z(self, X):
        N = self.N
        return np.concatenate([X[:N] + 1j * X[N : 2 * N], X[2 * N : 3 * N] - 1j * X[3 * N :]])

    def _X(self, z):
        N = self.N
        return np.concatenate([z[:N].real, z[:N].imag, z[N:].real, -z[N:].imag])

    def sigma(self, w) -> np.ndarray:
        """Quadruple (xi, chi, alpha, beta) as a (4, N) complex array."""
        z = self._z(self.to_hat(np.asarray(w, float)))
        N = self.N
        return np.stack([z[:N], np.conj(z[:N]), z[N:], np.conj(z[N:])]) / math.sqrt(2)

    def pi(self, q) -> np.ndarray:
        """Projection onto the image of sigma: (xi + conj chi, conj xi + chi, alpha + conj beta, conj alpha + beta) / 2."""
        q = np.asarray(q)
        a = 0.5 * (q[0] + np.conj(q[1]))
        b = 0.5 * (q[2] + np.conj(q[3]))
        return np.stack([a, np.conj(a), b, np.conj(b)])

    def realify(self, q) -> np.ndarray:
        """Inverse of sigma on its image (applied after pi)."""
        p = self.pi(q)
        z = np.concatenate([p[0], p[2]]) * math.sqrt(2)
        return self.from_hat(self._X(z))

    def norm(self, q) -> float:
        return float(np.sqrt(np.sum(np.abs(np.asarray(q)) ** 2)))

    def _hat_matrix(self) -> sp.spmatrix:
        gl = self.gl
        H = gl.hessian(self.x)
        if self.sharp:
            B = gl.gauge_constraint_matrix(self.x)
            H = H + gl.dA * (B.T @ B)
        N = self.N
        if self._sa is not None:
            d = np.concatenate([np.full(2 * N, 1 / math.sqrt(gl.dA)), np.full(2 * N, 1 / self._sa)])
            return (sp.diags(d) @ H @ sp.diags(d)).tocsr()
        Sinv = sla.block_diag(np.eye(2 * N) / math.sqrt(gl.dA), self._Sa_inv)
        return sp.csr_matrix(Sinv @ H.toarray() @ Sinv)

    @property
    def K(self) -> sp.csr_matrix:
        """Complex 4N x 4N matrix acting on stacked (xi, chi, alpha, beta)."""
        if self._K is None:
            Lh = self._hat_matrix()
            N = self.N
            # real change X -> (Re z, Im z): Re z = (X1, X3), Im z = (X2, -X4)
            perm = np.concatenate([np.arange(N), 2 * N + np.arange(N), N + np.arange(N), 3 * N + np.arange(N)])
            sign = np.concatenate([np.ones(3 * N), -np.ones(N)])
            P = sp.csr_matrix((sign, (np.arange(4 * N), perm)), shape=(4 * N, 4 * N))
            T = (P @ Lh @ P.T).tocsr()
            m = 2 * N
            Trr, Tri, Tir, Tii = T[:m, :m], T[:m, m:], T[m:, :m], T[m:, m:]
            A = 0.5 * ((Trr + Tii) + 1j * (Tir - Tri))
            Bm = 0.5 * ((Trr - Tii) + 1j * (Tir + Tri))
            # reorder (z, zbar) blocks into (xi, chi, alpha, beta)
            Kz = sp.bmat([[A, Bm], [Bm.conj(), A.conj()]]).tocsr()
            order = np.concatenate([np.arange(N), 2 * N + np.arange(N), N + np.arange(N), 3 * N + np.arange(N)])
            self._K = Kz[order][:, order].tocsr()
        return self._K

    def apply_K(self, q) -> np.ndarray:
        q = np.asarray(q)
        if q.shape != (4, self.N):
            raise OperatorError(f"quadruple has shape {q.shape}, expected (4, {self.N})")
        return (self.K @ q.reshape(-1)).reshape(4, self.N)

    def reflect(self, q) -> np.ndarray:
        """Reflection x -> -x on quadruples (complex-linear)."""
        g = self.gl.grid
        perm = g.reflection
        q1, _, _ = g.shift(1, 0)
        q2, _, _ = g.shift(0, 1)
        P1, P2 = perm[q1], perm[q2]
        q = np.asarray(q)
        c1 = 0.5 * (q[2] + q[3])
        c2 = 0.5 * (q[2] - q[3])  # = -i (alpha_2 part)
        a_new = c1[P1] + c2[P2]
        b_new = c1[P1] - c2[P2]
        return np.stack([q[0][perm], q[1][perm], a_new, b_new])


def complexify(gl: DiscreteGL, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return Complexifier(gl, x).sigma(w)


def apply_K(base: FieldState, q, kappa: float) -> np.ndarray:
    gl = DiscreteGL(base.background, kappa)
    return Complexifier(gl, base.as_vector()).apply_K(q)


def build_K_sharp(base: FieldState, kappa: float) -> Complexifier:
    gl = DiscreteGL(base.background, kappa)
    return Complexifier(gl, base.as_vector(), sharp=True)


def sharp_hessian(gl: DiscreteGL, x: np.ndarray) -> sp.csr_matrix:
    B = gl.gauge_constraint_matrix(x)
    return (gl.hessian(x) + gl.dA * (B.T @ B)).tocsr()


def outer_lower_bound(gl: DiscreteGL, x: np.ndarray, radius: float) -> float:
    """Lowest Rayleigh quotient of the gauge-fixed form over perturbations supported at |x| > radius."""
    g = gl.grid
    N = gl.N
    q1, _, _ = g.shift(1, 0)
    q2, _, _ = g.shift(0, 1)
    far = np.linalg.norm(g.nodes, axis=1) > radius
    # a link is outside when both of its end nodes are
    keep = np.concatenate([far, far, far & far[q1], far & far[q2]])
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise SpectralError("no unknowns outside the given radius")
    Hs = sharp_hessian(gl, x)[idx][:, idx].tocsc()
    Ms = gl.M[idx][:, idx].tocsc()
    vals = spla.eigsh(Hs, k=1, M=Ms, sigma=-1.0, which="LM", return_eigenvectors=False)
    return float(np.min(vals))


# ---------------------------------------------------------------- fibre blocks

@dataclass
class FiberBlock:
    m: int
    n: int
    kappa: float
    mesh: np.ndarray
    matrix: sp.csr_matrix  # symmetric, weighted by the radial measure
    weight: np.ndarray  # mass diagonal r_i h (repeated for the 4 components)

    @property
    def size(self) -> int:
        return self.mesh.size

    def symmetry_defect(self) -> float:
        d = self.matrix - self.matrix.T
        return float(abs(d).max()) if d.nnz else 0.0

    def apply(self, g: np.ndarray) -> np.ndarray:
        """K_m g for stacked radial components g of length 4M (mass removed)."""
        return (self.matrix @ g) / self.weight


def fiber_coefficients(f, df, a, da, r, n, m, kappa):
    """Pointwise coefficients of the four-component fibre operator.

    Returns (diag potentials (4, ...), coupling dict) for
      row1: [-D + (m + n(1-a))^2/r^2 + vd] g1 + co f^2 g2 + Mq g3 - P g4
      row2: co f^2 g1 + [-D + (m - n(1-a))^2/r^2 + vd] g2 - P g3 + Mq g4
      row3: Mq g1 - P g2 + [-D + (m-1)^2/r^2 + f^2] g3
      row4: -P g1 + Mq g2 + [-D + (m+1)^2/r^2 + f^2] g4
    with D = d^2/dr^2 + (1/r) d/dr.
    """
    k2 = kappa**2
    na = n * (1 - a)
    P = df + na * f / r
    Mq = df - na * f / r
    vd = k2 * (2 * f**2 - 1) + 0.5 * f**2
    co = (k2 - 0.5) * f**2
    diag = np.stack([
        (m + na) ** 2 / r**2 + vd,
        (m - na) ** 2 / r**2 + vd,
        (m - 1) ** 2 / r**2 + f**2,
        (m + 1) ** 2 / r**2 + f**2,
    ])
    return diag, {"co": co, "P": P, "Mq": Mq}


def radial_mesh(r_max: float, size: int):
    h = r_max / size
    return (np.arange(size) + 0.5) * h, h


def _neg_radial_laplacian_weighted(r, h):
    """Symmetric finite-volume form of -(1/r)(r g')' times r h; Dirichlet at r_max, no flux at 0."""
    M = r.size
    faces = np.arange(1, M + 1) * h  # r_{i+1/2}
    up = faces / h  # coupling through the outer face of cell i
    diag = np.zeros(M)
    diag += up
    diag[1:] += up[:-1]
    # Dirichlet via a mirrored ghost value at r_max: g_ghost = -g_{M-1}
    diag[-1] += up[-1]
    off = -up[:-1]
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def fiber_block(p: VortexProfile, m: int, r_max: Optional[float] = None, size: int = 2000) -> FiberBlock:
    r_max = p.r_max if r_max is None else r_max
    if r_max > p.r_max * (1 + 1e-12):
        raise SpectralError("fibre mesh longer than the profile")
    r, h = radial_mesh(r_max, size)
    f, df, a, da = p.values(r)
    diag, cp = fiber_coefficients(f, df, a, da, r, p.n, m, p.kappa)
    w = r * h
    Lap = _neg_radial_laplacian_weighted(r, h)
    W = sp.diags(w)

    def d(v):
        return sp.diags(w * v)

    blocks = [[None] * 4 for _ in range(4)]
    for k in range(4):
        blocks[k][k] = Lap + d(diag[k])
    blocks[0][1] = blocks[1][0] = d(cp["co"])
    blocks[0][2] = blocks[2][0] = d(cp["Mq"])
    blocks[0][3] = blocks[3][0] = d(-cp["P"])
    blocks[1][2] = blocks[2][1] = d(-cp["P"])
    blocks[1][3] = blocks[3][1] = d(cp["Mq"])
    blocks[2][3] = blocks[3][2] = sp.csr_matrix((size, size))
    A = sp.bmat(blocks, format="csr")
    return FiberBlock(m, p.n, p.kappa, r, A, np.tile(w, 4))


def fiber_blocks(p: VortexProfile, m_range: Sequence[int], **kw) -> list[FiberBlock]:
    return [fiber_block(p, m, **kw) for m in m_range]


def flip(block: FiberBlock) -> np.ndarray:
    """Permutation swapping components (1, 2) and (3, 4); K_{-m} = R K_m R^T."""
    M = block.size
    return np.concatenate([np.arange(M, 2 * M), np.arange(M), np.arange(3 * M, 4 * M), np.arange(2 * M, 3 * M)])


def zero_mode_profile(block: FiberBlock, p: VortexProfile) -> np.ndarray:
    """T = (f' - n(1-a)f/r, f' + n(1-a)f/r, 2n a'/r, 0) on the block mesh."""
    r = block.mesh
    f, df, a, da = p.values(r)
    na = p.n * (1 - a)
    return np.concatenate([df - na * f / r, df + na * f / r, 2 * p.n * da / r, np.zeros_like(r)])


def fiber_spectrum(block: FiberBlock, k: int = 6, sigma: float = -0.05, tol: float = 1e-8) -> tuple[SpectralReport, np.ndarray]:
    A = block.matrix.tocsc()
    W = sp.diags(block.weight).tocsc()
    vals, vecs = spla.eigsh(A, k=k, M=W, sigma=sigma, which="LM", tol=1e-13)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    res = []
    for j in range(k):
        v = vecs[:, j]
        rres = np.linalg.norm((A @ v - vals[j] * (W @ v)) / np.sqrt(block.weight)) / np.sqrt(v @ (W @ v))
        res.append(float(rres))
    if max(res) > tol:
        raise SpectralError(f"fibre eigenpairs not converged (max residual {max(res):.2e})")
    rep = SpectralReport(
        operator=f"K_m (m={block.m})",
        parameters={"n": block.n, "kappa": block.kappa, "m": block.m, "mesh": block.size,
                    "r_max": float(block.mesh[-1] + 0.5 * (block.mesh[1] - block.mesh[0]))},
        eigenvalues=[float(v) for v in vals],
        residuals=res,
        constraint="radial fibre, Dirichlet at r_max",
    )
    return rep, vecs


def weighted_overlap(block: FiberBlock, u: np.ndarray, v: np.ndarray) -> float:
    w = block.weight
    return float(abs(u @ (w * v)) / math.sqrt((u @ (w * u)) * (v @ (w * v))))


def essential_edge_estimate(block: FiberBlock, count: int = 40) -> float:
    """Smallest eigenvalue at which the spectrum visibly accumulates.

    The continuum on a finite radial interval appears as a ladder with
    spacing ~ 1/r_max^2 scale; the edge is taken as the first eigenvalue
    after which consecutive gaps stay below 1/4.
    """
    A = block.matrix.tocsc()
    W = sp.diags(block.weight).tocsc()
    vals = np.sort(spla.eigsh(A, k=count, M=W, sigma=-0.05, which="LM", return_eigenvectors=False))
    gaps = np.diff(vals)
    for i in range(len(gaps)):
        if np.all(gaps[i:] < 0.25):
            return float(vals[i])
    return float(vals[-1])


# ---------------------------------------------------------------- continuum 2D check

def _angular_orders(n, m):
    return (m + n, m - n, m - 1, m + 1)


def jm_image(g_funcs, n, m, x):
    """Quadruple (e^{i(m+n)t} g1, e^{i(m-n)t} g2, -i e^{i(m-1)t} g3, i e^{i(m+1)t} g4) at points x."""
    r = np.linalg.norm(x, axis=-1)
    th = np.arctan2(x[..., 1], x[..., 0])
    pref = (1, 1, -1j, 1j)
    return np.stack([
        pref[k] * np.exp(1j * l * th) * g_funcs[k](r) for k, l in enumerate(_angular_orders(n, m))
    ])


def _spectral_derivs(u, L, npts):
    k = 2 * np.pi * np.fft.fftfreq(npts, d=L / npts)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    U = np.fft.fft2(u)
    return (
        np.fft.ifft2(1j * kx * U),
        np.fft.ifft2(1j * ky * U),
        np.fft.ifft2(-(kx**2 + ky**2) * U),
    )


def continuum_K_sharp_2d(p: VortexProfile, q, X, Y, L):
    """Pseudo-spectral evaluation of the continuum K_# on a quadruple sampled on a periodic box.

    K_# is applied through its real form on the two real perturbations
    w1 = realify(q), w2 = realify(-i q), with q = sigma(w1) + i sigma(w2).
    """
    npts = X.shape[0]
    x = np.stack([X, Y], axis=-1)
    r = np.linalg.norm(x, axis=-1)
    f, df, a, da = p.values(r)
    n, k2 = p.n, p.kappa**2
    th = np.arctan2(Y, X)
    eith = np.exp(1j * n * th)
    Psi = f * eith
    rhat = np.stack([X / r, Y / r], -1)
    that = np.stack([-Y / r, X / r], -1)
    A = (n * a / r)[..., None] * that
    DPsi = eith[..., None] * (df[..., None] * rhat + (1j * n * (1 - a) * f / r)[..., None] * that)

    def L_sharp(xi, al):
        xx, xy, xl = _spectral_derivs(xi, L, npts)
        lap_A = xl - 2j * (A[..., 0] * xx + A[..., 1] * xy) - np.sum(A * A, -1) * xi  # div A = 0
        rho = np.abs(Psi) ** 2
        row_xi = (-lap_A + (k2 * (2 * rho - 1) + 0.5 * rho) * xi + (k2 - 0.5) * Psi**2 * np.conj(xi)
                  + 2j * (DPsi[..., 0] * al[..., 0] + DPsi[..., 1] * al[..., 1]))
        out_al = []
        for c in range(2):
            _, _, lap = _spectral_derivs(al[..., c], L, npts)
            out_al.append(2 * np.imag(np.conj(DPsi[..., c]) * xi) - lap.real + rho * al[..., c])
        return row_xi, np.stack(out_al, -1)

    def sig(xi, al):
        ac = al[..., 0] - 1j * al[..., 1]
        return np.stack([xi, np.conj(xi), ac, np.conj(ac)]) / math.sqrt(2)

    def real_parts(qq):
        xi = (qq[0] + np.conj(qq[1])) / math.sqrt(2)
        ac = (qq[2] + np.conj(qq[3])) / math.sqrt(2)
        return xi, np.stack([ac.real, -ac.imag], -1)

    x1, a1 = real_parts(q)
    x2, a2 = real_parts(-1j * q)
    return sig(*L_sharp(x1, a1)) + 1j * sig(*L_sharp(x2, a2))


def fiber_action_analytic(p: VortexProfile, m: int, g_funcs, g_lap, r):
    """Fibre operator applied to analytic radial functions; g_lap[k](r) = g'' + g'/r."""
    f, df, a, da = p.values(r)
    diag, cp = fiber_coefficients(f, df, a, da, r, p.n, m, p.kappa)
    g = np.stack([gf(r) for gf in g_funcs])
    lap = np.stack([gl(r) for gl in g_lap])
    out = -lap + diag * g
    out[0] += cp["co"] * g[1] + cp["Mq"] * g[2] - cp["P"] * g[3]
    out[1] += cp["co"] * g[0] - cp["P"] * g[2] + cp["Mq"] * g[3]
    out[2] += cp["Mq"] * g[0] - cp["P"] * g[1]
    out[3] += -cp["P"] * g[0] + cp["Mq"] * g[1]
    return out


def gaussian_test_functions(n: int, m: int, width: float = 1.0):
    """g_k(r) = r^|l_k| exp(-r^2 / (2 w^2)) with exact g'' + g'/r."""
    funcs, laps = [], []
    for l in _angular_orders(n, m):
        s = abs(l)
        c = 1.0 / (2 * width**2)

        def g(r, s=s, c=c):
            return r**s * np.exp(-c * r**2)

        def lap(r, s=s, c=c):
            # (1/r)(r g')' for g = r^s e^{-c r^2}
            e = np.exp(-c * r**2)
            lead = s**2 * r ** (s - 2.0) if s else 0.0
            return e * (lead - 4 * c * (s + 1) * r**s + 4 * c**2 * r ** (s + 2))

        funcs.append(g)
        laps.append(lap)
    return funcs, laps


def fiber_consistency_2d(p: VortexProfile, m: int, L: float = 24.0, npts: int = 256, width: float = 1.0) -> float:
    """Max relative deviation between the 2D K_# on a J_m image and the fibre formula."""
    h = L / npts
    s = (np.arange(npts) - npts // 2 + 0.5) * h
    X, Y = np.meshgrid(s, s, indexing="ij")
    x = np.stack([X, Y], -1)
    g, lap = gaussian_test_functions(p.n, m, width)
    q = jm_image(g, p.n, m, x)
    Kq = continuum_K_sharp_2d(p, q, X, Y, L)
    r = np.linalg.norm(x, axis=-1)
    act = fiber_action_analytic(p, m, g, lap, r)
    th = np.arctan2(Y, X)
    pref = (1, 1, -1j, 1j)
    ref = np.stack([pref[k] * np.exp(1j * l * th) * act[k] for k, l in enumerate(_angular_orders(p.n, m))])
    scale = np.max(np.abs(ref))
    return float(np.max(np.abs(Kq - ref)) / scale)


# ---------------------------------------------------------------- lattice checks

def lattice_zero_mode_residuals(u: FieldState, kappa: float) -> dict:
    gl = DiscreteGL(u.background, kappa)
    x = u.as_vector()
    out = {}
    for k in (1, 2):
        T = gl.translation_mode(x, k)
        LT = gl.apply_L(x, T)
        out[f"T{k}"] = {"residual": gl.norm(LT), "relative": gl.norm(LT) / gl.norm(T)}
    return out


def gauge_mode_residual(u: FieldState, kappa: float, gamma: np.ndarray) -> float:
    gl = DiscreteGL(u.background, kappa)
    x = u.as_vector()
    G = gl.gauge_mode(x, gamma)
    return gl.norm(gl.apply_L(x, G)) / gl.norm(G)


def exp_fit(xs, ys) -> tuple[float, float]:
    """(slope, correlation) of log(ys) against xs."""
    xs = np.asarray(xs, float)
    ly = np.log(np.asarray(ys, float))
    slope = np.polyfit(xs, ly, 1)[0]
    corr = np.corrcoef(xs, ly)[0, 1]
    return float(slope), float(corr)


def lattice_coercivity(
    u: FieldState,
    kappa: float,
    k: int = 4,
    gauge_penalty: float = 10.0,
    translation_penalty: float = 10.0,
    tol: float = 1e-8,
) -> SpectralReport:
    """Lowest eigenvalues of L at u after deflating gauge and translation modes.

    Gauge directions are lifted by the penalty sigma dA B^T B (this removes
    the whole gauge family, which on a grid is as large as the node count),
    the two translation modes by a rank-two penalty handled with Woodbury.
    Generalized problem (H + penalties) v = lambda M v, shift-invert at 0.
    """
    gl = DiscreteGL(u.background, kappa)
    x = u.as_vector()
    H = gl.hessian(x)
    B = gl.gauge_constraint_matrix(x)
    Hs = (H + gauge_penalty * gl.dA * (B.T @ B)).tocsc()
    M = gl.M.tocsc()
    Ts = []
    for kk in (1, 2):
        T = gl.translation_mode(x, kk)
        Ts.append(T / gl.norm(T))
    Tm = np.column_stack(Ts)
    # orthonormalize in M
    G = Tm.T @ (M @ Tm)
    Lc = np.linalg.cholesky(G)
    Tm = Tm @ np.linalg.inv(Lc).T
    U = M @ Tm  # penalty term: translation_penalty * U U^T
    shift = -1e-3
    lu = spla.splu((Hs - shift * M).tocsc())
    Z = lu.solve(U)
    cap = np.linalg.inv(np.eye(2) / translation_penalty + U.T @ Z)

    def opinv(b):
        y = lu.solve(b)
        return y - Z @ (cap @ (U.T @ y))

    n = gl.dim
    OPinv = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
    Aop = spla.LinearOperator((n, n), matvec=lambda v: Hs @ v + translation_penalty * (U @ (U.T @ v)), dtype=float)
    vals, vecs = spla.eigsh(Aop, k=k, M=M, sigma=shift, which="LM", OPinv=OPinv, tol=1e-12)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    res = []
    for j in range(k):
        v = vecs[:, j]
        r = Aop @ v - vals[j] * (M @ v)
        res.append(float(np.sqrt(r @ gl.M_solve(r)) / gl.norm(v)))
    # how much of each eigenvector is gauge or translation
    gauge_frac = [float(np.linalg.norm(B @ vecs[:, j]) / max(gl.norm(vecs[:, j]), 1e-300)) for j in range(k)]
    trans = [float(np.linalg.norm(Tm.T @ (M @ vecs[:, j])) / gl.norm(vecs[:, j])) for j in range(k)]
    parity = [float(np.linalg.norm(gl.reflect(vecs[:, j]) + vecs[:, j]) / np.linalg.norm(vecs[:, j])) for j in range(k)]
    return SpectralReport(
        operator="L deflated",
        parameters={"kappa": kappa, "n": u.background.n, "R": u.grid.shape.R, "N": u.grid.N1,
                    "tau": [u.grid.shape.tau.real, u.grid.shape.tau.imag]},
        eigenvalues=[float(v) for v in vals],
        residuals=res,
        deflation_basis_size=2 + gl.N,
        constraint=f"gauge penalty {gauge_penalty} dA B^T B, translation rank-2 penalty {translation_penalty}",
        notes={"gauge_constraint_norm": gauge_frac, "translation_overlap": trans, "odd_defect": parity,
               "kappa_condition": "n=1 required when kappa > 1/sqrt(2) (the kappa > 1/2 variant treated as the same condition)"},
    )
