"""Structured staggered grid on the fundamental cell, gauge-periodic wrapping,
parity, cutoffs and the approximate lattice state v = (psi0, a0).

Nodes sit at x_ij = ((i + 1/2)/N1 - 1/2) omega1 + ((j + 1/2)/N2 - 1/2) omega2,
so the node set is symmetric under x -> -x and never contains the origin.
The vector potential is stored as link variables: the background a0 enters
through edge phases (its line integral, combined with the wrap exponent on
edges that leave the cell) and the periodic part alpha through per-edge
values c = alpha . e on the two lattice directions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .lattice_geometry import LatticeShape, gauge_exponent, SUPPORT_RADIUS
from .vortex_profile import VortexProfile

INNER_RADIUS = 1.0 / 3.0
_GL_T, _GL_W = np.polynomial.legendre.leggauss(16)


class GridError(ValueError):
    pass


# ---------------------------------------------------------------- cutoffs

def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t**2)


def _smoothstep_d(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30 * t**2 * (1 - t) ** 2, 0.0)


def _smoothstep_dd(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 60 * t * (1 - t) * (1 - 2 * t), 0.0)


@dataclass(frozen=True)
class CutoffPair:
    """eta = 1 on |x| <= R/3, eta = 0 on |x| >= 2R/5, quintic smoothstep between."""

    R: float

    @property
    def r_in(self) -> float:
        return INNER_RADIUS * self.R

    @property
    def r_out(self) -> float:
        return SUPPORT_RADIUS * self.R

    def _t(self, r):
        return (np.asarray(r, float) - self.r_in) / (self.r_out - self.r_in)

    def eta_r(self, r):
        return 1.0 - _smoothstep(self._t(r))

    def deta_r(self, r):
        return -_smoothstep_d(self._t(r)) / (self.r_out - self.r_in)

    def d2eta_r(self, r):
        return -_smoothstep_dd(self._t(r)) / (self.r_out - self.r_in) ** 2

    def eta(self, x):
        return self.eta_r(np.linalg.norm(np.asarray(x, float), axis=-1))

    def eta_bar(self, x):
        return 1.0 - self.eta(x)

    def grad_eta(self, x):
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(r[..., None] > 0, self.deta_r(r)[..., None] * x / r[..., None], 0.0)
        return g


def build_cutoffs(shape: LatticeShape) -> CutoffPair:
    if shape.R < 5:
        raise GridError("cutoffs need R >= 5")
    return CutoffPair(float(shape.R))


# ---------------------------------------------------------------- grid

@dataclass(frozen=True)
class CellGrid:
    shape: LatticeShape
    N1: int
    N2: int
    nodes: np.ndarray = field(repr=False)  # (N1*N2, 2), flat index p = i*N2 + j
    offset: bool = True

    @property
    def size(self) -> int:
        return self.N1 * self.N2

    @property
    def e1(self) -> np.ndarray:
        return self.shape.omega1 / self.N1

    @property
    def e2(self) -> np.ndarray:
        return self.shape.omega2 / self.N2

    @property
    def dA(self) -> float:
        return self.shape.cell_area / self.size

    def index(self, i, j):
        return (np.asarray(i) % self.N1) * self.N2 + (np.asarray(j) % self.N2)

    def ij(self, p):
        p = np.asarray(p)
        return p // self.N2, p % self.N2

    def shift(self, d1: int, d2: int):
        """Neighbour index q(p) = p + d1 e1 + d2 e2 and the lattice shifts (m1, m2) incurred."""
        i, j = np.divmod(np.arange(self.size), self.N2)
        ii, jj = i + d1, j + d2
        m1, i2 = np.divmod(ii, self.N1)
        m2, j2 = np.divmod(jj, self.N2)
        return i2 * self.N2 + j2, m1, m2

    @property
    def reflection(self) -> np.ndarray:
        """Node permutation for x -> -x."""
        i, j = np.divmod(np.arange(self.size), self.N2)
        return (self.N1 - 1 - i) * self.N2 + (self.N2 - 1 - j)

    @property
    def metric(self) -> np.ndarray:
        E = np.column_stack([self.e1, self.e2])
        return E.T @ E

    @property
    def diagonal(self) -> int:
        """Sign of the diagonal used by the stencil: -1 for e1-e2, +1 for e1+e2, 0 for none."""
        g12 = self.metric[0, 1]
        if abs(g12) <= 1e-14 * self.metric[0, 0]:
            return 0
        return -1 if g12 > 0 else 1

    @property
    def weights(self) -> tuple[float, float, float]:
        """(w1, w2, wd) so that |grad u|^2 ~ w1 |D1 u|^2 + w2 |D2 u|^2 + wd |Dd u|^2."""
        Gi = np.linalg.inv(self.metric)
        d = self.diagonal
        if d == 0:
            return float(Gi[0, 0]), float(Gi[1, 1]), 0.0
        # |D1 + d D2|^2 = |D1|^2 + |D2|^2 + 2d Re(D1 conj D2)
        wd = d * Gi[0, 1]
        return float(Gi[0, 0] - wd), float(Gi[1, 1] - wd), float(wd)

    def reciprocal(self) -> np.ndarray:
        """Rows e^1, e^2 with e^k . e_l = delta_kl."""
        return np.linalg.inv(np.column_stack([self.e1, self.e2]))


def build_grid(shape: LatticeShape, N1: int, N2: Optional[int] = None) -> CellGrid:
    N2 = N1 if N2 is None else N2
    for N in (N1, N2):
        if int(N) != N or N % 2 or N < 16:
            raise GridError("grid sizes must be even integers >= 16")
    N1, N2 = int(N1), int(N2)
    i, j = np.divmod(np.arange(N1 * N2), N2)
    r1 = (i + 0.5) / N1 - 0.5
    r2 = (j + 0.5) / N2 - 0.5
    nodes = r1[:, None] * shape.omega1 + r2[:, None] * shape.omega2
    nodes.flags.writeable = False
    grid = CellGrid(shape, N1, N2, nodes)
    if min(grid.weights) < -1e-14:
        raise GridError("grid spacing ratio gives a non-positive stencil weight")
    return grid


def wrap_phase(x: np.ndarray, m1, m2, shape: LatticeShape, n: int) -> np.ndarray:
    """phi with psi(x + m1 omega1 + m2 omega2) = exp(i phi) psi(x) for gauge-periodic psi."""
    x = np.array(x, dtype=float, copy=True)
    m1 = np.broadcast_to(np.asarray(m1), x.shape[:-1]).copy()
    m2 = np.broadcast_to(np.asarray(m2), x.shape[:-1]).copy()
    phase = np.zeros(x.shape[:-1])
    for m, w in ((m2, shape.omega2), (m1, shape.omega1)):
        while np.any(m != 0):
            up, dn = m > 0, m < 0
            if np.any(up):
                phase[up] += gauge_exponent(x[up], w, n)
                x[up] += w
                m[up] -= 1
            if np.any(dn):
                x[dn] -= w
                phase[dn] -= gauge_exponent(x[dn], w, n)
                m[dn] += 1
    return phase


# ---------------------------------------------------------------- background

@dataclass(frozen=True)
class EdgeSet:
    """Edges of one direction: from node p to node q(p) (possibly wrapped)."""

    step: tuple[int, int]
    q: np.ndarray
    shift: np.ndarray  # (size, 2) lattice shifts (m1, m2)
    wrap: np.ndarray  # wrap phase phi(x_q, m)
    phase0: np.ndarray  # background link phase, wrap included


@dataclass(frozen=True)
class Background:
    """Approximate lattice state v = (psi0, a0) sampled on a grid."""

    grid: CellGrid
    n: int
    kappa: Optional[float]
    psi0: np.ndarray
    a0_nodes: np.ndarray  # Cartesian a0 at nodes
    edges: dict  # "1", "2", "d" -> EdgeSet
    plaquette0: np.ndarray  # principal-value plaquette flux of the background
    a0_func: Callable = field(repr=False, compare=False)
    psi0_func: Callable = field(repr=False, compare=False)

    @property
    def flux(self) -> float:
        return float(np.sum(self.plaquette0))


def _angle_swept(x, y):
    return np.arctan2(x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0], np.sum(x * y, axis=-1))


def _line_integral(x0, x1, n, qfun, r_out):
    """int_{x0}^{x1} n Q(r) grad(theta) . dl along the straight segment."""
    out = n * _angle_swept(x0, x1)
    d = x1 - x0
    # distance from the origin to the segment
    t = np.clip(-np.sum(x0 * d, axis=-1) / np.sum(d * d, axis=-1), 0.0, 1.0)
    near = np.linalg.norm(x0 + t[:, None] * d, axis=-1) < r_out
    if np.any(near):
        a, b, dn = x0[near], x1[near], d[near]
        s = 0.5 * (_GL_T + 1.0)
        pts = a[:, None, :] + s[None, :, None] * dn[:, None, :]
        r2 = np.sum(pts * pts, axis=-1)
        cr = pts[..., 0] * dn[:, None, 1] - pts[..., 1] * dn[:, None, 0]
        out[near] = n * np.sum(0.5 * _GL_W * qfun(np.sqrt(r2), r2) * cr / r2, axis=-1)
    return out


def background_closures(profile: Optional[VortexProfile], cut: CutoffPair, n: int):
    """psi0(x), a0(x) and the radial factor Q(r) of a0 = n Q(r) grad(theta).

    Without a profile the fields are the pure phase (f = a = 1), used for
    tests of the wrapping machinery.
    """
    if profile is None:
        def fa(r):
            return np.ones_like(r), np.ones_like(r)
    else:
        def fa(r):
            f, _, a, _ = profile.values(r)
            return f, a

    def q_of_r(r, r2=None):
        eta = cut.eta_r(r)
        out = np.ones_like(r)
        m = eta > 0
        if np.any(m):
            _, a = fa(r[m])
            out[m] = 1 - eta[m] * (1 - a)
        return out

    def psi0(x):
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1)
        eta = cut.eta_r(r)
        f = np.ones_like(r)
        m = eta > 0
        if np.any(m):
            f[m] = fa(r[m])[0]
        with np.errstate(invalid="ignore", divide="ignore"):
            ph = ((x[..., 0] + 1j * x[..., 1]) / r) ** n
        ph = np.where(r > 0, ph, 0.0)
        return (f * eta + 1 - eta) * ph

    def a0(x):
        x = np.asarray(x, float)
        r2 = np.sum(x * x, axis=-1)
        q = q_of_r(np.sqrt(r2))
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.stack([-x[..., 1], x[..., 0]], axis=-1) / r2[..., None]
        return np.where(r2[..., None] > 0, n * q[..., None] * g, 0.0)

    return psi0, a0, q_of_r


def _principal(v):
    return v - 2 * np.pi * np.round(v / (2 * np.pi))


def build_background(grid: CellGrid, n: int, profile: Optional[VortexProfile] = None, kappa=None) -> Background:
    shape = grid.shape
    cut = build_cutoffs(shape)
    psi0, a0, qfun = background_closures(profile, cut, n)
    x = grid.nodes
    steps = {"1": (1, 0), "2": (0, 1)}
    if grid.diagonal:
        steps["d"] = (1, grid.diagonal)
    edges = {}
    for key, (d1, d2) in steps.items():
        q, m1, m2 = grid.shift(d1, d2)
        xq = x[q]
        wrap = np.zeros(grid.size)
        crossed = (m1 != 0) | (m2 != 0)
        if np.any(crossed):
            wrap[crossed] = wrap_phase(xq[crossed], m1[crossed], m2[crossed], shape, n)
        target = xq + m1[:, None] * shape.omega1 + m2[:, None] * shape.omega2
        phase = _line_integral(x, target, n, qfun, cut.r_out) - wrap
        edges[key] = EdgeSet((d1, d2), q, np.column_stack([m1, m2]), wrap, phase)
    e1, e2 = edges["1"], edges["2"]
    # loop p -> p+e1 -> p+e1+e2 -> p+e2 -> p
    loop = e1.phase0 + e2.phase0[e1.q] - e1.phase0[e2.q] - e2.phase0
    plaq = _principal(loop)
    return Background(grid, int(n), kappa, psi0(x), a0(x), edges, plaq, a0, psi0)


# ---------------------------------------------------------------- states

@dataclass(frozen=True)
class FieldState:
    """psi per node plus periodic link perturbations c[k, p] = alpha . e_k on the edge p -> p + e_k."""

    background: Background
    psi: np.ndarray
    c: np.ndarray
    parity: str = "odd"

    @property
    def grid(self) -> CellGrid:
        return self.background.grid

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.psi.real, self.psi.imag, self.c[0], self.c[1]])

    @classmethod
    def from_vector(cls, background: Background, x: np.ndarray, parity: str = "odd") -> "FieldState":
        N = background.grid.size
        x = np.asarray(x, float)
        return cls(background, x[:N] + 1j * x[N : 2 * N], np.stack([x[2 * N : 3 * N], x[3 * N :]]), parity)

    def alpha_cartesian(self) -> np.ndarray:
        """alpha at nodes from the averaged link values on both adjacent edges."""
        g = self.grid
        qm1, _, _ = g.shift(-1, 0)
        qm2, _, _ = g.shift(0, -1)
        c1 = 0.5 * (self.c[0] + self.c[0][qm1])
        c2 = 0.5 * (self.c[1] + self.c[1][qm2])
        return np.column_stack([c1, c2]) @ g.reciprocal().T

    def a_cartesian(self) -> np.ndarray:
        return self.background.a0_nodes + self.alpha_cartesian()

    def plaquette_flux(self) -> np.ndarray:
        return plaquette_flux(self.background, self.c)


def plaquette_flux(background: Background, c: np.ndarray) -> np.ndarray:
    g = background.grid
    q1, q2 = background.edges["1"].q, background.edges["2"].q
    return background.plaquette0 + c[0] + c[1][q1] - c[0][q2] - c[1]


def build_approximate_solution(profile: VortexProfile, grid: CellGrid) -> FieldState:
    if profile.r_max < grid.shape.circumradius:
        raise GridError(
            f"profile r_max={profile.r_max} is shorter than the cell circumradius {grid.shape.circumradius:.3f}"
        )
    bg = build_background(grid, profile.n, profile, profile.kappa)
    return FieldState(bg, bg.psi0.copy(), np.zeros((2, grid.size)))


def vector_reflect(grid: CellGrid, x: np.ndarray) -> np.ndarray:
    """(R x) on flat vectors [Re psi, Im psi, c1, c2]: node values pulled back through x -> -x.

    Edge k based at p maps to edge k based at R(p + e_k), traversed the other
    way; for link values of a field a with a(-x) = s a(x) that gives s c.
    So odd fields satisfy R x = -x with R a plain permutation.
    """
    perm = grid.reflection
    N = grid.size
    x = np.asarray(x)
    out = np.empty_like(x)
    out[:N] = x[:N][perm]
    out[N : 2 * N] = x[N : 2 * N][perm]
    q1, _, _ = grid.shift(1, 0)
    q2, _, _ = grid.shift(0, 1)
    out[2 * N : 3 * N] = x[2 * N : 3 * N][perm[q1]]
    out[3 * N :] = x[3 * N :][perm[q2]]
    return out


def reflection_permutation(grid: CellGrid) -> np.ndarray:
    """Index permutation P with (R x)[k] = x[P[k]] on flat vectors."""
    N = grid.size
    perm = grid.reflection
    q1, _, _ = grid.shift(1, 0)
    q2, _, _ = grid.shift(0, 1)
    return np.concatenate([perm, N + perm, 2 * N + perm[q1], 3 * N + perm[q2]])


def reflect(state: FieldState) -> FieldState:
    """Compose with x -> -x; the full field (background included) picks up no sign here.

    For an odd state reflect(u) equals -u; callers compare against that.
    """
    x = vector_reflect(state.grid, state.as_vector())
    return FieldState.from_vector(state.background, x, state.parity)


def parity_defect(state_or_vec, grid: Optional[CellGrid] = None) -> float:
    """max |R u + u| over the flat vector; zero for odd states."""
    if isinstance(state_or_vec, FieldState):
        grid = state_or_vec.grid
        x = state_or_vec.as_vector()
    else:
        x = np.asarray(state_or_vec)
    return float(np.max(np.abs(vector_reflect(grid, x) + x)))


def odd_part(grid: CellGrid, x: np.ndarray) -> np.ndarray:
    return 0.5 * (x - vector_reflect(grid, x))


def wrap_neighbor(state: FieldState, node: int, direction: tuple[int, int]):
    """(psi, c) of the neighbour in lattice step ``direction`` seen from ``node``.

    psi carries exp(i phi) when the step leaves the cell; link values are periodic.
    """
    g = state.grid
    i, j = divmod(int(node), g.N2)
    ii, jj = i + direction[0], j + direction[1]
    m1, i2 = divmod(ii, g.N1)
    m2, j2 = divmod(jj, g.N2)
    q = i2 * g.N2 + j2
    psi = state.psi[q]
    if m1 or m2:
        phi = wrap_phase(g.nodes[q][None], m1, m2, g.shape, state.background.n)[0]
        psi = psi * np.exp(1j * phi)
    return psi, state.c[:, q].copy()


# ---------------------------------------------------------------- field dump

DUMP_HEADER = "# N1 N2 R tau_re tau_im kappa n"


def write_field_dump(path, state: FieldState, kappa: float) -> None:
    g = state.grid
    i, j = g.ij(np.arange(g.size))
    a = state.a_cartesian()
    data = np.column_stack([i, j, g.nodes, state.psi.real, state.psi.imag, a])
    with open(path, "w") as fh:
        fh.write(DUMP_HEADER + "\n")
        sh = g.shape
        fh.write(f"# {g.N1} {g.N2} {sh.R:.17g} {sh.tau.real:.17g} {sh.tau.imag:.17g} {kappa:.17g} {state.background.n}\n")
        np.savetxt(fh, data, fmt=["%d", "%d"] + ["%.17g"] * 6)


def read_field_dump(path):
    """Returns (meta dict, table with columns i j x y re im a1 a2)."""
    with open(path) as fh:
        head = fh.readline().strip()
        if head != DUMP_HEADER:
            raise ValueError(f"bad field dump header: {head!r}")
        vals = fh.readline().lstrip("#").split()
        if len(vals) != 7:
            raise ValueError("bad field dump parameter line")
        meta = dict(
            N1=int(vals[0]), N2=int(vals[1]), R=float(vals[2]), tau_re=float(vals[3]),
            tau_im=float(vals[4]), kappa=float(vals[5]), n=int(vals[6]),
        )
        table = np.loadtxt(fh, ndmin=2)
    if table.shape != (meta["N1"] * meta["N2"], 8):
        raise ValueError(f"field dump has shape {table.shape}, expected ({meta['N1'] * meta['N2']}, 8)")
    return meta, table
