"""Radial profiles of the degree-n Ginzburg-Landau vortex.

The equivariant vortex is psi = f(r) exp(i n theta), A = a(r) n grad(theta).
Substituting into the field equations gives the two-point problem

    f'' + f'/r - n^2 (1-a)^2 f / r^2 + kappa^2 (1 - f^2) f = 0
    a'' - a'/r + (1 - a) f^2 = 0

with f(0) = a(0) = 0 and f, a -> 1 as r -> infinity.  The main solver is a
fourth-order collocation scheme on a stretched mesh driven by damped Newton
iterations.  An independent two-sided shooting solver is kept alongside it as
a cross-check.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import simpson, solve_ivp, trapezoid
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import root
from scipy.special import k0e, k1e


class ProfileError(RuntimeError):
    """Raised when a profile solve fails; carries the last residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


MESH_STRETCH = 0.25


@dataclass(frozen=True)
class VortexProfile:
    n: int
    kappa: float
    mesh: np.ndarray
    f: np.ndarray
    a: np.ndarray
    df: np.ndarray
    da: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def r_max(self) -> float:
        return float(self.mesh[-1])

    @property
    def size(self) -> int:
        return len(self.mesh) - 1

    def spline(self, which: str) -> CubicHermiteSpline:
        if which not in self._splines:
            if which == "f":
                self._splines[which] = CubicHermiteSpline(self.mesh, self.f, self.df)
            elif which == "a":
                self._splines[which] = CubicHermiteSpline(self.mesh, self.a, self.da)
            else:
                raise KeyError(which)
        return self._splines[which]

    def values(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Interpolated (f, f', a, a') at radii r (cubic Hermite)."""
        r = np.asarray(r, dtype=float)
        if np.any(r > self.r_max * (1 + 1e-12)) or np.any(r < 0):
            raise ValueError("radius outside the profile mesh")
        sf, sa = self.spline("f"), self.spline("a")
        return sf(r), sf(r, 1), sa(r), sa(r, 1)


@dataclass(frozen=True)
class ProfileScalars:
    energy: float
    flux: float
    decay_rate_f: float
    decay_rate_a: float
    h_c1: float

    def as_dict(self) -> dict:
        return {
            "energy": self.energy,
            "flux": self.flux,
            "decay_rate_f": self.decay_rate_f,
            "decay_rate_a": self.decay_rate_a,
            "h_c1": self.h_c1,
        }


# ---------------------------------------------------------------- mesh and stencils

def stretched_mesh(r_max: float, size: int, stretch: float = MESH_STRETCH):
    """Mesh r(s) = r_max (c s + (1-c) s^2) on uniform s; returns r, r_s, r_ss."""
    s = np.linspace(0.0, 1.0, size + 1)
    c = stretch
    r = r_max * (c * s + (1 - c) * s**2)
    r_s = r_max * (c + 2 * (1 - c) * s)
    r_ss = np.full_like(s, 2 * r_max * (1 - c))
    r[0] = 0.0
    return r, r_s, r_ss


def fd_weights(offsets: Sequence[int], order: int) -> np.ndarray:
    """Finite-difference weights on integer offsets for the given derivative."""
    offs = np.asarray(offsets, dtype=float)
    k = len(offs)
    V = np.vander(offs, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def _stencil_matrix(m: int, order: int, h: float) -> sp.csr_matrix:
    """Fourth-order derivative matrix on m+1 uniform nodes with biased ends."""
    rows, cols, vals = [], [], []
    for i in range(m + 1):
        if order == 1:
            if i == 0:
                offs = [0, 1, 2, 3, 4]
            elif i == m:
                offs = [-4, -3, -2, -1, 0]
            elif i == 1:
                offs = [-1, 0, 1, 2, 3]
            elif i == m - 1:
                offs = [-3, -2, -1, 0, 1]
            else:
                offs = [-2, -1, 0, 1, 2]
        else:
            if i == 0:
                offs = [0, 1, 2, 3, 4, 5]
            elif i == m:
                offs = [-5, -4, -3, -2, -1, 0]
            elif i == 1:
                offs = [-1, 0, 1, 2, 3, 4]
            elif i == m - 1:
                offs = [-4, -3, -2, -1, 0, 1]
            else:
                offs = [-2, -1, 0, 1, 2]
        w = fd_weights(offs, order) / h**order
        for o, wv in zip(offs, w):
            rows.append(i)
            cols.append(i + o)
            vals.append(wv)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m + 1, m + 1))


@dataclass
class _Collocation:
    r: np.ndarray
    D1: sp.csr_matrix
    D2: sp.csr_matrix

    @classmethod
    def build(cls, r_max: float, size: int) -> "_Collocation":
        r, r_s, r_ss = stretched_mesh(r_max, size)
        h = 1.0 / size
        D1s = _stencil_matrix(size, 1, h)
        D2s = _stencil_matrix(size, 2, h)
        inv_rs = sp.diags(1.0 / r_s)
        D1 = (inv_rs @ D1s).tocsr()
        D2 = (sp.diags(1.0 / r_s**2) @ (D2s - sp.diags(r_ss / r_s) @ D1s)).tocsr()
        return cls(r=r, D1=D1, D2=D2)


def _residuals(col: _Collocation, f, a, n, kappa):
    r = col.r[1:-1]
    fr, frr = col.D1 @ f, col.D2 @ f
    ar, arr = col.D1 @ a, col.D2 @ a
    fi, ai = f[1:-1], a[1:-1]
    Rf = frr[1:-1] + fr[1:-1] / r - n**2 * (1 - ai) ** 2 * fi / r**2 + kappa**2 * (1 - fi**2) * fi
    Ra = arr[1:-1] - ar[1:-1] / r + (1 - ai) * fi**2
    return Rf, Ra


def _jacobian(col: _Collocation, f, a, n, kappa):
    m = len(col.r) - 1
    r = col.r[1:-1]
    fi, ai = f[1:-1], a[1:-1]
    sel = slice(1, m)
    inv_r = sp.diags(1.0 / r)
    Jff = col.D2[sel, sel] + inv_r @ col.D1[sel, sel] + sp.diags(
        -(n**2) * (1 - ai) ** 2 / r**2 + kappa**2 * (1 - 3 * fi**2)
    )
    Jfa = sp.diags(2 * n**2 * (1 - ai) * fi / r**2)
    Jaa = col.D2[sel, sel] - inv_r @ col.D1[sel, sel] - sp.diags(fi**2)
    Jaf = sp.diags(2 * (1 - ai) * fi)
    return sp.bmat([[Jff, Jfa], [Jaf, Jaa]], format="csc")


def _newton(col, f, a, n, kappa, tol, max_iter):
    m = len(col.r) - 1
    Rf, Ra = _residuals(col, f, a, n, kappa)
    res = max(np.max(np.abs(Rf)), np.max(np.abs(Ra)))
    it = 0
    while res > tol and it < max_iter:
        it += 1
        J = _jacobian(col, f, a, n, kappa)
        step = spla.spsolve(J, -np.concatenate([Rf, Ra]))
        df_, da_ = step[: m - 1], step[m - 1 :]
        lam = 1.0
        norm0 = math.sqrt(np.sum(Rf**2) + np.sum(Ra**2))
        while True:
            f_new, a_new = f.copy(), a.copy()
            f_new[1:-1] += lam * df_
            a_new[1:-1] += lam * da_
            Rf_new, Ra_new = _residuals(col, f_new, a_new, n, kappa)
            norm1 = math.sqrt(np.sum(Rf_new**2) + np.sum(Ra_new**2))
            if norm1 < (1 - 1e-4 * lam) * norm0 or lam < 1e-3:
                break
            lam *= 0.5
        f, a, Rf, Ra = f_new, a_new, Rf_new, Ra_new
        res = max(np.max(np.abs(Rf)), np.max(np.abs(Ra)))
        if not np.isfinite(res):
            break
    return f, a, res, it


def solve_profile(
    n: int,
    kappa: float,
    r_max: float = 25.0,
    mesh_size: int = 2000,
    tol: float = 1e-8,
    max_iter: int = 60,
) -> VortexProfile:
    """Solve the radial vortex equations by collocation and damped Newton.

    Falls back to continuation in kappa (starting from kappa = 1) if the
    direct solve stalls.
    """
    if n == 0 or int(n) != n:
        raise ValueError("winding number must be a nonzero integer")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if r_max < 15 or mesh_size < 500:
        raise ValueError("need r_max >= 15 and mesh_size >= 500")
    n_abs = abs(int(n))
    col = _Collocation.build(r_max, mesh_size)
    r = col.r
    f0 = np.tanh(r) ** n_abs
    a0 = 1 - 1 / np.cosh(r) ** 2
    f0[-1] = a0[-1] = 1.0
    f, a, res, it = _newton(col, f0, a0, n_abs, kappa, tol, max_iter)
    if not res <= tol:
        f, a, res, it = _continuation(col, f0, a0, n_abs, kappa, tol, max_iter)
    if not res <= tol:
        raise ProfileError(f"profile Newton did not converge (residual {res:.3e})", res)
    df, da = col.D1 @ f, col.D1 @ a
    return VortexProfile(
        n=n_abs, kappa=float(kappa), mesh=r, f=f, a=a, df=df, da=da, residual=float(res), iterations=it
    )


def _continuation(col, f, a, n, kappa, tol, max_iter):
    path = np.geomspace(1.0, kappa, 8) if kappa != 1.0 else [1.0]
    res, it = float("inf"), 0
    for k in path:
        f, a, res, used = _newton(col, f, a, n, k, tol, max_iter)
        it += used
        if not res <= tol:
            break
    return f, a, res, it


# ---------------------------------------------------------------- shooting oracle

def _rhs_inner(r, y, n, kappa):
    f, fp, a, ap = y
    fpp = -fp / r + n**2 * (1 - a) ** 2 * f / r**2 - kappa**2 * (1 - f**2) * f
    app = ap / r - (1 - a) * f**2
    return [fp, fpp, ap, app]


def _rhs_outer(r, y, n, kappa):
    # u = 1 - f, v = 1 - a, written to keep relative accuracy in the tail
    u, up, v, vp = y
    f = 1 - u
    # 1 - f^2 = u (2 - u) avoids cancellation when u is tiny
    upp = -up / r - n**2 * v**2 * f / r**2 + kappa**2 * u * (2 - u) * f
    vpp = vp / r + v * f**2
    return [up, upp, vp, vpp]


@dataclass
class ShootingSolution:
    n: int
    kappa: float
    params: np.ndarray
    r_match: float
    r_far: float
    inner: object
    outer: object

    def __call__(self, r):
        """Return (f, a) at radii r >= 0."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        f = np.empty_like(r)
        a = np.empty_like(r)
        c_f, c_a = self.params[:2]
        small = r < self.inner.t[0]
        f[small], a[small] = _series(r[small], self.n, self.kappa, c_f, c_a)[::2]
        mid = (~small) & (r <= self.r_match)
        y = self.inner.sol(r[mid])
        f[mid], a[mid] = y[0], y[2]
        far = r > self.r_match
        y = self.outer.sol(r[far & (r <= self.r_far)])
        f[far & (r <= self.r_far)], a[far & (r <= self.r_far)] = 1 - y[0], 1 - y[2]
        # beyond the integration range use the asymptotic tail itself
        tail = r > self.r_far
        u, _, v, _ = _tail(r[tail], self.n, self.kappa, *self.params[2:])
        f[tail], a[tail] = 1 - u, 1 - v
        return f, a


def _series(r, n, kappa, c_f, c_a):
    d = -(kappa**2 + 2 * n**2 * c_a) / (4 * n + 4)
    e = -(c_f**2) / (4 * n * (n + 1))
    f = c_f * r**n * (1 + d * r**2)
    fp = c_f * (n * r ** (n - 1) + d * (n + 2) * r ** (n + 1))
    a = c_a * r**2 + e * r ** (2 * n + 2)
    ap = 2 * c_a * r + e * (2 * n + 2) * r ** (2 * n + 1)
    return f, fp, a, ap


def _tail(r, n, kappa, A_f, A_a):
    # linearised decaying tail: 1 - f ~ A_f K0(mu r), 1 - a ~ A_a r K1(r).
    # For mu > 2 the quadratic forcing n^2 (1-a)^2 / r^2 decays slower than
    # the free mode, so its leading particular response is added.
    mu = math.sqrt(2) * kappa
    ef, ea = np.exp(-mu * r), np.exp(-r)
    u = A_f * k0e(mu * r) * ef
    up = -A_f * mu * k1e(mu * r) * ef
    k1 = k1e(r) * ea
    v = A_a * r * k1
    vp = -A_a * r * k0e(r) * ea  # d/dr [r K1(r)] = -r K0(r)
    if mu > 2.2:
        k0 = k0e(r) * ea
        c = n**2 * A_a**2 / (mu**2 - 4)
        u = u + c * k1**2
        up = up + c * 2 * k1 * (-k0 - k1 / r)
    return u, up, v, vp


def shoot_profile(
    n: int,
    kappa: float,
    guess: Optional[Sequence[float]] = None,
    r_match: Optional[float] = None,
    r_far: Optional[float] = None,
    r_start: float = 1e-2,
    rtol: float = 1e-12,
) -> ShootingSolution:
    """Two-sided shooting for the vortex profile.

    Integrates outward from the origin series (f ~ c_f r^n, a ~ c_a r^2) and
    inward from the decaying far-field asymptotics, then matches f, f', a, a'
    at an interior radius.  The unknowns are (c_f, c_a, A_f, A_a), where the
    tail amplitudes are expressed relative to exponentially scaled Bessel
    functions at r_far.  `guess` is an optional starting value.
    """
    n = abs(int(n))
    mu = math.sqrt(2) * kappa
    if r_match is None:
        # match near the core edge, which moves out with the winding number
        r_match = float(min(np.clip(2.0 / max(mu, 0.5), 1.0, 3.0) + 0.5 * (n - 1), 4.0))
    if r_far is None:
        # past r ~ 22/mu the free mode of 1 - f drowns under the forced part
        r_far = 20.0 if mu <= 2.2 else 22.0 / mu

    def integrate(p):
        c_f, c_a, A_f, A_a = p
        y0 = _series(r_start, n, kappa, c_f, c_a)
        inner = solve_ivp(
            _rhs_inner, (r_start, r_match), y0, args=(n, kappa), method="DOP853",
            rtol=rtol, atol=1e-14, dense_output=True,
        )
        yf = list(_tail(r_far, n, kappa, A_f, A_a))
        outer = solve_ivp(
            _rhs_outer, (r_far, r_match), yf, args=(n, kappa), method="DOP853",
            rtol=rtol, atol=1e-300, dense_output=True,
        )
        return inner, outer

    def mismatch(p):
        inner, outer = integrate(p)
        if inner.status != 0 or outer.status != 0:
            return np.full(4, 1e3)
        fi, fpi, ai, api = inner.y[:, -1]
        uo, upo, vo, vpo = outer.y[:, -1]
        return np.array([fi - (1 - uo), fpi + upo, ai - (1 - vo), api + vpo])

    if guess is None:
        guess = _default_guess(n, kappa)
    sol = root(mismatch, np.asarray(guess, dtype=float), method="hybr", options={"xtol": 1e-13})
    miss = np.max(np.abs(mismatch(sol.x)))
    if miss > 1e-9:
        raise ProfileError(f"shooting did not converge (mismatch {miss:.3e})", miss)
    inner, outer = integrate(sol.x)
    return ShootingSolution(n, float(kappa), sol.x, r_match, r_far, inner, outer)


def _default_guess(n, kappa):
    c_f = 0.6 * kappa**n if n == 1 else 0.1 * kappa**n
    return [c_f, 0.25, 1.0, 1.0]


def shooting_guess_from(profile: VortexProfile) -> list[float]:
    """Starting parameters for shoot_profile read off a collocation profile."""
    n, kappa = profile.n, profile.kappa
    r = profile.mesh
    i = np.searchsorted(r, 0.05)
    c_f = profile.f[i] / r[i] ** n
    c_a = profile.a[i] / r[i] ** 2
    mu = math.sqrt(2) * kappa
    # the a-amplitude is read far out; the f-amplitude after removing the
    # forced part, at a radius where the free mode is still visible
    r_a = min(12.0, 0.5 * r[-1])
    _, _, av, _ = profile.values(np.array([r_a]))
    A_a = (1 - av[0]) / (r_a * k1e(r_a) * math.exp(-r_a))
    r_f = min(4.0 if mu > 2.2 else 8.0, 0.5 * r[-1])
    fv, _, _, _ = profile.values(np.array([r_f]))
    forced = _tail(r_f, n, kappa, 0.0, A_a)[0]
    A_f = (1 - fv[0] - forced) / (k0e(mu * r_f) * math.exp(-mu * r_f))
    return [c_f, c_a, A_f, A_a]


# ---------------------------------------------------------------- derived scalars

def _energy_density(p: VortexProfile) -> np.ndarray:
    r = p.mesh
    n, k2 = p.n, p.kappa**2
    dens = np.zeros_like(r)
    rr = r[1:]
    dens[1:] = (
        p.df[1:] ** 2
        + n**2 * (1 - p.a[1:]) ** 2 * p.f[1:] ** 2 / rr**2
        + 0.5 * k2 * (1 - p.f[1:] ** 2) ** 2
        + (n * p.da[1:] / rr) ** 2
    )
    # the 2 pi r weight vanishes at the origin, so the limit value is irrelevant
    return 0.5 * dens * 2 * np.pi * r


def profile_energy(p: VortexProfile, rule: str = "simpson") -> float:
    """E^(n) = (1/2) int [f'^2 + n^2 (1-a)^2 f^2/r^2 + k^2/2 (1-f^2)^2 + (n a'/r)^2] 2 pi r dr."""
    g = _energy_density(p)
    if rule == "trapezoid":
        return float(trapezoid(g, p.mesh))
    if rule == "simpson":
        # Simpson in the uniform mesh coordinate with the mapping Jacobian
        r, r_s, _ = stretched_mesh(p.r_max, p.size)
        if np.max(np.abs(r - p.mesh)) > 1e-9 * p.r_max:
            return float(simpson(g, x=p.mesh))
        return float(simpson(g * r_s, dx=1.0 / p.size))
    raise ValueError(f"unknown quadrature rule {rule!r}")


def profile_flux(p: VortexProfile) -> float:
    return 2 * np.pi * p.n * float(p.a[-1])


def fit_decay_rate(r: np.ndarray, deficit: np.ndarray) -> float:
    """Least-squares slope of -log(deficit) against r."""
    slope = np.polyfit(np.asarray(r, float), np.log(np.asarray(deficit, float)), 1)[0]
    return float(-slope)


def _tail_window(r, deficit, lo, hi, r_cut):
    mask = (deficit > lo) & (deficit < hi) & (r <= r_cut)
    return mask


def decay_rates(
    p: VortexProfile, lo: float = 1e-10, hi: float = 1e-2, min_points: int = 20, cut: float = 0.85
) -> tuple[float, float]:
    """Fitted exponential tail rates of 1 - f and 1 - a.

    Points beyond cut * r_max are skipped because the Dirichlet data at r_max
    bends the last part of the tail.
    """
    rates = []
    for deficit in (1 - p.f, 1 - p.a):
        mask = _tail_window(p.mesh, deficit, lo, hi, cut * p.r_max)
        if mask.sum() < min_points:
            raise ProfileError("tail window too short; increase r_max")
        rates.append(fit_decay_rate(p.mesh[mask], deficit[mask]))
    return rates[0], rates[1]


def first_critical_field(kappa: float, r_max: float = 25.0, mesh_size: int = 2000) -> float:
    p = solve_profile(1, kappa, r_max=r_max, mesh_size=mesh_size)
    return profile_energy(p) / profile_flux(p)


def critical_field_from(energy: float, flux: float) -> float:
    return energy / flux


def profile_scalars(p: VortexProfile) -> ProfileScalars:
    energy = profile_energy(p)
    flux = profile_flux(p)
    try:
        rf, ra = decay_rates(p)
    except ProfileError:
        rf = ra = float("nan")
    hc1 = energy / flux if p.n == 1 else float("nan")
    return ProfileScalars(energy, flux, rf, ra, hc1)


def eval_vortex_fields(p: VortexProfile, x) -> tuple[np.ndarray, np.ndarray]:
    """Psi^(n)(x) and A^(n)(x) at points x of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r > p.r_max * (1 + 1e-12)):
        raise ValueError("point outside the profile range")
    f, _, a, _ = p.values(r)
    theta = np.arctan2(x[..., 1], x[..., 0])
    psi = f * np.exp(1j * p.n * theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(r > 0, p.n * a / np.where(r > 0, r, 1.0) ** 2, 0.0)
    A = np.stack([-x[..., 1] * coef, x[..., 0] * coef], axis=-1)
    psi = np.where(r > 0, psi, 0.0)
    return psi, A


# ---------------------------------------------------------------- CSV

def write_profile_csv(p: VortexProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("r,f,a,df,da\n")
        for row in zip(p.mesh, p.f, p.a, p.df, p.da):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_profile_csv(path, n: int, kappa: float) -> VortexProfile:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["r", "f", "a", "df", "da"]:
            raise ValueError(f"bad profile header {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    if any(len(row) != 5 for row in rows):
        raise ValueError("truncated profile row")
    data = np.array(rows)
    return VortexProfile(n, kappa, data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4])
