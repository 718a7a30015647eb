"""Lattice shapes, fundamental cells and the gauge exponents g_s.

A lattice is described by its minimal spacing R and the shape parameter
tau = omega2 / omega1 (as complex numbers) with omega1 = (R, 0).  The
fundamental cell is the parallelogram {r1 omega1 + r2 omega2 : -1/2 <= ri < 1/2},
centred at the origin so that x -> -x maps it to itself.

The exponent g_s(x) = n theta(x + s) - n theta(x) is multivalued on the plane.
Along the cell edges it is made single valued by taking the angle swept by
the segment from x to x + s, which is what the line integral
n * int_0^1 (Jx . s) / |x + r s|^2 dr computes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# radius outside of which the cutoff eta vanishes, in units of R
SUPPORT_RADIUS = 0.4


class ShapeError(ValueError):
    """Shape parameter outside the supported set."""


class SingularInputError(ValueError):
    """Point collinear with the lattice vector (g_s undefined)."""


def normalize_shape(tau_raw: complex, max_steps: int = 1000) -> complex:
    """Reduce tau to the standard fundamental domain of the modular group.

    The result satisfies |tau| >= 1, Im tau > 0, -1/2 < Re tau <= 1/2 and
    Re tau >= 0 whenever |tau| = 1.
    """
    tau = complex(tau_raw)
    if not tau.imag > 0:
        raise ShapeError("Im tau must be positive")
    eps = 1e-13
    for _ in range(max_steps):
        # translate into the strip, then invert if inside the unit circle
        tau = complex(tau.real - math.floor(tau.real + 0.5), tau.imag)
        if abs(tau) < 1 - eps:
            tau = -1 / tau
            continue
        break
    else:
        raise ShapeError("modular reduction did not terminate")
    if abs(tau.real + 0.5) < eps:
        tau = complex(0.5, tau.imag)
    if abs(abs(tau) - 1) < eps and tau.real < 0:
        tau = complex(-tau.real, tau.imag)
    return tau


def _is_reduced(tau: complex, eps: float = 1e-12) -> bool:
    return (
        tau.imag > 0
        and abs(tau) >= 1 - eps
        and -0.5 < tau.real <= 0.5 + eps
        and not (abs(abs(tau) - 1) < eps and tau.real < -eps)
    )


@dataclass(frozen=True)
class LatticeShape:
    """Lattice basis omega1 = (R, 0), omega2 = R (Re tau, Im tau).

    Unequal sides (|tau| != 1) need ``equal_sides=False``; they are accepted
    only when the disc of radius 2R/5 fits inside the cell.
    """

    tau: complex
    R: float
    equal_sides: bool = True
    omega1: np.ndarray = field(init=False, repr=False, compare=False)
    omega2: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tau = complex(self.tau)
        object.__setattr__(self, "tau", tau)
        if not self.R > 0:
            raise ShapeError("R must be positive")
        if not _is_reduced(tau):
            raise ShapeError(f"tau={tau} is not in the reduced domain; call normalize_shape first")
        if self.equal_sides and abs(abs(tau) - 1) > 1e-12:
            raise ShapeError("|tau| != 1 gives unequal sides; pass equal_sides=False")
        w1 = np.array([self.R, 0.0])
        w2 = self.R * np.array([tau.real, tau.imag])
        w1.flags.writeable = False
        w2.flags.writeable = False
        object.__setattr__(self, "omega1", w1)
        object.__setattr__(self, "omega2", w2)
        if self.inradius < SUPPORT_RADIUS * self.R * (1 - 1e-12):
            raise ShapeError(
                f"cutoff support radius {SUPPORT_RADIUS}R does not fit in the cell "
                f"(inradius {self.inradius / self.R:.4f}R)"
            )

    @classmethod
    def square(cls, R: float) -> "LatticeShape":
        return cls(1j, R)

    @classmethod
    def triangular(cls, R: float) -> "LatticeShape":
        return cls(complex(0.5, math.sqrt(3) / 2), R)

    @property
    def cell_area(self) -> float:
        w1, w2 = self.omega1, self.omega2
        return float(abs(w1[0] * w2[1] - w1[1] * w2[0]))

    @property
    def basis(self) -> np.ndarray:
        """Columns omega1, omega2."""
        return np.column_stack([self.omega1, self.omega2])

    @property
    def inradius(self) -> float:
        # half the smaller of the two parallelogram heights
        h1 = self.cell_area / np.linalg.norm(self.omega1)
        h2 = self.cell_area / np.linalg.norm(self.omega2)
        return 0.5 * min(h1, h2)

    @property
    def circumradius(self) -> float:
        w1, w2 = self.omega1, self.omega2
        return 0.5 * max(np.linalg.norm(w1 + w2), np.linalg.norm(w1 - w2))

    def vector(self, m1: int, m2: int) -> "LatticeVector":
        return LatticeVector(int(m1), int(m2), self)

    def to_lattice_coords(self, x: np.ndarray) -> np.ndarray:
        """Coefficients (r1, r2) with x = r1 omega1 + r2 omega2 (last axis)."""
        return np.linalg.solve(self.basis, np.asarray(x, float)[..., None])[..., 0]

    def from_lattice_coords(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, float)
        return r[..., :1] * self.omega1 + r[..., 1:2] * self.omega2

    def edge_points(self, i: int, t: np.ndarray) -> np.ndarray:
        """Points on the edge d_i: d_1 = -omega1/2 + t omega2, d_2 = t omega1 - omega2/2, t in [-1/2, 1/2]."""
        t = np.asarray(t, float)[..., None]
        if i == 1:
            return -0.5 * self.omega1 + t * self.omega2
        if i == 2:
            return t * self.omega1 - 0.5 * self.omega2
        raise ValueError("edge index must be 1 or 2")


@dataclass(frozen=True)
class LatticeVector:
    m1: int
    m2: int
    shape: LatticeShape

    @property
    def value(self) -> np.ndarray:
        return self.m1 * self.shape.omega1 + self.m2 * self.shape.omega2

    def __add__(self, other: "LatticeVector") -> "LatticeVector":
        return LatticeVector(self.m1 + other.m1, self.m2 + other.m2, self.shape)


def mean_field(shape: LatticeShape, n: int) -> float:
    """Average magnetic field b = 2 pi n / |Omega|."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2 * math.pi * n / shape.cell_area


def _as_vec(s) -> np.ndarray:
    return np.asarray(s.value if isinstance(s, LatticeVector) else s, dtype=float)


def _cross(x, y):
    return x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0]


def gauge_exponent(x, s, n: int, atol: float = 1e-14) -> np.ndarray:
    """g_s(x): n times the angle swept by the segment from x to x + s.

    Works on arrays of points (last axis of length 2).  Raises
    SingularInputError when the segment passes through the origin.
    """
    x = np.asarray(x, dtype=float)
    s = _as_vec(s)
    y = x + s
    cr = _cross(x, y)
    dot = np.sum(x * y, axis=-1)
    if not np.all(s == 0):
        # the closed form needs |x|^2 - (x.s_hat)^2 > 0
        d2 = np.sum(x * x, axis=-1) - (x @ s) ** 2 / (s @ s)
        if np.any(d2 <= atol * (1 + np.sum(x * x, axis=-1))):
            raise SingularInputError("point collinear with the lattice vector")
    return n * np.arctan2(cr, dot)


def gauge_exponent_closed_form(x, s, n: int) -> np.ndarray:
    """The arctangent form n sgn(Jx.s) [arctan l2 - arctan l1].

    l1 = x.s_hat / d, l2 = (|s| + x.s_hat) / d with d = sqrt(|x|^2 - (x.s_hat)^2).
    Both arctangents are principal values; their difference lies in (-pi, pi)
    so no unwrapping is needed.
    """
    x = np.asarray(x, dtype=float)
    s = _as_vec(s)
    ls = math.hypot(*s)
    if ls == 0:
        return np.zeros(x.shape[:-1])
    sh = s / ls
    xs = x @ sh
    d2 = np.sum(x * x, axis=-1) - xs**2
    if np.any(d2 <= 0):
        raise SingularInputError("point collinear with the lattice vector")
    d = np.sqrt(d2)
    jx_s = _cross(x, sh)  # Jx . s_hat with Jx = (-x2, x1)
    return n * (jx_s / d) * (np.arctan((ls + xs) / d) - np.arctan(xs / d))


def gauge_exponent_gradient(x, s, n: int) -> np.ndarray:
    """grad g_s(x) = n (grad theta(x + s) - grad theta(x))."""
    x = np.asarray(x, dtype=float)
    s = _as_vec(s)
    return n * (_grad_theta(x + s) - _grad_theta(x))


def _grad_theta(x):
    r2 = np.sum(x * x, axis=-1)[..., None]
    return np.stack([-x[..., 1], x[..., 0]], axis=-1) / r2


def symmetric_gauge_exponent(x, s, b: float) -> np.ndarray:
    """Alternative exponent (b/2) s ^ x, used only to cross-check the cocycle verifier."""
    x = np.asarray(x, dtype=float)
    return 0.5 * b * _cross(_as_vec(s), x)


@dataclass
class CocycleReport:
    max_deviation: float
    per_pair: dict
    samples: int

    @property
    def ok(self) -> bool:
        return self.max_deviation < 1e-9


def _dist_to_2pi(v):
    return np.abs(v - 2 * np.pi * np.round(v / (2 * np.pi)))


def verify_cocycle(shape: LatticeShape, n: int, samples: Iterable[Sequence[float]], exponent=None) -> CocycleReport:
    """Max distance of g_{s+t}(x) - g_s(x+t) - g_t(x) to 2 pi Z over samples and s, t in {omega1, omega2}.

    ``exponent(x, s)`` overrides the default n-vortex exponent.
    """
    if exponent is None:
        def exponent(x, s):
            return gauge_exponent(x, s, n)
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    basis = {"w1": shape.omega1, "w2": shape.omega2}
    per_pair = {}
    for ks, s in basis.items():
        for kt, t in basis.items():
            dev = exponent(x, s + t) - exponent(x + t, s) - exponent(x, t)
            per_pair[(ks, kt)] = float(np.max(_dist_to_2pi(dev))) if len(x) else 0.0
    worst = max(per_pair.values()) if per_pair else 0.0
    return CocycleReport(worst, per_pair, len(x))


def boundary_samples(shape: LatticeShape, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random points on the two edges d_1, d_2 (half on each)."""
    t = rng.uniform(-0.5, 0.5, size=count)
    which = np.arange(count) % 2
    pts = np.where(which[:, None] == 0, shape.edge_points(1, t), shape.edge_points(2, t))
    return pts


def verify_flux_condition(shape: LatticeShape, n: int, order: int = 200) -> float:
    """Numerically integrated edge form of the flux condition.

    Returns int_{d1} grad g_{omega1} . dl - int_{d2} grad g_{omega2} . dl with
    d1 traversed along +omega2 and d2 along +omega1; this equals the
    counter-clockwise circulation of n grad theta around the cell, 2 pi n.
    """
    t, wq = np.polynomial.legendre.leggauss(order)
    t, wq = 0.5 * t, 0.5 * wq  # map to [-1/2, 1/2]
    w1, w2 = shape.omega1, shape.omega2
    left = shape.edge_points(1, t)
    bottom = shape.edge_points(2, t)
    i1 = np.sum(wq * (gauge_exponent_gradient(left, w1, n) @ w2))
    i2 = np.sum(wq * (gauge_exponent_gradient(bottom, w2, n) @ w1))
    return float(i1 - i2)


def boundary_winding(shape: LatticeShape, order: int = 200) -> float:
    """Counter-clockwise circulation of grad theta around the cell boundary."""
    t, wq = np.polynomial.legendre.leggauss(order)
    t, wq = 0.5 * t, 0.5 * wq
    w1, w2 = shape.omega1, shape.omega2
    total = 0.0
    # bottom, right, top, left as (start, direction)
    for start, d in (
        (-0.5 * w1 - 0.5 * w2, w1),
        (0.5 * w1 - 0.5 * w2, w2),
        (0.5 * w1 + 0.5 * w2, -w1),
        (-0.5 * w1 + 0.5 * w2, -w2),
    ):
        pts = start + (t + 0.5)[:, None] * d
        total += np.sum(wq * (_grad_theta(pts) @ d))
    return float(total)
