"""Acceptance criteria A1-A13; each test records one PASS/FAIL line for the terminal summary."""
import math
import time

import numpy as np

from vortex_lattice.cell_discretization import plaquette_flux
from vortex_lattice.gl_operator import DiscreteGL, gibbs_energy, nonlinearity_N
from vortex_lattice.lattice_geometry import LatticeShape, boundary_samples, verify_cocycle, verify_flux_condition
from vortex_lattice.ls_solver import SolverError, newton_solve
from vortex_lattice.spectral import (
    exp_fit, fiber_block, fiber_spectrum, lattice_coercivity, lattice_zero_mode_residuals, weighted_overlap,
    zero_mode_profile,
)
from vortex_lattice.vortex_profile import (
    decay_rates, first_critical_field, profile_energy, shoot_profile, shooting_guess_from, solve_profile,
)

from support import ACCEPTANCE_LINES, SQUARE, TRIANGULAR, approximate, corrected, profile, solved

SELF_DUAL_ENERGY = 3.1415926535895906


def record(tag: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{tag} {'PASS' if ok else 'FAIL'} {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def test_A1_profile_correctness():
    worst_res = worst_dev = worst_t = 0.0
    for n in (1, 3):
        for kappa in (0.5, 2**-0.5, 1.0, 2.0):
            t = time.perf_counter()
            p = solve_profile(n, kappa, tol=1e-9)
            s = shoot_profile(n, kappa, guess=shooting_guess_from(p))
            r = np.linspace(0.05, 15.0, 300)
            fs, as_ = s(r)
            f, _, a, _ = p.values(r)
            worst_t = max(worst_t, time.perf_counter() - t)
            worst_res = max(worst_res, p.residual)
            worst_dev = max(worst_dev, np.max(np.abs(fs - f)), np.max(np.abs(as_ - a)))
    ok = worst_res <= 1e-8 and worst_dev <= 1e-6 and worst_t < 5
    record("A1", ok, f"max residual {worst_res:.1e}, max shooting deviation {worst_dev:.1e}, slowest case {worst_t:.2f}s")


def test_A2_decay_rates():
    parts, ok = [], True
    for kappa in (0.5, 1.0, 2.0):
        rf, ra = decay_rates(profile(1, kappa))
        target = min(math.sqrt(2) * kappa, 1.0)
        good = abs(rf - target) <= 0.1 * target and abs(ra - 1) <= 0.1
        ok &= good
        parts.append(f"kappa={kappa:g}: f {rf:.3f} (target {target:.3f}), a {ra:.3f}")
    record("A2", ok, "; ".join(parts) + " [f tail decays like exp(-min(sqrt2 kappa, 2) r), so the fitted rate exceeds the target]")


def test_A3_self_dual_baseline():
    p = solve_profile(1, 2**-0.5, r_max=40, mesh_size=8000, tol=1e-9)
    e, e2 = profile_energy(p), profile_energy(p, rule="trapezoid")
    ok = abs(e - e2) / e < 1e-3 and abs(e - SELF_DUAL_ENERGY) < 1e-8
    record("A3", ok, f"E = {e:.13f} (Simpson), {e2:.10f} (trapezoid), |E - pi| = {abs(e - math.pi):.1e}")


def test_A4_gauge_geometry():
    t = time.perf_counter()
    worst_c = worst_f = 0.0
    rng = np.random.default_rng(0)
    for tau in (SQUARE, TRIANGULAR):
        for n in (1, 3):
            for R in (8.0, 12.0):
                s = LatticeShape(tau, R)
                worst_c = max(worst_c, verify_cocycle(s, n, boundary_samples(s, 100, rng)).max_deviation)
                worst_f = max(worst_f, abs(verify_flux_condition(s, n) - 2 * math.pi * n))
    dt = time.perf_counter() - t
    record("A4", worst_c < 1e-8 and worst_f < 1e-8 and dt < 2,
           f"cocycle deviation {worst_c:.1e}, flux defect {worst_f:.1e}, {dt:.2f}s")


def test_A5_discrete_flux_quantization():
    worst, count = 0.0, 0
    cases = [(1.5, 1, R, 48, SQUARE) for R in (8, 10, 12)] + [(1.5, 1, 10, 40, TRIANGULAR), (1.0, 3, 10, 40, SQUARE)]
    for kappa, n, R, N, tau in cases:
        v, w, rep, u = corrected(kappa, n, R, N, tau)
        for state in (v, u):
            worst = max(worst, abs(np.sum(plaquette_flux(state.background, state.c)) - 2 * math.pi * n))
            count += 1
    record("A5", worst < 1e-10, f"{count} states, max |flux - 2 pi n| = {worst:.1e}")


def test_A6_residual_decay():
    t = time.perf_counter()
    Rs = [6, 8, 10, 12]
    norms = []
    for R in Rs:
        v = approximate(1.5, 1, R, 4 * R)
        gl = DiscreteGL(v.background, 1.5)
        norms.append(gl.norm(gl.residual(v.as_vector())))
    slope, corr = exp_fit(Rs, norms)
    dt = time.perf_counter() - t
    ok = slope <= -0.3 and corr <= -0.99 and dt < 120
    record("A6", ok, f"||F(v)|| = {', '.join(f'{x:.3g}' for x in norms)} (N = 4R), slope {slope:.3f}, corr {corr:.4f}")


def test_A7_corrector_convergence():
    t = time.perf_counter()
    rows, ok = [], True
    for R in (8, 10, 12):
        v, w, rep, u = corrected(1.5, 1, R, 48)
        gl = DiscreteGL(v.background, 1.5)
        rel = rep.final_residual / gl.norm(gl.residual(v.as_vector()))
        ok &= rep.converged and rel <= 1e-8 and rep.parity_defect <= 1e-12 and rep.gauge_pairing <= 1e-7
        rows.append(rep)
    norms = [r.w_norm for r in rows]
    ratios = [norms[1] / norms[0], norms[2] / norms[1]]
    ok &= norms[0] > norms[1] > norms[2] and max(ratios) < 1
    dt = time.perf_counter() - t
    ok &= dt < 300
    record("A7", ok, f"iterations {[r.iterations for r in rows]}, ||w|| {', '.join(f'{x:.3g}' for x in norms)}, "
                     f"max pairing {max(r.gauge_pairing for r in rows):.1e}, max parity {max(r.parity_defect for r in rows):.1e}")


def test_A8_fixed_point_vs_newton():
    worst = 0.0
    for R in (8, 10, 12):
        v, w, rep, u = corrected(1.5, 1, R, 48)
        un, _ = newton_solve(v, 1.5, tol=1e-8)
        worst = max(worst, np.max(np.abs(un.as_vector() - u.as_vector())))
    record("A8", worst <= 1e-7, f"max node-wise difference {worst:.1e} (bound 10 tol = 1e-7)")


def test_A9_linearization():
    v = approximate(1.5, 1, 8, 24)
    gl = DiscreteGL(v.background, 1.5)
    rng = np.random.default_rng(0)
    x = v.as_vector() + 0.05 * rng.standard_normal(gl.dim)
    w = rng.standard_normal(gl.dim)
    F0, Lw = gl.residual(x), gl.apply_L(x, w)
    errs = [gl.norm((gl.residual(x + e * w) - F0) / e - Lw) for e in (1e-3, 1e-4, 1e-5)]
    rates = np.log10(np.array(errs[:-1]) / np.array(errs[1:]))
    first_order = bool(np.all(np.abs(rates - 1) < 0.1))
    base = approximate(1.5, 1, 8, 24)
    xb = base.as_vector()
    ident = 0.0
    for t in (1e-2, 1e-3):
        lhs = gl.residual(xb + t * w) - gl.residual(xb) - gl.apply_L(xb, t * w)
        ident = max(ident, np.max(np.abs(lhs - nonlinearity_N(base, t * w, 1.5))))
    sym = 0.0
    for _ in range(100):
        a, b = rng.standard_normal((2, gl.dim))
        sym = max(sym, abs(gl.inner(a, gl.apply_L(x, b)) - gl.inner(gl.apply_L(x, a), b)) / (gl.norm(a) * gl.norm(b)))
    ok = first_order and ident <= 1e-12 and sym <= 1e-12
    record("A9", ok, f"FD rates {np.round(rates, 3).tolist()}, N-identity {ident:.1e}, symmetry {sym:.1e}")


def test_A10_vortex_stability_spectrum():
    t = time.perf_counter()
    p = profile(1, 1.0)
    b1 = fiber_block(p, 1)
    rep, vecs = fiber_spectrum(b1)
    low = rep.eigenvalues[0]
    ov = weighted_overlap(b1, vecs[:, 0], zero_mode_profile(b1, p))
    k0 = {}
    for kappa in (0.5, 1.0, 2.0):
        k0[kappa] = fiber_spectrum(fiber_block(profile(1, kappa), 0), k=3)[0].eigenvalues[0]
    flip_dev = 0.0
    for m in (1, 2):
        bp, bm = fiber_block(p, m), fiber_block(p, -m)
        ep = np.array(fiber_spectrum(bp, k=5)[0].eigenvalues)
        em = np.array(fiber_spectrum(bm, k=5)[0].eigenvalues)
        flip_dev = max(flip_dev, np.max(np.abs(ep - em)))
    dt = time.perf_counter() - t
    ok = abs(low) <= 1e-4 and ov >= 0.999 and min(k0.values()) > 0 and flip_dev <= 1e-10 and dt < 120
    record("A10", ok, f"K_1 lowest {low:.2e}, overlap {ov:.10f}, K_0 lowest "
                      f"{', '.join(f'{v:.3f}' for v in k0.values())} (kappa 0.5, 1, 2), flip {flip_dev:.1e}")


def _coercivity(kappa, n, R, N):
    try:
        u, how = solved(kappa, n, R, N)
    except SolverError as exc:
        return None, f"no solution ({exc})"
    rep = lattice_coercivity(u, kappa, k=3)
    rho = float(np.max(np.abs(u.psi)))
    return rep.eigenvalues[0], f"{rep.eigenvalues[0]:.4f} ({how}, max|psi| {rho:.2f})"


def test_A11_lattice_coercivity():
    t = time.perf_counter()
    ok, parts = True, []
    for kappa, n in ((1.5, 1), (0.5, 3)):
        e8, d8 = _coercivity(kappa, n, 8, 40)
        e10, d10 = _coercivity(kappa, n, 10, 40)
        good = e8 is not None and e10 is not None and e8 > 0 and e10 > 0 and abs(e8 - e10) <= 0.25 * max(e8, e10)
        ok &= good
        parts.append(f"kappa={kappa:g} n={n}: R=8 {d8}, R=10 {d10}")
    # larger cells for the type-I case, reported only
    comp = []
    for R, N in ((12, 48), (14, 56), (16, 64)):
        e, _ = _coercivity(0.5, 3, R, N)
        comp.append(f"R={R} {e:.4f}" if e is not None else f"R={R} none")
    dt = time.perf_counter() - t
    ok &= dt < 600
    record("A11", ok, "; ".join(parts) + f"; kappa=0.5 n=3 at larger R: {', '.join(comp)}")


def test_A12_approximate_zero_modes():
    Rs = [8, 10, 12]
    vals = []
    for R in Rs:
        u, _ = solved(1.5, 1, R, 48)
        res = lattice_zero_mode_residuals(u, 1.5)
        vals.append(max(res["T1"]["residual"], res["T2"]["residual"]))
    slope, corr = exp_fit(Rs, vals)
    # companion at fixed spacing h = 1/6 (N = 6R): separates the O(h^2) floor from the R dependence
    fixed_h = []
    for R in Rs:
        u, _ = solved(1.5, 1, R, 6 * R)
        res = lattice_zero_mode_residuals(u, 1.5)
        fixed_h.append(max(res["T1"]["residual"], res["T2"]["residual"]))
    ok = slope < 0 and corr <= -0.95
    record("A12", ok, f"||L T|| at N=48: {', '.join(f'{x:.4f}' for x in vals)} (slope {slope:.3f}, corr {corr:.3f}); "
                      f"at N=6R: {', '.join(f'{x:.4f}' for x in fixed_h)} [flat: O(h^2) discretization floor]")


def test_A13_gibbs_comparison():
    kappa = 1.5
    hc1 = first_critical_field(kappa)
    h = 1.05 * hc1
    u, _ = solved(kappa, 1, 12, 48)
    G = gibbs_energy(u, kappa, h)
    table = []
    # equal R, then equal cell area (triangular side scaled by sin(pi/3)^(-1/2))
    for tau, R in ((SQUARE, 12.0), (TRIANGULAR, 12.0), (TRIANGULAR, 12.0 / math.sqrt(math.sin(math.pi / 3)))):
        v, w, rep, uu = corrected(kappa, 1, R, 48, tau)
        gl = DiscreteGL(uu.background, kappa)
        table.append(gl.energy(uu.as_vector()) / uu.grid.shape.cell_area)
    record("A13", G < 0, f"h_c1 = {hc1:.6f}, G(1.05 h_c1) = {G:.5f} vs 0 for the vortex-free state; "
                         f"energy per area (report only) square {table[0]:.6f}, triangular same R {table[1]:.6f}, "
                         f"triangular same area {table[2]:.6f}")
