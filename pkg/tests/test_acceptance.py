"""One test per acceptance criterion; each prints a PASS/FAIL line that is
also repeated in the terminal summary."""

import itertools
import math
import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from rfent import cli, flow_residual
from rfent import entropy as en
from rfent import lgeodesic as lg
from rfent import variation as vr
from rfent.geometry import ManifoldModel, WarpedFlow
from rfent.quadrature import QuadratureScheme

RADIAL = QuadratureScheme(kind="radial", order=32)
GRIDS = {"hyperbolic": [0.1, 0.5, 1.0, 2.0], "sphere": [0.05, 0.15, 0.3], "cigar": [0.1, 0.5, 1.0]}


def report(number, title, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def models():
    return {
        "flat2": ManifoldModel.flat(2),
        "hyp2": ManifoldModel.hyperbolic(2),
        "hyp3": ManifoldModel.hyperbolic(3),
        "sphere2": ManifoldModel.sphere(2),
        "cigar": ManifoldModel.cigar(),
    }


def grid_of(model):
    return GRIDS["sphere" if math.isfinite(model.diameter) else "cigar" if model.family == "warped"
                 else "hyperbolic"]


def v_grid(n, r_max=0.9):
    """27 initial vectors: the 3^3 lattice in n = 3, three radii times nine angles in n = 2."""
    if n == 3:
        return np.array(list(itertools.product([-r_max, 0.1, r_max], repeat=3)))
    return np.array([r * oracles.unit(2, a) for r in (0.1, 0.5 * r_max, r_max)
                     for a in np.linspace(0, 2 * math.pi, 9, endpoint=False)])


def test_criterion_01_flat_rigidity():
    worst, slowest = 0.0, 0.0
    for n, order in ((2, 32), (3, 16)):
        model = ManifoldModel.flat(n)
        for t in (0.1, 0.5, 1.0, 2.0):
            t0 = time.perf_counter()
            est = en.weighted_volume(model, t, QuadratureScheme(order=order))
            slowest = max(slowest, time.perf_counter() - t0)
            worst = max(worst, abs(est.value / en.rigidity_constant(n) - 1))
    report(1, "flat weighted volume equals (4 pi)^{n/2}", worst <= 1e-6 and slowest <= 10.0,
           f"max rel err {worst:.2e}, slowest {slowest:.1f} s")


def test_criterion_02_upper_bound_and_monotonicity():
    details, ok = [], True
    for name, model in (("hyp2", ManifoldModel.hyperbolic(2)), ("hyp3", ManifoldModel.hyperbolic(3)),
                        ("sphere2", ManifoldModel.sphere(2))):
        t0 = time.perf_counter()
        rep = en.monotonicity_report(model, grid_of(model), RADIAL)
        elapsed = time.perf_counter() - t0
        gap = rep.bound_gap[rep.t_grid >= 0.5]
        good = rep.monotone_pass and bool(np.all(gap > 1e-3)) and rep.bound_pass and elapsed <= 120
        ok &= good
        details.append(f"{name}: min gap {np.min(rep.bound_gap):.3g}, {elapsed:.0f} s")
    report(2, "weighted volume non-increasing and below the flat value", ok, "; ".join(details))


def test_criterion_03_rescaling():
    model = ManifoldModel.hyperbolic(2)
    diffs = [en.rescale_check(model, lam, 1.0, RADIAL).difference for lam in (0.5, 2.0, 4.0)]
    report(3, "rescaled flow reproduces the weighted volume", max(diffs) <= 1e-5, f"max diff {max(diffs):.2e}")


def test_criterion_04_identity_suite():
    rng = np.random.default_rng(0)
    cases = {
        "flat2": (ManifoldModel.flat(2), 1.5, [0.1, 0.5, 1.0, 2.0]),
        "hyp2": (ManifoldModel.hyperbolic(2), 0.6, [0.1, 0.5, 1.0, 2.0]),
        "hyp3": (ManifoldModel.hyperbolic(3), 0.6, [0.1, 0.5, 1.0, 2.0]),
        "sphere2": (ManifoldModel.sphere(2), 0.5, [0.05, 0.1, 0.2, 0.3]),
        "cigar": (ManifoldModel.cigar(), 1.5, [0.1, 0.5, 1.0, 2.0]),
    }
    ok, details = True, []
    for name, (model, reach, times) in cases.items():
        worst_eq, worst_ineq, count = 0.0, -math.inf, 0
        for t in times:
            for _ in range(5):
                y = rng.uniform(-reach, reach, model.dim) / math.sqrt(model.dim)
                table = en.identity_suite(model, y, t)
                if table.skipped:
                    continue
                count += 1
                for r in table.rows:
                    if r.kind == "equality":
                        worst_eq = max(worst_eq, abs(r.residual))
                    else:
                        worst_ineq = max(worst_ineq, r.residual)
        ok &= count >= 20 and worst_eq <= 1e-4 and worst_ineq <= 1e-4
        details.append(f"{name}: {count} pts, eq {worst_eq:.1e}, ineq {worst_ineq:.1e}")
    report(4, "l+ identities and inequalities", ok, "; ".join(details))


def test_criterion_05_gradient_and_k():
    worst_grad, worst_k, count = 0.0, 0.0, 0
    for model in models().values():
        for t in grid_of(model):
            for V in v_grid(model.dim)[::3]:
                try:
                    geod = lg.shoot(model, V, t)
                except lg.TruncationError:
                    continue
                if not vr.minimality_check(model, V, t)[0]:
                    continue
                dg = lg.k_integral(geod)
                count += 1
                worst_grad = max(worst_grad, dg.grad_identity_residual)
                worst_k = max(worst_k, dg.kr_residual / (1 + abs(geod.length)))
    report(5, "gradient and K identities on minimisers", worst_grad <= 1e-4 and worst_k <= 1e-6,
           f"{count} geodesics, grad {worst_grad:.1e}, K {worst_k:.1e}")


def test_criterion_06_jacobi():
    worst_j, worst_gram, count = 0.0, 0.0, 0
    for name, model in models().items():
        times = [0.05, 0.15, 0.3] if name == "sphere2" else [0.1, 0.5, 1.0]
        for t in times:
            for V in v_grid(model.dim):
                if name == "sphere2" and 2 * np.linalg.norm(V) * math.sqrt(t) > 1.5:
                    continue
                geod = lg.shoot(model, V, t, with_k=False)
                J = vr.jacobi_propagate(geod).J[-1]
                fd = vr.jacobi_fd_oracle(model, V, t)
                worst_j = max(worst_j, np.linalg.norm(J - fd) / np.linalg.norm(fd))
                worst_gram = max(worst_gram, vr.transported_frame(geod).gram_residual)
                count += 1
    report(6, "Jacobi fields vs finite differences; Gram law", worst_j <= 1e-3 and worst_gram <= 1e-6,
           f"{count} geodesics, rel {worst_j:.1e}, gram {worst_gram:.1e}")


def test_criterion_07_small_time():
    t = 1e-4
    worst_j, worst_l = 0.0, 0.0
    for model in models().values():
        n = model.dim
        for V in [v * oracles.unit(n, a) for v in (0.0, 1.0, 2.0) for a in (0.3, 2.0)]:
            geod = lg.shoot(model, V, t)
            jf = vr.jacobi_propagate(geod)
            worst_j = max(worst_j, abs(jf.detL[-1] / t ** (n / 2) - 2**n) / 2**n)
            worst_l = max(worst_l, abs(geod.reduced_length - V @ V) / (1 + V @ V))
    report(7, "small-time limits of L+J and l+", worst_j <= 1e-2 and worst_l <= 1e-2,
           f"detL {worst_j:.1e}, l+ {worst_l:.1e}")


def test_criterion_08_density_monotonicity():
    ok, details = True, []
    for name, model in models().items():
        grid = np.array(grid_of(model))
        tab = vr.density_many(model, v_grid(model.dim, 1.5), grid, with_k=True)
        live = ~tab.failed
        d = tab.density[live]
        mono = bool(np.all(d[:, 1:] <= d[:, :-1] * (1 + 1e-6)))
        bound = model.dim / (2 * grid) - 0.5 * grid**-1.5 * tab.K[live]
        dl = tab.dlog_detL_dt[live]
        fin = np.isfinite(dl)
        excess = float(np.max(dl[fin] - bound[fin]))
        ok &= mono and excess <= 1e-4 and live.mean() >= 0.8
        details.append(f"{name}: excess {excess:.1e}")
    report(8, "density non-increasing with the log-derivative bound", ok, "; ".join(details))


def test_criterion_09_flow_validity():
    rng = np.random.default_rng(1)
    worst_e = 0.0
    for name, model in models().items():
        if model.family != "einstein":
            continue
        for t in grid_of(model):
            for _ in range(4):
                p = rng.uniform(-0.5, 0.5, model.dim) / math.sqrt(model.dim)
                worst_e = max(worst_e, flow_residual(model, p, t, 1e-4))
    worst_w = 0.0
    for flow, times in ((WarpedFlow(3, "sin", mesh=256), (0.01, 0.05, 0.1)),
                        (WarpedFlow(3, "sinh", mesh=512, s_max=3.0), (0.02, 0.1))):
        for t in times:
            worst_w = max(worst_w, max(flow_residual(flow, [r], t) for r in flow.interior_radii(9)))
    report(9, "flow residuals", worst_e <= 1e-6 and worst_w <= 1e-3, f"einstein {worst_e:.1e}, warped {worst_w:.1e}")


def test_criterion_10_theta():
    sphere = ManifoldModel.sphere(2)
    vals = [en.theta_volume(sphere, t) for t in (0.05, 0.1, 0.2, 0.3)]
    mono = all(v.converged for v in vals) and en.non_increasing([v.value for v in vals])
    flat = en.theta_volume(ManifoldModel.flat(2), 0.5)
    report(10, "unweighted volume: decreasing on the sphere, divergent on flat space",
           mono and not flat.converged, f"sphere {[f'{v.value:.4g}' for v in vals]}; flat: {flat.reason}")


def test_criterion_11_determinism(tmp_path):
    outs = []
    for jobs in (1, 4):
        d = tmp_path / f"jobs{jobs}"
        code = cli.main(["suite", "--model", "hyperbolic", "--dim", "2", "--quad", "radial", "--t", "0.5,1",
                         "--seed", "7", "--jobs", str(jobs), "--out", str(d)])
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "run_manifest.json"})
    same = outs[0] == outs[1]
    report(11, "suite artifacts identical for --jobs 1 and 4", same, f"{len(outs[0])} files compared")


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-s"])
