"""Acceptance battery, one test per criterion.

Each ``test_criterion_NN_*`` records a short detail line; ``conftest.py``
prints one PASS/FAIL line per criterion at the end of the run.  The suite
run at h = 1/32 is shared by criteria 4, 9, 10 and 11.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import jn_zeros

from capdrum import geometry as G
from capdrum.bounds import essential_bounds, lieb_lower
from capdrum.capacity import (
    capacity_grid,
    capacity_wos,
    layer_potential,
    layer_potential_derivative,
    layer_volume,
)
from capdrum.capradius import CapacityCache, SearchGrid, capacitary_radius
from capdrum.cli import run_suite, suite_domains
from capdrum.constants import ExplicitConstants, fundamental_solution, isoperimetric_constant
from capdrum.spectrum import bbox_sequence, domain_eigenvalue, paper_test_function_bound

pytestmark = pytest.mark.slow

H = 1 / 32
GAMMAS = (0.3, 0.5, 0.7)
FOUR_PI = 4 * math.pi


def note(record_property, text):
    record_property("detail", text)


@pytest.fixture(scope="module")
def suite():
    t0 = time.time()
    code, bundle = run_suite(H, GAMMAS)
    bundle["seconds"] = time.time() - t0
    bundle["code"] = code
    bundle["domains"] = {d.name: d for d in suite_domains()}
    return bundle


def test_criterion_01_constants(record_property):
    t0 = time.time()
    k = ExplicitConstants.evaluate(0.5, 3)
    secs = time.time() - t0
    note(record_property, f"c={k.c_lower:.15g} kappa={k.kappa:.15g} C={k.C_upper:.10g} "
                          f"N={k.N_cov} C_n={k.C_lemma:.12g} ({secs:.3f}s)")
    assert abs(k.c_lower - 1 / 112) <= 1e-12
    assert abs(k.kappa - 1 / 14) <= 1e-12
    assert abs(k.C_upper - 351232) <= 1e-6
    assert k.N_cov == 18
    assert abs(k.C_lemma - 112 * math.pi / 9) <= 1e-9
    assert secs < 1.0


def test_criterion_02_ball_capacity(record_property):
    mask = G.ball_mask(G.Ball((0, 0, 0), 1.0), H)
    t0 = time.time()
    grid, _ = capacity_grid(mask, 8.0)
    t_grid = time.time() - t0
    t0 = time.time()
    wos = capacity_wos(mask, 100_000, seed=0)
    t_wos = time.time() - t0
    se = wos.error_indicator
    note(record_property, f"grid={grid.value:.4f}+-{grid.error_indicator:.3f} ({t_grid:.0f}s) "
                          f"wos={wos.value:.4f}+-{se:.3f} ({t_wos:.0f}s) 4pi={FOUR_PI:.4f}")
    assert abs(grid.value - FOUR_PI) <= 0.05 * FOUR_PI
    assert abs(wos.value - FOUR_PI) <= 3 * se
    # error bars: 3 standard errors for the walks, the refinement indicator for the grid
    assert abs(wos.value - grid.value) <= 3 * se + grid.error_indicator
    assert t_grid < 60 and t_wos < 60


def test_criterion_03_eigen_anchors(record_property):
    t0 = time.time()
    cube = domain_eigenvalue(G.box((0, 0, 0), (1, 1, 1)), 1 / 64)
    ball = domain_eigenvalue(G.ball((0, 0, 0), 1.0), H)
    slab = domain_eigenvalue(G.slab(1.0), H, ((-0.25, -0.25, -1.0), (0.25, 0.25, 1.0)), periodic=(0, 1))
    secs = time.time() - t0
    errs = (cube.best / (3 * math.pi**2) - 1, ball.best / math.pi**2 - 1, slab.best / (math.pi**2 / 4) - 1)
    note(record_property, "rel. errors cube={:+.4f} ball={:+.4f} slab={:+.4f} ({:.0f}s)".format(*errs, secs))
    assert cube.extrapolated is not None
    assert abs(errs[0]) <= 0.01
    assert abs(errs[1]) <= 0.02
    assert abs(errs[2]) <= 0.03
    assert secs < 120


def test_criterion_04_sandwich(suite, record_property):
    rows = suite["rows"]
    worst = max(rows, key=lambda r: r.get("eps_total", math.inf))
    bad = [f"{r['domain']}/{r['gamma']}" for r in rows
           if r["verdict"] != "sandwich-holds" or not r.get("eps_total", math.inf) < 0.10]
    note(record_property, f"{len(rows)} rows, max eps={worst.get('eps_total', math.nan):.3f} "
                          f"({worst['domain']}/{worst['gamma']}), {suite['seconds']:.0f}s"
                          + (f", failing: {bad}" if bad else ""))
    assert len(rows) == 6 * len(GAMMAS)
    assert not bad
    assert suite["code"] == 0
    assert suite["seconds"] < 15 * 60


def test_criterion_05_scaling(record_property):
    # resolution scales with the domain, h = s / 16
    scales = (0.5, 1.0, 2.0, 4.0)
    radii, lams = [], []
    for s in scales:
        search = SearchGrid.uniform(0.5, 1.25, 13, ((0, 0, 0), (0, 0, 0)), 1 / 16).scaled(s)
        spec = G.ball((0, 0, 0), s)
        radii.append(capacitary_radius(spec, 0.5, search).radius)
        lams.append(domain_eigenvalue(spec, s / 16).best)
    slope = np.polyfit(np.log(radii), np.log(lams), 1)[0]
    note(record_property, f"slope={slope:.4f} radii={[round(r, 4) for r in radii]}")
    assert abs(slope + 2) <= 0.05


def _nested_sets(rng, count=20, size=10, start=20, step=12):
    occ = np.zeros((size,) * 3, dtype=bool)
    free = rng.permutation(occ.size)
    sets, used = [], start
    for _ in range(count):
        cur = np.zeros(occ.size, dtype=bool)
        cur[free[:used]] = True
        sets.append(cur.reshape(occ.shape))
        used += step
    return sets


def test_criterion_06_monotonicity(record_property):
    h = 1 / 16
    lines, ok = [], True
    for d in suite_domains():
        cache = CapacityCache()
        rs = [capacitary_radius(d.spec, g, d.search(h), cache=cache).radius for g in (0.1, 0.5, 0.9)]
        lines.append(f"{d.name}:" + "/".join(f"{r:.3g}" for r in rs))
        ok &= rs[0] <= rs[1] <= rs[2]

    rng = np.random.default_rng(7)
    caps = []
    for occ in _nested_sets(rng):
        mask = G.CompactMask(np.zeros(3), 1 / 8, occ)
        caps.append(capacity_grid(mask, 8.0, 1e-10, error_estimate=False)[0].value)
    cap_ok = all(b >= a * (1 - 1e-9) for a, b in zip(caps, caps[1:]))

    sides = (1.0, 1.25, 1.5, 2.0)
    lams = [domain_eigenvalue(G.box((0, 0, 0), (a, a, a)), 1 / 16, extrapolate=False).lam for a in sides]
    lam_ok = all(b <= a for a, b in zip(lams, lams[1:]))
    note(record_property, f"radii {' '.join(lines)}; caps monotone={cap_ok}; box lambdas monotone={lam_ok}")
    assert ok and cap_ok and lam_ok


def test_criterion_07_layer_potential(record_property):
    n, r1, r2 = 3, 0.5, 1.0
    rng = np.random.default_rng(11)
    m = 1_000_000
    # uniform points in the layer: radius by inverse CDF, direction uniform
    rad = (r1**3 + rng.random(m) * (r2**3 - r1**3)) ** (1 / 3)
    v = rng.standard_normal((m, 3))
    pts = v / np.linalg.norm(v, axis=1)[:, None] * rad[:, None]
    vol = layer_volume(r1, r2, n)
    worst = 0.0
    for y in (0.2, 0.6, 0.8, 1.2, 2.5):
        k = fundamental_solution(n, np.linalg.norm(pts - np.array([y, 0.0, 0.0]), axis=1)) * vol
        mc, se = k.mean(), k.std(ddof=1) / math.sqrt(m)
        z = abs(mc - layer_potential(r1, r2, y, n)) / se
        worst = max(worst, z)
    jumps = []
    for r in (r1, r2):
        below, above = np.nextafter(r, 0), np.nextafter(r, 2 * r)
        jumps.append(abs(layer_potential(r1, r2, above, n) - layer_potential(r1, r2, below, n)))
        jumps.append(abs(layer_potential_derivative(r1, r2, above, n)
                         - layer_potential_derivative(r1, r2, below, n)))
    # the derivative helper is the derivative of the potential
    for y in (0.3, 0.7, 1.5):
        d = 1e-5
        fd = (layer_potential(r1, r2, y + d, n) - layer_potential(r1, r2, y - d, n)) / (2 * d)
        assert fd == pytest.approx(layer_potential_derivative(r1, r2, y, n), abs=1e-8)
    note(record_property, f"max |z|={worst:.2f} over 5 probes, max branch jump={max(jumps):.1e}")
    assert worst <= 3.0
    assert max(jumps) <= 1e-12


def d_spec(suite, name):
    return suite["domains"][name].spec


def test_criterion_08_isoperimetric(record_property):
    # each suite domain inside a radius-2 ball around its search region
    A = isoperimetric_constant(3)
    ratios = {}
    for d in suite_domains():
        lo, hi = d.search_bbox
        c = 0.5 * (np.asarray(lo, float) + np.asarray(hi, float))
        mask = G.compact_mask(d.spec & G.ball(c, 2.0), H)
        ratios[d.name] = G.mask_measure(mask) / (A * capacity_grid(mask, 8.0)[0].value ** 3)
    ball = G.ball_mask(G.Ball((0, 0, 0), 1.0), H)
    eq = G.mask_measure(ball) / (A * capacity_grid(ball, 8.0)[0].value ** 3)
    note(record_property, "mes/(A cap^3): " + " ".join(f"{k}={v:.3f}" for k, v in ratios.items())
         + f"; unit ball={eq:.4f}")
    assert max(ratios.values()) <= 1.05
    assert abs(eq - 1) <= 0.05


def test_criterion_09_lieb(suite, record_property):
    lines, ok = [], True
    for name, d in suite["domains"].items():
        orc = suite["oracles"][name]
        for alpha in (0.3**3, 0.5**3, 0.7**3):
            rep = lieb_lower(d.spec, alpha, d.search(H), oracle=orc)
            ok &= rep.lower <= orc.best
        lines.append(f"{name}:{rep.lower:.3g}<={orc.best:.4g}")
    note(record_property, " ".join(lines))
    assert ok


def test_criterion_10_construction(suite, record_property):
    checked, worst_lo, worst_hi = 0, math.inf, 0.0
    for (name, g), rep in suite["reports"].items():
        r = rep.radius
        if r.witness is None or r.verdict is None or not r.verdict.negligible:
            continue
        tf = paper_test_function_bound(d_spec(suite, name), r.witness, g, H, verdict=r.verdict)
        lam = suite["oracles"][name].best
        cap = rep.constants.C_upper / r.radius**2 * 1.1
        worst_lo = min(worst_lo, tf.rayleigh / lam)
        worst_hi = max(worst_hi, tf.rayleigh / cap)
        checked += 1
    note(record_property, f"{checked} inputs, min RQ/lambda={worst_lo:.3g}, max RQ/(1.1 C r^-2)={worst_hi:.3g}")
    assert checked > 0
    assert worst_lo >= 1.0
    assert worst_hi <= 1.0


def test_criterion_11_essential(suite, record_property):
    lines = []
    for name, d in suite["domains"].items():
        if name == "slab":
            continue
        lo, hi = d.search_bbox
        c = 0.5 * (np.asarray(lo, float) + np.asarray(hi, float))
        rep = essential_bounds(d.spec, 0.5, [2.0, 4.0], d.search(H), center=c, cache=suite["caches"][name])
        assert rep.radius.radius == 0 and rep.flags["discrete_spectrum"], name
    lines.append("bounded: r_inf=0 with discrete flag")

    h = 1 / 16
    cyl = G.cylinder((0, 0, 0), 1.0, (0, 0, 1))
    search = SearchGrid(tuple(0.75 + k / 16 for k in range(21)),
                        ((-1 / 16, -1 / 16, 10.5), (1 / 16, 1 / 16, 12.0)), h, spacing=0.25)
    # periodic along the axis: the cross-section mode is the bottom of the spectrum
    orcs, stable = bbox_sequence(cyl, H, [((-1.25, -1.25, 0), (1.25, 1.25, L)) for L in (0.25, 0.5, 1.0)],
                                 periodic=(2,), extrapolate=True)
    assert stable is not None
    lam = orcs[-1].best
    rep = essential_bounds(cyl, 0.5, [0.0, 4.0, 8.0], search, oracle=orcs[-1])
    seq = [r.radius for _, r in rep.radius.sequence]
    j01 = jn_zeros(0, 1)[0] ** 2
    lines.append(f"cylinder radii {seq}, lambda={lam:.4f} (j01^2={j01:.4f}), "
                 f"bounds [{rep.lower:.3g}, {rep.upper:.3g}]")
    note(record_property, "; ".join(lines))
    assert rep.radius.status == "finite" and 0 < rep.radius.radius < math.inf
    assert max(seq) - min(seq) <= search.step
    assert not rep.flags["discrete_spectrum"]
    assert rep.lower <= lam <= rep.upper
    assert lam == pytest.approx(j01, rel=0.03)
