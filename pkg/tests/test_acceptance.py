"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every experiment runs once with its packaged default config; rate windows
and tolerances are pinned here rather than read back from the configs.
"""

import pytest

from chcook import cli
from chcook.error_analysis import fit_rate

ELLIPTIC_MIN = {2: 1.9, 3: 3.7}
DET_TIME_WINDOW = (0.85, 1.15)
CLOSED_FORM_TOL = 1e-13
DET_SPACE_MIN = {2: 1.9, 3: 3.6}
MODEL_DX_WINDOW = (0.4, 0.6)
MODEL_DT_WINDOW = (0.08, 0.20)
TAIL_TOL = 0.01
TIME_STRONG_WINDOW = (0.08, 0.20)
SPACE_STRONG_WINDOW = {2: (0.25, 0.45), 3: (0.40, 0.60)}
MIN_DYADIC_SPAN = 1e4
NOISE_NSE, NOISE_SAMPLES, NOISE_J = 5, 100_000, 8
ITO_TOL, ITO_PAIRS = 1e-12, 100
MC_NSE, MC_MIN_SAMPLES = 3, 2000
REGULARITY_W0 = 100

_CACHE = {}


def experiment(name):
    if name not in _CACHE:
        cp = cli.load_config(name, None)
        tables, checks = cli.RUNNERS[name](cp, cli.Runner(1, True, None))
        _CACHE[name] = (cp, {t.name: t for t in tables}, {c.name: c for c in checks})
    return _CACHE[name]


def report(capsys, number, title, results):
    """Print one line per criterion; ``results`` is a list of (ok, detail)."""
    ok = all(r[0] for r in results)
    with capsys.disabled():
        print(f"\ncriterion {number} [{'PASS' if ok else 'FAIL'}] {title}: " + "; ".join(d for _, d in results))
    return ok


def series(table, key, absc, **match):
    rows = [r for r in table.rows if all(r[k] == v for k, v in match.items())]
    return [r[absc] for r in rows], [r[key] for r in rows], rows


def in_window(slope, lo, hi=float("inf")):
    return lo <= slope <= hi


def test_criterion_1_elliptic_rates(capsys):
    _, tabs, _ = experiment("elliptic-rates")
    res = []
    for mu in (0, 12):
        for r in (2, 3):
            hs, errs, _ = series(tabs["elliptic-rates"], "error", "h", mu=mu, r=r)
            assert hs[0] == 1 / 8 and hs[-1] == 1 / 128
            s = fit_rate(hs, errs).slope
            res.append((s >= ELLIPTIC_MIN[r], f"mu={mu} r={r} slope {s:.3f}"))
    assert report(capsys, 1, "elliptic FEM rates", res)


def test_criterion_2_det_time_rate(capsys):
    cp, tabs, checks = experiment("det-time-rates")
    assert cp["model"]["w0"].replace(" ", "") == "1,1"
    res = []
    for mu in (0, 12):
        dts, errs, rows = series(tabs["det-time-rates"], "error", "dtau", mu=mu)
        assert dts[0] / dts[-1] == 128
        s = fit_rate(dts, errs).slope
        res.append((in_window(s, *DET_TIME_WINDOW), f"mu={mu} slope {s:.3f}"))
        gap = max(abs(r["error"] - r["closed_form"]) for r in rows)
        res.append((gap <= CLOSED_FORM_TOL, f"closed-form gap {gap:.1e}"))
    assert report(capsys, 2, "deterministic BE time rate", res)


def test_criterion_3_det_space_rate(capsys):
    _, tabs, _ = experiment("det-space-rates")
    res = []
    for mu in (0, 12):
        for r in (2, 3):
            hs, errs, _ = series(tabs["det-space-rates"], "error", "h", mu=mu, r=r)
            s = fit_rate(hs, errs).slope
            res.append((s >= DET_SPACE_MIN[r], f"mu={mu} r={r} slope {s:.3f}"))
    assert report(capsys, 3, "deterministic fully-discrete space rate", res)


def _tails_ok(rows):
    return all(not r["flagged"] and r["tail_bound"] <= TAIL_TOL * r["error"] for r in rows)


def test_criterion_4_modeling_error(capsys):
    cp, tabs, _ = experiment("modeling-error")
    res = []
    dxs, errs, rows = series(tabs["modeling-error-dx"], "error", "dx")
    assert rows[0]["dt"] == pytest.approx(rows[0]["T"] / 4096) and dxs[0] == 1 / 8 and dxs[-1] == 1 / 256
    s = fit_rate(dxs, errs).slope
    mono = all(b <= a for a, b in zip(errs, errs[1:]))
    res += [(in_window(s, *MODEL_DX_WINDOW), f"dx slope {s:.3f}"), (mono, "non-increasing in dx"),
            (_tails_ok(rows), "dx tails <= 1%")]
    dts, errs, rows = series(tabs["modeling-error-dt"], "error", "dt")
    assert rows[0]["dx"] == 1 / 512 and dts[0] / dts[-1] >= MIN_DYADIC_SPAN
    s = fit_rate(dts, errs).slope
    res += [(in_window(s, *MODEL_DT_WINDOW), f"dt slope {s:.3f}"), (_tails_ok(rows), "dt tails <= 1%")]
    assert report(capsys, 4, "modeling error", res)


def test_criterion_5_time_strong(capsys):
    _, tabs, _ = experiment("time-strong")
    dts, errs, rows = series(tabs["time-strong"], "error", "dtau")
    s = fit_rate(dts, errs).slope
    res = [(in_window(s, *TIME_STRONG_WINDOW), f"dtau slope {s:.3f}"),
           (dts[0] / dts[-1] >= MIN_DYADIC_SPAN, f"span {dts[0] / dts[-1]:.3g}"),
           (_tails_ok(rows), "tails <= 1%")]
    assert report(capsys, 5, "time-discrete strong rate", res)


def test_criterion_6_space_strong(capsys):
    _, tabs, _ = experiment("space-strong")
    res = []
    for r in (2, 3):
        hs, errs, rows = series(tabs["space-strong"], "error", "h", r=r)
        s = fit_rate(hs, errs).slope
        res.append((in_window(s, *SPACE_STRONG_WINDOW[r]), f"r={r} slope {s:.3f} window {SPACE_STRONG_WINDOW[r]}"))
        res.append((_tails_ok(rows), f"r={r} tails <= 1%"))
    assert report(capsys, 6, "fully-discrete space rate", res)


def test_criterion_7_noise_law(capsys):
    cp, tabs, checks = experiment("noise-stats")
    sec = cp["noise"]
    assert int(sec["n_samples"]) >= NOISE_SAMPLES and int(sec["J_star"]) == NOISE_J
    rows = tabs["noise-stats"].rows
    zin = max(r["z"] for r in rows if r["kind"] == "within")
    zx = max(r["z"] for r in rows if r["kind"] == "cross")
    res = [(zin <= NOISE_NSE, f"within-slab max z {zin:.2f}"), (zx <= NOISE_NSE, f"cross-slab max z {zx:.2f}"),
           (checks["Gram entries"].passed, "Gram entries")]
    assert report(capsys, 7, "noise law", res)


def test_criterion_8_ito_identity(capsys):
    _, tabs, _ = experiment("identity-checks")
    rows = [r for r in tabs["identity-checks"].rows if r["check"] == "ito"]
    worst = max(r["rel_gap"] for r in rows)
    res = [(len(rows) >= ITO_PAIRS, f"{len(rows)} pairs"), (worst <= ITO_TOL, f"max relative gap {worst:.1e}")]
    assert report(capsys, 8, "pathwise noise identity", res)


def test_criterion_9_exact_vs_mc(capsys):
    res = []
    for name, table in (("modeling-error", "modeling-error-mc"), ("time-strong", "time-strong-mc"),
                        ("space-strong", "space-strong-mc")):
        _, tabs, _ = experiment(name)
        row = tabs[table].rows[0]
        z = abs(row["mc_mean2"] - row["exact2"]) / row["mc_stderr2"]
        ok = z <= MC_NSE and row["n_samples"] >= MC_MIN_SAMPLES
        res.append((ok, f"{name} {z:.2f} SE (n={row['n_samples']}, bias {row['bias2']:.2g})"))
    assert report(capsys, 9, "exact vs Monte Carlo", res)


def test_criterion_10_regularity(capsys):
    _, tabs, _ = experiment("identity-checks")
    rows = [r for r in tabs["identity-checks"].rows if r["check"].startswith("regularity")]
    combos = {r["check"] for r in rows}
    bad = sum(r["lhs"] > r["rhs"] for r in rows)
    res = [(len(rows) >= REGULARITY_W0 and len(combos) == 16, f"{len(rows)} cases over {len(combos)} combinations"),
           (bad == 0, f"{bad} violations")]
    assert report(capsys, 10, "semigroup regularity bound", res)
