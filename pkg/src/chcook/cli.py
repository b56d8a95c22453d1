"""Command line runner: one subcommand per convergence statement.

Each subcommand reads a flat ``key = value`` config with bracketed sections
(packaged defaults live in ``chcook/configs``), writes one CSV per sweep
into ``--out`` and prints a summary line per acceptance window.  Exit code
0 means every window passed, 1 that at least one failed, 2 a configuration
or gate error.

CSV exports: ``noise-stats --export-noise PATH`` writes one noise sample as
rows ``n, i, R`` and re-imports it as a round-trip check;
``det-space-rates --export-trajectory PATH`` writes the finest FEM
trajectory as rows ``m, tau, index, value``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .error_analysis import (ErrorReport, check_projection_orthogonality, coupled_modeling_expectation,
                             discrete_lt2_error, exact_modeling_error, exact_strong_error_fd,
                             exact_strong_error_td, fem_vs_spectral_error, fit_rate, mc_strong_error)
from .evolve import (EvolutionConfig, be_det_fem, be_det_spectral, check_gate, exact_det_spectral,
                     export_trajectory_csv)
from .femspace import build_space, solve_shifted_elliptic
from .noise import (SpaceTimeGrid, build_gram, derive_seed, export_noise_csv, import_noise_csv,
                    ito_identity_check, loads_from_sine_field, parseval_gram, project_pi_hat,
                    sample_noise, sample_noise_batch, hat_field_norm, sine_field_norm)
from .spectral import (InvalidParameterError, SpectralField, check_regularity_bound, drift_eigenvalues,
                       solve_elliptic_spectral, validate_params)

SUBCOMMANDS = {
    "elliptic-rates": "finite element elliptic estimate: L2 error O(h^4) for r=3 and O(h^2) for r=2",
    "det-time-rates": "deterministic Backward Euler in time: discrete L2-in-time error O(dtau^theta), theta=1",
    "det-space-rates": "deterministic fully-discrete scheme: L2-in-time space error O(h^l*), l*(2)=2, l*(3)=4",
    "modeling-error": "modeling error of the regularized noise: O(dx^(1/2-eps) + dt^(1/8-eps))",
    "time-strong": "strong error of stochastic Backward Euler in time: O(dtau^(1/8-eps))",
    "space-strong": "strong space error of the fully-discrete scheme: O(h^(nu(r)-eps)), nu(2)=1/3, nu(3)=1/2",
    "full-strong": "total strong error of the fully-discrete scheme against the white-noise solution",
    "noise-stats": "law of the slab noise vectors: R_n ~ N(0, dt G), independent across slabs",
    "identity-checks": "pathwise noise-projection identity, projection properties, semigroup regularity bound",
}


class ConfigError(Exception):
    """Configuration problem; mapped to exit code 2."""


# -- config helpers ------------------------------------------------------------

def _num(tok: str):
    tok = tok.strip()
    if "**" in tok:
        b, e = tok.split("**")
        return _num(b) ** _num(e)
    if "/" in tok:
        a, b = tok.split("/")
        return _num(a) / _num(b)
    try:
        return int(tok)
    except ValueError:
        return float(tok)


class Section:
    def __init__(self, cp: configparser.ConfigParser, name: str):
        if not cp.has_section(name):
            raise ConfigError(f"missing section [{name}]")
        self.name, self.sec = name, cp[name]

    def _raw(self, key, default):
        if key in self.sec:
            return self.sec[key]
        if default is None:
            raise ConfigError(f"missing key '{key}' in [{self.name}]")
        return default

    def num(self, key, default=None):
        raw = self._raw(key, default)
        try:
            return _num(str(raw))
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: cannot parse {raw!r}") from exc

    def int(self, key, default=None) -> int:
        v = self.num(key, default)
        if float(v) != int(v):
            raise ConfigError(f"[{self.name}] {key} must be an integer")
        return int(v)

    def nums(self, key, default=None) -> list:
        raw = self._raw(key, default)
        try:
            return [_num(t) for t in str(raw).split(",") if t.strip()]
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: cannot parse {raw!r}") from exc

    def sweep(self) -> list:
        start, factor, count = self.num("start"), self.num("factor"), self.int("count")
        if count < 3:
            raise ConfigError(f"[{self.name}] rate sweeps need count >= 3")
        vals = [start * factor**i for i in range(count)]
        return [int(v) if float(v).is_integer() else v for v in vals]


def load_config(name: str, path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is None:
        text = resources.files("chcook").joinpath("configs", f"{name}.ini").read_text()
        cp.read_string(text)
    else:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    return cp


# -- results -----------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class Table:
    name: str
    columns: list
    rows: list = field(default_factory=list)


def _slopes_to_date(abscissas, errors) -> list:
    out = []
    for i in range(len(errors)):
        if i < 2:
            out.append("")
        else:
            try:
                out.append(fit_rate(abscissas[: i + 1], errors[: i + 1]).slope)
            except ValueError:
                out.append("")
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_table(table: Table, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{table.name}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([_fmt(row.get(c, "")) for c in table.columns])
    return path


def _series_rows(series_info: dict, abscissa_key: str, reports: list, abscissas: list) -> list:
    errors = [r.error for r in reports]
    slopes = _slopes_to_date(abscissas, errors)
    rows = []
    for rep, a, s in zip(reports, abscissas, slopes):
        row = dict(series_info)
        row.update({k: v for k, v in rep.params.items() if not isinstance(v, str)})
        row[abscissa_key] = a
        row.update(error=rep.error, stderr=rep.stderr, tail_bound=rep.tail_bound,
                   K=rep.K, flagged=rep.flagged, slope_to_date=s)
        rows.append(row)
    return rows


def _window(name: str, slope: float, lo: float, hi: float = math.inf) -> Check:
    ok = lo <= slope <= hi
    win = f"[{lo:g}, {hi:g}]" if math.isfinite(hi) else f">= {lo:g}"
    return Check(name, ok, f"slope {slope:.4f}, window {win}")


class Runner:
    def __init__(self, threads: int, strict: bool, seed: int | None):
        self.threads = max(1, int(threads))
        self.strict = strict
        self.seed = seed

    def map(self, fn, items):
        items = list(items)
        if self.threads == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))

    def base_seed(self, section: Section) -> int:
        return int(self.seed) if self.seed is not None else section.int("base_seed", 20240601)


def _params(mu, T, K=1):
    return validate_params(mu, T, K)


# -- experiments ------------------------------------------------------------------

def run_elliptic(cp, rn: Runner):
    model, space, sw, acc = (Section(cp, s) for s in ("model", "space", "sweep", "acceptance"))
    mus, rs, cells = model.nums("mu"), space.nums("r"), sw.sweep()
    for mu in mus:
        _params(mu, 1.0)
    tab = Table("elliptic-rates", ["mu", "r", "h", "error", "stderr", "tail_bound", "slope_to_date"])
    checks = []
    for mu in mus:
        P = _params(mu, 1.0, 1)
        f = SpectralField.mode(1, 1)
        exact = solve_elliptic_spectral(f, P, "shifted")
        for r in rs:
            def point(c, r=r, mu=mu):
                spec = build_space(r, c)
                return ErrorReport("elliptic", dict(mu=mu, r=r),
                                   fem_vs_spectral_error(solve_shifted_elliptic(f, spec, mu), exact))
            reps = rn.map(point, cells)
            hs = [1.0 / c for c in cells]
            tab.rows += _series_rows(dict(mu=mu, r=r), "h", reps, hs)
            slope = fit_rate(hs, [x.error for x in reps]).slope
            checks.append(_window(f"elliptic mu={mu:g} r={r}", slope, acc.num(f"min_slope_r{r}")))
    return [tab], checks


def _x_minus_log1p(x: np.ndarray) -> np.ndarray:
    """``x - log(1 + x)`` without cancellation for small ``|x|``."""
    x = np.asarray(x, dtype=float)
    out = x - np.log1p(x)
    small = np.abs(x) < 0.1
    xs = x[small]
    term, acc = xs * xs / 2.0, np.zeros_like(xs)
    for j in range(2, 40):
        acc += term
        term = -term * xs * j / (j + 1)
    out[small] = acc
    return out


def _be_semigroup_gap(w0: np.ndarray, mu_k: np.ndarray, T: float, M: int) -> float:
    """Closed-form discrete L2-in-time gap between BE powers and the semigroup.

    ``(1+x)^{-m} - e^{-m x} = e^{-m x} expm1(m (x - log1p x))`` with
    ``x = dtau mu_k``, so no two nearly equal numbers are subtracted.
    """
    dtau = T / M
    x = dtau * mu_k
    m = np.arange(1, M + 1)[:, None]
    diff = np.exp(-m * x) * np.expm1(m * _x_minus_log1p(x))
    return math.sqrt(dtau * np.sum((w0 * diff) ** 2))


def run_det_time(cp, rn: Runner):
    model, sw, acc = (Section(cp, s) for s in ("model", "sweep", "acceptance"))
    T, mus = model.num("T"), model.nums("mu")
    w0 = SpectralField(model.nums("w0"))
    Ms = sw.sweep()
    for mu in mus:
        _params(mu, T)
        for M in Ms:
            check_gate(mu, T / M, rn.strict)
    tab = Table("det-time-rates", ["mu", "dtau", "error", "closed_form", "stderr", "tail_bound", "slope_to_date"])
    checks = []
    worst = 0.0
    for mu in mus:
        P = _params(mu, T, w0.K)
        mu_k = drift_eigenvalues(w0.K, mu)

        def point(M, P=P, mu_k=mu_k):
            cfg = EvolutionConfig(T, M, rn.strict)
            err = discrete_lt2_error(be_det_spectral(w0, P, cfg), exact_det_spectral(w0, P, cfg.taus), cfg)
            closed = _be_semigroup_gap(w0.coeffs, mu_k, T, M)
            return ErrorReport("det-time", dict(mu=mu), err, extra=dict(closed_form=closed))
        reps = rn.map(point, Ms)
        dts = [T / M for M in Ms]
        rows = _series_rows(dict(mu=mu), "dtau", reps, dts)
        for row, rep in zip(rows, reps):
            row["closed_form"] = rep.extra["closed_form"]
            worst = max(worst, abs(rep.error - rep.extra["closed_form"]))
        tab.rows += rows
        slope = fit_rate(dts, [x.error for x in reps]).slope
        checks.append(_window(f"det-time mu={mu:g}", slope, acc.num("slope_min"), acc.num("slope_max")))
    tol = acc.num("closed_form_tol")
    checks.append(Check("closed form vs pipeline", worst <= tol, f"max absolute gap {worst:.3g}, tolerance {tol:g}"))
    return [tab], checks


def run_det_space(cp, rn: Runner, export: str | None = None):
    model, fixed, space, sw, acc = (Section(cp, s) for s in ("model", "fixed", "space", "sweep", "acceptance"))
    T, mus, M = model.num("T"), model.nums("mu"), fixed.int("M")
    w0 = SpectralField(model.nums("w0"))
    rs, cells = space.nums("r"), sw.sweep()
    for mu in mus:
        _params(mu, T)
        check_gate(mu, T / M, rn.strict)
    cfg = EvolutionConfig(T, M, rn.strict)
    tab = Table("det-space-rates", ["mu", "r", "h", "error", "stderr", "tail_bound", "slope_to_date"])
    checks = []
    for mu in mus:
        P = _params(mu, T, w0.K)
        ref = be_det_spectral(w0, P, cfg)
        for r in rs:
            def point(c, r=r, P=P):
                tr = be_det_fem(w0, build_space(r, c), P, cfg)
                return ErrorReport("det-space", dict(mu=P.mu, r=r), discrete_lt2_error(tr, ref, cfg)), tr
            out = rn.map(point, cells)
            reps = [o[0] for o in out]
            if export and mu == mus[-1] and r == rs[-1]:
                export_trajectory_csv(out[-1][1], export)
            hs = [1.0 / c for c in cells]
            tab.rows += _series_rows(dict(mu=mu, r=r), "h", reps, hs)
            slope = fit_rate(hs, [x.error for x in reps]).slope
            checks.append(_window(f"det-space mu={mu:g} r={r}", slope, acc.num(f"min_slope_r{r}")))
    return [tab], checks


def _tail_checks(label, reps, tol):
    bad = [r for r in reps if r.flagged or r.tail_bound > tol * r.error]
    worst = max(r.tail_bound / r.error for r in reps if r.error > 0)
    return Check(f"{label} tail", not bad, f"max tail/error {worst:.3g}, tolerance {tol:g}")


def _mc_check(label, exact2, mc: ErrorReport, nse: float) -> Check:
    mean, se = mc.extra["mean2"], mc.extra["stderr2"]
    z = abs(mean - exact2) / se if se > 0 else math.inf
    return Check(label, z <= nse, f"MC {mean:.6g} +- {se:.3g} vs exact {exact2:.6g} ({z:.2f} standard errors)")


def _mc_table(name, rows):
    return Table(name, ["quantity", "n_samples", "mc_mean2", "mc_stderr2", "exact2", "bias2", "z"], rows)


def run_modeling(cp, rn: Runner):
    model, ss, ts, tail, mc = (Section(cp, s) for s in ("model", "space_sweep", "time_sweep", "tail", "mc"))
    mu = model.num("mu")
    tol, cap = tail.num("tol"), tail.int("K_cap")
    tables, checks = [], []
    for sec, key in ((ss, "dx"), (ts, "dt")):
        T = sec.num("T")
        P = _params(mu, T, 1)
        vals = sec.sweep()
        if sec.name == "space_sweep":
            grids = [SpaceTimeGrid(T, sec.int("N_star"), int(J)) for J in vals]
        else:
            grids = [SpaceTimeGrid(T, int(N), sec.int("J_star")) for N in vals]
        reps = rn.map(lambda g: exact_modeling_error(g, P, tail_tol=tol, K_cap=cap), grids)
        absc = [g.dx if key == "dx" else g.dt for g in grids]
        tab = Table(f"modeling-error-{key}", ["mu", "T", "dx", "dt", "error", "stderr", "tail_bound", "K",
                                              "flagged", "slope_to_date"])
        tab.rows = _series_rows(dict(mu=mu, T=T), key, reps, absc)
        tables.append(tab)
        errs = [x.error for x in reps]
        checks.append(_window(f"modeling {key}", fit_rate(absc, errs).slope, sec.num("slope_min"), sec.num("slope_max")))
        checks.append(_tail_checks(f"modeling {key}", reps, tol))
        if key == "dx":
            mono = all(b <= a for a, b in zip(errs, errs[1:]))
            checks.append(Check("modeling non-increasing in dx", mono, "error sequence " + ", ".join(f"{e:.4g}" for e in errs)))
    n = mc.int("n_samples")
    if n > 0:
        g = SpaceTimeGrid(mc.num("T"), mc.int("N_star"), mc.int("J_star"))
        P = _params(mu, g.T, 1)
        Kc, rho = mc.int("K_couple"), mc.int("rho")
        exact = exact_modeling_error(g, P, tail_tol=tol, K_cap=cap)
        coupled = coupled_modeling_expectation(g, P, Kc, rho)
        rep = mc_strong_error("modeling", P, n, rn.base_seed(mc), g, K_couple=Kc, rho=rho)
        chk = _mc_check("modeling exact vs MC", coupled, rep, mc.num("n_se"))
        checks.append(chk)
        z = abs(rep.extra["mean2"] - coupled) / rep.extra["stderr2"]
        tables.append(_mc_table("modeling-error-mc", [dict(quantity="theta2_plus_bias", n_samples=n,
                                mc_mean2=rep.extra["mean2"], mc_stderr2=rep.extra["stderr2"], exact2=coupled,
                                bias2=coupled - exact.error2, z=z)]))
    return tables, checks


def run_time_strong(cp, rn: Runner):
    model, fixed, sw, acc, tail, mc = (Section(cp, s) for s in ("model", "fixed", "sweep", "acceptance", "tail", "mc"))
    mu, T = model.num("mu"), model.num("T")
    P = _params(mu, T, 1)
    grid = SpaceTimeGrid(T, fixed.int("N_star"), fixed.int("J_star"))
    Ms = sw.sweep()
    for M in Ms:
        check_gate(mu, T / M, rn.strict)
        if grid.N_star % M:
            raise ConfigError("N_star must be a multiple of every M in the sweep")
    tol, cap = tail.num("tol"), tail.int("K_cap")
    gram = build_gram(grid)
    reps = rn.map(lambda M: exact_strong_error_td(grid, P, EvolutionConfig(T, M, rn.strict), tail_tol=tol,
                                                  K_cap=cap, gram=gram), Ms)
    dts = [T / M for M in Ms]
    errs = [x.error for x in reps]
    tab = Table("time-strong", ["mu", "T", "dx", "dt", "dtau", "error", "stderr", "tail_bound", "K", "flagged",
                                "slope_to_date"])
    tab.rows = _series_rows(dict(mu=mu, T=T), "dtau", reps, dts)
    checks = [_window("time-strong dtau", fit_rate(dts, errs).slope,
                      acc.num("slope_min"), acc.num("slope_max")),
              _tail_checks("time-strong", reps, tol),
              Check("time-strong monotone", all(b < a for a, b in zip(errs, errs[1:])),
                    "error decreases at every refinement"),
              Check("time-strong span", dts[0] / dts[-1] >= 1e4, f"dtau ratio {dts[0] / dts[-1]:.4g} (need >= 1e4)")]
    tables = [tab]
    n = mc.int("n_samples")
    if n > 0:
        g = SpaceTimeGrid(mc.num("T"), mc.int("N_star"), mc.int("J_star"))
        Pm = _params(mu, g.T, mc.int("K"))
        cfg = EvolutionConfig(g.T, mc.int("M"), rn.strict)
        exact = exact_strong_error_td(g, Pm, cfg, adaptive=False)
        rep = mc_strong_error("timediscrete", Pm, n, rn.base_seed(mc), g, cfg)
        checks.append(_mc_check("time-strong exact vs MC", exact.error2, rep, mc.num("n_se")))
        tables.append(_mc_table("time-strong-mc", [dict(quantity="td_error2", n_samples=n, mc_mean2=rep.extra["mean2"],
                                mc_stderr2=rep.extra["stderr2"], exact2=exact.error2, bias2=0.0,
                                z=abs(rep.extra["mean2"] - exact.error2) / rep.extra["stderr2"])]))
    return tables, checks


def _fd_sweep(cp, rn: Runner, name: str, reference: str, add_modeling: bool):
    model, fixed, space, sw, acc, tail, mc = (Section(cp, s) for s in
                                              ("model", "fixed", "space", "sweep", "acceptance", "tail", "mc"))
    mu, T = model.num("mu"), model.num("T")
    P = _params(mu, T, 1)
    grid = SpaceTimeGrid(T, fixed.int("N_star"), fixed.int("J_star"))
    cfg = EvolutionConfig(T, fixed.int("M"), rn.strict)
    cfg.gate(mu)
    if grid.N_star % cfg.M:
        raise ConfigError("N_star must be a multiple of M")
    rs, cells = space.nums("r"), sw.sweep()
    tol, cap = tail.num("tol"), tail.int("K_cap")
    gram = build_gram(grid)
    theta2, theta_tail = 0.0, 0.0
    checks, tables = [], []
    if add_modeling:
        th = exact_modeling_error(grid, P, tail_tol=tol, K_cap=cap, gram=gram)
        theta2, theta_tail = th.error2, th.tail_bound
        checks.append(_tail_checks("modeling part", [th], tol))
    tab = Table(name, ["mu", "T", "dx", "dt", "dtau", "r", "h", "error", "stderr", "tail_bound", "K", "flagged",
                       "slope_to_date"])
    for r in rs:
        reps = rn.map(lambda c, r=r: exact_strong_error_fd(grid, P, cfg, build_space(r, c), reference=reference,
                                                           tail_tol=tol, K_cap=cap, gram=gram), cells)
        if add_modeling:
            for rep in reps:
                e2 = rep.error2 + theta2
                # absolute tails propagate through sqrt(a^2 + b^2) with weights a/e and b/e
                rep.tail_bound = (rep.tail_bound * rep.error + theta_tail * math.sqrt(theta2)) / math.sqrt(e2)
                rep.error = math.sqrt(e2)
        hs = [1.0 / c for c in cells]
        tab.rows += _series_rows(dict(mu=mu, T=T, r=r), "h", reps, hs)
        checks.append(_window(f"{name} r={r}", fit_rate(hs, [x.error for x in reps]).slope,
                              acc.num(f"slope_min_r{r}"), acc.num(f"slope_max_r{r}")))
        checks.append(_tail_checks(f"{name} r={r}", reps, tol))
    tables.append(tab)
    n = mc.int("n_samples")
    if n > 0 and not add_modeling:
        g = SpaceTimeGrid(mc.num("T"), mc.int("N_star"), mc.int("J_star"))
        Pm = _params(mu, g.T, mc.int("K"))
        cfgm = EvolutionConfig(g.T, mc.int("M"), rn.strict)
        spec = build_space(mc.int("r"), mc.int("cells"))
        exact = exact_strong_error_fd(g, Pm, cfgm, spec, adaptive=False)
        rep = mc_strong_error("fullydiscrete", Pm, n, rn.base_seed(mc), g, cfgm, spec=spec)
        checks.append(_mc_check(f"{name} exact vs MC", exact.error2, rep, mc.num("n_se")))
        tables.append(_mc_table(f"{name}-mc", [dict(quantity="fd_error2", n_samples=n, mc_mean2=rep.extra["mean2"],
                                mc_stderr2=rep.extra["stderr2"], exact2=exact.error2, bias2=0.0,
                                z=abs(rep.extra["mean2"] - exact.error2) / rep.extra["stderr2"])]))
    return tables, checks


def run_space_strong(cp, rn: Runner):
    return _fd_sweep(cp, rn, "space-strong", "timediscrete", False)


def run_full_strong(cp, rn: Runner):
    return _fd_sweep(cp, rn, "full-strong", "exact", True)


def _cov_z(X: np.ndarray, Y: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Entrywise z-scores of the sample cross-covariance of zero-mean columns."""
    n = X.shape[0]
    prod = X[:, :, None] * Y[:, None, :]
    mean = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n)
    return np.abs(mean - target) / se


def run_noise_stats(cp, rn: Runner, export: str | None = None):
    sec = Section(cp, "noise")
    grid = SpaceTimeGrid(sec.num("T"), sec.int("N_star"), sec.int("J_star"))
    if grid.N_star < 2:
        raise ConfigError("noise-stats needs N_star >= 2 for the cross-slab check")
    n, nse = sec.int("n_samples"), sec.num("n_se")
    gram = build_gram(grid)
    G = gram.dense()
    R = sample_noise_batch(grid, gram, rn.base_seed(sec), n)      # (n, N, J+1)
    z_mean = np.abs(R.mean(axis=0)) / (R.std(axis=0, ddof=1) / math.sqrt(n))
    z_in = np.max([_cov_z(R[:, k], R[:, k], grid.dt * G) for k in range(grid.N_star)], axis=0)
    z_x = _cov_z(R[:, 0], R[:, 1], np.zeros_like(G))
    tab = Table("noise-stats", ["kind", "i", "j", "estimate", "target", "z"])
    for i in range(G.shape[0]):
        for j in range(G.shape[0]):
            tab.rows.append(dict(kind="within", i=i + 1, j=j + 1, estimate=float(np.mean(R[:, 0, i] * R[:, 0, j])),
                                 target=grid.dt * G[i, j], z=z_in[i, j]))
            tab.rows.append(dict(kind="cross", i=i + 1, j=j + 1, estimate=float(np.mean(R[:, 0, i] * R[:, 1, j])),
                                 target=0.0, z=z_x[i, j]))
    d = np.diag(G)
    entries_ok = (np.allclose(d[[0, -1]], grid.dx / 3, rtol=1e-14) and np.allclose(d[1:-1], 2 * grid.dx / 3, rtol=1e-14)
                  and np.allclose(gram.off_diagonal, grid.dx / 6, rtol=1e-14) and abs(G.sum() - 1.0) < 1e-14)
    checks = [Check("Gram entries", entries_ok, "diagonal dx/3, 2dx/3; off-diagonal dx/6; sum 1"),
              Check("mean", float(z_mean.max()) <= nse, f"max z {z_mean.max():.2f} (limit {nse:g})"),
              Check("within-slab covariance", float(z_in.max()) <= nse, f"max z {z_in.max():.2f} (limit {nse:g})"),
              Check("cross-slab covariance", float(z_x.max()) <= nse, f"max z {z_x.max():.2f} (limit {nse:g})")]
    s1, s2 = sample_noise(grid, gram, 7), sample_noise(grid, gram, 7)
    s3 = sample_noise(grid, gram, 8)
    checks.append(Check("seed reproducibility", np.array_equal(s1.R, s2.R) and not np.array_equal(s1.R, s3.R),
                        "identical seeds match bit for bit, distinct seeds differ"))
    if export:
        export_noise_csv(s1, export)
        back = import_noise_csv(export, grid, gram)
        checks.append(Check("noise CSV round trip", np.array_equal(back.R, s1.R), export))
    return [tab], checks


def run_identity_checks(cp, rn: Runner):
    ito, proj, reg, pars = (Section(cp, s) for s in ("ito", "projection", "regularity", "parseval"))
    seed = rn.base_seed(ito)
    rng = np.random.Generator(np.random.Philox(derive_seed(seed, 0)))
    grid = SpaceTimeGrid(ito.num("T"), ito.int("N_star"), ito.int("J_star"))
    gram = build_gram(grid)
    modes = ito.int("modes")
    worst = 0.0
    tab = Table("identity-checks", ["check", "index", "lhs", "rhs", "rel_gap"])
    for i in range(ito.int("pairs")):
        g = rng.standard_normal((grid.N_star, modes)) / np.arange(1, modes + 1)
        smp = sample_noise(grid, gram, derive_seed(seed, i + 1))
        lhs, rhs = ito_identity_check(grid, gram, loads_from_sine_field(grid, g), smp)
        gap = abs(lhs - rhs) / (abs(lhs) + 1.0)
        worst = max(worst, gap)
        tab.rows.append(dict(check="ito", index=i, lhs=lhs, rhs=rhs, rel_gap=gap))
    checks = [Check("pathwise identity", worst <= ito.num("tol"), f"max relative gap {worst:.3g}")]

    # projection: idempotent, non-expansive, reproduces constants
    pg = SpaceTimeGrid(proj.num("T"), proj.int("N_star"), proj.int("J_star"))
    pgram = build_gram(pg)
    ok_idem, ok_norm = True, True
    for i in range(proj.int("trials")):
        g = rng.standard_normal((pg.N_star, modes))
        coef = project_pi_hat(pg, pgram, loads_from_sine_field(pg, g))
        again = project_pi_hat(pg, pgram, pg.dt * pgram.matvec(coef.T).T)
        ok_idem &= bool(np.max(np.abs(again - coef)) <= 1e-12 * (1 + np.max(np.abs(coef))))
        ok_norm &= hat_field_norm(pg, pgram, coef) <= sine_field_norm(pg, g) + 1e-12
    from .noise import basis_spline_inners
    _, d0 = basis_spline_inners(pg, 0)
    ones = project_pi_hat(pg, pgram, pg.dt * np.tile(d0, (pg.N_star, 1)))
    ok_const = bool(np.max(np.abs(ones - 1.0)) < 1e-12)
    ok_orth = check_projection_orthogonality(pg, pgram)
    checks += [Check("projection idempotent", ok_idem, "repeat projection changes nothing"),
               Check("projection non-expansive", ok_norm, "||Pi g|| <= ||g||"),
               Check("projection reproduces constants", ok_const, "g = 1 maps to 1"),
               Check("projection self-adjoint", ok_orth, "(Pi f, g) = (f, Pi g)")]

    # regularity bound over the (ell, beta, p, mu) suite
    K, T = reg.int("K"), reg.num("T")
    suite = [(ell, beta, p, mu) for ell in (0, 1) for beta in (0, 2) for p in (0, 2) for mu in reg.nums("mu")]
    fails = 0
    for i in range(reg.int("n_w0")):
        ell, beta, p, mu = suite[i % len(suite)]
        P = validate_params(mu, T, K)
        w0 = SpectralField(rng.standard_normal(K))
        ta = float(rng.uniform(0, 0.5 * T))
        tb = float(rng.uniform(ta, T))
        lhs, rhs = check_regularity_bound(w0, ell, beta, p, ta, tb, P)
        fails += lhs > rhs
        tab.rows.append(dict(check=f"regularity l={ell} b={beta} p={p} mu={mu:g}", index=i, lhs=lhs, rhs=rhs,
                             rel_gap=lhs / rhs if rhs > 0 else 0.0))
    checks.append(Check("regularity bound", fails == 0, f"{fails} violations in {reg.int('n_w0')} cases"))

    # Parseval deficit of the truncated coupling noise
    qg = SpaceTimeGrid(1.0, 1, pars.int("J_star"))
    Gk = parseval_gram(qg, pars.int("factor") * qg.J_star)
    G = build_gram(qg).dense()
    mask = G != 0
    dev = float(np.max(np.abs(Gk[mask] - G[mask]) / np.abs(G[mask])))
    checks.append(Check("coupling Parseval deficit", dev <= pars.num("tol"), f"max relative deviation {dev:.4f}"))
    return [tab], checks


RUNNERS = {
    "elliptic-rates": run_elliptic,
    "det-time-rates": run_det_time,
    "det-space-rates": run_det_space,
    "modeling-error": run_modeling,
    "time-strong": run_time_strong,
    "space-strong": run_space_strong,
    "full-strong": run_full_strong,
    "noise-stats": run_noise_stats,
    "identity-checks": run_identity_checks,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chcook", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, desc in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=desc, description=desc)
        p.add_argument("--config", help="config file (defaults to the packaged one)")
        p.add_argument("--seed", type=int, help="base seed for random experiments (u64)")
        p.add_argument("--out", default="results", help="output directory for CSV files")
        p.add_argument("--threads", type=int, default=1, help="sweep points evaluated concurrently")
        p.add_argument("--strict-gate", action=argparse.BooleanOptionalAction, default=True,
                       help="enforce mu^2*dtau < 1/4 (default); --no-strict-gate only requires dtau*mu^2/4 < 1")
        if name == "noise-stats":
            p.add_argument("--export-noise", help="write one sample as CSV (n, i, R) and re-import it")
        if name == "det-space-rates":
            p.add_argument("--export-trajectory", help="write the finest FEM trajectory as CSV")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    name = args.command
    print(f"{name}: {SUBCOMMANDS[name]}")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("configuration error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    rn = Runner(args.threads, args.strict_gate, args.seed)
    try:
        cp = load_config(name, args.config)
        kwargs = {}
        if name == "noise-stats":
            kwargs["export"] = args.export_noise
        if name == "det-space-rates":
            kwargs["export"] = args.export_trajectory
        tables, checks = RUNNERS[name](cp, rn, **kwargs)
    except (ConfigError, InvalidParameterError, configparser.Error) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    for t in tables:
        print(f"  wrote {write_table(t, out)}")
    for c in checks:
        print(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    failed = [c for c in checks if not c.passed]
    if failed:
        print(f"{name}: {len(failed)} of {len(checks)} checks failed: " + "; ".join(c.name for c in failed))
        return 1
    print(f"{name}: all {len(checks)} checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
