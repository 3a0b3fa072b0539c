"""``lab``: batch front-end for the geodesic, Mourre, resolvent and optimality experiments.

Usage::

    lab geodesic|mourre|resolvent|optimality --config FILE [--out DIR] [--seed N]

Configs are INI files.  Every run writes CSV tables and JSON reports into the
output directory, plus ``manifest.ini`` (config hash, versions, wall time).
CSV and JSON contents depend only on the config and seed.

Exit status: 0 when the experiment's acceptance property holds, 1 when it
fails, 2 for configuration or usage errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import platform
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import geodesic_flow as gf
from . import metric as mt
from . import optimality as opt
from . import resolvent as rs
from .reports import NormReport, _plain
from .spectral_field import GridSpec, SpaceTimeField

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config access


@dataclass
class Config:
    parser: configparser.ConfigParser
    text: str
    path: str

    @classmethod
    def load(cls, path) -> "Config":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls(cp, text, str(path))

    def _line(self, section: str, key: str) -> str:
        cur = None
        for no, raw in enumerate(self.text.splitlines(), 1):
            s = raw.strip()
            m = re.match(r"\[(.+)\]$", s)
            if m:
                cur = m.group(1).strip()
            elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
                return f"{self.path}:{no}: {raw.strip()}"
        return f"{self.path}: [{section}] {key}"

    def fail(self, section, key, msg):
        raise ConfigError(f"{self._line(section, key)}\n  {msg}")

    def has(self, section, key) -> bool:
        return self.parser.has_option(section, key)

    def get(self, section, key, default=None, conv=str):
        if not self.has(section, key):
            if default is None:
                raise ConfigError(f"{self.path}: missing [{section}] {key}")
            return default
        raw = self.parser.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            self.fail(section, key, f"bad value {raw!r}: {exc}")

    def floats(self, section, key, default=None):
        return self.get(section, key, default, _float_list)

    def boolean(self, section, key, default: bool) -> bool:
        return self.get(section, key, "yes" if default else "no", _bool)

    def check_keys(self, section: str, allowed: set[str]):
        if not self.parser.has_section(section):
            return
        for key in self.parser.options(section):
            if key not in allowed:
                self.fail(section, key, f"unknown key {key!r}; expected one of {sorted(allowed)}")


def _float_list(raw: str) -> list[float]:
    parts = [p for p in re.split(r"[,\s]+", raw.strip()) if p]
    return [float(p) for p in parts]


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError("expected yes/no")


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    if isinstance(obj, NormReport):
        obj = obj.to_dict()
    elif isinstance(obj, list) and obj and isinstance(obj[0], NormReport):
        obj = [r.to_dict() for r in obj]
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def write_records(path: Path, reports: list[NormReport]) -> None:
    recs = [r for rep in reports for r in rep.records()]
    path.write_text(json.dumps(_plain(recs), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# metric


METRIC_KEYS = {"family", "shape", "n", "mu", "eps_pert", "r0"}


def build_metric(cfg: Config) -> mt.MetricSpec:
    cfg.check_keys("metric", METRIC_KEYS)
    family = cfg.get("metric", "family", "perturbed").strip().lower()
    n = cfg.get("metric", "n", 1, int)
    if family == "minkowski":
        if n < 1:
            cfg.fail("metric", "n", "spatial dimension must be at least 1")
        return mt.minkowski(n)
    if family != "perturbed":
        cfg.fail("metric", "family", "family must be 'minkowski' or 'perturbed'")
    shape = cfg.get("metric", "shape", "radial_bump").strip()
    if shape not in mt.CATALOG:
        cfg.fail("metric", "shape", f"unknown shape; catalog has {sorted(mt.CATALOG)}")
    mu = cfg.get("metric", "mu", 1.0, float)
    eps = cfg.get("metric", "eps_pert", 0.05, float)
    r0 = cfg.get("metric", "r0", 20.0, float)
    return mt.perturbed_family(n, mu, eps, shape, r0=r0)


# ---------------------------------------------------------------------------
# geodesic


GEODESIC_KEYS = {"shots", "t_max", "tol", "null_fraction", "box", "r0_ladder", "r0_threshold",
                 "horizon_check", "envelope_ratio", "envelope_change", "p_tol", "trajectories"}


def _shots(m: mt.MetricSpec, count: int, null_fraction: float, box: float,
           rng: np.random.Generator):
    d = m.dim
    x0 = rng.uniform(-box, box, (count, d))
    is_null = rng.random(count) < null_fraction
    xi0 = rng.standard_normal((count, d))
    branch = np.where(rng.random(count) < 0.5, 1, -1)
    for k in np.flatnonzero(is_null):
        xi0[k] = gf.null_lift(m, x0[k], xi0[k, 1:], int(branch[k])).xi
    xi0 /= np.linalg.norm(xi0, axis=1, keepdims=True)
    return x0, xi0


def cmd_geodesic(cfg: Config, out: Path, seed: int) -> int:
    cfg.check_keys("geodesic", GEODESIC_KEYS)
    m = build_metric(cfg)
    S = "geodesic"
    count = cfg.get(S, "shots", 200, int)
    t_max = cfg.get(S, "t_max", 1000.0, float)
    tol = cfg.get(S, "tol", 1e-10, float)
    null_fraction = cfg.get(S, "null_fraction", 0.5, float)
    box = cfg.get(S, "box", 3.0, float)
    ladder = cfg.floats(S, "r0_ladder", list(gf.R0_LADDER))
    thr = cfg.get(S, "r0_threshold", 0.1, float)
    horizon = cfg.boolean(S, "horizon_check", True)
    env_ratio = cfg.get(S, "envelope_ratio", 2.0, float)
    env_change = cfg.get(S, "envelope_change", 0.01, float)
    p_tol = cfg.get(S, "p_tol", 1e-8, float)
    dump = cfg.boolean(S, "trajectories", False)
    if count < 1:
        cfg.fail(S, "shots", "need at least one shot")
    if not 1e-12 <= tol <= 1e-3:
        cfg.fail(S, "tol", "tol must lie in [1e-12, 1e-3]")

    rng = np.random.default_rng(seed)
    R0, r0_rep = gf.select_r0(m, ladder, thr, seed=seed)
    x0, xi0 = _shots(m, count, null_fraction, box, rng)
    fwd = gf.integrate_ensemble(m, x0, xi0, t_max, tol=tol)
    fwd2 = gf.integrate_ensemble(m, x0, xi0, 2 * t_max, tol=tol) if horizon else None
    comp = gf.completeness_ensemble(m, x0, xi0, t_max, tol=tol, R0=R0)

    rows, n_cert, n_suspect, worst_ratio, worst_change, worst_drift = [], 0, 0, 0.0, 0.0, 0.0
    for k, (tr, rep) in enumerate(zip(fwd, comp)):
        cls = gf.classify_trapping(m, tr, R0)
        certified = isinstance(cls, gf.ForwardNonTrapped)
        c1, c2 = gf.momentum_envelope(tr)
        change = None
        if fwd2 is not None:
            d1, d2 = gf.momentum_envelope(fwd2[k])
            change = max(abs(d1 - c1) / c1, abs(d2 - c2) / c2)
        drift = max(tr.p_drift(), fwd2[k].p_drift() if fwd2 is not None else 0.0)
        worst_drift = max(worst_drift, drift)
        if certified:
            n_cert += 1
            worst_ratio = max(worst_ratio, c2 / c1)
            if change is not None:
                worst_change = max(worst_change, change)
        n_suspect += rep.suspect
        rows.append([k, *x0[k], *xi0[k], rep.causal_type, type(tr.terminal).__name__,
                     "certified" if certified else "undetermined",
                     cls.certificate.t_star if certified else None, c1, c2, change, drift,
                     rep.forward.status, rep.backward.status, rep.forward.t_exit,
                     rep.backward.t_exit])
    d = m.dim
    header = (["shot"] + [f"x{i}" for i in range(d)] + [f"xi{i}" for i in range(d)]
              + ["causal_type", "terminal", "trapping", "t_cert", "C1", "C2",
                 "envelope_change", "p_drift", "forward", "backward", "t_exit_forward",
                 "t_exit_backward"])
    write_csv(out / "shots.csv", header, rows)
    if dump:
        write_csv(out / "trajectories.csv", ["shot", "t"] + [f"x{i}" for i in range(d)]
                  + [f"xi{i}" for i in range(d)] + ["p"],
                  ([k, t, *x, *xi, p] for k, tr in enumerate(fwd)
                   for t, x, xi, p in zip(tr.times, tr.x, tr.xi, tr.p_values)))

    passed = (n_suspect == 0 and worst_drift <= p_tol and worst_ratio <= env_ratio
              and (not horizon or worst_change < env_change))
    summary = NormReport(
        "geodesic",
        {"shots": count, "R0": R0, "M_estimate": r0_rep["M_estimate"],
         "C_mu": gf.c_mu_constant(m.mu) if not m.is_flat else None,
         "certified": n_cert, "suspect": n_suspect, "max_p_drift": worst_drift,
         "max_envelope_ratio": worst_ratio,
         "max_envelope_change": worst_change if horizon else None},
        grid={"t_max": t_max, "tol": tol, "seed": seed, "n": m.n, "mu": m.mu,
              "eps_pert": m.eps_pert, "shape": m.shape_id},
        passed=bool(passed))
    write_json(out / "geodesic.json", summary)
    _say(summary)
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# mourre


MOURRE_KEYS = {"r0_ladder", "n_samples", "threshold", "stability"}


def cmd_mourre(cfg: Config, out: Path, seed: int) -> int:
    cfg.check_keys("mourre", MOURRE_KEYS)
    m = build_metric(cfg)
    ladder = cfg.floats("mourre", "r0_ladder", list(gf.R0_LADDER))
    n_samples = cfg.get("mourre", "n_samples", 20000, int)
    thr = cfg.get("mourre", "threshold", 0.1, float)
    stab = cfg.get("mourre", "stability", 0.05, float)
    if not ladder:
        cfg.fail("mourre", "r0_ladder", "empty R0 ladder")
    reps = [gf.escape_function_check(m, R0, n_samples, seed) for R0 in ladder]
    rows = [[r.grid["R0"], r["M_estimate"], r["mean"]] for r in reps]
    write_csv(out / "mourre.csv", ["R0", "M_estimate", "mean"], rows)
    ok = [r for r in reps if r["M_estimate"] > thr]
    best = ok[0] if ok else None
    values = {"threshold": thr, "R0": None, "M_estimate": None, "M_estimate_4x": None,
              "stability": None}
    passed = False
    if best is not None:
        R0 = best.grid["R0"]
        fine = gf.escape_function_check(m, R0, 4 * n_samples, seed + 1)
        change = abs(fine["M_estimate"] - best["M_estimate"]) / abs(best["M_estimate"])
        values.update(R0=R0, M_estimate=best["M_estimate"],
                      M_estimate_4x=fine["M_estimate"], stability=change)
        passed = change <= stab
    summary = NormReport("mourre", values, grid={"n_samples": n_samples, "seed": seed,
                                                 "ladder": ladder, "eps_pert": m.eps_pert,
                                                 "mu": m.mu, "shape": m.shape_id},
                         passed=bool(passed))
    write_json(out / "mourre.json", [summary] + reps)
    _say(summary)
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# resolvent


RESOLVENT_KEYS = {"n", "l", "n_y", "t0", "t1", "n_t", "order", "field", "ladder",
                  "residual_tol", "ensemble", "norm_bound", "eps", "packets", "packet_family",
                  "packet_japs", "packet_dt", "smoothing_bound"}


def _grid(cfg: Config, S: str, n_t: int | None = None) -> GridSpec:
    try:
        return GridSpec(cfg.get(S, "n", 1, int), cfg.get(S, "L", 16.0, float),
                        cfg.get(S, "N_y", 256, int), cfg.get(S, "T0", -8.0, float),
                        cfg.get(S, "T1", 8.0, float), n_t or cfg.get(S, "N_t", 2048, int))
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [{S}] invalid grid: {exc}") from None


def _test_field(grid: GridSpec, kind: str) -> SpaceTimeField:
    if kind == "zero":
        return SpaceTimeField.zeros(grid)
    return SpaceTimeField.from_function(
        grid, lambda t, *ys: np.exp(-t ** 2 - sum(y ** 2 for y in ys)))


def cmd_resolvent(cfg: Config, out: Path, seed: int) -> int:
    S = "resolvent"
    cfg.check_keys(S, RESOLVENT_KEYS)
    kind = cfg.get(S, "field", "gaussian").strip().lower()
    if kind not in ("gaussian", "zero"):
        cfg.fail(S, "field", "field must be 'gaussian' or 'zero'")
    order = cfg.get(S, "order", 4, int)
    if order not in rs.ORDERS:
        cfg.fail(S, "order", f"order must be one of {rs.ORDERS}")
    ladder = [int(v) for v in cfg.floats(S, "ladder", [512, 1024, 2048])]
    tol = cfg.get(S, "residual_tol", 1e-6, float)
    ensemble = cfg.get(S, "ensemble", 64, int)
    bound = cfg.get(S, "norm_bound", 2.0, float)
    eps = cfg.get(S, "eps", 0.1, float)
    do_packets = cfg.boolean(S, "packets", True)
    family = cfg.get(S, "packet_family", "scaled").strip().lower()
    japs = cfg.floats(S, "packet_japs", [1.0, 8.0, 64.0])
    pdt = cfg.get(S, "packet_dt", 0.005, float)
    sbound = cfg.get(S, "smoothing_bound", 4.0, float)
    if family not in ("scaled", "gaussian"):
        cfg.fail(S, "packet_family", "packet_family must be 'scaled' or 'gaussian'")
    if not ladder:
        cfg.fail(S, "ladder", "empty N_t ladder")

    reports = []
    rows = []
    for n_t in ladder:
        g = _grid(cfg, S, n_t)
        plan = rs.ResolventPlan.build(g, order=order)
        f = _test_field(g, kind)
        sol = rs.solve(plan, f)
        res = rs.residual_check(plan, f, sol)
        unorm = float(np.linalg.norm(sol.uhat().values))
        rows.append([n_t, g.dt, res, unorm])
    orders = [float(np.log2(rows[i][2] / rows[i + 1][2])) if rows[i + 1][2] > 0 else None
              for i in range(len(rows) - 1)]
    write_csv(out / "residual.csv", ["N_t", "dt", "residual", "u_norm"], rows)
    res_final = rows[-1][2]
    res_ok = res_final <= tol
    reports.append(NormReport("residual", {"final": res_final, "observed_orders": orders,
                                           "ladder": ladder},
                              grid=_grid(cfg, S, ladder[-1]).as_dict(),
                              oracle={"final": tol}, passed=bool(res_ok)))

    g = _grid(cfg, S)
    plan = rs.ResolventPlan.build(g, order=order)
    if kind == "zero":
        f = _test_field(g, kind)
        u = rs.apply_resolvent(plan, f)
        op = NormReport("operator_norm", {"empirical_max": 0.0,
                                          "u_max": float(np.abs(u.values).max()),
                                          "analytic_sup": plan.operator_bound},
                        grid=g.as_dict(), passed=bool(np.abs(u.values).max() == 0.0))
    else:
        op = rs.operator_norm_probe(plan, ensemble, seed)
    op_ok = op["empirical_max"] <= bound and op.passed
    reports.append(op)

    sm_ok = True
    if do_packets:
        fac = rs.scaled_resonant_profile if family == "scaled" else rs.gaussian_resonant_profile
        scan = rs.frequency_scan(fac, japs, eps=eps, dt=pdt, order=order)
        write_csv(out / "smoothing.csv", ["frequency", "locsmoy", "locsm2_dt", "locsm2_D"],
                  [[r["jap"], r["locsmoy"], r["locsm2_dt"], r["locsm2_D"]] for r in scan])
        vals = {}
        for key in ("locsmoy", "locsm2_dt", "locsm2_D"):
            col = np.array([r[key] for r in scan])
            vals[f"{key}_max"] = float(col.max())
            vals[f"{key}_variation"] = float(1.0 - col.min() / col.max())
        sm_ok = all(vals[f"{k}_max"] <= sbound for k in ("locsmoy", "locsm2_dt", "locsm2_D"))
        reports.append(NormReport("smoothing", vals, grid={"family": family, "japs": japs,
                                                            "eps": eps, "dt": pdt},
                                  oracle={"bound": sbound}, passed=bool(sm_ok)))

    write_records(out / "resolvent.json", reports)
    passed = res_ok and op_ok and sm_ok
    for r in reports:
        _say(r)
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# optimality


OPT_KEYS = {"n", "eps", "t_obs", "eta_min", "eta_max", "n_eta", "t_list", "ceiling",
            "lambdas", "lambda_max", "n_dyads", "tail_from", "crossvalidate", "lam0",
            "cv_n_y", "cv_l", "cv_n_t"}


def cmd_optimality(cfg: Config, out: Path, seed: int) -> int:
    S = "optimality"
    cfg.check_keys(S, OPT_KEYS)
    try:
        params = opt.CounterexampleParams(cfg.get(S, "n", 1, int), cfg.get(S, "eps", 0.25, float),
                                          cfg.get(S, "t_obs", 0.1, float))
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [{S}] {exc}") from None
    etas = np.logspace(np.log10(cfg.get(S, "eta_min", 1.0, float)),
                       np.log10(cfg.get(S, "eta_max", 1e6, float)),
                       cfg.get(S, "n_eta", 1000, int))
    t_list = cfg.floats(S, "t_list", [0.01, 0.1, 0.24])
    ceiling = cfg.get(S, "ceiling", 50.0, float)
    if cfg.has(S, "lambdas"):
        lams = cfg.floats(S, "lambdas")
        if not lams:
            cfg.fail(S, "lambdas", "empty Lambda list")
    else:
        lams = opt.default_lambdas(cfg.get(S, "lambda_max", 1e6, float),
                                   cfg.get(S, "n_dyads", 16, int))
    tail_from = cfg.get(S, "tail_from", 1e4, float)

    try:
        bounds = opt.verify_bt_bounds(params, etas, t_list, ceiling)
        div = opt.divergence_scan(params, lams, tail_from=tail_from)
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [{S}] {exc}") from None
    write_json(out / "bt_bounds.json", {k: bounds.values[k] for k in
                                        ("c", "C", "n_samples", "t_list")}
               | {"passed": bounds.passed, "ratio": bounds["ratio"],
                  "refinement_drift": bounds["refinement_drift"],
                  "deriv_const": bounds["deriv_const"]})
    write_csv(out / "divergence.csv", ["Lambda", "s", "D", "fit_residual"],
              [[r["Lambda"], r["s"], r["D"], r["fit_residual"]] for r in div["table"]])
    summary = {k: v for k, v in div.values.items() if k != "table"}
    write_json(out / "divergence.json", {"passed": div.passed, **summary,
                                         "grid": div.grid})
    reports = [bounds, div]
    if cfg.boolean(S, "crossvalidate", False):
        lam0 = cfg.get(S, "lam0", 48.0, float)
        grid = opt.crossvalidation_grid(lam0, cfg.get(S, "cv_N_y", 1024, int),
                                        cfg.get(S, "cv_L", 32.0, float),
                                        cfg.get(S, "cv_N_t", 16384, int), params.t_obs)
        try:
            cv = opt.crossvalidate_with_resolvent(params, lam0, grid)
        except ValueError as exc:
            raise ConfigError(f"{cfg.path}: [{S}] {exc}") from None
        write_json(out / "crossvalidation.json", cv)
        reports.append(cv)
    for r in reports:
        _say(r)
    passed = all(r.passed for r in reports)
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------


COMMANDS = {"geodesic": cmd_geodesic, "mourre": cmd_mourre,
            "resolvent": cmd_resolvent, "optimality": cmd_optimality}
EXPERIMENT_KEYS = {"id", "seed", "out"}


def _say(rep: NormReport) -> None:
    flag = {True: "PASS", False: "FAIL", None: "----"}[rep.passed]
    brief = ", ".join(f"{k}={_short(v)}" for k, v in rep.values.items()
                      if not isinstance(v, (list, dict)))
    print(f"[{flag}] {rep.name}: {brief}")


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _manifest(out: Path, cmd: str, cfg: Config, seed: int, wall: float, code: int) -> None:
    mf = configparser.ConfigParser(interpolation=None)
    mf["run"] = {"command": cmd, "config": cfg.path,
                 "config_sha256": hashlib.sha256(cfg.text.encode()).hexdigest(),
                 "seed": str(seed), "exit_code": str(code), "wall_time_s": f"{wall:.3f}"}
    mf["versions"] = {"minklab": __version__, "python": platform.python_version(),
                      "numpy": np.__version__, "scipy": scipy.__version__}
    with open(out / "manifest.ini", "w") as fh:
        mf.write(fh)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI experiment file")
    ap.add_argument("--out", help="output directory (overrides [experiment] out)")
    ap.add_argument("--seed", type=int, help="RNG seed (overrides [experiment] seed)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = Config.load(args.config)
        cfg.check_keys("experiment", EXPERIMENT_KEYS)
        seed = args.seed if args.seed is not None else cfg.get("experiment", "seed", 0, int)
        out = Path(args.out or cfg.get("experiment", "out", f"runs/{args.command}"))
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, out, seed)
    except ConfigError as exc:
        print(f"lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except mt.SignatureError as exc:
        print(f"lab: metric rejected: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _manifest(out, args.command, cfg, seed, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
