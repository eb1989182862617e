"""Configuration-driven experiment runner with machine-readable artifacts.

    imlab run --config cfg.toml [--scenario NAME] [--out DIR] [--seed N]
    imlab report --in DIR

Exit codes: 0 all checks pass, 1 check failure, 2 configuration error,
3 numerical failure.  Artifacts are UTF-8 CSV files with a header row plus
one JSON record per report; every scenario writes a summary.json whose
``checks`` list carries (name, value, threshold, pass) rows.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import diffeo, dynamics, manifold, neumann, nonlin, transform
from .errors import ConfigurationError, ImlabError
from .space import dirichlet_space
from .spectral import (
    BasisKind,
    SpectralField,
    gap_difference,
    gap_ratio,
    get_basis,
    random_field,
)

SCENARIOS = (
    "roundtrip", "k-scaling", "gap-table", "build-manifold", "tracking",
    "invariance", "equivalence", "neumann-pipeline", "upsilon-audit",
)

PRESETS = ("zero", "burgers-cutoff", "coupled-2d-system", "general-f(u,ux)")


@dataclass
class ExperimentConfig:
    scenario: str = "roundtrip"
    preset: str = "burgers-cutoff"
    seed: int = 20260809
    out_dir: str = "artifacts"
    length: float = float(np.pi)
    m: int = 1
    n_total: int = 128
    dt: float = 1e-3
    K: int | None = None
    n: int | None = None
    params: dict = field(default_factory=dict)

    @classmethod
    def from_toml(cls, path: str | None, scenario: str | None = None,
                  out: str | None = None, seed: int | None = None) -> "ExperimentConfig":
        data = {}
        if path is not None:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        dom = data.get("domain", {})
        cfg = cls(
            scenario=data.get("scenario", cls.scenario),
            preset=data.get("preset", cls.preset),
            seed=int(data.get("seed", cls.seed)),
            out_dir=data.get("out_dir", cls.out_dir),
            length=float(dom.get("L", cls.length)),
            m=int(dom.get("m", cls.m)),
            n_total=int(dom.get("N_total", cls.n_total)),
            dt=float(dom.get("dt", cls.dt)),
            K=data.get("params", {}).get("K"),
            n=data.get("params", {}).get("n"),
            params=dict(data.get("params", {})),
        )
        if scenario is not None:
            cfg.scenario = scenario
        if out is not None:
            cfg.out_dir = out
        if seed is not None:
            cfg.seed = seed
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(
                f"unknown scenario {self.scenario!r}; pick one of {SCENARIOS}")
        if self.preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {self.preset!r}; pick one of {PRESETS}")
        if self.length <= 0 or self.n_total < 8 or self.dt <= 0:
            raise ConfigurationError("domain parameters out of range")
        if self.K is not None and not 1 <= int(self.K) <= self.n_total:
            raise ConfigurationError(f"K={self.K} outside [1, {self.n_total}]")
        if self.n is not None and not 1 <= int(self.n) <= self.n_total // 2:
            raise ConfigurationError(f"n={self.n} outside [1, {self.n_total // 2}]")
        if self.preset == "coupled-2d-system":
            self.m = 2
        elif self.preset in ("zero", "burgers-cutoff", "general-f(u,ux)"):
            self.m = 1

    def make_nonlinearity(self):
        p = self.params
        if self.preset == "zero":
            return nonlin.zero_nonlinearity(self.m)
        if self.preset == "burgers-cutoff":
            return nonlin.burgers_cutoff(
                radius=p.get("support_radius", 1.5),
                f_amp=p.get("f_amp", 0.08), g_amp=p.get("g_amp", 0.15))
        if self.preset == "coupled-2d-system":
            return nonlin.coupled_2d(
                radius=p.get("support_radius", 1.5),
                f_amp=p.get("f_amp", 0.06), g_amp=p.get("g_amp", 0.12))
        return nonlin.gradient_product(
            radius=p.get("support_radius", 1.5), amp=p.get("amp", 0.12))


class ArtifactWriter:
    """Deterministic CSV/JSON writers plus the per-scenario summary."""

    def __init__(self, out_dir: str | Path, scenario: str, seed: int):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.scenario = scenario
        self.seed = seed
        self.checks = []

    def csv(self, name: str, header: list[str], rows) -> None:
        with open(self.dir / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([f"{x:.17g}" if isinstance(x, float) else x
                            for x in row])

    def json(self, name: str, record: dict) -> None:
        record = dict(record)
        record["seed"] = self.seed
        with open(self.dir / name, "w") as fh:
            json.dump(record, fh, indent=1, sort_keys=True, default=float)
            fh.write("\n")

    def check(self, name: str, value: float, threshold: float,
              passed: bool | None = None, direction: str = "<=") -> bool:
        if passed is None:
            passed = value <= threshold if direction == "<=" else value >= threshold
        self.checks.append({
            "name": name, "value": float(value), "threshold": float(threshold),
            "direction": direction, "pass": bool(passed)})
        return bool(passed)

    def finish(self) -> bool:
        ok = all(c["pass"] for c in self.checks)
        self.json("summary.json", {
            "scenario": self.scenario, "ok": ok, "checks": self.checks})
        return ok


def desk_setup(cfg: ExperimentConfig, rng: np.random.Generator,
               need_cutoff: bool = True):
    """Shared assembly: nonlinearity, basis, calibrated cut-off radii."""
    nl = cfg.make_nonlinearity()
    basis = get_basis(BasisKind.DIRICHLET_SINE, cfg.length, cfg.n_total)
    cutoff = None
    if need_cutoff:
        r1 = cfg.params.get("r1")
        if r1 is None:
            K_cal = int(cfg.K or 16)
            _, trajs = dynamics.measure_absorbing_radius(
                nl, cfg.length, cfg.n_total, cfg.m, rng,
                n_traj=int(cfg.params.get("calibration_trajectories", 3)),
                t_end=float(cfg.params.get("calibration_t_end", 20.0)),
                dt=cfg.dt, record_every=50)
            cal = transform.calibrate_cutoff(nl, basis, cfg.m, K_cal, trajs)
            floor = float(cfg.params.get("cutoff_floor", 0.5))
            r1 = max(cal.r1, floor)
        cutoff = transform.CutoffSpec(r1=float(r1),
                                      r=float(cfg.params.get("r", 2.0 * r1)))
    return nl, basis, cutoff


def pick_parameters(cfg: ExperimentConfig, nl, basis, cutoff,
                    rng: np.random.Generator):
    """(K, n, PerronConfig, GapReport) from overrides or the doubling search."""
    space = dirichlet_space(cfg.length, cfg.n_total, cfg.m)
    n_pairs = int(cfg.params.get("lipschitz_pairs", 160))
    dt_p = float(cfg.params.get("dt_p", 1e-3))
    tol = float(cfg.params.get("perron_tol", 1e-9))
    if cfg.K is not None and cfg.n is not None:
        K, n = int(cfg.K), int(cfg.n)
        sys = transform.TransformedSystem(basis, cfg.m, K, nl, cutoff)
        rep1, rep2 = transform.measure_system_lipschitz(
            sys, rng, n_pairs=n_pairs)
        rep = manifold.spectral_gap_check(n, cfg.length, 2 * rep1.L, 2 * rep2.L, K=K)
        pc = manifold.make_perron_config(space, n, K, dt_p=dt_p, tol=tol)
        return K, n, pc, rep

    def measure(K):
        sys = transform.TransformedSystem(basis, cfg.m, K, nl, cutoff)
        rep1, rep2 = transform.measure_system_lipschitz(sys, rng, n_pairs=n_pairs)
        return rep1.L, rep2.L

    return manifold.choose_parameters(measure, space, cfg.length,
                                      dt_p=dt_p, tol=tol)


def base_grid(config: manifold.PerronConfig, radius: float,
              per_axis: int) -> np.ndarray:
    """Tensor grid of low-mode base points covering the ball of the cut-off."""
    mask = config.low_mask
    idx = np.argwhere(mask)
    scale = np.sqrt(config.space.h1_weights[mask])
    axes = [np.linspace(-radius, radius, per_axis) / s for s in scale]
    mesh = np.meshgrid(*axes, indexing="ij")
    B = mesh[0].size
    out = np.zeros((B,) + mask.shape)
    flat = [m.ravel() for m in mesh]
    for j, (c, k) in enumerate(idx):
        out[:, c, k] = flat[j]
    return out


# -- scenarios ----------------------------------------------------------------


def scenario_roundtrip(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    nl, basis, _ = desk_setup(cfg, rng, need_cutoff=False)
    K = int(cfg.K or 16)
    tol = 1e-12 if cfg.preset == "zero" else 1e-8
    rows = []
    worst = 0.0
    for i in range(int(cfg.params.get("n_fields", 20))):
        v = random_field(basis, cfg.m, rng, decay=5.0,
                         h1_norm=float(rng.uniform(0.1, 0.8)))
        u = diffeo.forward_map(v, K, nl)
        back = diffeo.inverse_map(u, K, nl)
        dev = float(basis.h1_norm(back.coeffs - v.coeffs))
        rows.append((i, dev))
        worst = max(worst, dev)
    w.csv("roundtrip.csv", ["field", "h1_deviation"], rows)
    w.check("roundtrip_h1_deviation", worst, tol)

    if cfg.m >= 2:
        from scipy.linalg import expm

        A = np.array([[0.3, -0.2], [0.4, 0.1]])
        cm = nonlin.constant_matrix_nonlinearity(A, radius=4.0)
        u = random_field(basis, 2, rng, decay=5.0, h1_norm=0.2)
        a = diffeo.solve_a_of_u(u, K, cm)
        oracle = np.stack([expm(A * x / 2.0) for x in basis.grid.x_full])
        err = float(np.max(np.abs(a.values - oracle)))
        w.check("constant_matrix_closed_form", err, 1e-8)


def scenario_k_scaling(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    nl, basis, cutoff = desk_setup(cfg, rng)
    Ks = cfg.params.get("K_sweep", (8, 16, 32, 64, 128))
    n_pairs = int(cfg.params.get("lipschitz_pairs", 200))
    n_sup = int(cfg.params.get("sup_samples", 24))
    rows = []
    sup_vals, l1_vals = [], []
    for K in Ks:
        sys = transform.TransformedSystem(basis, cfg.m, K, nl, cutoff)
        rep1, _ = transform.measure_system_lipschitz(sys, rng, n_pairs=n_pairs)
        sup = 0.0
        for _ in range(n_sup):
            v = random_field(basis, cfg.m, rng, decay=1.5,
                             h1_norm=float(rng.uniform(0.2, 0.9) * cutoff.r1))
            F1 = transform.advection_residual(v, K, nl)
            sup = max(sup, float(np.max(np.abs(F1))))
        rows.append((K, sup, rep1.L))
        sup_vals.append(sup)
        l1_vals.append(rep1.L)
    w.csv("k_scaling.csv", ["K", "sup_F1_inf", "L1"], rows)
    logk = np.log(np.asarray(Ks, dtype=float))
    slope_sup = float(np.polyfit(logk, np.log(sup_vals), 1)[0])
    slope_l1 = float(np.polyfit(logk, np.log(l1_vals), 1)[0])
    w.json("k_scaling_slopes.json", {"slope_sup_F1": slope_sup,
                                     "slope_L1": slope_l1})
    for name, s in (("slope_sup_F1", slope_sup), ("slope_L1", slope_l1)):
        w.check(f"{name}_upper", s, -0.35)
        w.check(f"{name}_lower", s, -0.65, passed=s >= -0.65, direction=">=")


def scenario_gap_table(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    nl, basis, cutoff = desk_setup(cfg, rng)
    Ks = cfg.params.get("K_sweep", (8, 16, 32))
    ns = cfg.params.get("n_sweep", (1, 2, 3, 5, 8, 13))
    rows = []
    for K in Ks:
        if cfg.preset == "zero":
            L1 = L2 = 0.0
        else:
            sys = transform.TransformedSystem(basis, cfg.m, int(K), nl, cutoff)
            rep1, rep2 = transform.measure_system_lipschitz(
                sys, rng, n_pairs=int(cfg.params.get("lipschitz_pairs", 160)))
            L1, L2 = 2 * rep1.L, 2 * rep2.L
        for n in ns:
            rep = manifold.spectral_gap_check(int(n), cfg.length, L1, L2, K=int(K))
            rows.append((int(K), int(n), L1, L2, rep.gap,
                         gap_ratio(int(n), cfg.length), rep.budget,
                         int(rep.passed)))
    w.csv("gap_table.csv",
          ["K", "n", "L1", "L2", "gap_diff", "gap_ratio", "budget", "pass"],
          rows)
    spot = gap_difference(5, cfg.length)
    w.check("gap_diff_n5", abs(spot - (np.pi / cfg.length) ** 2 * 11.0), 1e-12)
    w.check("gap_ratio_n5", abs(gap_ratio(5, cfg.length) - np.pi / cfg.length), 1e-14)


def _manifold_bundle(cfg: ExperimentConfig, w: ArtifactWriter,
                     rng: np.random.Generator):
    """Calibrate, pick (K, n), and build the tabulated graph."""
    nl, basis, cutoff = desk_setup(cfg, rng)
    K, n, pc, rep = pick_parameters(cfg, nl, basis, cutoff, rng)
    sys = transform.TransformedSystem(basis, cfg.m, K, nl, cutoff)
    per_axis = int(cfg.params.get("base_per_axis", 7 if pc.dim_low > 1 else 15))
    base = base_grid(pc, 1.05 * cutoff.r1, per_axis)
    graph = manifold.build_manifold(base, pc, sys.nonlinear, budget=rep.budget)
    w.json("gap_report.json", rep.to_json_dict())
    w.json("manifold.json", graph.to_json_dict())
    return nl, basis, cutoff, sys, pc, rep, graph


def scenario_build_manifold(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    nl, basis, cutoff, sys, pc, rep, graph = _manifold_bundle(cfg, w, rng)
    res = manifold.perron_solve_batch(graph.base_low[:4], pc, sys.nonlinear)
    factors = [r.max_factor for r in res]
    iters = [r.iterations for r in res]
    w.csv("perron_stats.csv", ["point", "max_factor", "iterations"],
          [(i, f, it) for i, (f, it) in enumerate(zip(factors, iters))])
    w.check("budget", rep.budget, 0.5)
    w.check("contraction_factor", max(factors), rep.budget + 0.05)
    w.check("iterations", max(iters),
            manifold.iteration_count_bound(rep.budget, pc.tol))
    w.check("graph_lipschitz", graph.lipschitz_on_base(), 1.0)


def scenario_tracking(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    nl, basis, cutoff, sys, pc, rep, graph = _manifold_bundle(cfg, w, rng)
    rows = []
    ok_all = True
    n_traj = int(cfg.params.get("n_tracking", 5))
    t_end = float(cfg.params.get("t_track", 4.0))
    for i in range(n_traj):
        v0 = random_field(basis, cfg.m, rng, decay=2.5,
                          h1_norm=0.6 * cutoff.r1).coeffs
        traj = sys.evolve(v0, t_end, cfg.dt, record_every=20)
        reprt = manifold.tracking_verify(traj.times, traj.coeffs, graph)
        rows.append((i, reprt.fitted_rate, reprt.theta, int(reprt.ok)))
        ok_all = ok_all and reprt.ok
    w.csv("tracking.csv", ["trajectory", "fitted_rate", "theta", "ok"], rows)
    worst = min(r[1] for r in rows)
    w.check("tracking_rate", worst, 0.5 * pc.theta, direction=">=",
            passed=ok_all and worst >= 0.5 * pc.theta)


def scenario_invariance(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    nl, basis, cutoff, sys, pc, rep, graph = _manifold_bundle(cfg, w, rng)
    max_scaled, residuals, notice = manifold.invariance_residual(
        graph, sys.nonlinear, cfg.dt)
    w.csv("invariance.csv", ["point", "residual"],
          list(enumerate(residuals)))
    w.json("invariance.json", {"max_scaled_residual": max_scaled,
                               "extrapolation_notice": notice})
    w.check("invariance_residual", max_scaled, 1e-3)


def scenario_equivalence(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    nl, basis, cutoff = desk_setup(cfg, rng)
    K = int(cfg.K or 16)
    u0 = random_field(basis, cfg.m, rng, decay=3.0,
                      h1_norm=0.5 * cutoff.r1)
    t_end = float(cfg.params.get("t_end", 5.0))
    dev = transform.equivalence_check(u0, K, nl, cutoff, t_end, cfg.dt)
    dev_half = transform.equivalence_check(u0, K, nl, cutoff, t_end, cfg.dt / 2)
    w.json("equivalence.json", {"deviation": dev, "deviation_half_dt": dev_half})
    w.check("deviation", dev, 1e-5)
    w.check("halving", dev_half, 0.65 * dev)


def scenario_neumann(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    nl = cfg.make_nonlinearity()
    n_modes = cfg.n_total
    ext = neumann.ExtendedRdaSystem(cfg.length, n_modes, nl)
    u0 = random_field(ext.neu, cfg.m, rng, decay=4.0, h1_norm=0.5)
    st = neumann.embed(u0)
    t_end = float(cfg.params.get("t_end", 10.0))
    traj = ext.evolve(st, t_end, cfg.dt, record_every=100)
    drift = ext.constraint_drift(traj)
    slope = float(np.polyfit(traj.times, drift, 1)[0])
    w.csv("constraint_drift.csv", ["t", "drift"],
          list(zip(traj.times, drift)))
    w.check("drift_slope", slope, float(cfg.params.get("drift_slope_cap", 0.1)) * cfg.dt / 1e-3)

    # transformed (u, v) system: gap check and tracking on the joint space
    K = int(cfg.K or 8)
    r1 = float(cfg.params.get("r1", 1.0))
    tr = neumann.TransformedExtendedSystem(
        cfg.length, n_modes, nl, K, cutoff=transform.CutoffSpec(r1=r1, r=2 * r1))
    pairs = transform.sample_pairs(ext.dir, 2 * cfg.m, rng,
                                   int(cfg.params.get("lipschitz_pairs", 120)),
                                   radius=2 * r1)
    # measure on the product space: reuse the generic measurement
    rep2 = transform.measure_lipschitz(
        lambda V: tr.nonlinear(V), pairs, tr.space.h1_norm, tr.space.h1_norm)
    d = tr.space.distinct_rates
    n_cut = int(cfg.n or 2)
    grep = manifold.gap_check_rates(d[n_cut - 1], d[n_cut], 0.0, 2 * rep2.L,
                                    n=n_cut, K=K)
    w.json("extended_gap.json", grep.to_json_dict())
    pc = manifold.make_perron_config(tr.space, n_cut, K,
                                     dt_p=float(cfg.params.get("dt_p", 1e-3)))
    per_axis = int(cfg.params.get("base_per_axis", 5))
    base = base_grid(pc, r1, per_axis)
    graph = manifold.build_manifold(base, pc, tr.nonlinear)
    w.json("manifold.json", graph.to_json_dict())
    C0 = base[len(base) // 3].copy()
    C0 += 0.2 * r1 * np.where(pc.low_mask, 0.0, random_field(
        ext.dir, 2 * cfg.m, rng, decay=2.5, h1_norm=1.0).coeffs)
    traj_v = tr.evolve(C0, float(cfg.params.get("t_track", 3.0)), cfg.dt,
                       record_every=20)
    reprt = manifold.tracking_verify(traj_v.times, traj_v.coeffs, graph)
    w.json("tracking.json", reprt.to_json_dict())
    w.check("tracking_rate", reprt.fitted_rate, 0.5 * pc.theta,
            direction=">=", passed=reprt.ok)

    # embedding audit: bi-Lipschitz ratios of (u -> (u, v)) on samples
    ratios = []
    for _ in range(12):
        ua = random_field(ext.neu, cfg.m, rng, decay=3.0, h1_norm=0.4)
        ub = random_field(ext.neu, cfg.m, rng, decay=3.0, h1_norm=0.4)
        Ca = tr.from_extended(np.concatenate(
            [ua.coeffs, neumann.embed(ua).w.coeffs], axis=0))
        Cb = tr.from_extended(np.concatenate(
            [ub.coeffs, neumann.embed(ub).w.coeffs], axis=0))
        num = float(tr.space.h1_norm(Ca - Cb))
        den = float(ext.neu.h1_norm(ua.coeffs - ub.coeffs))
        ratios.append(num / den)
    w.json("embedding_audit.json", {"min_ratio": min(ratios),
                                    "max_ratio": max(ratios)})
    w.check("embedding_lower", min(ratios), 1e-2, direction=">=",
            passed=min(ratios) >= 1e-2)
    w.check("embedding_upper", max(ratios), 1e2)


def scenario_upsilon(cfg: ExperimentConfig, w: ArtifactWriter) -> None:
    rng = np.random.default_rng(cfg.seed)
    gnl = nonlin.gradient_product(
        radius=cfg.params.get("support_radius", 1.5),
        amp=cfg.params.get("amp", 0.4))
    ecfg = neumann.EllipticConfig.from_bounds(*gnl.bounds())
    basis = get_basis(BasisKind.DIRICHLET_SINE, cfg.length, cfg.n_total)
    rows = []
    worst_res = 0.0
    violations = 0
    n_pairs = int(cfg.params.get("n_pairs", 100))
    for i in range(n_pairs):
        h1f = random_field(basis, 1, rng, decay=1.5,
                           h1_norm=float(rng.uniform(0.1, 2.0)))
        h2f = random_field(basis, 1, rng, decay=1.5,
                           h1_norm=float(rng.uniform(0.1, 2.0)))
        u1 = neumann.upsilon_solve(h1f, ecfg, gnl)
        u2 = neumann.upsilon_solve(h2f, ecfg, gnl)
        for hf, uf in ((h1f, u1), (h2f, u2)):
            states = np.moveaxis(basis.synthesize(uf.coeffs), -2, -1)
            dstates = np.moveaxis(basis.synthesize_derivative(uf.coeffs), -2, -1)
            fc = basis.analyze(np.moveaxis(gnl.func(states, dstates), -1, -2))
            res = (-(basis.eigenvalues + 1 + ecfg.n_shift) * uf.coeffs
                   - fc - hf.coeffs)
            worst_res = max(worst_res, float(basis.l2_norm(res)))
        lhs = float(basis.h1_norm(u1.coeffs - u2.coeffs))
        rhs = float(basis.l2_norm(h1f.coeffs - h2f.coeffs))
        violations += int(lhs > rhs)
        rows.append((i, lhs, rhs))
    w.csv("upsilon_stability.csv", ["pair", "h1_solution_gap", "l2_data_gap"],
          rows)
    w.check("residual", worst_res, 1e-10)
    w.check("stability_violations", violations, 0)


SCENARIO_FUNCS = {
    "roundtrip": scenario_roundtrip,
    "k-scaling": scenario_k_scaling,
    "gap-table": scenario_gap_table,
    "build-manifold": scenario_build_manifold,
    "tracking": scenario_tracking,
    "invariance": scenario_invariance,
    "equivalence": scenario_equivalence,
    "neumann-pipeline": scenario_neumann,
    "upsilon-audit": scenario_upsilon,
}


def run_scenario(cfg: ExperimentConfig) -> int:
    w = ArtifactWriter(cfg.out_dir, cfg.scenario, cfg.seed)
    try:
        SCENARIO_FUNCS[cfg.scenario](cfg, w)
    except ImlabError as exc:
        w.json("error.json", {"scenario": cfg.scenario,
                              "error": type(exc).__name__, "detail": str(exc)})
        w.finish()
        return 3
    ok = w.finish()
    return 0 if ok else 1


def emit_report(in_dir: str, stream=None) -> str:
    """Aggregate all summary.json files under a directory into one table."""
    stream = stream or sys.stdout
    root = Path(in_dir)
    summaries = sorted(root.rglob("summary.json"))
    lines = []
    if not summaries:
        lines.append("no artifacts found (0 rows)")
    for path in summaries:
        with open(path) as fh:
            rec = json.load(fh)
        status = "PASS" if rec.get("ok") else "FAIL"
        lines.append(f"[{status}] {rec.get('scenario', '?')}  ({path.parent.name})")
        for c in rec.get("checks", []):
            mark = "ok " if c["pass"] else "FAIL"
            lines.append(
                f"    {mark} {c['name']}: {c['value']:.6g} {c['direction']} "
                f"{c['threshold']:.6g}")
        missing = [n for n in ("error.json",) if (path.parent / n).exists()]
        for n in missing:
            lines.append(f"    note: {n} present")
    text = "\n".join(lines) + "\n"
    stream.write(text)
    return text


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="imlab",
                                     description="inertial-manifold laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one scenario")
    run_p.add_argument("--config", default=None)
    run_p.add_argument("--scenario", default=None, choices=SCENARIOS)
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--seed", type=int, default=None)
    rep_p = sub.add_parser("report", help="aggregate artifacts")
    rep_p.add_argument("--in", dest="in_dir", required=True)
    args = parser.parse_args(argv)

    if args.command == "report":
        emit_report(args.in_dir)
        return 0
    try:
        cfg = ExperimentConfig.from_toml(args.config, scenario=args.scenario,
                                         out=args.out, seed=args.seed)
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return run_scenario(cfg)
    except ImlabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
