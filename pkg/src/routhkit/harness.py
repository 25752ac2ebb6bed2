"""Scenario runner: configuration, verification suites and file output.

Artifacts are deterministic for a fixed configuration and seed: CSV floats
use 17 significant digits, JSON keys are sorted, probe sets come from a
seeded generator recorded in every report.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .integrators import Trajectory, integrate_implicit_midpoint, integrate_rk4
from .lagrangian import MagneticLagrangianSystem, el_residual, energy
from .numcore import DerivativeProvider, as_point
from .reduction import (
    quotient_projection_defect,
    reconstruct,
    reduced_initial_condition,
    routh_reduce,
    verify_fiber_form_invariance,
)
from .symmetry import momentum_map, translation_action
from .threebody import (
    PotentialCoeffs,
    ThreeBodyParams,
    ThreeBodySetup,
    build_three_body,
    build_three_body_cotangent,
    three_body_state,
    velocity_from_momentum,
)
from .transform import (
    CompatibleTransformation,
    MomentumTarget,
    constant_momentum_target,
    induced_system,
    momentum_target_from_level,
    verify_pullback_identities,
    verify_tangency,
)
from .hamside import momentum_shift_check, verify_ham_pullback
from .presym import classify_constraint_points
from .lagrangian import el_vector_field

CONNECTION_NAMES = ("mechanical", "A0")
SUITES = ("pullback", "tangency", "reducibility", "hamiltonian")


@dataclass(frozen=True)
class VerificationReport:
    """One named check with its worst violation against a tolerance."""

    check: str
    probes: int
    max_violation: float
    tolerance: float
    seed: int
    fd_step: float
    h: float | None = None

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "probes": self.probes,
            "max_violation": float(self.max_violation),
            "tolerance": float(self.tolerance),
            "pass": bool(self.passed),
            "seed": self.seed,
            "fd_step": float(self.fd_step),
            "h": None if self.h is None else float(self.h),
        }


@dataclass
class ScenarioResult:
    reports: list[VerificationReport]
    artifacts: list[Path]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


# -- file formats ------------------------------------------------------------


def trajectory_labels(n: int, k: int) -> list[str]:
    return (["t"] + [f"q{i}" for i in range(n)] + [f"v{i}" for i in range(n)]
            + [f"p{i}" for i in range(k)])


def write_trajectory_csv(path, traj: Trajectory, n: int, k: int) -> Path:
    path = Path(path)
    lines = [",".join(trajectory_labels(n, k))]
    for t, row in zip(traj.times, traj.states):
        lines.append(",".join(f"{x:.17g}" for x in np.concatenate([[t], row])))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_report_json(path, reports: Sequence[VerificationReport]) -> Path:
    path = Path(path)
    payload = [r.to_dict() for r in reports]
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


# -- configuration -----------------------------------------------------------

_DEFAULT_TOLS = {
    "energy": 1e-7,
    "momentum": 1e-8,
    "residual": 1e-6,
    "compare": 1e-6,
}


def _require(cfg: dict, key: str, kind, what: str):
    if key not in cfg:
        raise ConfigError(f"missing field {key!r} in {what}")
    val = cfg[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"field {key!r} must be a number")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"field {key!r} must be an integer")
        return val
    if not isinstance(val, kind):
        raise ConfigError(f"field {key!r} has the wrong type")
    return val


def validate_config(cfg: dict) -> dict:
    """Normalize and bound-check a scenario configuration."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object")
    out = dict(cfg)
    scenario = out.get("scenario", "simulate")
    if scenario not in ("simulate", "reduce", "verify", "compare"):
        raise ConfigError(f"unknown scenario {scenario!r}")
    out["scenario"] = scenario
    out["seed"] = int(out.get("seed", 0))

    if scenario == "verify":
        suite = _require(out, "suite", str, "verify config")
        if suite not in SUITES:
            raise ConfigError(f"unknown suite {suite!r}; choose from {SUITES}")
        out["probes"] = int(out.get("probes", 100))
        if out["probes"] < 1:
            raise ConfigError("probes must be >= 1")
        return out

    system = out.get("system", "three_body")
    if not (system == "three_body" or isinstance(system, dict)):
        raise ConfigError("system must be 'three_body' or an inline object")
    out["system"] = system

    integ = _require(out, "integrator", dict, "config")
    method = integ.get("method", "rk4")
    if method not in ("rk4", "implicit_midpoint"):
        raise ConfigError(f"unknown integrator method {method!r}")
    h = _require(integ, "h", float, "integrator")
    horizon = _require(integ, "T", float, "integrator")
    if h <= 0:
        raise ConfigError("integrator step h must be > 0")
    if horizon <= 0:
        raise ConfigError("integrator horizon T must be > 0")
    out["integrator"] = {"method": method, "h": h, "T": horizon}

    tols = dict(_DEFAULT_TOLS)
    for key, val in (out.get("tolerances") or {}).items():
        if key not in tols:
            raise ConfigError(f"unknown tolerance {key!r}")
        tols[key] = float(val)
    out["tolerances"] = tols

    if scenario in ("reduce", "compare"):
        if system != "three_body":
            raise ConfigError(f"{scenario} requires the built-in three_body system")
        out["mu"] = _require(out, "mu", float, "config")
        conn = out.get("connection", "mechanical")
        if conn not in CONNECTION_NAMES:
            raise ConfigError(f"connection must be one of {CONNECTION_NAMES}")
        out["connection"] = conn
    if "ic" not in out:
        raise ConfigError("missing field 'ic'")
    return out


def _three_body_params(cfg: dict) -> ThreeBodyParams:
    params = cfg.get("params") or {}
    pot = params.get("potential") or {}
    try:
        return ThreeBodyParams(
            i1=float(params.get("I1", 1.0)),
            i2=float(params.get("I2", 2.0)),
            i3=float(params.get("I3", 3.0)),
            potential=PotentialCoeffs(
                c1=float(pot.get("c1", 1.0)),
                c2=float(pot.get("c2", 1.0)),
                c3=float(pot.get("c3", 0.0)),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad three-body parameters: {exc}") from exc


def _three_body_ic(cfg: dict, params: ThreeBodyParams) -> np.ndarray:
    ic = cfg["ic"]
    if not isinstance(ic, dict):
        raise ConfigError("ic must be an object")
    try:
        phi = float(ic.get("phi", 0.0))
        psi = float(ic.get("psi", 0.0))
        theta = float(ic.get("theta", 0.0))
        dphi = float(ic.get("dphi", 0.0))
        dpsi = float(ic.get("dpsi", 0.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad initial condition: {exc}") from exc
    dtheta = ic.get("dtheta", 0.0)
    if dtheta == "momentum" or dtheta is None:
        if "mu" not in cfg:
            raise ConfigError("dtheta from the momentum level requires 'mu'")
        dtheta = velocity_from_momentum(params, float(cfg["mu"]), dphi, dpsi)
    return three_body_state(theta, phi, psi, float(dtheta), dphi, dpsi)


def _build_inline_system(spec: dict) -> tuple[MagneticLagrangianSystem, np.ndarray | None]:
    """Small expression-based system builder for user-supplied Lagrangians."""
    import sympy

    try:
        n = int(spec["n"])
        k = int(spec.get("k", 0))
        expr_text = spec["lagrangian"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad inline system: {exc}") from exc
    from .lagrangian import BundleDims

    dims = BundleDims(n=n, k=k)
    names = ([f"q{i}" for i in range(n)] + [f"v{i}" for i in range(n)]
             + [f"p{i}" for i in range(k)])
    symbols = sympy.symbols(names)
    try:
        expr = sympy.sympify(expr_text)
    except (sympy.SympifyError, TypeError) as exc:
        raise ConfigError(f"cannot parse lagrangian expression: {exc}") from exc
    unknown = expr.free_symbols - set(symbols)
    if unknown:
        raise ConfigError(f"unknown symbols in lagrangian: {sorted(map(str, unknown))}")

    grad_exprs = [sympy.diff(expr, s) for s in symbols]
    hess_exprs = [[sympy.diff(g, s) for s in symbols] for g in grad_exprs]
    f_val = sympy.lambdify(symbols, expr, "numpy")
    f_grad = sympy.lambdify(symbols, grad_exprs, "numpy")
    f_hess = sympy.lambdify(symbols, hess_exprs, "numpy")

    provider = DerivativeProvider(
        value=lambda x: float(f_val(*x)),
        exact_jacobian=lambda x: np.asarray(f_grad(*x), dtype=float),
        exact_hessian=lambda x: np.asarray(f_hess(*x), dtype=float),
    )
    magnetic = None
    if spec.get("magnetic") is not None:
        config_syms = ([f"q{i}" for i in range(n)] + [f"p{i}" for i in range(k)])
        csyms = sympy.symbols(config_syms)
        rows = spec["magnetic"]
        mat = sympy.Matrix([[sympy.sympify(e) for e in row] for row in rows])
        if mat.shape != (n + k, n + k):
            raise ConfigError("magnetic matrix must be (n+k) x (n+k)")
        f_mag = sympy.lambdify(csyms, mat, "numpy")

        def magnetic(cpt):
            return np.asarray(f_mag(*cpt), dtype=float)

    periodic = frozenset(int(i) for i in spec.get("periodic", []))
    system = MagneticLagrangianSystem(dims=dims, lagrangian=provider,
                                      magnetic_form=magnetic,
                                      periodic_coords=periodic, name="inline")
    state = spec.get("ic_state")
    return system, (None if state is None else as_point(state))


def _integrate(cfg: dict, system: MagneticLagrangianSystem, ic) -> Trajectory:
    integ = cfg["integrator"]
    fn = integrate_rk4 if integ["method"] == "rk4" else integrate_implicit_midpoint
    return fn(system, ic, integ["h"], integ["T"])


def angle_aware_gap(a: np.ndarray, b: np.ndarray, periodic: Sequence[int]) -> np.ndarray:
    """Componentwise gap with periodic slots wrapped to the nearest branch."""
    gap = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    for i in periodic:
        gap[..., i] = np.mod(gap[..., i] + np.pi, 2 * np.pi) - np.pi
    return gap


# -- probe helpers ------------------------------------------------------------


def _random_states(rng, count: int, dim: int, scale: float = 1.0) -> np.ndarray:
    return scale * rng.uniform(-1.0, 1.0, size=(count, dim))


def _setup_for(cfg_or_seed, exact: bool = True) -> ThreeBodySetup:
    params = ThreeBodyParams(1.0, 2.0, 3.0)
    return build_three_body(params, exact_derivatives=exact)


def _transformation(setup: ThreeBodySetup, mu: float, connection: str):
    target = momentum_target_from_level(setup.action, [mu])
    conn = setup.connection(connection)
    from .lagrangian import BundleDims
    from .transform import TransformationPair

    pair = TransformationPair(dims1=BundleDims(2, 1), dims2=setup.system.dims,
                              k_f=1, k_F=0)
    return CompatibleTransformation(pair=pair, source=setup.system,
                                    target=target, connection=conn)


# -- verification suites -------------------------------------------------------


def suite_pullback(seed: int, probes: int, mu: float = 0.5) -> list[VerificationReport]:
    rng = np.random.default_rng(seed)
    reports = []
    down_states = _random_states(rng, probes, 5)
    for exact, tol, tag in ((True, 1e-8, ""), (False, 1e-5, "_fd")):
        setup = _setup_for(seed, exact=exact)
        fd = setup.system.lagrangian.fd_step
        for name in CONNECTION_NAMES:
            ct = _transformation(setup, mu, name)
            induced = induced_system(ct)
            rep = verify_pullback_identities(ct, induced, down_states,
                                             fd_jacobian=not exact)
            reports.append(VerificationReport(
                check=f"pullback_form_{name}{tag}", probes=probes,
                max_violation=rep.max_form_violation, tolerance=tol,
                seed=seed, fd_step=fd))
            reports.append(VerificationReport(
                check=f"pullback_energy_{name}{tag}", probes=probes,
                max_violation=rep.max_energy_violation, tolerance=tol,
                seed=seed, fd_step=fd))
    return reports


def suite_tangency(seed: int, probes: int, mu: float = 0.5) -> list[VerificationReport]:
    rng = np.random.default_rng(seed)
    setup = _setup_for(seed)
    fd = setup.system.lagrangian.fd_step
    down_states = _random_states(rng, probes, 5)

    def field(s2):
        return el_vector_field(setup.system, s2)[0]

    ct = _transformation(setup, mu, "mechanical")
    rep = verify_tangency(ct, field, down_states)
    reports = [VerificationReport(check="tangency_momentum_target", probes=probes,
                                  max_violation=rep.max_defect, tolerance=1e-8,
                                  seed=seed, fd_step=fd)]

    # Negative control: a target varying along the group coordinate must be
    # flagged.  Scored as a margin so that pass means "defect is large".
    perturbed = MomentumTarget(
        k_f=1,
        values=lambda p: np.array([mu + 0.3 * np.sin(p[2])]),
        jacobian=lambda p: np.array([[0.0, 0.0, 0.3 * np.cos(p[2])]]),
        hessian=lambda p: np.array([[[0.0, 0.0, 0.0],
                                     [0.0, 0.0, 0.0],
                                     [0.0, 0.0, -0.3 * np.sin(p[2])]]]),
    )
    ct_bad = CompatibleTransformation(pair=ct.pair, source=setup.system,
                                      target=perturbed, connection=ct.connection)
    rep_bad = verify_tangency(ct_bad, field, down_states)
    margin = max(0.0, 1e-3 - rep_bad.max_defect)
    reports.append(VerificationReport(check="tangency_perturbed_target_detected",
                                      probes=probes, max_violation=margin,
                                      tolerance=0.0, seed=seed, fd_step=fd))
    return reports


def suite_reducibility(seed: int, probes: int, mu: float = 0.5) -> list[VerificationReport]:
    rng = np.random.default_rng(seed)
    setup = _setup_for(seed)
    fd = setup.system.lagrangian.fd_step
    reports = []
    config_probes = _random_states(rng, probes, 3, scale=np.pi)
    inter_states = _random_states(rng, probes, 5)
    total = setup.params.total

    for name in CONNECTION_NAMES:
        rr = routh_reduce(setup.system, setup.action, [mu], setup.connection(name),
                          seed=seed)
        worst = 0.0
        for p in config_probes:
            b = rr.intermediate.magnetic_matrix(p)
            expected = np.zeros((3, 3))
            if name == "A0":
                expected[0, 1] = mu * np.sin(p[1])
                expected[1, 0] = -expected[0, 1]
            worst = max(worst, float(np.max(np.abs(b - expected))))
        tol = 1e-8 if name == "A0" else 1e-10
        reports.append(VerificationReport(check=f"magnetic_term_{name}", probes=probes,
                                          max_violation=worst, tolerance=tol,
                                          seed=seed, fd_step=fd))

        contraction, invariance = verify_fiber_form_invariance(
            rr.intermediate.magnetic_form or (lambda p: np.zeros((3, 3))),
            rr.fiberwise.action, config_probes)
        reports.append(VerificationReport(check=f"magnetic_contraction_{name}",
                                          probes=probes, max_violation=contraction,
                                          tolerance=1e-10, seed=seed, fd_step=fd))
        reports.append(VerificationReport(check=f"magnetic_invariance_{name}",
                                          probes=probes, max_violation=invariance,
                                          tolerance=1e-5, seed=seed, fd_step=fd))

        defects = quotient_projection_defect(rr.intermediate, rr.reduced,
                                             rr.fiberwise, inter_states)
        reports.append(VerificationReport(check=f"quotient_form_{name}", probes=probes,
                                          max_violation=defects["form"], tolerance=1e-8,
                                          seed=seed, fd_step=fd))
        reports.append(VerificationReport(check=f"quotient_energy_{name}", probes=probes,
                                          max_violation=defects["energy"], tolerance=1e-8,
                                          seed=seed, fd_step=fd))
        reports.append(VerificationReport(check=f"quotient_legendre_{name}", probes=probes,
                                          max_violation=defects["legendre"], tolerance=1e-10,
                                          seed=seed, fd_step=fd))

        # Constraint classification of the intermediate stage: one gauge
        # direction everywhere and the energy annihilates it.
        crep = classify_constraint_points(rr.intermediate, inter_states)
        kernel_defect = max((abs(p.kernel_dim - 1) for p in crep.points), default=0)
        consistency = 0.0 if crep.all_consistent else 1.0
        reports.append(VerificationReport(check=f"intermediate_kernel_dim_{name}",
                                          probes=probes, max_violation=float(kernel_defect),
                                          tolerance=0.0, seed=seed, fd_step=fd))
        reports.append(VerificationReport(check=f"intermediate_consistency_{name}",
                                          probes=probes, max_violation=consistency,
                                          tolerance=0.0, seed=seed, fd_step=fd))
    return reports


def suite_hamiltonian(seed: int, probes: int, mu: float = 0.5) -> list[VerificationReport]:
    rng = np.random.default_rng(seed)
    setup = _setup_for(seed)
    ham = build_three_body_cotangent(setup.params)
    fd = ham.hamiltonian.fd_step
    reports = []

    # Cotangent probes on the momentum level: the trailing momentum slot is
    # pinned by the level value for the translation action.
    states = _random_states(rng, probes, 6)
    states[:, 5] = mu

    down_states = _random_states(rng, probes, 5)
    for name in CONNECTION_NAMES:
        conn = setup.connection(name)
        shift = momentum_shift_check(ham, setup.action, [mu], conn, states)
        reports.append(VerificationReport(check=f"momentum_shift_level_{name}",
                                          probes=probes,
                                          max_violation=shift.max_shifted_momentum,
                                          tolerance=1e-12, seed=seed, fd_step=fd))
        reports.append(VerificationReport(check=f"momentum_shift_roundtrip_{name}",
                                          probes=probes,
                                          max_violation=shift.max_round_trip_defect,
                                          tolerance=1e-12, seed=seed, fd_step=fd))

        target = momentum_target_from_level(setup.action, [mu])
        from .lagrangian import BundleDims
        from .transform import TransformationPair

        pair = TransformationPair(dims1=BundleDims(2, 1), dims2=ham.dims, k_f=1, k_F=0)
        viol = verify_ham_pullback(pair, conn, target, ham, down_states)
        tol = 1e-8 if name == "A0" else 1e-10
        reports.append(VerificationReport(check=f"ham_pullback_{name}", probes=probes,
                                          max_violation=float(np.max(viol)),
                                          tolerance=tol, seed=seed, fd_step=fd))
    return reports


_SUITE_FN = {
    "pullback": suite_pullback,
    "tangency": suite_tangency,
    "reducibility": suite_reducibility,
    "hamiltonian": suite_hamiltonian,
}


# -- scenarios -----------------------------------------------------------------


def _scenario_simulate(cfg: dict, out_dir: Path) -> ScenarioResult:
    seed = cfg["seed"]
    tols = cfg["tolerances"]
    h = cfg["integrator"]["h"]
    if cfg["system"] == "three_body":
        params = _three_body_params(cfg)
        setup = build_three_body(params)
        system = setup.system
        ic = _three_body_ic(cfg, params)
        action = setup.action
    else:
        system, inline_ic = _build_inline_system(cfg["system"])
        ic_field = cfg["ic"]
        if isinstance(ic_field, dict) and "state" in ic_field:
            ic = as_point(ic_field["state"])
        elif inline_ic is not None:
            ic = inline_ic
        else:
            raise ConfigError("inline systems take ic as {'state': [...]}")
        action = None

    traj = _integrate(cfg, system, ic)
    fd = system.lagrangian.fd_step
    energies = np.array([energy(system, s) for s in traj.states])
    reports = [VerificationReport(check="energy_drift", probes=len(traj),
                                  max_violation=float(np.max(np.abs(energies - energies[0]))),
                                  tolerance=tols["energy"], seed=seed, fd_step=fd, h=h)]
    if action is not None:
        j0 = momentum_map(system, action, traj.states[0])
        drift = max(float(np.max(np.abs(momentum_map(system, action, s) - j0)))
                    for s in traj.states)
        reports.append(VerificationReport(check="momentum_drift", probes=len(traj),
                                          max_violation=drift, tolerance=tols["momentum"],
                                          seed=seed, fd_step=fd, h=h))
    paths = [
        write_trajectory_csv(out_dir / "trajectory.csv", traj,
                             system.dims.n, system.dims.k),
        write_report_json(out_dir / "report.json", reports),
    ]
    return ScenarioResult(reports=reports, artifacts=paths)


def _reduction_run(cfg: dict):
    params = _three_body_params(cfg)
    setup = build_three_body(params)
    mu = float(cfg["mu"])
    ic_full = _three_body_ic(cfg, params)
    rr = routh_reduce(setup.system, setup.action, [mu],
                      setup.connection(cfg["connection"]), seed=cfg["seed"])
    ic_reduced = reduced_initial_condition(rr, ic_full)
    reduced_traj = _integrate(cfg, rr.reduced, ic_reduced)
    theta0 = ic_full[2:3]
    full_traj = reconstruct(rr, reduced_traj, theta0)
    return setup, rr, ic_full, reduced_traj, full_traj


def _scenario_reduce(cfg: dict, out_dir: Path) -> ScenarioResult:
    seed = cfg["seed"]
    tols = cfg["tolerances"]
    h = cfg["integrator"]["h"]
    setup, rr, ic_full, reduced_traj, recon = _reduction_run(cfg)
    fd = setup.system.lagrangian.fd_step
    mu = float(cfg["mu"])

    resid = el_residual(rr.reduced, reduced_traj).max_residual
    j_drift = max(abs(float(momentum_map(setup.system, setup.action, s)[0]) - mu)
                  for s in recon.states)
    full_resid = el_residual(setup.system, recon).max_residual
    reports = [
        VerificationReport(check="reduced_el_residual", probes=len(reduced_traj),
                           max_violation=resid, tolerance=tols["residual"],
                           seed=seed, fd_step=fd, h=h),
        VerificationReport(check="reconstructed_momentum", probes=len(recon),
                           max_violation=j_drift, tolerance=tols["momentum"],
                           seed=seed, fd_step=fd, h=h),
        VerificationReport(check="reconstructed_el_residual", probes=len(recon),
                           max_violation=full_resid, tolerance=tols["residual"],
                           seed=seed, fd_step=fd, h=h),
    ]
    paths = [
        write_trajectory_csv(out_dir / "reduced.csv", reduced_traj, 2, 0),
        write_trajectory_csv(out_dir / "reconstructed.csv", recon, 3, 0),
        write_report_json(out_dir / "report.json", reports),
    ]
    return ScenarioResult(reports=reports, artifacts=paths)


def _scenario_compare(cfg: dict, out_dir: Path) -> ScenarioResult:
    seed = cfg["seed"]
    tols = cfg["tolerances"]
    h = cfg["integrator"]["h"]
    tol = float(cfg.get("tol", tols["compare"]))
    setup, rr, ic_full, reduced_traj, recon = _reduction_run(cfg)
    fd = setup.system.lagrangian.fd_step
    mu = float(cfg["mu"])

    full_traj = _integrate(cfg, setup.system, ic_full)
    proj = np.concatenate([full_traj.states[:, :2], full_traj.states[:, 3:5]], axis=1)
    gap = np.abs(angle_aware_gap(reduced_traj.states, proj, [0, 1]))
    theta_gap = np.abs(angle_aware_gap(recon.states[:, 2:3], full_traj.states[:, 2:3], [0]))

    energies = np.array([energy(setup.system, s) for s in full_traj.states])
    j_vals = np.array([float(momentum_map(setup.system, setup.action, s)[0])
                       for s in full_traj.states])

    reports = [
        VerificationReport(check="projection_deviation", probes=len(full_traj),
                           max_violation=float(np.max(gap)), tolerance=tol,
                           seed=seed, fd_step=fd, h=h),
        VerificationReport(check="group_coordinate_deviation", probes=len(full_traj),
                           max_violation=float(np.max(theta_gap)), tolerance=tol,
                           seed=seed, fd_step=fd, h=h),
        VerificationReport(check="full_momentum_drift", probes=len(full_traj),
                           max_violation=float(np.max(np.abs(j_vals - mu))),
                           tolerance=tols["momentum"], seed=seed, fd_step=fd, h=h),
        VerificationReport(check="full_energy_drift", probes=len(full_traj),
                           max_violation=float(np.max(np.abs(energies - energies[0]))),
                           tolerance=tols["energy"], seed=seed, fd_step=fd, h=h),
    ]
    paths = [
        write_trajectory_csv(out_dir / "full.csv", full_traj, 3, 0),
        write_trajectory_csv(out_dir / "reduced.csv", reduced_traj, 2, 0),
        write_trajectory_csv(out_dir / "reconstructed.csv", recon, 3, 0),
        write_report_json(out_dir / "report.json", reports),
    ]
    return ScenarioResult(reports=reports, artifacts=paths)


def _scenario_verify(cfg: dict, out_dir: Path | None) -> ScenarioResult:
    reports = _SUITE_FN[cfg["suite"]](cfg["seed"], cfg["probes"])
    paths = []
    if out_dir is not None:
        paths.append(write_report_json(out_dir / "report.json", reports))
    return ScenarioResult(reports=reports, artifacts=paths)


def run_scenario(cfg: dict, out_dir=None) -> ScenarioResult:
    """Validate the configuration and execute its scenario.

    ``out_dir`` is created if needed; the verify scenario runs without one.
    """
    cfg = validate_config(cfg)
    if cfg["scenario"] == "verify":
        out = None
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
        return _scenario_verify(cfg, out)
    if out_dir is None:
        raise ConfigError(f"scenario {cfg['scenario']!r} needs an output directory")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg["scenario"] == "simulate":
        return _scenario_simulate(cfg, out)
    if cfg["scenario"] == "reduce":
        return _scenario_reduce(cfg, out)
    return _scenario_compare(cfg, out)
