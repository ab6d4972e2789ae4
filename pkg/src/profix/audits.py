"""Analytic-versus-brute-force audits of every derivative operator.

Each audit evaluates one analytic derivative and an independent
finite-difference oracle of the same quantity, and reports the worst
relative disagreement.  The CLI's check command and the test suite both
run these; tolerances are pinned here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import missing_cov, prop_odds, simulation
from .errors import InvalidInput
from .fixed_point import estimate_operator_norm
from .implicit_diff import d2theta_eta, df_eta, dtheta_eta
from .measures import EmpiricalMeasure
from .numdiff import FdConfig, fd_bilinear, fd_path, fd_theta

FIRST_ORDER_TOL = 1e-5
SECOND_ORDER_TOL = 1e-3
ETA_DOT_TOL = 1e-4
ETA_DDOT_TOL = 1e-3
DF_ETA_TOL = 1e-4
POPULATION_TOL = 1e-6
NORM_BOUND_SLACK = 1e-6

_N_DIRECTIONS = 3


@dataclass
class AuditRow:
    """One audited quantity: its worst error and the pinned tolerance."""

    name: str
    value: float
    tol: float

    @property
    def passed(self):
        return bool(self.value < self.tol)


def rel_err(analytic, reference):
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    denom = max(float(np.abs(reference).max(initial=0.0)), 1e-10)
    return float(np.abs(analytic - reference).max(initial=0.0)) / denom


def _maybe_corrupt(value, name, corrupt):
    if corrupt is not None and corrupt == name:
        return np.asarray(value) * (1.0 + 1e-3)
    return value


def seeded_model(kind, n=20, seed=0):
    """Deterministic synthetic dataset; the survival draw uses the linear
    baseline so the event grid has n-scale resolution."""
    rng = simulation.replication_rng(seed, 0)
    if kind == "prop_odds":
        design = prop_odds.LINEAR_DESIGN
        u, delta, z = simulation.gen_prop_odds(design, n, rng)
        return prop_odds.PropOddsModel.from_arrays(u, delta, z)
    if kind == "missing_cov":
        design = missing_cov.MissingCovDesign()
        r, y, x = simulation.gen_missing_cov(design, n, rng)
        return missing_cov.MissingCovModel.from_arrays(
            r, y, x, missing_cov.NormalRegression()
        )
    raise InvalidInput(f"unknown model kind {kind!r}")


def union_with_resample(model, kind, seed=1000, n=None):
    """Embed the model and an independent resample in one record table.

    Returns (union_model, base_weights, target_weights); straight-line
    reweighting between the two weight vectors realizes the mixture path
    toward the resample.
    """
    other = seeded_model(kind, n or model.n_obs, seed)
    points = np.vstack([model.points, other.points])
    w_base = np.concatenate([model.weights, np.zeros(len(other.points))])
    w_target = np.concatenate([np.zeros(len(model.points)), other.weights])
    base = EmpiricalMeasure(points, w_base)
    target = EmpiricalMeasure(points, w_target)
    if kind == "prop_odds":
        tau = max(model.tau, other.tau)
        union = prop_odds.PropOddsModel(base, tau=tau)
    else:
        union = missing_cov.MissingCovModel(base, model.family)
    return union, base.weights, target.weights


def _scaled_directions(rng, base, count=_N_DIRECTIONS):
    """Random directions proportional to the base coefficients."""
    return [base * rng.uniform(-0.5, 0.5, size=len(base)) for _ in range(count)]


def audit_prop_odds(model, beta=None, seed=0, corrupt=None):
    """Operator-derivative audits for the survival model on one dataset."""
    rng = np.random.default_rng(seed + 17)
    beta = np.atleast_1d(
        np.asarray([0.5] * model.covariate_dim if beta is None else beta,
                   dtype=float)
    )
    sol = prop_odds.solve_nuisance(model, beta, tol=1e-12)
    jumps = sol.eta
    A = model.jumps_to_step(jumps)
    rows = []

    def psi_of_jumps(v):
        return prop_odds.psi_jumps(model, beta, v)

    def psi_of_beta(b):
        return prop_odds.psi_apply(model, b, A).jump_sizes

    dirs = _scaled_directions(rng, jumps)

    da = _maybe_corrupt(prop_odds.da_psi(model, beta, A).matrix, "da_psi", corrupt)
    worst = 0.0
    for h in dirs:
        step = 1e-5
        fd = (psi_of_jumps(jumps + step * h) - psi_of_jumps(jumps - step * h)) / (
            2.0 * step
        )
        worst = max(worst, rel_err(da @ h, fd))
    rows.append(AuditRow("da_psi", worst, FIRST_ORDER_TOL))

    d2a = prop_odds.d2a_psi(model, beta, A)
    worst = 0.0
    for h1, h2 in zip(dirs, dirs[1:] + dirs[:1]):
        fd = fd_bilinear(
            lambda s, t: psi_of_jumps(jumps + s * h1 + t * h2), h1, h2, step=1e-4
        )
        analytic = _maybe_corrupt(d2a.apply(h1, h2), "d2a_psi", corrupt)
        worst = max(worst, rel_err(analytic, fd))
    rows.append(AuditRow("d2a_psi", worst, SECOND_ORDER_TOL))

    dot, ddot, mixed = prop_odds.dbeta_psi(model, beta, A)
    fd_dot = fd_theta(psi_of_beta, beta, FdConfig(step=1e-5))
    rows.append(AuditRow(
        "dbeta_psi.dot",
        rel_err(_maybe_corrupt(dot, "dbeta_psi.dot", corrupt), fd_dot),
        FIRST_ORDER_TOL,
    ))

    def dot_of_beta(b):
        return prop_odds.dbeta_psi(model, b, A)[0]

    fd_ddot = fd_theta(dot_of_beta, beta, FdConfig(step=1e-4))
    rows.append(AuditRow(
        "dbeta_psi.ddot",
        rel_err(_maybe_corrupt(ddot, "dbeta_psi.ddot", corrupt),
                fd_ddot.transpose(1, 0, 2)),
        SECOND_ORDER_TOL,
    ))

    worst = 0.0
    for h in dirs:
        def dot_along(t, h=h):
            At = model.jumps_to_step(jumps + t * h)
            return prop_odds.dbeta_psi(model, beta, At)[0]

        step = 1e-4
        fd = (dot_along(step) - dot_along(-step)) / (2.0 * step)
        analytic = np.stack([m.apply(h) for m in mixed])
        analytic = _maybe_corrupt(analytic, "dbeta_psi.mixed", corrupt)
        worst = max(worst, rel_err(analytic, fd))
    rows.append(AuditRow("dbeta_psi.mixed", worst, SECOND_ORDER_TOL))

    union, w_base, w_target = union_with_resample(model, "prop_odds", seed + 1000)
    sol_u = prop_odds.solve_nuisance(union, beta, w_base, tol=1e-12)
    A_u = union.jumps_to_step(sol_u.eta)
    h_dir = w_target - w_base
    analytic = prop_odds.df_psi(union, beta, A_u, w_base, h_dir)
    analytic = _maybe_corrupt(analytic, "df_psi", corrupt)

    def psi_at_path(t):
        return prop_odds.psi_apply(
            union, beta, A_u, (1.0 - t) * w_base + t * w_target
        ).jump_sizes

    fd = fd_path(psi_at_path, FdConfig(step=1e-5, scheme="forward", richardson=True))
    rows.append(AuditRow("df_psi", rel_err(analytic, fd), FIRST_ORDER_TOL))

    rows.extend(
        _audit_implicit(
            "prop_odds", model, beta, jumps, union, w_base, w_target, corrupt
        )
    )
    return rows


def audit_missing_cov(model, theta=None, seed=0, corrupt=None):
    """Operator-derivative audits for the missing-covariate model."""
    rng = np.random.default_rng(seed + 29)
    theta = np.asarray(
        (0.05, 0.9, 0.05) if theta is None else theta, dtype=float
    )
    sol = missing_cov.solve_nuisance(model, theta, tol=1e-12)
    g = sol.eta
    rows = []

    def psi_of_masses(v):
        return missing_cov.psi_masses(model, theta, v)

    def psi_of_theta(t):
        return missing_cov.psi_apply(model, t, g).masses

    dirs = _scaled_directions(rng, g)

    dg = _maybe_corrupt(
        missing_cov.dg_psi(model, theta, g).matrix, "dg_psi", corrupt
    )
    worst = 0.0
    for h in dirs:
        step = 1e-5
        fd = (psi_of_masses(g + step * h) - psi_of_masses(g - step * h)) / (
            2.0 * step
        )
        worst = max(worst, rel_err(dg @ h, fd))
    rows.append(AuditRow("dg_psi", worst, FIRST_ORDER_TOL))

    d2g = missing_cov.d2g_psi(model, theta, g)
    worst = 0.0
    for h1, h2 in zip(dirs, dirs[1:] + dirs[:1]):
        fd = fd_bilinear(
            lambda s, t: psi_of_masses(g + s * h1 + t * h2), h1, h2, step=1e-4
        )
        analytic = _maybe_corrupt(d2g.apply(h1, h2), "d2g_psi", corrupt)
        worst = max(worst, rel_err(analytic, fd))
    rows.append(AuditRow("d2g_psi", worst, SECOND_ORDER_TOL))

    dot, ddot, mixed = missing_cov.dtheta_psi(model, theta, g)
    fd_dot = fd_theta(psi_of_theta, theta, FdConfig(step=1e-5))
    rows.append(AuditRow(
        "dtheta_psi.dot",
        rel_err(_maybe_corrupt(dot, "dtheta_psi.dot", corrupt), fd_dot),
        FIRST_ORDER_TOL,
    ))

    def dot_of_theta(t):
        return missing_cov.dtheta_psi(model, t, g)[0]

    fd_ddot = fd_theta(dot_of_theta, theta, FdConfig(step=1e-4))
    rows.append(AuditRow(
        "dtheta_psi.ddot",
        rel_err(_maybe_corrupt(ddot, "dtheta_psi.ddot", corrupt),
                fd_ddot.transpose(1, 0, 2)),
        SECOND_ORDER_TOL,
    ))

    worst = 0.0
    for h in dirs:
        def dot_along(t, h=h):
            return missing_cov.dtheta_psi(model, theta, g + t * h)[0]

        step = 1e-4
        fd = (dot_along(step) - dot_along(-step)) / (2.0 * step)
        analytic = np.stack([m.apply(h) for m in mixed])
        analytic = _maybe_corrupt(analytic, "dtheta_psi.mixed", corrupt)
        worst = max(worst, rel_err(analytic, fd))
    rows.append(AuditRow("dtheta_psi.mixed", worst, SECOND_ORDER_TOL))

    union, w_base, w_target = union_with_resample(model, "missing_cov", seed + 1000)
    sol_u = missing_cov.solve_nuisance(union, theta, w_base, tol=1e-12)
    g_u = sol_u.eta
    h_dir = w_target - w_base
    analytic = missing_cov.df_psi(union, theta, g_u, w_base, h_dir)
    analytic = _maybe_corrupt(analytic, "df_psi", corrupt)

    def psi_at_path(t):
        return missing_cov.psi_apply(
            union, theta, g_u, (1.0 - t) * w_base + t * w_target
        ).masses

    fd = fd_path(psi_at_path, FdConfig(step=1e-5, scheme="forward", richardson=True))
    rows.append(AuditRow("df_psi", rel_err(analytic, fd), FIRST_ORDER_TOL))

    # score Jacobian versus differences of the analytic score
    profile = missing_cov.MissingCovProfile(model, solver_tol=1e-12)
    jac = profile.jacobian(theta)
    fd_jac = fd_theta(profile.mean_score, theta, FdConfig(step=1e-4))
    rows.append(AuditRow(
        "score_jacobian",
        rel_err(_maybe_corrupt(jac, "score_jacobian", corrupt),
                fd_jac.T),
        SECOND_ORDER_TOL,
    ))

    rows.extend(
        _audit_implicit(
            "missing_cov", model, theta, g, union, w_base, w_target, corrupt
        )
    )
    return rows


def _module_for(kind):
    return prop_odds if kind == "prop_odds" else missing_cov


def _audit_implicit(kind, model, theta, eta, union, w_base, w_target, corrupt):
    """Resolvent-formula derivatives versus re-solve difference quotients."""
    mod = _module_for(kind)
    rows = []
    warm = {"eta": eta}

    def solved_eta(t):
        sol = mod.solve_nuisance(model, t, tol=1e-12, eta0=warm["eta"])
        warm["eta"] = sol.eta
        return sol.eta

    derivs = mod.psi_derivatives(model, theta, _eta_arg(kind, model, eta))
    eta_dot = dtheta_eta(derivs)
    fd_dot = fd_theta(solved_eta, theta, FdConfig(step=1e-5))
    rows.append(AuditRow(
        "eta_dot",
        rel_err(_maybe_corrupt(eta_dot, "eta_dot", corrupt), fd_dot),
        ETA_DOT_TOL,
    ))

    def dot_at(t):
        sol_eta = solved_eta(t)
        d = mod.psi_derivatives(model, t, _eta_arg(kind, model, sol_eta))
        return dtheta_eta(d)

    eta_ddot = d2theta_eta(derivs, eta_dot)
    fd_ddot = fd_theta(dot_at, theta, FdConfig(step=1e-4))
    rows.append(AuditRow(
        "eta_ddot",
        rel_err(_maybe_corrupt(eta_ddot, "eta_ddot", corrupt),
                fd_ddot.transpose(1, 0, 2)),
        ETA_DDOT_TOL,
    ))

    sol_u = mod.solve_nuisance(union, theta, w_base, tol=1e-12)
    derivs_u = mod.psi_derivatives(
        union, theta, _eta_arg(kind, union, sol_u.eta), w_base
    )
    h_dir = w_target - w_base
    analytic = df_eta(derivs_u, h_dir)
    warm_u = {"eta": sol_u.eta}

    def eta_at_path(t):
        sol = mod.solve_nuisance(
            union, theta, (1.0 - t) * w_base + t * w_target,
            tol=1e-12, eta0=warm_u["eta"],
        )
        warm_u["eta"] = sol.eta
        return sol.eta

    fd = fd_path(eta_at_path, FdConfig(step=1e-5, scheme="forward", richardson=True))
    rows.append(AuditRow(
        "df_eta",
        rel_err(_maybe_corrupt(analytic, "df_eta", corrupt), fd),
        DF_ETA_TOL,
    ))
    return rows


def _eta_arg(kind, model, eta):
    if kind == "prop_odds":
        return model.jumps_to_step(eta)
    return eta


def audit_population_prop_odds(cells=2000, order=5, corrupt=None):
    """Population self-consistency of the survival operator at the truth."""
    check = prop_odds.population_self_consistency(cells=cells, order=order)
    value = _maybe_corrupt(check["sup_error"], "self_consistency", corrupt)
    return [AuditRow("self_consistency", float(value), POPULATION_TOL)]


def audit_population_missing_cov(y_grid=2000, seed=0, n_directions=10,
                                 n_theta=5, corrupt=None):
    """Population checks: self-consistency, contraction bound, efficiency."""
    rng = np.random.default_rng(seed + 41)
    pop = missing_cov.population_model(y_grid=y_grid)
    design = pop.design
    theta0 = np.asarray(design.theta0, dtype=float)
    rows = []

    check = missing_cov.population_self_consistency(pop)
    value = _maybe_corrupt(check["sup_error"], "self_consistency", corrupt)
    rows.append(AuditRow("self_consistency", float(value), POPULATION_TOL))

    bound = design.w2 / (1.0 - design.w2)
    norm = estimate_operator_norm(
        missing_cov.dg_psi(pop.model, theta0, pop.g0), "l1"
    )
    norm = float(_maybe_corrupt(norm, "dg_psi_l1_norm", corrupt))
    rows.append(AuditRow("dg_psi_l1_norm_excess", norm - bound, NORM_BOUND_SLACK))

    def zero_sum_directions():
        dirs = []
        for _ in range(n_directions):
            raw = rng.standard_normal(len(pop.g0))
            raw -= raw.mean()
            dirs.append(raw / np.abs(raw).sum())
        return dirs

    dirs = zero_sum_directions()
    thetas = [theta0] + [
        theta0 + rng.uniform(-0.1, 0.1, size=len(theta0))
        for _ in range(n_theta - 1)
    ]
    worst = 0.0
    for th in thetas:
        vals = missing_cov.nuisance_stationarity(pop, th, dirs)
        worst = max(worst, float(np.abs(vals).max()))
    worst = float(_maybe_corrupt(worst, "nuisance_stationarity", corrupt))
    rows.append(AuditRow("nuisance_stationarity", worst, POPULATION_TOL))

    orth = missing_cov.score_orthogonality(pop, dirs)
    value = float(np.abs(orth).max())
    value = float(_maybe_corrupt(value, "score_orthogonality", corrupt))
    rows.append(AuditRow("score_orthogonality", value, POPULATION_TOL))
    return rows


def run_audits(kind, model=None, theta=None, seed=0, n=20, population=False,
               corrupt=None):
    """Full audit battery for one model kind; returns AuditRow list."""
    if population:
        if kind == "prop_odds":
            return audit_population_prop_odds(corrupt=corrupt)
        return audit_population_missing_cov(seed=seed, corrupt=corrupt)
    if model is None:
        model = seeded_model(kind, n=n, seed=seed)
    if kind == "prop_odds":
        return audit_prop_odds(model, beta=theta, seed=seed, corrupt=corrupt)
    return audit_missing_cov(model, theta=theta, seed=seed, corrupt=corrupt)
