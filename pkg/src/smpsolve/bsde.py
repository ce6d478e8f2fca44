"""Regression-based solver for the adjoint (costate) backward equation.

The costate pair (Y, Z) of a discounted problem solves

    -dY_t = grad_x H(X_t, u_t, Y_t, Z_t) dt - Z_t dW_t

on the truncated horizon [0, T] with terminal condition Y_T = xi (zero by
default, justified by the exponential decay of the terminal's influence).
The scheme is backward induction with conditional expectations replaced by
least-squares projections on a per-step polynomial basis:

    Z_i = E[(Y_{i+1} - E[Y_{i+1}|X_i]) dW_i' | X_i] / dt,
    Y_i = E[Y_{i+1}|X_i] + driver(X_i, u_i, ., Z_i) dt,

with the driver evaluated first at the explicit predictor E[Y_{i+1}|X_i] and
then once more at the corrected value (two-pass explicit scheme).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .forward import ControlLaw, NoiseBatch, PathEnsemble, TimeGrid, simulate_forward
from .problems import DiscountedProblem, grad_x_hamiltonian
from .reports import FAIL, INCONCLUSIVE, PASS, VerificationReport

Array = np.ndarray

COND_LIMIT = 1e12
RIDGE_LAMBDA = 1e-8


class RegressionError(RuntimeError):
    """Raised when regression targets are too corrupted to fit."""


@dataclass(frozen=True)
class RegressionBasis:
    """Basis family for the per-step conditional expectation regressions.

    ``family`` is "polynomial" (monomials in the standardized state, total
    degree <= degree for several state dimensions) or "laguerre"
    (exponentially weighted Laguerre functions, scalar state only).
    ``reciprocal`` appends a standardized 1/x column, useful for problems on
    the positive half-line whose costate has reciprocal structure.
    """

    family: str = "polynomial"
    degree: int = 4
    reciprocal: bool = False

    def __post_init__(self) -> None:
        if self.family not in ("polynomial", "laguerre"):
            raise ValueError("family must be 'polynomial' or 'laguerre'")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    def fit(self, x: Array, valid: Array | None = None):
        """Build the design matrix at states ``x`` and return its transform."""
        x = np.asarray(x, dtype=float)
        ref = x if valid is None else x[valid]
        shift = ref.mean(axis=0)
        scale = ref.std(axis=0)
        degenerate = bool(np.all(scale < 1e-12 * (1.0 + np.abs(shift))))
        scale = np.where(scale < 1e-300, 1.0, scale)
        rec_shift = rec_scale = None
        loc = None
        if self.family == "laguerre":
            if x.shape[1] != 1:
                raise ValueError("laguerre basis supports scalar states only")
            loc = float(ref.min(axis=0)[0])
        if self.reciprocal:
            if np.any(ref <= 0):
                raise ValueError("reciprocal basis column needs positive states")
            rec = 1.0 / ref[:, 0]
            rec_shift = float(rec.mean())
            rec_scale = float(max(rec.std(), 1e-300))
        transform = BasisTransform(
            shift=shift,
            scale=scale,
            degenerate=degenerate,
            laguerre_loc=loc,
            reciprocal_shift=rec_shift,
            reciprocal_scale=rec_scale,
        )
        return self.design(x, transform), transform

    def design(self, x: Array, transform: "BasisTransform") -> Array:
        x = np.asarray(x, dtype=float)
        P = x.shape[0]
        if transform.degenerate:
            return np.ones((P, 1))
        s = (x - transform.shift) / transform.scale
        if self.family == "polynomial":
            cols = [np.ones(P)]
            if x.shape[1] == 1:
                v = s[:, 0]
                for j in range(1, self.degree + 1):
                    cols.append(v**j)
            else:
                for deg in range(1, self.degree + 1):
                    for combo in combinations_with_replacement(range(x.shape[1]), deg):
                        col = np.ones(P)
                        for idx in combo:
                            col = col * s[:, idx]
                        cols.append(col)
        else:
            # Laguerre recurrence on the shifted nonnegative variable
            t = (x[:, 0] - transform.laguerre_loc) / transform.scale[0]
            t = np.maximum(t, 0.0)
            w = np.exp(-0.5 * t)
            lk_minus, lk = np.ones(P), 1.0 - t
            cols = [w * lk_minus]
            if self.degree >= 1:
                cols.append(w * lk)
            for j in range(1, self.degree):
                lk_next = ((2 * j + 1 - t) * lk - j * lk_minus) / (j + 1)
                lk_minus, lk = lk, lk_next
                cols.append(w * lk)
        if self.reciprocal:
            rec = (1.0 / np.maximum(x[:, 0], 1e-300) - transform.reciprocal_shift)
            cols.append(rec / transform.reciprocal_scale)
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class BasisTransform:
    """Per-step affine standardization, stored so surfaces can be re-evaluated."""

    shift: Array
    scale: Array
    degenerate: bool = False
    laguerre_loc: float | None = None
    reciprocal_shift: float | None = None
    reciprocal_scale: float | None = None


def _fit_columns(design: Array, targets: Array, valid: Array | None):
    """Least squares with QR, ridge fallback on ill-conditioned designs.

    Returns (coefficients, condition_number, used_ridge).
    """
    a = design if valid is None else design[valid]
    b = targets if valid is None else targets[valid]
    q, r = np.linalg.qr(a)
    sv = np.linalg.svd(r, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if cond <= COND_LIMIT:
        coef = np.linalg.solve(r, q.T @ b)
        return coef, cond, False
    ata = a.T @ a + RIDGE_LAMBDA * np.eye(a.shape[1])
    coef = np.linalg.solve(ata, a.T @ b)
    return coef, cond, True


@dataclass
class BsdeSolution:
    """Backward solve output: node values, surfaces, and fit diagnostics.

    ``Y`` has shape (P, N+1, n) and ``Z`` (P, N, n, d).  Coefficient lists
    hold, per step i < N, the fit of the realized Y_i (``y_coeffs``, this is
    the costate surface), of the conditional expectation E[Y_{i+1}|X_i]
    (``y_cond_coeffs``), and of Z_i (``z_coeffs``, columns flattened).
    """

    grid: TimeGrid
    Y: Array
    Z: Array
    basis: RegressionBasis
    transforms: list
    y_coeffs: list
    y_cond_coeffs: list
    z_coeffs: list
    condition_numbers: Array
    ridge_steps: list
    terminal_kind: str = "zero"
    driver_state_cap: float | None = None

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def state_dim(self) -> int:
        return self.Y.shape[2]

    def y0(self) -> Array:
        """Costate at time zero, averaged over paths."""
        return self.Y[:, 0, :].mean(axis=0)

    def y_at(self, step: int, x: Array) -> Array:
        """Evaluate the fitted costate surface of step ``step`` at states x."""
        if step >= self.grid.steps:
            if self.terminal_kind == "zero":
                return np.zeros((np.asarray(x).shape[0], self.state_dim))
            raise ValueError("no surface is stored at the terminal step")
        design = self.basis.design(np.asarray(x, dtype=float), self.transforms[step])
        return design @ self.y_coeffs[step]

    def take_paths(self, index: Array) -> "BsdeSolution":
        return BsdeSolution(
            grid=self.grid,
            Y=self.Y[index],
            Z=self.Z[index],
            basis=self.basis,
            transforms=self.transforms,
            y_coeffs=self.y_coeffs,
            y_cond_coeffs=self.y_cond_coeffs,
            z_coeffs=self.z_coeffs,
            condition_numbers=self.condition_numbers,
            ridge_steps=self.ridge_steps,
            terminal_kind=self.terminal_kind,
            driver_state_cap=self.driver_state_cap,
        )


def solve_bsde_lsmc(
    problem: DiscountedProblem,
    ensemble: PathEnsemble,
    basis: RegressionBasis,
    terminal: Array | None = None,
    driver_state_cap: float | None = None,
    max_bad_fraction: float = 0.01,
    warn_on_ridge: bool = True,
) -> BsdeSolution:
    """Solve the adjoint backward equation along a simulated ensemble.

    ``terminal`` gives per-path terminal values (P, n); omitted means zero.
    ``driver_state_cap`` replaces the state by min(X, cap) inside the driver
    only, the truncation used by the growth-controlled variant for problems
    on the positive half-line.

    Exploded paths are excluded from every regression.  Non-finite targets
    beyond ``max_bad_fraction`` of paths abort with
    :class:`RegressionError`; isolated ones are masked out.
    """
    grid = ensemble.grid
    P, N = ensemble.n_paths, grid.steps
    n, d = problem.state_dim, problem.noise_dim
    dt = grid.dt

    Y = np.empty((P, N + 1, n))
    Z = np.empty((P, N, n, d))
    if terminal is None:
        Y[:, N, :] = 0.0
        terminal_kind = "zero"
    else:
        term = np.asarray(terminal, dtype=float)
        if term.shape != (P, n):
            raise ValueError("terminal must have shape (n_paths, state_dim)")
        Y[:, N, :] = term
        terminal_kind = "values"

    transforms: list = [None] * N
    y_coeffs: list = [None] * N
    y_cond_coeffs: list = [None] * N
    z_coeffs: list = [None] * N
    conds = np.empty(N)
    ridge_steps: list[int] = []
    base_valid = ~ensemble.exploded

    for i in range(N - 1, -1, -1):
        x_i = ensemble.states[:, i, :]
        u_i = ensemble.controls[:, i, :]
        dW = ensemble.noise.increments[:, i, :]
        target_y = Y[:, i + 1, :]

        finite = np.isfinite(target_y).all(axis=1)
        valid = base_valid & finite
        bad_fraction = 1.0 - float(finite[base_valid].mean()) if base_valid.any() else 1.0
        if bad_fraction > max_bad_fraction:
            raise RegressionError(
                f"step {i}: {bad_fraction:.1%} of regression targets are non-finite"
            )
        if not valid.any():
            raise RegressionError(f"step {i}: no usable paths remain")
        mask = None if valid.all() else valid

        design, transform = basis.fit(x_i, valid=mask)
        coef_cond, cond, ridged = _fit_columns(design, target_y, mask)
        y_pred = design @ coef_cond

        resid = np.where(valid[:, None], target_y - y_pred, 0.0)
        target_z = (resid[:, :, None] * dW[:, None, :]).reshape(P, n * d) / dt
        coef_z, _, ridged_z = _fit_columns(design, target_z, mask)
        z_i = (design @ coef_z).reshape(P, n, d)

        x_eff = np.minimum(x_i, driver_state_cap) if driver_state_cap is not None else x_i
        g = grad_x_hamiltonian(x_eff, u_i, y_pred, z_i, problem)
        y_half = y_pred + g * dt
        g = grad_x_hamiltonian(x_eff, u_i, y_half, z_i, problem)
        y_i = y_pred + g * dt

        coef_y, _, _ = _fit_columns(design, np.where(valid[:, None], y_i, 0.0), mask)

        Y[:, i, :] = y_i
        Z[:, i, :, :] = z_i
        transforms[i] = transform
        y_coeffs[i] = coef_y
        y_cond_coeffs[i] = coef_cond
        z_coeffs[i] = coef_z
        conds[i] = cond
        if (ridged or ridged_z) and not transform.degenerate:
            ridge_steps.append(i)

    if ridge_steps and warn_on_ridge:
        warnings.warn(
            f"ridge fallback used at {len(ridge_steps)} regression steps "
            f"(worst condition {conds.max():.3g})",
            RuntimeWarning,
            stacklevel=2,
        )

    return BsdeSolution(
        grid=grid,
        Y=Y,
        Z=Z,
        basis=basis,
        transforms=transforms,
        y_coeffs=y_coeffs,
        y_cond_coeffs=y_cond_coeffs,
        z_coeffs=z_coeffs,
        condition_numbers=conds,
        ridge_steps=sorted(ridge_steps),
        terminal_kind=terminal_kind,
        driver_state_cap=driver_state_cap,
    )


def solve_truncated_driver(
    problem: DiscountedProblem,
    ensemble: PathEnsemble,
    basis: RegressionBasis,
    level: float,
    terminal: Array | None = None,
) -> BsdeSolution:
    """Backward solve with the state capped at ``level`` inside the driver.

    Identical to :func:`solve_bsde_lsmc` otherwise; the forward states and
    the diffusion term are untouched.
    """
    if not (level > 0):
        raise ValueError("truncation level must be positive")
    return solve_bsde_lsmc(
        problem, ensemble, basis, terminal=terminal, driver_state_cap=level
    )


def exp_transform(solution: BsdeSolution, beta: float, direction: str = "forward") -> BsdeSolution:
    """Reweight a solution by the discount: node i is scaled by e^{-+beta t_i}.

    ``forward`` maps the costate pair to its discounted version, ``inverse``
    undoes it.  Surfaces (coefficients) are scaled consistently, so
    ``y_at`` remains valid on the result.
    """
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    sign = -1.0 if direction == "forward" else 1.0
    times = solution.grid.times()
    wy = np.exp(sign * beta * times)
    Y = solution.Y * wy[None, :, None]
    Z = solution.Z * wy[None, :-1, None, None]
    scale = wy[:-1]
    return BsdeSolution(
        grid=solution.grid,
        Y=Y,
        Z=Z,
        basis=solution.basis,
        transforms=solution.transforms,
        y_coeffs=[c * s for c, s in zip(solution.y_coeffs, scale)],
        y_cond_coeffs=[c * s for c, s in zip(solution.y_cond_coeffs, scale)],
        z_coeffs=[c * s for c, s in zip(solution.z_coeffs, scale)],
        condition_numbers=solution.condition_numbers,
        ridge_steps=solution.ridge_steps,
        terminal_kind=solution.terminal_kind,
        driver_state_cap=solution.driver_state_cap,
    )


@dataclass
class StabilityGapResult:
    """Terminal-robustness gap against its exponential bound."""

    gap: float
    bound: float
    standard_error: float
    argmax_node: int
    report: VerificationReport


def terminal_stability_gap(
    problem: DiscountedProblem,
    ensemble: PathEnsemble,
    basis: RegressionBasis,
    xi_values: Array,
    slack: float = 0.25,
) -> StabilityGapResult:
    """Compare zero-terminal and xi-terminal solves on one ensemble.

    The xi terminal is projected on the final-step basis (a stand-in for its
    conditional expectation given X_T).  The gap is

        max_i  mean( e^{-beta t_i} |Y^0_i - Y^xi_i|^2 )

    and the reference bound is e^{-beta T} * mean(|xi|^2).  Pass when
    gap <= bound * (1 + slack) + 3 SE.  Requires beta >= 2 mu2 + 2 M^2.
    """
    c = problem.constants
    if problem.beta < 2.0 * c.mu2 + 2.0 * c.M**2:
        raise ValueError("terminal stability needs beta >= 2 mu2 + 2 M^2")
    xi = np.asarray(xi_values, dtype=float)
    if xi.ndim == 1:
        xi = xi[:, None]
    P = ensemble.n_paths
    if xi.shape != (P, problem.state_dim):
        raise ValueError("xi_values must have shape (n_paths, state_dim)")

    x_T = ensemble.states[:, -1, :]
    valid = None if not ensemble.exploded.any() else ~ensemble.exploded
    design, transform = basis.fit(x_T, valid=valid)
    coef, _, _ = _fit_columns(design, xi, valid)
    xi_proj = design @ coef

    sol_zero = solve_bsde_lsmc(problem, ensemble, basis, terminal=None)
    sol_xi = solve_bsde_lsmc(problem, ensemble, basis, terminal=xi_proj)

    diff = sol_zero.Y - sol_xi.Y
    sq = np.einsum("pin,pin->pi", diff, diff)
    weighted = sq * np.exp(-problem.beta * ensemble.grid.times())
    node_means = weighted.mean(axis=0)
    i_star = int(np.argmax(node_means))
    gap = float(node_means[i_star])
    se = float(weighted[:, i_star].std(ddof=1) / math.sqrt(P)) if P > 1 else 0.0

    bound = float(
        math.exp(-problem.beta * ensemble.grid.horizon)
        * np.einsum("pn,pn->p", xi, xi).mean()
    )
    tol = bound * (1.0 + slack) + 3.0 * se
    report = VerificationReport(
        check="terminal_stability",
        status=PASS if gap <= tol else FAIL,
        statistic=gap,
        tolerance=tol,
        n_samples=P,
        standard_error=se,
        details={"bound": bound, "argmax_node": i_star, "horizon": ensemble.grid.horizon},
        notes="weighted squared gap between zero- and xi-terminal solves",
    )
    return StabilityGapResult(
        gap=gap, bound=bound, standard_error=se, argmax_node=i_star, report=report
    )


@dataclass
class HorizonSweepRow:
    horizon: float
    steps: int
    y0: float
    diff_from_previous: float | None
    y0_standard_error: float


@dataclass
class HorizonSweepResult:
    rows: list
    converged: bool

    def diffs(self) -> list:
        return [r.diff_from_previous for r in self.rows[1:]]


def horizon_truncation_sweep(
    problem: DiscountedProblem,
    law: ControlLaw,
    horizons,
    dt: float,
    n_paths: int,
    seed: int,
    basis: RegressionBasis,
    abs_tol: float = 1e-3,
) -> HorizonSweepResult:
    """Re-solve at increasing horizons and track the costate at time zero.

    Horizons share their noise prefix (keyed generation), so successive
    differences are common-random-number estimates of the pure truncation
    effect.  Converged once the last difference is below
    max(abs_tol, 3 * SE(Y0)).  Scalar-state problems only.
    """
    if problem.state_dim != 1:
        raise ValueError("sweep assumes a scalar state")
    horizons = sorted(float(h) for h in horizons)
    rows: list[HorizonSweepRow] = []
    prev_y0 = None
    for T in horizons:
        steps = max(1, int(round(T / dt)))
        grid = TimeGrid(horizon=steps * dt, steps=steps)
        ens = simulate_forward(problem, law, grid, n_paths, seed)
        sol = solve_bsde_lsmc(problem, ens, basis)
        y0 = float(sol.y0()[0])
        # spread of the step-0 regression target, a proxy for SE of Y0
        g = grad_x_hamiltonian(
            ens.states[:, 0, :], ens.controls[:, 0, :], sol.Y[:, 1, :], sol.Z[:, 0, :, :], problem
        )
        target0 = sol.Y[:, 1, 0] + g[:, 0] * grid.dt
        se = float(target0.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
        diff = None if prev_y0 is None else y0 - prev_y0
        rows.append(
            HorizonSweepRow(
                horizon=grid.horizon,
                steps=steps,
                y0=y0,
                diff_from_previous=diff,
                y0_standard_error=se,
            )
        )
        prev_y0 = y0
    converged = False
    if len(rows) >= 2:
        last = rows[-1]
        converged = abs(last.diff_from_previous) <= max(abs_tol, 3.0 * last.y0_standard_error)
    return HorizonSweepResult(rows=rows, converged=converged)


def cylinder_consistency_check(
    problem: DiscountedProblem,
    ensemble: PathEnsemble,
    basis: RegressionBasis,
    truncation_m: float,
    truncation_p: float,
    cylinder: float,
    tol: float = 1e-8,
) -> VerificationReport:
    """Truncation consistency on paths that never leave a bounded cylinder.

    Restricts the ensemble to paths with sup_t |X_t| < cylinder, refits the
    backward solve on that subset under both truncation levels (both above
    the cylinder), and compares the solutions.  On the subset the two capped
    drivers coincide pointwise, so the solves must agree to roundoff.
    """
    if not (cylinder < truncation_m and cylinder < truncation_p):
        raise ValueError("truncation levels must exceed the cylinder radius")
    sup_abs = np.abs(ensemble.states).max(axis=(1, 2))
    mask = sup_abs < cylinder
    kept = int(mask.sum())
    if kept == 0:
        return VerificationReport(
            check="cylinder_consistency",
            status=INCONCLUSIVE,
            statistic=None,
            n_samples=0,
            notes=f"no path stayed inside the cylinder of radius {cylinder:g}",
        )
    sub = ensemble.take_paths(mask)
    sol_m = solve_truncated_driver(problem, sub, basis, truncation_m)
    sol_p = solve_truncated_driver(problem, sub, basis, truncation_p)
    diff_y = float(np.abs(sol_m.Y - sol_p.Y).max())
    diff_z = float(np.abs(sol_m.Z - sol_p.Z).max())
    status = PASS if diff_y <= tol else FAIL
    return VerificationReport(
        check="cylinder_consistency",
        status=status,
        statistic=diff_y,
        tolerance=tol,
        n_samples=kept,
        details={"z_difference": diff_z, "kept_fraction": kept / ensemble.n_paths},
        notes=f"per-subset refit at truncations {truncation_m:g} and {truncation_p:g}",
    )


def martingale_residual_report(
    problem: DiscountedProblem,
    ensemble: PathEnsemble,
    solution: BsdeSolution,
    tolerance: float | None = None,
    max_time: float | None = None,
) -> VerificationReport:
    """Per-step mean of Y_{i+1} - Y_i + driver dt - Z dW, against SE of zero.

    A systematic driver error accumulates in the mean; a correct scheme
    leaves only sampling noise.  The regression behind Y pins the fit
    residual's sample mean at zero, so the fluctuation of the step mean is
    carried by the Z dW term; the standard error must include it, not just
    the spread of the combined residual.  The default tolerance widens with
    the number of steps tested (the statistic is a maximum over steps).

    The final backward step is always skipped: with a deterministic terminal
    value the conditional-mean fit there is exact and Z vanishes, so that
    step has no martingale component; its residual is pure one-step
    quadrature error and the ratio would compare bias against an unrelated
    spread.  ``max_time`` widens that exclusion to a whole terminal window,
    for problems whose driver moments grow so fast along the horizon that
    the quadrature bias of the zero-terminal truncation outruns the noise
    scale near the boundary.
    """
    grid = ensemble.grid
    dt = grid.dt
    last = grid.steps - 1
    if max_time is not None:
        last = min(last, max(1, int(math.floor(max_time / dt))))
    if tolerance is None:
        tolerance = max(3.0, math.sqrt(2.0 * math.log(40.0 * last)))
    keep = ~ensemble.exploded
    P = int(keep.sum())
    worst = 0.0
    worst_step = -1
    for i in range(last):
        g = grad_x_hamiltonian(
            ensemble.states[keep, i, :],
            ensemble.controls[keep, i, :],
            solution.Y[keep, i, :],
            solution.Z[keep, i, :, :],
            problem,
        )
        zdw = np.einsum(
            "pnd,pd->pn", solution.Z[keep, i, :, :], ensemble.noise.increments[keep, i, :]
        )
        resid = solution.Y[keep, i + 1, :] - solution.Y[keep, i, :] + g * dt - zdw
        mean = resid.mean(axis=0)
        var = zdw.var(axis=0, ddof=1) + resid.var(axis=0, ddof=1)
        se = np.sqrt(var / P)
        score = float(np.max(np.abs(mean) / np.maximum(se, 1e-300)))
        if score > worst:
            worst, worst_step = score, i
    status = PASS if worst <= tolerance else FAIL
    return VerificationReport(
        check="martingale_residual",
        status=status,
        statistic=worst,
        tolerance=tolerance,
        n_samples=P,
        details={"worst_step": worst_step, "steps_tested": last, "max_time": max_time},
        notes="largest |mean residual| / SE over steps",
    )


def bsde_weighted_norm(solution: BsdeSolution, beta: float) -> float:
    """Estimate of E integral e^{-beta t} (|Y|^2 + ||Z||^2) dt on the grid.

    Trapezoid in the Y nodes, left rectangles in the Z steps (Z is defined
    per step).
    """
    times = solution.grid.times()
    wy = np.exp(-beta * times)
    sqy = np.einsum("pin,pin->pi", solution.Y, solution.Y)
    y_part = np.trapezoid(sqy * wy, times, axis=-1).mean()
    sqz = np.einsum("pind,pind->pi", solution.Z, solution.Z)
    z_part = (sqz * wy[:-1]).sum(axis=1).mean() * solution.grid.dt
    return float(y_part + z_part)
