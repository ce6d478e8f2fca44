"""Built-in experiments: model definitions, closed-form references, runners.

Three problems ship with the package:

* ``consumption``   log-utility consumption of a geometric asset, with the
  known stationary policy u = beta and costate 1/(beta x);
* ``production``    linear-quadratic production planning, with a Riccati
  value function and affine costate;
* ``logistic``      harvested logistic growth, no closed form, solved by a
  damped Picard iteration on the control-costate pair.

Each experiment registers competitor policies, audit sampling plans, and a
default check list consumed by :func:`run_experiment` and the command line.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np
from scipy.integrate import solve_ivp

from .bsde import (
    BsdeSolution,
    RegressionBasis,
    cylinder_consistency_check,
    martingale_residual_report,
    solve_bsde_lsmc,
    terminal_stability_gap,
)
from .forward import (
    AdjointFeedbackControl,
    BlendedControl,
    ConstantControl,
    ControlLaw,
    FeedbackControl,
    NoiseBatch,
    PathEnsemble,
    RegionConstants,
    TimeGrid,
    apriori_gap_check,
    comparison_check,
    lyapunov_generator_check,
    positivity_check,
    simulate_forward,
)
from .problems import (
    AssumptionConstants,
    CoefficientField,
    ConcavitySpec,
    ControlDomain,
    DiscountedProblem,
    MultiplicativeStructure,
    SampleSpec,
    StateRegion,
    beta_threshold,
    concavity_probe,
    validate_assumptions,
)
from .reports import FAIL, INCONCLUSIVE, PASS, CostEstimate, VerificationReport
from .verify import (
    check_identities,
    check_pointwise_max,
    check_tvc,
    compare_costs,
    cost_functional_mc,
)

Array = np.ndarray


# ---------------------------------------------------------------------------
# consumption of a geometric asset


@dataclass(frozen=True)
class ConsumptionParams:
    """Wealth dX = X (mu - u) dt + sigma X dW, running gain ln(u X).

    ``beta`` defaults to the admissibility threshold 2 mu + 2 sigma^2 plus
    one half, which keeps the stationary policy u = beta interior whenever
    beta < cap.  ``eps_u`` is the lower control bound (the log gain needs
    u > 0).
    """

    mu: float = 0.05
    sigma: float = 0.2
    cap: float = 1.0
    x0: float = 1.0
    beta: float | None = None
    eps_u: float = 1e-8

    def __post_init__(self) -> None:
        if self.sigma < 0 or self.x0 <= 0:
            raise ValueError("sigma must be >= 0 and x0 > 0")
        if not (0 < self.eps_u < self.cap):
            raise ValueError("need 0 < eps_u < cap")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")

    def resolved_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        return 2.0 * self.mu + 2.0 * self.sigma**2 + 0.5


def certified_consumption_threshold(params: ConsumptionParams) -> float:
    """Discount level above which every admissible policy is square-summable.

    max(2 mu + 2 sigma^2, cap + 3 sigma^2 - 2 mu): the first entry controls
    the state, the second the reciprocal moments entering the costate.
    """
    return max(
        2.0 * params.mu + 2.0 * params.sigma**2,
        params.cap + 3.0 * params.sigma**2 - 2.0 * params.mu,
    )


def consumption_problem(params: ConsumptionParams) -> DiscountedProblem:
    mu, sigma = params.mu, params.sigma

    def drift(x, u):
        return x * (mu - u)

    def diffusion(x, u):
        return sigma * x[..., :, None]

    def running_cost(x, u):
        return np.log(u[..., 0] * x[..., 0])

    def grad_drift(x, u):
        return (mu - u)[..., :, None]

    def grad_cost(x, u):
        return 1.0 / x

    def grad_diffusion(x, u):
        out = np.zeros(x.shape[:-1] + (1, 1, 1))
        out[..., 0, 0, 0] = sigma
        return out

    def stationary(x, y, z):
        xy = x[..., 0] * y[..., 0]
        # H is increasing in u when x*y <= 0, so the box roof is the argmax
        u = np.where(xy > 0.0, 1.0 / np.where(xy > 0.0, xy, 1.0), np.inf)
        return u[..., None]

    coeffs = CoefficientField(
        state_dim=1,
        noise_dim=1,
        control_dim=1,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        grad_drift=grad_drift,
        grad_cost=grad_cost,
        grad_diffusion=grad_diffusion,
    )
    return DiscountedProblem(
        coefficients=coeffs,
        domain=ControlDomain([params.eps_u], [params.cap]),
        beta=params.resolved_beta(),
        constants=AssumptionConstants(mu1=mu, mu2=mu, L=sigma, M=sigma),
        x0=np.array([params.x0]),
        state_region=StateRegion.POSITIVE_HALF_LINE,
        stationary_control=stationary,
        multiplicative=MultiplicativeStructure(
            volatility=sigma,
            linear_rate=lambda u: mu - u[:, 0],
        ),
        sandwich_controls=(np.array([params.cap]), np.array([params.eps_u])),
        label="consumption",
    )


def consumption_optimal_law(params: ConsumptionParams) -> ControlLaw:
    """Stationary policy: consume at the discount rate (clipped to the box)."""
    rate = min(max(params.resolved_beta(), params.eps_u), params.cap)
    return ConstantControl([rate])


def consumption_truncated_costate(params: ConsumptionParams, horizon: float):
    """Exact costate of the zero-terminal problem on [0, horizon].

    Returns (y_fn, z_fn, g_fn) with y(t, x) = g(t)/x, z(t, x) = -sigma g/x
    and g(t) = (1 - e^{-beta (horizon - t)}) / beta.
    """
    beta = params.resolved_beta()
    sigma = params.sigma

    def g_fn(t):
        return (1.0 - np.exp(-beta * (horizon - np.asarray(t)))) / beta

    def y_fn(t, x):
        return g_fn(t) / np.asarray(x)

    def z_fn(t, x):
        return -sigma * g_fn(t) / np.asarray(x)

    return y_fn, z_fn, g_fn


def consumption_competitors(params: ConsumptionParams) -> Dict[str, ControlLaw]:
    beta = params.resolved_beta()
    lo, hi = params.eps_u, params.cap
    x0 = params.x0

    def clip(u):
        return np.clip(u, lo, hi)

    return {
        "constant_quarter": ConstantControl([clip(0.25 * beta)]),
        "constant_half": ConstantControl([clip(0.5 * beta)]),
        "constant_strong": ConstantControl([clip(min(1.5 * beta, 0.97 * hi))]),
        "constant_cap": ConstantControl([hi]),
        "sinusoid": FeedbackControl(
            lambda t, x: clip(beta * (1.0 + 0.5 * math.sin(t))) * np.ones(x.shape[0])
        ),
        "proportional_state": FeedbackControl(lambda t, x: clip(beta * x[:, 0] / x0)),
        "sqrt_state": FeedbackControl(
            lambda t, x: clip(beta * np.sqrt(np.maximum(x[:, 0], 0.0) / x0))
        ),
    }


def consumption_sample_spec(params: ConsumptionParams) -> SampleSpec:
    return SampleSpec(
        x_low=[0.2 * params.x0], x_high=[5.0 * params.x0], n_pairs=2000, seed=7
    )


def consumption_concavity_specs(params: ConsumptionParams) -> List[ConcavitySpec]:
    """Probe boxes inside the concavity region x u |y| < 1 of the Hamiltonian.

    The Hessian in (x, u) at fixed (y, z) is [[-1/x^2, -y], [-y, -1/u^2]],
    negative semidefinite exactly when x u |y| <= 1.  Along the true costate
    x y = 1/beta, so realistic y levels scale like 1/(beta x).
    """
    beta = params.resolved_beta()
    u_hi = min(params.cap, beta)
    z_level = -params.sigma / beta
    specs = []
    for i, y_level in enumerate((0.5 / beta, 1.0 / beta, 2.0 / beta)):
        x_hi = 0.98 / (y_level * u_hi)
        specs.append(
            ConcavitySpec(
                x_low=[0.05 * x_hi],
                x_high=[x_hi],
                yz_samples=((np.array([y_level]), np.array([[z_level]])),),
                u_low=np.array([params.eps_u]),
                u_high=np.array([u_hi]),
                n_pairs=400,
                seed=31 + i,
            )
        )
    return specs


def consumption_integrability_check(
    params: ConsumptionParams,
    u_const: float | None = None,
    horizon: float = 5.0,
    steps: int = 500,
    n_paths: int = 20_000,
    seed: int = 11,
) -> VerificationReport:
    """Reciprocal second moment vs its closed form under a constant policy.

    For constant u the wealth is geometric and E[X_t^{-2}] equals
    x0^{-2} exp((3 sigma^2 - 2 mu + 2u) t) exactly.  The Monte Carlo curve
    must track it within three standard errors at every probe node.  The
    default policy u = cap/2 makes the certified discount threshold tight.
    """
    u_val = 0.5 * params.cap if u_const is None else float(u_const)
    u_val = min(max(u_val, params.eps_u), params.cap)
    problem = consumption_problem(params)
    grid = TimeGrid(horizon=horizon, steps=steps)
    ens = simulate_forward(problem, ConstantControl([u_val]), grid, n_paths, seed)

    exponent = 3.0 * params.sigma**2 - 2.0 * params.mu + 2.0 * u_val
    times = grid.times()
    # node 0 is the deterministic start; the comparison is vacuous there
    probe = np.unique(np.r_[np.arange(max(1, steps // 10), steps + 1, max(1, steps // 10)), steps])
    inv_sq = 1.0 / np.square(ens.states[:, probe, 0])
    mc = inv_sq.mean(axis=0)
    se = inv_sq.std(axis=0, ddof=1) / math.sqrt(n_paths)
    exact = params.x0**-2 * np.exp(exponent * times[probe])

    rel_dev = np.abs(mc - exact) / exact
    rel_tol = 3.0 * se / exact
    worst = int(np.argmax(rel_dev - rel_tol))
    ok = bool(np.all(rel_dev <= rel_tol + 1e-12))
    return VerificationReport(
        check="integrability",
        status=PASS if ok else FAIL,
        statistic=float(rel_dev[worst]),
        tolerance=float(rel_tol[worst]),
        n_samples=n_paths,
        standard_error=float(se[worst]),
        details={
            "exponent": exponent,
            "policy": u_val,
            "certified_threshold": certified_consumption_threshold(params),
            "probe_times": times[probe].tolist(),
        },
        notes="E[1/X^2] against its closed form under a constant policy",
    )


# ---------------------------------------------------------------------------
# linear-quadratic production planning


@dataclass(frozen=True)
class ProductionPlanningParams:
    """Inventory dX = (u - eta) dt + sigma dW, gain -c(u-u1)^2 - h(x-x1)^2."""

    eta: float = 1.0
    u1: float = 1.0
    x1: float = 2.0
    sigma: float = 0.5
    c: float = 1.0
    h: float = 0.5
    beta: float = 0.5
    x0: float = 1.0
    u_low: float = 0.0
    u_high: float = 4.0

    def __post_init__(self) -> None:
        if self.c <= 0 or self.h < 0:
            raise ValueError("need c > 0 and h >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.u_low >= self.u_high:
            raise ValueError("empty control box")


def production_riccati_constants(params: ProductionPlanningParams):
    """Stationary Riccati data (phi, psi, offset) of the quadratic value.

    V(x) = phi x^2 / 2 + psi x + offset solves the stationary equation
    beta V = (u1 - eta) V' + V'^2/(4c) + sigma^2 phi / 2 - h (x - x1)^2;
    phi is the concave root of phi^2 - 2 c beta phi - 4 c h = 0.
    """
    c, h, beta = params.c, params.h, params.beta
    phi = c * beta - math.sqrt(c * c * beta * beta + 4.0 * c * h)
    psi = (phi * (params.u1 - params.eta) + 2.0 * h * params.x1) / (
        beta - phi / (2.0 * c)
    )
    offset = (
        (params.u1 - params.eta) * psi
        + psi * psi / (4.0 * c)
        + 0.5 * params.sigma**2 * phi
        - h * params.x1**2
    ) / beta
    return phi, psi, offset


@dataclass
class RiccatiOracle:
    """Backward Riccati integration with its stationary limit."""

    phi_inf: float
    psi_inf: float
    offset: float
    phi_agreement: float
    psi_agreement: float
    stationary_residual: float
    solution: object

    def phi_at(self, s):
        return self.solution.sol(np.asarray(s))[0]

    def psi_at(self, s):
        return self.solution.sol(np.asarray(s))[1]


def riccati_oracle(params: ProductionPlanningParams, span: float | None = None) -> RiccatiOracle:
    """Integrate the finite-horizon Riccati pair backward from zero data.

    In time-to-go s the pair solves

        phi' = phi^2/(2c) - beta phi - 2h,          phi(0) = 0,
        psi' = -beta psi + phi psi/(2c) + (u1 - eta) phi + 2 h x1,  psi(0) = 0,

    and converges to the algebraic constants as s grows.  ``span`` defaults
    to 40 / beta, far past the settling time.
    """
    c, h, beta = params.c, params.h, params.beta
    if span is None:
        span = 40.0 / beta

    def rhs(s, v):
        phi, psi = v
        dphi = phi * phi / (2.0 * c) - beta * phi - 2.0 * h
        dpsi = (
            -beta * psi
            + phi * psi / (2.0 * c)
            + (params.u1 - params.eta) * phi
            + 2.0 * h * params.x1
        )
        return (dphi, dpsi)

    sol = solve_ivp(
        rhs, (0.0, span), (0.0, 0.0), dense_output=True, rtol=1e-10, atol=1e-12
    )
    if not sol.success:
        raise RuntimeError(f"riccati integration failed: {sol.message}")
    phi, psi, offset = production_riccati_constants(params)
    phi_end, psi_end = sol.y[0, -1], sol.y[1, -1]
    residual = abs(phi * phi - 2.0 * c * beta * phi - 4.0 * c * h)
    return RiccatiOracle(
        phi_inf=phi,
        psi_inf=psi,
        offset=offset,
        phi_agreement=abs(phi_end - phi),
        psi_agreement=abs(psi_end - psi),
        stationary_residual=residual,
        solution=sol,
    )


def production_value(params: ProductionPlanningParams, x) -> Array:
    phi, psi, offset = production_riccati_constants(params)
    x = np.asarray(x, dtype=float)
    return 0.5 * phi * x * x + psi * x + offset


def production_problem(params: ProductionPlanningParams) -> DiscountedProblem:
    eta, sigma = params.eta, params.sigma
    c, h = params.c, params.h
    u1, x1 = params.u1, params.x1

    def drift(x, u):
        return u - eta

    def diffusion(x, u):
        out = np.empty(x.shape[:-1] + (1, 1))
        out[..., 0, 0] = sigma
        return out

    def running_cost(x, u):
        return -c * (u[..., 0] - u1) ** 2 - h * (x[..., 0] - x1) ** 2

    def grad_drift(x, u):
        return np.zeros(x.shape[:-1] + (1, 1))

    def grad_cost(x, u):
        return -2.0 * h * (x - x1)

    def stationary(x, y, z):
        return u1 + y[..., 0:1] / (2.0 * c)

    coeffs = CoefficientField(
        state_dim=1,
        noise_dim=1,
        control_dim=1,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        grad_drift=grad_drift,
        grad_cost=grad_cost,
    )
    return DiscountedProblem(
        coefficients=coeffs,
        domain=ControlDomain([params.u_low], [params.u_high]),
        beta=params.beta,
        constants=AssumptionConstants(mu1=0.0, mu2=0.0, L=0.0, M=0.0),
        x0=np.array([params.x0]),
        label="production",
    )


def production_optimal_law(params: ProductionPlanningParams) -> ControlLaw:
    phi, psi, _ = production_riccati_constants(params)

    def fn(t, x):
        u = params.u1 + (phi * x[:, 0] + psi) / (2.0 * params.c)
        return np.clip(u, params.u_low, params.u_high)

    return FeedbackControl(fn)


def production_exact_costate(params: ProductionPlanningParams):
    """Affine stationary costate y(x) = phi x + psi and constant z = sigma phi."""
    phi, psi, _ = production_riccati_constants(params)

    def y_fn(x):
        return phi * np.asarray(x) + psi

    return y_fn, params.sigma * phi


def production_sigma_zero_cost(
    params: ProductionPlanningParams, steps: int = 20_000, tail: float = 1e-4
):
    """Deterministic sanity point: the noise-free cost must hit the value.

    Runs one path of the sigma = 0 problem under the stationary policy and
    returns (estimate, exact, relative_error) with exact = V(x0) at sigma=0.
    """
    frozen = dataclasses.replace(params, sigma=0.0)
    problem = production_problem(frozen)
    grid = TimeGrid.auto(frozen.beta, steps, tail=tail)
    ens = simulate_forward(problem, production_optimal_law(frozen), grid, 1, seed=0)
    est = cost_functional_mc(problem, ens, label="sigma_zero")
    exact = float(production_value(frozen, frozen.x0))
    rel = abs(est.value - exact) / max(1e-12, abs(exact))
    return est, exact, rel


def production_competitors(params: ProductionPlanningParams) -> Dict[str, ControlLaw]:
    lo, hi = params.u_low, params.u_high
    x1 = params.x1

    def clip(u):
        return np.clip(u, lo, hi)

    return {
        "constant_reference": ConstantControl([clip(params.u1)]),
        "constant_low": ConstantControl([clip(lo + 0.0625 * (hi - lo))]),
        "constant_high": ConstantControl([clip(lo + 0.75 * (hi - lo))]),
        "idle": ConstantControl([lo]),
        "overshoot_gain": FeedbackControl(lambda t, x: clip(2.0 * x1 - x[:, 0] - params.eta + params.u1)),
        "undershoot_gain": FeedbackControl(
            lambda t, x: clip(params.u1 + (x1 - x[:, 0]) / 8.0)
        ),
        "bang_bang": FeedbackControl(lambda t, x: np.where(x[:, 0] < x1, hi, lo)),
        "sinusoid": FeedbackControl(
            lambda t, x: clip(params.u1 + math.sin(t)) * np.ones(x.shape[0])
        ),
    }


def production_sample_spec(params: ProductionPlanningParams) -> SampleSpec:
    half = 4.0 + abs(params.x0 - params.x1)
    return SampleSpec(
        x_low=[params.x1 - half], x_high=[params.x1 + half], n_pairs=2000, seed=5
    )


def production_concavity_specs(params: ProductionPlanningParams) -> List[ConcavitySpec]:
    phi, psi, _ = production_riccati_constants(params)
    z_level = params.sigma * phi
    y_levels = (phi * (params.x1 - 3.0) + psi, psi * 0.5, phi * (params.x1 + 3.0) + psi)
    samples = tuple(
        (np.array([y]), np.array([[z_level]])) for y in y_levels
    )
    return [
        ConcavitySpec(
            x_low=[params.x1 - 4.0],
            x_high=[params.x1 + 4.0],
            yz_samples=samples,
            n_pairs=600,
            seed=13,
        )
    ]


# ---------------------------------------------------------------------------
# harvested logistic growth


@dataclass(frozen=True)
class LogisticParams:
    """Biomass dX = a X (1 - b X) dt + gamma u dt + sigma X dW on (0, inf).

    Gain -(c x^2 + h u^2); gamma must be positive so the control actually
    reaches the dynamics.  ``beta`` should exceed 2a + 2 sigma^2 for the
    certification machinery to apply.
    """

    a: float = 1.0
    b: float = 1.0
    gamma: float = 0.5
    sigma: float = 0.3
    c: float = 1.0
    h: float = 1.0
    u1: float = 0.1
    u2: float = 1.0
    x0: float = 0.5
    beta: float = 3.6

    def __post_init__(self) -> None:
        if self.a <= 0 or self.b <= 0:
            raise ValueError("need a > 0 and b > 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive, the control enters through it")
        if self.c < 0 or self.h <= 0:
            raise ValueError("need c >= 0 and h > 0")
        if not (0 <= self.u1 < self.u2):
            raise ValueError("need 0 <= u1 < u2")
        if self.x0 <= 0 or self.sigma < 0 or self.beta <= 0:
            raise ValueError("need x0 > 0, sigma >= 0, beta > 0")


def logistic_problem(params: LogisticParams) -> DiscountedProblem:
    a, b, gamma, sigma = params.a, params.b, params.gamma, params.sigma
    c, h = params.c, params.h

    def drift(x, u):
        return a * x * (1.0 - b * x) + gamma * u

    def diffusion(x, u):
        return sigma * x[..., :, None]

    def running_cost(x, u):
        return -(c * x[..., 0] ** 2 + h * u[..., 0] ** 2)

    def grad_drift(x, u):
        return (a - 2.0 * a * b * x)[..., :, None]

    def grad_cost(x, u):
        return -2.0 * c * x

    def grad_diffusion(x, u):
        out = np.zeros(x.shape[:-1] + (1, 1, 1))
        out[..., 0, 0, 0] = sigma
        return out

    def stationary(x, y, z):
        return gamma * y[..., 0:1] / (2.0 * h)

    def residual(x, u):
        return -a * b * x[:, 0] ** 2 + gamma * u[:, 0]

    coeffs = CoefficientField(
        state_dim=1,
        noise_dim=1,
        control_dim=1,
        drift=drift,
        diffusion=diffusion,
        running_cost=running_cost,
        grad_drift=grad_drift,
        grad_cost=grad_cost,
        grad_diffusion=grad_diffusion,
    )
    return DiscountedProblem(
        coefficients=coeffs,
        domain=ControlDomain([params.u1], [params.u2]),
        beta=params.beta,
        constants=AssumptionConstants(mu1=a, mu2=a, L=sigma, M=sigma),
        x0=np.array([params.x0]),
        state_region=StateRegion.POSITIVE_HALF_LINE,
        stationary_control=stationary,
        multiplicative=MultiplicativeStructure(
            volatility=sigma,
            linear_rate=lambda u: np.full(u.shape[0], a),
            residual=residual,
        ),
        sandwich_controls=(np.array([params.u1]), np.array([params.u2])),
        label="logistic",
    )


def logistic_control_law(params: LogisticParams) -> Callable[[float, Array, Array], Array]:
    """Costate-to-control map u = clip(gamma y / (2h), u1, u2).

    Piecewise linear in y with breakpoints 2 h u1 / gamma and
    2 h u2 / gamma.
    """

    def rule(t, x, y):
        return np.clip(params.gamma * y[..., 0] / (2.0 * params.h), params.u1, params.u2)

    return rule


def logistic_region_constants(params: LogisticParams, n_grid: int = 2001) -> RegionConstants:
    """Region split for the Lyapunov drift test of V = 1 + 1/x + x^2.

    r = 1/(2b) (drift pushes up below it even at zero harvest support),
    R = largest zero of a x (1 - b x) + gamma u2 (drift pushes down above it),
    C = sampled sup of (L V)+ / V over the middle band and the control box
    corners.
    """
    a, b = params.a, params.b
    r = 1.0 / (2.0 * b)
    R = (a + math.sqrt(a * a + 4.0 * a * b * params.gamma * params.u2)) / (2.0 * a * b)
    problem = logistic_problem(params)
    xs = np.linspace(r, R, n_grid)[:, None]
    vp = -1.0 / xs[:, 0] ** 2 + 2.0 * xs[:, 0]
    vpp = 2.0 / xs[:, 0] ** 3 + 2.0
    v = 1.0 + 1.0 / xs[:, 0] + xs[:, 0] ** 2
    worst = 0.0
    for u_val in (params.u1, params.u2):
        u = np.full((n_grid, 1), u_val)
        bvals = problem.coefficients.drift(xs, u)[:, 0]
        svals = problem.coefficients.diffusion(xs, u)[:, 0, 0]
        gen = bvals * vp + 0.5 * svals**2 * vpp
        worst = max(worst, float(np.max(np.maximum(gen, 0.0) / v)))
    return RegionConstants(r=r, R=R, C=worst)


class PicardError(RuntimeError):
    """Raised when the control-costate iteration diverges."""


@dataclass
class PicardResult:
    problem: DiscountedProblem
    grid: TimeGrid
    law: ControlLaw
    ensemble: PathEnsemble
    solution: BsdeSolution
    iterations: int
    residuals: List[float]
    converged: bool
    report: VerificationReport = field(default=None)


def logistic_picard_solve(
    params: LogisticParams,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    basis: RegressionBasis | None = None,
    initial_law: ControlLaw | None = None,
    max_iterations: int = 20,
    tol: float = 1e-4,
    damping: float = 0.5,
) -> PicardResult:
    """Damped Picard iteration on the control-costate fixed point.

    One pass: simulate the forward flow under the current policy on a fixed
    noise batch, solve the backward equation, and refresh the policy through
    the costate surface.  The residual is the sup over grid nodes and paths
    of the change in the costate surface, evaluated on the freshly simulated
    states.  A residual increase blends the new policy into the old one with
    weight ``damping``; three consecutive increases abort.
    """
    problem = logistic_problem(params)
    if basis is None:
        basis = RegressionBasis(degree=4)
    if initial_law is None:
        initial_law = ConstantControl([0.5 * (params.u1 + params.u2)])
    rule = logistic_control_law(params)
    noise = NoiseBatch.generate(seed, n_paths, grid.steps, 1, grid.dt)

    ens = simulate_forward(problem, initial_law, grid, n_paths, seed, noise=noise)
    sol = solve_bsde_lsmc(problem, ens, basis)
    law: ControlLaw = AdjointFeedbackControl(sol.y_at, rule)

    residuals: List[float] = []
    converged = False
    increases = 0
    iterations = 0
    for _ in range(max_iterations):
        ens_new = simulate_forward(problem, law, grid, n_paths, seed, noise=noise)
        sol_new = solve_bsde_lsmc(problem, ens_new, basis)
        res = 0.0
        for i in range(grid.steps):
            x_i = ens_new.states[:, i, :]
            res = max(res, float(np.abs(sol_new.y_at(i, x_i) - sol.y_at(i, x_i)).max()))
        iterations += 1
        residuals.append(res)
        fresh = AdjointFeedbackControl(sol_new.y_at, rule)
        if len(residuals) >= 2 and res > residuals[-2]:
            increases += 1
            if increases >= 3:
                raise PicardError(
                    f"residual increased {increases} times in a row: {residuals}"
                )
            law = BlendedControl([law, fresh], [1.0 - damping, damping])
        else:
            increases = 0
            law = fresh
        ens, sol = ens_new, sol_new
        if res <= tol:
            converged = True
            break

    report = VerificationReport(
        check="picard_fixed_point",
        status=PASS if converged else FAIL,
        statistic=residuals[-1] if residuals else math.inf,
        tolerance=tol,
        n_samples=n_paths,
        details={
            "iterations": iterations,
            "max_iterations": max_iterations,
            "residuals": [float(r) for r in residuals],
        },
        notes="sup-norm change of the costate surface per pass",
    )
    return PicardResult(
        problem=problem,
        grid=grid,
        law=law,
        ensemble=ens,
        solution=sol,
        iterations=iterations,
        residuals=residuals,
        converged=converged,
        report=report,
    )


def logistic_local_uniqueness_probe(
    params: LogisticParams,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    basis: RegressionBasis | None = None,
    tol: float = 1e-3,
) -> VerificationReport:
    """Restart the fixed-point iteration from both box corners.

    All starts must converge to the same costate at time zero within
    ``tol``; a split would indicate several local fixed points at this
    resolution.
    """
    y0_values = []
    for start in (params.u1, params.u2):
        result = logistic_picard_solve(
            params,
            grid,
            n_paths,
            seed,
            basis=basis,
            initial_law=ConstantControl([start]),
        )
        y0_values.append(float(result.solution.y0()[0]))
    spread = max(y0_values) - min(y0_values)
    return VerificationReport(
        check="local_uniqueness",
        status=PASS if spread <= tol else FAIL,
        statistic=spread,
        tolerance=tol,
        n_samples=n_paths,
        details={"y0_by_start": y0_values},
        notes="costate at time zero across fixed-point restarts",
    )


def logistic_competitors(params: LogisticParams) -> Dict[str, ControlLaw]:
    """Five constant laws strictly inside (u1, u2] plus a few shaped ones.

    None of the constants equals the corner the closed loop settles on, so
    every paired cost comparison has a nonzero margin.
    """
    u1, u2 = params.u1, params.u2
    span = u2 - u1
    mid = 0.5 * (u1 + u2)
    return {
        "constant_low": ConstantControl([u1 + 0.1 * span]),
        "constant_third": ConstantControl([u1 + 0.25 * span]),
        "constant_mid": ConstantControl([mid]),
        "constant_upper": ConstantControl([u1 + 0.75 * span]),
        "constant_high": ConstantControl([u2]),
        "sinusoid": FeedbackControl(
            lambda t, x: np.clip(mid + 0.5 * span * math.sin(t), u1, u2)
            * np.ones(x.shape[0])
        ),
        "ramp_down": FeedbackControl(
            lambda t, x: (u1 + span * math.exp(-t)) * np.ones(x.shape[0])
        ),
        "threshold": FeedbackControl(
            lambda t, x: np.where(x[:, 0] < params.x0, u2, u1)
        ),
    }


def logistic_sample_spec(params: LogisticParams) -> SampleSpec:
    upper = logistic_region_constants(params).R * 1.5
    return SampleSpec(x_low=[0.02], x_high=[upper], n_pairs=2000, seed=17)


def logistic_concavity_specs(params: LogisticParams) -> List[ConcavitySpec]:
    """Probe the region y >= -c/(ab) where the state curvature -2aby - 2c <= 0."""
    a, b, c = params.a, params.b, params.c
    floor = -c / (a * b) if c > 0 else -0.5
    y_levels = (0.9 * floor, 0.4 * floor, 0.0, abs(floor) * 0.2 + 0.01)
    samples = tuple((np.array([y]), np.array([[0.0]])) for y in y_levels)
    upper = logistic_region_constants(params).R
    return [
        ConcavitySpec(
            x_low=[0.02],
            x_high=[upper],
            yz_samples=samples,
            n_pairs=500,
            seed=23,
        )
    ]


# ---------------------------------------------------------------------------
# registry and runner


@dataclass(frozen=True)
class ExperimentDefinition:
    """Registry entry: how to build, solve and audit one model."""

    name: str
    summary: str
    params_type: type
    default_steps: int
    default_paths: int
    default_checks: tuple
    tvc_competitor: str
    basis: RegressionBasis


_REGISTRY: Dict[str, ExperimentDefinition] = {}


def register_experiment(definition: ExperimentDefinition) -> None:
    if definition.name in _REGISTRY:
        raise ValueError(f"experiment {definition.name!r} already registered")
    _REGISTRY[definition.name] = definition


def get_experiment(name: str) -> ExperimentDefinition:
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise KeyError(f"unknown experiment {name!r}; available: {known}") from None


def list_experiments() -> List[ExperimentDefinition]:
    return [_REGISTRY[k] for k in sorted(_REGISTRY)]


register_experiment(
    ExperimentDefinition(
        name="consumption",
        summary="log-utility consumption of a geometric asset (closed form: u = beta)",
        params_type=ConsumptionParams,
        default_steps=200,
        default_paths=20_000,
        default_checks=(
            "assumptions",
            "identities",
            "concavity",
            "oracle",
            "integrability",
            "pointwise_max",
            "martingale",
            "stability",
            "tvc",
            "costs",
            "positivity",
        ),
        tvc_competitor="constant_quarter",
        basis=RegressionBasis(degree=4, reciprocal=True),
    )
)
register_experiment(
    ExperimentDefinition(
        name="production",
        summary="linear-quadratic production planning (closed form: Riccati value)",
        params_type=ProductionPlanningParams,
        default_steps=400,
        default_paths=20_000,
        default_checks=(
            "assumptions",
            "identities",
            "concavity",
            "oracle",
            "pointwise_max",
            "martingale",
            "stability",
            "tvc",
            "costs",
            "apriori",
        ),
        tvc_competitor="constant_high",
        basis=RegressionBasis(degree=4),
    )
)
register_experiment(
    ExperimentDefinition(
        name="logistic",
        summary="harvested logistic growth on (0, inf), solved by Picard iteration",
        params_type=LogisticParams,
        default_steps=250,
        default_paths=15_000,
        default_checks=(
            "assumptions",
            "identities",
            "concavity",
            "picard",
            "pointwise_max",
            "martingale",
            "comparison",
            "positivity",
            "cylinder",
            "lyapunov",
            "tvc",
            "costs",
        ),
        tvc_competitor="constant_high",
        basis=RegressionBasis(degree=4),
    )
)


@dataclass
class ExperimentResult:
    """Everything one run produced: reports, costs, scalars, artifacts."""

    name: str
    params: object
    grid: TimeGrid
    n_paths: int
    seed: int
    basis: RegressionBasis
    reports: List[VerificationReport]
    costs: Dict[str, CostEstimate]
    scalars: Dict[str, float]
    curves: Dict[str, Array]
    ensemble: PathEnsemble | None
    solution: BsdeSolution | None
    law: ControlLaw | None

    @property
    def all_passed(self) -> bool:
        return all(r.status != FAIL for r in self.reports)

    def report_by_name(self, check: str) -> VerificationReport:
        for r in self.reports:
            if r.check == check:
                return r
        raise KeyError(f"no report named {check!r}")

    def to_dict(self) -> dict:
        return {
            "experiment": self.name,
            "params": dataclasses.asdict(self.params),
            "grid": {"horizon": self.grid.horizon, "steps": self.grid.steps},
            "n_paths": self.n_paths,
            "seed": self.seed,
            "basis": {
                "family": self.basis.family,
                "degree": self.basis.degree,
                "reciprocal": self.basis.reciprocal,
            },
            "scalars": {k: float(v) for k, v in sorted(self.scalars.items())},
            "reports": [r.to_dict() for r in self.reports],
            "costs": {k: v.to_dict() for k, v in sorted(self.costs.items())},
            "all_passed": self.all_passed,
        }


# checks that touch the simulated ensemble / the backward solve; anything
# outside these sets runs on the problem definition alone, so cheap audits
# (assumptions, identities, concavity) never pay for a solve
_ENSEMBLE_CHECKS = frozenset(
    {"oracle", "pointwise_max", "martingale", "positivity", "stability", "tvc", "costs", "cylinder"}
)
_SOLUTION_CHECKS = frozenset({"oracle", "pointwise_max", "martingale", "tvc"})


def _consumption_pipeline(params, grid, n_paths, seed, basis, checks, reports, costs, scalars, curves):
    problem = consumption_problem(params)
    law = consumption_optimal_law(params)
    ens = sol = None
    if _ENSEMBLE_CHECKS & set(checks):
        ens = simulate_forward(problem, law, grid, n_paths, seed)
    if ens is not None and _SOLUTION_CHECKS & set(checks):
        sol = solve_bsde_lsmc(problem, ens, basis)
    beta = problem.beta

    y_fn, _, g_fn = consumption_truncated_costate(params, grid.horizon)
    times = grid.times()
    if sol is not None:
        scalars["y0_estimate"] = float(sol.y0()[0])
    scalars["y0_exact"] = float(g_fn(0.0) / params.x0)
    scalars["stationary_policy"] = min(beta, params.cap)
    scalars["beta"] = beta
    scalars["beta_threshold"] = beta_threshold(problem)
    scalars["certified_threshold"] = certified_consumption_threshold(params)
    curves["g_exact"] = np.asarray(g_fn(times))

    if "oracle" in checks:
        # Y X = g(t) exactly, so the product curve isolates the solver error
        prod = (sol.Y[:, :, 0] * ens.states[:, :, 0]).mean(axis=0)
        g = np.asarray(g_fn(times))
        keep = np.exp(-beta * (grid.horizon - times)) <= 0.5
        rel = np.abs(prod[keep] - g[keep]) / g[keep]
        stat = float(rel.max())
        reports.append(
            VerificationReport(
                check="oracle",
                status=PASS if stat <= 0.05 else FAIL,
                statistic=stat,
                tolerance=0.05,
                n_samples=n_paths,
                details={
                    "y0_estimate": scalars["y0_estimate"],
                    "y0_exact": scalars["y0_exact"],
                    "nodes_compared": int(keep.sum()),
                },
                notes="mean of Y X against the closed-form curve g(t)",
            )
        )
        curves["costate_times_state"] = prod

    if "integrability" in checks:
        reports.append(consumption_integrability_check(params, seed=seed + 1))

    return problem, law, ens, sol


def _production_pipeline(params, grid, n_paths, seed, basis, checks, reports, costs, scalars, curves):
    problem = production_problem(params)
    law = production_optimal_law(params)
    ens = sol = None
    if _ENSEMBLE_CHECKS & set(checks):
        ens = simulate_forward(problem, law, grid, n_paths, seed)
    if ens is not None and _SOLUTION_CHECKS & set(checks):
        sol = solve_bsde_lsmc(problem, ens, basis)

    oracle = riccati_oracle(params)
    y_fn, z_exact = production_exact_costate(params)
    scalars["phi_inf"] = oracle.phi_inf
    scalars["psi_inf"] = oracle.psi_inf
    scalars["value_at_x0"] = float(production_value(params, params.x0))
    if sol is not None:
        scalars["y0_estimate"] = float(sol.y0()[0])
    scalars["y0_exact"] = float(y_fn(params.x0))

    if "oracle" in checks:
        times = grid.times()
        s = grid.horizon - times
        phi_s, psi_s = oracle.phi_at(s), oracle.psi_at(s)
        exact = phi_s[None, :] * ens.states[:, :, 0] + psi_s[None, :]
        scale = 1.0 + np.abs(exact)
        rel = np.abs(sol.Y[:, :, 0] - exact) / scale
        stat = float(rel.mean(axis=0).max())
        est, det_exact, det_rel = production_sigma_zero_cost(params)
        ok = (
            stat <= 0.05
            and oracle.phi_agreement <= 1e-6
            and oracle.psi_agreement <= 1e-6
            and det_rel <= 0.005
        )
        reports.append(
            VerificationReport(
                check="oracle",
                status=PASS if ok else FAIL,
                statistic=stat,
                tolerance=0.05,
                n_samples=n_paths,
                details={
                    "phi_agreement": oracle.phi_agreement,
                    "psi_agreement": oracle.psi_agreement,
                    "stationary_residual": oracle.stationary_residual,
                    "sigma_zero_cost": est.value,
                    "sigma_zero_exact": det_exact,
                    "sigma_zero_rel_error": det_rel,
                },
                notes="costate vs the Riccati curve, plus the noise-free value point",
            )
        )
        curves["phi_of_time_to_go"] = phi_s

    if "apriori" in checks:
        reports.append(
            apriori_gap_check(
                problem,
                law,
                grid,
                problem.x0,
                problem.x0 + 1.0,
                n_paths=min(n_paths, 4000),
                seed=seed + 2,
            )
        )

    return problem, law, ens, sol


def _logistic_pipeline(params, grid, n_paths, seed, basis, checks, reports, costs, scalars, curves):
    problem = logistic_problem(params)
    law = ens = sol = None
    if (_ENSEMBLE_CHECKS | {"picard", "comparison"}) & set(checks):
        picard = logistic_picard_solve(params, grid, n_paths, seed, basis=basis)
        problem, law = picard.problem, picard.law
        ens, sol = picard.ensemble, picard.solution
        scalars["y0_estimate"] = float(sol.y0()[0])
        scalars["picard_iterations"] = picard.iterations
        scalars["picard_residual"] = picard.residuals[-1] if picard.residuals else math.inf
        scalars["mean_policy_at_0"] = float(ens.controls[:, 0, 0].mean())

    if "picard" in checks:
        reports.append(picard.report)

    if "comparison" in checks:
        reports.append(
            comparison_check(problem, law, grid, n_paths=min(n_paths, 8000), seed=seed + 3)
        )

    if "cylinder" in checks:
        reports.append(
            cylinder_consistency_check(
                problem, ens, basis, truncation_m=10.0, truncation_p=50.0, cylinder=5.0
            )
        )

    if "lyapunov" in checks:
        regions = logistic_region_constants(params)
        xs = np.geomspace(1e-3, 3.0 * regions.R, 4001)[:, None]
        reports.append(lyapunov_generator_check(problem, xs, regions))
        scalars["region_r"] = regions.r
        scalars["region_R"] = regions.R
        scalars["region_C"] = regions.C

    return problem, law, ens, sol


def _pointwise_settings(name: str, grid: TimeGrid) -> dict:
    """Per-experiment sampling window and tolerance for the pointwise check.

    The closed-form candidates are stationary policies, while the solved
    costate obeys a zero terminal condition; near the horizon the two
    disagree by construction, and away from it the comparison resolves the
    policy only down to the costate's discretization bias.  The fixed-point
    candidate is consistent with its own surface, so it is held to a far
    tighter bar on the whole grid.
    """
    T = grid.horizon
    if name == "consumption":
        return {"tol": 1e-3, "max_time": T - 10.0 if T > 12.0 else 0.4 * T}
    if name == "production":
        return {"tol": 1e-3, "max_time": T - 6.0 if T > 8.0 else 0.5 * T}
    return {"tol": 1e-6, "max_time": None}


def run_experiment(
    name: str,
    params=None,
    grid: TimeGrid | None = None,
    n_paths: int | None = None,
    seed: int = 0,
    basis: RegressionBasis | None = None,
    checks=None,
) -> ExperimentResult:
    """Build, solve and audit one registered experiment.

    ``params`` may be a params instance or a mapping of field overrides.
    ``checks`` selects which reports to produce (default: the experiment's
    registered list).  The forward simulation and the backward solve only
    run when a selected check needs them, so problem-level audits stay
    cheap; the returned ensemble / solution / law are then ``None``.
    """
    definition = get_experiment(name)
    if params is None:
        params = definition.params_type()
    elif isinstance(params, dict):
        params = definition.params_type(**params)
    elif not isinstance(params, definition.params_type):
        raise TypeError(f"params must be a {definition.params_type.__name__} or a dict")

    beta = params.resolved_beta() if name == "consumption" else params.beta
    if grid is None:
        grid = TimeGrid.auto(beta, definition.default_steps)
    if n_paths is None:
        n_paths = definition.default_paths
    if basis is None:
        basis = definition.basis
    checks = tuple(definition.default_checks if checks is None else checks)
    # checks every pipeline supports, plus each experiment's own extras;
    # asking for a check an experiment cannot produce is an error, not a no-op
    generic = {
        "assumptions", "identities", "concavity", "pointwise_max", "martingale",
        "positivity", "stability", "tvc", "costs",
    }
    extras = {
        "consumption": {"oracle", "integrability"},
        "production": {"oracle", "apriori"},
        "logistic": {"picard", "comparison", "cylinder", "lyapunov", "uniqueness"},
    }
    unknown = set(checks) - generic - extras.get(name, set())
    if unknown:
        raise ValueError(f"unknown checks for {name!r}: {sorted(unknown)}")

    reports: List[VerificationReport] = []
    costs: Dict[str, CostEstimate] = {}
    scalars: Dict[str, float] = {}
    curves: Dict[str, Array] = {}

    if name == "consumption":
        pipeline = _consumption_pipeline
        competitors = consumption_competitors(params)
        sample_spec = consumption_sample_spec(params)
        concavity_specs = consumption_concavity_specs(params)
    elif name == "production":
        pipeline = _production_pipeline
        competitors = production_competitors(params)
        sample_spec = production_sample_spec(params)
        concavity_specs = production_concavity_specs(params)
    elif name == "logistic":
        pipeline = _logistic_pipeline
        competitors = logistic_competitors(params)
        sample_spec = logistic_sample_spec(params)
        concavity_specs = logistic_concavity_specs(params)
    else:
        raise KeyError(f"no pipeline for experiment {name!r}")

    problem, law, ens, sol = pipeline(
        params, grid, n_paths, seed, basis, checks, reports, costs, scalars, curves
    )

    if "assumptions" in checks:
        reports.append(validate_assumptions(problem, sample_spec))
    if "identities" in checks:
        reports.append(check_identities(problem, sample_spec))
    if "concavity" in checks:
        for spec in concavity_specs:
            reports.append(concavity_probe(problem, spec))
    if "pointwise_max" in checks:
        reports.append(
            check_pointwise_max(problem, ens, sol, seed=seed + 4, **_pointwise_settings(name, grid))
        )
    if "martingale" in checks:
        # the consumption driver has exponentially growing moments (1/X),
        # so the zero-terminal quadrature bias beats the noise scale in a
        # window before the horizon; test the interior only
        mart_window = None
        if name == "consumption":
            T = grid.horizon
            mart_window = T - 2.0 if T > 4.0 else 0.5 * T
        elif name == "logistic":
            T = grid.horizon
            mart_window = T - 0.1 if T > 0.5 else 0.8 * T
        reports.append(martingale_residual_report(problem, ens, sol, max_time=mart_window))
    if "positivity" in checks:
        reports.append(positivity_check(ens))
    if "stability" in checks:
        xi = ens.states[:, -1, :].copy()
        try:
            reports.append(terminal_stability_gap(problem, ens, basis, xi).report)
        except ValueError as exc:
            reports.append(
                VerificationReport(
                    check="terminal_stability",
                    status=INCONCLUSIVE,
                    statistic=math.nan,
                    tolerance=math.nan,
                    notes=f"not applicable: {exc}",
                )
            )
    if "uniqueness" in checks and name == "logistic":
        reports.append(
            logistic_local_uniqueness_probe(
                params, grid, min(n_paths, 8000), seed, basis=basis
            )
        )

    competitor_ensembles: Dict[str, PathEnsemble] = {}
    if "tvc" in checks or "costs" in checks:
        for comp_name, comp_law in competitors.items():
            competitor_ensembles[comp_name] = simulate_forward(
                problem, comp_law, grid, n_paths, seed, noise=ens.noise
            )
    if "tvc" in checks:
        reports.append(
            check_tvc(problem, ens, sol, competitor_ensembles[definition.tvc_competitor])
        )
    if "costs" in checks:
        reports.append(compare_costs(problem, ens, competitor_ensembles))
        costs["candidate"] = cost_functional_mc(problem, ens, label="candidate")
        for comp_name, comp_ens in competitor_ensembles.items():
            costs[comp_name] = cost_functional_mc(problem, comp_ens, label=comp_name)

    times = grid.times()
    curves.setdefault("times", times)
    if ens is not None:
        curves["mean_state"] = ens.states[:, :, 0].mean(axis=0)
        curves["mean_control"] = ens.controls[:, :, 0].mean(axis=0)
    if sol is not None:
        curves["mean_costate"] = sol.Y[:, :, 0].mean(axis=0)

    return ExperimentResult(
        name=name,
        params=params,
        grid=grid,
        n_paths=n_paths,
        seed=seed,
        basis=basis,
        reports=reports,
        costs=costs,
        scalars=scalars,
        curves=curves,
        ensemble=ens,
        solution=sol,
        law=law,
    )
