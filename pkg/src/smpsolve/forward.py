"""Forward simulation of controlled SDEs and pathwise diagnostics.

The stepper is Euler-Maruyama on the whole space.  On the positive half-line,
problems that declare a multiplicative structure (linear drift part plus
sigma(x) = vol * x) are stepped with the linear part propagated exactly in
the log and the drift remainder added afterwards; this keeps paths positive
for moderate step sizes.  Residual negativity is clipped at a small floor and
flagged, never silently.

Noise is counter-based: increment block of path p is a pure function of
(seed, path index), with the (step, component) layout fixed inside the block.
Splitting a run into path chunks therefore reproduces the unsplit run
bit-for-bit, which the scanning helpers rely on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .problems import DiscountedProblem, StateRegion
from .reports import FAIL, PASS, VerificationReport

Array = np.ndarray

EXPLOSION_GUARD = 1e8
POSITIVITY_FLOOR = 1e-12


class SimulationError(RuntimeError):
    """Raised when an ensemble is too degenerate to be useful."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i * horizon / steps, i = 0..steps."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def times(self) -> Array:
        # i * T / N, evaluated directly so t_N == T exactly
        return np.arange(self.steps + 1) * (self.horizon / self.steps)

    @classmethod
    def auto(cls, beta: float, steps: int, tail: float = 1e-4) -> "TimeGrid":
        """Horizon ceil(ln(1/tail)/beta), big enough that e^{-beta T} <= tail."""
        if beta <= 0:
            raise ValueError("beta must be positive")
        horizon = math.ceil(math.log(1.0 / tail) / beta)
        return cls(horizon=float(max(horizon, 1)), steps=steps)


@dataclass
class NoiseBatch:
    """Brownian increments for an ensemble, reproducible by construction.

    ``increments[p, i, c]`` is the c-th component of the increment over step
    i for path p, distributed N(0, dt).  Generation is keyed by
    (seed, path_offset + p); given the key, position (i, c) inside the block
    is fixed, so identical seeds give bit-identical batches and path chunks
    generated separately agree with the full batch.
    """

    seed: int
    n_paths: int
    n_steps: int
    noise_dim: int
    dt: float
    increments: Array
    path_offset: int = 0

    @classmethod
    def generate(
        cls,
        seed: int,
        n_paths: int,
        n_steps: int,
        noise_dim: int,
        dt: float,
        path_offset: int = 0,
    ) -> "NoiseBatch":
        if n_paths < 1 or n_steps < 1 or noise_dim < 1:
            raise ValueError("n_paths, n_steps and noise_dim must be >= 1")
        if dt <= 0:
            raise ValueError("dt must be positive")
        out = np.empty((n_paths, n_steps * noise_dim))
        for p in range(n_paths):
            gen = np.random.Generator(np.random.Philox(key=[seed, path_offset + p]))
            out[p] = gen.standard_normal(n_steps * noise_dim)
        out *= math.sqrt(dt)
        return cls(
            seed=seed,
            n_paths=n_paths,
            n_steps=n_steps,
            noise_dim=noise_dim,
            dt=dt,
            increments=out.reshape(n_paths, n_steps, noise_dim),
            path_offset=path_offset,
        )

    def coarsen(self, factor: int) -> "NoiseBatch":
        """Sum consecutive groups of ``factor`` increments.

        The result is the batch a grid coarsened by ``factor`` would see if
        both grids shared the same underlying Brownian path; used for step
        refinement studies with common noise.
        """
        if factor < 1 or self.n_steps % factor != 0:
            raise ValueError("factor must divide n_steps")
        inc = self.increments.reshape(
            self.n_paths, self.n_steps // factor, factor, self.noise_dim
        ).sum(axis=2)
        return NoiseBatch(
            seed=self.seed,
            n_paths=self.n_paths,
            n_steps=self.n_steps // factor,
            noise_dim=self.noise_dim,
            dt=self.dt * factor,
            increments=inc,
            path_offset=self.path_offset,
        )

    def take_paths(self, index: Array) -> "NoiseBatch":
        inc = self.increments[index]
        return NoiseBatch(
            seed=self.seed,
            n_paths=inc.shape[0],
            n_steps=self.n_steps,
            noise_dim=self.noise_dim,
            dt=self.dt,
            increments=inc,
            path_offset=self.path_offset,
        )


class ControlLaw:
    """Base class; subclasses produce control values per (step, t, states)."""

    def control_at(self, step: int, t: float, x: Array) -> Array:
        raise NotImplementedError


class ConstantControl(ControlLaw):
    def __init__(self, value) -> None:
        self.value = np.atleast_1d(np.asarray(value, dtype=float))

    def control_at(self, step: int, t: float, x: Array) -> Array:
        return np.broadcast_to(self.value, (x.shape[0], self.value.shape[0]))


class OpenLoopControl(ControlLaw):
    """Control table of shape (n_paths, n_steps, k), indexed by step."""

    def __init__(self, table: Array) -> None:
        self.table = np.asarray(table, dtype=float)
        if self.table.ndim != 3:
            raise ValueError("table must be (n_paths, n_steps, k)")

    def control_at(self, step: int, t: float, x: Array) -> Array:
        return self.table[:, step, :]


class FeedbackControl(ControlLaw):
    """Markov feedback u = fn(t, x) with fn vectorized over paths."""

    def __init__(self, fn: Callable[[float, Array], Array], control_dim: int = 1) -> None:
        self.fn = fn
        self.control_dim = control_dim

    def control_at(self, step: int, t: float, x: Array) -> Array:
        u = np.asarray(self.fn(t, x), dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        return u


class AdjointFeedbackControl(ControlLaw):
    """Feedback through a costate source: u = law(t, x, y(step, x)).

    ``y_source(step, x)`` evaluates the costate surface of a solved backward
    equation at the given states.
    """

    def __init__(
        self,
        y_source: Callable[[int, Array], Array],
        law: Callable[[float, Array, Array], Array],
    ) -> None:
        self.y_source = y_source
        self.law = law

    def control_at(self, step: int, t: float, x: Array) -> Array:
        y = self.y_source(step, x)
        u = np.asarray(self.law(t, x, y), dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        return u


class BlendedControl(ControlLaw):
    """Convex combination of laws; used for damped fixed-point iterations."""

    def __init__(self, laws, weights) -> None:
        self.laws = list(laws)
        self.weights = np.asarray(weights, dtype=float)
        if len(self.laws) != self.weights.shape[0]:
            raise ValueError("one weight per law required")
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ValueError("weights must be a convex combination")

    def control_at(self, step: int, t: float, x: Array) -> Array:
        acc = None
        for w, law in zip(self.weights, self.laws):
            u = law.control_at(step, t, x)
            acc = w * u if acc is None else acc + w * u
        return acc


@dataclass
class PathEnsemble:
    """Simulated ensemble: states, applied controls, noise, exit flags.

    ``states`` has shape (P, N+1, n), ``controls`` (P, N, k).  Flags are per
    path: ``euler_crossed`` marks paths whose raw Euler candidate went
    nonpositive at some step (diagnostic, the actual scheme may have stayed
    positive), ``floor_clipped`` marks paths clipped at the positivity floor,
    ``exploded`` marks paths frozen after leaving the explosion guard or
    producing non-finite values.
    """

    grid: TimeGrid
    states: Array
    controls: Array
    noise: NoiseBatch
    euler_crossed: Array
    floor_clipped: Array
    exploded: Array
    x0: Array
    label: str = ""

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    def take_paths(self, index: Array) -> "PathEnsemble":
        return PathEnsemble(
            grid=self.grid,
            states=self.states[index],
            controls=self.controls[index],
            noise=self.noise.take_paths(index),
            euler_crossed=self.euler_crossed[index],
            floor_clipped=self.floor_clipped[index],
            exploded=self.exploded[index],
            x0=self.x0,
            label=self.label,
        )

    def open_loop(self) -> OpenLoopControl:
        """The realized controls replayed as an open-loop law."""
        return OpenLoopControl(self.controls)


def _resolve_x0(problem: DiscountedProblem, x0, n_paths: int) -> Array:
    if x0 is None:
        base = problem.x0
    else:
        base = np.asarray(x0, dtype=float)
    if base.ndim <= 1:
        base = np.atleast_1d(base)
        if base.shape != (problem.state_dim,):
            raise ValueError("x0 must have shape (state_dim,)")
        return np.broadcast_to(base, (n_paths, problem.state_dim)).copy()
    if base.shape != (n_paths, problem.state_dim):
        raise ValueError("per-path x0 must be (n_paths, state_dim)")
    return base.copy()


def simulate_forward(
    problem: DiscountedProblem,
    law: ControlLaw,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    noise: NoiseBatch | None = None,
    x0=None,
    path_offset: int = 0,
    explosion_guard: float = EXPLOSION_GUARD,
    positivity_floor: float = POSITIVITY_FLOOR,
    max_explosion_fraction: float = 0.01,
) -> PathEnsemble:
    """Simulate the controlled SDE over ``grid`` and record the ensemble.

    Controls produced by ``law`` are clipped to the problem's box before they
    are applied and recorded.  Paths that leave the explosion guard or turn
    non-finite are frozen at their last finite value and flagged; the run
    errors out if more than ``max_explosion_fraction`` of paths explode.
    """
    n, d, k = problem.state_dim, problem.noise_dim, problem.control_dim
    if noise is None:
        noise = NoiseBatch.generate(seed, n_paths, grid.steps, d, grid.dt, path_offset)
    else:
        if noise.n_paths != n_paths or noise.n_steps != grid.steps or noise.noise_dim != d:
            raise ValueError("noise batch shape does not match the requested run")
        if abs(noise.dt - grid.dt) > 1e-15 * max(1.0, grid.dt):
            raise ValueError("noise batch dt does not match the grid")

    dt = grid.dt
    times = grid.times()
    x = _resolve_x0(problem, x0, n_paths)
    positive = problem.state_region is StateRegion.POSITIVE_HALF_LINE
    if positive and np.any(x <= 0):
        raise ValueError("initial states must be positive on the half-line")

    states = np.empty((n_paths, grid.steps + 1, n))
    controls = np.empty((n_paths, grid.steps, k))
    states[:, 0, :] = x
    crossed = np.zeros(n_paths, dtype=bool)
    clipped = np.zeros(n_paths, dtype=bool)
    exploded = np.zeros(n_paths, dtype=bool)

    coeff = problem.coefficients
    mult = problem.multiplicative if positive else None

    for i in range(grid.steps):
        t = times[i]
        u = np.asarray(law.control_at(i, t, x), dtype=float)
        u = problem.domain.clip(u)
        controls[:, i, :] = u
        dW = noise.increments[:, i, :]

        b = np.asarray(coeff.drift(x, u), dtype=float)
        sig = np.asarray(coeff.diffusion(x, u), dtype=float)
        euler = x + b * dt + np.einsum("pic,pc->pi", sig, dW)

        if mult is not None:
            rate = np.asarray(mult.linear_rate(u), dtype=float).reshape(n_paths)
            vol = mult.volatility
            core = x[:, 0] * np.exp((rate - 0.5 * vol * vol) * dt + vol * dW[:, 0])
            if mult.residual is not None:
                res = np.asarray(mult.residual(x, u), dtype=float).reshape(n_paths)
                core = core + res * dt
            x_new = core[:, None]
            crossed |= euler[:, 0] <= 0.0
            low = x_new[:, 0] <= positivity_floor
            if low.any():
                clipped |= low
                x_new[low, 0] = positivity_floor
        else:
            x_new = euler
            if positive:
                crossed |= euler[:, 0] <= 0.0
                low = x_new[:, 0] <= positivity_floor
                if low.any():
                    clipped |= low
                    x_new[low, 0] = positivity_floor

        bad = ~np.isfinite(x_new).all(axis=1) | (
            np.abs(x_new).max(axis=1) > explosion_guard
        )
        newly = bad & ~exploded
        if newly.any():
            exploded |= newly
        if exploded.any():
            x_new[exploded] = x[exploded]

        x = x_new
        states[:, i + 1, :] = x

    frac = float(exploded.mean())
    if frac > max_explosion_fraction:
        raise SimulationError(
            f"{frac:.1%} of paths exploded (guard {explosion_guard:g}); "
            "refine the grid or check the problem scaling"
        )

    return PathEnsemble(
        grid=grid,
        states=states,
        controls=controls,
        noise=noise,
        euler_crossed=crossed,
        floor_clipped=clipped,
        exploded=exploded,
        x0=states[:, 0, :].copy(),
    )


def weighted_time_integral(times: Array, node_values: Array, beta: float) -> Array:
    """Trapezoid of e^{-beta t} * v(t) over the grid, per leading row."""
    w = np.exp(-beta * times)
    return np.trapezoid(node_values * w, times, axis=-1)


def weighted_l2_norm(ensemble: PathEnsemble, beta: float) -> float:
    """Estimate of E integral e^{-beta t} |X_t|^2 dt over the grid horizon."""
    sq = np.einsum("pin,pin->pi", ensemble.states, ensemble.states)
    per_path = weighted_time_integral(ensemble.grid.times(), sq, beta)
    return float(per_path.mean())


def apriori_gap_check(
    problem: DiscountedProblem,
    law: ControlLaw,
    grid: TimeGrid,
    x0_a,
    x0_b,
    n_paths: int,
    seed: int,
    slack: float = 0.05,
) -> VerificationReport:
    """Two-start stability estimate for the forward flow under one control.

    Simulates the same law twice from x0_a and x0_b with identical noise and
    identical realized controls, and checks the running bound

        e^{-bt} E|D_t|^2 + (b - 2 mu1 - 2 L^2) E int_0^t e^{-bs}|D_s|^2 ds
            <= |x0_a - x0_b|^2        for every grid node t,

    where D is the path difference and b the discount rate.  The statistic
    is the largest left side over nodes; pass when it is at most
    rhs * (1 + slack) + 3 SE.  The looser combination sup + full integral is
    reported in details for reference (it can exceed the right side even in
    exact cases).
    """
    noise = NoiseBatch.generate(seed, n_paths, grid.steps, problem.noise_dim, grid.dt)
    ens_a = simulate_forward(problem, law, grid, n_paths, seed, noise=noise, x0=x0_a)
    # replay realized controls so both flows see the same control process
    ens_b = simulate_forward(
        problem, ens_a.open_loop(), grid, n_paths, seed, noise=noise, x0=x0_b
    )
    if ens_a.noise is not ens_b.noise:
        raise RuntimeError("noise coupling broken: the two flows must share one batch")

    diff = ens_a.states - ens_b.states
    sq = np.einsum("pin,pin->pi", diff, diff)
    times = grid.times()
    w = np.exp(-problem.beta * times)
    weighted = sq * w

    mean_weighted = weighted.mean(axis=0)
    margin = problem.beta - 2.0 * problem.constants.mu1 - 2.0 * problem.constants.L**2

    # cumulative trapezoid of the weighted second moment, per path
    dt = grid.dt
    seg = 0.5 * dt * (weighted[:, 1:] + weighted[:, :-1])
    cum = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(seg, axis=1)], axis=1)

    per_path_stat = weighted + margin * cum
    node_means = per_path_stat.mean(axis=0)
    i_star = int(np.argmax(node_means))
    statistic = float(node_means[i_star])
    se = float(per_path_stat[:, i_star].std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0

    rhs = float(np.sum((np.atleast_1d(x0_a) - np.atleast_1d(x0_b)) ** 2))
    tol = rhs * (1.0 + slack) + 3.0 * se
    status = PASS if statistic <= tol else FAIL
    loose = float(mean_weighted.max() + margin * cum.mean(axis=0)[-1])
    return VerificationReport(
        check="apriori_gap",
        status=status,
        statistic=statistic,
        tolerance=tol,
        n_samples=n_paths,
        standard_error=se,
        details={
            "rhs": rhs,
            "margin": margin,
            "sup_node": i_star,
            "sup_plus_full_integral": loose,
        },
        notes="running two-start bound; rhs is |x0_a - x0_b|^2",
    )


def comparison_check(
    problem: DiscountedProblem,
    law: ControlLaw,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    lower_control=None,
    upper_control=None,
    tol: float = 1e-9,
    max_violation_fraction: float = 1e-3,
) -> VerificationReport:
    """Sandwich check: envelope constant controls bracket the law's paths.

    Simulates the law and the two envelope constants under shared noise and
    reports the fraction of (path, step) nodes where the law's state escapes
    [lower - tol, upper + tol].  Envelope defaults come from
    ``problem.sandwich_controls``.
    """
    if lower_control is None or upper_control is None:
        if problem.sandwich_controls is None:
            raise ValueError("problem declares no sandwich controls")
        lower_control, upper_control = problem.sandwich_controls
    noise = NoiseBatch.generate(seed, n_paths, grid.steps, problem.noise_dim, grid.dt)
    ens = simulate_forward(problem, law, grid, n_paths, seed, noise=noise)
    ens_lo = simulate_forward(
        problem, ConstantControl(lower_control), grid, n_paths, seed, noise=noise
    )
    ens_hi = simulate_forward(
        problem, ConstantControl(upper_control), grid, n_paths, seed, noise=noise
    )
    below = ens.states[:, :, 0] < ens_lo.states[:, :, 0] - tol
    above = ens.states[:, :, 0] > ens_hi.states[:, :, 0] + tol
    bad = below | above
    frac = float(bad.mean())
    status = PASS if frac <= max_violation_fraction else FAIL
    return VerificationReport(
        check="sandwich",
        status=status,
        statistic=frac,
        tolerance=max_violation_fraction,
        n_samples=int(bad.size),
        details={
            "below_fraction": float(below.mean()),
            "above_fraction": float(above.mean()),
        },
        notes="fraction of nodes outside the envelope bracket",
    )


def positivity_check(ensemble: PathEnsemble) -> VerificationReport:
    """Report hard-zero crossing and explosion counts for an ensemble.

    Counts paths whose raw Euler candidate crossed <= 0 (even where the
    positivity-preserving step stayed positive), paths clipped at the floor,
    and paths that hit the explosion guard.
    """
    crossings = int(ensemble.euler_crossed.sum())
    clips = int(ensemble.floor_clipped.sum())
    explosions = int(ensemble.exploded.sum())
    status = PASS if crossings == 0 and clips == 0 and explosions == 0 else FAIL
    return VerificationReport(
        check="positivity",
        status=status,
        statistic=float(crossings + clips),
        tolerance=0.0,
        n_samples=ensemble.n_paths,
        details={
            "euler_crossings": crossings,
            "floor_clips": clips,
            "explosions": explosions,
        },
        notes="paths with any nonpositive Euler candidate / floor clip / explosion",
    )


def positivity_scan(
    problem: DiscountedProblem,
    law: ControlLaw,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    chunk: int = 4000,
) -> VerificationReport:
    """Streaming positivity check for ensembles too large to hold in memory.

    Identical counting to :func:`positivity_check` but simulates in path
    chunks (reproducing the unchunked run exactly, thanks to the keyed noise)
    and aggregates flags without storing trajectories.
    """
    crossings = clips = explosions = 0
    done = 0
    while done < n_paths:
        size = min(chunk, n_paths - done)
        ens = simulate_forward(
            problem, law, grid, size, seed, path_offset=done, max_explosion_fraction=1.1
        )
        crossings += int(ens.euler_crossed.sum())
        clips += int(ens.floor_clipped.sum())
        explosions += int(ens.exploded.sum())
        done += size
    status = PASS if crossings == 0 and clips == 0 and explosions == 0 else FAIL
    return VerificationReport(
        check="positivity",
        status=status,
        statistic=float(crossings + clips),
        tolerance=0.0,
        n_samples=n_paths,
        details={
            "euler_crossings": crossings,
            "floor_clips": clips,
            "explosions": explosions,
        },
        notes="streamed scan over path chunks",
    )


def lyapunov_value(x: Array) -> Array:
    """Lyapunov function V(x) = 1 + 1/x + x^2 on the positive half-line."""
    x = np.asarray(x, dtype=float)
    return 1.0 + 1.0 / x + x * x


@dataclass(frozen=True)
class RegionConstants:
    """Region split (0, r), [r, R], (R, inf) with drift bound C on the tails."""

    r: float
    R: float
    C: float

    def __post_init__(self) -> None:
        if not (0 < self.r < self.R):
            raise ValueError("need 0 < r < R")
        if self.C < 0:
            raise ValueError("C must be nonnegative")


def lyapunov_generator_check(
    problem: DiscountedProblem,
    x_samples: Array,
    regions: RegionConstants,
    controls=None,
) -> VerificationReport:
    """Generator drift test for V(x) = 1 + 1/x + x^2.

    Evaluates L V(x) = b(x,u) V'(x) + 0.5 sigma(x,u)^2 V''(x) at the sampled
    states and a set of constant controls (box corners by default), and finds
    the smallest K with L V <= K V per region.  The tail regions are compared
    with the reference constants

        near zero:   max(L^2 + C, L^2 + 2 mu1),
        large x:     max(L^2, 2 C + L^2),

    derived from the declared diffusion Lipschitz constant L, the drift
    monotonicity constant mu1 and the region drift bound C.  The middle
    region's empirical constant is reported but has no reference value.
    """
    if problem.state_dim != 1:
        raise ValueError("the Lyapunov check is scalar-state only")
    x = np.asarray(x_samples, dtype=float).reshape(-1)
    if np.any(x <= 0):
        raise ValueError("samples must be positive")
    if controls is None:
        controls = [problem.domain.lower, problem.domain.upper]

    xcol = x[:, None]
    v = lyapunov_value(x)
    vp = -1.0 / x**2 + 2.0 * x
    vpp = 2.0 / x**3 + 2.0

    worst_ratio = np.full(x.shape, -np.inf)
    for u_const in controls:
        u = np.broadcast_to(np.atleast_1d(u_const), (x.shape[0], problem.control_dim))
        b = np.asarray(problem.coefficients.drift(xcol, u), dtype=float)[:, 0]
        sig = np.asarray(problem.coefficients.diffusion(xcol, u), dtype=float)[:, 0, 0]
        gen = b * vp + 0.5 * sig * sig * vpp
        worst_ratio = np.maximum(worst_ratio, gen / v)

    consts = problem.constants
    k_near_ref = max(consts.L**2 + regions.C, consts.L**2 + 2.0 * consts.mu1)
    k_far_ref = max(consts.L**2, 2.0 * regions.C + consts.L**2)

    near = x < regions.r
    far = x > regions.R
    mid = ~near & ~far

    def region_max(mask) -> float:
        return float(worst_ratio[mask].max()) if mask.any() else -math.inf

    k_near = region_max(near)
    k_far = region_max(far)
    k_mid = region_max(mid)
    k_all = float(worst_ratio.max())

    ok = math.isfinite(k_all)
    if near.any():
        ok = ok and k_near <= k_near_ref + 1e-9
    if far.any():
        ok = ok and k_far <= k_far_ref + 1e-9
    return VerificationReport(
        check="lyapunov_generator",
        status=PASS if ok else FAIL,
        statistic=k_all,
        n_samples=int(x.shape[0]),
        details={
            "K_near": k_near,
            "K_near_reference": k_near_ref,
            "K_mid": k_mid,
            "K_far": k_far,
            "K_far_reference": k_far_ref,
            "r": regions.r,
            "R": regions.R,
            "C": regions.C,
        },
        notes="smallest K with LV <= K V per region; tails vs reference constants",
    )
