"""Optimality certification checks."""
import dataclasses
import math

import numpy as np
import pytest

from smpsolve import (
    ConstantControl,
    RegressionBasis,
    TimeGrid,
    check_identities,
    check_pointwise_max,
    check_tvc,
    compare_costs,
    cost_functional_mc,
    path_costs,
    simulate_forward,
    solve_bsde_lsmc,
)
from smpsolve.experiments import (
    ConsumptionParams,
    LogisticParams,
    ProductionPlanningParams,
    consumption_competitors,
    consumption_optimal_law,
    consumption_problem,
    consumption_sample_spec,
    logistic_problem,
    logistic_sample_spec,
    production_optimal_law,
    production_problem,
    production_sample_spec,
)

CONS_BASIS = RegressionBasis(degree=4, reciprocal=True)
PROD_BASIS = RegressionBasis(degree=4)


class TestPathCosts:
    def test_deterministic_cost_matches_quadrature(self):
        # sigma = 0 and u = eta freeze the state, so the integrand is constant
        params = ProductionPlanningParams(sigma=0.0)
        problem = production_problem(params)
        grid = TimeGrid(horizon=10.0, steps=2000)
        ens = simulate_forward(problem, ConstantControl([params.eta]), grid, 2, seed=0)
        j = path_costs(problem, ens)
        rate = -params.h * (params.x0 - params.x1) ** 2
        want = rate * (1.0 - math.exp(-params.beta * 10.0)) / params.beta
        assert j == pytest.approx(want, rel=1e-5)

    def test_mc_estimate_summarizes_paths(self):
        params = ConsumptionParams()
        problem = consumption_problem(params)
        grid = TimeGrid(horizon=2.0, steps=40)
        ens = simulate_forward(problem, consumption_optimal_law(params), grid, 300, seed=1)
        j = path_costs(problem, ens)
        est = cost_functional_mc(problem, ens, label="candidate")
        assert est.value == pytest.approx(float(j.mean()))
        assert est.standard_error == pytest.approx(float(j.std(ddof=1) / math.sqrt(300)))
        assert est.n_paths == 300
        assert est.label == "candidate"


class TestPointwiseMax:
    def test_optimal_law_has_negligible_gap(self):
        params = ProductionPlanningParams()
        problem = production_problem(params)
        grid = TimeGrid(horizon=12.0, steps=240)
        ens = simulate_forward(problem, production_optimal_law(params), grid, 3000, seed=2)
        sol = solve_bsde_lsmc(problem, ens, PROD_BASIS)
        # sample clear of the terminal layer where the zero-terminal costate
        # departs from the stationary policy
        report = check_pointwise_max(problem, ens, sol, n_points=4000, tol=1e-3, max_time=6.0)
        assert report.status == "pass"
        assert report.statistic <= 1e-3

    def test_far_from_optimal_law_fails(self):
        params = ProductionPlanningParams()
        problem = production_problem(params)
        grid = TimeGrid(horizon=8.0, steps=160)
        ens = simulate_forward(problem, ConstantControl([params.u_high]), grid, 2000, seed=3)
        sol = solve_bsde_lsmc(problem, ens, PROD_BASIS)
        report = check_pointwise_max(problem, ens, sol, n_points=4000, tol=1e-3, max_time=6.0)
        assert report.status == "fail"
        assert report.statistic > 0.01


class TestTransversality:
    def _setup(self, n_paths=2000, horizon=8.0, steps=160):
        params = ConsumptionParams()
        problem = consumption_problem(params)
        grid = TimeGrid(horizon=horizon, steps=steps)
        ens = simulate_forward(problem, consumption_optimal_law(params), grid, n_paths, seed=4)
        sol = solve_bsde_lsmc(problem, ens, CONS_BASIS)
        return params, problem, grid, ens, sol

    def test_direct_route_with_heavier_consumption(self):
        params, problem, grid, ens, sol = self._setup()
        rival = simulate_forward(
            problem, ConstantControl([params.cap]), grid, ens.n_paths, seed=4, noise=ens.noise
        )
        report = check_tvc(problem, ens, sol, rival)
        assert report.status == "pass"
        assert "route" not in report.details

    def test_implied_route_with_lighter_consumption(self):
        params, problem, grid, ens, sol = self._setup()
        quarter = 0.25 * params.resolved_beta()
        rival = simulate_forward(
            problem, ConstantControl([quarter]), grid, ens.n_paths, seed=4, noise=ens.noise
        )
        report = check_tvc(problem, ens, sol, rival)
        assert report.status == "pass"
        assert report.details.get("route") == "integrability"
        assert report.details["tail_decay_rate"] < 0.0

    def test_grid_mismatch_rejected(self):
        params, problem, grid, ens, sol = self._setup(n_paths=100, horizon=2.0, steps=20)
        other = simulate_forward(
            problem, ConstantControl([params.cap]), TimeGrid(horizon=2.0, steps=10), 100, seed=4
        )
        with pytest.raises(ValueError):
            check_tvc(problem, ens, sol, other)


class TestCostComparison:
    def test_optimal_candidate_dominates(self):
        params = ConsumptionParams()
        problem = consumption_problem(params)
        grid = TimeGrid(horizon=8.0, steps=160)
        cand = simulate_forward(problem, consumption_optimal_law(params), grid, 3000, seed=5)
        rivals = {
            name: simulate_forward(problem, law, grid, 3000, seed=5, noise=cand.noise)
            for name, law in consumption_competitors(params).items()
        }
        report = compare_costs(problem, cand, rivals)
        assert report.status == "pass"
        assert len(report.details["competitors"]) >= 7
        for row in report.details["competitors"].values():
            assert row["dominated"]
            assert row["mean_gain"] >= -2.0 * row["standard_error"]

    def test_beaten_candidate_fails(self):
        params = ConsumptionParams()
        problem = consumption_problem(params)
        grid = TimeGrid(horizon=8.0, steps=160)
        cand = simulate_forward(problem, ConstantControl([0.05]), grid, 2000, seed=6)
        rival = simulate_forward(
            problem, consumption_optimal_law(params), grid, 2000, seed=6, noise=cand.noise
        )
        report = compare_costs(problem, cand, {"optimal": rival})
        assert report.status == "fail"
        assert not report.details["competitors"]["optimal"]["dominated"]

    def test_path_count_mismatch_rejected(self):
        params = ConsumptionParams()
        problem = consumption_problem(params)
        grid = TimeGrid(horizon=1.0, steps=10)
        cand = simulate_forward(problem, consumption_optimal_law(params), grid, 50, seed=0)
        rival = simulate_forward(problem, consumption_optimal_law(params), grid, 40, seed=0)
        with pytest.raises(ValueError):
            compare_costs(problem, cand, {"short": rival})


class TestIdentities:
    @pytest.mark.parametrize(
        "problem,spec",
        [
            pytest.param(
                consumption_problem(ConsumptionParams()),
                consumption_sample_spec(ConsumptionParams()),
                id="consumption",
            ),
            pytest.param(
                production_problem(ProductionPlanningParams()),
                production_sample_spec(ProductionPlanningParams()),
                id="production",
            ),
            pytest.param(
                logistic_problem(LogisticParams()),
                logistic_sample_spec(LogisticParams()),
                id="logistic",
            ),
        ],
    )
    def test_examples_pass(self, problem, spec):
        report = check_identities(problem, spec)
        assert report.status == "pass"
        assert report.statistic <= 1e-12
        assert report.details["gradient_gap"] <= 1e-6

    def test_wrong_gradient_is_caught(self):
        params = ProductionPlanningParams()
        problem = production_problem(params)
        broken_coeffs = dataclasses.replace(
            problem.coefficients, grad_cost=lambda x, u: np.ones_like(x)
        )
        broken = dataclasses.replace(problem, coefficients=broken_coeffs)
        report = check_identities(broken, production_sample_spec(params))
        assert report.status == "fail"
        assert report.details["gradient_gap"] > 1e-6
