"""Acceptance criteria 1-10, each at its stated tolerance and runtime budget.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the
PASS/FAIL line printed by every criterion; the lines are also repeated in
the terminal summary of any pytest run that includes this file.
"""

import math

import numpy as np
import pytest

from conftest import criterion
from oracles import HierarchicalSampler, grid_bayes_posterior, random_admissible_values

from gglab import (GameParams, GridFunction, IntegrationScheme, ObservationVector, apply_T,
                   banach_params, check_conditions, check_lipschitz, compute_coefficients,
                   fuse_gaussian_observations, nonexistence_witness, peer_conditional_law, solve,
                   verify_equilibrium)
from gglab.cli import main
from gglab.engine import integration_error
from gglab.grid import default_grid


def _log_uniform(rng, lo, hi, size=None):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def test_c01_coefficient_identities():
    with criterion(1, "a + (n-1)b = 1 and c + d = 1 on 1000 instances", budget=1.0) as d:
        rng = np.random.default_rng(101)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            s2, t2 = _log_uniform(rng, 0.01, 100, 2)
            c = compute_coefficients(GameParams(n, float(s2), float(t2)))
            worst = max(worst, abs(c.a_n + (n - 1) * c.b_n - 1), abs(c.c_n + c.d_n - 1))
        assert worst <= 1e-12, worst
        d["msg"] = f"max deviation {worst:.1e}"


def test_c02_fusion_matches_grid_bayes():
    with criterion(2, "fusion vs grid-Bayes posterior on 100 cases", budget=10.0) as d:
        rng = np.random.default_rng(202)
        worst_m = worst_v = 0.0
        for _ in range(100):
            k = int(rng.integers(1, 8))
            obs = [(float(rng.normal(0, 5)), float(_log_uniform(rng, 0.01, 100))) for _ in range(k)]
            mean, var = fuse_gaussian_observations(obs)
            om, ov = grid_bayes_posterior(obs, points=10**5, width=10.0)
            worst_m = max(worst_m, abs(mean - om))
            worst_v = max(worst_v, abs(var - ov))
        assert worst_m <= 1e-6 and worst_v <= 1e-6, (worst_m, worst_v)
        d["msg"] = f"max |mean err| {worst_m:.1e}, max |var err| {worst_v:.1e}"


def _moment_check(n, s2, t2, samples, rng):
    params = GameParams(n, s2, t2)
    coeffs = compute_coefficients(params)
    y0 = rng.normal(1.0, 3.0, n)
    sampler = HierarchicalSampler(n, s2, t2, y0)
    _, x, relay = sampler.draw(samples, rng)
    worst = 0.0
    for k in range(n - 1):
        law = peer_conditional_law(coeffs, ObservationVector.from_array(y0), k)
        peer = k + 1
        others = [j for j in range(1, n) if j != peer]
        block = np.stack([x[:, peer]] + [relay[:, j, peer] for j in others], axis=1)
        emp_mean = block.mean(axis=0)
        emp_cov = np.cov(block, rowvar=False).reshape(n - 1, n - 1)
        se_mean = np.sqrt(np.diag(emp_cov) / samples)
        z_mean = np.abs(emp_mean - law.mean) / se_mean
        dvar = np.diag(emp_cov)
        se_cov = np.sqrt((np.outer(dvar, dvar) + emp_cov**2) / samples)
        z_cov = np.abs(emp_cov - law.cov_eps) / se_cov
        back = relay[:, 0, peer]
        z_back_mean = abs(back.mean() - law.x_i) / math.sqrt(law.var_eps_ik / samples)
        z_back_var = abs(back.var(ddof=1) - law.var_eps_ik) / (law.var_eps_ik * math.sqrt(2 / samples))
        # the back relay must be uncorrelated with the block
        corr = np.array([np.corrcoef(back, block[:, m])[0, 1] for m in range(n - 1)])
        z_corr = np.abs(corr) * math.sqrt(samples)
        worst = max(worst, z_mean.max(), z_cov.max(), z_back_mean, z_back_var, z_corr.max())
        assert abs(law.cov_eps[0, 0] - coeffs.gamma2_n) <= 1e-10
    return worst


def test_c03_conditional_law_matches_generative_model():
    with criterion(3, "conditional peer law vs 1e6 generative samples", budget=60.0) as d:
        rng = np.random.default_rng(303)
        worst = 0.0
        for n, s2, t2 in [(2, 1.0, 9.0), (2, 2.0, 0.5), (3, 1.0, 1.0), (3, 4.0, 5.0)]:
            worst = max(worst, _moment_check(n, s2, t2, 10**6, rng))
        assert worst <= 3.0, f"worst discrepancy {worst:.2f} standard errors"
        d["msg"] = f"worst discrepancy {worst:.2f} SE; cov_eps[0][0] = gamma2 to 1e-10"


def test_c04_reference_run_convergence_profile(n2_reference_solution):
    with criterion(4, "n=2 reference run: <=1e-4 within 50 iterations, iter 8 <= 1e-2") as d:
        tf, diag, elapsed = n2_reference_solution
        assert diag.converged and diag.sup_deltas[-1] <= 1e-4
        assert diag.iterations <= 50
        assert diag.sup_deltas[7] <= 1e-2, diag.sup_deltas[7]
        assert elapsed < 60.0
        d["msg"] = (f"{diag.iterations} iterations, delta_8 = {diag.sup_deltas[7]:.2e}, "
                    f"final {diag.sup_deltas[-1]:.2e}, {elapsed:.2f}s")


def test_c05_fixed_point_residual(n2_reference_solution):
    with criterion(5, "fixed-point residual ||Tg - g|| <= 2e-4", budget=5.0) as d:
        tf, _, _ = n2_reference_solution
        tg = apply_T(tf.g, tf.coeffs, IntegrationScheme.gauss_hermite(32))
        residual = tg.sup_distance(tf.g)
        assert residual <= 2e-4, residual
        d["msg"] = f"residual {residual:.2e}"


def test_c06_equilibrium_verification(n2_reference_solution):
    with criterion(6, "200 stratified probes, 1e5 samples each, seed 0", budget=300.0) as d:
        tf, _, _ = n2_reference_solution
        summary = verify_equilibrium(tf, probe_count=200, samples=10**5, seed=0)
        d["msg"] = (f"near in band {summary.near_in_band}/{summary.near_probes}, "
                    f"far consistent {summary.far_consistent}/{summary.far_probes}")
        worst_near = max((abs(r.gap) / r.mc_stderr for r, nr in zip(summary.reports, summary.near_mask)
                          if nr), default=0.0)
        far_ok = summary.far_consistent >= 0.99 * summary.far_probes
        near_ok = summary.near_in_band == summary.near_probes
        assert far_ok and near_ok, d["msg"] + f"; worst near-root gap {worst_near:.2f} standard errors"


def test_c07_banach_uniqueness():
    with criterion(7, "two starts agree under w_n < tau; geometric deltas", budget=120.0) as d:
        details = []
        for n in (2, 3):
            params = banach_params(n, 3.0)
            report = check_conditions(params)
            assert report.banach_ok
            coeffs = compute_coefficients(params)
            if n == 2:
                spec, scheme = default_grid(coeffs), IntegrationScheme.gauss_hermite(32)
            else:
                spec, scheme = default_grid(coeffs, points=17), IntegrationScheme.gauss_hermite(12)
            tol = 1e-8
            runs = []
            for start in (1.0, float(n)):
                tf, diag = solve(params, scheme, g0=GridFunction.constant(spec, start, coeffs), tol=tol)
                assert diag.converged
                deltas = diag.sup_deltas
                ratios = [b / a for a, b in zip(deltas, deltas[1:]) if a > 0]
                assert all(r <= report.contraction_factor + 0.05 for r in ratios), ratios
                runs.append(tf.g)
            gap = runs[0].sup_distance(runs[1])
            assert gap <= 2 * tol, gap
            details.append(f"n={n}: factor {report.contraction_factor:.3f}, gap {gap:.1e}")
        d["msg"] = "; ".join(details)


def test_c08_linear_threshold_profiles_are_refuted():
    with criterion(8, "witnesses refute 20 random linear profiles, n in {2,3}, both sides",
                   budget=120.0) as d:
        rng = np.random.default_rng(808)
        refuted = 0
        total = 0
        for n in (2, 3):
            params = GameParams(n, 1.0, 1.0)
            for trial in range(20):
                t = rng.uniform(1.0, n, n)
                for direction in ("below", "above"):
                    total += 1
                    found = False
                    for agent in range(n):
                        w = nonexistence_witness(params, t, eps=0.01, M=1e6, agent=agent,
                                                 direction=direction, samples=10**5,
                                                 seed=1000 * trial + agent)
                        assert abs(w.posterior_mean - w.target[0]) <= 1e-8 * max(1.0, abs(w.target[0]))
                        if w.violated:
                            found = True
                            break
                    assert found, f"no violated best response for n={n}, t={t}, {direction}"
                    refuted += 1
        d["msg"] = f"{refuted}/{total} (profile, direction) pairs refuted at 99% confidence"


def _random_admissible(spec, coeffs, rng):
    return GridFunction(spec, random_admissible_values(spec, coeffs.a_n, coeffs.n, rng),
                        coeffs.a_n, (1.0, float(coeffs.n)))


def test_c09_lipschitz_and_contraction_properties():
    with criterion(9, "Lipschitz preservation (100 g) and contraction (50 pairs)", budget=300.0) as d:
        params = banach_params(2, 3.0)
        coeffs = compute_coefficients(params)
        report = check_conditions(params)
        assert report.lipschitz_ok
        spec = default_grid(coeffs, points=129)
        scheme = IntegrationScheme.gauss_hermite(32)
        rng = np.random.default_rng(909)
        worst_ratio = 0.0
        for _ in range(100):
            g = _random_admissible(spec, coeffs, rng)
            assert check_lipschitz(g)[0]
            ok, ratio = check_lipschitz(apply_T(g, coeffs, scheme))
            assert ok, ratio
            worst_ratio = max(worst_ratio, ratio)
        worst_excess = -math.inf
        for _ in range(50):
            g1, g2 = _random_admissible(spec, coeffs, rng), _random_admissible(spec, coeffs, rng)
            dist = g1.sup_distance(g2)
            out = apply_T(g1, coeffs, scheme).sup_distance(apply_T(g2, coeffs, scheme))
            allowance = 10 * (integration_error(g1, coeffs, scheme) + integration_error(g2, coeffs, scheme))
            bound = report.contraction_factor * dist + allowance
            assert out <= bound, (out, bound)
            worst_excess = max(worst_excess, out / dist - report.contraction_factor)
        d["msg"] = (f"worst output Lipschitz ratio {worst_ratio:.3f}; "
                    f"max (empirical - factor {report.contraction_factor:.3f}) = {worst_excess:.3f}")


def test_c10_solve_artifacts_are_byte_identical(tmp_path, capsys):
    with criterion(10, "cmd_solve twice gives byte-identical artifacts") as d:
        configs = [
            ["--grid-lo", "-30", "--grid-hi", "40", "--grid-points", "257", "--tol", "1e-4", "--max-iter", "50"],
            ["--scheme", "mc", "--mc-samples", "10000", "--seed", "7", "--grid-points", "65", "--max-iter", "5"],
        ]
        compared = 0
        for idx, extra in enumerate(configs):
            dirs = []
            for rep in range(2):
                out = tmp_path / f"c{idx}_r{rep}"
                main(["solve", "--out", str(out), "--dump-iterates"] + extra)
                dirs.append(out)
            files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
            assert files
            for rel in files:
                assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes(), rel
                compared += 1
            assert sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file()) == files
        capsys.readouterr()
        d["msg"] = f"{compared} files compared"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
