"""Hybrid jump/flow simulation: flow accuracy, hazard law, conservation.

Oracles: closed-form linear ODE solutions, the exponential law of
constant-rate jumps, the Rayleigh law of a linearly growing hazard, and
the birth-death stationary mean of the titration intermediate.
"""

import numpy as np
import pytest
from scipy import stats as sps

from mscrn.classify import classify, conserved_basis
from mscrn.errors import MissingRates, NegativeRate
from mscrn.model import State
from mscrn.pdmp import (HybridSystem, OdeConfig, build_limit_system,
                        simulate_conditional_fast, simulate_pdmp)


def test_jump_free_linear_ode():
    # dv/dt = k3*g - k4*v with g=1, k3=2, k4=1, v(0)=0:
    # v(t) = 2(1 - exp(-t)); terminal error within 10x relative tolerance
    k3, k4 = 2.0, 1.0
    system = HybridSystem(
        labels=("P",),
        jumps=(),
        flows=(
            (lambda v: k3 * 1.0, np.array([1.0])),
            (lambda v: k4 * v[0], np.array([-1.0])),
        ))
    cfg = OdeConfig(rel_tol=1e-6, abs_tol=1e-9)
    traj = simulate_pdmp(system, [0.0], t_end=1.0, seed=0, ode_config=cfg)
    expected = 2.0 * (1.0 - np.exp(-1.0))
    assert traj.final_state[0] == pytest.approx(expected, rel=1e-5)
    assert traj.event_counts.size == 0


def test_grid_recording_matches_closed_form():
    system = HybridSystem(("P",), (), ((lambda v: 2.0, np.array([1.0])),
                                       (lambda v: v[0], np.array([-1.0]))))
    grid = np.linspace(0.1, 2.0, 8)
    traj = simulate_pdmp(system, [0.0], t_end=2.0, seed=0, record=grid)
    expected = 2.0 * (1.0 - np.exp(-grid))
    assert np.allclose(traj.states[:, 0], expected, rtol=1e-5, atol=1e-8)


def test_constant_rate_interjump_exponential():
    # lambda = 3 constant, no flow: inter-jump gaps are Exp(3);
    # KS test at the 1% level on >= 10^4 samples
    system = HybridSystem(("X",), ((lambda v: 3.0, np.array([1], dtype=np.int64)),), ())
    traj = simulate_pdmp(system, [0.0], t_end=4000.0, seed=5, record="events")
    jump_times = np.array([t for t, _ in traj.event_log])
    assert len(jump_times) >= 10_000
    gaps = np.diff(np.concatenate([[0.0], jump_times]))[:10_000]
    stat = sps.kstest(gaps, "expon", args=(0, 1 / 3.0))
    assert stat.pvalue > 0.01


def test_hazard_integration_rayleigh_law():
    # dv/dt = 1 with jump rate v: hazard t^2/2, first jump ~ Rayleigh(1)
    system = HybridSystem(
        ("V",),
        ((lambda v: v[0], np.array([0], dtype=np.int64)),),
        ((lambda v: 1.0, np.array([1.0])),))
    first_times = []
    for r in range(1200):
        traj = simulate_pdmp(system, [0.0], t_end=6.0, seed=1000 + r, record="events")
        assert traj.event_log, "expected at least one jump by t=6"
        first_times.append(traj.event_log[0][0])
    stat = sps.kstest(np.array(first_times), "rayleigh")
    assert stat.pvalue > 0.01


def test_state_dependent_jump_selection():
    # two competing constant-rate jumps 1 and 3: counts split 1:3
    system = HybridSystem(
        ("X",),
        ((lambda v: 1.0, np.array([1], dtype=np.int64)),
         (lambda v: 3.0, np.array([1], dtype=np.int64))),
        ())
    traj = simulate_pdmp(system, [0.0], t_end=3000.0, seed=8)
    total = traj.event_counts.sum()
    frac = traj.event_counts[1] / total
    se = np.sqrt(0.75 * 0.25 / total)
    assert abs(frac - 0.75) < 4 * se


def test_negative_rate_aborts():
    system = HybridSystem(("X",), (), ((lambda v: 1.0, np.array([-1.0])),))
    with pytest.raises(NegativeRate):
        simulate_pdmp(system, [0.05], t_end=10.0, seed=0)


def test_conditional_fast_birth_death_mean(ab_doc):
    # fast intermediate given v_A = 1: birth 1, death (1+1)B,
    # stationary mean 1/(1+1) = 0.5; batch-means error bar
    c = classify(ab_doc.model, ab_doc.scaling)
    frozen = np.array([1.0, 0.0])
    traj = simulate_conditional_fast(c, frozen, [0.0], t_end=20_000.0, seed=3,
                                     record="events")
    times = np.concatenate([[0.0], traj.times[1:]])
    values = traj.states[:-1, 0]
    dt = np.diff(traj.times)
    start = np.searchsorted(traj.times[:-1], 500.0)
    dt, values = dt[start:], values[start:]
    batches = np.array_split(np.arange(len(dt)), 20)
    means = np.array([np.sum(values[b] * dt[b]) / np.sum(dt[b]) for b in batches])
    estimate = means.mean()
    se = means.std(ddof=1) / np.sqrt(len(means))
    assert abs(estimate - 0.5) < 3 * se + 1e-3


def test_conditional_fast_zero_rates_constant(conserved_doc):
    # freezing the context of a fast pair with nothing to do: empty jump
    # activity when rates vanish (all molecules absent)
    c = classify(conserved_doc.model, conserved_doc.scaling)
    frozen = np.zeros(3)
    traj = simulate_conditional_fast(c, frozen, [0.0, 0.0], t_end=5.0, seed=0)
    assert traj.event_counts.sum() == 0
    assert np.array_equal(traj.final_state, [0.0, 0.0])


def test_conditional_fast_conserves_theta(conserved_doc):
    # activation/deactivation pair: E + Ea exactly constant along the path
    c = classify(conserved_doc.model, conserved_doc.scaling)
    basis = conserved_basis(c)
    assert basis.vectors == ((1, 1),)
    frozen = np.array([0.0, 0.0, 0.0])
    traj = simulate_conditional_fast(c, frozen, [5.0, 2.0], t_end=50.0, seed=4,
                                     record="events")
    assert traj.event_counts.sum() > 100
    totals = traj.states @ np.array([1.0, 1.0])
    assert np.all(totals == 7.0)


def test_pure_jump_engine_matches_ssa():
    # the hybrid engine's pure-jump path and the stochastic engine are
    # independent implementations of the same chain: cross-validate the
    # mean of a birth-death model at t=1 (exact mean 5(1-e^-1))
    from mscrn import rng as rng_mod
    from mscrn.parser import parse_model
    from mscrn.ssa import SimulationConfig, run_ensemble
    from mscrn.model import State

    text = ("species X alpha=0\n"
            "reaction 0 -> X @ mass-action kappa=5\n"
            "reaction X -> 0 @ mass-action kappa=1\n")
    model, scaling = parse_model(text)
    cfg = SimulationConfig(N=1, t_end=1.0, seed=31, record=[1.0])
    ssa_stats = run_ensemble(model, scaling, cfg, 4000, ["X"],
                             x0=State(np.array([0.0])))

    system = HybridSystem(
        ("X",),
        ((lambda v: 5.0, np.array([1], dtype=np.int64)),
         (lambda v: v[0], np.array([-1], dtype=np.int64))),
        ())
    finals = np.empty(4000)
    for r in range(4000):
        traj = simulate_pdmp(system, [0.0], t_end=1.0, rng=rng_mod.stream(77, r))
        finals[r] = traj.final_state[0]
    exact = 5 * (1 - np.exp(-1))
    se_ssa = ssa_stats.standard_error()[0, 0]
    se_pdmp = finals.std(ddof=1) / np.sqrt(len(finals))
    assert abs(ssa_stats.mean[0, 0] - exact) < 3 * se_ssa
    assert abs(finals.mean() - exact) < 3 * se_pdmp


def test_build_limit_system_gene(gene_doc):
    c = classify(gene_doc.model, gene_doc.scaling)
    from mscrn.model import scaled_rate_function
    rates = {k: scaled_rate_function(gene_doc.model, k) for k in range(4)}
    system = build_limit_system(c, rates)
    assert system.labels == ("G", "Ga", "P")
    assert len(system.jumps) == 2   # activation, deactivation
    assert len(system.flows) == 2   # production, degradation
    jump_vectors = sorted(tuple(vec) for _, vec in system.jumps)
    assert jump_vectors == [(-1, 1, 0), (1, -1, 0)]
    flow_vectors = sorted(tuple(vec) for _, vec in system.flows)
    assert flow_vectors == [(0.0, 0.0, -1.0), (0.0, 0.0, 1.0)]


def test_build_limit_system_missing_rates(gene_doc):
    c = classify(gene_doc.model, gene_doc.scaling)
    with pytest.raises(MissingRates):
        build_limit_system(c, {0: lambda v: 1.0})


def test_gene_limit_flow_between_jumps(gene_doc):
    # with the gene frozen active (jumps suppressed by zero rates),
    # the protein follows v' = k3 - k4 v exactly
    c = classify(gene_doc.model, gene_doc.scaling)
    rates = {
        0: lambda v: 0.0,
        1: lambda v: 0.0,
        2: lambda v: 2.0 * v[1],
        3: lambda v: 1.0 * v[2],
    }
    system = build_limit_system(c, rates)
    traj = simulate_pdmp(system, [0.0, 1.0, 0.0], t_end=1.0, seed=0)
    assert traj.final_state[2] == pytest.approx(2 * (1 - np.exp(-1)), rel=1e-5)
