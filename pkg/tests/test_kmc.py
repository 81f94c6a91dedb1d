"""Event-driven simulator: rates, determinism, conservation laws,
stationarity, and the compiled/pure-Python twin paths."""

import numpy as np
import pytest
from scipy import stats

from zrplab.configurations import Configuration, total_mass
from zrplab.equilibrium import ProductMeasure, SiteMarginal
from zrplab.kmc import (
    PROSE_RATE_SCALE,
    ZRPSimulator,
    jump_rate,
    simulate,
)
from zrplab.lattice import TorusLattice


def small_config():
    return Configuration(TorusLattice(1, 8), 0.5, [3, 0, 1, 0, 2, 0, 0, 2])


# ------------------------------------------------------------------ rates


def test_jump_rate_formula():
    lat = TorusLattice(1, 2)
    c = Configuration(lat, 1.0, [2, 0])
    assert jump_rate(c, 0, 1, 2.0) == 8.0  # 4 * 2^2 / 2
    assert jump_rate(c, 1, 0, 2.0) == 0.0  # empty source site
    assert jump_rate(c, 0, 1, 2.0, rate_scale=PROSE_RATE_SCALE) == 16.0


def test_jump_rate_alpha_one_total_outrate():
    # total out-rate of a site is 2d slots * per-slot rate = N^2 d eta / chi
    lat = TorusLattice(1, 4)
    c = Configuration(lat, 0.5, [3, 0, 0, 0])
    per_slot = jump_rate(c, 0, 1, 1.0)
    assert abs(2 * per_slot - 16 * 1 * 1.5 / 0.5) < 1e-13


def test_jump_rate_rejects_non_neighbors():
    c = small_config()
    with pytest.raises(ValueError, match="not neighbors"):
        jump_rate(c, 0, 3, 2.0)
    with pytest.raises(ValueError, match="not neighbors"):
        jump_rate(c, 2, 2, 2.0)


def test_simulator_total_rate_matches_sum():
    c = small_config()
    sim = ZRPSimulator(c, 2.0, np.random.default_rng(0))
    expect = 64 / 0.5 * float((c.eta() ** 2).sum())
    assert abs(sim.total_rate() - expect) < 1e-12 * expect
    doubled = ZRPSimulator(c, 2.0, np.random.default_rng(0),
                           rate_scale=PROSE_RATE_SCALE)
    assert abs(doubled.total_rate() - 2 * sim.total_rate()) < 1e-12 * expect
    assert doubled.rate_bound == 2 * sim.rate_bound


def test_rejects_alpha_below_one():
    with pytest.raises(ValueError, match="alpha"):
        ZRPSimulator(small_config(), 0.5, np.random.default_rng(0))


# ----------------------------------------------------------- single steps


def test_step_moves_one_particle_to_a_neighbor():
    lat = TorusLattice(1, 4)
    for seed in range(40):
        sim = ZRPSimulator(Configuration(lat, 1.0, [1, 0, 0, 0]), 2.0,
                           np.random.default_rng(seed))
        dt, x, y = sim.step()
        assert dt > 0 and x == 0 and y in (1, 3)
        assert sim.counts.tolist().count(1) == 1 and sim.counts.sum() == 1


def test_step_neighbor_choice_is_balanced():
    lat = TorusLattice(1, 4)
    hits = {1: 0, 3: 0}
    for seed in range(200):
        sim = ZRPSimulator(Configuration(lat, 1.0, [1, 0, 0, 0]), 2.0,
                           np.random.default_rng(seed))
        hits[sim.step()[2]] += 1
    assert hits[1] >= 60 and hits[3] >= 60


def test_step_signals_absorption():
    sim = ZRPSimulator(Configuration(TorusLattice(1, 4), 1.0, [0, 0, 0, 0]),
                       2.0, np.random.default_rng(0))
    assert sim.absorbed and sim.step() is None


def test_two_ring_double_slot():
    # on N=2 both direction slots lead to the same neighbor
    sim = ZRPSimulator(Configuration(TorusLattice(1, 2), 1.0, [3, 0]), 2.0,
                       np.random.default_rng(3))
    _, x, y = sim.step()
    assert (x, y) == (0, 1)


def test_jump_applied_exactly_at_sample_time():
    # right-continuity: an event at precisely the grid time is included
    sim = ZRPSimulator(small_config(), 2.0, np.random.default_rng(1))
    sim.advance_to(0.0)  # prime the buffer and draw the first clock
    sim.fstate[1] = 0.5
    sim.advance_to(0.5)
    assert sim.event_count >= 1 and sim.time == 0.5


# ------------------------------------------------------------- simulate


def test_simulate_is_deterministic_per_stream():
    recs = [simulate(small_config(), 2.0, 0.05, [("mass", total_mass)],
                     grid=np.linspace(0, 0.05, 11),
                     rng=np.random.default_rng(123), keep_snapshots=True)
            for _ in range(2)]
    assert recs[0].event_count == recs[1].event_count
    assert np.array_equal(recs[0].values, recs[1].values)
    assert recs[0].snapshots[-1] == recs[1].snapshots[-1]


def test_reference_path_matches_compiled_bitwise():
    out = []
    for reference in (False, True):
        rec = simulate(small_config(), 2.0, 0.05, [("mass", total_mass)],
                       grid=np.linspace(0, 0.05, 11),
                       rng=np.random.default_rng(123), keep_snapshots=True,
                       reference=reference)
        out.append(rec)
    a, b = out
    assert a.event_count == b.event_count
    assert np.array_equal(a.values, b.values)
    assert all(sa == sb for sa, sb in zip(a.snapshots, b.snapshots))
    assert a.max_total_rate == b.max_total_rate


def test_mass_is_exactly_conserved():
    rec = simulate(small_config(), 2.0, 0.1, [("mass", total_mass)],
                   grid=[0.0, 0.05, 0.1], rng=np.random.default_rng(4),
                   keep_snapshots=True)
    assert np.unique(rec.values).tolist() == [0.5]
    assert all(s.counts.sum() == 8 for s in rec.snapshots)
    assert (rec.snapshots[-1].counts >= 0).all()


def test_zero_length_run_returns_initial():
    c = small_config()
    rec = simulate(c, 2.0, 0.0, [("mass", total_mass)], grid=[0.0],
                   rng=np.random.default_rng(0), keep_snapshots=True)
    assert rec.event_count == 0 and not rec.truncated
    assert rec.snapshots[0] == c and rec.observable("mass")[0] == 0.5


def test_empty_configuration_absorbs():
    c = Configuration(TorusLattice(1, 8), 0.5, np.zeros(8, dtype=int))
    rec = simulate(c, 2.0, 1.0, [("mass", total_mass)], grid=[0.0, 0.5, 1.0],
                   rng=np.random.default_rng(0))
    assert rec.absorbed and rec.event_count == 0
    assert rec.times.tolist() == [0.0, 0.5, 1.0]
    assert np.unique(rec.values).tolist() == [0.0]


def test_event_budget_truncates_record():
    rec = simulate(small_config(), 2.0, 10.0, [("mass", total_mass)],
                   grid=[0.0, 5.0, 10.0], rng=np.random.default_rng(5),
                   max_events=10)
    assert rec.truncated and rec.event_count == 10
    assert rec.times.tolist() == [0.0]


def test_simulate_validates_inputs():
    c = small_config()
    with pytest.raises(ValueError, match="rng"):
        simulate(c, 2.0, 1.0)
    with pytest.raises(ValueError, match="increasing"):
        simulate(c, 2.0, 1.0, grid=[0.0, 0.5, 0.5], rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="inside"):
        simulate(c, 2.0, 1.0, grid=[0.0, 2.0], rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="nonnegative"):
        simulate(c, 2.0, -1.0, rng=np.random.default_rng(0))


def test_stream_id_is_recorded():
    rec = simulate(small_config(), 2.0, 0.01, rng=np.random.default_rng(0),
                   stream_id=7)
    assert rec.stream_id == 7


# ------------------------------------------------------------ bookkeeping


def test_rate_bound_never_exceeded_and_drift_tiny():
    rec = simulate(small_config(), 2.0, 0.5, rng=np.random.default_rng(6),
                   grid=[0.5], rebuild_interval=64)
    assert rec.max_total_rate <= rec.rate_bound
    assert rec.max_rebuild_drift < 1e-9


def test_rebuild_every_event_matches_incremental():
    # rebuilding after every single event must agree with the running root
    rec = simulate(small_config(), 2.0, 0.05, rng=np.random.default_rng(8),
                   grid=[0.05], rebuild_interval=1)
    assert rec.event_count > 0
    assert rec.max_rebuild_drift < 1e-12


def test_rate_bound_violation_raises():
    sim = ZRPSimulator(small_config(), 2.0, np.random.default_rng(0))
    sim.fstate[2] = 2 * sim.rate_bound  # corrupt the running max
    with pytest.raises(RuntimeError, match="rate"):
        sim.advance_to(0.01)


def test_advance_backwards_rejected():
    sim = ZRPSimulator(small_config(), 2.0, np.random.default_rng(0))
    sim.advance_to(0.01)
    with pytest.raises(ValueError, match="backwards"):
        sim.advance_to(0.005)


# ------------------------------------------------------------- physics


def test_stationarity_chi_square():
    # started from the product measure, the site-0 occupation at t=1 keeps
    # the single-site law (10^4 trajectories, significance 1e-3)
    lat = TorusLattice(1, 4)
    mu = ProductMeasure.constant(lat, 2.0, 0.5, 1.0)
    marg = SiteMarginal(2.0, 0.5, 1.0)
    rng = np.random.default_rng(20260819)
    draws = np.zeros(10_000, dtype=np.int64)
    for i in range(draws.size):
        rec = simulate(mu.sample(rng), 2.0, 1.0, grid=[1.0], rng=rng,
                       keep_snapshots=True)
        draws[i] = rec.snapshots[0].counts[0]
    probs = marg.probs
    cut = 0
    for k in range(len(probs)):
        if probs[k:].sum() * draws.size < 5:
            break
        cut = k + 1
    binned = np.concatenate([probs[:cut], [probs[cut:].sum()]])
    hist = np.bincount(np.minimum(draws, cut), minlength=cut + 1)
    chi2 = float(((hist - draws.size * binned) ** 2
                  / (draws.size * binned)).sum())
    assert stats.chi2.sf(chi2, cut) > 1e-3


def test_linear_case_relaxes_toward_uniform():
    # alpha=1 ensemble-mean profile flattens: L1 distance to uniform
    # decreases along the run (20 trajectories)
    N = 32
    counts = np.zeros(N, dtype=np.int64)
    counts[:16] = 8
    init = Configuration(TorusLattice(1, N), 1 / N, counts)
    rng = np.random.default_rng(7)
    profiles = np.zeros((3, N))
    for _ in range(20):
        rec = simulate(init, 1.0, 0.02, grid=[0.0, 0.005, 0.02], rng=rng,
                       keep_snapshots=True)
        for j, snap in enumerate(rec.snapshots):
            profiles[j] += snap.eta()
    profiles /= 20
    uniform = profiles[0].mean()
    l1 = [float(np.abs(p - uniform).mean()) for p in profiles]
    assert l1[0] > l1[1] > l1[2]
