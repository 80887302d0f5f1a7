"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Lines are printed as the tests run (visible with ``-s``) and collected again
in the "acceptance criteria" section at the end of the pytest report.
"""

import itertools
import math
import random
import re
import time
from fractions import Fraction

import pytest

from consensus_lab.checks import (
    global_invariant_residual,
    recover_initial,
    snapshot_deviations,
    verify_restart_soundness,
)
from consensus_lab.faults import FaultScript, additive, net_injected_error, stubborn
from consensus_lab.graph import build_graph, ring_graph, verify_joint_connectivity
from consensus_lab.oracle import accumulate_T, column_spread, dense_weights, oracle_compare
from consensus_lab.protocol import Vec2, apply_update, emit, init_node
from consensus_lab.simulator import Activation, SimConfig, activation_schedule, run
from consensus_lab.weights import push_sum_weights
from support import random_instance

C1_SEEDS = range(100)


@pytest.fixture
def verdict(request, record_property):
    n = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))
    record_property("criterion", n)

    def report(ok, title, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title} | {detail}"
        record_property("acceptance", line)
        print("\n" + line)
        assert ok, line

    return report


def max_err(rec, avg):
    return max(math.inf if r is None else abs(float(r) - avg) for r in rec.r)


def global_bound(rec, x0, values):
    res = global_invariant_residual(rec.x, x0)
    return float(res.norm_inf()) / (1 + sum(abs(float(v)) for v in values))


@pytest.fixture(scope="module")
def c1_runs():
    """Ratio-consensus on 100 seeded random strongly connected digraphs."""
    out = []
    t0 = time.perf_counter()
    for seed in C1_SEEDS:
        g, vals = random_instance(seed, 3, 15)
        avg = sum(vals) / len(vals)
        cfg = SimConfig(g, vals, 2000, seed=seed)
        tr = run(cfg, stop_when=lambda rec, avg=avg: max_err(rec, avg) < 1e-9)
        out.append((g, vals, tr))
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def c2_runs():
    """Push-sum on random_subset(0.5) schedules that pass the K_conn = 10 check.

    Seeds are drawn until 20 schedules verify over the whole 5000-round
    horizon; the number of draws is reported alongside.
    """
    out, tried = [], 0
    while len(out) < 20:
        seed = tried
        tried += 1
        g, vals = random_instance(1000 + seed, 3, 10, chord_p=(0.3, 0.6))
        act = Activation("random_subset", 0.5)
        sched = activation_schedule(g, act, seed, 5000)
        if not verify_joint_connectivity(sched, 10, 5000):
            continue
        avg = sum(vals) / len(vals)
        cfg = SimConfig(g, vals, 5000, scheme="push_sum", seed=seed, activation=act, k_conn=10)
        tr = run(cfg, stop_when=lambda rec, avg=avg: max_err(rec, avg) < 1e-6)
        out.append((g, vals, sched, tr))
    return out, tried


def test_criterion_01_convergence(verdict, c1_runs):
    runs, elapsed = c1_runs
    worst = max(max_err(tr.last, sum(v) / len(v)) for _, v, tr in runs)
    slowest = max(tr.config.rounds for _, _, tr in runs)
    sizes = sorted({g.n for g, _, _ in runs})
    ok = worst < 1e-9 and slowest <= 2000 and elapsed < 10 and sizes == list(range(3, 16))
    verdict(ok, "ratio-consensus reaches the average",
            f"100 graphs n=3..15, max err {worst:.4e}, slowest {slowest} rounds, {elapsed:.2f}s")


def test_criterion_02_ltv_convergence(verdict, c2_runs):
    runs, tried = c2_runs
    worst, slowest, all_a1 = 0.0, 0, True
    for g, vals, sched, tr in runs:
        all_a1 &= not tr.warnings
        worst = max(worst, max_err(tr.last, sum(vals) / len(vals)))
        slowest = max(slowest, tr.config.rounds)
    # constructed A1 violation: node 3 never sends, so node 1 never hears anything
    g = ring_graph(3)
    bad = SimConfig(g, (2, 4, 6), 3000, scheme="push_sum", k_conn=10,
                    activation=Activation("explicit", rounds=({"1": [2], "2": [3]},)))
    bad_tr = run(bad)
    flagged = bool(bad_tr.warnings) and "joint connectivity" in bad_tr.warnings[0]
    stuck = max_err(bad_tr.last, 4.0) > 1e-6
    ok = all_a1 and worst < 1e-6 and slowest <= 5000 and flagged and stuck
    verdict(ok, "push-sum under jointly connected schedules",
            f"20 A1-verified schedules ({tried} drawn), max err {worst:.2e} by k<={slowest}; violating schedule flagged={flagged}, "
            f"non-convergent={stuck}")


def exhaustive_ring3():
    g = ring_graph(3)
    patterns = []
    for bits in itertools.product([False, True], repeat=3):
        act = tuple(frozenset(g.out_neighbors(j)) if b else frozenset() for j, b in zip(g.nodes, bits))
        patterns.append((act, push_sum_weights(g, act, exact=True).columns()))
    start = [init_node(j, Fraction(v), g, exact=True) for j, v in zip(g.nodes, (2, Fraction(-7, 3), 9))]
    x0 = [s.x for s in start]
    zero = Vec2(0, 0)
    visited = bad = 0

    def step(states, act, cols):
        emitted = [emit(s, cols[s.id - 1], act[s.id - 1]) for s in states]
        inbox = [[] for _ in states]
        for _, msgs in emitted:
            for m in msgs:
                inbox[m.receiver - 1].append(m)
        return [apply_update(s, inbox[s.id - 1], cols[s.id - 1][s.id]) for s, _ in emitted]

    def dfs(states, depth):
        nonlocal visited, bad
        if depth == 6:
            return
        for act, cols in patterns:
            nxt = step(states, act, cols)
            visited += 1
            if global_invariant_residual([s.x for s in nxt], x0) != zero:
                bad += 1
            dfs(nxt, depth + 1)

    dfs(start, 0)
    return visited, bad


def test_criterion_03_global_invariant(verdict, c1_runs, c2_runs):
    visited, bad = exhaustive_ring3()
    exact_bad = 0
    for seed in range(12):
        g, _ = random_instance(2000 + seed, 3, 8)
        rng = random.Random(seed)
        vals = tuple(Fraction(rng.randint(-50, 50), rng.randint(1, 9)) for _ in g.nodes)
        for scheme, act, mode in [
            ("push_sum", Activation("random_subset", 0.5), "general"),
            ("ratio_consensus", Activation(), "ratio_running_sum"),
        ]:
            tr = run(SimConfig(g, vals, 200, scheme=scheme, mode=mode, activation=act, seed=seed, arithmetic="rational"))
            x0 = tr.record(0).x
            exact_bad += sum(global_invariant_residual(rec.x, x0) != Vec2(0, 0) for rec in tr.rounds)
    float_worst = 0.0
    for _, vals, tr in c1_runs[0]:
        x0 = tr.record(0).x
        float_worst = max(float_worst, max(global_bound(rec, x0, vals) for rec in tr.rounds))
    for _, vals, _, tr in c2_runs[0]:
        x0 = tr.record(0).x
        float_worst = max(float_worst, max(global_bound(rec, x0, vals) for rec in tr.rounds))
    ok = bad == 0 and visited == sum(8**d for d in range(1, 7)) and exact_bad == 0 and float_worst <= 1e-10
    verdict(ok, "mass conservation",
            f"exhaustive n=3 k<=6: {visited} states, {bad} nonzero; rational n<=8 k=200: {exact_bad} nonzero; "
            f"float worst {float_worst:.2e} x (1+sum|V|)")


def local_invariant_stats(mode):
    exact_bad = 0
    for seed in range(10):
        g, _ = random_instance(3000 + seed, 3, 8)
        rng = random.Random(seed)
        vals = tuple(Fraction(rng.randint(-50, 50), rng.randint(1, 9)) for _ in g.nodes)
        if mode == "general":
            cfg = SimConfig(g, vals, 80, scheme="push_sum", seed=seed, arithmetic="rational",
                            activation=Activation("random_subset", rng.uniform(0.2, 0.9)))
        else:
            cfg = SimConfig(g, vals, 80, mode=mode, arithmetic="rational")
        tr = run(cfg)
        x0 = tr.record(0).x
        for rec in tr.rounds:
            exact_bad += sum(d != Vec2(0, 0) for d in snapshot_deviations(g, mode, rec.x, rec.sigma, x0))
    samples, worst = 0, 0.0
    seed = 0
    while samples < 10_000:
        g, vals = random_instance(4000 + seed, 6, 12, spread=100.0)
        if mode == "general":
            cfg = SimConfig(g, vals, 100, scheme="push_sum", seed=seed, activation=Activation("random_subset", 0.5))
        else:
            cfg = SimConfig(g, vals, 100, mode=mode)
        tr = run(cfg)
        x0 = tr.record(0).x
        for rec in tr.rounds:
            for j, d in enumerate(snapshot_deviations(g, mode, rec.x, rec.sigma, x0)):
                worst = max(worst, float(d.norm_inf()) / max(1.0, float(x0[j].norm_inf())))
                samples += 1
        seed += 1
    return exact_bad, samples, worst


def test_criterion_04_local_invariant_general(verdict):
    exact_bad, samples, worst = local_invariant_stats("general")
    ok = exact_bad == 0 and samples >= 10_000 and worst <= 1e-10
    verdict(ok, "per-edge local invariant",
            f"rational LTV: {exact_bad} nonzero; float: {samples} samples, worst relative {worst:.2e}")


def test_criterion_05_local_invariant_ratio(verdict):
    exact_bad, samples, worst = local_invariant_stats("ratio_running_sum")
    mismatched = 0
    for seed in range(30):
        g, vals = random_instance(5000 + seed, 3, 15)
        a = run(SimConfig(g, vals, 200))
        b = run(SimConfig(g, vals, 200, mode="ratio_running_sum"))
        mismatched += sum(ra.x != rb.x or ra.r != rb.r for ra, rb in zip(a.rounds, b.rounds))
    ok = exact_bad == 0 and samples >= 10_000 and worst <= 1e-10 and mismatched == 0
    verdict(ok, "running-sum local invariant and mode equivalence",
            f"rational: {exact_bad} nonzero; float: {samples} samples, worst relative {worst:.2e}; "
            f"30 runs x 201 rounds, {mismatched} rounds differ bitwise")


def test_criterion_06_initial_value_recovery(verdict, c1_runs):
    exact_bad = nodes = 0
    worst_ulps = 0.0
    for g, vals, _ in c1_runs[0]:
        rng = random.Random(g.n)
        qvals = tuple(Fraction(rng.randint(-99, 99), rng.randint(1, 13)) for _ in g.nodes)
        rec = run(SimConfig(g, qvals, 1, mode="ratio_running_sum", arithmetic="rational")).record(1)
        exact_bad += sum(recover_initial(s, g.out_degree(j)) != Vec2(qvals[j - 1], 1)
                         for j, s in zip(g.nodes, rec.sigma))
        rec = run(SimConfig(g, vals, 1, mode="ratio_running_sum")).record(1)
        for j, s in zip(g.nodes, rec.sigma):
            back = recover_initial(s, g.out_degree(j)).to_float()
            v = vals[j - 1]
            worst_ulps = max(worst_ulps, abs(back.y - v) / math.ulp(v), abs(back.z - 1.0) / math.ulp(1.0))
            nodes += 1
    ok = exact_bad == 0 and worst_ulps <= 1.0
    verdict(ok, "initial state from first running sum",
            f"{nodes} nodes: rational mismatches {exact_bad}, float worst {worst_ulps:.2f} ulp")


def random_error(rng):
    mag = [10 ** rng.uniform(-6, 1) * rng.choice((-1, 1)) for _ in range(2)]
    if rng.random() < 0.5:
        mag[rng.randrange(2)] = 0.0
    if max(abs(m) for m in mag) < 1e-6:
        mag[0] = 1e-6
    return mag


def test_criterion_07_detection(verdict):
    k_atc = 10
    wrong_target = c_mismatch = others_nonzero = early_fail = 0
    worst_gap = 0.0
    for trial in range(500):
        rng = random.Random(trial)
        g, vals = random_instance(6000 + trial, 3, 10)
        i = rng.randint(1, g.n)
        r = rng.randrange(0, 4 * k_atc)
        k0 = (r // k_atc + 1) * k_atc
        script = FaultScript((additive(i, r, random_error(rng)),))
        tr = run(SimConfig(g, vals, k0, mode="ratio_running_sum", k_atc=k_atc, faults=script))
        *before, rep = tr.reports
        early_fail += sum(not b.all_pass for b in before)
        if rep.failed != [i] or not all(t.agree for t in rep.targets.values()):
            wrong_target += 1
        gap = float((rep.targets[i].c.exact() - net_injected_error(script, i, k0).exact()).norm_inf())
        worst_gap = max(worst_gap, gap)
        c_mismatch += gap > 1e-9
        others_nonzero += sum(float(t.c.norm_inf()) > t.tau for m, t in rep.targets.items() if m != i)
    false_pos = 0
    for seed in range(1000):
        g, vals = random_instance(7000 + seed, 3, 10, spread=100.0)
        tr = run(SimConfig(g, vals, 50, mode="ratio_running_sum", k_atc=k_atc, seed=seed))
        false_pos += sum(not rep.all_pass for rep in tr.reports)
    ok = wrong_target == c_mismatch == others_nonzero == early_fail == false_pos == 0
    verdict(ok, "single-fault detection and locality",
            f"500 trials: wrong target {wrong_target}, |c_i - e| worst {worst_gap:.1e} ({c_mismatch} over 1e-9), "
            f"c_m over tau {others_nonzero}, early fails {early_fail}; 1000 clean runs x 5 epochs: {false_pos} false positives")


def test_criterion_08_restart_soundness(verdict):
    k_atc = 10
    failed_pass = unsound = not_converged = 0
    slowest = 0
    for trial in range(100):
        rng = random.Random(trial)
        g, vals = random_instance(8000 + trial, 3, 10)
        avg = sum(vals) / len(vals)
        i = rng.randint(1, g.n)
        r1, r2 = sorted(rng.sample(range(0, 3 * k_atc), 2))
        k0 = (r2 // k_atc + 1) * k_atc
        e = random_error(rng)
        script = FaultScript((additive(i, r1, e), additive(i, r2, [-v for v in e])))
        cfg = SimConfig(g, vals, 5000, mode="ratio_running_sum", k_atc=k_atc, faults=script)
        tr = run(cfg, stop_when=lambda rec, k0=k0, avg=avg: rec.k >= k0 and max_err(rec, avg) < 1e-6)
        rep = next(rep for rep in tr.reports if rep.k0 == k0)
        failed_pass += not rep.all_pass
        unsound += not verify_restart_soundness(tr.record(k0).x, vals)
        not_converged += max_err(tr.last, avg) >= 1e-6
        slowest = max(slowest, tr.config.rounds)
    ok = failed_pass == unsound == not_converged == 0
    verdict(ok, "cancelled faults leave a sound restart point",
            f"100 trials: ATC fails at k0 {failed_pass}, unsound mass {unsound}, "
            f"not within 1e-6 {not_converged} (slowest {slowest} rounds)")


def test_criterion_09_stubborn_capture(verdict):
    k_atc = 25
    not_captured = not_persistent = collateral = oracle_bad = 0
    slowest = 0
    for trial in range(25):
        rng = random.Random(trial)
        g, vals = random_instance(9000 + trial, 3, 10)
        i = rng.randint(1, g.n)
        target = vals[i - 1]
        cfg = SimConfig(g, vals, 10_000, mode="ratio_running_sum", k_atc=k_atc, faults=FaultScript((stubborn(i),)))
        tr = run(cfg, stop_when=lambda rec, t=target: rec.k >= 4 * k_atc and max_err(rec, t) < 1e-4)
        slowest = max(slowest, tr.config.rounds)
        not_captured += max_err(tr.last, target) >= 1e-4
        fails = [i in rep.failed for rep in tr.reports]
        first = fails.index(True) if True in fails else None
        not_persistent += first is None or not all(fails[first:])
        collateral += sum(rep.failed != [i] for rep in tr.reports[first or 0:])
        if trial < 5:
            oracle_bad += not oracle_compare(tr, 1e-12).ok
    ok = not_captured == not_persistent == collateral == oracle_bad == 0 and slowest <= 10_000
    verdict(ok, "stubborn node drags consensus to its value",
            f"25 graphs n<=10: within 1e-4 by k<={slowest}, not captured {not_captured}, "
            f"non-persistent detection {not_persistent}, other targets failing {collateral}, oracle mismatches {oracle_bad}")


def test_criterion_10_weak_ergodicity(verdict, c1_runs):
    worst_spread = 0.0
    for g, _, _ in c1_runs[0]:
        W = dense_weights(g, [frozenset(g.out_neighbors(j)) for j in g.nodes], "ratio_consensus")
        worst_spread = max(worst_spread, column_spread(accumulate_T([W] * 500)))
    worst_z = worst_y = 0.0
    slowest = 0
    for seed in range(20):
        g, vals = random_instance(10_000 + seed, 3, 12)
        g = build_graph(g.n, sorted(g.edges | {(i, j) for j, i in g.edges}))
        avg = sum(vals) / len(vals)

        def done(rec, avg=avg):
            return all(abs(x.z - 1) < 1e-9 and abs(x.y - avg) < 1e-9 for x in rec.x)

        tr = run(SimConfig(g, vals, 5000, scheme="balanced"), stop_when=done)
        slowest = max(slowest, tr.config.rounds)
        worst_z = max(worst_z, max(abs(x.z - 1) for x in tr.last.x))
        worst_y = max(worst_y, max(abs(x.y - avg) for x in tr.last.x))
    ok = worst_spread < 1e-8 and worst_z < 1e-9 and worst_y < 1e-9
    verdict(ok, "columns of T[k] equalize",
            f"criterion-1 graphs: worst spread(T[500]) {worst_spread:.2e}; balanced symmetric: "
            f"|z-1| {worst_z:.1e}, |y-avg| {worst_y:.1e} by k<={slowest}")


def test_criterion_11_oracle_equivalence(verdict):
    worst = 0.0
    runs = 0
    for n in (4, 8, 16, 32):
        for variant in range(4):
            seed = 100 * n + variant
            rng = random.Random(seed)
            g, vals = random_instance(seed, n, n, chord_p=(0.1, 0.3))
            faults = FaultScript()
            if variant % 2:
                faults = FaultScript((additive(rng.randint(1, n), rng.randrange(40), random_error(rng)),
                                      stubborn(rng.randint(1, n), 50, 70)))
            if variant < 2:
                cfg = SimConfig(g, vals, 120, mode="ratio_running_sum", faults=faults)
            else:
                cfg = SimConfig(g, vals, 120, scheme="push_sum", seed=seed, faults=faults,
                                activation=Activation("random_subset", 0.5))
            worst = max(worst, oracle_compare(run(cfg), 1e-12).max_deviation)
            runs += 1
    verdict(worst <= 1e-12, "engine matches dense reference",
            f"{runs} runs n in 4..32 (half faulted), 121 rounds each, worst per-round deviation {worst:.2e}")

