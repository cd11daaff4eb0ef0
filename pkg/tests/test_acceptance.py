"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`.  Every tolerance is fixed
here; nothing is calibrated at runtime.
"""

import json
import math
from collections import Counter
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import stats

from fvddp.cli import main as cli_main
from fvddp.dataset import ingest
from fvddp.filtering import (
    advance_time,
    hyper_posterior,
    init_state,
    update_batch,
    update_one,
)
from fvddp.lattice import node_total
from fvddp.measures import BaseMeasure, FiniteUniformP0
from fvddp.partition import (
    conveyor_simulate,
    dp_eppf,
    lemma2_oracle,
    sample_partition,
    set_partition_count,
)
from fvddp.predictive import (
    approx_predict,
    coefficients,
    exact_predict,
    observe_draw,
    pmf_table,
    sample_next,
    sample_sequence,
)
from fvddp.death_process import simulate_levels, transition_row

from conftest import two_time_state


@contextmanager
def criterion(num, name):
    try:
        yield
    except Exception:
        print(f"FAIL criterion {num}: {name}")
        raise
    print(f"PASS criterion {num}: {name}")


def tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def grouped_sizes(values):
    """Block sizes of a value sequence, in order of first appearance."""
    order, counts = [], {}
    for y in values:
        if y not in counts:
            order.append(y)
            counts[y] = 0
        counts[y] += 1
    return tuple(sorted((counts[y] for y in order), reverse=True))


def multisets_of(n):
    out = set()

    def rec(remaining, max_part, acc):
        if remaining == 0:
            out.add(tuple(sorted(acc, reverse=True)))
            return
        for part in range(min(remaining, max_part), 0, -1):
            rec(remaining - part, part, acc + [part])

    rec(n, n, [])
    return sorted(out)


def test_criterion_01_death_kernel_normalization():
    with criterion(1, "death-kernel normalization on the (m, theta, t) grid"):
        for theta in (0.5, 1.0, 5.0):
            for t in (0.01, 0.1, 1.0, 10.0):
                for m in range(31):
                    row = transition_row(m, t, theta)
                    assert abs(math.fsum(row) - 1.0) <= 1e-8
                    assert all(-1e-8 <= p <= 1.0 + 1e-8 for p in row)


def test_criterion_02_formula_vs_simulation():
    with criterion(2, "level transitions match 1e6-trajectory frequencies (4 se)"):
        rng = np.random.default_rng(42)
        sims = [
            (1, 0.5, 1.0, (0, 1)),
            (3, 0.2, 1.0, (1, 3)),
            (5, 0.5, 1.0, (2, 4)),
            (8, 0.1, 0.5, (6, 8)),
            (8, 1.0, 0.5, (0, 2)),
            (12, 0.3, 5.0, (3, 7)),
            (20, 0.05, 1.0, (15, 18)),
            (20, 1.0, 1.0, (0, 1)),
            (30, 0.1, 0.5, (18, 24)),
            (30, 0.5, 5.0, (0, 3)),
        ]
        n_traj = 1_000_000
        points = 0
        for m, t, theta, ns in sims:
            landed = simulate_levels(m, t, theta, n_traj, rng)
            freq = np.bincount(landed, minlength=m + 1) / n_traj
            row = transition_row(m, t, theta)
            for n in ns:
                p = row[n]
                se = math.sqrt(p * (1.0 - p) / n_traj)
                assert abs(freq[n] - p) <= 4.0 * se + 1e-12, (m, n, t, theta)
                points += 1
        assert points == 20


def test_criterion_03_figure_lattice_reproduction():
    with criterion(3, "two-time two-value example: active set and node bounds"):
        state = two_time_state(FiniteUniformP0(range(10)))
        assert set(state.nodes.nodes()) == {(1, 1), (2, 1), (1, 2), (2, 2)}
        assert state.nodes.top() == (2, 2)
        bottoms = [min(n[i] for n in state.nodes.nodes()) for i in (0, 1)]
        assert tuple(bottoms) == (1, 1)


def test_criterion_04_exact_vs_approximate_predictive():
    with criterion(4, "TV(exact pmf, 1e6-particle pmf) < 0.005 on the example"):
        state = two_time_state(FiniteUniformP0(range(10)))
        support = list(range(10))
        exact = pmf_table(exact_predict(state, 0.5), support)
        rng = np.random.default_rng(7)
        approx = pmf_table(approx_predict(state, 0.5, 1_000_000, rng), support)
        assert tv(exact, approx) < 0.005


def test_criterion_05_sampler_vs_pmf():
    with criterion(5, "1e5 first draws match the predictive pmf (4 se per atom)"):
        state = two_time_state(FiniteUniformP0(range(10)))
        ps = exact_predict(state, 0.5)
        support = list(range(10))
        probs = pmf_table(ps, support)
        rng = np.random.default_rng(12)
        n = 100_000
        counts = np.zeros(len(support))
        for _ in range(n):
            y, _ = sample_next(ps, rng)
            counts[y] += 1
        freq = counts / n
        se = np.sqrt(probs * (1.0 - probs) / n)
        assert np.all(np.abs(freq - probs) <= 4.0 * se + 1e-12)


def _correlation_se(x, y):
    """Delta-method standard error of the sample correlation (no normality)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = xc.std(), yc.std()
    r = float((xc * yc).mean() / (sx * sy))
    psi = (xc * yc) / (sx * sy) - (r / 2.0) * (xc**2 / sx**2 + yc**2 / sy**2)
    return r, float(psi.std() / math.sqrt(len(x)))


def test_criterion_06_correlation_formula():
    with criterion(6, "pair correlation matches e^{-theta s/2}/(theta+1) (3 se)"):
        p0 = FiniteUniformP0(range(10))
        n_pairs = 100_000
        for theta, s in ((1.0, 0.1), (1.0, 1.0), (2.0, 1.0)):
            base = BaseMeasure(theta, p0)
            fresh = init_state(base)
            rng = np.random.default_rng(int(theta * 1000 + s * 10))
            xs = np.empty(n_pairs)
            ys = np.empty(n_pairs)
            for i in range(n_pairs):
                y1 = p0.sample(rng)
                fs = update_one(fresh, y1)
                ps = exact_predict(fs, s)
                y2, _ = sample_next(ps, rng)
                xs[i], ys[i] = y1, y2
            r, se = _correlation_se(xs, ys)
            expected = math.exp(-theta * s / 2.0) / (theta + 1.0)
            assert abs(r - expected) <= 3.0 * se, (theta, s, r, expected, se)


def test_criterion_07_long_lag_limit():
    with criterion(7, "TV to the prior urn < 1e-6 at t=50 and monotone in t"):
        state = two_time_state(FiniteUniformP0(range(10)))
        support = list(range(10))
        prior = np.full(10, 0.1)
        dists = []
        for lag in (0.1, 1.0, 5.0, 10.0, 50.0):
            ps = exact_predict(state, lag)
            dists.append(tv(pmf_table(ps, support), prior))
        assert all(a >= b - 1e-12 for a, b in zip(dists, dists[1:]))
        assert dists[-1] < 1e-6


def test_criterion_08_large_sample_regime():
    with criterion(8, "B_k -> 1 bound at k=1e4 and TV to the sample -> 0"):
        state = two_time_state(FiniteUniformP0(range(10)))
        theta = 1.0
        top = node_total(state.nodes.top())
        ps = exact_predict(state, 0.5)
        rng = np.random.default_rng(3)
        support = list(range(10))
        dists = {}
        values = []
        for k_target in (100, 1_000, 10_000):
            while len(values) < k_target:
                y, ps = sample_next(ps, rng)
                values.append(y)
            emp = np.bincount(values, minlength=10) / len(values)
            dists[k_target] = tv(pmf_table(ps, support), emp)
        assert coefficients(ps).b >= 1.0 - (theta + top + 10.0) / 10_000
        assert dists[100] > dists[1_000] > dists[10_000]
        assert dists[10_000] <= 10.0 * (theta + top) / 10_000


def test_criterion_09_partition_correctness():
    with criterion(9, "partition samplers agree with the EPPF and each other"):
        # (a) zero history: chi-squared against the DP partition law at n=4
        diffuse = FiniteUniformP0(range(1_000_000))
        zero = exact_predict(init_state(BaseMeasure(1.0, diffuse)), 1.0)
        rng = np.random.default_rng(5)
        reps = 100_000
        cells = multisets_of(4)
        expected = np.array(
            [dp_eppf(s, 1.0) * set_partition_count(s) for s in cells]
        )
        assert abs(expected.sum() - 1.0) < 1e-12
        observed = Counter(
            sample_partition(zero, 4, rng).sorted_sizes for _ in range(reps)
        )
        obs = np.array([observed.get(s, 0) for s in cells], dtype=float)
        chi2_stat = float(((obs - reps * expected) ** 2 / (reps * expected)).sum())
        threshold = stats.chi2.ppf(1.0 - 0.001, df=len(cells) - 1)
        assert chi2_stat < threshold, (chi2_stat, threshold)

        # (b) the two-time example at n=3: four estimators of one law
        state = two_time_state(diffuse)
        ps = exact_predict(state, 0.5)
        cells3 = multisets_of(3)
        oracle = {
            s: lemma2_oracle(ps, s) * set_partition_count(s) for s in cells3
        }
        assert abs(sum(oracle.values()) - 1.0) < 1e-9
        reps3 = 50_000
        laws = {}
        for name, draw in (
            ("block", lambda r: sample_partition(ps, 3, r).sorted_sizes),
            ("conveyor", lambda r: conveyor_simulate(ps, 3, r).sorted_sizes),
            ("grouped", lambda r: grouped_sizes(sample_sequence(ps, 3, r))),
        ):
            counts = Counter(draw(rng) for _ in range(reps3))
            laws[name] = {s: counts.get(s, 0) / reps3 for s in cells3}
        for name, law in laws.items():
            for s in cells3:
                p = oracle[s]
                se = math.sqrt(p * (1.0 - p) / reps3)
                assert abs(law[s] - p) <= 4.0 * se + 1e-9, (name, s)
        for a in laws.values():
            for b in laws.values():
                for s in cells3:
                    p = oracle[s]
                    se_pair = math.sqrt(2.0 * p * (1.0 - p) / reps3)
                    assert abs(a[s] - b[s]) <= 4.0 * se_pair + 1e-9


def test_criterion_10_eppf_normalization():
    with criterion(10, "DP partition law sums to one over set partitions of 4"):
        for theta in (0.5, 1.0, 5.0):
            total = math.fsum(
                dp_eppf(s, theta) * set_partition_count(s) for s in multisets_of(4)
            )
            assert abs(total - 1.0) < 1e-12


def _blackwell_macqueen(theta, p0, n, rng):
    values = []
    for i in range(n):
        if rng.random() < theta / (theta + i):
            values.append(p0.sample(rng))
        else:
            values.append(values[int(rng.integers(i))])
    return values


def test_criterion_11_hyperparameter_recovery():
    with criterion(11, "grid posterior concentrates on the generating theta"):
        p0 = FiniteUniformP0(range(1000))
        masses = []
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            data = _blackwell_macqueen(1.0, p0, 200, rng)
            grid = [(1.0, 1.0, 0.5), (100.0, 1.0, 0.5)]
            results = hyper_posterior(grid, [(0.0, tuple(data))], p0)
            masses.append(results[0].posterior)
        assert float(np.mean(masses)) > 0.9


def test_criterion_12_end_to_end_workflow(tmp_path):
    with criterion(12, "synthetic + hyper + predict workflow, deterministic"):
        data_path = tmp_path / "synthetic.csv"
        assert cli_main([
            "synthetic", "--seed", "33", "--horizon", "5", "--per-time", "15",
            "--out", str(data_path),
        ]) == 0
        assert len(ingest(data_path).batches) == 5

        assert cli_main([
            "hyper", "--data", str(data_path), "--base", "negbinom:2,0.5",
            "--theta-grid", "1,3,10", "--sigma-grid", "0.1,0.5,1.0",
            "--seed", "33", "--out", str(tmp_path / "hyper"),
        ]) == 0
        hyper_doc = json.loads((tmp_path / "hyper.manifest.json").read_text())
        posts = [g["posterior"] for g in hyper_doc["grid"]]
        assert abs(sum(posts) - 1.0) < 1e-9
        assert all(math.isfinite(g["log_ml"]) for g in hyper_doc["grid"])

        predict_args = [
            "predict", "--data", str(data_path), "--base", "negbinom:2,0.5",
            "--theta-grid", "1,3,10", "--sigma-grid", "0.1,0.5,1.0",
            "--lag", "1.0", "--draws", "200", "--replicates", "100",
            "--seed", "33",
        ]
        assert cli_main(predict_args + ["--out", str(tmp_path / "run1")]) == 0
        assert cli_main(predict_args + ["--out", str(tmp_path / "run2")]) == 0
        csv1 = (tmp_path / "run1.csv").read_bytes()
        assert csv1 == (tmp_path / "run2.csv").read_bytes()

        rows = csv1.decode().strip().splitlines()
        assert rows[0] == "value,mean,lo,hi"
        means, los, his = [], [], []
        for row in rows[1:]:
            _, m, lo, hi = row.split(",")
            means.append(float(m)), los.append(float(lo)), his.append(float(hi))
        assert abs(sum(means) - 1.0) <= 1e-6
        assert all(lo <= hi for lo, hi in zip(los, his))
        assert any(hi > lo for lo, hi in zip(los, his))

        m1 = json.loads((tmp_path / "run1.manifest.json").read_text())
        m2 = json.loads((tmp_path / "run2.manifest.json").read_text())
        m1.pop("runtime_seconds"), m2.pop("runtime_seconds")
        assert m1 == m2
