"""End-to-end acceptance checks, one verdict line per criterion.

Each test prints ``<criterion> PASS|FAIL <detail>``; the lines are
repeated in the terminal summary.  Tolerances are the contractual ones and
are never relaxed to make a check pass.
"""
import json
import time

import numpy as np
import pytest
from scipy.stats import unitary_group

from adiascope.cli import main
from adiascope.decompose import decompose_continuous, decompose_pulses
from adiascope.experiments import (CpScenario, DriveScenario, build_cp, build_drive,
                                   gamma_objective, modulation_trace, resolve_jobs, solve_gamma,
                                   sweep_cp, sweep_drive)
from adiascope.hamiltonian import spin_half_vectors
from adiascope.metrics import delta_u_err, haar_states

THETAS = (np.pi / 6, np.pi / 3, np.pi / 2)


@pytest.fixture(scope="module")
def jobs():
    return resolve_jobs()


def test_c01_reconstruction_identity(verdict):
    start = time.perf_counter()
    worst, where = 0.0, None
    for theta in THETAS:
        for n in (1, 2, 4, 8, 16, 32):
            model, seq = build_cp(CpScenario(theta, n))
            r = decompose_pulses(model, seq, direct=False).reconstruction_residual
            if r >= worst:
                worst, where = r, f"cp theta={theta:.4f} N={n}"
    for kind in ("b_pi", "b_2pi", "b_const"):
        for n_prime in (2, 4, 8):
            model, path = build_drive(DriveScenario(kind, n_prime))
            r = decompose_continuous(model, path, direct=False).reconstruction_residual
            if r >= worst:
                worst, where = r, f"{kind} N'={n_prime}"
    elapsed = time.perf_counter() - start
    verdict("1 reconstruction identity", worst <= 1e-8 and elapsed < 60,
            f"max residual {worst:.2e} at {where}; {elapsed:.1f} s")


def test_c02_exact_cancellation(verdict, jobs):
    start = time.perf_counter()
    res = sweep_cp(np.pi / 2, range(1, 65), jobs=jobs)
    elapsed = time.perf_counter() - start
    values = res.column("delta_u_err")
    worst = int(res.column("sweep_var")[np.argmax(values)])
    verdict("2 exact cancellation", bool(np.max(values) <= 1e-10),
            f"max delta_u_err {np.max(values):.2e} (N={worst}) over N=1..64; {elapsed:.1f} s")


def connection_integral(theta, steps=4096):
    # Berry phase of the field-aligned state from <+| i d/dphi |+> on a
    # 4096-step trapezoid grid, with central differences in phi.
    phis = np.linspace(0.0, 2 * np.pi, steps + 1)
    h = 1e-5
    v = spin_half_vectors(theta, phis)[..., 0]
    dv = (spin_half_vectors(theta, phis + h)[..., 0] - spin_half_vectors(theta, phis - h)[..., 0])
    a = np.real(1j * np.einsum("ki,ki->k", v.conj(), dv / (2 * h)))
    return float(np.sum(0.5 * (a[1:] + a[:-1]) * np.diff(phis)))


def test_c03_berry_phase(verdict):
    worst_formula = worst_oracle = 0.0
    for theta in (np.pi / 6, np.pi / 4, np.pi / 3):
        model, seq = build_cp(CpScenario(theta, 2))
        ev = np.linalg.eigvals(decompose_pulses(model, seq).u_geo)
        # half-angle gauge: the frame returns with a sign flip, adding pi
        formula = np.exp(1j * (np.pi + np.array([1, -1]) * np.pi * np.cos(theta)))
        berry = connection_integral(theta)
        oracle = np.exp(1j * (np.pi + np.array([1, -1]) * berry))
        for target, acc in ((formula, "f"), (oracle, "o")):
            err = max(np.min(np.abs(ev - z)) for z in target)
            err = max(err, max(np.min(np.abs(target - z)) for z in ev))
            if acc == "f":
                worst_formula = max(worst_formula, err)
            else:
                worst_oracle = max(worst_oracle, err)
    ok = worst_formula <= 1e-8 and worst_oracle <= 1e-8
    verdict("3 Berry phase", ok,
            f"eigenphase error vs +-pi cos(theta) + pi {worst_formula:.1e}, "
            f"vs connection integral {worst_oracle:.1e}")


def test_c04_gamma_root(verdict):
    start = time.perf_counter()
    gamma = solve_gamma()
    elapsed = time.perf_counter() - start
    objective = gamma_objective(gamma)
    ok = abs(gamma - 2.34213) <= 1e-4 and objective < 1e-9 and elapsed < 1.0
    verdict("4 gamma root", ok,
            f"gamma {gamma:.10f}, objective {objective:.1e}; {elapsed:.2f} s")


@pytest.fixture(scope="module")
def cp_sweep(jobs):
    start = time.perf_counter()
    res = sweep_cp(np.pi / 6, range(1, 66), jobs=jobs)
    values = dict(zip(res.column("sweep_var").astype(int), res.column("delta_u_err")))
    return values, time.perf_counter() - start


EVEN_N = (2, 4, 8, 16, 32, 64)


def test_c05a_even_n_strictly_decreasing(verdict, cp_sweep):
    values, elapsed = cp_sweep
    seq = [values[n] for n in EVEN_N]
    bad = [(a, b) for a, b, x, y in zip(EVEN_N, EVEN_N[1:], seq, seq[1:]) if not y < x]
    verdict("5a even N strictly decreasing", not bad and elapsed < 120,
            "values " + ", ".join(f"N={n}:{v:.3e}" for n, v in zip(EVEN_N, seq))
            + (f"; increases at {bad}" if bad else "") + f"; {elapsed:.1f} s")


def test_c05b_even_below_adjacent_odd(verdict, cp_sweep):
    values, _ = cp_sweep
    bad = [n for n in EVEN_N if not (values[n] < values[n - 1] and values[n] < values[n + 1])]
    detail = "; ".join(f"N={n}: {values[n - 1]:.4g} / {values[n]:.4g} / {values[n + 1]:.4g}"
                       for n in (bad or EVEN_N[:2]))
    verdict("5b even N below adjacent odd N", not bad,
            (f"violated at N={bad} " if bad else "") + f"(odd/even/odd) {detail}")


def test_c05c_sixty_four_pulses(verdict, cp_sweep):
    values, _ = cp_sweep
    ratio = values[2] / values[64]
    verdict("5c N=64 ten times below N=2", values[64] < values[2] / 10,
            f"delta_u_err(2)/delta_u_err(64) = {ratio:.1f}")


@pytest.fixture(scope="module")
def drive_sweep(jobs):
    start = time.perf_counter()
    n_primes = sorted(set(range(1, 11)) | {20, 40})
    res = sweep_drive(("b_pi", "b_2pi", "b_const"), n_primes, jobs=jobs)
    table = {(r.kind, int(r.sweep_var)): r.delta_u_err for r in res.rows}
    return table, time.perf_counter() - start


def test_c06a_b_pi_beats_b_const(verdict, drive_sweep):
    table, elapsed = drive_sweep
    ratios = {n: table["b_const", n] / table["b_pi", n] for n in (2, 4, 6, 8)}
    bad = [n for n, r in ratios.items() if not r >= 2.0]
    verdict("6a b_pi beats b_const by 2x", not bad and elapsed < 300,
            "b_const/b_pi " + ", ".join(f"N'={n}:{r:.2f}" for n, r in ratios.items())
            + (f"; below 2 at N'={bad}" if bad else "") + f"; {elapsed:.1f} s")


def test_c06b_b_2pi_no_decay(verdict, drive_sweep):
    table, _ = drive_sweep
    low_2pi = min(table["b_2pi", n] for n in range(1, 11))
    low_pi = min(table["b_pi", n] for n in range(1, 11))
    verdict("6b b_2pi does not decay", low_2pi > 10 * low_pi,
            f"min b_2pi {low_2pi:.3e} vs min b_pi {low_pi:.3e} over N'=1..10")


def test_c06c_b_const_decays(verdict, drive_sweep):
    table, _ = drive_sweep
    seq = [table["b_const", n] for n in (5, 10, 20, 40)]
    verdict("6c b_const decays monotonically", all(b < a for a, b in zip(seq, seq[1:])),
            "values " + ", ".join(f"{v:.3e}" for v in seq))


def test_c07_direct_vs_extracted(verdict):
    model, seq = build_cp(CpScenario(np.pi / 6, 4))
    cp = decompose_pulses(model, seq)
    model, path = build_drive(DriveScenario("b_const", 4))
    drive = decompose_continuous(model, path)
    d_cp = np.linalg.norm(cp.u_err_direct - cp.u_err)
    d_drive = np.linalg.norm(drive.u_err_direct - drive.u_err)
    verdict("7 direct vs extracted error", max(d_cp, d_drive) <= 1e-6,
            f"cp N=4 {d_cp:.1e}, b_const N'=4 {d_drive:.1e}")


def test_c08_modulation_traces(verdict):
    problems = []
    for n in (1, 2, 3, 4, 7, 8):
        scenario = CpScenario(np.pi / 6, n)
        trace = modulation_trace(scenario, samples=8 * 4 * n + 1)
        if not set(np.unique(trace.values)) <= {1.0, -1.0} or trace.values[0] != 1.0:
            problems.append(f"N={n} not +-1 valued")
            continue
        flips = trace.s[1:][np.diff(trace.values.real) != 0]
        step = trace.s[1] - trace.s[0]
        if len(flips) != n or not np.allclose(flips, scenario.positions(), atol=step):
            problems.append(f"N={n} toggles at {flips}")
        full = modulation_trace(CpScenario(np.pi / 6, n, angle=2 * np.pi))
        if not np.all(full.values == 1.0):
            problems.append(f"N={n} 2pi variant not constant")
    verdict("8 modulation traces", not problems,
            "; ".join(problems) or "+-1 toggling at every pulse; 2pi variant F == 1")


def test_c09_metric_oracle(verdict):
    rng = np.random.default_rng(2024)
    states = haar_states(2, 1_000_000, seed=1)
    worst = 0.0
    for _ in range(10):
        u = unitary_group.rvs(2, random_state=rng)
        mc = np.abs(np.einsum("si,ij,sj->s", states.conj(), u - np.eye(2), states)).mean()
        worst = max(worst, abs(delta_u_err(u) - mc) / mc)
    verdict("9 metric vs Monte Carlo", worst < 1e-3,
            f"max relative difference {worst:.1e} over 10 unitaries")


def test_c10_determinism(verdict, tmp_path):
    outputs = []
    configs = {
        "sweep-cp": {"scenario": {"kind": "cp", "theta": 0.5235987755982988,
                                  "n": {"start": 1, "stop": 6}}},
        "sweep-drive": {"scenario": {"kind": "drive", "n_prime": [1, 2]}},
    }
    same = True
    for command, cfg in configs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        blobs = []
        for k, jobs in enumerate((1, 2, 1)):
            out = tmp_path / f"{command}-{k}.csv"
            assert main([command, "--config", str(path), "--out", str(out), "--seed", "11",
                         "--jobs", str(jobs)]) == 0
            blobs.append(out.read_bytes())
        same &= len(set(blobs)) == 1
        outputs.append(f"{command} {len(blobs[0])} bytes x3")
    verdict("10 determinism", same, ", ".join(outputs))
