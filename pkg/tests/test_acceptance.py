"""Acceptance suite.

One test per criterion, two groups:

* Criteria 1-7 are exactness/property checks (seconds each).
* Criteria 8-14 are desk-scale statistical reproductions of the reference
  magnitudes at the default operating point (200 trials each; the session
  fixtures below share the expensive Monte Carlo studies between
  criteria, so the whole file runs in roughly an hour on one core).
"""

import math

import numpy as np
import pytest

from ma_uplink.channel import (
    ScenarioConfig,
    channel_matrix,
    channel_vector,
    sample_scenario,
)
from ma_uplink.combining import (
    min_power_fixed_point,
    power_feasible,
    sinr,
    solve_power_balance,
    zf_combiner,
    zf_powers,
    zf_total_power,
)
from ma_uplink.experiments import (
    SchemeId,
    SweepSpec,
    run_paired_trial,
    run_sweep,
    sample_usable_scenario,
    watts_to_dbm,
)
from ma_uplink.optimizer import (
    DescentConfig,
    channel_power_gradient,
    maximize_channel_power,
    optimize_zf,
)

BASE = ScenarioConfig()  # reference operating point
DESCENT = DescentConfig()
TRIALS = 200

MA_ZF = SchemeId("MA", "ZF")
MA_MMSE = SchemeId("MA", "MMSE")
FPA_ZF = SchemeId("FPA", "ZF")
FPA_MMSE = SchemeId("FPA", "MMSE")


# ===========================================================================
# Criteria 1-7: exactness and property checks


def test_criterion_01_zf_nulling_and_sinr_attainment():
    """ZF nulls interference and both power solutions hit the targets."""
    for ti in range(500):
        s, _ = sample_usable_scenario(BASE, 101, 0, ti)
        H = channel_matrix(s, np.zeros(3 * s.num_users))
        W = zf_combiner(H)
        nulling = np.linalg.norm(W.conj().T @ H - np.eye(s.num_users))
        assert nulling <= 1e-8 * np.linalg.norm(H)

        zf = zf_powers(H, s.snr_targets, s.noise_power)
        achieved = sinr(W, H, zf.powers, s.noise_power)
        np.testing.assert_allclose(achieved, s.snr_targets, rtol=1e-6)

        fp = min_power_fixed_point(H, s.snr_targets, s.noise_power)
        assert fp.power.feasible
        np.testing.assert_allclose(fp.sinr, s.snr_targets, rtol=1e-6)


def test_criterion_02_total_power_identity():
    """Trace form of the ZF total equals the per-user power sum."""
    rng = np.random.default_rng(102)
    for _ in range(500):
        n = int(rng.integers(4, 17))
        k = int(rng.integers(1, n + 1))
        H = 1e-4 * (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k)))
        eta = rng.uniform(0.5, 15.0, k)
        total = zf_total_power(H, eta, 1e-11)
        direct = zf_powers(H, eta, 1e-11).total
        assert abs(total - direct) <= 1e-10 * direct


def test_criterion_03_analytic_gradient_oracle():
    """Closed-form channel-power gradient vs central finite differences."""
    rng = np.random.default_rng(103)
    s = sample_scenario(BASE, rng)
    checked = 0
    while checked < 100:
        u = s.users[checked % s.num_users]
        pos = rng.uniform(-0.01, 0.01, 3)
        analytic = channel_power_gradient(u, pos)
        delta = 1e-7
        numeric = np.zeros(3)
        for c in range(3):
            e = np.zeros(3)
            e[c] = delta
            hp = channel_vector(u, pos + e)
            hm = channel_vector(u, pos - e)
            numeric[c] = (np.vdot(hp, hp).real - np.vdot(hm, hm).real) / (2 * delta)
        tol = np.maximum(1e-6 * np.abs(numeric), 1e-8)
        assert np.all(np.abs(analytic - numeric) <= tol)
        checked += 1


def test_criterion_04_monotone_descent_and_tmax_zero():
    """Every descent trace is non-increasing; t_max = 0 reproduces FPA."""
    spec = SweepSpec("rate", (BASE.rate_bps_hz,), BASE, TRIALS,
                     (MA_ZF, MA_MMSE), seed=104)
    for ti in range(TRIALS):
        results, _ = run_paired_trial(spec, 0, ti, DESCENT, record_trace=True)
        for scheme in (MA_ZF, MA_MMSE):
            trace = results[scheme].trace
            assert np.all(np.diff(trace) <= 1e-9 * np.abs(trace[:-1]))

    s, _ = sample_usable_scenario(BASE, 104, 0, 0)
    frozen = optimize_zf(s, DescentConfig(t_max=0))
    np.testing.assert_array_equal(frozen.positions.coords, 0.0)
    H0 = channel_matrix(s, np.zeros(3 * s.num_users))
    assert frozen.total_power == zf_total_power(H0, s.snr_targets, s.noise_power)


def test_criterion_05_single_path_invariance():
    """With L = 1 the channel power is position independent."""
    # fewer users: with L = 1 each channel is a pure steering vector, so
    # pool collisions between users make many draws rank deficient
    cfg = ScenarioConfig(num_paths=1, num_users=4)
    for ti in range(20):
        s, _ = sample_usable_scenario(cfg, 105, 0, ti, need_mmse=False)
        for u in s.users:
            h0 = channel_vector(u, np.zeros(3))
            base_power = float(np.vdot(h0, h0).real)
            _, mcp_power = maximize_channel_power(u, DESCENT)
            assert abs(mcp_power - base_power) <= 1e-12 * base_power
        res = optimize_zf(s, DescentConfig(t_max=20))
        for k, u in enumerate(s.users):
            h = channel_vector(u, res.positions.coords[3 * k : 3 * k + 3])
            moved = float(np.vdot(h, h).real)
            h0 = channel_vector(u, np.zeros(3))
            base_power = float(np.vdot(h0, h0).real)
            assert abs(moved - base_power) <= 1e-8 * base_power


def test_criterion_06_brute_force_grid_oracle():
    """Descent lands within 2% of a full joint grid search (tiny cases)."""
    cfg = ScenarioConfig(
        n1=4, n2=1, num_users=2, num_paths=2, aoa_pool_size=4,
        region_size_wavelengths=0.1,
    )
    # small xi keeps the line search sliding along region faces, and the
    # small region keeps the landscape unimodal so a local method can be
    # held to the global grid optimum
    descent = DescentConfig(xi=0.01, t_max=400)
    step = cfg.wavelength / 40.0
    half = cfg.region_size_wavelengths * cfg.wavelength / 2.0
    axis = np.arange(-half, half + step / 2, step)
    grid1 = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    grid1 = grid1.reshape(-1, 3)  # candidate positions of one user

    rng = np.random.default_rng(106)
    instances = 0
    while instances < 20:
        s = sample_scenario(cfg, rng)
        H0 = channel_matrix(s, np.zeros(6))
        sv = np.linalg.svd(H0, compute_uv=False)
        if sv[-1] < 1e-6 * sv[0]:
            continue
        res = optimize_zf(s, descent)

        # joint grid: totals for every (pos_user0, pos_user1) pair via the
        # separable column structure of the 2-user ZF total
        h0 = np.stack([channel_vector(s.users[0], q) for q in grid1])
        h1 = np.stack([channel_vector(s.users[1], q) for q in grid1])
        eta_s2 = s.snr_targets * s.noise_power
        g00 = np.sum(np.abs(h0) ** 2, axis=1)  # (G,)
        g11 = np.sum(np.abs(h1) ** 2, axis=1)
        cross = np.abs(h0.conj() @ h1.T) ** 2  # (G, G) |h0^H h1|^2
        det = g00[:, None] * g11[None, :] - cross
        with np.errstate(divide="ignore", invalid="ignore"):
            totals = (eta_s2[0] * g11[None, :] + eta_s2[1] * g00[:, None]) / det
        totals[det <= 0] = np.inf
        best = float(np.min(totals))
        assert res.total_power <= 1.02 * best
        instances += 1


def test_criterion_07_feasibility_equivalence():
    """Spectral-radius test agrees with direct solvability, 500 instances."""
    rng = np.random.default_rng(107)
    for _ in range(500):
        k = int(rng.integers(2, 9))
        A = rng.uniform(0.0, 1.0, (k, k)) ** 2
        A += np.diag(rng.uniform(0.5, 4.0, k))
        b = rng.uniform(0.05, 1.0, k)
        eta = rng.uniform(0.2, 8.0, k)
        sol = solve_power_balance(A, b, eta)
        assert power_feasible(A, eta) == sol.feasible


# ===========================================================================
# Criteria 8-14: statistical reproductions (shared studies)


@pytest.fixture(scope="session")
def convergence_raw():
    """Per-trial traces of both MA algorithms at the reference point."""
    spec = SweepSpec("rate", (BASE.rate_bps_hz,), BASE, TRIALS,
                     (MA_ZF, MA_MMSE), seed=0)
    zf_traces, mmse_traces, intf_traces = [], [], []
    for ti in range(TRIALS):
        results, _ = run_paired_trial(spec, 0, ti, DESCENT, record_trace=True)
        zf_traces.append(results[MA_ZF].trace)
        mmse_traces.append(results[MA_MMSE].trace)
        intf_traces.append(results[MA_MMSE].interference_db_trace)
    return zf_traces, mmse_traces, intf_traces


@pytest.fixture(scope="session")
def rate_sweep_rows():
    spec = SweepSpec("rate", (1.0, 4.0), BASE, TRIALS,
                     (FPA_ZF, FPA_MMSE, MA_ZF, MA_MMSE), seed=0)
    rows = run_sweep(spec, DESCENT)
    return {(r.sweep_value, str(r.scheme)): r.mean_power_dbm for r in rows}


@pytest.fixture(scope="session")
def user_sweep_rows():
    spec = SweepSpec("users", (16,), BASE, TRIALS, (FPA_MMSE, MA_MMSE), seed=0)
    rows = run_sweep(spec, DESCENT)
    return {str(r.scheme): r.mean_power_dbm for r in rows}


def _mean_of_dbm(watts):
    """Average per-trial dBm values (the convention of the reference plots)."""
    return float(np.mean([watts_to_dbm(w) for w in watts]))


def _paired_sweep_db(parameter, values, schemes):
    """dB-domain mean totals with scenario draws shared across sweep values.

    run_sweep seeds each (value, trial) cell independently, which is right
    for a standalone study but adds ~0.5-1 dB of cross-value sampling noise
    to difference statistics at this trial count.  Here each sweep value
    runs as its own single-value sweep, so every value sees the identical
    scenario set and differences isolate the swept effect.
    """
    means = {}
    for v in values:
        spec = SweepSpec(parameter, (v,), BASE, TRIALS, schemes, seed=0)
        watts = {scheme: [] for scheme in schemes}
        for ti in range(TRIALS):
            results, _ = run_paired_trial(spec, 0, ti, DESCENT)
            for scheme in schemes:
                if results[scheme].converged:
                    watts[scheme].append(results[scheme].total_power_w)
        for scheme in schemes:
            means[(v, str(scheme))] = _mean_of_dbm(watts[scheme])
    return means


@pytest.fixture(scope="session")
def region_sweep_rows():
    return _paired_sweep_db("region", (0.1, 0.5, 1.0, 2.0, 4.0),
                            (MA_ZF, MA_MMSE))


@pytest.fixture(scope="session")
def aod_error_rows():
    return _paired_sweep_db("aod_error", (0.0, 2.0),
                            (FPA_ZF, FPA_MMSE, MA_ZF, MA_MMSE))


@pytest.fixture(scope="session")
def prm_error_rows():
    return _paired_sweep_db("prm_error", (0.0, 0.2),
                            (FPA_ZF, FPA_MMSE, MA_ZF, MA_MMSE))


def test_criterion_08_convergence_magnitudes(convergence_raw):
    """Mean initial/final totals near the reference magnitudes (+-2 dB).

    The reference convergence plot averages per-trial dBm curves, so the
    comparison statistic here is the dB-domain mean; the library's own
    aggregate() deliberately stays in linear watts.
    """
    zf_traces, mmse_traces, _ = convergence_raw
    zf_init = _mean_of_dbm([t[0] for t in zf_traces])
    zf_final = _mean_of_dbm([t[-1] for t in zf_traces])
    mmse_init = _mean_of_dbm([t[0] for t in mmse_traces])
    mmse_final = _mean_of_dbm([t[-1] for t in mmse_traces])
    assert abs(zf_init - 38.6) <= 2.0
    assert abs(zf_final - 30.2) <= 2.0
    assert abs(mmse_init - 34.7) <= 2.0
    assert abs(mmse_final - 29.0) <= 2.0
    assert mmse_final < zf_final


def test_criterion_09_interference_power_drop(convergence_raw):
    """Mean normalized interference drops >= 2 dB over the MMSE descent."""
    _, _, intf_traces = convergence_raw
    first = np.mean([10 ** (t[0] / 10) for t in intf_traces])
    last = np.mean([10 ** (t[-1] / 10) for t in intf_traces])
    drop_db = 10 * math.log10(first / last)
    assert drop_db >= 2.0


def test_criterion_10_rate_sweep_gaps(rate_sweep_rows):
    """Large rate: >= 6 dB MA gain; small rate: FPA-MMSE competitive."""
    r = rate_sweep_rows
    assert r[(4.0, "FPA-ZF")] - r[(4.0, "MA-ZF")] >= 6.0
    assert r[(4.0, "FPA-MMSE")] - r[(4.0, "MA-MMSE")] >= 6.0
    assert r[(1.0, "FPA-MMSE")] - r[(1.0, "MA-MMSE")] <= 2.0


def test_criterion_11_full_load_user_gain(user_sweep_rows):
    """K = N = 16: MA-MMSE at least 10 dB below FPA-MMSE."""
    assert user_sweep_rows["FPA-MMSE"] - user_sweep_rows["MA-MMSE"] >= 10.0


def test_criterion_12_region_sweep_saturation(region_sweep_rows):
    """MA totals non-increasing in region size, saturating by one lambda."""
    r = region_sweep_rows
    for scheme in ("MA-ZF", "MA-MMSE"):
        curve = [r[(v, scheme)] for v in (0.1, 0.5, 1.0, 2.0)]
        assert all(a >= b - 0.05 for a, b in zip(curve, curve[1:])), curve
        assert r[(1.0, scheme)] - r[(4.0, scheme)] < 1.0


def test_criterion_13_aod_error_robustness(aod_error_rows):
    """MA-MMSE loses < 1 dB at the largest AoD error; MA stays below FPA."""
    r = aod_error_rows
    assert r[(2.0, "MA-MMSE")] - r[(0.0, "MA-MMSE")] < 1.0
    for mu in (0.0, 2.0):
        assert r[(mu, "MA-ZF")] < r[(mu, "FPA-ZF")]
        assert r[(mu, "MA-MMSE")] < r[(mu, "FPA-MMSE")]


def test_criterion_14_prm_error_degradation(prm_error_rows):
    """PRM error nu = 0.2: bounded degradation, MA still below FPA."""
    r = prm_error_rows
    zf_loss = r[(0.2, "MA-ZF")] - r[(0.0, "MA-ZF")]
    mmse_loss = r[(0.2, "MA-MMSE")] - r[(0.0, "MA-MMSE")]
    assert 1.5 <= zf_loss <= 4.5
    assert 0.5 <= mmse_loss <= 3.0
    for nu in (0.0, 0.2):
        assert r[(nu, "MA-ZF")] < r[(nu, "FPA-ZF")]
        assert r[(nu, "MA-MMSE")] < r[(nu, "FPA-MMSE")]
