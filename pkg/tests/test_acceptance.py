"""Acceptance suite: one test per release criterion, at pinned tolerances.

Heavy scenario runs are session fixtures shared between criteria.  Each test
prints a single PASS line on success (run pytest with -s or check captured
output); a failing criterion fails its test with the measured values.
"""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from heraldsim import harness, model, qcore
from heraldsim.dynamics import (IntegrationOptions, ensemble_average,
                                mcwf_trajectory, propagate_master)
from heraldsim.harness import RunConfig, run_scenario
from heraldsim.model import (ModelParams, branch_amplitude_analytic, branch_state,
                             build_lindblad_model, build_single_node_effective,
                             lambda_from_physical)
from heraldsim.protocol import (ProtocolSchedule, branch_leak_integral,
                                herald_trajectories, mean_detected_photons,
                                summarize_trajectories)
from heraldsim.qcore import (basis_state, coherent_state, product_state,
                             trace_distance)

SEED = 20260809


def _report(name: str, detail: str):
    print(f"[ACCEPTANCE] PASS {name}: {detail}")


# ---------------------------------------------------------------------------
# shared scenario runs

@pytest.fixture(scope="session")
def fig2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig2")
    cfg = RunConfig()
    cfg.scenario = "fig2"
    cfg.output_dir = str(out)
    code = run_scenario(cfg)
    assert code == 0, "fig2 scenario failed (integrity or convergence gate)"
    rows = np.genfromtxt(out / "fig2.csv", delimiter=",", names=True)
    meta = json.loads((out / "fig2.json").read_text())
    return rows, meta


@pytest.fixture(scope="session")
def fig4_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig4")
    cfg = RunConfig()
    cfg.scenario = "fig4"
    cfg.output_dir = str(out)
    code = run_scenario(cfg)
    assert code == 0, "fig4 scenario failed (integrity or convergence gate)"
    rows = np.genfromtxt(out / "fig4.csv", delimiter=",", names=True)
    meta = json.loads((out / "fig4.json").read_text())
    return rows, meta


# ---------------------------------------------------------------------------
# criterion 1: parameter consistency

def test_parameter_consistency():
    plus_ueV, plus_rad = lambda_from_physical(41.4, 90.0, 414.0)
    minus_ueV, _ = lambda_from_physical(46.0, 90.0, 460.0)
    assert plus_ueV == pytest.approx(9.00, abs=1e-9)
    assert minus_ueV == pytest.approx(9.00, abs=1e-9)
    ghz = plus_rad / (2 * math.pi) / 1e9
    assert ghz == pytest.approx(2.18, abs=0.005)
    assert abs(ghz - 2.2) / 2.2 < 0.02
    _report("parameter-consistency",
            f"both Raman products 9.00 ueV, lambda/2pi = {ghz:.4f} GHz "
            f"({abs(ghz - 2.2) / 2.2 * 100:.2f}% from 2.2 GHz)")


# ---------------------------------------------------------------------------
# criterion 2: closed-system oracle

def test_closed_system_oracle():
    nf = 36
    m = build_single_node_effective(1.0, 0.0, 0.0, nf)
    psi0 = product_state(m.layout, {"dot": branch_state(+1), "cav": np.eye(nf)[0]})
    opts = IntegrationOptions(dt=5e-4, t_max=2.0, record_stride=500)

    series, rho_final = propagate_master(m, psi0.to_density(), opts)
    rec, _ = mcwf_trajectory(m, psi0, opts, seed=SEED)

    worst_me = 1.0
    for t in (0.5, 1.0, 1.5, 2.0):
        alpha = branch_amplitude_analytic(1.0, 0.0, t, +1)
        ref = product_state(m.layout, {"dot": branch_state(+1),
                                       "cav": coherent_state(alpha, nf).amplitudes})
        o2 = IntegrationOptions(dt=5e-4, t_max=t, record_stride=10 ** 6)
        _, rho_t = propagate_master(m, psi0.to_density(), o2)
        worst_me = min(worst_me, qcore.fidelity_pure(rho_t, ref))
    alpha = branch_amplitude_analytic(1.0, 0.0, 2.0, +1)
    ref = product_state(m.layout, {"dot": branch_state(+1),
                                   "cav": coherent_state(alpha, nf).amplitudes})
    traj_overlap = abs(rec.final_state.overlap(ref)) ** 2
    assert worst_me > 1 - 1e-6
    assert traj_overlap > 1 - 1e-6
    _report("closed-system-oracle",
            f"ME overlap deficit {1 - worst_me:.2e}, trajectory deficit "
            f"{1 - traj_overlap:.2e} (N_F=36, lambda*t<=2)")


# ---------------------------------------------------------------------------
# criterion 3: Lindblad integrity on every figure run

def test_lindblad_integrity(fig2_run, fig4_run):
    # The fig2/fig4 fixtures already enforce trace/Hermiticity/positivity at
    # every recorded point and the dt-halving and cutoff-doubling gates
    # (ConvergenceError exits nonzero and fails the fixture).  Repeat the
    # point checks on a fresh evolution to make the bounds explicit here.
    p = ModelParams(kappa_1=1.0, kappa_2=1.0, gamma_1=0.05, gamma_2=0.05)
    sched = ProtocolSchedule(t_drive=2.0, t_ringdown=0.0, dt=1e-3, record_stride=100)
    series = mean_detected_photons(p, sched)
    assert series.column("trace_err").max() < 1e-8
    assert series.column("herm_defect").max() < 1e-10
    assert series.column("min_eig").min() >= -1e-8
    harness._fig3_marginal_gate(RunConfig(), 0.05)
    _report("lindblad-integrity",
            f"worst trace err {series.column('trace_err').max():.2e}, "
            f"herm defect {series.column('herm_defect').max():.2e}, "
            f"min eig {series.column('min_eig').min():.2e}; "
            "dt-halving and cutoff-doubling gates passed on fig2/fig3/fig4")


# ---------------------------------------------------------------------------
# criterion 4: unravelling equivalence

def test_unravelling_equivalence():
    n_traj = 2000
    p = ModelParams(kappa_1=1.0, kappa_2=1.0, gamma_1=0.05, gamma_2=0.05)
    m = build_lindblad_model(p, "effective", n_fock=12, detected="ports")
    psi0 = basis_state(m.layout, {"dot1": model.X_MINUS, "dot2": model.X_MINUS,
                                  "cav1": 0, "cav2": 0})
    opts = IntegrationOptions(dt=2e-3, t_max=1.2, record_stride=100)
    _, rhos = ensemble_average(m, psi0, opts, n_traj=n_traj, master_seed=SEED,
                               keep_density=True)
    me_states: list = []
    propagate_master(m, psi0.to_density(), opts, check_positivity=False,
                     keep_states=me_states)
    dists = [trace_distance(rho_ens, rho_me)
             for rho_ens, rho_me in zip(rhos, me_states)]
    bound = 5.0 / math.sqrt(n_traj)
    assert max(dists) < bound, f"trace distances {dists}"
    _report("unravelling-equivalence",
            f"max trace distance {max(dists):.4f} < {bound:.4f} "
            f"(n_traj={n_traj}, fig3 parameters)")


# ---------------------------------------------------------------------------
# criterion 5: detected photon number

def test_fig2_analogue(fig2_run):
    rows, meta = fig2_run
    names = rows.dtype.names
    n_cols = [n for n in names if n.startswith("N_kappa")]
    assert [n.replace("N_kappa_", "") for n in n_cols] == ["01", "02", "05", "10"]
    final = {n: rows[n][-1] for n in n_cols}
    assert final["N_kappa_10"] == pytest.approx(branch_leak_integral(1, 1.0, 3.0),
                                                rel=0.01)
    assert final["N_kappa_10"] == pytest.approx(3.37, rel=0.01)
    assert final["N_kappa_01"] == pytest.approx(branch_leak_integral(1, 0.1, 3.0),
                                                rel=0.01)
    assert final["N_kappa_01"] == pytest.approx(0.81, rel=0.015)
    # caption ordering: bottom-to-top with increasing kappa, at every time
    t = rows["lambda_t"]
    mask = t > 0.05
    for low, high in zip(n_cols, n_cols[1:]):
        assert (rows[low][mask] < rows[high][mask]).all(), (low, high)
    _report("fig2-analogue",
            f"N(3) = {final['N_kappa_10']:.4f} (target 3.37 +-1%), "
            f"{final['N_kappa_01']:.4f} (target 0.81); curve order matches caption")


# ---------------------------------------------------------------------------
# criterion 6: perfect heralding without dot decoherence

def test_perfect_heralding_lossless_dots():
    all_fids = []
    for kappa in (1.0, 0.55):
        p = ModelParams(kappa_1=kappa, kappa_2=kappa)
        sched = ProtocolSchedule.with_default_ringdown(p, t_drive=1.0, dt=1e-3,
                                                       ringdown_factor=18.0)
        summaries = herald_trajectories(p, sched, n_traj=250, master_seed=SEED)
        succ = [s for s in summaries if s.success]
        assert len(succ) > 60, f"too few heralds at kappa={kappa}"
        for s in succ:
            assert s.fidelity == pytest.approx(1.0, abs=1e-6), (
                f"kappa={kappa} seed={s.seed} F={s.fidelity}")
        all_fids += [s.fidelity for s in succ]
    mean_f = float(np.mean(all_fids))
    assert mean_f == pytest.approx(1.0, abs=1e-4)
    _report("perfect-heralding",
            f"{len(all_fids)} heralded runs at kappa/lambda = 1.0 and 0.55, "
            f"every fidelity within 1e-6 of 1; mean deficit {1 - mean_f:.2e}")


# ---------------------------------------------------------------------------
# criterion 7: fidelity claim with dot decoherence

@pytest.fixture(scope="session")
def fidelity_sweep():
    t_drives = (0.5, 0.75, 1.0, 1.25, 1.5)
    gammas = (0.01, 0.05, 0.1, 0.5, 1.0)

    def stats_for(gamma, tdrive, n_traj, seed=SEED):
        p = ModelParams(kappa_1=1.0, kappa_2=1.0, gamma_1=gamma, gamma_2=gamma)
        sched = ProtocolSchedule(t_drive=tdrive, t_ringdown=18.0, dt=2e-3)
        summaries = herald_trajectories(p, sched, n_traj=n_traj, master_seed=seed)
        return summarize_trajectories(summaries, n_traj)

    # cheap sweep locates the plateau; the claim itself is verified with the
    # full ensemble at the plateau point
    probe = {t: stats_for(0.05, t, n_traj=250) for t in t_drives}
    plateau_t = max(probe, key=lambda t: probe[t].pooled.mean_fidelity
                    if probe[t].pooled.mean_fidelity is not None else 0.0)
    full = stats_for(0.05, plateau_t, n_traj=1200, seed=SEED + 7)
    # the degradation ladder is evaluated at a drive time long enough for the
    # branches to separate; before that the spins hold almost no excited-state
    # population and dot decoherence has nothing to act on
    t_mono = 1.5
    by_gamma = {g: stats_for(g, t_mono, n_traj=600, seed=SEED + 13)
                for g in gammas}
    return probe, plateau_t, full, by_gamma


def test_fidelity_claim_threshold(fidelity_sweep):
    _, plateau_t, full, _ = fidelity_sweep
    assert full.n_traj >= 1000
    assert full.pooled.stderr < 0.01
    assert full.pooled.mean_fidelity > 0.95
    _report("fidelity-claim",
            f"Gamma=0.05: plateau at lambda*T={plateau_t}: F = "
            f"{full.pooled.mean_fidelity:.4f} +- {full.pooled.stderr:.4f} > 0.95 "
            f"(n_traj=1200, success {full.success_probability:.2f})")


def test_fidelity_monotone_in_gamma(fidelity_sweep):
    _, _, _, by_gamma = fidelity_sweep
    gammas = sorted(by_gamma)
    fids = [by_gamma[g].pooled.mean_fidelity for g in gammas]
    for (g1, f1), (g2, f2) in zip(zip(gammas, fids), zip(gammas[1:], fids[1:])):
        assert f1 > f2, f"F({g1}) = {f1:.4f} !> F({g2}) = {f2:.4f}"
    detail = ", ".join(f"F({g:g})={f:.3f}" for g, f in zip(gammas, fids))
    _report("fidelity-monotone", f"at lambda*T=1.5: {detail}")


# ---------------------------------------------------------------------------
# criterion 8: full-model validation

def test_full_model_validation(fig4_run):
    rows, meta = fig4_run
    t_ns, pt, n = rows["t_ns"], rows["P_trion"], rows["n_cav"]
    # early window: before the cavity builds up
    idx = int(np.argmax(n > 0.1)) or len(n)
    early_mean = float(pt[:idx + 1].mean())
    early_max = float(pt[:idx + 1].max())
    assert early_mean <= 0.02, f"early mean trion population {early_mean}"
    assert early_max <= 0.042, f"early peak trion population {early_max}"
    assert pt.max() < 0.05  # stays far below unity everywhere
    rate = meta["fig4"]["effective_channel_rate_2pi_MHz"]
    assert 2.4 <= rate <= 2.9, f"effective channel rate {rate:.3f} * 2pi MHz"
    lo, hi = sorted(meta["fig4"]["branch_estimates_2pi_MHz"])
    _report("full-model-validation",
            f"early-window mean P_T = {early_mean:.4f} <= 0.02 (peak {early_max:.4f}); "
            f"effective decoherence rate {rate:.2f} * 2pi MHz in [2.4, 2.9] "
            f"(branch estimates {lo:.2f}/{hi:.2f}, slope "
            f"{meta['fig4']['coherence_slope_2pi_MHz']:.2f})")


# ---------------------------------------------------------------------------
# criterion 9: exchange symmetry

def test_exchange_symmetry():
    n_traj = 700
    base = dict(gamma_T=0.0)
    p_fwd = ModelParams(kappa_1=1.0, kappa_2=0.7, gamma_1=0.02, gamma_2=0.06, **base)
    p_swp = ModelParams(kappa_1=0.7, kappa_2=1.0, gamma_1=0.06, gamma_2=0.02, **base)
    sched_f = ProtocolSchedule(t_drive=1.0, t_ringdown=18.0 / 0.7, dt=1.5e-3)

    counts_f = mean_detected_photons(p_fwd, sched_f)
    counts_s = mean_detected_photons(p_swp, sched_f)
    assert np.allclose(counts_f.column("N_total"), counts_s.column("N_total"),
                       atol=1e-9)

    st_f = summarize_trajectories(
        herald_trajectories(p_fwd, sched_f, n_traj, master_seed=SEED), n_traj)
    st_s = summarize_trajectories(
        herald_trajectories(p_swp, sched_f, n_traj, master_seed=SEED + 1), n_traj)

    se_succ = math.sqrt(st_f.success_probability * (1 - st_f.success_probability)
                        / n_traj) * math.sqrt(2.0)
    d_succ = abs(st_f.success_probability - st_s.success_probability)
    assert d_succ < 4 * se_succ, (st_f.success_probability, st_s.success_probability)

    se_fid = math.sqrt(st_f.pooled.stderr ** 2 + st_s.pooled.stderr ** 2)
    d_fid = abs(st_f.pooled.mean_fidelity - st_s.pooled.mean_fidelity)
    assert d_fid < 4 * max(se_fid, 1e-4), (st_f.pooled, st_s.pooled)
    _report("exchange-symmetry",
            f"node swap: |d success| = {d_succ:.3f} (4se {4 * se_succ:.3f}), "
            f"|d fidelity| = {d_fid:.4f} (4se {4 * se_fid:.4f}), "
            "deterministic N(t) identical")
