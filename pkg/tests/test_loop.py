import math
import random
from dataclasses import replace
from fractions import Fraction

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from encloop import he
from encloop.exactmat import RationalMatrix
from encloop.loop import (
    CSV_COLUMNS_SUFFIX,
    PlantSim,
    RunConfig,
    centered_mod_recover,
    lattice_params_for_main,
    process_step,
    run_closed_loop_main,
    run_closed_loop_prelim,
)
from encloop.planner import MainPlanOptions, PlantModel, plan_main

from conftest import random_main_system


def rmat(rows):
    return RationalMatrix.from_rows(rows)


def main_cfg(sc, plan, horizon, *, backend="mock", seed=0, detail=False, q=None):
    q = q if q is not None else plan.q
    if backend == "mock":
        params = he.SchemeParams.mock(q)
    else:
        params = lattice_params_for_main(plan, plan.dims, horizon)
    return RunConfig(plant=sc.plant, ctrl=sc.ctrl, reference=sc.reference,
                     x_p0=sc.x_p0, horizon=horizon, params=params, seed=seed,
                     collect_detail=detail)


class TestCenteredRecover:
    def test_window_identity(self):
        assert centered_mod_recover([7], 0, 10) == [-3]

    def test_examples(self):
        # value within q/2 of the prior is recovered exactly
        x, prior, q = 123456789, 123456000, 10**6
        assert centered_mod_recover([x % q], prior, q) == [x]

    def test_rational_prior(self):
        q = 100
        x = -249
        assert centered_mod_recover([x % q], Fraction(-499, 2), q) == [x]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=-10**30, max_value=10**30),
           st.integers(min_value=-10**12, max_value=10**12),
           st.integers(min_value=2, max_value=10**20))
    def test_recovers_inside_window(self, prior, offset, q):
        offset = offset % q - q // 2  # pull offset inside [-q/2, q/2)
        x = prior + offset
        assert centered_mod_recover([x % q], prior, q) == [x]

    def test_documented_failure_mode(self):
        q = 10
        x, prior = 17, 0  # |x - prior| >= q/2: off by a multiple of q
        got = centered_mod_recover([x % q], prior, q)[0]
        assert got != x and (got - x) % q == 0


class TestProcessStep:
    def test_rest_stays_at_rest(self, batch):
        x, y = process_step(np.zeros(4), np.zeros(1), batch.plant)
        assert not x.any() and not y.any()

    def test_identity_hold(self):
        plant = PlantModel(A=RationalMatrix.identity(2),
                           B=RationalMatrix.zeros(2, 1),
                           C=RationalMatrix.identity(2))
        x, y = process_step(np.array([1.0, -2.0]), np.zeros(1), plant)
        assert np.allclose(x, [1.0, -2.0]) and np.allclose(y, [1.0, -2.0])

    def test_ten_steps_match_direct_recursion(self, batch):
        # plant driven by the unquantized controller; independent oracle
        A, B, C = (m.to_floats() for m in
                   (batch.plant.A, batch.plant.B, batch.plant.C))
        F, G, H = (m.to_floats() for m in
                   (batch.ctrl.F, batch.ctrl.G, batch.ctrl.H))
        R, J, S = (m.to_floats() for m in
                   (batch.ctrl.R_ref, batch.ctrl.J, batch.ctrl.S))
        r = np.array([float(x) for x in batch.reference.data])
        xp = np.array([1.0, 1.0, 1.0, 1.0])
        xc = np.zeros(4)
        xp2, xc2 = xp.copy(), xc.copy()
        for _ in range(10):
            y = C @ xp
            u = H @ xc + J @ y + S @ r
            xp, _ = process_step(xp, u, batch.plant)
            xc = F @ xc + G @ y + R @ r
            # oracle: plain numpy recursion
            y2 = C @ xp2
            u2 = H @ xc2 + J @ y2 + S @ r
            xp2 = A @ xp2 + B @ u2
            xc2 = F @ xc2 + G @ y2 + R @ r
        assert np.allclose(xp, xp2, atol=1e-12)


class TestMainLoop:
    def test_zero_scenario_all_zero(self, batch, batch_companion):
        zero_ref = RationalMatrix.zeros(4, 1)
        plan = plan_main(batch.plant, batch.ctrl,
                         MainPlanOptions(L=batch_companion.L,
                                         L_exact=batch_companion.L,
                                         reference=zero_ref))
        from encloop.fixtures import Scenario
        sc = Scenario("zero", batch.plant, batch.ctrl, zero_ref,
                      tuple(Fraction(0) for _ in range(4)))
        tr = run_closed_loop_main(plan, main_cfg(sc, plan, 20))
        assert all(r.u_a == (0.0,) and r.u_true == (0.0,) for r in tr.records)
        assert tr.recovery_failures == 0 and tr.saturation_count == 0

    def test_batch_sound_run_exact(self, batch, sound_plan):
        tr = run_closed_loop_main(sound_plan, main_cfg(batch, sound_plan, 50,
                                                       detail=True))
        assert tr.recovery_failures == 0
        assert tr.saturation_count == 0
        assert tr.oracle_mismatches == 0
        # restored inputs equal the converted controller's outputs exactly:
        # recomputed from the exact integer shadow values in the detail log
        for det in tr.detail:
            u_exact = [sound_plan.s2 * det["l"] * x for x in det["u_tilde"]]
            assert u_exact == det["u_a_exact"]

    def test_main_counters(self, batch, sound_plan):
        tr = run_closed_loop_main(sound_plan, main_cfg(batch, sound_plan, 10))
        d = sound_plan.dims
        per = d["n"] + d["n_x"] + d["w"]
        assert all(r.msgs_ctrl_to_act == per for r in tr.records)
        assert tr.msgs_ctrl_to_act == 10 * per
        assert tr.msgs_sensor_to_ctrl == 10 * d["v"]
        assert tr.msgs_provider_to_ctrl == 10 * d["n_r"]
        assert tr.msgs_ctrl_to_sensor == 10 * d["v"]
        assert tr.actuator_enc_ops == 0
        assert tr.actuator_dec_ops == 10 * per

    def test_fault_injection_small_modulus(self, batch, sound_plan):
        bad = replace(sound_plan, q=2**41)
        tr = run_closed_loop_main(bad, main_cfg(batch, bad, 50))
        assert tr.recovery_failures > 0

    def test_backend_equivalence(self, batch, sound_plan):
        tr_m = run_closed_loop_main(sound_plan, main_cfg(batch, sound_plan, 25))
        tr_l = run_closed_loop_main(sound_plan,
                                    main_cfg(batch, sound_plan, 25,
                                             backend="lattice", seed=5))
        assert tr_l.recovery_failures == 0 and tr_l.oracle_mismatches == 0
        assert [r.u_a for r in tr_m.records] == [r.u_a for r in tr_l.records]

    def test_zero_reference_stabilizes_plant(self, batch, batch_companion):
        zero_ref = RationalMatrix.zeros(4, 1)
        plan = plan_main(batch.plant, batch.ctrl,
                         MainPlanOptions(L=batch_companion.L,
                                         L_exact=batch_companion.L,
                                         reference=zero_ref))
        from encloop.fixtures import Scenario
        sc = Scenario("reg", batch.plant, batch.ctrl, zero_ref, batch.x_p0)
        tr = run_closed_loop_main(plan, main_cfg(sc, plan, 150))
        assert tr.recovery_failures == 0
        assert max(abs(x) for x in tr.final_plant_state) < 1e-3
        assert tr.records[-1].diff_inf < 1e-6

    def test_scaled_reference_error_envelope(self, batch, batch_companion):
        # non-decimal reference: the scaled error never exceeds 1/(2 omega)
        ref = RationalMatrix.column([Fraction(1, 3), Fraction(2, 7),
                                     Fraction(1, 9), Fraction(5, 11)])
        plan = plan_main(batch.plant, batch.ctrl,
                         MainPlanOptions(L=batch_companion.L,
                                         L_exact=batch_companion.L,
                                         reference=ref))
        from encloop.fixtures import Scenario
        sc = Scenario("frac-ref", batch.plant, batch.ctrl, ref, batch.x_p0)
        cfg = main_cfg(sc, plan, 40, detail=True)
        tr = run_closed_loop_main(plan, cfg)
        assert tr.recovery_failures == 0 and tr.saturation_count == 0
        bound = Fraction(1, 2 * plan.omega)
        for det in tr.detail[1:]:
            l = det["l"]
            for r_i, re_i in zip(ref.data, det["re_scaled"]):
                e_r = r_i / l - re_i
                assert abs(e_r) <= bound

    def test_step_identities_on_batch(self, batch, sound_plan):
        """Transmitted increments equal their closed forms: alpha from the
        quantized innovation, beta/gamma from scaled reference errors."""
        tr = run_closed_loop_main(sound_plan, main_cfg(batch, sound_plan, 30,
                                                       detail=True))
        assert tr.recovery_failures == 0
        certs = sound_plan.certificates
        L_int = [list(certs["L/omega"].scaled_entries[i * 2:(i + 1) * 2])
                 for i in range(4)]
        R_int = [list(certs["R/omega"].scaled_entries[i * 4:(i + 1) * 4])
                 for i in range(4)]
        S_int = [list(certs["S/s2"].scaled_entries[0:4])]
        inv_w = 1 / sound_plan.omega
        ref = list(batch.reference.data)
        det = tr.detail
        for t in range(1, 30):
            alpha = det[t]["alpha"]
            want = [sum(m * x for m, x in zip(row, det[t - 1]["innovation"]))
                    for row in L_int]
            assert alpha == want
            # scaled reference errors at t-1, t-2
            def e_r(k):
                l = det[k]["l"]
                return [r / l - re for r, re in zip(ref, det[k]["re_scaled"])]
            if t >= 2:
                # R_int is R/omega as integers: beta = R/w^2 e(t-2) - R/w e(t-1)
                em2, em1 = e_r(t - 2), e_r(t - 1)
                beta = det[t]["beta"]
                want_b = [inv_w * sum(Fraction(m) * e for m, e in zip(row, em2))
                          - sum(Fraction(m) * e for m, e in zip(row, em1))
                          for row in R_int]
                assert [Fraction(b) for b in beta] == want_b
                em1t, emt = e_r(t - 1), e_r(t)
                gamma = det[t]["gamma"]
                want_g = [inv_w * sum(Fraction(m) * e for m, e in zip(row, em1t))
                          - sum(Fraction(m) * e for m, e in zip(row, emt))
                          for row in S_int]
                assert [Fraction(g) for g in gamma] == want_g


class TestPrelimLoop:
    def test_tanks_run_exact(self, tanks, tanks_plan):
        cfg = RunConfig(plant=tanks.plant, ctrl=tanks.ctrl,
                        reference=tanks.reference, x_p0=tanks.x_p0,
                        horizon=200, params=he.SchemeParams.mock(tanks_plan.q),
                        seed=0, collect_detail=True)
        tr = run_closed_loop_prelim(tanks_plan, cfg)
        assert tr.recovery_failures == 0 and tr.oracle_mismatches == 0
        for det in tr.detail:
            assert det["u_tilde"] == det["u_tilde_recovered"]
        # restored input matches the quantized-loop truth exactly
        for det in tr.detail:
            want = [tanks_plan.s1 * tanks_plan.s2 * det["l"] * x
                    for x in det["u_tilde"]]
            assert want == det["u_a_exact"]

    def test_bound_dominates_observed_increments(self, tanks, tanks_plan):
        cfg = RunConfig(plant=tanks.plant, ctrl=tanks.ctrl,
                        reference=tanks.reference, x_p0=tanks.x_p0,
                        horizon=200, params=he.SchemeParams.mock(tanks_plan.q),
                        seed=0)
        tr = run_closed_loop_prelim(tanks_plan, cfg)
        mx = max(r.log2_alpha for r in tr.records)
        assert 2.0 * 2**mx < tanks_plan.q

    def test_fault_injection(self, tanks, tanks_plan):
        cfg = RunConfig(plant=tanks.plant, ctrl=tanks.ctrl,
                        reference=tanks.reference, x_p0=tanks.x_p0,
                        horizon=200, params=he.SchemeParams.mock(tanks_plan.q),
                        seed=0)
        tr = run_closed_loop_prelim(tanks_plan, cfg)
        mx = max(r.log2_alpha for r in tr.records if math.isfinite(r.log2_alpha))
        q_small = max(2, 2**int(mx))
        bad = replace(tanks_plan, q=q_small)
        cfg_bad = replace(cfg, params=he.SchemeParams.mock(q_small))
        tr_bad = run_closed_loop_prelim(bad, cfg_bad)
        assert tr_bad.recovery_failures > 0

    def test_converges_to_original_input(self, tanks, tanks_plan):
        cfg = RunConfig(plant=tanks.plant, ctrl=tanks.ctrl,
                        reference=tanks.reference, x_p0=tanks.x_p0,
                        horizon=120, params=he.SchemeParams.mock(tanks_plan.q),
                        seed=0)
        tr = run_closed_loop_prelim(tanks_plan, cfg)
        assert tr.records[-1].diff_inf < 1e-9

    def test_prelim_on_lattice_backend(self, tanks, tanks_plan):
        width = max(tanks.plant.n, tanks.ctrl.n_x, tanks.ctrl.w,
                    tanks.ctrl.n_r, tanks.plant.v)
        per_step = math.ceil(math.log2(tanks_plan.q)) + width.bit_length() + 3
        params = he.SchemeParams.lattice_for_budget(
            tanks_plan.q, 24 * per_step + 64)
        cfg = RunConfig(plant=tanks.plant, ctrl=tanks.ctrl,
                        reference=tanks.reference, x_p0=tanks.x_p0,
                        horizon=20, params=params, seed=1)
        tr = run_closed_loop_prelim(tanks_plan, cfg)
        assert tr.recovery_failures == 0 and tr.oracle_mismatches == 0


class TestTrace:
    def test_csv_schema(self, tanks, tanks_plan, tmp_path):
        cfg = RunConfig(plant=tanks.plant, ctrl=tanks.ctrl,
                        reference=tanks.reference, x_p0=tanks.x_p0,
                        horizon=5, params=he.SchemeParams.mock(tanks_plan.q),
                        seed=0)
        tr = run_closed_loop_prelim(tanks_plan, cfg)
        path = tmp_path / "trace.csv"
        tr.to_csv(str(path))
        header = path.read_text().splitlines()[0].split(",")
        w = tanks.ctrl.w
        assert header == (["t"] + [f"u_true_{i}" for i in range(w)]
                          + [f"u_a_{i}" for i in range(w)] + CSV_COLUMNS_SUFFIX)
        assert len(path.read_text().splitlines()) == 6

    def test_exact_plant_state(self, batch):
        sim = PlantSim(batch.plant, batch.x_p0)
        u = [Fraction(1, 3)]
        sim.step(u)
        expect = [
            sum(a * x for a, x in zip(row, [Fraction(1)] * 4))
            + row_b[0] * Fraction(1, 3)
            for row, row_b in zip(batch.plant.A.to_lists(), batch.plant.B.to_lists())
        ]
        assert sim.x == expect


class TestDeterminismAndSchedules:
    def test_mock_runs_bit_deterministic(self, batch, sound_plan):
        a = run_closed_loop_main(sound_plan, main_cfg(batch, sound_plan, 30))
        b = run_closed_loop_main(sound_plan, main_cfg(batch, sound_plan, 30))
        assert [(r.u_a, r.log2_alpha, r.saturated) for r in a.records] == \
               [(r.u_a, r.log2_alpha, r.saturated) for r in b.records]

    def test_time_varying_reference_experimental(self, batch, sound_plan):
        ref2 = RationalMatrix.column(["2.2", "5.2", "3.5", "6.7"])
        # switch while the zoom is still coarse: absorbed and tracked
        early = [batch.reference] + [ref2] * 79
        cfg = replace(main_cfg(batch, sound_plan, 80), reference_schedule=early)
        tr = run_closed_loop_main(sound_plan, cfg)
        assert tr.recovery_failures == 0
        assert tr.records[-1].diff_inf < 1e-3
        # switch after zooming in: (r - r_e)/l(t) blows past the quantizer
        # range, and the run records the failure instead of hiding it
        late = [batch.reference] * 10 + [ref2] * 30
        cfg = replace(main_cfg(batch, sound_plan, 40), reference_schedule=late)
        tr = run_closed_loop_main(sound_plan, cfg)
        assert tr.saturation_count > 0 or tr.recovery_failures > 0


class TestRandomSystems:
    def test_small_random_main_runs(self):
        rng = random.Random(4242)
        for _ in range(3):
            plant, ctrl, design, reference, x_p0 = random_main_system(rng)
            plan = plan_main(plant, ctrl, MainPlanOptions(
                L=design.L, L_exact=design.L, reference=reference))
            from encloop.fixtures import Scenario
            sc = Scenario("rand", plant, ctrl, reference, x_p0)
            tr = run_closed_loop_main(plan, main_cfg(sc, plan, 20))
            assert tr.recovery_failures == 0
            assert tr.oracle_mismatches == 0
            assert tr.saturation_count == 0
