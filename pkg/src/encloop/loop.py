"""Five-party closed-loop simulation: plant, sensor, encrypted controller,
actuator, and reference provider.

Numeric split: the simulated plant, the quantizer inputs, and everything
behind the quantizer (controller states, transmitted increments, actuator
reconstruction) are exact -- rationals at the edges, arbitrary-precision
integers inside, with the zoom l(t) an exact rational.  The measurement
y_p(t) gets divided by l(t), so any fixed-precision noise on it would be
amplified without bound; exactness is load-bearing, not cosmetic.  Doubles
appear only in the unencrypted reference loop (the restoration target) and
in reporting.

Alongside the encrypted loop run three checks:
* an exact integer shadow of the converted controller (ground truth for
  every ciphertext, bit-exact under the mock backend);
* the original unquantized closed loop in doubles (restoration target);
* per-step mod-q decryption checks against the integer shadow.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import he
from .exactmat import RationalMatrix, as_fraction
from .planner import MainPlan, PlantModel, ControllerModel, PrelimPlan
from .quantizer import QuantizerSpec, quantize_vector


# -- shared kernels ---------------------------------------------------------


def centered_mod_recover(v_modq: Sequence[int], prior, q: int):
    """Lift residues to the integers nearest a prior estimate.

    Entry i becomes the unique integer congruent to v_modq[i] mod q inside
    [prior_i - q/2, prior_i + q/2), via x = v - floor((v - prior + q/2)/q) q.
    Priors may be exact rationals.  If the true value strays q/2 or more from
    the prior, the lift is off by a multiple of q (the documented failure
    mode that modulus planning must exclude).
    """
    if q < 2:
        raise ValueError("modulus must be >= 2")
    priors = prior if isinstance(prior, (list, tuple)) else [prior] * len(v_modq)
    out = []
    half = Fraction(q, 2)
    for v, p in zip(v_modq, priors):
        k = math.floor((v - as_fraction(p) + half) / q)
        out.append(v - k * q)
    return out


def _imat(cert) -> list:
    """Integer matrix (list of row lists) from an integrality certificate."""
    return [list(cert.scaled_entries[i * cert.cols : (i + 1) * cert.cols])
            for i in range(cert.rows)]


def _imat_mod(M, q):
    return [[x % q for x in row] for row in M]


def _ineg_mod(M, q):
    return [[(-x) % q for x in row] for row in M]


def _imatvec(M, v):
    return [sum(m * x for m, x in zip(row, v)) for row in M]


def _ivadd(*vs):
    return [sum(t) for t in zip(*vs)]


def _inorm(v):
    return max((abs(x) for x in v), default=0)


def _log2norm(v) -> float:
    n = _inorm(v)
    return math.log2(n) if n > 0 else float("-inf")


# -- trace ------------------------------------------------------------------

CSV_COLUMNS_PREFIX = ["t"]
CSV_COLUMNS_SUFFIX = [
    "diff_inf", "log2_alpha", "log2_beta", "log2_gamma", "log2_sensor_gap",
    "saturated", "msgs_ctrl_to_act", "enc_ops", "dec_ops",
]


@dataclass
class StepRecord:
    t: int
    u_true: tuple
    u_a: tuple
    diff_inf: float
    log2_alpha: float
    log2_beta: float
    log2_gamma: float
    log2_sensor_gap: float
    saturated: bool
    msgs_ctrl_to_act: int
    enc_ops: int
    dec_ops: int
    recovery_failure: bool


@dataclass
class ClosedLoopTrace:
    scheme: str
    records: list = field(default_factory=list)
    detail: list = field(default_factory=list)
    saturation_count: int = 0
    recovery_failures: int = 0
    oracle_mismatches: int = 0
    msgs_sensor_to_ctrl: int = 0
    msgs_provider_to_ctrl: int = 0
    msgs_ctrl_to_sensor: int = 0
    msgs_ctrl_to_act: int = 0
    actuator_enc_ops: int = 0
    actuator_dec_ops: int = 0
    enc_ops: int = 0
    dec_ops: int = 0
    final_plant_state: tuple = ()
    final_ideal_plant_state: tuple = ()

    def max_log2_increment(self) -> float:
        m = float("-inf")
        for r in self.records:
            m = max(m, r.log2_alpha, r.log2_beta, r.log2_gamma, r.log2_sensor_gap)
        return m

    def final_diff_inf(self) -> float:
        return self.records[-1].diff_inf if self.records else float("nan")

    def summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "steps": len(self.records),
            "max_log2_increment": self.max_log2_increment(),
            "final_diff_inf": self.final_diff_inf(),
            "saturation_count": self.saturation_count,
            "recovery_failures": self.recovery_failures,
            "oracle_mismatches": self.oracle_mismatches,
            "msgs_ctrl_to_act_per_step": (
                self.msgs_ctrl_to_act // len(self.records) if self.records else 0
            ),
            "msgs_sensor_to_ctrl": self.msgs_sensor_to_ctrl,
            "msgs_provider_to_ctrl": self.msgs_provider_to_ctrl,
            "msgs_ctrl_to_sensor": self.msgs_ctrl_to_sensor,
            "actuator_enc_ops": self.actuator_enc_ops,
            "actuator_dec_ops": self.actuator_dec_ops,
            "enc_ops_total": self.enc_ops,
            "dec_ops_total": self.dec_ops,
        }

    def to_csv(self, path: str):
        w = len(self.records[0].u_true) if self.records else 0
        cols = (CSV_COLUMNS_PREFIX
                + [f"u_true_{i}" for i in range(w)]
                + [f"u_a_{i}" for i in range(w)]
                + CSV_COLUMNS_SUFFIX)
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(cols)
            for r in self.records:
                out.writerow(
                    [r.t]
                    + [repr(x) for x in r.u_true]
                    + [repr(x) for x in r.u_a]
                    + [repr(r.diff_inf), r.log2_alpha, r.log2_beta, r.log2_gamma,
                       r.log2_sensor_gap, int(r.saturated), r.msgs_ctrl_to_act,
                       r.enc_ops, r.dec_ops]
                )


# -- plant and the unencrypted reference loop --------------------------------


class PlantSim:
    """Exact rational process state.

    The sensor divides its measurement by l(t); any fixed-precision noise on
    y_p is amplified by 1/l(t) and overwhelms the quantizer cell within a few
    steps, so the simulated plant must carry exact values.  All plant data is
    rational (models, delivered inputs), so the state stays rational.
    """

    def __init__(self, plant: PlantModel, x_p0):
        self.A = plant.A.to_lists()
        self.B = plant.B.to_lists()
        self.C = plant.C.to_lists()
        self.x = [as_fraction(x) for x in x_p0]

    def output(self):
        return [sum((c * x for c, x in zip(row, self.x)), Fraction(0))
                for row in self.C]

    def step(self, u):
        u = [as_fraction(x) for x in u]
        self.x = [
            sum((a * x for a, x in zip(arow, self.x)), Fraction(0))
            + sum((b * ui for b, ui in zip(brow, u)), Fraction(0))
            for arow, brow in zip(self.A, self.B)
        ]

    def state_floats(self) -> np.ndarray:
        return np.array([float(x) for x in self.x], dtype=float)


def process_step(x_p: np.ndarray, u, plant: PlantModel):
    """One plant transition; returns (x_p_next, y_p at the current step)."""
    A, B, C = plant.A.to_floats(), plant.B.to_floats(), plant.C.to_floats()
    x_p = np.asarray(x_p, dtype=float)
    y_p = C @ x_p
    return A @ x_p + B @ np.asarray(u, dtype=float), y_p


class IdealLoop:
    """The pre-given controller closed with its own plant copy, no quantization."""

    def __init__(self, plant: PlantModel, ctrl: ControllerModel, x_p0, reference):
        self.A, self.B, self.C = (m.to_floats() for m in (plant.A, plant.B, plant.C))
        self.F, self.G, self.H = (m.to_floats() for m in (ctrl.F, ctrl.G, ctrl.H))
        self.R, self.J, self.S = (m.to_floats() for m in (ctrl.R_ref, ctrl.J, ctrl.S))
        self.x_p = np.array([float(x) for x in x_p0], dtype=float)
        self.x = ctrl.x0.to_floats().ravel()
        self.r = np.array([float(x) for x in reference.data], dtype=float)

    def step(self, r=None) -> np.ndarray:
        if r is not None:
            self.r = np.array([float(x) for x in r], dtype=float)
        y = self.C @ self.x_p
        u = self.H @ self.x + self.J @ y + self.S @ self.r
        x_next = self.F @ self.x + self.G @ y + self.R @ self.r
        self.x_p = self.A @ self.x_p + self.B @ u
        self.x = x_next
        return u


# -- main scheme parties ------------------------------------------------------


class MainEncController:
    """Holds only the public key; iterates the converted observer controller on
    ciphertexts and emits the bounded increments plus the observer output."""

    def __init__(self, pk, plan: MainPlan, dims, rng):
        self.pk = pk
        self.rng = rng
        q = plan.q
        certs = plan.certificates
        self.q = q
        self.A_o = _imat_mod(_imat(certs["A/omega"]), q)
        self.B_o = _imat_mod(_imat(certs["s2B/omega"]), q)
        self.L_o = _imat_mod(_imat(certs["L/omega"]), q)
        self.C_s = _imat_mod(_imat(certs["C/s1"]), q)
        self.F_m = _imat_mod(_imat(certs["F/omega"]), q)
        self.G_m = _imat_mod(_imat(certs["GC/omega"]), q)
        self.R_m = _imat_mod(_imat(certs["R/omega"]), q)
        self.H_m = _imat_mod(_imat(certs["H/s2"]), q)
        self.J_m = _imat_mod(_imat(certs["JC/s2"]), q)
        self.S_m = _imat_mod(_imat(certs["S/s2"]), q)
        inv_omega = certs["1/omega"].scaled_entries[0]

        def om_eye(d):
            return [[inv_omega % q if i == j else 0 for j in range(d)] for i in range(d)]

        # the scalar 1/omega acts on three differently sized vectors
        self.Om_r = om_eye(dims["n_r"])
        self.Om_x = om_eye(dims["n_x"])
        self.Om_u = om_eye(dims["w"])
        for name in ("A_o", "B_o", "F_m", "G_m", "H_m", "J_m",
                     "Om_r", "Om_x", "Om_u"):
            setattr(self, name + "_neg", _ineg_mod(getattr(self, name), q))
        self.enc_ops = 0
        self.dims = dims

    def _enc(self, values):
        self.enc_ops += len(values)
        return he.encrypt(self.pk, [v % self.q for v in values], self.rng)

    def bootstrap(self, x_e0_scaled):
        """Initial states plus zeroed two-deep memory (both sides share this
        convention so reconstruction telescopes from the first step)."""
        d = self.dims
        self.x_o = self._enc([0] * d["n"])
        self.x = self._enc(list(x_e0_scaled))
        self.r = self._enc([0] * d["n_r"])
        self.x_o_m1 = self._enc([0] * d["n"])
        self.x_o_m2 = self._enc([0] * d["n"])
        self.x_m1 = self._enc([0] * d["n_x"])
        self.x_m2 = self._enc([0] * d["n_x"])
        self.u_m1 = self._enc([0] * d["w"])
        self.u = self._emit_u()
        return self._emit_all()

    def _emit_u(self):
        return he.add(
            he.add(he.plain_matmul(self.H_m, self.x), he.plain_matmul(self.J_m, self.x_o)),
            he.plain_matmul(self.S_m, self.r),
        )

    def _emit_all(self):
        y_o = he.plain_matmul(self.C_s, self.x_o)
        r_beta = he.add(
            he.add(self.x_m1, he.plain_matmul(self.F_m_neg, self.x_m2)),
            he.plain_matmul(self.G_m_neg, self.x_o_m2),
        )
        r_gamma = he.add(
            he.add(self.u_m1, he.plain_matmul(self.H_m_neg, self.x_m1)),
            he.plain_matmul(self.J_m_neg, self.x_o_m1),
        )
        alpha = he.add(
            he.add(self.x_o, he.plain_matmul(self.A_o_neg, self.x_o_m1)),
            he.plain_matmul(self.B_o_neg, self.u_m1),
        )
        beta = he.add(
            he.add(he.add(self.x, he.plain_matmul(self.F_m_neg, self.x_m1)),
                   he.plain_matmul(self.G_m_neg, self.x_o_m1)),
            he.plain_matmul(self.Om_x_neg, r_beta),
        )
        gamma = he.add(
            he.add(he.add(self.u, he.plain_matmul(self.H_m_neg, self.x)),
                   he.plain_matmul(self.J_m_neg, self.x_o)),
            he.plain_matmul(self.Om_u_neg, r_gamma),
        )
        return y_o, alpha, beta, gamma

    def step(self, enc_innovation, enc_ref_increment):
        """Advance one step using last step's encrypted innovation and
        reference increment; emit (y_o, alpha, beta, gamma)."""
        x_o_next = he.add(
            he.add(he.plain_matmul(self.A_o, self.x_o), he.plain_matmul(self.B_o, self.u)),
            he.plain_matmul(self.L_o, enc_innovation),
        )
        r_next = he.add(he.plain_matmul(self.Om_r, self.r),
                        he.plain_matmul(self.Om_r, enc_ref_increment))
        x_next = he.add(
            he.add(he.plain_matmul(self.F_m, self.x), he.plain_matmul(self.G_m, self.x_o)),
            he.plain_matmul(self.R_m, self.r),
        )
        self.x_o_m2, self.x_o_m1 = self.x_o_m1, self.x_o
        self.x_m2, self.x_m1 = self.x_m1, self.x
        self.u_m1 = self.u
        self.x_o, self.x, self.r = x_o_next, x_next, r_next
        self.u = self._emit_u()
        return self._emit_all()


class MainIntegerShadow:
    """Exact unbounded integer dynamics of the converted controller; ground
    truth for every ciphertext (mod q) and for the actuator reconstruction."""

    def __init__(self, plan: MainPlan, dims):
        certs = plan.certificates
        self.Ai = _imat(certs["A/omega"])
        self.Bi = _imat(certs["s2B/omega"])
        self.Li = _imat(certs["L/omega"])
        self.Ci = _imat(certs["C/s1"])
        self.Fi = _imat(certs["F/omega"])
        self.Gi = _imat(certs["GC/omega"])
        self.Ri = _imat(certs["R/omega"])
        self.Hi = _imat(certs["H/s2"])
        self.Ji = _imat(certs["JC/s2"])
        self.Si = _imat(certs["S/s2"])
        self.inv_omega = certs["1/omega"].scaled_entries[0]
        self.dims = dims

    def bootstrap(self, x_e0_scaled):
        d = self.dims
        self.xo = [0] * d["n"]
        self.xe = list(x_e0_scaled)
        self.re = [0] * d["n_r"]
        self.xo_m1 = [0] * d["n"]
        self.xo_m2 = [0] * d["n"]
        self.xe_m1 = [0] * d["n_x"]
        self.xe_m2 = [0] * d["n_x"]
        self.u_m1 = [0] * d["w"]
        self.u = self._u_now()
        return self.increments()

    def _u_now(self):
        return _ivadd(_imatvec(self.Hi, self.xe), _imatvec(self.Ji, self.xo),
                      _imatvec(self.Si, self.re))

    def y_o(self):
        return _imatvec(self.Ci, self.xo)

    def increments(self):
        r_beta = [a - b - c for a, b, c in zip(
            self.xe_m1, _imatvec(self.Fi, self.xe_m2), _imatvec(self.Gi, self.xo_m2))]
        r_gamma = [a - b - c for a, b, c in zip(
            self.u_m1, _imatvec(self.Hi, self.xe_m1), _imatvec(self.Ji, self.xo_m1))]
        alpha = [a - b - c for a, b, c in zip(
            self.xo, _imatvec(self.Ai, self.xo_m1), _imatvec(self.Bi, self.u_m1))]
        beta = [a - b - c - self.inv_omega * d for a, b, c, d in zip(
            self.xe, _imatvec(self.Fi, self.xe_m1), _imatvec(self.Gi, self.xo_m1), r_beta)]
        gamma = [a - b - c - self.inv_omega * d for a, b, c, d in zip(
            self.u, _imatvec(self.Hi, self.xe), _imatvec(self.Ji, self.xo), r_gamma)]
        return alpha, beta, gamma

    def step(self, innovation, ref_increment):
        xo_next = _ivadd(_imatvec(self.Ai, self.xo), _imatvec(self.Bi, self.u),
                         _imatvec(self.Li, innovation))
        re_next = [self.inv_omega * (a + b) for a, b in zip(self.re, ref_increment)]
        xe_next = _ivadd(_imatvec(self.Fi, self.xe), _imatvec(self.Gi, self.xo),
                         _imatvec(self.Ri, self.re))
        self.xo_m2, self.xo_m1 = self.xo_m1, self.xo
        self.xe_m2, self.xe_m1 = self.xe_m1, self.xe
        self.u_m1 = self.u
        self.xo, self.xe, self.re = xo_next, xe_next, re_next
        self.u = self._u_now()
        return self.increments()


class MainSensor:
    """Decrypts the observer output, reconstructs it exactly through the
    centered window around the measured output, and returns the encrypted
    quantized innovation."""

    def __init__(self, pk, sk, plan: MainPlan, rng):
        self.pk, self.sk = pk, sk
        self.q = plan.q
        self.s1 = plan.s1
        self.spec = QuantizerSpec(plan.range_level)
        self.rng = rng
        self.dec_ops = 0
        self.enc_ops = 0

    def step(self, y_o_ct, y_p, l_t: Fraction):
        dec = he.decrypt(self.sk, y_o_ct)
        self.dec_ops += len(dec)
        y_bar = [as_fraction(y) / l_t for y in y_p]
        prior = [yb / self.s1 for yb in y_bar]
        lifted = centered_mod_recover(list(dec), prior, self.q)
        y_o_s = [self.s1 * l_t * v for v in lifted]           # exact rationals
        innovation = [yb - self.s1 * v for yb, v in zip(y_bar, lifted)]
        q_inno, sat = quantize_vector(innovation, self.spec)
        ct = he.encrypt(self.pk, [x % self.q for x in q_inno], self.rng)
        self.enc_ops += len(q_inno)
        gap = max((abs(float(yb / self.s1 - v)) for yb, v in zip(y_bar, lifted)),
                  default=0.0)
        return y_o_s, lifted, q_inno, ct, sat, gap


class RefProvider:
    """Tracks its local copy of the reference estimate and streams encrypted
    quantized reference increments."""

    def __init__(self, pk, plan: MainPlan, reference: RationalMatrix, rng,
                 r_e0=None):
        self.pk = pk
        self.q = plan.q
        self.spec = QuantizerSpec(plan.range_level)
        self.r = list(reference.data)
        self.r_e = [as_fraction(x) for x in (r_e0 or [0] * len(self.r))]
        self.rng = rng
        self.enc_ops = 0

    def step(self, l_t: Fraction, r=None):
        if r is not None:
            self.r = [as_fraction(x) for x in r]
        err = [(r - re) / l_t for r, re in zip(self.r, self.r_e)]
        q_inc, sat = quantize_vector(err, self.spec)
        self.r_e = [re + l_t * qi for re, qi in zip(self.r_e, q_inc)]
        ct = he.encrypt(self.pk, [x % self.q for x in q_inc], self.rng)
        self.enc_ops += len(q_inc)
        return q_inc, ct, sat


class MainActuator:
    """Decrypts the increments, lifts them around zero, and reconstructs the
    controller states in scaled-integer coordinates (exact; the delivered
    input is u_a = s2 l(t) u_tilde)."""

    def __init__(self, sk, plan: MainPlan, dims):
        self.sk = sk
        self.q = plan.q
        self.s2 = plan.s2
        certs = plan.certificates
        self.Ai = _imat(certs["A/omega"])
        self.Bi = _imat(certs["s2B/omega"])
        self.Fi = _imat(certs["F/omega"])
        self.Gi = _imat(certs["GC/omega"])
        self.Hi = _imat(certs["H/s2"])
        self.Ji = _imat(certs["JC/s2"])
        self.inv_omega = certs["1/omega"].scaled_entries[0]
        d = dims
        self.xo = [0] * d["n"]
        self.xe = [0] * d["n_x"]
        self.ut = [0] * d["w"]
        self.xo_m1 = [0] * d["n"]
        self.xo_m2 = [0] * d["n"]
        self.xe_m1 = [0] * d["n_x"]
        self.xe_m2 = [0] * d["n_x"]
        self.ut_m1 = [0] * d["w"]
        self.dec_ops = 0
        self.enc_ops = 0

    def step(self, alpha_ct, beta_ct, gamma_ct, l_t: Fraction):
        lifted = []
        for ct in (alpha_ct, beta_ct, gamma_ct):
            dec = he.decrypt(self.sk, ct)
            self.dec_ops += len(dec)
            lifted.append(centered_mod_recover(list(dec), 0, self.q))
        alpha_a, beta_a, gamma_a = lifted
        self.xo_m2, self.xo_m1 = self.xo_m1, list(self.xo)
        self.xe_m2, self.xe_m1 = self.xe_m1, list(self.xe)
        self.ut_m1 = list(self.ut)
        self.xo = _ivadd(alpha_a, _imatvec(self.Ai, self.xo_m1),
                         _imatvec(self.Bi, self.ut_m1))
        carry_x = [a - b - c for a, b, c in zip(
            self.xe_m1, _imatvec(self.Fi, self.xe_m2), _imatvec(self.Gi, self.xo_m2))]
        self.xe = _ivadd(beta_a, _imatvec(self.Fi, self.xe_m1),
                         _imatvec(self.Gi, self.xo_m1),
                         [self.inv_omega * x for x in carry_x])
        carry_u = [a - b - c for a, b, c in zip(
            self.ut_m1, _imatvec(self.Hi, self.xe_m1), _imatvec(self.Ji, self.xo_m1))]
        self.ut = _ivadd(gamma_a, _imatvec(self.Hi, self.xe),
                         _imatvec(self.Ji, self.xo),
                         [self.inv_omega * x for x in carry_u])
        u_a = [self.s2 * l_t * x for x in self.ut]            # exact rationals
        return (alpha_a, beta_a, gamma_a), list(self.ut), u_a


# -- prelim scheme parties -----------------------------------------------------


class PrelimEncController:
    def __init__(self, pk, plan: PrelimPlan, rng):
        self.pk = pk
        self.rng = rng
        q = plan.q
        self.q = q
        certs = plan.certificates
        self.F_m = _imat_mod(_imat(certs["F/omega"]), q)
        self.G_m = _imat_mod(_imat(certs["G/(s1*omega)"]), q)
        self.R_m = _imat_mod(_imat(certs["R/(s1*omega)"]), q)
        self.H_m = _imat_mod(_imat(certs["H/s2"]), q)
        self.J_m = _imat_mod(_imat(certs["J/(s1*s2)"]), q)
        self.S_m = _imat_mod(_imat(certs["S/(s1*s2)"]), q)
        self.enc_ops = 0

    def bootstrap(self, x0_scaled):
        self.x = he.encrypt(self.pk, [v % self.q for v in x0_scaled], self.rng)
        self.enc_ops += len(x0_scaled)

    def step(self, enc_y, enc_r):
        u = he.add(
            he.add(he.plain_matmul(self.H_m, self.x), he.plain_matmul(self.J_m, enc_y)),
            he.plain_matmul(self.S_m, enc_r),
        )
        self.x = he.add(
            he.add(he.plain_matmul(self.F_m, self.x), he.plain_matmul(self.G_m, enc_y)),
            he.plain_matmul(self.R_m, enc_r),
        )
        return u


class PrelimIntegerShadow:
    def __init__(self, plan: PrelimPlan):
        certs = plan.certificates
        self.Fi = _imat(certs["F/omega"])
        self.Gi = _imat(certs["G/(s1*omega)"])
        self.Ri = _imat(certs["R/(s1*omega)"])
        self.Hi = _imat(certs["H/s2"])
        self.Ji = _imat(certs["J/(s1*s2)"])
        self.Si = _imat(certs["S/(s1*s2)"])

    def bootstrap(self, x0_scaled):
        self.x = list(x0_scaled)

    def step(self, qy, qr):
        u = _ivadd(_imatvec(self.Hi, self.x), _imatvec(self.Ji, qy),
                   _imatvec(self.Si, qr))
        self.x = _ivadd(_imatvec(self.Fi, self.x), _imatvec(self.Gi, qy),
                        _imatvec(self.Ri, qr))
        return u


class PrelimActuator:
    def __init__(self, sk, plan: PrelimPlan, w: int):
        self.sk = sk
        self.q = plan.q
        self.s1s2 = plan.s1 * plan.s2
        self.inv_omega = 1 / plan.omega  # exact rational; integer when planned so
        self.prior = [Fraction(0)] * w
        self.dec_ops = 0
        self.enc_ops = 0

    def step(self, u_ct, l_t: Fraction):
        dec = he.decrypt(self.sk, u_ct)
        self.dec_ops += len(dec)
        priors = [p * self.inv_omega for p in self.prior]
        lifted = centered_mod_recover(list(dec), priors, self.q)
        self.prior = [as_fraction(x) for x in lifted]
        u_a = [self.s1s2 * l_t * x for x in lifted]
        return lifted, u_a


# -- orchestrator ---------------------------------------------------------------


@dataclass
class RunConfig:
    plant: PlantModel
    ctrl: ControllerModel
    reference: RationalMatrix
    x_p0: tuple
    horizon: int
    params: he.SchemeParams
    seed: int = 0
    verify_oracle: bool = True
    collect_detail: bool = False
    r_e0: Optional[tuple] = None
    # experimental: per-step reference vectors (held at the last entry);
    # the planned error envelopes are asserted only for constant references
    reference_schedule: Optional[Sequence] = None

    def reference_at(self, t: int):
        if self.reference_schedule is None:
            return None
        sched = self.reference_schedule
        vec = sched[min(t, len(sched) - 1)]
        return vec.data if isinstance(vec, RationalMatrix) else vec


def lattice_params_for_main(plan: MainPlan, dims, horizon: int, *,
                            dimension=16, samples=48, noise=4) -> he.SchemeParams:
    """Size the ciphertext modulus so a horizon-long run decrypts exactly."""
    width = max(dims["n"], dims["n_x"], dims["w"], dims["n_r"])
    per_step = math.ceil(math.log2(plan.q)) + width.bit_length() + 3
    budget = (horizon + 4) * per_step + 64
    return he.SchemeParams.lattice_for_budget(plan.q, budget, dimension=dimension,
                                              samples=samples, noise=noise)


def _scaled_integer_state(x0_entries, scale: Fraction):
    out = []
    for x in x0_entries:
        s = as_fraction(x) / scale
        if s.denominator != 1:
            raise ValueError(
                f"initial zoom does not divide the controller state exactly: {x}/{scale}"
            )
        out.append(s.numerator)
    return out


def run_closed_loop_main(plan: MainPlan, cfg: RunConfig) -> ClosedLoopTrace:
    dims = dict(plan.dims)
    n, n_x, w_dim = dims["n"], dims["n_x"], dims["w"]
    v, n_r = dims["v"], dims["n_r"]
    rng = random.Random(cfg.seed)
    pk, sk = he.keygen(cfg.params, seed=cfg.seed)

    controller = MainEncController(pk, plan, dims, rng)
    shadow = MainIntegerShadow(plan, dims)
    sensor = MainSensor(pk, sk, plan, rng)
    provider = RefProvider(pk, plan, cfg.reference, rng, r_e0=cfg.r_e0)
    actuator = MainActuator(sk, plan, dims)
    plant_sim = PlantSim(cfg.plant, cfg.x_p0)
    ideal = IdealLoop(cfg.plant, cfg.ctrl, cfg.x_p0, cfg.reference)

    x_e0_scaled = _scaled_integer_state(cfg.ctrl.x0.data, plan.l0)
    trace = ClosedLoopTrace(scheme="main")
    l_t = plan.l0
    omega = plan.omega
    q = plan.q
    inno_ct = ref_ct = None
    inno_int = ref_int = None

    def dec_matches(ct, ints):
        return list(he.decrypt(sk, ct)) == [x % q for x in ints]

    for t in range(cfg.horizon):
        if t == 0:
            y_o_ct, a_ct, b_ct, g_ct = controller.bootstrap(x_e0_scaled)
            shadow.bootstrap(x_e0_scaled)
            alpha_i, beta_i, gamma_i = shadow.increments()
        else:
            y_o_ct, a_ct, b_ct, g_ct = controller.step(inno_ct, ref_ct)
            alpha_i, beta_i, gamma_i = shadow.step(inno_int, ref_int)

        fail = False
        if cfg.verify_oracle:
            ok = (
                dec_matches(y_o_ct, shadow.y_o())
                and dec_matches(a_ct, alpha_i)
                and dec_matches(b_ct, beta_i)
                and dec_matches(g_ct, gamma_i)
            )
            if not ok:
                trace.oracle_mismatches += 1

        y_p = plant_sim.output()
        y_o_s, lifted_y, q_inno, inno_ct, sat_s, gap = sensor.step(y_o_ct, y_p, l_t)
        if lifted_y != shadow.y_o():
            fail = True
        r_t = cfg.reference_at(t)
        q_ref, ref_ct, sat_r = provider.step(l_t, r=r_t)
        inno_int, ref_int = q_inno, q_ref

        (alpha_a, beta_a, gamma_a), ut_a, u_a = actuator.step(a_ct, b_ct, g_ct, l_t)
        if alpha_a != alpha_i or beta_a != beta_i or gamma_a != gamma_i:
            fail = True
        if ut_a != shadow.u:
            fail = True

        u_true = ideal.step(r=r_t)
        u_a_float = np.array([float(x) for x in u_a])
        plant_sim.step(u_a)

        saturated = bool(sat_s or sat_r)
        trace.saturation_count += int(saturated)
        trace.recovery_failures += int(fail)
        trace.msgs_ctrl_to_act += n + n_x + w_dim
        trace.msgs_sensor_to_ctrl += v
        trace.msgs_provider_to_ctrl += n_r
        trace.msgs_ctrl_to_sensor += v
        trace.actuator_dec_ops = actuator.dec_ops
        trace.actuator_enc_ops = actuator.enc_ops
        trace.enc_ops = controller.enc_ops + sensor.enc_ops + provider.enc_ops + actuator.enc_ops
        trace.dec_ops = sensor.dec_ops + actuator.dec_ops

        diff = float(np.max(np.abs(u_a_float - u_true))) if w_dim else 0.0
        trace.records.append(StepRecord(
            t=t,
            u_true=tuple(float(x) for x in u_true),
            u_a=tuple(float(x) for x in u_a_float),
            diff_inf=diff,
            log2_alpha=_log2norm(alpha_i),
            log2_beta=_log2norm(beta_i),
            log2_gamma=_log2norm(gamma_i),
            log2_sensor_gap=math.log2(gap) if gap > 0 else float("-inf"),
            saturated=saturated,
            msgs_ctrl_to_act=n + n_x + w_dim,
            enc_ops=trace.enc_ops,
            dec_ops=trace.dec_ops,
            recovery_failure=fail,
        ))
        if cfg.collect_detail:
            trace.detail.append({
                "t": t,
                "l": l_t,
                "innovation": list(q_inno),
                "ref_increment": list(q_ref),
                "alpha": list(alpha_i),
                "beta": list(beta_i),
                "gamma": list(gamma_i),
                "re_scaled": list(shadow.re),
                "u_tilde": list(shadow.u),
                "u_a_exact": list(u_a),
            })
        l_t = l_t * omega
    trace.final_plant_state = tuple(plant_sim.state_floats())
    trace.final_ideal_plant_state = tuple(float(x) for x in ideal.x_p)
    return trace


def run_closed_loop_prelim(plan: PrelimPlan, cfg: RunConfig) -> ClosedLoopTrace:
    n_x = cfg.ctrl.n_x
    w_dim = cfg.ctrl.w
    v = cfg.plant.v
    n_r = cfg.ctrl.n_r
    rng = random.Random(cfg.seed)
    pk, sk = he.keygen(cfg.params, seed=cfg.seed)

    controller = PrelimEncController(pk, plan, rng)
    shadow = PrelimIntegerShadow(plan)
    actuator = PrelimActuator(sk, plan, w_dim)
    plant_sim = PlantSim(cfg.plant, cfg.x_p0)
    ideal = IdealLoop(cfg.plant, cfg.ctrl, cfg.x_p0, cfg.reference)

    x0_scaled = _scaled_integer_state(cfg.ctrl.x0.data, plan.s1 * plan.l0)
    controller.bootstrap(x0_scaled)
    shadow.bootstrap(x0_scaled)

    trace = ClosedLoopTrace(scheme="prelim")
    l_t = plan.l0
    ref = list(cfg.reference.data)
    q = plan.q
    prev_ut = None
    edge_enc_ops = 0

    for t in range(cfg.horizon):
        r_t = cfg.reference_at(t)
        if r_t is not None:
            ref = [as_fraction(x) for x in r_t]
        y_p = plant_sim.output()
        y_bar = [as_fraction(y) / l_t for y in y_p]
        r_bar = [r / l_t for r in ref]
        q_y, _ = quantize_vector(y_bar, None)
        q_r, _ = quantize_vector(r_bar, None)
        enc_y = he.encrypt(pk, [x % q for x in q_y], rng)
        enc_r = he.encrypt(pk, [x % q for x in q_r], rng)
        edge_enc_ops += v + n_r

        u_ct = controller.step(enc_y, enc_r)
        ut_true = shadow.step(q_y, q_r)

        fail = False
        if cfg.verify_oracle and list(he.decrypt(sk, u_ct)) != [x % q for x in ut_true]:
            trace.oracle_mismatches += 1
        lifted, u_a = actuator.step(u_ct, l_t)
        if lifted != ut_true:
            fail = True

        u_true = ideal.step(r=r_t)
        u_a_float = np.array([float(x) for x in u_a])
        plant_sim.step(u_a)

        inc = (
            [x - as_fraction(y) / plan.omega for x, y in zip(ut_true, prev_ut)]
            if prev_ut is not None else [as_fraction(x) for x in ut_true]
        )
        prev_ut = ut_true

        trace.recovery_failures += int(fail)
        trace.msgs_ctrl_to_act += w_dim
        trace.msgs_sensor_to_ctrl += v
        trace.msgs_provider_to_ctrl += n_r
        trace.actuator_dec_ops = actuator.dec_ops
        trace.actuator_enc_ops = actuator.enc_ops
        trace.enc_ops = controller.enc_ops + edge_enc_ops
        trace.dec_ops = actuator.dec_ops

        diff = float(np.max(np.abs(u_a_float - u_true))) if w_dim else 0.0
        mx = max((abs(float(x)) for x in inc), default=0.0)
        trace.records.append(StepRecord(
            t=t,
            u_true=tuple(float(x) for x in u_true),
            u_a=tuple(float(x) for x in u_a_float),
            diff_inf=diff,
            log2_alpha=math.log2(mx) if mx > 0 else float("-inf"),
            log2_beta=float("-inf"),
            log2_gamma=float("-inf"),
            log2_sensor_gap=float("-inf"),
            saturated=False,
            msgs_ctrl_to_act=w_dim,
            enc_ops=trace.enc_ops,
            dec_ops=trace.dec_ops,
            recovery_failure=fail,
        ))
        if cfg.collect_detail:
            trace.detail.append({
                "t": t,
                "l": l_t,
                "q_y": list(q_y),
                "q_r": list(q_r),
                "u_tilde": list(ut_true),
                "u_tilde_recovered": list(lifted),
                "u_a_exact": list(u_a),
            })
        l_t = l_t * plan.omega
    trace.final_plant_state = tuple(plant_sim.state_floats())
    trace.final_ideal_plant_state = tuple(float(x) for x in ideal.x_p)
    return trace
