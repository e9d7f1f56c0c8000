"""Scheme parameter synthesis.

Two conversion routes for a pre-given controller:

* preliminary: feasible only when the closed loop contracts faster than the
  coarsest integerizing scale of F (rho_c < s_F); the zoom factor omega then
  doubles as the matrix divisor and a finite modulus exists.

* main: a deadbeat observer decouples omega from the closed-loop rate, so an
  integerizing omega always exists; the modulus and quantizer range come from
  worst-case bounds on the transmitted increments.

Everything that gates an exact property (integrality, nilpotency) is computed
in rational arithmetic; series bounds and spectra run in floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .exactmat import (
    DimensionMismatchError,
    RationalMatrix,
    as_fraction,
    block,
    block_closed_loop,
    fraction_to_str,
    hstack,
    inf_norm,
    is_integer_after_scale,
    matrix_to_json,
    max_integer_scale,
    rational_gcd,
    spectral_radius,
    vstack,
)


class PlannerError(Exception):
    pass


class AssumptionViolatedError(PlannerError):
    """The pre-given closed loop is not contractive (rho_c >= 1)."""


class InfeasibleError(PlannerError):
    pass


class DivergentError(PlannerError):
    pass


class NotObservableError(PlannerError):
    pass


class NoIntegerOmegaError(PlannerError):
    pass


# -- models --------------------------------------------------------------


@dataclass(frozen=True)
class PlantModel:
    A: RationalMatrix
    B: RationalMatrix
    C: RationalMatrix
    x_p0_bound: Fraction = Fraction(0)

    def __post_init__(self):
        n = self.A.rows
        if self.A.cols != n or self.B.rows != n or self.C.cols != n:
            raise DimensionMismatchError("inconsistent plant dimensions")
        object.__setattr__(self, "x_p0_bound", as_fraction(self.x_p0_bound))
        if self.x_p0_bound < 0:
            raise ValueError("x_p0_bound must be nonnegative")

    @property
    def n(self):
        return self.A.rows

    @property
    def w(self):
        return self.B.cols

    @property
    def v(self):
        return self.C.rows


@dataclass(frozen=True)
class ControllerModel:
    F: RationalMatrix
    G: RationalMatrix
    R_ref: RationalMatrix
    H: RationalMatrix
    J: RationalMatrix
    S: RationalMatrix
    x0: RationalMatrix  # n_x x 1

    def __post_init__(self):
        n_x = self.F.rows
        if (
            self.F.cols != n_x
            or self.G.rows != n_x
            or self.R_ref.rows != n_x
            or self.H.cols != n_x
            or self.x0.rows != n_x
            or self.x0.cols != min(1, n_x)
            or self.H.rows != self.J.rows
            or self.J.rows != self.S.rows
            or self.G.cols != self.J.cols
            or self.R_ref.cols != self.S.cols
        ):
            raise DimensionMismatchError("inconsistent controller dimensions")

    @property
    def n_x(self):
        return self.F.rows

    @property
    def n_r(self):
        return self.R_ref.cols

    @property
    def w(self):
        return self.H.rows


# -- feasibility of the preliminary route ---------------------------------


@dataclass(frozen=True)
class FeasibilityReport:
    rho_c: float
    s_F: Fraction
    feasible: bool
    reason: str


def coarsest_scale_of_F(ctrl: ControllerModel) -> Fraction:
    """Largest a in (0,1] with F/a integer (the controller's own granularity)."""
    return max_integer_scale(ctrl.F)


def check_prelim_feasible(plant: PlantModel, ctrl: ControllerModel) -> FeasibilityReport:
    rho_c = spectral_radius(block_closed_loop(plant, ctrl))
    if rho_c >= 1.0:
        raise AssumptionViolatedError(
            f"closed loop is not contractive: rho_c = {rho_c:.6f} >= 1"
        )
    s_F = coarsest_scale_of_F(ctrl)
    feasible = rho_c < float(s_F)
    reason = "" if feasible else (
        f"rho_c = {rho_c:.4f} >= s_F = {fraction_to_str(s_F)}: no zoom factor "
        "can both outrun the closed loop and integerize F"
    )
    return FeasibilityReport(rho_c, s_F, feasible, reason)


# -- increment-magnitude bound for the preliminary route ------------------


def _coupling_blocks(plant: PlantModel, ctrl: ControllerModel):
    """A_cl and the noise-injection block [[BJ, B, BS], [G, 0, R]]."""
    A_cl = block_closed_loop(plant, ctrl)
    Bbar = block(
        [
            [plant.B @ ctrl.J, plant.B, plant.B @ ctrl.S],
            [ctrl.G, RationalMatrix.zeros(ctrl.n_x, plant.w), ctrl.R_ref],
        ]
    )
    return A_cl, Bbar


def stacked_error_bound(v: int, w: int, n_r: int, omega) -> float:
    """2-norm bound on the stacked quantization-error differences driving the
    one-step state-difference recursion: sqrt(v+w+n_r) (1/2 + 1/(2 omega))."""
    return math.sqrt(v + w + n_r) * (0.5 + 0.5 / float(as_fraction(omega)))


def compute_M(plant: PlantModel, ctrl: ControllerModel, omega,
              delta0_bound: float, *, rtol: float = 1e-12,
              max_terms: int = 20000) -> float:
    """Uniform bound on the stacked one-step state differences delta(t).

    delta obeys delta(t+1) = (A_cl/omega) delta(t) + (Bbar/omega) e(t) with
    ||e(t)||_2 <= sqrt(v+w+n_r) (1/2 + 1/(2 omega)); the bound is the seeded
    transient supremum plus the geometric series of 2-norm power terms,
    truncated once terms fall below rtol of the partial sum.
    """
    omega = as_fraction(omega)
    A_cl, Bbar = _coupling_blocks(plant, ctrl)
    P = A_cl.to_floats() / float(omega)
    rho = float(np.max(np.abs(np.linalg.eigvals(P)))) if P.size else 0.0
    if rho >= 1.0 - 1e-12:
        raise DivergentError(
            f"rho(A_cl/omega) = {rho:.6f} >= 1: one-step differences are unbounded"
        )
    Bw = Bbar.to_floats() / float(omega)
    e_max = stacked_error_bound(plant.v, plant.w, ctrl.n_r, omega)
    b2 = float(np.linalg.norm(Bw, 2)) if Bw.size else 0.0
    Pk = np.eye(P.shape[0])
    series = 0.0
    transient = 0.0
    for k in range(max_terms):
        nk = float(np.linalg.norm(Pk, 2))
        transient = max(transient, nk * delta0_bound)
        term = nk * b2 * e_max
        series += term
        if k > 0 and term <= rtol * series:
            break
        Pk = Pk @ P
    else:
        raise DivergentError("series did not converge within the term budget")
    return transient + series


# -- preliminary plan ------------------------------------------------------


@dataclass(frozen=True)
class PrelimPlan:
    omega: Fraction
    s1: Fraction
    s2: Fraction
    l0: Fraction
    q: int
    M_bound: float
    window_bound: float  # sound per-step recovery window requirement
    u0_bound: float
    certificates: dict
    rho_c: float
    s_F: Fraction

    @property
    def q_log2(self) -> float:
        return math.log2(self.q)

    def to_json(self):
        return {
            "scheme": "prelim",
            "omega": fraction_to_str(self.omega),
            "s1": fraction_to_str(self.s1),
            "s2": fraction_to_str(self.s2),
            "l0": fraction_to_str(self.l0),
            "q": str(self.q),
            "q_log2": self.q_log2,
            "M_bound": self.M_bound,
            "window_bound": self.window_bound,
            "u0_bound": self.u0_bound,
            "rho_c": self.rho_c,
            "s_F": fraction_to_str(self.s_F),
            "certificates": {
                name: {
                    "scale": fraction_to_str(cert.scale),
                    "shape": [cert.rows, cert.cols],
                }
                for name, cert in self.certificates.items()
            },
        }


def _unclamped_scale(m: RationalMatrix) -> Optional[Fraction]:
    """Rational gcd of nonzero entries, or None for an all-zero matrix."""
    g = Fraction(0)
    for x in m.data:
        if x != 0:
            g = rational_gcd(g, x)
    return g if g != 0 else None


def _common_scale(mats: Sequence[RationalMatrix]) -> Fraction:
    """Largest s in (0,1] dividing every entry of every matrix (1 if all zero)."""
    g = Fraction(0)
    for m in mats:
        u = _unclamped_scale(m)
        if u is not None:
            g = rational_gcd(g, u)
    if g == 0:
        return Fraction(1)
    if g > 1:
        g = g / math.ceil(g)
    return g


def _largest_decimal_l0(vectors, constraints_max=None, max_k: int = 24) -> Fraction:
    """Largest 10^-k (k >= 0) dividing the given exact vectors entrywise and
    satisfying l0 >= constraints_max when given."""
    for k in range(max_k + 1):
        l0 = Fraction(1, 10**k)
        if constraints_max is not None and l0 < constraints_max:
            continue
        ok = True
        for vec in vectors:
            for x in vec:
                if (as_fraction(x) / l0).denominator != 1:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return l0
    raise InfeasibleError("no decimal initial zoom l0 satisfies the exactness constraints")


def _pow2_above(x: float) -> int:
    """Smallest power of two strictly exceeding x."""
    if x < 1:
        return 1
    k = math.frexp(x)[1]  # 2**(k-1) <= x < 2**k
    q = 1 << (k - 1)
    while q <= x:
        q <<= 1
    return q


def plan_preliminary(plant: PlantModel, ctrl: ControllerModel, *,
                     reference_bound=0) -> PrelimPlan:
    """Select (omega, s1, s2, l0, q) for the direct conversion route."""
    report = check_prelim_feasible(plant, ctrl)
    if not report.feasible:
        raise InfeasibleError(report.reason)
    omega = report.s_F  # largest admissible divisor of F in (rho_c, s_F]
    s2 = max_integer_scale(ctrl.H) if not ctrl.H.is_zero() else Fraction(1)
    s1 = _common_scale(
        [ctrl.G.scale(1 / omega), ctrl.R_ref.scale(1 / omega),
         ctrl.J.scale(1 / s2), ctrl.S.scale(1 / s2)]
    )

    certs = {}
    for name, mat, scale in [
        ("F/omega", ctrl.F, omega),
        ("G/(s1*omega)", ctrl.G, s1 * omega),
        ("R/(s1*omega)", ctrl.R_ref, s1 * omega),
        ("H/s2", ctrl.H, s2),
        ("J/(s1*s2)", ctrl.J, s1 * s2),
        ("S/(s1*s2)", ctrl.S, s1 * s2),
    ]:
        ok, cert = is_integer_after_scale(mat, scale, source=name)
        if not ok:
            raise InfeasibleError(f"{name} is not an integer matrix")
        certs[name] = cert

    # x0/(s1*l0) must be an integer vector
    x0_scaled = [x / s1 for x in ctrl.x0.data]
    l0 = _largest_decimal_l0([x0_scaled])

    # initial magnitudes (used to seed the difference bound and to cover the
    # zero-prior recovery at the first step)
    r_bound = as_fraction(reference_bound)
    nC = float(inf_norm(plant.C))
    ybar0 = nC * float(plant.x_p0_bound / l0)
    rbar0 = float(r_bound / l0)
    xbar0 = float(inf_norm(ctrl.x0) / l0)
    xpbar0 = float(plant.x_p0_bound / l0)
    nH, nJ, nS = (float(inf_norm(m)) for m in (ctrl.H, ctrl.J, ctrl.S))
    ubar0 = nH * xbar0 + nJ * (ybar0 + 0.5) + nS * (rbar0 + 0.5)
    u0_bound = ubar0 / float(s1 * s2)

    w = float(omega)
    nA = float(inf_norm(plant.A - RationalMatrix.identity(plant.n)))
    nB = float(inf_norm(plant.B))
    nF = float(inf_norm(ctrl.F - RationalMatrix.identity(ctrl.n_x)))
    nG, nR = float(inf_norm(ctrl.G)), float(inf_norm(ctrl.R_ref))
    dp1 = (nA * xpbar0 + nB * ubar0) / w
    dx1 = (nF * xbar0 + nG * (ybar0 + 0.5) + nR * (rbar0 + 0.5)) / w
    seed = math.sqrt(plant.n + ctrl.n_x) * max(dp1, dx1)

    M = compute_M(plant, ctrl, omega, seed)

    # per-step recovery window: [JC H] delta plus the quantization-error and
    # scaling cross terms the coarse bound glosses over
    JC_H = hstack(ctrl.J @ plant.C, ctrl.H)
    base = float(inf_norm(JC_H)) * M
    cross = (nJ + nS) * 0.5 * (1.0 + 1.0 / w)
    window = (base + cross) / float(s1 * s2)
    q = _pow2_above(2.0 * max(base, window, u0_bound))

    return PrelimPlan(
        omega=omega, s1=s1, s2=s2, l0=l0, q=q, M_bound=M,
        window_bound=window, u0_bound=u0_bound, certificates=certs,
        rho_c=report.rho_c, s_F=report.s_F,
    )


# -- deadbeat observer design ----------------------------------------------


@dataclass(frozen=True)
class DeadbeatDesign:
    L: RationalMatrix              # exact rational gain, rho(A - L C) = 0
    nilpotency_index: int          # smallest mu with (A - L C)^mu = 0
    rho_eig_float: float           # what a double-precision eigensolver reports
    L_grid: Optional[RationalMatrix] = None   # decimal rounding, if requested
    rho_grid_float: Optional[float] = None


def observability_matrix(A: RationalMatrix, C: RationalMatrix) -> RationalMatrix:
    blocks = [C]
    for _ in range(A.rows - 1):
        blocks.append(blocks[-1] @ A)
    return vstack(*blocks)


def _nilpotency_index(N: RationalMatrix) -> Optional[int]:
    P = RationalMatrix.identity(N.rows)
    for k in range(1, N.rows + 1):
        P = P @ N
        if P.is_zero():
            return k
    return None


def _single_input_deadbeat(Abar: RationalMatrix, b: RationalMatrix) -> RationalMatrix:
    """Exact Ackermann gain k (1 x n) with (Abar - b k)^n = 0."""
    n = Abar.rows
    cols = [b]
    for _ in range(n - 1):
        cols.append(Abar @ cols[-1])
    K = hstack(*cols)
    Kinv = K.inverse()  # raises SingularMatrixError if chain does not span
    last = RationalMatrix(1, n, Kinv.row(n - 1))
    return last @ Abar.matpow(n)


def _heymann_chain(Abar: RationalMatrix, Bbar: RationalMatrix):
    """Single-chain basis x_{i+1} = Abar x_i + Bbar u_i spanning R^n.

    Columns are consumed input by input; within a chain u = 0, and at a
    dependence the next independent input column is injected.  Returns
    (X, U, g) with X the basis, U the injections, g the first input selector.
    """
    n, m = Abar.rows, Bbar.cols
    basis = []      # selected x_i
    inject = []     # u_i used to produce x_{i+1} from x_i (length n-1)
    g = None

    def independent(v):
        if all(x == 0 for x in v.data):
            return False
        test = hstack(*(basis + [v]))
        return test.rank() == len(basis) + 1

    col = 0
    while len(basis) < n and col < m:
        bcol = RationalMatrix(n, 1, [Bbar[(i, col)] for i in range(n)])
        if not independent(bcol):
            col += 1
            continue
        if g is None:
            g = col
            basis.append(bcol)
        else:
            # bridge from the previous chain tip: x' = Abar x + Bbar e_col
            tip = basis[-1]
            v = Abar @ tip + bcol
            if not independent(v):
                col += 1
                continue
            inject.append(col)
            basis.append(v)
        # extend with u = 0 while independent
        while len(basis) < n:
            v = Abar @ basis[-1]
            if not independent(v):
                break
            inject.append(None)
            basis.append(v)
        col += 1
    if len(basis) < n:
        raise NotObservableError("chain construction failed: pair is not controllable")
    return basis, inject, g


def _multi_input_deadbeat(Abar: RationalMatrix, Bbar: RationalMatrix) -> RationalMatrix:
    """Exact K (m x n) with (Abar - Bbar K)^n = 0 for a controllable pair."""
    n, m = Abar.rows, Bbar.cols
    if m == 1:
        return _single_input_deadbeat(Abar, Bbar)
    basis, inject, g = _heymann_chain(Abar, Bbar)
    X = hstack(*basis)
    ucols = []
    for j in inject:
        u = [Fraction(0)] * m
        if j is not None:
            u[j] = Fraction(1)
        ucols.append(RationalMatrix(m, 1, u))
    ucols.append(RationalMatrix.zeros(m, 1))
    U = hstack(*ucols)
    K0 = U @ X.inverse()           # x_{i+1} = (Abar + Bbar K0) x_i
    M = Abar + Bbar @ K0
    bsel = RationalMatrix(n, 1, [Bbar[(i, g)] for i in range(n)])
    k1 = _single_input_deadbeat(M, bsel)
    gcol = [Fraction(0)] * m
    gcol[g] = Fraction(1)
    gk1 = RationalMatrix(m, 1, gcol) @ k1
    return gk1 - K0                # Abar - Bbar K = M - bsel k1


def round_to_decimal_grid(m: RationalMatrix, decimals: int) -> RationalMatrix:
    scale = 10**decimals
    vals = []
    for x in m.data:
        n2 = x.numerator * scale * 2
        d = x.denominator
        # round half away from zero
        q_, r_ = divmod(abs(n2), 2 * d)
        rounded = q_ + (1 if r_ >= d else 0)
        vals.append(Fraction(rounded if n2 >= 0 else -rounded, scale))
    return RationalMatrix(m.rows, m.cols, vals)


def design_deadbeat_observer(A: RationalMatrix, C: RationalMatrix, *,
                             grid_decimals: Optional[int] = None) -> DeadbeatDesign:
    """Exact rational observer gain L with (A - L C)^n = 0, verified exactly.

    When grid_decimals is given, a decimal rounding of L is attached for
    integrality certification; the rounding generally destroys exact
    nilpotency, so both spectral radii are reported.
    """
    n = A.rows
    if observability_matrix(A, C).rank() < n:
        raise NotObservableError("(A, C) is not observable")
    K = _multi_input_deadbeat(A.transpose(), C.transpose())
    L = K.transpose()
    N = A - L @ C
    idx = _nilpotency_index(N)
    if idx is None:
        raise PlannerError("deadbeat construction failed exact verification")
    design = DeadbeatDesign(
        L=L, nilpotency_index=idx, rho_eig_float=spectral_radius(N),
    )
    if grid_decimals is not None:
        Lg = round_to_decimal_grid(L, grid_decimals)
        rg = spectral_radius(A - Lg @ C)
        design = DeadbeatDesign(
            L=L, nilpotency_index=idx, rho_eig_float=design.rho_eig_float,
            L_grid=Lg, rho_grid_float=rg,
        )
    return design


def recover_exact_deadbeat(A: RationalMatrix, C: RationalMatrix,
                           L_seed: RationalMatrix, *,
                           max_denominator: int = 10**7) -> Optional[DeadbeatDesign]:
    """Snap a near-deadbeat gain to the exact nilpotent variety.

    Newton/least-squares descent on vec((A - L C)^mu) from the seed, then
    rationalize entrywise and verify nilpotency exactly.  Returns None when
    no exactly-nilpotent rational gain is found near the seed.
    """
    from scipy.optimize import least_squares

    Af = A.to_floats()
    Cf = C.to_floats()
    n, v = A.rows, C.rows
    seed = L_seed.to_floats().ravel()

    for mu in range(2, n + 1):
        def resid(Lv, mu=mu):
            N = Af - (Lv.reshape(n, v) @ Cf)
            return np.linalg.matrix_power(N, mu).ravel()

        sol = least_squares(resid, seed, xtol=3e-16, ftol=3e-16, gtol=3e-16)
        if not np.all(np.isfinite(sol.x)):
            continue
        for max_den in (10**4, 10**6, max_denominator):
            entries = [
                Fraction(float(x)).limit_denominator(max_den) for x in sol.x
            ]
            L = RationalMatrix(n, v, entries)
            N = A - L @ C
            idx = _nilpotency_index(N)
            if idx is not None and idx <= mu:
                return DeadbeatDesign(
                    L=L, nilpotency_index=idx, rho_eig_float=spectral_radius(N),
                )
    return None


# -- observer-error bound ---------------------------------------------------


@dataclass(frozen=True)
class CeResult:
    value: float
    tail_sound: bool       # True when the tail beyond the horizon provably vanishes
    truncation_index: int
    terms: tuple


def compute_Ce(A: RationalMatrix, C: RationalMatrix, L: RationalMatrix, omega,
               e0_bound: float, *, deadbeat_index: Optional[int] = None,
               rtol: float = 1e-12, max_terms: int = 20000) -> CeResult:
    """Upper bound on the scaled observer error driven by quantization noise.

    C_e = max(1/2, sup_k ||Abar^k|| e0 + sum_k ||Abar^k Lbar||/2) with
    Abar = (A - L C)/omega.  For an exactly deadbeat L the sum terminates at
    the nilpotency index.  When a deadbeat_index is declared for a gain that
    is only approximately nilpotent (e.g. a decimal rounding), the sum is
    truncated at that horizon and tail_sound reports whether the discarded
    tail actually contracts.
    """
    w = float(as_fraction(omega))
    Nf = (A - L @ C).to_floats() / w
    Lf = L.to_floats() / w
    rho = float(np.max(np.abs(np.linalg.eigvals(Nf)))) if Nf.size else 0.0
    horizon = deadbeat_index if deadbeat_index is not None else None
    if rho >= 1.0 - 1e-12 and horizon is None:
        raise DivergentError(
            f"rho((A - L C)/omega) = {rho:.4f} >= 1 and no deadbeat horizon declared"
        )
    terms = []
    transient = e0_bound
    Pk = np.eye(Nf.shape[0])
    series = 0.0
    k = 0
    while True:
        term = 0.5 * float(np.linalg.norm(Pk @ Lf, np.inf))
        terms.append(term)
        series += term
        k += 1
        Pk = Pk @ Nf
        nk = float(np.linalg.norm(Pk, np.inf))
        if horizon is not None and k >= horizon:
            break
        transient = max(transient, nk * e0_bound)
        if nk == 0.0 or (k >= (horizon or 1) and term <= rtol * max(series, 1.0) and rho < 1.0):
            break
        if k >= max_terms:
            raise DivergentError("observer-error series did not converge")
    tail_norm = float(np.linalg.norm(Pk @ Lf, np.inf))
    tail_sound = rho < 1.0 or tail_norm == 0.0
    value = max(0.5, transient + series)
    return CeResult(value=value, tail_sound=tail_sound,
                    truncation_index=k, terms=tuple(terms))


# -- modulus bound -----------------------------------------------------------


def q_bound_terms(L: RationalMatrix, C: RationalMatrix, R_ref: RationalMatrix,
                  S: RationalMatrix, s1, s2, omega, C_e: float) -> tuple:
    """The four modulus-bound terms: observer increment, state increment,
    output increment, and the sensor reconstruction window."""
    s1, s2, omega = as_fraction(s1), as_fraction(s2), as_fraction(omega)
    if min(s1, s2, omega) <= 0:
        raise ValueError("scales must be positive")
    w = float(omega)
    t1 = 2.0 * C_e * float(inf_norm(hstack(L @ C, L))) / w
    t2 = float(inf_norm(hstack(R_ref.scale(1 / omega), -R_ref))) / (w * w)
    t3 = float(inf_norm(hstack(S.scale(1 / omega), -S))) / (float(s2) * w)
    t4 = 2.0 * float(inf_norm(C.scale(1 / s1))) * C_e
    return t1, t2, t3, t4


def q_bound_main(L: RationalMatrix, C: RationalMatrix, R_ref: RationalMatrix,
                 S: RationalMatrix, s1, s2, omega, C_e: float) -> float:
    """Four-term maximum that the modulus must strictly exceed."""
    return max(q_bound_terms(L, C, R_ref, S, s1, s2, omega, C_e))


# -- main plan ----------------------------------------------------------------


@dataclass(frozen=True)
class MainPlanOptions:
    L: Optional[RationalMatrix] = None          # runtime gain (certified)
    L_exact: Optional[RationalMatrix] = None    # exact companion, for the spectral report
    grid_decimals: Optional[int] = None         # round a designed gain to this grid
    reference: Optional[RationalMatrix] = None  # constant reference (n_r x 1)
    omega_max_pow10: int = 12
    l0_max_pow10: int = 24


@dataclass(frozen=True)
class MainPlan:
    L: RationalMatrix
    omega: Fraction
    s1: Fraction
    s2: Fraction
    l0: Fraction
    q: int
    q_bound: float
    C_e: float
    range_level: int
    certificates: dict
    rho_observer: float          # 0.0 when exact nilpotency is certified
    rho_observer_eig: float      # double-precision eigensolver report
    rho_observer_grid: Optional[float]  # spectral radius of the certified gain, if distinct
    deadbeat_index: int
    tail_sound: bool
    bootstrap_bound: float
    dims: dict

    @property
    def q_log2(self) -> float:
        return math.log2(self.q)

    def to_json(self, include_integer_matrices: bool = False):
        out = {
            "scheme": "main",
            "omega": fraction_to_str(self.omega),
            "s1": fraction_to_str(self.s1),
            "s2": fraction_to_str(self.s2),
            "l0": fraction_to_str(self.l0),
            "q": str(self.q),
            "q_log2": self.q_log2,
            "q_bound": self.q_bound,
            "q_bound_log2": math.log2(self.q_bound) if self.q_bound > 0 else None,
            "C_e": self.C_e,
            "range_level": str(self.range_level),
            "rho_observer": self.rho_observer,
            "rho_observer_eig": self.rho_observer_eig,
            "rho_observer_grid": self.rho_observer_grid,
            "deadbeat_index": self.deadbeat_index,
            "tail_sound": self.tail_sound,
            "bootstrap_bound": self.bootstrap_bound,
            "dims": dict(self.dims),
            "L": matrix_to_json(self.L),
            "certificates": {
                name: {
                    "scale": fraction_to_str(cert.scale),
                    "shape": [cert.rows, cert.cols],
                }
                for name, cert in self.certificates.items()
            },
        }
        if include_integer_matrices:
            out["integer_matrices"] = {
                name: [list(cert.scaled_entries[i * cert.cols : (i + 1) * cert.cols])
                       for i in range(cert.rows)]
                for name, cert in self.certificates.items()
            }
        return out


def _main_integer_targets(plant, ctrl, L, s2):
    """The seven matrices that omega must integerize (1/omega handled via 1x1 [1])."""
    return {
        "A/omega": plant.A,
        "s2B/omega": plant.B.scale(s2),
        "L/omega": L,
        "F/omega": ctrl.F,
        "GC/omega": ctrl.G @ plant.C,
        "R/omega": ctrl.R_ref,
        "1/omega": RationalMatrix.from_rows([[1]]),
    }


def _find_omega(targets: dict, max_pow10: int) -> Fraction:
    # largest power of ten <= 1/2 that integerizes everything
    for k in range(1, max_pow10 + 1):
        omega = Fraction(1, 10**k)
        if all(is_integer_after_scale(m, omega)[0] for m in targets.values()):
            return omega
    # exact fallback: 1/lcm of all denominators (and at most 1/2)
    lcm = 2
    for m in targets.values():
        d = m.denominator_lcm()
        lcm = lcm * d // math.gcd(lcm, d)
    omega = Fraction(1, lcm)
    if not all(is_integer_after_scale(m, omega)[0] for m in targets.values()):
        raise NoIntegerOmegaError("no rational zoom factor integerizes the converted controller")
    return omega


def plan_main(plant: PlantModel, ctrl: ControllerModel,
              options: MainPlanOptions = MainPlanOptions()) -> MainPlan:
    """Select the observer gain and (omega, s1, s2, l0, q, range_level)."""
    n = plant.n
    rho_c = spectral_radius(block_closed_loop(plant, ctrl))
    if rho_c >= 1.0:
        raise AssumptionViolatedError(f"rho_c = {rho_c:.6f} >= 1")

    # observer gain: supplied, or designed exactly
    L_exact = options.L_exact
    deadbeat_index = None
    if options.L is not None:
        L = options.L
    else:
        design = design_deadbeat_observer(plant.A, plant.C,
                                          grid_decimals=options.grid_decimals)
        L = design.L_grid if design.L_grid is not None else design.L
        L_exact = design.L if L_exact is None else L_exact
        deadbeat_index = design.nilpotency_index

    if observability_matrix(plant.A, plant.C).rank() < n:
        raise NotObservableError("(A, C) is not observable")

    # spectral report: the exact companion when available, else the runtime gain
    L_best = L_exact if L_exact is not None else L
    rho_eig = spectral_radius(plant.A - L_best @ plant.C)
    nilp_idx = _nilpotency_index(plant.A - L_best @ plant.C)
    rho_observer = 0.0 if nilp_idx is not None else rho_eig
    rho_grid = None
    if L_exact is not None and L != L_exact:
        rho_grid = spectral_radius(plant.A - L @ plant.C)
    if deadbeat_index is None:
        if nilp_idx is not None and L == L_best:
            deadbeat_index = nilp_idx
        else:
            deadbeat_index = n  # design horizon for a grid-rounded gain

    # scales
    s1 = max_integer_scale(plant.C)
    JC = ctrl.J @ plant.C
    s2 = _common_scale([ctrl.H, JC, ctrl.S])

    targets = _main_integer_targets(plant, ctrl, L, s2)
    omega = _find_omega(targets, options.omega_max_pow10)

    certs = {}
    for name, mat in [("C/s1", plant.C), ("H/s2", ctrl.H), ("JC/s2", JC),
                      ("S/s2", ctrl.S)]:
        scale = s1 if name == "C/s1" else s2
        ok, cert = is_integer_after_scale(mat, scale, source=name)
        if not ok:
            raise InfeasibleError(f"{name} failed integrality")
        certs[name] = cert
    for name, mat in targets.items():
        ok, cert = is_integer_after_scale(mat, omega, source=name)
        if not ok:
            raise NoIntegerOmegaError(f"{name} failed integrality at omega")
        certs[name] = cert

    # initial zoom: exact division of x0 (and the reference when it is exact
    # decimal data), plus enough headroom that the scaled reference error
    # respects its 1/(2 omega) envelope from the first step
    ref = options.reference
    ref_norm = Fraction(0)
    if ref is not None:
        ref_norm = max((abs(x) for x in ref.data), default=Fraction(0))
    floor_l0 = 2 * as_fraction(omega) * ref_norm
    try:
        # prefer an l0 that also divides the reference exactly: the scaled
        # reference error then extinguishes after one step
        vectors = [ctrl.x0.data] + ([ref.data] if ref is not None else [])
        l0 = _largest_decimal_l0(vectors, constraints_max=floor_l0,
                                 max_k=options.l0_max_pow10)
    except InfeasibleError:
        l0 = _largest_decimal_l0([ctrl.x0.data], constraints_max=floor_l0,
                                 max_k=options.l0_max_pow10)

    # observer-error bound and the modulus
    e0 = float(plant.x_p0_bound / l0)
    ce = compute_Ce(plant.A, plant.C, L, omega, e0, deadbeat_index=deadbeat_index)

    bound = q_bound_main(L, plant.C, ctrl.R_ref, ctrl.S, s1, s2, omega, ce.value)

    # start-up magnitudes under the zero-memory convention: the first two
    # transmitted state increments carry x0/l0 and x0/(omega l0), and the first
    # reference-output increment carries the unshrunk initial reference error
    b1 = float(inf_norm(ctrl.x0) / l0)
    w = float(omega)
    g1 = float(inf_norm(ctrl.S.scale(1 / s2))) * (float(ref_norm / l0) + 0.5) / w
    bootstrap = max(b1, b1 / w, g1)

    q = _pow2_above(max(bound, 2.0 * bootstrap))

    # quantizer range: (2R+1)/2 must strictly exceed both saturation drivers
    sat = max(float(inf_norm(plant.C)) * ce.value, 1.0 / (2.0 * w))
    range_level = max(1, math.floor(sat - 0.5) + 1)

    return MainPlan(
        L=L, omega=omega, s1=s1, s2=s2, l0=l0, q=q, q_bound=bound,
        C_e=ce.value, range_level=range_level, certificates=certs,
        rho_observer=rho_observer, rho_observer_eig=rho_eig,
        rho_observer_grid=rho_grid, deadbeat_index=deadbeat_index,
        tail_sound=ce.tail_sound, bootstrap_bound=bootstrap,
        dims={"n": plant.n, "w": plant.w, "v": plant.v,
              "n_x": ctrl.n_x, "n_r": ctrl.n_r},
    )
