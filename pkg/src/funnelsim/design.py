"""Controller synthesis: feasibility bounds, funnel shaping, input certificate.

Given the class constants of a plant and a reference signal, this module
works out how long measurement dropouts may last, how long the signal must
stay available between them, a ceiling for the internal state, an admissible
window for the initial funnel gain, the gain-recursion constants, a funnel
from the exponential family, and a certified bound on the input norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CiOverflow,
    DegenerateCertificate,
    DeltaTooLarge,
    EmptyWindow,
    InfeasibleEtaStar,
    InfeasibleRefinement,
    InitialConditionViolated,
    InvalidQ,
    TemplateRejected,
)
from .reference import ReferenceSignal
from .sysmodel import ClassConstants, NormalForm, class_constants

Unbounded = math.inf


def alpha(s: float) -> float:
    """Gain function 1/(1-s), defined for s < 1."""
    return 1.0 / (1.0 - s)


def alpha_tilde(s: float) -> float:
    """Derivative-type gain (1+s)/(1-s)^2, defined for s < 1."""
    return (1.0 + s) / (1.0 - s) ** 2


def ahat_dagger(z: float) -> float:
    """Inverse of s -> alpha(s) * s on [0, 1), i.e. z/(1+z)."""
    return z / (1.0 + z)


def _check_q(q: float) -> None:
    if not (0.0 < q < 1.0):
        raise InvalidQ(f"design margin q must lie in (0, 1), got {q}")


def partial_geometric_sum(k: int, s: float) -> float:
    """Sum of powers s^0 + s^1 + ... + s^k, evaluated by Horner's rule."""
    if k < 0:
        raise ValueError("order must be nonnegative")
    acc = 1.0
    for _ in range(k):
        acc = 1.0 + s * acc
    return acc


def _sup_duration(coef: float, beta: float, target: float) -> float:
    """Root of coef * D^2 * exp(beta D) = target, bisected in log space.

    The left side is strictly increasing in D > 0, so the root is unique.
    Relative tolerance 1e-12.
    """
    lt = math.log(target) - math.log(coef)

    def f(d):
        return 2.0 * math.log(d) + beta * d - lt

    lo, hi = 1.0, 1.0
    for _ in range(4000):
        if f(lo) < 0.0:
            break
        lo *= 0.5
    for _ in range(4000):
        if f(hi) > 0.0:
            break
        hi *= 2.0
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def max_dropout_duration(cc: ClassConstants, q: float) -> float:
    """Supremum of certifiable dropout durations.

    Three growth conditions cap the duration: the coasting state must not
    outrun the funnel, the internal state must not be re-excited past the
    design margin, and the internal decay must dominate the dropout length.
    Returns Unbounded (inf) when the internal dynamics are trivial.
    """
    _check_q(q)
    if cc.M == 0.0:
        return Unbounded
    by_decay = 1.0 / (2.0 * cc.mu * cc.M)
    sp = cc.s * cc.p
    if sp == 0.0:
        return by_decay
    gain_sum = partial_geometric_sum(cc.r, alpha(q * q))
    by_coast = _sup_duration(sp * cc.M, cc.beta, 1.0)
    by_margin = _sup_duration(sp * cc.M ** 2, cc.beta, q / gain_sum)
    return min(by_coast, by_margin, by_decay)


def min_availability_duration(cc: ClassConstants, q: float,
                              dropout: float) -> float:
    """Shortest availability window that restores the design invariants.

    Two reset ratios must be pulled below one by the exponential decay over
    the window; the required window is the larger of their log-scaled
    durations, floored at zero.
    """
    _check_q(q)
    if dropout < 0.0:
        raise ValueError("dropout duration must be nonnegative")
    den1 = 1.0 - cc.mu * cc.M * dropout
    if den1 <= 0.0:
        raise DeltaTooLarge(
            f"dropout duration {dropout:.6e} defeats the decay condition "
            f"(1 - mu*M*dropout = {den1:.6e})"
        )
    ratio1 = (4.0 * cc.M ** 2 + cc.p * cc.M * dropout) / den1
    sp = cc.s * cc.p
    if sp == 0.0 or cc.M == 0.0 or dropout == 0.0:
        ratio2 = 0.0
    else:
        gain_sum = partial_geometric_sum(cc.r, alpha(q * q))
        # Evaluate the re-excitation term in log space first so an oversized
        # dropout is rejected before the exponential can overflow.
        log_x = (math.log(sp * cc.M ** 2 * gain_sum)
                 + 2.0 * math.log(dropout) + cc.beta * dropout)
        if log_x >= math.log(q):
            raise DeltaTooLarge(
                f"dropout duration {dropout:.6e} defeats the re-excitation "
                f"margin (log excess {log_x - math.log(q):.6e})"
            )
        x = math.exp(log_x)
        ratio2 = x * (2.0 * cc.M / dropout) / (cc.mu * (q - x))
    need = 0.0
    if ratio1 > 1.0:
        need = max(need, math.log(ratio1) / cc.mu)
    if ratio2 > 1.0:
        need = max(need, math.log(ratio2) / cc.mu)
    return need


@dataclass(frozen=True)
class EtaStarBounds:
    """The three lower bounds a valid internal-state ceiling must exceed.

    forcing: growth driven by the tracked output during one dropout.
    coasting: amplification of the stacked state across dropout and return.
    regrowth: self-consistent ceiling; infinite when its denominator closes.
    """

    forcing: float
    coasting: float
    regrowth: float
    regrowth_denominator: float

    @property
    def value(self) -> float:
        return max(self.forcing, self.coasting, self.regrowth)

    def report(self, ceiling: float):
        """Per-bound pass/fail rows for a candidate ceiling."""
        return [
            ("dropout_forcing", self.forcing, ceiling >= self.forcing),
            ("coasting", self.coasting, ceiling >= self.coasting),
            ("regrowth", self.regrowth,
             math.isfinite(self.regrowth) and ceiling >= self.regrowth),
        ]


def _eta_bounds(cc: ClassConstants, dropout: float, window: float, q: float,
                y_sup: float, chain_sup: float) -> EtaStarBounds:
    gain_sum = partial_geometric_sum(cc.r, alpha(q * q))
    e_bd = math.exp(cc.beta * dropout)
    forcing = cc.p * dropout * math.exp(cc.mu * window) * y_sup
    coasting = (chain_sup + 1.0) * math.exp(cc.beta * dropout
                                            + cc.mu * window)
    num = cc.p * cc.M * gain_sum * (chain_sup * (1.0 + e_bd) + e_bd)
    den = (cc.mu * q - cc.s * cc.p * cc.M ** 2 * gain_sum * dropout * e_bd
           * (cc.mu * dropout + 2.0 * cc.M * math.exp(-cc.mu * window)))
    if num == 0.0:
        regrowth = 0.0
    elif den <= 0.0:
        regrowth = math.inf
    else:
        regrowth = num / den
    return EtaStarBounds(forcing=forcing, coasting=coasting,
                         regrowth=regrowth, regrowth_denominator=den)


def eta_star_lower_bound(cc: ClassConstants, dropout: float, window: float,
                         q: float, ref_bounds) -> EtaStarBounds:
    """Least admissible ceiling for the internal state.

    ref_bounds is (sup |y_ref|, sup |stacked reference chain|).  Any ceiling
    at or above .value of the result is admissible.
    """
    _check_q(q)
    y_sup, chain_sup = ref_bounds
    bounds = _eta_bounds(cc, dropout, window, q, y_sup, chain_sup)
    if not math.isfinite(bounds.value):
        raise InfeasibleEtaStar(
            f"self-consistent ceiling denominator is "
            f"{bounds.regrowth_denominator:.6e}; dropout/window durations "
            f"leave no margin"
        )
    return bounds


def phi0_window(cc: ClassConstants, internal_cap: float, dropout: float,
                window: float, q: float, chain_sup: float):
    """Admissible interval for the initial funnel gain.

    Returns (gain_lo, gain_hi, rejoin_bound) where rejoin_bound caps the
    stacked error at the end of any dropout.
    """
    _check_q(q)
    gain_sum = partial_geometric_sum(cc.r, alpha(q * q))
    e_bd = math.exp(cc.beta * dropout)
    rejoin = (chain_sup * (1.0 + e_bd) + e_bd
              + cc.s * cc.M * dropout * e_bd
              * (2.0 * cc.M * math.exp(-cc.mu * window)
                 + cc.mu * dropout) * internal_cap)
    lo = cc.p * cc.M / (cc.mu * internal_cap)
    hi = q / (gain_sum * rejoin)
    if lo > hi:
        raise EmptyWindow(lo, hi)
    return lo, hi, rejoin


@dataclass(frozen=True)
class GainConstants:
    """Output of the start-up gain recursion.

    stage_slopes[k] bounds the growth rate of cascade stage k; stage_caps[k]
    bounds its norm; stage_init[i] is the i+1-th cascade vector at t = 0;
    required_level is the funnel gain the design must reach within the
    settling time.
    """

    phi00: float
    d: float
    q: float
    slope_gain: float           # growth constant of the shifted funnel
    stage_slopes: tuple         # indices 0..r-1
    stage_caps: tuple           # indices 0..r-1, all < 1
    stage_cap_complements: tuple  # 1 - cap^2, kept in stable form
    stage_init: tuple           # cascade vectors 1..r at t = 0
    required_level: float


def gain_recursion(phi00: float, d: float, e_derivs0, q: float) -> GainConstants:
    """Start-up constants for the cascade stages.

    e_derivs0 holds the tracking error and its derivatives at t = 0 (rows
    0..r-1).  Each stage cap collects the worst of the initial stage norm,
    the inherited slope demand, and the post-dropout margin q.
    """
    _check_q(q)
    if phi00 <= 0.0:
        raise ValueError("initial funnel gain must be positive")
    e_derivs0 = np.atleast_2d(np.asarray(e_derivs0, dtype=float))
    r = e_derivs0.shape[0]
    mu0 = d * (1.0 + phi00) / phi00
    slopes = [mu0]
    caps = [0.0]
    comps = [1.0]
    e_stage = phi00 * e_derivs0[0]
    init = [e_stage]
    for k in range(1, r):
        # pull = c alpha(c^2) and alpha_tilde(c^2), via the complement so
        # slope demands near the double-precision ceiling stay finite.
        pull = caps[k - 1] / comps[k - 1]
        mu_k = (1.0 + mu0 * (1.0 + pull)
                + (2.0 - comps[k - 1]) / comps[k - 1] ** 2
                * (slopes[k - 1] + pull))
        slopes.append(mu_k)
        demand = (1.0 + mu0) if k == 1 else mu_k
        norm_sq = float(e_stage @ e_stage)
        if norm_sq >= 1.0:
            raise CiOverflow(k, math.sqrt(norm_sq))
        comp = min(1.0 - norm_sq, 1.0 / (1.0 + demand), 1.0 - q * q)
        comps.append(comp)
        caps.append(math.sqrt(1.0 - comp))
        e_stage = (phi00 * e_derivs0[k]
                   + alpha(float(init[-1] @ init[-1])) * init[-1])
        init.append(e_stage)
    level = 1.0 + caps[r - 1] / comps[r - 1]
    for i in range(1, r):
        level += caps[i] + caps[i - 1] / comps[i - 1]
    return GainConstants(phi00=phi00, d=d, q=q, slope_gain=mu0,
                         stage_slopes=tuple(slopes), stage_caps=tuple(caps),
                         stage_cap_complements=tuple(comps),
                         stage_init=tuple(init), required_level=level)


@dataclass(frozen=True)
class FunnelSpec:
    """Funnel gain phi0(t) = 1/(a exp(-b t) + c) with slope constant d.

    The gain rises from 1/(a+c) to 1/c; d certifies the growth bound
    phi0' <= d (1 + phi0), which holds with d = b for this family.
    """

    a: float
    b: float
    c: float
    d: float

    def boundary(self, t):
        """Funnel radius, the reciprocal gain."""
        return self.a * np.exp(-self.b * np.asarray(t, dtype=float)) + self.c

    def value(self, t):
        """Funnel gain at time t (vectorized)."""
        return 1.0 / self.boundary(t)

    def slope(self, t):
        """Time derivative of the gain."""
        t = np.asarray(t, dtype=float)
        decay = self.a * np.exp(-self.b * t)
        return self.b * decay / (decay + self.c) ** 2

    @property
    def phi00(self) -> float:
        return 1.0 / (self.a + self.c)

    @property
    def terminal_gain(self) -> float:
        return 1.0 / self.c

    @property
    def slope_gain(self) -> float:
        """Growth constant d(1+phi0(0))/phi0(0) used by the recursion."""
        return self.d * (1.0 + self.phi00) / self.phi00

    @property
    def slope_gain_tight(self) -> float:
        """Sharper growth constant b(1 - c phi0(0)), reported for reference."""
        return self.b * self.a / (self.a + self.c)


def refine_funnel(window, required_level: float, settle: float,
                  template=None, phi00: float | None = None,
                  b_floor: float = 1e-6) -> FunnelSpec:
    """Pick an exponential funnel meeting the gain window and level demand.

    The gain must start inside `window` (default: at its upper end) and
    reach `required_level` within the settling time `settle`.  A template
    (b, c) pins those two parameters and is validated instead of optimized.
    """
    lo, hi = window
    if lo > hi:
        raise EmptyWindow(lo, hi)
    if phi00 is None:
        phi00 = hi
    elif not (lo * (1.0 - 1e-12) <= phi00 <= hi * (1.0 + 1e-12)):
        raise TemplateRejected(
            f"initial funnel gain {phi00:.6e} outside the admissible window "
            f"[{lo:.6e}, {hi:.6e}]"
        )
    if required_level < 1.0:
        raise ValueError("required level is at least 1 by construction")
    if template is not None:
        b, c = float(template[0]), float(template[1])
        if b <= 0.0 or c <= 0.0:
            raise TemplateRejected("template parameters must be positive")
        if c >= 1.0 / phi00:
            raise InfeasibleRefinement(
                f"template floor c = {c:.6e} is not below the initial "
                f"funnel radius {1.0 / phi00:.6e}"
            )
        a = 1.0 / phi00 - c
        reached = 1.0 / (a * math.exp(-b * settle) + c)
        if reached < required_level * (1.0 - 1e-12):
            raise TemplateRejected(
                f"template funnel reaches gain {reached:.6e} within the "
                f"settling time, below the required level "
                f"{required_level:.6e}"
            )
        return FunnelSpec(a=a, b=b, c=c, d=b)
    c = (1.0 - 1e-3) * min(1.0 / required_level, 1.0 / phi00)
    a = 1.0 / phi00 - c
    target = 1.0 / required_level - c
    if a <= target:
        b = b_floor
    else:
        b = max(math.log(a / target) / settle, b_floor)
    b *= 1.0 + 1e-9
    return FunnelSpec(a=a, b=b, c=c, d=b)


@dataclass(frozen=True)
class Certificate:
    """Uniform input bound and the constants it is assembled from."""

    ref_sup: float              # worst reference derivative sup, orders 0..r
    floor: float                # infimum of the funnel radius
    internal_sup: float         # uniform bound on the internal state
    drive_bound: float          # aggregate drive constant on the last stage
    root: float                 # balance point of drive against gain
    root_complement: float      # 1 - root, kept in a cancellation-free form
    last_cap: float             # uniform bound on the last cascade stage
    last_cap_complement: float  # 1 - last_cap^2
    input_sup: float


def input_bound_certificate(cc: ClassConstants, nf: NormalForm,
                            funnel: FunnelSpec, gains: GainConstants,
                            internal_cap: float, q: float,
                            ref_sup: float) -> Certificate:
    """Certify a uniform bound on the input norm.

    The last cascade stage is trapped below a cap assembled from its initial
    norm, the post-dropout margin, and the balance point where the funnel
    gain overpowers the aggregate drive; the input bound follows from the
    cap through the gain function.
    """
    r = cc.r
    floor = funnel.c
    psi0 = 1.0 / funnel.phi00
    internal_sup = max(internal_cap,
                       cc.M * internal_cap
                       + cc.p * cc.M / cc.mu * (psi0 + ref_sup))
    cl = gains.stage_caps[r - 1]
    compl = gains.stage_cap_complements[r - 1]
    pull = cl / compl
    drive = (gains.slope_gain * (1.0 + pull)
             + (2.0 - compl) / compl ** 2 * (gains.stage_slopes[r - 1] + pull)
             + ref_sup / floor + cc.s / floor * internal_sup)
    for i in range(1, r + 1):
        ci = gains.stage_caps[i - 1]
        drive += cc.r_norms[i - 1] * (
            1.0 + ci / gains.stage_cap_complements[i - 1] + ref_sup / floor)
    gain_at_start = cc.gamma_min * funnel.phi00
    # root of drive * (1 - x^2) = gain * x in (0,1); the scaled form
    # x^2 + k x - 1 = 0 with k = gain/drive avoids cancellation for huge
    # drive constants, as does its complement.
    if drive == 0.0:
        root = 0.0
        root_comp = 1.0
    else:
        k = gain_at_start / drive
        disc = math.sqrt(k * k + 4.0)
        root = 2.0 / (k + disc)
        root_comp = 2.0 * k / (2.0 + k + disc)
    er2 = float(gains.stage_init[r - 1] @ gains.stage_init[r - 1])
    if er2 >= 1.0:
        raise DegenerateCertificate(drive, gain_at_start)
    candidates = (er2, root, q * q)
    complements = (1.0 - er2, root_comp, 1.0 - q * q)
    pick = max(range(3), key=lambda i: candidates[i])
    cap = math.sqrt(candidates[pick])
    cap_comp = complements[pick]
    return Certificate(ref_sup=ref_sup, floor=floor,
                       internal_sup=internal_sup, drive_bound=drive,
                       root=root, root_complement=root_comp, last_cap=cap,
                       last_cap_complement=cap_comp,
                       input_sup=cap / cap_comp)


@dataclass
class DesignParams:
    """Complete output of the synthesis pipeline."""

    nf: NormalForm
    cc: ClassConstants
    q: float
    theta: float
    gain_sum: float             # geometric chain sum at the design margin
    dropout_sup: float          # supremum of certifiable dropout durations
    dropout: float              # designed maximal dropout duration
    window_min: float           # minimal availability window
    window: float               # designed availability window
    settle: float               # time to reach the required funnel level
    eta_bounds: EtaStarBounds
    internal_cap: float         # ceiling for the internal state
    rejoin_bound: float         # stacked-error bound at dropout ends
    gain_lo: float
    gain_hi: float
    funnel: FunnelSpec
    gains: GainConstants
    cert: Certificate
    ref_y_sup: float
    ref_chain_sup: float
    ic_stage_norms: tuple
    ic_internal_norm: float
    iterations: int


def synthesize(nf: NormalForm, y_ref: ReferenceSignal, q: float, *,
               theta: float = 0.9, dropout_limit: float | None = None,
               availability_floor: float | None = None,
               internal_cap: float | None = None,
               phi00: float | None = None, funnel_template=None,
               settle_factor: float = 0.99, b_seed: float = 1.0,
               default_dropout: float = 1.0,
               default_window: float = 1.0) -> DesignParams:
    """Run the full design pipeline and return its parameters.

    dropout_limit / availability_floor describe the schedule the controller
    must tolerate; without them the designed durations are derived from the
    feasibility suprema with safety factor theta (or defaults when the
    internal dynamics impose no constraint at all).
    """
    _check_q(q)
    if not (0.0 < theta < 1.0):
        raise ValueError("safety factor theta must lie in (0, 1)")
    if y_ref.m != nf.m:
        raise ValueError("reference dimension must match the output dimension")
    cc = class_constants(nf)
    gain_sum = partial_geometric_sum(cc.r, alpha(q * q))

    dropout_sup = max_dropout_duration(cc, q)
    if math.isinf(dropout_sup):
        dropout = dropout_limit if dropout_limit is not None else default_dropout
    elif dropout_limit is not None:
        if dropout_limit > dropout_sup * (1.0 - 1e-9):
            raise DeltaTooLarge(
                f"schedule dropout bound {dropout_limit:.6e} reaches the "
                f"feasibility supremum {dropout_sup:.6e}"
            )
        dropout = dropout_limit
    else:
        dropout = theta * dropout_sup
    if dropout <= 0.0:
        raise ValueError("dropout duration must be positive")

    window_min = min_availability_duration(cc, q, dropout)
    if window_min > 0.0:
        window = window_min / theta
        if availability_floor is not None:
            if availability_floor < window_min * (1.0 + 1e-9):
                raise DeltaTooLarge(
                    f"schedule availability floor {availability_floor:.6e} "
                    f"is below the required window {window_min:.6e}"
                )
            window = min(window, availability_floor)
    else:
        window = (availability_floor if availability_floor is not None
                  else default_window)

    y_sup = y_ref.deriv_sup(0)
    chain_sup = y_ref.chain_sup(cc.r)
    eta_bounds = eta_star_lower_bound(cc, dropout, window, q,
                                      (y_sup, chain_sup))
    if internal_cap is None:
        cap = eta_bounds.value * (1.0 + 1e-6)
    else:
        cap = internal_cap
        if cap < eta_bounds.value:
            raise InfeasibleEtaStar(
                f"requested ceiling {cap:.6e} is below the least admissible "
                f"value {eta_bounds.value:.6e}"
            )
    if not math.isfinite(cap) or cap <= 0.0:
        raise InfeasibleEtaStar(
            f"internal ceiling {cap!r} is not a positive finite number"
        )

    gain_lo, gain_hi, rejoin = phi0_window(cc, cap, dropout, window, q,
                                           chain_sup)
    start_gain = gain_hi if phi00 is None else phi00
    settle = settle_factor * window

    chain0 = nf.chain0 if nf.chain0 is not None else np.zeros((nf.r, nf.m))
    eta0 = nf.eta0 if nf.eta0 is not None else np.zeros(nf.internal_dim)
    e_derivs0 = chain0 - y_ref.derivatives(0.0, nf.r - 1)

    if funnel_template is not None:
        gains = gain_recursion(start_gain, float(funnel_template[0]),
                               e_derivs0, q)
        funnel = refine_funnel((gain_lo, gain_hi), gains.required_level,
                               settle, template=funnel_template,
                               phi00=start_gain)
        iterations = 1
    else:
        # The slope constant feeds the recursion whose level demand feeds
        # the slope back; iterate to the (monotone) fixed point.
        b = b_seed
        gains = funnel = None
        for iterations in range(1, 61):
            gains = gain_recursion(start_gain, b, e_derivs0, q)
            funnel = refine_funnel((gain_lo, gain_hi), gains.required_level,
                                   settle, phi00=start_gain)
            b_next = max(b_seed, funnel.b)
            if b_next <= b * (1.0 + 1e-12):
                funnel = FunnelSpec(a=funnel.a, b=b, c=funnel.c, d=b)
                break
            b = b_next
        else:
            raise InfeasibleRefinement(
                "funnel slope iteration did not settle in 60 rounds"
            )

    stage_norms = tuple(float(np.linalg.norm(e)) for e in gains.stage_init)
    for i, nrm in enumerate(stage_norms, start=1):
        if nrm >= 1.0:
            raise InitialConditionViolated(f"cascade stage {i}", nrm, 1.0)
    eta0_norm = float(np.linalg.norm(eta0)) if eta0.size else 0.0
    if eta0_norm > cap:
        raise InitialConditionViolated("internal state", eta0_norm, cap)

    cert = input_bound_certificate(cc, nf, funnel, gains, cap, q,
                                   y_ref.y_max(cc.r))
    return DesignParams(nf=nf, cc=cc, q=q, theta=theta, gain_sum=gain_sum,
                        dropout_sup=dropout_sup, dropout=dropout,
                        window_min=window_min, window=window, settle=settle,
                        eta_bounds=eta_bounds, internal_cap=cap,
                        rejoin_bound=rejoin, gain_lo=gain_lo,
                        gain_hi=gain_hi, funnel=funnel, gains=gains,
                        cert=cert, ref_y_sup=y_sup, ref_chain_sup=chain_sup,
                        ic_stage_norms=stage_norms,
                        ic_internal_norm=eta0_norm, iterations=iterations)


def check_design(dp: DesignParams) -> dict:
    """Numeric margins of every design inequality; all must be nonnegative.

    Margins for strict conditions are reported as plain differences; the
    caller decides what slack to demand.
    """
    cc, q = dp.cc, dp.q
    sp = cc.s * cc.p
    e_bd = math.exp(cc.beta * dp.dropout)
    d2 = dp.dropout ** 2
    margins = {
        "dropout_coast": 1.0 - sp * cc.M * d2 * e_bd,
        "dropout_margin": q / dp.gain_sum - sp * cc.M ** 2 * d2 * e_bd,
        "dropout_decay": 1.0 - 2.0 * cc.mu * cc.M * dp.dropout,
    }
    den1 = 1.0 - cc.mu * cc.M * dp.dropout
    ratio1 = (4.0 * cc.M ** 2 + cc.p * cc.M * dp.dropout) / den1
    margins["window_reset"] = (math.inf if ratio1 <= 0.0 else
                               cc.mu * dp.window - math.log(ratio1))
    x = sp * cc.M ** 2 * dp.gain_sum * d2 * e_bd
    if x == 0.0:
        margins["window_regain"] = math.inf
    else:
        ratio2 = x * (2.0 * cc.M / dp.dropout) / (cc.mu * (q - x))
        margins["window_regain"] = (math.inf if ratio2 <= 0.0 else
                                    cc.mu * dp.window - math.log(ratio2))
    eb = dp.eta_bounds
    margins["ceiling_forcing"] = dp.internal_cap - eb.forcing
    margins["ceiling_coasting"] = dp.internal_cap - eb.coasting
    margins["ceiling_regrowth"] = dp.internal_cap - eb.regrowth
    margins["gain_window_low"] = dp.funnel.phi00 - dp.gain_lo
    margins["gain_window_high"] = dp.gain_hi - dp.funnel.phi00
    margins["funnel_level"] = (1.0 / dp.gains.required_level
                               - dp.funnel.boundary(dp.settle))
    for k, comp in enumerate(dp.gains.stage_cap_complements):
        margins[f"stage_cap_{k}"] = comp
    margins["last_stage_cap"] = dp.cert.last_cap_complement
    for i, nrm in enumerate(dp.ic_stage_norms, start=1):
        margins[f"start_stage_{i}"] = 1.0 - nrm
    margins["start_internal"] = dp.internal_cap - dp.ic_internal_norm
    return margins


# Symbol names mandated for the serialized report.
def design_report(dp: DesignParams) -> str:
    """Flat key-value report of every design constant."""
    cc = dp.cc
    rows = [
        ("r", cc.r), ("sign", cc.sign), ("q", dp.q), ("theta", dp.theta),
        ("gamma", cc.gamma_min), ("M", cc.M), ("mu", cc.mu), ("s", cc.s),
        ("p", cc.p), ("beta", cc.beta), ("A_r", dp.gain_sum),
        ("Delta_sup", dp.dropout_sup), ("Delta", dp.dropout),
        ("delta_min", dp.window_min), ("delta", dp.window),
        ("rho", dp.settle),
        ("eta_star_min", dp.eta_bounds.value), ("eta_star", dp.internal_cap),
        ("E", dp.rejoin_bound),
        ("phi0_min", dp.gain_lo), ("phi0_max", dp.gain_hi),
        ("phi0_0", dp.funnel.phi00),
        ("a", dp.funnel.a), ("b", dp.funnel.b), ("c", dp.funnel.c),
        ("d", dp.funnel.d),
        ("mu0", dp.gains.slope_gain),
        ("mu0_tight", dp.funnel.slope_gain_tight),
    ]
    for k in range(1, cc.r):
        rows.append((f"mu_{k}", dp.gains.stage_slopes[k]))
    for k in range(1, cc.r):
        rows.append((f"c_{k}", dp.gains.stage_caps[k]))
    rows.append((f"c_{cc.r}", dp.cert.last_cap))
    rows += [
        ("chi", dp.gains.required_level),
        ("Y_max", dp.cert.ref_sup), ("lambda", dp.cert.floor),
        ("eta_bar", dp.cert.internal_sup),
        ("C_tilde", dp.cert.drive_bound), ("epsilon", dp.cert.root),
        ("U_max", dp.cert.input_sup),
        ("y_ref_sup", dp.ref_y_sup), ("x_ref_sup", dp.ref_chain_sup),
        ("iterations", dp.iterations),
    ]
    return "".join(f"{k} = {v!r}\n" for k, v in rows)
