"""Dropout-aware funnel feedback: availability, reset clock, error cascade.

The feedback law needs four ingredients at every instant: the availability
bit a(t), the reset clock tau(t) marking the end of the last dropout, the
shifted funnel gain phi(t) = phi0(t - tau(t)) (zero while the measurement is
lost), and the error cascade built from the tracking error and its
derivatives.  Everything here is derivable from the schedule and the time
alone; the mutable state object only caches a scan position.
"""

import bisect
import warnings
from dataclasses import dataclass, field

import numpy as np

from .design import FunnelSpec, alpha
from .errors import ConfigError, FunnelViolation, NonMonotoneTime

__all__ = [
    "AvailabilitySchedule",
    "ControllerState",
    "availability",
    "funnel_value",
    "error_cascade",
    "control_input",
    "check_initial_conditions",
]


@dataclass(frozen=True)
class AvailabilitySchedule:
    """Measurement dropout pattern over a finite horizon.

    dropouts lists half-open intervals (start, end] during which the output
    measurement is lost; availability is 1 elsewhere.  The availability
    signal is left-continuous: a(start) = 1 and a(end) = 0 for each dropout.
    A dropout starting at time zero is the one exception, taking a(0) = 0 so
    the schedule can begin mid-loss.
    """

    dropouts: tuple
    horizon: float
    # sorted endpoint arrays, kept separate for bisection
    _starts: tuple = field(init=False, repr=False, compare=False)
    _ends: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pairs = []
        for pair in self.dropouts:
            lo, hi = float(pair[0]), float(pair[1])
            pairs.append((lo, hi))
        object.__setattr__(self, "dropouts", tuple(pairs))
        object.__setattr__(self, "horizon", float(self.horizon))
        if not (self.horizon > 0.0):
            raise ConfigError("schedule horizon must be positive")
        prev_end = None
        for i, (lo, hi) in enumerate(pairs):
            if not (lo < hi):
                raise ConfigError(
                    f"dropout {i} is empty or reversed: ({lo}, {hi}]")
            if lo < 0.0 or hi > self.horizon:
                raise ConfigError(
                    f"dropout {i} leaves the horizon [0, {self.horizon}]")
            if prev_end is not None and lo <= prev_end:
                raise ConfigError(
                    f"dropout {i} starts at {lo}, not after the previous "
                    f"end {prev_end}")
            prev_end = hi
        object.__setattr__(self, "_starts", tuple(p[0] for p in pairs))
        object.__setattr__(self, "_ends", tuple(p[1] for p in pairs))

    @classmethod
    def from_pairs(cls, pairs, horizon):
        return cls(dropouts=tuple(tuple(p) for p in pairs), horizon=horizon)

    def _locate(self, t: float) -> int:
        """Index of the dropout containing t, or -1."""
        if t == 0.0:
            return 0 if self._starts and self._starts[0] == 0.0 else -1
        j = bisect.bisect_left(self._starts, t) - 1
        if j >= 0 and t <= self._ends[j]:
            return j
        return -1

    def availability(self, t: float) -> int:
        return 0 if self._locate(t) >= 0 else 1

    def reset_time(self, t: float) -> float:
        """tau(t): t itself during a dropout, else the latest dropout end
        before t, else 0."""
        j = self._locate(t)
        if j >= 0:
            return t
        j = bisect.bisect_left(self._starts, t) - 1
        if j >= 0:
            return self._ends[j]
        return 0.0

    def breakpoints(self):
        """All dropout endpoints inside (0, horizon), sorted."""
        pts = [p for pair in self.dropouts for p in pair
               if 0.0 < p < self.horizon]
        return sorted(set(pts))

    def check_against_design(self, dropout_bound: float,
                             window_bound: float):
        """Compare the schedule against designed duration limits.

        Violations are reported as warnings, not errors: a schedule may
        deliberately stress the controller beyond its certificate.  Returns
        the list of warning strings.
        """
        notes = []
        for i, (lo, hi) in enumerate(self.dropouts):
            if hi - lo > dropout_bound * (1.0 + 1e-12):
                notes.append(
                    f"dropout {i} lasts {hi - lo:.6g}, beyond the designed "
                    f"limit {dropout_bound:.6g}")
        for i in range(1, len(self.dropouts)):
            gap = self.dropouts[i][0] - self.dropouts[i - 1][1]
            if gap < window_bound * (1.0 - 1e-12):
                notes.append(
                    f"availability window before dropout {i} lasts "
                    f"{gap:.6g}, below the designed minimum "
                    f"{window_bound:.6g}")
        for note in notes:
            warnings.warn(note, stacklevel=2)
        return notes


def availability(sched: AvailabilitySchedule, t: float) -> int:
    return sched.availability(t)


class ControllerState:
    """Scan position for monotone-time controller queries.

    Holds the reset clock and the funnel in use.  Queries must come at
    nondecreasing times; use the schedule methods directly for random
    access.
    """

    def __init__(self, funnel: FunnelSpec, sched: AvailabilitySchedule):
        self.funnel = funnel
        self.sched = sched
        self.time = 0.0
        self.reset = 0.0
        self._cursor = 0

    def advance(self, t: float) -> float:
        """Move to time t and return tau(t)."""
        if t < self.time:
            raise NonMonotoneTime(
                f"controller queried at t = {t} after t = {self.time}")
        self.time = t
        ends = self.sched._ends
        starts = self.sched._starts
        n = len(ends)
        while self._cursor < n and ends[self._cursor] < t:
            self._cursor += 1
        j = self._cursor
        if j < n and (starts[j] < t <= ends[j]
                      or (t == 0.0 and starts[j] == 0.0)):
            self.reset = t
        elif j > 0:
            self.reset = ends[j - 1]
        else:
            self.reset = 0.0
        return self.reset


def funnel_value(state: ControllerState, sched: AvailabilitySchedule,
                 funnel: FunnelSpec, t: float) -> float:
    """Shifted funnel gain phi(t), zero during dropouts."""
    tau = state.advance(t)
    if sched.availability(t) == 0:
        return 0.0
    return float(funnel.value(t - tau))


def error_cascade(phi: float, e_derivs, limit: float = 1.0) -> np.ndarray:
    """Cascade vectors e_1..e_r from the error derivative stack.

    e_derivs rows are e, e', ..., e^(r-1).  Stage i+1 is
    phi * e^(i) + alpha(|e_i|^2) e_i.  Any stage reaching the limit (the
    funnel boundary at 1) raises FunnelViolation, which integration treats
    as a step rejection.  phi = 0 collapses every stage to zero.
    """
    e_derivs = np.atleast_2d(np.asarray(e_derivs, dtype=float))
    r, m = e_derivs.shape
    out = np.zeros((r, m))
    if phi == 0.0:
        return out
    lim_sq = limit * limit
    stage = phi * e_derivs[0]
    for i in range(r):
        n_sq = float(stage @ stage)
        if n_sq >= lim_sq:
            raise FunnelViolation(i + 1, np.sqrt(n_sq))
        out[i] = stage
        if i + 1 < r:
            stage = phi * e_derivs[i + 1] + alpha(n_sq) * stage
    return out


def control_input(a: int, e_r, sign: int, limit: float = 1.0) -> np.ndarray:
    """Feedback input -sign * a * alpha(|e_r|^2) e_r."""
    e_r = np.asarray(e_r, dtype=float).reshape(-1)
    if a == 0:
        return np.zeros_like(e_r)
    n_sq = float(e_r @ e_r)
    if n_sq >= limit * limit:
        raise FunnelViolation(0, np.sqrt(n_sq))
    return (-sign * alpha(n_sq)) * e_r


def check_initial_conditions(dp, e_derivs0, eta0_norm: float):
    """Report whether the start state lies inside the feasible set.

    Returns (name, value, bound, ok) rows for each cascade stage at the
    initial funnel gain and for the internal state ceiling.  Report only;
    nothing is raised.
    """
    e_derivs0 = np.atleast_2d(np.asarray(e_derivs0, dtype=float))
    r = e_derivs0.shape[0]
    phi00 = dp.funnel.phi00
    rows = []
    stage = phi00 * e_derivs0[0]
    dead = False
    for i in range(r):
        if dead:
            # stages past a violated one are meaningless, skip evaluation
            rows.append((f"stage {i + 1}", float("nan"), 1.0, False))
            continue
        n = float(np.linalg.norm(stage))
        rows.append((f"stage {i + 1}", n, 1.0, n < 1.0))
        if n >= 1.0:
            dead = True
        elif i + 1 < r:
            stage = phi00 * e_derivs0[i + 1] + alpha(n * n) * stage
    ok = float(eta0_norm) <= dp.internal_cap
    rows.append(("internal", float(eta0_norm), dp.internal_cap, ok))
    return rows
