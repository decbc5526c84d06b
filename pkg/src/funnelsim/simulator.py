"""Closed-loop integration over a dropout schedule, traces, CSV output.

Integration is segment-exact: the time axis is split at every dropout
endpoint, so no step straddles an availability jump and every jump time is
a sample.  Within a segment availability and the funnel reset offset are
constant, which keeps the right-hand side smooth; the adaptive stepper
rejects any step that drives a cascade stage against the funnel boundary.

Two engines produce the rows: a compiled kernel (numba) and a pure-Python
reference stepper.  They implement the same tableau and step control;
results agree to integration tolerance but are not bit-identical across
engines. A given engine is deterministic for fixed inputs.
"""

import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from ._rk import Underflow, dp45_segment
from .controller import AvailabilitySchedule, error_cascade
from .design import FunnelSpec
from .errors import (
    ConfigError,
    FunnelViolation,
    InitialConditionViolated,
    StepUnderflow,
)
from .reference import ReferenceSignal

__all__ = ["SimOptions", "ManualDesign", "Trace", "integrate",
           "coasting_run", "write_csv", "read_csv"]

DOMAIN_MARGIN = 1e-10     # stages must stay below 1 - this during availability


@dataclass
class SimOptions:
    rtol: float = 1e-8
    atol: float = 1e-10
    grid_dt: float = 1e-3     # uniform output grid spacing
    h_min: float = 1e-12
    h_max: float = 1.0
    h0: float = 1e-3
    engine: str = "auto"      # auto | numba | python
    chunk_rows: int = 200_000


@dataclass(frozen=True)
class ManualDesign:
    """Design stand-in for runs with a user-chosen funnel and no synthesis.

    Carries just what integrate() needs; the internal ceiling defaults to
    unbounded so only the cascade feasibility check applies.
    """

    funnel: FunnelSpec
    internal_cap: float = math.inf


@dataclass
class Trace:
    """Sampled closed-loop run: states plus every controller-side signal.

    x rows hold the full integration state (chain then internal); psi uses
    -1.0 as the in-memory stand-in for the undefined funnel radius during
    dropouts (the CSV writes an empty field there).
    """

    t: np.ndarray
    x: np.ndarray
    a: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    y: np.ndarray
    e: np.ndarray
    e_norm: np.ndarray
    stage_norms: np.ndarray   # (N, r) cascade norms, zero during dropouts
    u: np.ndarray
    u_norm: np.ndarray
    eta: np.ndarray
    eta_norm: np.ndarray
    r: int
    m: int
    internal_dim: int
    stats: dict = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return self.t.size

    @property
    def chain(self) -> np.ndarray:
        """Chain states, shape (N, r, m)."""
        rm = self.r * self.m
        return self.x[:, :rm].reshape(-1, self.r, self.m)


def _segments(sched: AvailabilitySchedule, t_end: float):
    """(start, end, availability, reset) per smooth piece of [0, t_end]."""
    cuts = [0.0] + [b for b in sched.breakpoints() if b < t_end] + [t_end]
    segs = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        a = sched.availability(mid)
        tau = sched.reset_time(mid) if a == 1 else 0.0
        segs.append((lo, hi, a, tau))
    return segs


def _grid_times(t_end: float, dt: float) -> np.ndarray:
    n = int(math.floor(t_end / dt))
    g = np.arange(1, n + 1) * dt
    return g[g < t_end]


def _python_rhs(nf, funnel, a, tau, y_ref, lim_sq):
    """Closure matching the compiled kernel's arithmetic."""
    r, m, kdim = nf.r, nf.m, nf.internal_dim
    rm = r * m
    R_wide = np.hstack([nf.R[i] for i in range(r)])
    sign = float(nf.sign)

    def rhs(t, x):
        dx = np.empty_like(x)
        chain = x[:rm]
        eta = x[rm:]
        dx[:rm - m] = chain[m:]
        top = R_wide @ chain + nf.S @ eta
        if a == 1:
            phi = float(funnel.value(t - tau))
            ed = chain.reshape(r, m) - y_ref.derivatives(t, r - 1)
            stage = phi * ed[0]
            n_sq = 0.0
            for i in range(r):
                n_sq = float(stage @ stage)
                if n_sq >= lim_sq:
                    raise FunnelViolation(i + 1, math.sqrt(n_sq), t)
                if i + 1 < r:
                    stage = phi * ed[i + 1] + stage / (1.0 - n_sq)
            u = (-sign / (1.0 - n_sq)) * stage
            top = top + nf.Gamma @ u
        dx[rm - m:rm] = top
        dx[rm:] = nf.Q @ eta + nf.P @ chain[:m]
        return dx

    return rhs


def _diagnose(nf, funnel, a, tau, y_ref, t, x):
    """Last-stage norm and funnel gain at a point, tolerant of blowup."""
    r, m = nf.r, nf.m
    rm = r * m
    if a == 0:
        return 0.0, 0.0
    phi = float(funnel.value(t - tau))
    ed = x[:rm].reshape(r, m) - y_ref.derivatives(t, r - 1)
    stage = phi * ed[0]
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for i in range(r - 1):
            n_sq = float(stage @ stage)
            stage = phi * ed[i + 1] + stage / (1.0 - n_sq)
    return float(np.linalg.norm(stage)), phi


def _zero_reference(m):
    return ReferenceSignal.constant(np.zeros(m))


def _resolve_engine(name: str):
    if name == "python":
        return None, "python"
    kern = _kernel.get_kernel()
    if kern is None:
        if name == "numba":
            raise RuntimeError("numba engine requested but numba is absent")
        warnings.warn("compiled engine unavailable, using python stepper")
        return None, "python"
    return kern, "numba"


def _run_segments(nf, funnel, sched_segments, y_ref, x0, opts):
    """Integrate across smooth segments; returns times, states, stats."""
    kern, engine = _resolve_engine(opts.engine)
    lim = 1.0 - DOMAIN_MARGIN
    lim_sq = lim * lim
    n = x0.size
    r, m, kdim = nf.r, nf.m, nf.internal_dim
    times = [np.array([sched_segments[0][0]])]
    states = [x0.reshape(1, -1).copy()]
    stats = {"accepted": 0, "rejected": 0, "rhs_evals": 0,
             "segments": len(sched_segments), "engine": engine}
    x = x0.astype(float).copy()

    if kern is not None:
        R_wide = np.ascontiguousarray(np.hstack([nf.R[i] for i in range(r)]))
        S = np.ascontiguousarray(nf.S, dtype=float)
        G = np.ascontiguousarray(nf.Gamma, dtype=float)
        Q = np.ascontiguousarray(nf.Q, dtype=float)
        P = np.ascontiguousarray(nf.P, dtype=float)
        off, amp, om, ph = (np.ascontiguousarray(v, dtype=float)
                            for v in y_ref.kernel_arrays())
        fa, fb, fc = funnel.a, funnel.b, funnel.c
        headroom = int(opts.h_max / opts.grid_dt) + 8
        cap = max(opts.chunk_rows, 2 * headroom)
        out_t = np.empty(cap)
        out_x = np.empty((cap, n))
        k1 = np.empty(n)

    for (lo, hi, a, tau) in sched_segments:
        grid = _grid_times(hi, opts.grid_dt)
        grid = grid[grid > lo]
        if kern is not None:
            gidx = 0
            t_cur = lo
            h = min(opts.h0, hi - lo)
            have_k1 = 0
            while True:
                (status, nrows, t_cur, h, gidx, na, nr, ne) = kern(
                    t_cur, hi, x, k1, have_k1, h,
                    a, tau, fa, fb, fc, float(nf.sign),
                    R_wide, S, G, Q, P, off, amp, om, ph,
                    r, m, kdim,
                    opts.rtol, opts.atol, opts.h_min, opts.h_max, lim_sq,
                    grid, gidx, headroom, out_t, out_x)
                stats["accepted"] += na
                stats["rejected"] += nr
                stats["rhs_evals"] += ne
                if nrows:
                    times.append(out_t[:nrows].copy())
                    states.append(out_x[:nrows].copy())
                if status == _kernel.DONE:
                    break
                if status == _kernel.UNDERFLOW:
                    ern, phi = _diagnose(nf, funnel, a, tau, y_ref, t_cur, x)
                    raise StepUnderflow(t_cur, ern, phi)
                if status == _kernel.INFEASIBLE:
                    # recompute in python for the violated stage index
                    phi = float(funnel.value(t_cur - tau))
                    ed = (x[:r * m].reshape(r, m)
                          - y_ref.derivatives(t_cur, r - 1))
                    try:
                        error_cascade(phi, ed, limit=lim)
                    except FunnelViolation as v:
                        raise FunnelViolation(v.stage, v.norm,
                                              t_cur) from None
                    ern, phi = _diagnose(nf, funnel, a, tau, y_ref, t_cur, x)
                    raise StepUnderflow(t_cur, ern, phi)
                have_k1 = 1  # buffer full: resume
        else:
            rhs = _python_rhs(nf, funnel, a, tau, y_ref, lim_sq)
            sink_t, sink_x = [], []
            try:
                seg_stats = dp45_segment(
                    rhs, lo, hi, x, rtol=opts.rtol, atol=opts.atol,
                    h0=opts.h0, h_min=opts.h_min, h_max=opts.h_max,
                    grid=grid, sink_t=sink_t, sink_x=sink_x)
            except Underflow as uf:
                xs = sink_x[-1] if sink_x else x
                ern, phi = _diagnose(nf, funnel, a, tau, y_ref, uf.t, xs)
                raise StepUnderflow(uf.t, ern, phi) from None
            for key in ("accepted", "rejected", "rhs_evals"):
                stats[key] += seg_stats[key]
            if sink_t:
                times.append(np.array(sink_t))
                states.append(np.array(sink_x))
                x = states[-1][-1].copy()
    return np.concatenate(times), np.vstack(states), stats


def _build_trace(nf, funnel, sched, y_ref, t, x, stats) -> Trace:
    """Vectorized post-pass: recompute controller signals at the samples."""
    r, m, kdim = nf.r, nf.m, nf.internal_dim
    rm = r * m
    n_samples = t.size
    a = np.fromiter((sched.availability(tv) for tv in t), dtype=np.int64,
                    count=n_samples)
    tau = np.fromiter((sched.reset_time(tv) for tv in t), dtype=float,
                      count=n_samples)
    avail = a == 1
    phi = np.zeros(n_samples)
    phi[avail] = funnel.value(t[avail] - tau[avail])
    psi = np.full(n_samples, -1.0)
    psi[avail] = 1.0 / phi[avail]

    chain = x[:, :rm].reshape(n_samples, r, m)
    eta = x[:, rm:]
    ref_d = y_ref.derivatives_grid(t, r - 1)          # (r, N, m)
    ed = chain.transpose(1, 0, 2) - ref_d             # (r, N, m)
    y = chain[:, 0, :]
    e = ed[0]
    e_norm = np.linalg.norm(e, axis=1)

    stage_norms = np.zeros((n_samples, r))
    u = np.zeros((n_samples, m))
    stage = phi[:, None] * ed[0]
    n_sq = np.zeros(n_samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(r):
            n_sq = np.einsum("ij,ij->i", stage, stage)
            stage_norms[:, i] = np.where(avail, np.sqrt(n_sq), 0.0)
            if i + 1 < r:
                stage = phi[:, None] * ed[i + 1] + stage / (1.0 - n_sq)[:, None]
        gain = np.where(avail & (n_sq < 1.0), 1.0 / (1.0 - n_sq), 0.0)
    u = (-float(nf.sign) * gain)[:, None] * stage
    u[~avail] = 0.0
    stage_norms[~avail] = 0.0
    u_norm = np.linalg.norm(u, axis=1)
    eta_norm = np.linalg.norm(eta, axis=1) if kdim else np.zeros(n_samples)

    return Trace(t=t, x=x, a=a, tau=tau, phi=phi, psi=psi, y=y, e=e,
                 e_norm=e_norm, stage_norms=stage_norms, u=u, u_norm=u_norm,
                 eta=eta, eta_norm=eta_norm, r=r, m=m, internal_dim=kdim,
                 stats=stats)


def integrate(nf, cc, design, sched: AvailabilitySchedule,
              y_ref: ReferenceSignal, ic=None, opts: SimOptions = None) -> Trace:
    """Closed-loop run of the plant under the synthesized feedback.

    ic overrides the realization's initial state as (chain0, eta0).  The
    start must satisfy the feasibility conditions checked at synthesis
    time: cascade stages strictly inside the unit ball at the initial
    funnel gain, internal state within its ceiling.
    """
    opts = opts or SimOptions()
    funnel = design.funnel
    r, m, kdim = nf.r, nf.m, nf.internal_dim
    if ic is None:
        chain0, eta0 = nf.chain0, nf.eta0
    else:
        chain0, eta0 = ic
    chain0 = np.asarray(chain0, dtype=float).reshape(r, m)
    eta0 = np.asarray(eta0, dtype=float).reshape(kdim)
    x0 = np.concatenate([chain0.reshape(-1), eta0])

    if sched.availability(0.0) == 1:
        try:
            error_cascade(funnel.phi00,
                          chain0 - y_ref.derivatives(0.0, r - 1))
        except FunnelViolation as v:
            raise InitialConditionViolated(
                f"cascade stage {v.stage}", v.norm, 1.0) from None
    if kdim:
        n0 = float(np.linalg.norm(eta0))
        if n0 > design.internal_cap:
            raise InitialConditionViolated("internal state", n0,
                                           design.internal_cap)

    segs = _segments(sched, sched.horizon)
    t, x, stats = _run_segments(nf, funnel, segs, y_ref, x0, opts)
    return _build_trace(nf, funnel, sched, y_ref, t, x, stats)


def coasting_run(nf, x0, eta0, t0: float, t1: float,
                 opts: SimOptions = None) -> Trace:
    """Open-loop segment with the input forced to zero.

    Used to exercise the inter-dropout growth bound: the chain and internal
    state evolve freely from (x0, eta0) on [t0, t1].
    """
    if not t1 > t0:
        raise ValueError("coasting interval must have t1 > t0")
    opts = opts or SimOptions(engine="python")
    r, m, kdim = nf.r, nf.m, nf.internal_dim
    chain0 = np.asarray(x0, dtype=float).reshape(r * m)
    eta0 = np.asarray(eta0, dtype=float).reshape(kdim)
    state0 = np.concatenate([chain0, eta0])
    # a single unavailable segment forces u = 0; funnel values never used
    segs = [(t0, t1, 0, 0.0)]
    funnel = FunnelSpec(a=1.0, b=1.0, c=1.0, d=1.0)
    y_ref = _zero_reference(m)
    t, x, stats = _run_segments(nf, funnel, segs, y_ref, state0, opts)
    n_samples = t.size
    rm = r * m
    chain = x[:, :rm].reshape(n_samples, r, m)
    eta = x[:, rm:]
    y = chain[:, 0, :]
    zeros_m = np.zeros((n_samples, m))
    return Trace(
        t=t, x=x, a=np.zeros(n_samples, dtype=np.int64),
        tau=t.copy(), phi=np.zeros(n_samples),
        psi=np.full(n_samples, -1.0), y=y, e=y.copy(),
        e_norm=np.linalg.norm(y, axis=1),
        stage_norms=np.zeros((n_samples, r)), u=zeros_m,
        u_norm=np.zeros(n_samples), eta=eta,
        eta_norm=(np.linalg.norm(eta, axis=1) if kdim
                  else np.zeros(n_samples)),
        r=r, m=m, internal_dim=kdim, stats=stats)


def _csv_header(m: int, r: int, kdim: int) -> list:
    header = ["t", "a", "tau", "phi", "psi"]
    header += [f"y_{j + 1}" for j in range(m)]
    header += ["e_norm"]
    header += [f"e{i}_norm" for i in range(1, r + 1)]
    header += [f"u_{j + 1}" for j in range(m)]
    header += ["u_norm"]
    header += [f"eta_{i + 1}" for i in range(kdim)]
    header += ["eta_norm"]
    return header


def write_csv(trace: Trace, path) -> None:
    """Trace to CSV: 12 significant digits, empty funnel radius on dropouts."""
    m, r, kdim = trace.m, trace.r, trace.internal_dim
    header = _csv_header(m, r, kdim)

    def fmt(v):
        return f"{v:.11e}"

    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(trace.samples):
            row = [fmt(trace.t[i]), str(int(trace.a[i])), fmt(trace.tau[i]),
                   fmt(trace.phi[i]),
                   fmt(trace.psi[i]) if trace.a[i] == 1 else ""]
            row += [fmt(v) for v in trace.y[i]]
            row.append(fmt(trace.e_norm[i]))
            row += [fmt(v) for v in trace.stage_norms[i]]
            row += [fmt(v) for v in trace.u[i]]
            row.append(fmt(trace.u_norm[i]))
            row += [fmt(v) for v in trace.eta[i]]
            row.append(fmt(trace.eta_norm[i]))
            fh.write(",".join(row) + "\n")


def read_csv(path) -> Trace:
    """Rebuild a trace from its CSV form.

    The chain derivatives and raw error vectors are not serialized, so the
    corresponding trace fields come back as NaN; every check that operates
    on files uses only the serialized columns.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty trace file")
    names = lines[0].split(",")
    m = sum(1 for n in names if re.fullmatch(r"y_\d+", n))
    r = sum(1 for n in names if re.fullmatch(r"e\d+_norm", n))
    kdim = sum(1 for n in names if re.fullmatch(r"eta_\d+", n))
    if m < 1 or r < 1 or names != _csv_header(m, r, kdim):
        raise ConfigError(f"{path}: unrecognized trace header")

    ncol = len(names)
    n = len(lines) - 1
    data = np.empty((n, ncol))
    a = np.empty(n, dtype=np.int8)
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != ncol:
            raise ConfigError(f"{path}: row {i + 1} has {len(parts)} fields, "
                              f"expected {ncol}")
        try:
            a[i] = int(parts[1])
            # empty funnel radius marks a dropout sample
            parts[4] = parts[4] or "-1.0"
            data[i] = [float(v) for v in parts]
        except ValueError:
            raise ConfigError(f"{path}: row {i + 1} is malformed") from None
    if not np.all((a == 0) | (a == 1)):
        raise ConfigError(f"{path}: availability column must be 0/1")

    c = 5
    y = data[:, c:c + m]; c += m
    e_norm = data[:, c]; c += 1
    stage_norms = data[:, c:c + r]; c += r
    u = data[:, c:c + m]; c += m
    u_norm = data[:, c]; c += 1
    eta = data[:, c:c + kdim]; c += kdim
    eta_norm = data[:, c]
    return Trace(
        t=data[:, 0], x=np.full((n, r * m + kdim), np.nan), a=a,
        tau=data[:, 2], phi=data[:, 3], psi=data[:, 4], y=y,
        e=np.full((n, m), np.nan), e_norm=e_norm, stage_norms=stage_norms,
        u=u, u_norm=u_norm, eta=eta, eta_norm=eta_norm,
        r=r, m=m, internal_dim=kdim, stats={})
