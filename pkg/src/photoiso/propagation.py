"""Density-matrix propagation from Franck-Condon initial conditions.

Internal time unit is hbar/eV (about 0.658 fs); public times are in ps.

Three modes:

``secular``
    populations only, ``p(t) = exp(K t) p0`` by spectral decomposition of the
    secular generator (expm fallback when the eigenvectors are ill-conditioned).
``nonsecular``
    full Redfield equation.  Two integrators: ``chebyshev`` (default) expands
    ``exp(L t)`` in Chebyshev polynomials and is exact to round-off;
    ``dop853`` is scipy's adaptive embedded Runge-Kutta 8(5,3).
``hybrid``
    nonsecular up to ``t_switch``, then secular from the diagonal.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special
from scipy.integrate import solve_ivp

from .bath import DissipatorSet, RedfieldKernel, secular_generator
from .model import Eigensystem, FranckCondonState, rotor_trans_indicator

logger = logging.getLogger(__name__)

HBAR_EV_FS = 0.6582119569  # hbar in eV * fs
PS = 1000.0 / HBAR_EV_FS  # one picosecond in hbar/eV

PROJECTOR_NAMES = ("cis_0", "cis_1", "trans_0", "trans_1")


def ps_to_internal(t_ps):
    return np.asarray(t_ps, dtype=float) * PS


def internal_to_ps(t):
    return np.asarray(t, dtype=float) / PS


# ---------------------------------------------------------------------------
# states and observables


@dataclass
class DensityState:
    """Density matrix (``full``) or population vector (``populations_only``)."""

    mode: str
    data: np.ndarray
    time: float = 0.0  # ps

    def __post_init__(self):
        if self.mode not in ("full", "populations_only"):
            raise ValueError(f"unknown density mode {self.mode!r}")

    @property
    def populations(self) -> np.ndarray:
        if self.mode == "full":
            return np.real(np.diag(self.data)).copy()
        return np.asarray(self.data, dtype=float)

    @property
    def trace(self) -> float:
        return float(np.sum(self.populations))

    @property
    def purity(self) -> float:
        if self.mode == "full":
            return float(np.real(np.vdot(self.data, self.data)))
        return float(np.sum(self.data**2))


def initial_state(kind: str, fc: FranckCondonState) -> DensityState:
    """``fc_pure`` is ``|c><c|``; ``fc_mixed`` keeps only its diagonal."""
    c = np.asarray(fc.amplitudes, dtype=np.complex128)
    if kind == "fc_pure":
        return DensityState("full", np.outer(c, c.conj()))
    if kind == "fc_mixed":
        return DensityState("full", np.diag(np.abs(c) ** 2).astype(np.complex128))
    raise ValueError(f"unknown initial state kind {kind!r}")


def trans_projectors(eigsys: Eigensystem) -> dict[str, np.ndarray]:
    """Eigenbasis matrices of ``|n><n| x Theta_{cis,trans}`` for ``n = 0, 1``.

    ``Theta_trans`` is the exact plane-wave matrix of the indicator of
    ``[pi/2, 3pi/2)`` and ``Theta_cis = 1 - Theta_trans``, so the four
    matrices sum to the eigenbasis overlap (the identity).
    """
    C = eigsys.coefficient_tensor()
    theta = rotor_trans_indicator(eigsys.basis.n_rotor_max)
    nr, nv, n = C.shape[1:]
    out = {}
    for el in (0, 1):
        flat = C[el].reshape(nr, nv * n)
        tc = (theta @ flat).reshape(nr * nv, n)
        cf = C[el].reshape(nr * nv, n)
        tr = cf.T @ tc
        tr = 0.5 * (tr + tr.T)
        full = cf.T @ cf
        out[f"trans_{el}"] = tr
        out[f"cis_{el}"] = 0.5 * (full + full.T) - tr
    return out


# ---------------------------------------------------------------------------
# plan and record


@dataclass(frozen=True)
class PropagationPlan:
    mode: str = "hybrid"
    t_final: float = 1.0e4  # ps (10 ns)
    t_switch: float = 10.0  # ps
    t_min: float = 1.0e-3  # first log-grid point, ps
    points_per_decade: int = 64
    extra_times: tuple[float, ...] = ()
    integrator: str = "chebyshev"
    rtol: float = 1e-8
    atol: float = 1e-10
    positivity_tol: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("secular", "nonsecular", "hybrid"):
            raise ValueError(f"unknown propagation mode {self.mode!r}")
        if self.integrator not in ("chebyshev", "dop853"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not self.t_final > 0:
            raise ValueError("t_final must be > 0")
        if self.t_switch < 0:
            raise ValueError("t_switch must be >= 0")

    def grid(self) -> np.ndarray:
        """Checkpoint times in ps (starts at 0, ends at ``t_final``)."""
        lo, hi = math.log10(self.t_min), math.log10(self.t_final)
        n = max(2, int(round((hi - lo) * self.points_per_decade)) + 1)
        t = np.logspace(lo, hi, n) if hi > lo else np.array([self.t_final])
        t = np.concatenate([[0.0], t, np.asarray(self.extra_times, float), [self.t_final]])
        if self.mode == "hybrid" and 0 < self.t_switch < self.t_final:
            t = np.append(t, self.t_switch)
        t = t[(t >= 0) & (t <= self.t_final)]
        return np.unique(t)


@dataclass
class TrajectoryRecord:
    times: np.ndarray  # ps
    qy: np.ndarray
    pop_cis_0: np.ndarray
    pop_cis_1: np.ndarray
    pop_trans_0: np.ndarray
    pop_trans_1: np.ndarray
    populations: np.ndarray  # (n_times, n_states)
    energies: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    final_state: DensityState | None = None

    @property
    def total(self) -> np.ndarray:
        return self.pop_cis_0 + self.pop_cis_1 + self.pop_trans_0 + self.pop_trans_1

    @property
    def mean_energy(self) -> np.ndarray:
        return self.populations @ self.energies

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "time_ps": self.times,
            "qy": self.qy,
            "pop_cis_0": self.pop_cis_0,
            "pop_cis_1": self.pop_cis_1,
            "pop_trans_0": self.pop_trans_0,
            "pop_trans_1": self.pop_trans_1,
        }


class _Recorder:
    """Collects observables at checkpoint times."""

    def __init__(self, times, projectors, n):
        self.times = np.asarray(times)
        self.proj = {k: np.asarray(projectors[k]) for k in PROJECTOR_NAMES}
        self.pdiag = np.array([np.diag(self.proj[k]) for k in PROJECTOR_NAMES])
        self.obs = np.full((len(times), len(PROJECTOR_NAMES)), np.nan)
        self.pops = np.full((len(times), n), np.nan)

    def full(self, idx, rho):
        re = rho.real
        self.obs[idx] = [np.sum(self.proj[k] * re) for k in PROJECTOR_NAMES]
        self.pops[idx] = np.diag(re)

    def diagonal(self, idx, p):
        self.obs[idx] = self.pdiag @ p
        self.pops[idx] = p


# ---------------------------------------------------------------------------
# secular


class SecularPropagator:
    """``exp(G t) v0`` for the secular generator ``G`` at arbitrary times."""

    def __init__(self, diss: DissipatorSet, cond_limit: float = 1e10):
        self.pairs, self.G = secular_generator(diss)
        self.n = diss.size
        self.method = "eig"
        try:
            w, V = scipy.linalg.eig(self.G)
            cond = np.linalg.cond(V)
        except (np.linalg.LinAlgError, ValueError):
            cond = np.inf
        if not np.isfinite(cond) or cond > cond_limit:
            logger.info("secular eigenvectors ill-conditioned (cond=%.2e); using expm stepping", cond)
            self.method = "expm"
        else:
            self.w, self.V = w, V
            self.Vinv = np.linalg.inv(V)

    def vector(self, rho: DensityState) -> np.ndarray:
        if rho.mode == "populations_only":
            v = np.zeros(len(self.pairs), dtype=np.complex128)
            v[: self.n] = rho.data
            return v
        return np.array([rho.data[i, j] for i, j in self.pairs], dtype=np.complex128)

    def evolve(self, v0: np.ndarray, dts: np.ndarray) -> np.ndarray:
        """Rows are the state at each (nondecreasing) offset in ``dts``."""
        dts = np.asarray(dts, dtype=float)
        if self.method == "eig":
            c = self.Vinv @ v0
            out = (np.exp(np.outer(dts, self.w)) * c) @ self.V.T
            # eig route must conserve probability; otherwise fall through
            drift = np.max(np.abs(out[:, : self.n].sum(axis=1) - v0[: self.n].sum()), initial=0.0)
            if drift < 1e-11:
                return out
            logger.info("eig route drifted by %.2e; using expm stepping", drift)
            self.method = "expm"
        out = np.empty((len(dts), len(v0)), dtype=np.complex128)
        v, t = v0.copy(), 0.0
        for i, dt in enumerate(dts):
            if dt > t:
                v = scipy.linalg.expm(self.G * (dt - t)) @ v
                t = dt
            out[i] = v
        return out


def _secular_segment(diss, rho, times_ps, t0_ps, rec, idx):
    prop = SecularPropagator(diss)
    v0 = prop.vector(rho)
    states = prop.evolve(v0, ps_to_internal(np.asarray(times_ps) - t0_ps))
    n = diss.size
    for k, s in zip(idx, states):
        rec.diagonal(k, np.real(s[:n]))
    last = states[-1] if len(states) else v0
    return np.real(last[:n]).copy(), prop.method


# ---------------------------------------------------------------------------
# nonsecular integrators


class ChebyshevPropagator:
    """Chebyshev expansion of ``exp(L t)`` for the Redfield generator.

    With ``V = (L - c)/a`` the polynomials ``psi_{k+1} = 2 V psi_k + psi_{k-1}``
    stay Hermitian and ``exp(L t) rho = exp(c t) sum_k eps_k J_k(a t) psi_k``
    (``eps_0 = 1``, ``eps_k = 2``).  ``a`` bounds the coherent frequencies and
    ``c`` centres the damping; chunk lengths are chosen so that the
    polynomial growth driven by the damping stays far below ``1/eps``.
    """

    def __init__(self, diss: DissipatorSet, margin: float = 0.1, growth_limit: float = 24.0):
        e = diss.energies
        half = 0.5 * (e.max() - e.min()) if len(e) > 1 else 0.0
        out = -np.diag(diss.rates)
        gamma = float(out.max() + diss.dephasing.max()) if len(e) > 1 else 0.0
        # half-width of the coherent spectrum of [E, .] is (e_max - e_min)
        self.a = max((1.0 + margin) * 2.0 * half, 1e-6) + gamma
        self.c = -0.5 * gamma
        self.gamma = gamma
        sin0 = math.sqrt(1.0 - (1.0 / (1.0 + margin)) ** 2)
        eta = (0.5 * gamma + 1e-12) / (self.a * sin0)
        self.max_terms = int(max(60, min(2000, growth_limit / eta)))
        self.kernel = RedfieldKernel(diss).scaled(self.a, self.c)
        self.nfev = 0
        self.max_growth = 1.0

    def _apply(self, psi):
        self.nfev += 1
        return self.kernel(psi)

    def _order(self, z: float) -> int:
        """Number of terms for argument ``a t = z`` (Bessel tail below 1e-17)."""
        k = int(z + 10 * max(z, 1.0) ** (1 / 3) + 20)
        ks = np.arange(k, k + 200)
        j = np.abs(scipy.special.jv(ks, z))
        below = np.flatnonzero(j < 1e-17)
        return int(ks[below[0]]) if len(below) else k + 200

    def chunk_length(self) -> float:
        # largest z whose order stays within max_terms
        z = max(1.0, self.max_terms - 10 * self.max_terms ** (1 / 3) - 25)
        while z > 1.0 and self._order(z) > self.max_terms:
            z *= 0.9
        return z / self.a

    def advance(self, rho, offsets, projectors=None):
        """Evolve ``rho`` to each offset (internal units, ascending, last = chunk end).

        Returns ``(rho_end, obs, pops)`` with observables (trace against each
        projector) and diagonals at every offset.
        """
        offsets = np.asarray(offsets, dtype=float)
        z = self.a * offsets
        K = self._order(z.max())
        coef = scipy.special.jv(np.arange(K + 1)[:, None], z[None, :])  # (K+1, n_off)
        coef[1:] *= 2.0
        damp = np.exp(self.c * offsets)
        proj = projectors or []
        n = rho.shape[0]
        pstack = np.array([np.asarray(P, dtype=float).ravel() for P in proj]).reshape(len(proj), n * n)
        tr = np.zeros((K + 1, len(proj)))
        dg = np.zeros((K + 1, n))
        end = np.zeros_like(rho)

        norm0 = np.linalg.norm(rho)
        prev, cur = None, rho
        for k in range(K + 1):
            if k == 1:
                prev, cur = cur, self._apply(cur)
            elif k > 1:
                nxt = self._apply(cur)
                nxt *= 2.0
                nxt += prev
                prev, cur = cur, nxt
            re = cur.real
            if len(proj):
                tr[k] = pstack @ re.ravel()
            dg[k] = np.diagonal(re)
            end += coef[k, -1] * cur
            if k % 8 == 0 or k == K:
                g = np.linalg.norm(cur) / norm0
                if g > self.max_growth:
                    self.max_growth = g
        if self.max_growth > 1e8:
            raise FloatingPointError(f"Chebyshev recurrence grew by {self.max_growth:.2e}")
        end *= damp[-1]
        obs = (coef.T @ tr) * damp[:, None]
        pops = (coef.T @ dg) * damp[:, None]
        end = 0.5 * (end + end.conj().T)
        return end, obs, pops


def _positivity(rho, tol, t_ps, diag):
    lo = float(np.linalg.eigvalsh(rho)[0])
    diag["min_eigenvalue"] = min(diag.get("min_eigenvalue", 1.0), lo)
    if lo < -tol:
        seen = diag.setdefault("positivity_violations", [])
        seen.append((float(t_ps), lo))
        # Redfield dynamics is not completely positive; report the first hit loudly
        log = logger.warning if len(seen) == 1 else logger.debug
        log("density matrix eigenvalue %.3e at t = %.4g ps", lo, t_ps)


def _nonsecular_segment(diss, rho0, times_ps, rec, idx, plan, diag):
    """Integrate the full Redfield equation through ``times_ps`` (ascending, from 0)."""
    rho = np.array(rho0, dtype=np.complex128)
    names = list(PROJECTOR_NAMES)
    proj = [rec.proj[k] for k in names]
    t_int = ps_to_internal(times_ps)
    t_now = 0.0

    if plan.integrator == "chebyshev":
        prop = ChebyshevPropagator(diss)
        span = prop.chunk_length()
        pending = list(zip(idx, t_int))
        if pending and pending[0][1] == 0.0:
            rec.full(pending[0][0], rho)
            pending = pending[1:]
        while pending:
            # group checkpoints into one chunk of length <= span
            group = [pending[0]]
            for item in pending[1:]:
                if item[1] - t_now <= span:
                    group.append(item)
                else:
                    break
            target = group[-1][1]
            if target - t_now > span:
                # checkpoint further than one chunk: step to it in pieces
                step_to = t_now + span
                rho, _, _ = prop.advance(rho, [span], [])
                t_now = step_to
                continue
            offs = np.array([g[1] - t_now for g in group])
            rho, obs, pops = prop.advance(rho, offs, proj)
            for (k, _), o, p in zip(group, obs, pops):
                rec.obs[k] = o
                rec.pops[k] = p
            t_now = target
            pending = pending[len(group):]
            _positivity(rho, plan.positivity_tol, internal_to_ps(t_now), diag)
        diag["nfev"] = diag.get("nfev", 0) + prop.nfev
        diag["chebyshev_max_growth"] = prop.max_growth
        diag["chebyshev_a"] = prop.a
        return rho

    kern = RedfieldKernel(diss)
    n = diss.size
    nfev = [0]

    def f(_t, y):
        nfev[0] += 1
        return kern(y.reshape(n, n)).ravel()

    block = 16
    for s in range(0, len(t_int), block):
        ts = t_int[s : s + block]
        ids = idx[s : s + block]
        if ts[-1] > t_now:
            sol = solve_ivp(
                f, (t_now, ts[-1]), rho.ravel(), method="DOP853", t_eval=ts[ts >= t_now],
                rtol=plan.rtol, atol=plan.atol,
            )
            if not sol.success:
                raise RuntimeError(f"integrator failed: {sol.message}")
            ys = sol.y.T
            off = len(ts) - len(ys)
        else:
            ys, off = [], len(ts)
        for j, k in enumerate(ids):
            if j < off:
                rec.full(k, rho)
            else:
                r = ys[j - off].reshape(n, n)
                rec.full(k, r)
        if len(ys):
            rho = ys[-1].reshape(n, n).copy()
            t_now = ts[-1]
        _positivity(rho, plan.positivity_tol, internal_to_ps(t_now), diag)
    diag["nfev"] = diag.get("nfev", 0) + nfev[0]
    return rho


# ---------------------------------------------------------------------------
# driver


def propagate(
    rho0: DensityState,
    diss: DissipatorSet,
    projectors: dict[str, np.ndarray],
    plan: PropagationPlan | None = None,
) -> TrajectoryRecord:
    """Propagate ``rho0`` on the checkpoint grid of ``plan``."""
    plan = plan or PropagationPlan()
    times = plan.grid()
    n = diss.size
    if rho0.data.shape[0] != n:
        raise ValueError("initial state and dissipator sizes differ")
    rec = _Recorder(times, projectors, n)
    diag: dict = {"mode": plan.mode, "integrator": plan.integrator}
    t_start = _time.perf_counter()

    if plan.mode == "secular":
        pop_rho = rho0
        _, method = _secular_segment(diss, pop_rho, times, 0.0, rec, np.arange(len(times)))
        diag["secular_method"] = method
        final = DensityState("populations_only", rec.pops[-1].copy(), float(times[-1]))
    else:
        if rho0.mode != "full":
            raise ValueError("nonsecular propagation needs a full density matrix")
        switch = plan.t_final if plan.mode == "nonsecular" else min(plan.t_switch, plan.t_final)
        early = np.flatnonzero(times <= switch)
        late = np.flatnonzero(times > switch)
        rho = _nonsecular_segment(diss, rho0.data, times[early], rec, early, plan, diag)
        diag["hermiticity_error"] = float(np.max(np.abs(rho - rho.conj().T)))
        if len(late):
            off = rho - np.diag(np.diag(rho))
            diag["coherence_at_switch"] = float(np.max(np.abs(off), initial=0.0))
            state = DensityState("full", rho, float(switch))
            _, method = _secular_segment(diss, state, times[late], switch, rec, late)
            diag["secular_method"] = method
            final = DensityState("populations_only", rec.pops[-1].copy(), float(times[-1]))
        else:
            final = DensityState("full", rho, float(times[-1]))

    diag["wall_time_s"] = _time.perf_counter() - t_start
    obs = rec.obs
    traj = TrajectoryRecord(
        times=times,
        qy=obs[:, 3].copy(),
        pop_cis_0=obs[:, 0].copy(),
        pop_cis_1=obs[:, 1].copy(),
        pop_trans_0=obs[:, 2].copy(),
        pop_trans_1=obs[:, 3].copy(),
        populations=rec.pops,
        energies=np.asarray(diss.energies).copy(),
        diagnostics=diag,
        final_state=final,
    )
    diag["max_trace_error"] = float(np.max(np.abs(traj.populations.sum(axis=1) - 1.0)))
    if diag["max_trace_error"] > 1e-9:
        logger.warning("trace drifted by %.2e", diag["max_trace_error"])
    hits = diag.get("positivity_violations", [])
    if len(hits) > 1:
        logger.warning("%d checkpoints with negative eigenvalues (lowest %.3e)", len(hits), diag["min_eigenvalue"])
    return traj


def quantum_yield_at(traj: TrajectoryRecord, t_record: float) -> float:
    """QY at ``t_record`` ps, interpolated linearly in log-time between checkpoints."""
    t = traj.times
    if t_record < t[0] or t_record > t[-1] * (1 + 1e-12):
        raise ValueError(f"t_record={t_record} ps outside the trajectory horizon [{t[0]}, {t[-1]}]")
    hit = np.flatnonzero(np.isclose(t, t_record, rtol=1e-12, atol=0.0))
    if len(hit):
        return float(traj.qy[hit[0]])
    j = int(np.searchsorted(t, t_record))
    t0, t1 = t[j - 1], t[j]
    q0, q1 = traj.qy[j - 1], traj.qy[j]
    if t0 <= 0:
        w = (t_record - t0) / (t1 - t0)
    else:
        w = math.log(t_record / t0) / math.log(t1 / t0)
    return float(q0 + w * (q1 - q0))
