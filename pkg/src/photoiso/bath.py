"""Phonon baths and the Redfield / Bloch-secular dissipators.

Two harmonic baths couple to the excited diabatic state through
``|1><1| x`` (tuning mode) and ``|1><1| (1 - cos phi)`` (torsion), each with an
Ohmic spectral density ``J(w) = eta w exp(-w/w_c)``.

Rates follow one sign convention throughout: :func:`rate_kernel` takes the
energy *released* by the system, so ``gamma(w > 0)`` is emission
``J(w) [n(w) + 1]`` and ``gamma(w < 0)`` is absorption ``J(|w|) n(|w|)``.
With ``Lambda_ab = S_ab gamma(e_b - e_a)`` the Redfield dissipator is::

    D(rho) = -sum_b [S_b, Lambda_b rho - rho Lambda_b^T]

and the population transfer rate ``i -> j`` is ``2 sum_b S_ij^2 gamma_b(e_i - e_j)``.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import Eigensystem

logger = logging.getLogger(__name__)

K_BOLTZMANN_EV = 8.617333262e-5  # eV / K

CHANNELS = ("tuning_x", "torsion_phi")


@dataclass(frozen=True)
class BathSpec:
    channel: str
    eta: float
    omega_c: float
    temperature: float = 0.0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown bath channel {self.channel!r}; expected one of {CHANNELS}")
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if not self.omega_c > 0:
            raise ValueError("omega_c must be > 0")
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")

    @property
    def beta(self) -> float:
        """Inverse temperature in 1/eV (``inf`` at 0 K)."""
        if self.temperature == 0:
            return np.inf
        return 1.0 / (K_BOLTZMANN_EV * self.temperature)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def spectral_density(omega, bath: BathSpec):
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("spectral density is defined for omega >= 0")
    return bath.eta * w * np.exp(-w / bath.omega_c)


def occupation(omega, temperature: float):
    """Bose-Einstein occupation ``1/(exp(w/kT) - 1)``; exactly 0 at 0 K."""
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ValueError("occupation requires omega > 0")
    if temperature == 0:
        return np.zeros_like(w)
    with np.errstate(over="ignore"):
        return 1.0 / np.expm1(w / (K_BOLTZMANN_EV * temperature))


def rate_kernel(omega, bath: BathSpec):
    """Transition kernel for a release of energy ``omega`` into the bath.

    Satisfies ``gamma(w) = exp(beta w) gamma(-w)``; the ``w -> 0`` limit is
    ``eta kT`` (zero at 0 K).
    """
    w = np.asarray(omega, dtype=float)
    cut = bath.eta * np.exp(-np.abs(w) / bath.omega_c)
    if bath.temperature == 0:
        return np.where(w > 0, cut * w, 0.0)
    beta = bath.beta
    x = beta * w
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        # w / (1 - exp(-beta w)) covers both signs
        big = w / (-np.expm1(-x))
    small = (1.0 + 0.5 * x) / beta
    return cut * np.where(np.abs(x) > 1e-8, np.nan_to_num(big, nan=0.0, posinf=0.0, neginf=0.0), small)


# ---------------------------------------------------------------------------
# system operators in the eigenbasis


def coupling_matrices(eigsys: Eigensystem) -> dict[str, np.ndarray]:
    """Eigenbasis matrices of ``|1><1| x`` and ``|1><1| (1 - cos phi)``."""
    C = eigsys.coefficient_tensor()
    c1 = C[1]  # (n_rotor, n_ho, N)
    n = c1.shape[-1]

    nv = c1.shape[1]
    xs = np.sqrt(np.arange(1, nv) / 2.0)[None, :, None]
    xc = np.zeros_like(c1)
    xc[:, :-1] += xs * c1[:, 1:]
    xc[:, 1:] += xs * c1[:, :-1]

    wc = c1.copy()
    wc[1:] -= 0.5 * c1[:-1]
    wc[:-1] -= 0.5 * c1[1:]

    flat = c1.reshape(-1, n)
    out = {}
    for name, op in (("tuning_x", xc), ("torsion_phi", wc)):
        s = flat.T @ op.reshape(-1, n)
        out[name] = 0.5 * (s + s.T)
    return out


# ---------------------------------------------------------------------------
# dissipator


@dataclass(frozen=True)
class DissipatorSet:
    """Eigenbasis Redfield data for a fixed set of baths.

    ``lambdas[b][a, c] = S_b[a, c] * gamma_b(e_c - e_a)``.  ``rates`` is the
    secular population generator ``K`` (``dp/dt = K p``) and ``dephasing`` the
    secular decay rate of each coherence.
    """

    energies: np.ndarray
    baths: tuple[BathSpec, ...]
    couplings: tuple[np.ndarray, ...]
    lambdas: tuple[np.ndarray, ...]
    rates: np.ndarray
    dephasing: np.ndarray
    degeneracy_window: float = 1e-6
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.energies, self.rates, self.dephasing, *self.couplings, *self.lambdas):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.energies)

    @property
    def frequencies(self) -> np.ndarray:
        """``w_ij = e_i - e_j``."""
        return self.energies[:, None] - self.energies[None, :]

    def degenerate_pairs(self) -> list[tuple[int, int]]:
        """Pairs ``i < j`` closer in energy than the degeneracy window."""
        e = self.energies
        order = np.argsort(e)
        pairs = []
        for a in range(len(order)):
            for b in range(a + 1, len(order)):
                i, j = order[a], order[b]
                if e[j] - e[i] >= self.degeneracy_window:
                    break
                pairs.append((min(i, j), max(i, j)))
        return pairs

    def restrict(self, index) -> "DissipatorSet":
        index = np.asarray(index)
        sub = [(S[np.ix_(index, index)]) for S in self.couplings]
        return _assemble(self.energies[index], self.baths, sub, self.degeneracy_window)


def _assemble(energies, baths, couplings, window) -> DissipatorSet:
    e = np.asarray(energies, dtype=float)
    n = len(e)
    release = e[None, :] - e[:, None]  # [a, c] -> e_c - e_a
    lambdas = []
    rates = np.zeros((n, n))
    pure = np.zeros((n, n))
    for bath, S in zip(baths, couplings):
        gam = rate_kernel(release, bath)
        lam = S * gam
        lambdas.append(np.ascontiguousarray(lam))
        rates += 2.0 * S * lam
        g0 = float(rate_kernel(0.0, bath))
        d = np.diag(S)
        pure += g0 * (d[:, None] - d[None, :]) ** 2
    np.fill_diagonal(rates, 0.0)
    rates[np.diag_indices(n)] = -rates.sum(axis=0)
    out = -np.diag(rates)
    dephasing = 0.5 * (out[:, None] + out[None, :]) + pure
    np.fill_diagonal(dephasing, 0.0)
    return DissipatorSet(
        energies=e.copy(),
        baths=tuple(baths),
        couplings=tuple(np.ascontiguousarray(S) for S in couplings),
        lambdas=tuple(lambdas),
        rates=rates,
        dephasing=dephasing,
        degeneracy_window=window,
    )


def build_dissipator(
    eigsys: Eigensystem,
    baths,
    degeneracy_window: float = 1e-6,
) -> DissipatorSet:
    """Assemble the dissipator for ``eigsys`` coupled to ``baths``.

    Each channel may appear at most once; channels without a bath are simply
    not coupled.
    """
    baths = tuple(baths)
    if not baths:
        raise ValueError("at least one bath is required")
    seen = [b.channel for b in baths]
    if len(set(seen)) != len(seen):
        raise ValueError(f"duplicate bath channels: {seen}")
    S = coupling_matrices(eigsys)
    diss = _assemble(eigsys.energies, baths, [S[b.channel] for b in baths], degeneracy_window)
    npairs = len(diss.degenerate_pairs())
    if npairs:
        logger.info("%d quasi-degenerate pairs kept in the secular generator", npairs)
    return diss


# ---------------------------------------------------------------------------
# generators


class RedfieldKernel:
    """Matrix-product evaluation of the nonsecular Redfield generator.

    All baths are stacked so that one evaluation costs two real matrix
    products of shape ``(nb N, N) x (N, 2N)`` and ``(N, nb N) x (nb N, 2N)``;
    the complex density matrix is handled as an interleaved real view.
    """

    def __init__(self, diss: DissipatorSet):
        n = diss.size
        self.n = n
        self.nb = len(diss.couplings)
        self.lam = np.ascontiguousarray(np.vstack(diss.lambdas))
        self.s = np.ascontiguousarray(np.hstack(diss.couplings))
        self.phase = -1j * diss.frequencies

    def dissipative(self, rho: np.ndarray) -> np.ndarray:
        n = self.n
        rho = np.ascontiguousarray(rho, dtype=np.complex128)
        a = (self.lam @ rho.view(np.float64)).view(np.complex128)  # stacked Lambda_b rho
        a = a.reshape(self.nb, n, n)
        x = a - a.conj().transpose(0, 2, 1)
        x = np.ascontiguousarray(x.reshape(self.nb * n, n))
        y = (self.s @ x.view(np.float64)).view(np.complex128)
        return -(y + y.conj().T)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return self.phase * rho + self.dissipative(rho)

    def scaled(self, a: float, c: float) -> "RedfieldKernel":
        """Kernel of ``(L - c) / a``."""
        k = object.__new__(RedfieldKernel)
        k.n, k.nb, k.s = self.n, self.nb, self.s
        k.lam = self.lam / a
        k.phase = (self.phase - c) / a
        return k


def redfield_apply(rho: np.ndarray, diss: DissipatorSet, hermitian_tol: float = 1e-10) -> np.ndarray:
    """``d rho / dt`` under the full (nonsecular) Redfield equation."""
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (diss.size, diss.size):
        raise ValueError(f"rho has shape {rho.shape}, expected {(diss.size, diss.size)}")
    if np.max(np.abs(rho - rho.conj().T), initial=0.0) > hermitian_tol:
        raise ValueError("density matrix is not Hermitian")
    return RedfieldKernel(diss)(rho)


def redfield_element(diss: DissipatorSet, i: int, j: int, k: int, l: int) -> float:
    """Single dissipative tensor element ``R_{ij,kl}`` (coherent part excluded)."""
    val = 0.0
    for S, L in zip(diss.couplings, diss.lambdas):
        if j == l:
            val -= S[i, :] @ L[:, k]
        val += L[i, k] * S[l, j] + S[i, k] * L[j, l]
        if i == k:
            val -= L[:, l] @ S[:, j]
    return float(val)


def secular_reduce(diss: DissipatorSet) -> tuple[np.ndarray, np.ndarray]:
    """Population rate matrix ``K`` and coherence dephasing rates."""
    return diss.rates, diss.dephasing


def secular_generator(diss: DissipatorSet):
    """Generator on populations plus quasi-degenerate coherences.

    Returns ``(pairs, G)`` where ``pairs`` lists the ``(i, j)`` density-matrix
    entries carried (all ``(i, i)`` first, in order) and ``G`` acts on that
    vector.  Without quasi-degeneracies ``G`` is exactly ``K``.
    """
    n = diss.size
    extra = []
    for i, j in diss.degenerate_pairs():
        extra += [(i, j), (j, i)]
    pairs = [(i, i) for i in range(n)] + extra
    if not extra:
        return pairs, diss.rates.copy()
    m = len(pairs)
    G = np.zeros((m, m), dtype=np.complex128)
    G[:n, :n] = diss.rates
    w = diss.frequencies
    for a, (i, j) in enumerate(pairs):
        for c, (k, l) in enumerate(pairs):
            if a < n and c < n:
                continue
            G[a, c] = redfield_element(diss, i, j, k, l)
        if a >= n:
            G[a, a] -= 1j * w[i, j]
    return pairs, G


def redfield_superoperator(diss: DissipatorSet) -> np.ndarray:
    """Dense ``N^2 x N^2`` Liouvillian (row-major vec); small systems only."""
    n = diss.size
    if n > 60:
        raise ValueError("dense superoperator limited to N <= 60")
    kern = RedfieldKernel(diss)
    L = np.zeros((n * n, n * n), dtype=np.complex128)
    for c in range(n * n):
        e = np.zeros(n * n, dtype=np.complex128)
        e[c] = 1.0
        L[:, c] = (kern.phase * e.reshape(n, n)).ravel()
        # the product form assumes Hermitian input; use linearity on E + E^T and i(E - E^T)
        E = e.reshape(n, n)
        h1 = 0.5 * (E + E.T)
        h2 = -0.5j * (E - E.T)
        L[:, c] += (kern.dissipative(h1) + 1j * kern.dissipative(h2)).ravel()
    return L
