"""Independent reference computations for the derived constants frozen in the tests.

Nothing here imports the package.  Matrix elements come from numerical
quadrature on a phi grid and Gauss-Hermite nodes in x, the spectrum from a
Fourier-grid (collocation) Hamiltonian in phi, and the dissipator checks
from explicit golden-rule sums.  Run ``python3 tools/oracles.py`` and
compare against the constants in ``tests/``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import integrate, optimize
from scipy.special import eval_hermite, factorial

M_INV, E0, E1, V0, V1, OMEGA, KAPPA, LAM = 2.80e-3, 0.0, 2.58, 3.56, 1.19, 0.19, 0.19, 0.19


def ho_wavefunction(v, x):
    norm = 1.0 / math.sqrt(2.0**v * factorial(v) * math.sqrt(math.pi))
    return norm * eval_hermite(v, x) * np.exp(-x * x / 2)


def plane_wave(m, phi):
    return np.exp(1j * m * phi) / math.sqrt(2 * math.pi)


def matrix_elements():
    """Three Hamiltonian elements by quadrature in the product representation."""
    phi = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
    dphi = phi[1] - phi[0]
    x, w = hermgauss(60)
    wx = w * np.exp(x * x)  # plain integral weights

    def rotor(m1, m2, f):
        return np.sum(np.conj(plane_wave(m1, phi)) * f * plane_wave(m2, phi)) * dphi

    def ho(v1, v2, f):
        return np.sum(wx * ho_wavefunction(v1, x) * f * ho_wavefunction(v2, x))

    # <0,0,0|H|0,0,0>: rotor potential average plus HO kinetic and potential parts
    pot = rotor(0, 0, E0 + V0 / 2 * (1 - np.cos(phi))).real
    xfine = np.linspace(-10, 10, 20001)
    g = ho_wavefunction(0, xfine)
    d2g = np.gradient(np.gradient(g, xfine), xfine)
    kin = -OMEGA / 2 * integrate.trapezoid(g * d2g, xfine)
    harm = OMEGA / 2 * integrate.trapezoid(g * xfine**2 * g, xfine)
    diag = pot + kin + harm
    hop = rotor(0, 1, -V0 / 2 * np.cos(phi)).real  # the constant part does not couple m != m'
    mix = LAM * ho(0, 1, x)
    return diag, hop, mix


def fourier_grid_spectrum(n_phi=128, n_ho=24):
    """Eigenpairs from a phi-collocation x HO-basis Hamiltonian (independent representation)."""
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    k = np.fft.fftfreq(n_phi, d=1.0 / n_phi)  # integer wavenumbers
    # kinetic -(m_inv/2) d2/dphi2 on the grid: F^-1 diag(m_inv k^2 / 2) F
    F = np.fft.fft(np.eye(n_phi), axis=0) / math.sqrt(n_phi)
    T = (F.conj().T @ np.diag(M_INV * k**2 / 2) @ F).real
    Ir, Iv = np.eye(n_phi), np.eye(n_ho)
    X = np.diag(np.sqrt(np.arange(1, n_ho) / 2), 1)
    X = X + X.T
    Hv = np.diag(OMEGA * (np.arange(n_ho) + 0.5))
    U0 = np.diag(E0 + V0 / 2 * (1 - np.cos(phi)))
    U1 = np.diag(E1 - V1 / 2 * (1 - np.cos(phi)))
    h0 = np.kron(T + U0, Iv) + np.kron(Ir, Hv)
    h1 = np.kron(T + U1, Iv) + np.kron(Ir, Hv + KAPPA * X)
    c = LAM * np.kron(Ir, X)
    H = np.block([[h0, c], [c, h1]])
    e, v = np.linalg.eigh(H)
    return phi, e, v


def ground_state_transness():
    n_phi, n_ho = 128, 24
    phi, e, v = fourier_grid_spectrum(n_phi, n_ho)
    g = v[:, 0].reshape(2, n_phi, n_ho)
    dens = np.sum(g**2, axis=(0, 2))  # grid weights are uniform and normalized
    return e[0], float(np.sum(dens * (1 - np.cos(phi)) / 2))


def brightest_state_energy():
    n_phi, n_ho = 128, 24
    phi, e, v = fourier_grid_spectrum(n_phi, n_ho)
    g = v[:, 0].reshape(2, n_phi, n_ho)[0]
    g = g / np.linalg.norm(g)
    amp = v.reshape(2, n_phi, n_ho, -1)[1]
    c = np.einsum("rv,rvk->k", g, amp)
    return e[int(np.argmax(c**2))], float(np.max(c**2))


def trans_indicator_elements():
    """<m|Theta|n> for Theta the indicator of [pi/2, 3pi/2), by adaptive quadrature."""
    out = {}
    for d in range(0, 6):
        re = integrate.quad(lambda p: math.cos(d * p) / (2 * math.pi), math.pi / 2, 3 * math.pi / 2)[0]
        im = integrate.quad(lambda p: math.sin(d * p) / (2 * math.pi), math.pi / 2, 3 * math.pi / 2)[0]
        out[d] = (re, im)
    return out


def spectral_density_peak(eta=0.1, wc=0.2):
    res = optimize.minimize_scalar(lambda w: -eta * w * math.exp(-w / wc), bounds=(1e-6, 5), method="bounded",
                                   options={"xatol": 1e-12})
    return res.x


def wigner_moments():
    p = lambda s: (math.pi * s / 2) * math.exp(-math.pi * s * s / 4)
    norm = integrate.quad(p, 0, np.inf, epsabs=1e-14)[0]
    mean = integrate.quad(lambda s: s * p(s), 0, np.inf, epsabs=1e-14)[0]
    mode = optimize.minimize_scalar(lambda s: -p(s), bounds=(0, 3), method="bounded", options={"xatol": 1e-12}).x
    return norm, mean, mode


def golden_rule_rates(energies, S, eta, wc, temperature):
    """K[j, i] = 2 |S_ji|^2 gamma(e_i - e_j), looping over pairs explicitly."""
    kb = 8.617333262e-5
    n = len(energies)
    K = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            w = energies[i] - energies[j]
            J = eta * abs(w) * math.exp(-abs(w) / wc)
            if temperature == 0:
                nb = 0.0
            else:
                nb = 1.0 / math.expm1(abs(w) / (kb * temperature))
            g = J * (nb + 1) if w > 0 else J * nb
            K[j, i] = 2 * S[j, i] ** 2 * g
    K -= np.diag(K.sum(axis=0))
    return K


def e1_variation(frac=0.05):
    e1 = E1 * (1 + frac)
    return e1, (E1 + V1) - e1


if __name__ == "__main__":
    d, h, m = matrix_elements()
    print(f"H[0,0,0;0,0,0] = {d:.12f}   H hop = {h:.12f}   H mix = {m:.12f}")
    print("Theta elements (d: re, im):", {k: (round(a, 14), round(b, 14)) for k, (a, b) in trans_indicator_elements().items()})
    eg, l0 = ground_state_transness()
    print(f"ground energy {eg:.10f}  transness {l0:.6e}")
    eb, wb = brightest_state_energy()
    print(f"brightest energy {eb:.6f} weight {wb:.6f}")
    print(f"J argmax {spectral_density_peak():.10f}")
    print("Wigner norm/mean/mode", wigner_moments(), math.sqrt(2 / math.pi))
    print("E1 variation +5%", e1_variation())
