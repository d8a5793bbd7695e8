"""Two-state two-mode vibronic model of retinal photoisomerization.

The system Hamiltonian lives on two diabatic electronic states ``|0>`` (cis
ground surface) and ``|1>`` (excited surface carrying the trans minimum), a
torsional reaction coordinate ``phi`` and a harmonic tuning mode ``x``::

    H = sum_n [T + E_n + (-1)^n V_n/2 (1 - cos phi) + w x^2/2 + kappa x delta_n1] |n><n|
        + lambda x (|0><1| + |1><0|)

with ``T = -(m_inv/2) d^2/dphi^2 - (w/2) d^2/dx^2``.

Primitive basis: ``|el> x |m> x |v>`` with plane waves ``exp(i m phi)/sqrt(2 pi)``,
``m = -M..M``, and dimensionless oscillator functions ``v = 0..n_ho-1``.  The
flat primitive index is ``el * (2M+1) * n_ho + (m + M) * n_ho + v``.

All energies are in eV.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

logger = logging.getLogger(__name__)

MAX_PRIMITIVE_DIM = 60_000
"""Guard against accidentally dense-diagonalizing absurd bases."""


@dataclass(frozen=True)
class ModelParameters:
    """Scalars of the two-state two-mode Hamiltonian (eV)."""

    m_inv: float = 2.80e-3
    E0: float = 0.0
    E1: float = 2.58
    V0: float = 3.56
    V1: float = 1.19
    omega: float = 0.19
    kappa: float = 0.19
    lambda_c: float = 0.19

    def __post_init__(self):
        for name in ("m_inv", "omega"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)!r}")
        # V0 = V1 = 0 is the separable limit and stays legal here.
        for name in ("V0", "V1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        for f in dataclasses.fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")

    def replace(self, **changes) -> "ModelParameters":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def energy_storage(self) -> float:
        """Trans-well minimum of the excited diabatic surface, ``E1 - V1``."""
        return self.E1 - self.V1

    @property
    def trans_vertical_gap(self) -> float:
        """Vertical gap at ``phi = pi`` between the two diabatic surfaces."""
        return (self.E0 + self.V0) - (self.E1 - self.V1)


@dataclass(frozen=True)
class BasisSpec:
    """Primitive product-basis truncation and eigenstate retention window.

    The defaults converge all eigenvalues below 3 eV to better than 1e-10 eV
    for the reference parameters.  Spectra up to ~6.5 eV need ``n_ho >= 42``.
    """

    n_rotor_max: int = 72
    n_ho: int = 32
    energy_cutoff: float = 3.0
    parity_split: bool = True

    def __post_init__(self):
        if self.n_rotor_max < 1:
            raise ValueError("n_rotor_max must be >= 1")
        if self.n_ho < 2:
            raise ValueError("n_ho must be >= 2")
        if not self.energy_cutoff > 0:
            raise ValueError("energy_cutoff must be > 0")

    @property
    def n_rotor(self) -> int:
        return 2 * self.n_rotor_max + 1

    @property
    def primitive_dim(self) -> int:
        return 2 * self.n_rotor * self.n_ho

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2, self.n_rotor, self.n_ho)

    def enlarged(self, factor: float = 1.25) -> "BasisSpec":
        return dataclasses.replace(
            self,
            n_rotor_max=int(math.ceil(self.n_rotor_max * factor)),
            n_ho=int(math.ceil(self.n_ho * factor)),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# one-mode operators


def rotor_kinetic(n_rotor_max: int, m_inv: float) -> np.ndarray:
    m = np.arange(-n_rotor_max, n_rotor_max + 1)
    return 0.5 * m_inv * m.astype(float) ** 2


def rotor_cos(n_rotor_max: int) -> sp.csr_matrix:
    """``cos(phi)`` in the plane-wave basis: 1/2 on the first off-diagonals."""
    n = 2 * n_rotor_max + 1
    off = np.full(n - 1, 0.5)
    return sp.diags([off, off], [-1, 1], shape=(n, n), format="csr")


def rotor_trans_indicator(n_rotor_max: int) -> np.ndarray:
    """Plane-wave matrix of the indicator of ``phi in [pi/2, 3pi/2)``.

    ``<m|Theta|n> = (1/2pi) int_{pi/2}^{3pi/2} exp(i (n-m) phi) dphi``; the
    result is real: 1/2 on the diagonal, zero for even ``n-m`` and
    ``-(-1)^((d-1)/2) / (pi d)`` for odd ``d = n-m``.
    """
    m = np.arange(-n_rotor_max, n_rotor_max + 1)
    d = m[None, :] - m[:, None]
    out = np.zeros(d.shape)
    odd = d % 2 != 0
    do = d[odd]
    sign = np.where(((do - 1) // 2) % 2 == 0, 1.0, -1.0)
    out[odd] = -sign / (np.pi * do)
    np.fill_diagonal(out, 0.5)
    return out


def ho_position(n_ho: int) -> sp.csr_matrix:
    v = np.arange(n_ho - 1)
    off = np.sqrt((v + 1) / 2.0)
    return sp.diags([off, off], [-1, 1], shape=(n_ho, n_ho), format="csr")


def ho_energy(n_ho: int, omega: float) -> np.ndarray:
    return omega * (np.arange(n_ho) + 0.5)


def parity_transform(n_rotor_max: int, parity: int) -> sp.csr_matrix:
    """Columns are the parity-adapted rotor functions in the plane-wave basis.

    Even: ``|0>`` and ``(|m> + |-m>)/sqrt 2`` for ``m = 1..M``.
    Odd: ``(|m> - |-m>)/sqrt 2`` for ``m = 1..M``.
    """
    M = n_rotor_max
    n = 2 * M + 1
    rows, cols, vals = [], [], []
    s = 1.0 / np.sqrt(2.0)
    if parity > 0:
        rows.append(M), cols.append(0), vals.append(1.0)
        for j, m in enumerate(range(1, M + 1), start=1):
            rows += [M + m, M - m]
            cols += [j, j]
            vals += [s, s]
        ncol = M + 1
    else:
        for j, m in enumerate(range(1, M + 1)):
            rows += [M + m, M - m]
            cols += [j, j]
            vals += [s, -s]
        ncol = M
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, ncol))


# ---------------------------------------------------------------------------
# assembly


def _check_dim(basis: BasisSpec):
    if basis.primitive_dim > MAX_PRIMITIVE_DIM:
        raise ValueError(
            f"primitive dimension {basis.primitive_dim} exceeds guard {MAX_PRIMITIVE_DIM}"
        )


def _assemble(params: ModelParameters, rotor_T, rotor_cos_op, n_ho: int) -> sp.csr_matrix:
    nr = rotor_cos_op.shape[0]
    Ir = sp.identity(nr, format="csr")
    Iv = sp.identity(n_ho, format="csr")
    X = ho_position(n_ho)
    Hv = sp.diags(ho_energy(n_ho, params.omega))

    # V_n/2 (1 - cos phi) with sign (-1)^n
    rot0 = rotor_T + (params.E0 + params.V0 / 2) * Ir - (params.V0 / 2) * rotor_cos_op
    rot1 = rotor_T + (params.E1 - params.V1 / 2) * Ir + (params.V1 / 2) * rotor_cos_op
    h0 = sp.kron(rot0, Iv) + sp.kron(Ir, Hv)
    h1 = sp.kron(rot1, Iv) + sp.kron(Ir, Hv + params.kappa * X)
    c = params.lambda_c * sp.kron(Ir, X)
    return sp.bmat([[h0, c], [c, h1]], format="csr")


def build_hamiltonian_sparse(params: ModelParameters, basis: BasisSpec) -> sp.csr_matrix:
    """Full primitive-basis Hamiltonian as a sparse matrix."""
    _check_dim(basis)
    M = basis.n_rotor_max
    T = sp.diags(rotor_kinetic(M, params.m_inv))
    return _assemble(params, T, rotor_cos(M), basis.n_ho)


def build_hamiltonian(params: ModelParameters, basis: BasisSpec) -> np.ndarray:
    """Dense real-symmetric Hamiltonian in the primitive product basis."""
    return build_hamiltonian_sparse(params, basis).toarray()


def build_parity_block(params: ModelParameters, basis: BasisSpec, parity: int) -> sp.csr_matrix:
    """Hamiltonian restricted to one ``phi -> -phi`` parity sector.

    The block basis is ``|el> x |rotor parity function j> x |v>``; map back to
    the primitive basis with :func:`parity_transform`.
    """
    _check_dim(basis)
    M = basis.n_rotor_max
    U = parity_transform(M, parity)
    T = U.T @ sp.diags(rotor_kinetic(M, params.m_inv)) @ U
    C = U.T @ rotor_cos(M) @ U
    return _assemble(params, T.tocsr(), C.tocsr(), basis.n_ho)


def parity_permutation(basis: BasisSpec) -> np.ndarray:
    """Index permutation of the primitive basis implementing ``m -> -m``."""
    idx = np.arange(basis.primitive_dim).reshape(basis.shape)
    return idx[:, ::-1, :].ravel()


# ---------------------------------------------------------------------------
# eigensystem


@dataclass(frozen=True)
class Eigensystem:
    """Retained eigenpairs of the system Hamiltonian.

    ``coefficients`` has shape ``(primitive_dim, n_states)``; column ``k`` is
    eigenstate ``|k>`` in the primitive basis.
    """

    energies: np.ndarray
    coefficients: np.ndarray | None
    transness: np.ndarray | None
    parity: np.ndarray
    params: ModelParameters
    basis: BasisSpec
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("energies", "coefficients", "transness", "parity"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def retained_count(self) -> int:
        return len(self.energies)

    def __len__(self):
        return len(self.energies)

    def coefficient_tensor(self) -> np.ndarray:
        """Coefficients reshaped to ``(2, n_rotor, n_ho, n_states)``."""
        if self.coefficients is None:
            raise ValueError("eigensystem was built without eigenvectors")
        return self.coefficients.reshape(*self.basis.shape, -1)

    def subset(self, index) -> "Eigensystem":
        """Eigensystem restricted to ``index`` (kept in the given order)."""
        index = np.asarray(index)
        return Eigensystem(
            energies=self.energies[index].copy(),
            coefficients=None if self.coefficients is None else self.coefficients[:, index].copy(),
            transness=None if self.transness is None else self.transness[index].copy(),
            parity=self.parity[index].copy(),
            params=self.params,
            basis=self.basis,
            meta=dict(self.meta),
        )

    def sector(self, parity: int) -> "Eigensystem":
        return self.subset(np.flatnonzero(self.parity == parity))

    def below(self, energy: float) -> "Eigensystem":
        return self.subset(np.flatnonzero(self.energies <= energy))


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _eigh_window(H: np.ndarray, cutoff: float, vectors: bool):
    # evr with a value window avoids computing the full set of eigenvectors
    return scipy.linalg.eigh(
        H,
        eigvals_only=not vectors,
        subset_by_value=(-np.inf, cutoff),
        driver="evr",
        overwrite_a=True,
        check_finite=False,
    )


def _block_to_primitive(vecs: np.ndarray, basis: BasisSpec, parity: int) -> np.ndarray:
    U = parity_transform(basis.n_rotor_max, parity).toarray()
    nb = U.shape[1]
    v = vecs.reshape(2, nb, basis.n_ho, -1)
    out = np.einsum("rj,ejvk->ervk", U, v, optimize=True)
    return out.reshape(basis.primitive_dim, -1)


def diagonalize(
    params: ModelParameters,
    basis: BasisSpec,
    *,
    vectors: bool = True,
    parities: tuple[int, ...] = (1, -1),
) -> Eigensystem:
    """All eigenpairs with energy at or below ``basis.energy_cutoff``.

    With ``basis.parity_split`` the two ``phi -> -phi`` sectors are solved
    separately and merged; ``parities`` may restrict the solve to one sector.
    Eigenvectors are stored in the primitive basis with the largest-magnitude
    component made positive.
    """
    _check_dim(basis)
    energies, vecs, par = [], [], []
    if basis.parity_split:
        for p in parities:
            Hb = build_parity_block(params, basis, p).toarray()
            res = _eigh_window(Hb, basis.energy_cutoff, vectors)
            del Hb
            if vectors:
                e, v = res
                v = _block_to_primitive(v, basis, p)
                vecs.append(v)
            else:
                e = res
            energies.append(e)
            par.append(np.full(len(e), p, dtype=np.int8))
    else:
        H = build_hamiltonian(params, basis)
        res = _eigh_window(H, basis.energy_cutoff, True)
        e, v = res
        # label parity from <k|P|k>; definite only for nondegenerate states
        perm = parity_permutation(basis)
        pval = np.einsum("ik,ik->k", v, v[perm])
        energies.append(e)
        par.append(np.where(pval >= 0, 1, -1).astype(np.int8))
        if vectors:
            vecs.append(v)

    e = np.concatenate(energies)
    order = np.argsort(e, kind="stable")
    e = e[order]
    parity = np.concatenate(par)[order]
    coeffs = None
    lk = None
    if vectors:
        coeffs = _fix_phase(np.concatenate(vecs, axis=1)[:, order])
        lk = trans_character(coeffs, basis)
    top = e[-1] if len(e) else None
    if top is not None and top > 0.9 * basis.n_ho * params.omega:
        logger.warning(
            "energy cutoff %.3f eV approaches the oscillator truncation (n_ho=%d); check convergence",
            basis.energy_cutoff,
            basis.n_ho,
        )
    return Eigensystem(e, coeffs, lk, parity, params, basis)


def trans_character(coefficients: np.ndarray, basis: BasisSpec) -> np.ndarray:
    """Trans-ness ``l_k = <k| (1 - cos phi)/2 |k>`` for each column.

    The weight is tridiagonal in the plane-wave basis (1/2 on the diagonal,
    -1/4 off it), so no quadrature is needed.
    """
    c = np.asarray(coefficients)
    single = c.ndim == 1
    if single:
        c = c[:, None]
    t = c.reshape(2, basis.n_rotor, basis.n_ho, -1)
    w = 0.5 * t
    w[:, 1:] -= 0.25 * t[:, :-1]
    w[:, :-1] -= 0.25 * t[:, 1:]
    lk = np.einsum("ervk,ervk->k", t, w) / np.einsum("ervk,ervk->k", t, t)
    lk = np.clip(lk, 0.0, 1.0)
    return lk[0] if single else lk


def ladder_spectrum(params: ModelParameters, basis: BasisSpec) -> np.ndarray:
    """Analytic spectrum for kappa = lambda = V0 = V1 = 0 (sorted)."""
    m = np.arange(-basis.n_rotor_max, basis.n_rotor_max + 1)
    rot = 0.5 * params.m_inv * m.astype(float) ** 2
    ho = ho_energy(basis.n_ho, params.omega)
    ladder = rot[:, None] + ho[None, :]
    return np.sort(np.concatenate([params.E0 + ladder.ravel(), params.E1 + ladder.ravel()]))


def convergence_check(params: ModelParameters, basis: BasisSpec, factor: float = 1.25) -> float:
    """Max eigenvalue shift below the cutoff when the basis is enlarged by ``factor``."""
    a = diagonalize(params, basis, vectors=False).energies
    b = diagonalize(params, basis.enlarged(factor), vectors=False).energies
    n = min(len(a), len(b))
    if len(a) != len(b):
        logger.warning("state count below cutoff changed: %d -> %d", len(a), len(b))
    return float(np.max(np.abs(a[:n] - b[:n]))) if n else 0.0


# ---------------------------------------------------------------------------
# Franck-Condon excitation


@dataclass(frozen=True)
class FranckCondonState:
    amplitudes: np.ndarray
    brightest_index: int
    retained_norm: float

    def __post_init__(self):
        self.amplitudes.setflags(write=False)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def franck_condon_state(eigsys: Eigensystem, min_norm: float = 0.5) -> FranckCondonState:
    """Ground-state nuclear wavefunction promoted vertically onto ``|1>``.

    The lowest retained state supplies the nuclear wavefunction (its ``|0>``
    component, renormalized).  ``min_norm`` is the floor on the weight the
    retained eigenstates capture before renormalization.
    """
    C = eigsys.coefficient_tensor()
    chi = C[0, :, :, 0]
    chi = chi / np.linalg.norm(chi)
    amps = np.einsum("rv,rvk->k", chi, C[1])
    norm = float(amps @ amps)
    if norm < min_norm:
        raise ValueError(
            f"retained eigenstates capture only {norm:.3f} of the Franck-Condon state "
            f"(floor {min_norm}); raise the energy cutoff"
        )
    amps = amps / np.sqrt(norm)
    return FranckCondonState(amps, int(np.argmax(amps**2)), norm)


# ---------------------------------------------------------------------------
# parameter variation

VARIATION_KINDS = ("m_inv", "E1", "omega", "lambda_c")


@dataclass(frozen=True)
class Variation:
    """A one-parameter perturbation.

    ``kind`` is one of ``m_inv``, ``omega``, ``lambda_c`` (``value`` is a
    multiplicative factor) or ``E1`` (``value`` is an additive shift in eV,
    compensated in ``V1`` so that ``E1 + V1`` stays fixed).
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in VARIATION_KINDS:
            raise ValueError(f"unknown variation {self.kind!r}; expected one of {VARIATION_KINDS}")

    @property
    def is_identity(self) -> bool:
        return self.value == (0.0 if self.kind == "E1" else 1.0)


def apply_parameter_variation(params: ModelParameters, variation: Variation) -> ModelParameters:
    v = variation.value
    if variation.kind == "E1":
        e1 = params.E1 + v
        new = {"E1": e1, "V1": (params.E1 + params.V1) - e1}
    else:
        new = {variation.kind: getattr(params, variation.kind) * v}
    if new.get("V1", 1.0) <= 0:
        raise ValueError("variation drives V1 to a non-positive value")
    if new.get("m_inv", 1.0) <= 0:
        raise ValueError("variation drives m_inv to a non-positive value")
    if variation.kind in ("omega", "lambda_c") and v <= 0:
        raise ValueError(f"scale factor for {variation.kind} must be positive")
    return params.replace(**new)
