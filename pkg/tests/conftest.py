import numpy as np
import pytest

from photoiso.bath import BathSpec, build_dissipator
from photoiso.model import BasisSpec, ModelParameters, diagonalize, franck_condon_state
from photoiso.propagation import trans_projectors

REFERENCE_BATHS = (BathSpec("tuning_x", 0.1, 0.2), BathSpec("torsion_phi", 0.1, 0.2))


@pytest.fixture(scope="session")
def params():
    return ModelParameters()


@pytest.fixture(scope="session")
def small_basis():
    return BasisSpec(n_rotor_max=40, n_ho=12, energy_cutoff=3.0)


@pytest.fixture(scope="session")
def small_eigsys(params, small_basis):
    """Even sector of a reduced basis; about 300 states below 3 eV."""
    return diagonalize(params, small_basis, parities=(1,))


@pytest.fixture(scope="session")
def small_fc(small_eigsys):
    return franck_condon_state(small_eigsys)


@pytest.fixture(scope="session")
def small_diss(small_eigsys):
    return build_dissipator(small_eigsys, list(REFERENCE_BATHS))


@pytest.fixture(scope="session")
def small_projectors(small_eigsys):
    return trans_projectors(small_eigsys)


@pytest.fixture(scope="session")
def tiny_eigsys(small_eigsys):
    """Lowest 40 states: a truncation cheap enough for full superoperators and RK runs."""
    return small_eigsys.subset(np.arange(40))


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


# acceptance criteria report: filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] {n}. {title}: {detail}")
