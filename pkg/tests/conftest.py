import numpy as np
import pytest

from wpkrylov import cdr


def make_spd(rng, n, shift=1.0):
    g = rng.standard_normal((n, n))
    return g @ g.T / n + shift * np.eye(n)


def make_pd_system(seed, n=20, skew_scale=0.3, spd_shift=2.0):
    """Well-conditioned test system: A with SPD symmetric part, SPD H, rhs.

    Sized so the solvers converge at 1e-6 well before the exact-termination
    step, keeping residual comparisons clear of the round-off floor.
    """
    rng = np.random.default_rng(seed)
    sym = make_spd(rng, n, shift=spd_shift)
    skew = rng.standard_normal((n, n))
    skew = 0.5 * (skew - skew.T)
    a = sym + skew_scale * np.linalg.norm(sym, 2) * skew / np.linalg.norm(skew, 2)
    h = make_spd(rng, n, shift=1.0)
    b = rng.standard_normal(n)
    return a, h, b


_CDR_CACHE = {}


@pytest.fixture(scope="session")
def cdr_assembled():
    """Memoized assembly of the reference problem at (m, nu, c0)."""

    def build(m, nu=1.0, c0=1.0):
        key = (m, nu, c0)
        if key not in _CDR_CACHE:
            _CDR_CACHE[key] = cdr.assemble(
                cdr.reference_problem(nu=nu, c0=c0, mesh_divisions=m)
            )
        return _CDR_CACHE[key]

    return build
