import json

import numpy as np
import pytest

from services.form_core import FormTriple, SeminormedFormData


def _spd(rng, n):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return X @ X.conj().T / n + np.eye(n)


def _hermitian(rng, n):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (X + X.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(20240229)


@pytest.fixture
def make_triple(rng):
    """
    Random j-elliptic triple. shift > 0 makes Re a indefinite off ker j,
    identity=True uses j = I with identity Grams.
    """
    def make(n=5, m=3, shift=0.0, skew=0.5, identity=False):
        if identity:
            m = n
            J, gv, gh = np.eye(n), np.eye(n), np.eye(n)
        else:
            J = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
            gv, gh = _spd(rng, n), _spd(rng, m)
        P = J.conj().T @ gh @ J
        hm = _spd(rng, n) - 0.5 * np.eye(n) - shift * P / np.linalg.norm(P, 2)
        form = hm + 1j * skew * _hermitian(rng, n)
        return FormTriple.from_matrices(form, J, gv, gh)
    return make


@pytest.fixture
def make_seminormed(rng):
    """Seminormed data on C^n whose seminorm has a kernel of dimension k."""
    def make(n=5, k=2, m=2):
        B = rng.standard_normal((n, n - k)) + 1j * rng.standard_normal((n, n - k))
        F = _spd(rng, n - k) + 0.3j * _hermitian(rng, n - k)
        J0 = rng.standard_normal((m, n - k)) + 1j * rng.standard_normal((m, n - k))
        return SeminormedFormData(B @ F @ B.conj().T, J0 @ B.conj().T, 0.0)
    return make


@pytest.fixture
def write_config(tmp_path):
    def write(doc, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return str(path)
    return write
