"""
Tests for the structural residual suite.
"""
import dataclasses
import json

import jax.numpy as jnp
import pytest

from errors import ConfigError
from geometry import PoissonTensorField
from systems import get_system, lotka_volterra3
from verify import SystemVerifier


def test_catalog_entry_passes():
    verifier = SystemVerifier(get_system("lv3"), seed=1, n_samples=10)
    summary = verifier.run_all()
    assert summary.failed == 0
    assert set(summary.results_by_category) == {
        "antisymmetry", "jacobi", "casimir", "unit_section", "source_poisson",
        "target_antipoisson", "fiber_orthogonality", "orientation",
    }


def test_system_without_realisation_skips_its_checks():
    summary = SystemVerifier(get_system("quad-example"), n_samples=10).run_all()
    assert summary.failed == 0
    assert set(summary.results_by_category) == {"antisymmetry", "jacobi", "casimir"}


def test_corrupted_tensor_fails():
    spec = lotka_volterra3()

    def corrupted(x):
        pi = jnp.outer(x, x) * jnp.asarray([[0.0, 1.0, 1.0], [-1.0, 0.0, 1.0], [-1.0, -1.0, 0.0]])
        pi = pi.at[0, 1].set(x[0] * x[1] ** 2)
        return pi.at[1, 0].set(-x[0] * x[1] ** 2)

    system = dataclasses.replace(spec.system, tensor=PoissonTensorField.from_function(3, corrupted))
    summary = SystemVerifier(dataclasses.replace(spec, system=system), n_samples=10).run_all()
    assert "jacobi identity" in summary.failed_tests
    assert "source is Poisson" in summary.failed_tests


def test_results_are_reproducible(tmp_path):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for path in paths:
        verifier = SystemVerifier(get_system("rigid-body"), seed=3, n_samples=5)
        verifier.run_all()
        verifier.save_results(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    payload = json.loads(paths[0].read_text(encoding="utf-8"))
    assert payload["seed"] == 3
    assert payload["n_samples"] == 5


def test_needs_samples():
    with pytest.raises(ConfigError):
        SystemVerifier(get_system("harmonic"), n_samples=0)
