import numpy as np
import pytest

from volterra_ldp.conditioning import FunctionalConditionalLaw
from volterra_ldp.exceptions import ValidationError
from volterra_ldp.models import Brownian, ConditioningSet, Indicator, ProcessModel
from volterra_ldp.numerics import GramMatrix
from volterra_ldp.sim import (
    bootstrap_stderr,
    empirical_conditional,
    joint_model_cov,
    sample_gaussian,
    standard_normals,
    stream,
)


def test_unit_normal_moments():
    N = 100_000
    b = sample_gaussian([0.0], [[1.0]], N, seed=7)
    assert abs(b.samples.mean()) <= 3 / np.sqrt(N)
    assert b.samples.var() == pytest.approx(1.0, rel=0.05)


def test_same_seed_is_bitwise_identical():
    G = np.minimum.outer([0.5, 1.0], [0.5, 1.0])
    a = sample_gaussian([0, 0], G, 1000, seed=3).samples
    b = sample_gaussian([0, 0], G, 1000, seed=3).samples
    c = sample_gaussian([0, 0], G, 1000, seed=4).samples
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_streams_independent_of_order():
    first = standard_normals(stream(1, "probe", 0, 3), (5,))
    standard_normals(stream(1, "probe", 0, 2), (5,))
    again = standard_normals(stream(1, "probe", 0, 3), (5,))
    np.testing.assert_array_equal(first, again)
    with pytest.raises(ValidationError):
        stream(-1, "x")


def test_brownian_gram_empirical_covariance():
    grid = np.array([0.25, 0.5, 0.75, 1.0])
    G = np.minimum.outer(grid, grid)
    N = 200_000
    Y = sample_gaussian(np.zeros(4), GramMatrix(G, grid=grid), N, seed=11).samples
    emp = np.cov(Y, rowvar=False)
    # stderr of a sample covariance of Gaussians: sqrt((S_ii S_jj + S_ij^2) / N)
    se = np.sqrt((np.outer(np.diag(G), np.diag(G)) + G**2) / N)
    assert np.all(np.abs(emp - G) <= 3 * se)


def test_joint_model_cov_example():
    model = ProcessModel(Brownian(), 1.0, 1.0, 1.0)
    J = joint_model_cov(model, ConditioningSet((Indicator(),), (0.0,)), [1.0])
    np.testing.assert_allclose(J.entries, [[1.0, 1.0], [1.0, 2.0]], atol=1e-12)
    assert J.labels == ["X(t=1.0)", "G1"]
    assert J.min_eigenvalue() >= -1e-10


def test_empirical_conditional_bridge():
    model = ProcessModel(Brownian(), 1.0, 1.0, 1.0)
    gset = ConditioningSet((Indicator(),), (1.0,))
    J = joint_model_cov(model, gset, [1.0])
    batch = sample_gaussian(np.zeros(2), J, 200_000, seed=5)
    mean, cov = empirical_conditional(batch, [1.0])
    se_m, se_c = bootstrap_stderr(batch, [1.0], n_resamples=50)
    assert abs(mean[0] - 0.5) <= 3 * se_m[0]
    assert abs(cov[0, 0] - 0.5) <= 3 * se_c[0, 0]
    mean0, _ = empirical_conditional(batch, [0.0])
    assert abs(mean0[0]) <= 3 * se_m[0]


def test_empirical_conditional_independent_noise():
    model = ProcessModel(Brownian(), 1.0, 0.0, 1.0)
    gset = ConditioningSet((Indicator(),), (0.0,))
    grid = [0.5, 1.0]
    J = joint_model_cov(model, gset, grid)
    batch = sample_gaussian(np.zeros(3), J, 100_000, seed=2)
    _, cov = empirical_conditional(batch, [2.0])
    np.testing.assert_allclose(cov, np.minimum.outer(grid, grid), atol=0.02)
    law = FunctionalConditionalLaw(model, gset)
    np.testing.assert_allclose(law.cov_matrix(grid), np.minimum.outer(grid, grid), atol=1e-14)


def test_sample_batch_csv(tmp_path):
    b = sample_gaussian([0.0, 1.0], GramMatrix(np.eye(2), grid=np.array([0.5, 1.0])), 3, seed=1)
    path = tmp_path / "b.csv"
    b.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t=0.5,t=1.0" and len(lines) == 4


def test_sample_validation():
    with pytest.raises(ValidationError):
        sample_gaussian([0.0], np.eye(2), 10, seed=0)
    with pytest.raises(ValidationError):
        sample_gaussian([0.0], [[1.0]], 0, seed=0)
