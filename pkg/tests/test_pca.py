import numpy as np
import pytest

from silicotrial.errors import DomainError, SchemaError
from silicotrial.features import encode_patients
from silicotrial.pca import ReducedRankWarning, fit_pca, load_pca, project, reconstruct, save_pca
from silicotrial.synth import WorldParams, generate_cohort


def plane_data(rng, n=300, d=10):
    basis = np.linalg.qr(rng.normal(size=(d, 2)))[0].T
    coeffs = rng.normal(size=(n, 2)) * [3.0, 1.0]
    return coeffs @ basis + rng.normal(size=d), basis


@pytest.fixture(scope="module")
def wide_rows():
    cases = generate_cohort(WorldParams(cohort_size=120), seed=3)
    return encode_patients(cases, "final")


def test_exact_plane(rng):
    x, basis = plane_data(rng)
    pca = fit_pca(x, k=2)
    assert abs(pca.explained_variance_ratio.sum() - 1.0) <= 1e-6
    # recovered span equals the true plane
    proj = pca.components @ basis.T
    assert np.allclose(np.abs(np.linalg.det(proj)), 1.0, atol=1e-9)


@pytest.mark.parametrize("solver", ["lanczos", "power"])
def test_orthonormal_on_wide_cohort(wide_rows, solver):
    pca = fit_pca(wide_rows, k=17, solver=solver)
    gram = pca.components @ pca.components.T
    assert np.max(np.abs(gram - np.eye(17))) <= 1e-9
    assert np.all(np.diff(pca.explained_variance_ratio) <= 1e-15)


def test_solvers_agree_with_eigh(wide_rows):
    xc = wide_rows - wide_rows.mean(axis=0)
    gram = xc @ xc.T / (len(xc) - 1)
    top = np.sort(np.linalg.eigvalsh(gram))[::-1][:17]
    for solver in ("lanczos", "power"):
        pca = fit_pca(wide_rows, k=17, solver=solver)
        assert np.allclose(pca.explained_variance, top, rtol=1e-8)


def test_mean_projects_to_zero(rng):
    x = rng.normal(size=(100, 12))
    pca = fit_pca(x, k=4)
    assert np.allclose(project(pca, x.mean(axis=0)), 0.0, atol=1e-12)


def test_affine_projection(rng):
    x = rng.normal(size=(80, 9))
    pca = fit_pca(x, k=3)
    a, b = rng.normal(size=9), rng.normal(size=9)
    zero = project(pca, np.zeros(9))
    assert np.allclose(project(pca, a + b), project(pca, a) + project(pca, b) - zero)


def test_reconstruction_error_bound(rng):
    x = rng.normal(size=(200, 8)) * np.arange(1, 9)
    pca = fit_pca(x, k=5)
    err = np.mean(np.sum((reconstruct(pca, project(pca, x)) - x) ** 2, axis=1))
    cov = np.cov(x, rowvar=False)
    residual = np.sort(np.linalg.eigvalsh(cov))[::-1][5:].sum()
    assert err <= residual * (len(x) - 1) / len(x) + 1e-9


def test_rank_deficient_warns(rng):
    x, _ = plane_data(rng, n=50)
    with pytest.warns(ReducedRankWarning):
        pca = fit_pca(x, k=4)
    assert pca.degenerate.tolist() == [False, False, True, True]
    assert np.all(pca.components[2:] == 0)


def test_errors(rng):
    with pytest.raises(DomainError):
        fit_pca(rng.normal(size=(5, 10)), k=6)
    with pytest.raises(DomainError):
        fit_pca(rng.normal(size=(50, 3)), k=4)
    pca = fit_pca(rng.normal(size=(50, 6)), k=2)
    with pytest.raises(SchemaError):
        project(pca, np.zeros(5))


def test_save_load(tmp_path, rng):
    pca = fit_pca(rng.normal(size=(60, 7)), k=3)
    save_pca(pca, tmp_path / "p.npz")
    back = load_pca(tmp_path / "p.npz")
    assert np.array_equal(back.components, pca.components)
    assert np.array_equal(back.mean, pca.mean)
