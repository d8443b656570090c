"""CCA correlations against planted structure, and report-bundle assembly."""

import json

import numpy as np
import pytest

from cfdial.metrics import (CcaResult, assemble_report, cca_top_components,
                            cca_trait_correlations, jacobi_eigh)


# -- eigensolver ---------------------------------------------------------------


def test_jacobi_matches_reference_solver():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n = int(rng.integers(2, 11))
        B = rng.normal(0, 1, (n, n))
        A = (B + B.T) / 2
        evals, V = jacobi_eigh(A)
        assert np.allclose(evals, np.sort(np.linalg.eigvalsh(A))[::-1], atol=1e-10)
        assert np.allclose(V @ np.diag(evals) @ V.T, A, atol=1e-8)
        assert np.allclose(V.T @ V, np.eye(n), atol=1e-10)
        assert np.all(np.diff(evals) <= 1e-12)


def test_jacobi_rejects_bad_input():
    with pytest.raises(ValueError, match="square"):
        jacobi_eigh(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="symmetric"):
        jacobi_eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_jacobi_sign_convention_is_deterministic():
    A = np.diag([3.0, 1.0]) + 0.2
    _, V1 = jacobi_eigh(A)
    _, V2 = jacobi_eigh(A.copy())
    assert np.array_equal(V1, V2)
    assert all(V1[np.argmax(np.abs(V1[:, i])), i] > 0 for i in range(2))


# -- canonical correlations ------------------------------------------------------


def _whitened_x(rng, n, p):
    """Columns centered and exactly orthonormal, so Cxx = I."""
    G = rng.normal(0, 1, (n, p))
    Q, _ = np.linalg.qr(G - G.mean(axis=0))
    return Q * np.sqrt(n - 1)


def _planted(rng, n=2000, p=8, rho=(0.9, 0.5)):
    z = rng.normal(0, 1, (n, 2))
    X = rng.normal(0, 1, (n, p))
    X[:, 0], X[:, 1] = z[:, 0], z[:, 1]
    Y = rng.normal(0, 1, (n, 5))
    for i, r in enumerate(rho):
        Y[:, i] = r * z[:, i] + np.sqrt(1 - r * r) * rng.normal(0, 1, n)
    return X, Y


def test_exact_copy_scores_one():
    X = _whitened_x(np.random.default_rng(1), 2000, 8)
    res = cca_top_components(X, X[:, :5], 5)
    assert np.abs(res.correlations - 1.0).max() <= 1e-6


def test_planted_correlations_recovered():
    X, Y = _planted(np.random.default_rng(2))
    res = cca_top_components(X, Y, 2)
    assert abs(res.correlations[0] - 0.9) <= 0.05
    assert abs(res.correlations[1] - 0.5) <= 0.05


def test_independent_noise_scores_low():
    # Monte-Carlo null: the top correlation is pure overfitting noise
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        res = cca_top_components(rng.normal(0, 1, (2000, 8)),
                                 rng.normal(0, 1, (2000, 5)), 2)
        assert res.correlations[0] < 0.2


def test_affine_transform_of_x_changes_nothing():
    # the ridge is not exactly affine-invariant, so wild condition numbers
    # would move the correlations by more than the stated tolerance
    rng = np.random.default_rng(3)
    X, Y = _planted(rng)
    base = cca_top_components(X, Y, 2).correlations
    Q, _ = np.linalg.qr(rng.normal(0, 1, (8, 8)))
    R = Q @ np.diag([1.2, 0.9, 1.1, 0.95, 1.05, 1.0, 0.85, 1.15])
    moved = cca_top_components(X @ R + rng.normal(0, 1, 8), Y, 2).correlations
    assert np.abs(moved - base).max() <= 1e-6
    scaled = cca_top_components(3.7 * (X @ Q) + 5.0, Y, 2).correlations
    assert np.abs(scaled - base).max() <= 1e-6


def test_projections_are_unit_variance_and_reproduce_the_correlation():
    rng = np.random.default_rng(4)
    X, Y = _planted(rng)
    res = cca_top_components(X, Y, 2)
    Xc, Yc = X - X.mean(axis=0), Y - Y.mean(axis=0)
    for i in range(2):
        px, py = Xc @ res.x_proj[:, i], Yc @ res.y_proj[:, i]
        assert px.var(ddof=1) == pytest.approx(1.0, abs=1e-3)
        assert py.var(ddof=1) == pytest.approx(1.0, abs=1e-3)
        assert np.corrcoef(px, py)[0, 1] == pytest.approx(res.correlations[i], abs=1e-4)


def test_result_invariants_enforced():
    with pytest.raises(ValueError, match="sorted"):
        CcaResult(np.array([0.5, 0.9]), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="outside"):
        CcaResult(np.array([1.5]), np.zeros((2, 1)), np.zeros((2, 1)))
    res = CcaResult(np.array([1.0 + 5e-10]), np.zeros((2, 1)), np.zeros((2, 1)))
    assert res.correlations[0] == 1.0       # slack is tolerated, then clipped


def test_argument_validation():
    rng = np.random.default_rng(5)
    X = rng.normal(0, 1, (50, 4))
    Y = rng.normal(0, 1, (50, 5))
    with pytest.raises(ValueError, match="min"):
        cca_top_components(X, Y, 5)
    with pytest.raises(ValueError, match="samples"):
        cca_top_components(X[:6], Y[:6], 2)
    with pytest.raises(ValueError, match="one row per sample"):
        cca_top_components(X, Y[:40], 2)
    with pytest.raises(ValueError, match="rank deficient"):
        cca_top_components(np.zeros((50, 4)), Y, 2)
    with pytest.raises(ValueError, match="trait block"):
        cca_trait_correlations(X, rng.normal(0, 1, (50, 4)))


def test_trait_helper_matches_full_result():
    rng = np.random.default_rng(6)
    X, Y = _planted(rng, n=500)
    assert np.array_equal(cca_trait_correlations(X, Y, 2),
                          cca_top_components(X, Y, 2).correlations)


# -- report assembly -------------------------------------------------------------


def test_empty_run_marks_every_section_absent(tmp_path):
    manifest = assemble_report(tmp_path / "run", tmp_path / "bundle")
    assert manifest["sections"] == {}
    assert manifest["absent"] == ["alignment", "cca", "cumulative",
                                  "provenance", "qstats", "regression"]
    on_disk = json.loads((tmp_path / "bundle" / "manifest.json").read_text())
    assert on_disk == manifest


def test_full_run_populates_every_section(tmp_path):
    run = tmp_path / "run"
    files = {"dppr/regression.tsv": "trait\tmse\n0\t0.5\n",
             "cf/alignment.tsv": "db\terror\n0\t0.1\n",
             "evaluate/cumulative.tsv": "index\tcumulative\n0\t1.0\n",
             "evaluate/qstats.tsv": "index\tcumulative\tmax_q\tmean_q\n",
             "evaluate/cca.tsv": "component\tcorrelation\n0\t0.9\n",
             "provenance.json": "{\"seed\": 1}\n"}
    for rel, text in files.items():
        path = run / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    manifest = assemble_report(run, tmp_path / "bundle")
    assert manifest["absent"] == []
    assert set(manifest["sections"]) == {"regression", "alignment", "cumulative",
                                         "qstats", "cca", "provenance"}
    for rel, text in files.items():
        name = rel.rsplit("/", 1)[-1]
        assert (tmp_path / "bundle" / name).read_text() == text


def test_rerun_is_byte_identical(tmp_path):
    run = tmp_path / "run"
    (run / "evaluate").mkdir(parents=True)
    (run / "evaluate" / "cca.tsv").write_text("component\tcorrelation\n0\t0.8\n")
    first = assemble_report(run, tmp_path / "a")
    second = assemble_report(run, tmp_path / "b")
    assert first == second
    a = sorted((tmp_path / "a").iterdir())
    b = sorted((tmp_path / "b").iterdir())
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_unreadable_input_raises(tmp_path):
    run = tmp_path / "run"
    (run / "evaluate" / "cca.tsv").mkdir(parents=True)   # a directory, not a file
    with pytest.raises(OSError):
        assemble_report(run, tmp_path / "bundle")
