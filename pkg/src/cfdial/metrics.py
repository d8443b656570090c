"""Canonical correlation analysis and report-bundle assembly.

The CCA here measures how much trait information utterance embeddings
carry: whiten both blocks, take the singular structure of the whitened
cross-covariance, and read the top singular values as correlations.  All
eigen-machinery is a cyclic Jacobi sweep, so the only numerics dependency
is dense matmul.

Report assembly is deliberately dumb: it copies whichever well-known
stage outputs exist into one bundle directory, checksums them, and lists
the rest as absent.  No timestamps anywhere, so the same inputs always
produce byte-identical bundles.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import TRAIT_DIM

_RIDGE_SCALE = 1e-6
_CORR_SLACK = 1e-9


# -- symmetric eigendecomposition ---------------------------------------------


def jacobi_eigh(A: np.ndarray, tol: float = 1e-13,
                max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and eigenvectors of a symmetric matrix.

    Cyclic Jacobi: repeatedly zero each off-diagonal entry with a plane
    rotation until the off-diagonal mass is negligible.  Plenty for the
    small matrices this package sees.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"need a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    n = A.shape[0]
    A = (A + A.T) / 2.0
    V = np.eye(n)
    scale = max(np.abs(A).max(), 1.0)
    for _ in range(max_sweeps):
        off = np.sqrt(max((A**2).sum() - (np.diag(A)**2).sum(), 0.0))
        if off <= tol * scale * n:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= tol * scale / n:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q
                rot_p = c * V[:, p] - s * V[:, q]
                rot_q = s * V[:, p] + c * V[:, q]
                V[:, p], V[:, q] = rot_p, rot_q
    evals = np.diag(A).copy()
    order = np.argsort(-evals, kind="stable")
    evals, V = evals[order], V[:, order]
    for i in range(n):                       # sign convention for reproducibility
        j = int(np.argmax(np.abs(V[:, i])))
        if V[j, i] < 0:
            V[:, i] = -V[:, i]
    return evals, V


def _inv_sqrt(C: np.ndarray, what: str) -> np.ndarray:
    evals, V = jacobi_eigh(C)
    floor = 1e-12 * max(evals.max(), 0.0)
    if evals.min() <= floor:
        raise ValueError(f"{what} covariance is rank deficient even after "
                         f"regularization (min eigenvalue {evals.min():.3e})")
    return V @ np.diag(1.0 / np.sqrt(evals)) @ V.T


# -- canonical correlation ------------------------------------------------------


@dataclass
class CcaResult:
    correlations: np.ndarray    # (k,), non-increasing, inside [0, 1]
    x_proj: np.ndarray          # (p, k) projection vectors for the embeddings
    y_proj: np.ndarray          # (q, k) projection vectors for the traits

    def __post_init__(self):
        c = np.asarray(self.correlations, dtype=np.float64)
        if np.any(np.diff(c) > _CORR_SLACK):
            raise ValueError("correlations must be sorted non-increasing")
        if c.size and (c.min() < -_CORR_SLACK or c.max() > 1.0 + _CORR_SLACK):
            raise ValueError(f"correlations outside [0, 1]: {c}")
        self.correlations = np.clip(c, 0.0, 1.0)


def cca_top_components(X: np.ndarray, Y: np.ndarray, k: int) -> CcaResult:
    """Top-k canonical correlations between embedding rows X and trait rows Y.

    Both blocks are centered and ridge-regularized internally; projections
    come back with unit variance under the regularized metric.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must be 2-D with one row per sample")
    n, p = X.shape
    q = Y.shape[1]
    if k < 1 or k > min(p, q):
        raise ValueError(f"k must lie in [1, min(p, q)] = [1, {min(p, q)}]")
    if n <= max(p, q) + 1:
        raise ValueError(f"need more than max(p, q) + 1 = {max(p, q) + 1} samples, got {n}")

    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    Cxx = Xc.T @ Xc / (n - 1)
    Cyy = Yc.T @ Yc / (n - 1)
    Cxy = Xc.T @ Yc / (n - 1)
    Cxx += np.eye(p) * (_RIDGE_SCALE * np.trace(Cxx) / p)
    Cyy += np.eye(q) * (_RIDGE_SCALE * np.trace(Cyy) / q)

    Wx = _inv_sqrt(Cxx, "embedding")
    Wy = _inv_sqrt(Cyy, "trait")
    M = Wx @ Cxy @ Wy

    evals, V = jacobi_eigh(M.T @ M)          # right singular structure of M
    corr = np.sqrt(np.clip(evals[:k], 0.0, None))
    v = V[:, :k]
    u = M @ v
    lengths = np.sqrt((u * u).sum(axis=0))
    if np.any(lengths < 1e-9):
        raise ValueError(f"cross-covariance supports fewer than k={k} components")
    u = u / lengths
    return CcaResult(correlations=corr, x_proj=Wx @ u, y_proj=Wy @ v)


def cca_trait_correlations(X: np.ndarray, Y: np.ndarray, k: int = 2) -> np.ndarray:
    """Just the top-k correlations; Y must be the 5-wide trait block."""
    if Y.shape[1] != TRAIT_DIM:
        raise ValueError(f"trait block must have {TRAIT_DIM} columns")
    return cca_top_components(X, Y, k).correlations


# -- report bundle --------------------------------------------------------------

# section name -> well-known path inside a run directory
REPORT_SECTIONS = (
    ("regression", "dppr/regression.tsv"),
    ("alignment", "cf/alignment.tsv"),
    ("cumulative", "evaluate/cumulative.tsv"),
    ("qstats", "evaluate/qstats.tsv"),
    ("cca", "evaluate/cca.tsv"),
    ("provenance", "provenance.json"),
)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def assemble_report(run_dir, out_dir) -> dict:
    """Collect every known stage output under run_dir into out_dir.

    Present sections are copied byte-for-byte and checksummed; missing ones
    are listed under "absent" rather than invented.  Returns the manifest,
    which is also written as manifest.json.
    """
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sections, absent = {}, []
    for name, rel in REPORT_SECTIONS:
        src = run_dir / rel
        if not src.exists():
            absent.append(name)
            continue
        dest = out_dir / src.name
        shutil.copyfile(src, dest)
        sections[name] = {"source": rel, "file": src.name, "sha256": sha256_file(src)}
    manifest = {"sections": sections, "absent": sorted(absent)}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
