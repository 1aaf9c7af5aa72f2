"""Linear and antilinear operator handles on truncated coefficient spaces.

Handles wrap a pure apply() action.  Dense materialisation and eigensystems
are cached lazily; caches are idempotent, so concurrent reads of one handle
stay consistent.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse.linalg as spla


class OperatorHandle:
    """Linear operator on C^dim with an optional Hermiticity claim.

    Backends: "dense" stores the matrix up front, "matrix-free" keeps only
    the apply callable and materialises on demand.
    """

    def __init__(self, dim, apply=None, dense=None, hermitian=False, label=""):
        if dense is None and apply is None:
            raise ValueError("need an apply callable or a dense matrix")
        self.dim = int(dim)
        self.hermitian = bool(hermitian)
        self.label = label
        self._apply = apply
        self._dense = None
        self._eigvals = None
        self._eigsys = None
        if dense is not None:
            dense = np.asarray(dense, dtype=complex)
            if dense.shape != (self.dim, self.dim):
                raise ValueError(f"dense shape {dense.shape} != ({dim}, {dim})")
            self._dense = dense
        self.backend = "dense" if dense is not None else "matrix-free"

    @classmethod
    def from_dense(cls, mat, hermitian=False, label=""):
        mat = np.asarray(mat, dtype=complex)
        return cls(mat.shape[0], dense=mat, hermitian=hermitian, label=label)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=complex)
        if self._apply is not None:
            return self._apply(v)
        return self._dense @ v

    def __call__(self, v):
        return self.apply(v)

    def to_dense(self) -> np.ndarray:
        """Materialise the matrix (cached); columns are apply(e_i)."""
        if self._dense is None:
            cols = np.empty((self.dim, self.dim), dtype=complex)
            e = np.zeros(self.dim, dtype=complex)
            for i in range(self.dim):
                e[i] = 1.0
                cols[:, i] = self._apply(e)
                e[i] = 0.0
            self._dense = cols
        return self._dense

    def eigenvalues(self, free_dense: bool = False) -> np.ndarray:
        """Sorted eigenvalues (requires the Hermiticity claim).

        free_dense=True releases the dense matrix and lets LAPACK overwrite
        it, halving peak memory for large instances.
        """
        if not self.hermitian:
            raise ValueError(f"operator {self.label!r} is not claimed Hermitian")
        if self._eigvals is None:
            if self._eigsys is not None:
                self._eigvals = self._eigsys[0]
            elif free_dense:
                import scipy.linalg as sla

                mat = self.to_dense()
                self._dense = None
                self._eigvals = sla.eigvalsh(mat, overwrite_a=True, check_finite=False)
            else:
                self._eigvals = np.linalg.eigvalsh(self.to_dense())
        return self._eigvals

    def eigensystem(self):
        """Cached (eigenvalues, eigenvectors) of the dense Hermitian matrix."""
        if not self.hermitian:
            raise ValueError(f"operator {self.label!r} is not claimed Hermitian")
        if self._eigsys is None:
            self._eigsys = np.linalg.eigh(self.to_dense())
        return self._eigsys

    def hermiticity_residual(self, rng=None, probes: int = 8) -> float:
        """Relative defect of <u, Av> = <Au, v> on random probe pairs."""
        rng = np.random.default_rng(0) if rng is None else rng
        worst = 0.0
        for _ in range(probes):
            u = _random_vec(self.dim, rng)
            v = _random_vec(self.dim, rng)
            au, av = self.apply(u), self.apply(v)
            num = abs(np.vdot(u, av) - np.vdot(au, v))
            den = np.linalg.norm(au) * np.linalg.norm(v) + np.linalg.norm(u) * np.linalg.norm(av)
            worst = max(worst, num / den) if den > 0 else worst
        return worst

    def dense_vs_apply_residual(self, rng=None, probes: int = 8) -> float:
        """Relative disagreement between the dense matrix and apply()."""
        rng = np.random.default_rng(0) if rng is None else rng
        mat = self.to_dense()
        if self._apply is None:
            return 0.0
        worst = 0.0
        for _ in range(probes):
            v = _random_vec(self.dim, rng)
            a, b = self._apply(v), mat @ v
            den = max(np.linalg.norm(b), 1e-300)
            worst = max(worst, np.linalg.norm(a - b) / den)
        return worst

    def norm2(self, tol: float = 1e-9) -> float:
        """Spectral norm via Lanczos on the normal operator."""
        return operator_norm(self.apply, self.apply_adjoint, self.dim, self.dim, tol=tol)

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        if self.hermitian:
            return self.apply(v)
        mat = self.to_dense()
        return mat.conj().T @ np.asarray(v, dtype=complex)


class AntilinearHandle:
    """Antilinear operator; apply() conjugates its argument internally."""

    def __init__(self, dim, apply, label=""):
        self.dim = int(dim)
        self._apply = apply
        self.label = label

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self._apply(np.asarray(v, dtype=complex))

    def __call__(self, v):
        return self.apply(v)

    def antiunitarity_residual(self, rng=None, probes: int = 8) -> float:
        """Defect of <Ju, Jv> = <v, u> on random probes."""
        rng = np.random.default_rng(0) if rng is None else rng
        worst = 0.0
        for _ in range(probes):
            u = _random_vec(self.dim, rng)
            v = _random_vec(self.dim, rng)
            lhs = np.vdot(self.apply(u), self.apply(v))
            rhs = np.vdot(v, u)
            worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(u) * np.linalg.norm(v)))
        return worst


def _random_vec(dim, rng):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def operator_norm(matvec, rmatvec, dim_out: int, dim_in: int, tol: float = 1e-9) -> float:
    """Largest singular value of a (possibly rectangular) linear map.

    Runs Lanczos (eigsh) on the normal operator X* X; falls back to a dense
    SVD for tiny dimensions where eigsh cannot run.
    """
    if dim_in <= 2:
        cols = np.column_stack(
            [matvec(np.eye(dim_in, dtype=complex)[:, i]) for i in range(dim_in)]
        )
        return float(np.linalg.norm(cols, ord=2))

    rng = np.random.default_rng(20231005)
    rough = 0.0
    for _ in range(3):
        v = _random_vec(dim_in, rng)
        rough = max(rough, np.linalg.norm(matvec(v)))
    if rough <= 1e-11:
        return rough  # numerically zero operator; Lanczos would break down

    def normal_mv(v):
        return rmatvec(matvec(np.asarray(v, dtype=complex)))

    lin = spla.LinearOperator((dim_in, dim_in), matvec=normal_mv, dtype=complex)
    vals = spla.eigsh(
        lin,
        k=1,
        which="LA",
        tol=tol,
        return_eigenvectors=False,
        v0=_random_vec(dim_in, rng),
    )
    return float(np.sqrt(max(vals[0], 0.0)))


def probe_residual(apply_fn, vectors) -> float:
    """Max over probes of ||apply(v)|| / ||v||; used for residual operators."""
    worst = 0.0
    for v in vectors:
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        worst = max(worst, np.linalg.norm(apply_fn(v)) / nv)
    return worst
