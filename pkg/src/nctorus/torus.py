"""Flat-torus spin geometry in a truncated Fourier (plane-wave) basis.

Conventions used throughout the package:

* Momenta are k_mu = 2*pi*(n_mu + delta_mu)/L_mu with integer n_mu and
  spin-structure offsets delta_mu in {0, 1/2}.
* Mode windows per axis: n in [-K, K] for delta = 0 (2K+1 values) and
  n in [-K-1, K] for delta = 1/2 (2K+2 values), so the momentum set is
  symmetric under k -> -k in both cases and charge conjugation acts
  exactly on the truncated space.
* Modes are enumerated lexicographically in n (C order over the axes);
  within one mode the spinor index runs fastest.
* Inner products use the normalised measure (1/Vol) * integral, so plain
  coefficient l2 sums equal L2 norms (Plancherel).  Physical volume factors
  appear explicitly where true integrals are required (heat coefficients,
  Yang-Mills functionals).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .clifford import CliffordModule
from .operators import AntilinearHandle, OperatorHandle


@dataclass(frozen=True)
class TorusGeometry:
    """Flat torus R^d / (L_1 Z x ... x L_d Z) with the Euclidean metric."""

    dim: int
    lengths: tuple

    def __post_init__(self):
        if self.dim not in (2, 4):
            raise ValueError(f"dimension {self.dim} not supported (need 2 or 4)")
        lengths = tuple(float(l) for l in self.lengths)
        if len(lengths) != self.dim or any(l <= 0 for l in lengths):
            raise ValueError(f"need {self.dim} positive lengths, got {self.lengths}")
        object.__setattr__(self, "lengths", lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def grid(self, points_per_axis: int) -> np.ndarray:
        """Uniform sampling grid, shape (points_per_axis**d, d)."""
        axes = [np.arange(points_per_axis) * (l / points_per_axis) for l in self.lengths]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def square_torus(d: int, length: float = 2.0 * np.pi) -> TorusGeometry:
    return TorusGeometry(d, (length,) * d)


_EINSUM_AXES = "abcd"


class TrigPoly:
    """Scalar trigonometric polynomial on a torus.

    Coefficients live on the symmetric window [-W, W]^d; index n maps to
    array position n + W per axis.
    """

    def __init__(self, geometry: TorusGeometry, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.ndim != geometry.dim or len(set(coeffs.shape)) != 1 or coeffs.shape[0] % 2 != 1:
            raise ValueError("coefficients must fill an odd symmetric window per axis")
        self.geometry = geometry
        self.window = coeffs.shape[0] // 2
        self.coeffs = coeffs

    @classmethod
    def zero(cls, geometry: TorusGeometry, window: int = 0) -> "TrigPoly":
        return cls(geometry, np.zeros((2 * window + 1,) * geometry.dim, dtype=complex))

    @classmethod
    def from_terms(cls, geometry: TorusGeometry, terms: dict) -> "TrigPoly":
        """Build from {mode tuple: coefficient}; e.g. {(1, 0): 0.5} on T^2."""
        if not terms:
            return cls.zero(geometry)
        window = max(max(abs(int(c)) for c in mode) for mode in terms)
        out = cls.zero(geometry, window)
        for mode, value in terms.items():
            idx = tuple(int(m) + window for m in mode)
            out.coeffs[idx] += value
        return out

    @classmethod
    def constant(cls, geometry: TorusGeometry, value=1.0) -> "TrigPoly":
        return cls.from_terms(geometry, {(0,) * geometry.dim: value})

    @classmethod
    def cosine(cls, geometry: TorusGeometry, axis: int, amplitude=1.0) -> "TrigPoly":
        mode = [0] * geometry.dim
        mode[axis] = 1
        plus, minus = tuple(mode), tuple(-m for m in mode)
        return cls.from_terms(geometry, {plus: 0.5 * amplitude, minus: 0.5 * amplitude})

    @classmethod
    def sine(cls, geometry: TorusGeometry, axis: int, amplitude=1.0) -> "TrigPoly":
        mode = [0] * geometry.dim
        mode[axis] = 1
        plus, minus = tuple(mode), tuple(-m for m in mode)
        return cls.from_terms(geometry, {plus: -0.5j * amplitude, minus: 0.5j * amplitude})

    @property
    def support(self) -> int:
        """Largest |n_mu| carrying a nonzero coefficient."""
        nz = np.argwhere(self.coeffs != 0)
        if nz.size == 0:
            return 0
        return int(np.max(np.abs(nz - self.window)))

    def term_items(self):
        for idx in np.argwhere(self.coeffs != 0):
            mode = tuple(int(i) - self.window for i in idx)
            yield mode, self.coeffs[tuple(idx)]

    def sample(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.geometry.dim
        n = np.arange(-self.window, self.window + 1)
        phases = [
            np.exp(2j * np.pi / self.geometry.lengths[mu] * np.outer(n, points[:, mu]))
            for mu in range(d)
        ]
        spec = ",".join(f"{_EINSUM_AXES[mu]}p" for mu in range(d))
        return np.einsum(f"{_EINSUM_AXES[:d]},{spec}->p", self.coeffs, *phases)

    def derivative(self, mu: int) -> "TrigPoly":
        n = np.arange(-self.window, self.window + 1)
        shape = [1] * self.geometry.dim
        shape[mu] = len(n)
        factor = (2j * np.pi / self.geometry.lengths[mu]) * n.reshape(shape)
        return TrigPoly(self.geometry, self.coeffs * factor)

    def conjugate(self) -> "TrigPoly":
        return TrigPoly(self.geometry, np.conj(self.coeffs[(slice(None, None, -1),) * self.geometry.dim]))

    @property
    def is_real(self) -> bool:
        return bool(np.allclose(self.conjugate().coeffs, self.coeffs, atol=1e-14))

    def mean(self) -> complex:
        """Average over the torus, i.e. the zero-mode coefficient."""
        return complex(self.coeffs[(self.window,) * self.geometry.dim])

    def integral(self) -> complex:
        return self.geometry.volume * self.mean()

    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        w = max(self.window, other.window)
        return TrigPoly(self.geometry, _pad_window(self.coeffs, w) + _pad_window(other.coeffs, w))

    def __sub__(self, other: "TrigPoly") -> "TrigPoly":
        return self + (-1.0) * other

    def __rmul__(self, scalar) -> "TrigPoly":
        return TrigPoly(self.geometry, scalar * self.coeffs)

    def __mul__(self, other):
        if not isinstance(other, TrigPoly):
            return self.__rmul__(other)
        return TrigPoly(self.geometry, fftconvolve(self.coeffs, other.coeffs))

    def max_abs_coeff(self) -> float:
        return float(np.max(np.abs(self.coeffs)))


def _pad_window(coeffs: np.ndarray, window: int) -> np.ndarray:
    have = coeffs.shape[0] // 2
    if have == window:
        return coeffs
    pad = window - have
    return np.pad(coeffs, [(pad, pad)] * coeffs.ndim)


@dataclass(frozen=True)
class ModeLattice:
    """Truncated momentum lattice for spinor fields.

    ``ranges[mu] = (lo, hi)`` bounds the integer label n_mu inclusively;
    mode count per axis is 2K+1 (periodic) or 2K+2 (antiperiodic).
    """

    geometry: TorusGeometry
    cutoff: int
    offsets: tuple
    ranges: tuple = field(init=False)
    modes: np.ndarray = field(init=False)
    kvecs: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError(f"cutoff K={self.cutoff} must be >= 1")
        offsets = tuple(float(o) for o in self.offsets)
        if len(offsets) != self.geometry.dim or any(o not in (0.0, 0.5) for o in offsets):
            raise ValueError(f"offsets must be d values in {{0, 1/2}}, got {self.offsets}")
        object.__setattr__(self, "offsets", offsets)
        ranges = tuple(
            (-self.cutoff - 1, self.cutoff) if o == 0.5 else (-self.cutoff, self.cutoff)
            for o in offsets
        )
        object.__setattr__(self, "ranges", ranges)
        axes = [np.arange(lo, hi + 1) for lo, hi in ranges]
        mesh = np.meshgrid(*axes, indexing="ij")
        modes = np.stack([m.ravel() for m in mesh], axis=-1)
        modes.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        scale = 2.0 * np.pi / np.asarray(self.geometry.lengths)
        kvecs = (modes + np.asarray(offsets)) * scale
        kvecs.setflags(write=False)
        object.__setattr__(self, "kvecs", kvecs)

    @property
    def counts(self) -> tuple:
        return tuple(hi - lo + 1 for lo, hi in self.ranges)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    def mode_index(self, n) -> int:
        idx = 0
        for (lo, hi), nv in zip(self.ranges, n):
            if not lo <= nv <= hi:
                raise KeyError(f"mode {tuple(n)} outside lattice")
            idx = idx * (hi - lo + 1) + (int(nv) - lo)
        return idx

    def reflection_permutation(self) -> np.ndarray:
        """Index permutation realising k -> -k (n -> -n - 2*delta)."""
        carry = np.array([int(2 * o) for o in self.offsets])
        reflected = -self.modes - carry
        strides = np.cumprod((1,) + self.counts[::-1][:-1])[::-1]
        los = np.array([lo for lo, _ in self.ranges])
        return ((reflected - los) * strides).sum(axis=1)

    def enlarged(self, extra: int) -> "ModeLattice":
        return ModeLattice(self.geometry, self.cutoff + extra, self.offsets)


def build_mode_lattice(geometry: TorusGeometry, cutoff: int, offsets=None) -> ModeLattice:
    """Enumerate the truncated momentum lattice.

    Defaults to the antiperiodic spin structure (offsets 1/2 everywhere),
    which makes the free Dirac operator invertible.
    """
    if offsets is None:
        offsets = (0.5,) * geometry.dim
    return ModeLattice(geometry, cutoff, tuple(offsets))


class SpinorField:
    """Plane-wave coefficients of a section of the (trivial) spinor bundle."""

    def __init__(self, lattice: ModeLattice, clifford: CliffordModule, coeffs: np.ndarray):
        if clifford.dim != lattice.geometry.dim:
            raise ValueError("Clifford module dimension does not match the lattice")
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape != (lattice.n_modes, clifford.spinor_dim):
            raise ValueError(
                f"coefficient shape {coeffs.shape} != {(lattice.n_modes, clifford.spinor_dim)}"
            )
        self.lattice = lattice
        self.clifford = clifford
        self.coeffs = coeffs

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def sample(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        phases = np.exp(1j * self.lattice.kvecs @ points.T)  # (modes, npts)
        return np.einsum("ms,mp->ps", self.coeffs, phases)


def random_spinor(lattice: ModeLattice, cm: CliffordModule, rng) -> SpinorField:
    shape = (lattice.n_modes, cm.spinor_dim)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return SpinorField(lattice, cm, c / np.linalg.norm(c))


def build_free_dirac(lattice: ModeLattice, cm: CliffordModule) -> OperatorHandle:
    """Block-diagonal free Dirac operator, gamma^mu k_mu per mode."""
    if cm.dim != lattice.geometry.dim:
        raise ValueError("Clifford module dimension does not match the lattice")
    s = cm.spinor_dim
    gammas = np.stack(cm.gammas)
    blocks = np.einsum("md,dab->mab", lattice.kvecs, gammas)
    dim = lattice.n_modes * s

    def apply(v):
        return np.einsum("mab,mb->ma", blocks, v.reshape(lattice.n_modes, s)).reshape(-1)

    handle = OperatorHandle(dim, apply=apply, hermitian=True, label="free_dirac")
    handle.mode_blocks = blocks
    return handle


def build_charge_conjugation(lattice: ModeLattice, cm: CliffordModule) -> AntilinearHandle:
    """Charge conjugation (J psi)(k) = C conj(psi(-k)) on the truncated lattice."""
    perm = lattice.reflection_permutation()
    if np.any(perm < 0) or np.any(perm >= lattice.n_modes):
        raise ValueError("lattice is not symmetric under k -> -k")
    s = cm.spinor_dim
    C = cm.conj_matrix

    def apply(v):
        mat = np.conj(v.reshape(lattice.n_modes, s))
        out = np.empty_like(mat)
        out[perm] = mat @ C.T
        return out.reshape(-1)

    return AntilinearHandle(lattice.n_modes * s, apply, label="charge_conjugation")


def _shift_plan(lattice: ModeLattice, terms):
    """Slice plan for sum_m c_m * (shift by m) compressed to the lattice."""
    plan = []
    for mode, coef in terms:
        src, dst = [], []
        ok = True
        for (lo, hi), m in zip(lattice.ranges, mode):
            a, b = max(lo, lo - m), min(hi, hi - m)
            if a > b:
                ok = False
                break
            src.append(slice(a - lo, b - lo + 1))
            dst.append(slice(a + m - lo, b + m - lo + 1))
        if ok:
            plan.append((coef, tuple(src), tuple(dst)))
    return plan


def build_multiplication_operator(
    f: TrigPoly, lattice: ModeLattice, cm: CliffordModule, policy: str = "project"
) -> OperatorHandle:
    """Compression P_K M_f P_K of pointwise multiplication by f.

    With policy "project" a coefficient support exceeding the lattice cutoff
    is rejected (the compressed operator would mostly consist of zero rows);
    pass policy "enlarge" after embedding vectors into a larger lattice when
    exact compositions are required.
    """
    if policy not in ("project", "enlarge"):
        raise ValueError(f"unknown policy {policy!r}")
    if f.support > lattice.cutoff and policy == "project":
        raise ValueError(
            f"coefficient support {f.support} exceeds the lattice cutoff "
            f"{lattice.cutoff}; use policy='enlarge' on an enlarged lattice"
        )
    s = cm.spinor_dim
    plan = _shift_plan(lattice, f.term_items())
    shape = lattice.counts + (s,)

    def apply(v):
        grid = v.reshape(shape)
        out = np.zeros_like(grid)
        for coef, src, dst in plan:
            out[dst] += coef * grid[src]
        return out.reshape(-1)

    return OperatorHandle(
        lattice.n_modes * s, apply=apply, hermitian=f.is_real, label=f"mult[{f.support}]"
    )


def embed_spinor(field: SpinorField, big: ModeLattice) -> SpinorField:
    """Zero-pad coefficients into a larger lattice with the same offsets."""
    small = field.lattice
    if small.offsets != big.offsets or big.cutoff < small.cutoff:
        raise ValueError("target lattice must enlarge the source lattice")
    out = np.zeros((big.n_modes, field.clifford.spinor_dim), dtype=complex)
    sl = tuple(
        slice(lo_s - lo_b, lo_s - lo_b + (hi_s - lo_s + 1))
        for (lo_s, hi_s), (lo_b, _) in zip(small.ranges, big.ranges)
    )
    view = out.reshape(big.counts + (field.clifford.spinor_dim,))
    view[sl] = field.coeffs.reshape(small.counts + (field.clifford.spinor_dim,))
    return SpinorField(big, field.clifford, out)


def project_spinor(field: SpinorField, small: ModeLattice) -> SpinorField:
    big = field.lattice
    if small.offsets != big.offsets or big.cutoff < small.cutoff:
        raise ValueError("source lattice must enlarge the target lattice")
    sl = tuple(
        slice(lo_s - lo_b, lo_s - lo_b + (hi_s - lo_s + 1))
        for (lo_s, hi_s), (lo_b, _) in zip(small.ranges, big.ranges)
    )
    view = field.coeffs.reshape(big.counts + (field.clifford.spinor_dim,))
    return SpinorField(small, field.clifford, view[sl].reshape(small.n_modes, -1).copy())
