"""Euclidean Clifford algebra data for even dimensions 2 and 4.

Fixed matrix conventions (any unitarily equivalent choice gives the same
spectra; fixing one makes every downstream test bit-reproducible):

* d=2: gamma^1 = sigma_1, gamma^2 = sigma_2, chirality = sigma_3,
  conjugation matrix C = sigma_2.
* d=4: chiral basis, gamma^j = [[0, -i sigma_j], [i sigma_j, 0]] for
  j = 1,2,3 and gamma^4 = [[0, 1], [1, 0]], C = gamma^2 gamma^4.

The chirality operator is (-i)^(d/2) gamma^1 ... gamma^d, which is Hermitian
with square one in both dimensions.  Charge conjugation acts antilinearly as
psi -> C conj(psi); the sign triple (eps, eps', eps'') is (-1, +1, +1) in
dimension 4 and (-1, +1, -1) in dimension 2 (KO-dimensions 4 and 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA1 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA2 = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA3 = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CliffordModule:
    """Gamma matrices, chirality and charge conjugation for one even dimension.

    Immutable after construction; safe for concurrent read access.
    """

    dim: int
    spinor_dim: int
    gammas: tuple
    chirality: np.ndarray
    conj_matrix: np.ndarray
    ko_signs: tuple  # (eps, eps', eps'')

    def conjugate_spinor(self, psi: np.ndarray) -> np.ndarray:
        """Antilinear charge conjugation on a bare spinor: C conj(psi)."""
        return self.conj_matrix @ np.conj(psi)


def build_clifford(d: int) -> CliffordModule:
    """Construct the Clifford module for d in {2, 4}.

    Raises:
        ValueError: for any other dimension.
    """
    if d == 2:
        gammas = (SIGMA1, SIGMA2)
        conj = SIGMA2
        signs = (-1, 1, -1)
    elif d == 4:
        zero = np.zeros((2, 2), dtype=complex)
        eye = np.eye(2, dtype=complex)

        def chiral(block):
            return np.block([[zero, -1j * block], [1j * block, zero]])

        g1, g2, g3 = chiral(SIGMA1), chiral(SIGMA2), chiral(SIGMA3)
        g4 = np.block([[zero, eye], [eye, zero]])
        gammas = (g1, g2, g3, g4)
        conj = g2 @ g4
        signs = (-1, 1, 1)
    else:
        raise ValueError(
            f"unsupported dimension d={d}; only the even dimensions 2 and 4 "
            "are implemented"
        )

    chirality = np.linalg.multi_dot(gammas) if len(gammas) > 2 else gammas[0] @ gammas[1]
    chirality = (-1j) ** (d // 2) * chirality
    return CliffordModule(
        dim=d,
        spinor_dim=2 ** (d // 2),
        gammas=tuple(_frozen(g) for g in gammas),
        chirality=_frozen(chirality),
        conj_matrix=_frozen(conj),
        ko_signs=signs,
    )


def verify_clifford(cm: CliffordModule) -> dict:
    """Max-norm residual of every defining identity of the module.

    Returns a dict mapping identity names to floats.  All residuals are
    <= 1e-14 for modules produced by build_clifford; the report is purely
    informational and never raises.
    """
    d, s = cm.dim, cm.spinor_dim
    eye = np.eye(s)
    eps, eps_p, eps_pp = cm.ko_signs

    def mx(a):
        return float(np.max(np.abs(a)))

    res = {}
    anti = 0.0
    for mu in range(d):
        for nu in range(d):
            g = cm.gammas[mu] @ cm.gammas[nu] + cm.gammas[nu] @ cm.gammas[mu]
            anti = max(anti, mx(g - 2.0 * (mu == nu) * eye))
    res["anticommutator"] = anti
    res["gamma_hermitian"] = max(mx(g - g.conj().T) for g in cm.gammas)
    res["gamma_unitary"] = max(mx(g @ g.conj().T - eye) for g in cm.gammas)

    G = cm.chirality
    res["chirality_hermitian"] = mx(G - G.conj().T)
    res["chirality_squares_to_one"] = mx(G @ G - eye)
    res["chirality_anticommutes"] = max(mx(G @ g + g @ G) for g in cm.gammas)

    C = cm.conj_matrix
    res["conj_unitary"] = mx(C @ C.conj().T - eye)
    res["conj_squares_to_eps"] = mx(C @ np.conj(C) - eps * eye)
    res["conj_flips_gamma"] = max(
        mx(C @ np.conj(g) @ C.conj().T + g) for g in cm.gammas
    )
    res["conj_grading_sign"] = mx(C @ np.conj(G) @ C.conj().T - eps_pp * G)
    return res
