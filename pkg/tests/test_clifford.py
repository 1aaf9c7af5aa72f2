import numpy as np
import pytest

from nctorus.clifford import SIGMA1, SIGMA2, SIGMA3, build_clifford, verify_clifford


@pytest.mark.parametrize("d", [2, 4])
def test_all_residuals_tiny(d):
    res = verify_clifford(build_clifford(d))
    assert res, "empty residual report"
    for name, val in res.items():
        assert val <= 1e-14, f"{name} residual {val}"


def test_d2_matrices_are_paulis():
    cm = build_clifford(2)
    assert np.array_equal(cm.gammas[0], SIGMA1)
    assert np.array_equal(cm.gammas[1], SIGMA2)
    assert np.array_equal(cm.chirality, SIGMA3)


def test_ko_signs():
    assert build_clifford(4).ko_signs == (-1, 1, 1)
    assert build_clifford(2).ko_signs == (-1, 1, -1)


def test_d4_conjugation_squares_to_minus_one():
    cm = build_clifford(4)
    psi = np.arange(4) + 1j * np.arange(4, 8)
    assert np.allclose(cm.conjugate_spinor(cm.conjugate_spinor(psi)), -psi)


def test_d4_chirality_is_gamma_product_up_to_phase():
    # Gamma * gamma^1 gamma^2 gamma^3 gamma^4 must be a unimodular multiple
    # of the identity.
    cm = build_clifford(4)
    prod = cm.chirality @ np.linalg.multi_dot(cm.gammas)
    phase = prod[0, 0]
    assert abs(abs(phase) - 1.0) < 1e-14
    assert np.allclose(prod, phase * np.eye(4), atol=1e-14)


def test_unsupported_dimension_rejected():
    for d in (1, 3, 5, 6, 0, -2):
        with pytest.raises(ValueError, match="unsupported dimension"):
            build_clifford(d)


def test_corrupted_gamma_detected():
    cm = build_clifford(4)
    gammas = [g.copy() for g in cm.gammas]
    gammas[0][0, 0] += 1e-3
    corrupted = type(cm)(
        dim=cm.dim,
        spinor_dim=cm.spinor_dim,
        gammas=tuple(gammas),
        chirality=cm.chirality,
        conj_matrix=cm.conj_matrix,
        ko_signs=cm.ko_signs,
    )
    res = verify_clifford(corrupted)
    assert res["anticommutator"] >= 1e-3


def test_module_is_immutable():
    cm = build_clifford(2)
    with pytest.raises(ValueError):
        cm.gammas[0][0, 0] = 5.0
