import numpy as np
import pytest

from helpers.Exceptions import ConstraintViolationError, NotCoassociativeError, PreconditionError
from helpers.G2Helper import (
    CURVATURE_IDENTITIES,
    TANGENT,
    ConstrainedExtrinsicSample,
    G2Checker,
    G2Structure,
    coassoc_frame,
    curvature_identity_residual,
    curvature_kernel,
    encapsulated_residual,
    permutation_sign,
    q_equals_qtilde,
)
from helpers.StabilityHelper import ANTI_SELF_DUAL


@pytest.fixture(scope="module")
def structure() -> G2Structure:
    return G2Structure()


def test_permutation_sign():
    assert permutation_sign([0, 1, 2]) == 1
    assert permutation_sign([1, 0, 2]) == -1
    assert permutation_sign([2, 0, 1]) == 1


def test_star_phi_is_the_hodge_dual(structure):
    assert structure.hodge_residual() < 1e-12
    assert structure.star_phi[1, 3, 4, 6] == 1.0
    assert structure.star_phi[1, 2, 4, 6] == 0.0


def test_cross_product_is_orthogonal_with_lagrange_norm(structure, rng):
    X = rng.standard_normal((50, 7))
    Y = rng.standard_normal((50, 7))
    Z = structure.cross(X, Y)
    np.testing.assert_allclose(np.sum(Z * X, -1), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.sum(Z * Y, -1), 0.0, atol=1e-12)
    expected = np.sum(X**2, -1) * np.sum(Y**2, -1) - np.sum(X * Y, -1) ** 2
    np.testing.assert_allclose(np.sum(Z**2, -1), expected, rtol=1e-12)


def test_model_plane_is_coassociative(structure):
    model = np.eye(7)
    frame = coassoc_frame(structure, model[TANGENT], model[4], model[0])
    assert frame.residual < 1e-12
    np.testing.assert_allclose(frame.normal_forms(structure), ANTI_SELF_DUAL, atol=1e-12)


def test_adapted_frames_for_random_directions(structure, rng):
    model = np.eye(7)
    for _ in range(10):
        e1 = np.concatenate([rng.standard_normal(4), np.zeros(3)])
        e5 = np.concatenate([np.zeros(4), rng.standard_normal(3)])
        frame = coassoc_frame(structure, model[TANGENT], e5, e1)
        assert frame.residual < 1e-10
        np.testing.assert_allclose(frame.frame[0], e1 / np.linalg.norm(e1))


def test_associative_directions_are_rejected(structure):
    model = np.eye(7)
    with pytest.raises(NotCoassociativeError):
        coassoc_frame(structure, model[[0, 1, 4, 5]], model[2], model[0])


def test_frame_directions_must_fit_the_plane(structure):
    model = np.eye(7)
    with pytest.raises(PreconditionError):
        coassoc_frame(structure, model[TANGENT], model[0], model[1])
    with pytest.raises(PreconditionError):
        coassoc_frame(structure, model[TANGENT], model[4], model[5])
    with pytest.raises(PreconditionError):
        coassoc_frame(structure, model[:3], model[4], model[0])


def test_curvature_kernel_has_the_holonomy_dimension():
    assert curvature_kernel().shape[1] == 77


def test_random_samples_satisfy_their_constraints(structure, rng):
    for _ in range(5):
        sample = ConstrainedExtrinsicSample.random(rng)
        sample.validate()
        assert encapsulated_residual(structure, sample.h) < 1e-12
        v = rng.standard_normal(3)
        assert q_equals_qtilde(structure, sample, v / np.linalg.norm(v)) < 1e-9


def test_broken_samples_are_reported(rng):
    sample = ConstrainedExtrinsicSample.random(rng)
    h = sample.h.copy()
    h[0, 0, 0] += 1.0
    with pytest.raises(ConstraintViolationError):
        ConstrainedExtrinsicSample(h, sample.R).validate()


def test_q_needs_a_normal_direction(structure, rng):
    sample = ConstrainedExtrinsicSample.random(rng)
    with pytest.raises(PreconditionError):
        q_equals_qtilde(structure, sample, np.eye(7)[0])


def test_checker_passes_every_identity(log):
    checks = G2Checker(log).run(samples=20, seed=3)
    failed = [check for check in checks if not check.passed]
    assert not failed, failed
    assert {"Q equals Qtilde", "coassociative frame", "hodge dual of phi"} <= {check.name for check in checks}


def test_kernel_tensors_satisfy_the_curvature_identities(rng):
    kernel = curvature_kernel()
    R = (kernel @ rng.standard_normal(kernel.shape[1])).reshape(7, 7, 7, 7)
    assert np.max(np.abs(curvature_identity_residual(R))) < 1e-10
    round_sphere = np.einsum("ac,bd->abcd", np.eye(7), np.eye(7)) - np.einsum("ad,bc->abcd", np.eye(7), np.eye(7))
    assert np.max(np.abs(curvature_identity_residual(round_sphere))) > 0.5


def test_curvature_identities_are_contractions_of_phi(structure):
    matched = set()
    for identity in CURVATURE_IDENTITIES:
        form = np.zeros((7, 7))
        for sign, x, y in identity:
            form[x - 1, y - 1] += sign
            form[y - 1, x - 1] -= sign
        k = next(k for k in range(7) if np.any(form * structure.phi[k] != 0))
        assert np.allclose(form, structure.phi[k]) or np.allclose(form, -structure.phi[k])
        matched.add(k)
    assert matched == set(range(7))
