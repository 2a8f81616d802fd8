import numpy as np
import pytest
from scipy.linalg import svd

from chaosfilt.errors import DimensionError
from chaosfilt.observations import (NoiseModel, ObservationOperator, adaptive_H, build_fixed,
                                    build_identity, build_P, build_P24, build_P36, complement,
                                    observe, splitmix64)


def test_P_pattern_small():
    op = build_P(6)
    np.testing.assert_array_equal(np.diag(op.projector()), [1, 1, 0, 1, 1, 0])
    assert op.M == 4 and op.J == 6


def test_P36_and_P24_patterns():
    np.testing.assert_array_equal(np.diag(build_P36(10).projector()), [1, 1, 0, 1, 0] * 2)
    np.testing.assert_array_equal(np.diag(build_P24(10).projector()), [1, 0, 0, 1, 0, 0, 1, 0, 0, 1])


@pytest.mark.parametrize("kind,rank", [("identity", 60), ("P", 40), ("P36", 36), ("P24", 24)])
def test_fixed_ranks_for_J60(kind, rank):
    op = build_fixed(kind, 60)
    P = op.projector()
    Q = complement(op)
    assert op.M == rank
    np.testing.assert_array_equal(P @ P, P)
    np.testing.assert_array_equal(P.T, P)
    np.testing.assert_array_equal(P + Q, np.eye(60))
    np.testing.assert_array_equal(P @ Q, np.zeros((60, 60)))
    np.testing.assert_array_equal(op.H @ op.H.T, np.eye(rank))


@pytest.mark.parametrize("builder,J", [(build_P, 10), (build_P36, 12), (build_P24, 15)])
def test_incompatible_dimension(builder, J):
    with pytest.raises(ValueError):
        builder(J)


def test_operator_call_and_shape_check():
    op = build_P(6)
    v = np.arange(6.0)
    np.testing.assert_array_equal(op(v), [0, 1, 3, 4])
    with pytest.raises(DimensionError):
        op(np.ones(5))
    with pytest.raises(DimensionError):
        ObservationOperator(np.ones((3, 2)))


def random_L(J, seed):
    return np.random.default_rng(seed).standard_normal((J, J))


@pytest.mark.parametrize("M", [1, 5, 12])
def test_adaptive_matches_right_singular_vectors(M):
    L = random_L(12, M)
    op = adaptive_H(L, M)
    np.testing.assert_allclose(op.H @ op.H.T, np.eye(M), atol=1e-12)
    # oracle: leading right singular vectors of L span the same subspace
    _, s, Vt = svd(L)
    ref = Vt[:M].T @ Vt[:M]
    np.testing.assert_allclose(op.projector(), ref, atol=1e-10)
    assert np.all(np.diff(op.eigenvalues) >= 0)
    np.testing.assert_allclose(op.eigenvalues[::-1], s ** 2, rtol=0, atol=1e-12 * s[0] ** 2)


def test_adaptive_rows_ordered_by_growth():
    L = np.diag([1.0, 5.0, 2.0, 4.0])
    op = adaptive_H(L, 2)
    np.testing.assert_allclose(np.abs(op.H), [[0, 0, 0, 1], [0, 1, 0, 0]])
    assert np.all(op.H.max(axis=1) > 0)  # canonical sign


def test_adaptive_degenerate_cut_is_flagged():
    assert adaptive_H(np.eye(6), 3).degenerate
    assert not adaptive_H(np.diag([1.0, 2, 3, 4, 5, 6]), 3).degenerate
    assert not adaptive_H(np.eye(6), 6).degenerate


def test_adaptive_rejects_bad_rank():
    with pytest.raises(ValueError):
        adaptive_H(np.eye(4), 0)
    with pytest.raises(ValueError):
        adaptive_H(np.eye(4), 5)


def test_csv_round_trip_exact(tmp_path):
    op = adaptive_H(random_L(9, 0), 4)
    back = ObservationOperator.from_csv(op.to_csv())
    assert np.array_equal(back.H, op.H) and back.kind == "adaptive"
    path = tmp_path / "H.csv"
    build_P(9).to_csv(path)
    fixed = ObservationOperator.from_csv(str(path))
    np.testing.assert_array_equal(fixed.projector(), build_P(9).projector())
    assert fixed.basis_hash() == build_P(9).basis_hash()


def test_splitmix64_reference_value():
    # first output of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_noise_is_pure_function_of_seed_realization_step():
    noise = NoiseModel(0.1, seed=7)
    a = noise.draw(5, k=3, realization=2)
    assert np.array_equal(a, noise.draw(5, k=3, realization=2))
    assert not np.array_equal(a, noise.draw(5, k=4, realization=2))
    assert not np.array_equal(a, noise.draw(5, k=3, realization=1))
    assert not np.array_equal(a, NoiseModel(0.1, seed=8).draw(5, k=3, realization=2))


def test_noise_moments():
    eps = 0.3
    noise = NoiseModel(eps, seed=0)
    x = np.concatenate([noise.draw(40, k, r) for k in range(250) for r in range(4)])
    n = x.size
    assert abs(x.mean()) < 5 * eps / np.sqrt(n)
    # sample variance: relative std about sqrt(2/n)
    assert abs(x.var() / eps ** 2 - 1) < 5 * np.sqrt(2 / n)


def test_observe():
    op = build_identity(4)
    v = np.arange(4.0)
    np.testing.assert_array_equal(observe(op, v, None, 1), v)
    np.testing.assert_array_equal(observe(op, v, NoiseModel(0.0), 1), v)
    noise = NoiseModel(0.5, seed=1)
    np.testing.assert_array_equal(observe(op, v, noise, 2, 3), v + noise.draw(4, 2, 3))


def test_negative_epsilon_rejected():
    with pytest.raises(ValueError):
        NoiseModel(-1.0)


def test_adaptive_overflow_is_numerical_error():
    from chaosfilt.errors import NumericalError
    with pytest.raises(NumericalError):
        adaptive_H(np.full((4, 4), 1e200), 2)
