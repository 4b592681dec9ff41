import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp

from ietidp.linalg import (
    LinearOperator,
    SingularMatrixError,
    factorize,
    from_triplets,
    solve,
    sparse_matvec,
    sparse_transpose_matvec,
    write_matrix_market,
)
from oracles import gauss_elimination_solve


def random_spd(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    return sp.csr_matrix(A + A.T + n * np.eye(n))


def test_identity_solve():
    f = factorize(sp.identity(3, format="csr"), "spd")
    assert np.allclose(f.solve(np.array([1.0, 2.0, 3.0])), [1, 2, 3])


def test_small_spd_hand_case():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
    f = factorize(A, "spd")
    assert np.allclose(f.solve(np.array([3.0, 3.0])), [1.0, 1.0])


def test_spd_against_elimination_oracle():
    A = random_spd(50, seed=0)
    rng = np.random.default_rng(1)
    b = rng.standard_normal(50)
    x = factorize(A, "spd").solve(b)
    x_ref = gauss_elimination_solve(A.toarray(), b)
    assert np.linalg.norm(x - x_ref) <= 1e-10 * np.linalg.norm(x_ref)


def test_solve_zero_rhs():
    f = factorize(sp.identity(2, format="csr"), "spd")
    assert np.array_equal(f.solve(np.zeros(2)), np.zeros(2))


def test_saddle_hand_case():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 0.0]]))
    f = factorize(A, "symmetric-indefinite")
    assert np.allclose(f.solve(np.array([2.0, 1.0])), [1.0, 1.0])


def test_multiple_rhs_block_solve():
    A = random_spd(20, seed=2)
    rng = np.random.default_rng(3)
    B = rng.standard_normal((20, 4))
    X = factorize(A, "spd").solve(B)
    X_ref = gauss_elimination_solve(A.toarray(), B)
    assert np.abs(X - X_ref).max() <= 1e-10


def test_backward_error_spd():
    for seed in range(4):
        A = random_spd(30, seed=seed)
        rng = np.random.default_rng(100 + seed)
        b = rng.standard_normal(30)
        x = factorize(A, "spd").solve(b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_factorize_idempotent_effect():
    A = random_spd(25, seed=7)
    b = np.random.default_rng(8).standard_normal(25)
    x1 = factorize(A, "spd").solve(b)
    x2 = factorize(A, "spd").solve(b)
    assert np.linalg.norm(x1 - x2) <= 1e-14 * np.linalg.norm(x1)


def test_singular_matrix_detected():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularMatrixError, match="singular"):
        factorize(A, "spd")


def test_near_singular_pivot_detected():
    # stiffness-like PSD matrix with the constant vector in its kernel
    A = sp.csr_matrix(np.array([[1.0, -1.0, 0.0],
                                [-1.0, 2.0, -1.0],
                                [0.0, -1.0, 1.0]]))
    with pytest.raises(SingularMatrixError):
        factorize(A, "symmetric-indefinite")


def test_factorize_rejects_nonsquare():
    with pytest.raises(ValueError):
        factorize(sp.csr_matrix(np.ones((2, 3))), "spd")


def test_solve_dimension_mismatch():
    f = factorize(sp.identity(3, format="csr"), "spd")
    with pytest.raises(ValueError):
        f.solve(np.ones(4))


def test_matvec_zero_and_identity():
    Z = sp.csr_matrix((3, 3))
    assert np.array_equal(sparse_matvec(Z, np.ones(3)), np.zeros(3))
    I = sp.identity(4, format="csr")
    x = np.arange(4.0)
    assert np.array_equal(sparse_matvec(I, x), x)


def test_matvec_against_dense():
    rng = np.random.default_rng(5)
    M = sp.random(20, 30, density=0.3, random_state=5, format="csr")
    x = rng.standard_normal(30)
    y = rng.standard_normal(20)
    assert np.allclose(sparse_matvec(M, x), M.toarray() @ x, atol=1e-14)
    assert np.allclose(sparse_transpose_matvec(M, y), M.toarray().T @ y, atol=1e-14)


def test_transpose_matvec_bit_for_bit():
    M = sp.random(15, 12, density=0.4, random_state=9, format="csr")
    x = np.random.default_rng(10).standard_normal(15)
    assert np.array_equal(sparse_transpose_matvec(M, x), sparse_matvec(M.T.tocsr(), x))


def test_matvec_dimension_mismatch():
    M = sp.identity(3, format="csr")
    with pytest.raises(ValueError):
        sparse_matvec(M, np.ones(4))
    with pytest.raises(ValueError):
        sparse_transpose_matvec(M, np.ones(4))


def test_from_triplets_sums_duplicates():
    M = from_triplets(2, 2, [0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0])
    assert M[0, 0] == 3.0
    assert M[1, 1] == 5.0
    assert M.nnz == 2


def test_symmetric_roundtrip_transpose():
    A = random_spd(10, seed=11)
    assert (A - A.T).nnz == 0 or np.abs((A - A.T).toarray()).max() == 0.0


def test_matrix_market_dump(tmp_path):
    M = from_triplets(3, 2, [0, 2, 1], [1, 0, 1], [1.5, -2.0, 0.25])
    path = tmp_path / "m.mtx"
    write_matrix_market(M, path)
    text = path.read_text()
    assert text.startswith("%%MatrixMarket matrix coordinate real general\n")
    back = scipy.io.mmread(path).tocsr()
    assert np.abs((back - M).toarray()).max() == 0.0


def test_linear_operator_contract():
    op = LinearOperator(3, lambda x: 2.0 * x)
    assert np.allclose(op(np.ones(3)), 2.0)
    assert np.allclose(op.to_dense(), 2.0 * np.eye(3))
    with pytest.raises(ValueError):
        op(np.ones(4))
