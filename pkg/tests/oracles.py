"""Independent reference implementations used only by the tests.

Hamiltonians are assembled from Kronecker products of Pauli matrices with
bonds listed by hand, and diagonalised with ``numpy.linalg.eigh``.  None of
this code touches the package's matrix-element routines.

Basis convention shared with the package: state index ``b = sum_i bit_i 2^i``
with bit 1 meaning spin up (``Z = +1``).
"""

from functools import reduce

import numpy as np

# single-site operators in the (bit 0, bit 1) = (down, up) basis
Z = np.diag([-1.0, 1.0])
X = np.array([[0.0, 1.0], [1.0, 0.0]])
Y = np.array([[0.0, -1j], [1j, 0.0]])
I2 = np.eye(2)


def site_op(op, i, n):
    # site 0 is the least significant bit, so it sits last in the product
    ops = [I2] * n
    ops[n - 1 - i] = op
    return reduce(np.kron, ops)


def chain_bonds(L, periodic):
    bonds = [(i, i + 1) for i in range(L - 1)]
    if periodic and L > 2:
        bonds.append((L - 1, 0))
    return bonds


def square_bonds(Ly, Lx, periodic):
    bonds = set()
    for y in range(Ly):
        for x in range(Lx):
            s = y * Lx + x
            for dy, dx in ((0, 1), (1, 0)):
                yy, xx = y + dy, x + dx
                if not periodic and (yy >= Ly or xx >= Lx):
                    continue
                t = (yy % Ly) * Lx + (xx % Lx)
                if t != s:
                    bonds.add((min(s, t), max(s, t)))
    return sorted(bonds)


def ising_dense(n, bonds, J, h):
    H = np.zeros((2**n, 2**n))
    for i, j in bonds:
        H -= J * site_op(Z, i, n) @ site_op(Z, j, n)
    for i in range(n):
        H -= h * site_op(X, i, n)
    return H


def xxz_dense(n, bonds, J, J_perp):
    H = np.zeros((2**n, 2**n), dtype=complex)
    for i, j in bonds:
        H -= J * site_op(Z, i, n) @ site_op(Z, j, n)
        H -= J_perp * (site_op(X, i, n) @ site_op(X, j, n) + site_op(Y, i, n) @ site_op(Y, j, n))
    assert np.allclose(H.imag, 0)
    return H.real


def ground_state(H, states=None):
    """``(E0, phi0)`` with ``phi0 > 0`` and unit norm, optionally on a sub-block."""
    if states is not None:
        H = H[np.ix_(states, states)]
    w, v = np.linalg.eigh(H)
    phi = v[:, 0] * np.sign(v[:, 0].sum())
    return float(w[0]), phi


def sector_states(n, m):
    return np.array([b for b in range(2**n) if 2 * bin(b).count("1") - n == m])


def ising_sparse(n, bonds, J, h):
    import scipy.sparse as sp

    def op(m, i):
        ops = [sp.identity(2, format="csr")] * n
        ops[n - 1 - i] = sp.csr_matrix(m)
        return reduce(lambda a, b: sp.kron(a, b, format="csr"), ops)

    H = sp.csr_matrix((2**n, 2**n))
    for i, j in bonds:
        H = H - J * (op(Z, i) @ op(Z, j))
    for i in range(n):
        H = H - h * op(X, i)
    return H


def lanczos_ground_energy(H):
    from scipy.sparse.linalg import eigsh

    return float(eigsh(H, k=1, which="SA", tol=1e-14)[0][0])
