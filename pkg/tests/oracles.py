"""Slow reference computations written directly from the model formulas.

Nothing here shares code with the vectorized engine beyond graph
construction: loops over nodes, dense linear algebra, scalar kernels.
"""

import numpy as np
from scipy import linalg


def lam(g, beta, i, j):
    """1 / (1 - beta c_ij) with c from neighbor sets."""
    Ni = set(g.adjacency(i))
    if not Ni:
        return 1.0
    if i == j:
        c = sum(1.0 / (len(g.adjacency(k)) + 1) for k in Ni) / len(Ni)
    else:
        c = len(Ni & set(g.adjacency(j))) / len(Ni)
    return 1.0 / (1.0 - beta * c)


def design_simple(g, X1, X2, beta, nodes):
    rows = []
    for i in nodes:
        Ni = sorted(g.adjacency(i))
        lii = lam(g, beta, i, i)
        z1 = lii * X1[i].copy()
        z2 = np.zeros(X2.shape[1])
        zt = np.zeros(X1.shape[1])
        for j in Ni:
            lij = lam(g, beta, i, j)
            z1 += beta * lii * lij * X1[j] / len(Ni)
            z2 += lij * X2[j] / len(Ni)
            zt += lij * X1[j] / len(Ni)
        rows.append((np.concatenate([z1, z2]), zt))
    Z = np.array([r[0] for r in rows])
    Zt = np.array([r[1] for r in rows])
    return Z, Zt


def q_simple(g, beta, i, j):
    Ni, Nj = set(g.adjacency(i)), set(g.adjacency(j))
    li, lj = lam(g, beta, i, i), lam(g, beta, j, j)
    out = 0.0
    if i in Nj:
        out += lam(g, beta, j, i) * li * lj / len(Nj)
    if j in Ni:
        out += lam(g, beta, i, j) * li * lj / len(Ni)
    common = Ni & Nj
    if common:
        out += beta * li * lj / (len(Ni) * len(Nj)) * sum(lam(g, beta, i, k) * lam(g, beta, j, k) for k in common)
    return out


def pipeline(g, X1, X2, y, beta, nodes=None, q=q_simple, design=None, c=0.005, nonoverlap=False):
    """T, rho-hat, V-hat, s-hat and Lambda-hat at one beta, the long way."""
    nodes = list(range(g.n)) if nodes is None else list(nodes)
    n = len(nodes)
    Zs, Zt = design_simple(g, X1, X2, beta, nodes)
    Z = Zs if design is None else design(g, X1, X2, beta, nodes)
    phi = np.column_stack([Zt, X1[nodes, 1:] ** 2, X2[nodes] ** 2, X2[nodes] ** 3])
    S = phi.T @ phi / n
    pt = phi @ np.real(linalg.inv(linalg.sqrtm(S)))
    yy = y[nodes]
    SZ = Z.T @ pt / n
    Sy = pt.T @ yy / n
    rho1 = np.linalg.solve(SZ @ SZ.T, SZ @ Sy)
    v = yy - Z @ rho1
    L1 = sum(v[a] ** 2 * np.outer(pt[a], pt[a]) for a in range(n)) / n
    s = 0.0
    L2 = np.zeros_like(L1)
    if not nonoverlap:
        num = den = 0.0
        for a, i in enumerate(nodes):
            for b, j in enumerate(nodes):
                if a != b and j in g.adjacency(i):
                    num += v[a] * v[b]
                    den += q(g, beta, i, j)
        s = num / den if den != 0 else 0.0
        for a, i in enumerate(nodes):
            for b, j in enumerate(nodes):
                if a != b:
                    qq = q(g, beta, i, j)
                    if qq != 0.0:
                        L2 += qq * np.outer(pt[a], pt[b])
        L2 *= s / n
    Lam = L1 + L2
    w, U = np.linalg.eigh((Lam + Lam.T) / 2)
    Lam = U @ np.diag(np.maximum(w, c)) @ U.T
    Li = np.linalg.inv(Lam)
    H = SZ @ Li @ SZ.T
    rho = np.linalg.solve(H, SZ @ Li @ Sy)
    vh = yy - Z @ rho
    gbar = pt.T @ vh / n
    T = n * gbar @ Li @ gbar
    w, U = np.linalg.eigh(np.linalg.inv(H))
    V = U @ np.diag(np.maximum(w, c)) @ U.T
    return T, rho, V, s, Lam


def dense_parts(g, beta):
    """Dense Abar, D and L built from the scalar lambda weights."""
    n = g.n
    A = np.zeros((n, n))
    L = np.zeros((n, n))
    D = np.eye(n)
    for i in range(n):
        Ni = sorted(g.adjacency(i))
        D[i, i] = lam(g, beta, i, i)
        for j in Ni:
            A[i, j] = 1.0 / len(Ni)
            L[i, j] = lam(g, beta, i, j) / len(Ni)
    return A, D, L


def design_fs(g, X1, X2, beta, nodes):
    A, D, L = dense_parts(g, beta)
    Z1 = X1 + beta * A @ D @ X1 + beta**2 * A @ D @ L @ X1
    Z2 = A @ X2 + beta * A @ L @ X2
    return np.column_stack([Z1, Z2])[list(nodes)]


_fs_cache = {}


def q_fs(g, beta, i, j):
    key = (id(g), beta)
    if key not in _fs_cache:
        A, D, L = dense_parts(g, beta)
        B = A @ D + beta * A @ D @ L
        _fs_cache.clear()
        _fs_cache[key] = B + B.T + beta * B @ B.T
    return _fs_cache[key][i, j]


def e_fs(g, beta, i):
    A, D, L = dense_parts(g, beta)
    R = np.eye(g.n) + beta * (A @ D + beta * A @ D @ L)
    return (R @ R.T)[i, i]
