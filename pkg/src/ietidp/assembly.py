"""Gauss quadrature and patch-local assembly via the pull-back principle.

Assembly loops over elements (nonempty knot spans of the discretization
basis) but is vectorized across all elements of a patch: univariate basis
tables are combined into per-element gradient tensors and contracted with
batched matrix products. Homogeneous Dirichlet conditions are imposed by
dropping the rows/columns of the affected dofs, which keeps the patch
matrices symmetric positive (semi)definite.
"""

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_legendre

from .linalg import from_triplets
from .splines import collocation_matrix, eval_basis, eval_basis_deriv

__all__ = [
    "QuadRule",
    "gauss_rule",
    "PatchSystem",
    "assemble_stiffness",
    "assemble_stiffness_full",
    "assemble_load",
    "dirichlet_dofs",
    "l2_error",
]


class QuadRule:
    """Tensor Gauss-Legendre rule on [0,1]^d, same 1D rule per direction."""

    def __init__(self, nodes, weights, d):
        self.nodes = np.asarray(nodes, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.d = int(d)

    @property
    def n(self):
        return len(self.nodes)


def gauss_rule(n_points, d=1):
    """Gauss-Legendre rule with ``n_points`` per direction, mapped to [0,1].

    Exact for polynomials of degree 2 n - 1 per direction; the weights are
    positive and sum to one per direction.
    """
    if n_points < 1:
        raise ValueError(f"need at least one quadrature point, got {n_points}")
    x, w = roots_legendre(n_points)
    return QuadRule(0.5 * (x + 1.0), 0.5 * w, d)


class _BasisTables:
    """Per-direction element tables: spans, scaled points/weights, values."""

    def __init__(self, kv, rule):
        bp = kv.breakpoints()
        self.n_el = len(bp) - 1
        self.nq = rule.n
        h = np.diff(bp)
        self.points = bp[:-1, None] + h[:, None] * rule.nodes[None, :]
        self.weights = h[:, None] * rule.weights[None, :]
        p = kv.degree
        self.first = np.empty(self.n_el, dtype=int)
        self.vals = np.empty((self.n_el, self.nq, p + 1))
        self.ders = np.empty((self.n_el, self.nq, p + 1))
        for s in range(self.n_el):
            for q in range(self.nq):
                x = self.points[s, q]
                f, v = eval_basis(kv, x)
                _, dv = eval_basis_deriv(kv, x)
                self.first[s] = f
                self.vals[s, q] = v
                self.ders[s, q] = dv


def _geometry_on_quad_grid(patch, tables):
    """Geometry data on the full quadrature grid, reshaped to element blocks.

    Returns (points, det, jac_inv_t, wdet) with shapes (E, Q, d), (E, Q),
    (E, Q, d, d), (E, Q) where E is the element count and Q the number of
    quadrature points per element.
    """
    d = patch.dim
    axes = [t.points.ravel() for t in tables]
    pts, _, det, jac_inv_t = patch.eval_grid(axes)
    n_el = [t.n_el for t in tables]
    nq = [t.nq for t in tables]
    inter = [n for pair in zip(n_el, nq) for n in pair]

    def blocked(arr, trailing):
        a = arr.reshape(inter + trailing)
        order = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
        a = np.transpose(a, order + [2 * d + i for i in range(len(trailing))])
        return a.reshape([int(np.prod(n_el)), int(np.prod(nq))] + trailing)

    w = tables[0].weights
    for t in tables[1:]:
        w = np.multiply.outer(w, t.weights)
    # w has axes (e1, q1, e2, q2, ...): bring into block layout directly
    order = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
    w = np.transpose(w, order).reshape(int(np.prod(n_el)), int(np.prod(nq)))
    det_b = blocked(det, [])
    return blocked(pts, [d]), det_b, blocked(jac_inv_t, [d, d]), w * np.abs(det_b)


def _element_dof_indices(basis, tables):
    """Flat dof indices of the active functions per element, shape (E, n_loc)."""
    d = basis.ndim
    locs = [t.first[:, None] + np.arange(basis.kvs[i].degree + 1)[None, :]
            for i, t in enumerate(tables)]
    shape_el = [t.n_el for t in tables]
    shape_loc = [kv.degree + 1 for kv in basis.kvs]
    idx = np.zeros(shape_el + shape_loc, dtype=int)
    for i in range(d):
        sh = [1] * (2 * d)
        sh[i] = shape_el[i]
        sh[d + i] = shape_loc[i]
        stride = int(np.prod(basis.dims[i + 1 :]))
        idx += locs[i].reshape(sh) * stride
    return idx.reshape(int(np.prod(shape_el)), int(np.prod(shape_loc)))


def _outer_tables(tables, which):
    """Per-element tensor of products of univariate tables.

    ``which[i]`` selects "v" (values) or "d" (derivatives) for direction i.
    Result shape (E, Q, n_loc).
    """
    d = len(tables)
    arrs = [t.ders if which[i] == "d" else t.vals for i, t in enumerate(tables)]
    el = "EFG"[:d]
    q = "qrs"[:d]
    j = "abc"[:d]
    ops = ",".join(f"{el[i]}{q[i]}{j[i]}" for i in range(d))
    out = np.einsum(f"{ops}->{el}{q}{j}", *arrs)
    E = int(np.prod([t.n_el for t in tables]))
    Q = int(np.prod([t.nq for t in tables]))
    return out.reshape(E, Q, -1)


def dirichlet_dofs(basis, dirichlet_sides):
    """Flat indices of dofs with nonzero trace on any of the given sides."""
    out = set()
    for axis, end in dirichlet_sides:
        out.update(basis.boundary_dofs(axis, end).tolist())
    return np.array(sorted(out), dtype=int)


class PatchSystem:
    """Patch stiffness on free dofs plus the index maps into the full grid."""

    def __init__(self, A, free, n_total):
        self.A = A
        self.free = free
        self.n_total = int(n_total)
        self.f = None
        lookup = np.full(n_total, -1, dtype=int)
        lookup[free] = np.arange(len(free))
        self.free_position = lookup

    @property
    def n_free(self):
        return len(self.free)

    def restrict(self, full_vector):
        return np.asarray(full_vector)[self.free]

    def extend(self, free_vector):
        out = np.zeros(self.n_total)
        out[self.free] = free_vector
        return out


def assemble_stiffness_full(patch, basis, quad):
    """Stiffness matrix over all dofs of the patch (no elimination).

    Entries are sums over quadrature points of
    (J^{-T} grad B_i) . (J^{-T} grad B_j) |det J|.
    """
    d = basis.ndim
    tables = [_BasisTables(kv, quad) for kv in basis.kvs]
    _, _, jac_inv_t, wdet = _geometry_on_quad_grid(patch, tables)
    grad = np.stack(
        [_outer_tables(tables, ["d" if i == k else "v" for i in range(d)])
         for k in range(d)],
        axis=-1,
    )  # (E, Q, n_loc, d): parameter-space gradients
    phys = np.einsum("EQxy,EQiy->EQix", jac_inv_t, grad)
    weighted = phys * wdet[:, :, None, None]
    E, Q, n_loc, _ = phys.shape
    a = weighted.transpose(0, 2, 1, 3).reshape(E, n_loc, Q * d)
    b = phys.transpose(0, 2, 1, 3).reshape(E, n_loc, Q * d)
    kloc = a @ b.transpose(0, 2, 1)  # (E, n_loc, n_loc)
    dofs = _element_dof_indices(basis, tables)
    rows = np.repeat(dofs, n_loc, axis=1).ravel()
    cols = np.tile(dofs, (1, n_loc)).ravel()
    return from_triplets(basis.dim, basis.dim, rows, cols, kloc.ravel())


def assemble_stiffness(patch, basis, quad, dirichlet_sides=()):
    """Patch stiffness with homogeneous Dirichlet dofs eliminated."""
    A = assemble_stiffness_full(patch, basis, quad)
    fixed = dirichlet_dofs(basis, dirichlet_sides)
    free = np.setdiff1d(np.arange(basis.dim), fixed)
    return PatchSystem(A[free][:, free].tocsr(), free, basis.dim)


def assemble_load(patch, basis, quad, f):
    """Load vector over all dofs: f_i = sum_q w_q f(x_q) B_i |det J|."""
    d = basis.ndim
    tables = [_BasisTables(kv, quad) for kv in basis.kvs]
    pts, _, _, wdet = _geometry_on_quad_grid(patch, tables)
    vals = _outer_tables(tables, ["v"] * d)
    fx = np.asarray(f(pts.reshape(-1, d))).reshape(wdet.shape)
    floc = np.einsum("EQi,EQ->Ei", vals, fx * wdet)
    dofs = _element_dof_indices(basis, tables)
    out = np.zeros(basis.dim)
    np.add.at(out, dofs.ravel(), floc.ravel())
    return out


def l2_error(patch, basis, coefs_full, u_exact, n_quad=None):
    """Squared L2 distance between the spline and a reference function."""
    d = basis.ndim
    if n_quad is None:
        n_quad = max(kv.degree for kv in basis.kvs) + 2
    quad = gauss_rule(n_quad, d)
    tables = [_BasisTables(kv, quad) for kv in basis.kvs]
    axes = [t.points.ravel() for t in tables]
    vals = [collocation_matrix(kv, xs) for kv, xs in zip(basis.kvs, axes)]
    cg = np.asarray(coefs_full, dtype=float).reshape(basis.dims)
    letters = "abc"[:d]
    dofs = "ijk"[:d]
    ops = ",".join(f"{letters[i]}{dofs[i]}" for i in range(d))
    uh = np.einsum(f"{ops},{dofs}->{letters}", *vals, cg)
    pts, _, det, _ = patch.eval_grid(axes)
    ux = np.asarray(u_exact(pts.reshape(-1, d))).reshape(uh.shape)
    w = tables[0].weights.ravel()
    for t in tables[1:]:
        w = np.multiply.outer(w, t.weights.ravel())
    return float(np.sum((uh - ux) ** 2 * np.abs(det) * w))
