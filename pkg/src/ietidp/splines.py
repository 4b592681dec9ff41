"""Univariate B-spline bases on open knot vectors and their tensor products.

Bases are evaluated with the Cox-de Boor recurrence in its triangular
(non-recursive) form, which returns only the ``p + 1`` functions that can be
nonzero at a given parameter. Tensor-product bases combine univariate values
and derivatives by the product rule and expose the lexicographic dof
numbering used throughout the package (C order, last direction fastest).
"""

import numpy as np

__all__ = [
    "KnotVector",
    "TensorBasis",
    "make_uniform_knots",
    "make_tensor_basis",
    "eval_basis",
    "eval_basis_deriv",
    "refine_uniform",
    "tensor_eval",
    "collocation_matrix",
    "interpolate_tensor",
]


class KnotVector:
    """Open knot vector on [0, 1] for B-splines of a fixed degree.

    The vector must be nondecreasing, start and end with ``degree + 1``
    repeated knots, and interior knots may repeat at most ``degree`` times.
    """

    __slots__ = ("degree", "knots")

    def __init__(self, degree, knots):
        knots = np.asarray(knots, dtype=float)
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        if knots.ndim != 1 or len(knots) < 2 * (degree + 1):
            raise ValueError("knot vector too short for degree %d" % degree)
        diffs = np.diff(knots)
        if np.any(diffs < 0):
            idx = int(np.argmax(diffs < 0)) + 1
            raise ValueError(f"knots not nondecreasing at index {idx}")
        p = degree
        if not (np.all(knots[: p + 1] == knots[0]) and np.all(knots[-(p + 1):] == knots[-1])):
            raise ValueError("knot vector is not open (endpoint multiplicity != degree + 1)")
        # interior multiplicity <= p
        interior = knots[p + 1 : len(knots) - p - 1]
        if len(interior):
            vals, counts = np.unique(interior, return_counts=True)
            if np.any(counts > p):
                bad = vals[np.argmax(counts > p)]
                raise ValueError(f"interior knot {bad} has multiplicity > degree")
        self.degree = int(degree)
        self.knots = knots

    @property
    def dim(self):
        """Number of basis functions."""
        return len(self.knots) - self.degree - 1

    @property
    def domain(self):
        return (self.knots[0], self.knots[-1])

    def breakpoints(self):
        """Distinct knot values (element boundaries)."""
        return np.unique(self.knots)

    def num_intervals(self):
        return len(self.breakpoints()) - 1

    def span_of(self, x):
        """Index mu of the nonempty knot span with knots[mu] <= x < knots[mu+1].

        The right endpoint is assigned to the last nonempty span so that the
        partition of unity holds on the closed interval.
        """
        t, n = self.knots, self.dim
        if x < t[0] or x > t[-1]:
            raise ValueError(f"parameter {x} outside [{t[0]}, {t[-1]}]")
        if x >= t[n]:
            mu = n - 1
            while t[mu] == t[mu + 1]:  # pragma: no cover - valid open vectors never loop
                mu -= 1
            return mu
        return int(np.searchsorted(t, x, side="right")) - 1

    def greville(self):
        """Knot averages; coefficients at these abscissae reproduce linears."""
        p, t = self.degree, self.knots
        return np.array([t[i + 1 : i + p + 1].mean() for i in range(self.dim)])

    def __eq__(self, other):
        return (
            isinstance(other, KnotVector)
            and self.degree == other.degree
            and len(self.knots) == len(other.knots)
            and np.array_equal(self.knots, other.knots)
        )

    def __repr__(self):
        return f"KnotVector(degree={self.degree}, dim={self.dim})"


def make_uniform_knots(p, n_intervals):
    """Open uniform knot vector on [0, 1] with maximum smoothness.

    The resulting basis has ``n_intervals + p`` functions and is C^{p-1}
    across the interior knots.
    """
    if p < 1:
        raise ValueError(f"degree must be >= 1, got {p}")
    if n_intervals < 1:
        raise ValueError(f"n_intervals must be >= 1, got {n_intervals}")
    interior = np.arange(1, n_intervals) / n_intervals
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, knots)


def refine_uniform(kv):
    """Bisect every nonempty knot interval, keeping degree and smoothness."""
    bp = kv.breakpoints()
    mids = 0.5 * (bp[:-1] + bp[1:])
    return KnotVector(kv.degree, np.sort(np.concatenate([kv.knots, mids])))


def eval_basis(kv, x):
    """Values of the p+1 possibly-nonzero basis functions at ``x``.

    Returns ``(first, vals)`` where ``vals[j]`` is the value of basis
    function ``first + j``. The values are nonnegative and sum to one.
    """
    p, t = kv.degree, kv.knots
    mu = kv.span_of(x)
    N = np.zeros(p + 1)
    N[0] = 1.0
    left = np.empty(p)
    right = np.empty(p)
    for j in range(1, p + 1):
        left[j - 1] = x - t[mu + 1 - j]
        right[j - 1] = t[mu + j] - x
        saved = 0.0
        for r in range(j):
            tmp = N[r] / (right[r] + left[j - 1 - r])
            N[r] = saved + right[r] * tmp
            saved = left[j - 1 - r] * tmp
        N[j] = saved
    return mu - p, N


def eval_basis_deriv(kv, x):
    """First derivatives of the p+1 active basis functions at ``x``."""
    p, t = kv.degree, kv.knots
    mu = kv.span_of(x)
    # values of the degree p-1 basis: active functions mu-p+1 .. mu
    lower = np.zeros(p)
    if p >= 1:
        lower[0] = 1.0
        left = np.empty(p)
        right = np.empty(p)
        for j in range(1, p):
            left[j - 1] = x - t[mu + 1 - j]
            right[j - 1] = t[mu + j] - x
            saved = 0.0
            for r in range(j):
                tmp = lower[r] / (right[r] + left[j - 1 - r])
                lower[r] = saved + right[r] * tmp
                saved = left[j - 1 - r] * tmp
            lower[j] = saved
    deriv = np.zeros(p + 1)
    for k in range(p + 1):
        i = mu - p + k
        term = 0.0
        if k >= 1:
            d1 = t[i + p] - t[i]
            if d1 > 0.0:
                term += lower[k - 1] / d1
        if k <= p - 1:
            d2 = t[i + p + 1] - t[i + 1]
            if d2 > 0.0:
                term -= lower[k] / d2
        deriv[k] = p * term
    return mu - p, deriv


def collocation_matrix(kv, xs, deriv=False):
    """Dense matrix of basis values (or first derivatives) at the points xs.

    Shape ``(len(xs), kv.dim)``; row i holds B_j(xs[i]) for all j.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    out = np.zeros((len(xs), kv.dim))
    fn = eval_basis_deriv if deriv else eval_basis
    for i, x in enumerate(xs):
        first, vals = fn(kv, x)
        out[i, first : first + kv.degree + 1] = vals
    return out


class TensorBasis:
    """Tensor product of d univariate bases with lexicographic numbering.

    Flat dof indices follow C order: the last direction runs fastest, i.e.
    ``flat = ravel_multi_index((i_0, ..., i_{d-1}), dims)``.
    """

    def __init__(self, kvs):
        kvs = tuple(kvs)
        if not 1 <= len(kvs) <= 3:
            raise ValueError("TensorBasis supports 1 to 3 directions")
        self.kvs = kvs
        self.dims = tuple(kv.dim for kv in kvs)
        self.dim = int(np.prod(self.dims))

    @property
    def ndim(self):
        return len(self.kvs)

    @property
    def degrees(self):
        return tuple(kv.degree for kv in self.kvs)

    def ravel(self, multi):
        return int(np.ravel_multi_index(tuple(multi), self.dims))

    def unravel(self, flat):
        return tuple(int(i) for i in np.unravel_index(flat, self.dims))

    def side_grid(self, axis, end):
        """Flat dof indices of the boundary layer on one side.

        The result is shaped over the remaining directions in increasing
        axis order; these are exactly the dofs whose basis functions have
        nonzero trace on that side.
        """
        idx = [np.arange(n) for n in self.dims]
        idx[axis] = np.array([self.dims[axis] - 1 if end else 0])
        grids = np.meshgrid(*idx, indexing="ij")
        flat = np.ravel_multi_index(tuple(grids), self.dims)
        return np.squeeze(flat, axis=axis)

    def boundary_dofs(self, axis, end):
        """Flat dof indices on a side, as a 1D array."""
        return self.side_grid(axis, end).ravel()

    def __eq__(self, other):
        return isinstance(other, TensorBasis) and self.kvs == other.kvs

    def __repr__(self):
        return f"TensorBasis(dims={self.dims}, degrees={self.degrees})"


def make_tensor_basis(p, n_intervals, d):
    """Tensor basis with the same degree and uniform knots in every direction."""
    return TensorBasis([make_uniform_knots(p, n_intervals) for _ in range(d)])


def tensor_eval(basis, xi):
    """Active dofs, values, and parameter-space gradients at a point.

    Returns ``(indices, values, grads)`` where ``indices`` has the
    prod(p_i + 1) active flat dof indices, ``values`` the corresponding
    basis products, and ``grads`` their gradients with respect to xi.
    """
    xi = np.asarray(xi, dtype=float)
    d = basis.ndim
    if xi.shape != (d,):
        raise ValueError(f"expected point in R^{d}, got shape {xi.shape}")
    firsts, vals, ders = [], [], []
    for kv, x in zip(basis.kvs, xi):
        f, v = eval_basis(kv, x)
        _, dv = eval_basis_deriv(kv, x)
        firsts.append(f)
        vals.append(v)
        ders.append(dv)
    ranges = [f + np.arange(kv.degree + 1) for f, kv in zip(firsts, basis.kvs)]
    grids = np.meshgrid(*ranges, indexing="ij")
    indices = np.ravel_multi_index(tuple(grids), basis.dims).ravel()
    values = vals[0]
    for v in vals[1:]:
        values = np.multiply.outer(values, v)
    values = values.ravel()
    grads = np.empty((len(indices), d))
    for k in range(d):
        acc = ders[0] if k == 0 else vals[0]
        for j in range(1, d):
            acc = np.multiply.outer(acc, ders[j] if j == k else vals[j])
        grads[:, k] = acc.ravel()
    return indices, values, grads


def interpolate_tensor(basis, samples):
    """Coefficients whose spline interpolates ``samples`` at the Greville grid.

    ``samples`` is shaped ``basis.dims + trailing`` and is interpolated
    separately along every direction; any element of the spline space is
    reproduced exactly (up to roundoff).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[: basis.ndim] != basis.dims:
        raise ValueError(
            f"samples shape {samples.shape} does not start with basis dims {basis.dims}"
        )
    coefs = samples.astype(float, copy=True)
    for axis, kv in enumerate(basis.kvs):
        mat = collocation_matrix(kv, kv.greville())
        moved = np.moveaxis(coefs, axis, 0)
        flat = moved.reshape(kv.dim, -1)
        solved = np.linalg.solve(mat, flat)
        coefs = np.moveaxis(solved.reshape(moved.shape), 0, axis)
    return coefs
