"""Tensor B-spline geometry maps, multi-patch domains, and builders.

A patch is a polynomial B-spline map from the unit square/cube onto a
physical subdomain. Multi-patch containers carry the patches plus Dirichlet
boundary tags; interface connectivity is recovered geometrically by the
topology module. Builders cover the domains used in the experiments: split
unit squares/cubes and the (optionally twisted) Fichera corner.

Sides are addressed as ``(axis, end)`` with ``end`` 0 for the low and 1 for
the high face; the JSON format spells them ``"xmin"`` ... ``"zmax"``.
"""

import itertools
import json

import numpy as np

from .splines import (
    KnotVector,
    TensorBasis,
    collocation_matrix,
    interpolate_tensor,
)

__all__ = [
    "GeometryError",
    "GeometryFormatError",
    "GeometryEval",
    "Patch",
    "MultiPatch",
    "eval_geometry",
    "side_name",
    "side_from_name",
    "make_unit_hypercube_multipatch",
    "make_fichera",
    "split_patches",
    "save_multipatch",
    "load_multipatch",
    "mapped_volume",
]

_SIDE_NAMES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")

DEGENERATE_JACOBIAN_TOL = 1e-14


class GeometryError(Exception):
    pass


class GeometryFormatError(GeometryError):
    """Malformed multipatch file."""


def side_name(side):
    axis, end = side
    return _SIDE_NAMES[2 * axis + end]


def side_from_name(name):
    try:
        idx = _SIDE_NAMES.index(name)
    except ValueError:
        raise GeometryFormatError(f"unknown side name {name!r}") from None
    return (idx // 2, idx % 2)


class GeometryEval:
    """Geometry data at one parameter point: x, Jacobian, det, inverse transpose."""

    __slots__ = ("point", "jacobian", "det", "jac_inv_t")

    def __init__(self, point, jacobian):
        self.point = point
        self.jacobian = jacobian
        self.det = float(np.linalg.det(jacobian))
        if abs(self.det) < DEGENERATE_JACOBIAN_TOL:
            raise GeometryError("degenerate geometry: |det J| < 1e-14")
        self.jac_inv_t = np.linalg.inv(jacobian).T


class Patch:
    """B-spline geometry map from [0,1]^d to a physical subdomain.

    ``control_points`` is an array of shape ``(basis.dim, d)`` in the
    basis's lexicographic dof order.
    """

    def __init__(self, basis, control_points, patch_id=None, check=True):
        control_points = np.asarray(control_points, dtype=float)
        d = basis.ndim
        if control_points.shape != (basis.dim, d):
            raise GeometryError(
                f"control point array has shape {control_points.shape}, "
                f"expected {(basis.dim, d)}"
            )
        self.basis = basis
        self.control_points = control_points
        self.id = patch_id
        if check:
            self._check_regularity()

    @property
    def dim(self):
        return self.basis.ndim

    def control_grid(self):
        return self.control_points.reshape(self.basis.dims + (self.dim,))

    def _check_regularity(self):
        # determinant must keep one sign over a 5^d sample grid
        axes = [np.linspace(0.0, 1.0, 5)] * self.dim
        _, _, det, _ = self.eval_grid(axes)
        if np.any(np.abs(det) < DEGENERATE_JACOBIAN_TOL) or (det.max() > 0 and det.min() < 0):
            raise GeometryError(
                f"patch {self.id}: Jacobian determinant changes sign or vanishes "
                "on the sample grid"
            )

    def eval_grid(self, axes_points):
        """Evaluate the map on a tensor grid of parameter values.

        ``axes_points`` holds one 1D array per direction. Returns
        ``(points, jac, det, jac_inv_t)`` with leading grid axes; raises on
        parameter points with a (near-)singular Jacobian.
        """
        d = self.dim
        vals = [collocation_matrix(kv, xs) for kv, xs in zip(self.basis.kvs, axes_points)]
        ders = [collocation_matrix(kv, xs, deriv=True) for kv, xs in zip(self.basis.kvs, axes_points)]
        cg = self.control_grid()
        letters = "abc"[:d]
        dofs = "ijk"[:d]
        ops = ",".join(f"{letters[i]}{dofs[i]}" for i in range(d))
        spec = f"{ops},{dofs}x->{letters}x"
        points = np.einsum(spec, *vals, cg)
        shape = points.shape[:-1]
        jac = np.empty(shape + (d, d))
        for k in range(d):
            mats = [ders[i] if i == k else vals[i] for i in range(d)]
            jac[..., :, k] = np.einsum(spec, *mats, cg)
        det = np.linalg.det(jac)
        if np.any(np.abs(det) < DEGENERATE_JACOBIAN_TOL):
            raise GeometryError(f"degenerate geometry on patch {self.id}")
        jac_inv_t = np.swapaxes(np.linalg.inv(jac), -1, -2)
        return points, jac, det, jac_inv_t

    def eval_points(self, params):
        """Map an (m, d) array of parameter points to physical space."""
        params = np.atleast_2d(np.asarray(params, dtype=float))
        vals = [collocation_matrix(kv, params[:, i]) for i, kv in enumerate(self.basis.kvs)]
        cg = self.control_grid()
        d = self.dim
        dofs = "ijk"[:d]
        ops = ",".join(f"q{dofs[i]}" for i in range(d))
        return np.einsum(f"{ops},{dofs}x->qx", *vals, cg)


def eval_geometry(patch, xi):
    """Point evaluation of the geometry map with Jacobian data."""
    xi = np.asarray(xi, dtype=float)
    pts, jac, _, _ = patch.eval_grid([np.array([x]) for x in xi])
    return GeometryEval(pts.reshape(patch.dim), jac.reshape(patch.dim, patch.dim))


class MultiPatch:
    """A list of patches plus Dirichlet boundary tags ``(patch_index, side)``."""

    def __init__(self, patches, dirichlet):
        if not patches:
            raise GeometryError("multipatch needs at least one patch")
        d = patches[0].dim
        if any(p.dim != d for p in patches):
            raise GeometryError("patches of mixed dimension")
        self.patches = list(patches)
        self.dirichlet = set(dirichlet)
        for k, side in self.dirichlet:
            if not (0 <= k < len(patches)):
                raise GeometryError(f"dirichlet tag references unknown patch {k}")
            axis, end = side
            if not (0 <= axis < d and end in (0, 1)):
                raise GeometryError(f"dirichlet tag has invalid side {side}")

    @property
    def dim(self):
        return self.patches[0].dim

    @property
    def n_patches(self):
        return len(self.patches)

    def sides(self):
        d = self.dim
        for k in range(self.n_patches):
            for axis in range(d):
                for end in (0, 1):
                    yield k, (axis, end)


def _box_patch(lo, hi, patch_id=None):
    """Affine degree-1 patch mapping the unit cube onto an axis-aligned box."""
    d = len(lo)
    kvs = [KnotVector(1, [0.0, 0.0, 1.0, 1.0]) for _ in range(d)]
    basis = TensorBasis(kvs)
    corners = np.array(list(itertools.product(*[(lo[i], hi[i]) for i in range(d)])))
    return Patch(basis, corners, patch_id=patch_id)


def make_unit_hypercube_multipatch(d, splits):
    """Axis-aligned affine patches tiling (0,1)^d, outer boundary Dirichlet."""
    splits = tuple(int(s) for s in splits)
    if len(splits) != d or any(s < 1 for s in splits):
        raise GeometryError(f"need {d} split counts >= 1, got {splits}")
    patches = []
    dirichlet = set()
    for k, cell in enumerate(itertools.product(*[range(s) for s in splits])):
        lo = [cell[i] / splits[i] for i in range(d)]
        hi = [(cell[i] + 1) / splits[i] for i in range(d)]
        patches.append(_box_patch(lo, hi, patch_id=k))
        for axis in range(d):
            if cell[axis] == 0:
                dirichlet.add((k, (axis, 0)))
            if cell[axis] == splits[axis] - 1:
                dirichlet.add((k, (axis, 1)))
    return MultiPatch(patches, dirichlet)


def _twist_point(points, angle):
    """Rotate (x, y) about the z axis by angle * (z + 1) / 2, z unchanged."""
    theta = angle * (points[..., 2] + 1.0) / 2.0
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty_like(points)
    out[..., 0] = c * points[..., 0] - s * points[..., 1]
    out[..., 1] = s * points[..., 0] + c * points[..., 1]
    out[..., 2] = points[..., 2]
    return out


def make_fichera(twist_angle=0.0):
    """Fichera corner: (-1,1)^3 minus the all-positive octant, 7 cube patches.

    A nonzero twist rotates each horizontal layer about the z axis by an
    angle growing linearly in z; the composed map is re-interpolated with
    geometry degree 2 in z (the rotation is affine in x and y at fixed z,
    so degree 1 suffices there). The full outer boundary, including the
    re-entrant faces, is tagged Dirichlet.
    """
    if abs(twist_angle) > np.pi / 2:
        raise GeometryError("twist angle limited to [-pi/2, pi/2]")
    octants = [key for key in itertools.product((0, 1), repeat=3) if key != (1, 1, 1)]
    patches = []
    dirichlet = set()
    for k, key in enumerate(octants):
        lo = [key[i] - 1.0 for i in range(3)]
        hi = [float(key[i]) for i in range(3)]
        if twist_angle == 0.0:
            patches.append(_box_patch(lo, hi, patch_id=k))
        else:
            kvs = [
                KnotVector(1, [0.0, 0.0, 1.0, 1.0]),
                KnotVector(1, [0.0, 0.0, 1.0, 1.0]),
                KnotVector(2, [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            ]
            basis = TensorBasis(kvs)
            grev = [kv.greville() for kv in kvs]
            grid = np.stack(np.meshgrid(*grev, indexing="ij"), axis=-1)
            phys = np.stack(
                [lo[i] + grid[..., i] * (hi[i] - lo[i]) for i in range(3)], axis=-1
            )
            samples = _twist_point(phys, twist_angle)
            coefs = interpolate_tensor(basis, samples)
            patches.append(Patch(basis, coefs.reshape(-1, 3), patch_id=k))
        for axis in range(3):
            for end in (0, 1):
                plane = key[axis] - 1 + end
                if plane != 0:
                    dirichlet.add((k, (axis, end)))  # outer box boundary
                else:
                    neighbor = list(key)
                    neighbor[axis] = 1 - neighbor[axis]
                    if tuple(neighbor) == (1, 1, 1):
                        dirichlet.add((k, (axis, end)))  # re-entrant face
    return MultiPatch(patches, dirichlet)


def _restrict_knots(kv, a, b):
    """Knot vector of the same spline space restricted to [a, b], rescaled."""
    p = kv.degree
    inner = [t for t in kv.knots if a < t < b]
    knots = np.concatenate([np.full(p + 1, a), inner, np.full(p + 1, b)])
    return KnotVector(p, (knots - a) / (b - a))


def split_patches(mp, m):
    """Replace each patch by m^d sub-patches covering the same image.

    Sub-patch geometry is the exact restriction of the parent map to the
    sub-boxes of a uniform m-partition, realized by re-interpolating the
    parent in the restricted spline space (which contains the restriction,
    so the map is reproduced up to roundoff).
    """
    m = int(m)
    if m < 1:
        raise GeometryError(f"subdivision factor must be >= 1, got {m}")
    if m == 1:
        return mp
    d = mp.dim
    patches = []
    dirichlet = set()
    for k, patch in enumerate(mp.patches):
        parent_dirichlet = {side for (pk, side) in mp.dirichlet if pk == k}
        for cell in itertools.product(*[range(m)] * d):
            lows = [c / m for c in cell]
            highs = [(c + 1) / m for c in cell]
            kvs = [
                _restrict_knots(kv, lo, hi)
                for kv, lo, hi in zip(patch.basis.kvs, lows, highs)
            ]
            basis = TensorBasis(kvs)
            params = [
                lo + (hi - lo) * kv.greville()
                for kv, lo, hi in zip(kvs, lows, highs)
            ]
            grid = np.stack(np.meshgrid(*params, indexing="ij"), axis=-1)
            samples = patch.eval_points(grid.reshape(-1, d)).reshape(grid.shape)
            coefs = interpolate_tensor(basis, samples)
            new_id = len(patches)
            patches.append(Patch(basis, coefs.reshape(-1, d), patch_id=new_id))
            for axis in range(d):
                if cell[axis] == 0 and (axis, 0) in parent_dirichlet:
                    dirichlet.add((new_id, (axis, 0)))
                if cell[axis] == m - 1 and (axis, 1) in parent_dirichlet:
                    dirichlet.add((new_id, (axis, 1)))
    return MultiPatch(patches, dirichlet)


def save_multipatch(mp, path):
    """Write the JSON multipatch format (floats via repr: lossless round trip)."""
    doc = {
        "dim": mp.dim,
        "patches": [
            {
                "degrees": list(p.basis.degrees),
                "knots": [kv.knots.tolist() for kv in p.basis.kvs],
                "control_points": p.control_points.tolist(),
            }
            for p in mp.patches
        ],
        "dirichlet": sorted(
            [k, side_name(side)] for k, side in mp.dirichlet
        ),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_multipatch(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GeometryFormatError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    try:
        d = int(doc["dim"])
        raw_patches = doc["patches"]
        raw_dirichlet = doc.get("dirichlet", [])
    except (KeyError, TypeError) as exc:
        raise GeometryFormatError(f"{path}: missing field {exc}") from None
    patches = []
    for k, entry in enumerate(raw_patches):
        degrees = entry.get("degrees")
        knots = entry.get("knots")
        cps = entry.get("control_points")
        if degrees is None or knots is None or cps is None:
            raise GeometryFormatError(f"{path}: patch {k} is missing a required field")
        if len(degrees) != d or len(knots) != d:
            raise GeometryFormatError(f"{path}: patch {k} has fields of dimension != {d}")
        kvs = []
        for axis, (p, kn) in enumerate(zip(degrees, knots)):
            kn = np.asarray(kn, dtype=float)
            bad = np.nonzero(np.diff(kn) < 0)[0]
            if len(bad):
                raise GeometryFormatError(
                    f"{path}: patch {k} axis {axis}: knots not nondecreasing "
                    f"at knot index {int(bad[0]) + 1}"
                )
            try:
                kvs.append(KnotVector(int(p), kn))
            except ValueError as exc:
                raise GeometryFormatError(f"{path}: patch {k} axis {axis}: {exc}") from None
        basis = TensorBasis(kvs)
        cps = np.asarray(cps, dtype=float)
        if cps.shape != (basis.dim, d):
            raise GeometryFormatError(
                f"{path}: patch {k}: {cps.shape[0]} control points, expected {basis.dim}"
            )
        patches.append(Patch(basis, cps, patch_id=k))
    dirichlet = set()
    for item in raw_dirichlet:
        if len(item) != 2:
            raise GeometryFormatError(f"{path}: malformed dirichlet entry {item}")
        k, name = item
        dirichlet.add((int(k), side_from_name(name)))
    return MultiPatch(patches, dirichlet)


def mapped_volume(mp_or_patch, n_quad=4):
    """Volume of the mapped domain via Gauss quadrature of |det J|."""
    from .assembly import gauss_rule

    patches = mp_or_patch.patches if isinstance(mp_or_patch, MultiPatch) else [mp_or_patch]
    total = 0.0
    for patch in patches:
        rule = gauss_rule(n_quad, patch.dim)
        axes, weights = [], []
        for kv in patch.basis.kvs:
            bp = kv.breakpoints()
            pts = (bp[:-1, None] + np.diff(bp)[:, None] * rule.nodes[None, :]).ravel()
            wts = (np.diff(bp)[:, None] * rule.weights[None, :]).ravel()
            axes.append(pts)
            weights.append(wts)
        _, _, det, _ = patch.eval_grid(axes)
        w = weights[0]
        for wi in weights[1:]:
            w = np.multiply.outer(w, wi)
        total += float(np.sum(np.abs(det) * w))
    return total
