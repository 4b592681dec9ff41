"""Interface matching and classification of coupled degrees of freedom.

Interfaces are detected geometrically: two patch sides match when their
sampled surfaces coincide, up to an axis permutation and per-axis flips of
the side parameterization. Vertex and edge equivalence classes are then the
transitive closure of the identifications induced by the matched interfaces
(never geometric proximity alone, which would wrongly glue patches that
merely touch across a re-entrant edge).

The dof classification glues the boundary dof grids of matched sides into
coupled-dof classes, eliminates Dirichlet dofs from every set, and labels
each class with the topological entity (vertex / edge / face) it lives on.
In 2D the same vocabulary is used with "faces" being the 1D interfaces and
no "edge" entities.
"""

import itertools

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "TopologyError",
    "NonMatchingInterfaceError",
    "UnassignedBoundaryError",
    "FullyMatchingError",
    "Interface",
    "Topology",
    "DofClass",
    "DofClassification",
    "build_topology",
    "classify_dofs",
]


class TopologyError(Exception):
    pass


class NonMatchingInterfaceError(TopologyError):
    """Sides overlap but are not a full match under any orientation."""


class UnassignedBoundaryError(TopologyError):
    """A boundary side is neither matched nor tagged Dirichlet."""


class FullyMatchingError(TopologyError):
    """Interface bases do not coincide dof-by-dof."""


def _free_axes(axis, d):
    return tuple(a for a in range(d) if a != axis)


def _align_grid(arr_b, axis_map, flips, sizes_a):
    """Reindex a side grid of patch b by patch a's side parameterization.

    ``arr_b`` is indexed by b's free-axis positions (plus trailing axes);
    the result is indexed by a's free-axis positions, honouring the axis
    permutation and flips of the orientation map.
    """
    d1 = len(axis_map)
    idx = np.indices(sizes_a)
    b_index = [None] * d1
    for i in range(d1):
        ii = idx[i]
        if flips[i]:
            ii = sizes_a[i] - 1 - ii
        b_index[axis_map[i]] = ii
    return arr_b[tuple(b_index)]


class Interface:
    """A matched pair of patch sides plus the orientation between them."""

    def __init__(self, patch_a, side_a, patch_b, side_b, axis_map, flips):
        self.patch_a = patch_a
        self.side_a = side_a
        self.patch_b = patch_b
        self.side_b = side_b
        self.axis_map = tuple(axis_map)
        self.flips = tuple(flips)

    def __repr__(self):
        return (
            f"Interface({self.patch_a}:{self.side_a} ~ {self.patch_b}:{self.side_b}, "
            f"perm={self.axis_map}, flips={self.flips})"
        )


class _DSU:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        parent = self.parent
        if x not in parent:
            parent[x] = x
            return x
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self):
        out = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return [sorted(v) for v in sorted(out.values(), key=min)]


def _side_params(side, d, per_axis):
    """Tensor grid of parameter points on a side; shape grid + (d,)."""
    axis, end = side
    free = _free_axes(axis, d)
    grids = np.meshgrid(*per_axis, indexing="ij")
    shape = grids[0].shape if grids else ()
    params = np.empty(shape + (d,))
    params[..., axis] = float(end)
    for i, a in enumerate(free):
        params[..., a] = grids[i]
    return params


def _side_points(patch, side, per_axis):
    params = _side_params(side, patch.dim, per_axis)
    pts = patch.eval_points(params.reshape(-1, patch.dim))
    return pts.reshape(params.shape)


def _match_sides(patch_a, side_a, patch_b, side_b, tol, n_samples=5):
    """Orientation (axis_map, flips) matching the two sides, or None."""
    d = patch_a.dim
    d1 = d - 1
    corners_a = _side_points(patch_a, side_a, [np.array([0.0, 1.0])] * d1)
    corners_b = _side_points(patch_b, side_b, [np.array([0.0, 1.0])] * d1)
    grid = [np.linspace(0.0, 1.0, n_samples)] * d1
    samples_a = None
    samples_b = None
    corner_hit = False
    for axis_map in itertools.permutations(range(d1)):
        for flips in itertools.product((0, 1), repeat=d1):
            aligned = _align_grid(corners_b, axis_map, flips, (2,) * d1)
            if not np.allclose(corners_a, aligned, rtol=0.0, atol=tol):
                continue
            corner_hit = True
            if samples_a is None:
                samples_a = _side_points(patch_a, side_a, grid)
                samples_b = _side_points(patch_b, side_b, grid)
            aligned_s = _align_grid(samples_b, axis_map, flips, (n_samples,) * d1)
            if np.allclose(samples_a, aligned_s, rtol=0.0, atol=tol):
                return axis_map, flips
    if corner_hit:
        raise NonMatchingInterfaceError(
            f"non-matching interface: patch {patch_a.id} side {side_a} and "
            f"patch {patch_b.id} side {side_b} share corners but overlap only partially"
        )
    return None


class Topology:
    """Matched interfaces plus vertex/edge equivalence classes."""

    def __init__(self, mp, interfaces, vertex_classes, vertex_dirichlet,
                 edge_classes, edge_dirichlet):
        self.mp = mp
        self.interfaces = interfaces
        self.vertex_classes = vertex_classes
        self.vertex_dirichlet = vertex_dirichlet
        self.edge_classes = edge_classes
        self.edge_dirichlet = edge_dirichlet
        self.matched_sides = {}
        for idx, itf in enumerate(interfaces):
            self.matched_sides[(itf.patch_a, itf.side_a)] = idx
            self.matched_sides[(itf.patch_b, itf.side_b)] = idx

    @property
    def n_interfaces(self):
        return len(self.interfaces)


def _corner_on_side(bits, side):
    axis, end = side
    return bits[axis] == end


def _edge_on_side(edge, side):
    _, fixed = edge
    return side in fixed


def build_topology(mp, tol=1e-8):
    """Match all patch sides and derive vertex/edge classes.

    Every unmatched side must carry a Dirichlet tag; sides that overlap
    partially raise :class:`NonMatchingInterfaceError`.
    """
    d = mp.dim
    sides = list(mp.sides())
    d1 = d - 1
    n_corners = 2 ** d1
    # candidate pairs: sides sharing ALL their corner points (KD-tree on the
    # corner cloud; partial corner overlap never forms a conforming interface)
    ends = [np.array([0.0, 1.0])] * d1
    corner_pts = []
    corner_side = []
    for i, (k, side) in enumerate(sides):
        pts = _side_points(mp.patches[k], side, ends).reshape(-1, d)
        corner_pts.append(pts)
        corner_side.extend([i] * n_corners)
    corner_pts = np.vstack(corner_pts)
    corner_side = np.array(corner_side)
    hits = {}
    for ia, ib in cKDTree(corner_pts).query_pairs(r=max(tol, 1e-12)):
        sa, sb = corner_side[ia], corner_side[ib]
        if sa != sb:
            key = (min(sa, sb), max(sa, sb))
            hits[key] = hits.get(key, 0) + 1
    pairs = sorted(key for key, count in hits.items() if count >= n_corners)
    interfaces = []
    matched = set()
    for ia, ib in pairs:
        (ka, sa), (kb, sb) = sides[ia], sides[ib]
        if ka == kb:
            continue
        orientation = _match_sides(mp.patches[ka], sa, mp.patches[kb], sb, tol)
        if orientation is None:
            continue
        if (ka, sa) in matched or (kb, sb) in matched:
            raise TopologyError(
                f"side matched twice: patch {ka} side {sa} / patch {kb} side {sb}"
            )
        matched.add((ka, sa))
        matched.add((kb, sb))
        interfaces.append(Interface(ka, sa, kb, sb, *orientation))
    for k, side in sides:
        if (k, side) not in matched and (k, side) not in mp.dirichlet:
            raise UnassignedBoundaryError(
                f"unassigned boundary: patch {k} side {side} is neither matched "
                "nor tagged Dirichlet"
            )

    # vertex classes: corners identified through interface orientations
    vertices = _DSU()
    edges = _DSU()
    for itf in interfaces:
        fa = _free_axes(itf.side_a[0], d)
        fb = _free_axes(itf.side_b[0], d)
        for bits in itertools.product((0, 1), repeat=d1):
            ca = [0] * d
            cb = [0] * d
            ca[itf.side_a[0]] = itf.side_a[1]
            cb[itf.side_b[0]] = itf.side_b[1]
            for i in range(d1):
                ca[fa[i]] = bits[i]
                cb[fb[itf.axis_map[i]]] = bits[i] ^ itf.flips[i]
            vertices.union((itf.patch_a, tuple(ca)), (itf.patch_b, tuple(cb)))
        if d == 3:
            # the four boundary edges of the face, identified pairwise
            for i in range(d1):
                other = 1 - i
                for e in (0, 1):
                    ea_fixed = tuple(sorted([(itf.side_a[0], itf.side_a[1]),
                                             (fa[i], e)]))
                    ea_free = fa[other]
                    eb = itf.flips[i] ^ e
                    eb_fixed = tuple(sorted([(itf.side_b[0], itf.side_b[1]),
                                             (fb[itf.axis_map[i]], eb)]))
                    eb_free = fb[itf.axis_map[other]]
                    edges.union(
                        (itf.patch_a, (ea_free, ea_fixed)),
                        (itf.patch_b, (eb_free, eb_fixed)),
                    )

    vertex_classes = [[(k, bits) for (k, bits) in grp] for grp in vertices.groups()]
    edge_classes = [[(k, edge) for (k, edge) in grp] for grp in edges.groups()]
    vertex_dirichlet = [
        any((k, side) in mp.dirichlet
            for (k, bits) in grp
            for side in [(a, bits[a]) for a in range(d)])
        for grp in vertex_classes
    ]
    edge_dirichlet = [
        any((k, side) in mp.dirichlet for (k, edge) in grp for side in edge[1])
        for grp in edge_classes
    ]
    return Topology(mp, interfaces, vertex_classes, vertex_dirichlet,
                    edge_classes, edge_dirichlet)


class DofClass:
    """One coupled-dof equivalence class across patches."""

    __slots__ = ("members", "entity")

    def __init__(self, members, entity=None):
        self.members = members  # sorted list of (patch, flat dof index)
        self.entity = entity    # ("vertex" | "edge" | "face", class index)

    @property
    def multiplicity(self):
        return len(self.members)


class DofClassification:
    """Per-patch dof splitting and global coupling structure.

    Free dofs of each patch split into interface dofs (``gamma``: member of
    some coupled class) and interior dofs; Dirichlet dofs are removed from
    all sets. ``global_index`` numbers the conforming space: one index per
    coupled class, one per uncoupled free dof.
    """

    def __init__(self, mp, topo, bases):
        self.mp = mp
        self.topo = topo
        self.bases = bases
        d = mp.dim
        K = mp.n_patches

        self.dirichlet_mask = []
        for k in range(K):
            mask = np.zeros(bases[k].dim, dtype=bool)
            for (pk, side) in mp.dirichlet:
                if pk == k:
                    mask[bases[k].boundary_dofs(*side)] = True
            self.dirichlet_mask.append(mask)

        dsu = _DSU()
        for itf in topo.interfaces:
            self._check_fully_matching(itf)
            ga = bases[itf.patch_a].side_grid(*itf.side_a)
            gb = bases[itf.patch_b].side_grid(*itf.side_b)
            gb_aligned = _align_grid(gb, itf.axis_map, itf.flips, ga.shape)
            for fa, fb in zip(ga.ravel(), gb_aligned.ravel()):
                dsu.union((itf.patch_a, int(fa)), (itf.patch_b, int(fb)))

        groups = dsu.groups()
        # Dirichlet status propagates through each class (fully matching
        # discretizations tag whole classes, but loaded geometries may not)
        for grp in groups:
            if any(self.dirichlet_mask[k][f] for k, f in grp):
                for k, f in grp:
                    self.dirichlet_mask[k][f] = True

        self.free_dofs = []
        self.free_position = []
        for k in range(K):
            free = np.nonzero(~self.dirichlet_mask[k])[0]
            pos = np.full(bases[k].dim, -1, dtype=int)
            pos[free] = np.arange(len(free))
            self.free_dofs.append(free)
            self.free_position.append(pos)

        self.classes = []
        self.class_id = [np.full(bases[k].dim, -1, dtype=int) for k in range(K)]
        for grp in groups:
            k0, f0 = grp[0]
            if self.dirichlet_mask[k0][f0]:
                continue
            cid = len(self.classes)
            self.classes.append(DofClass(grp))
            for k, f in grp:
                self.class_id[k][f] = cid

        self._label_entities()

        self.gamma = []
        self.interior = []
        self.multiplicity = []
        for k in range(K):
            free = self.free_dofs[k]
            coupled = self.class_id[k][free] >= 0
            self.gamma.append(np.nonzero(coupled)[0])
            self.interior.append(np.nonzero(~coupled)[0])
            mult = np.ones(len(free), dtype=int)
            has = np.nonzero(coupled)[0]
            mult[has] = [self.classes[self.class_id[k][free[i]]].multiplicity for i in has]
            self.multiplicity.append(mult)

        self.global_index = [np.full(bases[k].dim, -1, dtype=int) for k in range(K)]
        n_global = 0
        class_global = [-1] * len(self.classes)
        for k in range(K):
            for f in self.free_dofs[k]:
                cid = self.class_id[k][f]
                if cid < 0:
                    self.global_index[k][f] = n_global
                    n_global += 1
                elif class_global[cid] < 0:
                    class_global[cid] = n_global
                    self.global_index[k][f] = n_global
                    n_global += 1
                else:
                    self.global_index[k][f] = class_global[cid]
        self.n_global = n_global

    def _check_fully_matching(self, itf):
        d = self.mp.dim
        fa = _free_axes(itf.side_a[0], d)
        fb = _free_axes(itf.side_b[0], d)
        for i in range(d - 1):
            kv_a = self.bases[itf.patch_a].kvs[fa[i]]
            kv_b = self.bases[itf.patch_b].kvs[fb[itf.axis_map[i]]]
            if kv_a.degree != kv_b.degree:
                raise FullyMatchingError(
                    f"fully matching violated at {itf}: degrees "
                    f"{kv_a.degree} != {kv_b.degree} in interface direction {i}"
                )
            kb = kv_b.knots if not itf.flips[i] else 1.0 - kv_b.knots[::-1]
            if len(kv_a.knots) != len(kb):
                raise FullyMatchingError(
                    f"fully matching violated at {itf}: knot counts differ "
                    f"in interface direction {i}"
                )
            diff = np.abs(kv_a.knots - kb)
            if np.any(diff > 1e-12):
                j = int(np.argmax(diff > 1e-12))
                raise FullyMatchingError(
                    f"fully matching violated at {itf}: knot {j} differs "
                    f"in interface direction {i}"
                )

    def _label_entities(self):
        d = self.mp.dim
        bases = self.bases

        def set_entity(k, flat, entity):
            cid = self.class_id[k][flat]
            if cid < 0:
                return
            cls = self.classes[cid]
            if cls.entity is None:
                cls.entity = entity

        for vc, grp in enumerate(self.topo.vertex_classes):
            for k, bits in grp:
                multi = tuple(
                    0 if bits[a] == 0 else bases[k].dims[a] - 1 for a in range(d)
                )
                set_entity(k, bases[k].ravel(multi), ("vertex", vc))
        for ec, grp in enumerate(self.topo.edge_classes):
            for k, flat in self._edge_line_dofs(ec, interior=True):
                set_entity(k, flat, ("edge", ec))
        for fi, itf in enumerate(self.topo.interfaces):
            for flat in self._face_grid_interior(itf.patch_a, itf.side_a):
                set_entity(itf.patch_a, flat, ("face", fi))
        for cls in self.classes:
            if cls.entity is None:
                raise TopologyError(
                    f"coupled dof class {cls.members} not on any vertex/edge/face"
                )

    def _edge_line_dofs(self, ec, interior):
        """(patch, flat) pairs along every member edge of an edge class."""
        out = []
        for k, (free_axis, fixed) in self.topo.edge_classes[ec]:
            dims = self.bases[k].dims
            rng = np.arange(1, dims[free_axis] - 1) if interior else np.arange(dims[free_axis])
            multi = [None] * len(dims)
            for axis, end in fixed:
                multi[axis] = np.full(len(rng), 0 if end == 0 else dims[axis] - 1)
            multi[free_axis] = rng
            flats = np.ravel_multi_index(tuple(multi), dims)
            out.extend((k, int(f)) for f in flats)
        return out

    def _face_grid_interior(self, k, side):
        grid = self.bases[k].side_grid(*side)
        inner = grid[tuple(slice(1, n - 1) for n in grid.shape)]
        return inner.ravel()

    # --- entity dof sets used by the primal constraints ---

    def vertex_dof(self, vc, k):
        """Flat corner dof of patch k in vertex class vc (or None)."""
        d = self.mp.dim
        for kk, bits in self.topo.vertex_classes[vc]:
            if kk == k:
                multi = tuple(
                    0 if bits[a] == 0 else self.bases[k].dims[a] - 1 for a in range(d)
                )
                return self.bases[k].ravel(multi)
        return None

    def edge_dofs(self, ec, k, include_endpoints=False):
        """Flat dofs of patch k along edge class ec (interior by default)."""
        flats = [f for kk, f in self._edge_line_dofs(ec, interior=not include_endpoints)
                 if kk == k]
        flats = [f for f in flats if not self.dirichlet_mask[k][f]]
        return np.array(sorted(set(flats)), dtype=int)

    def face_dofs(self, fi, k):
        """Flat interior dofs of patch k on interface fi."""
        itf = self.topo.interfaces[fi]
        if k == itf.patch_a:
            side = itf.side_a
        elif k == itf.patch_b:
            side = itf.side_b
        else:
            return np.array([], dtype=int)
        flats = self._face_grid_interior(k, side)
        flats = [f for f in flats if not self.dirichlet_mask[k][f]]
        return np.array(sorted(flats), dtype=int)

    def patch_touches_dirichlet(self, k):
        return bool(self.dirichlet_mask[k].any())

    def conforming_dimension(self):
        """Counting identity: sum of free dofs minus coupling redundancy."""
        total = sum(len(f) for f in self.free_dofs)
        redundancy = sum(c.multiplicity - 1 for c in self.classes)
        return total - redundancy


def classify_dofs(mp, bases, topo):
    """Build the per-patch dof classification for the given bases."""
    return DofClassification(mp, topo, bases)
