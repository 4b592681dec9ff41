import itertools

import numpy as np
import pytest

from ietidp.geometry import (
    MultiPatch,
    Patch,
    make_fichera,
    make_unit_hypercube_multipatch,
)
from ietidp.splines import KnotVector, TensorBasis, make_tensor_basis
from ietidp.topology import (
    FullyMatchingError,
    NonMatchingInterfaceError,
    UnassignedBoundaryError,
    _align_grid,
    build_topology,
    classify_dofs,
)


def classified(mp, p, r):
    topo = build_topology(mp)
    bases = [make_tensor_basis(p, 2 ** r, mp.dim) for _ in mp.patches]
    return topo, bases, classify_dofs(mp, bases, topo)


def test_two_patch_square():
    mp = make_unit_hypercube_multipatch(2, (2, 1))
    topo = build_topology(mp)
    assert topo.n_interfaces == 1
    itf = topo.interfaces[0]
    assert {itf.patch_a, itf.patch_b} == {0, 1}
    assert len(topo.vertex_classes) == 2
    assert all(topo.vertex_dirichlet)
    assert topo.edge_classes == []


def test_eight_patch_cube_counts():
    mp = make_unit_hypercube_multipatch(3, (2, 2, 2))
    topo = build_topology(mp)
    assert topo.n_interfaces == 12
    free_edges = [grp for grp, d in zip(topo.edge_classes, topo.edge_dirichlet) if not d]
    assert len(free_edges) == 6          # the six half-axes through the center
    assert all(len(grp) == 4 for grp in free_edges)
    free_vertices = [grp for grp, d in zip(topo.vertex_classes, topo.vertex_dirichlet) if not d]
    assert len(free_vertices) == 1       # the center vertex
    assert len(free_vertices[0]) == 8


def test_fichera_nine_interfaces():
    for twist in (0.0, 0.25):
        topo = build_topology(make_fichera(twist))
        assert topo.n_interfaces == 9


def test_fichera_free_entities():
    topo = build_topology(make_fichera(0.0))
    free_edges = [grp for grp, d in zip(topo.edge_classes, topo.edge_dirichlet) if not d]
    # one free edge per coordinate half-axis entering the domain
    assert len(free_edges) == 3
    assert sorted(len(g) for g in free_edges) == [4, 4, 4]
    assert all(d for d in topo.vertex_dirichlet)  # every shared corner is on the boundary


def test_unassigned_boundary_error():
    mp = make_unit_hypercube_multipatch(2, (2, 1))
    mp.dirichlet.discard((0, (0, 0)))
    with pytest.raises(UnassignedBoundaryError, match="patch 0"):
        build_topology(mp)


def test_partial_overlap_error():
    # both sides share their two endpoints but one of them bulges inbetween
    straight = Patch(
        make_tensor_basis(1, 1, 2),
        np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]),
    )
    kvs = (KnotVector(1, [0, 0, 1, 1]), KnotVector(2, [0, 0, 0, 1, 1, 1]))
    bulged = Patch(
        TensorBasis(kvs),
        np.array([
            [1.0, 0.0], [1.2, 0.5], [1.0, 1.0],  # xmin side: curved trace
            [2.0, 0.0], [2.0, 0.5], [2.0, 1.0],
        ]),
    )
    mp = MultiPatch([straight, bulged], {
        (0, (0, 0)), (0, (1, 0)), (0, (1, 1)),
        (1, (0, 1)), (1, (1, 0)), (1, (1, 1)),
    })
    with pytest.raises(NonMatchingInterfaceError):
        build_topology(mp)


def test_matching_symmetric_involution():
    mp = make_fichera(0.3)
    topo = build_topology(mp)
    bases = [make_tensor_basis(2, 2, 3) for _ in mp.patches]
    for itf in topo.interfaces:
        ga = bases[itf.patch_a].side_grid(*itf.side_a)
        gb = bases[itf.patch_b].side_grid(*itf.side_b)
        aligned = _align_grid(gb, itf.axis_map, itf.flips, ga.shape)
        # invert: position of each aligned entry recovers the original grid
        back = np.empty_like(gb)
        inv_map = np.argsort(itf.axis_map)
        back = _align_grid(aligned, tuple(inv_map),
                           tuple(itf.flips[inv_map[i]] for i in range(len(inv_map))),
                           gb.shape)
        assert np.array_equal(back, gb)


def test_two_patch_square_classification():
    mp = make_unit_hypercube_multipatch(2, (2, 1))
    _, bases, cls = classified(mp, 1, 1)
    # 3x3 dofs per patch; the interface layer holds 3 matched dofs, one free
    assert len(cls.classes) == 1
    assert cls.classes[0].multiplicity == 2
    assert [len(g) for g in cls.gamma] == [1, 1]
    assert cls.conforming_dimension() == 3


def test_single_patch_all_interior():
    mp = make_unit_hypercube_multipatch(2, (1, 1))
    _, bases, cls = classified(mp, 2, 1)
    assert cls.classes == []
    assert len(cls.gamma[0]) == 0
    assert len(cls.interior[0]) == len(cls.free_dofs[0])


def test_center_vertex_multiplicity_eight():
    mp = make_unit_hypercube_multipatch(3, (2, 2, 2))
    _, bases, cls = classified(mp, 2, 1)
    vertex_classes = [c for c in cls.classes if c.entity[0] == "vertex"]
    assert len(vertex_classes) == 1
    assert vertex_classes[0].multiplicity == 8


def test_edge_multiplicity_in_221_split():
    mp = make_unit_hypercube_multipatch(3, (2, 2, 1))
    _, bases, cls = classified(mp, 1, 1)
    mults = {c.entity[0]: c.multiplicity for c in cls.classes}
    edge_classes = [c for c in cls.classes if c.entity[0] == "edge"]
    assert edge_classes and all(c.multiplicity == 4 for c in edge_classes)
    face_classes = [c for c in cls.classes if c.entity[0] == "face"]
    assert face_classes and all(c.multiplicity == 2 for c in face_classes)


def test_conforming_dimension_against_direct_count():
    # independent count: global dofs on the conforming tensor grid
    for splits, p, r in [((2, 1), 1, 1), ((2, 2), 2, 1), ((3, 2), 1, 2)]:
        mp = make_unit_hypercube_multipatch(2, splits)
        _, bases, cls = classified(mp, p, r)
        n = 2 ** r
        # per direction: s patches of n+p dofs, one merged layer per interface,
        # minus the two Dirichlet layers
        direct = int(np.prod([s * (n + p) - (s - 1) - 2 for s in splits]))
        assert cls.conforming_dimension() == direct


def test_classification_invariant_under_patch_reordering():
    mp = make_unit_hypercube_multipatch(2, (2, 2))
    perm = [2, 0, 3, 1]
    patches = [mp.patches[k] for k in perm]
    inv = {old: new for new, old in enumerate(perm)}
    dirichlet = {(inv[k], side) for k, side in mp.dirichlet}
    mp2 = MultiPatch(patches, dirichlet)
    _, _, cls1 = classified(mp, 2, 1)
    _, _, cls2 = classified(mp2, 2, 1)
    sets1 = {frozenset((inv[k], f) for k, f in c.members) for c in cls1.classes}
    sets2 = {frozenset(c.members) for c in cls2.classes}
    assert sets1 == sets2
    assert cls1.conforming_dimension() == cls2.conforming_dimension()


def test_fully_matching_violated_degree():
    mp = make_unit_hypercube_multipatch(2, (2, 1))
    topo = build_topology(mp)
    bases = [make_tensor_basis(1, 2, 2), make_tensor_basis(2, 2, 2)]
    with pytest.raises(FullyMatchingError, match="degrees"):
        classify_dofs(mp, bases, topo)


def test_fully_matching_violated_knots():
    mp = make_unit_hypercube_multipatch(2, (2, 1))
    topo = build_topology(mp)
    bases = [make_tensor_basis(1, 2, 2), make_tensor_basis(1, 3, 2)]
    with pytest.raises(FullyMatchingError, match="knot"):
        classify_dofs(mp, bases, topo)


def test_gamma_dofs_have_multiplicity_at_least_two():
    mp = make_fichera(0.2)
    _, bases, cls = classified(mp, 2, 1)
    for k in range(mp.n_patches):
        assert np.all(cls.multiplicity[k][cls.gamma[k]] >= 2)
        assert np.all(cls.multiplicity[k][cls.interior[k]] == 1)


def test_free_gamma_interior_partition():
    mp = make_fichera(0.15)
    _, bases, cls = classified(mp, 2, 1)
    for k in range(mp.n_patches):
        n_free = len(cls.free_dofs[k])
        union = np.union1d(cls.gamma[k], cls.interior[k])
        assert len(union) == n_free
        assert len(cls.gamma[k]) + len(cls.interior[k]) == n_free


def test_reentrant_edge_is_dirichlet_everywhere():
    # the three patches around the re-entrant edge each contribute the edge
    # dofs; the class must be eliminated because the edge lies on the boundary
    mp = make_fichera(0.0)
    topo, bases, cls = classified(mp, 2, 1), None, None
    topo = build_topology(mp)
    reentrant = [
        (grp, diri)
        for grp, diri in zip(topo.edge_classes, topo.edge_dirichlet)
        if len(grp) == 3
    ]
    assert reentrant and all(diri for _, diri in reentrant)
