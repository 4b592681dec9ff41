"""Dual-primal tearing and interconnecting on multi-patch spline spaces.

Per patch k the method keeps the local stiffness A^(k) (Dirichlet dofs
eliminated), primal constraint rows C^(k), and a fully redundant jump
matrix B^(k). The saddle matrices

    tilde A^(k) = [[A^(k), C^(k)^T], [C^(k), 0]]

are factorized once; the energy-minimizing basis Psi^(k) realizing unit
primal values feeds the coarse problem. The multiplier Schur operator F
and the multiplicity-scaled Dirichlet preconditioner M_sD are applied
matrix-free, reusing the local factorizations.

Primal candidates are vertex values, edge averages, and face averages of
spline coefficients. In 2D the "edge average" choice acts on the 1D
interfaces (the classification's face entities) and face averages are
invalid; jump rows for a coupled dof class are omitted exactly when the
class sits on a vertex that is primal.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .linalg import LinearOperator, SingularMatrixError, factorize, from_triplets

__all__ = [
    "IetiError",
    "FloatingPatchError",
    "PrimalChoice",
    "PrimalSpace",
    "JumpMatrices",
    "LocalIeti",
    "IetiSystem",
    "build_primal_constraints",
    "build_jump_matrix",
    "build_multiplicity_scaling",
    "energy_minimizing_basis",
]


class IetiError(Exception):
    pass


class FloatingPatchError(IetiError):
    pass


@dataclass(frozen=True)
class PrimalChoice:
    """Which quantities are made primal (continuous a priori)."""

    vertices: bool = False
    edge_averages: bool = False
    face_averages: bool = False

    NAMES = ("V", "E", "F", "VE", "VF", "EF", "VEF", "none")

    @classmethod
    def from_string(cls, s):
        key = s.strip()
        if key.lower() in ("none", ""):
            return cls()
        if key.upper() not in cls.NAMES:
            raise ValueError(f"unknown primal choice {s!r}; use one of {cls.NAMES}")
        key = key.upper()
        return cls("V" in key, "E" in key, "F" in key)

    def validate(self, dim):
        if dim == 2 and self.face_averages:
            raise ValueError("face averages are invalid in 2D (no 3D faces)")

    def is_empty(self):
        return not (self.vertices or self.edge_averages or self.face_averages)

    def __str__(self):
        if self.is_empty():
            return "none"
        return ("V" if self.vertices else "") + \
               ("E" if self.edge_averages else "") + \
               ("F" if self.face_averages else "")


class PrimalSpace:
    """Primal constraint rows C^(k), their global indexing R_c^(k), and the table."""

    def __init__(self, n_primal, C, Rc, table):
        self.n_primal = n_primal
        self.C = C          # per patch: (n_c_k, n_free_k) csr
        self.Rc = Rc        # per patch: (n_c_k, n_primal) binary csr
        self.table = table  # per primal dof: (kind, entity class index)


def _primal_entities(cls, choice, include_edge_endpoints):
    """Primal classes as (kind, idx, incident patches, per-patch dof rows)."""
    topo = cls.topo
    d = cls.mp.dim
    entities = []
    if choice.vertices:
        for vc, grp in enumerate(topo.vertex_classes):
            if topo.vertex_dirichlet[vc] or len(grp) < 2:
                continue
            rows = {}
            for k, _ in grp:
                dof = cls.vertex_dof(vc, k)
                if dof is None or cls.dirichlet_mask[k][dof]:
                    rows = None
                    break
                rows[k] = np.array([dof])
            if rows:
                entities.append(("vertex", vc, rows))
    if choice.edge_averages:
        if d == 3:
            for ec, grp in enumerate(topo.edge_classes):
                if topo.edge_dirichlet[ec]:
                    continue
                patches = sorted({k for k, _ in grp})
                if len(patches) < 2:
                    continue
                rows = {k: cls.edge_dofs(ec, k, include_edge_endpoints) for k in patches}
                if all(len(r) for r in rows.values()):
                    entities.append(("edge", ec, rows))
        else:
            # 2D: edge averages act on the 1D interfaces
            entities.extend(_face_entities(cls))
    if choice.face_averages and d == 3:
        entities.extend(_face_entities(cls))
    return entities


def _face_entities(cls):
    out = []
    for fi, itf in enumerate(cls.topo.interfaces):
        rows = {k: cls.face_dofs(fi, k) for k in (itf.patch_a, itf.patch_b)}
        if all(len(r) for r in rows.values()):
            out.append(("face", fi, rows))
    return out


def build_primal_constraints(classification, choice, edge_average_includes_endpoints=False):
    """Constraint rows selecting vertex values / edge averages / face averages.

    A vertex constraint is a unit row on the corner coefficient; averages
    are unweighted means of the class's coefficients (rows sum to one).
    Raises :class:`FloatingPatchError` if a patch without Dirichlet contact
    ends up without any constraint.
    """
    cls = classification
    choice.validate(cls.mp.dim)
    entities = _primal_entities(cls, choice, edge_average_includes_endpoints)
    K = cls.mp.n_patches
    triplets = [([], [], []) for _ in range(K)]   # rows, cols, vals of C^(k)
    rc_cols = [[] for _ in range(K)]              # global primal index per local row
    table = []
    for g, (kind, idx, rows) in enumerate(entities):
        table.append((kind, idx))
        for k, dofs in rows.items():
            local = len(rc_cols[k])
            w = 1.0 / len(dofs)
            r, c, v = triplets[k]
            for dof in dofs:
                r.append(local)
                c.append(cls.free_position[k][dof])
                v.append(w)
            rc_cols[k].append(g)
    n_primal = len(entities)
    C, Rc = [], []
    for k in range(K):
        n_c = len(rc_cols[k])
        n_free = len(cls.free_dofs[k])
        r, c, v = triplets[k]
        assert all(ci >= 0 for ci in c), "primal constraint touches a Dirichlet dof"
        C.append(from_triplets(n_c, n_free, r, c, v))
        Rc.append(from_triplets(n_c, n_primal, np.arange(n_c), rc_cols[k],
                                np.ones(n_c)))
        if n_c == 0 and not cls.patch_touches_dirichlet(k):
            raise FloatingPatchError(
                f"floating patch without primal constraints (patch {k})"
            )
    return PrimalSpace(n_primal, C, Rc, table)


class JumpMatrices:
    def __init__(self, n_lambda, B):
        self.n_lambda = n_lambda
        self.B = B  # per patch: (n_lambda, n_free_k) csr


def build_jump_matrix(classification, choice):
    """Fully redundant jump matrices: one row per pair of matched dofs.

    Every coupled dof class of multiplicity m contributes all m(m-1)/2
    pairwise rows (+1 / -1), except classes on primal vertices, which are
    handled by the coarse problem instead.
    """
    cls = classification
    K = cls.mp.n_patches
    triplets = [([], [], []) for _ in range(K)]
    row = 0
    for c in cls.classes:
        if choice.vertices and c.entity[0] == "vertex":
            continue
        members = c.members
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                ki, fi = members[i]
                kj, fj = members[j]
                ri, ci, vi = triplets[ki]
                ri.append(row)
                ci.append(cls.free_position[ki][fi])
                vi.append(1.0)
                rj, cj, vj = triplets[kj]
                rj.append(row)
                cj.append(cls.free_position[kj][fj])
                vj.append(-1.0)
                row += 1
    B = [
        from_triplets(row, len(cls.free_dofs[k]), *triplets[k])
        for k in range(K)
    ]
    return JumpMatrices(row, B)


def build_multiplicity_scaling(classification):
    """Per patch, the multiplicity of each interface dof (ordering of gamma)."""
    cls = classification
    return [cls.multiplicity[k][cls.gamma[k]].astype(float)
            for k in range(cls.mp.n_patches)]


def energy_minimizing_basis(A, C, factor=None):
    """Columns are minimal-energy extensions with unit primal value.

    Solves the saddle system [[A, C^T], [C, 0]] against [0; I] and keeps
    the displacement block; the result Psi satisfies C Psi = I.
    """
    n, n_c = A.shape[0], C.shape[0]
    if n_c == 0:
        return np.zeros((n, 0))
    if factor is None:
        saddle = sp.bmat([[A, C.T], [C, None]], format="csc")
        try:
            factor = factorize(saddle, "symmetric-indefinite")
        except SingularMatrixError as exc:
            raise FloatingPatchError(
                f"insufficient constraints on floating patch: {exc}"
            ) from exc
    rhs = np.zeros((n + n_c, n_c))
    rhs[n:, :] = np.eye(n_c)
    return factor.solve(rhs)[:n]


@dataclass
class LocalIeti:
    """Per-patch pieces: stiffness, constraints, jumps, saddle factor, basis."""

    A: object
    C: object
    Rc: object
    B: object
    factor: object
    psi: np.ndarray  # (n_free, n_c): local columns of the energy basis

    @property
    def n_free(self):
        return self.A.shape[0]

    @property
    def n_constraints(self):
        return self.C.shape[0]


class IetiSystem:
    """Factorized IETI-DP system: matrix-free F, M_sD, rhs, and recovery."""

    def __init__(self, classification, stiffness, choice,
                 edge_average_includes_endpoints=False, threads=1):
        cls = classification
        choice = choice if isinstance(choice, PrimalChoice) else PrimalChoice.from_string(choice)
        choice.validate(cls.mp.dim)
        self.classification = cls
        self.choice = choice
        K = cls.mp.n_patches
        primal = build_primal_constraints(cls, choice, edge_average_includes_endpoints)
        jumps = build_jump_matrix(cls, choice)
        self.primal = primal
        self.n_primal = primal.n_primal
        self.n_lambda = jumps.n_lambda

        def make_local(k):
            A = stiffness[k]
            C = primal.C[k]
            if C.shape[0] == 0:
                try:
                    factor = factorize(A, "spd")
                except SingularMatrixError as exc:
                    raise FloatingPatchError(
                        f"insufficient constraints on floating patch {k}: {exc}"
                    ) from exc
                psi = np.zeros((A.shape[0], 0))
            else:
                saddle = sp.bmat([[A, C.T], [C, None]], format="csc")
                try:
                    factor = factorize(saddle, "symmetric-indefinite")
                except SingularMatrixError as exc:
                    raise FloatingPatchError(
                        f"insufficient constraints on floating patch {k}: {exc}"
                    ) from exc
                psi = energy_minimizing_basis(A, C, factor=factor)
            return LocalIeti(A, C, primal.Rc[k], jumps.B[k], factor, psi)

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                self.local = list(pool.map(make_local, range(K)))
        else:
            self.local = [make_local(k) for k in range(K)]

        # primal coarse problem: small and dense by construction
        n_pi = self.n_primal
        coarse = np.zeros((n_pi, n_pi))
        cj_rows, cj_cols, cj_vals = [], [], []
        for loc in self.local:
            if loc.n_constraints == 0:
                continue
            rc = loc.Rc.tocoo()  # one global index per local constraint row
            g = rc.col[np.argsort(rc.row)]
            coarse[np.ix_(g, g)] += loc.psi.T @ (loc.A @ loc.psi)
            bk = loc.B.tocsr()
            active = np.nonzero(np.diff(bk.indptr))[0]
            if len(active):
                block = bk[active] @ loc.psi
                rr, cc = np.meshgrid(active, g, indexing="ij")
                cj_rows.append(rr.ravel())
                cj_cols.append(cc.ravel())
                cj_vals.append(block.ravel())
        if cj_rows:
            self.coarse_jump = from_triplets(
                self.n_lambda, n_pi,
                np.concatenate(cj_rows), np.concatenate(cj_cols),
                np.concatenate(cj_vals),
            )
        else:
            self.coarse_jump = sp.csr_matrix((self.n_lambda, n_pi))
        self.coarse_matrix = coarse
        self.coarse_factor = scipy.linalg.cho_factor(coarse) if n_pi else None

        # scaled Dirichlet pieces: interface/interior splitting per patch
        self.gamma = cls.gamma
        self.scaling = build_multiplicity_scaling(cls)
        self.B_gamma = []
        self._schur = []
        for k, loc in enumerate(self.local):
            gamma = cls.gamma[k]
            inner = cls.interior[k]
            A = loc.A.tocsr()
            Agg = A[gamma][:, gamma]
            Agi = A[gamma][:, inner]
            Aii = A[inner][:, inner]
            factor_ii = factorize(Aii, "spd") if len(inner) else None
            self.B_gamma.append(loc.B.tocsc()[:, gamma].tocsr())
            self._schur.append((Agg, Agi, factor_ii))

    # --- operator applications (accept vectors or column blocks) ---

    def apply_F(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = np.zeros_like(lam)
        for loc in self.local:
            t = loc.B.T @ lam
            rhs = _pad_rows(t, loc.n_constraints)
            out += loc.B @ loc.factor.solve(rhs)[: loc.n_free]
        if self.n_primal:
            w = self.coarse_jump.T @ lam
            out += self.coarse_jump @ scipy.linalg.cho_solve(self.coarse_factor, w)
        return out

    def compute_rhs_g(self, loads):
        """Multiplier right-hand side from the patch load vectors (free dofs)."""
        g = np.zeros(self.n_lambda)
        accum = np.zeros(self.n_primal)
        for loc, f in zip(self.local, loads):
            rhs = _pad_rows(f, loc.n_constraints)
            g += loc.B @ loc.factor.solve(rhs)[: loc.n_free]
            if loc.n_constraints:
                accum += loc.Rc.T @ (loc.psi.T @ f)
        if self.n_primal:
            g += self.coarse_jump @ scipy.linalg.cho_solve(self.coarse_factor, accum)
        return g

    def apply_scaled_dirichlet(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for bg, scale, (Agg, Agi, factor_ii) in zip(self.B_gamma, self.scaling, self._schur):
            w = bg.T @ r
            if w.shape[0] == 0:
                continue
            w = w / (scale[:, None] if w.ndim == 2 else scale)
            v = Agg @ w
            if factor_ii is not None:
                v -= Agi @ factor_ii.solve(Agi.T @ w)
            v = v / (scale[:, None] if v.ndim == 2 else scale)
            out += bg @ v
        return out

    def recover_solution(self, lam, loads):
        """Patch coefficient vectors (free dofs) for a converged multiplier."""
        lam = np.asarray(lam, dtype=float)
        mu = None
        if self.n_primal:
            accum = np.zeros(self.n_primal)
            for loc, f in zip(self.local, loads):
                if loc.n_constraints:
                    accum += loc.Rc.T @ (loc.psi.T @ f)
            mu = scipy.linalg.cho_solve(
                self.coarse_factor, accum - self.coarse_jump.T @ lam
            )
        solution = []
        for loc, f in zip(self.local, loads):
            rhs = _pad_rows(f - loc.B.T @ lam, loc.n_constraints)
            u = loc.factor.solve(rhs)[: loc.n_free]
            if loc.n_constraints and mu is not None:
                u = u + loc.psi @ (loc.Rc @ mu)
            solution.append(u)
        return solution

    def operator_F(self):
        return LinearOperator(self.n_lambda, self.apply_F)

    def operator_scaled_dirichlet(self):
        return LinearOperator(self.n_lambda, self.apply_scaled_dirichlet)

    def jump_spread(self, solution):
        """Largest coefficient disagreement across any coupled dof class."""
        cls = self.classification
        worst = 0.0
        for c in cls.classes:
            vals = [solution[k][cls.free_position[k][f]] for k, f in c.members]
            worst = max(worst, float(np.max(vals) - np.min(vals)))
        return worst


def _pad_rows(t, n_extra):
    if n_extra == 0:
        return t
    if t.ndim == 1:
        return np.concatenate([t, np.zeros(n_extra)])
    return np.vstack([t, np.zeros((n_extra, t.shape[1]))])
