"""Independent reference implementations used to freeze expected values.

Everything here deliberately avoids the code paths it is checking: basis
values come from the textbook recursion, dense solves from hand-rolled
Gaussian elimination, the multiplier Schur complement from an SVD null
space of the primal continuity constraints, and the preconditioner from
dense Schur complements.
"""

import numpy as np
import scipy.linalg

from ietidp import assembly, geometry, topology
from ietidp.cli import manufactured_solution
from ietidp.splines import make_tensor_basis


def cox_de_boor_recursive(knots, i, p, x, right_closed_end=None):
    """Textbook B-spline recursion; 0/0 terms are zero by convention."""
    if right_closed_end is None:
        right_closed_end = knots[-1]
    if p == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        # close the last nonempty span on the right
        if x == right_closed_end and knots[i] < knots[i + 1] == right_closed_end:
            return 1.0
        return 0.0
    out = 0.0
    d1 = knots[i + p] - knots[i]
    if d1 > 0.0:
        out += (x - knots[i]) / d1 * cox_de_boor_recursive(knots, i, p - 1, x, right_closed_end)
    d2 = knots[i + p + 1] - knots[i + 1]
    if d2 > 0.0:
        out += (knots[i + p + 1] - x) / d2 * cox_de_boor_recursive(knots, i + 1, p - 1, x, right_closed_end)
    return out


def gauss_elimination_solve(A, b):
    """Dense Gaussian elimination with partial pivoting."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = A.shape[0]
    single = b.ndim == 1
    B = b.reshape(n, -1)
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if A[piv, k] == 0.0:
            raise ZeroDivisionError("singular matrix in elimination oracle")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            B[[k, piv]] = B[[piv, k]]
        for i in range(k + 1, n):
            m = A[i, k] / A[k, k]
            A[i, k:] -= m * A[k, k:]
            B[i] -= m * B[k]
    x = np.zeros_like(B)
    for k in range(n - 1, -1, -1):
        x[k] = (B[k] - A[k, k + 1:] @ x[k + 1:]) / A[k, k]
    return x[:, 0] if single else x


def build_problem(mp, p, r, f=None, choice=None, **kwargs):
    """Shared pipeline front end: classification, stiffness, loads, system."""
    from ietidp import ieti

    d = mp.dim
    topo = topology.build_topology(mp)
    bases = [make_tensor_basis(p, 2 ** r, d) for _ in mp.patches]
    cls = topology.classify_dofs(mp, bases, topo)
    quad = assembly.gauss_rule(p + 1, d)
    if f is None:
        _, f = manufactured_solution(d)
    stiffness, loads = [], []
    for k, patch in enumerate(mp.patches):
        A = assembly.assemble_stiffness_full(patch, bases[k], quad)
        free = cls.free_dofs[k]
        stiffness.append(A[free][:, free].tocsr())
        loads.append(assembly.assemble_load(patch, bases[k], quad, f)[free])
    system = None
    if choice is not None:
        system = ieti.IetiSystem(cls, stiffness, choice, **kwargs)
    return {
        "mp": mp, "topo": topo, "bases": bases, "cls": cls,
        "stiffness": stiffness, "loads": loads, "system": system,
    }


def generic_rhs(x):
    """Smooth, deliberately unsymmetric source term."""
    out = np.exp(0.7 * x[:, 0]) * (1.0 + 0.5 * x[:, 1])
    if x.shape[1] > 2:
        out = out * (1.3 - 0.4 * x[:, 2])
    return out


def monolithic_solve(prob):
    """Direct solve of the assembled conforming global system."""
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    cls = prob["cls"]
    n = cls.conforming_dimension()
    A = sp.lil_matrix((n, n))
    rhs = np.zeros(n)
    for k, Ak in enumerate(prob["stiffness"]):
        gidx = cls.global_index[k][cls.free_dofs[k]]
        Ak = Ak.tocoo()
        for i, j, v in zip(Ak.row, Ak.col, Ak.data):
            A[gidx[i], gidx[j]] += v
        rhs[gidx] += prob["loads"][k]
    u = spla.spsolve(A.tocsc(), rhs)
    per_patch = []
    for k in range(cls.mp.n_patches):
        per_patch.append(u[cls.global_index[k][cls.free_dofs[k]]])
    return per_patch


def stacked_jump_matrix(system):
    K = len(system.local)
    return np.hstack([loc.B.toarray() for loc in system.local])


def primal_continuity_rows(system, cls):
    """Rows whose null space is the partially assembled (primal) space."""
    K = cls.mp.n_patches
    nf = [len(cls.free_dofs[k]) for k in range(K)]
    offs = np.concatenate([[0], np.cumsum(nf)])
    n = offs[-1]
    rows = []
    prim = system.primal
    for g in range(prim.n_primal):
        pieces = []
        for k in range(K):
            Rck = prim.Rc[k].toarray()
            Ck = prim.C[k].toarray()
            for lc in range(Rck.shape[0]):
                if Rck[lc, g] == 1.0:
                    row = np.zeros(n)
                    row[offs[k]:offs[k + 1]] = Ck[lc]
                    pieces.append(row)
        for a in range(len(pieces) - 1):
            rows.append(pieces[a] - pieces[a + 1])
    return np.array(rows) if rows else np.zeros((0, n)), offs


def dense_F_oracle(prob):
    """Schur complement on the multipliers via an SVD null-space basis.

    Independent route: minimize energy over the subspace where all primal
    quantities are continuous (null space of the pairwise constraint rows),
    then eliminate everything but the multipliers.
    """
    system = prob["system"]
    cls = prob["cls"]
    T, offs = primal_continuity_rows(system, cls)
    n = offs[-1]
    A = np.zeros((n, n))
    for k, Ak in enumerate(prob["stiffness"]):
        A[offs[k]:offs[k + 1], offs[k]:offs[k + 1]] = Ak.toarray()
    B = stacked_jump_matrix(system)
    Z = scipy.linalg.null_space(T) if T.shape[0] else np.eye(n)
    BZ = B @ Z
    F = BZ @ np.linalg.solve(Z.T @ A @ Z, BZ.T)
    f = np.concatenate(prob["loads"])
    g = BZ @ np.linalg.solve(Z.T @ A @ Z, Z.T @ f)
    return F, g


def dense_scaled_dirichlet_oracle(prob):
    """M_sD from dense per-patch interface Schur complements."""
    system = prob["system"]
    cls = prob["cls"]
    n_lambda = system.n_lambda
    M = np.zeros((n_lambda, n_lambda))
    for k, Ak in enumerate(prob["stiffness"]):
        gamma = cls.gamma[k]
        inner = cls.interior[k]
        if len(gamma) == 0:
            continue
        Ad = Ak.toarray()
        Agg = Ad[np.ix_(gamma, gamma)]
        S = Agg
        if len(inner):
            Agi = Ad[np.ix_(gamma, inner)]
            Aii = Ad[np.ix_(inner, inner)]
            S = Agg - Agi @ np.linalg.solve(Aii, Agi.T)
        Bg = system.local[k].B.toarray()[:, gamma]
        Dinv = np.diag(1.0 / system.scaling[k])
        M += Bg @ Dinv @ S @ Dinv @ Bg.T
    return M


def dense_preconditioned_kappa(F, M, cutoff=1e-10):
    """Condition number of M F restricted to range(F).

    Eigenvalues of Lam^{1/2} V^T M V Lam^{1/2} over the eigenpairs of F
    with eigenvalue above the relative cutoff (the same filter the PCG
    estimate applies to redundancy artifacts).
    """
    w, V = np.linalg.eigh(0.5 * (F + F.T))
    keep = w > cutoff * w.max()
    Vr = V[:, keep] * np.sqrt(w[keep])
    H = Vr.T @ M @ Vr
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    ev = ev[ev > cutoff * ev.max()]
    return ev[-1] / ev[0], ev


def run_pcg_on_problem(prob, tol=1e-10, max_iter=2000, seed=0, rhs_loads=None):
    """Library-level solve with a generic scaled random start."""
    from ietidp.krylov import pcg

    system = prob["system"]
    loads = prob["loads"] if rhs_loads is None else rhs_loads
    g = system.compute_rhs_g(loads)
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(system.n_lambda)
    ng = np.linalg.norm(g)
    if system.n_lambda and ng > 0:
        nf = np.linalg.norm(system.apply_F(x0))
        x0 *= ng / nf if nf > 0 else 0.0
    lam, report = pcg(system.apply_F, system.apply_scaled_dirichlet, g,
                      x0=x0, tol=tol, max_iter=max_iter)
    return lam, report, system.recover_solution(lam, loads)
