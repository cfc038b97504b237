"""Thin, deterministic wrapper around the convex subproblem solves.

The optimizer stack needs a handful of small program classes: covariance
SDPs with trace constraints, a feasibility SDP, per-user detector QCQPs,
and a disc-constrained reflection QP.  Every one is expressed as a
:class:`ConicProgram` and solved through :func:`solve_conic`; this
module owns the solver choice, status mapping, and numerical hygiene so
the callers never touch solver details.

Two backends sit behind the single entry point.  The general path
models the program with cvxpy (built once with ``cvxpy.Parameter``
slots, re-solved with fresh data, DPP-compliant so canonicalisation is
cached).  The detector and reflection updates additionally carry a
hand-assembled cone lowering (:func:`ball_qp`) that feeds Clarabel
directly; those two programs run thousands of times per design and the
modelling layer would otherwise dominate the whole pipeline.  Clarabel
is the primary solver either way, with SCS as a slower high-accuracy
fallback on the cvxpy path.  All of them are deterministic, which the
reproducibility guarantees rely on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import clarabel
import cvxpy as cp
import numpy as np
from scipy import sparse

PRIMARY_TOL = 1e-7    # requested Clarabel gap/feasibility targets
FALLBACK_TOL = 1e-6   # accepted accuracy when the fallback path is used

_EIG_CLIP = 1e-6      # largest negative eigenvalue repaired silently


@dataclass
class ConicProgram:
    """A prepared program: a cvxpy form plus, optionally, a direct lowering.

    ``set`` stages parameter values without touching cvxpy; whichever
    backend ends up solving reads the staged data.  Staging matters for
    the hot programs, where even parameter validation would be measurable.
    """

    problem: cp.Problem
    variables: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    psd_names: tuple = ()     # variables to re-project onto the PSD cone
    direct: "_BallQP | None" = None
    data: dict = field(default_factory=dict)

    def set(self, **values) -> "ConicProgram":
        self.data.update(values)
        return self

    def _sync(self) -> None:
        for name, val in self.data.items():
            self.params[name].value = val


@dataclass
class ConicSolution:
    status: str               # "optimal" | "infeasible" | "numerical-failure"
    values: dict
    objective: float | None
    solver: str
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class SubproblemError(RuntimeError):
    """A convex subproblem could not be solved to acceptable accuracy."""


def _clean_psd(mat: np.ndarray) -> np.ndarray:
    """Hermitian-average and clip solver round-off off the PSD cone."""
    sym = 0.5 * (mat + mat.conj().T)
    w, V = np.linalg.eigh(sym)
    if w[0] >= 0.0:
        return sym
    if w[0] < -_EIG_CLIP * max(1.0, float(w[-1])):
        raise SubproblemError(f"PSD variable far off the cone (min eig {w[0]:.3e})")
    return (V * np.clip(w, 0.0, None)) @ V.conj().T


def _extract(program: ConicProgram, solver: str, tol: float) -> ConicSolution:
    values = {}
    for name, var in program.variables.items():
        val = var.value
        if val is None:
            raise SubproblemError(f"solver returned no value for {name!r}")
        if name in program.psd_names:
            val = _clean_psd(np.asarray(val))
        elif isinstance(val, np.ndarray):
            val = val.copy()
        values[name] = val
    obj = program.problem.value
    return ConicSolution(status="optimal", values=values,
                         objective=None if obj is None else float(obj),
                         solver=solver, tolerance=tol)


def solve_conic(program: ConicProgram) -> ConicSolution:
    """Solve, preferring Clarabel and falling back to SCS once.

    Programs that carry a direct lowering are handed to Clarabel without
    the modelling layer; if that declines (non-finite data, solver not
    cleanly converged) the cvxpy route below gives the authoritative
    answer.  Returns a solution whose status is one of ``optimal``,
    ``infeasible``, or ``numerical-failure``; statuses never leak solver
    specific names.  ``unbounded`` is treated as a numerical failure
    because every program in this package is bounded by construction.
    """
    if program.direct is not None:
        sol = program.direct.solve(program.data)
        if sol is not None:
            return sol
    program._sync()
    prob = program.problem
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            # stock targets stall a digit short on degenerate cut rows;
            # one digit looser is still well inside every caller tolerance
            prob.solve(solver=cp.CLARABEL, warm_start=False,
                       tol_gap_abs=PRIMARY_TOL, tol_gap_rel=PRIMARY_TOL,
                       tol_feas=PRIMARY_TOL)
        status = prob.status
    except (cp.SolverError, Exception):
        status = None

    if status == cp.OPTIMAL:
        return _extract(program, "clarabel", PRIMARY_TOL)
    if status == cp.INFEASIBLE:
        return ConicSolution("infeasible", {}, None, "clarabel", PRIMARY_TOL)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prob.solve(solver=cp.SCS, warm_start=False, eps=1e-7, max_iters=200_000)
        status = prob.status
    except (cp.SolverError, Exception):
        return ConicSolution("numerical-failure", {}, None, "none", np.inf)

    if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return _extract(program, "scs", FALLBACK_TOL)
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return ConicSolution("infeasible", {}, None, "scs", FALLBACK_TOL)
    return ConicSolution("numerical-failure", {}, None, "scs", np.inf)


class _BallQP:
    """Hand-assembled cone data for the unit-ball quadratic family.

    In real coordinates ``w = [Re z; Im z]`` the objective quadratic is
    the standard symmetric embedding of ``F F^H`` (plus the ridge on the
    diagonal) and each ball ``||z_blk|| <= 1`` is one second-order cone
    ``(1, w_blk)``.  The equality map, cone list, and the dense-column
    sparsity pattern of the quadratic are fixed per shape, so a solve is
    one matrix assembly and one Clarabel call.
    """

    def __init__(self, dim: int, block: int, ridge: bool, var: str):
        self.dim, self.block, self.ridge, self.var = dim, block, ridge, var
        n2 = 2 * dim
        nblk = dim // block
        span = 2 * block + 1
        rows, cols = [], []
        bvec = np.zeros(nblk * span)
        for i in range(nblk):
            top = i * span
            bvec[top] = 1.0
            for j in range(block):
                rows += [top + 1 + j, top + 1 + block + j]
                cols += [i * block + j, dim + i * block + j]
        self._a = sparse.csc_matrix((-np.ones(len(rows)), (rows, cols)),
                                    shape=(nblk * span, n2))
        self._b = bvec
        self._cones = [clarabel.SecondOrderConeT(span)] * nblk
        self._settings = clarabel.DefaultSettings()
        self._settings.verbose = False
        self._indices = np.tile(np.arange(n2), n2)
        self._indptr = np.arange(0, n2 * n2 + 1, n2)

    def solve(self, data: dict) -> ConicSolution | None:
        dim = self.dim
        factor = np.asarray(data["F"], dtype=complex)
        lin = np.asarray(data["c"], dtype=complex)
        if not (np.all(np.isfinite(factor)) and np.all(np.isfinite(lin))):
            return None
        gram = factor @ factor.conj().T
        n2 = 2 * dim
        pbar = np.empty((n2, n2))
        pbar[:dim, :dim] = gram.real
        pbar[dim:, dim:] = gram.real
        pbar[:dim, dim:] = -gram.imag
        pbar[dim:, :dim] = gram.imag
        const = 0.0
        if self.ridge:
            sq = float(data["sq"])
            sq_anchor = np.asarray(data["sq_anchor"], dtype=complex)
            if not (np.isfinite(sq) and np.all(np.isfinite(sq_anchor))):
                return None
            pbar.flat[::n2 + 1] += sq * sq
            lin = lin + sq * sq_anchor
            const = float(np.vdot(sq_anchor, sq_anchor).real)
        pbar *= 2.0
        q = -2.0 * np.concatenate([lin.real, lin.imag])
        pmat = sparse.csc_matrix((pbar.ravel(order="F"), self._indices, self._indptr),
                                 shape=(n2, n2))
        res = clarabel.DefaultSolver(pmat, q, self._a, self._b, self._cones,
                                     self._settings).solve()
        if res.status != clarabel.SolverStatus.Solved:
            return None
        x = np.asarray(res.x)
        return ConicSolution(status="optimal", values={self.var: x[:dim] + 1j * x[dim:]},
                             objective=float(res.obj_val) + const,
                             solver="clarabel", tolerance=PRIMARY_TOL)


_ball_qp_cache: dict = {}


def ball_qp(dim: int, block: int, *, ridge: bool = False, var: str = "z") -> ConicProgram:
    """Cached template for the unit-ball quadratic family.

        min  ||F^H z||^2  [+ ||sq*z - sq_anchor||^2]  - 2 Re{c^H z}
        s.t. ||z_blk||_2 <= 1  on contiguous blocks of size ``block``,

    with complex ``z`` of length ``dim``.  Stage ``F`` (a dim x dim
    factor of the quadratic) and ``c`` via ``set``; with ``ridge`` also
    ``sq`` (root of the ridge weight) and ``sq_anchor`` (that root times
    the anchor point).  The detector update uses per-transmitter blocks,
    the reflection update per-element discs (``block = 1``).
    """
    key = (dim, block, ridge, var)
    if key in _ball_qp_cache:
        return _ball_qp_cache[key]
    if dim % block != 0:
        raise ValueError("block size must divide the dimension")
    z = cp.Variable(dim, complex=True)
    factor = cp.Parameter((dim, dim), complex=True)
    lin = cp.Parameter(dim, complex=True)
    params = {"F": factor, "c": lin}
    obj = cp.sum_squares(cp.conj(factor).T @ z) - 2 * cp.real(cp.conj(lin) @ z)
    if ridge:
        sq = cp.Parameter(nonneg=True)
        sq_anchor = cp.Parameter(dim, complex=True)
        obj = obj + cp.sum_squares(sq * z - sq_anchor)
        params.update(sq=sq, sq_anchor=sq_anchor)
    if block == 1:
        cons = [cp.abs(z) <= 1]
    else:
        cons = [cp.norm(z[i * block:(i + 1) * block]) <= 1 for i in range(dim // block)]
    prog = ConicProgram(problem=cp.Problem(cp.Minimize(obj), cons),
                        variables={var: z}, params=params,
                        direct=_BallQP(dim, block, ridge, var))
    _ball_qp_cache[key] = prog
    return prog


def dc_rank_step(q_prev: np.ndarray) -> np.ndarray:
    """Unit leading eigenvector of the previous covariance iterate.

    ``u^H Q u`` is the affine minorant of the spectral norm at
    ``q_prev``; constraining ``tr(Q) - u^H Q u`` from above is the
    convexified surrogate of a rank-one requirement.
    """
    sym = 0.5 * (q_prev + q_prev.conj().T)
    _, V = np.linalg.eigh(sym)
    u = V[:, -1]
    # fix the overall phase so repeated runs give the same vector
    pivot = np.argmax(np.abs(u))
    ph = u[pivot] / abs(u[pivot]) if abs(u[pivot]) > 0 else 1.0
    return u / ph


def rank_certificate(q: np.ndarray) -> float:
    """Relative trace-minus-spectral-norm gap; ~0 certifies rank one."""
    w = np.linalg.eigvalsh(0.5 * (q + q.conj().T))
    tr = float(np.sum(w))
    if tr <= 0.0:
        return 0.0
    return float((tr - w[-1]) / tr)


def rank_one_extract(q: np.ndarray):
    """Leading beam of a covariance and the relative truncation error."""
    sym = 0.5 * (q + q.conj().T)
    w, V = np.linalg.eigh(sym)
    if w[-1] <= 0.0:
        return np.zeros(q.shape[0], dtype=complex), 0.0
    u = V[:, -1]
    pivot = np.argmax(np.abs(u))
    u = u / (u[pivot] / abs(u[pivot]))
    x = np.sqrt(w[-1]) * u
    err = float(np.linalg.norm(sym - np.outer(x, x.conj())) / np.linalg.norm(sym))
    return x, err
