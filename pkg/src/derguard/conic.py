"""Symbolic builder for second-order-cone programs.

A :class:`ConicProgram` collects named variable blocks, linear equalities,
scalar inequalities, second-order-cone memberships and convex quadratic cost
terms, then compiles everything into the standard embedding

    minimize    c'x
    subject to  A x = b
                G x + s = h,   s in K

where K is a product of a nonnegative orthant and second-order cones.
Quadratic costs ``w * (a'x + d)**2`` are lowered onto epigraph variables
through the rotated identity ``t**2 <= s  <=>  (s+1, s-1, 2t) in Q^3``, so the
compiled program is a pure cone LP that any conforming solver backend can
consume.

Rows are stored in sparse triplet form; ``compile`` emits CSR matrices with
the orthant block first and the cone blocks grouped by dimension so the
solver can process equal-sized cones in vectorized batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class VarBlock:
    name: str
    offset: int
    size: int
    nonneg: bool


@dataclass
class ConeDims:
    """Cone layout of the inequality block: orthant rows, then SOC sizes."""

    nonneg: int
    soc: list[int]

    @property
    def total(self) -> int:
        return self.nonneg + int(sum(self.soc))

    @property
    def degree(self) -> int:
        # barrier degree: one per orthant row, one per cone
        return self.nonneg + len(self.soc)


@dataclass
class StandardConeProgram:
    """Compiled numeric form handed to a solver backend."""

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    dims: ConeDims
    obj_const: float = 0.0
    var_slices: dict[str, slice] = field(default_factory=dict)


@dataclass
class ConicSolution:
    status: str  # optimal | infeasible | unbounded | max_iter
    x: np.ndarray | None
    y: np.ndarray | None
    z: np.ndarray | None
    s: np.ndarray | None
    objective: float | None
    iterations: int
    residuals: dict
    certificate: dict | None = None
    var_slices: dict[str, slice] = field(default_factory=dict)

    def value(self, name: str) -> np.ndarray:
        if self.x is None:
            raise KeyError(f"no primal point available (status={self.status})")
        return self.x[self.var_slices[name]]

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class ConicProgram:
    def __init__(self):
        self._blocks: dict[str, VarBlock] = {}
        self._n = 0
        self._cost_cols: list[np.ndarray] = []
        self._cost_vals: list[np.ndarray] = []
        # equality triplets, one (cols, vals, rhs) entry per row
        self._eq_rows: list[tuple[np.ndarray, np.ndarray, float]] = []
        # orthant rows a'x <= b
        self._le_rows: list[tuple[np.ndarray, np.ndarray, float]] = []
        # SOC blocks: list of affine rows (cols, vals, const), head row first
        self._soc_blocks: list[list[tuple[np.ndarray, np.ndarray, float]]] = []
        # quadratic cost terms (weight, cols, vals, const)
        self._quad_terms: list[tuple[float, np.ndarray, np.ndarray, float]] = []
        self.obj_const = 0.0

    # ---- variables ------------------------------------------------------

    def add_var(self, name: str, size: int = 1, nonneg: bool = False) -> np.ndarray:
        """Register a variable block; returns its global indices."""
        if name in self._blocks:
            raise ValueError(f"duplicate variable block {name!r}")
        if size <= 0:
            raise ValueError(f"variable block {name!r} must have positive size")
        blk = VarBlock(name, self._n, int(size), bool(nonneg))
        self._blocks[name] = blk
        self._n += blk.size
        return np.arange(blk.offset, blk.offset + blk.size)

    def indices(self, name: str) -> np.ndarray:
        blk = self._blocks[name]
        return np.arange(blk.offset, blk.offset + blk.size)

    @property
    def n_vars(self) -> int:
        return self._n

    # ---- objective ------------------------------------------------------

    def add_cost(self, cols, vals) -> None:
        cols, vals = self._row(cols, vals)
        self._cost_cols.append(cols)
        self._cost_vals.append(vals)

    def add_quad_cost(self, weight: float, cols, vals, const: float = 0.0) -> None:
        """Add ``weight * (vals'x[cols] + const)**2`` to the objective."""
        if weight < 0:
            raise ValueError("quadratic cost weight must be nonnegative")
        if weight == 0.0:
            return
        cols, vals = self._row(cols, vals)
        self._quad_terms.append((float(weight), cols, vals, float(const)))

    # ---- constraints ----------------------------------------------------

    def _row(self, cols, vals):
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if cols.size != vals.size:
            raise ValueError("coefficient row: index/value length mismatch")
        if cols.size and (cols.min() < 0 or cols.max() >= self._n):
            raise ValueError("coefficient row references undeclared variable")
        return cols, vals

    def add_eq(self, cols, vals, rhs: float) -> None:
        cols, vals = self._row(cols, vals)
        self._eq_rows.append((cols, vals, float(rhs)))

    def add_le(self, cols, vals, rhs: float) -> None:
        cols, vals = self._row(cols, vals)
        self._le_rows.append((cols, vals, float(rhs)))

    def add_bounds(self, idx, lower=None, upper=None) -> None:
        """Box rows lower <= x[idx] <= upper; None entries are skipped."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if lower is not None:
            lo = np.broadcast_to(np.asarray(lower, dtype=np.float64), idx.shape)
            for i, v in zip(idx, lo):
                if np.isfinite(v):
                    self.add_le([i], [-1.0], -v)
        if upper is not None:
            up = np.broadcast_to(np.asarray(upper, dtype=np.float64), idx.shape)
            for i, v in zip(idx, up):
                if np.isfinite(v):
                    self.add_le([i], [1.0], v)

    def add_soc(self, rows) -> None:
        """Affine tuple membership (r_0, r_1, ..., r_{q-1}) in Q^q.

        Each row is (cols, vals, const); the first row is the cone head,
        i.e. r_0 >= ||(r_1, ..., r_{q-1})||_2.
        """
        if len(rows) < 2:
            raise ValueError("second-order cone needs at least two rows")
        block = [(*self._row(c, v), float(d)) for c, v, d in rows]
        self._soc_blocks.append(block)

    # ---- compilation ----------------------------------------------------

    def compile(self) -> StandardConeProgram:
        n = self._n
        quad_offset = n
        n_total = n + len(self._quad_terms)

        cost = np.zeros(n_total)
        for cols, vals in zip(self._cost_cols, self._cost_vals):
            np.add.at(cost, cols, vals)

        soc_blocks = list(self._soc_blocks)
        le_rows = list(self._le_rows)

        # lower t**2 terms: cost w*s_j, cone (s_j+1, s_j-1, 2t_j), s_j >= 0
        for j, (w, cols, vals, const) in enumerate(self._quad_terms):
            sj = quad_offset + j
            cost[sj] += w
            soc_blocks.append([
                (np.array([sj]), np.array([1.0]), 1.0),
                (np.array([sj]), np.array([1.0]), -1.0),
                (cols, 2.0 * vals, 2.0 * const),
            ])

        # nonneg flags become orthant rows -x <= 0
        for blk in self._blocks.values():
            if blk.nonneg:
                for i in range(blk.offset, blk.offset + blk.size):
                    le_rows.append((np.array([i]), np.array([-1.0]), 0.0))

        A = self._triplets_to_csr(self._eq_rows, n_total)
        b = np.array([r for _, _, r in self._eq_rows], dtype=np.float64)

        # orthant rows first, then cones sorted by dimension (stable)
        soc_blocks.sort(key=len)
        g_rows: list[tuple[np.ndarray, np.ndarray, float]] = []
        h_parts: list[float] = []
        for cols, vals, rhs in le_rows:
            g_rows.append((cols, vals, rhs))
            h_parts.append(rhs)
        soc_dims: list[int] = []
        for block in soc_blocks:
            soc_dims.append(len(block))
            for cols, vals, const in block:
                # s_i = const + row(x) in cone  =>  G row = -row, h = const
                g_rows.append((cols, -vals, const))
                h_parts.append(const)
        G = self._triplets_to_csr(g_rows, n_total)
        h = np.array(h_parts, dtype=np.float64)
        dims = ConeDims(nonneg=len(le_rows), soc=soc_dims)

        slices = {
            b.name: slice(b.offset, b.offset + b.size) for b in self._blocks.values()
        }
        return StandardConeProgram(
            c=cost, A=A, b=b, G=G, h=h, dims=dims,
            obj_const=self.obj_const, var_slices=slices,
        )

    @staticmethod
    def _triplets_to_csr(rows, n_cols) -> sp.csr_matrix:
        if not rows:
            return sp.csr_matrix((0, n_cols))
        counts = [len(c) for c, _, _ in rows]
        ri = np.repeat(np.arange(len(rows)), counts)
        ci = np.concatenate([c for c, _, _ in rows])
        vi = np.concatenate([v for _, v, _ in rows])
        m = sp.coo_matrix((vi, (ri, ci)), shape=(len(rows), n_cols))
        return m.tocsr()

    # ---- debugging ------------------------------------------------------

    def dump(self, path) -> None:
        """Write a plain-text dump of the program (see docs/formats.md)."""
        std = self.compile()
        with open(path, "w") as fh:
            fh.write("conic-program 1\n")
            fh.write(f"vars {std.c.size}\n")
            for name, sl in std.var_slices.items():
                fh.write(f"block {name} {sl.start} {sl.stop - sl.start}\n")
            fh.write("min " + _sparse_row(np.nonzero(std.c)[0], std.c[np.nonzero(std.c)[0]]) + "\n")
            Acoo = std.A.tocoo()
            fh.write(f"eq {std.A.shape[0]}\n")
            for i in range(std.A.shape[0]):
                mask = Acoo.row == i
                fh.write(_sparse_row(Acoo.col[mask], Acoo.data[mask]) + f" = {std.b[i]:.17g}\n")
            Gcoo = std.G.tocoo()
            fh.write(f"orthant {std.dims.nonneg}\n")
            for i in range(std.dims.nonneg):
                mask = Gcoo.row == i
                fh.write(_sparse_row(Gcoo.col[mask], Gcoo.data[mask]) + f" <= {std.h[i]:.17g}\n")
            fh.write(f"soc {len(std.dims.soc)}\n")
            row = std.dims.nonneg
            for q in std.dims.soc:
                fh.write(f"cone {q}\n")
                for i in range(row, row + q):
                    mask = Gcoo.row == i
                    fh.write("  " + _sparse_row(Gcoo.col[mask], Gcoo.data[mask])
                             + f" | {std.h[i]:.17g}\n")
                row += q


def _sparse_row(cols, vals) -> str:
    return " ".join(f"{c}:{v:.17g}" for c, v in zip(cols, vals)) or "0:0"


def build_qp_as_cone(n_vars, quad_terms, linear_cost=None, eq=None, le=None,
                     lower=None, upper=None) -> ConicProgram:
    """Assemble a convex QP over ``x in R^n`` as a cone program.

    quad_terms : iterable of (weight, cols, vals, const) meaning
        ``weight * (vals'x[cols] + const)**2`` with weight >= 0
    eq, le     : iterables of (cols, vals, rhs)
    lower/upper: optional box bounds (arrays broadcast over all variables)
    """
    prog = ConicProgram()
    x = prog.add_var("x", n_vars)
    if linear_cost is not None:
        prog.add_cost(x, np.asarray(linear_cost, dtype=np.float64))
    for w, cols, vals, const in quad_terms:
        prog.add_quad_cost(w, cols, vals, const)
    for cols, vals, rhs in (eq or []):
        prog.add_eq(cols, vals, rhs)
    for cols, vals, rhs in (le or []):
        prog.add_le(cols, vals, rhs)
    if lower is not None or upper is not None:
        prog.add_bounds(x, lower, upper)
    return prog


def solve_conic(program: ConicProgram | StandardConeProgram, tolerances=None,
                max_iter=200, verbose=False, backend=None) -> ConicSolution:
    """Compile (if needed) and solve the program.

    tolerances: optional dict with keys 'feas' (primal/dual residual bound)
    and 'gap' (relative duality gap), both defaulting to 1e-7. `backend` may
    supply any callable with the signature of `ipm.solve_standard` to swap in
    an external solver.
    """
    from . import ipm

    tol = {"feas": 1e-7, "gap": 1e-7}
    tol.update(tolerances or {})
    std = program.compile() if isinstance(program, ConicProgram) else program
    run = backend or ipm.solve_standard
    sol = run(std, feastol=tol["feas"], reltol=tol["gap"],
              max_iter=max_iter, verbose=verbose)
    sol.var_slices = std.var_slices
    if sol.objective is not None:
        sol.objective += std.obj_const
    return sol
