"""Small conic-program container and solver adapters.

A :class:`ConicProgram` holds

    minimize    c0 + q.x + sum_ij P_ij x_i x_j
    subject to  lb <= x <= ub
                a.x == r,  a.x <= r
                ||F x + g|| <= f.x + h          (second-order cones)

Rotated cones ``u*w >= ||z||^2`` are stored as ordinary second-order cones
``||(2z, u - w)|| <= u + w``. The SCA modules hand in already cone-encoded
constraints; nothing here reformulates.

Clarabel is the default backend; cvxopt's ``coneqp`` is the second backend,
used for cross-checking.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200


class MalformedProgram(ValueError):
    pass


@dataclass
class Affine:
    """Sparse affine expression sum(val * x[idx]) + const."""

    idx: np.ndarray
    val: np.ndarray
    const: float = 0.0

    @classmethod
    def of(cls, idx=(), val=(), const=0.0) -> "Affine":
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        val = np.broadcast_to(np.asarray(val, dtype=float), idx.shape).copy()
        return cls(idx, val, float(const))

    @classmethod
    def constant(cls, c: float) -> "Affine":
        return cls.of((), (), c)

    def __add__(self, other):
        if isinstance(other, Affine):
            return Affine(np.concatenate([self.idx, other.idx]), np.concatenate([self.val, other.val]),
                          self.const + other.const)
        return Affine(self.idx, self.val, self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.idx, -self.val, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k):
        k = float(k)
        return Affine(self.idx, self.val * k, self.const * k)

    __rmul__ = __mul__

    def evaluate(self, x: np.ndarray) -> float:
        return float(np.dot(self.val, x[self.idx]) + self.const) if self.idx.size else self.const

    def compact(self) -> "Affine":
        if self.idx.size == 0:
            return self
        u, inv = np.unique(self.idx, return_inverse=True)
        v = np.zeros(u.size)
        np.add.at(v, inv, self.val)
        return Affine(u, v, self.const)


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    backend: str = "clarabel"

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class ConicProgram:
    names: list = field(default_factory=list)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    q: list = field(default_factory=list)
    c0: float = 0.0
    quad: list = field(default_factory=list)  # (i, j, v) meaning v * x_i * x_j
    eqs: list = field(default_factory=list)  # (Affine, rhs) meaning a.x == rhs
    les: list = field(default_factory=list)  # (Affine, rhs) meaning a.x <= rhs
    cones: list = field(default_factory=list)  # [t, z1, z2, ...] affines

    # -- variables ---------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lb: float = -math.inf, ub: float = math.inf) -> int:
        if lb > ub:
            raise MalformedProgram(f"empty bounds for {name}: [{lb}, {ub}]")
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.q.append(0.0)
        return self.n - 1

    def add_vars(self, name: str, shape, lb=-math.inf, ub=math.inf) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape))
        out = np.empty(shape, dtype=np.int64)
        lbs = np.broadcast_to(np.asarray(lb, dtype=float), shape)
        ubs = np.broadcast_to(np.asarray(ub, dtype=float), shape)
        for pos in np.ndindex(*shape):
            label = f"{name}[{','.join(map(str, pos))}]"
            out[pos] = self.add_var(label, lbs[pos], ubs[pos])
        return out

    def x(self, i: int, coef: float = 1.0) -> Affine:
        return Affine.of([i], [coef])

    def fix(self, i: int, value: float) -> None:
        self.lb[i] = self.ub[i] = float(value)

    # -- objective ---------------------------------------------------------
    def add_objective(self, expr: Affine) -> None:
        self._check(expr)
        for i, v in zip(expr.idx, expr.val):
            self.q[i] += v
        self.c0 += expr.const

    def add_quadratic(self, i: int, j: int, v: float) -> None:
        self._check(Affine.of([i, j], [1.0, 1.0]))
        self.quad.append((int(i), int(j), float(v)))

    # -- constraints -------------------------------------------------------
    def add_eq(self, expr: Affine, rhs: float = 0.0) -> None:
        self._check(expr)
        self.eqs.append((_linear_part(expr), float(rhs) - expr.const))

    def add_le(self, expr: Affine, rhs: float = 0.0) -> None:
        self._check(expr)
        self.les.append((_linear_part(expr), float(rhs) - expr.const))

    def add_ge(self, expr: Affine, rhs: float = 0.0) -> None:
        self.add_le(-expr, -rhs)

    def add_soc(self, t: Affine, z: list) -> None:
        for e in [t, *z]:
            self._check(e)
        self.cones.append([t.compact()] + [e.compact() for e in z])

    def add_rotated(self, u: Affine, w: Affine, z: list) -> None:
        """u * w >= ||z||^2 with u, w >= 0."""
        self.add_soc(u + w, [2.0 * e for e in z] + [u - w])

    def _check(self, expr: Affine) -> None:
        if expr.idx.size and (expr.idx.min() < 0 or expr.idx.max() >= self.n):
            raise MalformedProgram("constraint references an undeclared variable")
        if not np.all(np.isfinite(expr.val)) or not math.isfinite(expr.const):
            raise MalformedProgram("non-finite coefficient")

    # -- matrices ----------------------------------------------------------
    def quadratic_matrix(self) -> sp.csc_matrix:
        """Symmetric P with objective term 0.5 x'Px."""
        n = self.n
        if not self.quad:
            return sp.csc_matrix((n, n))
        i, j, v = (np.array(a) for a in zip(*self.quad))
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        vals = np.concatenate([v, v])
        return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

    def _rows(self, items):
        n = self.n
        if not items:
            return sp.csr_matrix((0, n)), np.zeros(0)
        r, c, v, b = [], [], [], []
        for k, (expr, rhs) in enumerate(items):
            r.append(np.full(expr.idx.size, k))
            c.append(expr.idx)
            v.append(expr.val)
            b.append(rhs)
        A = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(len(items), n))
        return A, np.asarray(b, dtype=float)

    def standard_form(self):
        """Rows for A x + s = b with s in (zero, nonneg, soc...) cones.

        Returns (P, q, A, b, n_zero, n_nonneg, soc_dims).
        """
        lb, ub = np.asarray(self.lb), np.asarray(self.ub)
        fixed = np.isfinite(lb) & (lb == ub)
        eq_items = list(self.eqs) + [(Affine.of([i], [1.0]), lb[i]) for i in np.nonzero(fixed)[0]]
        le_items = list(self.les)
        le_items += [(Affine.of([i], [1.0]), ub[i]) for i in np.nonzero(np.isfinite(ub) & ~fixed)[0]]
        le_items += [(Affine.of([i], [-1.0]), -lb[i]) for i in np.nonzero(np.isfinite(lb) & ~fixed)[0]]
        Aeq, beq = self._rows([_normalized(e, r) for e, r in eq_items])
        Ale, ble = self._rows([_normalized(e, r) for e, r in le_items])
        soc_items, dims = [], []
        for cone in self.cones:
            # a whole cone may be scaled by a positive constant
            big = max((np.abs(e.val).max() for e in cone if e.val.size), default=1.0)
            c = 1.0 / big if big > 0 else 1.0
            # s = b - A x = (t, z) so A row is -coef and b is const
            for e in cone:
                soc_items.append((-c * e, c * e.const))
            dims.append(len(cone))
        Asoc, bsoc = self._rows([(Affine(e.idx, e.val, 0.0), b) for e, b in soc_items])
        A = sp.vstack([Aeq, Ale, Asoc]).tocsc()
        b = np.concatenate([beq, ble, bsoc])
        return self.quadratic_matrix(), np.asarray(self.q, dtype=float), A, b, len(beq), len(ble), dims

    # -- evaluation --------------------------------------------------------
    def objective_value(self, x: np.ndarray) -> float:
        val = self.c0 + float(np.dot(self.q, x))
        for i, j, v in self.quad:
            val += v * x[i] * x[j]
        return val

    def primal_violation(self, x: np.ndarray) -> float:
        """Largest violation of any bound or constraint.

        Each row (and each cone) is divided by its largest coefficient first,
        so the figure does not depend on the units a row was written in.
        """
        x = np.asarray(x, dtype=float)
        worst = 0.0
        lb, ub = np.asarray(self.lb), np.asarray(self.ub)
        with np.errstate(invalid="ignore"):
            worst = max(worst, float(np.max(np.concatenate([[0.0], lb - x, x - ub]))))
        for e, r in self.eqs:
            e, r = _normalized(e, r)
            worst = max(worst, abs(e.evaluate(x) - r))
        for e, r in self.les:
            e, r = _normalized(e, r)
            worst = max(worst, e.evaluate(x) - r)
        for cone in self.cones:
            big = max((np.abs(e.val).max() for e in cone if e.val.size), default=1.0) or 1.0
            t = cone[0].evaluate(x)
            z = np.array([e.evaluate(x) for e in cone[1:]])
            worst = max(worst, (float(np.linalg.norm(z)) - t) / big)
        return worst

    def validate(self) -> None:
        if self.n == 0:
            raise MalformedProgram("program has no variables")
        if self.quad and self.n <= 3000:
            P = self.quadratic_matrix().toarray()
            lam = np.linalg.eigvalsh(P)
            if lam.min() < -1e-9 * max(1.0, abs(lam).max()):
                raise MalformedProgram("quadratic objective is not positive semidefinite")

    # -- text dump ---------------------------------------------------------
    def dump(self) -> str:
        """Plain-text listing: one record per line, floats in repr form."""
        out = io.StringIO()
        out.write(f"program {self.n}\n")
        for i, (nm, lo, hi) in enumerate(zip(self.names, self.lb, self.ub)):
            out.write(f"var {i} {nm} {float(lo)!r} {float(hi)!r}\n")
        out.write(f"const {float(self.c0)!r}\n")
        for i, v in enumerate(self.q):
            if v != 0.0:
                out.write(f"lin {i} {float(v)!r}\n")
        for i, j, v in self.quad:
            out.write(f"quad {i} {j} {float(v)!r}\n")
        for tag, items in (("eq", self.eqs), ("le", self.les)):
            for e, r in items:
                out.write(f"{tag} {float(r)!r} {_terms(e)}\n")
        for cone in self.cones:
            out.write(f"soc {len(cone)}\n")
            for e in cone:
                out.write(f"  aff {float(e.const)!r} {_terms(e)}\n")
        return out.getvalue()

    @classmethod
    def parse(cls, text: str) -> "ConicProgram":
        prog = cls()
        lines = iter(text.splitlines())
        for line in lines:
            tok = line.split()
            if not tok:
                continue
            kind = tok[0]
            if kind == "program":
                continue
            if kind == "var":
                prog.add_var(tok[2], float(tok[3]), float(tok[4]))
            elif kind == "const":
                prog.c0 = float(tok[1])
            elif kind == "lin":
                prog.q[int(tok[1])] = float(tok[2])
            elif kind == "quad":
                prog.quad.append((int(tok[1]), int(tok[2]), float(tok[3])))
            elif kind in ("eq", "le"):
                (prog.eqs if kind == "eq" else prog.les).append((_parse_terms(tok[2:], 0.0), float(tok[1])))
            elif kind == "soc":
                cone = []
                for _ in range(int(tok[1])):
                    sub = next(lines).split()
                    cone.append(_parse_terms(sub[2:], float(sub[1])))
                prog.cones.append(cone)
            else:
                raise MalformedProgram(f"unknown record {kind!r}")
        return prog


def _linear_part(e: Affine) -> Affine:
    c = e.compact()
    return Affine(c.idx, c.val, 0.0)


def _normalized(e: Affine, rhs: float):
    big = np.abs(e.val).max() if e.val.size else 0.0
    return (e, rhs) if big == 0 else (e * (1.0 / big), rhs / big)


def _terms(e: Affine) -> str:
    return " ".join(f"{int(i)}:{float(v)!r}" for i, v in zip(e.idx, e.val))


def _parse_terms(tokens, const: float) -> Affine:
    idx, val = [], []
    for t in tokens:
        i, v = t.split(":")
        idx.append(int(i))
        val.append(float(v))
    return Affine.of(idx, val, const)


# ---------------------------------------------------------------------------
# backends


def solve(prog: ConicProgram, tolerance: float = DEFAULT_TOL, max_iterations: int = DEFAULT_MAX_ITER,
          backend: str = "auto") -> ConicSolution:
    """Solve with one backend; ``"auto"`` tries clarabel, then cvxopt if
    clarabel stops short of a certified optimum."""
    prog.validate()
    if backend == "auto":
        sol = _solve_clarabel(prog, tolerance, max_iterations)
        if sol.status == ITERATION_LIMIT:
            alt = _solve_cvxopt(prog, tolerance, max_iterations)
            if alt.ok:
                return alt
        return sol
    if backend == "clarabel":
        return _solve_clarabel(prog, tolerance, max_iterations)
    if backend == "cvxopt":
        return _solve_cvxopt(prog, tolerance, max_iterations)
    raise ValueError(f"unknown backend {backend!r}")


def _residuals(prog, P, q, A, b, x, z):
    scale_p = 1.0 + (np.abs(b).max() if b.size else 0.0)
    primal = prog.primal_violation(x) / scale_p
    if z is None:
        return primal, math.nan
    grad = P @ x + q + A.T @ z
    dual = float(np.abs(grad).max()) / (1.0 + np.abs(q).max()) if grad.size else 0.0
    return float(primal), float(dual)


def _finish(prog, status, x, P, q, A, b, z, iters, backend, tolerance):
    x = np.asarray(x, dtype=float)
    if status == OPTIMAL:
        primal, dual = _residuals(prog, P, q, A, b, x, z)
        # declared optimal but not actually within tolerance: refuse to pretend
        if not (primal <= 10 * tolerance and dual <= 1e3 * tolerance) or not np.all(np.isfinite(x)):
            status = ITERATION_LIMIT
    else:
        primal, dual = (math.nan, math.nan) if not np.all(np.isfinite(x)) else _residuals(prog, P, q, A, b, x, z)
    obj = float(prog.objective_value(x)) if np.all(np.isfinite(x)) else math.nan
    return ConicSolution(status, x, obj, primal, dual, iters, backend)


def _solve_clarabel(prog, tolerance, max_iterations):
    import clarabel

    P, q, A, b, nz, nl, dims = prog.standard_form()
    cones = []
    if nz:
        cones.append(clarabel.ZeroConeT(nz))
    if nl:
        cones.append(clarabel.NonnegativeConeT(nl))
    cones += [clarabel.SecondOrderConeT(d) for d in dims]
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = max_iterations
    s.tol_gap_abs = s.tol_gap_rel = s.tol_feas = tolerance
    s.tol_infeas_abs = s.tol_infeas_rel = tolerance
    s.max_threads = 1
    solver = clarabel.DefaultSolver(sp.triu(P).tocsc(), q, A, b, cones, s)
    sol = solver.solve()
    S = clarabel.SolverStatus
    if sol.status == S.Solved or sol.status == S.AlmostSolved:
        status = OPTIMAL
    elif sol.status in (S.PrimalInfeasible, S.AlmostPrimalInfeasible):
        status = INFEASIBLE
    elif sol.status in (S.DualInfeasible, S.AlmostDualInfeasible):
        status = UNBOUNDED
    else:
        status = ITERATION_LIMIT
    return _finish(prog, status, np.array(sol.x), P, q, A, b, np.array(sol.z), sol.iterations,
                   "clarabel", tolerance)


def _solve_cvxopt(prog, tolerance, max_iterations):
    import cvxopt
    from cvxopt import solvers

    P, q, A, b, nz, nl, dims = prog.standard_form()
    A = A.tocsr()

    def spm(M):
        M = sp.coo_matrix(M)
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)

    n = prog.n
    G, h = A[nz:], b[nz:]
    kwargs = {}
    if nz:
        kwargs = {"A": spm(A[:nz]), "b": cvxopt.matrix(b[:nz])}
    opts = {"show_progress": False, "maxiters": max_iterations, "abstol": tolerance,
            "reltol": tolerance, "feastol": tolerance}
    try:
        res = solvers.coneqp(spm(P) if P.nnz else cvxopt.spmatrix([], [], [], (n, n)), cvxopt.matrix(q),
                             spm(G), cvxopt.matrix(h), {"l": nl, "q": dims, "s": []}, options=opts, **kwargs)
    except (ValueError, ArithmeticError):
        # coneqp raises on rank deficiency or a failed scaling update
        nan = np.full(n, np.nan)
        return ConicSolution(ITERATION_LIMIT, nan, math.nan, math.nan, math.nan, 0, "cvxopt")
    st = res["status"]
    x = np.array(res["x"]).ravel() if res["x"] is not None else np.full(n, np.nan)
    if st == "optimal":
        status = OPTIMAL
    elif st == "primal infeasible":
        status = INFEASIBLE
    elif st == "dual infeasible":
        status = UNBOUNDED
    else:
        status = ITERATION_LIMIT
    z = None
    if res.get("z") is not None:
        zz = np.array(res["z"]).ravel()
        y = np.array(res["y"]).ravel() if nz else np.zeros(0)
        z = np.concatenate([y, zz])
    return _finish(prog, status, x, P, q, A, b, z, int(res.get("iterations", 0)), "cvxopt", tolerance)
