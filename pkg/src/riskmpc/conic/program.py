"""Conic program construction.

A program is built from :class:`Affine` expressions, i.e. linear maps of the
decision vector plus a constant, and a list of cone memberships
``expr in K``.  :meth:`ConicProgram.compile` lowers everything to the
standard form consumed by the solver::

    minimize    c @ x
    subject to  b - A @ x = s,   s in Zero^z x NonNeg^l x SOC... x PSD...

PSD blocks are stored as the column-major lower triangle of the matrix with
off-diagonal entries scaled by sqrt(2), so the Euclidean inner product of
two vectors equals the trace inner product of the matrices.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import InvalidProgram

SQRT2 = np.sqrt(2.0)

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"
RSOC = "rsoc"
PSD = "psd"
CONE_KINDS = (ZERO, NONNEG, SOC, RSOC, PSD)


def _widen(mat, ncols):
    if mat.shape[1] == ncols:
        return mat
    mat = mat.tocsr(copy=True)
    mat.resize((mat.shape[0], ncols))
    return mat


class Affine:
    """Affine map ``x -> coef @ x + const`` reshaped to ``shape`` (row-major)."""

    __slots__ = ("coef", "const", "shape")
    __array_priority__ = 100

    def __init__(self, coef, const, shape):
        self.coef = sp.csr_matrix(coef)
        self.const = np.asarray(const, dtype=np.float64).ravel()
        self.shape = tuple(shape)
        if self.coef.shape[0] != self.const.size or self.const.size != int(np.prod(self.shape)):
            raise InvalidProgram("inconsistent affine expression dimensions")

    # construction ---------------------------------------------------
    @classmethod
    def constant(cls, value, ncols=0):
        value = np.asarray(value, dtype=np.float64)
        return cls(sp.csr_matrix((value.size, ncols)), value.ravel(), value.shape)

    @classmethod
    def lift(cls, value, ncols=0):
        if isinstance(value, Affine):
            return value
        return cls.constant(value, ncols)

    @property
    def size(self):
        return self.const.size

    @property
    def ncols(self):
        return self.coef.shape[1]

    def __len__(self):
        return self.shape[0]

    def __repr__(self):
        return f"Affine(shape={self.shape}, nvars={self.ncols})"

    def value(self, x):
        """Evaluate at a decision vector ``x``."""
        x = np.asarray(x, dtype=np.float64)
        out = _widen(self.coef, x.size) @ x + self.const
        return out.reshape(self.shape)

    # arithmetic -----------------------------------------------------
    def _binary(self, other, sign):
        if not isinstance(other, Affine):
            other = np.broadcast_to(np.asarray(other, dtype=np.float64), self.shape)
            return Affine(self.coef, self.const + sign * other.ravel(), self.shape)
        if other.shape != self.shape:
            if other.size == 1:
                other = other.broadcast(self.shape)
            elif self.size == 1:
                return self.broadcast(other.shape)._binary(other, sign)
            else:
                raise InvalidProgram(f"shape mismatch {self.shape} vs {other.shape}")
        n = max(self.ncols, other.ncols)
        return Affine(
            _widen(self.coef, n) + sign * _widen(other.coef, n),
            self.const + sign * other.const,
            self.shape,
        )

    def __add__(self, other):
        return self._binary(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __rsub__(self, other):
        return (-self)._binary(other, 1.0)

    def __neg__(self):
        return Affine(-self.coef, -self.const, self.shape)

    def __mul__(self, scalar):
        s = float(scalar)
        return Affine(self.coef * s, self.const * s, self.shape)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __rmatmul__(self, mat):
        """``mat @ self`` for a constant matrix and a vector/matrix expression."""
        mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
        if len(self.shape) == 1:
            if mat.shape[1] != self.shape[0]:
                raise InvalidProgram("matmul dimension mismatch")
            op = sp.csr_matrix(mat)
            return Affine(op @ self.coef, mat @ self.const, (mat.shape[0],))
        k, c = self.shape
        if mat.shape[1] != k:
            raise InvalidProgram("matmul dimension mismatch")
        op = sp.kron(sp.csr_matrix(mat), sp.identity(c), format="csr")
        return Affine(op @ self.coef, op @ self.const, (mat.shape[0], c))

    def __matmul__(self, mat):
        """``self @ mat`` for a matrix expression and a constant matrix."""
        mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
        r, k = self._as_matrix_shape()
        if mat.shape[0] != k:
            raise InvalidProgram("matmul dimension mismatch")
        op = sp.kron(sp.identity(r), sp.csr_matrix(mat.T), format="csr")
        return Affine(op @ self.coef, op @ self.const, (r, mat.shape[1]))

    def _as_matrix_shape(self):
        if len(self.shape) == 2:
            return self.shape
        return (1, self.shape[0])

    @property
    def T(self):
        r, c = self._as_matrix_shape()
        perm = np.arange(r * c).reshape(r, c).T.ravel()
        return self._take(perm, (c, r))

    def _take(self, idx, shape):
        idx = np.asarray(idx, dtype=np.int64)
        return Affine(self.coef[idx], self.const[idx], shape)

    def __getitem__(self, key):
        grid = np.arange(self.size).reshape(self.shape)[key]
        return self._take(np.ravel(grid), np.shape(grid))

    def reshape(self, shape):
        return Affine(self.coef, self.const, shape)

    def flatten(self):
        return self.reshape((self.size,))

    def broadcast(self, shape):
        idx = np.zeros(int(np.prod(shape)), dtype=np.int64)
        if self.size != 1:
            raise InvalidProgram("only scalar expressions can be broadcast")
        return self._take(idx, shape)

    def times(self, arr):
        """Scalar expression times a constant array, giving an array-shaped expression."""
        if self.size != 1:
            raise InvalidProgram("times() needs a scalar expression")
        arr = np.asarray(arr, dtype=np.float64)
        col = sp.csr_matrix(arr.reshape(-1, 1))
        return Affine(col @ self.coef, arr.ravel() * self.const[0], arr.shape)

    def sum(self):
        return self.dot(np.ones(self.size))

    def dot(self, weights):
        """Weighted sum ``sum_i weights[i] * self[i]`` as a scalar expression."""
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.size != self.size:
            raise InvalidProgram("dot dimension mismatch")
        return Affine(sp.csr_matrix(w @ self.coef), [w @ self.const], ())


def concat(parts):
    """Stack scalars/vectors/constants into one flat vector expression."""
    parts = [p if isinstance(p, Affine) else Affine.constant(p) for p in parts]
    n = max(p.ncols for p in parts)
    coef = sp.vstack([_widen(p.coef, n) for p in parts], format="csr")
    const = np.concatenate([p.const for p in parts])
    return Affine(coef, const, (const.size,))


def bmat(blocks):
    """Assemble a block matrix from a grid of expressions, arrays and ``None``.

    ``None`` entries are zero blocks; their size is inferred from the row and
    column they sit in.
    """
    nr, nc = len(blocks), len(blocks[0])
    heights = [None] * nr
    widths = [None] * nc
    for i, row in enumerate(blocks):
        for j, blk in enumerate(row):
            if blk is None:
                continue
            shp = blk.shape if isinstance(blk, Affine) else np.atleast_2d(blk).shape
            shp = shp if len(shp) == 2 else (1, shp[0]) if shp else (1, 1)
            heights[i] = shp[0]
            widths[j] = shp[1]
    if None in heights or None in widths:
        raise InvalidProgram("cannot infer block sizes")
    rows_total, cols_total = sum(heights), sum(widths)
    ncols = max([b.ncols for row in blocks for b in row if isinstance(b, Affine)] + [0])
    const = np.zeros(rows_total * cols_total)
    flat = np.arange(rows_total * cols_total).reshape(rows_total, cols_total)
    coo_rows, coo_cols, coo_vals = [], [], []
    r0 = 0
    for i, row in enumerate(blocks):
        c0 = 0
        for j, blk in enumerate(row):
            if blk is not None:
                target = flat[r0:r0 + heights[i], c0:c0 + widths[j]].ravel()
                if isinstance(blk, Affine):
                    sub = blk.coef.tocoo()
                    coo_rows.append(target[sub.row])
                    coo_cols.append(sub.col)
                    coo_vals.append(sub.data)
                    const[target] += blk.const
                else:
                    const[target] += np.atleast_2d(np.asarray(blk, dtype=np.float64)).ravel()
            c0 += widths[j]
        r0 += heights[i]
    if coo_rows:
        coef = sp.csr_matrix(
            (np.concatenate(coo_vals), (np.concatenate(coo_rows), np.concatenate(coo_cols))),
            shape=(rows_total * cols_total, ncols),
        )
    else:
        coef = sp.csr_matrix((rows_total * cols_total, ncols))
    return Affine(coef, const, (rows_total, cols_total))


def svec_indices(d):
    """Flat (row-major) indices and scale factors of the svec ordering."""
    upper_rows, upper_cols = np.triu_indices(d)
    rows, cols = upper_cols, upper_rows
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows * d + cols, scale


def svec(m):
    m = np.asarray(m, dtype=np.float64)
    idx, scale = svec_indices(m.shape[0])
    return m.ravel()[idx] * scale


def smat(v, d=None):
    v = np.asarray(v, dtype=np.float64)
    if d is None:
        d = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if d * (d + 1) // 2 != v.size:
        raise InvalidProgram("vector length is not triangular")
    idx, scale = svec_indices(d)
    flat = np.zeros(d * d)
    flat[idx] = v / scale
    m = flat.reshape(d, d)
    return m + np.tril(m, -1).T


@dataclass
class ConeBlock:
    kind: str
    expr: Affine
    dim: int
    name: str = ""


@dataclass
class CompiledProgram:
    """Standard-form data: minimize c@x s.t. b - A@x in K."""

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    z: int
    l: int
    q: list
    s: list
    offset: float = 0.0
    # map from user block index to (row slice in compiled order, kind, dim)
    block_rows: list = field(default_factory=list)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]


class ConicProgram:
    """Linear objective over affine cone memberships."""

    def __init__(self):
        self.n = 0
        self.blocks = []
        self.objective = Affine.constant(0.0)
        self._var_names = []
        self._compiled = None

    def variable(self, shape=(), name=""):
        """Allocate fresh scalar variables arranged in ``shape``."""
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        size = int(np.prod(shape)) if shape else 1
        start = self.n
        self.n += size
        self._var_names.append((name, start, size))
        coef = sp.csr_matrix(
            (np.ones(size), (np.arange(size), np.arange(start, start + size))),
            shape=(size, self.n),
        )
        self._compiled = None
        return Affine(coef, np.zeros(size), shape)

    def symmetric_variable(self, d, name=""):
        """A d x d symmetric matrix expression backed by d(d+1)/2 variables."""
        v = self.variable((d * (d + 1) // 2,), name=name)
        idx, _ = svec_indices(d)
        rows, cols = np.divmod(idx, d)
        lookup = np.empty((d, d), dtype=np.int64)
        lookup[rows, cols] = np.arange(idx.size)
        lookup[cols, rows] = np.arange(idx.size)
        return v._take(lookup.ravel(), (d, d))

    def minimize(self, expr):
        expr = Affine.lift(expr)
        if expr.size != 1:
            raise InvalidProgram("objective must be scalar")
        self.objective = expr.reshape(())
        self._compiled = None

    def maximize(self, expr):
        self.minimize(-Affine.lift(expr))

    def add(self, kind, expr, name=""):
        """Constrain ``expr`` to lie in a cone.

        ``zero``/``nonneg``: elementwise.  ``soc``: ``expr[0] >= ||expr[1:]||``.
        ``rsoc``: ``2 expr[0] expr[1] >= ||expr[2:]||^2`` with
        ``expr[0], expr[1] >= 0``.  ``psd``: a square symmetric matrix
        expression (only its lower triangle is read).
        """
        if kind not in CONE_KINDS:
            raise InvalidProgram(f"unknown cone kind {kind!r}")
        expr = Affine.lift(expr)
        if kind == PSD:
            if len(expr.shape) != 2 or expr.shape[0] != expr.shape[1]:
                raise InvalidProgram("PSD constraint needs a square matrix expression")
            d = expr.shape[0]
            idx, scale = svec_indices(d)
            flat = expr.flatten()._take(idx, (idx.size,))
            flat = Affine(sp.diags(scale) @ flat.coef, flat.const * scale, flat.shape)
            block = ConeBlock(PSD, flat, d, name)
        else:
            flat = expr.flatten()
            if kind == SOC and flat.size < 1:
                raise InvalidProgram("SOC needs at least one entry")
            if kind == RSOC and flat.size < 2:
                raise InvalidProgram("rotated SOC needs at least two entries")
            block = ConeBlock(kind, flat, flat.size, name)
        self.blocks.append(block)
        self._compiled = None
        return len(self.blocks) - 1

    def compile(self):
        """Lower to standard form (cached until the program changes)."""
        if self._compiled is not None:
            return self._compiled
        n = self.n
        if n < 1:
            raise InvalidProgram("program has no variables")
        order = {ZERO: 0, NONNEG: 1, SOC: 2, RSOC: 2, PSD: 3}
        ranked = sorted(range(len(self.blocks)), key=lambda i: order[self.blocks[i].kind])
        rows_a, consts = [], []
        z = l = 0
        q, s = [], []
        block_rows = [None] * len(self.blocks)
        r = 0
        for i in ranked:
            blk = self.blocks[i]
            coef = _widen(blk.expr.coef, n)
            const = blk.expr.const
            if blk.kind == RSOC:
                # (u, v, w) rotated  <=>  ((u+v)/sqrt2, (u-v)/sqrt2, w) in SOC
                k = blk.dim
                t = sp.identity(k, format="lil")
                t[0, 0] = t[0, 1] = t[1, 0] = 1.0 / SQRT2
                t[1, 1] = -1.0 / SQRT2
                t = t.tocsr()
                coef = t @ coef
                const = t @ const
            size = coef.shape[0]
            # constraint expr in K  <=>  s = b - A x with A = -coef, b = const
            rows_a.append(-coef)
            consts.append(const)
            if blk.kind == ZERO:
                z += size
            elif blk.kind == NONNEG:
                l += size
            elif blk.kind in (SOC, RSOC):
                q.append(size)
            else:
                s.append(blk.dim)
            block_rows[i] = (slice(r, r + size), blk.kind, blk.dim)
            r += size
        if rows_a:
            A = sp.vstack(rows_a, format="csc")
            b = np.concatenate(consts)
        else:
            A = sp.csc_matrix((0, n))
            b = np.zeros(0)
        c = np.asarray(_widen(self.objective.coef, n).todense()).ravel()
        offset = float(self.objective.const[0])
        data = CompiledProgram(A, b, c, z, l, q, s, offset, block_rows)
        if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise InvalidProgram("program data contains non-finite values")
        self._compiled = data
        return data

    def cone_counts(self):
        """Number of blocks per cone kind (handy for structural checks)."""
        counts = {k: 0 for k in CONE_KINDS}
        for blk in self.blocks:
            counts[blk.kind] += 1
        return counts

    def blocks_of(self, kind):
        return [b for b in self.blocks if b.kind == kind]
