"""Test problems: convection-diffusion, heat-transfer descriptor models, Matrix Market I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .numerics import as_sparse


def _default_convection(x, y):
    return 2.0 * np.exp(2.0 * (x ** 2 + y ** 2))


@dataclass
class ConvDiffConfig:
    """``-(a u_x)_x - (a u_y)_y + b(x, y) u_x = f`` on the unit square.

    ``diffusion`` holds rectangles ``(x0, x1, y0, y1, value)`` overriding the
    background value ``diffusion_base``; the source is ``source_value`` on a
    centered square of side ``source_side``.  ``boundary`` gives the Dirichlet
    values on the edges ``x = 0``, ``x = 1``, ``y = 0``, ``y = 1``.
    """

    h: float = 1 / 64
    diffusion_base: float = 1.0
    diffusion: list = field(default_factory=list)
    convection: object = _default_convection
    source_value: float = 100.0
    source_side: float = 1 / 8
    boundary: tuple = (1.0, 1.0, 1.0, 0.0)

    def __post_init__(self):
        inv = 1.0 / self.h
        m = round(inv)
        if m < 2 or abs(inv - m) > 1e-9 * inv:
            raise ValueError(f"1/h must be an integer >= 2, got {inv}")
        self.h = 1.0 / m

    @property
    def m(self) -> int:
        """Number of mesh intervals per direction."""
        return round(1.0 / self.h)

    @property
    def n(self) -> int:
        return (self.m - 1) ** 2

    def diffusion_at(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        a = np.full(np.broadcast(x, y).shape, self.diffusion_base, dtype=float)
        for x0, x1, y0, y1, val in self.diffusion:
            a[(x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)] = val
        return a

    def source_at(self, x, y):
        half = self.source_side / 2
        inside = (np.abs(x - 0.5) <= half + 1e-12) & (np.abs(y - 0.5) <= half + 1e-12)
        return np.where(inside, self.source_value, 0.0)


def gen_convdiff(cfg: ConvDiffConfig):
    """Central-difference 5-point discretization.

    Unknowns are the interior nodes ordered with ``x`` fastest.  The diffusion
    coefficient is sampled at cell-edge midpoints; boundary values are moved
    to the right-hand side.  Returns ``(A, b)`` with ``A`` in CSR form.
    """
    m, h = cfg.m, cfg.h
    N = m - 1
    grid = np.arange(1, m) * h
    X, Y = np.meshgrid(grid, grid)  # Y varies along rows: index (j, i)
    x, y = X.ravel(), Y.ravel()
    aE = cfg.diffusion_at(x + h / 2, y)
    aW = cfg.diffusion_at(x - h / 2, y)
    aN = cfg.diffusion_at(x, y + h / 2)
    aS = cfg.diffusion_at(x, y - h / 2)
    conv = np.asarray(cfg.convection(x, y), dtype=float) * np.ones_like(x)
    h2 = h * h
    diag = (aE + aW + aN + aS) / h2
    east = -aE / h2 + conv / (2 * h)
    west = -aW / h2 - conv / (2 * h)
    north = -aN / h2
    south = -aS / h2

    idx = np.arange(N * N).reshape(N, N)
    i_ = np.tile(np.arange(N), N)
    j_ = np.repeat(np.arange(N), N)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [diag]
    rhs = np.asarray(cfg.source_at(x, y), dtype=float).copy()
    g_left, g_right, g_bottom, g_top = cfg.boundary
    for coef, di, dj, edge_mask, g in (
        (east, 1, 0, i_ == N - 1, g_right),
        (west, -1, 0, i_ == 0, g_left),
        (north, 0, 1, j_ == N - 1, g_top),
        (south, 0, -1, j_ == 0, g_bottom),
    ):
        inner = ~edge_mask
        rows.append(idx.ravel()[inner])
        cols.append((idx.ravel() + di + dj * N)[inner])
        vals.append(coef[inner])
        rhs[edge_mask] -= coef[edge_mask] * g
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N * N, N * N))
    return as_sparse(A), rhs.astype(complex)


@dataclass
class StateSpaceModel:
    """SISO descriptor system ``E x' = A x + b u``, ``y = c^* x``."""

    E: sp.csr_matrix
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.E = as_sparse(self.E)
        self.A = as_sparse(self.A)
        self.b = np.asarray(self.b, dtype=complex).reshape(-1)
        self.c = np.asarray(self.c, dtype=complex).reshape(-1)
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.E.shape != (n, n) or self.b.shape != (n,) or self.c.shape != (n,):
            raise ValueError("inconsistent state-space dimensions")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def shifted(self, sigma) -> sp.csr_matrix:
        """``sigma E - A``."""
        return as_sparse(sigma * self.E - self.A)


def _laplace_1d(m: int):
    return sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])


def gen_heat_model(n: int, dim: int = 2, input_index: int | None = None,
                   output_index: int | None = None, capacity_ratio: float = 1.0,
                   seed: int = 0) -> StateSpaceModel:
    """Semi-discretized heat equation with Dirichlet boundary.

    ``dim = 1`` uses linear finite elements on ``n`` nodes (consistent mass,
    ``A = -stiffness``).  ``dim = 2`` uses the 5-point stencil on an
    ``m x m`` grid, ``m = round(sqrt(n))`` (so the order is ``m^2``), with a
    lumped mass whose nodal heat capacities vary in ``[1, capacity_ratio]``.
    By default the input heats the first quarter of the nodes and the output
    is the mean temperature; ``input_index``/``output_index`` select single
    nodes instead.  ``E`` is SPD and ``A`` symmetric negative definite.
    """
    if n < 4:
        raise ValueError("heat model needs n >= 4")
    if dim == 1:
        h = 1.0 / (n + 1)
        K = _laplace_1d(n) / h
        E = sp.diags([np.ones(n - 1), 4 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) * (h / 6)
        order = n
    elif dim == 2:
        m = max(2, round(math.sqrt(n)))
        h = 1.0 / (m + 1)
        T = _laplace_1d(m)
        I = sp.eye(m)
        K = sp.kron(I, T) + sp.kron(T, I)
        order = m * m
        rng = np.random.default_rng(seed)
        cap = 1.0 + (capacity_ratio - 1.0) * rng.random(order)
        E = sp.diags(cap * h * h)
    else:
        raise ValueError("dim must be 1 or 2")
    b = np.zeros(order)
    c = np.zeros(order)
    if input_index is None:
        b[: max(1, order // 4)] = 1.0  # heat flux into the first quarter of the nodes
    elif 0 <= input_index < order:
        b[input_index] = 1.0
    else:
        raise ValueError("input index out of range")
    if output_index is None:
        c[:] = 1.0 / order  # mean temperature
    elif 0 <= output_index < order:
        c[output_index] = 1.0
    else:
        raise ValueError("output index out of range")
    return StateSpaceModel(E, -K, b, c)


# ---------------------------------------------------------------------------
# Matrix Market


class MatrixMarketError(ValueError):
    pass


_BANNER_OBJECTS = {"matrix"}
_BANNER_FORMATS = {"coordinate", "array"}
_BANNER_FIELDS = {"real", "complex", "integer", "pattern"}
_BANNER_SYMMETRY = {"general", "symmetric", "skew-symmetric", "hermitian"}


def _check_banner(path: Path):
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        first = fh.readline()
    parts = first.strip().split()
    if len(parts) != 5 or parts[0] != "%%MatrixMarket":
        raise MatrixMarketError(f"{path}: missing or malformed %%MatrixMarket banner")
    obj, fmt, fld, sym = (p.lower() for p in parts[1:])
    if (obj not in _BANNER_OBJECTS or fmt not in _BANNER_FORMATS
            or fld not in _BANNER_FIELDS or sym not in _BANNER_SYMMETRY):
        raise MatrixMarketError(f"{path}: unsupported banner {first.strip()!r}")
    if fmt == "array" and fld == "pattern":
        raise MatrixMarketError(f"{path}: pattern field is invalid for array format")
    return fmt


def load_matrix_market(path):
    """Read a Matrix Market file.

    Coordinate files return CSR matrices with symmetric storage expanded;
    array files return dense arrays (``n x 1`` arrays become vectors).
    """
    path = Path(path)
    fmt = _check_banner(path)
    try:
        data = scipy.io.mmread(str(path))
    except (ValueError, IndexError) as exc:
        raise MatrixMarketError(f"{path}: {exc}") from exc
    if fmt == "coordinate":
        return as_sparse(data)
    data = np.asarray(data)
    return data[:, 0] if data.ndim == 2 and data.shape[1] == 1 else data


def save_matrix_market(path, obj, comment: str = ""):
    """Write a sparse matrix (coordinate) or a dense array/vector (array).

    Values are written with 17 significant digits, so loading the file
    reproduces every double exactly.
    """
    path = Path(path)
    if sp.issparse(obj):
        target = sp.coo_matrix(obj)
    else:
        target = np.asarray(obj)
        if target.ndim == 1:
            target = target[:, None]
        if np.iscomplexobj(target) and not np.any(target.imag):
            target = target.real
    if sp.issparse(target) and np.iscomplexobj(target.data) and not np.any(target.data.imag):
        target = target.real
    # a file handle keeps scipy from appending ".mtx" to the name
    with open(path, "wb") as fh:
        scipy.io.mmwrite(fh, target, comment=comment, precision=17, symmetry="general")
