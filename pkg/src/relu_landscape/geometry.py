"""Half-spaces, affine maps and cell enumeration for half-space arrangements.

A half-space is stored as a unit normal plus an offset and is *open*:
``{x : normal . x > offset}``.  Cells of an arrangement are described by the
set of half-spaces that contain them.  Every question about nonemptiness is
asked relative to an axis-aligned box, since all integrals in this package
live on a compact support.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

NORMAL_TOL = 1e-12
DET_TOL = 1e-12
CELL_MARGIN = 1e-9


class CellEnumerationError(RuntimeError):
    """Raised when the feasibility LP for a candidate cell fails to solve."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HalfSpace:
    """Open half-space ``{x : normal . x > offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = _frozen(np.atleast_1d(self.normal))
        if normal.ndim != 1:
            raise ValueError("normal must be a vector")
        if abs(np.linalg.norm(normal) - 1.0) > NORMAL_TOL:
            raise ValueError(f"normal must have unit length, got |n| = {np.linalg.norm(normal)!r}")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_raw(cls, normal, offset) -> "HalfSpace":
        """Build ``{x : normal . x > offset}`` for a normal of any nonzero length."""
        normal = np.asarray(normal, dtype=float)
        scale = np.linalg.norm(normal)
        if scale == 0.0:
            raise ValueError("normal must be nonzero")
        return cls(normal / scale, float(offset) / scale)

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def signed_distance(self, x) -> np.ndarray:
        """``normal . x - offset`` for a point or an ``(N, d)`` array of points."""
        return np.asarray(x, dtype=float) @ self.normal - self.offset

    def same_boundary(self, other: "HalfSpace", tol: float = 1e-10) -> bool:
        """True when both half-spaces share their boundary hyperplane (either orientation)."""
        if other.dim != self.dim:
            return False
        for sign in (1.0, -1.0):
            if (np.max(np.abs(self.normal - sign * other.normal)) <= tol
                    and abs(self.offset - sign * other.offset) <= tol):
                return True
        return False


def halfspace_contains(H: HalfSpace, x) -> bool | np.ndarray:
    """Strict membership test; the boundary hyperplane is excluded."""
    inside = H.signed_distance(x) > 0.0
    return bool(inside) if np.ndim(inside) == 0 else inside


@dataclass(frozen=True)
class AffineMap:
    """``x -> matrix @ x + shift``."""

    matrix: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        matrix = _frozen(np.atleast_2d(self.matrix))
        shift = _frozen(np.atleast_1d(self.shift))
        if matrix.shape != (shift.shape[0], shift.shape[0]):
            raise ValueError(f"matrix shape {matrix.shape} does not match shift of length {shift.shape[0]}")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def identity(cls, dim: int) -> "AffineMap":
        return cls(np.eye(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.shift.shape[0]

    @property
    def invertible(self) -> bool:
        return abs(np.linalg.det(self.matrix)) > DET_TOL


def apply_affine(phi: AffineMap, x) -> np.ndarray:
    """Apply ``phi`` to a point or to each row of an ``(N, d)`` array."""
    x = np.asarray(x, dtype=float)
    return x @ phi.matrix.T + phi.shift


def compose_affine(phi: AffineMap, psi: AffineMap) -> AffineMap:
    """The map ``x -> phi(psi(x))``."""
    return AffineMap(phi.matrix @ psi.matrix, phi.matrix @ psi.shift + phi.shift)


def invert_affine(phi: AffineMap) -> AffineMap:
    if not phi.invertible:
        raise ValueError(f"affine map is singular (|det| = {abs(np.linalg.det(phi.matrix)):.3e})")
    inv = np.linalg.inv(phi.matrix)
    return AffineMap(inv, -inv @ phi.shift)


def pullback_halfspace(H: HalfSpace, phi: AffineMap) -> HalfSpace:
    """The half-space ``{x : phi(x) in H}``, renormalized to a unit normal.

    With ``phi(x) = A x + b`` this is ``{x : (A^T n) . x > o - n . b}``.
    """
    if not phi.invertible:
        raise ValueError("cannot pull a half-space back through a singular map")
    return HalfSpace.from_raw(phi.matrix.T @ H.normal, H.offset - H.normal @ phi.shift)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lo))
        hi = _frozen(np.atleast_1d(self.hi))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box corners must be vectors of equal length")
        if np.any(hi <= lo):
            raise ValueError("box is degenerate: need lo < hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def corners(self) -> np.ndarray:
        grids = np.meshgrid(*[(a, b) for a, b in zip(self.lo, self.hi)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class CellIndex:
    """A nonempty cell: the set of active half-space indices and an interior witness."""

    included: frozenset
    witness: np.ndarray = field(compare=False)

    def sign_vector(self, k: int) -> tuple:
        return tuple(j in self.included for j in range(k))


def _chebyshev_margin(normals: np.ndarray, offsets: np.ndarray, signs: np.ndarray, box: Box):
    """Largest ``t`` such that a ball of radius ``t`` fits in the signed cell inside the box.

    Returns ``(t, center)``.  Unit normals make ``t`` the Chebyshev radius.
    """
    d = box.dim
    # variables (x_1..x_d, t); maximize t
    c = np.zeros(d + 1)
    c[-1] = -1.0
    rows, rhs = [], []
    for n, o, s in zip(normals, offsets, signs):
        # s=+1: n.x - o >= t   ->  -n.x + t <= -o
        # s=-1: n.x - o <= -t  ->   n.x + t <=  o
        rows.append(np.append(-s * n, 1.0))
        rhs.append(-s * o)
    for i in range(d):
        e = np.zeros(d + 1)
        e[i], e[-1] = 1.0, 1.0
        rows.append(e)
        rhs.append(box.hi[i])
        e = np.zeros(d + 1)
        e[i], e[-1] = -1.0, 1.0
        rows.append(e)
        rhs.append(-box.lo[i])
    bounds = [(None, None)] * d + [(None, 1.0)]
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status == 2:  # infeasible: cannot happen with t free below, kept for safety
        return -np.inf, None
    if res.status != 0:
        raise CellEnumerationError(f"feasibility LP failed for signs {signs.tolist()}: {res.message}")
    return -res.fun, res.x[:d]


def enumerate_cells(halfspaces: Sequence[HalfSpace], box: Box, n_samples: int = 2**16,
                    seed: int = 0) -> list[CellIndex]:
    """All cells of the arrangement that meet the interior of ``box``.

    The arrangement is built one half-space at a time; each existing cell is
    tested for a part inside and a part outside the next half-space.  A
    quasi-random sample of the box answers most of those questions; anything
    the sample does not certify goes to a Chebyshev-center LP, which also
    catches cells too thin for the sample to hit.
    """
    halfspaces = list(halfspaces)
    K = len(halfspaces)
    if K > 20:
        raise ValueError("at most 20 half-spaces are supported")
    d = box.dim
    if any(H.dim != d for H in halfspaces):
        raise ValueError("half-space dimension does not match the box")
    if K == 0:
        return [CellIndex(frozenset(), (box.lo + box.hi) / 2)]

    normals = np.array([H.normal for H in halfspaces])
    offsets = np.array([H.offset for H in halfspaces])

    m = int(np.ceil(np.log2(max(n_samples, 2))))
    pts = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)
    pts = box.lo + pts * (box.hi - box.lo)
    dist = pts @ normals.T - offsets  # (N, K)
    box_margin = np.min(np.minimum(pts - box.lo, box.hi - pts), axis=1)
    signs = dist > 0

    # cells are tracked as sign prefixes; value is a witness with its margin
    cells: dict[tuple, np.ndarray] = {(): (box.lo + box.hi) / 2}
    for k in range(K):
        margin = np.minimum(np.min(np.abs(dist[:, : k + 1]), axis=1), box_margin)
        good = margin >= CELL_MARGIN
        seen: dict[tuple, int] = {}
        for i in np.flatnonzero(good):
            key = tuple(signs[i, : k + 1])
            if key not in seen or margin[i] > margin[seen[key]]:
                seen[key] = i
        new_cells = {}
        for prefix in cells:
            for bit in (False, True):
                key = prefix + (bit,)
                if key in seen:
                    new_cells[key] = pts[seen[key]]
                    continue
                s = np.where(np.array(key), 1.0, -1.0)
                t, center = _chebyshev_margin(normals[: k + 1], offsets[: k + 1], s, box)
                if t > CELL_MARGIN:
                    new_cells[key] = center
        cells = new_cells

    return [CellIndex(frozenset(j for j, b in enumerate(key) if b), w)
            for key, w in sorted(cells.items())]
