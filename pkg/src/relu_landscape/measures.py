"""Problem instances, quadrature, and the error functional.

An instance is a density ``h`` supported on a box together with a loss
``L(x, y)``; the error of a response ``R`` is ``int L(x, R(x)) h(x) dx``.  All
integrals are tensor-product midpoint sums (optionally graded towards chosen
breakpoints) or scrambled Sobol averages in three or more dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .geometry import Box, HalfSpace
from .networks import EffectiveTuple, NetworkConfig, as_points, eval_response, eval_tuple
from .responses import GeneralizedResponse, eval_genresponse

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class MinimizerError(RuntimeError):
    """The loss could not be bracketed in ``y`` (it is not coercive at some point)."""


class NonFiniteError(FloatingPointError):
    pass


# --- losses ---------------------------------------------------------------

@dataclass(frozen=True)
class LossSpec:
    """A loss ``L(x, y)`` with its ``y``-derivative.

    ``value`` and ``dy`` take an ``(N, d_in)`` array and an ``(N,)`` array of
    outputs.  ``minimizer`` (when known) gives the pointwise argmin in closed
    form.  ``dy`` uses ``sign(0) = 0`` for the absolute loss.
    """

    name: str
    value: Callable
    dy: Callable
    strict: bool
    minimizer: Callable | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, X, y):
        return self.value(X, y)


def squared_loss(f) -> LossSpec:
    return LossSpec("squared", lambda X, y: (y - f(X)) ** 2, lambda X, y: 2.0 * (y - f(X)),
                    True, f)


def power_loss(f, p: float) -> LossSpec:
    if p < 1:
        raise ValueError("p-power loss needs p >= 1")

    def dy(X, y):
        r = y - f(X)
        return p * np.abs(r) ** (p - 1) * np.sign(r)

    return LossSpec("power", lambda X, y: np.abs(y - f(X)) ** p, dy, p > 1, f, {"p": p})


def absolute_loss(f) -> LossSpec:
    return LossSpec("absolute", lambda X, y: np.abs(y - f(X)), lambda X, y: np.sign(y - f(X)),
                    False, f)


def shifted_squared_loss(f, shift: float) -> LossSpec:
    return LossSpec("shifted_squared", lambda X, y: (y - f(X)) ** 2 + shift,
                    lambda X, y: 2.0 * (y - f(X)), True, f, {"shift": shift})


def exp_linear_loss(f) -> LossSpec:
    """``exp(y) - y (1 + f(x))``: strictly convex, asymmetric, argmin ``log(1 + f)``."""
    return LossSpec("exp_linear", lambda X, y: np.exp(y) - y * (1.0 + f(X)),
                    lambda X, y: np.exp(y) - (1.0 + f(X)), True)


LOSSES = {
    "squared": lambda f, p: squared_loss(f),
    "power": lambda f, p: power_loss(f, float(p["p"])),
    "absolute": lambda f, p: absolute_loss(f),
    "shifted_squared": lambda f, p: shifted_squared_loss(f, float(p["shift"])),
    "exp_linear": lambda f, p: exp_linear_loss(f),
}


# --- targets --------------------------------------------------------------

def tent(X):
    """``(x+1)^+ - 2 x^+ + (x-1)^+`` on the first coordinate."""
    x = np.asarray(X, dtype=float)[:, 0]
    return np.maximum(x + 1, 0) - 2 * np.maximum(x, 0) + np.maximum(x - 1, 0)


_EX45_UPPER = np.array([0.0, 1.0])
_EX45_LOWER = (np.array([1.0, -1.0]), np.array([-1.0, -1.0]))


def plateau_ex45(X):
    """1 on the upper disk, 0 on the two lower disks, distance-weighted blend elsewhere."""
    X = np.asarray(X, dtype=float)
    d_up = np.maximum(np.linalg.norm(X - _EX45_UPPER, axis=1) - 1.0, 0.0)
    d_low = np.minimum(*(np.maximum(np.linalg.norm(X - c, axis=1) - 1.0, 0.0) for c in _EX45_LOWER))
    total = d_up + d_low
    # the closed disks are disjoint, so total > 0 wherever both distances matter
    return np.where(d_up == 0.0, 1.0, np.where(d_low == 0.0, 0.0, d_low / np.where(total > 0, total, 1.0)))


def _affine_target(p):
    coef = np.asarray(p.get("coef", [0.0]), dtype=float)
    const = float(p.get("const", 0.0))
    return lambda X: np.asarray(X, dtype=float) @ coef + const


def _sine_target(p):
    direction = np.asarray(p.get("direction", [1.0]), dtype=float)
    freq = float(p.get("freq", 1.0))
    amp = float(p.get("amplitude", 1.0))
    return lambda X: amp * np.sin(freq * (np.asarray(X, dtype=float) @ direction))


TARGETS = {
    "zero": lambda p: (lambda X: np.zeros(np.asarray(X).shape[0])),
    "affine": _affine_target,
    "tent": lambda p: tent,
    "plateau_ex45": lambda p: plateau_ex45,
    "sine": _sine_target,
}


# --- densities ------------------------------------------------------------

def three_disks_ex45(X):
    """Distance to the center inside each of three unit disks, zero elsewhere.

    The density vanishes on the whole line ``x_2 = 0``.
    """
    X = np.asarray(X, dtype=float)
    out = np.zeros(X.shape[0])
    for c in (_EX45_UPPER, *_EX45_LOWER):
        r = np.linalg.norm(X - c, axis=1)
        out += np.where(r < 1.0, r, 0.0)
    return out


def _uniform_ball(p):
    center = np.asarray(p["center"], dtype=float)
    radius = float(p.get("radius", 1.0))
    return lambda X: np.where(np.linalg.norm(np.asarray(X) - center, axis=1) < radius, 1.0, 0.0)


def _uniform_interval_ex48(p):
    ell = float(p.get("ell", 13))
    return lambda X: np.where(np.abs(np.asarray(X)[:, 0]) <= ell + 1, 1.0, 0.0)


def _affine_positive(p):
    coef = np.asarray(p["coef"], dtype=float)
    const = float(p["const"])
    return lambda X: np.maximum(np.asarray(X) @ coef + const, 0.0)


DENSITIES = {
    "uniform_box": lambda p: (lambda X: np.full(np.asarray(X).shape[0], float(p.get("value", 1.0)))),
    "uniform_ball": _uniform_ball,
    "uniform_interval_ex48": _uniform_interval_ex48,
    "three_disks_ex45": lambda p: three_disks_ex45,
    "affine_positive": _affine_positive,
}


def _split(spec: dict):
    spec = dict(spec)
    return spec.pop("id"), spec


@dataclass(frozen=True)
class ProblemInstance:
    box: Box
    density: Callable
    loss: LossSpec
    label: str = ""
    target: Callable | None = None
    spec: dict = field(default_factory=dict, compare=False)

    @property
    def d_in(self) -> int:
        return self.box.dim

    def h(self, X) -> np.ndarray:
        """Density clipped to the box."""
        X, _ = as_points(X, self.d_in)
        return np.where(self.box.contains(X), self.density(X), 0.0)

    @classmethod
    def from_json(cls, obj: dict) -> "ProblemInstance":
        d_in = int(obj["d_in"])
        box = Box(obj["box"]["lo"], obj["box"]["hi"])
        if box.dim != d_in:
            raise ValueError(f"box has dimension {box.dim}, expected d_in = {d_in}")
        tid, tparams = _split(obj.get("target", {"id": "zero"}))
        did, dparams = _split(obj["density"])
        lid, lparams = _split(obj["loss"])
        for kind, key, table in (("target", tid, TARGETS), ("density", did, DENSITIES), ("loss", lid, LOSSES)):
            if key not in table:
                raise ValueError(f"unknown {kind} {key!r}; known: {sorted(table)}")
        f = TARGETS[tid](tparams)
        inst = cls(box, DENSITIES[did](dparams), LOSSES[lid](f, lparams),
                   obj.get("label", ""), f, dict(obj))
        mass = inst.mass(QuadratureGrid.default(box))
        if not mass > 1e-12:
            raise ValueError("density has no mass on the box")
        return inst

    def to_json(self) -> dict:
        return dict(self.spec)

    def mass(self, grid: "QuadratureGrid") -> float:
        return float(np.sum(grid.weights * self.h(grid.nodes)))


# --- quadrature -----------------------------------------------------------

def graded_edges(lo: float, hi: float, n: int, focus=(), finest: float = 1e-6,
                 per_decade: int = 8) -> np.ndarray:
    """Uniform partition of ``[lo, hi]`` into ``n`` cells, refined geometrically near ``focus``.

    Around each focus point, extra edges sit at distances ``finest * 10^(k/per_decade)``
    up to the base spacing, on both sides.
    """
    edges = [np.linspace(lo, hi, n + 1)]
    h = (hi - lo) / n
    if focus:
        decades = max(math.log10(2 * h / finest), 0.0)
        dists = np.geomspace(finest, 2 * h, int(math.ceil(decades * per_decade)) + 1)
        for p in focus:
            edges.append(p - dists)
            edges.append(p + dists)
            edges.append([p])
    e = np.unique(np.clip(np.concatenate(edges), lo, hi))
    return e


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    scheme: str
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def tensor_midpoint(cls, box: Box, resolution, refine: dict | None = None,
                        finest: float = 1e-6, per_decade: int = 8) -> "QuadratureGrid":
        """Midpoint rule on a (possibly graded) tensor grid.

        ``refine`` maps an axis index to breakpoints along that axis.
        """
        res = [int(resolution)] * box.dim if np.ndim(resolution) == 0 else [int(r) for r in resolution]
        refine = {int(k): list(v) for k, v in (refine or {}).items()}
        mids, widths = [], []
        for i in range(box.dim):
            e = graded_edges(box.lo[i], box.hi[i], res[i], refine.get(i, ()), finest, per_decade)
            mids.append((e[:-1] + e[1:]) / 2)
            widths.append(np.diff(e))
        M = np.meshgrid(*mids, indexing="ij")
        Wd = np.meshgrid(*widths, indexing="ij")
        nodes = np.stack([m.ravel() for m in M], axis=1)
        weights = np.prod(np.stack([w.ravel() for w in Wd], axis=1), axis=1)
        meta = {"scheme": "tensor-midpoint", "resolution": res,
                "refine": {str(k): v for k, v in refine.items()}, "nodes": int(weights.size)}
        return cls(nodes, weights, "tensor-midpoint", meta)

    @classmethod
    def quasi_random(cls, box: Box, n: int = 2**16, seed: int = 0) -> "QuadratureGrid":
        m = int(math.ceil(math.log2(n)))
        pts = qmc.Sobol(box.dim, scramble=True, seed=seed).random_base2(m)
        nodes = box.lo + pts * (box.hi - box.lo)
        weights = np.full(nodes.shape[0], box.volume / nodes.shape[0])
        meta = {"scheme": "quasi-random", "resolution": int(nodes.shape[0]), "seed": seed}
        return cls(nodes, weights, "quasi-random", meta)

    @classmethod
    def default(cls, box: Box) -> "QuadratureGrid":
        if box.dim == 1:
            return cls.tensor_midpoint(box, 512)
        if box.dim == 2:
            return cls.tensor_midpoint(box, 256)
        return cls.quasi_random(box)

    @classmethod
    def from_config(cls, box: Box, cfg: dict | None) -> "QuadratureGrid":
        """Build from ``{"scheme", "resolution", "refine", "finest", "per_decade", "seed"}``."""
        if not cfg:
            return cls.default(box)
        if cfg.get("scheme", "tensor-midpoint") == "quasi-random":
            return cls.quasi_random(box, int(cfg.get("resolution", 2**16)), int(cfg.get("seed", 0)))
        return cls.tensor_midpoint(box, cfg.get("resolution", 256), cfg.get("refine"),
                                   float(cfg.get("finest", 1e-6)), int(cfg.get("per_decade", 8)))

    def density_weights(self, instance: ProblemInstance) -> np.ndarray:
        """Quadrature weights multiplied by the density at each node."""
        return self.weights * instance.h(self.nodes)


def response_values(response, X: np.ndarray) -> np.ndarray:
    if isinstance(response, NetworkConfig):
        return eval_response(response, X)
    if isinstance(response, GeneralizedResponse):
        return eval_genresponse(response, X)
    if isinstance(response, EffectiveTuple):
        return eval_tuple(response, X)
    return np.asarray(response(X), dtype=float)


def _check_dims(response, instance):
    d = getattr(response, "d_in", None)
    if d is not None and d != instance.d_in:
        raise ValueError(f"response has d_in = {d} but the instance has d_in = {instance.d_in}")


def eval_error(response, instance: ProblemInstance, grid: QuadratureGrid) -> float:
    """Quadrature estimate of ``int L(x, R(x)) h(x) dx``."""
    _check_dims(response, instance)
    w = grid.density_weights(instance)
    keep = w != 0.0
    X = grid.nodes[keep]
    vals = instance.loss.value(X, response_values(response, X))
    if not np.all(np.isfinite(vals)):
        raise NonFiniteError("loss produced non-finite values on the grid")
    return float(np.sum(w[keep] * vals))


# --- pointwise minimizer --------------------------------------------------

def bracket_minimum(fun, n: int, max_doublings: int = 60, strict: bool = True):
    """Per-point brackets ``[-r, r]``, doubling ``r`` from 1 until ``fun(0)`` is below both ends.

    ``fun(y, mask)`` evaluates the still-open problems.  With ``strict=False``
    ties count as bracketed, which is enough for convex (not strictly convex) functions.
    """
    r = np.ones(n)
    todo = np.ones(n, dtype=bool)
    zero = np.zeros(n)
    for _ in range(max_doublings + 1):
        with np.errstate(over="ignore"):  # wide brackets may overflow to inf, which still compares
            fm, fl, fh = fun(zero, todo), fun(-r, todo), fun(r, todo)
        ok = (fm < fl) & (fm < fh) if strict else (fm <= fl) & (fm <= fh)
        todo[np.flatnonzero(todo)[ok]] = False
        if not todo.any():
            return -r, r
        r[todo] *= 2.0
    raise MinimizerError(f"could not bracket the minimum at {int(todo.sum())} point(s) "
                         f"after {max_doublings} doublings")


def golden_section(fun, lo: np.ndarray, hi: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Vectorized golden-section search for unimodal ``fun`` on ``[lo, hi]``.

    ``fun(y)`` takes an array of candidate values, one per problem.
    """
    a, b = lo.copy(), hi.copy()
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    width = np.max(b - a) if a.size else 0.0
    steps = int(math.ceil(math.log(tol / width) / math.log(INV_PHI))) + 1 if width > tol else 0
    for _ in range(steps):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + INV_PHI * (b - a))
        c_new = np.where(left, b - INV_PHI * (b - a), d)
        c, d = c_new, d_new
        # one interior point is reused, the other is fresh
        fresh = fun(np.where(left, c, d))
        fc, fd = np.where(left, fresh, fd), np.where(left, fc, fresh)
    return (a + b) / 2


def _polish(dy, y, radius: float, tol: float) -> np.ndarray:
    """Bisection on the sign of the derivative inside ``[y - radius, y + radius]``.

    Value comparisons stall near ``sqrt(eps)``; the derivative does not.  Points
    whose window does not straddle a sign change keep ``y``.
    """
    a, b = y - radius, y + radius
    valid = (dy(a) <= 0) & (dy(b) >= 0)
    for _ in range(int(math.ceil(math.log2(2 * radius / tol))) + 2):
        m = (a + b) / 2
        right = dy(m) < 0
        a = np.where(right, m, a)
        b = np.where(right, b, m)
    return np.where(valid, (a + b) / 2, y)


def pointwise_minimizer(instance: ProblemInstance, x, tol: float = 1e-8):
    """``argmin_y L(x, y)`` at a point or at each row of an array."""
    X, single = as_points(x, instance.d_in)
    loss = instance.loss
    if loss.minimizer is not None:
        out = np.asarray(loss.minimizer(X), dtype=float)
    else:
        if not loss.strict:
            raise ValueError(f"loss {loss.name!r} is not strictly convex; the minimizer is not unique")

        def on(y, mask):
            return loss.value(X[mask], y[mask])

        lo, hi = bracket_minimum(on, X.shape[0])
        with np.errstate(over="ignore"):
            out = golden_section(lambda y: loss.value(X, y), lo, hi, max(tol, 1e-6))
        out = _polish(lambda y: loss.dy(X, y), out, 1e-5, tol)
    return float(out[0]) if single else out


def min_error_lower_bound(instance: ProblemInstance, grid: QuadratureGrid) -> float:
    """Quadrature of ``int L(x, m(x)) h(x) dx``; no response does better on the same grid.

    Only the minimum value matters here, so a convex loss with a known
    minimizer (the absolute loss) is accepted even though it is not strict.
    """
    if not instance.loss.strict and instance.loss.minimizer is None:
        raise ValueError(f"loss {instance.loss.name!r} is not strictly convex and has no known minimizer")
    w = grid.density_weights(instance)
    keep = w != 0.0
    X = grid.nodes[keep]
    m = pointwise_minimizer(instance, X)
    return float(np.sum(w[keep] * instance.loss.value(X, m)))


# --- niceness diagnostic --------------------------------------------------

def niceness_diagnostic(instance: ProblemInstance, hyperplanes, n_hull: int = 2**14,
                        n_line: int = 4096, seed: int = 0) -> list[dict]:
    """Heuristic check that the density is positive somewhere on each hyperplane.

    For every hyperplane that cuts through the (sampled) convex hull of
    ``{h > 0}``, points on the hyperplane inside the box are sampled and the
    largest density value is reported: ``FAIL`` when it is below 1e-9,
    ``PASS`` otherwise.  Hyperplanes missing the hull are ``SKIPPED``.  This
    is a diagnostic only; it decides nothing about measures in general.
    """
    box = instance.box
    rng = np.random.default_rng(seed)
    hull_pts = QuadratureGrid.quasi_random(box, n_hull, seed).nodes
    hull_pts = hull_pts[instance.h(hull_pts) > 0]
    rows = []
    for i, H in enumerate(hyperplanes):
        H = H if isinstance(H, HalfSpace) else HalfSpace.from_raw(*H)
        s = H.signed_distance(hull_pts)
        if hull_pts.shape[0] == 0 or not (s.min() < 0 < s.max()):
            rows.append({"index": i, "status": "SKIPPED", "max_density": None})
            continue
        basis = np.linalg.svd(H.normal.reshape(1, -1))[2][1:]  # orthonormal basis of the hyperplane
        radius = np.linalg.norm(box.hi - box.lo)
        center = H.offset * H.normal
        pts = np.empty((0, box.dim))
        for _ in range(64):
            t = rng.uniform(-radius, radius, size=(n_line, basis.shape[0]))
            cand = center + t @ basis
            pts = np.vstack([pts, cand[box.contains(cand)]])
            if pts.shape[0] >= n_line:
                break
        hmax = float(np.max(instance.h(pts))) if pts.shape[0] else 0.0
        rows.append({"index": i, "status": "FAIL" if hmax < 1e-9 else "PASS", "max_density": hmax})
    return rows
