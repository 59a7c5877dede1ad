"""Subgradient descent on the quadrature error, multistart search, and neuron gain.

Gradients are those of the discretized error: the quadrature sum of
``dL/dy(x, N(x)) * grad_theta N(x)`` over the grid nodes, with the ReLU
derivative taken as 0 at 0 and ``sign(0) = 0`` for the absolute loss.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .measures import ProblemInstance, QuadratureGrid, bracket_minimum, golden_section
from .networks import NetworkConfig, eval_response, response_jacobian

DEFAULT_DIVERGE_THRESHOLD = 50.0
DEFAULT_WINDOW = 20


class TrainingError(FloatingPointError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class Schedule:
    """Step sizes ``eta0``, ``eta0 / sqrt(1 + t / decay)`` or ``eta0 / (1 + t / decay)``."""

    eta0: float
    kind: str = "constant"
    decay: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.eta0) or self.eta0 < 0:
            raise ValueError(f"step size must be finite and >= 0, got {self.eta0}")
        if self.kind not in ("constant", "inverse_sqrt", "inverse"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.decay > 0:
            raise ValueError("decay must be positive")

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.eta0
        if self.kind == "inverse_sqrt":
            return self.eta0 / math.sqrt(1.0 + t / self.decay)
        return self.eta0 / (1.0 + t / self.decay)

    def to_json(self) -> dict:
        return {"eta0": self.eta0, "kind": self.kind, "decay": self.decay}


class Objective:
    """Quadrature error and its parameter gradient for networks of a fixed shape."""

    def __init__(self, instance: ProblemInstance, grid: QuadratureGrid, d_in: int, d: int):
        w = grid.density_weights(instance)
        keep = w != 0.0
        self.X = grid.nodes[keep]
        self.w = w[keep]
        self.loss = instance.loss
        self.d_in, self.d = d_in, d

    def network(self, theta) -> NetworkConfig:
        return NetworkConfig.from_vector(theta, self.d_in, self.d)

    def err(self, theta) -> float:
        y = eval_response(self.network(theta), self.X)
        return float(np.sum(self.w * self.loss.value(self.X, y)))

    def err_and_grad(self, theta):
        W = self.network(theta)
        y = eval_response(W, self.X)
        err = float(np.sum(self.w * self.loss.value(self.X, y)))
        g = response_jacobian(W, self.X).T @ (self.w * self.loss.dy(self.X, y))
        return err, g


@dataclass
class TrainRecord:
    iters: list = field(default_factory=list)
    errs: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    verdict: str = "budget-exhausted"
    d_in: int = 0
    d: int = 0

    @property
    def final(self) -> NetworkConfig:
        return NetworkConfig.from_vector(self.snapshots[-1], self.d_in, self.d)

    def network_at(self, i: int) -> NetworkConfig:
        return NetworkConfig.from_vector(self.snapshots[i], self.d_in, self.d)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "err", "norm_inf", "step_size"])
            for row in zip(self.iters, self.errs, self.norms, self.step_sizes):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])

    def write_metadata(self, path, **extra) -> None:
        meta = {"verdict": self.verdict, "d_in": self.d_in, "d": self.d, **self.config, **extra}
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _non_increasing(errs, tol=1e-12) -> bool:
    return all(b <= a + tol * max(1.0, abs(a)) for a, b in zip(errs, errs[1:]))


def subgradient_descent(instance: ProblemInstance, W0: NetworkConfig, schedule: Schedule,
                        budget: int, grid: QuadratureGrid,
                        diverge_threshold: float = DEFAULT_DIVERGE_THRESHOLD,
                        window: int = DEFAULT_WINDOW, gtol: float = 1e-12,
                        stop_on_divergence: bool = True, seed: int | None = None) -> TrainRecord:
    """Plain (sub)gradient descent ``theta <- theta - eta_t * grad err(theta)``.

    Every iterate is recorded.  The verdict is ``norm-diverging`` once the
    sup-norm of the parameters exceeds ``diverge_threshold`` while the error
    has not increased over the last ``window`` iterates, ``converged`` when
    the gradient norm drops to ``gtol``, and ``budget-exhausted`` otherwise.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    obj = Objective(instance, grid, W0.d_in, W0.d)
    theta = W0.to_vector().copy()
    rec = TrainRecord(d_in=W0.d_in, d=W0.d, config={
        "schedule": schedule.to_json(), "budget": budget, "seed": seed,
        "grid": grid.meta, "diverge_threshold": diverge_threshold, "window": window,
        "instance": instance.label})

    for t in range(budget + 1):
        err, g = obj.err_and_grad(theta)
        if not (math.isfinite(err) and np.all(np.isfinite(g))):
            raise TrainingError(t, "non-finite error or gradient")
        eta = schedule(t)
        rec.iters.append(t)
        rec.errs.append(err)
        rec.norms.append(float(np.max(np.abs(theta))))
        rec.step_sizes.append(eta)
        rec.snapshots.append(theta.copy())
        if (rec.norms[-1] > diverge_threshold and len(rec.errs) >= window
                and _non_increasing(rec.errs[-window:])):
            rec.verdict = "norm-diverging"
            if stop_on_divergence:
                break
        if np.linalg.norm(g) <= gtol:
            rec.verdict = "converged"
            break
        if t == budget:
            break
        theta = theta - eta * g
    if rec.verdict not in ("norm-diverging", "converged"):
        rec.verdict = "budget-exhausted"
    return rec


def pattern_search(fun, theta0, step: float = 0.5, min_step: float = 1e-6,
                   max_evals: int = 20000):
    """Coordinate (compass) search; halves the step whenever no coordinate move helps."""
    theta = np.array(theta0, dtype=float)
    best = fun(theta)
    evals = 1
    s = step
    while s >= min_step and evals < max_evals:
        improved = False
        for i in range(theta.size):
            for sign in (1.0, -1.0):
                trial = theta.copy()
                trial[i] += sign * s
                val = fun(trial)
                evals += 1
                if val < best:
                    theta, best, improved = trial, val, True
                    break
        if not improved:
            s /= 2
    return theta, best


class MultistartResult(NamedTuple):
    network: NetworkConfig
    err: float
    restart_errs: list
    record: TrainRecord


def _workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("RELU_LANDSCAPE_THREADS")
    return max(1, int(env)) if env else 1


def random_network(rng: np.random.Generator, d_in: int, d: int) -> NetworkConfig:
    n = d_in * (d + 1) + 2 * d + 1
    return NetworkConfig.from_vector(rng.uniform(-1, 1, n) / math.sqrt(d_in + 1), d_in, d)


def multistart_min(instance: ProblemInstance, d: int, restarts: int, budget: int,
                   grid: QuadratureGrid, seed: int = 0, schedule: Schedule | None = None,
                   polish: bool = True, polish_evals: int = 20000,
                   workers: int | None = None) -> MultistartResult:
    """Best network of width ``d`` over random restarts: descent, then pattern-search polish.

    The result is an upper bound for the minimal error at width ``d``, never
    a certificate.  Restarts draw from independent child seeds, so the result
    does not depend on the number of workers; ties go to the lowest restart.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    schedule = schedule or Schedule(1e-3, "inverse_sqrt", 10.0)
    d_in = instance.d_in
    children = np.random.SeedSequence(seed).spawn(restarts)
    obj = Objective(instance, grid, d_in, d)

    def run(i):
        rng = np.random.default_rng(children[i])
        W0 = random_network(rng, d_in, d)
        rec = subgradient_descent(instance, W0, schedule, budget, grid,
                                  diverge_threshold=math.inf, seed=seed)
        k = int(np.argmin(rec.errs))
        theta, err = rec.snapshots[k], rec.errs[k]
        if polish:
            theta, err = pattern_search(obj.err, theta, max_evals=polish_evals)
        return theta, err, rec

    n_workers = _workers(workers)
    if n_workers == 1:
        results = [run(i) for i in range(restarts)]
    else:
        with ThreadPoolExecutor(n_workers) as ex:
            results = list(ex.map(run, range(restarts)))
    errs = [r[1] for r in results]
    best = int(np.argmin(errs))  # argmin returns the first minimum
    theta, err, rec = results[best]
    return MultistartResult(obj.network(theta), float(err), errs, rec)


# --- added-neuron gain ------------------------------------------------------

class NeuronGain(NamedTuple):
    first_order: float
    gain: float
    best: tuple  # (kink, normal, offset)
    base_err: float
    widened_err: float


def candidate_directions(d_in: int, count: int = 64, seed: int = 0) -> np.ndarray:
    if d_in == 1:
        return np.array([[1.0], [-1.0]])
    if d_in == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    v = np.random.default_rng(seed).normal(size=(count, d_in))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def neuron_gain(instance: ProblemInstance, W: NetworkConfig, grid: QuadratureGrid,
                search_budget: int = 2000, n_offsets: int = 33,
                max_line_searches: int = 256) -> NeuronGain:
    """How much one extra neuron ``kink * relu(n . x - o)`` can lower the error of ``W``.

    ``first_order`` is ``max |int dL/dy(x, N(x)) relu(n . x - o) h(x) dx|`` over a
    grid of ``(n, o)``; it vanishes at a width-``d`` optimum whenever the loss is
    differentiable along the response.  ``gain`` is ``err(W)`` minus the best
    error found for the widened network, clamped at 0.
    """
    w_all = grid.density_weights(instance)
    keep = w_all != 0.0
    X, w = grid.nodes[keep], w_all[keep]
    loss = instance.loss
    y0 = eval_response(W, X)
    base = float(np.sum(w * loss.value(X, y0)))
    resid = w * loss.dy(X, y0)

    corners = instance.box.corners()
    cands = []
    for n in candidate_directions(instance.d_in):
        proj = corners @ n
        for o in np.linspace(proj.min(), proj.max(), n_offsets):
            cands.append((n, o))
    normals = np.array([c[0] for c in cands])
    offsets = np.array([c[1] for c in cands])

    # first-order scores, chunked to bound memory
    scores = np.empty(len(cands))
    chunk = max(1, int(4e6 // max(X.shape[0], 1)))
    for s in range(0, len(cands), chunk):
        phi = np.maximum(X @ normals[s:s + chunk].T - offsets[s:s + chunk], 0.0)
        scores[s:s + chunk] = np.abs(resid @ phi)
    first_order = float(scores.max())

    # exact line search in the kink for the most promising candidates (err is convex in it)
    if len(cands) <= max_line_searches:
        picked = np.arange(len(cands))
    else:
        rng = np.random.default_rng(0)
        top = np.argsort(-scores, kind="stable")[: max_line_searches // 2]
        rest = np.setdiff1d(np.arange(len(cands)), top)
        picked = np.concatenate([top, rng.choice(rest, max_line_searches - top.size, replace=False)])
    best_err, best = base, (0.0, normals[0], float(offsets[0]))
    for s in range(0, picked.size, max(1, chunk // 4)):
        idx = picked[s:s + max(1, chunk // 4)]
        phi = np.maximum(X @ normals[idx].T - offsets[idx], 0.0).T  # (C, N)

        def f(delta, mask=None):
            sel = slice(None) if mask is None else mask
            vals = loss.value(X, y0 + delta[sel, None] * phi[sel])
            return vals @ w

        lo, hi = bracket_minimum(f, idx.size, strict=False)
        kinks = golden_section(f, lo, hi, 1e-9)
        errs = f(kinks)
        j = int(np.argmin(errs))
        if errs[j] < best_err:
            best_err, best = float(errs[j]), (float(kinks[j]), normals[idx[j]], float(offsets[idx[j]]))

    # polish the winner in raw neuron coordinates (kink, w, b)
    if best[0] != 0.0 and search_budget > 0:
        kink, n, o = best

        def widened(p):
            out = y0 + p[0] * np.maximum(X @ p[1:-1] + p[-1], 0.0)
            return float(np.sum(w * loss.value(X, out)))

        p, val = pattern_search(widened, np.concatenate([[kink], n, [-o]]), step=0.1,
                                min_step=1e-7, max_evals=search_budget)
        scale = np.linalg.norm(p[1:-1])
        if val < best_err and scale > 0:
            best_err, best = val, (float(p[0] * scale), p[1:-1] / scale, float(-p[-1] / scale))

    return NeuronGain(first_order, max(base - best_err, 0.0), best, base, min(best_err, base))
