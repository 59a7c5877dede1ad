"""Generalized responses: an affine background plus half-space-gated affine terms.

    R(x) = a(x) + sum_k (delta_k . x + b_k) * 1[x in A_k]

A term of multiplicity 1 must vanish on the boundary of its half-space (so it
is a single ReLU neuron); a term of multiplicity 2 may jump across it and is
only reachable as a limit of two-neuron networks with diverging weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import AffineMap, HalfSpace, pullback_halfspace
from .networks import NetworkConfig, as_points, effective_tuple

CONTINUITY_TOL = 1e-10


@dataclass(frozen=True)
class Affine:
    linear: np.ndarray
    const: float

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float, ndmin=1)
        lin.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "const", float(self.const))

    def __call__(self, X):
        return np.asarray(X, dtype=float) @ self.linear + self.const


@dataclass(frozen=True)
class Term:
    halfspace: HalfSpace
    delta: np.ndarray
    intercept: float
    multiplicity: int = 2

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float, ndmin=1)
        delta.setflags(write=False)
        if delta.shape != self.halfspace.normal.shape:
            raise ValueError("term delta and half-space normal differ in dimension")
        if self.multiplicity not in (1, 2):
            raise ValueError(f"multiplicity must be 1 or 2, got {self.multiplicity}")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "intercept", float(self.intercept))

    def continuity_residuals(self) -> tuple[float, float]:
        """``(|delta - c n|, |c o + b|)`` with ``c = delta . n``.

        Both vanish exactly when the term is zero on the boundary hyperplane.
        """
        n, o = self.halfspace.normal, self.halfspace.offset
        c = float(self.delta @ n)
        return float(np.linalg.norm(self.delta - c * n)), abs(c * o + self.intercept)

    @property
    def is_continuous(self) -> bool:
        r1, r2 = self.continuity_residuals()
        return r1 < CONTINUITY_TOL and r2 < CONTINUITY_TOL

    @property
    def slope(self) -> float:
        """The kink ``c`` with ``delta = c n`` (meaningful for continuous terms)."""
        return float(self.delta @ self.halfspace.normal)


@dataclass(frozen=True)
class GeneralizedResponse:
    background: Affine
    terms: tuple = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        d = self.background.linear.shape[0]
        for t in terms:
            if t.halfspace.dim != d:
                raise ValueError("term dimension does not match the background")
        for i in range(len(terms)):
            for j in range(i + 1, len(terms)):
                if terms[i].halfspace.same_boundary(terms[j].halfspace):
                    raise ValueError(f"terms {i} and {j} share a boundary hyperplane")

    @property
    def d_in(self) -> int:
        return self.background.linear.shape[0]

    @property
    def declared_dimension(self) -> int:
        return sum(t.multiplicity for t in self.terms)

    def breaklines(self) -> list[HalfSpace]:
        return [t.halfspace for t in self.terms]

    def __call__(self, x):
        return eval_genresponse(self, x)


def eval_genresponse(R: GeneralizedResponse, x):
    X, single = as_points(x, R.d_in)
    out = R.background(X)
    for t in R.terms:
        active = t.halfspace.signed_distance(X) > 0.0
        out = out + np.where(active, X @ t.delta + t.intercept, 0.0)
    return float(out[0]) if single else out


def classify(R: GeneralizedResponse) -> str:
    """``'simple'``, ``'strict'`` or ``'invalid'``."""
    continuous = [t.is_continuous for t in R.terms]
    if any(t.multiplicity == 1 and not c for t, c in zip(R.terms, continuous)):
        return "invalid"
    return "simple" if all(continuous) else "strict"


def network_response(W: NetworkConfig) -> GeneralizedResponse:
    """Generalized-response form of a network.

    Neurons are flipped to a canonical orientation (``k relu(s) = k s + k relu(-s)``)
    so that neurons sharing a breakline merge into a single term.
    """
    E = effective_tuple(W)
    lin = E.background_linear.copy()
    const = E.background_const
    merged: list[list] = []  # [normal, offset, kink]
    for nr in E.neurons:
        if nr.kink == 0.0:
            continue
        n, o, k = nr.normal, nr.offset, nr.kink
        if n[np.flatnonzero(np.abs(n) > 1e-14)[0]] < 0:
            lin = lin + k * n
            const -= k * o
            n, o = -n, -o
        for m in merged:
            if np.max(np.abs(m[0] - n)) <= 1e-10 and abs(m[1] - o) <= 1e-10:
                m[2] += k
                break
        else:
            merged.append([n, o, k])
    terms = [Term(HalfSpace(n, o), k * n, -k * o, 1) for n, o, k in merged if k != 0.0]
    return GeneralizedResponse(Affine(lin, const), terms)


def to_network(R: GeneralizedResponse) -> NetworkConfig:
    """Exact network for a simple response: one neuron per term."""
    if classify(R) != "simple":
        raise ValueError("only simple (continuous) responses are network responses")
    cols = [R.background.linear] + [t.halfspace.normal for t in R.terms]
    w2 = [t.slope for t in R.terms]
    bias = [R.background.const] + [-t.halfspace.offset for t in R.terms]
    return NetworkConfig(np.column_stack(cols), w2, bias)


def approximate_term(term: Term, n: float) -> NetworkConfig:
    """Two-neuron network converging to the term off its boundary as ``n`` grows.

        R_n(x) = 1/2 relu((delta + n nu) . x + b - n o) - 1/2 relu((-delta + n nu) . x - b - n o)
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    nu, o = term.halfspace.normal, term.halfspace.offset
    d_in = nu.shape[0]
    w1 = np.column_stack([np.zeros(d_in), term.delta + n * nu, -term.delta + n * nu])
    bias = [0.0, term.intercept - n * o, -term.intercept - n * o]
    return NetworkConfig(w1, [0.5, -0.5], bias)


def approximation_threshold(term: Term, x) -> np.ndarray:
    """Smallest ``n`` beyond which ``approximate_term(term, n)`` is exact at ``x``."""
    X, _ = as_points(x, term.halfspace.dim)
    return np.abs(X @ term.delta + term.intercept) / np.abs(term.halfspace.signed_distance(X))


def approximate_response(R: GeneralizedResponse, n: float) -> NetworkConfig:
    """Network approximant: continuous terms exactly, jump terms via two neurons each."""
    cols = [R.background.linear]
    w2: list[float] = []
    bias = [R.background.const]
    for t in R.terms:
        if t.multiplicity == 1 or t.is_continuous:
            cols.append(t.halfspace.normal)
            w2.append(t.slope)
            bias.append(-t.halfspace.offset)
        else:
            sub = approximate_term(t, n)
            cols.extend(sub.w1[:, 1:].T)
            w2.extend(sub.w2)
            bias.extend(sub.bias[1:])
    return NetworkConfig(np.column_stack(cols), w2, bias)


def transform(R: GeneralizedResponse, phi: AffineMap) -> GeneralizedResponse:
    """The response ``x -> R(phi(x))``."""
    if not phi.invertible:
        raise ValueError("transform needs an invertible affine map")
    A, b = phi.matrix, phi.shift
    bg = Affine(A.T @ R.background.linear, R.background.linear @ b + R.background.const)
    terms = [Term(pullback_halfspace(t.halfspace, phi), A.T @ t.delta,
                  t.intercept + t.delta @ b, t.multiplicity) for t in R.terms]
    return GeneralizedResponse(bg, terms)


# --- normalization and the kappa families -------------------------------

def _orthonormal_completion(seed_vectors: list[np.ndarray], dim: int) -> list[np.ndarray]:
    """Gram-Schmidt over ``seed_vectors`` followed by the standard basis."""
    basis: list[np.ndarray] = []
    for v in list(seed_vectors) + list(np.eye(dim)):
        w = v - sum((v @ q) * q for q in basis)
        norm = np.linalg.norm(w)
        if norm > 1e-10:
            basis.append(w / norm)
        if len(basis) == dim:
            break
    return basis


def term_case(term: Term) -> str:
    """``'independent'`` when delta and the normal span a plane, else ``'parallel'``."""
    r1, _ = term.continuity_residuals()
    return "parallel" if r1 < CONTINUITY_TOL else "independent"


def normalize_term(R: GeneralizedResponse, k: int = -1, case: str | None = None):
    """Affine change of variables putting term ``k`` in standard position.

    Returns ``(phi, R o phi)``.  Afterwards term ``k`` lives on ``{x_1 > 0}`` and
    either has ``delta . e_1 = 0`` and zero intercept (independent case) or
    ``delta = alpha e_1`` with a nonzero intercept (parallel case).
    """
    term = R.terms[k]
    if term.is_continuous:
        raise ValueError("term is continuous; there is no jump to normalize")
    detected = term_case(term)
    case = case or detected
    if case not in ("independent", "parallel"):
        raise ValueError(f"unknown case {case!r}")
    if case != detected:
        raise ValueError(f"term is {detected}, cannot normalize it as {case}")
    nu, o, delta, b = term.halfspace.normal, term.halfspace.offset, term.delta, term.intercept
    dim = nu.shape[0]

    if case == "independent":
        rest = _orthonormal_completion([nu], dim)[1:]
        # component of nu orthogonal to delta: orthogonal to delta, not to nu
        dhat = delta / np.linalg.norm(delta)
        t1 = nu - (nu @ dhat) * dhat
        t1 = t1 / (t1 @ nu)
        B = np.column_stack([t1] + rest)
        # (B^T nu) . c = o pins c_1; (B^T delta) . c = -b only involves c_2..c_d
        c = np.zeros(dim)
        c[0] = o
        v = (B.T @ delta)[1:]
        c[1:] = -b * v / (v @ v)
    else:
        B = np.column_stack(_orthonormal_completion([nu], dim))
        c = np.zeros(dim)
        c[0] = o

    phi = AffineMap(B, B @ c)
    return phi, transform(R, phi)


def _check_normalized(term: Term, case: str):
    dim = term.halfspace.dim
    e1 = np.zeros(dim)
    e1[0] = 1.0
    ok = (np.max(np.abs(term.halfspace.normal - e1)) < CONTINUITY_TOL
          and abs(term.halfspace.offset) < CONTINUITY_TOL)
    if case == "independent":
        ok = ok and abs(term.delta[0]) < CONTINUITY_TOL and abs(term.intercept) < CONTINUITY_TOL
        ok = ok and np.linalg.norm(term.delta[1:]) >= CONTINUITY_TOL
    else:
        ok = ok and np.linalg.norm(term.delta[1:]) < CONTINUITY_TOL and abs(term.intercept) >= CONTINUITY_TOL
    if not ok:
        raise ValueError(f"term is not normalized for the {case} case; run normalize_term first")


def improve_kappa_independent(R: GeneralizedResponse, kappa: float, k: int = -1) -> GeneralizedResponse:
    """Replace the jump term ``1[x_1 > 0] delta . x`` by a continuous ramp of slope ~kappa.

    The replacement ``1/2 relu(delta . x + kappa x_1) - 1/2 relu(-delta . x + kappa x_1)``
    agrees with the jump wherever ``kappa |x_1| >= |delta . x|``.
    """
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    terms = list(R.terms)
    term = terms.pop(k)
    _check_normalized(term, "independent")
    e1 = np.zeros(R.d_in)
    e1[0] = 1.0
    up = term.delta + kappa * e1
    down = -term.delta + kappa * e1
    terms.append(Term(HalfSpace.from_raw(up, 0.0), 0.5 * up, 0.0, 1))
    terms.append(Term(HalfSpace.from_raw(down, 0.0), -0.5 * down, 0.0, 1))
    return GeneralizedResponse(R.background, terms)


def improve_kappa_parallel(R: GeneralizedResponse, kappa: float, k: int = -1) -> GeneralizedResponse:
    """Replace the jump ``1[x_1 > 0](alpha x_1 + b)`` by two kinks at ``x_1 = -+1/kappa``.

    The replacement ``1/2 (alpha + b kappa) relu(x_1 + 1/kappa) + 1/2 (alpha - b kappa) relu(x_1 - 1/kappa)``
    agrees with the jump for ``|x_1| >= 1/kappa``.
    """
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    terms = list(R.terms)
    term = terms.pop(k)
    _check_normalized(term, "parallel")
    alpha, b = term.delta[0], term.intercept
    e1 = np.zeros(R.d_in)
    e1[0] = 1.0
    lo = 0.5 * (alpha + b * kappa)
    hi = 0.5 * (alpha - b * kappa)
    terms.append(Term(HalfSpace(e1, -1.0 / kappa), lo * e1, lo / kappa, 1))
    terms.append(Term(HalfSpace(e1, 1.0 / kappa), hi * e1, -hi / kappa, 1))
    return GeneralizedResponse(R.background, terms)


# --- JSON ---------------------------------------------------------------

def response_to_json(R: GeneralizedResponse) -> dict:
    return {
        "d_in": R.d_in,
        "background": {"linear": R.background.linear.tolist(), "const": R.background.const},
        "terms": [{"normal": t.halfspace.normal.tolist(), "offset": t.halfspace.offset,
                   "delta": t.delta.tolist(), "intercept": t.intercept,
                   "multiplicity": t.multiplicity} for t in R.terms],
    }


def response_from_json(obj: dict) -> GeneralizedResponse:
    bg = obj["background"]
    terms = [Term(HalfSpace.from_raw(t["normal"], t["offset"]), t["delta"], t["intercept"],
                  int(t.get("multiplicity", 2))) for t in obj["terms"]]
    return GeneralizedResponse(Affine(bg["linear"], bg["const"]), terms)
