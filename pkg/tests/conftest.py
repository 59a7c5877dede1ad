import numpy as np
import pytest

from relu_landscape.geometry import AffineMap, HalfSpace
from relu_landscape.networks import NetworkConfig
from relu_landscape.responses import Affine, GeneralizedResponse, Term


def random_network(rng, d_in, d, scale=1.0):
    n = d_in * (d + 1) + 2 * d + 1
    return NetworkConfig.from_vector(scale * rng.normal(size=n), d_in, d)


def random_invertible(rng, dim):
    while True:
        A = rng.normal(size=(dim, dim))
        if abs(np.linalg.det(A)) > 0.1:
            return AffineMap(A, rng.normal(size=dim))


def random_response(rng, dim, K, continuous_frac=0.5):
    """Response with K terms; some continuous (m = 1), the rest jumping (m = 2)."""
    terms = []
    for _ in range(K):
        H = HalfSpace.from_raw(rng.normal(size=dim), rng.normal())
        if rng.random() < continuous_frac:
            c = rng.normal()
            terms.append(Term(H, c * H.normal, -c * H.offset, 1))
        else:
            terms.append(Term(H, rng.normal(size=dim), rng.normal(), 2))
    return GeneralizedResponse(Affine(rng.normal(size=dim), rng.normal()), terms)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
