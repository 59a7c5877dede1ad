"""Shallow residual ReLU networks, generalized responses and their error landscapes."""

from .geometry import (AffineMap, Box, CellIndex, HalfSpace, apply_affine, compose_affine,
                       enumerate_cells, halfspace_contains, invert_affine)
from .measures import (LossSpec, ProblemInstance, QuadratureGrid, eval_error, min_error_lower_bound,
                       niceness_diagnostic, pointwise_minimizer)
from .networks import (EffectiveTuple, NetworkConfig, Neuron, effective_tuple, eval_response,
                       eval_tuple, response_subgradient, tuple_to_network)
from .responses import (Affine, GeneralizedResponse, Term, approximate_response, approximate_term,
                        classify, eval_genresponse, improve_kappa_independent, improve_kappa_parallel,
                        normalize_term, to_network, transform)
from .training import (Schedule, TrainRecord, multistart_min, neuron_gain, pattern_search,
                       subgradient_descent)

__version__ = "0.1.0"
