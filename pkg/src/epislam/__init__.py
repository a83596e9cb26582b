"""Epistemic-uncertainty-aware semantic SLAM and belief space planning.

Two interchangeable inference engines maintain a joint belief over robot
and object poses and over posterior class probabilities: a multi-hybrid
engine (many conditional factor graphs, one per classifier-weight
realization and class realization) and a joint-logit engine (one Gaussian
graph with per-object logit chains).  Planning maximizes sampled
information-theoretic rewards over motion primitives with UCT.
"""

from . import clsmodel, factorgraph, geometry, jlp, mh, planning, sim, simplex

__all__ = [
    "clsmodel",
    "factorgraph",
    "geometry",
    "jlp",
    "mh",
    "planning",
    "sim",
    "simplex",
]

__version__ = "0.1.0"
