"""Shared fixtures: cached meshes, spaces and assembled systems.

Building a space and assembling its system dominates test time, so the
heavyweight objects are memoized per (N, beta_minus, beta_plus) and shared
across test modules.  Everything handed out is treated as immutable.
"""
from functools import lru_cache

import numpy as np
import pytest

from eifem.assembly import assemble
from eifem.ifem_space import build_space
from eifem.mesh import build_mesh, classify_mesh
from eifem.problems import circle_benchmark


@lru_cache(maxsize=32)
def _cached_case(n: int, beta_minus: float, beta_plus: float):
    problem = circle_benchmark(beta_minus, beta_plus)
    mesh = build_mesh(n)
    cls = classify_mesh(mesh, problem.level_set)
    space = build_space(mesh, cls, beta_minus, beta_plus)
    system = assemble(space, problem)
    return problem, mesh, cls, space, system


@pytest.fixture
def make_case():
    """Factory returning (problem, mesh, classification, space, system)."""
    return _cached_case


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)
