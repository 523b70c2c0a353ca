"""
This module contains utility functions meant to be used in tests.
"""

import os

import numpy as np

from aqpt.apparatus import MeasurementConfig, random_config
from aqpt.quantum_core import (
    ChiMatrix,
    DensityMatrix,
    KrausSet,
    ginibre,
    haar_random_unitary,
    kraus_to_chi,
)


def set_aqpt_environment_variables(**values):
    """
    Sets ``AQPT_*`` environment variables, e.g.
    ``set_aqpt_environment_variables(PARTICLES_TP=200)``. The ``app_config``
    module must be reloaded for the values to take effect.
    """
    for name, value in values.items():
        os.environ[f"AQPT_{name.upper()}"] = str(value)


def set_fast_environment_variables():
    """
    Sets small ensembles and short MH walks, mainly for closed-loop tests.
    """
    set_aqpt_environment_variables(
        particles_tp=200, particles_lossy=400, mh_steps=5, pool_size=20
    )


def random_density_matrix(rng: np.random.Generator, d: int = 2) -> DensityMatrix:
    """Full-rank state with unit trace drawn from the Hilbert-Schmidt measure."""
    g = ginibre((d, d), rng)
    rho = g @ g.conj().T
    return DensityMatrix(rho / np.trace(rho).real)


def random_kraus_set(
    rng: np.random.Generator, d: int = 2, trace_preserving: bool = True
) -> KrausSet:
    """
    d² operation elements cut from a Haar-random isometry; the non trace
    preserving variant drops the last of d²+1 elements.
    """
    if trace_preserving:
        col = haar_random_unitary(d**3, d, rng)
        return KrausSet(tuple(col.reshape(d * d, d, d)), trace_preserving=True)
    col = haar_random_unitary(d**3 + d, d, rng)
    return KrausSet(tuple(col[: d**3].reshape(d * d, d, d)), trace_preserving=False)


def random_chi(
    rng: np.random.Generator, d: int = 2, trace_preserving: bool = True
) -> ChiMatrix:
    return kraus_to_chi(random_kraus_set(rng, d, trace_preserving))


def random_configs(rng: np.random.Generator, count: int):
    return [random_config(rng) for _ in range(count)]


def unitary_kraus(u) -> KrausSet:
    return KrausSet((np.asarray(u, dtype=complex),), trace_preserving=True)


ALIGNED = MeasurementConfig(0.0, 0.0, 0.0, 0.0)
