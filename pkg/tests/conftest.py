from __future__ import annotations

from typing import Optional

import numpy as np
import pytest

from tools.reflected_sde import ReflectedPathEnsemble
from tools.storage_tools import StorageManager


def make_ensemble(
    states: np.ndarray,
    d_k: Optional[np.ndarray] = None,
    d_m: Optional[np.ndarray] = None,
    epsilon: float = 1.0,
    dt: float = 0.1,
) -> ReflectedPathEnsemble:
    """Hand-built ensemble: states (P, S+1, d), dK (P, S), dM (P, S, d) default to zero."""
    states = np.asarray(states, dtype=float)
    n_paths, steps = states.shape[0], states.shape[1] - 1
    d_k = np.zeros((n_paths, steps)) if d_k is None else np.asarray(d_k, dtype=float)
    d_m = np.zeros((n_paths, steps, states.shape[2])) if d_m is None else np.asarray(d_m, dtype=float)
    return ReflectedPathEnsemble(
        times=np.arange(steps + 1) * dt,
        states=states,
        d_m=d_m,
        d_k=d_k,
        boundary_flags=d_k > 0,
        aborted=np.zeros(n_paths, dtype=bool),
        epsilon=epsilon,
        dt=dt,
    )


@pytest.fixture
def storage(tmp_path) -> StorageManager:
    return StorageManager(tmp_path / "run")
