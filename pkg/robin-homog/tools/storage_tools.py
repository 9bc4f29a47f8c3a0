import json
import struct
from pathlib import Path
from datetime import datetime
from typing import Dict, Any, List, Union

import numpy as np
import pandas as pd

from tools.errors import PreconditionError
from tools.reflected_sde import ReflectedPathEnsemble

# little-endian header: magic, d, steps, n_paths, dt, epsilon
ENSEMBLE_MAGIC = b"RHEN"
_HEADER = struct.Struct("<4sIIQdd")


class StorageManager:
    """Manage the run folder: JSONL trace, result tables and ensemble dumps."""

    def __init__(self, run_folder: Path):
        self.run_folder = Path(run_folder)
        self.run_folder.mkdir(parents=True, exist_ok=True)
        self.trace_file = self.run_folder / "trace.jsonl"

    def log_trace(self, event_type: str, data: Dict[str, Any]):
        """
        Log an event to the trace file.

        Args:
            event_type: Type of event (e.g., 'stage_call', 'stage_result', 'orchestrator_decision')
            data: Event data to log
        """
        trace_entry = {
            "timestamp": datetime.now().isoformat(),
            "event_type": event_type,
            "data": data
        }

        with open(self.trace_file, 'a') as f:
            f.write(json.dumps(trace_entry, default=_jsonable) + "\n")

    def save_table(self, name: str, rows: Union[pd.DataFrame, List[Dict[str, Any]]]) -> Path:
        """Write a CSV table named <name>.csv; no timestamps, so reruns are byte-identical."""
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
        filepath = self.run_folder / f"{name}.csv"
        frame.to_csv(filepath, index=False, float_format="%.12g")
        self.log_trace("table_saved", {"name": name, "rows": len(frame), "path": str(filepath)})
        return filepath

    def save_json(self, name: str, data: Dict[str, Any]) -> Path:
        filepath = self.run_folder / f"{name}.json"
        with open(filepath, 'w') as f:
            json.dump(data, f, indent=2, default=_jsonable)
        return filepath

    def save_ensemble(self, ensemble: ReflectedPathEnsemble, name: str = "ensemble") -> Path:
        """Binary dump: header {d, steps, n_paths, dt, epsilon}, then per path states, dM, dK (float64 LE)."""
        filepath = self.run_folder / f"{name}.bin"
        write_ensemble(filepath, ensemble)
        return filepath


def _jsonable(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return repr(value)


def write_ensemble(path: Path, ensemble: ReflectedPathEnsemble) -> None:
    ens = ensemble.kept()
    header = _HEADER.pack(ENSEMBLE_MAGIC, ens.dim, ens.steps, ens.n_paths, ens.dt, ens.epsilon)
    body = np.concatenate(
        [
            ens.states.reshape(ens.n_paths, -1),
            ens.d_m.reshape(ens.n_paths, -1),
            ens.d_k,
        ],
        axis=1,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(body, dtype="<f8").tobytes())


def read_ensemble(path: Path) -> ReflectedPathEnsemble:
    """Load a dump written by write_ensemble; boundary flags are rebuilt from dK > 0."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise PreconditionError(f"{path} is too short to be an ensemble dump")
    magic, dim, steps, n_paths, dt, eps = _HEADER.unpack_from(raw)
    if magic != ENSEMBLE_MAGIC:
        raise PreconditionError(f"{path} is not an ensemble dump")
    width = (steps + 1) * dim + steps * dim + steps
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != n_paths * width:
        raise PreconditionError(f"{path}: expected {n_paths * width} values, found {body.size}")
    body = body.reshape(n_paths, width).astype(float)
    s_end = (steps + 1) * dim
    m_end = s_end + steps * dim
    d_k = body[:, m_end:].copy()
    return ReflectedPathEnsemble(
        times=np.arange(steps + 1) * dt,
        states=body[:, :s_end].reshape(n_paths, steps + 1, dim).copy(),
        d_m=body[:, s_end:m_end].reshape(n_paths, steps, dim).copy(),
        d_k=d_k,
        boundary_flags=d_k > 0,
        aborted=np.zeros(n_paths, dtype=bool),
        epsilon=float(eps),
        dt=float(dt),
    )
