import os
import json
from datetime import datetime
from pathlib import Path
from typing import Dict, Any, Iterable, Optional, Tuple

from dotenv import dotenv_values

from tools.errors import ConfigError

STR, INT, FLOAT, FLOATS = "str", "int", "float", "floats"

# key -> (kind, default)
SCHEMA: Dict[str, Tuple[str, Any]] = {
    "family": (STR, "identity"),
    "robin": (STR, "const(-1)"),
    "domain.kind": (STR, "disk"),
    "domain.radius": (FLOAT, 1.0),
    "domain.semi_axes": (FLOATS, (2.0, 1.0)),
    "driver.f": (STR, "zero"),
    "driver.g": (STR, "one"),
    "x0": (FLOATS, (0.0, 0.0)),
    "horizon": (FLOAT, 0.5),
    "epsilons": (FLOATS, (0.5, 0.25, 0.125)),
    "dt_cell": (FLOAT, 0.05),
    "paths": (INT, 200000),
    "chunk_paths": (INT, 50000),
    "homogenized.dt": (FLOAT, None),
    "basis.kind": (STR, "polynomial"),
    "basis.degree": (INT, 2),
    "basis.centers": (INT, 9),
    "basis.width": (FLOAT, 0.5),
    "grid_n": (INT, 128),
    "p_list": (FLOATS, (2.0, 4.0)),
    "cell.tol": (FLOAT, 1e-8),
    "cell.solver": (STR, "direct"),
    "seed": (INT, 12345),
    "dk_max": (FLOAT, 0.5),
    "memory_cap_mb": (INT, 4096),
    "boundary_samples": (INT, 64),
    "psi": (STR, "sin(1)"),
    "diagnose.kind": (STR, "volume"),
    "diagnose.horizon": (FLOAT, 1.0),
    "fbar.batch": (INT, 262144),
    "reference.nr": (INT, 400),
    "reference.nt": (INT, 400),
    "output_dir": (STR, "outputs"),
    "threads": (INT, None),
}
SIM_FIELDS = {"paths": INT, "dt": FLOAT, "horizon": FLOAT}


def _coerce(key: str, kind: str, raw: Any) -> Any:
    if raw is None or not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == INT:
            return int(float(text))
        if kind == FLOAT:
            return float(text)
        if kind == FLOATS:
            return tuple(float(v) for v in text.strip("()[] ").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': cannot read '{raw}' as {kind}") from exc
    return text


class Config:
    """Configuration management for the homogenization pipeline.

    Precedence, lowest first: schema defaults, environment
    (ROBIN_HOMOG_THREADS, ROBIN_HOMOG_OUTPUT_DIR), config file, overrides.
    """

    def __init__(self, path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None):
        self.base_dir = Path(__file__).parent.parent
        self.settings: Dict[str, Any] = {key: default for key, (_, default) in SCHEMA.items()}
        self.sim_overrides: Dict[float, Dict[str, Any]] = {}

        env_threads = os.getenv("ROBIN_HOMOG_THREADS")
        if env_threads:
            self.set("threads", env_threads)
        env_output = os.getenv("ROBIN_HOMOG_OUTPUT_DIR")
        if env_output:
            self.set("output_dir", env_output)

        if path is not None:
            self.load_file(path)
        for key, value in (overrides or {}).items():
            self.set(key, value)

    def load_file(self, path: Path):
        """Read a flat key=value file; '#' comments and blank lines are ignored."""
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for key, value in dotenv_values(path).items():
            if value is None:
                raise ConfigError(f"config key '{key}' has no value")
            self.set(key, value)

    def set(self, key: str, value: Any):
        key = key.strip()
        if key.startswith("sim."):
            self._set_sim(key, value)
            return
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key '{key}'")
        kind, _ = SCHEMA[key]
        self.settings[key] = _coerce(key, kind, value)

    def _set_sim(self, key: str, value: Any):
        # sim.<eps>.<field>; eps itself may contain a dot
        head, _, field = key[len("sim."):].rpartition(".")
        if field not in SIM_FIELDS or not head:
            raise ConfigError(f"unknown config key '{key}'; expected sim.<eps>.paths|dt|horizon")
        try:
            eps = float(head)
        except ValueError as exc:
            raise ConfigError(f"config key '{key}': '{head}' is not an epsilon value") from exc
        self.sim_overrides.setdefault(eps, {})[field] = _coerce(key, SIM_FIELDS[field], value)

    def apply(self, pairs: Iterable[str]):
        """Apply --set style 'key=value' strings."""
        for pair in pairs:
            key, sep, value = pair.partition("=")
            if not sep:
                raise ConfigError(f"override '{pair}' is not of the form key=value")
            self.set(key, value)

    def __getitem__(self, key: str) -> Any:
        return self.settings[key]

    def get(self, key: str, default: Any = None) -> Any:
        value = self.settings.get(key)
        return default if value is None else value

    @property
    def threads(self) -> int:
        return max(1, int(self.settings["threads"] or os.cpu_count() or 1))

    @property
    def outputs_dir(self) -> Path:
        return Path(self.settings["output_dir"])

    @property
    def memory_cap_bytes(self) -> int:
        return int(self.settings["memory_cap_mb"]) * 1024 ** 2

    def to_dict(self) -> Dict[str, Any]:
        data = {key: (list(v) if isinstance(v, tuple) else v) for key, v in self.settings.items()}
        data["threads"] = self.threads
        for eps, fields in sorted(self.sim_overrides.items(), reverse=True):
            for field, value in fields.items():
                data[f"sim.{eps:g}.{field}"] = value
        return data

    def create_run_folder(self, command: str = "run") -> Path:
        """Create a new timestamped folder for this run."""
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        run_folder = self.outputs_dir / f"{command}_{timestamp}"
        suffix = 1
        while run_folder.exists():
            run_folder = self.outputs_dir / f"{command}_{timestamp}_{suffix}"
            suffix += 1
        run_folder.mkdir(parents=True)

        # Save run configuration
        config_data = {"timestamp": timestamp, "command": command, **self.to_dict()}
        config_file = run_folder / "config.json"
        with open(config_file, 'w') as f:
            json.dump(config_data, f, indent=2)

        return run_folder

    def get_trace_file(self, run_folder: Path) -> Path:
        """Get trace.jsonl file path for logging."""
        return run_folder / "trace.jsonl"
