"""Experiment configuration: flat sectioned key=value files.

The on-disk format is INI-style text with four mandatory-free sections
(``[task]``, ``[solver]``, ``[training]``, ``[output]``, plus optional
``[sweep]``). Every key is optional and falls back to the documented
default; unknown sections or keys are rejected. Parsing errors raise
`ConfigParseError`, range violations raise `ConfigValidationError` — the
CLI maps them to exit codes 1 and 2.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields

from .bilevel import BilevelConfig

__all__ = [
    "ConfigParseError",
    "ConfigValidationError",
    "TaskConfig",
    "TrainConfig",
    "OutputConfig",
    "SweepConfig",
    "BuotConfig",
    "load_config",
    "loads_config",
    "dumps_config",
    "save_config",
    "config_as_dict",
]

LAMBDA_GRID_DEFAULT = (10.0, 1.0, 0.5, 0.1, 0.05, 0.01)


class ConfigParseError(ValueError):
    """The config file could not be read or decoded."""


class ConfigValidationError(ValueError):
    """The config decoded fine but violates a documented constraint."""


@dataclass
class TaskConfig:
    k_source: int = 6
    k_target: int = 3
    n_s: int = 300
    n_t: int = 150
    d: int = 8
    shift_scale: float = 1.0
    task_seed: int = 0

    def validate(self):
        if self.k_source < 1:
            raise ConfigValidationError("task.k_source must be >= 1")
        if not 1 <= self.k_target <= self.k_source:
            raise ConfigValidationError("task.k_target must satisfy 1 <= k_target <= k_source")
        if self.n_s < self.k_source or self.n_t < self.k_target:
            raise ConfigValidationError("task sizes must allow one sample per class")
        if self.d < 2:
            raise ConfigValidationError("task.d must be >= 2")
        if self.shift_scale < 0:
            raise ConfigValidationError("task.shift_scale must be >= 0")
        return self


@dataclass
class TrainConfig:
    lambda_buot: float = 1.0  # key "lambda": weight of the transport loss
    lambda_t: float = 0.1
    eta: float = 0.01
    t_warm: int = 100
    t_max: int = 1000
    batch_size_source: int = 64
    batch_size_target: int = 64
    train_seed: int = 0
    log_interval: int = 10
    mean_reduction: bool = False
    # component toggles used by the ablation runner; not part of the file schema
    use_weights: bool = True
    use_buot_loss: bool = True

    def validate(self):
        if self.lambda_buot < 0 or self.lambda_t < 0:
            raise ConfigValidationError("training.lambda and training.lambda_t must be >= 0")
        if not self.eta > 0:
            raise ConfigValidationError("training.eta must be positive")
        if self.t_warm < 0 or self.t_max < 1 or self.t_warm >= self.t_max:
            raise ConfigValidationError("training requires 0 <= t_warm < t_max")
        if self.batch_size_source < 1 or self.batch_size_target < 1:
            raise ConfigValidationError("batch sizes must be >= 1")
        if self.log_interval < 1:
            raise ConfigValidationError("training.log_interval must be >= 1")
        return self


@dataclass
class OutputConfig:
    directory: str = "runs"
    formats: str = "csv,json"

    def validate(self):
        parts = [p.strip() for p in self.formats.split(",") if p.strip()]
        if sorted(parts) != ["csv", "json"]:
            raise ConfigValidationError("output.formats must be 'csv,json'")
        return self


@dataclass
class SweepConfig:
    k_target_values: tuple = ()  # empty: 1..k_source
    lambda_values: tuple = LAMBDA_GRID_DEFAULT

    def validate(self, k_source):
        for v in self.k_target_values:
            if not 1 <= v <= k_source:
                raise ConfigValidationError(
                    f"sweep.k_target_values entries must lie in [1, {k_source}]"
                )
        for v in self.lambda_values:
            if v < 0:
                raise ConfigValidationError("sweep.lambda_values must be >= 0")
        return self

    def resolved_k_targets(self, k_source):
        if self.k_target_values:
            return tuple(self.k_target_values)
        return tuple(range(1, k_source + 1))


@dataclass
class BuotConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    solver: BilevelConfig = field(default_factory=BilevelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self):
        self.task.validate()
        try:
            self.solver.validate()
        except ValueError as exc:
            raise ConfigValidationError(f"solver: {exc}") from exc
        self.training.validate()
        self.output.validate()
        self.sweep.validate(self.task.k_source)
        if self.training.batch_size_source > self.task.n_s:
            raise ConfigValidationError("training.batch_size_source exceeds task.n_s")
        if self.training.batch_size_target > self.task.n_t:
            raise ConfigValidationError("training.batch_size_target exceeds task.n_t")
        return self

    def replace(self, **sections):
        """Copy with dataclasses.replace applied per section, e.g.
        ``cfg.replace(training={'lambda_buot': 0.0})``."""
        out = BuotConfig(
            task=dataclasses.replace(self.task),
            solver=dataclasses.replace(self.solver),
            training=dataclasses.replace(self.training),
            output=dataclasses.replace(self.output),
            sweep=dataclasses.replace(self.sweep),
        )
        for name, overrides in sections.items():
            setattr(out, name, dataclasses.replace(getattr(out, name), **overrides))
        return out


def _parse_bool(raw, where):
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigParseError(f"{where}: expected a boolean, got {raw!r}")


def _parse_float_tuple(raw, where):
    raw = raw.strip()
    if not raw:
        return ()
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError as exc:
        raise ConfigParseError(f"{where}: expected comma-separated numbers, got {raw!r}") from exc


def _parse_int_tuple(raw, where):
    values = _parse_float_tuple(raw, where)
    if any(v != int(v) for v in values):
        raise ConfigParseError(f"{where}: expected comma-separated integers, got {raw!r}")
    return tuple(int(v) for v in values)


# section -> {file key: (dataclass field, parser)}
_SCHEMA = {
    "task": {
        "k_source": ("k_source", int),
        "k_target": ("k_target", int),
        "n_s": ("n_s", int),
        "n_t": ("n_t", int),
        "d": ("d", int),
        "shift_scale": ("shift_scale", float),
        "task_seed": ("task_seed", int),
    },
    "solver": {
        "lambda1": ("lambda1", float),
        "lambda2": ("lambda2", float),
        "beta1": ("beta1", float),
        "beta2": ("beta2", float),
        "t_uot": ("t_uot", int),
        "inner_tol": ("inner_tol", float),
        "inner_max_iter": ("inner_max_iter", int),
        "cost_mode": ("cost_mode", str),
        "balance_mode": ("balance_mode", str),
        "kernel_mode": ("kernel_mode", str),
    },
    "training": {
        "lambda": ("lambda_buot", float),
        "lambda_t": ("lambda_t", float),
        "eta": ("eta", float),
        "t_warm": ("t_warm", int),
        "t_max": ("t_max", int),
        "batch_size_source": ("batch_size_source", int),
        "batch_size_target": ("batch_size_target", int),
        "train_seed": ("train_seed", int),
        "log_interval": ("log_interval", int),
        "mean_reduction": ("mean_reduction", "bool"),
    },
    "output": {
        "directory": ("directory", str),
        "formats": ("formats", str),
    },
    "sweep": {
        "k_target_values": ("k_target_values", "int_tuple"),
        "lambda_values": ("lambda_values", "float_tuple"),
    },
}

def _convert(raw, kind, where):
    if kind is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigParseError(f"{where}: expected an integer, got {raw!r}") from exc
    if kind is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigParseError(f"{where}: expected a number, got {raw!r}") from exc
    if kind is str:
        return raw.strip()
    if kind == "bool":
        return _parse_bool(raw, where)
    if kind == "int_tuple":
        return _parse_int_tuple(raw, where)
    if kind == "float_tuple":
        return _parse_float_tuple(raw, where)
    raise AssertionError(kind)


def loads_config(text):
    """Parse config text into a validated `BuotConfig`."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigParseError(f"malformed config: {exc}") from exc

    values = {section: {} for section in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigParseError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigParseError(f"unknown key {key!r} in section [{section}]")
            attr, kind = _SCHEMA[section][key]
            values[section][attr] = _convert(raw, kind, f"[{section}] {key}")

    cfg = BuotConfig(
        task=TaskConfig(**values["task"]),
        solver=BilevelConfig(**values["solver"]),
        training=TrainConfig(**values["training"]),
        output=OutputConfig(**values["output"]),
        sweep=SweepConfig(**values["sweep"]),
    )
    return cfg.validate()


def load_config(path):
    """Read and parse a config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config file {path}: {exc}") from exc
    return loads_config(text)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(
            str(v) if isinstance(v, int) else repr(float(v)) for v in value
        )
    return str(value)


def dumps_config(cfg):
    """Serialize to the canonical text form; ``loads_config`` round-trips it."""
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        block = getattr(cfg, section)
        out.write(f"[{section}]\n")
        for key, (attr, _kind) in keys.items():
            out.write(f"{key} = {_format_value(getattr(block, attr))}\n")
        out.write("\n")
    return out.getvalue()


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_config(cfg))


def config_as_dict(cfg):
    """Nested plain-dict snapshot (for manifests)."""
    out = {}
    for section in _SCHEMA:
        block = getattr(cfg, section)
        entry = {}
        for f in fields(block):
            value = getattr(block, f.name)
            entry[f.name] = list(value) if isinstance(value, tuple) else value
        out[section] = entry
    return out
