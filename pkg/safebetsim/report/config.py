"""
Experiment configuration.

An experiment is described by a flat KEY=VALUE file read with
python-dotenv. Only the file is consulted, never the process environment.
List values are separated by commas or whitespace.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple, TypeVar, Union

from dotenv import dotenv_values

from safebetsim.allocator.lazy_free import (
    HANDLER_COST,
    MAX_PENDING_BYTES,
    MAX_PENDING_COUNT,
    LazyFreeConfig,
)
from safebetsim.harness.scenarios import scenario_kinds
from safebetsim.harness.workloads import WORKLOADS
from safebetsim.memory.hierarchy import CacheLevelConfig, HierarchyConfig
from safebetsim.pipeline.policy import CoreConfig, PolicyConfig, PolicyKind
from safebetsim.smact.geometry import SmactGeometry

T = TypeVar("T")

KNOWN_KEYS = (
    "TRACES",
    "SCENARIOS",
    "WORKLOADS",
    "SEEDS",
    "POLICIES",
    "GEOMETRIES",
    "NORMALIZE",
    "OUTPUT_DIR",
    "FORMATS",
    "WORKERS",
    "RESULTS_DB",
    "LOG_LEVEL",
    "LOG_FILE",
    "CORE_WIDTH",
    "CORE_ISSUEQ",
    "CORE_ROB",
    "CORE_FRONTEND_DEPTH",
    "CORE_MISPREDICT_PENALTY",
    "L1_SIZE",
    "L1_WAYS",
    "L1_LATENCY",
    "L2_SIZE",
    "L2_WAYS",
    "L2_LATENCY",
    "L3_SIZE",
    "L3_WAYS",
    "L3_LATENCY",
    "MEM_LATENCY",
    "FREE_MAX_COUNT",
    "FREE_MAX_BYTES",
    "HANDLER_COST",
    "WORKLOAD_OPS",
)
FORMATS = ("csv", "json")
_SPLIT_RE = re.compile(r"[,\s]+")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    """The experiment configuration is missing, malformed or inconsistent."""


@dataclass(frozen=True)
class TraceSource:
    """Where one trace of the matrix comes from.

    ``kind`` is ``file``, ``scenario`` or ``workload``; seeds only apply to
    generated traces.
    """

    kind: str
    name: str
    seed: int = 0

    @property
    def label(self) -> str:
        if self.kind == "file":
            return self.name
        return f"{self.name}@{self.seed}"


@dataclass(frozen=True)
class ExperimentConfig:
    traces: Tuple[TraceSource, ...]
    policies: Tuple[PolicyConfig, ...]
    geometries: Tuple[SmactGeometry, ...] = (SmactGeometry(),)
    core: CoreConfig = field(default_factory=CoreConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    lazy_free: LazyFreeConfig = field(default_factory=LazyFreeConfig)
    seeds: Tuple[int, ...] = (0,)
    normalize: bool = True
    output_dir: str = "data/results"
    formats: Tuple[str, ...] = FORMATS
    workers: int = 1
    workload_ops: Optional[int] = None
    results_db: Optional[str] = None
    log_level: str = "INFO"
    log_file: Optional[str] = None
    source_path: Optional[str] = None

    def __post_init__(self):
        if not self.traces:
            raise ConfigError("at least one trace, scenario or workload is required")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        if not self.geometries:
            raise ConfigError("at least one SMACT geometry is required")
        if self.normalize and not any(p.kind is PolicyKind.BASELINE for p in self.policies):
            raise ConfigError("NORMALIZE needs baseline among POLICIES")
        labels = [p.label() for p in self.policies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate policies in {labels}")
        unknown = set(self.formats) - set(FORMATS)
        if unknown:
            raise ConfigError(f"unknown output formats: {sorted(unknown)}")
        if self.workers < 1:
            raise ConfigError("WORKERS must be at least 1")
        if self.lazy_free.max_count < 0:
            raise ConfigError("FREE_MAX_COUNT must be non-negative")
        if self.lazy_free.max_bytes <= 0:
            raise ConfigError("FREE_MAX_BYTES must be positive")

    def matrix_size(self) -> int:
        return len(self.traces) * len(self.policies) * len(self.geometries)


def _items(text: Optional[str]) -> List[str]:
    if not text:
        return []
    return [item for item in _SPLIT_RE.split(text.strip()) if item]


def _parse_each(key: str, text: Optional[str], parse: Callable[[str], T]) -> List[T]:
    out = []
    for item in _items(text):
        try:
            out.append(parse(item))
        except (ValueError, NotImplementedError) as e:
            raise ConfigError(f"{key}: {e}") from None
    return out


def _int(values: Mapping[str, Optional[str]], key: str, default: int) -> int:
    text = values.get(key)
    if text is None or not text.strip():
        return default
    try:
        return int(text.strip(), 0)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _bool(values: Mapping[str, Optional[str]], key: str, default: bool) -> bool:
    text = values.get(key)
    if text is None or not text.strip():
        return default
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _str(values: Mapping[str, Optional[str]], key: str, default: Optional[str]) -> Optional[str]:
    text = values.get(key)
    if text is None or not text.strip():
        return default
    return text.strip()


def _trace_sources(values: Mapping[str, Optional[str]], seeds: List[int]) -> List[TraceSource]:
    sources = [TraceSource("file", path) for path in _items(values.get("TRACES"))]

    kinds = scenario_kinds()
    for name in _items(values.get("SCENARIOS")):
        if name == "all":
            chosen = kinds
        elif name in kinds:
            chosen = [name]
        else:
            raise ConfigError(f"SCENARIOS: unknown scenario kind {name!r}")
        for kind in chosen:
            sources.extend(TraceSource("scenario", kind, seed) for seed in seeds)

    for name in _items(values.get("WORKLOADS")):
        if name not in WORKLOADS:
            raise ConfigError(f"WORKLOADS: unknown workload {name!r}")
        sources.extend(TraceSource("workload", name, seed) for seed in seeds)

    # keep the first occurrence of repeated entries
    return list(dict.fromkeys(sources))


def _hierarchy(values: Mapping[str, Optional[str]]) -> HierarchyConfig:
    defaults = {lvl.name: lvl for lvl in HierarchyConfig().levels}
    levels = []
    for name, lvl in defaults.items():
        levels.append(
            CacheLevelConfig(
                name,
                size=_int(values, f"{name}_SIZE", lvl.size),
                ways=_int(values, f"{name}_WAYS", lvl.ways),
                hit_latency=_int(values, f"{name}_LATENCY", lvl.hit_latency),
            )
        )
    return HierarchyConfig(
        levels=tuple(levels),
        mem_latency=_int(values, "MEM_LATENCY", HierarchyConfig().mem_latency),
    )


def parse_experiment_config(
    values: Mapping[str, Optional[str]], source_path: Optional[str] = None
) -> ExperimentConfig:
    """Build an ExperimentConfig from already-read key/value pairs."""
    unknown = sorted(set(values) - set(KNOWN_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

    seeds = _parse_each("SEEDS", values.get("SEEDS"), lambda s: int(s, 0)) or [0]
    geometries = _parse_each("GEOMETRIES", values.get("GEOMETRIES"), SmactGeometry.parse)
    formats = [f.lower() for f in _items(values.get("FORMATS"))] or list(FORMATS)

    try:
        return ExperimentConfig(
            traces=tuple(_trace_sources(values, seeds)),
            policies=tuple(_parse_each("POLICIES", values.get("POLICIES"), PolicyConfig.parse)),
            geometries=tuple(geometries) or (SmactGeometry(),),
            core=CoreConfig(
                width=_int(values, "CORE_WIDTH", CoreConfig.width),
                issueq=_int(values, "CORE_ISSUEQ", CoreConfig.issueq),
                rob=_int(values, "CORE_ROB", CoreConfig.rob),
                frontend_depth=_int(values, "CORE_FRONTEND_DEPTH", CoreConfig.frontend_depth),
                mispredict_penalty=_int(
                    values, "CORE_MISPREDICT_PENALTY", CoreConfig.mispredict_penalty
                ),
            ),
            hierarchy=_hierarchy(values),
            lazy_free=LazyFreeConfig(
                max_count=_int(values, "FREE_MAX_COUNT", MAX_PENDING_COUNT),
                max_bytes=_int(values, "FREE_MAX_BYTES", MAX_PENDING_BYTES),
                handler_cost=_int(values, "HANDLER_COST", HANDLER_COST),
            ),
            seeds=tuple(seeds),
            normalize=_bool(values, "NORMALIZE", True),
            output_dir=_str(values, "OUTPUT_DIR", "data/results") or "data/results",
            formats=tuple(dict.fromkeys(formats)),
            workers=_int(values, "WORKERS", 1),
            workload_ops=_int(values, "WORKLOAD_OPS", 0) or None,
            results_db=_str(values, "RESULTS_DB", None),
            log_level=(_str(values, "LOG_LEVEL", "INFO") or "INFO").upper(),
            log_file=_str(values, "LOG_FILE", None),
            source_path=source_path,
        )
    except ConfigError:
        raise
    except ValueError as e:
        # core, cache and allocator dataclasses validate themselves
        raise ConfigError(str(e)) from None


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate an experiment file."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"configuration file not found: {config_path}")
    values: Dict[str, Optional[str]] = dict(dotenv_values(config_path))
    return parse_experiment_config(values, source_path=str(config_path))
