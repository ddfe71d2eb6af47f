"""Random fault scenarios and labelled sample generation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dataset import CATEGORICAL, CONTINUOUS, ColumnSchema, SampleTable
from .case import GridCase
from .dynamics import (
    INSTABILITY_SPREAD,
    STABLE,
    UNSTABLE,
    SwingModels,
    label_stability,
    prepare_dynamic_model,
    simulate_swing,
)
from .network import Fault, ScenarioRejected
from .powerflow import solve_power_flow

LOAD_LEVELS = tuple(f"{p}%" for p in range(60, 150, 5))
STABILITY_CLASSES = (STABLE, UNSTABLE)
MAX_REJECTIONS = 100


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    load_scale_range: tuple[float, float] = (0.60, 1.45)
    fault_position_range: tuple[float, float] = (0.20, 0.80)
    clearing_time_range: tuple[float, float] = (1.0 / 60.0, 1.0 / 3.0)
    horizon: float = 10.0
    step: float = 0.005
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "load_scale_range", tuple(map(float, self.load_scale_range)))
        object.__setattr__(self, "fault_position_range", tuple(map(float, self.fault_position_range)))
        object.__setattr__(self, "clearing_time_range", tuple(map(float, self.clearing_time_range)))
        lo, hi = self.load_scale_range
        if not 0.60 - 1e-12 <= lo <= hi <= 1.45 + 1e-12:
            raise ConfigurationError(f"load_scale_range {self.load_scale_range} outside [0.60, 1.45]")
        lo, hi = self.fault_position_range
        if not 0.20 - 1e-12 <= lo <= hi <= 0.80 + 1e-12:
            raise ConfigurationError(
                f"fault_position_range {self.fault_position_range} outside [0.20, 0.80]")
        lo, hi = self.clearing_time_range
        if not 1.0 / 60.0 - 1e-12 <= lo <= hi <= 1.0 / 3.0 + 1e-12:
            raise ConfigurationError(
                f"clearing_time_range {self.clearing_time_range} outside [1/60, 1/3] s")
        if not 0.0 < self.step <= 0.02:
            raise ConfigurationError(f"step {self.step} must lie in (0, 0.02] s")
        if self.horizon < hi:
            raise ConfigurationError("horizon shorter than the longest clearing time")


@dataclass(frozen=True, eq=False)
class SimResult:
    features: np.ndarray
    label: str
    load_level: str
    load_scale: float
    fault_line: int
    fault_position: float
    clearing_time: float
    attempts: int = 1
    metadata: dict = field(default_factory=dict)


def load_level_bucket(scale: float) -> str:
    """Nearest 5 % bucket, e.g. 1.02 -> '100%'."""
    pct = 5 * int(math.floor(scale / 0.05 + 0.5))
    return f"{pct}%"


def scenario_rng(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    """Generator for one scenario, derived from (master seed, index, attempt)."""
    return np.random.default_rng([int(seed), int(index), int(attempt)])


def simulate_fault(case, load_scale, fault, clearing_time, horizon=10.0, step=0.005,
                   stop_spread: float | None = INSTABILITY_SPREAD):
    """Power flow, three reduced networks and the swing run for a single fault."""
    pf = solve_power_flow(case, load_scale)
    models = SwingModels(
        prefault=prepare_dynamic_model(case, pf, "prefault"),
        fault_on=prepare_dynamic_model(case, pf, "fault_on", fault),
        postfault=prepare_dynamic_model(case, pf, "postfault", fault),
    )
    return simulate_swing(models, clearing_time, horizon, step, stop_spread=stop_spread)


def run_scenario(case: GridCase, config: ScenarioConfig, index: int = 0) -> SimResult:
    """Draw, simulate and label scenario ``index`` of the stream keyed by ``config.seed``."""
    for attempt in range(MAX_REJECTIONS + 1):
        rng = scenario_rng(config.seed, index, attempt)
        scale = rng.uniform(*config.load_scale_range)
        line = int(rng.integers(len(case.lines)))
        position = rng.uniform(*config.fault_position_range)
        t_cl = rng.uniform(*config.clearing_time_range)
        try:
            result = simulate_fault(case, scale, Fault(line, position), t_cl,
                                    config.horizon, config.step)
        except ScenarioRejected:
            continue
        features = result.snapshot.vector()
        if not np.all(np.isfinite(features)) or np.any(result.snapshot.vm >= 2.0):
            continue
        return SimResult(
            features=features,
            label=label_stability(result),
            load_level=load_level_bucket(scale),
            load_scale=float(scale),
            fault_line=line,
            fault_position=float(position),
            clearing_time=float(t_cl),
            attempts=attempt + 1,
        )
    raise ConfigurationError(
        f"scenario {index}: more than {MAX_REJECTIONS} consecutive rejections"
    )


def sample_schema(case: GridCase) -> tuple[ColumnSchema, ...]:
    cols = []
    for prefix, unit in (("vm", "pu"), ("va", "rad")):
        cols += [ColumnSchema(f"{prefix}_{b.id}", CONTINUOUS, unit=unit) for b in case.buses]
    for prefix in ("pl", "ql"):
        cols += [ColumnSchema(f"{prefix}_{ld.bus}", CONTINUOUS, unit="pu") for ld in case.loads]
    for prefix in ("pg", "qg"):
        cols += [ColumnSchema(f"{prefix}_{g.bus}", CONTINUOUS, unit="pu") for g in case.generators]
    names = [c.name for c in cols]
    if len(set(names)) != len(names):
        # several loads or generators on one bus
        cols = [ColumnSchema(f"{c.name}_{i}", c.kind, unit=c.unit) for i, c in enumerate(cols)]
    cols.append(ColumnSchema("stability", CATEGORICAL, STABILITY_CLASSES, role="label"))
    cols.append(ColumnSchema("load_level", CATEGORICAL, LOAD_LEVELS, unit="percent", role="condition"))
    return tuple(cols)


def _result_row(res: SimResult) -> np.ndarray:
    return np.concatenate([
        res.features,
        [STABILITY_CLASSES.index(res.label), LOAD_LEVELS.index(res.load_level)],
    ])


def _run_chunk(args):
    case, config, indices = args
    return [_result_row(run_scenario(case, config, i)) for i in indices]


def generate_dataset(case: GridCase, config: ScenarioConfig, n: int, workers: int = 1,
                     progress=None) -> SampleTable:
    """Simulate ``n`` scenarios; row ``i`` depends only on ``(config.seed, i)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    schema = sample_schema(case)
    if workers <= 1:
        rows = []
        for i in range(n):
            rows.append(_result_row(run_scenario(case, config, i)))
            if progress is not None:
                progress(i + 1, n)
    else:
        chunks = [list(range(w, n, workers)) for w in range(workers)]
        rows = [None] * n
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, part in zip(chunks, pool.map(_run_chunk, [(case, config, c) for c in chunks])):
                for i, r in zip(idx, part):
                    rows[i] = r
    return SampleTable(schema, np.array(rows))
