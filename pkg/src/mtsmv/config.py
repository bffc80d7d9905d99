"""JSON experiment files.

Layout::

    {
      "problem": {
        "market": {"horizon": 2.0, "rate": 0.04, "drift": [0.12], "vol": [[0.2]]},
        "checkpoints": [0, 1, 2],
        "initial_wealth": 1.0,
        "targets": [1.0876, 1.2214]            # or {"rate_multiples": [2.1, 5.0]}
      },
      "simulation": {"n_paths": 100000, "step": 0.001, "seed": 42, "record_step": 0.01},
      "outputs": {"directory": "out", "formats": ["csv", "json", "svg"]}
    }

Coefficients take the forms accepted by :meth:`MarketModel.piecewise`.
``rate_multiples`` sets ``L_i = y exp(theta_i * average rate on [0, t_i])``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import AssumptionViolation, ConfigError, DomainError
from .market_model import MarketModel, ProblemSpec
from .simulator import SimulationConfig

FORMATS = ("csv", "json", "svg")
OUTPUT_ENV = "MTSMV_OUTPUT_DIR"


@dataclass(frozen=True)
class OutputConfig:
    directory: Optional[str] = None
    formats: tuple[str, ...] = FORMATS
    figures: dict = field(default_factory=lambda: {"figure1": True, "figure2": True, "figure3": True})

    def wants(self, fmt: str) -> bool:
        return fmt in self.formats


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    simulation: SimulationConfig
    outputs: OutputConfig
    source: Optional[str] = None

    def with_overrides(self, *, seed=None, paths=None, step=None) -> "ExperimentConfig":
        """CLI flags take precedence over file values."""
        kw = {}
        if seed is not None:
            kw["seed"] = seed
        if paths is not None:
            kw["n_paths"] = paths
        if step is not None:
            kw["step"] = step
        if not kw:
            return self
        try:
            sim = replace(self.simulation, **kw)
        except DomainError as exc:
            raise ConfigError(f"simulation override: {exc}", field="simulation") from exc
        return replace(self, simulation=sim)


def _need(d, key, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object", field=where)
    if key not in d:
        raise ConfigError(f"{where}.{key}: missing required field", field=f"{where}.{key}")
    return d[key]


def _number(x, where, positive=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"{where}: expected a finite number, got {x!r}", field=where)
    if positive and not x > 0:
        raise ConfigError(f"{where}: must be positive, got {x!r}", field=where)
    return float(x)


def _market(d) -> MarketModel:
    where = "problem.market"
    horizon = _number(_need(d, "horizon", where), f"{where}.horizon", positive=True)
    args = {k: _need(d, k, where) for k in ("rate", "drift", "vol")}
    unknown = set(d) - {"horizon", "rate", "drift", "vol", "delta"}
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}", field=f"{where}.{sorted(unknown)[0]}")
    delta = d.get("delta", 1e-8)
    try:
        return MarketModel.piecewise(horizon, args["rate"], args["drift"], args["vol"], delta=delta)
    except AssumptionViolation as exc:
        raise ConfigError(f"{where}: {exc}", field=where) from exc
    except (DomainError, ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}", field=where) from exc


def _targets(raw, market, checkpoints, y):
    where = "problem.targets"
    if isinstance(raw, dict):
        thetas = _need(raw, "rate_multiples", where)
        if not isinstance(thetas, list):
            raise ConfigError(f"{where}.rate_multiples: expected a list", field=f"{where}.rate_multiples")
        out = []
        for k, (t, th) in enumerate(zip(checkpoints[1:], thetas)):
            th = _number(th, f"{where}.rate_multiples[{k}]")
            rbar = market.integral_rate(0.0, t) / t
            out.append(y * math.exp(th * rbar))
        if len(thetas) != len(checkpoints) - 1:
            raise ConfigError(
                f"{where}.rate_multiples: expected {len(checkpoints) - 1} entries, got {len(thetas)}",
                field=f"{where}.rate_multiples",
            )
        return tuple(out)
    if not isinstance(raw, list):
        raise ConfigError(f"{where}: expected a list or a rate_multiples object", field=where)
    return tuple(_number(v, f"{where}[{k}]") for k, v in enumerate(raw))


def _problem(d) -> ProblemSpec:
    market = _market(_need(d, "market", "problem"))
    cps = _need(d, "checkpoints", "problem")
    if not isinstance(cps, list):
        raise ConfigError("problem.checkpoints: expected a list", field="problem.checkpoints")
    cps = tuple(_number(t, f"problem.checkpoints[{k}]") for k, t in enumerate(cps))
    y = _number(_need(d, "initial_wealth", "problem"), "problem.initial_wealth", positive=True)
    targets = _targets(_need(d, "targets", "problem"), market, cps, y)
    try:
        return ProblemSpec(market, cps, y, targets)
    except DomainError as exc:
        raise ConfigError(f"problem: {exc}", field="problem") from exc


def _simulation(d) -> SimulationConfig:
    d = d or {}
    if not isinstance(d, dict):
        raise ConfigError("simulation: expected an object", field="simulation")
    known = {f.name for f in fields(SimulationConfig)}
    unknown = set(d) - known
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"simulation.{name}: unknown field", field=f"simulation.{name}")
    kw = dict(d)
    if "mdd_horizons" in kw and kw["mdd_horizons"] is not None:
        kw["mdd_horizons"] = tuple(kw["mdd_horizons"])
    try:
        return SimulationConfig(**kw)
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"simulation: {exc}", field="simulation") from exc


def _outputs(d) -> OutputConfig:
    d = d or {}
    if not isinstance(d, dict):
        raise ConfigError("outputs: expected an object", field="outputs")
    formats = tuple(d.get("formats", FORMATS))
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"outputs.formats: unsupported format {bad[0]!r}", field="outputs.formats")
    figures = {"figure1": True, "figure2": True, "figure3": True}
    figures.update(d.get("figures", {}))
    return OutputConfig(d.get("directory"), formats, figures)


def parse_config(data: dict, source=None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    unknown = set(data) - {"problem", "simulation", "outputs", "description"}
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"{name}: unknown top-level section", field=name)
    return ExperimentConfig(
        _problem(_need(data, "problem", "config")),
        _simulation(data.get("simulation")),
        _outputs(data.get("outputs")),
        source,
    )


def loads_config(text: str, source=None) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        where = f"{source}:" if source else "line "
        raise ConfigError(f"{where}{exc.lineno}:{exc.colno}: {exc.msg}", line=exc.lineno) from exc
    return parse_config(data, source)


def load_config(path) -> ExperimentConfig:
    """Read an experiment file; I/O problems surface as :class:`OSError`."""
    path = Path(path)
    return loads_config(path.read_text(encoding="utf-8"), str(path))


def bundled_config(name: str = "paper.json") -> ExperimentConfig:
    """Configuration shipped with the package (``paper.json`` holds the two-checkpoint example)."""
    text = resources.files("mtsmv.configs").joinpath(name).read_text(encoding="utf-8")
    return loads_config(text, f"<bundled {name}>")
