"""Scenario configuration: JSON <-> dataclasses, with validation."""

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

from ..errors import ConfigError
from ..netgraph import Digraph


@dataclass
class SystemBlock:
    graph: dict
    target_rho: float = 1.1
    q_scale: float = 0.06
    q: Optional[list] = None        # full covariance overrides q_scale
    a: Optional[list] = None        # explicit system matrix skips the random draw


@dataclass
class SensorsBlock:
    assignments: list
    r: object = 0.06                # scalar or one value per sensor
    network: object = "cycle"       # "cycle" or a graph dict
    weights: str = "uniform"        # or "random": draws in (0, 1] normalised per row


@dataclass
class GainBlock:
    c_floor: float = 0.2
    budget: int = 20_000
    seed: Optional[int] = None      # defaults to run.seed
    rho_target: float = 0.99
    file: Optional[str] = None


@dataclass
class DetectorBlock:
    window: int = 12
    fars: list = field(default_factory=lambda: [0.05, 0.35])
    variance_method: str = "auto"


@dataclass
class RunBlock:
    steps: int = 200
    seed: int = 0
    replications: int = 1
    output_dir: Optional[str] = None
    x0_scale: float = 1.0


@dataclass
class ScenarioConfig:
    system: SystemBlock
    sensors: SensorsBlock
    gain: GainBlock = field(default_factory=GainBlock)
    detector: DetectorBlock = field(default_factory=DetectorBlock)
    run: RunBlock = field(default_factory=RunBlock)
    attacks: list = field(default_factory=list)
    name: str = "custom"

    @property
    def n_states(self):
        return int(self.system.graph["n_nodes"])

    @property
    def n_sensors(self):
        return len(self.sensors.assignments)

    def social_graph(self):
        return Digraph.from_json(self.system.graph).with_self_loops()

    def sensor_graph(self):
        net = self.sensors.network
        if net == "cycle":
            return Digraph.cycle(self.n_sensors)
        if isinstance(net, dict):
            return Digraph.from_json(net)
        raise ConfigError(f"unknown sensor network {net!r}")

    def to_json(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def validate(self):
        n, n_sensors = self.n_states, self.n_sensors
        if n < 1 or n_sensors < 1:
            raise ConfigError("need at least one state and one sensor")
        for s in self.sensors.assignments:
            if not 0 <= int(s) < n:
                raise ConfigError(f"sensor assignment {s} out of range [0, {n})")
        for u, v in self.system.graph.get("edges", []):
            if not (0 <= u < n and 0 <= v < n):
                raise ConfigError(f"social edge {(u, v)} out of range")
        if isinstance(self.sensors.r, list) and len(self.sensors.r) != n_sensors:
            raise ConfigError("sensors.r must be a scalar or one value per sensor")
        if isinstance(self.sensors.network, dict) and int(self.sensors.network["n_nodes"]) != n_sensors:
            raise ConfigError("sensor network size differs from number of sensors")
        if self.sensors.weights not in ("random", "uniform"):
            raise ConfigError("sensors.weights must be 'random' or 'uniform'")
        det = self.detector
        if int(det.window) < 1:
            raise ConfigError("detector.window must be >= 1")
        if not det.fars or any(not 0 < float(p) < 1 for p in det.fars):
            raise ConfigError("every FAR must lie in (0, 1)")
        if det.variance_method not in ("auto", "paper-bound", "lyapunov-exact", "residual-exact"):
            raise ConfigError(f"unknown variance_method {det.variance_method!r}")
        if int(self.run.steps) < int(det.window):
            raise ConfigError(f"run.steps ({self.run.steps}) must be >= detector.window ({det.window})")
        if int(self.run.replications) < 1:
            raise ConfigError("run.replications must be >= 1")
        if self.system.target_rho <= 0:
            raise ConfigError("system.target_rho must be positive")
        for atk in self.attacks:
            if not 0 <= int(atk["sensor"]) < n_sensors:
                raise ConfigError(f"attack on unknown sensor {atk['sensor']}")
            if float(atk.get("std", 0.0)) < 0:
                raise ConfigError("attack std must be non-negative")
        return self


def _block(cls, obj, name):
    obj = dict(obj or {})
    known = set(cls.__dataclass_fields__)
    extra = set(obj) - known
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_json(obj, base_dir=None):
    if "system" not in obj or "sensors" not in obj:
        raise ConfigError("config needs 'system' and 'sensors' blocks")
    system = dict(obj["system"])
    graph = system.get("graph")
    if isinstance(graph, dict) and "edge_list" in graph:
        path = graph["edge_list"]
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        with open(path) as fh:
            g = Digraph.parse_edge_list(fh.read(), graph.get("n_nodes"))
        system["graph"] = g.to_json()
    cfg = ScenarioConfig(
        system=_block(SystemBlock, system, "system"),
        sensors=_block(SensorsBlock, obj["sensors"], "sensors"),
        gain=_block(GainBlock, obj.get("gain"), "gain"),
        detector=_block(DetectorBlock, obj.get("detector"), "detector"),
        run=_block(RunBlock, obj.get("run"), "run"),
        attacks=list(obj.get("attacks", [])),
        name=obj.get("name", "custom"),
    )
    return cfg.validate()


def load_config(path):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_json(obj, base_dir=os.path.dirname(os.path.abspath(path)))
