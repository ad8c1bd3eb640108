"""Built-in scenarios."""

import math

from ..errors import ConfigError
from .config import config_from_json

# Ten-state social graph: four SCCs {0,1,2}, {3,4,5}, {6,7}, {8,9} chained
# downstream, self-loops added on load. Sensors observe 0, 3, 6 and 8, one
# state per SCC.
FIG2_EDGES = [
    (0, 1), (1, 2), (2, 0),
    (3, 4), (4, 5), (5, 3),
    (6, 7), (7, 6),
    (8, 9), (9, 8),
    (2, 3), (1, 4), (5, 6), (4, 9), (7, 8),
]


def paper_fig2(seed=0, steps=200, replications=1, attacks=True):
    obj = {
        "name": "paper-fig2",
        "system": {
            "graph": {"n_nodes": 10, "edges": [list(e) for e in FIG2_EDGES]},
            "target_rho": 1.1,
            "q_scale": 0.06,
        },
        "sensors": {
            "assignments": [0, 3, 6, 8],
            "r": 0.06,
            "network": "cycle",
            "weights": "random",
        },
        "gain": {"c_floor": 0.2, "budget": 20_000, "rho_target": 0.97},
        "detector": {"window": 12, "fars": [0.05, 0.35], "variance_method": "auto"},
        "run": {"steps": steps, "seed": seed, "replications": replications},
        # sensors are 0-based: the N(0, 0.8) attack hits sensor 0 from k = 40,
        # the N(0.2, 0.3) attack hits sensor 2 from k = 60 (second argument is
        # the variance)
        "attacks": [
            {"sensor": 0, "start": 40, "end": None, "mean": 0.0, "std": math.sqrt(0.8)},
            {"sensor": 2, "start": 60, "end": None, "mean": 0.2, "std": math.sqrt(0.3)},
        ] if attacks else [],
    }
    return config_from_json(obj)


PRESETS = {"paper-fig2": paper_fig2}


def get_preset(name, **kwargs):
    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
