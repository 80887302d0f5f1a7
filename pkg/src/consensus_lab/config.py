"""Experiment configuration files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .faults import FaultError, FaultScript
from .graph import GraphError, graph_from_dict
from .simulator import Activation, ConfigError, SimConfig
from .weights import SCHEMES, SchemeError, WeightScheme

CONFIG_FORMAT_VERSION = "1.0"

_number = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": r"^-?\d+(/\d+)?$"}]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "consensus-lab experiment",
    "type": "object",
    "required": ["values", "rounds"],
    "oneOf": [{"required": ["graph"]}, {"required": ["graph_file"]}],
    "properties": {
        "format_version": {"type": "string", "pattern": r"^1\.\d+$"},
        "graph": {
            "type": "object",
            "required": ["n", "edges"],
            "properties": {
                "format_version": {"type": "string"},
                "n": {"type": "integer", "minimum": 2},
                "edges": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                },
            },
        },
        "graph_file": {"type": "string"},
        "values": {"type": "array", "items": _number, "minItems": 2},
        "rounds": {"type": "integer", "minimum": 1},
        "scheme": {"enum": list(SCHEMES)},
        "mode": {"enum": ["general", "ratio_running_sum"]},
        "seed": {"type": "integer", "minimum": 0},
        "activation": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["always_on", "random_subset", "explicit"]},
                "p": {"type": "number", "minimum": 0, "maximum": 1},
                "rounds": {"type": "array", "items": {"type": "object"}},
            },
        },
        "faults": {"type": "array", "items": {"type": "object", "required": ["kind", "node"]}},
        "faults_file": {"type": "string"},
        "k_atc": {"type": "integer", "minimum": 1},
        "k_conn": {"type": "integer", "minimum": 1},
        "tau": {"type": ["number", "null"], "minimum": 0},
        "arithmetic": {"enum": ["float", "rational"]},
        "output": {
            "type": "object",
            "properties": {
                "trace": {"type": "string"},
                "summary": {"type": "string"},
                "plot_data": {"type": "string"},
            },
        },
        "verbosity": {"enum": ["quiet", "normal", "verbose"]},
    },
    "additionalProperties": False,
}


class ExperimentConfigError(ValueError):
    """Config file failed schema or semantic validation."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class ExperimentConfig:
    sim: SimConfig
    output: dict = field(default_factory=dict)
    verbosity: str = "normal"


def schema_problems(data) -> list[str]:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def experiment_from_dict(data: dict, base_dir: Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a parsed config and build the simulation config.

    ``overrides`` replaces top-level keys before validation (CLI flags).
    """
    data = dict(data)
    for key, val in (overrides or {}).items():
        if val is not None:
            data[key] = val
    problems = schema_problems(data)
    if problems:
        raise ExperimentConfigError(problems)
    base_dir = base_dir or Path.cwd()
    try:
        if "graph_file" in data:
            graph_data = json.loads((base_dir / data["graph_file"]).read_text())
        else:
            graph_data = data["graph"]
        graph = graph_from_dict(graph_data)
        if "faults_file" in data:
            faults = FaultScript.from_list(json.loads((base_dir / data["faults_file"]).read_text()))
        else:
            faults = FaultScript.from_list(data.get("faults", []))
        sim = SimConfig(
            graph=graph,
            values=tuple(data["values"]),
            rounds=data["rounds"],
            scheme=WeightScheme(data.get("scheme", "ratio_consensus")),
            mode=data.get("mode", "general"),
            seed=data.get("seed", 0),
            activation=Activation.from_dict(data.get("activation", {"kind": "always_on"})),
            faults=faults,
            k_atc=data.get("k_atc", 25),
            k_conn=data.get("k_conn", 10),
            tau=data.get("tau"),
            arithmetic=data.get("arithmetic", "float"),
        )
    except (OSError, json.JSONDecodeError, GraphError, FaultError, ConfigError, SchemeError, KeyError) as exc:
        raise ExperimentConfigError([str(exc)]) from exc
    return ExperimentConfig(sim, dict(data.get("output", {})), data.get("verbosity", "normal"))


def load_experiment(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ExperimentConfigError([f"cannot read {path}: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ExperimentConfigError(["config must be a JSON object"])
    return experiment_from_dict(data, path.parent, overrides)
