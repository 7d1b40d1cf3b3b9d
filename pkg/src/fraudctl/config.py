"""YAML run configuration with strict keys and line-numbered diagnostics.

Layout (every section optional)::

    seed: 0                 # shorthand for experiment.seeds: [0]
    output_dir: out
    log_level: INFO
    transaction_log: true
    env: {...}              # EnvConfig fields
    costs: {...}            # CostParams fields
    experiment: {...}       # ExperimentPlan scalars, seeds, lambda_grid
    policies:
      - {name: naive, kind: naive, params: {}}
    oracle: {...}           # OracleSettings fields
"""
from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .domain import CostParams
from .env import EnvConfig
from .harness import ConfigError, ExperimentPlan, PolicySpec
from .inference import EnvRegressor
from .policies import POLICY_KINDS

OUTPUT_DIR_ENV = "FRAUDCTL_OUTPUT_DIR"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class ConfigFileError(ConfigError):
    """Invalid configuration file; ``line`` is 1-based when known."""

    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.message = message
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class OracleSettings:
    n_batches: int = 1000
    batch_size: int = 8
    max_brute_force: int = 8
    n_mdps: int = 20
    mdp_batch_size: int = 1
    tol: float = 1e-9
    inject_tie_break_fault: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_batches < 1 or self.n_mdps < 1:
            raise ValueError("n_batches and n_mdps must be >= 1")
        if self.batch_size < 1 or self.mdp_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True)
class RunConfig:
    plan: ExperimentPlan = field(default_factory=ExperimentPlan)
    oracle: OracleSettings = field(default_factory=OracleSettings)
    output_dir: str = "fraudctl-out"
    log_level: str = "INFO"
    transaction_log: bool = True
    source: str = "<defaults>"
    sha256: str = ""

    @property
    def seeds(self) -> tuple:
        return self.plan.seeds

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)


# -- node helpers -------------------------------------------------------------

def _line(node) -> int:
    return node.start_mark.line + 1


def _plain(node, source):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    except yaml.YAMLError as exc:
        raise ConfigFileError(str(exc), source, _line(node)) from None


def _mapping(node, source, what) -> dict:
    """Key -> (key node, value node); rejects duplicates and non-string keys."""
    if node is None:
        return {}
    if isinstance(node, yaml.ScalarNode) and node.tag == "tag:yaml.org,2002:null":
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigFileError(f"{what} must be a mapping", source, _line(node))
    out = {}
    for k, v in node.value:
        key = _plain(k, source)
        if not isinstance(key, str):
            raise ConfigFileError(f"{what}: keys must be strings, got {key!r}", source, _line(k))
        if key in out:
            raise ConfigFileError(f"{what}: duplicate key {key!r}", source, _line(k))
        out[key] = (k, v)
    return out


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _coerce(value, default, name, node, source):
    """Check ``value`` against the type of the field's default."""
    where = (source, _line(node))
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigFileError(f"{name}: expected true/false, got {value!r}", *where)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigFileError(f"{name}: expected an integer, got {value!r}", *where)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigFileError(f"{name}: expected a number, got {value!r}", *where)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigFileError(f"{name}: expected a string, got {value!r}", *where)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigFileError(f"{name}: expected a list, got {value!r}", *where)
        return _tuplify(value)
    return value


def _dataclass_section(cls, node, source, section, skip=()):
    entries = _mapping(node, source, section)
    defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)
                if f.name not in skip}
    kwargs = {}
    for key, (knode, vnode) in entries.items():
        if key not in defaults:
            allowed = ", ".join(sorted(defaults))
            raise ConfigFileError(f"{section}: unknown key {key!r} (allowed: {allowed})",
                                  source, _line(knode))
        kwargs[key] = _coerce(_plain(vnode, source), defaults[key], f"{section}.{key}",
                              vnode, source)
    try:
        return cls(**kwargs), entries
    except (TypeError, ValueError) as exc:
        line = _line(node) if node is not None else None
        raise ConfigFileError(f"{section}: {exc}", source, line) from None


def _key_line(node, key):
    for knode, _ in getattr(node, "value", ()):
        if getattr(knode, "value", None) == key:
            return _line(knode)
    return _line(node)


def _policy_params(kind, params, pnode, source, name):
    cls = POLICY_KINDS[kind]
    allowed = set(cls._get_param_names())
    for key in params:
        if key not in allowed:
            raise ConfigFileError(f"policy {name!r}: unknown parameter {key!r} for kind {kind!r}",
                                  source, _key_line(pnode, key))
    for key in ("cei", "fei"):
        value = params.get(key)
        if isinstance(value, dict):
            bad = set(value) - set(EnvRegressor._get_param_names())
            if bad:
                raise ConfigFileError(f"policy {name!r}: unknown {key} parameter(s) {sorted(bad)}",
                                      source, _line(pnode))
            if {"horizon", "rate_lead"} & set(value):
                raise ConfigFileError(f"policy {name!r}: {key} horizon/rate_lead are set by the "
                                      "policy", source, _line(pnode))
        elif value is not None and not (key == "cei" and value == "mature"):
            raise ConfigFileError(f"policy {name!r}: {key} must be a mapping"
                                  + (" or 'mature'" if key == "cei" else ""),
                                  source, _line(pnode))
    try:
        cls(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(f"policy {name!r}: {exc}", source, _line(pnode)) from None
    return params


def _policies(node, source):
    if not isinstance(node, yaml.SequenceNode):
        raise ConfigFileError("policies must be a list", source, _line(node))
    specs = []
    for item in node.value:
        entries = _mapping(item, source, "policy")
        unknown = set(entries) - {"name", "kind", "params"}
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigFileError(f"policy: unknown key {key!r} (allowed: kind, name, params)",
                                  source, _line(entries[key][0]))
        if "kind" not in entries:
            raise ConfigFileError("policy: missing 'kind'", source, _line(item))
        kind = _plain(entries["kind"][1], source)
        if kind not in POLICY_KINDS:
            raise ConfigFileError(f"policy: unknown kind {kind!r} (allowed: "
                                  f"{', '.join(sorted(POLICY_KINDS))})",
                                  source, _line(entries["kind"][1]))
        name = _plain(entries["name"][1], source) if "name" in entries else kind
        if not isinstance(name, str):
            raise ConfigFileError("policy: name must be a string", source,
                                  _line(entries["name"][1]))
        pnode = entries["params"][1] if "params" in entries else item
        params = _plain(pnode, source) if "params" in entries else {}
        if params is None:
            params = {}
        if not isinstance(params, dict):
            raise ConfigFileError(f"policy {name!r}: params must be a mapping", source,
                                  _line(pnode))
        specs.append(PolicySpec(name, kind, _policy_params(kind, params, pnode, source, name)))
    return tuple(specs)


TOP_LEVEL = ("seed", "output_dir", "log_level", "transaction_log", "env", "costs",
             "experiment", "policies", "oracle")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate configuration text; raises :class:`ConfigFileError`."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigFileError(f"YAML syntax error: {exc.problem}", source, line) from None
    except yaml.YAMLError as exc:
        raise ConfigFileError(f"YAML error: {exc}", source) from None
    top = _mapping(root, source, "config")
    for key, (knode, _) in top.items():
        if key not in TOP_LEVEL:
            raise ConfigFileError(f"unknown top-level key {key!r} (allowed: "
                                  f"{', '.join(TOP_LEVEL)})", source, _line(knode))

    def node(key):
        return top[key][1] if key in top else None

    env, _ = _dataclass_section(EnvConfig, node("env"), source, "env", skip=("seed",))
    costs, _ = _dataclass_section(CostParams, node("costs"), source, "costs")
    oracle, _ = _dataclass_section(OracleSettings, node("oracle"), source, "oracle")
    plan_fields = ("env", "costs", "policies")
    plan_base, exp_entries = _dataclass_section(ExperimentPlan, node("experiment"), source,
                                                "experiment", skip=plan_fields)
    if "seeds" in exp_entries:
        seeds = plan_base.seeds
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigFileError("experiment.seeds must be integers", source,
                                  _line(exp_entries["seeds"][1]))
    policies = _policies(node("policies"), source) if "policies" in top else plan_base.policies

    run = RunConfig()
    scalars = {}
    for key in ("output_dir", "log_level", "transaction_log", "seed"):
        if key in top:
            default = 0 if key == "seed" else getattr(run, key)
            scalars[key] = _coerce(_plain(node(key), source), default, key, node(key), source)
    if "seed" in scalars:
        if "seeds" in exp_entries:
            raise ConfigFileError("give either top-level 'seed' or 'experiment.seeds', not both",
                                  source, _line(top["seed"][0]))
        plan_base = dataclasses.replace(plan_base, seeds=(scalars.pop("seed"),))
    if scalars.get("log_level", "INFO").upper() not in LOG_LEVELS:
        raise ConfigFileError(f"log_level must be one of {', '.join(LOG_LEVELS)}", source,
                              _line(node("log_level")))

    plan = dataclasses.replace(plan_base, env=env, costs=costs, policies=policies)
    try:
        plan.validate()
    except ConfigError as exc:
        line = _line(node("experiment")) if "experiment" in top else None
        raise ConfigFileError(str(exc), source, line) from None
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return RunConfig(plan=plan, oracle=oracle, source=source, sha256=digest, **scalars)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigFileError("config file not found", str(path)) from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigFileError(f"cannot read config: {exc}", str(path)) from None
    return parse_config(text, str(path))
