"""Experiment configuration: in-code defaults, a JSON settings file, .env and CLI overrides."""
import copy
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, replace

from dotenv import load_dotenv

from core.clients import DomainSpec, LocalConfig, Task
from core.errors import ConfigInvalid, InvalidSpec
from core.server import ServerConfig, Strategy

logger = logging.getLogger(__name__)

SETTINGS_FILE = "experiment.json"

DEFAULTS = {
    "rounds": 40,
    "warmup_rounds": 5,
    "agg_frequencies": [2],
    "strategies": ["clustered", "fedavg_only"],
    "seeds": [0, 1, 2],
    "data_fractions": [1.0],
    "task": "regression",
    "test_count": 500,
    "backbone": {"input_dim": 16, "feature_dim": 32, "bias_scale": 0.5},
    "local": {
        "steps_per_round": None,
        "local_epochs": 5.0,
        "learning_rate": 0.05,
        "batch_size": 32,
        "fedprox_mu": 0.01,
    },
    # The last domain is the under-resourced one with the largest covariate shift.
    "domains": [
        {"domain_id": "domain_0", "sample_count": 2000, "shift": 0.0, "concept_shift": 0.2, "noise_std": 0.1},
        {"domain_id": "domain_1", "sample_count": 2000, "shift": 1.0, "concept_shift": 0.2, "noise_std": 0.1},
        {"domain_id": "domain_2", "sample_count": 2000, "shift": -1.0, "concept_shift": 0.2, "noise_std": 0.1},
        {"domain_id": "domain_3", "sample_count": 500, "shift": 2.5, "concept_shift": 0.6, "noise_std": 0.1},
    ],
    "output_dir": "results",
    "workers": 1,
    "debug_clustering": False,
}

ENV_OVERRIDES = {
    "FEDEX_OUTPUT_DIR": ("output_dir", str),
    "FEDEX_WORKERS": ("workers", int),
}


@dataclass(frozen=True)
class BackboneSpec:
    input_dim: int
    feature_dim: int
    bias_scale: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    server: ServerConfig
    domains: tuple
    backbone: BackboneSpec
    local: LocalConfig
    task: Task
    test_count: int
    strategies: tuple
    seeds: tuple
    data_fractions: tuple
    agg_frequencies: tuple
    output_dir: str = "results"
    workers: int = 1
    debug_clustering: bool = False

    def server_for(self, strategy, seed, T):
        return replace(self.server, strategy=Strategy(strategy), master_seed=int(seed), aggregation_frequency=int(T))


def _merge(base, update):
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def load_settings(path=None, overrides=None):
    """Defaults, then the JSON file, then .env / environment, then explicit overrides."""
    settings = copy.deepcopy(DEFAULTS)
    explicit = path is not None
    path = path or SETTINGS_FILE
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"{path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigInvalid(f"{path} must hold a JSON object")
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigInvalid(f"{path}: unknown settings {unknown}")
        _merge(settings, data)
        logger.debug("loaded settings from %s", path)
    elif explicit:
        raise ConfigInvalid(f"settings file {path} does not exist")

    load_dotenv()
    for var, (key, cast) in ENV_OVERRIDES.items():
        raw = os.getenv(var)
        if raw:
            try:
                settings[key] = cast(raw)
            except ValueError:
                raise ConfigInvalid(f"{var}={raw!r} is not a valid {key}")

    if overrides:
        _merge(settings, {k: v for k, v in overrides.items() if v is not None})
    return settings


def _shift_vector(shift, input_dim, domain_id):
    """A scalar s means s * ones / sqrt(d), a shift of magnitude |s| along the diagonal."""
    if isinstance(shift, (int, float)):
        return tuple(float(shift) / math.sqrt(input_dim) for _ in range(input_dim))
    if isinstance(shift, list) and len(shift) == input_dim:
        return tuple(float(s) for s in shift)
    raise ConfigInvalid(f"domains.{domain_id}.shift must be a number or a list of {input_dim} numbers")


def _as_list(settings, key):
    value = settings[key]
    return list(value) if isinstance(value, (list, tuple)) else [value]


def build_experiment_config(settings):
    try:
        task = Task(settings["task"])
    except ValueError:
        raise ConfigInvalid(f"task must be one of {[t.value for t in Task]}, got {settings['task']!r}")

    strategies = _as_list(settings, "strategies")
    known = [s.value for s in Strategy]
    for name in strategies:
        if name not in known:
            raise ConfigInvalid(f"strategies: unknown strategy {name!r}; choose from {known}")
    if not strategies:
        raise ConfigInvalid("strategies must not be empty")

    seeds = [int(s) for s in _as_list(settings, "seeds")]
    if not seeds:
        raise ConfigInvalid("seeds must hold at least one seed")
    if any(s < 0 for s in seeds):
        raise ConfigInvalid(f"seeds must be non-negative, got {seeds}")

    fractions = [float(f) for f in _as_list(settings, "data_fractions")]
    if not fractions or any(not 0.0 < f <= 1.0 for f in fractions):
        raise ConfigInvalid(f"data_fractions must lie in (0, 1], got {fractions}")

    rounds = int(settings["rounds"])
    frequencies = [int(t) for t in _as_list(settings, "agg_frequencies")]
    if not frequencies:
        raise ConfigInvalid("agg_frequencies must not be empty")
    for T in frequencies:
        if T < 1 or rounds % T != 0:
            raise ConfigInvalid(f"agg_frequencies: rounds ({rounds}) is not divisible by T={T}")

    b = settings["backbone"]
    backbone = BackboneSpec(int(b["input_dim"]), int(b["feature_dim"]), float(b.get("bias_scale", 0.5)))
    if backbone.input_dim < 1 or backbone.feature_dim < 1:
        raise ConfigInvalid("backbone dims must be >= 1")

    raw_domains = settings["domains"]
    if len(raw_domains) < 2:
        raise ConfigInvalid(f"domains: at least 2 domains are needed, got {len(raw_domains)}")
    try:
        domains = tuple(
            DomainSpec(
                domain_id=str(d.get("domain_id", f"domain_{i}")),
                sample_count=int(d["sample_count"]),
                input_dim=backbone.input_dim,
                shift=_shift_vector(d.get("shift", 0.0), backbone.input_dim, d.get("domain_id", i)),
                concept_shift=float(d.get("concept_shift", 0.0)),
                noise_std=float(d.get("noise_std", 0.0)),
            )
            for i, d in enumerate(raw_domains)
        )
        local = LocalConfig(**settings["local"])
    except (InvalidSpec, KeyError, TypeError) as e:
        raise ConfigInvalid(f"invalid domain or local settings: {e}")
    ids = [d.domain_id for d in domains]
    if len(set(ids)) != len(ids):
        raise ConfigInvalid(f"domains: duplicate domain ids {ids}")

    workers = int(settings["workers"])
    if workers < 1:
        raise ConfigInvalid(f"workers must be >= 1, got {workers}")

    server = ServerConfig(rounds=rounds, aggregation_frequency=frequencies[0],
                          strategy=Strategy(strategies[0]), warmup_rounds=int(settings["warmup_rounds"]),
                          master_seed=seeds[0])
    return ExperimentConfig(
        server=server,
        domains=domains,
        backbone=backbone,
        local=local,
        task=task,
        test_count=int(settings["test_count"]),
        strategies=tuple(strategies),
        seeds=tuple(seeds),
        data_fractions=tuple(fractions),
        agg_frequencies=tuple(frequencies),
        output_dir=str(settings["output_dir"]),
        workers=workers,
        debug_clustering=bool(settings["debug_clustering"]),
    )


def config_to_dict(cfg):
    """Everything except the experiment axes, in a JSON-ready form."""
    return {
        "rounds": cfg.server.rounds,
        "warmup_rounds": cfg.server.warmup_rounds,
        "task": cfg.task.value,
        "test_count": cfg.test_count,
        "backbone": asdict(cfg.backbone),
        "local": asdict(cfg.local),
        "domains": [asdict(d) for d in cfg.domains],
    }


def config_fingerprint(cfg):
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
