import hashlib, json
from pathlib import Path
from typing import Any, Optional

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from decorators import logger, timeit_log
from module.schema_json import ExperimentSpec, SystemConfig

# ------------- ENVIRONMENT ---------------------------------
load_dotenv()

class Settings(BaseSettings):
    """Process-level defaults; experiment files and CLI flags take precedence."""
    model_config = SettingsConfigDict(env_prefix="CFWPT_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    workers: int = 1
    out_dir: str = "static/runs"

class ConfigError(ValueError):
    def __init__(self, source: str, problems: list[str]):
        self.source = source
        self.problems = problems
        listing = "\n".join(f"  - {p}" for p in problems)
        super().__init__(f"invalid config {source}:\n{listing}")

def _describe(err: ValidationError) -> list[str]:
    problems = []
    for item in err.errors():
        where = ".".join(str(part) for part in item["loc"]) or "<root>"
        problems.append(f"{where}: {item['msg']}")
    return problems

# ------------- PARSING -------------------------------------
@timeit_log
def parse_config(path: str | Path, settings: Optional[Settings] = None) -> ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), ["file not found"])

    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(str(path), [f"{where}: {getattr(e, 'problem', e)}"]) from e

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), [f"<root>: expected a mapping, got {type(data).__name__}"])

    settings = settings or Settings()
    data.setdefault("workers", settings.workers)
    data.setdefault("out_dir", settings.out_dir)
    spec = spec_from_mapping(data, source=str(path))
    logger.info(f"Loaded config {path} ({len(spec.points())} sweep point(s), {spec.intervals} intervals)")
    return spec

def spec_from_mapping(data: dict[str, Any], source: str = "<mapping>") -> ExperimentSpec:
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigError(source, _describe(e)) from e

def apply_overrides(spec: ExperimentSpec, **overrides: Any) -> ExperimentSpec:
    """CLI flags on top of the file: seed, intervals, out_dir, workers, topologies."""
    data = spec.model_dump()
    seed = overrides.pop("seed", None)
    if seed is not None:
        data["system"]["seed"] = seed
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return spec_from_mapping(data, source="<command line>")

def config_hash(config: SystemConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

def deployment_hash(config: SystemConfig) -> str:
    """config_hash with the seed zeroed; a stored deployment may be replayed under fresh fading."""
    return config_hash(config.model_copy(update={"seed": 0}))
