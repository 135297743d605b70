"""Flat dotted-key configuration files and experiment assembly.

A config file is lines of ``key = value`` with ``#`` comments; one file
fully determines a run.  Every key consulted while assembling a run is
recorded with its final (possibly defaulted) value, and that resolved
mapping is stamped into all output artifacts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .bandits import Policy
from .embeddings import ALS, BPR, MfGrid
from .errors import ConfigError
from .ingest import CsvSchema, SplitPlan
from .state import STATE_KINDS

_logger = logging.getLogger(__name__)


class Config:
    """Raw key/value store that remembers every resolution it served."""

    def __init__(self, values: dict[str, str], source: str = "<memory>"):
        self.values = dict(values)
        self.source = source
        self.resolved: dict[str, str] = {}

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        path = Path(path)
        values: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, _, value = line.partition("=")
                values[key.strip()] = value.strip()
        return cls(values, str(path))

    def _record(self, key: str, value) -> None:
        self.resolved[key] = "" if value is None else str(value)

    def get(self, key: str, default: str | None = None) -> str | None:
        value = self.values.get(key, default)
        self._record(key, value)
        return value

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return self.get(key)

    def get_int(self, key: str, default: int) -> int:
        raw = self.values.get(key)
        if raw is None:
            self._record(key, default)
            return default
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{self.source}: key {key!r} is not an integer: {raw!r}") from None
        self._record(key, value)
        return value

    def get_float(self, key: str, default: float) -> float:
        raw = self.values.get(key)
        if raw is None:
            self._record(key, default)
            return default
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"{self.source}: key {key!r} is not a number: {raw!r}") from None
        self._record(key, value)
        return value

    def get_bool(self, key: str, default: bool) -> bool:
        raw = self.values.get(key)
        if raw is None:
            self._record(key, str(default).lower())
            return default
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "1", "on"):
            value = True
        elif lowered in ("false", "no", "0", "off"):
            value = False
        else:
            raise ConfigError(f"{self.source}: key {key!r} is not a boolean: {raw!r}")
        self._record(key, str(value).lower())
        return value

    def get_list(self, key: str, default: str) -> list[str]:
        raw = self.values.get(key, default)
        self._record(key, raw)
        return [part.strip() for part in raw.split(",") if part.strip()]

    def get_floats(self, key: str, default: str) -> list[float]:
        try:
            return [float(v) for v in self.get_list(key, default)]
        except ValueError as e:
            raise ConfigError(f"{self.source}: key {key!r}: {e}") from None

    def get_ints(self, key: str, default: str) -> list[int]:
        try:
            return [int(v) for v in self.get_list(key, default)]
        except ValueError as e:
            raise ConfigError(f"{self.source}: key {key!r}: {e}") from None


@dataclass
class ExperimentConfig:
    """Everything one run needs, with the resolved raw mapping for stamps."""

    dataset: str
    data_path: str
    schema: CsvSchema
    plan: SplitPlan
    mf_model: str
    mf_grid: MfGrid | None
    mf_params: dict
    mf_seed: int
    mf_snapshot: str | None
    conf_weight: float
    state_kind: str
    state_h: int
    policy: Policy
    lambda_ridge: float
    max_arms: int
    neg_samples: int
    k: int
    exclude_seen: bool
    out_dir: str | None
    append_ledger: bool = True
    raw: dict = field(default_factory=dict)

    def stamp(self) -> dict:
        return dict(self.raw)


def _column(value: str | None):
    if value is None or value == "" or value.lower() == "none":
        return None
    if value.lstrip("-").isdigit():
        return int(value)
    return value


def load_schema(cfg: Config) -> CsvSchema:
    # a raw tab cannot survive the line stripping, so accept the escape
    delimiter = cfg.get("ingest.delimiter", ",")
    if delimiter in ("\\t", "tab"):
        delimiter = "\t"
    return CsvSchema(
        user_col=_column(cfg.get("ingest.user_col", "user_id")),
        item_col=_column(cfg.get("ingest.item_col", "item_id")),
        feedback_col=_column(cfg.get("ingest.feedback_col", "rating")),
        ts_col=_column(cfg.get("ingest.ts_col", "timestamp")),
        delimiter=delimiter,
        header=cfg.get_bool("ingest.header", True),
    )


def load_plan(cfg: Config) -> SplitPlan:
    return SplitPlan(
        warm_fraction=cfg.get_float("split.warm_fraction", 0.5),
        valid_fraction=cfg.get_float("split.valid_fraction", 0.1),
        n_windows=cfg.get_int("eval.n_windows", 10),
    )


def load_grid(cfg: Config, model: str) -> MfGrid:
    base = MfGrid.defaults(model)
    return MfGrid(
        d_values=tuple(cfg.get_ints("mf.grid.d", ",".join(map(str, base.d_values)))),
        lr_values=tuple(cfg.get_floats("mf.grid.lr", ",".join(map(str, base.lr_values)))),
        reg_values=tuple(cfg.get_floats("mf.grid.reg", ",".join(map(str, base.reg_values)))),
        epoch_values=tuple(cfg.get_ints("mf.grid.epochs", ",".join(map(str, base.epoch_values)))),
    )


def load_policy(cfg: Config, seed_override: int | None = None) -> Policy:
    kind = cfg.get("bandit.policy", "linucb")
    seed = cfg.get_int("bandit.seed", 0)
    if seed_override is not None:
        seed = seed_override
        cfg._record("bandit.seed", seed)
    try:
        return Policy(
            kind=kind,
            alpha=cfg.get_float("bandit.alpha", 0.5),
            epsilon=cfg.get_float("bandit.epsilon", 0.1),
            v=cfg.get_float("bandit.v", 0.5),
            rng_seed=seed,
        )
    except ValueError as e:
        raise ConfigError(f"{cfg.source}: {e}") from None


def build_experiment(cfg: Config, *, out_override: str | None = None,
                     seed_override: int | None = None) -> ExperimentConfig:
    """Assemble and validate a full run configuration."""
    data_path = cfg.require("data.path")
    if not Path(data_path).exists():
        raise ConfigError(f"{cfg.source}: data.path does not exist: {data_path}")
    dataset = cfg.get("data.name", Path(data_path).stem)

    model = cfg.get("mf.model", ALS)
    if model not in (ALS, BPR):
        raise ConfigError(f"{cfg.source}: mf.model must be als or bpr, got {model!r}")
    mf_seed = cfg.get_int("mf.seed", 0)
    if seed_override is not None:
        mf_seed = seed_override
        cfg._record("mf.seed", mf_seed)
    use_grid = cfg.get_bool("mf.grid", False)
    grid = load_grid(cfg, model) if use_grid else None
    mf_params = {
        "d": cfg.get_int("mf.d", 16),
        "reg": cfg.get_float("mf.reg", 0.01),
        "epochs": cfg.get_int("mf.epochs", 15),
    }
    if model == BPR:
        mf_params["lr"] = cfg.get_float("mf.lr", 0.01)
        mf_params["epochs"] = cfg.get_int("mf.epochs", 100)
    snapshot = cfg.get("mf.snapshot", None) or None
    if snapshot and not Path(snapshot).exists():
        raise ConfigError(f"{cfg.source}: mf.snapshot does not exist: {snapshot}")

    state_kind = cfg.get("state.kind", "user")
    if state_kind not in STATE_KINDS:
        raise ConfigError(f"{cfg.source}: state.kind must be one of {STATE_KINDS}, got {state_kind!r}")

    out_dir = out_override or cfg.get("out.dir", "out")
    cfg._record("out.dir", out_dir)

    return ExperimentConfig(
        dataset=dataset,
        data_path=data_path,
        schema=load_schema(cfg),
        plan=load_plan(cfg),
        mf_model=model,
        mf_grid=grid,
        mf_params=mf_params,
        mf_seed=mf_seed,
        mf_snapshot=snapshot,
        conf_weight=cfg.get_float("als.conf_weight", 40.0),
        state_kind=state_kind,
        state_h=cfg.get_int("state.h", 5),
        policy=load_policy(cfg, seed_override),
        lambda_ridge=cfg.get_float("bandit.lambda", 1.0),
        max_arms=cfg.get_int("bandit.max_arms", 0),
        neg_samples=cfg.get_int("bandit.neg_samples", 0),
        k=cfg.get_int("eval.k", 20),
        exclude_seen=cfg.get_bool("eval.exclude_seen", True),
        out_dir=out_dir,
        raw=dict(cfg.resolved),
    )
