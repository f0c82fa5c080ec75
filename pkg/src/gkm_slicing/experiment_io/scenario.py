"""Scenario files: a versioned TOML schema for experiment setups.

A scenario pins the radio environment, the MVNO population, the resources
on auction and the mechanisms to compare. ``docs/scenario_format.md`` in
the repository describes every key; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..channel import PathLossParams
from ..exceptions import DomainError, ScenarioError

SCHEMA_VERSION = 1
MECHANISMS = ("gkm", "kelly", "equal", "optimal")
RESOURCE_NAMES = ("bandwidth", "power")
SWEEP_PARAMETERS = ("n_mvnos", "user_scale")


@dataclass(frozen=True)
class OutageConfig:
    enabled: bool = False
    epsilon: float = 0.1
    epsilon_grid: tuple[float, ...] = ()
    sigma_scale: float = 1.0

    @property
    def epsilons(self) -> tuple[float, ...]:
        if not self.enabled:
            return ()
        return self.epsilon_grid or (self.epsilon,)


@dataclass(frozen=True)
class AuctionSettings:
    max_iterations: int = 1000
    bid_tolerance: float = 1e-6
    b_init: float = 1.0
    market_power_rule: str = "observed"
    gradient: str = "fd"


@dataclass(frozen=True)
class SweepConfig:
    parameter: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class MvnoSpec:
    users: int
    distances_m: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SweepPoint:
    """One market layout inside a scenario (a sweep value, or the base layout)."""

    label: str
    mvnos: tuple[MvnoSpec, ...]
    epsilons: tuple[float | None, ...]

    @property
    def user_counts(self) -> tuple[int, ...]:
        return tuple(m.users for m in self.mvnos)


@dataclass(frozen=True)
class Scenario:
    name: str
    mvnos: tuple[MvnoSpec, ...]
    bandwidth_hz: float = 1e7
    max_power_dbm: float = 43.0
    noise_density_dbm_hz: float = -174.0
    cell_radius_m: float = 500.0
    exclusion_radius_m: float = 10.0
    fading: bool = False
    path_loss: PathLossParams = field(default_factory=PathLossParams)
    outage: OutageConfig = field(default_factory=OutageConfig)
    resources: tuple[str, ...] = ("bandwidth",)
    mechanisms: tuple[str, ...] = MECHANISMS
    auction: AuctionSettings = field(default_factory=AuctionSettings)
    sweep: SweepConfig | None = None
    seed: int = 0
    trials: int = 1
    description: str = ""
    schema_version: int = SCHEMA_VERSION

    @property
    def n_resources(self) -> int:
        return len(self.resources)

    def with_overrides(self, **changes: Any) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def points(self) -> list[SweepPoint]:
        eps: tuple[float | None, ...] = self.outage.epsilons or (None,)
        if self.sweep is None:
            return [SweepPoint("", self.mvnos, eps)]
        out = []
        for value in self.sweep.values:
            if self.sweep.parameter == "n_mvnos":
                n = int(value)
                mvnos = tuple(MvnoSpec(self.mvnos[i % len(self.mvnos)].users) for i in range(n))
                label = f"n_mvnos={n}"
            else:
                mvnos = tuple(MvnoSpec(max(1, round(m.users * value))) for m in self.mvnos)
                label = f"user_scale={value:g}"
            out.append(SweepPoint(label, mvnos, eps))
        return out

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["mvnos"] = [
            {"users": m.users, **({"distances_m": list(m.distances_m)} if m.distances_m else {})}
            for m in self.mvnos
        ]
        return d

    def fingerprint(self) -> str:
        """Stable hash of every setting that influences results."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# parsing


_TOP_KEYS = {
    "schema_version", "name", "description", "seed", "trials", "bandwidth_hz",
    "max_power_dbm", "noise_density_dbm_hz", "cell_radius_m", "exclusion_radius_m",
    "fading", "resources", "mechanisms", "path_loss", "outage", "mvnos", "auction", "sweep",
}
_PATH_LOSS_KEYS = {"d0", "exponent", "antenna_gain", "antenna_gain_db", "h_t", "h_r", "shadow_sigma_db"}
_OUTAGE_KEYS = {"enabled", "epsilon", "epsilon_grid", "sigma_scale"}
_AUCTION_KEYS = {"max_iterations", "bid_tolerance", "b_init", "market_power_rule", "gradient"}
_SWEEP_KEYS = {"parameter", "values"}
_MVNO_KEYS = {"users", "distances_m"}


class _Ctx:
    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.source = source

    def line_of(self, key: str) -> int | None:
        pattern = re.compile(rf"^\s*(\[+\s*)?{re.escape(key)}\s*(=|\])")
        for i, line in enumerate(self.lines, start=1):
            if pattern.match(line):
                return i
        return None

    def error(self, key: str, message: str) -> ScenarioError:
        line = self.line_of(key.split(".")[-1])
        where = f"{self.source}:{line}" if line else self.source
        return ScenarioError(f"{where}: {key}: {message}")


def _reject_unknown(table: dict, allowed: set[str], prefix: str, ctx: _Ctx) -> None:
    for key in table:
        if key not in allowed:
            full = f"{prefix}{key}"
            raise ctx.error(full, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _number(table: dict, key: str, default: float, ctx: _Ctx, prefix: str = "") -> float:
    value = table.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ctx.error(prefix + key, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ctx.error(prefix + key, "must be finite")
    return float(value)


def _integer(table: dict, key: str, default: int, ctx: _Ctx, prefix: str = "") -> int:
    value = table.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ctx.error(prefix + key, f"expected an integer, got {value!r}")
    return value


def _boolean(table: dict, key: str, default: bool, ctx: _Ctx, prefix: str = "") -> bool:
    value = table.get(key, default)
    if not isinstance(value, bool):
        raise ctx.error(prefix + key, f"expected true or false, got {value!r}")
    return value


def _string_list(table: dict, key: str, default: tuple[str, ...], allowed, ctx: _Ctx) -> tuple[str, ...]:
    value = table.get(key, list(default))
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ctx.error(key, "expected a list of strings")
    for v in value:
        if v not in allowed:
            raise ctx.error(key, f"unknown entry {v!r} (allowed: {', '.join(allowed)})")
    if len(set(value)) != len(value):
        raise ctx.error(key, "duplicate entries")
    if not value:
        raise ctx.error(key, "must not be empty")
    return tuple(value)


def _parse_path_loss(raw: dict, ctx: _Ctx) -> PathLossParams:
    _reject_unknown(raw, _PATH_LOSS_KEYS, "path_loss.", ctx)
    if "antenna_gain" in raw and "antenna_gain_db" in raw:
        raise ctx.error("path_loss.antenna_gain_db", "give antenna_gain or antenna_gain_db, not both")
    p = "path_loss."
    if "antenna_gain_db" in raw:
        gain = 10.0 ** (_number(raw, "antenna_gain_db", 0.0, ctx, p) / 10.0)
    else:
        gain = _number(raw, "antenna_gain", 1.0, ctx, p)
    try:
        return PathLossParams(
            d0=_number(raw, "d0", 100.0, ctx, p),
            exponent=_number(raw, "exponent", 3.5, ctx, p),
            antenna_gain=gain,
            h_t=_number(raw, "h_t", 1.0, ctx, p),
            h_r=_number(raw, "h_r", 1.0, ctx, p),
            shadow_sigma=_number(raw, "shadow_sigma_db", 0.0, ctx, p),
        )
    except DomainError as exc:
        raise ctx.error("path_loss", str(exc)) from None


def _parse_outage(raw: dict, ctx: _Ctx) -> OutageConfig:
    _reject_unknown(raw, _OUTAGE_KEYS, "outage.", ctx)
    p = "outage."
    eps = _number(raw, "epsilon", 0.1, ctx, p)
    grid_raw = raw.get("epsilon_grid", [])
    if not isinstance(grid_raw, list):
        raise ctx.error("outage.epsilon_grid", "expected a list of numbers")
    grid = tuple(_number({"v": v}, "v", 0.0, ctx, "outage.epsilon_grid.") for v in grid_raw)
    for e, key in [(eps, "outage.epsilon")] + [(g, "outage.epsilon_grid") for g in grid]:
        if not 0.0 <= e < 1.0:
            raise ctx.error(key, f"outage probability must lie in [0, 1), got {e}")
    if list(grid) != sorted(set(grid)):
        raise ctx.error("outage.epsilon_grid", "must be strictly increasing")
    scale = _number(raw, "sigma_scale", 1.0, ctx, p)
    if scale <= 0:
        raise ctx.error("outage.sigma_scale", "must be positive")
    return OutageConfig(_boolean(raw, "enabled", False, ctx, p), eps, grid, scale)


def _parse_auction(raw: dict, ctx: _Ctx) -> AuctionSettings:
    _reject_unknown(raw, _AUCTION_KEYS, "auction.", ctx)
    p = "auction."
    settings = AuctionSettings(
        max_iterations=_integer(raw, "max_iterations", 1000, ctx, p),
        bid_tolerance=_number(raw, "bid_tolerance", 1e-6, ctx, p),
        b_init=_number(raw, "b_init", 1.0, ctx, p),
        market_power_rule=raw.get("market_power_rule", "observed"),
        gradient=raw.get("gradient", "fd"),
    )
    if settings.max_iterations < 1:
        raise ctx.error("auction.max_iterations", "must be at least 1")
    if settings.bid_tolerance <= 0 or settings.b_init <= 0:
        raise ctx.error("auction", "bid_tolerance and b_init must be positive")
    if settings.market_power_rule not in ("observed", "inverse", "zero"):
        raise ctx.error("auction.market_power_rule", "must be observed, inverse or zero")
    if settings.gradient not in ("fd", "envelope"):
        raise ctx.error("auction.gradient", "must be fd or envelope")
    return settings


def _parse_mvnos(raw: Any, ctx: _Ctx) -> tuple[MvnoSpec, ...]:
    if not isinstance(raw, list) or not raw:
        raise ctx.error("mvnos", "need at least one [[mvnos]] entry")
    out = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ctx.error("mvnos", "each entry must be a table")
        _reject_unknown(entry, _MVNO_KEYS, f"mvnos[{i}].", ctx)
        users = _integer(entry, "users", 0, ctx, f"mvnos[{i}].")
        if users < 1:
            raise ctx.error(f"mvnos[{i}].users", "every MVNO needs at least one user")
        distances = entry.get("distances_m")
        if distances is not None:
            if not isinstance(distances, list) or len(distances) != users:
                raise ctx.error(f"mvnos[{i}].distances_m", "need one distance per user")
            distances = tuple(_number({"v": d}, "v", 0.0, ctx, f"mvnos[{i}].distances_m.") for d in distances)
            if any(d <= 0 for d in distances):
                raise ctx.error(f"mvnos[{i}].distances_m", "distances must be positive")
        out.append(MvnoSpec(users, distances))
    return tuple(out)


def _parse_sweep(raw: dict, ctx: _Ctx) -> SweepConfig:
    _reject_unknown(raw, _SWEEP_KEYS, "sweep.", ctx)
    param = raw.get("parameter")
    if param not in SWEEP_PARAMETERS:
        raise ctx.error("sweep.parameter", f"must be one of {', '.join(SWEEP_PARAMETERS)}")
    values = raw.get("values")
    if not isinstance(values, list) or not values:
        raise ctx.error("sweep.values", "need a non-empty list")
    vals = tuple(_number({"v": v}, "v", 0.0, ctx, "sweep.values.") for v in values)
    if any(v <= 0 for v in vals):
        raise ctx.error("sweep.values", "values must be positive")
    if param == "n_mvnos" and any(v < 2 or v != int(v) for v in vals):
        raise ctx.error("sweep.values", "MVNO counts must be integers >= 2")
    return SweepConfig(param, vals)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario text; every problem raises ScenarioError."""
    ctx = _Ctx(text, source)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    _reject_unknown(raw, _TOP_KEYS, "", ctx)
    version = _integer(raw, "schema_version", SCHEMA_VERSION, ctx)
    if version != SCHEMA_VERSION:
        raise ctx.error("schema_version", f"unsupported version {version} (this tool reads {SCHEMA_VERSION})")
    for section in ("path_loss", "outage", "auction", "sweep"):
        if section in raw and not isinstance(raw[section], dict):
            raise ctx.error(section, "expected a table")

    name = raw.get("name", Path(source).stem)
    if not isinstance(name, str) or not name:
        raise ctx.error("name", "expected a non-empty string")
    description = raw.get("description", "")
    if not isinstance(description, str):
        raise ctx.error("description", "expected a string")

    scenario = Scenario(
        name=name,
        description=description,
        mvnos=_parse_mvnos(raw.get("mvnos"), ctx),
        bandwidth_hz=_number(raw, "bandwidth_hz", 1e7, ctx),
        max_power_dbm=_number(raw, "max_power_dbm", 43.0, ctx),
        noise_density_dbm_hz=_number(raw, "noise_density_dbm_hz", -174.0, ctx),
        cell_radius_m=_number(raw, "cell_radius_m", 500.0, ctx),
        exclusion_radius_m=_number(raw, "exclusion_radius_m", 10.0, ctx),
        fading=_boolean(raw, "fading", False, ctx),
        path_loss=_parse_path_loss(raw.get("path_loss", {}), ctx),
        outage=_parse_outage(raw.get("outage", {}), ctx),
        resources=_string_list(raw, "resources", ("bandwidth",), RESOURCE_NAMES, ctx),
        mechanisms=_string_list(raw, "mechanisms", MECHANISMS, MECHANISMS, ctx),
        auction=_parse_auction(raw.get("auction", {}), ctx),
        sweep=_parse_sweep(raw["sweep"], ctx) if "sweep" in raw else None,
        seed=_integer(raw, "seed", 0, ctx),
        trials=_integer(raw, "trials", 1, ctx),
        schema_version=version,
    )
    validate_scenario(scenario, ctx)
    return scenario


def validate_scenario(s: Scenario, ctx: _Ctx | None = None) -> None:
    ctx = ctx or _Ctx("", s.name)
    if s.bandwidth_hz <= 0:
        raise ctx.error("bandwidth_hz", "must be positive")
    if s.cell_radius_m <= 0:
        raise ctx.error("cell_radius_m", "must be positive")
    if not 0 <= s.exclusion_radius_m < s.cell_radius_m:
        raise ctx.error("exclusion_radius_m", "must lie in [0, cell_radius_m)")
    if s.resources[0] != "bandwidth":
        raise ctx.error("resources", "bandwidth must be the first resource")
    if s.trials < 1:
        raise ctx.error("trials", "must be at least 1")
    if s.seed < 0:
        raise ctx.error("seed", "must be non-negative")
    if s.n_resources > 1 and s.outage.enabled:
        raise ctx.error("outage.enabled", "outage constraints apply to bandwidth-only scenarios")
    if s.n_resources > 1 and s.sweep is not None:
        raise ctx.error("sweep", "sweeps apply to bandwidth-only scenarios")
    if any(m.distances_m for m in s.mvnos) and s.sweep is not None:
        raise ctx.error("mvnos", "fixed user distances cannot be combined with a sweep")
    counts = [len(p.mvnos) for p in s.points()]
    if "gkm" in s.mechanisms or "kelly" in s.mechanisms:
        if min(counts) < 2:
            raise ctx.error("mvnos", "auctions need at least two MVNOs")


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, or a bundled preset when given a bare preset name."""
    p = Path(path)
    if not p.exists() and str(path) in list_presets():
        return load_preset(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario: {exc.strerror or exc}") from None
    return parse_scenario(text, str(path))


def _preset_dir():
    return importlib_resources.files("gkm_slicing") / "presets"


def list_presets() -> list[str]:
    return sorted(
        entry.name[:-5] for entry in _preset_dir().iterdir() if entry.name.endswith(".toml")
    )


def load_preset(name: str) -> Scenario:
    if name not in list_presets():
        raise ScenarioError(f"unknown preset {name!r} (available: {', '.join(list_presets())})")
    text = (_preset_dir() / f"{name}.toml").read_text(encoding="utf-8")
    return parse_scenario(text, f"preset:{name}")


def scenario_from_dict(d: dict[str, Any]) -> Scenario:
    """Inverse of ``Scenario.to_dict`` (used when re-reading JSON results)."""
    d = dict(d)
    d["mvnos"] = tuple(
        MvnoSpec(m["users"], tuple(m["distances_m"]) if m.get("distances_m") else None)
        for m in d["mvnos"]
    )
    d["path_loss"] = PathLossParams(**d["path_loss"])
    out = dict(d["outage"])
    out["epsilon_grid"] = tuple(out["epsilon_grid"])
    d["outage"] = OutageConfig(**out)
    d["auction"] = AuctionSettings(**d["auction"])
    if d.get("sweep") is not None:
        d["sweep"] = SweepConfig(d["sweep"]["parameter"], tuple(d["sweep"]["values"]))
    d["resources"] = tuple(d["resources"])
    d["mechanisms"] = tuple(d["mechanisms"])
    return Scenario(**d)
