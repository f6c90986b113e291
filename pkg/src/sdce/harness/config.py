"""Experiment configuration files.

A file is plain ``key = value`` lines with ``#`` comments and optional
``[section]`` headers. Keys outside any section are resolved by name.
Unknown keys and out-of-range values are errors; missing keys keep the
baseline defaults below (the full-size market, N = 1024 and M = 16).
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from sdce.market import ElasticitySchedule
from sdce.pmir import ConfigError, PmirConfig, Regime
from sdce.welfare import PolicyConfig, PolicyConfigError, PolicyKind

ROOT = "__root__"

# baseline calibration; PmirConfig itself defaults to the desk-scale market
BASELINE = dict(n_producers=1024, n_trainers=16, horizon=10, discount=0.99, learning_rate=3e-4, beta_shape=0.10)
DESK = dict(n_producers=8, n_trainers=2)

SECTIONS = {
    "market": ("n_producers", "n_trainers", "human_share", "forced_rho", "initial_price", "royalty",
               "quality_price", "labor", "capital", "revenue_weight", "grid_levels", "grid_cap",
               "grid_unit", "max_cells", "supply_adjustment"),
    "pmir": ("horizon", "discount", "learning_rate", "beta_shape", "epsilon_explore", "seed", "stream",
             "rounds_per_generation", "temperature_start", "temperature_end", "buffer_capacity",
             "batch_size", "price_updates", "target_mean", "target_std", "drift_shrink", "flow_time",
             "flow_step", "w2_mode", "probe_samples"),
    "schedule": tuple(f.name for f in dataclasses.fields(ElasticitySchedule)),
    "policy": tuple(f.name for f in dataclasses.fields(PolicyConfig)),
    "sweep": ("rho_values", "policies", "regimes", "seeds"),
    "output": ("directory", "format"),
}
FORMATS = ("csv", "jsonl", "text")


def default_seeds() -> list[int]:
    text = resources.files("sdce").joinpath("data/seeds.txt").read_text()
    return [int(x) for x in (ln.split("#")[0].strip() for ln in text.splitlines()) if x]


@dataclass(frozen=True)
class SweepAxes:
    rho_values: tuple = (None,)  # None = endogenous contamination
    policies: tuple = (PolicyKind.NONE,)
    regimes: tuple = (Regime.PMIR,)
    seeds: tuple = ()

    def __post_init__(self):
        if not (self.rho_values and self.policies and self.regimes):
            raise ConfigError("sweep axes must be nonempty")
        if not self.seeds:
            object.__setattr__(self, "seeds", tuple(default_seeds()))


@dataclass(frozen=True)
class ExperimentConfig:
    pmir: PmirConfig = field(default_factory=lambda: PmirConfig(**BASELINE))
    schedule: ElasticitySchedule = field(default_factory=ElasticitySchedule)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    sweep: SweepAxes = field(default_factory=SweepAxes)
    output_dir: str = "sdce-out"
    output_format: str = "csv"
    explicit: frozenset = frozenset()  # keys set in the file; excluded from the fingerprint

    def at_scale(self, scale: str) -> "ExperimentConfig":
        """Desk scale shrinks N and M unless the file set them explicitly."""
        if scale == "baseline":
            return self
        if scale != "desk":
            raise ConfigError(f"unknown scale {scale!r}")
        kw = {k: v for k, v in DESK.items() if k not in self.explicit}
        return dataclasses.replace(self, pmir=dataclasses.replace(self.pmir, **kw))

    def canonical(self) -> dict:
        return {
            "pmir": _plain(dataclasses.asdict(self.pmir)),
            "schedule": _plain(dataclasses.asdict(self.schedule)),
            "policy": _plain(dataclasses.asdict(self.policy)),
            "sweep": _plain(dataclasses.asdict(self.sweep)),
        }

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.canonical())


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, PolicyKind) or isinstance(obj, Regime):
        return obj.value
    return obj


def fingerprint(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _section_of(key: str) -> Optional[str]:
    for sec, keys in SECTIONS.items():
        if key in keys:
            return sec
    return None


def _field_types(cls) -> dict:
    return typing.get_type_hints(cls)


_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _convert(raw: str, typ, key: str, line: int):
    raw = raw.strip()
    try:
        if typ is bool:
            return _BOOL[raw.lower()]
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ == Optional[float]:
            return None if raw.lower() in ("none", "endogenous", "") else float(raw)
        return raw
    except (ValueError, KeyError):
        raise ConfigError(f"line {line}: cannot read {key} = {raw!r}") from None


def _split_list(raw: str) -> list[str]:
    return [x for x in (p.strip() for p in raw.replace(",", " ").split()) if x]


def _line_numbers(text: str) -> dict:
    """(section, key) -> 1-based line number of its assignment."""
    out, sec = {}, ROOT
    for i, ln in enumerate(text.splitlines(), 1):
        s = ln.split("#", 1)[0].strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s[1:-1].strip().lower()
        elif "=" in s:
            out[(sec, s.split("=", 1)[0].strip().lower())] = i
    return out


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       interpolation=None, delimiters=("=",), strict=True)
    try:
        # header lines are counted by configparser, so offset by one
        parser.read_string(f"[{ROOT}]\n" + text)
    except configparser.ParsingError as exc:
        lines = ", ".join(str(n - 1) for n, _ in exc.errors)
        raise ConfigError(f"parse error on line {lines}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"line {exc.lineno - 1}: duplicate key {exc.option}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {(exc.lineno or 1) - 1}: duplicate section {exc.section}") from None
    lines = _line_numbers(text)

    values: dict = {sec: {} for sec in SECTIONS}
    for sec in parser.sections():
        for key, raw in parser.items(sec, raw=True):
            line = lines.get((sec, key), 0)
            home = _section_of(key)
            if sec != ROOT and sec not in SECTIONS:
                raise ConfigError(f"line {line}: unknown section [{sec}]")
            if home is None or (sec != ROOT and key not in SECTIONS[sec]):
                raise ConfigError(f"line {line}: unknown key {key!r}" + (f" in [{sec}]" if sec != ROOT else ""))
            if key in values[home]:
                raise ConfigError(f"line {line}: {key} set twice")
            values[home][key] = (raw, line)
    return _build(values)


def _build(values: dict) -> ExperimentConfig:
    explicit = frozenset(k for sec in values.values() for k in sec)

    def typed(cls, sections):
        hints = _field_types(cls)
        kw = {}
        for sec in sections:
            for key, (raw, line) in values[sec].items():
                if key == "kind":
                    kw[key] = raw.strip()
                else:
                    kw[key] = _convert(raw, hints[key], key, line)
        return kw

    first_line = {k: ln for sec in values.values() for k, (_, ln) in sec.items()}
    def lines_of(*sections):
        return sorted(ln for sec in sections for _, ln in values[sec].values())

    try:
        pmir = PmirConfig(**{**BASELINE, **typed(PmirConfig, ("market", "pmir"))})
    except (ConfigError, ValueError) as exc:
        raise ConfigError(_where(exc, first_line, lines_of("market", "pmir"))) from None
    try:
        schedule = ElasticitySchedule(**typed(ElasticitySchedule, ("schedule",)))
    except ValueError as exc:
        raise ConfigError(_where(exc, first_line, lines_of("schedule"))) from None
    try:
        policy = PolicyConfig(**typed(PolicyConfig, ("policy",)))
    except (PolicyConfigError, ValueError) as exc:
        raise ConfigError(_where(exc, first_line, lines_of("policy"))) from None

    sw = {}
    for key, (raw, line) in values["sweep"].items():
        items = _split_list(raw)
        try:
            if key == "rho_values":
                sw[key] = tuple(None if x.lower() == "endogenous" else float(x) for x in items)
                if any(r is not None and not 0 <= r <= 1 for r in sw[key]):
                    raise ValueError("rho values must lie in [0, 1]")
            elif key == "policies":
                sw[key] = tuple(PolicyKind(x) for x in items)
            elif key == "regimes":
                sw[key] = tuple(Regime(x.lower()) for x in items)
            elif key == "seeds":
                sw[key] = tuple(default_seeds()) if items == ["default"] else tuple(int(x) for x in items)
                if any(s < 0 for s in sw[key]):
                    raise ValueError("seeds must be nonnegative")
        except ValueError as exc:
            raise ConfigError(f"line {line}: {key}: {exc}") from None
    sweep = SweepAxes(**sw)

    out = values["output"]
    directory = out["directory"][0].strip() if "directory" in out else os.environ.get("SDCE_OUTPUT_DIR", "sdce-out")
    fmt = out["format"][0].strip() if "format" in out else "csv"
    if fmt not in FORMATS:
        raise ConfigError(f"line {out['format'][1]}: format must be one of {', '.join(FORMATS)}")
    return ExperimentConfig(pmir, schedule, policy, sweep, directory, fmt, explicit)


def _where(exc: Exception, first_line: dict, candidates=()) -> str:
    """Prefix the line of the key the message names, else the lines of the group."""
    msg = str(exc)
    for key, line in first_line.items():
        if key in msg:
            return f"line {line}: {msg}"
    if candidates:
        label = "line" if len(candidates) == 1 else "lines"
        return f"{label} {', '.join(map(str, candidates))}: {msg}"
    return msg


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    if path is None:
        return parse_config("")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
