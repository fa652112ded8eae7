"""Campaign configuration: sectioned key = value text, parsed strictly.

Every key maps onto a field of one of the option dataclasses; unknown
sections or keys are errors.  Values are given in the units the field name
states (dB, dBm, Hz, m, km); conversion to linear happens inside the models.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .channel import ChannelParams
from .dual_solver import DualOptions
from .linkmodel import RadioConfig
from .orchestrator import Policy, SolverOptions
from .power_solver import PowerOptions
from .scenario import ConfigError, ScenarioConfig

OUTPUT_ENV = "TNNTN_OUTPUT_DIR"
DEFAULT_POLICIES = ("baseline_tn_only", "threegpp_split", "framework_fixed_epsilon:0",
                    "framework_optimal")

_SECTIONS = {
    "scenario": ScenarioConfig,
    "channel": ChannelParams,
    "radio": RadioConfig,
    "dual": DualOptions,
    "power": PowerOptions,
}
# fields that are set by the campaign rather than the file
_HIDDEN = {("scenario", "rng_seed"), ("dual", "fixed_epsilon")}
_ORCH_KEYS = ("outer_rounds", "outer_tol", "baseline_bandwidth_hz", "threegpp_epsilon")
_CAMPAIGN_KEYS = ("seeds", "policies", "output_dir", "threads")


def parse_seeds(text) -> list[int]:
    """``N`` -> 0..N-1; ``a-b`` -> inclusive range; ``a,b,c`` -> explicit list."""
    s = str(text).strip()
    try:
        if "," in s:
            return [int(x) for x in s.split(",") if x.strip()]
        if "-" in s[1:]:
            a, b = s.split("-", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        n = int(s)
    except ValueError:
        raise ConfigError("campaign.seeds", f"cannot parse {text!r}") from None
    if n < 1:
        raise ConfigError("campaign.seeds", "seed count must be >= 1")
    return list(range(n))


def _coerce(path: str, raw: str, annotation: str):
    raw = raw.strip()
    ann = str(annotation)
    try:
        if "None" in ann and raw.lower() in ("none", ""):
            return None
        if ann.startswith("bool"):
            v = raw.lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if ann.startswith("int"):
            return int(raw)
        if ann.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(path, f"expected {ann.split(' ')[0]}, got {raw!r}") from None
    return raw


def _build(section: str, cls, items: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        path = f"{section}.{key}"
        if key not in fields or (section, key) in _HIDDEN:
            raise ConfigError(path, "unknown key")
        kwargs[key] = _coerce(path, raw, fields[key].type)
    return cls(**kwargs).validate(section)


@dataclass
class CampaignConfig:
    scenario: ScenarioConfig = ScenarioConfig()
    channel: ChannelParams = ChannelParams()
    radio: RadioConfig = RadioConfig()
    solver: SolverOptions = SolverOptions()
    policies: list = field(default_factory=lambda: [Policy.parse(p) for p in DEFAULT_POLICIES])
    seeds: list = field(default_factory=lambda: list(range(10)))
    output_dir: str | None = None
    threads: int = 1
    source: str | None = None

    def resolve_output_dir(self, override=None) -> Path:
        return Path(override or self.output_dir or os.environ.get(OUTPUT_ENV) or "results")


def preset_path(name: str) -> Path | None:
    ref = resources.files("tnntn") / "presets" / name
    return Path(str(ref)) if ref.is_file() else None


def resolve_config_path(path) -> Path:
    """A file path, or the bare name of a shipped preset."""
    p = Path(path)
    if p.is_file():
        return p
    pre = preset_path(p.name)
    if pre is not None and not p.parent.parts:
        return pre
    raise FileNotFoundError(f"config file not found: {path}")


def parse_config(text: str, source: str | None = None) -> CampaignConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None

    known = set(_SECTIONS) | {"campaign", "orchestrator"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(sec, "unknown section")

    parts = {}
    for sec, cls in _SECTIONS.items():
        parts[sec] = _build(sec, cls, dict(cp[sec])) if cp.has_section(sec) else cls()

    orch = {}
    if cp.has_section("orchestrator"):
        fields = {f.name: f for f in dataclasses.fields(SolverOptions)}
        for key, raw in cp["orchestrator"].items():
            if key not in _ORCH_KEYS:
                raise ConfigError(f"orchestrator.{key}", "unknown key")
            orch[key] = _coerce(f"orchestrator.{key}", raw, fields[key].type)
    solver = SolverOptions(dual=parts["dual"], power=parts["power"], **orch).validate("orchestrator")

    cfg = CampaignConfig(scenario=parts["scenario"], channel=parts["channel"], radio=parts["radio"],
                         solver=solver, source=source)
    if cp.has_section("campaign"):
        sec = cp["campaign"]
        for key in sec:
            if key not in _CAMPAIGN_KEYS:
                raise ConfigError(f"campaign.{key}", "unknown key")
        if "seeds" in sec:
            cfg.seeds = parse_seeds(sec["seeds"])
        if "policies" in sec:
            names = [s for s in sec["policies"].replace("\n", ",").split(",") if s.strip()]
            if not names:
                raise ConfigError("campaign.policies", "empty policy list")
            cfg.policies = [_policy(n, "campaign.policies") for n in names]
        if "output_dir" in sec:
            cfg.output_dir = sec["output_dir"].strip() or None
        if "threads" in sec:
            cfg.threads = _coerce("campaign.threads", sec["threads"], "int")
            if cfg.threads < 1:
                raise ConfigError("campaign.threads", "must be >= 1")
    return cfg


def _policy(text: str, path: str) -> Policy:
    try:
        return Policy.parse(text)
    except ConfigError as exc:
        raise ConfigError(path, str(exc).split(": ", 1)[-1]) from None


def load_config(path) -> CampaignConfig:
    p = resolve_config_path(path)
    return parse_config(p.read_text(), source=str(p))
