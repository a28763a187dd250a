"""Scenario and fault descriptions, with JSON loading that names the bad field."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from qof.core import MAX_PAYLOAD, Config, ConfigError

BEHAVIORS = ("crash", "equivocate_bcch", "lie_status", "mute", "frontrun")
BYZANTINE = frozenset(BEHAVIORS)


class ScenarioError(ValueError):
    """A scenario file or dict failed validation; ``field`` names the culprit."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class FaultSpec:
    """``behavior`` is one of :data:`BEHAVIORS`.

    ``params`` by behavior:

    * crash: ``at`` (ms)
    * lie_status: ``mode`` in {"inflate", "deflate", "split"}, ``amount``
    * frontrun: ``victim_client``, ``attacker_client``, ``lag`` (ms)
    """

    party: int
    behavior: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"party": self.party, "behavior": self.behavior, **self.params}

    @classmethod
    def from_dict(cls, raw: dict, where: str = "faults") -> "FaultSpec":
        if not isinstance(raw, dict):
            raise ScenarioError("fault must be an object", where)
        try:
            party = int(raw["party"])
            behavior = str(raw["behavior"])
        except KeyError as exc:
            raise ScenarioError(f"missing {exc.args[0]!r}", where) from None
        except (TypeError, ValueError):
            raise ScenarioError("party must be an integer", f"{where}.party") from None
        if behavior not in BEHAVIORS:
            raise ScenarioError(f"unknown behavior {behavior!r}", f"{where}.behavior")
        params = {k: v for k, v in raw.items() if k not in ("party", "behavior")}
        if behavior == "crash" and not isinstance(params.get("at", 0), (int, float)):
            raise ScenarioError("crash time must be a number", f"{where}.at")
        if behavior == "lie_status" and params.get("mode", "inflate") not in ("inflate", "deflate", "split"):
            raise ScenarioError("unknown lie_status mode", f"{where}.mode")
        return cls(party, behavior, params)


@dataclass(frozen=True)
class Scenario:
    config: Config
    seed: int = 0
    n_clients: int = 1
    tx_count: int = 10
    payload_size: int = 32
    delay_range: tuple = (1.0, 1.0)
    faults: tuple = ()
    duration: float = 600_000.0
    client_rate: float = 1000.0
    client_delay: tuple | None = None
    auto_rounds: bool = True
    script: tuple = ()
    signature_scheme: str = "hmac"
    costs: dict | None = None
    name: str = ""

    def __post_init__(self):
        if not 1 <= self.payload_size <= MAX_PAYLOAD:
            raise ScenarioError(f"payload_size must be within [1, {MAX_PAYLOAD}]", "payload_size")
        d_min, d_max = self.delay_range
        if d_min < 0 or d_min > d_max:
            raise ScenarioError("delay_range needs 0 <= d_min <= d_max", "delay_range")
        if self.tx_count < 0 or self.n_clients < 1:
            raise ScenarioError("tx_count >= 0 and n_clients >= 1 required", "tx_count")
        if self.client_rate <= 0:
            raise ScenarioError("client_rate must be positive", "client_rate")
        faulty = {fs.party for fs in self.faults}
        if len(faulty) > self.config.f:
            raise ScenarioError(
                f"{len(faulty)} faulty parties exceed f={self.config.f}", "faults"
            )
        for fs in self.faults:
            if not 0 <= fs.party < self.config.n:
                raise ScenarioError(f"fault party {fs.party} out of range", "faults.party")

    @property
    def faulty(self) -> frozenset:
        return frozenset(fs.party for fs in self.faults)

    @property
    def correct(self) -> list[int]:
        return [p for p in range(self.config.n) if p not in self.faulty]

    @property
    def mean_delay(self) -> float:
        return (self.delay_range[0] + self.delay_range[1]) / 2.0

    def replace(self, **changes) -> "Scenario":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return Scenario(**data)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "name": self.name,
            "config": asdict(self.config),
            "seed": self.seed,
            "n_clients": self.n_clients,
            "tx_count": self.tx_count,
            "payload_size": self.payload_size,
            "delay_range": list(self.delay_range),
            "faults": [fs.to_dict() for fs in self.faults],
            "duration": self.duration,
            "client_rate": self.client_rate,
            "auto_rounds": self.auto_rounds,
            "signature_scheme": self.signature_scheme,
        }
        if self.client_delay is not None:
            out["client_delay"] = list(self.client_delay)
        if self.script:
            out["script"] = [dict(a) for a in self.script]
        if self.costs is not None:
            out["costs"] = dict(self.costs)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        if not isinstance(raw, dict):
            raise ScenarioError("scenario must be a JSON object")
        known = {
            "name", "config", "seed", "n_clients", "tx_count", "payload_size", "delay_range",
            "faults", "duration", "client_rate", "client_delay", "auto_rounds", "script",
            "signature_scheme", "costs",
        }
        for key in raw:
            if key not in known:
                raise ScenarioError("unknown field", key)
        if "config" not in raw:
            raise ScenarioError("missing field", "config")
        cfg_raw = raw["config"]
        if not isinstance(cfg_raw, dict):
            raise ScenarioError("config must be an object", "config")
        try:
            config = Config(**cfg_raw)
        except TypeError as exc:
            raise ScenarioError(str(exc), "config") from None
        except ConfigError as exc:
            raise ScenarioError(str(exc), "config") from None
        kwargs: dict[str, Any] = {"config": config}
        for key, typ in (
            ("seed", int), ("n_clients", int), ("tx_count", int), ("payload_size", int),
            ("duration", float), ("client_rate", float), ("auto_rounds", bool),
            ("signature_scheme", str), ("name", str),
        ):
            if key in raw:
                val = raw[key]
                if typ is bool and not isinstance(val, bool):
                    raise ScenarioError("expected true/false", key)
                if typ in (int, float) and (isinstance(val, bool) or not isinstance(val, (int, float))):
                    raise ScenarioError(f"expected a number", key)
                kwargs[key] = typ(val)
        for key in ("delay_range", "client_delay"):
            if key in raw:
                val = raw[key]
                if not (isinstance(val, list) and len(val) == 2 and all(isinstance(x, (int, float)) for x in val)):
                    raise ScenarioError("expected [min, max]", key)
                kwargs[key] = (float(val[0]), float(val[1]))
        if "faults" in raw:
            if not isinstance(raw["faults"], list):
                raise ScenarioError("faults must be a list", "faults")
            kwargs["faults"] = tuple(
                FaultSpec.from_dict(fs, f"faults[{i}]") for i, fs in enumerate(raw["faults"])
            )
        if "script" in raw:
            if not isinstance(raw["script"], list):
                raise ScenarioError("script must be a list", "script")
            for i, action in enumerate(raw["script"]):
                _check_action(action, f"script[{i}]", config.n)
            kwargs["script"] = tuple(raw["script"])
        if "costs" in raw:
            if not isinstance(raw["costs"], dict):
                raise ScenarioError("costs must be an object", "costs")
            kwargs["costs"] = dict(raw["costs"])
        return cls(**kwargs)


def _check_action(action, where: str, n: int) -> None:
    if not isinstance(action, dict) or "at" not in action:
        raise ScenarioError("action needs an 'at' time", where)
    if "broadcast" in action:
        party = action.get("party")
        if not isinstance(party, int) or not 0 <= party < n:
            raise ScenarioError("broadcast needs a valid party", f"{where}.party")
    elif "start_round" in action:
        parties = action["start_round"]
        if parties != "all" and not (isinstance(parties, list) and all(isinstance(p, int) for p in parties)):
            raise ScenarioError("start_round takes 'all' or a list of parties", f"{where}.start_round")
    else:
        raise ScenarioError("action must be 'broadcast' or 'start_round'", where)


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    return Scenario.from_dict(raw)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")
