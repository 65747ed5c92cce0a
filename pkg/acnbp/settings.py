# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from yaml import safe_load
from typing import Optional, Dict, Any, List, Tuple
from attrs import frozen, field
from os import environ
from pathlib import Path

from acnbp import logger

__all__ = (
  "acnbp",
  "protocol",
  "registry",
  "scoring",
  "negotiation",
  "sim",
  "DEFAULT_SETTINGS_YAML",
)

DEFAULT_SETTINGS_YAML = Path(__file__).resolve().parent.parent / "defaults" / "settings.yaml"


@frozen
class BaseSettings:
  acnbp: "AcnbpSettings"
  protocol: "ProtocolSettings"
  registry: "RegistrySettings"
  scoring: "ScoringSettings"
  negotiation: "NegotiationSettings"
  sim: "SimSettings"

  @classmethod
  def create(cls, filename: str):
    with open(filename, encoding="UTF-8") as f:
      d: Dict[str, Dict[str, Any]] = safe_load(f)

    try:
      return cls(
        acnbp=AcnbpSettings(**(d["acnbp"] or {})),
        protocol=ProtocolSettings(**(d["protocol"] or {})),
        registry=RegistrySettings(**(d["registry"] or {})),
        scoring=ScoringSettings(**(d["scoring"] or {})),
        negotiation=NegotiationSettings(**(d["negotiation"] or {})),
        sim=SimSettings(**(d["sim"] or {})),
      )
    except KeyError as e:
      raise KeyError(f"Missing settings tree: {str(e)}") from None

  @classmethod
  def defaults(cls):
    return cls(
      acnbp=AcnbpSettings(),
      protocol=ProtocolSettings(),
      registry=RegistrySettings(),
      scoring=ScoringSettings(),
      negotiation=NegotiationSettings(),
      sim=SimSettings(),
    )


@frozen
class AcnbpSettings:
  log_info: bool = field(default=False, converter=bool)
  trace_dir: str = field(default="traces")
  messages_dir: Optional[str] = field(default=None)


@frozen
class ProtocolSettings:
  version: str = field(default="1.2.0")
  compatibility: str = field(default="1.0.0")
  releases: List[str] = field(factory=lambda: ["1.0.0", "1.1.0", "1.2.0"])
  extensions: List[str] = field(factory=list)
  replay_window_ms: int = field(default=300_000)
  nonce_bytes: int = field(default=16)


@frozen
class RegistrySettings:
  pow_difficulty: int = field(default=12)
  bucket_capacity: int = field(default=5)
  refill_per_s: float = field(default=1.0)
  query_limit: int = field(default=10)
  registration_skew_ms: int = field(default=300_000)


@frozen
class ScoringSettings:
  w_compat: float = field(default=0.30)
  w_security: float = field(default=0.25)
  w_reputation: float = field(default=0.20)
  w_cost: float = field(default=0.15)
  w_risk: float = field(default=0.10)


@frozen
class NegotiationSettings:
  parallel_sessions: int = field(default=3)
  response_timeout_ms: int = field(default=2_000)
  reputation_alpha: float = field(default=0.2)
  default_reputation: float = field(default=0.5)
  penalty_ratio: float = field(default=0.5)
  decision_retries: int = field(default=3)
  finished_sessions: int = field(default=256)


@frozen
class SimSettings:
  latency_ms: Tuple[int, int] = field(default=(10, 50), converter=tuple)
  drop_prob: float = field(default=0.0)
  duplicate_prob: float = field(default=0.0)
  max_time_ms: int = field(default=172_800_000)


_settings_file = environ.get("SETTINGS_YAML") or ""
if len(_settings_file.strip()) > 0:
  root = BaseSettings.create(_settings_file)
elif DEFAULT_SETTINGS_YAML.exists():
  root = BaseSettings.create(str(DEFAULT_SETTINGS_YAML))
else:
  root = BaseSettings.defaults()
  logger.warning("No valid SETTINGS_YAML provided, using built-in defaults")


acnbp = root.acnbp
protocol = root.protocol
registry = root.registry
scoring = root.scoring
negotiation = root.negotiation
sim = root.sim
