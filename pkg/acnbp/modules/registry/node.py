# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from typing import Any, Optional

from acnbp import logger
from acnbp.lib.crypto import KeyPair
from acnbp.lib.envelope import MsgType, SignedEnvelope
from acnbp.lib.errors import IllegalPhase, RateLimited
from acnbp.lib.node import KeyLookup, Node, Tracer, Transport
from acnbp.modules.core.schema import AgentId, CapabilityQuery
from acnbp.modules.registry.registry import Registry

__all__ = (
  "RegistryNode",
)


class RegistryNode(Node):
  """Answers capability discovery queries on the bus."""

  def __init__(
    self,
    agent_id: AgentId,
    keypair: KeyPair,
    registry: Registry,
    key_lookup: KeyLookup,
    transport: Optional[Transport] = None,
    rng_seed: Any = 0,
    tracer: Optional[Tracer] = None,
  ):
    super().__init__(agent_id, keypair, key_lookup, transport, rng_seed, tracer)
    self.registry = registry
    self.answered = 0
    self.rate_limited = 0


  @property
  def role(self):
    return "Registry"


  def dispatch(self, env: SignedEnvelope):
    if env.msg_type != MsgType.CD_QUERY:
      raise IllegalPhase(self.id, "SERVING", env.msg_type.value, "registry only answers discovery queries")

    body = env.payload()
    query = CapabilityQuery.from_plain(body["query"])
    limit = body.get("limit")
    try:
      records = self.registry.discover(env.sender, query, limit)
    except RateLimited as e:
      self.rate_limited += 1
      self.send(env.sender, env.session_id, MsgType.CD_RESPONSE, {"error": e.code, "records": []})
      return

    self.answered += 1
    self.send(env.sender, env.session_id, MsgType.CD_RESPONSE, {"error": None, "records": records})
    logger.info(f"Registry | Answered {env.sender} with {len(records)} records")
