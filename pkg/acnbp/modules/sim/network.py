# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

"""
Simulated message bus.

The bus is a simpy environment in virtual milliseconds. Every send draws its
fate (drop, duplicate, latency) from a generator private to its link, so an
adversary on one link leaves the randomness of every other link untouched.
Events at equal times are processed in scheduling order.
"""

from collections import Counter
from os import PathLike
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Protocol, Tuple, Union

import random
import simpy

from acnbp import logger
from acnbp.lib.canonical import canonical_encode
from acnbp.lib.envelope import SignedEnvelope
from acnbp.lib.node import Node
from acnbp.modules.core.schema import AgentId
from acnbp.modules.sim.schema import SimConfig, SimEvent

__all__ = (
  "Interceptor",
  "SimNetwork",
  "envelope_detail",
)

Link = Tuple[AgentId, AgentId]
FileName = Union[str, PathLike]


class Interceptor(Protocol):
  def intercept(self, env: SignedEnvelope) -> Optional[SignedEnvelope]: ...


def envelope_detail(env: SignedEnvelope):
  return {
    "msg_type": env.msg_type.value,
    "sender": env.sender.name,
    "recipient": env.recipient.name,
    "session_id": env.session_id,
    "seq": env.seq,
    "envelope_hash": env.hash(),
  }


class SimNetwork:
  """Transport for every node of one simulation."""

  def __init__(self, config: SimConfig):
    self.config = config
    self.env    = simpy.Environment()
    self.nodes: Dict[AgentId, Node] = {}
    self.events: List[SimEvent] = []
    self.counts: Counter = Counter()
    self.interceptors: Dict[Link, List[Interceptor]] = {}
    self._links: Dict[Link, random.Random] = {}


  # ===============================================================================================
  # Wiring


  def attach(self, node: Node):
    self.nodes[node.id] = node
    node.transport = self
    node.tracer = self._on_trace
    return node


  def intercept(self, link: Link, interceptor: Interceptor):
    self.interceptors.setdefault(link, []).append(interceptor)


  def link_rng(self, link: Link):
    rng = self._links.get(link)
    if rng is None:
      rng = self._links[link] = random.Random(f"{self.config.seed}/{link[0].qualified}->{link[1].qualified}")
    return rng


  # ===============================================================================================
  # Transport


  def now(self):
    return int(self.env.now)


  def send(self, env: SignedEnvelope):
    link = (env.sender, env.recipient)
    self.counts["sent"] += 1
    self.record("send", **envelope_detail(env))

    for interceptor in self.interceptors.get(link, ()):
      env = interceptor.intercept(env)
      if env is None:
        return

    rng = self.link_rng(link)
    dropped = rng.random() < self.config.drop_prob
    duplicated = rng.random() < self.config.duplicate_prob
    low, high = self.config.latency_ms

    if dropped:
      self.counts["dropped"] += 1
      self.record("drop", **envelope_detail(env))
      logger.info(f"Sim | Dropped {env.msg_type.value} {env.sender} -> {env.recipient}")
      return

    copies = 2 if duplicated else 1
    if duplicated:
      self.counts["duplicated"] += 1
    for _ in range(copies):
      self.env.process(self._deliver(env, rng.randint(low, high)))


  def set_timer(self, owner: AgentId, delay_ms: int, key: str):
    self.env.process(self._timer(owner, int(delay_ms), key))


  def call_at(self, delay_ms: int, fn: Callable[[], Any], label: str):
    """Run `fn` after a delay, recorded as an adversary or scenario action."""
    self.env.process(self._call(int(delay_ms), fn, label))


  def deliver_now(self, env: SignedEnvelope, source: str):
    """
    Hand an envelope straight to its recipient, bypassing link effects.

    Returns:
        Whether the recipient accepted it, or None if nobody is attached
    """
    node = self.nodes.get(env.recipient)
    self.record("inject", source=source, **envelope_detail(env))
    if node is None:
      return None
    self.counts["injected"] += 1
    return node.on_envelope(env)


  # ===============================================================================================
  # Running


  def run(self, until: Optional[int] = None):
    until = self.config.max_time_ms if until is None else until
    self.env.run(until=until)
    logger.info(
      f"Sim | Stopped at {self.now()} ms: {self.counts['delivered']} delivered, "
      f"{self.counts['dropped']} dropped, {len(self.events)} events"
    )


  def record(self, kind: str, **detail: Any):
    event = SimEvent(time_ms=self.now(), index=len(self.events), kind=kind, detail=detail)
    self.events.append(event)
    return event


  def trace_lines(self):
    return [canonical_encode(e) for e in self.events]


  def write_trace(self, path: FileName):
    Path(path).write_bytes(b"".join(line + b"\n" for line in self.trace_lines()))


  # ===============================================================================================


  def _deliver(self, env: SignedEnvelope, delay_ms: int):
    yield self.env.timeout(delay_ms)
    node = self.nodes.get(env.recipient)
    if node is None:
      self.counts["undeliverable"] += 1
      self.record("undeliverable", **envelope_detail(env))
      return
    self.counts["delivered"] += 1
    self.record("deliver", **envelope_detail(env))
    node.on_envelope(env)


  def _timer(self, owner: AgentId, delay_ms: int, key: str):
    yield self.env.timeout(delay_ms)
    node = self.nodes.get(owner)
    if node is None:
      return
    self.record("timer", owner=owner.name, key=key)
    node.on_timer(key)


  def _call(self, delay_ms: int, fn: Callable[[], Any], label: str):
    yield self.env.timeout(delay_ms)
    self.record("action", label=label)
    fn()


  def _on_trace(self, event: Dict[str, Any]):
    detail = {k: v for k, v in event.items() if k not in ("kind", "time_ms")}
    self.record(event.get("kind", "node"), **detail)
