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
Append-only, hash-chained audit trail.

Each record's hash is SHA3-256(prev_hash || canonical(index, time_ms, actor,
event, body)); record 0 chains from 32 zero bytes. On disk, records are
stored as a 4-byte big-endian length followed by the canonical record.
"""

from attrs import frozen, field, evolve
from os import PathLike
from pathlib import Path
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import threading

from acnbp import logger
from acnbp.lib.canonical import canonical_encode, canonical_decode
from acnbp.lib.crypto import ZERO_HASH, hash_chain_step
from acnbp.lib.errors import AuditFileCorrupt, ParseError
from acnbp.modules.core.schema import AgentId
from acnbp.utils import from_hex, short_hex

__all__ = (
  "AuditRecord",
  "AuditLog",
  "verify_chain",
  "verify_file",
)

FileName = Union[str, PathLike]
LENGTH_BYTES = 4


@frozen
class AuditRecord:
  index: int
  time_ms: int
  actor: AgentId
  event: str
  body: bytes = field(repr=False)
  prev_hash: bytes = field(repr=short_hex)
  hash: bytes = field(repr=short_hex)

  def content(self):
    return canonical_encode({
      "index": self.index,
      "time_ms": self.time_ms,
      "actor": self.actor,
      "event": self.event,
      "body": self.body,
    })

  def expected_hash(self):
    return hash_chain_step(self.prev_hash, self.content())

  def payload(self):
    return canonical_decode(self.body)

  @classmethod
  def from_plain(cls, d: Any):
    return cls(
      index=d["index"],
      time_ms=d["time_ms"],
      actor=AgentId.from_plain(d["actor"]),
      event=d["event"],
      body=from_hex(d["body"], "body"),
      prev_hash=from_hex(d["prev_hash"], "prev_hash"),
      hash=from_hex(d["hash"], "hash"),
    )


def verify_chain(records: Sequence[AuditRecord]) -> Tuple[bool, Optional[int]]:
  """
  Recompute the hash chain.

  Returns:
      (True, None) if every record verifies, else (False, first bad index)
  """
  prev = ZERO_HASH
  for i, record in enumerate(records):
    if record.index != i or record.prev_hash != prev or record.hash != record.expected_hash():
      return False, i
    prev = record.hash
  return True, None


class AuditLog:
  """
  In-memory audit log, optionally mirrored to an append-only file.

  Appends are serialized per log.
  """

  def __init__(self, path: Optional[FileName] = None):
    self._records: List[AuditRecord] = []
    self._lock = threading.Lock()
    self.path = Path(path) if path else None
    if self.path:
      self.path.parent.mkdir(parents=True, exist_ok=True)
      self.path.write_bytes(b"")


  def __len__(self):
    return len(self._records)


  def __iter__(self) -> Iterator[AuditRecord]:
    return iter(list(self._records))


  def __getitem__(self, index: int):
    return self._records[index]


  @property
  def head(self):
    return self._records[-1].hash if self._records else ZERO_HASH


  @property
  def records(self):
    return list(self._records)


  def append(self, time_ms: int, actor: AgentId, event: str, body: Any):
    """
    Append a record at the tail.

    Args:
        time_ms: Virtual time of the event
        actor: Agent the event is attributed to
        event: Event tag, e.g. `dcu`
        body: Event payload; anything other than bytes is canonical-encoded

    Returns:
        The new record
    """
    if not isinstance(body, (bytes, bytearray)):
      body = canonical_encode(body)

    with self._lock:
      prev = self.head
      draft = AuditRecord(
        index=len(self._records),
        time_ms=time_ms,
        actor=actor,
        event=event,
        body=bytes(body),
        prev_hash=prev,
        hash=b"",
      )
      record = evolve(draft, hash=draft.expected_hash())
      self._records.append(record)
      if self.path:
        with open(self.path, "ab") as f:
          f.write(_frame(record))

    logger.debug(f"Audit | #{record.index} {event} by {actor} head={short_hex(record.hash)}")
    return record


  def verify(self):
    return verify_chain(self._records)


  def save(self, path: FileName):
    with self._lock:
      data = b"".join(_frame(r) for r in self._records)
    Path(path).write_bytes(data)


  @classmethod
  def load(cls, path: FileName):
    """
    Read a log file. The chain is not verified.

    Raises:
        AuditFileCorrupt: A record is truncated, undecodable or not canonical
    """
    log = cls()
    log._records = _read_records(Path(path).read_bytes())
    return log


def verify_file(path: FileName) -> Tuple[bool, Optional[int], int]:
  """
  Verify an audit log file.

  Returns:
      (ok, first bad index or None, number of readable records)
  """
  try:
    log = AuditLog.load(path)
  except AuditFileCorrupt as e:
    logger.warning(f"Audit | {path}: {e}")
    return False, e.index, e.index
  ok, bad = log.verify()
  if not ok:
    logger.warning(f"Audit | {path}: hash chain breaks at record {bad}")
  return ok, bad, len(log)


# =================================================================================================


def _frame(record: AuditRecord):
  data = canonical_encode(record)
  return len(data).to_bytes(LENGTH_BYTES, "big") + data


def _read_records(data: bytes):
  records = []
  cursor = 0
  while cursor < len(data):
    index = len(records)
    if cursor + LENGTH_BYTES > len(data):
      raise AuditFileCorrupt(index, "truncated length prefix")
    length = int.from_bytes(data[cursor : cursor + LENGTH_BYTES], "big")
    cursor += LENGTH_BYTES
    if cursor + length > len(data):
      raise AuditFileCorrupt(index, "truncated record")
    raw = data[cursor : cursor + length]
    cursor += length

    try:
      record = AuditRecord.from_plain(canonical_decode(raw))
    except (ParseError, KeyError, TypeError, ValueError) as e:
      raise AuditFileCorrupt(index, f"undecodable record: {e}") from None
    if canonical_encode(record) != raw:
      raise AuditFileCorrupt(index, "record is not canonical")
    records.append(record)
  return records
