# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

from attrs import evolve

import pytest

from acnbp.lib.audit import AuditLog, verify_chain, verify_file
from acnbp.lib.crypto import ZERO_HASH, hash_chain_step
from acnbp.lib.errors import AuditFileCorrupt
from acnbp.modules.core.schema import AgentId

ACTOR = AgentId("LegalBot_Prime")


@pytest.fixture
def log():
  log = AuditLog()
  for i in range(5):
    log.append(1000 * i, ACTOR, "decision", {"n": i, "outcome": "COMMITTED"})
  return log


class TestAuditLog:
  def test_empty(self):
    log = AuditLog()
    assert log.head == ZERO_HASH
    assert len(log) == 0
    assert log.verify() == (True, None)

  def test_chain(self, log):
    assert len(log) == 5
    assert log[0].prev_hash == ZERO_HASH
    for prev, record in zip(log.records, log.records[1:]):
      assert record.prev_hash == prev.hash
    assert log.head == log[4].hash
    assert log[4].hash == hash_chain_step(log[3].hash, log[4].content())
    assert log.verify() == (True, None)

  def test_payload(self, log):
    assert log[2].payload() == {"n": 2, "outcome": "COMMITTED"}
    assert log[2].actor == ACTOR
    assert log[2].index == 2

  def test_bytes_body_kept(self):
    log = AuditLog()
    record = log.append(0, ACTOR, "raw", b'{"a":1}')
    assert record.body == b'{"a":1}'

  @pytest.mark.parametrize("index", [0, 2, 4])
  def test_tampered_record(self, log, index):
    records = log.records
    records[index] = evolve(records[index], time_ms=records[index].time_ms + 1)
    assert verify_chain(records) == (False, index)

  def test_reordered_records(self, log):
    records = log.records
    records[1], records[2] = records[2], records[1]
    assert verify_chain(records) == (False, 1)

  def test_dropped_record(self, log):
    records = log.records
    del records[3]
    assert verify_chain(records) == (False, 3)


class TestAuditFile:
  def test_mirrored_file(self, tmp_path):
    path = tmp_path / "logs" / "audit.log"
    log = AuditLog(path)
    log.append(0, ACTOR, "binding", {"provider": "TranslatorC_Gov"})
    log.append(5, ACTOR, "dcu", {"outcome": "COMMITTED"})

    assert verify_file(path) == (True, None, 2)
    assert AuditLog.load(path).head == log.head

  def test_save_and_load(self, log, tmp_path):
    path = tmp_path / "audit.log"
    log.save(path)
    loaded = AuditLog.load(path)
    assert loaded.records == log.records
    assert verify_file(path) == (True, None, 5)

  def test_empty_file(self, tmp_path):
    path = tmp_path / "audit.log"
    path.write_bytes(b"")
    assert verify_file(path) == (True, None, 0)

  def test_flipped_byte(self, log, tmp_path):
    path = tmp_path / "audit.log"
    log.save(path)
    data = bytearray(path.read_bytes())

    # Inside the body hex of the third record
    offset = data.index(log[2].body.hex().encode("ascii"))
    data[offset] = ord("0") if data[offset] != ord("0") else ord("1")
    path.write_bytes(bytes(data))

    ok, bad, n = verify_file(path)
    assert not ok
    assert bad == 2
    assert n == 5

  def test_truncated(self, log, tmp_path):
    path = tmp_path / "audit.log"
    log.save(path)
    path.write_bytes(path.read_bytes()[:-10])

    assert verify_file(path) == (False, 4, 4)
    with pytest.raises(AuditFileCorrupt) as e:
      AuditLog.load(path)
    assert e.value.index == 4

  def test_truncated_prefix(self, log, tmp_path):
    path = tmp_path / "audit.log"
    log.save(path)
    path.write_bytes(path.read_bytes() + b"\x00\x00")

    assert verify_file(path) == (False, 5, 5)

  def test_not_canonical(self, tmp_path):
    path = tmp_path / "audit.log"
    garbage = b'{"index": 0}'
    path.write_bytes(len(garbage).to_bytes(4, "big") + garbage)

    ok, bad, _ = verify_file(path)
    assert not ok
    assert bad == 0
