# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

import pytest

from acnbp.lib.canonical import canonical_decode, canonical_encode, digest, is_canonical, to_plain
from acnbp.lib.errors import ParseError, UnencodableValue
from acnbp.modules.core.schema import AgentId, EncryptionLevel, SecurityProfile


class TestCanonicalEncode:
  """Byte-exact output of the canonical encoding."""

  def test_keys_sorted_without_whitespace(self):
    assert canonical_encode({"b": 1, "a": [True, None, "x"]}) == b'{"a":[true,null,"x"],"b":1}'

  def test_keys_sorted_by_code_point(self):
    assert canonical_encode({"b": 0, "B": 0, "a": 0}) == b'{"B":0,"a":0,"b":0}'

  def test_numbers(self):
    assert canonical_encode([0, -7, 10**20]) == b"[0,-7,100000000000000000000]"
    assert canonical_encode([0.1, 1.0, 2.5e-7]) == b"[0.1,1.0,2.5e-07]"

  def test_bytes_are_lowercase_hex(self):
    assert canonical_encode({"k": b"\x00\xab\xff"}) == b'{"k":"00abff"}'

  def test_text_is_utf8(self):
    assert canonical_encode("é✓") == '"é✓"'.encode("utf-8")

  def test_attrs_and_enums(self):
    assert canonical_encode(AgentId("LegalBot_Prime")) == b'{"name":"LegalBot_Prime","namespace":"agents"}'
    assert canonical_encode(EncryptionLevel.ADVANCED) == b"2"

  def test_sets_are_sorted(self):
    profile = SecurityProfile(encryption_level="basic", certifications={"z", "a", "m"})
    assert to_plain(profile)["certifications"] == ["a", "m", "z"]

  def test_structural_equality(self):
    a = {"x": [1, 2], "y": {"z": b"\x01"}}
    b = {"y": {"z": b"\x01"}, "x": [1, 2]}
    assert canonical_encode(a) == canonical_encode(b)
    assert digest(a) == digest(b)
    assert canonical_encode(a) != canonical_encode({"x": [2, 1], "y": {"z": b"\x01"}})

  @pytest.mark.parametrize("value", [float("nan"), float("inf"), {1: "a"}, object()])
  def test_unencodable(self, value):
    with pytest.raises(UnencodableValue):
      canonical_encode(value)


class TestCanonicalDecode:
  """Parsing and its failure modes."""

  def test_whitespace_relaxed(self):
    assert canonical_decode('{ "a" : [ 1, 2 ],\n  "b": "c" }') == {"a": [1, 2], "b": "c"}

  def test_decode_of_encode(self):
    value = {"name": "x", "reals": [0.25, 3.0], "nested": {"flag": False}}
    assert canonical_decode(canonical_encode(value)) == value

  @pytest.mark.parametrize("data", [b"", b"   \n  ", ""])
  def test_empty_input(self, data):
    with pytest.raises(ParseError) as e:
      canonical_decode(data)
    assert e.value.line == 1

  def test_error_line(self):
    with pytest.raises(ParseError) as e:
      canonical_decode('{\n"a": 1,\n}')
    assert e.value.line == 3

  def test_duplicate_keys(self):
    with pytest.raises(ParseError):
      canonical_decode('{"a": 1, "a": 2}')

  @pytest.mark.parametrize("data", ["NaN", "[Infinity]", "-Infinity"])
  def test_nonfinite_constants(self, data):
    with pytest.raises(ParseError):
      canonical_decode(data)

  def test_invalid_utf8(self):
    with pytest.raises(ParseError):
      canonical_decode(b'"\xff"')

  def test_is_canonical(self):
    assert is_canonical(b'{"a":1,"b":[true]}')
    assert not is_canonical(b'{"b":[true],"a":1}')
    assert not is_canonical(b'{ "a": 1 }')
    assert not is_canonical(b"")
