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
Key material, signatures, hashing, session keys, channel sealing and
proof-of-work.
"""

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, hmac
from cryptography.hazmat.primitives.asymmetric import ed25519, x25519
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from attrs import frozen, field
from hashlib import sha3_256
from typing import Dict, Optional, Protocol, Union

from acnbp import logger
from acnbp.lib.errors import MalformedKey

__all__ = (
  "KEY_BYTES",
  "HASH_BYTES",
  "ZERO_HASH",
  "KeyPair",
  "SignatureScheme",
  "Ed25519Scheme",
  "register_scheme",
  "get_scheme",
  "generate_keypair",
  "sign",
  "verify",
  "sha3",
  "hash_chain_step",
  "derive_session_key",
  "key_proof",
  "EphemeralKey",
  "seal",
  "open_sealed",
  "proof_of_work",
  "verify_pow",
  "leading_zero_bits",
)

KEY_BYTES = 32
HASH_BYTES = 32
ZERO_HASH = bytes(HASH_BYTES)
MAX_POW_DIFFICULTY = 24


@frozen
class KeyPair:
  public: bytes = field(repr=lambda b: b.hex()[:12])
  secret: bytes = field(repr=False, metadata={"canonical": False})
  scheme_id: str = field(default="ed25519")


class SignatureScheme(Protocol):
  scheme_id: str

  def keypair_from_seed(self, seed: bytes) -> KeyPair: ...

  def sign(self, secret: bytes, payload: bytes) -> bytes: ...

  def verify(self, public: bytes, payload: bytes, signature: bytes) -> bool: ...


class Ed25519Scheme:
  """Deterministic Ed25519 signatures with 256-bit keys."""

  scheme_id = "ed25519"

  def keypair_from_seed(self, seed: bytes):
    secret = sha3_256(b"acnbp-keypair" + seed).digest()
    private = ed25519.Ed25519PrivateKey.from_private_bytes(secret)
    public = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(public=public, secret=secret, scheme_id=self.scheme_id)

  def sign(self, secret: bytes, payload: bytes):
    _check_key(secret)
    return ed25519.Ed25519PrivateKey.from_private_bytes(secret).sign(payload)

  def verify(self, public: bytes, payload: bytes, signature: bytes):
    _check_key(public)
    try:
      ed25519.Ed25519PublicKey.from_public_bytes(public).verify(signature, payload)
    except (InvalidSignature, ValueError):
      return False
    return True


_schemes: Dict[str, SignatureScheme] = {}


def register_scheme(scheme: SignatureScheme):
  _schemes[scheme.scheme_id] = scheme


def get_scheme(scheme_id: str = "ed25519"):
  try:
    return _schemes[scheme_id]
  except KeyError:
    raise ValueError(f"Unknown signature scheme '{scheme_id}'") from None


register_scheme(Ed25519Scheme())


def generate_keypair(seed: Union[bytes, str, int], scheme_id: str = "ed25519"):
  """
  Derive a key pair deterministically from a seed.

  Args:
      seed: Seed material. Strings are UTF-8 encoded, integers big-endian.
      scheme_id: Registered signature scheme

  Returns:
      KeyPair
  """
  if isinstance(seed, int):
    seed = seed.to_bytes(16, "big", signed=True)
  elif isinstance(seed, str):
    seed = seed.encode("utf-8")
  return get_scheme(scheme_id).keypair_from_seed(seed)


def sign(secret: bytes, payload: bytes, scheme_id: str = "ed25519"):
  return get_scheme(scheme_id).sign(secret, payload)


def verify(public: bytes, payload: bytes, signature: bytes, scheme_id: str = "ed25519"):
  return get_scheme(scheme_id).verify(public, payload, signature)


# =============================================================================
# Hashing and keys


def sha3(data: bytes):
  return sha3_256(data).digest()


def hash_chain_step(prev_hash: bytes, body: bytes):
  if len(prev_hash) != HASH_BYTES:
    raise ValueError(f"prev_hash must be {HASH_BYTES} bytes, got {len(prev_hash)}")
  return sha3_256(prev_hash + body).digest()


def derive_session_key(shared_secret: bytes, nonce_r: bytes, nonce_p: bytes):
  """
  Derive a session key as HMAC-SHA3-256(shared_secret, nonce_r || nonce_p).

  Both parties derive identical keys from identical inputs; swapping the
  nonces yields a different key.
  """
  if not shared_secret or not nonce_r or not nonce_p:
    raise ValueError("Session key inputs must be nonempty")
  h = hmac.HMAC(shared_secret, hashes.SHA3_256())
  h.update(nonce_r + nonce_p)
  return h.finalize()


def key_proof(session_key: bytes, label: bytes, session_id: bytes):
  h = hmac.HMAC(session_key, hashes.SHA3_256())
  h.update(label + session_id)
  return h.finalize()


class EphemeralKey:
  """Per-session X25519 secret. Discarded with the session."""

  def __init__(self, secret: bytes):
    self._private = x25519.X25519PrivateKey.from_private_bytes(secret)
    self.public = self._private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

  def exchange(self, peer_public: bytes):
    _check_key(peer_public)
    return self._private.exchange(x25519.X25519PublicKey.from_public_bytes(peer_public))


def seal(session_key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b""):
  """Encrypt under a session key. The 12-byte AEAD nonce is taken from `nonce`."""
  _check_key(session_key)
  return ChaCha20Poly1305(session_key).encrypt(nonce[:12], plaintext, aad)


def open_sealed(session_key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b""):
  """
  Decrypt a sealed payload.

  Returns:
      Plaintext, or None if authentication fails
  """
  _check_key(session_key)
  try:
    return ChaCha20Poly1305(session_key).decrypt(nonce[:12], ciphertext, aad)
  except InvalidTag:
    return None


# =============================================================================
# Proof-of-work


def leading_zero_bits(data: bytes):
  bits = 0
  for byte in data:
    if byte == 0:
      bits += 8
      continue
    bits += 8 - byte.bit_length()
    break
  return bits


def verify_pow(challenge: bytes, nonce: bytes, difficulty_bits: int):
  _check_difficulty(difficulty_bits)
  return leading_zero_bits(sha3_256(challenge + nonce).digest()) >= difficulty_bits


def proof_of_work(challenge: bytes, difficulty_bits: int, start: int = 0):
  """
  Search for a nonce such that SHA3-256(challenge || nonce) has at least
  `difficulty_bits` leading zero bits. Nonces are 8-byte big-endian counters.
  """
  _check_difficulty(difficulty_bits)
  counter = start
  while True:
    nonce = counter.to_bytes(8, "big")
    if leading_zero_bits(sha3_256(challenge + nonce).digest()) >= difficulty_bits:
      logger.debug(f"Crypto | Solved {difficulty_bits}-bit challenge after {counter - start + 1} attempts")
      return nonce
    counter += 1


# =============================================================================


def _check_key(key: Optional[bytes]):
  if key is None or len(key) != KEY_BYTES:
    raise MalformedKey(KEY_BYTES, 0 if key is None else len(key))


def _check_difficulty(difficulty_bits: int):
  if not 0 <= difficulty_bits <= MAX_POW_DIFFICULTY:
    raise ValueError(f"Difficulty must be within 0 and {MAX_POW_DIFFICULTY} bits")
