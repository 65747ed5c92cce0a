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
Test certificate authority and record verification.

Chains are one level deep: the authority signs certificates binding an agent
id to its public key and to the certification strings it attests.
"""

from attrs import evolve
from typing import AbstractSet, Iterable, Optional, Set, Union

from acnbp import logger
from acnbp.lib.crypto import KeyPair, generate_keypair, sign, verify
from acnbp.lib.errors import MalformedKey
from acnbp.modules.core.schema import AgentId, ANRI, Certificate

__all__ = (
  "CertificateAuthority",
  "verify_certificate",
  "verify_anri",
)


class CertificateAuthority:
  def __init__(self, name: str = "acnbp-test-ca", seed: Union[bytes, str, int, None] = None):
    self.name     = name
    self.keypair: KeyPair = generate_keypair(seed if seed is not None else f"ca/{name}")
    self.revoked: Set[int] = set()
    self._serial  = 0


  @property
  def root(self):
    return self.keypair.public


  def issue(self, subject: AgentId, subject_key: bytes, certifications: Iterable[str] = ()):
    self._serial += 1
    cert = Certificate(
      subject=subject,
      subject_key=subject_key,
      issuer=self.name,
      certifications=frozenset(certifications),
      serial=self._serial,
    )
    cert = evolve(cert, signature=sign(self.keypair.secret, cert.preimage()))
    logger.debug(f"CA | Issued certificate #{cert.serial} to {subject}")
    return cert


  def revoke_certificate(self, cert: Union[Certificate, int]):
    serial = cert.serial if isinstance(cert, Certificate) else cert
    self.revoked.add(serial)
    logger.info(f"CA | Revoked certificate #{serial}")


  def is_revoked(self, cert: Certificate):
    return cert.serial in self.revoked


def verify_certificate(cert: Certificate, ca_root: bytes, revoked: Optional[AbstractSet[int]] = None):
  if revoked and cert.serial in revoked:
    return False
  try:
    return verify(ca_root, cert.preimage(), cert.signature)
  except MalformedKey:
    return False


def verify_anri(anri: ANRI, ca_root: bytes, revoked: Optional[AbstractSet[int]] = None):
  """
  Check a record independently of any registry.

  The record must carry a valid self-signature, a certificate from `ca_root`
  naming the record's id and key, and attestation for every certification
  its capabilities claim.
  """
  cert = anri.security.certificate
  if not anri.verify_signature():
    return False
  if not verify_certificate(cert, ca_root, revoked):
    return False
  if cert.subject != anri.id or cert.subject_key != anri.security.public_key:
    return False
  return all(cap.security.certifications <= cert.certifications for cap in anri.capabilities)
