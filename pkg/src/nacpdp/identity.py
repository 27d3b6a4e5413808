"""User authentication against a directory, guest registration, device profiling.

The external directory (AD/LDAP/RADIUS in a real deployment) is abstracted
behind the Directory class, which ships file-backed: one JSON record per line.
Secrets are never stored in clear; the verifier format is
``pbkdf2-sha256$<iterations>$<salt-hex>$<hash-hex>`` and is stable across runs.

Guests are a directory overlay with an expiry; non-authenticating devices
(printers, IP phones) are admitted through a MAC allowlist that maps the
canonical MAC to a profile role.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from .clock import Clock
from .model import IdentityKind, ModelError, UserIdentity, canonical_mac

DEFAULT_PBKDF2_ITERATIONS = 10_000


class AuthMethod(str, Enum):
    PASSWORD = "password"
    TOKEN = "token"
    MAC_ONLY = "mac-only"


class FailReason(str, Enum):
    UNKNOWN_USER = "unknown-user"
    BAD_CREDENTIAL = "bad-credential"
    DISABLED = "disabled"
    EXPIRED = "expired"


@dataclass(frozen=True)
class Credential:
    method: AuthMethod
    principal: str
    secret: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "method", AuthMethod(self.method))
        if self.method == AuthMethod.MAC_ONLY:
            if self.secret is not None:
                raise ModelError("mac-only credentials carry no secret")
            object.__setattr__(self, "principal", canonical_mac(self.principal))
        elif self.secret is None:
            raise ModelError(f"{self.method.value} credentials require a secret")

    def to_json(self) -> dict:
        doc = {"method": self.method.value, "principal": self.principal}
        if self.secret is not None:
            doc["secret"] = self.secret
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Credential":
        return cls(method=doc["method"], principal=doc["principal"], secret=doc.get("secret"))


@dataclass(frozen=True)
class Authenticated:
    identity: UserIdentity

    @property
    def ok(self) -> bool:
        return True


@dataclass(frozen=True)
class Failed:
    reason: FailReason

    @property
    def ok(self) -> bool:
        return False


AuthResult = Union[Authenticated, Failed]


def make_verifier(secret: str, *, salt: Optional[bytes] = None,
                  iterations: int = DEFAULT_PBKDF2_ITERATIONS) -> str:
    if salt is None:
        salt = secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", secret.encode(), salt, iterations)
    return f"pbkdf2-sha256${iterations}${salt.hex()}${digest.hex()}"


def check_verifier(secret: str, verifier: str) -> bool:
    try:
        scheme, iters, salt_hex, digest_hex = verifier.split("$")
        if scheme != "pbkdf2-sha256":
            return False
        expected = bytes.fromhex(digest_hex)
        got = hashlib.pbkdf2_hmac("sha256", secret.encode(), bytes.fromhex(salt_hex), int(iters))
    except (ValueError, TypeError):
        return False
    return hmac.compare_digest(expected, got)


@dataclass(frozen=True)
class DirectoryRecord:
    user_id: str
    secret_verifier: str
    roles: tuple[str, ...]
    enabled: bool = True
    display_name: str = ""
    kind: IdentityKind = IdentityKind.EMPLOYEE

    def __post_init__(self):
        object.__setattr__(self, "kind", IdentityKind(self.kind))
        object.__setattr__(self, "roles", tuple(self.roles))
        if not self.user_id:
            raise ModelError("user_id must be non-empty")
        if not self.roles:
            raise ModelError("directory records carry at least one role")
        if "$" not in self.secret_verifier:
            raise ModelError("secret_verifier must be a salted hash, not a clear secret")

    def identity(self) -> UserIdentity:
        return UserIdentity(
            user_id=self.user_id,
            display_name=self.display_name or self.user_id,
            roles=self.roles,
            kind=self.kind,
        )

    def to_json(self) -> dict:
        return {
            "user_id": self.user_id,
            "secret_verifier": self.secret_verifier,
            "roles": list(self.roles),
            "enabled": self.enabled,
            "display_name": self.display_name,
            "kind": self.kind.value,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DirectoryRecord":
        return cls(
            user_id=doc["user_id"],
            secret_verifier=doc["secret_verifier"],
            roles=tuple(doc["roles"]),
            enabled=bool(doc.get("enabled", True)),
            display_name=doc.get("display_name", ""),
            kind=doc.get("kind", "employee"),
        )


@dataclass(frozen=True)
class GuestRegistration:
    name: str
    email: str
    sponsor: str
    expiry_ms: int

    def __post_init__(self):
        if not self.email:
            raise ModelError("guest registration requires an email")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "email": self.email,
            "sponsor": self.sponsor,
            "expiry_ms": self.expiry_ms,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GuestRegistration":
        return cls(
            name=doc["name"],
            email=doc["email"],
            sponsor=doc.get("sponsor", ""),
            expiry_ms=int(doc["expiry_ms"]),
        )


@dataclass(frozen=True)
class GuestEntry:
    record: DirectoryRecord
    registration: GuestRegistration


class Directory:
    """User store plus guest overlay. Reads are lock-free on immutable records;
    guest registration is serialized behind a single writer lock."""

    def __init__(self, records: Optional[list[DirectoryRecord]] = None):
        self._records: dict[str, DirectoryRecord] = {}
        self._guests: dict[str, GuestEntry] = {}
        self._write_lock = threading.Lock()
        for rec in records or []:
            self.add_record(rec)

    def add_record(self, rec: DirectoryRecord) -> None:
        with self._write_lock:
            if rec.user_id in self._records:
                raise ModelError(f"duplicate user_id in directory: {rec.user_id}")
            self._records[rec.user_id] = rec

    def set_enabled(self, user_id: str, enabled: bool) -> None:
        with self._write_lock:
            rec = self._records.get(user_id)
            if rec is None:
                raise KeyError(user_id)
            self._records[user_id] = DirectoryRecord(
                user_id=rec.user_id,
                secret_verifier=rec.secret_verifier,
                roles=rec.roles,
                enabled=enabled,
                display_name=rec.display_name,
                kind=rec.kind,
            )

    def lookup(self, principal: str) -> Optional[DirectoryRecord]:
        return self._records.get(principal)

    def guest_entry(self, principal: str) -> Optional[GuestEntry]:
        return self._guests.get(principal)

    def register_guest(self, reg: GuestRegistration, clock: Clock) -> tuple[UserIdentity, Credential]:
        """Create a guest account and return its identity plus the issued
        token credential. Rejects registrations whose expiry is not in the
        future."""
        now = clock.now_ms()
        if reg.expiry_ms <= now:
            raise ModelError(f"guest expiry {reg.expiry_ms} is not in the future (now {now})")
        token = secrets.token_urlsafe(12)
        user_id = f"guest:{reg.email}"
        record = DirectoryRecord(
            user_id=user_id,
            secret_verifier=make_verifier(token),
            roles=("guest",),
            enabled=True,
            display_name=reg.name,
            kind=IdentityKind.GUEST,
        )
        with self._write_lock:
            self._guests[user_id] = GuestEntry(record=record, registration=reg)
        return record.identity(), Credential(method=AuthMethod.TOKEN, principal=user_id, secret=token)

    def digest(self) -> str:
        """Stable hash over the directory state (records + guest overlay)."""
        doc = {
            "records": sorted(
                json.dumps(r.to_json(), sort_keys=True) for r in self._records.values()
            ),
            "guests": sorted(
                json.dumps(
                    {"record": g.record.to_json(), "expiry_ms": g.registration.expiry_ms},
                    sort_keys=True,
                )
                for g in self._guests.values()
            ),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def restore_guest(self, record: DirectoryRecord, reg: GuestRegistration) -> None:
        """Reinstate a guest entry from an audit record during replay."""
        with self._write_lock:
            self._guests[record.user_id] = GuestEntry(record=record, registration=reg)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Directory":
        directory = cls()
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                directory.add_record(DirectoryRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ModelError) as exc:
                raise ModelError(f"{path}:{lineno}: bad directory record: {exc}") from None
        return directory

    def dump(self, path: Union[str, Path]) -> None:
        lines = [json.dumps(rec.to_json(), sort_keys=True) for rec in self._records.values()]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def authenticate(cred: Credential, directory: Directory, clock: Clock) -> AuthResult:
    """Verify a credential against the directory (guest overlay included).

    Pure in (credential, directory state, clock): the same inputs always yield
    the same outcome.
    """
    guest = directory.guest_entry(cred.principal)
    if guest is not None:
        if clock.now_ms() >= guest.registration.expiry_ms:
            return Failed(FailReason.EXPIRED)
        if cred.secret is None or not check_verifier(cred.secret, guest.record.secret_verifier):
            return Failed(FailReason.BAD_CREDENTIAL)
        return Authenticated(guest.record.identity())

    record = directory.lookup(cred.principal)
    if record is None:
        return Failed(FailReason.UNKNOWN_USER)
    if not record.enabled:
        return Failed(FailReason.DISABLED)
    if cred.secret is None or not check_verifier(cred.secret, record.secret_verifier):
        return Failed(FailReason.BAD_CREDENTIAL)
    return Authenticated(record.identity())


def profile_device(mac: str, allowlist: dict[str, str]) -> AuthResult:
    """Admit a non-authenticating device (printer, IP phone) by MAC allowlist.

    The allowlist maps canonical MAC -> role name. Malformed MACs raise.
    """
    mac = canonical_mac(mac)
    role = allowlist.get(mac)
    if role is None:
        return Failed(FailReason.UNKNOWN_USER)
    return Authenticated(
        UserIdentity(
            user_id=f"device:{mac}",
            display_name=f"device {mac}",
            roles=(role,),
            kind=IdentityKind.DEVICE_PROFILE,
        )
    )


def load_allowlist(path: Union[str, Path]) -> dict[str, str]:
    doc = json.loads(Path(path).read_text())
    return {canonical_mac(mac): role for mac, role in doc.items()}
