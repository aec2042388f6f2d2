"""Minting, signing and verification of OIDC-style JWTs, plus key sets.

Only asymmetric algorithms (RS256, ES256) are supported, so the verifying
side never holds anything that can mint.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import math
import secrets
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping
from urllib.parse import urlsplit

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)

from .clock import Clock, SystemClock
from .errors import (
    AudienceMismatch,
    BadSignature,
    Expired,
    InvalidClaims,
    IssuerMismatch,
    Malformed,
    NotYetValid,
    UnknownKeyId,
    UnsupportedAlgorithm,
)

SUPPORTED_ALGORITHMS = ("RS256", "ES256")
DEFAULT_SKEW = 30
REGISTERED_CLAIMS = frozenset({"iss", "sub", "aud", "exp", "iat", "nbf", "jti"})
# Anything that would reveal private key material in a JWK.
PRIVATE_JWK_FIELDS = frozenset({"d", "p", "q", "dp", "dq", "qi", "oth", "k"})

_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    if "=" in text or not text.isascii():
        raise ValueError("padding or non-ascii in base64url segment")
    try:
        data = base64.b64decode(text + "=" * (-len(text) % 4), altchars=b"-_", validate=True)
    except binascii.Error as exc:
        raise ValueError(str(exc)) from None
    # Unused low bits in the last character would otherwise let two texts decode alike.
    if b64url_encode(data) != text:
        raise ValueError("non-canonical base64url encoding")
    return data


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def new_jwt_id() -> str:
    return secrets.token_hex(16)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_claim_value(name: str, value: Any) -> None:
    if isinstance(value, str) or _is_int(value):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidClaims(f"claim {name!r} is not finite")
        return
    if isinstance(value, Mapping):
        for k, v in value.items():
            if not isinstance(k, str) or not k:
                raise InvalidClaims(f"claim {name!r} has a non-string key")
            _check_claim_value(f"{name}.{k}", v)
        return
    raise InvalidClaims(f"claim {name!r} has unsupported type {type(value).__name__}")


@dataclass(frozen=True)
class JwtClaims:
    issuer: str
    subject: str
    audience: tuple[str, ...]
    expires_at: int
    issued_at: int
    not_before: int | None = None
    jwt_id: str = field(default_factory=new_jwt_id)
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if isinstance(self.audience, str):
            object.__setattr__(self, "audience", (self.audience,))
        elif not isinstance(self.audience, tuple):
            object.__setattr__(self, "audience", tuple(self.audience))

    def validate(self) -> None:
        """Raise :class:`InvalidClaims` naming the first broken invariant."""
        parts = urlsplit(self.issuer) if isinstance(self.issuer, str) else None
        if parts is None or parts.scheme not in ("http", "https") or not parts.netloc:
            raise InvalidClaims("issuer must be an http(s) URI")
        if not isinstance(self.subject, str) or not self.subject:
            raise InvalidClaims("subject must be a non-empty string")
        if not self.audience:
            raise InvalidClaims("audience must be non-empty")
        if not all(isinstance(a, str) and a for a in self.audience):
            raise InvalidClaims("every audience entry must be a non-empty string")
        for name in ("expires_at", "issued_at"):
            if not _is_int(getattr(self, name)):
                raise InvalidClaims(f"{name} must be integer unix seconds")
        if self.not_before is not None and not _is_int(self.not_before):
            raise InvalidClaims("not_before must be integer unix seconds")
        if self.expires_at <= self.issued_at:
            raise InvalidClaims("expires_at must be after issued_at")
        if not isinstance(self.jwt_id, str) or not self.jwt_id:
            raise InvalidClaims("jwt_id must be a non-empty string")
        for name, value in self.extra.items():
            if not isinstance(name, str) or not name:
                raise InvalidClaims("extra claim names must be non-empty strings")
            if name in REGISTERED_CLAIMS:
                raise InvalidClaims(f"extra claim {name!r} shadows a registered claim")
            _check_claim_value(name, value)

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = dict(self.extra)
        payload.update(
            iss=self.issuer,
            sub=self.subject,
            aud=list(self.audience),
            exp=self.expires_at,
            iat=self.issued_at,
            jti=self.jwt_id,
        )
        if self.not_before is not None:
            payload["nbf"] = self.not_before
        return payload

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "JwtClaims":
        """Structural parse only; time and audience invariants are the verifier's job."""
        if not isinstance(payload, Mapping):
            raise Malformed("payload is not a JSON object")
        try:
            iss, sub, exp, iat = payload["iss"], payload["sub"], payload["exp"], payload["iat"]
            aud = payload["aud"]
        except KeyError as exc:
            raise Malformed(f"missing claim {exc.args[0]!r}") from None
        if isinstance(aud, str):
            aud = [aud]
        if not (isinstance(iss, str) and isinstance(sub, str) and isinstance(aud, list)):
            raise Malformed("iss/sub/aud have wrong types")
        if not all(isinstance(a, str) for a in aud):
            raise Malformed("aud entries must be strings")
        nbf = payload.get("nbf")
        if not (_is_int(exp) and _is_int(iat) and (nbf is None or _is_int(nbf))):
            raise Malformed("time claims must be integers")
        jti = payload.get("jti", "")
        if not isinstance(jti, str):
            raise Malformed("jti must be a string")
        extra = {k: v for k, v in payload.items() if k not in REGISTERED_CLAIMS}
        return cls(iss, sub, tuple(aud), exp, iat, nbf, jti, extra)


class SignedJwt(str):
    """Compact JWS serialization ``header.payload.signature``."""

    @property
    def segments(self) -> list[str]:
        return self.split(".")

    @property
    def header(self) -> dict[str, Any]:
        return _parse_header(self.segments[0])


def _parse_header(segment: str) -> dict[str, Any]:
    try:
        header = json.loads(b64url_decode(segment))
    except (ValueError, UnicodeDecodeError):
        raise Malformed("header segment is not base64url JSON") from None
    if not isinstance(header, dict):
        raise Malformed("header is not a JSON object")
    return header


# -- keys ---------------------------------------------------------------------


def _int_to_b64(n: int, length: int | None = None) -> str:
    length = length or max(1, (n.bit_length() + 7) // 8)
    return b64url_encode(n.to_bytes(length, "big"))


def _b64_to_int(s: str) -> int:
    return int.from_bytes(b64url_decode(s), "big")


def _public_params(public_key: Any) -> dict[str, str]:
    if isinstance(public_key, rsa.RSAPublicKey):
        nums = public_key.public_numbers()
        return {"kty": "RSA", "n": _int_to_b64(nums.n), "e": _int_to_b64(nums.e)}
    if isinstance(public_key, ec.EllipticCurvePublicKey):
        nums = public_key.public_numbers()
        return {"kty": "EC", "crv": "P-256", "x": _int_to_b64(nums.x, 32), "y": _int_to_b64(nums.y, 32)}
    raise UnsupportedAlgorithm(f"unsupported key type {type(public_key).__name__}")


def jwk_thumbprint(params: Mapping[str, str]) -> str:
    """Key thumbprint over the required public members, used as a stable key id."""
    if params["kty"] == "RSA":
        members = {k: params[k] for k in ("e", "kty", "n")}
    else:
        members = {k: params[k] for k in ("crv", "kty", "x", "y")}
    return b64url_encode(hashlib.sha256(canonical_json(members)).digest())


class SigningKey:
    """A private signing key. Its material has no serialized form."""

    __slots__ = ("key_id", "algorithm", "_private")

    def __init__(self, key_id: str, algorithm: str, private_key: Any):
        if algorithm not in SUPPORTED_ALGORITHMS:
            raise UnsupportedAlgorithm(algorithm)
        expected = rsa.RSAPrivateKey if algorithm == "RS256" else ec.EllipticCurvePrivateKey
        if not isinstance(private_key, expected):
            raise UnsupportedAlgorithm(f"{algorithm} needs a {expected.__name__}")
        if algorithm == "ES256" and not isinstance(private_key.curve, ec.SECP256R1):
            raise UnsupportedAlgorithm("ES256 requires the P-256 curve")
        self.key_id = key_id
        self.algorithm = algorithm
        self._private = private_key

    @classmethod
    def generate(cls, algorithm: str = "ES256", key_id: str | None = None) -> "SigningKey":
        if algorithm == "ES256":
            private = ec.generate_private_key(ec.SECP256R1())
        elif algorithm == "RS256":
            private = rsa.generate_private_key(public_exponent=65537, key_size=2048)
        else:
            raise UnsupportedAlgorithm(algorithm)
        return cls._with_default_kid(algorithm, private, key_id)

    @classmethod
    def from_seed(cls, seed: bytes | str, key_id: str | None = None) -> "SigningKey":
        """Deterministic ES256 key derived from ``seed`` (test and scenario use)."""
        if isinstance(seed, str):
            seed = seed.encode()
        scalar = int.from_bytes(hashlib.sha256(b"fedauth-es256:" + seed).digest(), "big")
        private = ec.derive_private_key(scalar % (_P256_ORDER - 1) + 1, ec.SECP256R1())
        return cls._with_default_kid("ES256", private, key_id)

    @classmethod
    def _with_default_kid(cls, algorithm: str, private: Any, key_id: str | None) -> "SigningKey":
        if key_id is None:
            key_id = jwk_thumbprint(_public_params(private.public_key()))
        return cls(key_id, algorithm, private)

    def public_jwk(self) -> "Jwk":
        return Jwk(self.key_id, self.algorithm, _public_params(self._private.public_key()))

    def sign(self, data: bytes) -> bytes:
        if self.algorithm == "RS256":
            return self._private.sign(data, padding.PKCS1v15(), hashes.SHA256())
        r, s = decode_dss_signature(self._private.sign(data, ec.ECDSA(hashes.SHA256())))
        return r.to_bytes(32, "big") + s.to_bytes(32, "big")

    def __repr__(self) -> str:
        return f"SigningKey(key_id={self.key_id!r}, algorithm={self.algorithm!r})"

    def __getstate__(self):
        raise TypeError("signing keys cannot be serialized")

    def __reduce_ex__(self, protocol):
        raise TypeError("signing keys cannot be serialized")


@dataclass(frozen=True)
class Jwk:
    key_id: str
    algorithm: str
    params: Mapping[str, str]

    def to_dict(self) -> dict[str, str]:
        return {**self.params, "kid": self.key_id, "alg": self.algorithm, "use": "sig"}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Jwk":
        leaked = PRIVATE_JWK_FIELDS & d.keys()
        if leaked:
            raise Malformed(f"JWK carries private members: {sorted(leaked)}")
        try:
            kid, alg, kty = d["kid"], d["alg"], d["kty"]
        except KeyError as exc:
            raise Malformed(f"JWK missing {exc.args[0]!r}") from None
        if alg not in SUPPORTED_ALGORITHMS:
            raise UnsupportedAlgorithm(alg)
        members = ("n", "e") if kty == "RSA" else ("crv", "x", "y")
        if (alg == "RS256") != (kty == "RSA") or any(m not in d for m in members):
            raise Malformed(f"JWK {kid!r} does not match algorithm {alg}")
        return cls(kid, alg, {"kty": kty, **{m: d[m] for m in members}})

    def public_key(self) -> Any:
        p = self.params
        if p["kty"] == "RSA":
            return rsa.RSAPublicNumbers(_b64_to_int(p["e"]), _b64_to_int(p["n"])).public_key()
        return ec.EllipticCurvePublicNumbers(
            _b64_to_int(p["x"]), _b64_to_int(p["y"]), ec.SECP256R1()
        ).public_key()

    def verify(self, signature: bytes, data: bytes) -> bool:
        try:
            key = self.public_key()
            if self.algorithm == "RS256":
                key.verify(signature, data, padding.PKCS1v15(), hashes.SHA256())
            else:
                if len(signature) != 64:
                    return False
                r = int.from_bytes(signature[:32], "big")
                s = int.from_bytes(signature[32:], "big")
                key.verify(encode_dss_signature(r, s), data, ec.ECDSA(hashes.SHA256()))
        except (InvalidSignature, ValueError):
            return False
        return True


@dataclass(frozen=True)
class JwkSet:
    keys: tuple[Jwk, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "keys", tuple(self.keys))
        ids = [k.key_id for k in self.keys]
        if len(set(ids)) != len(ids):
            raise Malformed("duplicate key ids in key set")

    def __len__(self) -> int:
        return len(self.keys)

    def __iter__(self) -> Iterator[Jwk]:
        return iter(self.keys)

    @property
    def key_ids(self) -> list[str]:
        return [k.key_id for k in self.keys]

    def get(self, key_id: str) -> Jwk | None:
        for k in self.keys:
            if k.key_id == key_id:
                return k
        return None

    def to_dict(self) -> dict[str, Any]:
        return {"keys": [k.to_dict() for k in self.keys]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "JwkSet":
        if not isinstance(doc, Mapping) or not isinstance(doc.get("keys"), list):
            raise Malformed('JWKS document must look like {"keys": [...]}')
        return cls(tuple(Jwk.from_dict(k) for k in doc["keys"]))

    @classmethod
    def from_json(cls, text: str | bytes) -> "JwkSet":
        try:
            doc = json.loads(text)
        except ValueError:
            raise Malformed("JWKS is not JSON") from None
        return cls.from_dict(doc)


# -- mint / verify ------------------------------------------------------------


def mint_jwt(claims: JwtClaims, key: SigningKey) -> SignedJwt:
    if key.algorithm not in SUPPORTED_ALGORITHMS:
        raise UnsupportedAlgorithm(key.algorithm)
    claims.validate()
    header = {"alg": key.algorithm, "kid": key.key_id, "typ": "JWT"}
    signing_input = (
        b64url_encode(canonical_json(header)) + "." + b64url_encode(canonical_json(claims.to_payload()))
    )
    signature = key.sign(signing_input.encode("ascii"))
    return SignedJwt(signing_input + "." + b64url_encode(signature))


def _split(token: str) -> tuple[str, str, str]:
    if not isinstance(token, str):
        raise Malformed("token must be a string")
    parts = token.split(".")
    if len(parts) != 3 or not all(parts[:2]):
        raise Malformed(f"expected 3 dot-separated segments, got {len(parts)}")
    return parts[0], parts[1], parts[2]


def _parse_payload(segment: str) -> JwtClaims:
    try:
        payload = json.loads(b64url_decode(segment))
    except (ValueError, UnicodeDecodeError):
        raise Malformed("payload segment is not base64url JSON") from None
    return JwtClaims.from_payload(payload)


@dataclass(frozen=True)
class UnverifiedToken:
    """Header and claims read without any signature check. Not for authorization."""

    header: Mapping[str, Any]
    claims: JwtClaims

    @property
    def unverified(self) -> bool:
        return True

    def __iter__(self):
        return iter((self.header, self.claims))


def decode_unverified(token: str) -> UnverifiedToken:
    h, p, _ = _split(token)
    return UnverifiedToken(_parse_header(h), _parse_payload(p))


def verify_jwt(
    token: str,
    keys: JwkSet,
    expected_issuer: str,
    expected_audience: str,
    now: int,
    skew: int = DEFAULT_SKEW,
) -> JwtClaims:
    """Verify ``token`` and return its claims.

    Checks run in a fixed order (key id, signature, issuer, audience, time
    window) and the first failing one is raised. The payload is not parsed
    until the signature has been accepted.
    """
    h, p, s = _split(token)
    header = _parse_header(h)
    jwk = keys.get(header.get("kid")) if isinstance(header.get("kid"), str) else None
    if jwk is None:
        raise UnknownKeyId(f"no key {header.get('kid')!r} in key set")
    if header.get("alg") != jwk.algorithm:
        raise BadSignature(f"header alg {header.get('alg')!r} does not match key alg {jwk.algorithm}")
    try:
        signature = b64url_decode(s)
    except ValueError:
        raise BadSignature("signature segment is not base64url") from None
    if not jwk.verify(signature, f"{h}.{p}".encode("ascii")):
        raise BadSignature("signature does not verify")
    claims = _parse_payload(p)
    if claims.issuer != expected_issuer:
        raise IssuerMismatch(f"iss {claims.issuer!r} != {expected_issuer!r}")
    if expected_audience not in claims.audience:
        raise AudienceMismatch(f"{expected_audience!r} not in aud {list(claims.audience)!r}")
    if now >= claims.expires_at + skew:
        raise Expired(f"expired at {claims.expires_at} (now {now}, skew {skew})")
    if claims.not_before is not None and now < claims.not_before - skew:
        raise NotYetValid(f"not valid before {claims.not_before} (now {now}, skew {skew})")
    return claims


# -- keystore -----------------------------------------------------------------


class KeyStore:
    """An issuer's signing keys: one active key plus recently retired ones.

    Retired public keys stay published for ``overlap_seconds`` after rotation
    so tokens minted just before a rotation keep verifying. Minting and
    rotation share a lock, so no token is signed by a key that is not in the
    published set.
    """

    def __init__(
        self,
        algorithm: str = "ES256",
        overlap_seconds: int = 7200,
        clock: Clock | None = None,
        seed: bytes | str | None = None,
    ):
        if algorithm not in SUPPORTED_ALGORITHMS:
            raise UnsupportedAlgorithm(algorithm)
        if seed is not None and algorithm != "ES256":
            raise UnsupportedAlgorithm("seeded keys are only available for ES256")
        self.algorithm = algorithm
        self.overlap_seconds = overlap_seconds
        self.clock = clock or SystemClock()
        self._seed = seed.encode() if isinstance(seed, str) else seed
        self._generation = 0
        self._active: SigningKey | None = None
        self._retired: list[tuple[Jwk, int]] = []
        self._lock = threading.RLock()

    def _new_key(self) -> SigningKey:
        self._generation += 1
        if self._seed is not None:
            return SigningKey.from_seed(self._seed + b":%d" % self._generation)
        return SigningKey.generate(self.algorithm)

    @property
    def active(self) -> SigningKey:
        with self._lock:
            if self._active is None:
                self._active = self._new_key()
            return self._active

    def rotate(self, now: int | None = None) -> tuple[SigningKey, JwkSet]:
        now = self.clock.now() if now is None else now
        with self._lock:
            if self._active is not None:
                self._retired.append((self._active.public_jwk(), now))
            self._active = self._new_key()
            return self._active, self.jwks(now)

    def jwks(self, now: int | None = None) -> JwkSet:
        now = self.clock.now() if now is None else now
        with self._lock:
            self._retired = [(k, t) for k, t in self._retired if now < t + self.overlap_seconds]
            published = [k for k, _ in self._retired]
            if self._active is not None:
                published.append(self._active.public_jwk())
            return JwkSet(tuple(published))

    def mint(self, claims: JwtClaims) -> SignedJwt:
        with self._lock:
            return mint_jwt(claims, self.active)


def rotate_key(keystore: KeyStore, now: int | None = None) -> tuple[SigningKey, JwkSet]:
    return keystore.rotate(now)
