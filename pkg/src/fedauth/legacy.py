"""Static-key request signing, the baseline the federated model replaces.

A minimal SigV4-shaped scheme: canonical request, string-to-sign, HMAC-SHA256
key derivation chain over date/region/service. Keys never expire and
verification never looks at the clock; that is the point of the baseline.
"""

from __future__ import annotations

import hashlib
import hmac
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence
from urllib.parse import quote

from .errors import MissingRequiredHeader, UnknownKey

ALGORITHM = "AWS4-HMAC-SHA256"
TERMINATOR = "aws4_request"

_AUTH_RE = re.compile(
    r"^AWS4-HMAC-SHA256 Credential=(?P<akid>[^/\s]+)/(?P<date>\d{8})/(?P<region>[^/\s]+)/"
    r"(?P<service>[^/\s]+)/aws4_request, SignedHeaders=(?P<signed>[a-z0-9-]+(?:;[a-z0-9-]+)*), "
    r"Signature=(?P<sig>[0-9a-f]{64})$"
)
_SPACES = re.compile(r"\s+")


@dataclass(frozen=True)
class HttpRequest:
    method: str
    path: str
    headers: Mapping[str, str]
    query: Sequence[tuple[str, str]] = ()
    body: bytes = b""


@dataclass(frozen=True)
class StaticKey:
    access_key_id: str
    secret_key: str = field(repr=False)
    created_at: int = 0
    permissions: tuple[str, ...] = ()


class StaticKeyStore:
    def __init__(self, keys: Sequence[StaticKey] = ()):
        self._keys: dict[str, StaticKey] = {}
        for k in keys:
            self.add(k)

    def add(self, key: StaticKey) -> None:
        if key.access_key_id in self._keys:
            raise ValueError(f"duplicate access key id {key.access_key_id!r}")
        self._keys[key.access_key_id] = key

    def get(self, access_key_id: str) -> StaticKey | None:
        return self._keys.get(access_key_id)

    def __len__(self) -> int:
        return len(self._keys)


@dataclass(frozen=True)
class CanonicalRequest:
    method: str
    path: str
    query: str
    headers: tuple[tuple[str, str], ...]
    signed_headers: tuple[str, ...]
    payload_hash: str

    def serialize(self) -> str:
        header_block = "".join(f"{k}:{v}\n" for k, v in self.headers)
        return "\n".join(
            [self.method, self.path, self.query, header_block, ";".join(self.signed_headers), self.payload_hash]
        )


def _uri_encode(value: str, safe: str = "") -> str:
    return quote(value, safe="-_.~" + safe)


def _normalized_headers(request: HttpRequest) -> dict[str, str]:
    merged: dict[str, list[str]] = {}
    for name, value in request.headers.items():
        merged.setdefault(name.strip().lower(), []).append(_SPACES.sub(" ", str(value).strip()))
    return {k: ",".join(v) for k, v in merged.items()}


def canonicalize(request: HttpRequest, signed_headers: Sequence[str] | None = None) -> CanonicalRequest:
    """Normalize ``request``. ``signed_headers`` restricts which headers take part
    (verification passes the list from the Authorization header)."""
    headers = _normalized_headers(request)
    if "host" not in headers:
        raise MissingRequiredHeader("host")
    if "x-amz-date" not in headers and "date" not in headers:
        raise MissingRequiredHeader("x-amz-date or date")
    if signed_headers is not None:
        missing = [h for h in signed_headers if h not in headers]
        if missing:
            raise MissingRequiredHeader(", ".join(missing))
        headers = {h: headers[h] for h in signed_headers}
    names = tuple(sorted(headers))
    query = "&".join(
        f"{k}={v}" for k, v in sorted((_uri_encode(k), _uri_encode(v)) for k, v in request.query)
    )
    return CanonicalRequest(
        method=request.method.upper(),
        path=_uri_encode(request.path or "/", safe="/"),
        query=query,
        headers=tuple((n, headers[n]) for n in names),
        signed_headers=names,
        payload_hash=hashlib.sha256(request.body).hexdigest(),
    )


def request_timestamp(request: HttpRequest) -> str:
    headers = _normalized_headers(request)
    return headers.get("x-amz-date") or headers["date"]


def credential_scope(date: str, region: str, service: str) -> str:
    return f"{date}/{region}/{service}/{TERMINATOR}"


def string_to_sign(canonical: CanonicalRequest, timestamp: str, scope: str) -> str:
    digest = hashlib.sha256(canonical.serialize().encode()).hexdigest()
    return "\n".join([ALGORITHM, timestamp, scope, digest])


def derive_signing_key(secret: str, date: str, region: str, service: str) -> bytes:
    k = ("AWS4" + secret).encode()
    for part in (date, region, service, TERMINATOR):
        k = hmac.new(k, part.encode(), hashlib.sha256).digest()
    return k


def _signature(request: HttpRequest, secret: str, date: str, region: str, service: str, signed=None) -> tuple[str, CanonicalRequest]:
    canonical = canonicalize(request, signed)
    sts = string_to_sign(canonical, request_timestamp(request), credential_scope(date, region, service))
    key = derive_signing_key(secret, date, region, service)
    return hmac.new(key, sts.encode(), hashlib.sha256).hexdigest(), canonical


def sign(
    request: HttpRequest,
    key: StaticKey | str,
    date: str,
    region: str,
    service: str,
    keystore: StaticKeyStore | None = None,
) -> str:
    """Return the Authorization header value for ``request``.

    ``key`` is either a :class:`StaticKey` or an access key id looked up in
    ``keystore``.
    """
    if isinstance(key, str):
        found = keystore.get(key) if keystore is not None else None
        if found is None:
            raise UnknownKey(key)
        key = found
    signature, canonical = _signature(request, key.secret_key, date, region, service)
    return (
        f"{ALGORITHM} Credential={key.access_key_id}/{credential_scope(date, region, service)}, "
        f"SignedHeaders={';'.join(canonical.signed_headers)}, Signature={signature}"
    )


def verify(request: HttpRequest, header: str, keystore: StaticKeyStore, now: int | None = None) -> bool:
    """Recompute and compare the signature. ``now`` is accepted and ignored:
    static keys carry no expiry, so an old signature from a stolen key passes."""
    m = _AUTH_RE.match(header or "")
    if m is None:
        return False
    key = keystore.get(m["akid"])
    if key is None:
        return False
    signed = m["signed"].split(";")
    if "host" not in signed:
        return False
    try:
        if request_timestamp(request)[:8] != m["date"] and "x-amz-date" in _normalized_headers(request):
            return False
        expected, _ = _signature(request, key.secret_key, m["date"], m["region"], m["service"], signed)
    except MissingRequiredHeader:
        return False
    return hmac.compare_digest(expected, m["sig"])
