"""Source-environment identity provider.

Stands in for a Kubernetes API server acting as an OIDC issuer: pods are
registered against service accounts, and bound service-account tokens are
minted for exactly one audience with a clamped lifetime.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping

from .clock import Clock, SystemClock
from .errors import AudienceEmpty, InvalidName, InvalidTokenRequest, UnknownPod
from .ids import IdSource
from .tokens import (
    REGISTERED_CLAIMS,
    SUPPORTED_ALGORITHMS,
    JwkSet,
    JwtClaims,
    KeyStore,
    SignedJwt,
    decode_unverified,
)
from .web import JsonApp, Request, Response, require_fields

DEFAULT_MIN_TTL = 600
DEFAULT_MAX_TTL = 86400
DEFAULT_TTL = 3600
TOKEN_PATH = "/var/run/secrets/tokens/token"
JWKS_PATH = "/openid/v1/jwks"
DISCOVERY_PATH = "/.well-known/openid-configuration"

_DNS_LABEL = re.compile(r"^[a-z0-9]([-a-z0-9]*[a-z0-9])?$")
_DNS_SUBDOMAIN = re.compile(r"^[a-z0-9]([-a-z0-9.]*[a-z0-9])?$")


def _check_label(kind: str, value: Any) -> None:
    if not isinstance(value, str) or len(value) > 63 or not _DNS_LABEL.match(value):
        raise InvalidName(f"{kind} {value!r} is not a DNS label")


@dataclass(frozen=True)
class ServiceAccount:
    namespace: str
    name: str

    def __post_init__(self) -> None:
        _check_label("namespace", self.namespace)
        _check_label("service account name", self.name)

    @property
    def subject(self) -> str:
        return f"system:serviceaccount:{self.namespace}:{self.name}"


@dataclass(frozen=True)
class PodIdentity:
    service_account: ServiceAccount
    pod_name: str
    pod_uid: str
    # Extra flat claims stamped into this pod's tokens (e.g. an assumed-role ARN
    # for an EKS-style source cluster).
    attributes: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class TokenRequestSpec:
    audience: str
    expiration_seconds: int = DEFAULT_TTL


@dataclass(frozen=True)
class IssueRecord:
    jwt_id: str
    pod_uid: str
    audience: str
    issued_at: int
    expires_at: int


class IdentityProvider:
    def __init__(
        self,
        issuer: str,
        *,
        min_ttl: int = DEFAULT_MIN_TTL,
        max_ttl: int = DEFAULT_MAX_TTL,
        algorithm: str = "ES256",
        clock: Clock | None = None,
        ids: IdSource | None = None,
        key_seed: bytes | str | None = None,
        overlap_seconds: int | None = None,
    ):
        if not 0 < min_ttl <= max_ttl:
            raise ValueError("need 0 < min_ttl <= max_ttl")
        self.issuer = issuer.rstrip("/")
        self.min_ttl = min_ttl
        self.max_ttl = max_ttl
        self.clock = clock or SystemClock()
        self.ids = ids or IdSource()
        self.keystore = KeyStore(
            algorithm,
            overlap_seconds=2 * max_ttl if overlap_seconds is None else overlap_seconds,
            clock=self.clock,
            seed=key_seed,
        )
        self._pods: dict[str, PodIdentity] = {}
        self._audit: list[IssueRecord] = []
        self._lock = threading.RLock()

    # -- registry

    def register_pod(
        self, sa: ServiceAccount, pod_name: str, attributes: Mapping[str, str] | None = None
    ) -> PodIdentity:
        if not isinstance(pod_name, str) or len(pod_name) > 253 or not _DNS_SUBDOMAIN.match(pod_name):
            raise InvalidName(f"pod name {pod_name!r} is not a DNS subdomain")
        attributes = dict(attributes or {})
        for k, v in attributes.items():
            if k in REGISTERED_CLAIMS or k == "kubernetes" or not isinstance(v, str):
                raise InvalidName(f"pod attribute {k!r} is reserved or not a string")
        with self._lock:
            pod = PodIdentity(sa, pod_name, self.ids.uuid4(), attributes)
            while pod.pod_uid in self._pods:
                pod = PodIdentity(sa, pod_name, self.ids.uuid4(), attributes)
            self._pods[pod.pod_uid] = pod
            return pod

    def deregister_pod(self, pod_uid: str) -> None:
        """Outstanding tokens are not revoked; they live until expiry."""
        with self._lock:
            if self._pods.pop(pod_uid, None) is None:
                raise UnknownPod(pod_uid)

    def pod(self, pod_uid: str) -> PodIdentity:
        with self._lock:
            try:
                return self._pods[pod_uid]
            except KeyError:
                raise UnknownPod(pod_uid) from None

    # -- issuance

    def clamp_ttl(self, seconds: int) -> int:
        return max(self.min_ttl, min(self.max_ttl, seconds))

    def issue_bound_token(self, pod: PodIdentity, spec: TokenRequestSpec, now: int | None = None) -> SignedJwt:
        if not isinstance(spec.audience, str):
            raise InvalidTokenRequest("a bound token carries exactly one audience")
        if not spec.audience:
            raise AudienceEmpty("audience must be non-empty")
        ttl = spec.expiration_seconds
        if not isinstance(ttl, int) or isinstance(ttl, bool):
            raise InvalidTokenRequest("expiration_seconds must be an integer")
        ttl = self.clamp_ttl(ttl)
        now = self.clock.now() if now is None else now
        with self._lock:
            if self._pods.get(pod.pod_uid) != pod:
                raise UnknownPod(pod.pod_uid)
            sa = pod.service_account
            claims = JwtClaims(
                issuer=self.issuer,
                subject=sa.subject,
                audience=(spec.audience,),
                expires_at=now + ttl,
                issued_at=now,
                not_before=now,
                jwt_id=self.ids.token_hex(16),
                extra={
                    **pod.attributes,
                    "kubernetes": {
                        "namespace": sa.namespace,
                        "serviceaccount": {"name": sa.name},
                        "pod": {"name": pod.pod_name, "uid": pod.pod_uid},
                    },
                },
            )
            token = self.keystore.mint(claims)
            self._audit.append(IssueRecord(claims.jwt_id, pod.pod_uid, spec.audience, now, now + ttl))
            return token

    # -- publication

    def discovery(self) -> dict[str, Any]:
        return {
            "issuer": self.issuer,
            "jwks_uri": self.issuer + JWKS_PATH,
            "response_types_supported": ["id_token"],
            "subject_types_supported": ["public"],
            "id_token_signing_alg_values_supported": list(SUPPORTED_ALGORITHMS),
        }

    def jwks(self, now: int | None = None) -> JwkSet:
        # Publish the active key even before the first token is minted.
        self.keystore.active
        return self.keystore.jwks(now)

    def rotate(self, now: int | None = None) -> JwkSet:
        _, jwks = self.keystore.rotate(now)
        return jwks

    @property
    def audit_log(self) -> list[IssueRecord]:
        with self._lock:
            return list(self._audit)

    def app(self) -> "IdpApp":
        return IdpApp(self)


def serve_discovery(idp: IdentityProvider) -> dict[str, Any]:
    return idp.discovery()


def serve_jwks(idp: IdentityProvider) -> JwkSet:
    return idp.jwks()


class IdpApp(JsonApp):
    error_status = ((UnknownPod, 404), (InvalidName, 400), (InvalidTokenRequest, 400))

    def __init__(self, idp: IdentityProvider):
        super().__init__()
        self.idp = idp
        self.route("GET", DISCOVERY_PATH, lambda r: Response(200, idp.discovery()))
        self.route("GET", JWKS_PATH, lambda r: Response(200, idp.jwks().to_dict()))
        self.route("POST", "/token", self._token)

    def _token(self, req: Request) -> Response:
        namespace, serviceaccount, pod_uid, audience = require_fields(
            req.body, "namespace", "serviceaccount", "pod_uid", "audience"
        )
        pod = self.idp.pod(pod_uid)
        if (pod.service_account.namespace, pod.service_account.name) != (namespace, serviceaccount):
            raise UnknownPod(f"pod {pod_uid} does not run as {namespace}/{serviceaccount}")
        spec = TokenRequestSpec(audience, req.body.get("expiration_seconds", DEFAULT_TTL))
        token = self.idp.issue_bound_token(pod, spec)
        exp = decode_unverified(token).claims.expires_at
        return Response(200, {"token": str(token), "expiration_timestamp": exp, "path": TOKEN_PATH})
