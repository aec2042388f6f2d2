"""Workload side of the federated credential exchange.

The client holds no signing key and no long-lived secret. It asks its local
IdP for an audience-bound token, trades it at the target STS for a native
credential, drops the token, and caches only the short-lived credential.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .clock import Clock, SystemClock
from .errors import ExchangeFailed, TokenAcquisitionFailed, TokenError, TransportError
from .idp import DEFAULT_MIN_TTL, DEFAULT_TTL
from .sts import MAX_CREDENTIAL_TTL, NativeCredential
from .tokens import SignedJwt, decode_unverified
from .web import Response, Transport

log = logging.getLogger(__name__)

FLOWS = ("assume-role", "pool-exchange")


@dataclass(frozen=True)
class WorkloadConfig:
    namespace: str
    serviceaccount: str
    pod_uid: str
    idp_endpoint: str
    sts_endpoint: str
    audience: str
    flow: str = "assume-role"
    role: str | None = None
    pool: str | None = None
    provider: str | None = None
    service_account: str | None = None
    expiration_seconds: int = DEFAULT_TTL
    refresh_margin: int = 60

    def __post_init__(self) -> None:
        if self.flow not in FLOWS:
            raise ValueError(f"flow must be one of {FLOWS}")
        if self.flow == "assume-role" and not self.role:
            raise ValueError("assume-role flow needs a role")
        if self.flow == "pool-exchange" and not (self.pool and self.provider and self.service_account):
            raise ValueError("pool-exchange flow needs pool, provider and service_account")
        if not 0 <= self.refresh_margin < DEFAULT_MIN_TTL:
            raise ValueError(f"refresh_margin must be in [0, {DEFAULT_MIN_TTL})")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WorkloadConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown workload config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "WorkloadConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})


class WorkloadClient:
    def __init__(self, config: WorkloadConfig, transport: Transport, clock: Clock | None = None):
        self.config = config
        self.transport = transport
        self.clock = clock or SystemClock()
        self.exchanges = 0
        self._credential: NativeCredential | None = None
        self._lock = threading.Lock()

    # -- step 1

    def get_oidc_token(self) -> SignedJwt:
        cfg = self.config
        try:
            resp = self.transport.post(
                cfg.idp_endpoint.rstrip("/") + "/token",
                {
                    "namespace": cfg.namespace,
                    "serviceaccount": cfg.serviceaccount,
                    "pod_uid": cfg.pod_uid,
                    "audience": cfg.audience,
                    "expiration_seconds": cfg.expiration_seconds,
                },
            )
        except TransportError as exc:
            raise TokenAcquisitionFailed(str(exc)) from None
        token = resp.body.get("token") if resp.ok else None
        if not isinstance(token, str) or not token:
            raise TokenAcquisitionFailed(f"IdP answered {resp.status} {resp.body.get('error', '')}".strip())
        try:
            audience = decode_unverified(token).claims.audience
        except TokenError as exc:
            raise TokenAcquisitionFailed(f"IdP returned an unreadable token: {exc}") from None
        if list(audience) != [cfg.audience]:
            raise TokenAcquisitionFailed(f"IdP returned a token for {list(audience)}")
        return SignedJwt(token)

    # -- steps 2-4

    def _post(self, path: str, body: Mapping[str, Any]) -> Response:
        url = self.config.sts_endpoint.rstrip("/") + path
        for attempt in (1, 2):
            try:
                return self.transport.post(url, body)
            except TransportError as exc:
                if attempt == 2:
                    raise ExchangeFailed(0, f"Unreachable: {exc}") from None
                log.info("retrying %s after transport failure: %s", url, exc)
        raise AssertionError("unreachable")

    @staticmethod
    def _expect_ok(resp: Response) -> Mapping[str, Any]:
        if resp.status != 200:
            raise ExchangeFailed(resp.status, str(resp.body.get("error", "")))
        return resp.body

    def federated_exchange(self) -> NativeCredential:
        cfg = self.config
        token = self.get_oidc_token()
        try:
            if cfg.flow == "assume-role":
                body = self._expect_ok(self._post("/v1/assume-role", {"token": token, "role": cfg.role}))
            else:
                fed = self._expect_ok(
                    self._post("/v1/token-exchange", {"token": token, "pool": cfg.pool, "provider": cfg.provider})
                )
                body = self._expect_ok(
                    self._post(
                        "/v1/impersonate",
                        {"federated_token": fed.get("federated_token"), "account": cfg.service_account},
                    )
                )
        finally:
            # The identity token is single-purpose; nothing keeps a reference to it.
            del token
        self.exchanges += 1
        try:
            credential = NativeCredential.from_dict(body)
        except (KeyError, TypeError, ValueError):
            raise ExchangeFailed(200, "MalformedResponse") from None
        if credential.lifetime > MAX_CREDENTIAL_TTL or credential.lifetime <= 0:
            raise ExchangeFailed(200, "CredentialLifetimeOutOfBounds")
        return credential

    # -- step 5

    def credential(self) -> NativeCredential:
        with self._lock:
            now = self.clock.now()
            cached = self._credential
            if cached is None or now >= cached.expires_at - self.config.refresh_margin:
                self._credential = None
                self._credential = self.federated_exchange()
            return self._credential

    def access_resource(self, resource: str) -> bool:
        cred = self.credential()
        try:
            resp = self._post(
                "/v1/resource/check",
                {
                    "credential_id": cred.credential_id,
                    "secret": cred.secret,
                    "session_token": cred.session_token,
                    "resource": resource,
                },
            )
        except ExchangeFailed:
            return False
        return resp.ok and resp.body.get("decision") == "allow"

    def state_dump(self) -> dict[str, Any]:
        """Everything the client would persist: its config and the cached credential."""
        cred = self._credential
        return {
            "config": dataclasses.asdict(self.config),
            "credential": cred.to_dict() if cred is not None else None,
        }


def get_oidc_token(cfg: WorkloadConfig, transport: Transport) -> SignedJwt:
    return WorkloadClient(cfg, transport).get_oidc_token()


def federated_exchange(cfg: WorkloadConfig, transport: Transport) -> NativeCredential:
    return WorkloadClient(cfg, transport).federated_exchange()
