"""Relying-party security token service.

Two trust flavours share one registry of OIDC trust anchors:

* role trust policies (``AssumeRoleWithWebIdentity`` with ``StringEquals``
  claim conditions), and
* workload identity pools whose providers gate tokens with an attribute
  condition, project attributes through a mapping, and allow impersonation
  of one linked service account.

Every path that does not end in an issued credential raises a
:class:`~fedauth.errors.Denied` subclass, and every attempt, successful or
not, is written to the audit log.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import hmac
import logging
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterator, Mapping

from .clock import Clock, SystemClock
from .conditions import (
    AssertionContext,
    AttributeMapping,
    ConditionExpr,
    StringEqualsCondition,
    apply_mapping,
    eval_condition,
    eval_string_equals,
)
from .errors import (
    AudienceMismatch,
    ConditionDenied,
    Denied,
    DuplicateIssuer,
    Expired,
    ExpiredFederatedToken,
    FedAuthError,
    JwksUnreachable,
    MappingFailed,
    MissingAttribute,
    NotAuthorized,
    PolicyError,
    TokenError,
    TransportError,
    UnknownKeyId,
    UnknownProvider,
    UnknownRole,
    VerificationFailed,
    outcome_of,
)
from .ids import IdSource
from .tokens import DEFAULT_SKEW, JwkSet, JwtClaims, decode_unverified, verify_jwt
from .web import Transport

log = logging.getLogger(__name__)

ASSUME_ROLE_ACTION = "sts:AssumeRoleWithWebIdentity"
MAX_CREDENTIAL_TTL = 3600
DEFAULT_JWKS_CACHE_TTL = 300
SUBJECT_ATTRIBUTE = "google.subject"


def _digest(secret: str) -> str:
    return hashlib.sha256(secret.encode()).hexdigest()


# -- configuration types ------------------------------------------------------


@dataclass(frozen=True)
class OidcProviderRegistration:
    provider_id: str
    issuer: str
    audiences: tuple[str, ...]
    jwks_uri: str | None = None
    jwks: JwkSet | None = None
    jwks_cache_ttl: int = DEFAULT_JWKS_CACHE_TTL

    def __post_init__(self) -> None:
        if isinstance(self.audiences, str):
            object.__setattr__(self, "audiences", (self.audiences,))
        else:
            object.__setattr__(self, "audiences", tuple(self.audiences))
        if not self.provider_id or not self.issuer:
            raise PolicyError("provider_id and issuer are required")
        if not self.audiences or not all(isinstance(a, str) and a for a in self.audiences):
            raise PolicyError(f"provider {self.provider_id!r} needs a non-empty audience list")


@dataclass(frozen=True)
class TrustPolicy:
    """One ``Allow`` statement of a role's trust policy."""

    role_name: str
    federated_principal: str
    condition: StringEqualsCondition
    scope: tuple[str, ...] = ()
    action: str = ASSUME_ROLE_ACTION

    def __post_init__(self) -> None:
        if self.action != ASSUME_ROLE_ACTION:
            raise PolicyError(f"unsupported action {self.action!r}")
        object.__setattr__(self, "scope", tuple(self.scope))


@dataclass(frozen=True)
class ProviderConfig:
    provider_id: str
    attribute_condition: ConditionExpr
    attribute_mapping: AttributeMapping
    service_account: str | None = None
    scope: tuple[str, ...] = ()
    aws_account_id: str | None = None

    def __post_init__(self) -> None:
        if SUBJECT_ATTRIBUTE not in self.attribute_mapping:
            raise PolicyError(f"provider {self.provider_id!r} must map {SUBJECT_ATTRIBUTE}")
        object.__setattr__(self, "scope", tuple(self.scope))


@dataclass(frozen=True)
class WorkloadIdentityPool:
    pool_id: str
    providers: tuple[ProviderConfig, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "providers", tuple(self.providers))
        ids = [p.provider_id for p in self.providers]
        if len(ids) != len(set(ids)):
            raise PolicyError(f"duplicate provider ids in pool {self.pool_id!r}")

    def get(self, provider_id: str) -> ProviderConfig | None:
        return next((p for p in self.providers if p.provider_id == provider_id), None)

    def with_provider(self, cfg: ProviderConfig) -> "WorkloadIdentityPool":
        rest = tuple(p for p in self.providers if p.provider_id != cfg.provider_id)
        return WorkloadIdentityPool(self.pool_id, rest + (cfg,))

    def without(self, provider_id: str) -> "WorkloadIdentityPool":
        return WorkloadIdentityPool(self.pool_id, tuple(p for p in self.providers if p.provider_id != provider_id))


# -- issued artefacts ---------------------------------------------------------


@dataclass(frozen=True)
class NativeCredential:
    credential_id: str
    secret: str = field(repr=False)
    session_token: str = field(repr=False)
    expires_at: int
    issued_at: int
    scope: tuple[str, ...]
    principal: str

    @property
    def lifetime(self) -> int:
        return self.expires_at - self.issued_at

    def to_dict(self) -> dict[str, Any]:
        return {
            "credential_id": self.credential_id,
            "secret": self.secret,
            "session_token": self.session_token,
            "expires_at": self.expires_at,
            "issued_at": self.issued_at,
            "scope": list(self.scope),
            "principal": self.principal,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "NativeCredential":
        return cls(
            credential_id=str(d["credential_id"]),
            secret=str(d["secret"]),
            session_token=str(d["session_token"]),
            expires_at=int(d["expires_at"]),
            issued_at=int(d["issued_at"]),
            scope=tuple(d.get("scope", ())),
            principal=str(d.get("principal", "")),
        )


@dataclass(frozen=True)
class FederatedToken:
    token: str = field(repr=False)
    subject: str
    attributes: Mapping[str, str]
    pool_id: str
    provider_id: str
    issued_at: int
    expires_at: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "federated_token": self.token,
            "subject": self.subject,
            "attributes": dict(self.attributes),
            "pool": self.pool_id,
            "provider": self.provider_id,
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
        }


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    time: int
    action: str
    outcome: str
    jwt_id: str = ""
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class _CredentialRecord:
    secret_hash: str
    session_hash: str
    issued_at: int
    expires_at: int
    scope: frozenset[str]
    principal: str


@dataclass(frozen=True)
class _FederatedRecord:
    subject: str
    pool_id: str
    provider_id: str
    issued_at: int
    expires_at: int


@dataclass(frozen=True)
class _Config:
    providers: Mapping[str, OidcProviderRegistration] = MappingProxyType({})
    by_issuer: Mapping[str, str] = MappingProxyType({})
    policies: Mapping[str, tuple[TrustPolicy, ...]] = MappingProxyType({})
    pools: Mapping[str, WorkloadIdentityPool] = MappingProxyType({})


def _frozen(d: dict) -> Mapping:
    return MappingProxyType(dict(d))


class _Attempt:
    def __init__(self, action: str, now: int):
        self.action = action
        self.now = now
        self.jwt_id = ""
        self.detail = ""
        self.outcome = "ok"


# -- the service --------------------------------------------------------------


class SecurityTokenService:
    def __init__(
        self,
        *,
        clock: Clock | None = None,
        ids: IdSource | None = None,
        transport: Transport | None = None,
        account_id: str = "123456789",
        max_credential_ttl: int = MAX_CREDENTIAL_TTL,
        skew: int = DEFAULT_SKEW,
    ):
        if not 0 < max_credential_ttl <= MAX_CREDENTIAL_TTL:
            raise ValueError(f"credential lifetime must be in (0, {MAX_CREDENTIAL_TTL}]")
        self.clock = clock or SystemClock()
        self.ids = ids or IdSource()
        self.transport = transport
        self.account_id = account_id
        self.max_credential_ttl = max_credential_ttl
        self.skew = skew
        self._config = _Config()
        self._admin_lock = threading.Lock()
        self._jwks_cache: dict[str, tuple[JwkSet, int]] = {}
        self._cache_lock = threading.Lock()
        self._credentials: dict[str, _CredentialRecord] = {}
        self._federated: dict[str, _FederatedRecord] = {}
        self._state_lock = threading.Lock()
        self._audit: list[AuditEntry] = []
        self._audit_lock = threading.Lock()

    def _now(self, now: int | None) -> int:
        return self.clock.now() if now is None else now

    # -- administration

    def register_provider(self, reg: OidcProviderRegistration, now: int | None = None) -> str:
        now = self._now(now)
        with self._admin_lock:
            cfg = self._config
            if reg.issuer in cfg.by_issuer:
                raise DuplicateIssuer(f"issuer {reg.issuer!r} already registered as {cfg.by_issuer[reg.issuer]!r}")
            if reg.provider_id in cfg.providers:
                raise DuplicateIssuer(f"provider id {reg.provider_id!r} already registered")
            keys = reg.jwks if reg.jwks is not None else self._fetch_jwks(reg)
            with self._cache_lock:
                self._jwks_cache[reg.provider_id] = (keys, now)
            self._config = dataclasses.replace(
                cfg,
                providers=_frozen({**cfg.providers, reg.provider_id: reg}),
                by_issuer=_frozen({**cfg.by_issuer, reg.issuer: reg.provider_id}),
            )
        return reg.provider_id

    def revoke_provider(self, provider_id: str) -> None:
        """Delete a trust anchor and every pool provider config bound to it.

        Credentials already issued stay valid until their own expiry.
        """
        with self._admin_lock:
            cfg = self._config
            reg = cfg.providers.get(provider_id)
            if reg is None:
                raise UnknownProvider(provider_id)
            self._config = dataclasses.replace(
                cfg,
                providers=_frozen({k: v for k, v in cfg.providers.items() if k != provider_id}),
                by_issuer=_frozen({k: v for k, v in cfg.by_issuer.items() if v != provider_id}),
                pools=_frozen({k: p.without(provider_id) for k, p in cfg.pools.items()}),
            )
            with self._cache_lock:
                self._jwks_cache.pop(provider_id, None)

    def apply_trust_policy(self, statements: TrustPolicy | list[TrustPolicy]) -> None:
        """Replace the trust policy of the role(s) named by ``statements``."""
        if isinstance(statements, TrustPolicy):
            statements = [statements]
        by_role: dict[str, list[TrustPolicy]] = {}
        for st in statements:
            by_role.setdefault(st.role_name, []).append(st)
        with self._admin_lock:
            cfg = self._config
            policies = {**cfg.policies, **{r: tuple(s) for r, s in by_role.items()}}
            self._config = dataclasses.replace(cfg, policies=_frozen(policies))

    def delete_role(self, role_name: str) -> None:
        with self._admin_lock:
            cfg = self._config
            if role_name not in cfg.policies:
                raise UnknownRole(role_name)
            self._config = dataclasses.replace(
                cfg, policies=_frozen({k: v for k, v in cfg.policies.items() if k != role_name})
            )

    def apply_pool_provider(self, pool_id: str, provider: ProviderConfig) -> None:
        with self._admin_lock:
            cfg = self._config
            pool = cfg.pools.get(pool_id) or WorkloadIdentityPool(pool_id)
            self._config = dataclasses.replace(
                cfg, pools=_frozen({**cfg.pools, pool_id: pool.with_provider(provider)})
            )

    def providers(self) -> dict[str, OidcProviderRegistration]:
        return dict(self._config.providers)

    def pools(self) -> dict[str, WorkloadIdentityPool]:
        return dict(self._config.pools)

    def roles(self) -> dict[str, tuple[TrustPolicy, ...]]:
        return dict(self._config.policies)

    # -- JWKS

    def _fetch_jwks(self, reg: OidcProviderRegistration) -> JwkSet:
        if self.transport is None:
            raise JwksUnreachable(f"no transport to fetch keys for {reg.provider_id!r}")
        uri = reg.jwks_uri
        try:
            if uri is None:
                resp = self.transport.get(reg.issuer.rstrip("/") + "/.well-known/openid-configuration")
                if not resp.ok or resp.body.get("issuer") != reg.issuer or "jwks_uri" not in resp.body:
                    raise JwksUnreachable(f"discovery for {reg.issuer!r} failed (status {resp.status})")
                uri = resp.body["jwks_uri"]
            resp = self.transport.get(uri)
        except TransportError as exc:
            raise JwksUnreachable(str(exc)) from None
        if not resp.ok:
            raise JwksUnreachable(f"{uri} returned {resp.status}")
        try:
            return JwkSet.from_dict(resp.body)
        except TokenError as exc:
            raise JwksUnreachable(f"{uri} served an invalid key set: {exc}") from None

    def _keys(self, reg: OidcProviderRegistration, now: int, force: bool = False) -> JwkSet:
        with self._cache_lock:
            cached = self._jwks_cache.get(reg.provider_id)
        if reg.jwks is not None and reg.jwks_uri is None:
            return reg.jwks
        if cached is not None and not force and now < cached[1] + reg.jwks_cache_ttl:
            return cached[0]
        try:
            keys = self._fetch_jwks(reg)
        except JwksUnreachable:
            if cached is None:
                raise
            log.warning("refreshing keys for %s failed; using cached set", reg.provider_id)
            return cached[0]
        with self._cache_lock:
            self._jwks_cache[reg.provider_id] = (keys, now)
        return keys

    def _verify_against(self, token: str, reg: OidcProviderRegistration, now: int) -> JwtClaims:
        try:
            return self._verify_with_refresh(token, reg, now)
        except TokenError as exc:
            raise VerificationFailed(exc) from None
        except JwksUnreachable as exc:
            raise VerificationFailed(UnknownKeyId(str(exc))) from None

    def _verify_with_refresh(self, token: str, reg: OidcProviderRegistration, now: int) -> JwtClaims:
        keys = self._keys(reg, now)
        try:
            return self._verify_any_audience(token, keys, reg, now)
        except UnknownKeyId:
            if reg.jwks_uri is None and reg.jwks is not None:
                raise
            # The issuer may have rotated since the cache was filled; retry once.
            keys = self._keys(reg, now, force=True)
            return self._verify_any_audience(token, keys, reg, now)

    def _verify_any_audience(self, token: str, keys: JwkSet, reg: OidcProviderRegistration, now: int) -> JwtClaims:
        mismatch: AudienceMismatch | None = None
        for audience in reg.audiences:
            try:
                return verify_jwt(token, keys, reg.issuer, audience, now, self.skew)
            except AudienceMismatch as exc:
                mismatch = exc
        assert mismatch is not None
        raise mismatch

    # -- audit

    @contextlib.contextmanager
    def _attempt(self, action: str, now: int) -> Iterator[_Attempt]:
        att = _Attempt(action, now)
        try:
            yield att
        except BaseException as exc:
            att.outcome = outcome_of(exc)
            if not att.detail:
                att.detail = str(exc)
            raise
        finally:
            with self._audit_lock:
                self._audit.append(
                    AuditEntry(len(self._audit), now, action, att.outcome, att.jwt_id, att.detail)
                )

    @property
    def audit_log(self) -> list[AuditEntry]:
        with self._audit_lock:
            return list(self._audit)

    # -- issuance

    def _mint_credential(self, principal: str, scope: tuple[str, ...], now: int, not_after: int) -> NativeCredential:
        lifetime = min(self.max_credential_ttl, not_after - now)
        if lifetime <= 0:
            raise VerificationFailed(Expired("no validity left to derive a credential from"))
        cred = NativeCredential(
            credential_id="ASIA" + self.ids.token_hex(8).upper(),
            secret=self.ids.token_hex(20),
            session_token=self.ids.token_hex(32),
            expires_at=now + lifetime,
            issued_at=now,
            scope=tuple(scope),
            principal=principal,
        )
        record = _CredentialRecord(
            _digest(cred.secret), _digest(cred.session_token), now, cred.expires_at, frozenset(scope), principal
        )
        with self._state_lock:
            self._credentials[cred.credential_id] = record
        return cred

    def assume_role_with_web_identity(self, token: str, role_name: str, now: int | None = None) -> NativeCredential:
        now = self._now(now)
        with self._attempt("assume-role", now) as att:
            att.detail = f"role={role_name}"
            cfg = self._config
            statements = cfg.policies.get(role_name)
            if statements is None:
                raise UnknownRole(role_name)
            try:
                header_claims = decode_unverified(token).claims
            except TokenError as exc:
                raise VerificationFailed(exc) from None
            att.jwt_id = header_claims.jwt_id
            provider_id = cfg.by_issuer.get(header_claims.issuer)
            if provider_id is None:
                raise UnknownProvider(f"no trusted provider for issuer {header_claims.issuer!r}")
            reg = cfg.providers[provider_id]
            claims = self._verify_against(token, reg, now)
            trusting = [st for st in statements if st.federated_principal == provider_id]
            if not trusting:
                raise ConditionDenied(f"role {role_name!r} does not trust provider {provider_id!r}")
            granted = next((st for st in trusting if eval_string_equals(st.condition, claims)), None)
            if granted is None:
                raise ConditionDenied(f"claims of {claims.subject!r} do not satisfy the trust policy of {role_name!r}")
            session = claims.subject.rsplit(":", 1)[-1]
            principal = f"arn:aws:sts::{self.account_id}:assumed-role/{role_name}/{session}"
            cred = self._mint_credential(principal, granted.scope, now, claims.expires_at)
            att.detail = f"role={role_name} credential={cred.credential_id} expires_at={cred.expires_at}"
            return cred

    def exchange_federated_token(
        self, token: str, pool_id: str, provider_id: str, now: int | None = None
    ) -> FederatedToken:
        now = self._now(now)
        with self._attempt("token-exchange", now) as att:
            att.detail = f"pool={pool_id} provider={provider_id}"
            cfg = self._config
            pool = cfg.pools.get(pool_id)
            provider = pool.get(provider_id) if pool is not None else None
            reg = cfg.providers.get(provider_id)
            if provider is None or reg is None:
                raise UnknownProvider(f"{pool_id}/{provider_id}")
            try:
                att.jwt_id = decode_unverified(token).claims.jwt_id
            except TokenError as exc:
                raise VerificationFailed(exc) from None
            claims = self._verify_against(token, reg, now)
            ctx = AssertionContext.from_claims(claims)
            if provider.aws_account_id is not None:
                arn_parts = ctx.get("arn", "").split(":")
                if len(arn_parts) < 6 or arn_parts[4] != provider.aws_account_id:
                    raise ConditionDenied(f"assertion is not from account {provider.aws_account_id}")
            try:
                allowed = eval_condition(provider.attribute_condition, ctx)
            except MissingAttribute as exc:
                raise ConditionDenied(f"attribute condition needs missing attribute {exc.path!r}") from None
            if not allowed:
                raise ConditionDenied("attribute condition evaluated to false")
            try:
                attributes = apply_mapping(provider.attribute_mapping, ctx)
            except MissingAttribute as exc:
                raise MappingFailed(f"mapping needs missing attribute {exc.path!r}") from None
            lifetime = min(MAX_CREDENTIAL_TTL, claims.expires_at - now)
            if lifetime <= 0:
                raise VerificationFailed(Expired("no validity left to derive a federated token from"))
            opaque = "fed." + self.ids.token_hex(32)
            subject = attributes[SUBJECT_ATTRIBUTE]
            with self._state_lock:
                self._federated[_digest(opaque)] = _FederatedRecord(subject, pool_id, provider_id, now, now + lifetime)
            att.detail = f"pool={pool_id} provider={provider_id} subject={subject}"
            return FederatedToken(opaque, subject, attributes, pool_id, provider_id, now, now + lifetime)

    def impersonate_service_account(
        self, federated_token: FederatedToken | str, target_account: str, now: int | None = None
    ) -> NativeCredential:
        now = self._now(now)
        opaque = federated_token.token if isinstance(federated_token, FederatedToken) else federated_token
        with self._attempt("impersonate", now) as att:
            att.detail = f"account={target_account}"
            with self._state_lock:
                record = self._federated.get(_digest(opaque))
            if record is None:
                raise NotAuthorized("unknown federated token")
            if now >= record.expires_at:
                raise ExpiredFederatedToken(f"federated token expired at {record.expires_at}")
            cfg = self._config
            pool = cfg.pools.get(record.pool_id)
            provider = pool.get(record.provider_id) if pool is not None else None
            if provider is None or record.provider_id not in cfg.providers:
                raise UnknownProvider(f"{record.pool_id}/{record.provider_id}")
            if provider.service_account != target_account:
                raise NotAuthorized(f"{record.subject!r} may not impersonate {target_account!r}")
            cred = self._mint_credential(target_account, provider.scope, now, record.expires_at)
            att.detail = f"account={target_account} subject={record.subject} credential={cred.credential_id}"
            return cred

    def check_access(
        self,
        credential_id: str,
        secret: str,
        session_token: str,
        resource: str,
        now: int | None = None,
    ) -> bool:
        now = self._now(now)
        with self._attempt("resource-check", now) as att:
            with self._state_lock:
                record = self._credentials.get(credential_id)
            # Compare against a dummy record for unknown ids so timing does not reveal them.
            probe = record or _CredentialRecord("0" * 64, "0" * 64, 0, 0, frozenset(), "")
            secret_ok = hmac.compare_digest(probe.secret_hash, _digest(str(secret)))
            session_ok = hmac.compare_digest(probe.session_hash, _digest(str(session_token)))
            allowed = (
                record is not None
                and secret_ok
                and session_ok
                and now < record.expires_at
                and resource in record.scope
            )
            att.outcome = "allow" if allowed else "deny"
            att.detail = f"credential={credential_id} resource={resource}"
            return allowed

    def app(self) -> "StsApp":
        from .sts_http import StsApp

        return StsApp(self)


__all__ = [
    "ASSUME_ROLE_ACTION",
    "MAX_CREDENTIAL_TTL",
    "AuditEntry",
    "Denied",
    "FederatedToken",
    "NativeCredential",
    "OidcProviderRegistration",
    "ProviderConfig",
    "SecurityTokenService",
    "TrustPolicy",
    "WorkloadIdentityPool",
    "FedAuthError",
]
