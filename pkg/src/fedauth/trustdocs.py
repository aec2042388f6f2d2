"""Ingestion of trust documents into an STS.

Three document shapes are understood:

* IAM-style role trust policies (``Version``/``Statement`` JSON), optionally
  wrapped as ``{"RoleName": ..., "Scope": [...], "AssumeRolePolicyDocument": {...}}``;
* workload identity provider configs (a YAML list of entries with
  ``provider_id``, ``attribute_condition`` and ``attribute_mapping``);
* OIDC provider registrations (``provider_id``/``issuer``/``audiences`` plus
  ``jwks_uri`` or inline ``jwks``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .conditions import AttributeMapping, StringEqualsCondition, issuer_host_path, parse_condition
from .errors import ConditionError, FedAuthError, PolicyError
from .sts import (
    ASSUME_ROLE_ACTION,
    OidcProviderRegistration,
    ProviderConfig,
    SecurityTokenService,
    TrustPolicy,
)
from .tokens import JwkSet

DEFAULT_POOL = "default-pool"


def provider_id_from_principal(federated: str) -> str:
    """``arn:aws:iam::123:oidc-provider/idp.local`` -> ``idp.local``."""
    marker = ":oidc-provider/"
    if marker in federated:
        return federated.split(marker, 1)[1]
    return federated


def trust_policies_from_document(
    doc: Mapping[str, Any], role_name: str | None = None, scope: list[str] | None = None
) -> list[TrustPolicy]:
    if "AssumeRolePolicyDocument" in doc:
        role_name = role_name or doc.get("RoleName")
        scope = scope if scope is not None else doc.get("Scope")
        doc = doc["AssumeRolePolicyDocument"]
    if not role_name:
        raise PolicyError("trust policy needs a role name")
    statements = doc.get("Statement")
    if isinstance(statements, Mapping):
        statements = [statements]
    if not isinstance(statements, list) or not statements:
        raise PolicyError("trust policy has no Statement")
    out = []
    for i, st in enumerate(statements):
        if st.get("Effect") != "Allow":
            raise PolicyError(f"statement {i}: only Effect=Allow is supported")
        actions = st.get("Action")
        actions = [actions] if isinstance(actions, str) else list(actions or [])
        if actions != [ASSUME_ROLE_ACTION]:
            raise PolicyError(f"statement {i}: Action must be {ASSUME_ROLE_ACTION}")
        federated = (st.get("Principal") or {}).get("Federated")
        if not isinstance(federated, str) or not federated:
            raise PolicyError(f"statement {i}: Principal.Federated is required")
        condition = st.get("Condition") or {}
        unsupported = set(condition) - {"StringEquals"}
        if unsupported:
            raise PolicyError(f"statement {i}: unsupported condition operators {sorted(unsupported)}")
        try:
            cond = StringEqualsCondition(dict(condition.get("StringEquals") or {}))
        except ValueError as exc:
            raise PolicyError(f"statement {i}: {exc}") from None
        out.append(
            TrustPolicy(
                role_name=role_name,
                federated_principal=provider_id_from_principal(federated),
                condition=cond,
                scope=tuple(scope or ()),
            )
        )
    return out


def registration_from_dict(d: Mapping[str, Any]) -> OidcProviderRegistration:
    try:
        issuer = d["issuer"]
    except KeyError:
        raise PolicyError("provider registration needs an issuer") from None
    audiences = d.get("audiences", d.get("audience"))
    if isinstance(audiences, str):
        audiences = [audiences]
    jwks = d.get("jwks")
    try:
        return OidcProviderRegistration(
            provider_id=d.get("provider_id") or issuer_host_path(issuer),
            issuer=issuer,
            audiences=tuple(audiences or ()),
            jwks_uri=d.get("jwks_uri"),
            jwks=JwkSet.from_dict(jwks) if jwks is not None else None,
            jwks_cache_ttl=int(d.get("jwks_cache_ttl", 300)),
        )
    except FedAuthError as exc:
        if isinstance(exc, PolicyError):
            raise
        raise PolicyError(f"provider registration: {exc}") from None


@dataclass(frozen=True)
class PoolProviderEntry:
    pool_id: str
    config: ProviderConfig
    registration: OidcProviderRegistration | None


def provider_config_from_dict(d: Mapping[str, Any], default_pool: str = DEFAULT_POOL) -> PoolProviderEntry:
    provider_id = d.get("provider_id")
    if not provider_id:
        raise PolicyError("provider config needs provider_id")
    source = d.get("attribute_condition")
    if not isinstance(source, str):
        raise PolicyError(f"provider {provider_id!r}: attribute_condition is required")
    mapping = d.get("attribute_mapping")
    if not isinstance(mapping, Mapping):
        raise PolicyError(f"provider {provider_id!r}: attribute_mapping is required")
    try:
        condition = parse_condition(source)
        attr_mapping = AttributeMapping.parse(mapping)
    except ConditionError as exc:
        raise PolicyError(f"provider {provider_id!r}: {exc}") from None
    aws = d.get("aws") or {}
    account = aws.get("account_id")
    config = ProviderConfig(
        provider_id=provider_id,
        attribute_condition=condition,
        attribute_mapping=attr_mapping,
        service_account=d.get("service_account"),
        scope=tuple(d.get("scope") or ()),
        aws_account_id=str(account) if account is not None else None,
    )
    registration = None
    if "issuer" in d:
        registration = registration_from_dict({**d, "provider_id": provider_id})
    return PoolProviderEntry(d.get("pool", default_pool), config, registration)


def classify(doc: Any) -> str:
    if isinstance(doc, list):
        return "list"
    if not isinstance(doc, Mapping):
        raise PolicyError("trust document must be a mapping or a list")
    if "Statement" in doc or "AssumeRolePolicyDocument" in doc:
        return "trust-policy"
    if "attribute_condition" in doc or "attribute_mapping" in doc:
        return "pool-provider"
    if "providers" in doc and "pool" in doc:
        return "pool"
    if "issuer" in doc:
        return "registration"
    raise PolicyError("unrecognised trust document")


def apply_document(
    sts: SecurityTokenService,
    doc: Any,
    *,
    role_name: str | None = None,
    scope: list[str] | None = None,
    default_pool: str = DEFAULT_POOL,
) -> list[str]:
    """Apply ``doc`` to ``sts`` and return one summary line per change."""
    kind = classify(doc)
    if kind == "list":
        lines: list[str] = []
        for item in doc:
            lines += apply_document(sts, item, role_name=role_name, scope=scope, default_pool=default_pool)
        return lines
    if kind == "trust-policy":
        policies = trust_policies_from_document(doc, role_name, scope)
        sts.apply_trust_policy(policies)
        return [f"role {p.role_name}: trusts {p.federated_principal}" for p in policies]
    if kind == "pool":
        return apply_document(
            sts, [{**p, "pool": doc["pool"]} for p in doc["providers"]], default_pool=doc["pool"]
        )
    if kind == "registration":
        reg = registration_from_dict(doc)
        sts.register_provider(reg)
        return [f"provider {reg.provider_id}: registered issuer {reg.issuer}"]
    entry = provider_config_from_dict(doc, default_pool)
    lines = []
    if entry.registration is not None and entry.registration.provider_id not in sts.providers():
        sts.register_provider(entry.registration)
        lines.append(f"provider {entry.registration.provider_id}: registered issuer {entry.registration.issuer}")
    sts.apply_pool_provider(entry.pool_id, entry.config)
    lines.append(f"pool {entry.pool_id}: provider {entry.config.provider_id}")
    return lines


def load_document(path: str | Path) -> Any:
    """Read a JSON or YAML trust document (YAML is a superset of JSON)."""
    text = Path(path).read_text()
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise PolicyError(f"{path}: {exc}") from None
