"""Workload identity federation testbed.

An OIDC identity provider that issues audience-bound workload tokens, a
security token service that trades them for short-lived native credentials
under declarative trust policy, the workload client that drives the
exchange, a static-key signer kept as the baseline, and a scenario harness
with a comparative risk model.
"""

from .client import WorkloadClient, WorkloadConfig, federated_exchange, get_oidc_token
from .clock import FakeClock, SystemClock
from .conditions import (
    AssertionContext,
    AttributeMapping,
    apply_mapping,
    eval_condition,
    parse_condition,
    to_source,
)
from .errors import FedAuthError, outcome_of
from .harness import Scenario, ScenarioReport, builtin_scenarios, run_scenario, serve_mock_resource
from .idp import IdentityProvider, PodIdentity, ServiceAccount, TokenRequestSpec
from .risk import RiskParameters, complexity_report, risk_legacy, risk_wif
from .sts import NativeCredential, OidcProviderRegistration, SecurityTokenService, TrustPolicy
from .tokens import JwkSet, JwtClaims, KeyStore, SigningKey, mint_jwt, rotate_key, verify_jwt

__version__ = "0.1.0"

__all__ = [
    "AssertionContext",
    "AttributeMapping",
    "FakeClock",
    "FedAuthError",
    "IdentityProvider",
    "JwkSet",
    "JwtClaims",
    "KeyStore",
    "NativeCredential",
    "OidcProviderRegistration",
    "PodIdentity",
    "RiskParameters",
    "Scenario",
    "ScenarioReport",
    "SecurityTokenService",
    "ServiceAccount",
    "SigningKey",
    "SystemClock",
    "TokenRequestSpec",
    "TrustPolicy",
    "WorkloadClient",
    "WorkloadConfig",
    "apply_mapping",
    "builtin_scenarios",
    "complexity_report",
    "eval_condition",
    "federated_exchange",
    "get_oidc_token",
    "mint_jwt",
    "outcome_of",
    "parse_condition",
    "risk_legacy",
    "risk_wif",
    "rotate_key",
    "run_scenario",
    "serve_mock_resource",
    "to_source",
    "verify_jwt",
]
