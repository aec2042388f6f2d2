"""Exception hierarchy.

Every failure carries a stable ``kind`` (the class name by default) that is
used on the wire and in scenario expectations, so callers never have to
match on message text.
"""

from __future__ import annotations


class FedAuthError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def kind(self) -> str:
        return type(self).__name__


# -- token-core ---------------------------------------------------------------


class TokenError(FedAuthError):
    pass


class UnsupportedAlgorithm(TokenError):
    pass


class InvalidClaims(TokenError):
    pass


class Malformed(TokenError):
    pass


class UnknownKeyId(TokenError):
    pass


class BadSignature(TokenError):
    pass


class IssuerMismatch(TokenError):
    pass


class AudienceMismatch(TokenError):
    pass


class Expired(TokenError):
    pass


class NotYetValid(TokenError):
    pass


# -- condition-lang -----------------------------------------------------------


class ConditionError(FedAuthError):
    pass


class ConditionSyntaxError(ConditionError):
    """Parse failure at ``offset`` (UTF-8 byte offset into the source)."""

    def __init__(self, message: str, offset: int, expected: frozenset[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f"{message} at byte {offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(detail)

    @property
    def kind(self) -> str:
        return "SyntaxError"


class DepthExceeded(ConditionError):
    pass


class MissingAttribute(ConditionError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"attribute not present in assertion: {path}")


class TypeMismatch(ConditionError):
    pass


# -- idp-service --------------------------------------------------------------


class IdpError(FedAuthError):
    pass


class InvalidName(IdpError):
    pass


class UnknownPod(IdpError):
    pass


class InvalidTokenRequest(IdpError):
    pass


class AudienceEmpty(InvalidTokenRequest):
    pass


# -- sts-service --------------------------------------------------------------


class StsError(FedAuthError):
    pass


class Denied(StsError):
    """An exchange or access request was refused. No credential was issued."""


class UnknownProvider(Denied):
    pass


class UnknownRole(Denied):
    pass


class VerificationFailed(Denied):
    def __init__(self, cause: TokenError):
        self.cause = cause
        super().__init__(f"{cause.kind}: {cause}")

    @property
    def detail_kind(self) -> str:
        return f"{self.kind}:{self.cause.kind}"


class ConditionDenied(Denied):
    pass


class MappingFailed(Denied):
    pass


class NotAuthorized(Denied):
    pass


class ExpiredFederatedToken(Denied):
    pass


class DuplicateIssuer(StsError):
    pass


class JwksUnreachable(StsError):
    pass


class PolicyError(StsError):
    """A trust document could not be ingested."""


# -- workload-client ----------------------------------------------------------


class ClientError(FedAuthError):
    pass


class TokenAcquisitionFailed(ClientError):
    def __init__(self, reason: str = ""):
        self.reason = reason
        super().__init__("Token acquisition failed" + (f": {reason}" if reason else ""))


class ExchangeFailed(ClientError):
    def __init__(self, status: int, denial: str = ""):
        self.status = status
        self.denial = denial
        super().__init__(f"Exchange failed (status={status}, denial={denial or 'n/a'})")


class TransportError(FedAuthError):
    """The remote endpoint could not be reached at all."""


# -- legacy-signer ------------------------------------------------------------


class LegacyError(FedAuthError):
    pass


class MissingRequiredHeader(LegacyError):
    pass


class UnknownKey(LegacyError):
    pass


# -- harness ------------------------------------------------------------------


class ScenarioMalformed(FedAuthError):
    pass


class StartupFailure(FedAuthError):
    pass


def outcome_of(exc: BaseException) -> str:
    """Render an exception as the outcome string used by audits and scenarios."""
    if isinstance(exc, VerificationFailed):
        return exc.detail_kind
    if isinstance(exc, FedAuthError):
        return exc.kind
    return type(exc).__name__
