"""HTTP surface of the security token service."""

from __future__ import annotations

from .errors import Denied, DuplicateIssuer, JwksUnreachable, PolicyError, UnknownProvider
from .sts import SecurityTokenService
from .trustdocs import apply_document
from .web import JsonApp, Request, Response, require_fields


class StsApp(JsonApp):
    error_status = (
        (Denied, 403),
        (DuplicateIssuer, 409),
        (JwksUnreachable, 502),
        (PolicyError, 400),
    )

    def __init__(self, sts: SecurityTokenService):
        super().__init__()
        self.sts = sts
        self.route("POST", "/v1/assume-role", self._assume_role)
        self.route("POST", "/v1/token-exchange", self._token_exchange)
        self.route("POST", "/v1/impersonate", self._impersonate)
        self.route("POST", "/v1/resource/check", self._check)
        self.route("POST", "/v1/admin/apply", self._apply)
        self.route("POST", "/v1/admin/revoke", self._revoke)
        self.route("GET", "/v1/admin/audit", self._audit)

    def _assume_role(self, req: Request) -> Response:
        token, role = require_fields(req.body, "token", "role")
        return Response(200, self.sts.assume_role_with_web_identity(token, role).to_dict())

    def _token_exchange(self, req: Request) -> Response:
        token, pool, provider = require_fields(req.body, "token", "pool", "provider")
        return Response(200, self.sts.exchange_federated_token(token, pool, provider).to_dict())

    def _impersonate(self, req: Request) -> Response:
        fed, account = require_fields(req.body, "federated_token", "account")
        return Response(200, self.sts.impersonate_service_account(fed, account).to_dict())

    def _check(self, req: Request) -> Response:
        cid, secret, session, resource = require_fields(
            req.body, "credential_id", "secret", "session_token", "resource"
        )
        allowed = self.sts.check_access(cid, secret, session, resource)
        return Response(200, {"decision": "allow" if allowed else "deny"})

    def _apply(self, req: Request) -> Response:
        (document,) = require_fields(req.body, "document")
        lines = apply_document(
            self.sts, document, role_name=req.body.get("role"), scope=req.body.get("scope")
        )
        return Response(200, {"applied": lines})

    def _revoke(self, req: Request) -> Response:
        (provider_id,) = require_fields(req.body, "provider_id")
        try:
            self.sts.revoke_provider(provider_id)
        except UnknownProvider as exc:
            return Response(404, {"error": exc.kind, "message": str(exc)})
        return Response(200, {"revoked": provider_id})

    def _audit(self, req: Request) -> Response:
        return Response(200, {"entries": [e.to_dict() for e in self.sts.audit_log]})
