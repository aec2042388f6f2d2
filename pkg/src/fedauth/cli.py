"""``fedauth`` command line."""

from __future__ import annotations

import json
import sys
import time

import click

from . import __version__
from .client import WorkloadClient, WorkloadConfig
from .conditions import ROOT, AssertionContext, eval_condition, parse_condition
from .errors import ConditionError, FedAuthError, ScenarioMalformed, outcome_of
from .harness import builtin_scenarios, find_scenario, run_all, serve_mock_resource, sts_checker
from .idp import IdentityProvider, ServiceAccount
from .legacy import HttpRequest, StaticKey
from .legacy import sign as legacy_sign
from .risk import RiskParameters, complexity_report, demo_parameters
from .sts import SecurityTokenService
from .trustdocs import apply_document, load_document
from .web import HttpTransport, base_url, serve


def _fail(message: str, code: int = 1) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _serve_until_interrupted(server, label: str) -> None:
    click.echo(f"{label} listening on {base_url(server)}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()


@click.group()
@click.version_option(version=__version__, prog_name="fedauth")
def main() -> None:
    """Workload identity federation testbed."""


# -- scenarios ----------------------------------------------------------------


@main.group()
def scenario() -> None:
    """Run the built-in end-to-end scenarios."""


@scenario.command("list")
def scenario_list() -> None:
    for s in builtin_scenarios():
        threats = f" [{', '.join(s.threats)}]" if s.threats else ""
        click.echo(f"{s.name}{threats}")


@scenario.command("run")
@click.argument("name", required=False)
@click.option("--all", "run_every", is_flag=True, help="Run every built-in scenario.")
@click.option("--json", "as_json", is_flag=True, help="Emit reports as JSON.")
def scenario_run(name: str | None, run_every: bool, as_json: bool) -> None:
    """Run NAME (a built-in name or a YAML file), or --all. Exit 0 iff every step matched."""
    if bool(name) == run_every:
        _fail("give exactly one of NAME or --all", 2)
    try:
        scenarios = builtin_scenarios() if run_every else [find_scenario(name)]
        reports = run_all(scenarios)
    except ScenarioMalformed as exc:
        _fail(f"malformed scenario: {exc}", 2)
    if as_json:
        click.echo(json.dumps([r.to_dict() for r in reports], indent=2))
    else:
        for r in reports:
            click.echo(r.render_text())
        passed = sum(r.passed for r in reports)
        click.echo(f"\n{passed}/{len(reports)} scenarios passed")
    sys.exit(0 if all(r.passed for r in reports) else 1)


# -- servers ------------------------------------------------------------------


@main.group()
def resource() -> None:
    """Mock protected resource."""


@resource.command("serve")
@click.option("--port", type=int, default=8083, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--sts", "sts_url", default="http://127.0.0.1:8082", show_default=True, help="STS used for access checks.")
def resource_serve(port: int, host: str, sts_url: str) -> None:
    """Serve GET /data/<label>, checking credentials against the STS."""
    try:
        server = serve_mock_resource(port, sts_checker(sts_url=sts_url, transport=HttpTransport()), host=host)
    except FedAuthError as exc:
        _fail(str(exc))
    _serve_until_interrupted(server, "resource")


@main.group()
def idp() -> None:
    """OIDC identity provider."""


@idp.command("serve")
@click.option("--issuer", required=True, help="Issuer URI; should be the URL this server is reachable at.")
@click.option("--port", type=int, default=8081, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--min-ttl", type=int, default=600, show_default=True)
@click.option("--max-ttl", type=int, default=86400, show_default=True)
@click.option("--pod", "pods", multiple=True, metavar="NS:SA:NAME", help="Register a pod (repeatable).")
def idp_serve(issuer: str, port: int, host: str, min_ttl: int, max_ttl: int, pods: tuple[str, ...]) -> None:
    """Serve discovery, JWKS and the token endpoint."""
    try:
        provider = IdentityProvider(issuer, min_ttl=min_ttl, max_ttl=max_ttl)
        for spec in pods:
            parts = spec.split(":")
            if len(parts) != 3:
                _fail(f"--pod expects NS:SA:NAME, got {spec!r}", 2)
            ns, sa, name = parts
            pod = provider.register_pod(ServiceAccount(ns, sa), name)
            click.echo(f"pod {ns}/{name} serviceaccount={sa} pod_uid={pod.pod_uid}")
        server = serve(provider.app(), host, port)
    except (FedAuthError, ValueError) as exc:
        _fail(str(exc))
    _serve_until_interrupted(server, f"idp {provider.issuer}")


@main.group()
def sts() -> None:
    """Security token service."""


@sts.command("serve")
@click.option("--port", type=int, default=8082, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--account-id", default="123456789", show_default=True)
@click.option("-f", "--file", "files", multiple=True, type=click.Path(exists=True), help="Trust document to apply at startup.")
def sts_serve(port: int, host: str, account_id: str, files: tuple[str, ...]) -> None:
    """Serve the exchange, resource-check and admin endpoints."""
    service = SecurityTokenService(transport=HttpTransport(), account_id=account_id)
    try:
        for path in files:
            for line in apply_document(service, load_document(path)):
                click.echo(line)
        server = serve(service.app(), host, port)
    except FedAuthError as exc:
        _fail(f"{outcome_of(exc)}: {exc}")
    _serve_until_interrupted(server, "sts")


# -- trust administration -----------------------------------------------------


@main.group()
def trust() -> None:
    """Apply or revoke trust configuration on a running STS."""


def _admin_post(sts_url: str, path: str, body: dict) -> dict:
    try:
        resp = HttpTransport().post(sts_url.rstrip("/") + path, body)
    except FedAuthError as exc:
        _fail(str(exc))
    if not resp.ok:
        _fail(f"{resp.status} {resp.body.get('error', '')}: {resp.body.get('message', '')}")
    return resp.body


@trust.command("apply")
@click.option("-f", "--file", "path", required=True, type=click.Path(exists=True))
@click.option("--sts", "sts_url", default="http://127.0.0.1:8082", show_default=True)
@click.option("--role", default=None, help="Role name for a bare trust policy document.")
@click.option("--scope", multiple=True, help="Resource label the role grants (repeatable).")
def trust_apply(path: str, sts_url: str, role: str | None, scope: tuple[str, ...]) -> None:
    try:
        document = load_document(path)
    except FedAuthError as exc:
        _fail(str(exc))
    body = {"document": document, "role": role}
    if scope:
        body["scope"] = list(scope)
    for line in _admin_post(sts_url, "/v1/admin/apply", body)["applied"]:
        click.echo(line)


@trust.command("revoke")
@click.argument("provider_id")
@click.option("--sts", "sts_url", default="http://127.0.0.1:8082", show_default=True)
def trust_revoke(provider_id: str, sts_url: str) -> None:
    _admin_post(sts_url, "/v1/admin/revoke", {"provider_id": provider_id})
    click.echo(f"revoked {provider_id}")


# -- workload -----------------------------------------------------------------


@main.group()
def workload() -> None:
    """Federated workload client."""


@workload.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--resource", "label", required=True)
@click.option("--loop", type=int, default=1, show_default=True, help="Number of accesses.")
@click.option("--interval", type=float, default=0.0, show_default=True, help="Seconds between accesses.")
def workload_run(config_path: str, label: str, loop: int, interval: float) -> None:
    """Acquire a credential and access RESOURCE, refreshing as needed."""
    try:
        cfg = WorkloadConfig.from_file(config_path)
    except (TypeError, ValueError) as exc:
        _fail(f"bad workload config: {exc}", 2)
    client = WorkloadClient(cfg, HttpTransport())
    denied = 0
    for i in range(loop):
        if i:
            time.sleep(interval)
        try:
            allowed = client.access_resource(label)
        except FedAuthError as exc:
            _fail(f"{outcome_of(exc)}: {exc}")
        denied += not allowed
        cred = client.state_dump()["credential"]
        click.echo(f"{i + 1} {label} {'allow' if allowed else 'deny'} credential={cred['credential_id']} expires_at={cred['expires_at']}")
    sys.exit(1 if denied else 0)


# -- legacy -------------------------------------------------------------------


@main.group()
def legacy() -> None:
    """Static-key request signing (baseline)."""


@legacy.command("sign")
@click.option("--key-id", required=True)
@click.option("--secret", envvar="FEDAUTH_SECRET_KEY", required=True, help="Secret key; or set FEDAUTH_SECRET_KEY.")
@click.option("--date", required=True, help="YYYYMMDD")
@click.option("--region", required=True)
@click.option("--service", required=True)
@click.option("--method", default="GET", show_default=True)
@click.option("--host", default=None, help="Host header; defaults to <service>.<region>.amazonaws.com.")
@click.option("--path", default="/", show_default=True)
@click.option("--amz-date", default=None, help="x-amz-date header; defaults to <date>T000000Z.")
def legacy_sign_cmd(key_id, secret, date, region, service, method, host, path, amz_date) -> None:
    """Print the Authorization header for a request."""
    request = HttpRequest(
        method=method,
        path=path,
        headers={"host": host or f"{service}.{region}.amazonaws.com", "x-amz-date": amz_date or f"{date}T000000Z"},
    )
    try:
        header = legacy_sign(request, StaticKey(key_id, secret), date, region, service)
    except FedAuthError as exc:
        _fail(str(exc))
    click.echo(f"Authorization: {header}")


# -- risk ---------------------------------------------------------------------


@main.group()
def risk() -> None:
    """Comparative risk model."""


@risk.command("report")
@click.option("--params", "params_path", type=click.Path(exists=True), default=None, help="YAML parameters; defaults to the bundled demo set.")
@click.option("--json", "as_json", is_flag=True, help="Emit only the JSON table.")
@click.option("--text", "as_text", is_flag=True, help="Emit only the plain-text table.")
def risk_report(params_path: str | None, as_json: bool, as_text: bool) -> None:
    try:
        params = RiskParameters.from_file(params_path) if params_path else demo_parameters()
    except (TypeError, ValueError) as exc:
        _fail(f"bad risk parameters: {exc}", 2)
    table = complexity_report(params)
    if not as_json:
        click.echo(table.render_text())
    if not as_text:
        if not as_json:
            click.echo()
        click.echo(table.to_json())


# -- conditions ---------------------------------------------------------------


@main.group()
def condition() -> None:
    """Attribute condition language."""


@condition.command("eval")
@click.option("--expr", required=True)
@click.option("--attr", "attrs", multiple=True, metavar="PATH=VALUE", help=f"Asserted attribute, e.g. {ROOT}.arn=... (repeatable).")
def condition_eval(expr: str, attrs: tuple[str, ...]) -> None:
    """Print true or false; exit 2 on a syntax error, 3 on evaluation errors."""
    values = {}
    for a in attrs:
        key, sep, value = a.partition("=")
        if not sep:
            _fail(f"--attr expects PATH=VALUE, got {a!r}", 2)
        values[key.removeprefix(ROOT + ".")] = value
    try:
        parsed = parse_condition(expr)
    except ConditionError as exc:
        click.echo(f"{exc.kind}: {exc}", err=True)
        click.echo(expr, err=True)
        if getattr(exc, "offset", None) is not None:
            column = len(expr.encode()[: exc.offset].decode("utf-8", "ignore"))
            click.echo(" " * column + "^", err=True)
        sys.exit(2)
    try:
        result = eval_condition(parsed, AssertionContext(values))
    except ConditionError as exc:
        _fail(f"{exc.kind}: {exc}", 3)
    click.echo("true" if result else "false")


if __name__ == "__main__":
    main()
