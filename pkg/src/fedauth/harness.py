"""Scenario harness and mock protected resource.

A scenario is a YAML document: a setup section (identity providers, pods,
token services, trust documents, static keys) and an ordered list of steps,
each with the outcome it must produce. Everything runs in-process against a
fake clock and seeded identifiers, so a report depends only on the
scenario document.
"""

from __future__ import annotations

import base64
import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from .client import WorkloadClient, WorkloadConfig
from .clock import FakeClock
from .conditions import issuer_host_path
from .errors import ExchangeFailed, FedAuthError, ScenarioMalformed, outcome_of
from .idp import IdentityProvider, PodIdentity, ServiceAccount, TokenRequestSpec
from .ids import IdSource
from .legacy import HttpRequest, StaticKey, StaticKeyStore
from .legacy import sign as legacy_sign
from .legacy import verify as legacy_verify
from .sts import NativeCredential, OidcProviderRegistration, SecurityTokenService
from .trustdocs import apply_document
from .web import JsonApp, LocalTransport, Request, Response, Transport

# action -> (required fields, names of fields that reference saved values)
ACTIONS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "token": (("pod", "audience"), ()),
    "assume-role": (("token", "role"), ("token",)),
    "exchange": (("token", "pool", "provider"), ("token",)),
    "impersonate": (("federated", "account"), ("federated",)),
    "access": (("credential", "resource"), ("credential",)),
    "workload": (("pod", "audience", "resource"), ()),
    "advance": (("seconds",), ()),
    "revoke": (("provider",), ()),
    "rotate": (("idp",), ()),
    "deregister": (("pod",), ()),
    "tamper": (("token",), ("token",)),
    "legacy-sign": (("key", "date", "region", "service"), ()),
    "legacy-verify": (("signature",), ("signature",)),
}
STEP_KEYS = {"action", "expect", "save", "sts", "note", "ttl", "request", "date", "flow", "pool", "provider", "account", "role"}
SETUP_KEYS = {"idps", "pods", "sts", "providers", "trust", "static_keys"}
DEFAULT_START = 1_753_574_400  # 2025-07-27T00:00:00Z
DEFAULT_REQUEST = {
    "method": "GET",
    "path": "/pegasus-data/report.csv",
    "host": "pegasus-data.s3.amazonaws.com",
}


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    steps: tuple[Mapping[str, Any], ...]
    setup: Mapping[str, Any] = field(default_factory=dict)
    threats: tuple[str, ...] = ()
    seed: int = 0
    start: int = DEFAULT_START

    @classmethod
    def from_dict(cls, doc: Any) -> "Scenario":
        if not isinstance(doc, Mapping) or not isinstance(doc.get("name"), str):
            raise ScenarioMalformed("scenario needs a name")
        name = doc["name"]
        steps = doc.get("steps")
        if not isinstance(steps, list) or not steps:
            raise ScenarioMalformed(f"{name}: scenario needs at least one step")
        setup = {k: doc[k] for k in SETUP_KEYS if k in doc}
        unknown = set(doc) - SETUP_KEYS - {"name", "description", "steps", "threats", "seed", "start"}
        if unknown:
            raise ScenarioMalformed(f"{name}: unknown top-level keys {sorted(unknown)}")
        s = cls(
            name=name,
            description=str(doc.get("description", "")).strip(),
            steps=tuple(steps),
            setup=setup,
            threats=tuple(doc.get("threats") or ()),
            seed=int(doc.get("seed", 0)),
            start=int(doc.get("start", DEFAULT_START)),
        )
        s.validate()
        return s

    @classmethod
    def from_yaml(cls, text: str) -> "Scenario":
        try:
            return cls.from_dict(yaml.safe_load(text))
        except yaml.YAMLError as exc:
            raise ScenarioMalformed(str(exc)) from None

    def validate(self) -> None:
        saved: set[str] = set()
        pods = set((self.setup.get("pods") or {}).keys())
        for i, step in enumerate(self.steps, 1):
            where = f"{self.name} step {i}"
            if not isinstance(step, Mapping) or step.get("action") not in ACTIONS:
                raise ScenarioMalformed(f"{where}: unknown action {step.get('action') if isinstance(step, Mapping) else step!r}")
            required, refs = ACTIONS[step["action"]]
            missing = [f for f in required if f not in step]
            if missing:
                raise ScenarioMalformed(f"{where}: missing {missing}")
            extra = set(step) - STEP_KEYS - set(required)
            if extra:
                raise ScenarioMalformed(f"{where}: unknown fields {sorted(extra)}")
            if step["action"] != "advance" and "expect" not in step:
                raise ScenarioMalformed(f"{where}: every step needs an expected outcome")
            for ref in refs:
                if step[ref] not in saved:
                    raise ScenarioMalformed(f"{where}: {ref} {step[ref]!r} is not saved by an earlier step")
            if step["action"] in ("token", "workload", "deregister") and step["pod"] not in pods:
                raise ScenarioMalformed(f"{where}: unknown pod {step['pod']!r}")
            if "save" in step:
                saved.add(step["save"])


@dataclass(frozen=True)
class StepResult:
    index: int
    action: str
    expected: str
    actual: str
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.expected == self.actual


@dataclass(frozen=True)
class ScenarioReport:
    name: str
    steps: tuple[StepResult, ...]
    audit: tuple[Mapping[str, Any], ...] = ()

    @property
    def passed(self) -> bool:
        return all(s.ok for s in self.steps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "steps": [{**dataclasses.asdict(s), "ok": s.ok} for s in self.steps],
            "audit": [dict(a) for a in self.audit],
        }

    def render_text(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} {self.name}"]
        for s in self.steps:
            mark = "ok " if s.ok else "BAD"
            detail = s.actual if s.ok else f"expected {s.expected}, got {s.actual}"
            lines.append(f"  [{mark}] {s.index:2d} {s.action:<14} {detail}" + (f"  # {s.note}" if s.note else ""))
        return "\n".join(lines)


# -- world construction -------------------------------------------------------


class _World:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        setup = scenario.setup
        self.clock = FakeClock(scenario.start)
        self.ids = IdSource(scenario.seed)
        self.transport = LocalTransport()
        self.idps: dict[str, IdentityProvider] = {}
        self.pods: dict[str, tuple[str, PodIdentity]] = {}
        self.sts: dict[str, SecurityTokenService] = {}
        self.sts_urls: dict[str, str] = {}
        self.keystore = StaticKeyStore()
        self.values: dict[str, Any] = {}
        try:
            self._build(setup)
        except (FedAuthError, KeyError, TypeError, ValueError) as exc:
            raise ScenarioMalformed(f"{scenario.name}: setup failed: {outcome_of(exc)}: {exc}") from None

    def _build(self, setup: Mapping[str, Any]) -> None:
        for name, spec in (setup.get("idps") or {}).items():
            spec = spec or {}
            idp = IdentityProvider(
                spec["issuer"],
                min_ttl=spec.get("min_ttl", 600),
                max_ttl=spec.get("max_ttl", 86400),
                overlap_seconds=spec.get("overlap_seconds"),
                clock=self.clock,
                ids=self.ids.spawn(f"idp:{name}"),
                key_seed=f"{self.scenario.seed}:{name}",
            )
            self.idps[name] = idp
            self.transport.mount(idp.issuer, idp.app())
        for name, spec in (setup.get("pods") or {}).items():
            idp_name = spec["idp"]
            sa = ServiceAccount(spec["namespace"], spec["serviceaccount"])
            pod = self.idps[idp_name].register_pod(sa, spec.get("pod_name", name), spec.get("attributes"))
            self.pods[name] = (idp_name, pod)
        sts_names = list(setup.get("sts") or ["sts"])
        for name in sts_names:
            sts = SecurityTokenService(clock=self.clock, ids=self.ids.spawn(f"sts:{name}"), transport=self.transport)
            url = f"https://sts.{name}.local"
            self.sts[name] = sts
            self.sts_urls[name] = url
            self.transport.mount(url, sts.app())
        for spec in setup.get("providers") or []:
            idp = self.idps[spec["idp"]]
            sts = self.sts[spec.get("sts", sts_names[0])]
            inline = spec.get("source", "uri") == "inline"
            sts.register_provider(
                OidcProviderRegistration(
                    provider_id=spec.get("provider_id") or issuer_host_path(idp.issuer),
                    issuer=idp.issuer,
                    audiences=tuple(spec["audiences"]),
                    jwks_uri=None if inline else idp.discovery()["jwks_uri"],
                    jwks=idp.jwks() if inline else None,
                )
            )
        for spec in setup.get("trust") or []:
            apply_document(self.sts[spec.get("sts", sts_names[0])], spec["document"])
        for spec in setup.get("static_keys") or []:
            self.keystore.add(
                StaticKey(
                    spec["access_key_id"],
                    spec["secret_key"],
                    int(spec.get("created_at", self.scenario.start)),
                    tuple(spec.get("permissions") or ()),
                )
            )

    def sts_for(self, step: Mapping[str, Any]) -> SecurityTokenService:
        return self.sts[step.get("sts", next(iter(self.sts)))]

    def audit_excerpt(self, limit: int = 12) -> tuple[dict[str, Any], ...]:
        out = []
        for name, sts in self.sts.items():
            for e in sts.audit_log[-limit:]:
                out.append({"sts": name, **e.to_dict()})
        return tuple(out)


def _request_from(spec: Mapping[str, Any] | None, date: str) -> HttpRequest:
    spec = {**DEFAULT_REQUEST, **(spec or {})}
    return HttpRequest(
        method=spec["method"],
        path=spec["path"],
        headers={"host": spec["host"], "x-amz-date": spec.get("x_amz_date", f"{date}T000000Z")},
        query=tuple((str(k), str(v)) for k, v in (spec.get("query") or {}).items()),
        body=str(spec.get("body", "")).encode(),
    )


def _flip_payload_bit(token: str) -> str:
    h, p, s = token.split(".")
    raw = bytearray(base64.urlsafe_b64decode(p + "=" * (-len(p) % 4)))
    raw[len(raw) // 2] ^= 0x01
    return ".".join([h, base64.urlsafe_b64encode(bytes(raw)).rstrip(b"=").decode(), s])


# -- step execution -----------------------------------------------------------


def _run_step(world: _World, step: Mapping[str, Any]) -> str:
    action = step["action"]
    v = world.values
    if action == "advance":
        world.clock.advance(int(step["seconds"]))
        return "ok"
    if action == "token":
        idp_name, pod = world.pods[step["pod"]]
        ttl = int(step.get("ttl", 3600))
        token = world.idps[idp_name].issue_bound_token(pod, TokenRequestSpec(step["audience"], ttl))
        return _save(world, step, str(token))
    if action == "tamper":
        return _save(world, step, _flip_payload_bit(v[step["token"]]))
    if action == "assume-role":
        cred = world.sts_for(step).assume_role_with_web_identity(v[step["token"]], step["role"])
        return _save(world, step, cred)
    if action == "exchange":
        fed = world.sts_for(step).exchange_federated_token(v[step["token"]], step["pool"], step["provider"])
        return _save(world, step, fed)
    if action == "impersonate":
        cred = world.sts_for(step).impersonate_service_account(v[step["federated"]], step["account"])
        return _save(world, step, cred)
    if action == "access":
        cred: NativeCredential = v[step["credential"]]
        allowed = world.sts_for(step).check_access(
            cred.credential_id, cred.secret, cred.session_token, step["resource"]
        )
        return "allow" if allowed else "deny"
    if action == "workload":
        return _run_workload(world, step)
    if action == "revoke":
        world.sts_for(step).revoke_provider(step["provider"])
        return "ok"
    if action == "rotate":
        world.idps[step["idp"]].rotate()
        return "ok"
    if action == "deregister":
        idp_name, pod = world.pods[step["pod"]]
        world.idps[idp_name].deregister_pod(pod.pod_uid)
        return "ok"
    if action == "legacy-sign":
        request = _request_from(step.get("request"), str(step["date"]))
        header = legacy_sign(request, step["key"], str(step["date"]), step["region"], step["service"], world.keystore)
        return _save(world, step, (request, header))
    if action == "legacy-verify":
        request, header = v[step["signature"]]
        if "request" in step:
            request = _request_from(step["request"], str(step.get("date", request.headers["x-amz-date"][:8])))
        return "accept" if legacy_verify(request, header, world.keystore, world.clock.now()) else "reject"
    raise ScenarioMalformed(f"unknown action {action!r}")


def _run_workload(world: _World, step: Mapping[str, Any]) -> str:
    idp_name, pod = world.pods[step["pod"]]
    sts_name = step.get("sts", next(iter(world.sts)))
    flow = step.get("flow", "assume-role")
    cfg = WorkloadConfig(
        namespace=pod.service_account.namespace,
        serviceaccount=pod.service_account.name,
        pod_uid=pod.pod_uid,
        idp_endpoint=world.idps[idp_name].issuer,
        sts_endpoint=world.sts_urls[sts_name],
        audience=step["audience"],
        flow=flow,
        role=step.get("role"),
        pool=step.get("pool"),
        provider=step.get("provider"),
        service_account=step.get("account"),
        expiration_seconds=int(step.get("ttl", 3600)),
    )
    client = WorkloadClient(cfg, world.transport, world.clock)
    try:
        allowed = client.access_resource(step["resource"])
    except ExchangeFailed as exc:
        return f"ExchangeFailed:{exc.denial}"
    if "save" in step and client.state_dump()["credential"] is not None:
        world.values[step["save"]] = NativeCredential.from_dict(client.state_dump()["credential"])
    return "allow" if allowed else "deny"


def _save(world: _World, step: Mapping[str, Any], value: Any) -> str:
    if "save" in step:
        world.values[step["save"]] = value
    return "ok"


def run_scenario(scenario: Scenario) -> ScenarioReport:
    world = _World(scenario)
    results = []
    for i, step in enumerate(scenario.steps, 1):
        expected = str(step.get("expect", "ok"))
        refs = ACTIONS[step["action"]][1]
        unavailable = [step[r] for r in refs if step[r] not in world.values]
        if unavailable:
            actual = f"Unavailable:{','.join(unavailable)}"
        else:
            try:
                actual = _run_step(world, step)
            except ScenarioMalformed:
                raise
            except FedAuthError as exc:
                actual = outcome_of(exc)
        results.append(StepResult(i, step["action"], expected, actual, str(step.get("note", ""))))
    return ScenarioReport(scenario.name, tuple(results), world.audit_excerpt())


# -- built-ins ----------------------------------------------------------------


def builtin_scenarios() -> list[Scenario]:
    root = resources.files("fedauth").joinpath("scenarios")
    files = sorted((p for p in root.iterdir() if p.name.endswith(".yaml")), key=lambda p: p.name)
    return [Scenario.from_yaml(p.read_text()) for p in files]


def find_scenario(name: str) -> Scenario:
    for s in builtin_scenarios():
        if s.name == name:
            return s
    path = Path(name)
    if path.suffix in (".yaml", ".yml") and path.exists():
        return Scenario.from_yaml(path.read_text())
    raise ScenarioMalformed(f"no scenario named {name!r}")


def run_all(scenarios: list[Scenario] | None = None, parallel: bool = False) -> list[ScenarioReport]:
    scenarios = builtin_scenarios() if scenarios is None else scenarios
    if not parallel:
        return [run_scenario(s) for s in scenarios]
    with ThreadPoolExecutor() as pool:
        return list(pool.map(run_scenario, scenarios))


# -- mock resource ------------------------------------------------------------

CREDENTIAL_HEADERS = ("x-credential-id", "x-credential-secret", "x-session-token")


class ResourceApp(JsonApp):
    """``GET /data/<label>``: 200 if the presented credential may read ``label``."""

    def __init__(self, check: Callable[[str, str, str, str], bool]):
        super().__init__()
        self.check = check
        self.route("GET", "/data/*", self._read)

    def _read(self, req: Request) -> Response:
        label = req.path[len("/data/"):]
        headers = {k.lower(): v for k, v in req.headers.items()}
        cid, secret, session = (headers.get(h, "") for h in CREDENTIAL_HEADERS)
        if label and self.check(cid, secret, session, label):
            return Response(200, {"resource": label, "data": f"contents of {label}"})
        return Response(403, {"error": "AccessDenied", "resource": label})


def sts_checker(sts: SecurityTokenService | None = None, sts_url: str | None = None, transport: Transport | None = None):
    """Build the access check used by :class:`ResourceApp`, in-process or remote."""
    if sts is not None:
        return lambda cid, secret, session, label: sts.check_access(cid, secret, session, label)
    if sts_url is None or transport is None:
        raise ValueError("need an STS instance or an STS URL plus transport")

    def check(cid: str, secret: str, session: str, label: str) -> bool:
        try:
            resp = transport.post(
                sts_url.rstrip("/") + "/v1/resource/check",
                {"credential_id": cid, "secret": secret, "session_token": session, "resource": label},
            )
        except FedAuthError:
            return False
        return resp.ok and resp.body.get("decision") == "allow"

    return check


def serve_mock_resource(port: int, check: Callable[[str, str, str, str], bool], host: str = "127.0.0.1", background: bool = True):
    from .web import serve

    return serve(ResourceApp(check), host, port, background=background)


def reports_json(reports: list[ScenarioReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)
