"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the PASS/FAIL lines
are written straight to the terminal, bypassing capture.
"""

import random
import time

import pytest

from conftest import AWS_AUDIENCE, GKE_PROVIDER, PEGASUS_ARN, PEGASUS_SUBJECT, START, Federation
from test_conditions import OracleMissing, ast_bool, gen_bool, oracle, render
from test_sts import GCP_ACCOUNT, GCP_AUDIENCE, GcpSide, credential_count

from fedauth.client import WorkloadClient, WorkloadConfig
from fedauth.conditions import (
    AssertionContext,
    AttributeMapping,
    MissingAttribute,
    StringEqualsCondition,
    apply_mapping,
    eval_condition,
    parse_condition,
    to_source,
)
from fedauth.errors import ConditionDenied, ExchangeFailed, TokenAcquisitionFailed, UnknownProvider, VerificationFailed
from fedauth.harness import builtin_scenarios, run_all
from fedauth.idp import TokenRequestSpec
from fedauth.legacy import HttpRequest, StaticKey, StaticKeyStore, sign, verify
from fedauth.risk import YEAR_SECONDS, RiskParameters, risk_legacy, risk_wif
from fedauth.sts import MAX_CREDENTIAL_TTL, TrustPolicy
from fedauth.tokens import DEFAULT_SKEW
from fedauth.web import Response


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, detail

    return emit


def one_char_edits(text):
    rng = random.Random(text)
    i = rng.randrange(len(text))
    substituted = text[:i] + ("x" if text[i] != "x" else "y") + text[i + 1:]
    return [substituted, text + "x", text[:-1], "x" + text]


# 1 ----------------------------------------------------------------------------


def test_criterion_01_reference_configuration(report):
    t0 = time.perf_counter()
    fed = Federation()
    token = fed.idp.issue_bound_token(fed.pod, TokenRequestSpec(AWS_AUDIENCE, 3600))
    cred = fed.sts.assume_role_with_web_identity(token, "pegasus-role")
    issued = cred.lifetime == 3600 and fed.sts.check_access(cred.credential_id, cred.secret, cred.session_token, "s3://pegasus-data")
    sub_key, aud_key = f"{GKE_PROVIDER}:sub", f"{GKE_PROVIDER}:aud"
    mutants = [(sub_key, m) for m in one_char_edits(PEGASUS_SUBJECT)] + [(aud_key, m) for m in one_char_edits(AWS_AUDIENCE)]
    denied = 0
    for i, (key, value) in enumerate(mutants):
        cond = {sub_key: PEGASUS_SUBJECT, aud_key: AWS_AUDIENCE, key: value}
        fed.sts.apply_trust_policy(TrustPolicy(f"mutant-{i}", GKE_PROVIDER, StringEqualsCondition(cond), ("s3://pegasus-data",)))
        try:
            fed.sts.assume_role_with_web_identity(token, f"mutant-{i}")
        except ConditionDenied:
            denied += 1
    elapsed = time.perf_counter() - t0
    ok = issued and denied == len(mutants) and elapsed < 1.0
    report(1, "reference configuration fidelity", ok, f"credential issued={issued}, {denied}/{len(mutants)} one-char mutants denied, {elapsed:.3f}s (<1s)")


# 2 ----------------------------------------------------------------------------


def test_criterion_02_attribute_condition_fidelity(report):
    cond = parse_condition("assertion.arn.endsWith(':assumed-role/pegasus-iam-role/pegasus-sa')")
    positives = [PEGASUS_ARN, "arn:aws:sts::999999999:assumed-role/pegasus-iam-role/pegasus-sa", ":assumed-role/pegasus-iam-role/pegasus-sa"]
    negatives = [
        "arn:aws:sts::123456789:assumed-role/pegasus-iam-role/pegasus-sa2",
        "arn:aws:sts::123456789:assumed-role/other-role/pegasus-sa",
        "arn:aws:sts::123456789:assumed-role/pegasus-iam-role/pegasus-s",
        "arn:aws:sts::123456789:assumed-role/pegasus-iam-role/Pegasus-sa",
        "",
    ]
    right = sum(eval_condition(cond, AssertionContext({"arn": a})) is True for a in positives)
    right += sum(eval_condition(cond, AssertionContext({"arn": a})) is False for a in negatives)
    mapped = apply_mapping(AttributeMapping.parse({"google.subject": "assertion.arn"}), AssertionContext({"arn": PEGASUS_ARN}))
    g = GcpSide()
    fed = g.sts.exchange_federated_token(g.token(g.pod()), "aws-pool", "eks-pegasus-provider")
    ok = right == len(positives) + len(negatives) and mapped == {"google.subject": PEGASUS_ARN} and fed.subject == PEGASUS_ARN
    report(2, "attribute condition fidelity", ok, f"{right}/{len(positives) + len(negatives)} evaluations exact, google.subject={mapped.get('google.subject')!r}")


# 3 ----------------------------------------------------------------------------


def test_criterion_03_credential_lifetime_bound(report):
    rng = random.Random(3600)
    aws, gcp = Federation(seed=31), GcpSide(seed=32)
    gcp_pod = gcp.pod()
    successes = violations = 0
    while successes < 1000:
        ttl = rng.choice([600, 900, 3599, 3600, 3601, 7200, 86400, rng.randint(600, 86400)])
        wait = rng.randint(0, min(ttl, 86400) - 1)
        if rng.random() < 0.5:
            token = aws.idp.issue_bound_token(aws.pod, TokenRequestSpec(AWS_AUDIENCE, ttl))
            aws.clock.advance(wait)
            try:
                cred = aws.sts.assume_role_with_web_identity(token, "pegasus-role")
            except VerificationFailed:
                continue
            exp = decode_exp(token)
        else:
            token = gcp.token(gcp_pod, ttl=ttl)
            gcp.clock.advance(wait)
            try:
                cred = gcp.sts.impersonate_service_account(
                    gcp.sts.exchange_federated_token(token, "aws-pool", "eks-pegasus-provider"), GCP_ACCOUNT
                )
            except VerificationFailed:
                continue
            exp = decode_exp(token)
        successes += 1
        if not (0 < cred.lifetime <= MAX_CREDENTIAL_TTL and cred.expires_at <= exp):
            violations += 1
    report(3, "credential lifetime bound", violations == 0, f"{successes} randomized successful exchanges, {violations} violations of lifetime <= 3600s")


def decode_exp(token):
    from fedauth.tokens import decode_unverified

    return decode_unverified(token).claims.expires_at


# 4 ----------------------------------------------------------------------------


def fuzz_audience(rng, pinned):
    kind = rng.randrange(6)
    if kind == 0:
        return rng.choice(one_char_edits(pinned))
    if kind == 1:
        return pinned.upper() if pinned.upper() != pinned else pinned + "/"
    if kind == 2:
        return pinned + rng.choice(["/", " ", ".", "#x", "?a=b"])
    if kind == 3:
        return rng.choice(["storage.googleapis.com", "sts.amazonaws.com.evil", "https://sts.amazonaws.com", GCP_AUDIENCE, AWS_AUDIENCE])
    if kind == 4:
        return pinned[: rng.randrange(1, len(pinned))]
    return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz./:-_") for _ in range(rng.randint(1, 40)))


def test_criterion_04_confused_deputy(report):
    rng = random.Random(5_3)
    aws, gcp = Federation(seed=41), GcpSide(seed=42)
    gcp_pod = gcp.pod()
    attempts = denied = 0
    while attempts < 1000:
        use_aws = attempts % 2 == 0
        pinned = AWS_AUDIENCE if use_aws else GCP_AUDIENCE
        aud = fuzz_audience(rng, pinned)
        if aud == pinned:
            continue
        attempts += 1
        try:
            if use_aws:
                aws.sts.assume_role_with_web_identity(aws.idp.issue_bound_token(aws.pod, TokenRequestSpec(aud, 3600)), "pegasus-role")
            else:
                gcp.sts.exchange_federated_token(gcp.token(gcp_pod, aud), "aws-pool", "eks-pegasus-provider")
        except VerificationFailed as exc:
            denied += exc.detail_kind == "VerificationFailed:AudienceMismatch"
    issued = credential_count(aws.sts) + credential_count(gcp.sts) + len(gcp.sts._federated)
    ok = denied == attempts and issued == 0
    report(4, "confused-deputy mitigation", ok, f"{denied}/{attempts} audience-mismatched attempts denied at verification, {issued} credentials issued")


# 5 ----------------------------------------------------------------------------


def test_criterion_05_expiry_enforcement(report):
    rng = random.Random(55)
    fed = Federation(seed=51)
    tokens = [fed.idp.issue_bound_token(fed.pod, TokenRequestSpec(AWS_AUDIENCE, rng.randint(600, 86400))) for _ in range(200)]
    federated_denied = 0
    for token in tokens:
        at = decode_exp(token) + DEFAULT_SKEW + 1
        try:
            fed.sts.assume_role_with_web_identity(token, "pegasus-role", now=at)
        except VerificationFailed as exc:
            federated_denied += exc.detail_kind == "VerificationFailed:Expired"
    key = StaticKey("AKIDEXAMPLE", "wJalrXUtnFEMI/K7MDENG/bPxRfiCYEXAMPLEKEY", created_at=START)
    request = HttpRequest("GET", "/pegasus-data/report.csv", {"host": "pegasus-data.s3.amazonaws.com", "x-amz-date": "20250727T000000Z"})
    header = sign(request, key, "20250727", "us-east-1", "s3")
    oldest = max(decode_exp(t) for t in tokens) + DEFAULT_SKEW + 1
    legacy_accept = verify(request, header, StaticKeyStore([key]), now=oldest)
    ok = federated_denied == len(tokens) and legacy_accept
    report(5, "expiry enforcement", ok, f"federated deny {federated_denied}/{len(tokens)} at exp+skew+1, legacy accept of equally aged signature={legacy_accept}")


# 6 ----------------------------------------------------------------------------


def test_criterion_06_revocation(report):
    aws, gcp = Federation(seed=61), GcpSide(seed=62)
    gcp_pod = gcp.pod()
    creds = []
    for ttl in (600, 1200, 3600):
        creds.append((aws.sts, aws.sts.assume_role_with_web_identity(aws.idp.issue_bound_token(aws.pod, TokenRequestSpec(AWS_AUDIENCE, ttl)), "pegasus-role")))
        fedtok = gcp.sts.exchange_federated_token(gcp.token(gcp_pod, ttl=ttl), "aws-pool", "eks-pegasus-provider")
        creds.append((gcp.sts, gcp.sts.impersonate_service_account(fedtok, GCP_ACCOUNT)))
    fresh_aws = [aws.idp.issue_bound_token(aws.pod, TokenRequestSpec(AWS_AUDIENCE, 3600)) for _ in range(100)]
    fresh_gcp = [gcp.token(gcp_pod) for _ in range(100)]
    tick = aws.clock.now()
    aws.sts.revoke_provider(GKE_PROVIDER)
    gcp.sts.revoke_provider("eks-pegasus-provider")
    unknown = 0
    for t in fresh_aws:
        try:
            aws.sts.assume_role_with_web_identity(t, "pegasus-role")
        except UnknownProvider:
            unknown += 1
    for t in fresh_gcp:
        try:
            gcp.sts.exchange_federated_token(t, "aws-pool", "eks-pegasus-provider")
        except UnknownProvider:
            unknown += 1
    same_tick = aws.clock.now() == tick
    exact = 0
    for sts, c in creds:
        scope = c.scope[0]
        before = sts.check_access(c.credential_id, c.secret, c.session_token, scope, now=c.expires_at - 1)
        after = sts.check_access(c.credential_id, c.secret, c.session_token, scope, now=c.expires_at)
        exact += before and not after
    ok = unknown == 200 and same_tick and exact == len(creds)
    report(6, "revocation semantics", ok, f"{unknown}/200 post-revocation exchanges UnknownProvider in the same tick, {exact}/{len(creds)} pre-issued credentials valid exactly until expiry")


# 7 ----------------------------------------------------------------------------


def test_criterion_07_condition_oracle(report):
    rng = random.Random(20250727)
    from test_conditions import ATTRS, VALUES

    disagreements = 0
    for _ in range(10_000):
        node = gen_bool(rng, rng.randint(0, 4))
        ctx = {k: rng.choice(VALUES) for k in ATTRS if rng.random() < 0.9}
        try:
            want = oracle(node, ctx)
        except OracleMissing:
            want = "missing"
        try:
            got = eval_condition(parse_condition(render(node, rng)), AssertionContext(ctx))
        except MissingAttribute:
            got = "missing"
        disagreements += got != want
    rng = random.Random(7)
    fixpoint_failures = 0
    for _ in range(500):
        tree = ast_bool(rng, rng.randint(0, 6))
        text = to_source(tree)
        fixpoint_failures += parse_condition(text) != tree or to_source(parse_condition(text)) != text
    ok = disagreements == 0 and fixpoint_failures == 0
    report(7, "condition-language oracle", ok, f"10000 (expr, context) pairs, {disagreements} disagreements; 500 ASTs, {fixpoint_failures} print/parse fixpoint failures")


# 8 ----------------------------------------------------------------------------


def test_criterion_08_risk_arithmetic(report):
    p = RiskParameters(n_keys=1000, t_long=YEAR_SECONDS, i_blast=1, n_auths=1000, t_short=3600, i_scoped=1)
    ratio = risk_legacy(p) / risk_wif(p)
    rng = random.Random(8766)
    bad = 0
    for _ in range(1000):
        ints = [rng.randint(0, 10**5) for _ in range(6)]
        q = RiskParameters(*ints[:3], *ints[3:])
        bad += risk_legacy(q) != ints[0] * ints[1] * ints[2] or risk_wif(q) != ints[3] * ints[4] * ints[5]
        f = [rng.uniform(0, 1e4) for _ in range(6)]
        q = RiskParameters(*f[:3], *f[3:])
        bad += risk_legacy(q) != f[0] * f[1] * f[2] or risk_wif(q) != f[3] * f[4] * f[5]
    ok = abs(ratio - 8766) <= 0.5 and bad == 0
    report(8, "risk-model arithmetic", ok, f"R_legacy/R_wif = {ratio:.4f} (8766 +/- 0.5, 365.25-day year), {bad} multiplicativity mismatches in 2000 draws")


# 9 ----------------------------------------------------------------------------


class Stub:
    def __init__(self, idp_response=None, sts_response=None):
        self.idp_response, self.sts_response = idp_response, sts_response

    def get(self, url, headers=None):
        raise AssertionError("no GET expected")

    def post(self, url, body, headers=None):
        if url.endswith("/token"):
            return self.idp_response
        return self.sts_response


def test_criterion_09_algorithm_guards(report):
    fed = Federation(seed=91)
    cfg = WorkloadConfig("pegasus", "pegasus-sa", fed.pod.pod_uid, "https://idp.stub", "https://sts.stub", AWS_AUDIENCE, role="pegasus-role")
    results = []
    for idp_response in (Response(200, {"token": None}), Response(200, {}), Response(500, {"error": "boom"})):
        try:
            WorkloadClient(cfg, Stub(idp_response), fed.clock).credential()
            results.append(False)
        except TokenAcquisitionFailed as exc:
            results.append(str(exc).startswith("Token acquisition failed"))
    token = str(fed.idp.issue_bound_token(fed.pod, TokenRequestSpec(AWS_AUDIENCE, 3600)))
    for status in (400, 403, 500, 502):
        try:
            WorkloadClient(cfg, Stub(Response(200, {"token": token}), Response(status, {"error": "X"})), fed.clock).credential()
            results.append(False)
        except ExchangeFailed as exc:
            results.append(str(exc).startswith("Exchange failed") and exc.status == status)
    ok = all(results)
    report(9, "algorithm guard clauses", ok, f"{sum(results)}/{len(results)} injected failures raised the typed guard error (3 null-token, 4 non-success status)")


# 10 ---------------------------------------------------------------------------


def test_criterion_10_scenario_suite(report):
    t0 = time.perf_counter()
    scenarios = builtin_scenarios()
    first = run_all(scenarios)
    second = run_all(builtin_scenarios())
    elapsed = time.perf_counter() - t0
    passed = sum(r.passed for r in first)
    same = [r.to_dict() for r in first] == [r.to_dict() for r in second]
    ok = len(scenarios) >= 9 and passed == len(scenarios) and same and elapsed < 60
    report(10, "scenario suite", ok, f"{passed}/{len(scenarios)} built-ins pass, identical reports across two runs={same}, {elapsed:.2f}s (<60s)")
