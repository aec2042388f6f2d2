import json

import pytest
import yaml
from click.testing import CliRunner

from fedauth.cli import main


@pytest.fixture
def run():
    runner = CliRunner()
    return lambda *args, **kw: runner.invoke(main, list(args), **kw)


def test_version(run):
    r = run("--version")
    assert r.exit_code == 0 and "0.1.0" in r.output


def test_scenario_list(run):
    r = run("scenario", "list")
    assert r.exit_code == 0
    assert "happy-path-gcp-to-aws" in r.output and "confused-deputy [confused-deputy]" in r.output


def test_scenario_run_all(run):
    r = run("scenario", "run", "--all")
    assert r.exit_code == 0, r.output
    assert "10/10 scenarios passed" in r.output


def test_scenario_run_json(run):
    r = run("scenario", "run", "expired-token", "--json")
    assert r.exit_code == 0
    assert json.loads(r.stdout)[0]["passed"] is True


def test_scenario_run_failure_and_malformed(run, tmp_path):
    failing = tmp_path / "f.yaml"
    failing.write_text(yaml.safe_dump({
        "name": "f",
        "idps": {"i": {"issuer": "https://i.example"}},
        "pods": {"p": {"idp": "i", "namespace": "n", "serviceaccount": "s"}},
        "steps": [{"action": "token", "pod": "p", "audience": "a", "expect": "Denied"}],
    }))
    assert run("scenario", "run", str(failing)).exit_code == 1
    broken = tmp_path / "b.yaml"
    broken.write_text("name: b\nsteps: [{action: fly}]\n")
    assert run("scenario", "run", str(broken)).exit_code == 2
    assert run("scenario", "run").exit_code == 2
    assert run("scenario", "run", "x", "--all").exit_code == 2


def test_legacy_sign(run):
    r = run("legacy", "sign", "--key-id", "AKIDEXAMPLE", "--date", "20250727", "--region", "us-east-1", "--service", "s3",
            env={"FEDAUTH_SECRET_KEY": "wJalrXUtnFEMI/K7MDENG/bPxRfiCYEXAMPLEKEY"})
    assert r.exit_code == 0
    assert r.output.startswith("Authorization: AWS4-HMAC-SHA256 Credential=AKIDEXAMPLE/20250727/us-east-1/s3/aws4_request, SignedHeaders=host;x-amz-date, Signature=")


def test_risk_report(run, tmp_path):
    r = run("risk", "report", "--json")
    assert r.exit_code == 0 and json.loads(r.output)["risk"]["lower_risk_model"] == "federated"
    r = run("risk", "report", "--text")
    assert "Operational Complexity" in r.output and "{" not in r.output
    bad = tmp_path / "p.yaml"
    bad.write_text("n_keys: -3\n")
    assert run("risk", "report", "--params", str(bad)).exit_code == 2


@pytest.mark.parametrize(
    "expr, attrs, code, out",
    [
        ("assertion.arn.endsWith(':assumed-role/pegasus-iam-role/pegasus-sa')", ["assertion.arn=arn:aws:sts::123456789:assumed-role/pegasus-iam-role/pegasus-sa"], 0, "true"),
        ("assertion.sub == 'x' && assertion.ns == 'y'", ["sub=x", "ns=z"], 0, "false"),
        ("assertion.sub ==", [], 2, ""),
        ("assertion.sub == 'x'", [], 3, ""),
        ("true", ["novalue"], 2, ""),
    ],
)
def test_condition_eval(run, expr, attrs, code, out):
    args = ["condition", "eval", "--expr", expr]
    for a in attrs:
        args += ["--attr", a]
    r = run(*args)
    assert r.exit_code == code
    assert r.stdout.strip() == out


def test_condition_syntax_error_points_at_offset(run):
    r = run("condition", "eval", "--expr", "assertion.a == 'x' &&")
    assert r.exit_code == 2
    lines = r.stderr.splitlines()
    assert lines[-1].index("^") == len("assertion.a == 'x' &&")


def test_trust_commands_report_unreachable_sts(run, tmp_path):
    doc = tmp_path / "t.yaml"
    doc.write_text(yaml.safe_dump({"issuer": "https://x.example", "audiences": ["a"], "jwks_uri": "https://x.example/jwks"}))
    assert run("trust", "apply", "-f", str(doc), "--sts", "http://127.0.0.1:1").exit_code == 1
    assert run("trust", "revoke", "p", "--sts", "http://127.0.0.1:1").exit_code == 1


def test_workload_bad_config(run, tmp_path):
    cfg = tmp_path / "w.yaml"
    cfg.write_text("namespace: n\n")
    assert run("workload", "run", "--config", str(cfg), "--resource", "r").exit_code == 2


def test_sts_serve_bad_document(run, tmp_path):
    doc = tmp_path / "t.yaml"
    doc.write_text("- {nonsense: 1}\n")
    r = run("sts", "serve", "--port", "0", "-f", str(doc))
    assert r.exit_code == 1 and "PolicyError" in r.stderr


def test_help_lists_every_group(run):
    r = run("--help")
    for group in ("scenario", "resource", "idp", "sts", "trust", "workload", "legacy", "risk", "condition"):
        assert group in r.output
