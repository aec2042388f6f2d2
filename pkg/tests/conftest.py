import pytest

from fedauth.clock import FakeClock
from fedauth.conditions import issuer_host_path
from fedauth.idp import IdentityProvider, ServiceAccount
from fedauth.ids import IdSource
from fedauth.sts import OidcProviderRegistration, SecurityTokenService, TrustPolicy
from fedauth.conditions import StringEqualsCondition
from fedauth.web import LocalTransport

GKE_ISSUER = (
    "https://container.googleapis.com/v1/projects/kubernetes-platform-gcp-project"
    "/locations/us-central1/clusters/pegasus"
)
GKE_PROVIDER = issuer_host_path(GKE_ISSUER)
AWS_AUDIENCE = "sts.amazonaws.com"
PEGASUS_SUBJECT = "system:serviceaccount:pegasus:pegasus-sa"
PEGASUS_ARN = "arn:aws:sts::123456789:assumed-role/pegasus-iam-role/pegasus-sa"
START = 1_753_574_400


class Federation:
    """One IdP trusted by one STS, wired through an in-process transport."""

    def __init__(self, seed: int = 7, audiences=(AWS_AUDIENCE,), scope=("s3://pegasus-data",)):
        self.clock = FakeClock(START)
        ids = IdSource(seed)
        self.transport = LocalTransport()
        self.idp = IdentityProvider(GKE_ISSUER, clock=self.clock, ids=ids.spawn("idp"), key_seed=f"{seed}")
        self.transport.mount(GKE_ISSUER, self.idp.app())
        self.sts = SecurityTokenService(clock=self.clock, ids=ids.spawn("sts"), transport=self.transport)
        self.sts_url = "https://sts.test.local"
        self.transport.mount(self.sts_url, self.sts.app())
        self.sts.register_provider(
            OidcProviderRegistration(
                provider_id=GKE_PROVIDER,
                issuer=GKE_ISSUER,
                audiences=tuple(audiences),
                jwks_uri=GKE_ISSUER + "/openid/v1/jwks",
            )
        )
        self.sts.apply_trust_policy(
            TrustPolicy(
                role_name="pegasus-role",
                federated_principal=GKE_PROVIDER,
                condition=StringEqualsCondition(
                    {f"{GKE_PROVIDER}:sub": PEGASUS_SUBJECT, f"{GKE_PROVIDER}:aud": AWS_AUDIENCE}
                ),
                scope=tuple(scope),
            )
        )
        self.pod = self.idp.register_pod(ServiceAccount("pegasus", "pegasus-sa"), "pegasus-0")


@pytest.fixture
def federation() -> Federation:
    return Federation()
