import base64
import json
import pickle
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedauth.clock import FakeClock
from fedauth.errors import (
    AudienceMismatch,
    BadSignature,
    Expired,
    InvalidClaims,
    IssuerMismatch,
    Malformed,
    NotYetValid,
    TokenError,
    UnknownKeyId,
    UnsupportedAlgorithm,
)
from fedauth.tokens import (
    PRIVATE_JWK_FIELDS,
    JwkSet,
    JwtClaims,
    KeyStore,
    SigningKey,
    decode_unverified,
    mint_jwt,
    rotate_key,
    verify_jwt,
)

ISS = "https://idp.local"
SUB = "system:serviceaccount:pegasus:pegasus-sa"
AUD = "sts.amazonaws.com"
T0 = 1_753_574_400

ES_KEY = SigningKey.from_seed("tests")
RS_KEY = SigningKey.generate("RS256")


def raw_decode(segment: str) -> dict:
    """Independent decode: stdlib base64 plus json, nothing from the package."""
    return json.loads(base64.urlsafe_b64decode(segment + "=" * (-len(segment) % 4)))


def pegasus_claims(**over) -> JwtClaims:
    base = dict(issuer=ISS, subject=SUB, audience=[AUD], expires_at=T0 + 3600, issued_at=T0, not_before=T0)
    base.update(over)
    return JwtClaims(**base)


def keyset(*keys: SigningKey) -> JwkSet:
    return JwkSet(tuple(k.public_jwk() for k in keys))


@pytest.mark.parametrize("key", [ES_KEY, RS_KEY], ids=["ES256", "RS256"])
def test_pegasus_token_verifies(key):
    token = mint_jwt(pegasus_claims(), key)
    assert token.header["kid"] == key.key_id
    assert token.header["alg"] == key.algorithm
    claims = verify_jwt(token, keyset(key), ISS, AUD, T0 + 10)
    assert claims.subject == SUB
    assert claims.audience == (AUD,)
    assert claims.expires_at - claims.issued_at == 3600


def test_segments_are_unpadded_base64url():
    token = mint_jwt(pegasus_claims(), ES_KEY)
    assert token.count(".") == 2
    assert "=" not in token
    assert len(base64.urlsafe_b64decode(token.segments[2] + "==")) == 64  # raw r||s


def test_exp_equal_iat_is_invalid():
    with pytest.raises(InvalidClaims):
        mint_jwt(pegasus_claims(expires_at=T0), ES_KEY)


@pytest.mark.parametrize(
    "over",
    [
        {"audience": []},
        {"audience": [""]},
        {"issuer": "idp.local"},
        {"subject": ""},
        {"jwt_id": ""},
        {"extra": {"aud": "x"}},
        {"extra": {"pi": float("nan")}},
        {"extra": {"groups": ["a"]}},
        {"expires_at": T0 + 0.5},
    ],
)
def test_invalid_claims_rejected(over):
    with pytest.raises(InvalidClaims):
        mint_jwt(pegasus_claims(**over), ES_KEY)


def test_unsupported_algorithm():
    with pytest.raises(UnsupportedAlgorithm):
        SigningKey.generate("HS256")
    with pytest.raises(UnsupportedAlgorithm):
        KeyStore("none")


claim_text = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20)
extra_values = st.recursive(
    st.one_of(claim_text, st.integers(-(2**40), 2**40)),
    lambda inner: st.dictionaries(st.from_regex(r"[a-z]{1,8}", fullmatch=True), inner, max_size=3),
    max_leaves=6,
)


@st.composite
def claim_sets(draw):
    iat = draw(st.integers(0, 2**33))
    extra = draw(
        st.dictionaries(
            st.from_regex(r"[a-z][a-z_]{0,10}", fullmatch=True).filter(
                lambda k: k not in {"iss", "sub", "aud", "exp", "iat", "nbf", "jti"}
            ),
            extra_values,
            max_size=4,
        )
    )
    return JwtClaims(
        issuer="https://" + draw(st.from_regex(r"[a-z]{1,10}\.[a-z]{2,5}", fullmatch=True)),
        subject=draw(claim_text),
        audience=tuple(draw(st.lists(claim_text, min_size=1, max_size=3))),
        expires_at=iat + draw(st.integers(1, 10**6)),
        issued_at=iat,
        not_before=draw(st.one_of(st.none(), st.just(iat))),
        jwt_id=draw(st.from_regex(r"[0-9a-f]{32}", fullmatch=True)),
        extra=extra,
    )


@settings(max_examples=100, deadline=None)
@given(claim_sets())
def test_round_trip_matches_independent_decode(claims):
    token = mint_jwt(claims, ES_KEY)
    header_seg, payload_seg, _ = token.split(".")
    assert raw_decode(header_seg) == {"alg": "ES256", "kid": ES_KEY.key_id, "typ": "JWT"}
    assert raw_decode(payload_seg) == claims.to_payload()
    # canonical serialization: sorted keys, compact separators
    payload_json = base64.urlsafe_b64decode(payload_seg + "=" * (-len(payload_seg) % 4)).decode()
    assert payload_json == json.dumps(claims.to_payload(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    verified = verify_jwt(token, keyset(ES_KEY), claims.issuer, claims.audience[-1], claims.issued_at)
    assert verified == claims


def test_minting_is_deterministic_in_payload():
    claims = pegasus_claims(jwt_id="a" * 32)
    a, b = mint_jwt(claims, ES_KEY), mint_jwt(claims, ES_KEY)
    assert a.segments[:2] == b.segments[:2]


@pytest.mark.parametrize("segment", [1, 2], ids=["payload", "signature"])
def test_every_single_bit_flip_is_rejected(segment):
    token = mint_jwt(pegasus_claims(), ES_KEY)
    parts = token.split(".")
    raw = base64.urlsafe_b64decode(parts[segment] + "=" * (-len(parts[segment]) % 4))
    keys = keyset(ES_KEY)
    for bit in range(len(raw) * 8):
        mutated = bytearray(raw)
        mutated[bit // 8] ^= 1 << (bit % 8)
        forged = parts.copy()
        forged[segment] = base64.urlsafe_b64encode(bytes(mutated)).rstrip(b"=").decode()
        with pytest.raises(TokenError):
            verify_jwt(".".join(forged), keys, ISS, AUD, T0 + 1)


def test_every_text_bit_flip_in_signature_is_rejected():
    token = mint_jwt(pegasus_claims(), ES_KEY)
    h, p, s = token.split(".")
    keys = keyset(ES_KEY)
    for i in range(len(s)):
        for bit in range(7):
            c = chr(ord(s[i]) ^ (1 << bit))
            if c == s[i]:
                continue
            with pytest.raises(TokenError):
                verify_jwt(f"{h}.{p}.{s[:i]}{c}{s[i + 1:]}", keys, ISS, AUD, T0 + 1)


@settings(max_examples=200, deadline=None)
@given(st.text(min_size=0, max_size=30))
def test_audience_is_exact_membership(candidate):
    token = mint_jwt(pegasus_claims(audience=[AUD, "other"]), ES_KEY)
    keys = keyset(ES_KEY)
    if candidate in (AUD, "other"):
        assert verify_jwt(token, keys, ISS, candidate, T0)
    else:
        with pytest.raises(AudienceMismatch):
            verify_jwt(token, keys, ISS, candidate, T0)


@pytest.mark.parametrize("near", ["sts.amazonaws.co", "sts.amazonaws.com.", "STS.amazonaws.com", "amazonaws.com", ""])
def test_audience_near_misses(near):
    token = mint_jwt(pegasus_claims(), ES_KEY)
    with pytest.raises(AudienceMismatch):
        verify_jwt(token, keyset(ES_KEY), ISS, near, T0)


def test_wrong_audience_for_pegasus_token():
    token = mint_jwt(pegasus_claims(), ES_KEY)
    with pytest.raises(AudienceMismatch):
        verify_jwt(token, keyset(ES_KEY), ISS, "storage.googleapis.com", T0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**33), st.integers(1, 10**6), st.integers(0, 600))
def test_expired_at_exp_plus_skew_plus_one(iat, ttl, skew):
    claims = pegasus_claims(issued_at=iat, expires_at=iat + ttl, not_before=None)
    token = mint_jwt(claims, ES_KEY)
    with pytest.raises(Expired):
        verify_jwt(token, keyset(ES_KEY), ISS, AUD, iat + ttl + skew + 1, skew=skew)
    assert verify_jwt(token, keyset(ES_KEY), ISS, AUD, iat + ttl + skew - 1, skew=skew)


def test_time_window_boundaries():
    token = mint_jwt(pegasus_claims(not_before=T0 + 100), ES_KEY)
    keys = keyset(ES_KEY)
    verify_jwt(token, keys, ISS, AUD, T0 + 70)
    with pytest.raises(NotYetValid):
        verify_jwt(token, keys, ISS, AUD, T0 + 69)
    verify_jwt(token, keys, ISS, AUD, T0 + 3629)
    with pytest.raises(Expired):
        verify_jwt(token, keys, ISS, AUD, T0 + 3630)


def test_check_order_and_kinds():
    token = mint_jwt(pegasus_claims(), ES_KEY)
    other = SigningKey.from_seed("other")
    with pytest.raises(UnknownKeyId):
        verify_jwt(token, keyset(other), ISS, AUD, T0)
    with pytest.raises(IssuerMismatch):
        verify_jwt(token, keyset(ES_KEY), "https://idp.local/", "nope", T0 + 10**9)
    with pytest.raises(AudienceMismatch):
        verify_jwt(token, keyset(ES_KEY), ISS, "nope", T0 + 10**9)


def test_alg_confusion_is_rejected():
    token = mint_jwt(pegasus_claims(), ES_KEY)
    h, p, s = token.split(".")
    header = raw_decode(h) | {"alg": "RS256"}
    h2 = base64.urlsafe_b64encode(json.dumps(header).encode()).rstrip(b"=").decode()
    with pytest.raises(BadSignature):
        verify_jwt(f"{h2}.{p}.{s}", keyset(ES_KEY), ISS, AUD, T0)


@pytest.mark.parametrize("bad", ["a.b", "a.b.c.d", "", "..", "!!.!!.!!", 42])
def test_decode_malformed(bad):
    with pytest.raises(Malformed):
        decode_unverified(bad)


def test_decode_unverified_ignores_signer():
    stranger = SigningKey.from_seed("stranger")
    token = mint_jwt(pegasus_claims(), stranger)
    decoded = decode_unverified(token)
    header, claims = decoded
    assert decoded.unverified is True
    assert header["kid"] == stranger.key_id
    assert claims.subject == SUB


def _scan_for_private_fields(obj) -> list[str]:
    found = []
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k in PRIVATE_JWK_FIELDS:
                found.append(k)
            found += _scan_for_private_fields(v)
    elif isinstance(obj, list):
        for v in obj:
            found += _scan_for_private_fields(v)
    return found


def test_jwks_purity():
    store = KeyStore("ES256", clock=FakeClock(T0))
    store.active
    for _ in range(3):
        store.rotate()
    rsa_set = keyset(RS_KEY, SigningKey.generate("RS256"))
    for ks in (store.jwks(), rsa_set):
        doc = json.loads(ks.to_json())
        assert set(doc) == {"keys"}
        assert _scan_for_private_fields(doc) == []
        for k in doc["keys"]:
            assert k["use"] == "sig"
            assert set(k) <= {"kty", "crv", "x", "y", "n", "e", "kid", "alg", "use"}


def test_jwks_rejects_private_material_and_duplicates():
    doc = ES_KEY.public_jwk().to_dict() | {"d": "AAAA"}
    with pytest.raises(TokenError):
        JwkSet.from_dict({"keys": [doc]})
    with pytest.raises(Malformed):
        keyset(ES_KEY, ES_KEY)


def test_signing_key_never_serialized():
    assert "private" not in repr(ES_KEY).lower() or "hidden" in repr(ES_KEY).lower()
    with pytest.raises(TypeError):
        pickle.dumps(ES_KEY)


def test_jwks_json_round_trip():
    ks = keyset(ES_KEY, RS_KEY)
    again = JwkSet.from_json(ks.to_json())
    assert again.key_ids == ks.key_ids
    token = mint_jwt(pegasus_claims(), RS_KEY)
    assert verify_jwt(token, again, ISS, AUD, T0)


def test_rotation_overlap_keeps_old_tokens_valid():
    clock = FakeClock(T0)
    store = KeyStore("ES256", overlap_seconds=7200, clock=clock, seed="rot")
    old = store.mint(pegasus_claims())
    new_key, published = rotate_key(store)
    assert new_key.key_id != decode_unverified(old).header["kid"]
    assert verify_jwt(old, published, ISS, AUD, T0)
    clock.advance(7199)
    assert decode_unverified(old).header["kid"] in store.jwks().key_ids
    clock.advance(1)
    assert decode_unverified(old).header["kid"] not in store.jwks().key_ids


def test_rotation_with_zero_overlap_drops_old_key():
    store = KeyStore("ES256", overlap_seconds=0, clock=FakeClock(T0))
    old = store.mint(pegasus_claims())
    _, published = store.rotate()
    with pytest.raises(UnknownKeyId):
        verify_jwt(old, published, ISS, AUD, T0)


def test_rotations_give_distinct_kids():
    store = KeyStore("ES256", clock=FakeClock(T0), seed="distinct")
    store.active
    store.rotate()
    _, published = store.rotate()
    assert len(published) == 3
    assert len(set(published.key_ids)) == 3


def test_concurrent_mint_and_rotate_never_sign_with_unpublished_key():
    clock = FakeClock(T0)
    store = KeyStore("ES256", overlap_seconds=10**6, clock=clock)
    tokens: list[str] = []
    lock = threading.Lock()

    def minter():
        for _ in range(25):
            t = store.mint(pegasus_claims())
            with lock:
                tokens.append(t)

    def rotator():
        for _ in range(10):
            store.rotate()

    threads = [threading.Thread(target=minter) for _ in range(4)] + [threading.Thread(target=rotator)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    published = store.jwks()
    assert len(tokens) == 100
    for t in tokens:
        verify_jwt(t, published, ISS, AUD, T0)


def test_verification_is_thread_safe():
    token = mint_jwt(pegasus_claims(), ES_KEY)
    keys = keyset(ES_KEY)
    errors = []

    def worker():
        try:
            for _ in range(20):
                verify_jwt(token, keys, ISS, AUD, T0)
        except Exception as exc:  # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
