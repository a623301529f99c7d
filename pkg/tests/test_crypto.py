import random

import pytest

from dualdns import codec, crypto
from dualdns.codec import ARdata, Name, Record, CLASS_IN, TYPE_A

NOW = 1_700_000_000


def keytag_oracle(rdata):
    """Independent transcription of the RFC 4034 Appendix B reference
    routine (kept deliberately separate from the production implementation).
    """
    ac = 0
    for i in range(len(rdata)):
        if i % 2 == 0:
            ac += rdata[i] * 256
        else:
            ac += rdata[i]
    ac += (ac >> 16) & 0xFFFF
    return ac & 0xFFFF


def test_key_tag_zeroes():
    assert crypto.key_tag(b"\x00" * 8) == 0


def test_key_tag_small_golden():
    data = bytes([0x01, 0x02, 0x03, 0x04])
    assert crypto.key_tag(data) == keytag_oracle(data) == 0x0406


def test_key_tag_trailing_zero_words_are_neutral():
    data = bytes(range(1, 11))
    assert crypto.key_tag(data + b"\x00\x00") == crypto.key_tag(data)


def test_key_tag_matches_oracle_on_random_inputs():
    rng = random.Random(4034)
    for _ in range(1000):
        data = bytes(rng.randrange(256)
                     for _ in range(rng.randrange(4, 80)))
        assert crypto.key_tag(data) == keytag_oracle(data)


def test_key_tag_too_short():
    with pytest.raises(crypto.TooShort):
        crypto.key_tag(b"\x01\x02")


SUITE_TABLE = {
    crypto.ECDSAP256SHA256: (64, 64),
    crypto.RSASHA256: (256, 260),
    crypto.FALCON512: (690, 897),
    crypto.DILITHIUM2: (2420, 1312),
    crypto.SPHINCSSHA256128S: (7856, 32),
}


@pytest.mark.parametrize("code", sorted(SUITE_TABLE))
def test_suite_size_table(code, registry):
    suite = registry.get(code)
    assert (suite.sig_len, suite.pubkey_len) == SUITE_TABLE[code]


@pytest.mark.parametrize("code", sorted(SUITE_TABLE))
def test_keygen_deterministic_and_sized(code, registry):
    k1 = crypto.generate_keypair(code, crypto.KSK, b"seed-x")
    k2 = crypto.generate_keypair(code, crypto.KSK, b"seed-x")
    assert k1 == k2
    assert len(k1.public) == registry.get(code).pubkey_len
    assert k1.key_tag == crypto.key_tag(k1.dnskey_rdata().rdata_bytes())


def test_keygen_distinct_seeds_distinct_keys():
    a = crypto.generate_keypair(crypto.FALCON512, crypto.ZSK, b"a")
    b = crypto.generate_keypair(crypto.FALCON512, crypto.ZSK, b"b")
    assert a.public != b.public


def test_keygen_unknown_algorithm():
    with pytest.raises(crypto.UnknownAlgorithm):
        crypto.generate_keypair(99, crypto.ZSK, b"s")


def _rrset(*addrs, name="test0.socratescrc", ttl=3600):
    owner = Name.from_text(name)
    return [Record(owner, TYPE_A, CLASS_IN, ttl, ARdata(a)) for a in addrs]


@pytest.mark.parametrize("code", sorted(SUITE_TABLE))
def test_sign_verify_roundtrip_and_byte_flip(code, registry):
    key = crypto.generate_keypair(code, crypto.ZSK, b"sv")
    rrset = _rrset("10.9.9.1", "10.9.9.2")
    sig = crypto.sign_rrset(rrset, key, NOW - 3600, NOW + 86400)
    assert len(sig.rdata.signature) == registry.get(code).sig_len
    assert crypto.verify_rrsig(sig, rrset, key.public, NOW)
    for pos in (0, len(sig.rdata.signature) // 2, -1):
        broken = bytearray(sig.rdata.signature)
        broken[pos] ^= 0x01
        bad = sig.copy()
        rd = sig.rdata
        bad.rdata = codec.RrsigData(rd.type_covered, rd.algorithm, rd.labels,
                                    rd.original_ttl, rd.expiration,
                                    rd.inception, rd.key_tag, rd.signer,
                                    bytes(broken))
        assert not crypto.verify_rrsig(bad, rrset, key.public, NOW)


def test_canonical_order_is_input_independent():
    key = crypto.generate_keypair(crypto.FALCON512, crypto.ZSK, b"c")
    forward = _rrset("10.9.9.1", "10.9.9.2")
    backward = _rrset("10.9.9.2", "10.9.9.1")
    s1 = crypto.sign_rrset(forward, key, NOW, NOW + 10)
    s2 = crypto.sign_rrset(backward, key, NOW, NOW + 10)
    assert s1.rdata.signature == s2.rdata.signature
    ordered = crypto.sort_rrset_canonically(backward)
    assert ordered[0].rdata.to_text() == "10.9.9.1"


def test_verify_respects_validity_window():
    key = crypto.generate_keypair(crypto.FALCON512, crypto.ZSK, b"w")
    rrset = _rrset("10.9.9.9")
    sig = crypto.sign_rrset(rrset, key, NOW - 100, NOW - 10)
    assert not crypto.verify_rrsig(sig, rrset, key.public, NOW)
    assert crypto.verify_rrsig(sig, rrset, key.public, NOW - 50)


def test_sign_empty_and_mixed_rrsets_rejected():
    key = crypto.generate_keypair(crypto.FALCON512, crypto.ZSK, b"e")
    with pytest.raises(crypto.EmptyRrset):
        crypto.sign_rrset([], key, NOW, NOW + 10)
    mixed = _rrset("1.2.3.4") + _rrset("1.2.3.5", name="other.example")
    with pytest.raises(crypto.MixedRrset):
        crypto.sign_rrset(mixed, key, NOW, NOW + 10)


def test_ksk_cannot_sign_data_rrsets():
    ksk = crypto.generate_keypair(crypto.FALCON512, crypto.KSK, b"k")
    with pytest.raises(crypto.RoleViolation):
        crypto.sign_rrset(_rrset("1.1.1.1"), ksk, NOW, NOW + 10)


class TestVerifyDual:
    @pytest.fixture()
    def material(self):
        pre = crypto.generate_keypair(crypto.ECDSAP256SHA256, crypto.ZSK,
                                      b"d-pre")
        post = crypto.generate_keypair(crypto.FALCON512, crypto.ZSK,
                                       b"d-post")
        rrset = _rrset("10.9.9.10")
        owner = rrset[0].name
        sigs = [crypto.sign_rrset(rrset, k, NOW - 60, NOW + 60)
                for k in (pre, post)]
        keys = [k.dnskey_record(owner, 3600) for k in (pre, post)]
        return rrset, sigs, keys, pre, post

    def test_both_classes_verify(self, material):
        rrset, sigs, keys, pre, post = material
        out = crypto.verify_dual(sigs, rrset, keys, NOW)
        assert out.preq == pre.key_tag and out.postq == post.key_tag

    def test_order_invariant(self, material):
        rrset, sigs, keys, pre, post = material
        a = crypto.verify_dual(sigs, rrset, keys, NOW)
        b = crypto.verify_dual(sigs[::-1], rrset, keys[::-1], NOW)
        assert (a.preq, a.postq) == (b.preq, b.postq)

    def test_missing_post_class(self, material):
        rrset, sigs, keys, pre, post = material
        with pytest.raises(crypto.MissingClass) as exc:
            crypto.verify_dual(sigs[:1], rrset, keys, NOW)
        assert exc.value.klass == crypto.POST_QUANTUM

    def test_corrupted_post_signature(self, material):
        rrset, sigs, keys, pre, post = material
        rd = sigs[1].rdata
        bad = sigs[1].copy()
        bad.rdata = codec.RrsigData(
            rd.type_covered, rd.algorithm, rd.labels, rd.original_ttl,
            rd.expiration, rd.inception, rd.key_tag, rd.signer,
            bytes([rd.signature[0] ^ 0xFF]) + rd.signature[1:])
        with pytest.raises(crypto.NoValidSignature) as exc:
            crypto.verify_dual([sigs[0], bad], rrset, keys, NOW)
        assert exc.value.klass == crypto.POST_QUANTUM

    def test_empty_sigs(self, material):
        rrset, _, keys, _, _ = material
        with pytest.raises(crypto.EmptyRrset):
            crypto.verify_dual([], rrset, keys, NOW)


def test_key_file_roundtrip(tmp_path):
    key = crypto.generate_keypair(crypto.DILITHIUM2, crypto.KSK, b"file")
    path = tmp_path / "k.key"
    crypto.save_keypair(key, path)
    loaded = crypto.load_keypair(path)
    assert loaded == key
    header = path.read_text().splitlines()[0]
    assert header.startswith("Algorithm:")


def test_verify_unknown_algorithm_raises_not_false():
    """An unverifiable algorithm is an error, distinct from a forgery."""
    key = crypto.generate_keypair(crypto.FALCON512, crypto.ZSK, b"u")
    rrset = _rrset("10.9.9.9")
    sig = crypto.sign_rrset(rrset, key, NOW - 60, NOW + 60)
    rd = sig.rdata
    alien = sig.copy()
    alien.rdata = codec.RrsigData(rd.type_covered, 99, rd.labels,
                                  rd.original_ttl, rd.expiration,
                                  rd.inception, rd.key_tag, rd.signer,
                                  rd.signature)
    with pytest.raises(crypto.UnknownAlgorithm):
        crypto.verify_rrsig(alien, rrset, key.public, NOW)
