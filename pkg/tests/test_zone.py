import pytest

from dualdns import codec, crypto, zone
from dualdns.codec import Name, TYPE_A, TYPE_DNSKEY

NOW = 1_700_000_000


def test_parse_simple_record():
    z = zone.parse_zone_file(
        "$ORIGIN socratescrc.\n"
        "@ 3600 IN SOA ns1 admin 1 2 3 4 5\n"
        "test0 3600 IN A 10.9.9.10\n")
    rec = z.rrset(Name.from_text("test0.socratescrc"), TYPE_A)[0]
    assert rec.rdata.to_text() == "10.9.9.10"
    assert rec.ttl == 3600


def test_reference_zone_has_ten_unique_a_labels():
    z = zone.parse_zone_file(zone.reference_zone_text())
    a_records = [r for r in z.records if r.rtype == TYPE_A and
                 r.name.labels[0].startswith(b"test")]
    assert len(a_records) == 10
    assert len({r.name.key() for r in a_records}) == 10


def test_ttl_too_large_rejected():
    with pytest.raises(zone.TtlTooLarge):
        zone.parse_zone_file(
            "$ORIGIN x.\n@ 20000000 IN SOA a b 1 2 3 4 5\n")


def test_missing_soa_rejected():
    with pytest.raises(zone.NoSoa):
        zone.parse_zone_file("$ORIGIN x.\n@ 60 IN A 1.2.3.4\n")


def test_syntax_error_carries_line_number():
    with pytest.raises(zone.ZoneSyntaxError) as exc:
        zone.parse_zone_file("$ORIGIN x.\nbroken line\n")
    assert exc.value.lineno == 2


def _signed(pre=crypto.ECDSAP256SHA256, post=crypto.FALCON512):
    return zone.sign_zone(zone.parse_zone_file(zone.reference_zone_text()),
                          pre, post, NOW)


def test_dual_signing_two_rrsigs_per_rrset():
    z = _signed()
    for (owner_key, rtype), rrset in z.rrsets().items():
        sigs = z.sigs_for(rrset[0].name, rtype)
        algs = sorted(s.rdata.algorithm for s in sigs)
        assert algs == [13, 240], (owner_key, rtype)
    # four DNSKEYs, KSK+ZSK signatures per class over the key RRset
    assert len(z.dnskey_records) == 4
    key_sigs = z.sigs_for(z.origin, TYPE_DNSKEY)
    assert sorted(s.rdata.algorithm for s in key_sigs) == [13, 13, 240, 240]


def test_signing_is_deterministic():
    a = _signed()
    b = _signed()
    for key in a.rrsigs:
        assert [s.rdata.signature for s in a.rrsigs[key]] == \
            [s.rdata.signature for s in b.rrsigs[key]]


def test_every_rrset_dual_verifies():
    z = _signed()
    for (_, rtype), rrset in z.rrsets().items():
        ordered = crypto.sort_rrset_canonically(rrset)
        crypto.verify_dual(z.sigs_for(rrset[0].name, rtype), ordered,
                           z.dnskey_records, NOW)
    crypto.verify_dual(z.sigs_for(z.origin, TYPE_DNSKEY), z.dnskey_records,
                       z.dnskey_records, NOW)


def test_single_suite_zone():
    z = zone.sign_zone(zone.parse_zone_file(zone.reference_zone_text()),
                       None, crypto.SPHINCSSHA256128S, NOW)
    assert len(z.dnskey_records) == 2
    for (_, rtype), rrset in z.rrsets().items():
        sigs = z.sigs_for(rrset[0].name, rtype)
        assert [s.rdata.algorithm for s in sigs] == [242]


def test_same_class_suites_rejected():
    with pytest.raises(zone.ClassMismatch):
        zone.sign_zone(zone.parse_zone_file(zone.reference_zone_text()),
                       crypto.ECDSAP256SHA256, crypto.RSASHA256, NOW)


def test_make_ds_two_records_and_digest_definition():
    z = _signed()
    ds = zone.make_ds(z)
    assert len(ds) == 2
    ksks = [r for r in z.dnskey_records
            if r.rdata.flags == codec.DnskeyData.FLAG_KSK]
    for rec in ds:
        match = next(k for k in ksks
                     if k.rdata.algorithm == rec.rdata.algorithm)
        assert rec.rdata.digest_type == 2
        assert rec.rdata.digest == zone.ds_digest(z.origin, match.rdata)
        assert rec.rdata.key_tag == crypto.key_tag(match.rdata.rdata_bytes())


def test_ds_digest_sensitive_to_key_bytes():
    z = _signed()
    ksk = next(k for k in z.dnskey_records
               if k.rdata.flags == codec.DnskeyData.FLAG_KSK)
    original = zone.ds_digest(z.origin, ksk.rdata)
    tampered = codec.DnskeyData(ksk.rdata.flags, 3, ksk.rdata.algorithm,
                                b"\x00" + ksk.rdata.public_key[1:])
    assert zone.ds_digest(z.origin, tampered) != original


def test_make_ds_requires_signed_zone():
    z = zone.parse_zone_file(zone.reference_zone_text())
    with pytest.raises(zone.NotSigned):
        zone.make_ds(z)


def test_chain_property_root_to_child():
    child = _signed()
    root_unsigned = zone.parse_zone_file(zone.root_zone_text())
    root_unsigned.records.extend(zone.make_ds(child))
    root = zone.sign_zone(root_unsigned, crypto.ECDSAP256SHA256,
                          crypto.FALCON512, NOW)
    ds_set = root.rrset(child.origin, codec.TYPE_DS)
    assert len(ds_set) == 2
    # every DS-referenced KSK verifies the child DNSKEY RRset, per class
    for ds in ds_set:
        ksk = next(k for k in child.dnskey_records
                   if k.rdata.flags == codec.DnskeyData.FLAG_KSK and
                   k.rdata.algorithm == ds.rdata.algorithm)
        assert zone.ds_digest(child.origin, ksk.rdata) == ds.rdata.digest
        sig = next(s for s in child.sigs_for(child.origin, TYPE_DNSKEY)
                   if s.rdata.algorithm == ds.rdata.algorithm and
                   s.rdata.key_tag == ds.rdata.key_tag)
        assert crypto.verify_rrsig(sig, child.dnskey_records,
                                   ksk.rdata.public_key, NOW)


def test_print_parse_roundtrip():
    z = _signed()
    text = zone.print_zone(z)
    back = zone.parse_zone_file(text)
    assert back.origin == z.origin
    assert back.signed
    assert back.records == z.records
    assert back.dnskey_records == z.dnskey_records
    for key, sigs in z.rrsigs.items():
        assert back.rrsigs[key] == sigs


def test_trust_anchor_text_roundtrip():
    z = _signed()
    anchor = zone.TrustAnchor.for_zone(z)
    back = zone.TrustAnchor.from_text(anchor.to_text())
    assert back.zone == anchor.zone
    assert [r.rdata for r in back.ds_set] == [r.rdata for r in anchor.ds_set]
    classes = {crypto.REGISTRY.klass_of(r.rdata.algorithm)
               for r in back.ds_set}
    assert classes == {crypto.PRE_QUANTUM, crypto.POST_QUANTUM}


def test_sign_zone_with_supplied_keys():
    keys = [crypto.generate_keypair(code, role, b"supplied/%d" % code)
            for code in (crypto.ECDSAP256SHA256, crypto.FALCON512)
            for role in (crypto.KSK, crypto.ZSK)]
    z = zone.sign_zone(zone.parse_zone_file(zone.reference_zone_text()),
                       crypto.ECDSAP256SHA256, crypto.FALCON512, NOW,
                       keys=keys)
    assert sorted(k.key_tag for k in z.keys) == \
        sorted(k.key_tag for k in keys)


def test_root_zone_with_ds_lines_roundtrips_as_text():
    child = _signed()
    root_unsigned = zone.parse_zone_file(zone.root_zone_text())
    root_unsigned.records.extend(zone.make_ds(child))
    root = zone.sign_zone(root_unsigned, crypto.ECDSAP256SHA256,
                          crypto.FALCON512, NOW)
    back = zone.parse_zone_file(zone.print_zone(root))
    assert back.records == root.records
    assert back.rrset(child.origin, codec.TYPE_DS) == \
        root.rrset(child.origin, codec.TYPE_DS)
