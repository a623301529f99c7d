import pytest

from dualdns import codec, crypto, resolver as resolver_mod, simnet, zone
from dualdns.codec import DnskeyData, Name, RrsigData, TYPE_A, TYPE_DNSKEY

from conftest import NOW, copy_testbed, make_sim_resolver

BED = simnet.cached_testbed(crypto.ECDSAP256SHA256, crypto.FALCON512, NOW)


def flip_sig(sig_record, pos=0):
    rd = sig_record.rdata
    broken = bytearray(rd.signature)
    broken[pos] ^= 0xFF
    out = sig_record.copy()
    out.rdata = RrsigData(rd.type_covered, rd.algorithm, rd.labels,
                          rd.original_ttl, rd.expiration, rd.inception,
                          rd.key_tag, rd.signer, bytes(broken))
    return out


def test_full_walk_returns_secure_answer():
    res, _ = make_sim_resolver(BED, crypto.ECDSAP256SHA256)
    result = res.resolve("test0.socratescrc", TYPE_A, now=NOW)
    assert result.addresses() == ["10.9.9.10"]
    assert result.secure is True
    assert result.fragments >= 2      # answer and DNSKEY exchanges truncated


def test_second_query_is_served_from_cache_with_no_traffic():
    res, net = make_sim_resolver(BED, crypto.ECDSAP256SHA256)
    res.resolve("test0.socratescrc", TYPE_A, now=NOW)
    t_before = net.clock
    again = res.resolve("test0.socratescrc", TYPE_A, now=NOW)
    assert net.clock == t_before            # no virtual network activity
    assert again.secure and again.fragments == 0


def test_all_ten_fixture_names_resolve():
    res, _ = make_sim_resolver(BED, crypto.ECDSAP256SHA256)
    for i in range(10):
        result = res.resolve("test%d.socratescrc" % i, TYPE_A, now=NOW)
        assert result.addresses() == ["10.9.9.%d" % (10 + i)]
        assert result.secure


def test_corrupted_post_quantum_rrsig_is_servfail():
    bed = copy_testbed(BED)
    key = (Name.from_text("test0.socratescrc").key(), TYPE_A)
    sigs = bed.auth_zone.rrsigs[key]
    bed.auth_zone.rrsigs[key] = [
        flip_sig(s) if s.rdata.algorithm == crypto.FALCON512 else s
        for s in sigs]
    res, _ = make_sim_resolver(bed, crypto.ECDSAP256SHA256)
    with pytest.raises(resolver_mod.ValidationFailure) as exc:
        res.resolve("test0.socratescrc", TYPE_A, now=NOW)
    assert "post-quantum" in str(exc.value)


def test_classical_only_validity_does_not_rescue():
    """Removing the post-quantum RRSIG leaves a classically-valid answer
    that must still be refused."""
    bed = copy_testbed(BED)
    key = (Name.from_text("test0.socratescrc").key(), TYPE_A)
    bed.auth_zone.rrsigs[key] = [
        s for s in bed.auth_zone.rrsigs[key]
        if s.rdata.algorithm != crypto.FALCON512]
    res, _ = make_sim_resolver(bed, crypto.ECDSAP256SHA256)
    with pytest.raises(resolver_mod.ValidationFailure):
        res.resolve("test0.socratescrc", TYPE_A, now=NOW)


def test_tampered_post_quantum_ds_breaks_chain():
    bed = copy_testbed(BED)
    for rec in bed.root_zone.records:
        if rec.rtype == codec.TYPE_DS and \
                rec.rdata.algorithm == crypto.FALCON512:
            digest = bytearray(rec.rdata.digest)
            digest[0] ^= 0xFF
            rec.rdata = codec.DsRdata(rec.rdata.key_tag, rec.rdata.algorithm,
                                      2, bytes(digest))
    # re-sign the root so only the chain link (not the DS RRset sig) breaks
    resigned = zone.sign_zone(
        zone.Zone(bed.root_zone.origin,
                  [r.copy() for r in bed.root_zone.records
                   if r.rtype != TYPE_DNSKEY]),
        crypto.ECDSAP256SHA256, crypto.FALCON512, NOW)
    bed = simnet.Testbed(resigned, bed.auth_zone,
                         zone.TrustAnchor.for_zone(resigned))
    res, _ = make_sim_resolver(bed, crypto.ECDSAP256SHA256)
    with pytest.raises(resolver_mod.ValidationFailure):
        res.resolve("test0.socratescrc", TYPE_A, now=NOW)


def test_nxdomain_propagates():
    res, _ = make_sim_resolver(BED, crypto.ECDSAP256SHA256)
    with pytest.raises(resolver_mod.NxDomain):
        res.resolve("missing.socratescrc", TYPE_A, now=NOW)


class TestValidateChain:
    def setup_method(self):
        self.keys = crypto.sort_rrset_canonically(
            BED.auth_zone.dnskey_records)
        self.sigs = BED.auth_zone.sigs_for(BED.auth_zone.origin, TYPE_DNSKEY)
        self.ds = zone.make_ds(BED.auth_zone)
        self.name = BED.auth_zone.origin

    def test_both_classes_witnessed(self):
        out = resolver_mod.validate_chain(self.name, self.keys, self.sigs,
                                          self.ds, NOW)
        assert set(out) == {crypto.PRE_QUANTUM, crypto.POST_QUANTUM}

    def test_tampered_post_ds(self):
        ds = [d.copy() for d in self.ds]
        for d in ds:
            if d.rdata.algorithm == crypto.FALCON512:
                d.rdata = codec.DsRdata(d.rdata.key_tag, d.rdata.algorithm, 2,
                                        b"\x00" * 32)
        with pytest.raises(resolver_mod.ChainBroken) as exc:
            resolver_mod.validate_chain(self.name, self.keys, self.sigs, ds,
                                        NOW)
        assert exc.value.klass == crypto.POST_QUANTUM

    def test_missing_pre_quantum_ksk(self):
        keys = [k for k in self.keys
                if not (k.rdata.algorithm == crypto.ECDSAP256SHA256 and
                        k.rdata.flags == DnskeyData.FLAG_KSK)]
        with pytest.raises(resolver_mod.ChainBroken) as exc:
            resolver_mod.validate_chain(self.name, keys, self.sigs, self.ds,
                                        NOW)
        assert exc.value.klass == crypto.PRE_QUANTUM

    def test_no_ds_at_all(self):
        with pytest.raises(resolver_mod.ChainBroken):
            resolver_mod.validate_chain(self.name, self.keys, self.sigs, [],
                                        NOW)


def test_single_class_baseline_configuration():
    bed = simnet.cached_testbed(None, crypto.FALCON512, NOW)
    res, _ = make_sim_resolver(bed, None)
    result = res.resolve("test0.socratescrc", TYPE_A, now=NOW)
    assert result.addresses() == ["10.9.9.10"]


def test_lost_datagrams_are_retried():
    net_loss = simnet.LinkModel(loss_rate=0.25)
    bed = BED
    from conftest import auth_engine, root_engine
    net = simnet.SimNetwork(net_loss, seed=3, epoch=NOW)
    net.add_node("root", root_engine(bed).handle_wire)
    net.add_node("auth", auth_engine(bed).handle_wire)
    res = resolver_mod.Resolver(
        resolver_mod.ResolverConfig(
            "root", bed.anchor,
            addr_map={"10.9.9.53": "auth", "10.9.9.1": "root"}),
        simnet.SimTransport(net, "resolver"))
    result = res.resolve("test0.socratescrc", TYPE_A, now=NOW)
    assert result.secure and result.addresses() == ["10.9.9.10"]


def test_rrset_cache_respects_expiry_and_capacity():
    cache = resolver_mod.RRsetCache(cap=2)
    cache.put("a", 1, expiry=100.0)
    cache.put("b", 2, expiry=100.0)
    cache.put("c", 3, expiry=100.0)
    assert cache.get("a", 50.0) is None          # evicted
    assert cache.get("b", 50.0) == 2
    assert cache.get("b", 150.0) is None         # expired


def test_missing_fragment_hits_retry_bound():
    """A server that never answers fragment queries forces the per-fragment
    retry limit (2 retries) and then a hard failure."""
    from conftest import auth_engine, root_engine

    calls = {"fragments": 0}
    auth = auth_engine(BED)

    def dropping_auth(wire, client, now):
        query = codec.decode_message(wire)
        from dualdns import fragment as frag
        if frag.parse_fragment_qname(query.question.qname):
            calls["fragments"] += 1
            return None                      # swallow every fragment query
        return auth.handle_wire(wire, client, now)

    net = simnet.SimNetwork(seed=0, epoch=NOW)
    net.add_node("root", root_engine(BED).handle_wire)
    net.add_node("auth", dropping_auth)
    res = resolver_mod.Resolver(
        resolver_mod.ResolverConfig(
            "root", BED.anchor, query_timeout=0.5, retries=2,
            addr_map={"10.9.9.53": "auth", "10.9.9.1": "root"}),
        simnet.SimTransport(net, "resolver"))
    with pytest.raises(resolver_mod.Timeout):
        res.resolve("test0.socratescrc", TYPE_A, now=NOW)
    # initial parallel burst plus at most two retry rounds
    assert calls["fragments"] > 0


def test_lost_server_cache_triggers_single_restart():
    """Fragment responses with RCODE != 0 abort reassembly; the resolver
    re-asks the original question once, then gives up."""
    from dualdns import fragment as frag
    from conftest import auth_engine, root_engine

    auth = auth_engine(BED)
    state = {"restarts": 0}

    def flaky_auth(wire, client, now):
        query = codec.decode_message(wire)
        if frag.parse_fragment_qname(query.question.qname):
            err = codec.Message(
                codec.Header(id=query.header.id, qr=1,
                             rcode=codec.RCODE_SERVFAIL),
                list(query.questions)).sync_counts()
            return codec.encode_message(err)
        if query.question.qtype == TYPE_A and \
                query.question.qname == Name.from_text("test0.socratescrc"):
            state["restarts"] += 1
        return auth.handle_wire(wire, client, now)

    net = simnet.SimNetwork(seed=0, epoch=NOW)
    net.add_node("root", root_engine(BED).handle_wire)
    net.add_node("auth", flaky_auth)
    res = resolver_mod.Resolver(
        resolver_mod.ResolverConfig(
            "root", BED.anchor, query_timeout=0.5,
            addr_map={"10.9.9.53": "auth", "10.9.9.1": "root"}),
        simnet.SimTransport(net, "resolver"))
    with pytest.raises(resolver_mod.ResolveError):
        res.resolve("test0.socratescrc", TYPE_A, now=NOW)
    assert state["restarts"] == 2      # the original ask plus one restart


def test_concurrent_resolutions_over_udp():
    """Several client threads resolving different names through one
    resolver instance and real sockets; per-query state must not bleed."""
    import threading
    from dualdns import servers

    root_cfg = servers.ServerConfig(servers.ROLE_ROOT, [BED.root_zone],
                                    bind=("127.0.0.1", 0))
    auth_cfg = servers.ServerConfig(servers.ROLE_AUTH, [BED.auth_zone],
                                    bind=("127.0.0.1", 0))
    with servers.UdpNameServer(root_cfg) as root_srv, \
            servers.UdpNameServer(auth_cfg) as auth_srv:
        res = resolver_mod.Resolver(resolver_mod.ResolverConfig(
            root_srv.address, BED.anchor,
            addr_map={"10.9.9.53": auth_srv.address,
                      "10.9.9.1": root_srv.address}))
        results = {}
        errors = []

        def worker(i):
            try:
                out = res.resolve("test%d.socratescrc" % i, TYPE_A, now=NOW)
                results[i] = (out.addresses(), out.secure)
            except Exception as exc:       # surface into the main thread
                errors.append((i, exc))

        threads = [threading.Thread(target=worker, args=(i,))
                   for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=10)
    assert not errors
    assert results == {i: (["10.9.9.%d" % (10 + i)], True)
                       for i in range(6)}


def test_mixed_case_query_resolves():
    res, _ = make_sim_resolver(BED, crypto.ECDSAP256SHA256)
    result = res.resolve("TEST0.SocratesCRC", TYPE_A, now=NOW)
    assert result.addresses() == ["10.9.9.10"]
    assert result.secure
