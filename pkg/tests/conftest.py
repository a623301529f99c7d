import pytest

from dualdns import codec, crypto, fragment, servers, simnet, zone

NOW = simnet.DEFAULT_EPOCH

ALL_COMBOS = [(pre, post)
              for post in (crypto.FALCON512, crypto.DILITHIUM2,
                           crypto.SPHINCSSHA256128S)
              for pre in (None, crypto.ECDSAP256SHA256, crypto.RSASHA256)]


@pytest.fixture(scope="session")
def registry():
    return crypto.REGISTRY


@pytest.fixture(scope="session")
def now():
    return NOW


@pytest.fixture(scope="session")
def frag_cfg():
    return fragment.FragmentConfig()


@pytest.fixture(scope="session")
def testbed_ef():
    """ECDSA + FALCON testbed (the paper-style default pairing)."""
    return simnet.cached_testbed(crypto.ECDSAP256SHA256, crypto.FALCON512, NOW)


@pytest.fixture(scope="session")
def auth_zone_ef(testbed_ef):
    return testbed_ef.auth_zone


def auth_engine(bed, cfg=None):
    return servers.NameServer(servers.ServerConfig(
        servers.ROLE_AUTH, [bed.auth_zone], fragment_cfg=cfg), crypto.REGISTRY)


def root_engine(bed, cfg=None):
    return servers.NameServer(servers.ServerConfig(
        servers.ROLE_ROOT, [bed.root_zone], fragment_cfg=cfg), crypto.REGISTRY)


def reference_response(bed, qtype, cfg=None):
    """The auth server's pre-fragmentation reference response."""
    engine = auth_engine(bed, cfg)
    if qtype == codec.TYPE_DNSKEY:
        qname = bed.auth_zone.origin
    else:
        qname = codec.Name.from_text("test0.socratescrc")
    query = codec.make_query(qname, qtype, 0x1234, payload_size=65535)
    return engine.build_response(query)


def make_sim_resolver(bed, preq, cfg=None, seed=0):
    """Resolver + servers wired over the virtual network."""
    from dualdns import resolver as resolver_mod
    cfg = cfg or fragment.FragmentConfig()
    net = simnet.SimNetwork(seed=seed, epoch=NOW)
    net.add_node("root", root_engine(bed, cfg).handle_wire)
    net.add_node("auth", auth_engine(bed, cfg).handle_wire)
    required = ((crypto.PRE_QUANTUM, crypto.POST_QUANTUM)
                if preq is not None else (crypto.POST_QUANTUM,))
    res = resolver_mod.Resolver(
        resolver_mod.ResolverConfig(
            "root", bed.anchor, fragment_cfg=cfg,
            addr_map={"10.9.9.53": "auth", "10.9.9.1": "root"},
            required_classes=required),
        simnet.SimTransport(net, "resolver"))
    return res, net


def copy_testbed(bed):
    root = bed.root_zone.copy()
    auth = bed.auth_zone.copy()
    return simnet.Testbed(root, auth, zone.TrustAnchor.for_zone(root))
