"""Deterministic virtual network and benchmark harness.

Links model the testbed's shaped interfaces: every datagram pays a fixed
one-way propagation delay plus size * 8 / bandwidth of transmission time,
with transmissions serialized per direction (so a burst of parallel
fragment queries is pipelined, not teleported).  A seeded generator makes
loss reproducible.  Endpoints are the real server/resolver engines driven
through an in-process transport with a virtual clock, so a full benchmark
over all algorithm combinations runs in well under a second of wall time.

Crypto compute time is excluded from virtual time; reported absolute
milliseconds are therefore not comparable to hardware testbeds, but byte
counts, fragment counts, orderings, and ratios are.
"""

import csv
import io
import random

from . import codec, crypto, fragment, resolver as resolver_mod, servers, zone

DEFAULT_EPOCH = 1_700_000_000


class SimError(Exception):
    pass


class Dropped:
    def __repr__(self):
        return "Dropped"


DROPPED = Dropped()


class LinkModel:
    __slots__ = ("one_way_delay", "bandwidth", "loss_rate")

    def __init__(self, one_way_delay=0.010, bandwidth=50e6, loss_rate=0.0):
        if one_way_delay < 0 or bandwidth <= 0 or not 0 <= loss_rate < 1:
            raise SimError("bad link parameters")
        self.one_way_delay = one_way_delay
        self.bandwidth = bandwidth
        self.loss_rate = loss_rate

    def transmit_time(self, size):
        return size * 8 / self.bandwidth


def deliver(size, link, virtual_now, rng=None):
    """Arrival time of one datagram on an idle link, or DROPPED."""
    if size > 65535:
        raise SimError("datagram of %d bytes" % size)
    if rng is not None and link.loss_rate and rng.random() < link.loss_rate:
        return DROPPED
    return virtual_now + link.one_way_delay + link.transmit_time(size)


class Link:
    """One bidirectional link; each direction serializes its transmissions."""

    def __init__(self, model, rng):
        self.model = model
        self.rng = rng
        self._busy = {}

    def send(self, direction, size, now):
        if self.model.loss_rate and self.rng.random() < self.model.loss_rate:
            return DROPPED
        start = max(now, self._busy.get(direction, 0.0))
        done = start + self.model.transmit_time(size)
        self._busy[direction] = done
        return done + self.model.one_way_delay


class SimNetwork:
    """Named endpoints joined by links, sharing one virtual clock."""

    def __init__(self, link_model=None, seed=0, epoch=DEFAULT_EPOCH):
        self.link_model = link_model or LinkModel()
        self.rng = random.Random(seed)
        self.clock = 0.0
        self.epoch = epoch
        self.nodes = {}
        self.links = {}

    def add_node(self, name, handler):
        self.nodes[name] = handler
        return name

    def link_between(self, a, b):
        key = frozenset((a, b))
        if key not in self.links:
            self.links[key] = Link(self.link_model, self.rng)
        return self.links[key]

    def virtual_now(self):
        return self.clock


class SimTransport:
    """Resolver transport running entirely on the virtual clock."""

    def __init__(self, network, node):
        self.network = network
        self.node = node

    def now(self):
        return self.network.clock

    def _serve(self, addr, wire, at):
        handler = self.network.nodes.get(addr)
        if handler is None:
            return None
        return handler(wire, self.node, self.network.epoch + at)

    def exchange(self, addr, wire, timeout):
        net = self.network
        link = net.link_between(self.node, addr)
        arrival = link.send((self.node, addr), len(wire), net.clock)
        if arrival is DROPPED:
            net.clock += timeout
            return None
        reply = self._serve(addr, wire, arrival)
        if reply is None:
            net.clock += timeout
            return None
        back = link.send((addr, self.node), len(reply), arrival)
        if back is DROPPED:
            net.clock += timeout
            return None
        net.clock = max(net.clock, back)
        return reply

    def exchange_many(self, addr, wires, timeout):
        net = self.network
        link = net.link_between(self.node, addr)
        t0 = net.clock
        replies = []
        arrivals = []
        lost = False
        for wire in wires:
            arrival = link.send((self.node, addr), len(wire), t0)
            if arrival is DROPPED:
                lost = True
                continue
            reply = self._serve(addr, wire, arrival)
            if reply is None:
                lost = True
                continue
            back = link.send((addr, self.node), len(reply), arrival)
            if back is DROPPED:
                lost = True
                continue
            replies.append(reply)
            arrivals.append(back)
        if arrivals:
            net.clock = max(net.clock, max(arrivals))
        if lost:
            net.clock = max(net.clock, t0 + timeout)
        return replies


# ---------------------------------------------------------------------------
# Testbed fixture

COMBOS = [
    ("falcon512", None, crypto.FALCON512),
    ("falcon512+ecdsap256", crypto.ECDSAP256SHA256, crypto.FALCON512),
    ("falcon512+rsasha256", crypto.RSASHA256, crypto.FALCON512),
    ("dilithium2", None, crypto.DILITHIUM2),
    ("dilithium2+ecdsap256", crypto.ECDSAP256SHA256, crypto.DILITHIUM2),
    ("dilithium2+rsasha256", crypto.RSASHA256, crypto.DILITHIUM2),
    ("sphincs-sha256-128s", None, crypto.SPHINCSSHA256128S),
    ("sphincs-sha256-128s+ecdsap256", crypto.ECDSAP256SHA256,
     crypto.SPHINCSSHA256128S),
    ("sphincs-sha256-128s+rsasha256", crypto.RSASHA256,
     crypto.SPHINCSSHA256128S),
]


def combo_by_label(label):
    for combo in COMBOS:
        if combo[0] == label:
            return combo
    raise SimError("unknown combo %r" % label)


class Testbed:
    __slots__ = ("root_zone", "auth_zone", "anchor", "fixture_names")

    def __init__(self, root_zone_, auth_zone_, anchor):
        self.root_zone = root_zone_
        self.auth_zone = auth_zone_
        self.anchor = anchor
        self.fixture_names = ["test%d.socratescrc" % i for i in range(10)]


def build_testbed(preq, postq, now=DEFAULT_EPOCH, registry=crypto.REGISTRY):
    """Sign the two-zone hierarchy and produce the root trust anchor."""
    auth = zone.sign_zone(zone.parse_zone_file(zone.reference_zone_text()),
                          preq, postq, now, registry=registry)
    root_unsigned = zone.parse_zone_file(zone.root_zone_text())
    root_unsigned.records.extend(zone.make_ds(auth))
    root = zone.sign_zone(root_unsigned, preq, postq, now, registry=registry)
    return Testbed(root, auth, zone.TrustAnchor.for_zone(root))


_testbed_cache = {}


def cached_testbed(preq, postq, now=DEFAULT_EPOCH):
    """Shared read-only testbed; callers that mutate zones must copy them."""
    key = (preq, postq, now)
    bed = _testbed_cache.get(key)
    if bed is None:
        bed = _testbed_cache[key] = build_testbed(preq, postq, now)
    return bed


def count_fragments(preq, postq, qtype, cfg=None, registry=crypto.REGISTRY,
                    now=DEFAULT_EPOCH, bed=None):
    """Planner fragment count for a reference response (1 = unfragmented)."""
    cfg = cfg or fragment.FragmentConfig()
    if bed is None:
        bed = build_testbed(preq, postq, now, registry)
    engine = servers.NameServer(
        servers.ServerConfig(servers.ROLE_AUTH, [bed.auth_zone],
                             fragment_cfg=cfg), registry)
    if qtype == codec.TYPE_DNSKEY:
        qname = bed.auth_zone.origin
    else:
        qname = codec.Name.from_text(bed.fixture_names[0])
    query = codec.make_query(qname, qtype, 0x1234, payload_size=cfg.threshold)
    response = engine.build_response(query)
    plan = fragment.plan_fragments(response, cfg, registry)
    return 1 if plan is None else plan.n_fragments


class BenchResult:
    __slots__ = ("combo", "preq", "postq", "times", "fragments_a",
                 "fragments_dnskey")

    def __init__(self, combo, preq, postq, times, fragments_a,
                 fragments_dnskey):
        self.combo = combo
        self.preq = preq
        self.postq = postq
        self.times = list(times)
        self.fragments_a = fragments_a
        self.fragments_dnskey = fragments_dnskey

    @property
    def mean(self):
        return sum(self.times) / len(self.times)

    def __repr__(self):
        return "BenchResult(%s mean=%.2fms frags=%d/%d)" % (
            self.combo, self.mean * 1e3, self.fragments_a,
            self.fragments_dnskey)


def _run_real_socket(bed, preq, cfg, registry, now):
    """Sanity-run mode: the same engines over loopback UDP, wall-clock
    timed (no link shaping, so absolute numbers are not comparable to the
    virtual clock)."""
    import time

    from . import resolver as _r, servers as _s
    required = ((crypto.PRE_QUANTUM, crypto.POST_QUANTUM)
                if preq is not None else (crypto.POST_QUANTUM,))
    root_cfg = _s.ServerConfig(_s.ROLE_ROOT, [bed.root_zone],
                               bind=("127.0.0.1", 0), fragment_cfg=cfg)
    auth_cfg = _s.ServerConfig(_s.ROLE_AUTH, [bed.auth_zone],
                               bind=("127.0.0.1", 0), fragment_cfg=cfg)
    times = []
    with _s.UdpNameServer(root_cfg, registry) as root_srv, \
            _s.UdpNameServer(auth_cfg, registry) as auth_srv:
        res = _r.Resolver(_r.ResolverConfig(
            root_srv.address, bed.anchor, fragment_cfg=cfg,
            addr_map={"10.9.9.53": auth_srv.address,
                      "10.9.9.1": root_srv.address},
            required_classes=required), registry=registry)
        for qname in bed.fixture_names:
            t0 = time.perf_counter()
            res.resolve(qname, codec.TYPE_A, now=now)
            times.append(time.perf_counter() - t0)
    return times


def run_benchmark(combos=None, link_model=None, repetitions=1, seed=0,
                  cfg=None, registry=crypto.REGISTRY, now=DEFAULT_EPOCH,
                  real_sockets=False):
    """Resolve the ten fixture names per combo on a cold resolver.

    Per-query time is the client-observed virtual time: the client legs to
    and from the resolver plus the resolver's iterative work.  With
    `real_sockets` the walk runs over loopback UDP instead (sanity mode;
    wall-clock, not deterministic).
    """
    combos = [combo_by_label(c) if isinstance(c, str) else c
              for c in (combos or COMBOS)]
    link_model = link_model or LinkModel()
    cfg = cfg or fragment.FragmentConfig()
    results = []
    for label, preq, postq in combos:
        random.seed((seed, label).__hash__() & 0xFFFFFFFF)
        bed = build_testbed(preq, postq, now, registry)
        times = []
        if real_sockets:
            for _ in range(repetitions):
                times.extend(_run_real_socket(bed, preq, cfg, registry, now))
            results.append(BenchResult(
                label, preq, postq, times,
                count_fragments(preq, postq, codec.TYPE_A, cfg, registry,
                                now, bed=bed),
                count_fragments(preq, postq, codec.TYPE_DNSKEY, cfg,
                                registry, now, bed=bed)))
            continue
        for _ in range(repetitions):
            net = SimNetwork(link_model, seed=seed, epoch=now)
            root_engine = servers.NameServer(servers.ServerConfig(
                servers.ROLE_ROOT, [bed.root_zone], fragment_cfg=cfg),
                registry)
            auth_engine = servers.NameServer(servers.ServerConfig(
                servers.ROLE_AUTH, [bed.auth_zone], fragment_cfg=cfg),
                registry)
            net.add_node("root", root_engine.handle_wire)
            net.add_node("auth", auth_engine.handle_wire)
            transport = SimTransport(net, "resolver")
            required = ((crypto.PRE_QUANTUM, crypto.POST_QUANTUM)
                        if preq is not None else (crypto.POST_QUANTUM,))
            res = resolver_mod.Resolver(
                resolver_mod.ResolverConfig(
                    "root", bed.anchor, fragment_cfg=cfg,
                    addr_map={"10.9.9.53": "auth", "10.9.9.1": "root"},
                    required_classes=required),
                transport, registry)
            client_link = net.link_between("client", "resolver")
            for qname in bed.fixture_names:
                t0 = net.clock
                query_size = codec.encoded_size(codec.make_query(
                    codec.Name.from_text(qname), codec.TYPE_A, 1,
                    payload_size=cfg.threshold))
                net.clock = client_link.send(("client", "resolver"),
                                             query_size, t0)
                result = res.resolve(qname, codec.TYPE_A, now=now)
                # client-facing reply: validated answer RRset plus its
                # signatures (sent as one datagram in this summary model)
                reply = codec.Message(
                    codec.Header(qr=1, ra=1),
                    [codec.Question(codec.Name.from_text(qname),
                                    codec.TYPE_A)],
                    answer=list(result.rrset) + list(result.rrsigs))
                net.clock = client_link.send(("resolver", "client"),
                                             codec.encoded_size(reply),
                                             net.clock)
                times.append(net.clock - t0)
        results.append(BenchResult(
            label, preq, postq, times,
            count_fragments(preq, postq, codec.TYPE_A, cfg, registry, now,
                            bed=bed),
            count_fragments(preq, postq, codec.TYPE_DNSKEY, cfg, registry,
                            now, bed=bed)))
    return results


def results_to_csv(results):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["combo", "qtype", "fragments", "mean_ms", "times_ms"])
    for r in results:
        times = " ".join("%.3f" % (t * 1e3) for t in r.times)
        writer.writerow([r.combo, "A", r.fragments_a,
                         "%.3f" % (r.mean * 1e3), times])
        writer.writerow([r.combo, "DNSKEY", r.fragments_dnskey,
                         "%.3f" % (r.mean * 1e3), times])
    return buf.getvalue()
