"""Iterative, validating, caching resolver.

Walks root to authoritative, routes truncated responses through fragment
reassembly before anything is validated, and accepts data only when one
pre-quantum AND one post-quantum signature verify at every link of the
chain: trust-anchor DS -> root KSKs -> root DNSKEY RRset -> delegation DS
-> child KSKs -> child DNSKEY RRset -> answer RRset.  A failure of either
class anywhere is SERVFAIL; a single valid class never rescues a response.
"""

import logging
import random
import select
import socket
import threading
import time
from collections import OrderedDict

from . import codec, crypto, fragment, reassembly, zone as zonemod
from .codec import (Name, TYPE_A, TYPE_DNSKEY, TYPE_DS, TYPE_NS,
                    RCODE_NOERROR, RCODE_NXDOMAIN)

log = logging.getLogger("dualdns.resolver")


class ResolveError(Exception):
    pass


class Timeout(ResolveError):
    pass


class NxDomain(ResolveError):
    pass


class ValidationFailure(ResolveError):
    """Any dual-validation breakage; maps to SERVFAIL toward clients."""

    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


class ChainBroken(ValidationFailure):
    def __init__(self, klass, detail=""):
        super().__init__("chain of trust broken for %s %s" % (klass, detail))
        self.klass = klass


class ResolverConfig:
    __slots__ = ("root_addr", "trust_anchor", "fragment", "query_timeout",
                 "retries", "cache_cap", "addr_map", "required_classes")

    def __init__(self, root_addr, trust_anchor, fragment_cfg=None,
                 query_timeout=2.0, retries=2, cache_cap=10000,
                 addr_map=None, required_classes=None):
        self.root_addr = root_addr
        self.trust_anchor = trust_anchor
        self.fragment = fragment_cfg or fragment.FragmentConfig()
        self.query_timeout = query_timeout
        self.retries = retries
        self.cache_cap = cache_cap
        # Glue addresses from zone data mapped onto reachable endpoints
        # (the desk testbed runs every server on loopback ports).
        self.addr_map = dict(addr_map or {})
        # Dual validation is the point of this resolver; a single-class
        # tuple exists only for the single-signed benchmark baselines.
        self.required_classes = tuple(
            required_classes or (crypto.PRE_QUANTUM, crypto.POST_QUANTUM))


class ResolveResult:
    __slots__ = ("rrset", "rrsigs", "secure", "fragments", "elapsed", "rcode")

    def __init__(self, rrset, rrsigs, secure, fragments, elapsed, rcode=0):
        self.rrset = rrset
        self.rrsigs = rrsigs
        self.secure = secure
        self.fragments = fragments
        self.elapsed = elapsed
        self.rcode = rcode

    def addresses(self):
        return [r.rdata.to_text() for r in self.rrset
                if isinstance(r.rdata, codec.ARdata)]

    def __repr__(self):
        return ("ResolveResult(%d records secure=%s fragments=%d %.1fms)"
                % (len(self.rrset), self.secure, self.fragments,
                   self.elapsed * 1e3))


# ---------------------------------------------------------------------------
# Transports

class UdpTransport:
    """Blocking UDP exchanges over real sockets; fragments go in parallel."""

    def now(self):
        return time.time()

    def exchange(self, addr, wire, timeout):
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.settimeout(timeout)
            sock.sendto(wire, addr)
            try:
                data, _ = sock.recvfrom(65535)
                return data
            except socket.timeout:
                return None

    def exchange_many(self, addr, wires, timeout):
        """Send all datagrams at once; collect replies until the deadline.

        Returns replies in arrival order; matching to requests is the
        caller's job (by message id).
        """
        replies = []
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.setblocking(False)
            for w in wires:
                sock.sendto(w, addr)
            deadline = time.time() + timeout
            while len(replies) < len(wires):
                remaining = deadline - time.time()
                if remaining <= 0:
                    break
                ready, _, _ = select.select([sock], [], [], remaining)
                if not ready:
                    break
                data, _ = sock.recvfrom(65535)
                replies.append(data)
        return replies


class RRsetCache:
    """LRU of validated RRsets; expired entries are never served."""

    def __init__(self, cap):
        self.cap = cap
        self._lock = threading.Lock()
        self._entries = OrderedDict()

    def get(self, key, now):
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                return None
            value, expiry = entry
            if now >= expiry:
                del self._entries[key]
                return None
            self._entries.move_to_end(key)
            return value

    def put(self, key, value, expiry):
        with self._lock:
            self._entries[key] = (value, expiry)
            self._entries.move_to_end(key)
            while len(self._entries) > self.cap:
                self._entries.popitem(last=False)

    def __len__(self):
        return len(self._entries)


def _rrset_of(records, owner, rtype):
    return [r for r in records if r.name == owner and r.rtype == rtype]


def _sigs_covering(records, owner, covered):
    return [r for r in records if r.rtype == codec.TYPE_RRSIG and
            r.name == owner and r.rdata.type_covered == covered]


def validate_chain(zone_name, dnskeys, dnskey_rrsigs, ds_records, now,
                   registry=crypto.REGISTRY,
                   classes=(crypto.PRE_QUANTUM, crypto.POST_QUANTUM)):
    """Per class: a DS must match a KSK whose RRSIG over the DNSKEY RRset
    verifies.  Returns {class: key_tag} witnesses; every class required.
    """
    if not ds_records:
        raise ChainBroken("both", "no DS records for %s" % zone_name.to_text())
    witnesses = {}
    for klass in classes:
        witness = None
        for ds in ds_records:
            dsd = ds.rdata
            if not registry.has(dsd.algorithm):
                continue
            if registry.klass_of(dsd.algorithm) != klass:
                continue
            for keyrec in dnskeys:
                kd = keyrec.rdata
                if kd.flags != codec.DnskeyData.FLAG_KSK:
                    continue
                if kd.algorithm != dsd.algorithm:
                    continue
                tag = crypto.key_tag(kd.rdata_bytes())
                if tag != dsd.key_tag:
                    continue
                if dsd.digest_type != 2:
                    continue
                if zonemod.ds_digest(keyrec.name, kd) != dsd.digest:
                    continue
                for sig in dnskey_rrsigs:
                    sd = sig.rdata
                    if sd.algorithm != kd.algorithm or sd.key_tag != tag:
                        continue
                    if crypto.verify_rrsig(sig, dnskeys, kd.public_key, now,
                                           registry):
                        witness = tag
                        break
                if witness is not None:
                    break
            if witness is not None:
                break
        if witness is None:
            raise ChainBroken(klass, "at %s" % zone_name.to_text())
        witnesses[klass] = witness
    return witnesses


class Resolver:
    """Drives the full walk; one instance serves many concurrent queries."""

    def __init__(self, config, transport=None, registry=crypto.REGISTRY):
        self.config = config
        self.transport = transport or UdpTransport()
        self.registry = registry
        self.cache = RRsetCache(config.cache_cap)
        self._keys_cache = RRsetCache(config.cache_cap)
        self._fragments_fetched = 0
        self._lock = threading.Lock()

    # -- low-level exchange with fragmentation handling

    def _exchange_once(self, addr, msg):
        wire = codec.encode_message(msg)
        for _ in range(self.config.retries + 1):
            data = self.transport.exchange(addr, wire,
                                           self.config.query_timeout)
            if data is None:
                continue
            try:
                resp = codec.decode_message(data)
            except codec.CodecError:
                continue
            if resp.header.id != msg.header.id:
                continue
            return resp, data
        raise Timeout("no response from %r" % (addr,))

    def _fetch_fragments(self, addr, first, first_wire):
        fc = reassembly.forecast(first, self.registry, self.config.fragment)
        state = reassembly.ReassemblyState(first, first_wire, fc)
        queries = reassembly.fragment_queries(
            fc, first.question.qname, first.question.qtype,
            first.question.qclass, payload_size=self.config.fragment.threshold)
        by_n = {fragment.parse_fragment_qname(q.question.qname)[0]: q
                for q in queries}
        ids = {q.header.id for q in queries}
        attempts = 0
        while not state.complete:
            if attempts > self.config.retries:
                raise Timeout("missing fragments %r" % state.missing)
            wires = [codec.encode_message(by_n[n]) for n in state.missing]
            replies = self.transport.exchange_many(addr, wires,
                                                   self.config.query_timeout)
            for data in replies:
                try:
                    resp = codec.decode_message(data)
                except codec.CodecError:
                    continue
                if resp.header.id not in ids:
                    continue
                if resp.header.rcode != RCODE_NOERROR:
                    # Server lost its cache entry mid-exchange.
                    raise _FragmentGone()
                try:
                    state.accept(resp)
                except reassembly.ReassemblyError as exc:
                    raise ValidationFailure("bad fragment: %s" % exc)
            attempts += 1
        with self._lock:
            self._fragments_fetched += len(state.received)
        return reassembly.reassemble(state, self.registry)

    def _exchange(self, addr, qname, qtype, restarted=False):
        msg = codec.make_query(qname, qtype,
                               random.randrange(1, 0x10000),
                               payload_size=self.config.fragment.threshold)
        resp, wire = self._exchange_once(addr, msg)
        if resp.header.tc:
            try:
                return self._fetch_fragments(addr, resp, wire)
            except _FragmentGone:
                if restarted:
                    raise Timeout("fragment cache lost twice for %s"
                                  % qname.to_text())
                return self._exchange(addr, qname, qtype, restarted=True)
        return resp

    # -- validation helpers

    def _validated_keys(self, addr, zone_name, ds_records, now):
        """Fetch and dual-validate a zone's DNSKEY RRset; returns records."""
        cache_key = ("keys", zone_name.key())
        cached = self._keys_cache.get(cache_key, now)
        if cached is not None:
            return cached
        resp = self._exchange(addr, zone_name, TYPE_DNSKEY)
        keys = _rrset_of(resp.answer, zone_name, TYPE_DNSKEY)
        sigs = _sigs_covering(resp.answer, zone_name, TYPE_DNSKEY)
        if not keys:
            raise ValidationFailure("no DNSKEY RRset for %s"
                                    % zone_name.to_text())
        keys = crypto.sort_rrset_canonically(keys)
        validate_chain(zone_name, keys, sigs, ds_records, now, self.registry,
                       self.config.required_classes)
        try:
            crypto.verify_classes(sigs, keys, keys, now,
                                  self.config.required_classes, self.registry)
        except crypto.CryptoError as exc:
            raise ValidationFailure(str(exc))
        ttl = min(r.ttl for r in keys)
        self._keys_cache.put(cache_key, keys, now + ttl)
        return keys

    def _verify_rrset(self, rrset, sigs, dnskeys, now, what):
        if not rrset:
            raise ValidationFailure("empty RRset for %s" % what)
        try:
            return crypto.verify_classes(
                sigs, crypto.sort_rrset_canonically(rrset), dnskeys, now,
                self.config.required_classes, self.registry)
        except crypto.CryptoError as exc:
            raise ValidationFailure("%s: %s" % (what, exc))

    # -- the walk

    def resolve(self, qname, qtype, now=None):
        """Six-step walk; answers are served only on dual-verified data.

        `now` is the validation epoch (defaults to wall-clock time);
        elapsed time is measured on the transport's clock, which is virtual
        under the simulator.
        """
        if isinstance(qname, str):
            qname = Name.from_text(qname)
        vstart = self.transport.now()
        if now is None:
            now = time.time()
        with self._lock:
            frag_before = self._fragments_fetched

        cache_key = (qname.key(), qtype)
        cached = self.cache.get(cache_key, now)
        if cached is not None:
            rrset, sigs, secure = cached
            return ResolveResult(rrset, sigs, secure, 0,
                                 self.transport.now() - vstart)

        anchor = self.config.trust_anchor
        addr = self.config.root_addr
        zone_name = anchor.zone
        ds_records = anchor.ds_set
        depth = 0
        while True:
            depth += 1
            if depth > 16:
                raise ValidationFailure("referral chain too deep")
            resp = self._exchange(addr, qname, qtype)
            if resp.header.rcode == RCODE_NXDOMAIN:
                raise NxDomain(qname.to_text())
            if resp.header.rcode != RCODE_NOERROR:
                raise ValidationFailure("upstream rcode %d" % resp.header.rcode)
            answer_rrset = _rrset_of(resp.answer, qname, qtype)
            if answer_rrset:
                keys = self._validated_keys(addr, zone_name, ds_records, now)
                sigs = _sigs_covering(resp.answer, qname, qtype)
                rrset = crypto.sort_rrset_canonically(answer_rrset)
                self._verify_rrset(rrset, sigs, keys, now,
                                   "answer %s" % qname.to_text())
                ttl = min(r.ttl for r in rrset)
                self.cache.put(cache_key, (rrset, sigs, True), now + ttl)
                with self._lock:
                    frags = self._fragments_fetched - frag_before
                return ResolveResult(rrset, sigs, True, frags,
                                     self.transport.now() - vstart)

            referral = self._parse_referral(resp)
            if referral is None:
                raise ValidationFailure("no answer and no referral for %s"
                                        % qname.to_text())
            cut, ns_targets, ds_rrset, ds_sigs, glue = referral
            # Validate the delegation's DS set with the parent's ZSKs.
            keys = self._validated_keys(addr, zone_name, ds_records, now)
            if not ds_rrset:
                raise ChainBroken("both", "referral for %s carries no DS"
                                  % cut.to_text())
            self._verify_rrset(ds_rrset, ds_sigs, keys, now,
                               "DS %s" % cut.to_text())
            glue_ip = self._pick_glue(ns_targets, glue)
            if glue_ip is None:
                raise ValidationFailure("referral for %s lacks usable glue"
                                        % cut.to_text())
            addr = self.config.addr_map.get(glue_ip, (glue_ip, 53))
            zone_name = cut
            ds_records = ds_rrset

    def _parse_referral(self, resp):
        ns_rrsets = {}
        for rec in resp.authority:
            if rec.rtype == TYPE_NS:
                ns_rrsets.setdefault(rec.name.key(), (rec.name, []))[1].append(rec)
        if not ns_rrsets:
            return None
        cut, ns_records = max(ns_rrsets.values(),
                              key=lambda pair: len(pair[0].labels))
        ds_rrset = _rrset_of(resp.additional, cut, TYPE_DS)
        ds_sigs = _sigs_covering(resp.additional, cut, TYPE_DS)
        glue = {}
        for rec in resp.additional:
            if rec.rtype == TYPE_A:
                glue.setdefault(rec.name.key(), rec.rdata.to_text())
        targets = [ns.rdata.nsdname for ns in ns_records]
        return cut, targets, crypto.sort_rrset_canonically(ds_rrset), \
            ds_sigs, glue

    def _pick_glue(self, targets, glue):
        for target in targets:
            ip = glue.get(target.key())
            if ip:
                return ip
        return None


class _FragmentGone(Exception):
    pass
