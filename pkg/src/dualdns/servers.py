"""UDP name-server endpoint for the root and authoritative roles.

Answers come straight from signed zones; any response exceeding the
client's effective threshold goes through the fragment planner, with
continuations served from the bounded fragment cache.

Reference response composition (fixed for reproducibility):
  data query    answer = RRset + its RRSIGs; authority = apex NS + RRSIGs;
                additional = glue A + RRSIGs + OPT.
  DNSKEY query  answer = all DNSKEYs + the DNSKEY RRset's RRSIGs;
                authority empty; additional = OPT.
  referral      authority = delegation NS (unsigned); additional = DS set
                + DS RRSIGs + glue + OPT.
"""

import logging
import socket
import socketserver
import threading
import time

from . import codec, crypto, fragment
from .codec import (Header, Message, TYPE_A, TYPE_DNSKEY, TYPE_DS,
                    TYPE_NS, TYPE_OPT, RCODE_FORMERR, RCODE_NOTIMP,
                    RCODE_NXDOMAIN, RCODE_SERVFAIL, opt_record)

log = logging.getLogger("dualdns.server")

ROLE_ROOT = "root"
ROLE_AUTH = "auth"


class ServerConfig:
    __slots__ = ("role", "zones", "bind", "fragment", "advertised_buffer")

    def __init__(self, role, zones, bind=("127.0.0.1", 0), fragment_cfg=None,
                 advertised_buffer=65535):
        self.role = role
        self.zones = list(zones)
        self.bind = bind
        self.fragment = fragment_cfg or fragment.FragmentConfig()
        self.advertised_buffer = advertised_buffer


class NameServer:
    """Query engine over one or more signed zones (transport-agnostic)."""

    def __init__(self, config, registry=crypto.REGISTRY):
        self.config = config
        self.registry = registry
        self.cache = fragment.FragmentCache(config.fragment)

    # -- zone lookup

    def _zone_for(self, qname):
        best = None
        for zone in self.config.zones:
            if qname.endswith(zone.origin):
                if best is None or len(zone.origin.labels) > len(best.origin.labels):
                    best = zone
        return best

    def _delegation_for(self, zone, qname):
        """Deepest in-zone NS cut strictly below the apex covering qname."""
        labels = qname.labels
        for i in range(len(labels)):
            cut = codec.Name(labels[i:])
            if cut == zone.origin:
                break
            ns = zone.rrset(cut, TYPE_NS)
            if ns:
                return cut, ns
        return None

    # -- responses

    def _respond(self, query, rcode=0, aa=0):
        h = Header(id=query.header.id, qr=1, aa=aa, rd=query.header.rd,
                   rcode=rcode)
        return Message(h, list(query.questions))

    def _error(self, query, rcode):
        msg = self._respond(query, rcode=rcode)
        msg.additional.append(opt_record(self.config.advertised_buffer))
        return msg.sync_counts()

    def _glue_for(self, zone, ns_rrset, exclude=None):
        glue = []
        seen = set()
        for ns in ns_rrset:
            target = ns.rdata.nsdname
            if not target.endswith(zone.origin) or target.key() in seen:
                continue
            seen.add(target.key())
            if exclude and target == exclude:
                continue
            rrset = zone.rrset(target, TYPE_A)
            if rrset:
                glue.append((target, rrset))
        return glue

    def _answer_data(self, query, zone, rrset):
        msg = self._respond(query, aa=1)
        first = rrset[0]
        msg.answer = [r.copy() for r in crypto.sort_rrset_canonically(rrset)]
        msg.answer += [s.copy() for s in zone.sigs_for(first.name, first.rtype)]
        apex_ns = zone.apex_ns()
        if apex_ns and first.rtype != TYPE_NS:
            msg.authority = [r.copy() for r in apex_ns]
            msg.authority += [s.copy() for s in
                              zone.sigs_for(zone.origin, TYPE_NS)]
            for target, glue_rrset in self._glue_for(zone, apex_ns,
                                                     exclude=first.name):
                msg.additional += [r.copy() for r in glue_rrset]
                msg.additional += [s.copy() for s in
                                   zone.sigs_for(target, TYPE_A)]
        msg.additional.append(opt_record(self.config.advertised_buffer))
        return msg.sync_counts()

    def _answer_dnskey(self, query, zone):
        msg = self._respond(query, aa=1)
        msg.answer = [r.copy() for r in zone.dnskey_records]
        msg.answer += [s.copy() for s in
                       zone.sigs_for(zone.origin, TYPE_DNSKEY)]
        msg.additional.append(opt_record(self.config.advertised_buffer))
        return msg.sync_counts()

    def _referral(self, query, zone, cut, ns_rrset):
        msg = self._respond(query)
        msg.authority = [r.copy() for r in ns_rrset]
        ds = zone.rrset(cut, TYPE_DS)
        if ds:
            msg.additional += [r.copy() for r in
                               crypto.sort_rrset_canonically(ds)]
            msg.additional += [s.copy() for s in zone.sigs_for(cut, TYPE_DS)]
        for _, glue_rrset in self._glue_for(zone, ns_rrset):
            msg.additional += [r.copy() for r in glue_rrset]
        msg.additional.append(opt_record(self.config.advertised_buffer))
        return msg.sync_counts()

    def build_response(self, query):
        """Complete (pre-fragmentation) response for a non-fragment query.

        Unsigned zones are served as-is (responses simply carry no RRSIGs).
        """
        q = query.question
        zone = self._zone_for(q.qname)
        if zone is None:
            return self._error(query, RCODE_NXDOMAIN)
        delegation = self._delegation_for(zone, q.qname)
        if delegation is not None:
            cut, ns_rrset = delegation
            if not (q.qtype == TYPE_DS and q.qname == cut):
                return self._referral(query, zone, cut, ns_rrset)
        if q.qtype == TYPE_DNSKEY and q.qname == zone.origin:
            return self._answer_dnskey(query, zone)
        rrset = zone.rrset(q.qname, q.qtype)
        if rrset:
            return self._answer_data(query, zone, rrset)
        if any(r.name == q.qname for r in zone.records):
            # NODATA: name exists without the type; unsigned, like NXDOMAIN.
            return self._error(query, 0)
        return self._error(query, RCODE_NXDOMAIN)

    # -- entry point

    def effective_threshold(self, query):
        opt = query.opt()
        advertised = 512 if opt is None else max(512, min(65535, opt.rclass))
        return min(advertised, self.config.fragment.threshold)

    def handle_query(self, query, client, now=None):
        """Map one decoded query to one response message."""
        if now is None:
            now = time.time()
        if query.header.opcode != 0:
            return self._error(query, RCODE_NOTIMP)
        if len(query.questions) != 1 or query.header.qr:
            return self._error(query, RCODE_FORMERR)
        q = query.question

        frag = fragment.parse_fragment_qname(q.qname)
        if frag is not None:
            n, base = frag
            key = fragment.FragmentCache.key(client, base, q.qtype, q.qclass)
            result = self.cache.get(key, n, now, query)
            if result is fragment.MISS:
                return self._error(query, RCODE_SERVFAIL)
            return result

        threshold = self.effective_threshold(query)
        cfg = self.config.fragment.with_threshold(threshold)
        response = self.build_response(query)
        if codec.encoded_size(response) <= threshold:
            return response

        key = fragment.FragmentCache.key(client, q.qname, q.qtype, q.qclass)
        try:
            plan = self.cache.get_or_build(
                key, now,
                lambda: fragment.plan_fragments(response, cfg, self.registry))
        except fragment.FragmentError as exc:
            log.error("cannot fragment response for %s: %s",
                      q.qname.to_text(), exc)
            return self._error(query, RCODE_SERVFAIL)
        if plan is None:
            return response
        # A cached plan may have been built for an earlier query; the reply
        # still has to echo this query's id.
        first = plan.first.copy()
        first.header.id = query.header.id
        first.header.rd = query.header.rd
        return first

    def handle_wire(self, wire, client, now=None):
        """Datagram in, datagram out (None = drop)."""
        try:
            query = codec.decode_message(wire)
        except codec.CodecError:
            if len(wire) >= 12:
                header = Header(id=int.from_bytes(wire[:2], "big"), qr=1,
                                rcode=RCODE_FORMERR)
                return codec.encode_message(Message(header).sync_counts())
            return None
        try:
            response = self.handle_query(query, client, now)
        except Exception:
            log.exception("query handling failed")
            response = self._error(query, RCODE_SERVFAIL)
        return codec.encode_message(response)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        wire, sock = self.request
        out = self.server.engine.handle_wire(wire, self.client_address[0])
        if out is not None:
            sock.sendto(out, self.client_address)


class _ThreadingUdp(socketserver.ThreadingUDPServer):
    daemon_threads = True
    allow_reuse_address = True
    max_packet_size = 65535


class UdpNameServer:
    """Socket front-end; one thread per datagram, shared engine state."""

    def __init__(self, config, registry=crypto.REGISTRY):
        self.engine = NameServer(config, registry)
        self._server = _ThreadingUdp(config.bind, _Handler)
        self._server.engine = self.engine
        self._thread = None

    @property
    def address(self):
        return self._server.server_address

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=2)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
        return False
