"""Zone model: master-file parsing, dual signing, DS generation, trust anchors.

A signed zone publishes KSK/ZSK DNSKEYs for each configured class and signs
every RRset once per class: ZSKs over data RRsets, both KSK and ZSK over the
DNSKEY RRset (so the apex key RRset is verifiable through either the chain
of trust or the zone keys themselves).
"""

import base64
import hashlib

from . import codec, crypto
from .codec import (ARdata, DnskeyData, DsRdata, Name, NsRdata, Record,
                    RrsigData, SoaRdata, CLASS_IN, TYPE_A, TYPE_DNSKEY,
                    TYPE_DS, TYPE_NS, TYPE_RRSIG, TYPE_SOA,
                    encode_name_uncompressed)

MAX_TTL = (1 << 24) - 1   # top TTL byte is reserved for position encoding


class ZoneError(Exception):
    pass


class ZoneSyntaxError(ZoneError):
    def __init__(self, lineno, message):
        super().__init__("line %d: %s" % (lineno, message))
        self.lineno = lineno


class TtlTooLarge(ZoneError):
    pass


class NoSoa(ZoneError):
    pass


class ClassMismatch(ZoneError):
    pass


class NotSigned(ZoneError):
    pass


class Zone:
    """Origin, data records, and (after signing) keys plus derived records."""

    def __init__(self, origin, records):
        self.origin = origin
        self.records = list(records)
        self.keys = []              # KeyPairs, KSK/ZSK per class
        self.dnskey_records = []
        self.rrsigs = {}            # (owner.key(), rtype) -> [RRSIG records]
        self.signed = False

    def soa(self):
        for r in self.records:
            if r.rtype == TYPE_SOA:
                return r
        return None

    def rrset(self, name, rtype):
        return [r for r in self.records
                if r.name == name and r.rtype == rtype]

    def rrsets(self):
        """Data RRsets grouped by (owner, type), insertion-ordered."""
        groups = {}
        for r in self.records:
            groups.setdefault((r.name.key(), r.rtype), []).append(r)
        return groups

    def sigs_for(self, name, rtype):
        return list(self.rrsigs.get((name.key(), rtype), []))

    def key_of(self, klass, role):
        for k in self.keys:
            if k.role == role and crypto.REGISTRY.klass_of(k.suite_code) == klass:
                return k
        return None

    def apex_ns(self):
        return self.rrset(self.origin, TYPE_NS)

    def copy(self):
        z = Zone(self.origin, [r.copy() for r in self.records])
        z.keys = list(self.keys)
        z.dnskey_records = [r.copy() for r in self.dnskey_records]
        z.rrsigs = {k: [r.copy() for r in v] for k, v in self.rrsigs.items()}
        z.signed = self.signed
        return z


def _parse_name(token, origin):
    if token == "@":
        return origin
    if token.endswith("."):
        return Name.from_text(token)
    return Name.from_text(token).concat(origin)


def _parse_rdata(rtype, tokens, origin, lineno):
    try:
        if rtype == "A":
            return TYPE_A, ARdata(tokens[0])
        if rtype == "NS":
            return TYPE_NS, NsRdata(_parse_name(tokens[0], origin))
        if rtype == "SOA":
            mname = _parse_name(tokens[0], origin)
            rname = _parse_name(tokens[1], origin)
            return TYPE_SOA, SoaRdata(mname, rname, *map(int, tokens[2:7]))
        if rtype == "DS":
            return TYPE_DS, DsRdata(int(tokens[0]), int(tokens[1]),
                                    int(tokens[2]), bytes.fromhex(tokens[3]))
        if rtype == "DNSKEY":
            return TYPE_DNSKEY, DnskeyData(int(tokens[0]), int(tokens[1]),
                                           int(tokens[2]),
                                           base64.b64decode(tokens[3]))
        if rtype == "RRSIG":
            covered = codec.TYPE_CODES[tokens[0]]
            return TYPE_RRSIG, RrsigData(
                covered, int(tokens[1]), int(tokens[2]), int(tokens[3]),
                int(tokens[4]), int(tokens[5]), int(tokens[6]),
                Name.from_text(tokens[7]), base64.b64decode(tokens[8]))
    except (IndexError, ValueError, KeyError) as exc:
        raise ZoneSyntaxError(lineno, "bad %s rdata: %s" % (rtype, exc))
    raise ZoneSyntaxError(lineno, "unsupported record type %r" % rtype)


def parse_zone_file(text):
    """Parse the master-file subset: `$ORIGIN` plus `name TTL IN TYPE rdata`."""
    origin = None
    records = []
    sig_records = []
    key_records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0].upper() == "$ORIGIN":
            if len(tokens) != 2:
                raise ZoneSyntaxError(lineno, "$ORIGIN wants one argument")
            origin = Name.from_text(tokens[1])
            continue
        if origin is None:
            raise ZoneSyntaxError(lineno, "record before $ORIGIN")
        if len(tokens) < 4:
            raise ZoneSyntaxError(lineno, "expected: name TTL IN TYPE rdata")
        name = _parse_name(tokens[0], origin)
        try:
            ttl = int(tokens[1])
        except ValueError:
            raise ZoneSyntaxError(lineno, "bad TTL %r" % tokens[1])
        if ttl > MAX_TTL:
            raise TtlTooLarge("TTL %d needs the reserved top byte" % ttl)
        if tokens[2].upper() != "IN":
            raise ZoneSyntaxError(lineno, "only class IN is supported")
        rtype_txt = tokens[3].upper()
        rtype, rdata = _parse_rdata(rtype_txt, tokens[4:], origin, lineno)
        rec = Record(name, rtype, CLASS_IN, ttl, rdata)
        if rtype == TYPE_RRSIG:
            sig_records.append(rec)
        elif rtype == TYPE_DNSKEY:
            key_records.append(rec)
        else:
            records.append(rec)
    if origin is None:
        raise ZoneSyntaxError(0, "no $ORIGIN")
    zone = Zone(origin, records)
    if zone.soa() is None:
        raise NoSoa("zone %s has no SOA" % origin.to_text())
    if key_records or sig_records:
        zone.dnskey_records = key_records
        for sig in sig_records:
            key = (sig.name.key(), sig.rdata.type_covered)
            zone.rrsigs.setdefault(key, []).append(sig)
        zone.signed = bool(key_records)
    return zone


def _rdata_text(rec):
    rd = rec.rdata
    if isinstance(rd, ARdata):
        return rd.to_text()
    if isinstance(rd, NsRdata):
        return rd.nsdname.to_text()
    if isinstance(rd, SoaRdata):
        return "%s %s %d %d %d %d %d" % (
            rd.mname.to_text(), rd.rname.to_text(), rd.serial, rd.refresh,
            rd.retry, rd.expire, rd.minimum)
    if isinstance(rd, DsRdata):
        return "%d %d %d %s" % (rd.key_tag, rd.algorithm, rd.digest_type,
                                rd.digest.hex())
    if isinstance(rd, DnskeyData):
        return "%d %d %d %s" % (rd.flags, rd.protocol, rd.algorithm,
                                base64.b64encode(rd.public_key).decode())
    if isinstance(rd, RrsigData):
        return "%s %d %d %d %d %d %d %s %s" % (
            codec.TYPE_NAMES[rd.type_covered], rd.algorithm, rd.labels,
            rd.original_ttl, rd.expiration, rd.inception, rd.key_tag,
            rd.signer.to_text(), base64.b64encode(rd.signature).decode())
    raise ZoneError("unprintable rdata %r" % (rd,))


def print_zone(zone):
    lines = ["$ORIGIN %s" % zone.origin.to_text()]
    for rec in zone.records + zone.dnskey_records:
        lines.append("%s %d IN %s %s" % (
            rec.name.to_text(), rec.ttl, codec.TYPE_NAMES[rec.rtype],
            _rdata_text(rec)))
    for sigs in zone.rrsigs.values():
        for rec in sigs:
            lines.append("%s %d IN RRSIG %s" % (
                rec.name.to_text(), rec.ttl, _rdata_text(rec)))
    return "\n".join(lines) + "\n"


def sign_zone(zone, preq_suite, postq_suite, now, seed=None, keys=None,
              registry=crypto.REGISTRY):
    """Publish DNSKEYs and sign every RRset once per configured class.

    `preq_suite` may be None for a post-quantum-only zone (the benchmark
    baseline).  Two suites of the same class are a ClassMismatch.  Keys are
    derived deterministically from `seed` unless supplied via `keys`
    (a KSK and ZSK per suite).
    """
    codes = [c for c in (preq_suite, postq_suite) if c is not None]
    if not codes:
        raise ClassMismatch("at least one suite required")
    klasses = [registry.klass_of(c) for c in codes]
    if len(set(klasses)) != len(klasses):
        raise ClassMismatch("suites %r share a class" % (codes,))
    if seed is None:
        seed = zone.origin.to_text().encode()

    signed = zone.copy()
    signed.keys = []
    for code in codes:
        for role in (crypto.KSK, crypto.ZSK):
            existing = next((k for k in (keys or [])
                             if k.suite_code == code and k.role == role), None)
            signed.keys.append(existing or crypto.generate_keypair(
                code, role, seed + b"/%d" % code, registry))

    ttl = signed.soa().ttl
    dnskeys = [k.dnskey_record(signed.origin, ttl) for k in signed.keys]
    signed.dnskey_records = crypto.sort_rrset_canonically(dnskeys)

    window = (now - crypto.DEFAULT_INCEPTION_OFFSET,
              now + crypto.DEFAULT_LIFETIME)
    signed.rrsigs = {}

    def add_sigs(rrset, keys):
        sigs = [crypto.sign_rrset(rrset, k, window[0], window[1],
                                  signer=signed.origin, registry=registry)
                for k in keys]
        sigs.sort(key=lambda s: (s.rdata.algorithm, s.rdata.key_tag))
        signed.rrsigs[(rrset[0].name.key(), rrset[0].rtype)] = sigs

    zsks = [k for k in signed.keys if k.role == crypto.ZSK]
    for rrset in signed.rrsets().values():
        add_sigs(crypto.sort_rrset_canonically(rrset), zsks)
    # The DNSKEY RRset carries KSK and ZSK signatures per class.
    add_sigs(signed.dnskey_records, signed.keys)
    signed.signed = True
    return signed


def ds_digest(owner, dnskey_rdata):
    """Digest type 2: SHA-256 over canonical owner wire plus DNSKEY RDATA."""
    canon = Name(tuple(l.lower() for l in owner.labels))
    return hashlib.sha256(encode_name_uncompressed(canon) +
                          dnskey_rdata.rdata_bytes()).digest()


def make_ds(zone):
    """One DS per KSK, for the parent to publish."""
    if not zone.signed:
        raise NotSigned("zone %s is not signed" % zone.origin.to_text())
    ttl = zone.soa().ttl
    out = []
    for rec in zone.dnskey_records:
        if rec.rdata.flags != DnskeyData.FLAG_KSK:
            continue
        rd = DsRdata(crypto.key_tag(rec.rdata.rdata_bytes()),
                     rec.rdata.algorithm, 2, ds_digest(zone.origin, rec.rdata))
        out.append(Record(zone.origin, TYPE_DS, CLASS_IN, ttl, rd))
    return out


class TrustAnchor:
    """Out-of-band DS set for the root of the hierarchy."""

    def __init__(self, zone_name, ds_records):
        self.zone = zone_name
        self.ds_set = list(ds_records)

    @classmethod
    def for_zone(cls, zone):
        return cls(zone.origin, make_ds(zone))

    def to_text(self):
        lines = []
        for rec in self.ds_set:
            rd = rec.rdata
            lines.append("%s %d %d %d %s" % (
                rec.name.to_text(), rd.key_tag, rd.algorithm, rd.digest_type,
                rd.digest.hex()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        ds = []
        zone_name = None
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith(";"):
                continue
            name_txt, tag, alg, dt, digest = line.split()
            zone_name = Name.from_text(name_txt)
            ds.append(Record(zone_name, TYPE_DS, CLASS_IN, 0,
                             DsRdata(int(tag), int(alg), int(dt),
                                     bytes.fromhex(digest))))
        if zone_name is None:
            raise ZoneError("empty trust anchor")
        return cls(zone_name, ds)


def reference_zone_text():
    """The testbed zone: ten A records plus apex NS and glue."""
    lines = ["$ORIGIN socratescrc.",
             "@ 3600 IN SOA ns1 admin 1 7200 3600 1209600 3600",
             "@ 3600 IN NS ns1",
             "ns1 3600 IN A 10.9.9.53"]
    for i in range(10):
        lines.append("test%d 3600 IN A 10.9.9.%d" % (i, 10 + i))
    return "\n".join(lines) + "\n"


def root_zone_text(child_origin="socratescrc.", child_ns="ns1.socratescrc.",
                   child_glue="10.9.9.53"):
    return "\n".join([
        "$ORIGIN .",
        "@ 3600 IN SOA ns.root. admin.root. 1 7200 3600 1209600 3600",
        "@ 3600 IN NS ns.root.",
        "ns.root. 3600 IN A 10.9.9.1",
        "%s 3600 IN NS %s" % (child_origin, child_ns),
        "%s 3600 IN A %s" % (child_ns, child_glue),
    ]) + "\n"
