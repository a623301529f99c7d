"""Bit-exact DNS message codec.

Wire layout follows RFC 1035 section 4: a 12-byte header, a question
section, and three resource-record sections.  Name compression emits
2-byte pointers (0xC0-prefixed offsets) for repeated names; pointers only
ever reference earlier offsets, and the decoder rejects anything else.

The 3-bit Z field of the header is used as a real field here (it signals
which post-quantum algorithm's records were omitted from a truncated
first fragment); this stack never emits values 4..7.
"""

import re
import struct

# Record types used by this stack.
TYPE_A = 1
TYPE_NS = 2
TYPE_SOA = 6
TYPE_DS = 43
TYPE_RRSIG = 46
TYPE_DNSKEY = 48
TYPE_OPT = 41

CLASS_IN = 1

RCODE_NOERROR = 0
RCODE_FORMERR = 1
RCODE_SERVFAIL = 2
RCODE_NXDOMAIN = 3
RCODE_NOTIMP = 4

TYPE_NAMES = {
    TYPE_A: "A", TYPE_NS: "NS", TYPE_SOA: "SOA", TYPE_DS: "DS",
    TYPE_RRSIG: "RRSIG", TYPE_DNSKEY: "DNSKEY", TYPE_OPT: "OPT",
}
TYPE_CODES = {v: k for k, v in TYPE_NAMES.items()}

MAX_NAME_WIRE = 255
MAX_LABEL = 63

# Z-field values 1..3 name the post-quantum algorithm whose RRSIG/DNSKEY
# records were left out of a truncated first fragment; 0 means none.
Z_TO_ALGO = {1: 240, 2: 241, 3: 242}
ALGO_TO_Z = {v: k for k, v in Z_TO_ALGO.items()}


class CodecError(Exception):
    """Malformed datagram; callers drop the message."""


class Truncated(CodecError):
    pass


class BadPointer(CodecError):
    """Compression pointer referencing a non-earlier offset."""


class PointerLoop(CodecError):
    pass


class CountMismatch(CodecError):
    """Section counts disagree with the actual message contents."""


class NameTooLong(CodecError):
    pass


class RdataTooLong(CodecError):
    pass


class UnknownAlgorithm(CodecError):
    pass


def _fold(b):
    return b.lower()


class Name:
    """A domain name as an ordered tuple of labels (no trailing root label).

    Label bytes are arbitrary (fragment labels contain '?'); comparison and
    hashing fold ASCII case, text rendering preserves it.
    """

    __slots__ = ("labels",)

    def __init__(self, labels=()):
        labels = tuple(bytes(l) for l in labels)
        for l in labels:
            if not 1 <= len(l) <= MAX_LABEL:
                raise NameTooLong("label length %d out of range" % len(l))
        if self._wire_len(labels) > MAX_NAME_WIRE:
            raise NameTooLong("name exceeds 255 octets")
        self.labels = labels

    @staticmethod
    def _wire_len(labels):
        return sum(len(l) + 1 for l in labels) + 1

    @classmethod
    def from_text(cls, text):
        if isinstance(text, bytes):
            text = text.decode("ascii")
        text = text.rstrip(".")
        if not text:
            return cls(())
        return cls(tuple(l.encode("ascii") for l in text.split(".")))

    def to_text(self):
        if not self.labels:
            return "."
        return ".".join(l.decode("latin-1") for l in self.labels) + "."

    @property
    def wire_len(self):
        return self._wire_len(self.labels)

    @property
    def is_root(self):
        return not self.labels

    def key(self):
        """Case-folded form used for comparisons and cache keys."""
        return tuple(_fold(l) for l in self.labels)

    def concat(self, other):
        return Name(self.labels + other.labels)

    def endswith(self, suffix):
        n = len(suffix.labels)
        if n == 0:
            return True
        return self.key()[-n:] == suffix.key()

    def parent(self):
        return Name(self.labels[1:])

    def __eq__(self, other):
        return isinstance(other, Name) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return "Name(%s)" % self.to_text()


ROOT = Name(())


class Header:
    """The fixed 12-byte message header."""

    __slots__ = ("id", "qr", "opcode", "aa", "tc", "rd", "ra", "z", "rcode",
                 "qdcount", "ancount", "nscount", "arcount")

    def __init__(self, id=0, qr=0, opcode=0, aa=0, tc=0, rd=0, ra=0, z=0,
                 rcode=0, qdcount=0, ancount=0, nscount=0, arcount=0):
        self.id = id
        self.qr = qr
        self.opcode = opcode
        self.aa = aa
        self.tc = tc
        self.rd = rd
        self.ra = ra
        self.z = z
        self.rcode = rcode
        self.qdcount = qdcount
        self.ancount = ancount
        self.nscount = nscount
        self.arcount = arcount

    def flags_word(self):
        # QR(15) opcode(14..11) AA(10) TC(9) RD(8) RA(7) Z(6..4) RCODE(3..0)
        return ((self.qr & 1) << 15 | (self.opcode & 0xF) << 11 |
                (self.aa & 1) << 10 | (self.tc & 1) << 9 |
                (self.rd & 1) << 8 | (self.ra & 1) << 7 |
                (self.z & 0x7) << 4 | (self.rcode & 0xF))

    @classmethod
    def from_flags_word(cls, id, word, counts=(0, 0, 0, 0)):
        return cls(id=id,
                   qr=(word >> 15) & 1, opcode=(word >> 11) & 0xF,
                   aa=(word >> 10) & 1, tc=(word >> 9) & 1,
                   rd=(word >> 8) & 1, ra=(word >> 7) & 1,
                   z=(word >> 4) & 0x7, rcode=word & 0xF,
                   qdcount=counts[0], ancount=counts[1],
                   nscount=counts[2], arcount=counts[3])

    def copy(self):
        return Header(**{s: getattr(self, s) for s in self.__slots__})

    def __eq__(self, other):
        return (isinstance(other, Header) and
                all(getattr(self, s) == getattr(other, s) for s in self.__slots__))

    def __repr__(self):
        return ("Header(id=0x%04x qr=%d tc=%d z=%d rcode=%d counts=%d/%d/%d/%d)"
                % (self.id, self.qr, self.tc, self.z, self.rcode,
                   self.qdcount, self.ancount, self.nscount, self.arcount))


class Question:
    __slots__ = ("qname", "qtype", "qclass")

    def __init__(self, qname, qtype, qclass=CLASS_IN):
        self.qname = qname
        self.qtype = qtype
        self.qclass = qclass

    def __eq__(self, other):
        return (isinstance(other, Question) and self.qname == other.qname and
                self.qtype == other.qtype and self.qclass == other.qclass)

    def __repr__(self):
        return "Question(%s %s)" % (self.qname.to_text(),
                                    TYPE_NAMES.get(self.qtype, self.qtype))


# ---------------------------------------------------------------------------
# Typed RDATA

class ARdata:
    __slots__ = ("address",)

    def __init__(self, address):
        if isinstance(address, str):
            address = bytes(int(p) for p in address.split("."))
        if len(address) != 4:
            raise CodecError("A rdata must be 4 bytes")
        self.address = bytes(address)

    def to_text(self):
        return ".".join(str(b) for b in self.address)

    def __eq__(self, other):
        return isinstance(other, ARdata) and self.address == other.address

    def __repr__(self):
        return "A(%s)" % self.to_text()


class NsRdata:
    __slots__ = ("nsdname",)

    def __init__(self, nsdname):
        self.nsdname = nsdname

    def __eq__(self, other):
        return isinstance(other, NsRdata) and self.nsdname == other.nsdname

    def __repr__(self):
        return "NS(%s)" % self.nsdname.to_text()


class SoaRdata:
    __slots__ = ("mname", "rname", "serial", "refresh", "retry", "expire",
                 "minimum")

    def __init__(self, mname, rname, serial, refresh, retry, expire, minimum):
        self.mname = mname
        self.rname = rname
        self.serial = serial
        self.refresh = refresh
        self.retry = retry
        self.expire = expire
        self.minimum = minimum

    def __eq__(self, other):
        return (isinstance(other, SoaRdata) and
                all(getattr(self, s) == getattr(other, s) for s in self.__slots__))

    def __repr__(self):
        return "SOA(%s)" % self.mname.to_text()


class DsRdata:
    __slots__ = ("key_tag", "algorithm", "digest_type", "digest")

    def __init__(self, key_tag, algorithm, digest_type, digest):
        self.key_tag = key_tag
        self.algorithm = algorithm
        self.digest_type = digest_type
        self.digest = bytes(digest)

    def __eq__(self, other):
        return (isinstance(other, DsRdata) and
                all(getattr(self, s) == getattr(other, s) for s in self.__slots__))

    def __repr__(self):
        return "DS(tag=%d alg=%d)" % (self.key_tag, self.algorithm)


class RrsigData:
    """RRSIG RDATA; field order on the wire exactly as declared here.

    The signer name is always encoded uncompressed inside RDATA.
    """

    __slots__ = ("type_covered", "algorithm", "labels", "original_ttl",
                 "expiration", "inception", "key_tag", "signer", "signature")

    def __init__(self, type_covered, algorithm, labels, original_ttl,
                 expiration, inception, key_tag, signer, signature):
        self.type_covered = type_covered
        self.algorithm = algorithm
        self.labels = labels
        self.original_ttl = original_ttl
        self.expiration = expiration
        self.inception = inception
        self.key_tag = key_tag
        self.signer = signer
        self.signature = bytes(signature)

    def prefix_bytes(self):
        """All fields through the signer, i.e. everything but the signature."""
        return (struct.pack("!HBBIIIH", self.type_covered, self.algorithm,
                            self.labels, self.original_ttl, self.expiration,
                            self.inception, self.key_tag) +
                encode_name_uncompressed(self.signer))

    def __eq__(self, other):
        return (isinstance(other, RrsigData) and
                all(getattr(self, s) == getattr(other, s) for s in self.__slots__))

    def __repr__(self):
        return ("RRSIG(covers=%s alg=%d tag=%d sig=%dB)"
                % (TYPE_NAMES.get(self.type_covered, self.type_covered),
                   self.algorithm, self.key_tag, len(self.signature)))


class DnskeyData:
    __slots__ = ("flags", "protocol", "algorithm", "public_key")

    FLAG_ZSK = 256
    FLAG_KSK = 257

    def __init__(self, flags, protocol, algorithm, public_key):
        self.flags = flags
        self.protocol = protocol
        self.algorithm = algorithm
        self.public_key = bytes(public_key)

    def prefix_bytes(self):
        return struct.pack("!HBB", self.flags, self.protocol, self.algorithm)

    def rdata_bytes(self):
        return self.prefix_bytes() + self.public_key

    def __eq__(self, other):
        return (isinstance(other, DnskeyData) and
                all(getattr(self, s) == getattr(other, s) for s in self.__slots__))

    def __repr__(self):
        role = "KSK" if self.flags == self.FLAG_KSK else "ZSK"
        return "DNSKEY(%s alg=%d key=%dB)" % (role, self.algorithm,
                                              len(self.public_key))


class RawRdata:
    __slots__ = ("data",)

    def __init__(self, data):
        self.data = bytes(data)

    def __eq__(self, other):
        return isinstance(other, RawRdata) and self.data == other.data

    def __repr__(self):
        return "Raw(%dB)" % len(self.data)


class Record:
    __slots__ = ("name", "rtype", "rclass", "ttl", "rdata")

    def __init__(self, name, rtype, rclass, ttl, rdata):
        self.name = name
        self.rtype = rtype
        self.rclass = rclass
        self.ttl = ttl
        self.rdata = rdata

    def copy(self):
        return Record(self.name, self.rtype, self.rclass, self.ttl, self.rdata)

    def __eq__(self, other):
        return (isinstance(other, Record) and self.name == other.name and
                self.rtype == other.rtype and self.rclass == other.rclass and
                self.ttl == other.ttl and self.rdata == other.rdata)

    def __repr__(self):
        return "Record(%s %s ttl=%d %r)" % (
            self.name.to_text(), TYPE_NAMES.get(self.rtype, self.rtype),
            self.ttl, self.rdata)


def opt_record(payload_size):
    """EDNS(0) OPT pseudo-record; the class field advertises the UDP size."""
    payload_size = max(512, min(65535, payload_size))
    return Record(ROOT, TYPE_OPT, payload_size, 0, RawRdata(b""))


class Message:
    __slots__ = ("header", "questions", "answer", "authority", "additional")

    def __init__(self, header=None, questions=None, answer=None,
                 authority=None, additional=None):
        self.header = header or Header()
        self.questions = list(questions or [])
        self.answer = list(answer or [])
        self.authority = list(authority or [])
        self.additional = list(additional or [])

    @property
    def question(self):
        return self.questions[0] if self.questions else None

    def sections(self):
        return (self.answer, self.authority, self.additional)

    def all_records(self):
        return self.answer + self.authority + self.additional

    def opt(self):
        for rec in self.additional:
            if rec.rtype == TYPE_OPT:
                return rec
        return None

    def sync_counts(self):
        self.header.qdcount = len(self.questions)
        self.header.ancount = len(self.answer)
        self.header.nscount = len(self.authority)
        self.header.arcount = len(self.additional)
        return self

    def copy(self):
        return Message(self.header.copy(), list(self.questions),
                       [r.copy() for r in self.answer],
                       [r.copy() for r in self.authority],
                       [r.copy() for r in self.additional])

    def __eq__(self, other):
        return (isinstance(other, Message) and self.header == other.header and
                self.questions == other.questions and
                self.answer == other.answer and
                self.authority == other.authority and
                self.additional == other.additional)

    def __repr__(self):
        return "Message(%r q=%r an=%d ns=%d ar=%d)" % (
            self.header, self.questions, len(self.answer),
            len(self.authority), len(self.additional))


# ---------------------------------------------------------------------------
# Encoding

def encode_name_uncompressed(name):
    out = bytearray()
    for label in name.labels:
        out.append(len(label))
        out += label
    out.append(0)
    return bytes(out)


class WireWriter:
    """Accumulates wire bytes and tracks name offsets for compression.

    Compression matches on exact label bytes (case-preserving), so
    encode/decode round-trips never alter case.
    """

    def __init__(self, compress=True):
        self.data = bytearray()
        self.compress = compress
        self._offsets = {}

    def tell(self):
        return len(self.data)

    def write(self, b):
        self.data += b

    def u8(self, v):
        self.data.append(v & 0xFF)

    def u16(self, v):
        self.data += struct.pack("!H", v & 0xFFFF)

    def u32(self, v):
        self.data += struct.pack("!I", v & 0xFFFFFFFF)

    def name_offset(self, name):
        return self._offsets.get(name.labels)

    def write_name(self, name, compress=None):
        """Write a name, replacing the longest known suffix with a pointer."""
        if compress is None:
            compress = self.compress
        labels = name.labels
        i = 0
        while i < len(labels):
            suffix = labels[i:]
            target = self._offsets.get(suffix)
            if compress and target is not None:
                self.u16(0xC000 | target)
                return
            here = self.tell()
            if here < 0x4000 and suffix not in self._offsets:
                self._offsets[suffix] = here
            self.u8(len(labels[i]))
            self.write(labels[i])
            i += 1
        self.u8(0)


def _encode_rdata(w, rtype, rdata):
    """Encode typed RDATA at the writer's current position.

    NS (and SOA) names participate in compression; RRSIG signers never do.
    """
    if isinstance(rdata, RawRdata):
        w.write(rdata.data)
    elif isinstance(rdata, ARdata):
        w.write(rdata.address)
    elif isinstance(rdata, NsRdata):
        w.write_name(rdata.nsdname)
    elif isinstance(rdata, SoaRdata):
        w.write_name(rdata.mname)
        w.write_name(rdata.rname)
        w.write(struct.pack("!IIIII", rdata.serial, rdata.refresh,
                            rdata.retry, rdata.expire, rdata.minimum))
    elif isinstance(rdata, DsRdata):
        w.write(struct.pack("!HBB", rdata.key_tag, rdata.algorithm,
                            rdata.digest_type))
        w.write(rdata.digest)
    elif isinstance(rdata, RrsigData):
        w.write(rdata.prefix_bytes())
        w.write(rdata.signature)
    elif isinstance(rdata, DnskeyData):
        w.write(rdata.rdata_bytes())
    else:
        raise CodecError("unencodable rdata %r" % (rdata,))


def encode_record(w, rec):
    start = w.tell()
    w.write_name(rec.name)
    w.u16(rec.rtype)
    w.u16(rec.rclass)
    w.u32(rec.ttl)
    len_pos = w.tell()
    w.u16(0)
    rd_start = w.tell()
    _encode_rdata(w, rec.rtype, rec.rdata)
    rdlen = w.tell() - rd_start
    if rdlen > 0xFFFF:
        raise RdataTooLong("rdata of %d bytes" % rdlen)
    struct.pack_into("!H", w.data, len_pos, rdlen)
    return start


def encode_message_ex(msg, compress=True):
    """Encode and also return per-record byte spans and the name-offset map.

    The spans (section, index, start, end) are what the fragment planner
    budgets with; the offset map lets stream records point into this wire.
    """
    msg.sync_counts()
    w = WireWriter(compress=compress)
    h = msg.header
    w.u16(h.id)
    w.u16(h.flags_word())
    w.u16(h.qdcount)
    w.u16(h.ancount)
    w.u16(h.nscount)
    w.u16(h.arcount)
    for q in msg.questions:
        w.write_name(q.qname)
        w.u16(q.qtype)
        w.u16(q.qclass)
    spans = []
    for si, section in enumerate(msg.sections()):
        for ri, rec in enumerate(section):
            start = encode_record(w, rec)
            spans.append((si, ri, start, w.tell()))
    return bytes(w.data), spans, w


def encode_message(msg, compress=True):
    return encode_message_ex(msg, compress)[0]


def encoded_size(msg, compress=True):
    return len(encode_message(msg, compress))


# ---------------------------------------------------------------------------
# Decoding

class WireReader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def need(self, n):
        if self.pos + n > len(self.data):
            raise Truncated("need %d bytes at offset %d" % (n, self.pos))

    def u8(self):
        self.need(1)
        v = self.data[self.pos]
        self.pos += 1
        return v

    def u16(self):
        self.need(2)
        v = struct.unpack_from("!H", self.data, self.pos)[0]
        self.pos += 2
        return v

    def u32(self):
        self.need(4)
        v = struct.unpack_from("!I", self.data, self.pos)[0]
        self.pos += 4
        return v

    def take(self, n):
        self.need(n)
        v = self.data[self.pos:self.pos + n]
        self.pos += n
        return v

    def read_name(self):
        """Decode a possibly-compressed name starting at the current offset.

        Pointers must reference strictly earlier offsets; loops and forward
        or out-of-range targets are rejected.
        """
        labels = []
        seen = set()
        jumped = False
        pos = self.pos
        total = 1
        while True:
            if pos >= len(self.data):
                raise Truncated("name runs past message end")
            b = self.data[pos]
            if b & 0xC0 == 0xC0:
                if pos + 1 >= len(self.data):
                    raise Truncated("pointer runs past message end")
                target = ((b & 0x3F) << 8) | self.data[pos + 1]
                if not jumped:
                    self.pos = pos + 2
                if target >= pos:
                    raise BadPointer("pointer at %d references %d" % (pos, target))
                if target in seen:
                    raise PointerLoop("pointer loop via offset %d" % target)
                seen.add(target)
                pos = target
                jumped = True
            elif b & 0xC0:
                raise BadPointer("reserved label type 0x%02x" % b)
            elif b == 0:
                if not jumped:
                    self.pos = pos + 1
                return Name(labels)
            else:
                if pos + 1 + b > len(self.data):
                    raise Truncated("label runs past message end")
                total += b + 1
                if total > MAX_NAME_WIRE:
                    raise NameTooLong("decoded name exceeds 255 octets")
                labels.append(bytes(self.data[pos + 1:pos + 1 + b]))
                pos += 1 + b


def _decode_rdata(r, rtype, rdlen):
    end = r.pos + rdlen
    if end > len(r.data):
        raise Truncated("rdata runs past message end")
    if rtype == TYPE_A:
        if rdlen != 4:
            raise CodecError("A rdata length %d" % rdlen)
        return ARdata(r.take(4))
    if rtype == TYPE_NS:
        rd = NsRdata(r.read_name())
        if r.pos != end:
            raise CountMismatch("NS rdata length mismatch")
        return rd
    if rtype == TYPE_SOA:
        mname = r.read_name()
        rname = r.read_name()
        vals = struct.unpack("!IIIII", r.take(20))
        if r.pos != end:
            raise CountMismatch("SOA rdata length mismatch")
        return SoaRdata(mname, rname, *vals)
    if rtype == TYPE_DS:
        if rdlen < 4:
            raise Truncated("DS rdata too short")
        key_tag, alg, dt = struct.unpack("!HBB", r.take(4))
        return DsRdata(key_tag, alg, dt, r.take(rdlen - 4))
    if rtype == TYPE_RRSIG:
        if rdlen < 18:
            raise Truncated("RRSIG rdata too short")
        tc, alg, labels, ottl, exp, inc, tag = struct.unpack(
            "!HBBIIIH", r.take(18))
        signer = r.read_name()
        if r.pos > end:
            raise Truncated("RRSIG signer overruns rdata")
        sig = r.take(end - r.pos)
        return RrsigData(tc, alg, labels, ottl, exp, inc, tag, signer, sig)
    if rtype == TYPE_DNSKEY:
        if rdlen < 4:
            raise Truncated("DNSKEY rdata too short")
        flags, proto, alg = struct.unpack("!HBB", r.take(4))
        return DnskeyData(flags, proto, alg, r.take(rdlen - 4))
    return RawRdata(r.take(rdlen))


_FRAGMENT_OWNER = re.compile(rb"^\?[0-9]+\?$")


def decode_record(r):
    name = r.read_name()
    rtype = r.u16()
    rclass = r.u16()
    ttl = r.u32()
    rdlen = r.u16()
    if name.labels and _FRAGMENT_OWNER.match(name.labels[0]):
        # Continuation records echo the original qtype but carry an opaque
        # stream slice; their payload is never interpreted as typed RDATA.
        rdata = RawRdata(r.take(rdlen))
    else:
        rdata = _decode_rdata(r, rtype, rdlen)
    return Record(name, rtype, rclass, ttl, rdata)


def decode_message(wire):
    if len(wire) < 12:
        raise Truncated("message shorter than header")
    r = WireReader(wire)
    mid = r.u16()
    flags = r.u16()
    counts = (r.u16(), r.u16(), r.u16(), r.u16())
    header = Header.from_flags_word(mid, flags, counts)
    questions = []
    for _ in range(header.qdcount):
        qname = r.read_name()
        questions.append(Question(qname, r.u16(), r.u16()))
    sections = ([], [], [])
    for section, count in zip(sections, counts[1:]):
        for _ in range(count):
            section.append(decode_record(r))
    if r.pos != len(wire):
        raise CountMismatch("%d trailing bytes" % (len(wire) - r.pos))
    return Message(header, questions, *sections)


def decode_records_at(wire, offset, count):
    """Decode `count` records starting at `offset`.

    Used for continuation streams, whose records carry owner pointers into
    the first fragment: `wire` is first-fragment bytes + stream bytes.
    """
    r = WireReader(wire)
    r.pos = offset
    return [decode_record(r) for _ in range(count)], r.pos


def set_z_signal(header, algo_code):
    """Return a header copy with the z field naming an omitted PQ algorithm."""
    h = header.copy()
    if algo_code is None:
        h.z = 0
        return h
    z = ALGO_TO_Z.get(algo_code)
    if z is None:
        raise UnknownAlgorithm("no z value for algorithm %r" % (algo_code,))
    h.z = z
    return h


def z_signal_algo(header):
    if header.z == 0:
        return None
    algo = Z_TO_ALGO.get(header.z)
    if algo is None:
        raise UnknownAlgorithm("z value %d is not assigned" % header.z)
    return algo


def make_query(qname, qtype, msg_id, payload_size=None, rd=0):
    msg = Message(Header(id=msg_id, rd=rd),
                  [Question(qname, qtype, CLASS_IN)])
    if payload_size is not None:
        msg.additional.append(opt_record(payload_size))
    return msg.sync_counts()
