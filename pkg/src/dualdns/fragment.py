"""Server-side application-layer fragmentation.

An oversized response is decomposed deterministically:

  fragment 1   keeps the header, question, OPT, every non-signature record,
               every pre-quantum RRSIG/DNSKEY, and as much post-quantum
               material as fits (the last record may be split after its
               fixed RDATA prefix).  TC is set; if no part of a post-quantum
               record could be included where one was omitted, the header's
               z field names the omitted algorithm.
  stream       the split record's missing signature/key bytes followed by
               the wire encodings of every omitted post-quantum record, in
               original order.  Stream records keep their owner names as
               2-byte pointers into fragment 1 (every owner already occurs
               there), so both endpoints compute identical lengths.
  fragments 2+ fixed-capacity slices of the stream, served from a bounded
               cache against `?n?name` queries.

Record positions are preserved across the exchange by packing each
record's original index within its section into the top TTL byte.
"""

import re
import struct
import threading
from collections import OrderedDict

from . import codec, crypto
from .codec import (Message, Name, Record, TYPE_DNSKEY, TYPE_OPT, TYPE_RRSIG,
                    encode_message_ex, opt_record)


class FragmentError(Exception):
    pass


class FirstFragmentOverflow(FragmentError):
    """Pre-quantum material alone exceeds the threshold; configuration error."""


class TtlTooLarge(FragmentError):
    pass


class OutOfRange(FragmentError):
    pass


class PlanError(FragmentError):
    pass


class FragmentConfig:
    """Tuning knobs shared by both endpoints.

    threshold       largest datagram we will emit (IPv6 MTU 1280 - 40 - 8).
    min_useful_slice  smallest signature/key fraction worth splitting into
                    fragment 1; below it the record is omitted and z is set.
    continuation_reserve  headroom kept out of each continuation fragment
                    (fragment-label growth, EDNS variation); part of the
                    capacity formula both endpoints share.
    """

    __slots__ = ("threshold", "min_useful_slice", "cache_ttl", "cache_cap",
                 "continuation_reserve")

    def __init__(self, threshold=1232, min_useful_slice=16, cache_ttl=30.0,
                 cache_cap=10000, continuation_reserve=75):
        if not 512 <= threshold <= 65535:
            raise FragmentError("threshold %d outside [512, 65535]" % threshold)
        self.threshold = threshold
        self.min_useful_slice = min_useful_slice
        self.cache_ttl = cache_ttl
        self.cache_cap = cache_cap
        self.continuation_reserve = continuation_reserve

    def with_threshold(self, threshold):
        return FragmentConfig(threshold, self.min_useful_slice, self.cache_ttl,
                              self.cache_cap, self.continuation_reserve)


# --- TTL position encoding ------------------------------------------------

TTL_MASK = 0x00FFFFFF


def encode_position(index, ttl):
    if ttl > TTL_MASK:
        raise TtlTooLarge("TTL %d uses the reserved top byte" % ttl)
    if index > 0xFF:
        raise TtlTooLarge("section index %d exceeds one byte" % index)
    return (index << 24) | ttl


def decode_position(encoded_ttl):
    return encoded_ttl >> 24, encoded_ttl & TTL_MASK


# --- fragment names -------------------------------------------------------

_FRAG_LABEL = re.compile(rb"^\?([1-9][0-9]*)\?$")


def fragment_qname(n, base):
    return Name((b"?%d?" % n,) + base.labels)


def parse_fragment_qname(qname):
    """Recognize `?n?rest` (n >= 2, no leading zeros); total function."""
    if not qname.labels:
        return None
    m = _FRAG_LABEL.match(qname.labels[0])
    if not m:
        return None
    n = int(m.group(1))
    if n < 2:
        return None
    return n, Name(qname.labels[1:])


def continuation_capacity(cfg, base_qname):
    """Slice bytes available per continuation fragment.

    Overhead covers header, the echoed fragment question, OPT, and the
    continuation record's frame with its owner spelled in full; the
    fragment label is budgeted at two digits, plus the configured reserve.
    """
    fq = 5 + base_qname.wire_len          # "?NN?" label + base
    capacity = cfg.threshold - (37 + 2 * fq) - cfg.continuation_reserve
    if capacity < 32:
        raise FragmentError("threshold %d leaves no continuation capacity"
                            % cfg.threshold)
    return capacity


# --- planning -------------------------------------------------------------

def record_signature_class(rec, registry):
    """Suite class for RRSIG/DNSKEY records; None for everything else."""
    if rec.rtype == TYPE_RRSIG:
        algo = rec.rdata.algorithm
    elif rec.rtype == TYPE_DNSKEY:
        algo = rec.rdata.algorithm
    else:
        return None
    if not registry.has(algo):
        return None
    return registry.klass_of(algo)


def _variable_len(rec):
    """Length of the splittable tail (signature or key bytes).

    Well-formed zones always carry table-sized tails; using the actual
    length keeps the planner total on anything decodable.
    """
    if rec.rtype == TYPE_RRSIG:
        return len(rec.rdata.signature)
    return len(rec.rdata.public_key)


def _truncate_tail(rec, keep):
    """Copy of a RRSIG/DNSKEY record with only `keep` tail bytes."""
    out = rec.copy()
    rd = rec.rdata
    if rec.rtype == TYPE_RRSIG:
        out.rdata = codec.RrsigData(rd.type_covered, rd.algorithm, rd.labels,
                                    rd.original_ttl, rd.expiration,
                                    rd.inception, rd.key_tag, rd.signer,
                                    rd.signature[:keep])
    else:
        out.rdata = codec.DnskeyData(rd.flags, rd.protocol, rd.algorithm,
                                     rd.public_key[:keep])
    return out


class FragmentPlan:
    __slots__ = ("original", "original_wire", "first", "first_wire", "stream",
                 "slices", "n_fragments", "base_qname", "qtype", "qclass",
                 "postq_code", "capacity", "split_missing")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)

    def slice_bytes(self, n):
        start, end = self.slices[n - 2]
        return self.stream[start:end]

    def __repr__(self):
        return ("FragmentPlan(n=%d stream=%dB first=%dB postq=%r)"
                % (self.n_fragments, len(self.stream), len(self.first_wire),
                   self.postq_code))


def _encode_stream_record(rec, writer):
    """Wire encoding with the owner as a pointer into the first fragment."""
    w = codec.WireWriter(compress=False)
    target = writer.name_offset(rec.name)
    if target is not None and target < 0x4000:
        w.u16(0xC000 | target)
    else:
        w.write_name(rec.name, compress=False)
    w.u16(rec.rtype)
    w.u16(rec.rclass)
    w.u32(rec.ttl)
    pos = len(w.data)
    w.u16(0)
    start = len(w.data)
    codec._encode_rdata(w, rec.rtype, rec.rdata)
    struct.pack_into("!H", w.data, pos, len(w.data) - start)
    return bytes(w.data)


def plan_fragments(original, cfg, registry=crypto.REGISTRY):
    """Deterministic fragment plan, or None when the message already fits.

    The returned plan's first fragment and every continuation encode to at
    most `cfg.threshold` bytes, and reassembling the plan reproduces the
    original message byte-for-byte after flag/TTL normalization.
    """
    if original.header.tc or original.header.z:
        raise PlanError("input already carries fragmentation flags")
    wire, spans, _ = encode_message_ex(original, compress=True)
    if len(wire) <= cfg.threshold:
        return None
    if not original.questions:
        raise PlanError("cannot fragment a response without a question")

    question = original.question
    sections = original.sections()
    sizes = {(si, ri): end - start for si, ri, start, end in spans}

    postq_code = None
    pool = []                      # post-quantum records, original order
    for si, section in enumerate(sections):
        if len(section) > 0xFF + 1:
            raise TtlTooLarge("section of %d records" % len(section))
        for ri, rec in enumerate(section):
            if rec.rtype != TYPE_OPT and rec.ttl > TTL_MASK:
                raise TtlTooLarge("TTL %d at %s" % (rec.ttl,
                                                    rec.name.to_text()))
            if record_signature_class(rec, registry) == crypto.POST_QUANTUM:
                if postq_code is None:
                    postq_code = rec.rdata.algorithm
                elif postq_code != rec.rdata.algorithm:
                    raise PlanError("multiple post-quantum algorithms in one "
                                    "response")
                pool.append((si, ri))
    if postq_code is None:
        raise FirstFragmentOverflow("response exceeds threshold with no "
                                    "post-quantum records to relocate")

    fixed_size = len(wire) - sum(sizes[p] for p in pool)
    budget = cfg.threshold - fixed_size
    if budget < 0:
        raise FirstFragmentOverflow(
            "pre-quantum material is %d bytes over the %d-byte threshold"
            % (-budget, cfg.threshold))

    keep = {}                      # (si, ri) -> kept tail bytes or None=full
    omitted = []
    split = None
    z_needed = False
    for p in pool:
        size = sizes[p]
        if z_needed or split is not None:
            omitted.append(p)
            continue
        if size <= budget:
            keep[p] = None
            budget -= size
            continue
        rec = sections[p[0]][p[1]]
        var_len = _variable_len(rec)
        prefix = size - var_len
        fit = budget - prefix
        if fit >= cfg.min_useful_slice:
            keep[p] = fit
            split = (p, var_len - fit)
            budget = 0
        else:
            z_needed = True
            omitted.append(p)

    def build_first():
        first = Message(original.header.copy(), list(original.questions))
        first.header.tc = 1
        if z_needed:
            first.header = codec.set_z_signal(first.header, postq_code)
        first_sections = first.sections()
        omitted_set = set(omitted)
        stream_records = []
        for si, section in enumerate(sections):
            for ri, rec in enumerate(section):
                if rec.rtype == TYPE_OPT:
                    first_sections[si].append(rec.copy())
                    continue
                tagged = rec.copy()
                tagged.ttl = encode_position(ri, rec.ttl)
                if (si, ri) in omitted_set:
                    stream_records.append(tagged)
                elif keep.get((si, ri), None) is not None:
                    first_sections[si].append(
                        _truncate_tail(tagged, keep[(si, ri)]))
                else:
                    first_sections[si].append(tagged)
        first.sync_counts()
        wire_, _, writer_ = encode_message_ex(first, compress=True)
        return first, wire_, writer_, stream_records

    # The size estimates above used the original message's compression; a
    # name whose only earlier spelled occurrence sat inside a relocated
    # record re-encodes longer, so shed kept bytes until fragment 1 fits.
    while True:
        first, first_wire, first_writer, stream_records = build_first()
        overage = len(first_wire) - cfg.threshold
        if overage <= 0:
            break
        if split is not None:
            p, _ = split
            fit = keep[p] - overage
            if fit >= cfg.min_useful_slice:
                keep[p] = fit
                split = (p, _variable_len(sections[p[0]][p[1]]) - fit)
            else:
                del keep[p]
                omitted.insert(0, p)
                split = None
                z_needed = True
            continue
        kept_pool = [p for p in pool if p in keep]
        if not kept_pool:
            raise FirstFragmentOverflow(
                "fixed material re-encodes %d bytes over the threshold"
                % overage)
        del keep[kept_pool[-1]]
        omitted.insert(0, kept_pool[-1])
        z_needed = True

    stream = bytearray()
    if split is not None:
        (ssi, sri), missing = split
        rec = sections[ssi][sri]
        tail = (rec.rdata.signature if rec.rtype == TYPE_RRSIG
                else rec.rdata.public_key)
        stream += tail[len(tail) - missing:]
        split_missing = missing
    else:
        split_missing = 0
    for rec in stream_records:
        stream += _encode_stream_record(rec, first_writer)
    if not stream:
        raise PlanError("oversized message produced an empty stream")

    capacity = continuation_capacity(cfg, question.qname)
    slices = [(off, min(off + capacity, len(stream)))
              for off in range(0, len(stream), capacity)]
    n_fragments = 1 + len(slices)
    if n_fragments > 99:
        raise PlanError("%d fragments exceeds the two-digit label budget"
                        % n_fragments)

    return FragmentPlan(
        original=original, original_wire=wire, first=first,
        first_wire=first_wire, stream=bytes(stream), slices=slices,
        n_fragments=n_fragments, base_qname=question.qname,
        qtype=question.qtype, qclass=question.qclass, postq_code=postq_code,
        capacity=capacity, split_missing=split_missing)


def build_continuation(plan, n, frag_query):
    """Well-formed response carrying stream slice n-2 as one opaque record.

    Continuations are encoded without compression so their size depends only
    on the fragment name and slice length, never on pointer placement.
    """
    if not 2 <= n <= plan.n_fragments:
        raise OutOfRange("fragment %d of %d" % (n, plan.n_fragments))
    owner = fragment_qname(n, plan.base_qname)
    header = codec.Header(id=frag_query.header.id, qr=1, aa=1,
                          rd=frag_query.header.rd)
    msg = Message(header, list(frag_query.questions),
                  answer=[Record(owner, plan.qtype, plan.qclass, n - 2,
                                 codec.RawRdata(plan.slice_bytes(n)))],
                  additional=[opt_record(65535)])
    msg.sync_counts()
    return msg


class Miss:
    """Cache miss sentinel (distinct from None-able plan payloads)."""

    def __repr__(self):
        return "Miss"


MISS = Miss()


class FragmentCache:
    """Bounded LRU of fragment plans keyed by client and original question.

    get-or-build is atomic per cache (single flight): concurrent first
    queries for one key build one plan.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self._lock = threading.Lock()
        self._entries = OrderedDict()   # key -> (plan, stored_at)

    @staticmethod
    def key(client, qname, qtype, qclass):
        return (client, qname.key(), qtype, qclass)

    def _fresh(self, key, now):
        entry = self._entries.get(key)
        if entry is None:
            return None
        plan, stored = entry
        if now - stored > self.cfg.cache_ttl:
            del self._entries[key]
            return None
        self._entries.move_to_end(key)
        return plan

    def put(self, key, plan, now):
        with self._lock:
            self._entries[key] = (plan, now)
            self._entries.move_to_end(key)
            while len(self._entries) > self.cfg.cache_cap:
                self._entries.popitem(last=False)

    def get_plan(self, key, now):
        with self._lock:
            return self._fresh(key, now)

    def get(self, key, n, now, frag_query):
        """Continuation n for a cached plan, or MISS."""
        with self._lock:
            plan = self._fresh(key, now)
        if plan is None:
            return MISS
        try:
            return build_continuation(plan, n, frag_query)
        except OutOfRange:
            return MISS

    def get_or_build(self, key, now, builder):
        with self._lock:
            plan = self._fresh(key, now)
            if plan is None:
                plan = builder()
                if plan is not None:
                    self._entries[key] = (plan, now)
                    self._entries.move_to_end(key)
                    while len(self._entries) > self.cfg.cache_cap:
                        self._entries.popitem(last=False)
            return plan

    def __len__(self):
        return len(self._entries)
