"""Resolver-side reassembly: forecast, parallel fetch state, reconstruction.

Fragment 1 carries no explicit length field.  The resolver rebuilds a
skeleton of the original response from what fragment 1 shows: every
pre-quantum record is there, and each omitted post-quantum record mirrors a
pre-quantum partner (or, for a single-signed zone, the per-RRset signature
structure), with all lengths fixed by the suite size table.  Running the
server's own planner over that skeleton yields the fragment count, stream
length, and slice boundaries; there is no second formula to drift.
"""

from . import codec, crypto, fragment
from .codec import (Message, Record, TYPE_DNSKEY, TYPE_OPT, TYPE_RRSIG,
                    DnskeyData, RrsigData)


class ReassemblyError(Exception):
    pass


class NotTruncated(ReassemblyError):
    pass


class UnknownZValue(ReassemblyError):
    pass


class InconsistentFirstFragment(ReassemblyError):
    pass


class UnexpectedFragment(ReassemblyError):
    pass


class LengthMismatch(ReassemblyError):
    pass


class Incomplete(ReassemblyError):
    pass


class StreamCorrupt(ReassemblyError):
    pass


class OrderConflict(ReassemblyError):
    pass


class FragmentForecast:
    __slots__ = ("n_fragments", "stream_len", "postq_code", "slice_lengths",
                 "split_record", "omitted", "skeleton", "plan")

    def __init__(self, n_fragments, stream_len, postq_code, slice_lengths,
                 split_record, omitted, skeleton, plan):
        self.n_fragments = n_fragments
        self.stream_len = stream_len
        self.postq_code = postq_code
        self.slice_lengths = slice_lengths
        self.split_record = split_record     # (section, index) in fragment 1
        self.omitted = omitted               # [(section, rtype, owner, wire len)]
        self.skeleton = skeleton
        self.plan = plan

    def __repr__(self):
        return ("FragmentForecast(n=%d stream=%dB postq=%d omitted=%d)"
                % (self.n_fragments, self.stream_len, self.postq_code,
                   len(self.omitted)))


def _is_partial(rec, registry):
    klass = fragment.record_signature_class(rec, registry)
    if klass != crypto.POST_QUANTUM:
        return False
    suite = registry.get(rec.rdata.algorithm)
    if rec.rtype == TYPE_RRSIG:
        return len(rec.rdata.signature) < suite.sig_len
    return len(rec.rdata.public_key) < suite.pubkey_len


def _pad_tail(rec, registry):
    """Partial record padded to its full table length with zero bytes."""
    suite = registry.get(rec.rdata.algorithm)
    out = rec.copy()
    if rec.rtype == TYPE_RRSIG:
        rd = rec.rdata
        pad = suite.sig_len - len(rd.signature)
        out.rdata = RrsigData(rd.type_covered, rd.algorithm, rd.labels,
                              rd.original_ttl, rd.expiration, rd.inception,
                              rd.key_tag, rd.signer, rd.signature + b"\0" * pad)
    else:
        rd = rec.rdata
        pad = suite.pubkey_len - len(rd.public_key)
        out.rdata = DnskeyData(rd.flags, rd.protocol, rd.algorithm,
                               rd.public_key + b"\0" * pad)
    return out


def _deduce_postq(first, partial, registry):
    if partial is not None:
        return partial.rdata.algorithm
    try:
        algo = codec.z_signal_algo(first.header)
    except codec.UnknownAlgorithm as exc:
        raise UnknownZValue(str(exc))
    if algo is not None:
        return algo
    for rec in first.all_records():
        if fragment.record_signature_class(rec, registry) == crypto.POST_QUANTUM:
            return rec.rdata.algorithm
    raise InconsistentFirstFragment(
        "truncated response shows no post-quantum algorithm")


def _expected_sig_count(rtype):
    # Composition contract: the DNSKEY RRset carries KSK and ZSK signatures
    # per class, every other RRset exactly one per class.
    return 2 if rtype == TYPE_DNSKEY else 1


def build_skeleton(first, registry, postq_code):
    """Predicted original message: fragment-1 records restored, plus a
    synthesized stand-in (correct to the byte length) for every omitted
    post-quantum record.
    """
    suite = registry.get(postq_code)
    skeleton = Message(first.header.copy(), list(first.questions))
    skeleton.header.tc = 0
    skeleton.header.z = 0

    partials = []
    sections = ([], [], [])
    for si, section in enumerate(first.sections()):
        for rec in section:
            if rec.rtype == TYPE_OPT:
                sections[si].append(rec.copy())
                continue
            restored = rec.copy()
            _, restored.ttl = fragment.decode_position(rec.ttl)
            if _is_partial(rec, registry):
                partials.append(rec)
                restored = _pad_tail(restored, registry)
            sections[si].append(restored)
    if len(partials) > 1:
        raise InconsistentFirstFragment("%d partial records" % len(partials))

    pre_present = any(
        fragment.record_signature_class(r, registry) == crypto.PRE_QUANTUM
        for r in first.all_records())
    # Referrals (empty answer) leave the delegation NS and glue unsigned.
    is_referral = not any(r.rtype != TYPE_OPT for r in sections[0])

    any_rrsig = next((r for sec in sections for r in sec
                      if r.rtype == TYPE_RRSIG), None)

    omitted = []
    for si, section in enumerate(sections):
        # Group this section's records into RRsets and signature sets.
        data_sets = {}
        sig_count = {}
        key_roles = {crypto.POST_QUANTUM: set(), crypto.PRE_QUANTUM: set()}
        for rec in section:
            if rec.rtype == TYPE_OPT:
                continue
            if rec.rtype == TYPE_RRSIG:
                k = (rec.name.key(), rec.rdata.type_covered)
                klass = registry.klass_of(rec.rdata.algorithm) \
                    if registry.has(rec.rdata.algorithm) else None
                sig_count.setdefault(k, {}).setdefault(klass, []).append(rec)
            else:
                data_sets.setdefault((rec.name.key(), rec.rtype), []).append(rec)
                if rec.rtype == TYPE_DNSKEY and registry.has(rec.rdata.algorithm):
                    key_roles[registry.klass_of(rec.rdata.algorithm)].add(
                        rec.rdata.flags)

        additions = []
        # Post-quantum DNSKEYs mirror the pre-quantum key roles (dual) or
        # the standard KSK/ZSK pair (single-signed zone).
        dnskey_sets = [(k, v) for k, v in data_sets.items()
                       if k[1] == TYPE_DNSKEY]
        for (owner_key, _), rrset in dnskey_sets:
            want_roles = (key_roles[crypto.PRE_QUANTUM] if pre_present
                          else {DnskeyData.FLAG_ZSK, DnskeyData.FLAG_KSK})
            have_roles = key_roles[crypto.POST_QUANTUM]
            owner = rrset[0].name
            for flags in sorted(want_roles - have_roles):
                rd = DnskeyData(flags, 3, postq_code, b"\0" * suite.pubkey_len)
                additions.append(Record(owner, TYPE_DNSKEY, rrset[0].rclass,
                                        rrset[0].ttl, rd))
        # Post-quantum RRSIGs: omitted ones mirror the pre-quantum structure
        # (one per pre-quantum RRSIG lacking a post-quantum partner); for a
        # single-signed zone the per-RRset composition counts apply instead.
        for (owner_key, rtype), rrset in data_sets.items():
            if rtype == TYPE_OPT:
                continue
            sigs = sig_count.get((owner_key, rtype), {})
            have = len(sigs.get(crypto.POST_QUANTUM, []))
            if pre_present:
                want = len(sigs.get(crypto.PRE_QUANTUM, []))
            elif is_referral and rtype in (codec.TYPE_NS, codec.TYPE_A):
                want = have
            else:
                want = _expected_sig_count(rtype)
            template = (sigs.get(crypto.PRE_QUANTUM) or [None])[0] or any_rrsig
            owner = rrset[0].name
            for _ in range(max(0, want - have)):
                if template is not None:
                    t = template.rdata
                    signer, labels = t.signer, t.labels
                else:
                    signer, labels = owner, len(owner.labels)
                rd = RrsigData(rtype, postq_code, labels, rrset[0].ttl,
                               0, 0, 0, signer, b"\0" * suite.sig_len)
                additions.append(Record(owner, TYPE_RRSIG, rrset[0].rclass,
                                        rrset[0].ttl, rd))

        # OPT stays terminal in the additional section.
        opt_tail = [r for r in section if r.rtype == TYPE_OPT]
        body = [r for r in section if r.rtype != TYPE_OPT]
        sections[si][:] = body + additions + opt_tail
        for rec in additions:
            omitted.append((si, rec.rtype, rec.name))

    skeleton.answer, skeleton.authority, skeleton.additional = sections
    skeleton.sync_counts()
    if not omitted and not partials:
        raise InconsistentFirstFragment(
            "truncated response is missing nothing")
    return skeleton, omitted, (partials[0] if partials else None)


def forecast(first, registry=crypto.REGISTRY, cfg=None):
    """Reconstruct the server's plan from fragment 1 alone."""
    if cfg is None:
        cfg = fragment.FragmentConfig()
    if not first.header.tc:
        raise NotTruncated("first fragment lacks TC")
    partial = None
    for rec in first.all_records():
        if _is_partial(rec, registry):
            partial = rec
            break
    postq = _deduce_postq(first, partial, registry)
    skeleton, omitted, _ = build_skeleton(first, registry, postq)
    try:
        plan = fragment.plan_fragments(skeleton, cfg, registry)
    except fragment.FragmentError as exc:
        raise InconsistentFirstFragment("skeleton does not fragment: %s" % exc)
    if plan is None:
        raise InconsistentFirstFragment(
            "skeleton fits the threshold; nothing to fetch")

    split_record = None
    for si, section in enumerate(first.sections()):
        for ri, rec in enumerate(section):
            if _is_partial(rec, registry):
                split_record = (si, ri)
    omitted_desc = []
    for (si, rtype, owner), rec_len in zip(omitted, _stream_record_lengths(plan)):
        omitted_desc.append((si, rtype, owner, rec_len))
    return FragmentForecast(
        n_fragments=plan.n_fragments, stream_len=len(plan.stream),
        postq_code=postq,
        slice_lengths=[end - start for start, end in plan.slices],
        split_record=split_record, omitted=omitted_desc,
        skeleton=skeleton, plan=plan)


def _stream_record_lengths(plan):
    lengths = []
    pos = plan.split_missing
    buf = plan.stream
    while pos < len(buf):
        start = pos
        # owner: pointer or spelled name
        while True:
            b = buf[pos]
            if b & 0xC0 == 0xC0:
                pos += 2
                break
            pos += 1
            if b == 0:
                break
            pos += b
        pos += 8
        rdlen = int.from_bytes(buf[pos:pos + 2], "big")
        pos += 2 + rdlen
        lengths.append(pos - start)
    return lengths


def fragment_queries(fc, base_qname, qtype, qclass=codec.CLASS_IN,
                     payload_size=1232, make_id=None):
    """N-1 well-formed queries `?2?base` .. `?N?base` with distinct ids."""
    import random
    ids = set()
    queries = []
    for n in range(2, fc.n_fragments + 1):
        while True:
            mid = make_id() if make_id else random.randrange(1, 0x10000)
            if mid not in ids:
                ids.add(mid)
                break
        queries.append(codec.make_query(fragment.fragment_qname(n, base_qname),
                                        qtype, mid, payload_size=payload_size))
    return queries


class ReassemblyState:
    """Accumulates continuation slices; complete once all of 2..N arrived."""

    def __init__(self, first, first_wire, fc):
        self.first = first
        self.first_wire = first_wire
        self.forecast = fc
        self.base = first.question.qname
        self.received = {}

    @property
    def missing(self):
        return [n for n in range(2, self.forecast.n_fragments + 1)
                if n not in self.received]

    @property
    def complete(self):
        return not self.missing

    def accept(self, response):
        """Store one continuation; duplicates are idempotent."""
        q = response.question
        if q is None:
            raise UnexpectedFragment("response carries no question")
        parsed = fragment.parse_fragment_qname(q.qname)
        if parsed is None:
            raise UnexpectedFragment("qname %r is not a fragment name"
                                     % q.qname.to_text())
        n, base = parsed
        if base != self.base:
            raise UnexpectedFragment("fragment for %s, expected %s"
                                     % (base.to_text(), self.base.to_text()))
        if not 2 <= n <= self.forecast.n_fragments:
            raise UnexpectedFragment("fragment %d of %d"
                                     % (n, self.forecast.n_fragments))
        if not response.answer or not isinstance(response.answer[0].rdata,
                                                 codec.RawRdata):
            raise UnexpectedFragment("fragment %d carries no slice" % n)
        blob = response.answer[0].rdata.data
        want = self.forecast.slice_lengths[n - 2]
        if len(blob) != want:
            raise LengthMismatch("fragment %d is %d bytes, forecast %d"
                                 % (n, len(blob), want))
        if n in self.received:
            return self
        self.received[n] = blob
        return self


def accept_fragment(state, response):
    return state.accept(response)


def reassemble(state, registry=crypto.REGISTRY):
    """Rebuild the original message byte-exactly.

    Slices concatenate into the stream; the stream completes the split
    record and decodes (against fragment 1, which its owner pointers
    reference) into the omitted records; sections are re-ordered by the
    index carried in each TTL's top byte; TC and z are cleared.
    """
    if not state.complete:
        raise Incomplete("missing fragments %r" % state.missing)
    fc = state.forecast
    stream = b"".join(state.received[n]
                      for n in range(2, fc.n_fragments + 1))
    if len(stream) != fc.stream_len:
        raise LengthMismatch("stream is %d bytes, forecast %d"
                             % (len(stream), fc.stream_len))

    split_missing = fc.plan.split_missing
    tail = stream[:split_missing]
    try:
        records, end = codec.decode_records_at(
            state.first_wire + stream, len(state.first_wire) + split_missing,
            len(fc.omitted))
    except codec.CodecError as exc:
        raise StreamCorrupt("stream decode failed: %s" % exc)
    if end != len(state.first_wire) + len(stream):
        raise StreamCorrupt("%d trailing stream bytes"
                            % (len(state.first_wire) + len(stream) - end))

    # Assign decoded records to sections in forecast order.
    by_section = ([], [], [])
    for (si, rtype, owner, _), rec in zip(fc.omitted, records):
        if rec.rtype != rtype or rec.name != owner:
            raise StreamCorrupt("stream record %r does not match forecast "
                                "(%s %s)" % (rec, owner.to_text(),
                                             codec.TYPE_NAMES.get(rtype)))
        by_section[si].append(rec)

    result = Message(state.first.header.copy(), list(state.first.questions))
    result.header.tc = 0
    result.header.z = 0
    out_sections = result.sections()
    for si, section in enumerate(state.first.sections()):
        indexed = []
        opt_tail = []
        for ri, rec in enumerate(section):
            if rec.rtype == TYPE_OPT:
                opt_tail.append(rec.copy())
                continue
            restored = rec.copy()
            if fc.split_record == (si, ri):
                restored = _complete_split(restored, tail, registry)
            idx, ttl = fragment.decode_position(restored.ttl)
            restored.ttl = ttl
            indexed.append((idx, restored))
        for rec in by_section[si]:
            restored = rec.copy()
            idx, ttl = fragment.decode_position(restored.ttl)
            restored.ttl = ttl
            indexed.append((idx, restored))
        seen = set()
        for idx, _ in indexed:
            if idx in seen:
                raise OrderConflict("duplicate section index %d" % idx)
            seen.add(idx)
        indexed.sort(key=lambda pair: pair[0])
        out_sections[si][:] = [rec for _, rec in indexed] + opt_tail
    result.sync_counts()
    return result


def _complete_split(rec, tail, registry):
    suite = registry.get(rec.rdata.algorithm)
    out = rec.copy()
    if rec.rtype == TYPE_RRSIG:
        rd = rec.rdata
        sig = rd.signature + tail
        if len(sig) != suite.sig_len:
            raise StreamCorrupt("completed signature is %d bytes" % len(sig))
        out.rdata = RrsigData(rd.type_covered, rd.algorithm, rd.labels,
                              rd.original_ttl, rd.expiration, rd.inception,
                              rd.key_tag, rd.signer, sig)
    else:
        rd = rec.rdata
        key = rd.public_key + tail
        if len(key) != suite.pubkey_len:
            raise StreamCorrupt("completed key is %d bytes" % len(key))
        out.rdata = DnskeyData(rd.flags, rd.protocol, rd.algorithm, key)
    return out
