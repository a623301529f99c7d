"""Signature suites, key generation, RRset signing, and the dual-signature policy.

Two suite classes coexist: pre-quantum (real ECDSA-P256/SHA-256 and
RSA-2048/SHA-256 via `cryptography`) and post-quantum (FALCON512,
DILITHIUM2, SPHINCS+-SHA256-128S).  The post-quantum backends here are
SHAKE-256 mocks: byte-length- and determinism-faithful so the protocol
mechanics are testable without external PQ libraries, and explicitly NOT
cryptographically secure.  Real backends plug in behind the same interface.

Every suite has fixed signature and public-key lengths; both endpoints use
this shared size table to forecast fragment counts.
"""

import base64
import hashlib
import struct

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature, encode_dss_signature)

from . import codec
from .codec import (DnskeyData, Name, Record, RrsigData, TYPE_DNSKEY,
                    TYPE_RRSIG, encode_name_uncompressed)

PRE_QUANTUM = "pre-quantum"
POST_QUANTUM = "post-quantum"

KSK = "KSK"
ZSK = "ZSK"

DEFAULT_INCEPTION_OFFSET = 3600          # inception = now - 1h
DEFAULT_LIFETIME = 30 * 24 * 3600        # expiration = now + 30 days


class CryptoError(Exception):
    pass


class UnknownAlgorithm(CryptoError):
    pass


class TooShort(CryptoError):
    pass


class EmptyRrset(CryptoError):
    pass


class MixedRrset(CryptoError):
    pass


class RoleViolation(CryptoError):
    pass


class MissingClass(CryptoError):
    def __init__(self, klass):
        super().__init__("no %s signature present" % klass)
        self.klass = klass


class NoValidSignature(CryptoError):
    def __init__(self, klass):
        super().__init__("no valid %s signature" % klass)
        self.klass = klass


def _xof(data, n):
    return hashlib.shake_256(data).digest(n)


class MockPqBackend:
    """Deterministic stand-in sized like the real algorithm.

    public = SHAKE256("pub" || seed); signature = SHAKE256(public || message).
    Verification recomputes.  No security claim whatsoever.
    """

    def __init__(self, sig_len, pubkey_len):
        self.sig_len = sig_len
        self.pubkey_len = pubkey_len

    def keygen(self, seed):
        public = _xof(b"pub:" + seed, self.pubkey_len)
        return seed, public

    def sign(self, secret, message):
        public = _xof(b"pub:" + secret, self.pubkey_len)
        return _xof(public + message, self.sig_len)

    def verify(self, public, message, signature):
        return signature == _xof(public + message, self.sig_len)


class EcdsaP256Backend:
    """ECDSA P-256 / SHA-256; 64-byte r||s signatures, 64-byte x||y keys."""

    sig_len = 64
    pubkey_len = 64
    _order = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

    def keygen(self, seed):
        scalar = int.from_bytes(_xof(b"ecdsa:" + seed, 40), "big")
        scalar = scalar % (self._order - 1) + 1
        key = ec.derive_private_key(scalar, ec.SECP256R1())
        pub = key.public_key().public_numbers()
        public = pub.x.to_bytes(32, "big") + pub.y.to_bytes(32, "big")
        return scalar.to_bytes(32, "big"), public

    def _private(self, secret):
        return ec.derive_private_key(int.from_bytes(secret, "big"),
                                     ec.SECP256R1())

    def sign(self, secret, message):
        try:
            der = self._private(secret).sign(
                message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
        except TypeError:  # older cryptography without RFC 6979 support
            der = self._private(secret).sign(message,
                                             ec.ECDSA(hashes.SHA256()))
        r, s = decode_dss_signature(der)
        return r.to_bytes(32, "big") + s.to_bytes(32, "big")

    def verify(self, public, message, signature):
        if len(signature) != 64 or len(public) != 64:
            return False
        x = int.from_bytes(public[:32], "big")
        y = int.from_bytes(public[32:], "big")
        r = int.from_bytes(signature[:32], "big")
        s = int.from_bytes(signature[32:], "big")
        try:
            pub = ec.EllipticCurvePublicNumbers(x, y, ec.SECP256R1()).public_key()
            pub.verify(encode_dss_signature(r, s), message,
                       ec.ECDSA(hashes.SHA256()))
            return True
        except (InvalidSignature, ValueError):
            return False


class Rsa2048Backend:
    """RSA-2048 / SHA-256, PKCS#1 v1.5; RFC 3110 public key framing.

    Key generation is deterministic from the seed: the two 1024-bit primes
    are the next primes above SHAKE-256 stream values (top two bits forced
    so the modulus is exactly 2048 bits / 256 bytes).
    """

    sig_len = 256
    pubkey_len = 260          # 1-byte exponent length + e=65537 + modulus
    _e = 65537

    def __init__(self):
        self._private_cache = {}

    def keygen(self, seed):
        import gmpy2
        stream = _xof(b"rsa:" + seed, 256)
        p = self._derive_prime(stream[:128])
        q = self._derive_prime(stream[128:])
        if p == q:
            q = self._derive_prime(stream[128:] + b"q")
        if p < q:
            p, q = q, p
        n = p * q
        d = int(gmpy2.invert(self._e, (p - 1) * (q - 1)))
        secret = b"".join(v.to_bytes(128, "big") for v in (p, q))
        modulus = n.to_bytes(256, "big")
        public = bytes([3]) + self._e.to_bytes(3, "big") + modulus
        return secret, public

    def _derive_prime(self, chunk):
        import gmpy2
        while True:
            cand = int.from_bytes(chunk, "big")
            cand |= (3 << 1022) | 1
            prime = int(gmpy2.next_prime(cand))
            if prime < (1 << 1024) and prime % self._e != 1:
                return prime
            chunk = _xof(chunk, 128)

    def _private(self, secret):
        # Rebuilding the key object dominates signing time; cache it.
        key = self._private_cache.get(secret)
        if key is None:
            p = int.from_bytes(secret[:128], "big")
            q = int.from_bytes(secret[128:], "big")
            n = p * q
            d = rsa.rsa_recover_private_exponent(self._e, p, q)
            pub = rsa.RSAPublicNumbers(self._e, n)
            key = rsa.RSAPrivateNumbers(
                p, q, d,
                rsa.rsa_crt_dmp1(d, p), rsa.rsa_crt_dmq1(d, q),
                rsa.rsa_crt_iqmp(p, q), pub).private_key()
            self._private_cache[secret] = key
        return key

    def sign(self, secret, message):
        return self._private(secret).sign(message, padding.PKCS1v15(),
                                          hashes.SHA256())

    def verify(self, public, message, signature):
        if len(public) < 5 or len(signature) != self.sig_len:
            return False
        elen = public[0]
        e = int.from_bytes(public[1:1 + elen], "big")
        n = int.from_bytes(public[1 + elen:], "big")
        try:
            pub = rsa.RSAPublicNumbers(e, n).public_key()
            pub.verify(signature, message, padding.PKCS1v15(), hashes.SHA256())
            return True
        except (InvalidSignature, ValueError):
            return False


class SignatureSuite:
    __slots__ = ("code", "name", "klass", "sig_len", "pubkey_len", "backend")

    def __init__(self, code, name, klass, sig_len, pubkey_len, backend):
        self.code = code
        self.name = name
        self.klass = klass
        self.sig_len = sig_len
        self.pubkey_len = pubkey_len
        self.backend = backend

    @property
    def is_post_quantum(self):
        return self.klass == POST_QUANTUM

    def __repr__(self):
        return "SignatureSuite(%s code=%d %s)" % (self.name, self.code,
                                                  self.klass)


class SuiteRegistry:
    """Immutable-after-startup table of signature suites, keyed by code."""

    def __init__(self, suites):
        self._by_code = {}
        self._by_name = {}
        for s in suites:
            if s.code in self._by_code:
                raise CryptoError("duplicate suite code %d" % s.code)
            self._by_code[s.code] = s
            self._by_name[s.name.lower()] = s

    def get(self, code):
        suite = self._by_code.get(code)
        if suite is None:
            raise UnknownAlgorithm("algorithm %r not registered" % (code,))
        return suite

    def has(self, code):
        return code in self._by_code

    def by_name(self, name):
        suite = self._by_name.get(name.lower())
        if suite is None:
            raise UnknownAlgorithm("algorithm %r not registered" % name)
        return suite

    def klass_of(self, code):
        return self.get(code).klass

    def all(self):
        return list(self._by_code.values())


ECDSAP256SHA256 = 13
RSASHA256 = 8
FALCON512 = 240
DILITHIUM2 = 241
SPHINCSSHA256128S = 242


def default_registry():
    return SuiteRegistry([
        SignatureSuite(RSASHA256, "rsasha256", PRE_QUANTUM, 256, 260,
                       Rsa2048Backend()),
        SignatureSuite(ECDSAP256SHA256, "ecdsap256", PRE_QUANTUM, 64, 64,
                       EcdsaP256Backend()),
        SignatureSuite(FALCON512, "falcon512", POST_QUANTUM, 690, 897,
                       MockPqBackend(690, 897)),
        SignatureSuite(DILITHIUM2, "dilithium2", POST_QUANTUM, 2420, 1312,
                       MockPqBackend(2420, 1312)),
        SignatureSuite(SPHINCSSHA256128S, "sphincs-sha256-128s", POST_QUANTUM,
                       7856, 32, MockPqBackend(7856, 32)),
    ])


REGISTRY = default_registry()


class KeyPair:
    __slots__ = ("suite_code", "role", "secret", "public", "key_tag")

    def __init__(self, suite_code, role, secret, public, key_tag):
        self.suite_code = suite_code
        self.role = role
        self.secret = secret
        self.public = public
        self.key_tag = key_tag

    @property
    def flags(self):
        return DnskeyData.FLAG_KSK if self.role == KSK else DnskeyData.FLAG_ZSK

    def dnskey_rdata(self):
        return DnskeyData(self.flags, 3, self.suite_code, self.public)

    def dnskey_record(self, owner, ttl):
        return Record(owner, TYPE_DNSKEY, codec.CLASS_IN, ttl,
                      self.dnskey_rdata())

    def __eq__(self, other):
        return (isinstance(other, KeyPair) and
                all(getattr(self, s) == getattr(other, s) for s in self.__slots__))

    def __repr__(self):
        return "KeyPair(%s alg=%d tag=%d)" % (self.role, self.suite_code,
                                              self.key_tag)


def key_tag(dnskey_rdata):
    """RFC 4034 Appendix B checksum over DNSKEY RDATA."""
    if len(dnskey_rdata) < 4:
        raise TooShort("DNSKEY rdata of %d bytes" % len(dnskey_rdata))
    ac = 0
    for i, b in enumerate(dnskey_rdata):
        ac += b if i & 1 else b << 8
    ac += (ac >> 16) & 0xFFFF
    return ac & 0xFFFF


_keygen_cache = {}


def generate_keypair(suite_code, role, seed, registry=REGISTRY):
    if role not in (KSK, ZSK):
        raise CryptoError("role must be KSK or ZSK")
    suite = registry.get(suite_code)
    if not seed:
        raise CryptoError("seed must be nonempty")
    cache_key = (id(suite.backend), role, bytes(seed))
    cached = _keygen_cache.get(cache_key)
    if cached is not None:
        return cached
    secret, public = suite.backend.keygen(seed + b"|" + role.encode())
    if len(public) != suite.pubkey_len:
        raise CryptoError("backend produced %d-byte public key, table says %d"
                          % (len(public), suite.pubkey_len))
    flags = DnskeyData.FLAG_KSK if role == KSK else DnskeyData.FLAG_ZSK
    rdata = DnskeyData(flags, 3, suite_code, public).rdata_bytes()
    pair = KeyPair(suite_code, role, secret, public, key_tag(rdata))
    if len(_keygen_cache) < 4096:
        _keygen_cache[cache_key] = pair
    return pair


# ---------------------------------------------------------------------------
# Canonical form and RRset signing (RFC 4034 section 3.1.8.1)

def _canonical_name(name):
    return Name(tuple(l.lower() for l in name.labels))


def _canonical_rdata(rdata):
    """RDATA with embedded names lowercased and uncompressed."""
    if isinstance(rdata, codec.NsRdata):
        return encode_name_uncompressed(_canonical_name(rdata.nsdname))
    if isinstance(rdata, codec.SoaRdata):
        return (encode_name_uncompressed(_canonical_name(rdata.mname)) +
                encode_name_uncompressed(_canonical_name(rdata.rname)) +
                struct.pack("!IIIII", rdata.serial, rdata.refresh,
                            rdata.retry, rdata.expire, rdata.minimum))
    if isinstance(rdata, codec.ARdata):
        return rdata.address
    if isinstance(rdata, codec.DsRdata):
        return (struct.pack("!HBB", rdata.key_tag, rdata.algorithm,
                            rdata.digest_type) + rdata.digest)
    if isinstance(rdata, codec.RrsigData):
        return rdata.prefix_bytes() + rdata.signature
    if isinstance(rdata, codec.DnskeyData):
        return rdata.rdata_bytes()
    if isinstance(rdata, codec.RawRdata):
        return rdata.data
    raise CryptoError("uncanonicalizable rdata %r" % (rdata,))


def canonical_rrset_bytes(rrset, original_ttl):
    """Owner lowercased, uncompressed, records sorted by RDATA byte order."""
    owner = encode_name_uncompressed(_canonical_name(rrset[0].name))
    rtype = rrset[0].rtype
    rclass = rrset[0].rclass
    parts = sorted(_canonical_rdata(r.rdata) for r in rrset)
    out = bytearray()
    for rd in parts:
        out += owner
        out += struct.pack("!HHIH", rtype, rclass, original_ttl, len(rd))
        out += rd
    return bytes(out)


def sort_rrset_canonically(rrset):
    return sorted(rrset, key=lambda r: _canonical_rdata(r.rdata))


def _check_rrset(rrset):
    if not rrset:
        raise EmptyRrset("cannot sign an empty RRset")
    first = rrset[0]
    for r in rrset[1:]:
        if (r.name != first.name or r.rtype != first.rtype or
                r.rclass != first.rclass or r.ttl != first.ttl):
            raise MixedRrset("records disagree on (name, type, class, ttl)")


def sign_rrset(rrset, key, inception, expiration, signer=None,
               registry=REGISTRY):
    """Produce the RRSIG record for an RRset.

    The signature covers RRSIG-RDATA-minus-signature concatenated with the
    canonically ordered, canonically encoded RRset.  KSKs only ever sign
    DNSKEY RRsets.  `signer` defaults to the owner name; zone signing passes
    the zone apex.
    """
    _check_rrset(rrset)
    suite = registry.get(key.suite_code)
    first = rrset[0]
    if key.role == KSK and first.rtype != TYPE_DNSKEY:
        raise RoleViolation("KSK may only sign DNSKEY RRsets")
    if signer is None:
        signer = first.name
    rd = RrsigData(
        type_covered=first.rtype, algorithm=key.suite_code,
        labels=len(first.name.labels), original_ttl=first.ttl,
        expiration=expiration, inception=inception,
        key_tag=key.key_tag, signer=_canonical_name(signer),
        signature=b"")
    message = rd.prefix_bytes() + canonical_rrset_bytes(rrset, first.ttl)
    sig = suite.backend.sign(key.secret, message)
    if len(sig) < suite.sig_len:
        sig = sig + b"\x00" * (suite.sig_len - len(sig))   # fixed-size padding
    elif len(sig) > suite.sig_len:
        raise CryptoError("signature exceeds table size for %s" % suite.name)
    rd.signature = sig
    return Record(first.name, TYPE_RRSIG, first.rclass, first.ttl, rd)


def verify_rrsig(sig_record, rrset, pubkey, now, registry=REGISTRY):
    """True iff the backend accepts and `now` is inside the validity window."""
    if sig_record.rtype != TYPE_RRSIG:
        raise CryptoError("not an RRSIG record")
    rd = sig_record.rdata
    suite = registry.get(rd.algorithm)
    if not rrset:
        return False
    if not rd.inception <= now <= rd.expiration:
        return False
    message = (RrsigData(rd.type_covered, rd.algorithm, rd.labels,
                         rd.original_ttl, rd.expiration, rd.inception,
                         rd.key_tag, _canonical_name(rd.signer),
                         b"").prefix_bytes() +
               canonical_rrset_bytes(rrset, rd.original_ttl))
    return suite.backend.verify(pubkey, message, rd.signature)


class VerifiedDual:
    __slots__ = ("preq", "postq")

    def __init__(self, preq, postq):
        self.preq = preq
        self.postq = postq

    def __repr__(self):
        return "VerifiedDual(pre_tag=%d post_tag=%d)" % (self.preq, self.postq)


def verify_classes(rrsigs, rrset, dnskeys, now, classes, registry=REGISTRY):
    """One valid RRSIG per required class, each against a supplied DNSKEY.

    Returns {class: witnessing key tag}.  Conjunctive: every class in
    `classes` must produce a witness.
    """
    if not rrsigs:
        raise EmptyRrset("no RRSIGs supplied")
    witnesses = {}
    present = set()
    for sig in rrsigs:
        rd = sig.rdata
        if not registry.has(rd.algorithm):
            continue
        klass = registry.klass_of(rd.algorithm)
        present.add(klass)
        if klass in witnesses or klass not in classes:
            continue
        for keyrec in dnskeys:
            kd = keyrec.rdata
            if kd.algorithm != rd.algorithm:
                continue
            if key_tag(kd.rdata_bytes()) != rd.key_tag:
                continue
            if verify_rrsig(sig, rrset, kd.public_key, now, registry):
                witnesses[klass] = rd.key_tag
                break
    for klass in classes:
        if klass not in witnesses:
            if klass not in present:
                raise MissingClass(klass)
            raise NoValidSignature(klass)
    return witnesses


def verify_dual(rrsigs, rrset, dnskeys, now, registry=REGISTRY):
    """Conjunctive policy: one valid pre-quantum AND one valid post-quantum
    RRSIG, each against a supplied DNSKEY.  Returns the witnessing key tags.
    Never degrades to OR.
    """
    witnesses = verify_classes(rrsigs, rrset, dnskeys, now,
                               (PRE_QUANTUM, POST_QUANTUM), registry)
    return VerifiedDual(witnesses[PRE_QUANTUM], witnesses[POST_QUANTUM])


# ---------------------------------------------------------------------------
# Key files: text headers plus base64 secret/public sections.

def save_keypair(key, path):
    with open(path, "w") as f:
        f.write("Algorithm: %d\n" % key.suite_code)
        f.write("Role: %s\n" % key.role)
        f.write("KeyTag: %d\n" % key.key_tag)
        f.write("PublicKey: %s\n" % base64.b64encode(key.public).decode())
        f.write("SecretKey: %s\n" % base64.b64encode(key.secret).decode())


def load_keypair(path):
    fields = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            k, _, v = line.partition(":")
            fields[k.strip().lower()] = v.strip()
    try:
        return KeyPair(int(fields["algorithm"]), fields["role"].upper(),
                       base64.b64decode(fields["secretkey"]),
                       base64.b64decode(fields["publickey"]),
                       int(fields["keytag"]))
    except KeyError as missing:
        raise CryptoError("key file %s lacks %s" % (path, missing))
