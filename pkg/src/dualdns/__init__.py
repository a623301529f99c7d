"""Double-signed DNSSEC over UDP with application-layer fragmentation.

Every RRset carries one classical and one post-quantum signature; responses
larger than the 1232-byte UDP budget are fragmented inside the DNS protocol
itself (truncated first fragment, `?n?name` follow-up queries, TTL-encoded
record positions) and reassembled byte-exactly on a resolver that accepts
answers only when both signature classes verify.
"""

__version__ = "0.1.0"

from . import codec, crypto, fragment, reassembly, resolver, servers, \
    simnet, zone  # noqa: F401
