"""Command-line front end: keygen, signzone, sizer, serve, resolve, bench.

One binary, subcommand style; the workflow chains
keygen -> signzone -> serve -> resolve -> bench.  Exit codes: 0 success,
1 operational failure, 2 usage error.  Set DUALDNS_LOG=debug|info|... for
logging verbosity.
"""

import argparse
import json
import logging
import os
import sys
import time

from . import codec, crypto, fragment, resolver as resolver_mod, servers, \
    simnet, zone


def _setup_logging():
    level = os.environ.get("DUALDNS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _suite(registry, name):
    if name is None:
        return None
    return registry.by_name(name).code


def _parse_addr(text, default_port=53):
    host, _, port = text.rpartition(":")
    if not host:
        return text, default_port
    return host, int(port)


def _parse_rate(text):
    text = text.strip().lower()
    for suffix, mult in (("gbps", 1e9), ("mbps", 1e6), ("kbps", 1e3),
                         ("bps", 1.0)):
        if text.endswith(suffix):
            return float(text[:-len(suffix)]) * mult
    return float(text)


def _parse_delay(text):
    text = text.strip().lower()
    if text.endswith("ms"):
        return float(text[:-2]) / 1e3
    if text.endswith("us"):
        return float(text[:-2]) / 1e6
    if text.endswith("s"):
        return float(text[:-1])
    return float(text)


def cmd_keygen(args, registry):
    code = _suite(registry, args.algo)
    seed = bytes.fromhex(args.seed) if args.seed else os.urandom(32)
    key = crypto.generate_keypair(code, args.role.upper(), seed, registry)
    path = args.out or "K%s-%d-%d.key" % (args.algo, code, key.key_tag)
    crypto.save_keypair(key, path)
    if args.json:
        print(json.dumps({"file": path, "algorithm": code,
                          "role": key.role, "key_tag": key.key_tag}))
    else:
        print("wrote %s (algorithm %d, %s, tag %d)"
              % (path, code, key.role, key.key_tag))
    return 0


def _load_keys_dir(path):
    keys = []
    for entry in sorted(os.listdir(path)):
        full = os.path.join(path, entry)
        if os.path.isfile(full) and entry.endswith(".key"):
            keys.append(crypto.load_keypair(full))
    return keys


def _sign_from_args(args, registry):
    with open(args.zone) as f:
        parsed = zone.parse_zone_file(f.read())
    now = int(args.now if args.now else time.time())
    if args.pre is None and args.post is None:
        return parsed, now          # unsigned, served as-is
    pre = _suite(registry, args.pre)
    post = _suite(registry, args.post)
    seed = bytes.fromhex(args.seed) if getattr(args, "seed", None) else None
    return zone.sign_zone(parsed, pre, post, now, seed=seed,
                          registry=registry), now


def cmd_signzone(args, registry):
    signed, _ = _sign_from_args(args, registry)
    text = zone.print_zone(signed)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    if args.ds_out:
        with open(args.ds_out, "w") as f:
            for rec in zone.make_ds(signed):
                rd = rec.rdata
                f.write("%s %d IN DS %d %d %d %s\n" % (
                    rec.name.to_text(), rec.ttl, rd.key_tag, rd.algorithm,
                    rd.digest_type, rd.digest.hex()))
    if args.anchor_out:
        with open(args.anchor_out, "w") as f:
            f.write(zone.TrustAnchor.for_zone(signed).to_text())
    return 0


def cmd_sizer(args, registry):
    signed, _ = _sign_from_args(args, registry)
    cfg = fragment.FragmentConfig(threshold=args.threshold)
    engine = servers.NameServer(
        servers.ServerConfig(servers.ROLE_AUTH, [signed], fragment_cfg=cfg),
        registry)
    qtype = codec.TYPE_CODES[args.qtype.upper()]
    if args.name:
        qname = codec.Name.from_text(args.name)
    elif qtype == codec.TYPE_DNSKEY:
        qname = signed.origin
    else:
        first = next(r for r in signed.records if r.rtype == qtype)
        qname = first.name
    query = codec.make_query(qname, qtype, 0x1234,
                             payload_size=cfg.threshold)
    response = engine.build_response(query)
    wire, spans, _ = codec.encode_message_ex(response, compress=True)
    section_names = ("answer", "authority", "additional")
    section_sizes = {s: 0 for s in section_names}
    pre_portion = 12 + (qname.wire_len + 4)
    for si, ri, start, end in spans:
        section_sizes[section_names[si]] += end - start
        rec = response.sections()[si][ri]
        klass = fragment.record_signature_class(rec, registry)
        if klass != crypto.POST_QUANTUM:
            pre_portion += end - start
    plan = fragment.plan_fragments(response, cfg, registry)
    leftover = max(0, cfg.threshold - pre_portion)
    report = {
        "qname": qname.to_text(), "qtype": args.qtype.upper(),
        "question_bytes": qname.wire_len + 4, "header_bytes": 12,
        "sections": section_sizes, "total_bytes": len(wire),
        "threshold": cfg.threshold,
        "pre_quantum_first_fragment_bytes": min(pre_portion, cfg.threshold),
        "first_fragment_leftover": leftover,
        "fragments": 1 if plan is None else plan.n_fragments,
    }
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print("response %s %s" % (report["qname"], report["qtype"]))
        print("  header           %6d B" % report["header_bytes"])
        print("  question         %6d B" % report["question_bytes"])
        for s in section_names:
            print("  %-16s %6d B" % (s, section_sizes[s]))
        print("  total            %6d B" % report["total_bytes"])
        print("  pre-quantum part %6d B (first-fragment budget %d B)"
              % (report["pre_quantum_first_fragment_bytes"], cfg.threshold))
        print("  leftover         %6d B" % leftover)
        print("  fragments        %6d" % report["fragments"])
    return 0


def cmd_serve(args, registry):
    with open(args.zone) as f:
        parsed = zone.parse_zone_file(f.read())
    keys = _load_keys_dir(args.keys) if args.keys else []
    now = int(time.time())
    if parsed.signed:
        signed = parsed
    else:
        pre = _suite(registry, args.pre)
        post = _suite(registry, args.post)
        signed = zone.sign_zone(parsed, pre, post, now, keys=keys,
                                registry=registry)
    cfg = fragment.FragmentConfig(threshold=args.threshold)
    config = servers.ServerConfig(args.role, [signed],
                                  bind=_parse_addr(args.listen),
                                  fragment_cfg=cfg)
    server = servers.UdpNameServer(config, registry)
    server.start()
    print("serving %s on %s:%d (role %s)"
          % (signed.origin.to_text(), server.address[0], server.address[1],
             args.role))
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_resolve(args, registry):
    with open(args.anchor) as f:
        anchor = zone.TrustAnchor.from_text(f.read())
    addr_map = {}
    for pair in args.map or []:
        ip, _, target = pair.partition("=")
        addr_map[ip] = _parse_addr(target)
    cfg = fragment.FragmentConfig(threshold=args.threshold)
    config = resolver_mod.ResolverConfig(
        _parse_addr(args.server), anchor, fragment_cfg=cfg,
        addr_map=addr_map)
    res = resolver_mod.Resolver(config, registry=registry)
    qtype = codec.TYPE_CODES[args.qtype.upper()]
    try:
        result = res.resolve(args.name, qtype)
    except resolver_mod.NxDomain:
        print("NXDOMAIN %s" % args.name)
        return 1
    except resolver_mod.ResolveError as exc:
        print("SERVFAIL %s: %s" % (args.name, exc), file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps({
            "name": args.name, "qtype": args.qtype.upper(),
            "answers": [codec.TYPE_NAMES.get(r.rtype, r.rtype) == "A" and
                        r.rdata.to_text() or repr(r.rdata)
                        for r in result.rrset],
            "secure": result.secure, "fragments": result.fragments,
            "elapsed_ms": result.elapsed * 1e3}))
    else:
        for rec in result.rrset:
            print("%s %d IN %s %s" % (
                rec.name.to_text(), rec.ttl,
                codec.TYPE_NAMES.get(rec.rtype, rec.rtype),
                rec.rdata.to_text() if isinstance(rec.rdata, codec.ARdata)
                else repr(rec.rdata)))
        print("secure: %s  fragments: %d  elapsed: %.1f ms"
              % (result.secure, result.fragments, result.elapsed * 1e3))
    return 0


def cmd_bench(args, registry):
    if args.combos == "all":
        combos = None
    else:
        combos = [c.strip() for c in args.combos.split(",") if c.strip()]
    link = simnet.LinkModel(one_way_delay=_parse_delay(args.delay),
                            bandwidth=_parse_rate(args.bw))
    results = simnet.run_benchmark(combos=combos, link_model=link,
                                   repetitions=args.reps, seed=args.seed,
                                   registry=registry,
                                   real_sockets=args.real_sockets)
    text = simnet.results_to_csv(results)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    if args.json:
        print(json.dumps([{
            "combo": r.combo, "mean_ms": r.mean * 1e3,
            "fragments_a": r.fragments_a,
            "fragments_dnskey": r.fragments_dnskey,
            "times_ms": [t * 1e3 for t in r.times]} for r in results],
            indent=2))
    else:
        print("%-34s %10s %8s %8s" % ("combo", "mean_ms", "frags_A",
                                      "frags_DK"))
        for r in results:
            print("%-34s %10.2f %8d %8d" % (r.combo, r.mean * 1e3,
                                            r.fragments_a,
                                            r.fragments_dnskey))
        if args.out:
            print("wrote %s" % args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dualdns",
        description="Double-signed DNSSEC stack with application-layer "
                    "fragmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a key pair file")
    p.add_argument("--algo", required=True,
                   help="suite name (e.g. falcon512, ecdsap256)")
    p.add_argument("--role", required=True, choices=["ksk", "zsk"])
    p.add_argument("--seed", help="hex seed for deterministic generation")
    p.add_argument("--out", help="output key file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("signzone", help="sign a zone file with two suites")
    p.add_argument("--zone", required=True)
    p.add_argument("--pre", help="pre-quantum suite name")
    p.add_argument("--post", required=True, help="post-quantum suite name")
    p.add_argument("--seed", help="hex key-generation seed")
    p.add_argument("--now", type=int, help="signing epoch (default: now)")
    p.add_argument("--out", help="signed zone output file (default stdout)")
    p.add_argument("--ds-out", help="write child DS records here")
    p.add_argument("--anchor-out", help="write a trust-anchor file here")
    p.set_defaults(func=cmd_signzone)

    p = sub.add_parser("sizer", help="size report and fragment prediction")
    p.add_argument("--zone", required=True)
    p.add_argument("--pre")
    p.add_argument("--post", help="omit both suites to size the unsigned zone")
    p.add_argument("--seed")
    p.add_argument("--now", type=int)
    p.add_argument("--qtype", default="A", choices=["A", "DNSKEY"])
    p.add_argument("--name", help="query name (default: first record/apex)")
    p.add_argument("--threshold", type=int, default=1232)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_sizer)

    p = sub.add_parser("serve", help="run a root or authoritative server")
    p.add_argument("--role", required=True, choices=[servers.ROLE_ROOT,
                                                     servers.ROLE_AUTH])
    p.add_argument("--zone", required=True,
                   help="zone file (signed, or raw with --pre/--post)")
    p.add_argument("--keys", help="key directory (informational)")
    p.add_argument("--pre")
    p.add_argument("--post")
    p.add_argument("--listen", default="127.0.0.1:5300")
    p.add_argument("--threshold", type=int, default=1232)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("resolve", help="full validating resolution")
    p.add_argument("name")
    p.add_argument("qtype", nargs="?", default="A")
    p.add_argument("--server", required=True, help="root server host:port")
    p.add_argument("--anchor", required=True, help="trust-anchor file")
    p.add_argument("--map", action="append",
                   help="glue mapping ip=host:port (repeatable)")
    p.add_argument("--threshold", type=int, default=1232)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("bench", help="simulated benchmark over combos")
    p.add_argument("--combos", default="all",
                   help="'all' or comma-separated combo labels")
    p.add_argument("--delay", default="10ms")
    p.add_argument("--bw", default="50mbps")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--real-sockets", action="store_true",
                   help="sanity mode: loopback UDP instead of the simulator")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    registry = crypto.REGISTRY
    try:
        return args.func(args, registry)
    except (OSError, ValueError, codec.CodecError, crypto.CryptoError,
            zone.ZoneError, fragment.FragmentError, simnet.SimError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
