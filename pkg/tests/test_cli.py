import json

import pytest

from dualdns import cli, crypto, zone
from dualdns.cli import main


@pytest.fixture()
def zone_file(tmp_path):
    path = tmp_path / "zone.txt"
    path.write_text(zone.reference_zone_text())
    return str(path)


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["keygen", "--bogus"])
    assert exc.value.code == 2


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_keygen_writes_key_file(tmp_path, capsys):
    out = tmp_path / "k.key"
    rc = main(["keygen", "--algo", "falcon512", "--role", "ksk",
               "--seed", "aabbcc", "--out", str(out), "--json"])
    assert rc == 0
    info = json.loads(capsys.readouterr().out)
    key = crypto.load_keypair(out)
    assert key.role == "KSK"
    assert key.suite_code == 240
    assert info["key_tag"] == key.key_tag
    assert len(key.public) == 897


def test_keygen_unknown_algorithm_fails(capsys):
    rc = main(["keygen", "--algo", "nosuch", "--role", "zsk"])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_signzone_emits_two_signatures_per_rrset(zone_file, tmp_path):
    out = tmp_path / "signed.txt"
    anchor = tmp_path / "anchor.txt"
    rc = main(["signzone", "--zone", zone_file, "--pre", "ecdsap256",
               "--post", "falcon512", "--now", "1700000000",
               "--out", str(out), "--anchor-out", str(anchor)])
    assert rc == 0
    signed = zone.parse_zone_file(out.read_text())
    assert signed.signed
    sigs = signed.sigs_for(signed.origin, 2)      # NS RRset
    assert sorted(s.rdata.algorithm for s in sigs) == [13, 240]
    ta = zone.TrustAnchor.from_text(anchor.read_text())
    assert len(ta.ds_set) == 2


def test_sizer_reference_values(zone_file, capsys):
    rc = main(["sizer", "--zone", zone_file, "--pre", "rsasha256",
               "--post", "falcon512", "--qtype", "DNSKEY",
               "--now", "1700000000", "--json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert abs(report["total_bytes"] - 4462) <= 446
    assert abs(report["pre_quantum_first_fragment_bytes"] - 1178) <= 118
    assert report["fragments"] == 4


def test_sizer_a_response(zone_file, capsys):
    rc = main(["sizer", "--zone", zone_file, "--pre", "ecdsap256",
               "--post", "falcon512", "--qtype", "A",
               "--name", "test0.socratescrc", "--now", "1700000000",
               "--json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert abs(report["total_bytes"] - 2500) <= 250
    assert report["fragments"] == 3


def test_sizer_matches_planner(zone_file, capsys):
    from dualdns import codec, fragment, simnet
    rc = main(["sizer", "--zone", zone_file, "--pre", "ecdsap256",
               "--post", "dilithium2", "--qtype", "A",
               "--name", "test0.socratescrc", "--now", "1700000000",
               "--json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["fragments"] == simnet.count_fragments(
        crypto.ECDSAP256SHA256, crypto.DILITHIUM2, codec.TYPE_A)


def test_bench_json_subset(capsys, tmp_path):
    out = tmp_path / "results.csv"
    rc = main(["bench", "--combos", "falcon512", "--delay", "10ms",
               "--bw", "50mbps", "--out", str(out), "--json"])
    assert rc == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["combo"] == "falcon512"
    assert rows[0]["fragments_a"] == 2
    assert len(rows[0]["times_ms"]) == 10
    assert out.read_text().startswith("combo,qtype,")


def test_rate_and_delay_parsing():
    assert cli._parse_rate("50mbps") == 50e6
    assert cli._parse_rate("1gbps") == 1e9
    assert cli._parse_delay("10ms") == 0.010
    assert cli._parse_delay("2s") == 2.0


def test_resolve_command_over_udp(capsys):
    from dualdns import crypto as crypto_mod, servers, simnet
    import time
    # signed at wall-clock time: the CLI validates against the real clock
    bed = simnet.build_testbed(crypto_mod.ECDSAP256SHA256,
                               crypto_mod.FALCON512, now=int(time.time()))
    import tempfile, os
    root_cfg = servers.ServerConfig(servers.ROLE_ROOT, [bed.root_zone],
                                    bind=("127.0.0.1", 0))
    auth_cfg = servers.ServerConfig(servers.ROLE_AUTH, [bed.auth_zone],
                                    bind=("127.0.0.1", 0))
    with servers.UdpNameServer(root_cfg) as root_srv, \
            servers.UdpNameServer(auth_cfg) as auth_srv, \
            tempfile.TemporaryDirectory() as tmp:
        anchor = os.path.join(tmp, "anchor.txt")
        with open(anchor, "w") as f:
            f.write(bed.anchor.to_text())
        rc = main(["resolve", "test0.socratescrc", "A",
                   "--server", "%s:%d" % root_srv.address,
                   "--anchor", anchor,
                   "--map", "10.9.9.53=%s:%d" % auth_srv.address,
                   "--map", "10.9.9.1=%s:%d" % root_srv.address,
                   "--json"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["answers"] == ["10.9.9.10"]
    assert out["secure"] is True
    assert out["fragments"] >= 2
    assert out["elapsed_ms"] > 0


def test_resolve_servfail_exit_code(tmp_path, capsys):
    anchor = tmp_path / "anchor.txt"
    anchor.write_text("socratescrc. 1 13 2 " + "00" * 32 + "\n")
    rc = main(["resolve", "test0.socratescrc", "A",
               "--server", "127.0.0.1:1", "--anchor", str(anchor)])
    assert rc == 1


def test_sizer_unsigned_zone_single_fragment(zone_file, capsys):
    rc = main(["sizer", "--zone", zone_file, "--qtype", "A",
               "--name", "test0.socratescrc", "--json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["fragments"] == 1
    assert report["total_bytes"] < 1232


def test_serve_subprocess_answers_queries(tmp_path):
    import socket
    import subprocess
    import sys
    import time as time_mod
    from dualdns import codec, zone as zone_mod

    signed = zone_mod.sign_zone(
        zone_mod.parse_zone_file(zone_mod.reference_zone_text()),
        crypto.ECDSAP256SHA256, crypto.FALCON512, int(time_mod.time()))
    zone_path = tmp_path / "auth.signed"
    zone_path.write_text(zone_mod.print_zone(signed))
    proc = subprocess.Popen(
        [sys.executable, "-m", "dualdns.cli", "serve", "--role", "auth",
         "--zone", str(zone_path), "--listen", "127.0.0.1:15353"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    try:
        query = codec.encode_message(codec.make_query(
            codec.Name.from_text("test0.socratescrc"), codec.TYPE_A,
            0x2222, payload_size=65535))
        data = None
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.settimeout(0.5)
            for _ in range(20):
                try:
                    sock.sendto(query, ("127.0.0.1", 15353))
                    data, _ = sock.recvfrom(65535)
                    break
                except socket.timeout:
                    continue
        assert data is not None, "server never came up"
        resp = codec.decode_message(data)
        assert resp.header.id == 0x2222
        assert resp.answer[0].rdata.to_text() == "10.9.9.10"
    finally:
        proc.terminate()
        proc.wait(timeout=5)
