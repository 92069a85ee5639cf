"""Operator command line.

Exit codes: 0 success, 1 flag/parameter validation failure, 2 protocol or
runtime failure.  Every command is deterministic given --seed; delta_phi is
always supplied as a power-of-two exponent (ADC resolution convention).
Set NOISEPAD_LOG=debug|info|... for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import socket
import sys
import threading

import numpy as np

from . import analysis, attacker, protocol, transport
from .encode import Constellation, transmit_symbol
from .errors import HandshakeError, NoisepadError
from .phys import CoherentStateParams

log = logging.getLogger("noisepad")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors and accepts
    comma-separated negative number lists like -10,-8,-6 as values."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = re.compile(
            r"^-(inf|\d+\.?\d*)(,-?(inf|\d+\.?\d*))*$")

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _json_out(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True, indent=2))


def _k0_bits(args) -> np.ndarray:
    if getattr(args, "k0_file", None):
        raw = np.frombuffer(open(args.k0_file, "rb").read(), dtype=np.uint8)
        return np.unpackbits(raw)
    # Test-only derivation: a seeded generator is NOT a secret shared key.
    return np.random.default_rng([args.k0_seed, 0]).integers(
        0, 2, args.k0_bits, dtype=np.uint8)


def _session_params(args) -> protocol.SessionParams:
    return protocol.SessionParams(
        avg_photon_number=args.n_avg,
        delta_phi=2.0 ** args.delta_phi_exp,
        resolution_bits=args.resolution_bits,
        block_length=args.k0_bits,
        safety_bits=args.safety_bits,
        reconciliation_block=args.recon_block,
    )


def _add_session_flags(p: argparse.ArgumentParser, k0_default: int = 1024):
    p.add_argument("--seed", type=int, default=0, help="party seed")
    p.add_argument("--n-avg", type=float, default=1e4)
    p.add_argument("--delta-phi-exp", type=int, default=-30)
    p.add_argument("--resolution-bits", type=int, default=40)
    p.add_argument("--safety-bits", type=int, default=32)
    p.add_argument("--recon-block", type=int, default=None,
                   help="parity block size (default: whole key)")
    p.add_argument("--k0-bits", type=int, default=k0_default)
    p.add_argument("--k0-seed", type=int, default=7,
                   help="derive K0 from a seed (test only, insecure)")
    p.add_argument("--k0-file", help="read K0 as raw bytes")


# ---------------------------------------------------------------------------
# analyze / surface
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    params = CoherentStateParams(args.n_avg)
    delta_phi = 2.0 ** args.delta_phi_exp
    report = analysis.validate_params(params, delta_phi, args.ratio)
    point = analysis.security_point(params, delta_phi)
    c = None
    boost = None
    try:
        c = Constellation(delta_phi, args.resolution_bits)
        boost = analysis.boost_factor(c=c, params=params,
                                      seed_key_length=args.k0_bits,
                                      safety_bits=0)
    except ValueError as exc:
        log.info("no boost estimate: %s", exc)
    doc = {
        "n_avg": args.n_avg,
        "delta_phi_exp2": args.delta_phi_exp,
        "delta_phi": delta_phi,
        "sigma_phi": params.sigma_phi,
        "validation": {
            "ok": report.ok,
            "ratio": args.ratio,
            "checks": [{"name": chk.name, "lhs": chk.lhs, "rhs": chk.rhs,
                        "margin": chk.margin, "ok": chk.ok}
                       for chk in report.checks],
        },
        "p_error": point.p_error,
        "p_success": point.p_success,
        "entropy_leak": point.delta_h,
        "min_leak_length": point.leak_length,
        "boost_factor": boost,
    }
    if args.json:
        _json_out(doc)
    else:
        print(f"sigma_phi        = {params.sigma_phi:.6g}")
        for chk in report.checks:
            print(chk.describe())
        print(f"p_error (Eve)    = {point.p_error:.6g}")
        print(f"entropy_leak     = {point.delta_h:.6g} bits/symbol")
        print(f"min_leak_length  = {point.leak_length:.6g} symbols")
        if boost is not None:
            print(f"boost_factor     = {boost:.6g} (K0 = {args.k0_bits} bits)")
    return EXIT_OK if report.ok else EXIT_USAGE


def cmd_surface(args) -> int:
    n_grid = [float(x) for x in args.n_grid.split(",") if x]
    exp_grid = [float(x) for x in args.exp_grid.split(",") if x]
    text = analysis.emit_surface(n_grid, exp_grid, args.quantity)
    try:
        with open(args.out, "w") as fh:
            fh.write(text)
    except OSError as exc:
        print(f"cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{len(text.splitlines()) - 1} rows -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / serve / connect
# ---------------------------------------------------------------------------

def _summary(result: protocol.SessionResult, extra: dict | None = None) -> dict:
    doc = {
        "role": result.role,
        "cycles_completed": result.cycles_completed,
        "delivered_bits": [list(d) for d in result.delivered],
        "total_delivered_bits": result.chain.total_delivered(),
        "boost_factor_so_far": result.boost_factor_so_far(),
        "ledger": {
            "statistical_leak": result.ledger.statistical_leak,
            "disclosed_parity_bits": result.ledger.disclosed_parity_bits,
            "total": result.ledger.total,
        },
        "confirm_tag": result.confirm_tag.hex(),
        "early_stop": result.early_stop,
        "pa_records": [r.as_dict() for r in result.pa_records],
    }
    if extra:
        doc.update(extra)
    return doc


def cmd_simulate(args) -> int:
    try:
        params = _session_params(args)
    except ValueError as exc:
        print(f"invalid session parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE
    k0 = _k0_bits(args)
    progress_fh = open(args.progress_out, "w") if args.progress_out else None
    progress = None
    if progress_fh is not None:
        progress = lambda rec: print(json.dumps(rec, sort_keys=True),
                                     file=progress_fh, flush=True)
    try:
        result_a, result_b = protocol.simulate_session(
            params, k0, seed_a=args.seed, seed_b=args.seed + 1,
            cycles=args.cycles, transcript_path=args.transcript_out,
            progress=progress)
    finally:
        if progress_fh is not None:
            progress_fh.close()
    agreement = result_a.chain.bits_equal(result_b.chain)
    _json_out(_summary(result_a, {
        "seed": args.seed,
        "k0_bits": len(k0),
        "agreement": agreement,
        "confirm_match": result_a.confirm_tag == result_b.confirm_tag,
        "transcript_out": args.transcript_out,
    }))
    return EXIT_OK if agreement else EXIT_RUNTIME


def _host_port(text: str):
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_serve(args) -> int:
    k0 = _k0_bits(args)
    host, port = _host_port(args.listen)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen()
    bound = server.getsockname()
    print(json.dumps({"listening": {"host": bound[0], "port": bound[1]}}),
          flush=True)

    def handle(conn) -> int:
        channel = transport.SocketChannel(conn)
        if args.transcript_out:
            transport.record_transcript(channel, args.transcript_out)
        try:
            hello = transport.handshake(channel, "B",
                                        expected_block_length=len(k0))
            params = protocol.SessionParams(
                avg_photon_number=hello.avg_photon_number,
                delta_phi=hello.delta_phi,
                resolution_bits=hello.resolution_bits,
                block_length=hello.block_length,
                safety_bits=hello.safety_bits,
            )
            state = protocol.PartyState.create("B", params, k0, args.seed)
            result = protocol.run_session(channel, state)
            _json_out(_summary(result, {"seed": args.seed, "k0_bits": len(k0)}))
            return EXIT_OK
        except NoisepadError as exc:
            print(f"session failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        finally:
            if channel.tap is not None:
                channel.tap.close()
            channel.close()

    try:
        while True:
            conn, peer = server.accept()
            log.info("connection from %s:%s", *peer)
            if args.once:
                return handle(conn)
            threading.Thread(target=handle, args=(conn,), daemon=True).start()
    finally:
        server.close()


def cmd_connect(args) -> int:
    k0 = _k0_bits(args)
    host, port = _host_port(args.addr)
    try:
        params = protocol.SessionParams(
            avg_photon_number=args.n_avg,
            delta_phi=2.0 ** args.delta_phi_exp,
            resolution_bits=args.resolution_bits,
            block_length=len(k0),
            safety_bits=args.safety_bits,
        )
    except ValueError as exc:
        print(f"invalid session parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sock = socket.create_connection((host, port), timeout=30.0)
    channel = transport.SocketChannel(sock)
    if args.transcript_out:
        transport.record_transcript(channel, args.transcript_out)
    proposal = transport.HelloParams(
        avg_photon_number=args.n_avg,
        delta_phi_exp=args.delta_phi_exp,
        resolution_bits=args.resolution_bits,
        block_length=len(k0),
        safety_bits=args.safety_bits,
    )
    try:
        transport.handshake(channel, "A", proposal)
        state = protocol.PartyState.create("A", params, k0, args.seed)
        result = protocol.run_session(channel, state, cycles=args.cycles)
        _json_out(_summary(result, {"seed": args.seed, "k0_bits": len(k0)}))
        return EXIT_OK
    except HandshakeError as exc:
        print(f"handshake rejected: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except NoisepadError as exc:
        print(f"session failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if channel.tap is not None:
            channel.tap.close()
        channel.close()


# ---------------------------------------------------------------------------
# attacks
# ---------------------------------------------------------------------------

def cmd_attack_basis(args) -> int:
    params = CoherentStateParams(args.n_avg)
    c = Constellation(2.0 ** args.delta_phi_exp, args.resolution_bits)
    report = attacker.basis_attack_report(params, c, args.bits, args.seed)
    # Bit blindness over the same operating point, scored against truth.
    rng = np.random.default_rng([args.seed, 11])
    true_bits = rng.integers(0, 2, args.bits, dtype=np.uint8)
    basis = rng.integers(0, 2, args.bits, dtype=np.uint8)
    levels = transmit_symbol(true_bits, basis, c,
                             rng.normal(0.0, params.sigma_phi, args.bits))
    t = protocol.BlockTranscript(protocol.A_TO_B, levels, 0)
    report.bit_guess_error_rate = attacker.eve_bit_guess_rate(
        t, c, true_bits, seed=args.seed + 1)
    print(report.to_json(indent=2))
    return EXIT_OK


def _demo_session(args, cycles: int):
    params = _session_params(args)
    k0 = _k0_bits(args)
    result_a, result_b = protocol.simulate_session(
        params, k0, seed_a=args.seed, seed_b=args.seed + 1, cycles=cycles,
        keep_transcripts=True)
    if not result_a.chain.bits_equal(result_b.chain):
        raise NoisepadError("demo session failed to agree")
    return params, result_a


def cmd_attack_kpa(args) -> int:
    if args.ciphertext_file and args.plaintext_file:
        cipher = np.unpackbits(np.frombuffer(
            open(args.ciphertext_file, "rb").read(), dtype=np.uint8))
        plain = np.unpackbits(np.frombuffer(
            open(args.plaintext_file, "rb").read(), dtype=np.uint8))
        recovered = attacker.known_plaintext_attack(cipher, plain)
        report = attacker.AttackReport(
            symbols_observed=0,
            recovered_keys=[(args.known_key_index, recovered)],
            notes={"mode": "files"})
        print(report.to_json(indent=2))
        return EXIT_OK
    # Demo: run a session, let A and B encrypt a plaintext Eve knows with
    # their freshly delivered K1, and recover K1 from the public XOR.
    params, result = _demo_session(args, cycles=max(1, args.cycles))
    k1 = result.chain.keys[1].bits
    plain = np.random.default_rng([args.seed, 99]).integers(
        0, 2, len(k1), dtype=np.uint8)
    cipher = np.bitwise_xor(plain, k1)
    recovered = attacker.known_plaintext_attack(cipher, plain)
    exact = bool(np.array_equal(recovered, k1))
    report = attacker.AttackReport(
        symbols_observed=sum(len(t.symbols) for t in result.transcripts),
        recovered_keys=[(1, recovered)],
        notes={"mode": "demo", "recovered_exact": exact})
    print(report.to_json(indent=2))
    return EXIT_OK if exact else EXIT_RUNTIME


def cmd_attack_chain(args) -> int:
    if args.transcript:
        if not (args.known_key_hex and args.session_record):
            print("file mode needs --known-key-hex and --session-record",
                  file=sys.stderr)
            return EXIT_USAGE
        c = Constellation(2.0 ** args.delta_phi_exp, args.resolution_bits)
        transcripts = attacker.load_transcripts(args.transcript,
                                                args.resolution_bits)
        record = json.load(open(args.session_record))
        pa_records = [protocol.PaRecord.from_dict(d)
                      for d in record["pa_records"]]
        raw = bytes.fromhex(args.known_key_hex)
        known = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
        if args.known_key_bits is not None:
            known = known[:args.known_key_bits]
        recovery = attacker.chain_compromise(
            transcripts, args.known_key_index, known, c, pa_records)
        truth_notes = {}
    else:
        params, result = _demo_session(args, cycles=max(3, args.cycles))
        c = params.constellation
        known = result.chain.keys[args.known_key_index].bits
        recovery = attacker.chain_compromise(
            result.transcripts, args.known_key_index, known, c,
            result.pa_records)
        truth_notes = {
            "recovered_exact": all(
                np.array_equal(bits, result.chain.keys[idx].bits)
                for idx, bits in recovery.recovered
                if idx < len(result.chain.keys)),
            "chain_length": len(result.chain.keys),
        }
    report = attacker.AttackReport(
        symbols_observed=sum(len(b) for _, b in recovery.recovered),
        recovered_keys=recovery.recovered,
        notes={"gaps": recovery.gaps, **truth_notes})
    print(report.to_json(indent=2))
    ok = not truth_notes or truth_notes.get("recovered_exact", False)
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="noisepad",
                     description="noisy one-time-pad key booster")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="leak figures for one operating point")
    p.add_argument("--n-avg", type=float, required=True)
    p.add_argument("--delta-phi-exp", type=int, required=True)
    p.add_argument("--ratio", type=float, default=8.0)
    p.add_argument("--resolution-bits", type=int, default=40)
    p.add_argument("--k0-bits", type=int, default=256)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("surface", help="CSV leak surface over a parameter grid")
    p.add_argument("--quantity", choices=("delta_h", "leak_length"),
                   required=True)
    p.add_argument("--n-grid", required=True, help="comma-separated <n> values")
    p.add_argument("--exp-grid", required=True,
                   help="comma-separated exponents (-inf for delta_phi = 0)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_surface)

    p = sub.add_parser("simulate", help="two-party session over a loopback wire")
    _add_session_flags(p)
    p.add_argument("--cycles", type=int, default=10)
    p.add_argument("--transcript-out")
    p.add_argument("--progress-out", help="per-cycle JSON lines")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("serve", help="accept sessions on a socket")
    _add_session_flags(p)
    p.add_argument("--listen", default="127.0.0.1:0", help="host:port")
    p.add_argument("--once", action="store_true",
                   help="handle one session and exit")
    p.add_argument("--transcript-out")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("connect", help="run a session against a server")
    _add_session_flags(p)
    p.add_argument("--addr", required=True, help="host:port")
    p.add_argument("--cycles", type=int, default=10)
    p.add_argument("--transcript-out")
    p.set_defaults(fn=cmd_connect)

    p = sub.add_parser("attack-basis", help="Monte-Carlo ML basis attack")
    p.add_argument("--n-avg", type=float, required=True)
    p.add_argument("--delta-phi-exp", type=int, required=True)
    p.add_argument("--resolution-bits", type=int, default=24)
    p.add_argument("--bits", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_attack_basis)

    p = sub.add_parser("attack-kpa", help="known-plaintext key recovery")
    _add_session_flags(p)
    p.add_argument("--cycles", type=int, default=1)
    p.add_argument("--ciphertext-file")
    p.add_argument("--plaintext-file")
    p.add_argument("--known-key-index", type=int, default=1)
    p.set_defaults(fn=cmd_attack_kpa)

    p = sub.add_parser("attack-chain", help="chain compromise from one key")
    _add_session_flags(p)
    p.add_argument("--cycles", type=int, default=3)
    p.add_argument("--known-key-index", type=int, default=1)
    p.add_argument("--transcript", help="recorded transcript file")
    p.add_argument("--session-record", help="session summary JSON")
    p.add_argument("--known-key-hex")
    p.add_argument("--known-key-bits", type=int,
                   help="bit length of the revealed key (trims hex padding)")
    p.set_defaults(fn=cmd_attack_chain)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("NOISEPAD_LOG", "").upper()
    if level:
        logging.basicConfig(level=getattr(logging, level, logging.INFO),
                            stream=sys.stderr,
                            format="%(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NoisepadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
