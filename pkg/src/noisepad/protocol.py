"""Alice/Bob key-distribution state machines.

One distribution cycle sends fresh random bits from A to B, noise-masked
under the current shared key (used exactly once as basis material), then
fresh bits from B back to A under the key that was just delivered.  Each
direction is parity-reconciled, charged to a leak ledger, and compressed
with a seeded Toeplitz hash before joining the key chain.

Every chained key is a little shorter than its predecessor (the discarded
bits pay for disclosed parities, the statistical basis leak, and a safety
margin), so a chain eventually exhausts and a fresh shared seed must
restart the process.  All party randomness is drawn from seeded generators
standing in for physical entropy sources.
"""

from __future__ import annotations

import hashlib
import math
import struct
import threading
from dataclasses import dataclass

import numpy as np

from . import analysis, transport
from .encode import Constellation, decode_with_basis, transmit_symbol
from .errors import (
    KeyExhaustedError,
    ConfirmMismatchError,
    OneTimeViolationError,
    ProtocolError,
    ReconciliationError,
)
from .phys import CoherentStateParams, PhaseNoiseModel
from .transport import Channel, MessageType, expect

A_TO_B = 0
B_TO_A = 1

TAG_BITS = 256
WORKER_JOIN_TIMEOUT = 60.0

_PA_SEED = struct.Struct(">IBQQ")
_BULK_REQ = struct.Struct(">BBI")
_PROBE_REQ = struct.Struct(">BBII")
_SUB_BULK, _SUB_PROBE, _SUB_VERIFY = 0, 1, 2


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if arr.size and arr.max() > 1:
        raise ValueError("bit sequences must contain only 0s and 1s")
    return arr


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionParams:
    """Operating point and block configuration for one session.

    Construction fails unless the operating condition holds at ratio 8 and
    the quantization grid resolves the basis offset.
    """

    avg_photon_number: float
    delta_phi: float
    resolution_bits: int = 16
    block_length: int = 1024
    safety_bits: int = 32
    reconciliation_block: int | None = None

    def __post_init__(self):
        if self.reconciliation_block is None:
            object.__setattr__(self, "reconciliation_block", self.block_length)
        if not self.block_length >= self.reconciliation_block >= 8:
            raise ValueError(
                f"need block_length >= reconciliation_block >= 8, got "
                f"{self.block_length} / {self.reconciliation_block}")
        if self.safety_bits < 0:
            raise ValueError("safety_bits must be >= 0")
        Constellation(self.delta_phi, self.resolution_bits)  # grid invariant
        report = analysis.validate_params(self.coherent, self.delta_phi)
        if not report.ok:
            raise ValueError(f"operating condition violated: {report.describe()}")

    @property
    def coherent(self) -> CoherentStateParams:
        return CoherentStateParams(self.avg_photon_number)

    @property
    def constellation(self) -> Constellation:
        return Constellation(self.delta_phi, self.resolution_bits)

    @property
    def per_symbol_leak(self) -> float:
        return analysis.entropy_leak(self.coherent, self.delta_phi) - 0.5


@dataclass
class ChainKey:
    """One key of the chain, with its one-time usage state."""

    index: int
    bits: np.ndarray
    used_as_basis: bool = False
    tag_bits_used: int = 0

    @property
    def status(self) -> str:
        return "consumed" if self.used_as_basis else "basis-available"


class KeyChain:
    """Ordered keys K0, K1, K2, ... shared by one party."""

    def __init__(self, k0_bits):
        self.keys = [ChainKey(0, _as_bits(k0_bits))]

    @property
    def tip(self) -> ChainKey:
        return self.keys[-1]

    def append(self, bits) -> ChainKey:
        key = ChainKey(len(self.keys), _as_bits(bits))
        self.keys.append(key)
        return key

    def use_as_basis(self, key: ChainKey) -> np.ndarray:
        if key.used_as_basis:
            raise OneTimeViolationError(
                f"key K{key.index} was already used as basis material")
        key.used_as_basis = True
        return key.bits

    def total_delivered(self) -> int:
        return sum(len(k.bits) for k in self.keys[1:])

    def bits_equal(self, other: "KeyChain") -> bool:
        return (len(self.keys) == len(other.keys) and
                all(np.array_equal(a.bits, b.bits)
                    for a, b in zip(self.keys, other.keys)))


@dataclass
class LeakLedger:
    """Running conservative estimate of what the channel gave away."""

    statistical_leak: float = 0.0
    disclosed_parity_bits: int = 0

    @property
    def total(self) -> float:
        return self.statistical_leak + self.disclosed_parity_bits

    def add_symbols(self, count: int, per_symbol: float) -> None:
        self.statistical_leak += count * per_symbol

    def add_parities(self, count: int) -> None:
        self.disclosed_parity_bits += count

    def merge(self, other: "LeakLedger") -> None:
        self.statistical_leak += other.statistical_leak
        self.disclosed_parity_bits += other.disclosed_parity_bits


@dataclass
class BlockTranscript:
    """Everything the open channel shows for one key block."""

    direction: int
    symbols: np.ndarray
    cycle_index: int


# ---------------------------------------------------------------------------
# Block transfer
# ---------------------------------------------------------------------------

def send_block(fresh_bits, basis_key: ChainKey, params: SessionParams,
               noise_model: PhaseNoiseModel, cycle_index: int = 0,
               direction: int = A_TO_B) -> BlockTranscript:
    """Noise-mask fresh bits under a one-time basis key.

    Marks the basis key consumed; offering a consumed key raises
    OneTimeViolationError.
    """
    fresh = _as_bits(fresh_bits)
    if len(fresh) != len(basis_key.bits):
        raise ProtocolError(
            f"fresh bits ({len(fresh)}) and basis key ({len(basis_key.bits)}) "
            f"lengths differ")
    if basis_key.used_as_basis:
        raise OneTimeViolationError(
            f"key K{basis_key.index} was already used as basis material")
    basis_key.used_as_basis = True
    noise = noise_model.sample(len(fresh))
    symbols = transmit_symbol(fresh, basis_key.bits, params.constellation, noise)
    return BlockTranscript(direction, symbols, cycle_index)


def recover_block(t: BlockTranscript, basis_bits, params: SessionParams) -> np.ndarray:
    """Decode a received block with the shared basis key."""
    basis = _as_bits(basis_bits)
    if len(basis) != len(t.symbols):
        raise ProtocolError(
            f"basis key ({len(basis)}) and block ({len(t.symbols)}) lengths differ")
    return np.asarray(
        decode_with_basis(t.symbols, basis, params.constellation), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Reconciliation: two parity passes with binary-search correction
# ---------------------------------------------------------------------------

def _parity(bits: np.ndarray, idx: np.ndarray) -> int:
    return int(bits[idx].sum()) & 1


def _block_parities(bits: np.ndarray, order: np.ndarray, rb: int) -> np.ndarray:
    pad = (-len(order)) % rb
    padded = np.concatenate([bits[order], np.zeros(pad, dtype=np.uint8)])
    return padded.reshape(-1, rb).sum(axis=1).astype(np.uint8) & 1


def _pass_orders(n: int, perm_seed: int):
    return [np.arange(n), np.random.default_rng(perm_seed).permutation(n)]


def _digest(bits: np.ndarray) -> bytes:
    return hashlib.sha256(np.packbits(bits).tobytes()).digest()


def reconcile_receiver(bits, channel: Channel, params: SessionParams,
                       ledger: LeakLedger, perm_seed: int) -> np.ndarray:
    """Correct this side's candidate bits toward the sender's reference.

    One sequential parity pass, one pass over a seed-keyed public
    permutation, single-bit binary-search correction inside mismatched
    blocks, then a digest check.  Every parity that crosses the wire
    increments the ledger.
    """
    bits = _as_bits(bits).copy()
    n = len(bits)
    rb = min(params.reconciliation_block, n)
    for pass_id, order in enumerate(_pass_orders(n, perm_seed)):
        mine = _block_parities(bits, order, rb)
        nblocks = len(mine)
        channel.send(MessageType.PARITY_REQ,
                     _BULK_REQ.pack(_SUB_BULK, pass_id, nblocks) +
                     np.packbits(mine).tobytes())
        ledger.add_parities(nblocks)
        _, payload = expect(channel, MessageType.PARITY_RESP)
        mismatch = np.unpackbits(
            np.frombuffer(payload, dtype=np.uint8), count=nblocks)
        for bi in np.flatnonzero(mismatch):
            lo = int(bi) * rb
            hi = min(lo + rb, n)
            while hi - lo > 1:
                half = (hi - lo) // 2
                channel.send(MessageType.PARITY_REQ,
                             _PROBE_REQ.pack(_SUB_PROBE, pass_id, lo, half))
                ledger.add_parities(1)
                _, resp = expect(channel, MessageType.PARITY_RESP)
                theirs = resp[0]
                if _parity(bits, order[lo:lo + half]) != theirs:
                    hi = lo + half
                else:
                    lo = lo + half
            bits[order[lo]] ^= 1
    channel.send(MessageType.PARITY_REQ, bytes([_SUB_VERIFY]) + _digest(bits))
    _, resp = expect(channel, MessageType.PARITY_RESP)
    if resp != b"\x01":
        raise ReconciliationError("keys still differ after both passes")
    return bits


def reconcile_sender(bits, channel: Channel, params: SessionParams,
                     ledger: LeakLedger, perm_seed: int) -> None:
    """Answer the receiver's parity queries against the reference bits."""
    bits = _as_bits(bits)
    n = len(bits)
    rb = min(params.reconciliation_block, n)
    orders = _pass_orders(n, perm_seed)
    while True:
        _, payload = expect(channel, MessageType.PARITY_REQ)
        sub = payload[0]
        if sub == _SUB_BULK:
            _, pass_id, nblocks = _BULK_REQ.unpack_from(payload)
            theirs = np.unpackbits(
                np.frombuffer(payload[_BULK_REQ.size:], dtype=np.uint8),
                count=nblocks)
            mine = _block_parities(bits, orders[pass_id], rb)
            if len(mine) != nblocks:
                raise ProtocolError("parity block count mismatch")
            ledger.add_parities(nblocks)
            mask = (mine != theirs).astype(np.uint8)
            channel.send(MessageType.PARITY_RESP, np.packbits(mask).tobytes())
        elif sub == _SUB_PROBE:
            _, pass_id, lo, half = _PROBE_REQ.unpack(payload)
            ledger.add_parities(1)
            par = _parity(bits, orders[pass_id][lo:lo + half])
            channel.send(MessageType.PARITY_RESP, bytes([par]))
        elif sub == _SUB_VERIFY:
            ok = payload[1:] == _digest(bits)
            channel.send(MessageType.PARITY_RESP, b"\x01" if ok else b"\x00")
            if not ok:
                raise ReconciliationError("keys still differ after both passes")
            return
        else:
            raise ProtocolError(f"unknown reconciliation subtype {sub}")


# ---------------------------------------------------------------------------
# Privacy amplification
# ---------------------------------------------------------------------------

def _gf2_toeplitz(seed_bits: np.ndarray, vec: np.ndarray, m: int) -> np.ndarray:
    """Multiply the m x n Toeplitz matrix T[i, j] = seed[n-1+i-j] by vec, mod 2."""
    n = len(vec)
    if m * n <= 1 << 22:
        conv = np.convolve(seed_bits.astype(np.int64), vec.astype(np.int64))
    else:
        size = 1 << int(math.ceil(math.log2(len(seed_bits) + n - 1)))
        spectrum = (np.fft.rfft(seed_bits.astype(float), size) *
                    np.fft.rfft(vec.astype(float), size))
        raw = np.fft.irfft(spectrum, size)[:len(seed_bits) + n - 1]
        conv = np.rint(raw).astype(np.int64)
        if np.abs(raw - conv).max() > 0.25:
            raise ArithmeticError("FFT convolution lost integer precision")
    return (conv[n - 1:n - 1 + m] & 1).astype(np.uint8)


def privacy_amplify(bits, ledger: LeakLedger, safety_bits: int,
                    public_seed: int) -> np.ndarray:
    """Compress bits by the ledger charge plus a safety margin.

    Output length m = len(bits) - ceil(ledger.total) - safety_bits; the
    output is the product of a Toeplitz matrix drawn from the public seed
    with the input, over GF(2).  When no compression is needed (m equal to
    the input length) the input passes through unchanged.
    """
    bits = _as_bits(bits)
    n = len(bits)
    m = n - math.ceil(ledger.total) - safety_bits
    if m <= 0:
        raise KeyExhaustedError(
            f"privacy amplification would leave {m} bits; a fresh shared "
            f"seed is required")
    if m == n:
        return bits.copy()
    seed_bits = np.random.default_rng(public_seed).integers(
        0, 2, m + n - 1, dtype=np.uint8)
    return _gf2_toeplitz(seed_bits, bits, m)


# ---------------------------------------------------------------------------
# Authentication
# ---------------------------------------------------------------------------

def tag_bytes(key_bits, message: bytes) -> bytes:
    """256-bit tag: SHA-256 over key || message || key."""
    kb = np.packbits(_as_bits(key_bits)).tobytes()
    return hashlib.sha256(kb + message + kb).digest()


def authenticate_tag(key: ChainKey, message: bytes,
                     length_bits: int = TAG_BITS) -> bytes:
    """Tag a message with fresh bits of a chain key, consuming them."""
    available = len(key.bits) - key.tag_bits_used
    if available < length_bits:
        raise KeyExhaustedError(
            f"key K{key.index} has {available} unconsumed bits, "
            f"tag needs {length_bits}")
    start = key.tag_bits_used
    key.tag_bits_used += length_bits
    return tag_bytes(key.bits[start:start + length_bits], message)


# ---------------------------------------------------------------------------
# Party state and session driver
# ---------------------------------------------------------------------------

@dataclass
class PartyState:
    role: str
    params: SessionParams
    chain: KeyChain
    ledger: LeakLedger
    noise: PhaseNoiseModel
    fresh_rng: np.random.Generator
    pub_rng: np.random.Generator

    @classmethod
    def create(cls, role: str, params: SessionParams, k0_bits, seed: int) -> "PartyState":
        if role not in ("A", "B"):
            raise ValueError(f"role must be 'A' or 'B', got {role!r}")
        noise_seed = int(np.random.default_rng([seed, 3]).integers(0, 2 ** 63))
        return cls(
            role=role,
            params=params,
            chain=KeyChain(k0_bits),
            ledger=LeakLedger(),
            noise=PhaseNoiseModel(params.coherent.sigma_phi, noise_seed),
            fresh_rng=np.random.default_rng([seed, 1]),
            pub_rng=np.random.default_rng([seed, 2]),
        )


@dataclass
class PaRecord:
    """Public facts about one amplification, as visible on the wire."""

    key_index: int
    cycle_index: int
    direction: int
    perm_seed: int
    pa_seed: int
    output_bits: int

    def as_dict(self) -> dict:
        return {
            "key_index": self.key_index,
            "cycle_index": self.cycle_index,
            "direction": self.direction,
            "perm_seed": self.perm_seed,
            "pa_seed": self.pa_seed,
            "output_bits": self.output_bits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PaRecord":
        return cls(d["key_index"], d["cycle_index"], d["direction"],
                   d["perm_seed"], d["pa_seed"], d["output_bits"])


@dataclass
class SessionResult:
    role: str
    cycles_completed: int
    delivered: list
    ledger: LeakLedger
    chain: KeyChain
    confirm_tag: bytes
    pa_records: list
    early_stop: str | None = None
    transcripts: list | None = None

    def boost_factor_so_far(self) -> float:
        k0 = len(self.chain.keys[0].bits)
        return self.chain.total_delivered() / k0


def _fresh_tip(state: PartyState) -> ChainKey:
    tip = state.chain.tip
    if tip.used_as_basis:
        raise KeyExhaustedError(
            "key chain exhausted: every key has served as basis material")
    return tip


def _send_direction(state: PartyState, channel: Channel, cycle_index: int,
                    direction: int):
    params = state.params
    tip = _fresh_tip(state)
    n = len(tip.bits)
    fresh = state.fresh_rng.integers(0, 2, n, dtype=np.uint8)
    t = send_block(fresh, tip, params, state.noise, cycle_index, direction)
    transport.send_keyblock(channel, cycle_index, t.symbols, params.resolution_bits)
    perm_seed = int(state.pub_rng.integers(0, 2 ** 63))
    pa_seed = int(state.pub_rng.integers(0, 2 ** 63))
    channel.send(MessageType.PA_SEED,
                 _PA_SEED.pack(cycle_index, direction, perm_seed, pa_seed))
    delta = LeakLedger()
    delta.add_symbols(n, params.per_symbol_leak)
    reconcile_sender(fresh, channel, params, delta, perm_seed)
    state.ledger.merge(delta)
    new_bits = privacy_amplify(fresh, delta, params.safety_bits, pa_seed)
    key = state.chain.append(new_bits)
    record = PaRecord(key.index, cycle_index, direction, perm_seed, pa_seed,
                      len(new_bits))
    return t, key, record


def _recv_direction(state: PartyState, channel: Channel, cycle_index: int,
                    direction: int, keyblock_payload: bytes | None = None):
    params = state.params
    tip = _fresh_tip(state)
    basis_bits = state.chain.use_as_basis(tip)
    got_cycle, levels = transport.recv_keyblock(
        channel, params.resolution_bits, expected_count=len(basis_bits),
        payload=keyblock_payload)
    if got_cycle != cycle_index:
        raise ProtocolError(
            f"expected cycle {cycle_index}, peer sent {got_cycle}")
    t = BlockTranscript(direction, levels, got_cycle)
    candidate = recover_block(t, basis_bits, params)
    _, payload = expect(channel, MessageType.PA_SEED)
    seed_cycle, seed_dir, perm_seed, pa_seed = _PA_SEED.unpack(payload)
    if seed_cycle != cycle_index or seed_dir != direction:
        raise ProtocolError("PA_SEED frame does not match the current block")
    delta = LeakLedger()
    delta.add_symbols(len(levels), params.per_symbol_leak)
    corrected = reconcile_receiver(candidate, channel, params, delta, perm_seed)
    state.ledger.merge(delta)
    new_bits = privacy_amplify(corrected, delta, params.safety_bits, pa_seed)
    key = state.chain.append(new_bits)
    record = PaRecord(key.index, cycle_index, direction, perm_seed, pa_seed,
                      len(new_bits))
    return t, key, record


def _confirm_message(state: PartyState, cycles_completed: int) -> bytes:
    tip = state.chain.tip
    return (b"NOTP confirm" +
            struct.pack(">IQQdI", cycles_completed,
                        state.chain.total_delivered(),
                        state.ledger.disclosed_parity_bits,
                        state.ledger.statistical_leak,
                        len(tip.bits)))


def _confirm_tag(state: PartyState, cycles_completed: int) -> bytes:
    tip = state.chain.tip
    if len(tip.bits) - tip.tag_bits_used < TAG_BITS:
        return b""
    return authenticate_tag(tip, _confirm_message(state, cycles_completed))


def run_session(channel: Channel, state: PartyState, cycles: int | None = None,
                progress=None, keep_transcripts: bool = False) -> SessionResult:
    """Run all distribution cycles plus the confirmation exchange.

    The initiator (role A) drives `cycles` cycles; the responder follows
    the peer's frames.  Key exhaustion stops cycling early on both sides
    and is reported, not raised.
    """
    delivered = []
    pa_records = []
    transcripts = [] if keep_transcripts else None
    early_stop = None
    cycles_completed = 0

    def note(t, key, record):
        if transcripts is not None:
            transcripts.append(t)
        pa_records.append(record)
        return key

    if state.role == "A":
        if cycles is None:
            raise ValueError("initiator needs an explicit cycle count")
        for cycle_index in range(1, cycles + 1):
            try:
                k1 = note(*_send_direction(state, channel, cycle_index, A_TO_B))
                k2 = note(*_recv_direction(state, channel, cycle_index, B_TO_A))
            except KeyExhaustedError as exc:
                early_stop = str(exc)
                break
            cycles_completed = cycle_index
            delivered.append((len(k1.bits), len(k2.bits)))
            if progress is not None:
                progress(_progress_record(state, cycle_index, k1, k2))
        tag = _confirm_tag(state, cycles_completed)
        channel.send(MessageType.CONFIRM, tag)
        _, peer_tag = expect(channel, MessageType.CONFIRM)
    else:
        peer_tag = None
        while True:
            msg_type, payload = expect(
                channel, MessageType.KEYBLOCK, MessageType.CONFIRM)
            if msg_type == MessageType.CONFIRM:
                peer_tag = payload
                break
            cycle_index = struct.unpack_from(">I", payload)[0]
            try:
                k1 = note(*_recv_direction(state, channel, cycle_index, A_TO_B,
                                           keyblock_payload=payload))
                k2 = note(*_send_direction(state, channel, cycle_index, B_TO_A))
            except KeyExhaustedError as exc:
                early_stop = str(exc)
                continue
            cycles_completed = cycle_index
            delivered.append((len(k1.bits), len(k2.bits)))
            if progress is not None:
                progress(_progress_record(state, cycle_index, k1, k2))
        tag = _confirm_tag(state, cycles_completed)
        channel.send(MessageType.CONFIRM, tag)

    if peer_tag != tag:
        raise ConfirmMismatchError(
            "peers computed different session confirmation tags")
    return SessionResult(
        role=state.role,
        cycles_completed=cycles_completed,
        delivered=delivered,
        ledger=state.ledger,
        chain=state.chain,
        confirm_tag=tag,
        pa_records=pa_records,
        early_stop=early_stop,
        transcripts=transcripts,
    )


def _progress_record(state: PartyState, cycle_index: int, k1: ChainKey,
                     k2: ChainKey) -> dict:
    return {
        "cycle": cycle_index,
        "delivered_bits": [len(k1.bits), len(k2.bits)],
        "statistical_leak": state.ledger.statistical_leak,
        "disclosed_parity_bits": state.ledger.disclosed_parity_bits,
        "ledger_total": state.ledger.total,
    }


class _Worker(threading.Thread):
    """Run a callable, capturing its result or exception."""

    def __init__(self, fn):
        super().__init__(daemon=True)
        self._fn = fn
        self.result = None
        self.error = None

    def run(self):
        try:
            self.result = self._fn()
        except BaseException as exc:  # noqa: BLE001 - reraised in the caller
            self.error = exc


def run_cycle(state_a: PartyState, state_b: PartyState,
              params: SessionParams | None = None):
    """Run one in-process distribution cycle between two party states.

    Returns the two freshly delivered key bit arrays (A->B, B->A).
    """
    if params is not None and params != state_a.params:
        raise ValueError("params must match the party states")
    if state_a.params != state_b.params:
        raise ValueError("parties disagree on session parameters")
    for state in (state_a, state_b):
        if state.chain.tip.used_as_basis:
            raise KeyExhaustedError(
                "key chain exhausted: every key has served as basis material")
    ch_a, ch_b = transport.LoopbackChannel.pair()
    cycle_index = (len(state_a.chain.keys) + 1) // 2

    def b_side():
        _, k1, _ = _recv_direction(state_b, ch_b, cycle_index, A_TO_B)
        _, k2, _ = _send_direction(state_b, ch_b, cycle_index, B_TO_A)
        return k1, k2

    worker = _Worker(b_side)
    worker.start()
    try:
        _, key1, _ = _send_direction(state_a, ch_a, cycle_index, A_TO_B)
        _, key2, _ = _recv_direction(state_a, ch_a, cycle_index, B_TO_A)
    finally:
        worker.join(timeout=WORKER_JOIN_TIMEOUT)
    if worker.error is not None:
        raise worker.error
    return key1.bits, key2.bits


def simulate_session(params: SessionParams, k0_bits, seed_a: int, seed_b: int,
                     cycles: int, transcript_path=None, progress=None,
                     keep_transcripts: bool = False):
    """Drive a full two-party session over an in-process loopback wire.

    Returns (result_a, result_b).  The handshake, key blocks, parity
    dialogue and confirmation all cross the loopback exactly as they would
    a socket; a transcript tap may record the eavesdropper's view.
    """
    exp = round(math.log2(params.delta_phi))
    if 2.0 ** exp != params.delta_phi:
        raise ProtocolError("wire sessions carry delta_phi as a power-of-two "
                            "exponent; use delta_phi = 2**k")
    k0 = _as_bits(k0_bits)
    proposal = transport.HelloParams(
        avg_photon_number=params.avg_photon_number,
        delta_phi_exp=exp,
        resolution_bits=params.resolution_bits,
        block_length=len(k0),
        safety_bits=params.safety_bits,
    )
    ch_a, ch_b = transport.LoopbackChannel.pair()
    tap = None
    if transcript_path is not None:
        tap = transport.record_transcript(ch_a, transcript_path)

    def b_side():
        transport.handshake(ch_b, "B", expected_block_length=len(k0))
        state_b = PartyState.create("B", params, k0, seed_b)
        return run_session(ch_b, state_b, keep_transcripts=keep_transcripts)

    worker = _Worker(b_side)
    worker.start()
    try:
        transport.handshake(ch_a, "A", proposal)
        state_a = PartyState.create("A", params, k0, seed_a)
        result_a = run_session(ch_a, state_a, cycles=cycles, progress=progress,
                               keep_transcripts=keep_transcripts)
    finally:
        worker.join(timeout=WORKER_JOIN_TIMEOUT)
        if tap is not None:
            tap.close()
    if worker.error is not None:
        raise worker.error
    return result_a, worker.result
