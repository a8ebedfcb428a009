"""A small permissioned ledger: identities, the connection and transfer
contracts, gas metering, proof-of-work sealing and chain verification.

Contract logic runs as native code.  Every contract call and every data
transfer is a signed transaction, so replaying the committed chain
reproduces the connection registry and lets a verifier confirm that no
transfer was committed over a pair that was not connected at the time.

Canonical transaction bytes (what gets signed)::

    sender (20) | receiver (20) | iteration (u64 BE) | len(payload) (u32 BE)
    | payload | nonce (u64 BE)
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (Ed25519PrivateKey,
                                                               Ed25519PublicKey)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

# contract error strings, bit-exact
ONLY_OWNER = "Only Owner Access"
NO_SELF_CONNECTION = "No Self Connection"
CONNECTION_EXISTS = "Connection exist"
NO_CONNECTION = "No Connection"
ONLY_SENDER = "Only msg.senders"
GAS_LIMIT_EXCEEDED = "gas limit exceeded"

GAS_BASE = 21000
GAS_PER_BYTE = 16
DEFAULT_GAS_LIMIT = 100_000

ZERO_HASH = bytes(32)
# the registry contract lives at a fixed, keyless address
CONTRACT_ADDRESS = "0x" + "00" * 19 + "c0"


class ContractError(Exception):
    """A contract call reverted; ``str(err)`` is exactly the revert reason."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class SealError(RuntimeError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def gas_for_length(n_bytes: float) -> float:
    """Affine gas model on a (possibly fractional) payload length."""
    return GAS_BASE + GAS_PER_BYTE * n_bytes


def gas_cost(payload: bytes) -> int:
    return GAS_BASE + GAS_PER_BYTE * len(payload)


# -- identities ---------------------------------------------------------------

def _address_of(public_key: bytes) -> str:
    return "0x" + sha256(public_key)[-20:].hex()


def _addr_bytes(address: str) -> bytes:
    raw = bytes.fromhex(address[2:] if address.startswith("0x") else address)
    if len(raw) != 20:
        raise ValueError(f"address must be 20 bytes, got {len(raw)}")
    return raw


@dataclass(frozen=True, eq=False)
class Identity:
    private_key: Ed25519PrivateKey = field(repr=False)
    public_key: bytes
    address: str

    def sign(self, message: bytes) -> bytes:
        return self.private_key.sign(message)


def generate_identity(rng_seed: int | str | bytes) -> Identity:
    """Deterministic Ed25519 key pair; the seed is hashed into the private key."""
    if isinstance(rng_seed, int):
        seed = rng_seed.to_bytes((rng_seed.bit_length() + 8) // 8, "big", signed=True)
    elif isinstance(rng_seed, str):
        seed = rng_seed.encode()
    else:
        seed = bytes(rng_seed)
    sk = Ed25519PrivateKey.from_private_bytes(sha256(b"identity:" + seed))
    pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return Identity(sk, pk, _address_of(pk))


@lru_cache(maxsize=65536)
def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# -- transactions -------------------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    sender: str
    receiver: str
    iteration: int
    payload: bytes
    gas: int
    nonce: int
    public_key: bytes
    signature: bytes

    def canonical(self) -> bytes:
        return canonical_bytes(self.sender, self.receiver, self.iteration, self.payload,
                               self.nonce)

    def record(self) -> bytes:
        """Every committed field, used for the transaction hash."""
        return (self.canonical() + struct.pack(">Q", self.gas) + self.public_key
                + self.signature)

    @property
    def hash(self) -> bytes:
        return sha256(self.record())

    @property
    def is_contract_call(self) -> bool:
        return self.receiver == CONTRACT_ADDRESS

    def signature_ok(self) -> bool:
        return (_address_of(self.public_key) == self.sender
                and verify_signature(self.public_key, self.canonical(), self.signature))


def canonical_bytes(sender: str, receiver: str, iteration: int, payload: bytes,
                    nonce: int) -> bytes:
    return (_addr_bytes(sender) + _addr_bytes(receiver) + struct.pack(">Q", iteration)
            + struct.pack(">I", len(payload)) + payload + struct.pack(">Q", nonce))


def make_transaction(identity: Identity, receiver: str, iteration: int, payload: bytes,
                     nonce: int) -> Transaction:
    msg = canonical_bytes(identity.address, receiver, iteration, payload, nonce)
    return Transaction(identity.address, receiver, iteration, bytes(payload),
                       gas_cost(payload), nonce, identity.public_key, identity.sign(msg))


def contract_payload(action: str, frm: str, to: str) -> bytes:
    return f"{action}:{frm}:{to}".encode("ascii")


def parse_contract_payload(payload: bytes) -> tuple[str, str, str]:
    action, frm, to = payload.decode("ascii").split(":")
    return action, frm, to


# -- contract state -----------------------------------------------------------

@dataclass(frozen=True)
class Event:
    kind: str  # connection_established | connection_demolished | transfer
    frm: str
    to: str
    iteration: int
    payload_bytes: int
    gas: int
    height: int | None = None


@dataclass(frozen=True)
class ContractState:
    owner: str
    connections: frozenset = frozenset()  # established ordered (from, to) pairs

    def connected(self, frm: str, to: str) -> bool:
        return (frm, to) in self.connections


def establish_connection(caller: str, frm: str, to: str,
                         state: ContractState) -> tuple[ContractState, Event]:
    """Owner-only registration of the directed pair ``frm -> to``."""
    if caller != state.owner:
        raise ContractError(ONLY_OWNER)
    if frm == to:
        raise ContractError(NO_SELF_CONNECTION)
    if state.connected(frm, to):
        raise ContractError(CONNECTION_EXISTS)
    new = replace(state, connections=state.connections | {(frm, to)})
    return new, Event("connection_established", frm, to, 0, 0, 0)


def demolish_connection(caller: str, frm: str, to: str,
                        state: ContractState) -> tuple[ContractState, Event]:
    if caller != state.owner:
        raise ContractError(ONLY_OWNER)
    if not state.connected(frm, to):
        raise ContractError(NO_CONNECTION)
    new = replace(state, connections=state.connections - {(frm, to)})
    return new, Event("connection_demolished", frm, to, 0, 0, 0)


def check_transfer(tx: Transaction, state: ContractState, gas_limit: int) -> Event:
    """Data-transfer contract: the signer must be the declared sender, the
    pair must be connected and the gas must fit under the limit."""
    if not tx.signature_ok():
        raise ContractError(ONLY_SENDER)
    if not state.connected(tx.sender, tx.receiver):
        raise ContractError(NO_CONNECTION)
    if gas_cost(tx.payload) > gas_limit:
        raise ContractError(GAS_LIMIT_EXCEEDED)
    return Event("transfer", tx.sender, tx.receiver, tx.iteration, len(tx.payload), tx.gas)


def apply_transaction(tx: Transaction, state: ContractState,
                      gas_limit: int) -> tuple[ContractState, Event]:
    """Run one transaction against the contract state; raises ContractError."""
    if not tx.is_contract_call:
        return state, check_transfer(tx, state, gas_limit)
    if not tx.signature_ok():
        raise ContractError(ONLY_SENDER)
    try:
        action, frm, to = parse_contract_payload(tx.payload)
    except (UnicodeDecodeError, ValueError):
        raise ContractError("malformed contract call") from None
    if action == "establish":
        return establish_connection(tx.sender, frm, to, state)
    if action == "demolish":
        return demolish_connection(tx.sender, frm, to, state)
    raise ContractError(f"unknown contract action {action!r}")


@dataclass(frozen=True)
class Receipt:
    accepted: bool
    reason: str
    gas: int
    tx_hash: bytes
    event: Event | None = None


# -- blocks -------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    difficulty: int
    txs: tuple[Transaction, ...]
    nonce: int
    hash: bytes

    def header(self) -> bytes:
        return (struct.pack(">Q", self.height) + self.prev_hash
                + struct.pack(">QB", self.timestamp, self.difficulty))

    def tx_digest(self) -> bytes:
        return tx_digest(self.txs)

    def compute_hash(self) -> bytes:
        return block_hash(self.header(), self.tx_digest(), self.nonce)


def tx_digest(txs: Sequence[Transaction]) -> bytes:
    h = hashlib.sha256()
    for tx in txs:
        h.update(tx.hash)
    return h.digest()


def block_hash(header: bytes, digest: bytes, nonce: int) -> bytes:
    return sha256(header + digest + struct.pack(">Q", nonce))


def leading_zero_bits(h: bytes) -> int:
    value = int.from_bytes(h, "big")
    return len(h) * 8 - value.bit_length()


def meets_difficulty(h: bytes, bits: int) -> bool:
    return leading_zero_bits(h) >= bits


def seal_block(txs: Sequence[Transaction], prev_hash: bytes, difficulty_bits: int = 0,
               max_attempts: int = 1 << 22, *, height: int = 0,
               timestamp: int = 0) -> tuple[Block, int]:
    """Search nonces 0, 1, ... until the block hash has enough leading zero
    bits.  Returns the block and the number of attempts."""
    if not 0 <= difficulty_bits <= 255:
        raise ValueError("difficulty must be in 0..255")
    txs = tuple(txs)
    proto = Block(height, prev_hash, timestamp, difficulty_bits, txs, 0, b"")
    header, digest = proto.header(), proto.tx_digest()
    for nonce in range(max_attempts):
        h = block_hash(header, digest, nonce)
        if meets_difficulty(h, difficulty_bits):
            return replace(proto, nonce=nonce, hash=h), nonce + 1
    raise SealError(f"no nonce found within {max_attempts} attempts "
                    f"at difficulty {difficulty_bits}")


# -- chain --------------------------------------------------------------------

@dataclass(frozen=True)
class ChainVerdict:
    ok: bool
    bad_height: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(chain: Sequence[Block], gas_limit: int = DEFAULT_GAS_LIMIT) -> ChainVerdict:
    """Recompute hashes and linkage, check difficulty, signatures, gas and
    nonces, and replay the contract.  The owner is the signer of the deploy
    call in the genesis block."""
    state: ContractState | None = None
    nonces: dict[str, int] = {}
    prev = ZERO_HASH
    for pos, blk in enumerate(chain):
        def bad(reason: str) -> ChainVerdict:
            return ChainVerdict(False, pos, reason)
        if blk.height != pos:
            return bad("height out of sequence")
        if blk.prev_hash != prev:
            return bad("previous-hash link broken")
        if blk.compute_hash() != blk.hash:
            return bad("block hash mismatch")
        if not meets_difficulty(blk.hash, blk.difficulty):
            return bad("hash above difficulty target")
        for tx in blk.txs:
            if not tx.signature_ok():
                return bad("bad transaction signature")
            if tx.gas != gas_cost(tx.payload):
                return bad("gas field does not match payload")
            if tx.nonce != nonces.get(tx.sender, 0):
                return bad("transaction nonce out of sequence")
            nonces[tx.sender] = tx.nonce + 1
            if state is None:
                if pos != 0 or tx.payload != b"deploy" or not tx.is_contract_call:
                    return bad("chain does not start with the contract deployment")
                state = ContractState(tx.sender)
                continue
            try:
                state, _ = apply_transaction(tx, state, gas_limit)
            except ContractError as err:
                return bad(f"committed transaction reverts on replay: {err.reason}")
        if pos == 0 and state is None:
            return bad("missing contract deployment")
        prev = blk.hash
    return ChainVerdict(True)


def replay_events(chain: Sequence[Block], gas_limit: int = DEFAULT_GAS_LIMIT) -> list[Event]:
    state: ContractState | None = None
    out: list[Event] = []
    for blk in chain:
        for tx in blk.txs:
            if state is None:
                state = ContractState(tx.sender)
                continue
            state, ev = apply_transaction(tx, state, gas_limit)
            out.append(replace(ev, iteration=tx.iteration, payload_bytes=len(tx.payload),
                               gas=tx.gas, height=blk.height))
    return out


class Ledger:
    """Single-writer chain with a mempool and the deployed contract.

    Submissions are checked against the current contract state and queued;
    ``seal`` commits the mempool, in submission order, as the next block.
    """

    def __init__(self, owner: Identity, *, difficulty_bits: int = 0,
                 gas_limit: int = DEFAULT_GAS_LIMIT, max_attempts: int = 1 << 22):
        self.owner = owner
        self.difficulty_bits = difficulty_bits
        self.gas_limit = gas_limit
        self.max_attempts = max_attempts
        self.state = ContractState(owner.address)
        self.chain: list[Block] = []
        self.mempool: list[Transaction] = []
        self.events: list[Event] = []
        self._pending_events: list[Event] = []
        self._nonces: dict[str, int] = {}
        self.seal_attempts: list[int] = []
        deploy = make_transaction(owner, CONTRACT_ADDRESS, 0, b"deploy", 0)
        self._nonces[owner.address] = 1
        self.mempool.append(deploy)
        self.seal(timestamp=0)

    def next_nonce(self, address: str) -> int:
        """Nonce the next accepted transaction from ``address`` must carry."""
        return self._nonces.get(address, 0)

    def sign_transfer(self, identity: Identity, receiver: str, iteration: int,
                      payload: bytes) -> Transaction:
        return make_transaction(identity, receiver, iteration, payload,
                                self.next_nonce(identity.address))

    def submit(self, tx: Transaction) -> Receipt:
        """Run the contract on ``tx`` and queue it; rejected transactions are
        dropped and leave no trace on the chain."""
        if tx.nonce != self.next_nonce(tx.sender):
            return Receipt(False, "stale or out-of-order nonce", tx.gas, tx.hash)
        try:
            state, event = apply_transaction(tx, self.state, self.gas_limit)
        except ContractError as err:
            return Receipt(False, err.reason, gas_cost(tx.payload), tx.hash)
        self.state = state
        self._nonces[tx.sender] = tx.nonce + 1
        self.mempool.append(tx)
        event = replace(event, iteration=tx.iteration, payload_bytes=len(tx.payload),
                        gas=tx.gas)
        self._pending_events.append(event)
        return Receipt(True, "", tx.gas, tx.hash, event)

    def submit_transfer(self, identity: Identity, receiver: str, iteration: int,
                        payload: bytes) -> Receipt:
        return self.submit(self.sign_transfer(identity, receiver, iteration, payload))

    def call(self, identity: Identity, action: str, frm: str, to: str,
             iteration: int = 0) -> Receipt:
        tx = self.sign_transfer(identity, CONTRACT_ADDRESS, iteration,
                                contract_payload(action, frm, to))
        return self.submit(tx)

    def establish(self, identity: Identity, frm: str, to: str) -> Receipt:
        return self.call(identity, "establish", frm, to)

    def demolish(self, identity: Identity, frm: str, to: str) -> Receipt:
        return self.call(identity, "demolish", frm, to)

    def seal(self, timestamp: int | None = None) -> Block:
        prev = self.chain[-1].hash if self.chain else ZERO_HASH
        height = len(self.chain)
        blk, attempts = seal_block(self.mempool, prev, self.difficulty_bits, self.max_attempts,
                                   height=height,
                                   timestamp=height if timestamp is None else timestamp)
        self.chain.append(blk)
        self.seal_attempts.append(attempts)
        self.events += [replace(e, height=height) for e in self._pending_events]
        self.mempool, self._pending_events = [], []
        return blk

    @property
    def head(self) -> Block:
        return self.chain[-1]

    def transfers_to(self, address: str, height: int) -> list[Transaction]:
        return [tx for tx in self.chain[height].txs
                if tx.receiver == address and not tx.is_contract_call]

    def transfers(self) -> Iterable[Transaction]:
        for blk in self.chain:
            for tx in blk.txs:
                if not tx.is_contract_call:
                    yield tx

    def stats(self) -> dict[str, int]:
        txs = list(self.transfers())
        return {"transactions": len(txs), "blocks": len(self.chain),
                "total_gas": sum(tx.gas for tx in txs),
                "payload_bytes": sum(len(tx.payload) for tx in txs)}

    def verify(self) -> ChainVerdict:
        return verify_chain(self.chain, self.gas_limit)


# -- export -------------------------------------------------------------------

def _tx_json(tx: Transaction) -> dict:
    return {"sender": tx.sender, "receiver": tx.receiver, "iteration": tx.iteration,
            "payload": tx.payload.hex(), "gas": tx.gas, "nonce": tx.nonce,
            "public_key": tx.public_key.hex(), "signature": tx.signature.hex()}


def block_to_json(blk: Block) -> str:
    return json.dumps({"height": blk.height, "prev_hash": blk.prev_hash.hex(),
                       "timestamp": blk.timestamp, "difficulty": blk.difficulty,
                       "nonce": blk.nonce, "hash": blk.hash.hex(),
                       "txs": [_tx_json(t) for t in blk.txs]}, separators=(",", ":"))


def block_from_json(line: str) -> Block:
    d = json.loads(line)
    txs = tuple(Transaction(t["sender"], t["receiver"], int(t["iteration"]),
                            bytes.fromhex(t["payload"]), int(t["gas"]), int(t["nonce"]),
                            bytes.fromhex(t["public_key"]), bytes.fromhex(t["signature"]))
                for t in d["txs"])
    return Block(int(d["height"]), bytes.fromhex(d["prev_hash"]), int(d["timestamp"]),
                 int(d["difficulty"]), txs, int(d["nonce"]), bytes.fromhex(d["hash"]))


def export_chain(chain: Sequence[Block], path: str | Path) -> None:
    with open(path, "w") as fh:
        for blk in chain:
            fh.write(block_to_json(blk) + "\n")


def load_chain(path: str | Path) -> list[Block]:
    with open(path) as fh:
        return [block_from_json(line) for line in fh if line.strip()]


def write_events_csv(events: Sequence[Event], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["height", "event_kind", "from", "to", "iteration", "payload_bytes", "gas"])
        for e in events:
            wr.writerow([e.height, e.kind, e.frm, e.to, e.iteration, e.payload_bytes, e.gas])


# -- bulk-transfer economics --------------------------------------------------

def gas_sweep_sizes(k_max: int = 6) -> list[float]:
    """Payload sizes 2**(k-1) characters for k = 0..k_max (the first is half a byte)."""
    return [2.0 ** (k - 1) for k in range(k_max + 1)]


def bulk_transfer_gas(size: float, total_bytes: int) -> tuple[float, int, float]:
    """(gas per transaction, transaction count, total gas) to move ``total_bytes``."""
    if size <= 0:
        raise ValueError("payload size must be positive")
    per_tx = gas_for_length(size)
    count = math.ceil(total_bytes / size)
    return per_tx, count, per_tx * count


__all__ = [
    "CONNECTION_EXISTS", "CONTRACT_ADDRESS", "Block", "ChainVerdict", "ContractError",
    "ContractState", "Event", "GAS_BASE", "GAS_LIMIT_EXCEEDED", "GAS_PER_BYTE", "Identity",
    "Ledger", "NO_CONNECTION", "NO_SELF_CONNECTION", "ONLY_OWNER", "ONLY_SENDER", "Receipt",
    "SealError", "Transaction", "bulk_transfer_gas", "demolish_connection",
    "establish_connection", "export_chain", "gas_cost", "generate_identity", "load_chain",
    "ZERO_HASH", "make_transaction", "seal_block", "verify_chain", "write_events_csv",
]
