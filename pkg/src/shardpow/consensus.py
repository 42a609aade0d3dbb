"""Block verification, heaviest-chain fork choice and network expansion.

Shard blocks go through six ordered checks and fail at the first one that
does not hold:

1. structure: version, linkage to the shard's MMR root, timestamps, body size
2. proof of work: header bits equal the expected target and the container's
   mining hash is below it
3. ``mm_number <= container.shard_count <= current shard count``
4. the shard proof links the SC header into the container's shard tree root
5. the merged-mining proof: encoding matches the container, the proof sits
   at the shard's own leaf, and ``mm_number`` equals the proved bound
6. transactions: shard id, minimum fee and transaction root

Beacon blocks use steps 1, 2, 3 (shard count set by the expansion
protocol) and 6.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence, TypeVar

from .blocks import TX_BYTES_LIMIT, BCBlock, SCBlock, read_stream, tx_root
from .chain import ChainState, DifficultyParams, block_reward, median_past_time, validate_timestamp
from .core import (COIN, MAX_TARGET, ZERO_HASH, BCHeader, EncodingError, SCHeader, Transaction, blake2s,
                   difficulty, encode_compact, meets_target, mining_hash)
from .merkle import root_from_path
from .mmr import WeightProofSample, weight_of
from .shard_tree import tree_height_for, verify_merged_mining
from .tree_encoding import MalformedEncoding, decode_orange

VERSION = 1
EXPANSION_WINDOW = 1024
EXPANSION_THRESHOLD = 768
ACTIVATION_DELAY = 10
NEW_SHARD_TARGET_FACTOR = 80
GENESIS_SHARD_DIFFICULTY_DIVISOR = 2


class VerificationError(Exception):
    def __init__(self, step: int, detail: str):
        super().__init__(f"step {step}: {detail}")
        self.step = step
        self.detail = detail

    def to_dict(self) -> dict:
        return {"ok": False, "step": self.step, "detail": self.detail}


@dataclass(frozen=True)
class ConsensusParams:
    bc: DifficultyParams = field(default_factory=DifficultyParams.beacon)
    sc: DifficultyParams = field(default_factory=DifficultyParams.shard)
    min_fee: int = COIN // 10_000
    version: int = VERSION

    def to_dict(self) -> dict:
        def dp(p: DifficultyParams) -> dict:
            d = asdict(p)
            d["min_difficulty"] = str(p.min_difficulty)
            d["clamp"] = [str(c) for c in p.clamp]
            return d
        return {"bc": dp(self.bc), "sc": dp(self.sc), "min_fee": self.min_fee, "version": self.version}

    @classmethod
    def from_dict(cls, d: dict) -> "ConsensusParams":
        def dp(x: dict) -> DifficultyParams:
            x = dict(x)
            x["min_difficulty"] = Fraction(x["min_difficulty"])
            x["clamp"] = tuple(Fraction(c) for c in x["clamp"])
            return DifficultyParams(**x)
        return cls(dp(d["bc"]), dp(d["sc"]), int(d["min_fee"]), int(d["version"]))


# ---------------------------------------------------------------------------
# genesis and expansion rules


def shard_genesis(shard_id: int, bc_block_hash: bytes, timestamp: int, target: int,
                  version: int = VERSION) -> SCBlock:
    """Genesis of a shard hanging off a beacon block.  The transaction root
    field carries a shard-specific tag so every genesis is distinct."""
    tag = blake2s(b"shard-genesis" + shard_id.to_bytes(4, "little"))
    target = min(target, MAX_TARGET)
    return SCBlock(SCHeader(version, bc_block_hash, tag, 1, timestamp, encode_compact(target)))


def beacon_genesis(shard_count: int, target: int, timestamp: int = 0, version: int = VERSION) -> BCBlock:
    return BCBlock(BCHeader(version, ZERO_HASH, ZERO_HASH, shard_count, 0, "", ZERO_HASH,
                            timestamp, encode_compact(target)))


def sc_leaf_data(header: SCHeader, container_hash: bytes) -> bytes:
    return header.serialize() + container_hash


def expansion_size(shard_count: int) -> int:
    """dN = max(1, 2**(ceil(log2 N) - 9))."""
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    return 1 << max(0, (shard_count - 1).bit_length() - 9)


def expansion_check(beacon: Sequence[BCHeader], height: int) -> int | None:
    """dN if block ``height`` triggers an expansion, else None.

    The window is the 1024 blocks just below ``height``: more than 768 of
    them must vote and all must report the same shard count.
    """
    if height < EXPANSION_WINDOW:
        return None
    window = beacon[height - EXPANSION_WINDOW:height]
    if len(window) != EXPANSION_WINDOW:
        raise ValueError("beacon prefix shorter than the requested height")
    return window_trigger(window)


def window_trigger(window: Sequence[BCHeader]) -> int | None:
    """The expansion rule applied to exactly the 1024 headers below a block."""
    ones = sum(h.vote_flag for h in window)
    counts = {h.shard_count for h in window}
    if ones > EXPANSION_THRESHOLD and len(counts) == 1:
        return expansion_size(window[0].shard_count)
    return None


def new_shard_target(bc_target: int) -> int:
    return min(bc_target * NEW_SHARD_TARGET_FACTOR, MAX_TARGET)


@dataclass(frozen=True)
class Expansion:
    trigger_height: int
    size: int
    first_shard: int

    @property
    def activation_height(self) -> int:
        return self.trigger_height + ACTIVATION_DELAY

    @property
    def reference_height(self) -> int:
        return self.activation_height - 1

    @property
    def new_shards(self) -> range:
        return range(self.first_shard, self.first_shard + self.size)


T = TypeVar("T")


def fork_choice(candidates: Iterable[T], weight: Callable[[T], object] = lambda c: c.total_weight) -> T:
    """Heaviest candidate; among equal weights the earliest one wins."""
    best = None
    best_w = None
    for c in candidates:
        w = weight(c)
        if best_w is None or w > best_w:
            best, best_w = c, w
    if best_w is None:
        raise ValueError("no candidate tips")
    return best


# ---------------------------------------------------------------------------
# network state


class NetworkState:
    """Accepted beacon and shard chains as one node sees them (no forks)."""

    def __init__(self, params: ConsensusParams, genesis: BCBlock):
        self.params = params
        self.beacon = ChainState(None, params.bc)
        self.beacon.append(genesis.header, genesis.body, 0, genesis.header.serialize())
        # issuance state after each beacon block, looked up by the MMR root that follows it
        self._beacon_heights = {self.beacon.mmr.root: 0}
        self._coefficient_history = [self.beacon.coefficients]
        self.current_shard_count = genesis.header.shard_count
        self.shards: dict[int, ChainState] = {}
        self.pending: Expansion | None = None
        self.expansions: list[Expansion] = []
        sc_target = min(genesis.header.target * GENESIS_SHARD_DIFFICULTY_DIVISOR, MAX_TARGET)
        for sid in range(self.current_shard_count):
            self._open_shard(sid, 0, sc_target)

    @classmethod
    def create(cls, params: ConsensusParams, shard_count: int, bc_target: int,
               timestamp: int = 0) -> "NetworkState":
        return cls(params, beacon_genesis(shard_count, bc_target, timestamp, params.version))

    def _open_shard(self, shard_id: int, bc_height: int, target: int) -> None:
        ref = self.beacon.entries[bc_height].header
        block = shard_genesis(shard_id, ref.hash(), ref.timestamp, target, self.params.version)
        chain = ChainState(shard_id, self.params.sc, genesis_bc_index=bc_height)
        chain.append(block.header, None, 0, sc_leaf_data(block.header, ref.hash()))
        self.shards[shard_id] = chain

    def shard_genesis(self, shard_id: int) -> SCBlock:
        e = self.shards[shard_id].entries[0]
        return SCBlock(e.header, None)

    def expected_shard_count(self, height: int) -> int:
        n = self.beacon.entries[min(height, self.beacon.height)].header.shard_count
        if height > self.beacon.height and self.pending and height >= self.pending.activation_height:
            return n + self.pending.size
        return n

    # -- beacon ------------------------------------------------------------

    def verify_bc_block(self, block: BCBlock, peer_time: int | None = None) -> None:
        h, p = block.header, self.params
        beacon = self.beacon
        height = beacon.height + 1
        if h.version != p.version:
            raise VerificationError(1, "unsupported version")
        if h.prev_commitment != beacon.mmr.root:
            raise VerificationError(1, "prev_commitment is not the beacon MMR root")
        tree_h = tree_height_for(h.shard_count)
        if len(h.tree_encoding) > 18 * tree_h:
            raise VerificationError(1, "tree encoding exceeds 18h bits")
        try:
            decode_orange(h.tree_encoding, tree_h)
        except MalformedEncoding as exc:
            raise VerificationError(1, f"bad tree encoding: {exc}") from None
        if not validate_timestamp(h.timestamp, beacon.timestamps(-p.bc.mpt_window), p.bc, peer_time):
            raise VerificationError(1, "timestamp outside the accepted window")
        if block.body.tx_bytes() > TX_BYTES_LIMIT:
            raise VerificationError(1, "transactions exceed 24 KiB")

        target = beacon.expected_target(height)
        if h.bits != encode_compact(target):
            raise VerificationError(2, "bits differ from the expected target")
        if not meets_target(mining_hash(h), h.target):
            raise VerificationError(2, "mining hash is not below the target")

        if h.shard_count != self.expected_shard_count(height):
            raise VerificationError(3, f"shard count {h.shard_count} disagrees with the expansion protocol")

        self._check_txs(block.body.transactions, h.tx_merkle_root, None)

    def add_beacon(self, block: BCBlock, peer_time: int | None = None, reward: int | None = None) -> int:
        """Verify and append; returns the block reward."""
        self.verify_bc_block(block, peer_time)
        beacon = self.beacon
        height = beacon.height + 1
        if reward is None:
            epoch = beacon.mining_epoch(height)
            reward = block_reward(difficulty(block.header.target), epoch,
                                  beacon.coefficients.coefficients(epoch))
        beacon.append(block.header, block.body, reward, block.header.serialize())
        self._beacon_heights[beacon.mmr.root] = height
        self._coefficient_history.append(beacon.coefficients)
        if self.pending and height + 1 == self.pending.activation_height:
            exp = self.pending
            for sid in exp.new_shards:
                self._open_shard(sid, height, new_shard_target(block.header.target))
        if self.pending and height == self.pending.activation_height:
            self.current_shard_count += self.pending.size
            self.expansions.append(self.pending)
            self.pending = None
        if self.pending is None and height + 1 >= EXPANSION_WINDOW:
            d_n = window_trigger([e.header for e in beacon.entries[-EXPANSION_WINDOW:]])
            if d_n is not None:
                self.pending = Expansion(height + 1, d_n, self.current_shard_count)
        return reward

    # -- shards ------------------------------------------------------------

    def verify_sc_block(self, shard_id: int, block: SCBlock, peer_time: int | None = None) -> None:
        if shard_id not in self.shards:
            raise VerificationError(1, f"unknown shard {shard_id}")
        chain = self.shards[shard_id]
        h, body, p = block.header, block.body, self.params
        height = chain.height + 1
        if body is None:
            raise VerificationError(1, "missing body")
        if h.version != p.version:
            raise VerificationError(1, "unsupported version")
        if h.prev_commitment != chain.mmr.root:
            raise VerificationError(1, "prev_commitment is not the shard MMR root")
        if not validate_timestamp(h.timestamp, chain.timestamps(-p.sc.mpt_window), p.sc, peer_time):
            raise VerificationError(1, "timestamp outside the accepted window")
        if body.tx_bytes() > TX_BYTES_LIMIT:
            raise VerificationError(1, "transactions exceed 24 KiB")

        container = body.bc_container
        target = chain.expected_target(height)
        if h.bits != encode_compact(target):
            raise VerificationError(2, "bits differ from the expected shard target")
        if not meets_target(mining_hash(container), h.target):
            raise VerificationError(2, "container mining hash is not below the shard target")

        if not h.mm_number <= container.shard_count <= self.current_shard_count:
            raise VerificationError(3, "MM_number <= block shard count <= current shard count fails")
        if not shard_id < container.shard_count:
            raise VerificationError(3, "shard is not covered by the container's shard count")

        tree_h = tree_height_for(container.shard_count)
        proof = body.shard_proof
        if proof.tree_height != tree_h:
            raise VerificationError(4, "shard proof has the wrong tree height")
        if root_from_path(h.hash(), proof) != container.shard_tree_root:
            raise VerificationError(4, "shard proof does not reach the container's shard tree root")

        if body.mm_proof.orange_encoding.bits != container.tree_encoding:
            raise VerificationError(5, "proof encoding differs from the container's")
        if len(container.tree_encoding) > 18 * tree_h:
            raise VerificationError(5, "tree encoding exceeds 18h bits")
        if proof.leaf_index != shard_id:
            raise VerificationError(5, f"header sits at leaf {proof.leaf_index}, not its own leaf {shard_id}")
        if not verify_merged_mining(container.shard_tree_root, body.mm_proof, shard_id,
                                    h.mm_number, container.shard_count):
            raise VerificationError(5, "merged-mining proof rejected")

        self._check_txs(body.transactions, h.tx_merkle_root, shard_id)

    def add_shard(self, shard_id: int, block: SCBlock, peer_time: int | None = None,
                  reward: int | None = None) -> int:
        self.verify_sc_block(shard_id, block, peer_time)
        chain = self.shards[shard_id]
        height = chain.height + 1
        if reward is None:
            epoch = chain.mining_epoch(height)
            coeffs = self.coefficients_for(block.body.bc_container).coefficients(epoch)
            reward = block_reward(difficulty(block.header.target), epoch, coeffs, block.header.mm_number)
        chain.append(block.header, block.body, reward,
                     sc_leaf_data(block.header, block.body.bc_container.hash()))
        return reward

    def coefficients_for(self, container: BCHeader):
        """Issuance state of the beacon block a container builds on (the
        current tip's state when that block is unknown)."""
        height = self._beacon_heights.get(container.prev_commitment)
        if height is None:
            return self.beacon.coefficients
        return self._coefficient_history[height]

    def _check_txs(self, txs: Sequence[Transaction], root: bytes, shard_id: int | None) -> None:
        for tx in txs:
            if shard_id is not None and tx.shard_id != shard_id:
                raise VerificationError(6, f"transaction for shard {tx.shard_id} in shard {shard_id}")
            if tx.fee < self.params.min_fee:
                raise VerificationError(6, "transaction fee below the minimum")
        if tx_root(txs) != root:
            raise VerificationError(6, "transaction root mismatch")

    def mpt(self, shard_id: int | None) -> int:
        chain = self.beacon if shard_id is None else self.shards[shard_id]
        params = self.params.bc if shard_id is None else self.params.sc
        return median_past_time(chain.timestamps(-params.mpt_window), params.mpt_window)


@dataclass
class BlockReport:
    chain: str  # "bc" or the shard id
    height: int
    ok: bool
    step: int | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        d = {"chain": self.chain, "height": self.height, "ok": self.ok}
        if not self.ok:
            d.update(step=self.step, detail=self.detail)
        return d


def replay_stream(data: bytes) -> tuple[NetworkState | None, list[BlockReport]]:
    """Verify a network export from scratch, one report per block.

    Beacon records come first; each shard's records start with its genesis,
    which must equal the one the beacon history implies.  After a block
    fails, later blocks of the same chain are reported as unverifiable
    (their linkage depends on it) while other chains carry on.  Raises
    EncodingError for unreadable input.
    """
    meta, records = read_stream(data)
    try:
        params = ConsensusParams.from_dict(meta["consensus"])
    except (KeyError, TypeError, ValueError) as exc:
        raise EncodingError(f"bad consensus parameters: {exc}") from None
    if not records or records[0].shard_id is not None:
        raise EncodingError("export must start with the beacon genesis")
    g = records[0].block.header
    if g.prev_commitment != ZERO_HASH or g.nonce != 0 or g.tree_encoding or g.shard_count < 1:
        return None, [BlockReport("bc", 0, False, 1, "malformed beacon genesis")]
    state = NetworkState(params, records[0].block)
    reports = [BlockReport("bc", 0, True)]
    broken: set = set()
    heights: dict = {}
    seen_shard = False
    for rec in records[1:]:
        sid = rec.shard_id
        if sid is None and seen_shard:
            raise EncodingError("beacon records must precede shard records")
        seen_shard = seen_shard or sid is not None
        name = "bc" if sid is None else str(sid)
        if sid in heights:
            height = heights[sid] + 1
        else:
            height = 1 if sid is None else 0
        heights[sid] = height
        if sid is not None and height == 0:
            ok = sid in state.shards and rec.block == state.shard_genesis(sid)
            reports.append(BlockReport(name, 0, ok, None if ok else 1, "" if ok else "shard genesis mismatch"))
            if not ok:
                broken.add(sid)
            continue
        if sid in broken:
            reports.append(BlockReport(name, height, False, None, "parent failed verification"))
            continue
        try:
            if sid is None:
                state.add_beacon(rec.block)
            else:
                state.add_shard(sid, rec.block)
        except VerificationError as exc:
            broken.add(sid)
            reports.append(BlockReport(name, height, False, exc.step, exc.detail))
        else:
            reports.append(BlockReport(name, height, True))
    return state, reports


def verify_bc_block(state: NetworkState, block: BCBlock, peer_time: int | None = None) -> None:
    state.verify_bc_block(block, peer_time)


def verify_sc_block(state: NetworkState, shard_id: int, block: SCBlock, peer_time: int | None = None) -> None:
    state.verify_sc_block(shard_id, block, peer_time)


def pow_leaf_check(sample: WeightProofSample) -> bool:
    """Light-client check of a sampled shard leaf.

    The sample must carry the leaf payload (SC header bytes followed by the
    container hash) and, as ``extra``, the serialized container.
    """
    data = sample.leaf_data
    if len(data) < 32 or blake2s(sample.extra) != data[-32:]:
        return False
    try:
        header = SCHeader.deserialize(data[:-32])
        container = BCHeader.deserialize(sample.extra)
        target = header.target
    except (EncodingError, ValueError):
        return False
    return meets_target(mining_hash(container), target) and sample.leaf_weight == weight_of(difficulty(target))


__all__ = [
    "ConsensusParams", "Expansion", "NetworkState", "BlockReport", "VerificationError", "beacon_genesis",
    "expansion_check", "expansion_size", "fork_choice", "new_shard_target", "pow_leaf_check",
    "replay_stream", "shard_genesis", "verify_bc_block", "verify_sc_block", "window_trigger",
]
