"""Deterministic discrete-event simulation of a merged-mined network.

Each miner owns an exponential clock with rate ``hash_rate * T_max / 2**256``
where ``T_max`` is the largest target among the chains it currently mines.
When the clock fires, the winning hash is uniform below ``T_max`` and
produces a block on every chain whose target it clears, so one lucky hash
can extend the beacon and several shards at once, all sharing one
container.  Clocks are redrawn only when ``T_max`` or the hash rate
changes; because the process is memoryless this is exact.

Three modes share the same event loop:

``fast``  ledger records only (no hashing); large runs
``full``  real headers, bodies and proofs with ground nonces, so every
          block verifies cold
``real``  beacon only; miners grind real nonces and time advances by
          ``attempts / hash_rate``

Timestamps are ``max(floor(t), median past time + 1)``.  Block weight for
fork choice is ``floor(2**288 / target)``; ties keep the block seen first.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import math
import random
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Any, Iterable

from .blocks import BCBlock, BCBody, SCBlock, SCBody, StreamRecord, tx_root, write_stream
from .chain import (BC_EPOCH, DAA_MODES, PAPER_LITERAL, SC_EPOCH, CoefficientState, DifficultyParams,
                    mining_epoch, monetary_creation, retarget)
from .consensus import (ACTIVATION_DELAY, EXPANSION_THRESHOLD, EXPANSION_WINDOW,
                        GENESIS_SHARD_DIFFICULTY_DIVISOR, ConsensusParams, beacon_genesis, expansion_size,
                        new_shard_target, sc_leaf_data, shard_genesis)
from .core import (COIN, MAX_TARGET, BCHeader, SCHeader, Transaction, blake2s, decode_compact,
                   encode_compact, mining_hasher, target_from_difficulty)
from .mmr import append_to_peaks, root_of_peaks, target_weight
from .shard_tree import ShardMerkleTree

MODES = ("fast", "full", "real")
BEACON = "bc"
_WINDOW_MASK = (1 << EXPANSION_WINDOW) - 1
_NONCE = struct.Struct("<Q").pack


class SimConfigError(ValueError):
    """The scenario cannot be simulated as configured."""


@dataclass
class MinerConfig:
    id: str
    hash_rate: float
    shard_subset: Any = "all"  # "all" or an iterable of shard ids; empty = beacon only
    latency_ms: float = 0.0
    honest: bool = True
    vote: float = 0.0  # probability of setting the expansion vote flag

    def __post_init__(self):
        if not self.hash_rate > 0:
            raise SimConfigError(f"miner {self.id}: hash_rate must be positive")
        if self.latency_ms < 0:
            raise SimConfigError(f"miner {self.id}: latency must be non-negative")
        if not 0 <= self.vote <= 1:
            raise SimConfigError(f"miner {self.id}: vote must be a probability")
        if self.shard_subset != "all":
            try:
                subset = tuple(sorted({int(s) for s in self.shard_subset}))
            except (TypeError, ValueError):
                raise SimConfigError(f"miner {self.id}: shard_subset must be 'all' or a list of ids") from None
            if any(s < 0 for s in subset):
                raise SimConfigError(f"miner {self.id}: negative shard id")
            self.shard_subset = subset

    def shards(self, count: int) -> tuple[int, ...]:
        if self.shard_subset == "all":
            return tuple(range(count))
        return tuple(s for s in self.shard_subset if s < count)


@dataclass
class RateChange:
    """Multiply hash rates by ``factor`` at simulated ``time`` (one miner or all)."""

    time: float
    factor: float
    miner: str | None = None


@dataclass
class SimConfig:
    miners: list[MinerConfig]
    seed: int = 0
    initial_shards: int = 1
    duration: float | None = None
    max_bc_blocks: int | None = None
    hash_space_bits: int = 32
    bc_difficulty: float = 2 ** 20
    min_difficulty: float = 1.0
    daa_mode: str = PAPER_LITERAL
    adjust_difficulty: bool = True
    bc_epoch: int = BC_EPOCH
    sc_epoch: int = SC_EPOCH
    mode: str = "fast"
    tx_per_block: int = 0
    min_fee: int = COIN // 10_000
    rate_changes: list[RateChange] = field(default_factory=list)
    record_events: bool = True

    def __post_init__(self):
        self.miners = [m if isinstance(m, MinerConfig) else MinerConfig(**m) for m in self.miners]
        self.rate_changes = [r if isinstance(r, RateChange) else RateChange(**r) for r in self.rate_changes]
        if not self.miners:
            raise SimConfigError("need at least one miner")
        ids = [m.id for m in self.miners]
        if len(set(ids)) != len(ids):
            raise SimConfigError("miner ids must be unique")
        if not 0 <= self.seed < 1 << 64:
            raise SimConfigError("seed must be a 64-bit unsigned integer")
        if self.duration is None and self.max_bc_blocks is None:
            raise SimConfigError("set duration or max_bc_blocks")
        if self.mode not in MODES:
            raise SimConfigError(f"mode must be one of {MODES}")
        if self.daa_mode not in DAA_MODES:
            raise SimConfigError(f"daa_mode must be one of {DAA_MODES}")
        if self.initial_shards < 1:
            raise SimConfigError("initial_shards must be >= 1")
        if not 8 <= self.hash_space_bits <= 256:
            raise SimConfigError("hash_space_bits must lie in [8, 256]")
        if not 1 <= self.bc_difficulty <= 2 ** self.hash_space_bits:
            raise SimConfigError("bc_difficulty must lie in [1, 2**hash_space_bits]")
        if not 0 < self.min_difficulty <= self.bc_difficulty:
            raise SimConfigError("min_difficulty must lie in (0, bc_difficulty]")
        if self.mode == "real" and any(m.shards(self.initial_shards) for m in self.miners):
            raise SimConfigError("real-hashing mode mines the beacon only; give every miner shard_subset = []")
        if self.tx_per_block < 0:
            raise SimConfigError("tx_per_block must be non-negative")
        known = set(ids)
        for r in self.rate_changes:
            if r.miner is not None and r.miner not in known:
                raise SimConfigError(f"rate change names unknown miner {r.miner}")
            if not r.factor > 0:
                raise SimConfigError("rate change factor must be positive")

    def consensus_params(self) -> ConsensusParams:
        d0 = Fraction(self.min_difficulty)
        return ConsensusParams(
            bc=DifficultyParams.beacon(epoch_length=self.bc_epoch, min_difficulty=d0, mode=self.daa_mode,
                                       adjust=self.adjust_difficulty),
            sc=DifficultyParams.shard(epoch_length=self.sc_epoch, min_difficulty=d0, mode=self.daa_mode,
                                      adjust=self.adjust_difficulty),
            min_fee=self.min_fee)

    def to_dict(self) -> dict:
        d = asdict(self)
        for m in d["miners"]:
            if m["shard_subset"] != "all":
                m["shard_subset"] = list(m["shard_subset"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise SimConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise SimConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# records


class _Rec:
    __slots__ = ("id", "chain", "parent", "height", "weight", "target", "timestamp", "recent", "time",
                 "miner", "reward", "next_target", "valid", "coeff", "shard_count", "mask",
                 "stable_since", "pending", "mm_number", "block", "peaks", "container")

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw.get(k))


class _Chain:
    def __init__(self, key, params: DifficultyParams, genesis_bc_index: int | None, window: int):
        self.key = key
        self.params = params
        self.gidx = genesis_bc_index
        self.window = window
        self.blocks: list[_Rec] = []

    @property
    def name(self) -> str:
        return BEACON if self.key is None else str(self.key)


class _View:
    __slots__ = ("tips", "known", "orphans")

    def __init__(self, track: bool):
        self.tips: dict = {}
        self.known: dict | None = {} if track else None
        self.orphans: dict = {}


class _Miner:
    __slots__ = ("cfg", "index", "rate", "version", "view", "t_max", "candidate")

    def __init__(self, cfg: MinerConfig, index: int, view: _View):
        self.cfg, self.index, self.rate, self.view = cfg, index, cfg.hash_rate, view
        self.version = 0
        self.t_max = None
        self.candidate = None


# ---------------------------------------------------------------------------
# statistics


@dataclass
class ChainStats:
    chain: str
    main_blocks: int
    stale_blocks: int
    reorgs: int
    supply: int
    mean_block_time: float | None
    epochs: list[dict]
    supply_series: list[dict]
    monetary_creation: list[dict]


@dataclass
class SimStats:
    sim_time: float
    chains: dict[str, ChainStats]
    miners: dict[str, dict]
    expansions: list[dict]
    rejected_blocks: int
    attempts: dict | None = None

    @property
    def total_supply(self) -> int:
        return sum(c.supply for c in self.chains.values())

    @property
    def beacon_to_shards_ratio(self) -> float | None:
        shards = sum(c.supply for k, c in self.chains.items() if k != BEACON)
        return self.chains[BEACON].supply / shards if shards else None

    def shares(self) -> dict[str, float]:
        total = sum(m["coins"] for m in self.miners.values())
        return {k: (m["coins"] / total if total else 0.0) for k, m in self.miners.items()}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_supply"] = self.total_supply
        d["total_supply_coins"] = self.total_supply / COIN
        d["beacon_to_shards_ratio"] = self.beacon_to_shards_ratio
        return d

    EPOCH_COLUMNS = ("chain", "epoch", "first_height", "last_height", "blocks", "mean_block_time",
                     "difficulty", "supply_end")
    MINER_COLUMNS = ("miner", "hash_rate", "blocks", "coins", "share")

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.EPOCH_COLUMNS)
        for c in self.chains.values():
            for e in c.epochs:
                w.writerow([c.chain] + [e[k] for k in self.EPOCH_COLUMNS[1:]])
        return buf.getvalue()

    def miners_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.MINER_COLUMNS)
        shares = self.shares()
        for k, m in self.miners.items():
            w.writerow([k, m["hash_rate"], m["blocks"], m["coins"], f"{shares[k]:.6f}"])
        return buf.getvalue()


@dataclass
class SimResult:
    config: SimConfig
    stats: SimStats
    events: list[dict]
    main_chains: dict[Any, list] = field(repr=False)

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def export(self) -> bytes:
        """Main chains as a network export stream (full and real modes)."""
        recs = self.main_chains
        if any(r.block is None for chain in recs.values() for r in chain):
            raise ValueError("only full and real modes keep block data")
        header = {"consensus": self.config.consensus_params().to_dict(),
                  "initial_shards": self.config.initial_shards,
                  "bc_difficulty": self.config.bc_difficulty}
        stream = [StreamRecord(None, r.block) for r in recs[None]]
        for key in sorted(k for k in recs if k is not None):
            stream += [StreamRecord(key, r.block) for r in recs[key]]
        return write_stream(header, stream)


# ---------------------------------------------------------------------------
# the simulator


class Simulation:
    def __init__(self, config: SimConfig):
        self.cfg = config
        self.rng = random.Random(config.seed)
        self.params = config.consensus_params()
        self.full = config.mode in ("full", "real")
        self.events: list[dict] = []
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.rejected = 0
        self.attempts: list[int] = []
        self.expansions: list[dict] = []
        self._bounds: dict = {}
        self._products: dict = {}
        self.chains: dict[Any, _Chain] = {}
        self.reorgs: dict[Any, int] = {}

        shared = all(m.latency_ms == 0 for m in config.miners)
        self.shared = shared
        self.observer = _View(track=False)
        views = [self.observer if shared else _View(track=True) for _ in config.miners]
        self.miners = [_Miner(m, i, v) for i, (m, v) in enumerate(zip(config.miners, views))]
        self.views = [self.observer] + ([] if shared else views)

        t0 = decode_compact(encode_compact(target_from_difficulty(config.bc_difficulty)))
        beacon = _Chain(None, self.params.bc, None, self.params.bc.mpt_window)
        self.chains[None] = beacon
        g = _Rec(chain=None, parent=None, height=0, weight=target_weight(t0), target=t0, timestamp=0,
                 recent=(0,), time=0.0, miner=None, reward=0, valid=True, coeff=CoefficientState(),
                 shard_count=config.initial_shards, mask=0, stable_since=0, pending=None)
        if self.full:
            g.block = beacon_genesis(config.initial_shards, t0, 0, self.params.version)
            g.peaks = append_to_peaks((), g.block.hash(), g.weight)
        self._add(beacon, g)
        sc_target = min(t0 * GENESIS_SHARD_DIFFICULTY_DIVISOR, MAX_TARGET)
        for sid in range(config.initial_shards):
            self._open_shard(sid, g, sc_target)
        for v in self.views:
            self._deliver_genesis(v)

    # -- chain bookkeeping -------------------------------------------------

    def _add(self, chain: _Chain, rec: _Rec) -> None:
        rec.id = len(chain.blocks)
        chain.blocks.append(rec)

    def _open_shard(self, sid: int, bc_rec: _Rec, target: int) -> None:
        target = decode_compact(encode_compact(min(target, MAX_TARGET)))
        chain = _Chain(sid, self.params.sc, bc_rec.height, self.params.sc.mpt_window)
        self.chains[sid] = chain
        self.reorgs[sid] = 0
        rec = _Rec(chain=sid, parent=None, height=0, weight=target_weight(target), target=target,
                   timestamp=bc_rec.timestamp, recent=(bc_rec.timestamp,), time=self.now, miner=None,
                   reward=0, valid=True, mm_number=1)
        if self.full:
            ref = bc_rec.block.hash()
            rec.block = shard_genesis(sid, ref, bc_rec.timestamp, target, self.params.version)
            rec.peaks = append_to_peaks((), blake2s(sc_leaf_data(rec.block.header, ref)), rec.weight)
        self._add(chain, rec)

    def _deliver_genesis(self, view: _View) -> None:
        for key, chain in self.chains.items():
            if key not in view.tips:
                view.tips[key] = chain.blocks[0]
                if view.known is not None:
                    view.known.setdefault(key, set()).add(0)

    def next_target(self, chain: _Chain, rec: _Rec) -> int:
        if rec.next_target is None:
            n = chain.params.epoch_length
            if (rec.height + 1) % n:
                rec.next_target = rec.target
            else:
                stamps = []
                r = rec
                for _ in range(n):
                    stamps.append(r.timestamp)
                    r = chain.blocks[r.parent] if r.parent is not None else None
                stamps.reverse()
                rec.next_target = retarget(stamps, rec.target, rec.height, chain.params, chain.gidx)
        return rec.next_target

    @staticmethod
    def _next_shard_count(bc: _Rec) -> int:
        p = bc.pending
        if p is not None and bc.height + 1 >= p[1]:
            return bc.shard_count + p[2]
        return bc.shard_count

    def _product(self, coeff: CoefficientState, epoch: int) -> tuple[int, int]:
        key = (coeff.ks, epoch)
        v = self._products.get(key)
        if v is None:
            v = self._products[key] = coeff.product(epoch).as_integer_ratio()
        return v

    def _bound(self, count: int, subset: tuple[int, ...]) -> int:
        key = (count, subset)
        v = self._bounds.get(key)
        if v is None:
            tree = ShardMerkleTree(count, {s: bytes([1]) * 32 for s in subset})
            try:
                tree.prove_merged_mining(subset[0])
            except ValueError as exc:
                raise SimConfigError(f"shard subset {subset} of {count} shards: {exc}") from None
            v = self._bounds[key] = tree.mined_upper_bound()
        return v

    # -- miner scheduling --------------------------------------------------

    def _mined_shards(self, miner: _Miner, bc: _Rec) -> tuple[int, ...]:
        count = self._next_shard_count(bc)
        tips = miner.view.tips
        return tuple(s for s in miner.cfg.shards(count) if s in tips)

    def _t_max(self, miner: _Miner) -> int:
        bc = miner.view.tips[None]
        t = self.next_target(self.chains[None], bc)
        for s in self._mined_shards(miner, bc):
            t = max(t, self.next_target(self.chains[s], miner.view.tips[s]))
        return t

    def _push(self, time: float, kind: int, a, b) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (time, self.seq, kind, a, b))

    def _schedule(self, miner: _Miner, force: bool = False) -> None:
        if self.cfg.mode == "real":
            self._schedule_real(miner)
            return
        t_max = self._t_max(miner)
        if not force and t_max == miner.t_max:
            return
        miner.t_max = t_max
        miner.version += 1
        rate = miner.rate * (t_max / 2 ** 256)
        self._push(self.now + self.rng.expovariate(rate), 0, miner.index, miner.version)

    def _schedule_real(self, miner: _Miner) -> None:
        """Grind a real candidate now; the success time follows from the attempt count."""
        bc = miner.view.tips[None]
        header = self._bc_candidate(miner, bc, "", None, ())
        start = self.rng.getrandbits(63)
        nonce = _find_nonce(mining_hasher(header), header.target, start)
        attempts = nonce - start + 1
        miner.candidate = (header.with_nonce(nonce), attempts)
        miner.version += 1
        self._push(self.now + attempts / miner.rate, 0, miner.index, miner.version)

    # -- block production --------------------------------------------------

    def _timestamp(self, parent: _Rec) -> int:
        recent = parent.recent
        return max(int(self.now), sorted(recent)[len(recent) // 2] + 1)

    def _recent(self, chain: _Chain, parent: _Rec, ts: int) -> tuple:
        return (parent.recent + (ts,))[-chain.window:]

    def _bc_candidate(self, miner: _Miner, bc: _Rec, encoding: str, root, txs) -> BCHeader:
        count = self._next_shard_count(bc)
        flag = self._vote(miner)
        return BCHeader(self.params.version, root_of_peaks(bc.peaks), tx_root(txs), count, flag, encoding,
                        root if root is not None else bytes(32), self._timestamp(bc),
                        encode_compact(self.next_target(self.chains[None], bc)))

    def _vote(self, miner: _Miner) -> int:
        v = miner.cfg.vote
        if v <= 0:
            return 0
        if v >= 1:
            return 1
        return 1 if self.rng.random() < v else 0

    def _txs(self, shard_id: int) -> tuple[Transaction, ...]:
        n = self.cfg.tx_per_block
        return tuple(Transaction(f"acct{self.rng.randrange(1000)}", f"acct{self.rng.randrange(1000)}",
                                 1 + self.rng.randrange(COIN), self.cfg.min_fee, shard_id) for _ in range(n))

    def _mine(self, miner: _Miner, x: float | None = None) -> list[tuple[Any, _Rec]]:
        """One success of ``miner``'s clock; ``x`` is the winning hash value
        (drawn uniformly below the miner's largest target when omitted).
        Returns the (chain, record) pairs produced."""
        view = miner.view
        bc = view.tips[None]
        beacon = self.chains[None]
        if self.cfg.mode == "real":
            header, attempts = miner.candidate
            self.attempts.append(attempts)
            return [(None, self._emit_beacon(miner, bc, header, BCBlock(header), header.vote_flag))]

        shards = self._mined_shards(miner, bc)
        t_bc = self.next_target(beacon, bc)
        if x is None:
            x = self.rng.random() * (miner.t_max or self._t_max(miner))
        bc_wins = x < t_bc
        winners = [s for s in shards if x < self.next_target(self.chains[s], view.tips[s])]
        out = []
        if not bc_wins and not winners:
            self._schedule(miner, force=True)
            return out
        count = self._next_shard_count(bc)
        honest_mm = self._bound(count, shards) if shards else 1
        mm = honest_mm if miner.cfg.honest else 1

        if not self.full:
            flag = self._vote(miner) if bc_wins else 0
            if bc_wins:
                out.append((None, self._emit_beacon(miner, bc, None, None, flag)))
            for s in winners:
                out.append((s, self._emit_shard(miner, s, view.tips[s], bc, mm, mm == honest_mm, None)))
            self._schedule(miner, force=True)
            return out

        # full mode: real candidates for every mined shard, one container
        headers, bodies_txs = {}, {}
        for s in shards:
            tip = view.tips[s]
            chain = self.chains[s]
            txs = self._txs(s)
            bodies_txs[s] = txs
            headers[s] = SCHeader(self.params.version, root_of_peaks(tip.peaks), tx_root(txs), mm,
                                  self._timestamp(tip), encode_compact(self.next_target(chain, tip)))
        tree = ShardMerkleTree(count, {s: h.hash() for s, h in headers.items()}) if shards else None
        proof = tree.prove_merged_mining(shards[0]) if tree else None
        bc_txs = self._txs(0) if bc_wins else ()
        container = self._bc_candidate(miner, bc, proof.orange_encoding.bits if proof else "",
                                       tree.root if tree else None, bc_txs)
        need = min(([t_bc] if bc_wins else [])
                   + [self.next_target(self.chains[s], view.tips[s]) for s in winners])
        container = _grind(container, need, self.rng.getrandbits(63))
        if bc_wins:
            block = BCBlock(container, BCBody(bc_txs))
            out.append((None, self._emit_beacon(miner, bc, container, block, container.vote_flag)))
        for s in winners:
            body = SCBody(container, tree.shard_proof(s), tree.prove_merged_mining(s), bodies_txs[s])
            block = SCBlock(headers[s], body)
            out.append((s, self._emit_shard(miner, s, view.tips[s], bc, mm, mm == honest_mm, block)))
        self._schedule(miner, force=True)
        return out

    def _emit_beacon(self, miner: _Miner, parent: _Rec, header: BCHeader | None, block, flag: int) -> _Rec:
        beacon = self.chains[None]
        height = parent.height + 1
        target = self.next_target(beacon, parent)
        ts = header.timestamp if header is not None else self._timestamp(parent)
        count = self._next_shard_count(parent)
        epoch = mining_epoch(height)
        num, den = self._product(parent.coeff, epoch)
        reward = ((1 << 256) * num) // (target * den)
        rec = _Rec(chain=None, parent=parent.id, height=height, weight=parent.weight + target_weight(target),
                   target=target, timestamp=ts, recent=self._recent(beacon, parent, ts), time=self.now,
                   miner=miner.index, reward=reward, valid=True, shard_count=count,
                   mask=((parent.mask << 1) | flag) & _WINDOW_MASK,
                   stable_since=parent.stable_since if count == parent.shard_count else height)
        rec.coeff = parent.coeff.advance(height, Fraction(1 << 256, target))
        pending = parent.pending
        if pending is not None and height >= pending[1]:
            pending = None
        if (pending is None and height + 1 >= EXPANSION_WINDOW
                and rec.stable_since <= height + 1 - EXPANSION_WINDOW
                and rec.mask.bit_count() > EXPANSION_THRESHOLD):
            trigger = height + 1
            pending = (trigger, trigger + ACTIVATION_DELAY, expansion_size(count), count)
        rec.pending = pending
        if block is not None:
            rec.block = block
            rec.peaks = append_to_peaks(parent.peaks, block.hash(), rec.weight - parent.weight)
        self._add(beacon, rec)
        if pending is not None and height == pending[1] - 1 and pending[3] not in self.chains:
            for sid in range(pending[3], pending[3] + pending[2]):
                self._open_shard(sid, rec, new_shard_target(target))
            self.expansions.append({"trigger_height": pending[0], "activation_height": pending[1],
                                    "size": pending[2], "new_shards": list(range(pending[3], pending[3] + pending[2])),
                                    "time": self.now})
            self._log({"type": "expansion", "trigger": pending[0], "activation": pending[1], "size": pending[2]})
            for v in self.views:
                self._deliver_genesis(v)
        self._publish(miner, beacon, rec)
        return rec

    def _emit_shard(self, miner: _Miner, sid: int, parent: _Rec, bc: _Rec, mm: int, valid: bool, block) -> _Rec:
        chain = self.chains[sid]
        height = parent.height + 1
        target = self.next_target(chain, parent)
        ts = block.header.timestamp if block is not None else self._timestamp(parent)
        epoch = mining_epoch(height, chain.gidx)
        num, den = self._product(bc.coeff, epoch)
        reward = ((1 << 256) * num) // (target * den * mm)
        rec = _Rec(chain=sid, parent=parent.id, height=height, weight=parent.weight + target_weight(target),
                   target=target, timestamp=ts, recent=self._recent(chain, parent, ts), time=self.now,
                   miner=miner.index, reward=reward, valid=valid, mm_number=mm, container=bc.id)
        if block is not None:
            rec.block = block
            leaf = blake2s(sc_leaf_data(block.header, block.body.bc_container.hash()))
            rec.peaks = append_to_peaks(parent.peaks, leaf, rec.weight - parent.weight)
        self._add(chain, rec)
        if not valid:
            self.rejected += 1
            self._log({"type": "rejected", "chain": sid, "id": rec.id, "miner": miner.cfg.id})
            return rec
        self._publish(miner, chain, rec)
        return rec

    # -- propagation -------------------------------------------------------

    def _log(self, event: dict) -> None:
        if self.cfg.record_events:
            event["t"] = round(self.now, 6)
            self.events.append(event)

    def _publish(self, miner: _Miner, chain: _Chain, rec: _Rec) -> None:
        self._log({"type": "block", "chain": chain.name, "id": rec.id, "height": rec.height,
                   "parent": rec.parent, "miner": miner.cfg.id, "reward": rec.reward,
                   "timestamp": rec.timestamp})
        self._observe(chain, rec)
        if self.shared:
            for m in self.miners:
                self._schedule(m)
            return
        self._receive(miner, chain, rec)
        delay = miner.cfg.latency_ms / 1000.0
        for other in self.miners:
            if other is not miner:
                self._push(self.now + delay, 1, other.index, (chain.key, rec.id))

    def _observe(self, chain: _Chain, rec: _Rec) -> None:
        view = self.observer
        tip = view.tips[chain.key]
        if rec.weight > tip.weight:
            if rec.parent != tip.id:
                self.reorgs[chain.key] = self.reorgs.get(chain.key, 0) + 1
                self._log({"type": "reorg", "chain": chain.name, "old": tip.id, "new": rec.id})
            view.tips[chain.key] = rec

    def _receive(self, miner: _Miner, chain: _Chain, rec: _Rec) -> None:
        view = miner.view
        known = view.known.setdefault(chain.key, set())
        if rec.id in known:
            return  # duplicate delivery
        if rec.parent is not None and rec.parent not in known:
            view.orphans.setdefault((chain.key, rec.parent), []).append(rec)
            return
        stack = [rec]
        changed = False
        while stack:
            r = stack.pop()
            if r.id in known:
                continue
            known.add(r.id)
            tip = view.tips.get(chain.key)
            if tip is None or r.weight > tip.weight:
                view.tips[chain.key] = r
                changed = True
            stack.extend(view.orphans.pop((chain.key, r.id), ()))
        if changed:
            self._schedule(miner)

    # -- main loop ---------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.cfg
        for i, rc in enumerate(sorted(cfg.rate_changes, key=lambda r: r.time)):
            self._push(rc.time, 2, i, rc)
        for m in self.miners:
            self._schedule(m, force=True)
        while self.heap:
            time, _, kind, a, b = heapq.heappop(self.heap)
            if cfg.duration is not None and time > cfg.duration:
                self.now = cfg.duration
                break
            self.now = time
            if kind == 0:
                miner = self.miners[a]
                if b != miner.version:
                    continue
                self._mine(miner)
            elif kind == 1:
                key, rid = b
                miner = self.miners[a]
                self._receive(miner, self.chains[key], self.chains[key].blocks[rid])
                if key is None or miner.view.tips.get(key) is not None:
                    self._deliver_genesis(miner.view)
            else:
                for m in self.miners:
                    if b.miner is None or m.cfg.id == b.miner:
                        m.rate *= b.factor
                self._log({"type": "rate_change", "factor": b.factor, "miner": b.miner})
                for m in self.miners:
                    self._schedule(m, force=True)
            if cfg.max_bc_blocks is not None and self.observer.tips[None].height >= cfg.max_bc_blocks:
                break
        return self._result()

    # -- results -----------------------------------------------------------

    def _main_chain(self, key) -> list[_Rec]:
        chain = self.chains[key]
        out = []
        r = self.observer.tips[key]
        while r is not None:
            out.append(r)
            r = chain.blocks[r.parent] if r.parent is not None else None
        out.reverse()
        return out

    def _result(self) -> SimResult:
        mains = {key: self._main_chain(key) for key in self.chains}
        miners = {m.cfg.id: {"hash_rate": m.cfg.hash_rate, "coins": 0, "blocks": 0} for m in self.miners}
        chains = {}
        for key, main in mains.items():
            chain = self.chains[key]
            for r in main:
                if r.miner is not None:
                    stats = miners[self.miners[r.miner].cfg.id]
                    stats["coins"] += r.reward
                    stats["blocks"] += 1
            chains[chain.name] = _chain_stats(chain, main, self.reorgs.get(key, 0))
        stats = SimStats(self.now, chains, miners, self.expansions, self.rejected,
                         _attempt_summary(self.attempts) if self.attempts else None)
        return SimResult(self.cfg, stats, self.events, mains)


def _find_nonce(hasher, target: int, start: int) -> int:
    """First nonce from ``start`` whose mining hash is below ``target``."""
    limit = target.to_bytes(32, "big")
    copy, pack = hasher.copy, _NONCE
    nonce = start
    while True:
        h = copy()
        h.update(pack(nonce))
        if h.digest() < limit:
            return nonce
        nonce += 1


def _grind(header: BCHeader, target: int, start: int) -> BCHeader:
    return header.with_nonce(_find_nonce(mining_hasher(header), target, start))


def _attempt_summary(attempts: list[int]) -> dict:
    n = len(attempts)
    mean = sum(attempts) / n
    var = sum((a - mean) ** 2 for a in attempts) / max(n - 1, 1)
    return {"successes": n, "mean": mean, "stdev": math.sqrt(var)}


def _chain_stats(chain: _Chain, main: list[_Rec], reorgs: int) -> ChainStats:
    n = chain.params.epoch_length
    supply = 0
    supplies = []
    for r in main:
        supply += r.reward
        supplies.append(supply)
    epochs, series, creation = [], [], []
    for start in range(0, len(main), n):
        block = main[start:start + n]
        first, last = block[0].height, block[-1].height
        prev_ts = main[start - 1].timestamp if start else None
        count = len(block) if start else len(block) - 1
        span = block[-1].timestamp - (prev_ts if prev_ts is not None else block[0].timestamp)
        mean = span / count if count > 0 else None
        epochs.append({"epoch": start // n, "first_height": first, "last_height": last, "blocks": len(block),
                       "mean_block_time": mean, "difficulty": (1 << 256) / block[0].target,
                       "supply_end": supplies[start + len(block) - 1]})
        series.append({"height": last, "timestamp": block[-1].timestamp, "supply": supplies[start + len(block) - 1]})
    for a, b in zip(series, series[1:]):
        if a["supply"] > 0:
            creation.append({"from_height": a["height"], "to_height": b["height"],
                             "value": float(monetary_creation(a["supply"], b["supply"]))})
    total_span = main[-1].timestamp - main[0].timestamp
    mean_bt = total_span / (len(main) - 1) if len(main) > 1 else None
    return ChainStats(chain.name, len(main) - 1, len(chain.blocks) - len(main), reorgs, supply, mean_bt,
                      epochs, series, creation)


def run(config: SimConfig) -> SimResult:
    return Simulation(config).run()


def mine_step(sim: Simulation, miner_index: int, hash_value: float | None = None) -> list[tuple[Any, _Rec]]:
    """Fire one success of a miner's clock now, optionally with a chosen
    winning hash value.  Returns the (chain, record) pairs it produced;
    the beacon is chain None."""
    return sim._mine(sim.miners[miner_index], hash_value)


def real_hash_attempts(target_scaled: int, successes: int, seed: int = 0, hash_space_bits: int = 32) -> list[int]:
    """Grind real mining hashes against ``target_scaled`` in a ``2**hash_space_bits`` space.

    Returns the attempt count of each success.  Each success hashes a fresh
    header so runs are independent.
    """
    if not 0 < target_scaled <= 1 << hash_space_bits:
        raise ValueError("target outside the hash space")
    full = target_scaled << (256 - hash_space_bits)
    rng = random.Random(seed)
    out = []
    for i in range(successes):
        header = BCHeader(1, rng.randbytes(32), bytes(32), 1, 0, "", bytes(32), i, encode_compact(min(full, MAX_TARGET)))
        out.append(_find_nonce(mining_hasher(header), min(full, MAX_TARGET), 0) + 1)
    return out


def load_config(text: str, fmt: str = "toml") -> SimConfig:
    if fmt == "json":
        data = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    if not isinstance(data, dict):
        raise SimConfigError("config must be a table/object")
    return SimConfig.from_dict(data)


def iter_events(result: SimResult) -> Iterable[dict]:
    return iter(result.events)
