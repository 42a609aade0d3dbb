"""Per-chain rules: difficulty adjustment, timestamps, mining epochs, rewards.

Difficulty epochs and mining epochs are independent counters.  Difficulty
epoch ``e`` covers heights ``e*N .. e*N + N - 1`` (genesis opens epoch 0);
the target changes only at heights that are multiples of ``N``.  Mining
epoch ``m`` on the beacon ends with block ``L*m``; a shard block counts as
position ``40*g + height`` where ``g`` is the beacon height its genesis
hangs off, and its epoch ends every ``40*L`` positions.

Rewards are in units of 2**-48 coin, so a block of difficulty ``D`` in
mining epoch 1 pays exactly ``D`` units on the beacon and ``D / n`` units
on a shard whose header claims ``n`` merge-mined shards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

from .core import MAX_TARGET, Target, difficulty, target_from_difficulty
from .mmr import WeightedMMR, weight_of

BC_BLOCK_TIME = 600
SC_BLOCK_TIME = 15
BC_EPOCH = 2048
SC_EPOCH = 4 * 60 * 24
MINING_EPOCH_LENGTH = 4096
SC_PER_BC = 40

PAPER_LITERAL = "paper-literal"
GOAL_CONSISTENT = "goal-consistent"
DAA_MODES = (PAPER_LITERAL, GOAL_CONSISTENT)

LAMBDA = math.exp(math.log(0.8) / 144)
K1 = LAMBDA ** 12


@dataclass(frozen=True)
class DifficultyParams:
    block_time: int
    epoch_length: int
    mpt_window: int
    future_window: int
    min_difficulty: Fraction = Fraction(1)
    mode: str = PAPER_LITERAL
    clamp: tuple[Fraction, Fraction] = (Fraction(4, 5), Fraction(6, 5))
    adjust: bool = True  # False pins the target (useful for controlled experiments)

    def __post_init__(self):
        if self.mode not in DAA_MODES:
            raise ValueError(f"unknown DAA mode {self.mode!r}")
        if self.epoch_length < 10:
            raise ValueError("epoch must have at least 10 blocks")

    @classmethod
    def beacon(cls, **overrides) -> "DifficultyParams":
        return cls(**{**dict(block_time=BC_BLOCK_TIME, epoch_length=BC_EPOCH,
                             mpt_window=11, future_window=2 * 3600), **overrides})

    @classmethod
    def shard(cls, **overrides) -> "DifficultyParams":
        return cls(**{**dict(block_time=SC_BLOCK_TIME, epoch_length=SC_EPOCH,
                             mpt_window=23, future_window=6 * 60), **overrides})

    @property
    def max_target(self) -> int:
        return target_from_difficulty(self.min_difficulty)

    def with_mode(self, mode: str) -> "DifficultyParams":
        return replace(self, mode=mode)


# ---------------------------------------------------------------------------
# timestamps and difficulty


def desired_timestamp(n: int, genesis_bc_index: int | None = None) -> int:
    """Scheduled time of block ``n``; pass ``genesis_bc_index`` for a shard."""
    if n < 0:
        raise ValueError("height must be non-negative")
    if genesis_bc_index is None:
        return BC_BLOCK_TIME * n
    return BC_BLOCK_TIME * genesis_bc_index + SC_BLOCK_TIME * n


def median_past_time(previous: Sequence[int], window: int) -> int:
    """Median of the last ``window`` timestamps (all of them if fewer)."""
    recent = list(previous[-window:])
    if not recent:
        raise ValueError("no previous timestamps")
    return sorted(recent)[len(recent) // 2]


def validate_timestamp(timestamp: int, previous: Sequence[int], params: DifficultyParams,
                       peer_time: int | None = None) -> bool:
    """Reject at or below the median past time, or at/after peer time + window."""
    if previous and timestamp <= median_past_time(previous, params.mpt_window):
        return False
    if peer_time is not None and timestamp >= peer_time + params.future_window:
        return False
    return True


def next_block_time(deviation: Fraction | int, params: DifficultyParams) -> Fraction:
    """T_next, the expected block time the next epoch aims for."""
    n, t = params.epoch_length, params.block_time
    if params.mode == PAPER_LITERAL:
        raw = Fraction(deviation + n * t, n)
    else:
        raw = Fraction(n * t - deviation, n)
    lo, hi = params.clamp[0] * t, params.clamp[1] * t
    if raw <= lo:
        return lo
    if raw >= hi:
        return hi
    return raw


def average_hash_rate(timestamps: Sequence[int], d_prev: Fraction) -> Fraction | None:
    """Difficulty per second over an epoch, from medians of its first and last
    five timestamps.  None when those medians do not increase."""
    if len(timestamps) < 10:
        raise ValueError("epoch must have at least 10 blocks")
    first = sorted(timestamps[:5])[2]
    last = sorted(timestamps[-5:])[2]
    if last <= first:
        return None
    return Fraction((len(timestamps) - 5) * Fraction(d_prev), last - first)


def adjust_difficulty(timestamps: Sequence[int], d_prev: Fraction | int, deviation: int,
                      params: DifficultyParams, mode: str | None = None) -> tuple[Fraction, Fraction]:
    """(D_next, T_next) from an epoch's timestamps.

    ``deviation`` is the last block's timestamp minus its scheduled time.
    A degenerate epoch keeps the previous difficulty.
    """
    if mode is not None:
        params = params.with_mode(mode)
    d_prev = Fraction(d_prev)
    t_next = next_block_time(deviation, params)
    ahr = average_hash_rate(timestamps, d_prev)
    if ahr is None:
        return d_prev, t_next
    return max(ahr * t_next, params.min_difficulty), t_next


def retarget(timestamps: Sequence[int], prev_target: int, last_height: int,
             params: DifficultyParams, genesis_bc_index: int | None = None) -> int:
    """Target (already rounded to compact precision) for the epoch after ``last_height``."""
    if not params.adjust:
        return prev_target
    deviation = timestamps[-1] - desired_timestamp(last_height, genesis_bc_index)
    d_next, _ = adjust_difficulty(timestamps, difficulty(prev_target), deviation, params)
    target = min(target_from_difficulty(d_next), params.max_target, MAX_TARGET)
    return Target(target).rounded().value


# ---------------------------------------------------------------------------
# mining epochs and coin issuance


def mining_epoch(height: int, genesis_bc_index: int | None = None,
                 length: int = MINING_EPOCH_LENGTH) -> int:
    if height < 0:
        raise ValueError("height must be non-negative")
    if genesis_bc_index is None:
        pos, span = height, length
    else:
        pos, span = SC_PER_BC * genesis_bc_index + height, SC_PER_BC * length
    return max(1, (pos - 1) // span + 1)


def next_coefficient(k_prev: float, d_total, d_epoch) -> float:
    if not 0 < k_prev <= 1:
        raise ValueError("k_prev must lie in (0, 1]")
    if k_prev == 1:
        return 1.0
    d_total, d_epoch = Fraction(d_total), Fraction(d_epoch)
    if d_total <= 0 or not 0 < d_epoch <= d_total:
        raise ValueError("need D_total >= D_epoch > 0")
    ratio = float((d_total - d_epoch) / d_total)
    if ratio < LAMBDA ** 4 * k_prev ** 1.5:
        return k_prev
    if ratio >= LAMBDA ** 2 * k_prev ** 1.5:
        return min(1.0, k_prev * LAMBDA ** -2)
    # between the two thresholds nothing is prescribed; keep the coefficient
    return k_prev


@dataclass(frozen=True)
class CoefficientState:
    """Issuance bookkeeping along one beacon ancestry.

    ``ks[i-1]`` is k_i for every closed epoch (k_1 is fixed in advance).
    """

    ks: tuple[float, ...] = (K1,)
    closed: tuple[Fraction, ...] = ()
    running: Fraction = Fraction(0)

    def advance(self, height: int, block_difficulty) -> "CoefficientState":
        """State after the beacon block at ``height`` is appended."""
        running = self.running + Fraction(block_difficulty)
        if height == 0 or height % MINING_EPOCH_LENGTH:
            return replace(self, running=running)
        closed = self.closed + (running,)
        ks = self.ks
        if len(closed) >= 2:
            ks = ks + (next_coefficient(ks[-1], sum(closed), running),)
        return CoefficientState(ks, closed, Fraction(0))

    def coefficients(self, epoch: int) -> tuple[float, ...]:
        """k_1 .. k_{epoch-1}; epochs not yet closed reuse the last known value."""
        need = epoch - 1
        ks = self.ks[:need]
        return ks + (ks[-1] if ks else K1,) * (need - len(ks))

    def product(self, epoch: int) -> float:
        return math.prod(self.coefficients(epoch))


def block_reward(block_difficulty, epoch: int = 1, coefficients: Sequence[float] = (),
                 mm_number: int | None = None) -> int:
    """Reward in coin units: floor(D * k_1 * ... * k_{m-1} [/ mm_number])."""
    d = Fraction(block_difficulty)
    if d <= 0:
        raise ValueError("difficulty must be positive")
    if len(coefficients) < epoch - 1:
        raise ValueError(f"epoch {epoch} needs {epoch - 1} coefficients")
    value = d * Fraction(math.prod(coefficients[:epoch - 1]))
    if mm_number is not None:
        if mm_number < 1:
            raise ValueError("mm_number must be >= 1")
        value /= mm_number
    return math.floor(value)


def monetary_creation(supply_n: int, supply_m: int) -> Fraction:
    if supply_n <= 0:
        raise ValueError("supply at the starting height must be positive")
    return Fraction(supply_m, supply_n) - 1


# ---------------------------------------------------------------------------
# chain state


@dataclass
class ChainEntry:
    header: object
    body: object
    difficulty: Fraction
    reward: int


@dataclass
class ChainState:
    """A single linear chain as accepted by a node (no forks)."""

    chain_id: int | None  # None = beacon, otherwise shard id
    params: DifficultyParams
    genesis_bc_index: int | None = None
    entries: list[ChainEntry] = field(default_factory=list)
    mmr: WeightedMMR = field(default_factory=WeightedMMR)
    supply: list[int] = field(default_factory=list)
    coefficients: CoefficientState = field(default_factory=CoefficientState)

    @property
    def is_beacon(self) -> bool:
        return self.chain_id is None

    @property
    def height(self) -> int:
        """Height of the tip; -1 for an empty chain."""
        return len(self.entries) - 1

    @property
    def coin_supply(self) -> int:
        return self.supply[-1] if self.supply else 0

    @property
    def tip(self) -> ChainEntry:
        return self.entries[-1]

    @property
    def current_target(self) -> int:
        return self.expected_target(len(self.entries))

    def timestamps(self, start: int = 0, stop: int | None = None) -> list[int]:
        return [e.header.timestamp for e in self.entries[start:stop]]

    def expected_target(self, height: int) -> int:
        """Target the block at ``height`` must carry, given blocks below it."""
        if height < 1 or height > len(self.entries):
            raise ValueError("can only ask for the next block or a known one")
        prev = self.entries[height - 1].header.target
        n = self.params.epoch_length
        if height % n:
            return prev
        return retarget(self.timestamps(height - n, height), prev, height - 1,
                        self.params, self.genesis_bc_index)

    def mining_epoch(self, height: int) -> int:
        return mining_epoch(height, self.genesis_bc_index)

    def append(self, header, body, reward: int, leaf_data: bytes, difficulty_: Fraction | None = None) -> None:
        d = difficulty(header.target) if difficulty_ is None else difficulty_
        self.entries.append(ChainEntry(header, body, d, reward))
        self.mmr.append_data(leaf_data, weight_of(d))
        self.supply.append(self.coin_supply + reward)
        if self.is_beacon:
            self.coefficients = self.coefficients.advance(self.height, d)

    def monetary_creation(self, n: int, m: int) -> Fraction:
        if not n < m:
            raise ValueError("need n < m")
        return monetary_creation(self.supply[n], self.supply[m])
