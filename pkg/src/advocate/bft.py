"""Committee-run checkpointing over an ordered, delayed-finality log.

The committee is abstracted as an ideal ordered log: entries appended in
round ``r`` become final by ``r + delta_bft``.  Replicas post a
``(block hash, depth)`` reference for every valid block they receive; once a
reference at depth ``d(B_i) + e`` on the committee's main chain is posted, a
checkpoint transaction ``(H(B_i), M(R_i))`` is appended right behind it and
the certificate is released when that transaction is final.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

from .chain import Block, BlockId, BlockTree, Certificate, Signature, Witness, merkle_root
from .errors import CheckpointConflict, ConfigError, InvalidBlock, NegativeComponent
from .forkchoice import CheckpointView, main_chain_tip
from .service import ServiceState, collect_references, commit

BLOCK_REF = "block-reference"
CHECKPOINT = "checkpoint"


@dataclass(frozen=True)
class BftConfig:
    n: int = 4
    f: int = 1
    delta_bft: int = 0

    def __post_init__(self):
        if self.f < 0 or self.n < 3 * self.f + 1:
            raise ConfigError(f"committee needs n >= 3f+1, got n={self.n} f={self.f}")
        if self.delta_bft < 0:
            raise ConfigError("delta_bft must be non-negative")


def required_window(c_base: int, tau_f: float, tau_r: float) -> int:
    """Smallest inclusion window tolerating a finality delay ``tau_f``."""
    if tau_r <= 0:
        raise ConfigError("block interval must be positive")
    return c_base + math.ceil(tau_f / tau_r)


def check_window(c: int, c_base: int, tau_f: float, tau_r: float) -> None:
    need = required_window(c_base, tau_f, tau_r)
    if c < need:
        raise ConfigError(f"window c={c} too small for finality delay: need c >= {need}")


@dataclass
class SmrTx:
    kind: str
    posted_round: int
    finalized_round: int
    block: Optional[BlockId] = None
    depth: Optional[int] = None
    tc: Optional[tuple[BlockId, str]] = None  # (H(B_i), M(R_i))
    cert_index: Optional[int] = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "posted": self.posted_round, "final": self.finalized_round}
        if self.kind == BLOCK_REF:
            out.update(block=self.block, depth=self.depth)
        else:
            out.update(index=self.cert_index, block_hash=self.tc[0], merkle_root=self.tc[1])
        return out


@dataclass
class SmrChain:
    delta_bft: int = 0
    entries: list[SmrTx] = field(default_factory=list)
    finalized_upto: int = -1
    posted: dict[BlockId, int] = field(default_factory=dict)  # block -> entry index

    def append(self, tx: SmrTx) -> int:
        self.entries.append(tx)
        return len(self.entries) - 1

    def finalize(self, round_: int) -> int:
        """Advance the final prefix to every entry whose deadline has passed."""
        i = self.finalized_upto
        while i + 1 < len(self.entries) and self.entries[i + 1].finalized_round <= round_:
            i += 1
        self.finalized_upto = i
        return i

    def is_final(self, idx: int) -> bool:
        return idx <= self.finalized_upto

    def dump(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.entries)


def conflicts_with_checkpoint(tree: BlockTree, prev: Certificate, epoch_e: int, block: Block) -> bool:
    """A reference at depth d(B_i)+e must extend B_i."""
    b_i = prev.checkpointed_block
    depth = tree.depth[block.parent] + 1 if block.parent in tree else None
    if depth is None or b_i not in tree:
        return False
    return depth == tree.depth[b_i] + epoch_e and not tree.is_ancestor(b_i, block.parent)


def smr_post_block_reference(chain: SmrChain, block: Block, round_: int,
                             tree: Optional[BlockTree] = None, prev: Optional[Certificate] = None,
                             epoch_e: int = 5) -> SmrChain:
    """Append ``(hash, depth)`` for ``block``; ``tree`` is the committee's posted tree."""
    if block.id in chain.posted:
        return chain
    if not block.pow_valid:
        raise InvalidBlock(block.id)
    depth = None
    if tree is not None:
        if block.parent not in tree:
            raise InvalidBlock(f"{block.id[:8]}: parent not available")
        if prev is not None and conflicts_with_checkpoint(tree, prev, epoch_e, block):
            raise CheckpointConflict(block.id)
        depth = tree.depth[block.parent] + 1
        tree.insert(block)
    idx = chain.append(SmrTx(BLOCK_REF, round_, round_ + chain.delta_bft, block.id, depth))
    chain.posted[block.id] = idx
    return chain


@dataclass
class PendingCheckpoint:
    cert: Certificate
    entry: int
    trigger_entry: int


@dataclass
class Committee:
    """Checkpoint logic run by the committee against its posted-block tree."""

    config: BftConfig
    tree: BlockTree
    state: ServiceState
    chain: SmrChain
    window_c: int = 2
    pending: list[PendingCheckpoint] = field(default_factory=list)
    honest_mask: tuple[int, ...] = ()

    @classmethod
    def fresh(cls, config: BftConfig, tree: BlockTree, epoch_e: int, window_c: int,
              hook_t: Optional[int] = None, byzantine: int = 0) -> "Committee":
        state = ServiceState.fresh(tree, epoch_e, hook_t)
        mask = tuple(1 if k < config.n - byzantine else 0 for k in range(config.n))
        return cls(config, tree, state, SmrChain(config.delta_bft), window_c, [], mask)

    def view(self) -> CheckpointView:
        return CheckpointView(self.state.last_cert, self.window_c, self.state.epoch_e)

    def post(self, block: Block, round_: int) -> Optional[str]:
        """Post a received block; returns the rejection reason, if any."""
        try:
            smr_post_block_reference(self.chain, block, round_, self.tree, self.state.last_cert,
                                     self.state.epoch_e)
        except CheckpointConflict:
            return "checkpoint-conflict"
        except InvalidBlock:
            return "invalid"
        return None

    def maybe_checkpoint(self, round_: int, closing_tip: Optional[BlockId] = None) -> Optional[PendingCheckpoint]:
        """Append a checkpoint transaction if the posted tree reached the next epoch."""
        tree = self.tree
        last = self.state.last_cert
        if closing_tip is None:
            tip = main_chain_tip(tree, self.view())
            target = tree.depth[last.checkpointed_block] + self.state.epoch_e
            if tree.depth[tip] < target:
                return None
            b = tree.ancestor_at(tip, target)
            refs = collect_references(tree, self.state.referenced_blocks, b, last.index + 1, self.state.hook_t)
            closing = False
        else:
            b = closing_tip
            refs = collect_references(tree, self.state.referenced_blocks, b, last.index + 1,
                                      self.state.hook_t, include_descendants=True)
            closing = True
        refs = tuple(refs)
        root = merkle_root(refs)
        entry = self.chain.append(SmrTx(CHECKPOINT, round_, round_ + self.chain.delta_bft,
                                        tc=(b, root), cert_index=last.index + 1))
        cert = Certificate(last.index + 1, b, refs, Signature("committee"), root,
                           Witness(entry, self.honest_mask), closing=closing)
        commit(self.state, tree, cert)
        p = PendingCheckpoint(cert, entry, self.chain.posted.get(b, entry))
        self.pending.append(p)
        return p

    def release(self, round_: int) -> list[Certificate]:
        self.chain.finalize(round_)
        out = []
        while self.pending and self.chain.is_final(self.pending[0].entry):
            out.append(smr_emit_checkpoint(self.chain, self.pending.pop(0)))
        return out


def smr_emit_checkpoint(chain: SmrChain, pending: Union[PendingCheckpoint, Certificate, None]) -> Optional[Certificate]:
    """The certificate for a pending checkpoint once its trigger and tC entries are final."""
    if not isinstance(pending, PendingCheckpoint):
        return None
    if not (chain.is_final(pending.entry) and chain.is_final(pending.trigger_entry)):
        return None
    return pending.cert


def verify_merkle(cert: Certificate) -> bool:
    return cert.merkle_root == merkle_root(cert.references)


@dataclass
class PendingMessage:
    payload: object
    arrived_round: int
    deadline: int
    validated: bool = False

    @classmethod
    def arriving(cls, payload, round_: int, delta: int) -> "PendingMessage":
        return cls(payload, round_, round_ + delta)


def _needed_blocks(payload) -> list[BlockId]:
    if isinstance(payload, SmrTx):
        return [payload.block] if payload.kind == BLOCK_REF else [payload.tc[0]]
    if isinstance(payload, Block):
        return [payload.id]
    return [payload.checkpointed_block, *payload.references]


def nuni_deliver(msg: PendingMessage, local_tree, round_: int) -> str:
    """Validity-gated delivery: 'delivered', 'deferred' (waiting on blocks) or 'rejected'."""
    known = local_tree if not isinstance(local_tree, BlockTree) else local_tree.nodes
    missing = [b for b in _needed_blocks(msg.payload) if b not in known]
    if not missing:
        msg.validated = True
        return "delivered"
    if round_ < msg.deadline:
        return "deferred"
    return "rejected"


def transaction_latency(tau_m: int, tau_t: int, tau_f: int, tau_c: int) -> int:
    """Generation-to-confirmation rounds: mining + SMR posting + finality + checkpoint wait."""
    for name, v in (("tau_m", tau_m), ("tau_t", tau_t), ("tau_f", tau_f), ("tau_c", tau_c)):
        if v < 0:
            raise NegativeComponent(f"{name}={v}")
    return tau_m + tau_t + tau_f + tau_c
