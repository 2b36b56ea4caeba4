"""Single-node checkpointing party, with optional hooks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .chain import Block, BlockId, BlockTree, Certificate, Signature, canonical_block_order, genesis_block
from .errors import StaleBlock


def bootstrap_certificate(genesis: Optional[BlockId] = None) -> Certificate:
    g = genesis or genesis_block().id
    return Certificate(0, g, (g,), Signature("checkpointer"))


def hook_allows(block: Block, cert_index: int, hook_t: Optional[int]) -> bool:
    """Hooks: a block mined under C_j may be referenced by C_i only if i - j <= t."""
    if hook_t is None or block.hook is None:
        return True
    return cert_index - block.hook <= hook_t


def collect_references(tree: BlockTree, referenced: set[BlockId], checkpointed: BlockId,
                       cert_index: int, hook_t: Optional[int] = None,
                       include_descendants: bool = False,
                       candidates: Optional[Iterable[BlockId]] = None) -> list[BlockId]:
    """Uncheckpointed, unreferenced blocks off the chain through ``checkpointed``, in π order.

    Ancestors of the checkpointed block are never references (they are the
    main-chain prefix).  Its descendants belong to the next epoch unless
    ``include_descendants`` is set (the closing checkpoint).
    """
    depth = tree.depth
    dk = depth[checkpointed]
    pool = tree.nodes if candidates is None else candidates
    out = []
    for b in pool:
        if b in referenced or b == checkpointed:
            continue
        db = depth[b]
        if db < dk:
            if tree.ancestor_at(checkpointed, db) == b:
                continue
        elif db > dk and not include_descendants and tree.ancestor_at(b, dk) == checkpointed:
            continue
        if not hook_allows(tree.nodes[b], cert_index, hook_t):
            continue
        out.append(b)
    return canonical_block_order(out, tree)


@dataclass
class ServiceState:
    last_cert: Certificate
    referenced_blocks: set[BlockId] = field(default_factory=set)
    hook_t: Optional[int] = None
    service_delay: int = 0
    epoch_e: int = 5

    @classmethod
    def fresh(cls, tree: BlockTree, epoch_e: int = 5, hook_t: Optional[int] = None,
              service_delay: int = 0) -> "ServiceState":
        c0 = bootstrap_certificate(tree.genesis)
        return cls(c0, {tree.genesis}, hook_t, service_delay, epoch_e)

    def checkpoint_depth(self, tree: BlockTree) -> int:
        return tree.depth[self.last_cert.checkpointed_block]


def on_new_block(state: ServiceState, tree: BlockTree, block: Block) -> Optional[Certificate]:
    """Issue C_{i+1} when ``block`` is exactly e main-chain blocks past B_i.

    The caller guarantees ``block`` lies on the service's main chain.  Emission
    delay (``service_delay``) is the caller's concern: it invokes this once the
    delay has elapsed and the block is still on its main chain.
    """
    last = state.last_cert.checkpointed_block
    d_last = tree.depth[last]
    d = tree.depth[block.id]
    if d < d_last or (d == d_last and block.id != last):
        raise StaleBlock(block.id)
    if d != d_last + state.epoch_e:
        return None
    idx = state.last_cert.index + 1
    refs = collect_references(tree, state.referenced_blocks, block.id, idx, state.hook_t)
    cert = Certificate(idx, block.id, tuple(refs), Signature("checkpointer"))
    commit(state, tree, cert)
    return cert


def commit(state: ServiceState, tree: BlockTree, cert: Certificate) -> None:
    state.referenced_blocks.update(cert.references)
    state.referenced_blocks.update(tree.path(state.last_cert.checkpointed_block, cert.checkpointed_block))
    state.last_cert = cert


def closing_certificate(state: ServiceState, tree: BlockTree, tip: BlockId) -> Certificate:
    """Final checkpoint at the end of an execution: references everything left over."""
    idx = state.last_cert.index + 1
    refs = collect_references(tree, state.referenced_blocks, tip, idx, state.hook_t,
                              include_descendants=True)
    cert = Certificate(idx, tip, tuple(refs), Signature("checkpointer"), closing=True)
    commit(state, tree, cert)
    return cert
