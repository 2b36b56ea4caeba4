"""Longest-checkpointed-chain rule, block acceptability and mining templates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .chain import BlockId, BlockTree, Block, Transaction
from .errors import ConfigError, UnknownCheckpoint


@dataclass(frozen=True)
class CheckpointView:
    """What a node knows about checkpoints when choosing its main chain.

    ``window_c=None`` models off-chain checkpoints (no embedding window).
    ``earliest_referring`` selects the referring block as the earliest
    embedding (lowest depth, then lowest id); when false, any embedding within
    the window qualifies and the longest such chain wins.
    """

    latest_cert: object
    window_c: Optional[int] = 2
    epoch_e: int = 5
    earliest_referring: bool = True
    anchor: Optional[BlockId] = None  # overrides latest_cert.checkpointed_block

    def __post_init__(self):
        if self.window_c is not None and not self.epoch_e > self.window_c >= 1:
            raise ConfigError(f"need e > c >= 1, got e={self.epoch_e} c={self.window_c}")

    @property
    def checkpointed(self) -> BlockId:
        return self.anchor if self.anchor is not None else self.latest_cert.checkpointed_block

    @property
    def index(self) -> int:
        return self.latest_cert.index


def referring_candidates(tree: BlockTree, view: CheckpointView) -> list[BlockId]:
    """Blocks within the window after the checkpointed block that carry its certificate."""
    anchor = view.checkpointed
    if view.index == 0 and view.anchor is None:
        return [anchor]  # the bootstrap certificate is implicit in genesis
    d = tree.depth[anchor]
    out = []
    for b in tree.marked.get(view.index, ()):
        db = tree.depth[b]
        if d < db <= d + view.window_c and tree.ancestor_at(b, d) == anchor:
            out.append(b)
    return out


def referring_block(tree: BlockTree, view: CheckpointView) -> Optional[BlockId]:
    if view.window_c is None:
        return None
    cands = referring_candidates(tree, view)
    if not cands:
        return None
    return min(cands, key=lambda b: (tree.depth[b], b))


def main_chain_tip(tree: BlockTree, view: CheckpointView) -> BlockId:
    anchor = view.checkpointed
    if anchor not in tree:
        raise UnknownCheckpoint(anchor)
    if view.window_c is None:
        return tree.deepest_leaf(anchor)
    cands = referring_candidates(tree, view)
    if cands:
        if view.earliest_referring:
            ref = min(cands, key=lambda b: (tree.depth[b], b))
            return tree.deepest_leaf(ref)
        tips = [tree.deepest_leaf(r) for r in cands]
        return min(tips, key=lambda b: (-tree.depth[b], b))
    d = tree.depth[anchor]
    longest = tree.deepest_leaf(anchor)
    if tree.depth[longest] - d < view.window_c:
        return longest
    # checkpoint is c-deep without a referring block: stay (c-1)-deep
    target = d + view.window_c - 1
    return min(b for b in tree.iter_subtree(anchor) if tree.depth[b] == target)


def select_main_chain(tree: BlockTree, view: CheckpointView) -> list[BlockId]:
    return tree.chain_to(main_chain_tip(tree, view))


def chain_contains_mark(tree: BlockTree, view: CheckpointView, tip: BlockId) -> bool:
    """Whether the chain ending at ``tip`` already carries the latest certificate."""
    if view.window_c is None or (view.index == 0 and view.anchor is None):
        return True
    anchor = view.checkpointed
    d = tree.depth[anchor]
    for b in tree.marked.get(view.index, ()):
        if d < tree.depth[b] <= min(d + view.window_c, tree.depth[tip]) and tree.is_ancestor(b, tip):
            return True
    return False


def is_block_acceptable(tree: BlockTree, view: CheckpointView, block: Block) -> bool:
    if block.parent not in tree:
        return False
    anchor = view.checkpointed
    d = tree.depth[anchor]
    depth = tree.depth[block.parent] + 1
    if depth <= d or not tree.is_ancestor(anchor, block.parent):
        return False
    cert = block.embedded_cert
    if cert is not None:
        if not cert.signature.valid:
            return False
        if cert.index == view.index:
            if view.window_c is not None and depth > d + view.window_c:
                return False
            if cert.checkpointed_block != anchor:
                return False
        elif cert.index > view.index:
            return False
    if view.window_c is not None and depth > d + view.window_c:
        if not chain_contains_mark(tree, view, block.parent):
            return False
    return True


@dataclass(frozen=True)
class BlockTemplate:
    parent: BlockId
    txs: tuple[Transaction, ...]
    embedded_cert: object = None
    hook: Optional[int] = None


def next_block_template(tree: BlockTree, view: CheckpointView, mempool: Sequence[Transaction],
                        hooks: bool = False, embed: bool = True) -> BlockTemplate:
    """Parent, payload and (if still missing on the chain) the latest certificate."""
    tip = main_chain_tip(tree, view)
    cert = None
    if embed and not chain_contains_mark(tree, view, tip):
        cert = view.latest_cert
    hook = view.index if hooks else None
    return BlockTemplate(tip, tuple(mempool), cert, hook)
