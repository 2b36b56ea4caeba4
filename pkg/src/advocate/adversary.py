"""Adversarial mining strategies.

The adversary is rushing: it sees every block (including honest blocks of
the current round) and every certificate the moment it exists.  Its blocks
never carry honest transactions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

from .chain import ADVERSARIAL, BlockId, BlockTree
from .forkchoice import CheckpointView, main_chain_tip, next_block_template

if TYPE_CHECKING:  # pragma: no cover
    from .sim import Simulation

STRATEGIES = ("private-mining-bursts", "censorship", "none")


@dataclass
class AdversaryState:
    strategy: str = "none"
    private: list[BlockId] = field(default_factory=list)  # withheld, in mining order
    fork: dict = field(default_factory=dict)  # cached own_tip result for the current checkpoint


@dataclass(frozen=True)
class Action:
    parent: BlockId
    embed: bool
    withhold: bool
    chain_id: int = 0


def own_tip(tree: BlockTree, view: CheckpointView, embed_allowed: bool = True) -> tuple[BlockId, bool]:
    """Deepest block of the adversary's own fork from the latest checkpoint.

    Only adversarial blocks are followed, so honest blocks are never
    extended.  With an inclusion window, a fork that has not carried the
    latest certificate by depth ``d(B_i) + c`` is a dead end, and no
    certificate-free extension may pass ``d(B_i) + e + c - 1``: a block that
    deep could never carry ``C_{i+1}`` in time.  Returns the tip and whether
    the next block must embed the latest certificate.
    """
    anchor = view.checkpointed
    depth, nodes, children = tree.depth, tree.nodes, tree.children
    d = depth[anchor]
    windowed = view.window_c is not None and embed_allowed
    need_mark = windowed and not (view.index == 0 and view.anchor is None)
    cap = d + view.epoch_e + view.window_c - 2 if windowed else None
    best, best_marked = anchor, not need_mark
    stack = [(anchor, not need_mark)]
    while stack:
        b, marked = stack.pop()
        for k in children[b]:
            blk = nodes[k]
            if blk.miner != ADVERSARIAL:
                continue
            dk = depth[k]
            mk = marked or (blk.cert_mark == view.index and dk <= d + view.window_c) if need_mark else True
            if need_mark and not mk and dk >= d + view.window_c:
                continue  # window passed without the certificate
            if cap is not None and dk > cap:
                continue
            stack.append((k, mk))
            if dk > depth[best] or (dk == depth[best] and k < best):
                best, best_marked = k, mk
    return best, need_mark and not best_marked


def fork_tip(state: AdversaryState, tree: BlockTree, view: CheckpointView, embed_allowed: bool = True,
             chain_id: int = 0) -> tuple[BlockId, bool]:
    """``own_tip`` memoized per checkpoint; kept current by ``record_block``."""
    key = (chain_id, view.index, view.checkpointed, embed_allowed)
    hit = state.fork.get(key)
    if hit is None:
        hit = own_tip(tree, view, embed_allowed)
        state.fork.clear()
        state.fork[key] = hit
    return hit


def record_block(state: AdversaryState, tree: BlockTree, view: CheckpointView, embed_allowed: bool,
                 chain_id: int, block_id: BlockId) -> None:
    """Advance the cached fork tip after an adversarial block was mined on it."""
    key = (chain_id, view.index, view.checkpointed, embed_allowed)
    hit = state.fork.get(key)
    if hit is None:
        return
    tip, must_embed = hit
    blk = tree.nodes[block_id]
    if blk.parent != tip:
        state.fork.pop(key)
        return
    d = tree.depth[view.checkpointed]
    dk = tree.depth[block_id]
    windowed = view.window_c is not None and embed_allowed
    need_mark = windowed and not (view.index == 0 and view.anchor is None)
    if need_mark:
        marked = not must_embed or (blk.cert_mark == view.index and dk <= d + view.window_c)
        if not marked and dk >= d + view.window_c:
            return
    else:
        marked = True
    if windowed and dk > d + view.epoch_e + view.window_c - 2:
        return
    state.fork[key] = (block_id, need_mark and not marked)


def plan_block(state: AdversaryState, tree: BlockTree, view: CheckpointView, embed_allowed: bool,
               chain_id: int = 0) -> Action:
    """Where the next adversarial block goes (one decision per mined block)."""
    if state.strategy != "private-mining-bursts":
        tmpl = next_block_template(tree, view, (), embed=embed_allowed)
        return Action(tmpl.parent, tmpl.embedded_cert is not None, False, chain_id)
    tip, embed = fork_tip(state, tree, view, embed_allowed, chain_id)
    return Action(tip, embed, True, chain_id)


def release_set(state: AdversaryState, tree: BlockTree, view: CheckpointView,
                public_depth: int, final: bool = False, tip: Optional[BlockId] = None) -> list[BlockId]:
    """Private blocks to publish this round.

    Bursts: once the private chain (or the public chain) reaches the next
    checkpoint depth, every withheld block up to that depth goes out.  With
    off-chain checkpoints the burst waits for the public chain instead.
    Blocks off the adversary's current fork are published immediately,
    since withholding them gains nothing.
    """
    if not state.private:
        return []
    if final:
        out, state.private = state.private, []
        return out
    target = tree.depth[view.checkpointed] + view.epoch_e
    if tip is None:
        tip = own_tip(tree, view)[0]
    private_depth = max(tree.depth[b] for b in state.private)
    if view.window_c is None:
        # off-chain checkpoints carry no fresh randomness, so blocks mined past
        # the boundary stay valid: hold the lead until the public chain reaches
        # the boundary, then publish just enough to be longest
        burst = public_depth >= target
        upto = public_depth + 1
    else:
        burst = private_depth >= target or public_depth >= target
        upto = target
    anchor = view.checkpointed
    on_tip = set(tree.path(anchor, tip)) if tree.is_ancestor(anchor, tip) else set()
    chosen = set()
    for b in state.private:
        if (burst and tree.depth[b] <= upto) or b not in on_tip:
            chosen.add(b)
    # never publish a block ahead of its withheld parent
    withheld = set(state.private)
    for b in list(chosen):
        p = tree.nodes[b].parent
        while p in withheld and p not in chosen:
            chosen.add(p)
            p = tree.nodes[p].parent
    out = [b for b in state.private if b in chosen]
    state.private = [b for b in state.private if b not in chosen]
    return out


def adversary_step(sim: "Simulation", round_: int, count: int) -> list:
    """Mine ``count`` blocks this round and return the blocks released."""
    return sim.adversary_round(round_, count)
