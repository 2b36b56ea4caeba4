"""Checkpointing over M parallel chains (chain 0 is the base chain).

Rank is depth within a chain.  The base chain runs the single-chain rules;
every other chain is anchored at the tip a certificate recorded for it and
must carry a reference to that certificate within ``c`` blocks of the tip.
All blocks of non-base chains enter the ledger through reference lists.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

from .chain import Block, BlockId, BlockTree, Certificate, Signature
from .errors import StaleBlock
from .forkchoice import CheckpointView, chain_contains_mark, is_block_acceptable, main_chain_tip
from .ledger import AggregateLedger, build_block_order, referring_map, sanitize
from .service import ServiceState, collect_references, commit


def tip_for(cert, chain_id: int, genesis: BlockId) -> BlockId:
    if cert.index == 0 or not getattr(cert, "tips", ()):
        return genesis
    return cert.tips[chain_id - 1] or genesis


def nonbase_view(cert, chain_id: int, window_c: Optional[int], epoch_e: int, genesis: BlockId) -> CheckpointView:
    anchor = tip_for(cert, chain_id, genesis)
    window = None if cert.index == 0 else window_c
    return CheckpointView(cert, window, epoch_e, True, anchor)


def _nonbase_refs(trees: Sequence[BlockTree], referenced: set[BlockId], max_rank: Optional[int]) -> list[BlockId]:
    out = []
    for m in range(1, len(trees)):
        tree = trees[m]
        cands = [b for b in tree.nodes if b not in referenced
                 and (max_rank is None or tree.depth[b] <= max_rank)]
        out.extend(sorted(cands, key=lambda b: (tree.depth[b], b)))
    return out


def _tips(trees: Sequence[BlockTree], last, window_c: Optional[int], epoch_e: int) -> tuple[BlockId, ...]:
    tips = []
    for m in range(1, len(trees)):
        tree = trees[m]
        view = nonbase_view(last, m, window_c, epoch_e, tree.genesis)
        tip = main_chain_tip(tree, view)
        if last.index == 0 or chain_contains_mark(tree, view, tip):
            tips.append(tip)
        else:
            tips.append(view.checkpointed)  # chain never referred to the last certificate
    return tuple(tips)


def pc_checkpoint_step(trees: Sequence[BlockTree], state: ServiceState, base_block: Block,
                       window_c: Optional[int] = 2) -> Optional[Certificate]:
    """Issue the next certificate once the base chain is e ranks past the last one."""
    base = trees[0]
    last = state.last_cert
    d_last = base.depth[last.checkpointed_block]
    d = base.depth[base_block.id]
    if d < d_last or (d == d_last and base_block.id != last.checkpointed_block):
        raise StaleBlock(base_block.id)
    if d != d_last + state.epoch_e:
        return None
    idx = last.index + 1
    refs = collect_references(base, state.referenced_blocks, base_block.id, idx, state.hook_t)
    refs += _nonbase_refs(trees, state.referenced_blocks, d)
    tips = _tips(trees, last, window_c, state.epoch_e)
    cert = Certificate(idx, base_block.id, tuple(refs), Signature("checkpointer"), tips=tips)
    commit(state, base, cert)
    return cert


def pc_closing(trees: Sequence[BlockTree], state: ServiceState, tip: BlockId,
               window_c: Optional[int] = 2) -> Certificate:
    base = trees[0]
    last = state.last_cert
    idx = last.index + 1
    refs = collect_references(base, state.referenced_blocks, tip, idx, state.hook_t, include_descendants=True)
    refs += _nonbase_refs(trees, state.referenced_blocks, None)
    tips = _tips(trees, last, window_c, state.epoch_e)
    cert = Certificate(idx, tip, tuple(refs), Signature("checkpointer"), tips=tips, closing=True)
    commit(state, base, cert)
    return cert


def pc_block_valid(trees: Sequence[BlockTree], state, block: Block, window_c: Optional[int] = 2,
                   epoch_e: int = 5) -> bool:
    """Validity of a block on any chain against the latest certificate.

    Base blocks follow the single-chain rule.  A non-base block must extend
    the tip recorded for its chain and, past ``c`` ranks beyond that tip,
    build on a block that referred to the certificate.
    """
    cert = getattr(state, "last_cert", state)
    tree = trees[block.chain_id]
    if block.chain_id == 0:
        return is_block_acceptable(tree, CheckpointView(cert, window_c, epoch_e), block)
    view = nonbase_view(cert, block.chain_id, window_c, epoch_e, tree.genesis)
    return is_block_acceptable(tree, view, block)


def merged_blocks(trees: Sequence[BlockTree]) -> dict[BlockId, Block]:
    out: dict[BlockId, Block] = {}
    for t in trees:
        out.update(t.nodes)
    return out


def pc_build_ledger(trees: Sequence[BlockTree], certs: Sequence, window_c: Optional[int] = 2,
                    blocks: Optional[Mapping[BlockId, Block]] = None) -> AggregateLedger:
    base = trees[0]
    order = build_block_order(base, certs, referring_map(base, certs, window_c))
    return sanitize(order, blocks if blocks is not None else merged_blocks(trees))
