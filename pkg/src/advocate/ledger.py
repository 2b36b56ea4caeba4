"""Aggregate ledger: certificate-driven block ordering followed by sanitization.

The block order is ``Chain_1 | refs(C_1) | Chain_2 | refs(C_2) | ...`` where
``Chain_i`` runs along the main chain up to the block that first carries
``C_i`` and ``refs(C_i)`` is the certificate's reference list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .chain import Block, BlockId, BlockTree, TxId
from .errors import MissingReferringBlock


@dataclass
class AggregateLedger:
    block_order: list[BlockId] = field(default_factory=list)
    tx_order: list[TxId] = field(default_factory=list)
    spent: set[TxId] = field(default_factory=set)
    position: dict[TxId, int] = field(default_factory=dict)
    tx_block: dict[TxId, BlockId] = field(default_factory=dict)
    unspent: dict[TxId, int] = field(default_factory=dict)
    dropped: list[tuple[TxId, BlockId, str]] = field(default_factory=list)
    block_tx_end: list[int] = field(default_factory=list)  # tx count after each block

    def feed(self, block: Block) -> list[TxId]:
        """Append one block's transactions, dropping duplicates and bad spends."""
        self.block_order.append(block.id)
        accepted = []
        for tx in block.txs:
            if tx.id in self.position:
                self.dropped.append((tx.id, block.id, "duplicate"))
                continue
            need: dict[TxId, int] = {}
            for src in tx.inputs:
                need[src] = need.get(src, 0) + 1
            if any(self.unspent.get(src, 0) < n for src, n in need.items()):
                self.dropped.append((tx.id, block.id, "unspendable"))
                continue
            for src, n in need.items():
                left = self.unspent[src] - n
                self.unspent[src] = left
                if left == 0:
                    self.spent.add(src)
            self.position[tx.id] = len(self.tx_order)
            self.tx_order.append(tx.id)
            self.tx_block[tx.id] = block.id
            self.unspent[tx.id] = tx.outputs
            accepted.append(tx.id)
        self.block_tx_end.append(len(self.tx_order))
        return accepted

    def __len__(self) -> int:
        return len(self.tx_order)

    def dump(self, blocks: Mapping[BlockId, Block]) -> str:
        """One line per transaction: position, txid, block, origin."""
        lines = []
        for pos, txid in enumerate(self.tx_order):
            bid = self.tx_block[txid]
            origin = next(t.origin for t in blocks[bid].txs if t.id == txid)
            lines.append(f"{pos} {txid} {bid} {origin}")
        return "\n".join(lines) + ("\n" if lines else "")


def sanitize(block_order: Iterable[BlockId], tree: BlockTree | Mapping[BlockId, Block]) -> AggregateLedger:
    blocks = tree.nodes if isinstance(tree, BlockTree) else tree
    ledger = AggregateLedger()
    for bid in block_order:
        ledger.feed(blocks[bid])
    return ledger


def find_referring(tree: BlockTree, cert, end: BlockId, window_c: Optional[int],
                   earliest: bool = True) -> Optional[BlockId]:
    """First block after ``cert``'s checkpointed block, on the chain to ``end``, carrying it."""
    start = cert.checkpointed_block
    if window_c is None or cert.index == 0:
        return start
    d = tree.depth[start]
    limit = min(d + window_c, tree.depth[end])
    if limit <= d:
        return None
    anc = tree.ancestor_at(end, limit)
    seg = tree.path(start, anc) if tree.is_ancestor(start, anc) else []
    for b in seg:
        if tree.nodes[b].cert_mark == cert.index:
            return b
    return None


def referring_map(tree: BlockTree, certs: Sequence, window_c: Optional[int],
                  tip: Optional[BlockId] = None) -> dict[int, BlockId]:
    """Referring block of every certificate, read along the chain to each successor.

    A closing certificate refers to itself, and so does its predecessor when
    that one never reached the chain.  The latest non-closing certificate
    is resolved along the chain to ``tip`` when given.
    """
    out: dict[int, BlockId] = {}
    for k, cert in enumerate(certs):
        if cert.closing:
            out[cert.index] = cert.checkpointed_block
            continue
        if k + 1 < len(certs):
            nxt = certs[k + 1]
            r = find_referring(tree, cert, nxt.checkpointed_block, window_c)
            if r is None and nxt.closing:
                r = nxt.checkpointed_block
        else:
            r = find_referring(tree, cert, tip, window_c) if tip is not None else None
        if r is not None:
            out[cert.index] = r
    return out


def build_block_order(tree: BlockTree, certs: Sequence, referring: Mapping[int, BlockId],
                      blocks: Optional[Mapping[BlockId, Block]] = None) -> list[BlockId]:
    certs = sorted(certs, key=lambda c: c.index)
    order: list[BlockId] = []
    placed: set[BlockId] = set()

    def put(bids):
        for b in bids:
            if b not in placed:
                placed.add(b)
                order.append(b)

    cur = tree.genesis
    put([cur])
    for k, cert in enumerate(certs):
        if cert.index == 0:
            put(cert.references)
            continue
        r = referring.get(cert.index)
        if r is None:
            if k != len(certs) - 1:
                raise MissingReferringBlock(f"certificate {cert.index} has no referring block")
            put(tree.path(cur, cert.checkpointed_block))
            break
        put(tree.path(cur, r))
        cur = r
        put(cert.references)
    return order


def stable_block_count(block_order: Sequence[BlockId], certs: Sequence) -> int:
    """Length of the block-order prefix whose positions can no longer change."""
    if not certs:
        return 0
    last = max(certs, key=lambda c: c.index)
    if last.closing:
        return len(block_order)
    try:
        return block_order.index(last.checkpointed_block) + 1
    except ValueError:
        return 0


def stable_prefix(ledger: AggregateLedger, certs: Sequence) -> int:
    """Number of leading ledger transactions that are final."""
    n = stable_block_count(ledger.block_order, certs)
    if n == 0:
        return 0
    return ledger.block_tx_end[n - 1]


def stable_extension(tree: BlockTree, prev, cert, window_c: Optional[int], placed: set[BlockId]) -> list[BlockId]:
    """Blocks that become stable when ``cert`` follows ``prev``.

    ``path(B_prev, r_prev) | refs(prev) | path(r_prev, B_cert)`` and, for a
    closing certificate, its own references.  ``placed`` is updated.
    """
    out: list[BlockId] = []

    def put(bids):
        for b in bids:
            if b not in placed:
                placed.add(b)
                out.append(b)

    start = prev.checkpointed_block
    end = cert.checkpointed_block
    r = find_referring(tree, prev, end, window_c)
    if r is None:
        if not cert.closing:
            raise MissingReferringBlock(f"certificate {prev.index} not carried before {end[:8]}")
        r = end
    put(tree.path(start, r))
    if prev.index > 0:
        put(prev.references)
    put(tree.path(r, end))
    if cert.closing:
        put(cert.references)
    return out
