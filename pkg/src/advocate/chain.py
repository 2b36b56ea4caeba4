"""Blocks, transactions, certificates and the append-only block tree.

Identifiers are lowercase hex SHA-256 digests of a canonical, type-tagged,
length-prefixed binary encoding.  Because every id has the same length,
comparing the hex strings orders them exactly as comparing the raw bytes.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Optional, Sequence

from .errors import CyclicInput, DuplicateBlock, UnknownBlock, UnknownParent

BlockId = str
TxId = str

HONEST = "honest"
ADVERSARIAL = "adversarial"
GENESIS_MINER = "genesis"

GENESIS_SEED = "advocate-genesis-v1"


# -- canonical encoding -------------------------------------------------------

def _frame(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack(">I", len(payload)) + payload


def encode(value: Any) -> bytes:
    """Encode a value as ``tag | u32 big-endian length | payload``.

    Tags: ``N`` none, ``T`` bool, ``I`` signed 64-bit int, ``S`` utf-8 string,
    ``B`` raw bytes, ``L`` list (payload is the concatenation of the encoded
    items).  Objects with an ``encode_fields`` method are encoded as the list
    of those fields.
    """
    if value is None:
        return _frame(b"N", b"")
    if isinstance(value, bool):
        return _frame(b"T", b"\x01" if value else b"\x00")
    if isinstance(value, int):
        return _frame(b"I", struct.pack(">q", value))
    if isinstance(value, str):
        return _frame(b"S", value.encode("utf-8"))
    if isinstance(value, (bytes, bytearray)):
        return _frame(b"B", bytes(value))
    if isinstance(value, (list, tuple)):
        return _frame(b"L", b"".join(encode(v) for v in value))
    if hasattr(value, "encode_fields"):
        return encode(list(value.encode_fields()))
    raise TypeError(f"cannot encode {type(value).__name__}")


def digest(*fields: Any) -> str:
    return hashlib.sha256(encode(list(fields))).hexdigest()


# -- merkle tree --------------------------------------------------------------

def merkle_root(leaves: Sequence[BlockId]) -> str:
    """Binary Merkle root over block ids, padding odd levels with the last node."""
    if not leaves:
        return hashlib.sha256(b"").hexdigest()
    level = [hashlib.sha256(b"\x00" + bytes.fromhex(x)).digest() for x in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [
            hashlib.sha256(b"\x01" + level[i] + level[i + 1]).digest()
            for i in range(0, len(level), 2)
        ]
    return level[0].hex()


# -- transactions -------------------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    id: TxId
    inputs: tuple[TxId, ...]
    outputs: int
    created_round: int
    origin: str
    nonce: int = 0

    @classmethod
    def create(cls, inputs: Iterable[TxId] = (), outputs: int = 1, created_round: int = 0,
               origin: str = HONEST, nonce: int = 0) -> "Transaction":
        inputs = tuple(inputs)
        txid = digest("tx", list(inputs), outputs, created_round, origin, nonce)
        return cls(txid, inputs, outputs, created_round, origin, nonce)

    @property
    def is_mint(self) -> bool:
        return not self.inputs

    def encode_fields(self):
        return ("tx", list(self.inputs), self.outputs, self.created_round, self.origin, self.nonce)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "inputs": list(self.inputs),
            "outputs": self.outputs,
            "created_round": self.created_round,
            "origin": self.origin,
            "nonce": self.nonce,
        }


# -- certificates -------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    """Mock signature: who signed, and whether verification succeeds."""

    issuer: str
    valid: bool = True

    def encode_fields(self):
        return ("sig", self.issuer, self.valid)


@dataclass(frozen=True)
class Witness:
    """Finality witness for a checkpoint transaction on the SMR chain."""

    smr_index: int
    quorum: tuple[int, ...]  # one 0/1 flag per committee member

    def encode_fields(self):
        return ("witness", self.smr_index, list(self.quorum))


@dataclass(frozen=True)
class Certificate:
    index: int
    checkpointed_block: BlockId
    references: tuple[BlockId, ...] = ()
    signature: Signature = Signature("checkpointer")
    merkle_root: Optional[str] = None
    witness: Optional[Witness] = None
    tips: tuple[Optional[BlockId], ...] = ()  # parallel chains 1..M-1
    closing: bool = False

    def encode_fields(self):
        return (
            "cert", self.index, self.checkpointed_block, list(self.references),
            self.signature, self.merkle_root, self.witness,
            ["" if t is None else t for t in self.tips], self.closing,
        )

    def body_fields(self):
        """The signed statement; blocks commit to this, not to signature or witness."""
        return ("cert", self.index, self.checkpointed_block, list(self.references),
                ["" if t is None else t for t in self.tips], self.closing)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "index": self.index,
            "checkpointed_block": self.checkpointed_block,
            "references": list(self.references),
            "signature": {"issuer": self.signature.issuer, "valid": self.signature.valid},
        }
        if self.merkle_root is not None:
            out["merkle_root"] = self.merkle_root
        if self.witness is not None:
            out["witness"] = {"smr_index": self.witness.smr_index, "quorum": list(self.witness.quorum)}
        if self.tips:
            out["tips"] = list(self.tips)
        if self.closing:
            out["closing"] = True
        return out

    def trace_key(self) -> tuple:
        """Fields compared by trace-equivalence checks across service variants."""
        return (self.index, self.checkpointed_block, self.references, self.closing)


# -- blocks -------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    id: BlockId
    parent: BlockId
    miner: str
    txs: tuple[Transaction, ...]
    round_mined: int
    embedded_cert: Optional[Any] = None
    hook: Optional[int] = None
    chain_id: int = 0
    nonce: int = 0
    party: int = -1
    cert_ref: Optional[int] = None  # parallel chains: index of the certificate referred to
    base_ref: Optional[BlockId] = None  # ...and the base-chain block carrying it
    pow_valid: bool = True

    @classmethod
    def create(cls, parent: BlockId, miner: str, txs: Iterable[Transaction] = (),
               round_mined: int = 0, embedded_cert=None, hook: Optional[int] = None,
               chain_id: int = 0, nonce: int = 0, party: int = -1,
               cert_ref: Optional[int] = None, base_ref: Optional[BlockId] = None,
               pow_valid: bool = True) -> "Block":
        txs = tuple(txs)
        body = None if embedded_cert is None else list(embedded_cert.body_fields())
        bid = digest("block", parent, miner, list(txs), round_mined, body, hook,
                     chain_id, nonce, party, cert_ref, base_ref, pow_valid)
        return cls(bid, parent, miner, txs, round_mined, embedded_cert, hook, chain_id,
                   nonce, party, cert_ref, base_ref, pow_valid)

    @property
    def cert_mark(self) -> Optional[int]:
        """Index of the certificate this block carries (embedded, or referred to)."""
        if self.embedded_cert is not None:
            return self.embedded_cert.index
        return self.cert_ref

    @property
    def is_honest(self) -> bool:
        return self.miner == HONEST

    def encode_fields(self):
        return ("block", self.parent, self.miner, list(self.txs), self.round_mined,
                self.embedded_cert, self.hook, self.chain_id, self.nonce, self.party,
                self.cert_ref, self.base_ref, self.pow_valid)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "id": self.id,
            "parent": self.parent,
            "miner": self.miner,
            "round_mined": self.round_mined,
            "chain_id": self.chain_id,
            "nonce": self.nonce,
            "party": self.party,
            "txs": [t.to_dict() for t in self.txs],
        }
        if self.embedded_cert is not None:
            out["embedded_cert"] = self.embedded_cert.to_dict()
        if self.hook is not None:
            out["hook"] = self.hook
        if self.cert_ref is not None:
            out["cert_ref"] = self.cert_ref
            out["base_ref"] = self.base_ref
        if not self.pow_valid:
            out["pow_valid"] = False
        return out


def genesis_block(chain_id: int = 0) -> Block:
    seed = GENESIS_SEED if chain_id == 0 else f"{GENESIS_SEED}/chain-{chain_id}"
    gid = digest("genesis", seed)
    return Block(gid, "", GENESIS_MINER, (), 0, chain_id=chain_id)


def to_binary(obj) -> bytes:
    return encode(obj)


def to_text(obj) -> str:
    """Human-readable canonical form (sorted-key JSON) used by golden files."""
    return json.dumps(obj.to_dict(), sort_keys=True, indent=2) + "\n"


# -- block tree ---------------------------------------------------------------

@dataclass
class BlockTree:
    """Append-only tree of blocks rooted at a genesis block."""

    genesis: BlockId = ""
    nodes: dict[BlockId, Block] = field(default_factory=dict)
    children: dict[BlockId, list[BlockId]] = field(default_factory=dict)
    depth: dict[BlockId, int] = field(default_factory=dict)
    leaves: set[BlockId] = field(default_factory=set)
    marked: dict[int, list[BlockId]] = field(default_factory=dict)
    jump: dict[BlockId, BlockId] = field(default_factory=dict, repr=False)  # skew-binary skip pointers

    @classmethod
    def with_genesis(cls, chain_id: int = 0) -> "BlockTree":
        tree = cls()
        tree.insert(genesis_block(chain_id))
        return tree

    def __contains__(self, bid: object) -> bool:
        return bid in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, bid: BlockId) -> Block:
        try:
            return self.nodes[bid]
        except KeyError:
            raise UnknownBlock(bid) from None

    def insert(self, block: Block) -> None:
        if block.id in self.nodes:
            raise DuplicateBlock(block.id)
        if not self.nodes:
            if block.parent:
                raise UnknownParent(block.parent)
            self.genesis = block.id
            d = 0
            self.jump[block.id] = block.id
        else:
            if block.parent not in self.nodes:
                raise UnknownParent(block.parent)
            p = block.parent
            d = self.depth[p] + 1
            j = self.jump[p]
            jj = self.jump[j]
            dp, dj, djj = d - 1, self.depth[j], self.depth[jj]
            self.jump[block.id] = jj if dp - dj == dj - djj else p
            self.children[p].append(block.id)
            self.leaves.discard(block.parent)
        self.nodes[block.id] = block
        self.children[block.id] = []
        self.depth[block.id] = d
        self.leaves.add(block.id)
        mark = block.cert_mark
        if mark is not None:
            self.marked.setdefault(mark, []).append(block.id)

    # -- navigation

    def parent(self, bid: BlockId) -> Optional[BlockId]:
        p = self[bid].parent
        return p or None

    def ancestor_at(self, bid: BlockId, depth: int) -> BlockId:
        """Ancestor-or-self of ``bid`` at the given depth."""
        d = self.depth[bid]
        if depth > d or depth < 0:
            raise UnknownBlock(f"no ancestor of {bid[:8]} at depth {depth}")
        nodes, jump, depths = self.nodes, self.jump, self.depth
        while d > depth:
            j = jump[bid]
            if depths[j] >= depth:
                bid, d = j, depths[j]
            else:
                bid = nodes[bid].parent
                d -= 1
        return bid

    def is_ancestor(self, anc: BlockId, bid: BlockId) -> bool:
        """True when ``anc`` is an ancestor of, or equal to, ``bid``."""
        da = self.depth.get(anc)
        if da is None or bid not in self.depth or self.depth[bid] < da:
            return False
        return self.ancestor_at(bid, da) == anc

    def path(self, start: BlockId, end: BlockId) -> list[BlockId]:
        """Blocks strictly after ``start`` up to and including ``end`` (start is an ancestor)."""
        out = []
        ds = self.depth[start]
        cur = end
        while self.depth[cur] > ds:
            out.append(cur)
            cur = self.nodes[cur].parent
        if cur != start:
            raise UnknownBlock(f"{start[:8]} is not an ancestor of {end[:8]}")
        out.reverse()
        return out

    def chain_to(self, tip: BlockId) -> list[BlockId]:
        return [self.genesis] + self.path(self.genesis, tip)

    def iter_subtree(self, root: BlockId) -> Iterator[BlockId]:
        stack = [root]
        children = self.children
        while stack:
            b = stack.pop()
            yield b
            stack.extend(children[b])

    def deepest_leaf(self, root: BlockId) -> BlockId:
        """Tip of the longest chain through ``root``; equal lengths go to the smaller id."""
        depth = self.depth
        best = root
        best_d = depth[root]
        for b in self.iter_subtree(root):
            d = depth[b]
            if d > best_d or (d == best_d and b < best):
                best, best_d = b, d
        return best


def insert_block(tree: BlockTree, block: Block) -> BlockTree:
    tree.insert(block)
    return tree


def subtree_leaves(tree: BlockTree, root: BlockId) -> set[BlockId]:
    if root not in tree:
        raise UnknownBlock(root)
    return {b for b in tree.iter_subtree(root) if not tree.children[b]}


def canonical_block_order(blocks: Iterable[BlockId], tree: BlockTree) -> list[BlockId]:
    """Topological order (parents first) with ties broken by ascending id.

    Parents outside ``blocks`` are treated as already ordered.  Taking the
    smallest available id at every step yields the lexicographically smallest
    valid order.
    """
    members = set(blocks)
    for b in members:
        if b not in tree:
            raise UnknownBlock(b)
    indeg: dict[BlockId, int] = {}
    kids: dict[BlockId, list[BlockId]] = {}
    for b in members:
        p = tree.nodes[b].parent
        if p in members:
            indeg[b] = 1
            kids.setdefault(p, []).append(b)
        else:
            indeg.setdefault(b, 0)
    ready = [b for b in members if indeg[b] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        b = heapq.heappop(ready)
        out.append(b)
        for k in kids.get(b, ()):
            indeg[k] -= 1
            if indeg[k] == 0:
                heapq.heappush(ready, k)
    if len(out) != len(members):
        raise CyclicInput("block set contains a cycle")
    return out
