"""Reference checkpointing schemes without reference lists.

``stochastic`` certificates carry a fresh nonce and must appear on chain
within the window; the longest chain through any block carrying the latest
one wins.  ``nakamoto`` certificates are published off-chain and simply pin
the longest chain through the checkpointed block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain import Block, BlockId, BlockTree, Signature, digest
from .errors import StaleBlock
from .forkchoice import CheckpointView


@dataclass(frozen=True)
class BaselineCert:
    index: int
    checkpointed_block: BlockId
    nonce: int = 0
    signature: Signature = Signature("checkpointer")
    closing: bool = False

    @property
    def references(self) -> tuple:
        return ()

    def body_fields(self):
        return ("baseline-cert", self.index, self.checkpointed_block, self.nonce, self.closing)

    def encode_fields(self):
        return self.body_fields() + (self.signature,)

    @property
    def id(self) -> str:
        return digest(*self.body_fields())

    def to_dict(self) -> dict:
        out = {
            "index": self.index,
            "checkpointed_block": self.checkpointed_block,
            "nonce": self.nonce,
            "signature": {"issuer": self.signature.issuer, "valid": self.signature.valid},
        }
        if self.closing:
            out["closing"] = True
        return out

    def trace_key(self) -> tuple:
        return (self.index, self.checkpointed_block, (), self.closing)


@dataclass
class BaselineState:
    last_cert: BaselineCert
    epoch_e: int = 5
    rng: Optional[np.random.Generator] = None

    @classmethod
    def fresh(cls, tree: BlockTree, epoch_e: int = 5, rng=None) -> "BaselineState":
        return cls(BaselineCert(0, tree.genesis), epoch_e, rng)


def stochastic_view(cert, window_c: int, epoch_e: int) -> CheckpointView:
    return CheckpointView(cert, window_c, epoch_e, earliest_referring=False)


def nakamoto_view(cert, epoch_e: int) -> CheckpointView:
    return CheckpointView(cert, None, epoch_e)


def _step(tree: BlockTree, state: BaselineState, block: Block, with_nonce: bool) -> Optional[BaselineCert]:
    last = state.last_cert.checkpointed_block
    d_last = tree.depth[last]
    d = tree.depth[block.id]
    if d < d_last or (d == d_last and block.id != last):
        raise StaleBlock(block.id)
    if d != d_last + state.epoch_e:
        return None
    nonce = 0
    if with_nonce:
        rng = state.rng if state.rng is not None else np.random.default_rng(0)
        nonce = int(rng.integers(0, 2**63 - 1))
    cert = BaselineCert(state.last_cert.index + 1, block.id, nonce)
    state.last_cert = cert
    return cert


def stochastic_checkpoint_step(tree: BlockTree, state: BaselineState, block: Block) -> Optional[BaselineCert]:
    """Checkpoint every e main-chain blocks with a fresh nonce and no references."""
    return _step(tree, state, block, True)


def nakamoto_checkpoint_step(tree: BlockTree, state: BaselineState, block: Block) -> Optional[BaselineCert]:
    """Checkpoint every e main-chain blocks; the certificate never goes on chain."""
    return _step(tree, state, block, False)


def baseline_closing(state: BaselineState, tip: BlockId) -> BaselineCert:
    cert = BaselineCert(state.last_cert.index + 1, tip, 0, closing=True)
    state.last_cert = cert
    return cert


def descends_from_referring(tree: BlockTree, view: CheckpointView, block: Block) -> bool:
    """Nonce enforcement: past the window a block must build on a block carrying the nonce."""
    if view.window_c is None or view.index == 0:
        return tree.is_ancestor(view.checkpointed, block.parent)
    d = tree.depth[view.checkpointed]
    depth = tree.depth[block.parent] + 1
    if depth <= d or not tree.is_ancestor(view.checkpointed, block.parent):
        return False
    if depth <= d + view.window_c:
        return True
    for b in tree.marked.get(view.index, ()):
        if tree.depth[b] <= d + view.window_c and tree.is_ancestor(b, block.parent):
            return True
    return False
