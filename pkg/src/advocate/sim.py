"""Deterministic round-based execution of every protocol variant.

Each round runs, in order: deliveries due this round (blocks first, then
certificates), transaction generation, the checkpointing party (or
committee), the honest mining lottery, and the adversary.  Every random
choice is drawn from a named stream derived from the seed, so runs that
differ only in the adversary share the honest draws exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from . import adversary as adv
from .baselines import BaselineState, baseline_closing, nakamoto_checkpoint_step, stochastic_checkpoint_step
from .bft import BftConfig, Committee, PendingMessage, check_window, nuni_deliver
from .chain import (ADVERSARIAL, HONEST, Block, BlockId, BlockTree, Transaction, TxId)
from .errors import ConfigError, SafetyViolation
from .forkchoice import CheckpointView, main_chain_tip, next_block_template
from .ledger import AggregateLedger, build_block_order, referring_map, stable_extension
from .service import ServiceState, closing_certificate, on_new_block
from . import parallel

VARIANTS = ("advocate", "advocate-hooks", "advocate-bft", "advocate-pc", "nakamoto-cp", "stochastic-cp")

STREAMS = {"honest": 1, "party": 2, "adversary": 3, "chain": 4, "tx": 5, "nonce": 6, "network": 7}


def make_rng(seed: int, stream: str) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(STREAMS[stream],))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SimConfig:
    beta: float = 0.0
    h: float = 0.5
    e: int = 5
    c: int = 2
    hook_t: Optional[int] = None
    delta: int = 1
    delta_bft: int = 0
    rounds: int = 300
    seed: int = 0
    variant: str = "advocate"
    adversary: str = "private-mining-bursts"
    tx_rate: float = 1.0
    parties: int = 3
    block_size: Optional[int] = None  # None: a block takes the whole mempool
    spend_fraction: float = 0.1
    committee_n: int = 4
    committee_f: int = 1
    byzantine: int = 0
    c_base: int = 2
    chains: int = 1
    service_delay: int = 0
    check_invariants: bool = True

    def validate(self) -> "SimConfig":
        if not 0 <= self.beta < 1:
            raise ConfigError(f"beta must be in [0, 1), got {self.beta}")
        if not 0 < self.h <= 1:
            raise ConfigError(f"h must be in (0, 1], got {self.h}")
        if not self.e > self.c >= 1:
            raise ConfigError(f"need e > c >= 1, got e={self.e} c={self.c}")
        if self.delta < 1 or self.delta_bft < 0 or self.rounds < 1 or self.parties < 1:
            raise ConfigError("delta >= 1, delta_bft >= 0, rounds >= 1 and parties >= 1 required")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.adversary not in adv.STRATEGIES:
            raise ConfigError(f"unknown adversary {self.adversary!r}")
        if self.variant == "advocate-hooks" and (self.hook_t is None or self.hook_t < 1):
            raise ConfigError("advocate-hooks needs hook_t >= 1")
        if self.block_size is not None and self.block_size < 1:
            raise ConfigError("block_size must be positive")
        if self.tx_rate < 0 or not 0 <= self.spend_fraction <= 1:
            raise ConfigError("tx_rate >= 0 and spend_fraction in [0, 1] required")
        if self.chains < 1 or (self.chains > 1 and self.variant != "advocate-pc"):
            raise ConfigError("chains > 1 only with advocate-pc")
        if self.delta_bft and self.variant != "advocate-bft":
            raise ConfigError("delta_bft applies to advocate-bft only")
        if self.variant == "advocate-bft":
            BftConfig(self.committee_n, self.committee_f, self.delta_bft)
            if not 0 <= self.byzantine <= self.committee_f:
                raise ConfigError("byzantine replicas must not exceed f")
            check_window(self.c, self.c_base, self.delta_bft, 1.0 / self.h)
        return self

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hooks(self) -> bool:
        return self.variant == "advocate-hooks"

    @property
    def adversary_rate(self) -> float:
        return self.h * self.beta / (1 - self.beta)


@dataclass(frozen=True)
class Rules:
    """How a variant chooses chains, embeds certificates and builds its ledger."""

    window: Optional[int]
    earliest: bool
    embed: bool
    references: bool
    epoch_e: int

    def view(self, cert, anchor: Optional[BlockId] = None, window: Any = "default") -> CheckpointView:
        w = self.window if window == "default" else window
        return CheckpointView(cert, w, self.epoch_e, self.earliest, anchor)


def rules_for(config: SimConfig) -> Rules:
    if config.variant == "nakamoto-cp":
        return Rules(None, True, False, False, config.e)
    if config.variant == "stochastic-cp":
        return Rules(config.c, False, True, False, config.e)
    return Rules(config.c, True, True, True, config.e)


# -- event log ----------------------------------------------------------------

@dataclass
class EventLog:
    records: list[dict] = field(default_factory=list)

    def add(self, kind: str, round_: int, **fields) -> None:
        rec = {"type": kind, "round": round_}
        rec.update(fields)
        self.records.append(rec)

    def of(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["type"] == kind]

    def first(self, kind: str) -> dict:
        for r in self.records:
            if r["type"] == kind:
                return r
        raise KeyError(kind)

    @property
    def config(self) -> dict:
        return self.first("config")["config"]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        return cls([json.loads(line) for line in text.splitlines() if line.strip()])


# -- honest parties -------------------------------------------------------------

def _txids(block: Block) -> Iterable[TxId]:
    return (t.id for t in block.txs)


@dataclass
class Party:
    pid: int
    trees: list[BlockTree]
    certs: list
    orphans: dict[BlockId, list[Block]] = field(default_factory=dict)
    cert_inbox: list[tuple[Any, int]] = field(default_factory=list)
    pending: dict[TxId, Transaction] = field(default_factory=dict)
    placed: set[BlockId] = field(default_factory=set)
    stable_len: int = 1

    def has(self, bid: BlockId) -> bool:
        return any(bid in t for t in self.trees)


def receive_block(trees: list[BlockTree], orphans: dict[BlockId, list[Block]], block: Block) -> list[BlockId]:
    """Insert ``block`` (and any orphans waiting on it); returns the ids inserted."""
    tree = trees[block.chain_id]
    if block.id in tree:
        return []
    if block.parent not in tree:
        orphans.setdefault(block.parent, []).append(block)
        return []
    out = []
    stack = [block]
    while stack:
        b = stack.pop()
        if b.id in tree:
            continue
        tree.insert(b)
        out.append(b.id)
        stack.extend(reversed(orphans.pop(b.id, [])))
    return out


def select_txs(tree: BlockTree, anchor: BlockId, parent: BlockId, latest_refs: Iterable[BlockId],
               blocks: dict, pending: dict[TxId, Transaction], block_size: Optional[int]) -> list[Transaction]:
    """Oldest-first mempool minus what the miner's ledger view already holds."""
    seen: set[TxId] = set()
    if tree.is_ancestor(anchor, parent):
        for b in tree.path(anchor, parent):
            seen.update(_txids(tree.nodes[b]))
    for b in latest_refs:
        blk = blocks.get(b)
        if blk is not None:
            seen.update(_txids(blk))
    out = []
    for txid, tx in pending.items():
        if txid in seen:
            continue
        out.append(tx)
        if block_size is not None and len(out) >= block_size:
            break
    return out


# -- checkpointing parties -----------------------------------------------------

class SingleCheckpointer:
    """The single checkpointing node (plain, hooks, parallel-chain and baselines)."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        cfg = sim.config
        self.trees = [BlockTree.with_genesis(m) for m in range(cfg.chains)]
        self.orphans: dict[BlockId, list[Block]] = {}
        self.rules = sim.rules
        self.pending: Optional[tuple[BlockId, int]] = None
        base = self.trees[0]
        if cfg.variant in ("nakamoto-cp", "stochastic-cp"):
            self.state = BaselineState.fresh(base, cfg.e, make_rng(cfg.seed, "nonce"))
        else:
            self.state = ServiceState.fresh(base, cfg.e, cfg.hook_t if cfg.hooks else None, cfg.service_delay)
            for m in range(1, cfg.chains):
                self.state.referenced_blocks.add(self.trees[m].genesis)

    @property
    def tree(self) -> BlockTree:
        return self.trees[0]

    @property
    def last_cert(self):
        return self.state.last_cert

    def receive(self, block: Block, round_: int) -> list[BlockId]:
        return receive_block(self.trees, self.orphans, block)

    def tip(self) -> BlockId:
        return main_chain_tip(self.tree, self.sim.view_for(self.last_cert, 0))

    def _issue(self, block: Block):
        cfg = self.sim.config
        if cfg.variant == "stochastic-cp":
            return stochastic_checkpoint_step(self.tree, self.state, block)
        if cfg.variant == "nakamoto-cp":
            return nakamoto_checkpoint_step(self.tree, self.state, block)
        if cfg.variant == "advocate-pc" and cfg.chains > 1:
            return parallel.pc_checkpoint_step(self.trees, self.state, block, self.rules.window)
        return on_new_block(self.state, self.tree, block)

    def step(self, round_: int) -> list:
        out = []
        delay = self.sim.config.service_delay
        while True:
            tip = self.tip()
            if self.pending is not None:
                cand, ready = self.pending
                if not self.tree.is_ancestor(cand, tip):
                    self.pending = None  # reorged away before emission
                    continue
                if round_ < ready:
                    break
                self.pending = None
                cert = self._issue(self.tree.nodes[cand])
                if cert is None:
                    break
                out.append(cert)
                continue
            target = self.tree.depth[self.last_cert.checkpointed_block] + self.sim.config.e
            if self.tree.depth[tip] < target:
                break
            self.pending = (self.tree.ancestor_at(tip, target), round_ + delay)
        return out

    def busy(self) -> bool:
        return self.pending is not None

    def close(self, round_: int) -> list:
        tip = self.tip()
        cfg = self.sim.config
        if cfg.variant in ("nakamoto-cp", "stochastic-cp"):
            return [baseline_closing(self.state, tip)]
        if cfg.variant == "advocate-pc" and cfg.chains > 1:
            return [parallel.pc_closing(self.trees, self.state, tip, self.rules.window)]
        return [closing_certificate(self.state, self.tree, tip)]


class CommitteeCheckpointer:
    """Committee replicas posting to the ordered log, gated by validity checks."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        cfg = sim.config
        self.config = BftConfig(cfg.committee_n, cfg.committee_f, cfg.delta_bft)
        self.honest = [k < cfg.committee_n - cfg.byzantine for k in range(cfg.committee_n)]
        self.replicas = [BlockTree.with_genesis() for _ in range(cfg.committee_n)]
        self.replica_orphans: list[dict] = [{} for _ in range(cfg.committee_n)]
        self.committee = Committee.fresh(self.config, BlockTree.with_genesis(), cfg.e, cfg.c,
                                         None, cfg.byzantine)
        self.mail: list[list[PendingMessage]] = [[] for _ in range(cfg.committee_n)]
        self.closing_pending = False

    @property
    def tree(self) -> BlockTree:
        return self.committee.tree

    @property
    def trees(self) -> list[BlockTree]:
        return [self.committee.tree]

    @property
    def last_cert(self):
        return self.committee.state.last_cert

    def receive_replica(self, k: int, block: Block, round_: int) -> list[BlockId]:
        got = receive_block([self.replicas[k]], self.replica_orphans[k], block)
        if not self.honest[k]:
            return got
        log = self.sim.log
        for bid in got:
            if bid in self.committee.chain.posted:
                continue
            blk = self.replicas[k].nodes[bid]
            why = self.committee.post(blk, round_)
            if why is not None:
                log.add("smr-reject", round_, block=bid, replica=k, reason=why)
                continue
            idx = self.committee.chain.posted[bid]
            log.add("smr-post", round_, block=bid, replica=k, entry=idx,
                    final=self.committee.chain.entries[idx].finalized_round)
            for j in range(len(self.replicas)):
                if j != k and self.honest[j]:
                    self.mail[j].append(PendingMessage.arriving(self.committee.chain.entries[idx], round_,
                                                                self.sim.config.delta))
        return got

    def process_mail(self, round_: int) -> None:
        log = self.sim.log
        for k, box in enumerate(self.mail):
            keep = []
            for msg in box:
                res = nuni_deliver(msg, self.replicas[k], round_)
                if res == "deferred":
                    keep.append(msg)
                else:
                    log.add("nuni", round_, replica=k, block=msg.payload.block, result=res,
                            arrived=msg.arrived_round)
            self.mail[k] = keep

    def step(self, round_: int) -> list:
        self.process_mail(round_)
        while self.committee.maybe_checkpoint(round_) is not None:
            p = self.committee.pending[-1]
            self.sim.log.add("smr-checkpoint", round_, index=p.cert.index, entry=p.entry,
                             block=p.cert.checkpointed_block, merkle_root=p.cert.merkle_root)
        return self.committee.release(round_)

    def busy(self) -> bool:
        return bool(self.committee.pending) or any(self.mail)

    def close(self, round_: int) -> list:
        tip = main_chain_tip(self.tree, self.committee.view())
        self.committee.maybe_checkpoint(round_, closing_tip=tip)
        return self.committee.release(round_)


# -- the simulation ------------------------------------------------------------

@dataclass
class SimResult:
    config: SimConfig
    log: EventLog
    ledger: AggregateLedger
    certs: list
    blocks: dict[BlockId, Block]


class Simulation:
    def __init__(self, config: SimConfig):
        self.config = config.validate()
        cfg = config
        self.rules = rules_for(cfg)
        self.log = EventLog()
        self.rng = {name: make_rng(cfg.seed, name) for name in STREAMS}
        self.full = [BlockTree.with_genesis(m) for m in range(cfg.chains)]
        self.blocks: dict[BlockId, Block] = {}
        for t in self.full:
            self.blocks[t.genesis] = t.nodes[t.genesis]
        self.public: set[BlockId] = set(self.blocks)
        self.nonce = 0
        self.schedule: dict[int, list[tuple]] = defaultdict(list)
        self.last_scheduled = 0
        if cfg.variant == "advocate-bft":
            self.checkpointer = CommitteeCheckpointer(self)
        else:
            self.checkpointer = SingleCheckpointer(self)
        c0 = self.checkpointer.last_cert
        self.certs = [c0]
        self.cert_round = [0]
        self.segments: list[list[BlockId]] = [[self.full[0].genesis]]
        self.global_placed: set[BlockId] = {self.full[0].genesis}
        self.ledger = AggregateLedger()
        self.ledger.feed(self.blocks[self.full[0].genesis])
        self.tx_segment: dict[TxId, int] = {}
        self.parties = [
            Party(p, [BlockTree.with_genesis(m) for m in range(cfg.chains)], [c0],
                  placed={self.full[0].genesis})
            for p in range(cfg.parties)
        ]
        self.adopt_round: list[list[int]] = [[0] * cfg.parties]
        self.adv = adv.AdversaryState(cfg.adversary)
        self.tx_acc = 0.0
        self.tx_count = 0
        self.txs: dict[TxId, Transaction] = {}
        self.spendable: list[TxId] = []
        self.open_txs: dict[TxId, Transaction] = {}  # generated, not yet stable
        self.round = 0

    # -- views

    def view_for(self, cert, chain_id: int = 0) -> CheckpointView:
        if chain_id == 0:
            return self.rules.view(cert)
        return parallel.nonbase_view(cert, chain_id, self.rules.window, self.config.e,
                                     self.full[chain_id].genesis)

    # -- delivery

    def _at(self, round_: int, event: tuple) -> None:
        self.schedule[round_].append(event)
        self.last_scheduled = max(self.last_scheduled, round_)

    def publish(self, block: Block, round_: int, miner_party: Optional[int] = None) -> None:
        cfg = self.config
        self.public.add(block.id)
        for p in self.parties:
            if p.pid == miner_party:
                got = receive_block(p.trees, p.orphans, block)
                self._forget_txs(p, got)
                if got:
                    self.log.add("recv", round_, node=f"party-{p.pid}", blocks=got)
            else:
                self._at(round_ + cfg.delta, ("block", ("party", p.pid), block))
        if isinstance(self.checkpointer, CommitteeCheckpointer):
            net = self.rng["network"]
            for k in range(cfg.committee_n):
                d = 1 if k == 0 else int(net.integers(1, cfg.delta + 1))
                self._at(round_ + d, ("block", ("replica", k), block))
        else:
            self._at(round_ + 1, ("block", ("service",), block))

    def _forget_txs(self, p: Party, ids: list[BlockId]) -> None:
        # with references every known block reaches the ledger, so its
        # transactions are already in the miner's ledger view
        if not self.rules.references:
            return
        for bid in ids:
            for t in self.blocks[bid].txs:
                p.pending.pop(t.id, None)

    def deliver(self, round_: int) -> None:
        events = self.schedule.pop(round_, [])
        got: dict[str, list[BlockId]] = {}
        for kind, target, obj in events:
            if kind != "block":
                continue
            if target[0] == "party":
                p = self.parties[target[1]]
                ids = receive_block(p.trees, p.orphans, obj)
                self._forget_txs(p, ids)
                name = f"party-{target[1]}"
            elif target[0] == "replica":
                ids = self.checkpointer.receive_replica(target[1], obj, round_)
                name = f"replica-{target[1]}"
            else:
                ids = self.checkpointer.receive(obj, round_)
                name = "service"
            if ids:
                got.setdefault(name, []).extend(ids)
        for name in sorted(got):
            self.log.add("recv", round_, node=name, blocks=got[name])
        for kind, target, obj in events:
            if kind == "cert":
                self.parties[target[1]].cert_inbox.append((obj, round_))
        for p in self.parties:
            self.try_adopt(p, round_)

    # -- certificates

    def emit(self, cert, round_: int) -> None:
        prev = self.certs[-1]
        seg = stable_extension(self.checkpointer.tree, prev, cert, self.rules.window, self.global_placed)
        k = len(self.certs)
        self.certs.append(cert)
        self.cert_round.append(round_)
        self.segments.append(seg)
        self.adopt_round.append([-1] * self.config.parties)
        for bid in seg:
            for txid in self.ledger.feed(self.blocks[bid]):
                self.tx_segment[txid] = k
                tx = self.txs.get(txid)
                if tx is not None:
                    self.open_txs.pop(txid, None)
                    if tx.is_mint:
                        self.spendable.append(txid)
        rec = {"index": cert.index, "block": cert.checkpointed_block, "refs": list(cert.references),
               "closing": cert.closing, "segment": seg}
        if getattr(cert, "merkle_root", None) is not None:
            rec["merkle_root"] = cert.merkle_root
        if getattr(cert, "tips", ()):
            rec["tips"] = list(cert.tips)
        self.log.add("cert", round_, **rec)
        for p in self.parties:
            self._at(round_ + self.config.delta, ("cert", ("party", p.pid), cert))

    def try_adopt(self, p: Party, round_: int) -> None:
        while p.cert_inbox:
            cert, arrived = p.cert_inbox[0]
            k = len(p.certs)
            if cert.index != k:
                raise SafetyViolation(f"party {p.pid} got certificate {cert.index}, expected {k}")
            needed = [cert.checkpointed_block, *cert.references]
            if not all(p.has(b) for b in needed):
                if round_ > arrived + self.config.delta:
                    self.log.add("late", round_, party=p.pid, index=k)
                return
            seg = stable_extension(p.trees[0], p.certs[-1], cert, self.rules.window, p.placed)
            if seg != self.segments[k]:
                raise SafetyViolation(f"party {p.pid}: stable segment {k} disagrees with the canonical one")
            p.cert_inbox.pop(0)
            p.certs.append(cert)
            p.stable_len += len(seg)
            self.adopt_round[k][p.pid] = round_
            for bid in seg:
                blk = self.blocks[bid]
                for t in blk.txs:
                    p.pending.pop(t.id, None)
            self.log.add("adopt", round_, party=p.pid, index=k, stable_len=p.stable_len)

    # -- transactions

    def generate_txs(self, round_: int) -> None:
        cfg = self.config
        self.tx_acc += cfg.tx_rate
        n = int(self.tx_acc + 1e-9)
        self.tx_acc -= n
        rng = self.rng["tx"]
        for _ in range(n):
            inputs: tuple = ()
            u = rng.random()
            if u < cfg.spend_fraction and self.spendable:
                src = self.spendable.pop(int(rng.integers(len(self.spendable))))
                inputs = (src,)
            tx = Transaction.create(inputs, 1, round_, HONEST, self.tx_count)
            self.tx_count += 1
            self.txs[tx.id] = tx
            self.open_txs[tx.id] = tx
            for p in self.parties:
                p.pending[tx.id] = tx
            self.log.add("tx", round_, id=tx.id, inputs=list(inputs))

    # -- mining

    def _new_block(self, parent: BlockId, miner: str, txs, round_: int, cert, hook, chain_id: int,
                   party: int, cert_ref: Optional[int] = None, base_ref: Optional[BlockId] = None) -> Block:
        self.nonce += 1
        blk = Block.create(parent, miner, txs, round_, cert, hook, chain_id, self.nonce, party,
                           cert_ref, base_ref)
        self.full[chain_id].insert(blk)
        self.blocks[blk.id] = blk
        return blk

    def _pick_chain(self) -> int:
        if self.config.chains == 1:
            return 0
        return int(self.rng["chain"].integers(self.config.chains))

    def party_view(self, p: Party, chain_id: int) -> CheckpointView:
        return self.view_for(p.certs[-1], chain_id)

    def _view_len(self, p: Party, tree: BlockTree, anchor: BlockId, parent: BlockId) -> int:
        n = p.stable_len
        if tree.is_ancestor(anchor, parent):
            n += len(tree.path(anchor, parent))
        return n + len(p.certs[-1].references) + 1

    def honest_mining(self, round_: int) -> None:
        cfg = self.config
        if self.rng["honest"].random() >= cfg.h:
            return
        pid = int(self.rng["party"].integers(cfg.parties))
        m = self._pick_chain()
        p = self.parties[pid]
        tree = p.trees[m]
        view = self.party_view(p, m)
        latest = p.certs[-1]
        if m == 0:
            tmpl = next_block_template(tree, view, (), hooks=cfg.hooks, embed=self.rules.embed)
            txs = select_txs(tree, view.checkpointed, tmpl.parent, latest.references, self.blocks,
                             p.pending, cfg.block_size)
            blk = self._new_block(tmpl.parent, HONEST, txs, round_, tmpl.embedded_cert, tmpl.hook, 0, pid)
            view_len = self._view_len(p, tree, view.checkpointed, tmpl.parent)
        else:
            parent = main_chain_tip(tree, view)
            txs = select_txs(tree, view.checkpointed, parent, latest.references, self.blocks,
                             p.pending, cfg.block_size)
            blk = self._new_block(parent, HONEST, txs, round_, None, None, m, pid,
                                  cert_ref=latest.index, base_ref=latest.checkpointed_block)
            view_len = p.stable_len
        self.log.add("block", round_, **self._block_record(blk, view_len))
        self.publish(blk, round_, miner_party=pid)

    def _block_record(self, blk: Block, view_len: Optional[int] = None) -> dict:
        tree = self.full[blk.chain_id]
        rec = {"id": blk.id, "parent": blk.parent, "miner": blk.miner, "party": blk.party,
               "chain": blk.chain_id, "depth": tree.depth[blk.id], "txs": [t.id for t in blk.txs]}
        if blk.embedded_cert is not None:
            rec["cert"] = blk.embedded_cert.index
        if blk.hook is not None:
            rec["hook"] = blk.hook
        if blk.cert_ref is not None:
            rec["cert_ref"] = blk.cert_ref
        if view_len is not None:
            rec["view_len"] = view_len
        return rec

    def _public_depth(self) -> int:
        tree = self.full[0]
        anchor = self.certs[-1].checkpointed_block
        best = tree.depth[anchor]
        for b in tree.iter_subtree(anchor):
            if b in self.public and tree.depth[b] > best:
                best = tree.depth[b]
        return best

    def adversary_round(self, round_: int, count: int) -> list[Block]:
        cfg = self.config
        st = self.adv
        latest = self.certs[-1]
        released: list[Block] = []
        for _ in range(count):
            m = self._pick_chain()
            tree = self.full[m]
            view = self.view_for(latest, m)
            strategy = st.strategy if m == 0 else ("censorship" if st.strategy != "none" else "none")
            embed_ok = self.rules.embed and m == 0
            sub = adv.AdversaryState(strategy, st.private, st.fork)
            plan = adv.plan_block(sub, tree, view, embed_ok, m)
            txs: list = []
            if strategy == "none":
                txs = select_txs(tree, view.checkpointed, plan.parent, latest.references, self.blocks,
                                 self.open_txs, cfg.block_size)
            hook = latest.index if cfg.hooks else None
            if m == 0:
                blk = self._new_block(plan.parent, ADVERSARIAL, txs, round_,
                                      latest if plan.embed else None, hook, 0, -1)
            else:
                blk = self._new_block(plan.parent, ADVERSARIAL, txs, round_, None, None, m, -1,
                                      cert_ref=latest.index, base_ref=latest.checkpointed_block)
            self.log.add("block", round_, **self._block_record(blk))
            if strategy == "private-mining-bursts":
                adv.record_block(st, tree, view, embed_ok, m, blk.id)
            if plan.withhold:
                st.private.append(blk.id)
            else:
                released.append(blk)
        if st.private:
            final = round_ >= cfg.rounds
            view0 = self.view_for(latest, 0)
            tip = adv.fork_tip(st, self.full[0], view0, self.rules.embed)[0]
            out = adv.release_set(st, self.full[0], view0, self._public_depth(), final, tip)
            released.extend(self.blocks[b] for b in out)
            if out:
                self.log.add("release", round_, blocks=out)
        for blk in released:
            self.publish(blk, round_)
        return released

    # -- invariants

    def check_round(self, round_: int) -> None:
        for p in self.parties:
            anchor = p.certs[-1].checkpointed_block
            tree = p.trees[0]
            tip = main_chain_tip(tree, self.party_view(p, 0))
            if not tree.is_ancestor(anchor, tip):
                raise SafetyViolation(f"party {p.pid} main chain excludes its checkpoint at round {round_}")
            if p.stable_len > len(self.global_placed):
                raise SafetyViolation(f"party {p.pid} stable prefix longer than the canonical one")

    # -- driver

    def step_checkpointer(self, round_: int) -> None:
        for cert in self.checkpointer.step(round_):
            self.emit(cert, round_)

    def all_adopted(self) -> bool:
        return all(len(p.certs) == len(self.certs) for p in self.parties)

    def run(self) -> SimResult:
        cfg = self.config
        self.log.add("config", 0, config=cfg.to_dict())
        adv_rng = self.rng["adversary"]
        rate = cfg.adversary_rate
        for r in range(1, cfg.rounds + 1):
            self.round = r
            self.deliver(r)
            self.generate_txs(r)
            self.step_checkpointer(r)
            self.honest_mining(r)
            count = int(adv_rng.poisson(rate)) if rate > 0 else 0
            self.adversary_round(r, count)
            if cfg.check_invariants:
                self.check_round(r)
        self._drain_and_close()
        return self._finish()

    def _quiet(self, r: int) -> bool:
        return r >= self.last_scheduled and not self.checkpointer.busy() and self.all_adopted()

    def _drain_and_close(self) -> None:
        cfg = self.config
        r = cfg.rounds
        patience = 20 * (cfg.delta + cfg.delta_bft + cfg.service_delay) + 50
        closed = False
        last_progress, progress = r, None
        while True:
            r += 1
            if r - last_progress > patience:
                raise SafetyViolation("execution did not settle after the final round")
            self.round = r
            self.deliver(r)
            self.step_checkpointer(r)
            # a long released fork is certified one epoch at a time, so only a stall is fatal
            now = (len(self.certs), sum(len(p.certs) for p in self.parties))
            if now != progress:
                last_progress, progress = r, now
            if self._quiet(r):
                if closed:
                    break
                for cert in self.checkpointer.close(r):
                    self.emit(cert, r)
                closed = True
        self.end_round = r

    def _finish(self) -> SimResult:
        cfg = self.config
        tree = self.checkpointer.tree
        order = build_block_order(tree, self.certs, referring_map(tree, self.certs, self.rules.window))
        if order != self.ledger.block_order:
            raise SafetyViolation("final ledger differs from the concatenation of stable segments")
        n = len(self.certs)
        for k in range(n):
            conf = max(self.adopt_round[k])
            self.log.add("settle", conf, index=k)
        for txid in sorted(self.tx_segment, key=lambda t: self.ledger.position[t]):
            if txid not in self.txs:
                continue
            k = self.tx_segment[txid]
            self.log.add("confirm", max(self.adopt_round[k]), id=txid, segment=k,
                         position=self.ledger.position[txid], block=self.ledger.tx_block[txid])
        self.log.add("ledger", self.end_round, blocks=list(self.ledger.block_order),
                     txs=len(self.ledger.tx_order))
        self.log.add("end", self.end_round, rounds=cfg.rounds, certs=n, blocks=len(self.blocks) - cfg.chains)
        return SimResult(cfg, self.log, self.ledger, self.certs, self.blocks)


def run_simulation(config: SimConfig) -> EventLog:
    return Simulation(config).run().log


def simulate(config: SimConfig) -> SimResult:
    return Simulation(config).run()


def adversary_block_fraction(log: EventLog) -> float:
    blocks = log.of("block")
    if not blocks:
        return math.nan
    return sum(b["miner"] == ADVERSARIAL for b in blocks) / len(blocks)
