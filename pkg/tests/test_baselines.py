import numpy as np
import pytest

from advocate.baselines import (BaselineCert, BaselineState, baseline_closing, descends_from_referring,
                                nakamoto_checkpoint_step, nakamoto_view, stochastic_checkpoint_step,
                                stochastic_view)
from advocate.chain import ADVERSARIAL, HONEST, Block
from advocate.errors import StaleBlock
from advocate.forkchoice import main_chain_tip
from advocate.metrics import chain_quality, honest_wastage
from advocate.sim import SimConfig, simulate
from conftest import add, chain


def test_stochastic_certificates_carry_fresh_nonces(tree):
    st = BaselineState.fresh(tree, epoch_e=2, rng=np.random.default_rng(1))
    xs = chain(tree, tree.genesis, 4)
    certs = [stochastic_checkpoint_step(tree, st, tree.nodes[b]) for b in xs]
    got = [c for c in certs if c is not None]
    assert [c.index for c in got] == [1, 2]
    assert [c.checkpointed_block for c in got] == [xs[1], xs[3]]
    assert got[0].nonce != got[1].nonce
    assert got[0].references == () and got[0].id != BaselineCert(1, xs[1], got[0].nonce + 1).id


def test_nakamoto_certificates_have_no_nonce(tree):
    st = BaselineState.fresh(tree, epoch_e=2)
    xs = chain(tree, tree.genesis, 2)
    assert nakamoto_checkpoint_step(tree, st, tree.nodes[xs[0]]) is None
    cert = nakamoto_checkpoint_step(tree, st, tree.nodes[xs[1]])
    assert cert.nonce == 0 and cert.references == ()


def test_baseline_step_rejects_stale_blocks(tree):
    st = BaselineState.fresh(tree, epoch_e=1)
    xs = chain(tree, tree.genesis, 2)
    nakamoto_checkpoint_step(tree, st, tree.nodes[xs[0]])
    with pytest.raises(StaleBlock):
        nakamoto_checkpoint_step(tree, st, tree.nodes[add(tree, tree.genesis)])


def test_closing_certificate(tree):
    st = BaselineState.fresh(tree)
    xs = chain(tree, tree.genesis, 3)
    cc = baseline_closing(st, xs[-1])
    assert cc.closing and cc.index == 1 and st.last_cert is cc
    assert cc.to_dict()["closing"] is True


def test_premined_blocks_are_invalid_after_nonce_release(tree):
    b1 = add(tree, tree.genesis)
    cert = BaselineCert(1, b1, nonce=42)
    private = chain(tree, b1, 4, ADVERSARIAL)  # mined before the nonce existed
    view = stochastic_view(cert, window_c=2, epoch_e=5)
    assert not descends_from_referring(tree, view, Block.create(private[-1], ADVERSARIAL, nonce=1))
    # a branch that carried the nonce inside the window stays extendable
    ref = add(tree, b1, cert=cert)
    honest = chain(tree, ref, 3)
    assert descends_from_referring(tree, view, Block.create(honest[-1], HONEST, nonce=2))
    # inside the window anything extending B_1 is fine
    assert descends_from_referring(tree, view, Block.create(private[0], ADVERSARIAL, nonce=3))


def test_nakamoto_follows_longest_chain_through_checkpoint(tree):
    b1 = add(tree, tree.genesis)
    short = chain(tree, b1, 2)
    long = chain(tree, b1, 5, ADVERSARIAL)
    other = chain(tree, tree.genesis, 9, ADVERSARIAL)
    tip = main_chain_tip(tree, nakamoto_view(BaselineCert(1, b1), 5))
    assert tip == long[-1] and tip != other[-1] and tip != short[-1]
    view = nakamoto_view(BaselineCert(1, b1), 5)
    assert descends_from_referring(tree, view, Block.create(long[-1], ADVERSARIAL))
    assert not descends_from_referring(tree, view, Block.create(other[-1], ADVERSARIAL))


@pytest.mark.parametrize("variant", ["stochastic-cp", "nakamoto-cp"])
def test_adversary_free_baselines_keep_every_block(variant):
    res = simulate(SimConfig(variant=variant, beta=0.0, rounds=200, seed=3))
    assert chain_quality(res.ledger, res.log) == 1.0
    assert honest_wastage(res.log, res.ledger) == 0.0
    assert not res.log.of("safety-violation")


def test_nakamoto_ledger_is_plain_longest_chain_without_adversary():
    res = simulate(SimConfig(variant="nakamoto-cp", beta=0.0, rounds=200, seed=5))
    blocks = {r["id"]: r for r in res.log.of("block")}
    order = res.ledger.block_order
    # a single path from genesis: each block's parent precedes it directly
    for prev, cur in zip(order, order[1:]):
        assert blocks[cur]["parent"] == prev
    assert len(order) - 1 == len(blocks)
