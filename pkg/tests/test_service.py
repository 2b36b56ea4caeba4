import pytest

from advocate.chain import ADVERSARIAL, HONEST, canonical_block_order
from advocate.errors import StaleBlock
from advocate.service import (ServiceState, bootstrap_certificate, closing_certificate, collect_references,
                              hook_allows, on_new_block)
from conftest import add, chain


def test_bootstrap_certificate_checkpoints_genesis(tree):
    c0 = bootstrap_certificate(tree.genesis)
    assert c0.index == 0
    assert c0.checkpointed_block == tree.genesis
    assert c0.references == (tree.genesis,)
    assert c0.signature.valid


def test_certificate_every_e_blocks(tree):
    st = ServiceState.fresh(tree, epoch_e=5)
    xs = chain(tree, tree.genesis, 5)
    for b in xs[:4]:
        assert on_new_block(st, tree, tree.nodes[b]) is None
    c1 = on_new_block(st, tree, tree.nodes[xs[4]])
    assert c1.index == 1 and c1.checkpointed_block == xs[4] and c1.references == ()
    assert st.last_cert == c1
    assert set(xs) <= st.referenced_blocks


def test_block_at_depth_three_with_e5_gives_nothing(tree):
    st = ServiceState.fresh(tree, epoch_e=5)
    xs = chain(tree, tree.genesis, 3)
    assert on_new_block(st, tree, tree.nodes[xs[2]]) is None


def test_stale_block_is_rejected(tree):
    st = ServiceState.fresh(tree, epoch_e=2)
    xs = chain(tree, tree.genesis, 2)
    side = add(tree, xs[0])
    on_new_block(st, tree, tree.nodes[xs[1]])
    with pytest.raises(StaleBlock):
        on_new_block(st, tree, tree.nodes[xs[0]])
    with pytest.raises(StaleBlock):
        on_new_block(st, tree, tree.nodes[side])


def test_references_cover_uncles_in_pi_order_and_skip_next_epoch(tree):
    st = ServiceState.fresh(tree, epoch_e=3)
    xs = chain(tree, tree.genesis, 3)
    u1 = add(tree, tree.genesis, ADVERSARIAL)
    u2 = add(tree, u1, ADVERSARIAL)
    u3 = add(tree, xs[0])
    after = add(tree, xs[2])  # descendant of B_1: next epoch's business
    sib = add(tree, xs[1])  # same depth as B_1, off-chain: an uncle
    c1 = on_new_block(st, tree, tree.nodes[xs[2]])
    expected = canonical_block_order([u1, u2, u3, sib], tree)
    assert list(c1.references) == expected
    assert after not in c1.references
    assert not set(xs) & set(c1.references)


def test_no_block_is_referenced_twice(tree):
    st = ServiceState.fresh(tree, epoch_e=2)
    xs = chain(tree, tree.genesis, 4)
    u = add(tree, tree.genesis)
    c1 = on_new_block(st, tree, tree.nodes[xs[1]])
    v = add(tree, xs[1])
    c2 = on_new_block(st, tree, tree.nodes[xs[3]])
    assert u in c1.references and u not in c2.references
    assert list(c2.references) == [v]


def test_hook_expired_uncle_is_excluded(tree):
    # t = 1: an uncle mined under C_0 that is still unreferenced when C_2 forms is dropped
    st = ServiceState.fresh(tree, epoch_e=2, hook_t=1)
    xs = chain(tree, tree.genesis, 4)
    c1 = on_new_block(st, tree, tree.nodes[xs[1]])
    late_uncle = add(tree, tree.genesis, hook=0)
    fresh_uncle = add(tree, xs[1], hook=1)
    c2 = on_new_block(st, tree, tree.nodes[xs[3]])
    assert c1.index == 1 and c2.index == 2
    assert late_uncle not in c2.references
    assert fresh_uncle in c2.references  # sibling of B_1's successor, within the hook window
    assert hook_allows(tree.nodes[fresh_uncle], 2, 1)
    assert not hook_allows(tree.nodes[late_uncle], 2, 1)


def test_hook_rule_boundary(tree):
    b = tree.nodes[add(tree, tree.genesis, hook=3)]
    assert hook_allows(b, 5, 2)
    assert not hook_allows(b, 6, 2)
    assert hook_allows(b, 100, None)
    assert hook_allows(tree.nodes[add(tree, tree.genesis)], 100, 1)


def test_plain_mode_references_are_complete(tree):
    # every block is on the checkpointed prefix or referenced exactly once
    st = ServiceState.fresh(tree, epoch_e=2)
    xs = chain(tree, tree.genesis, 6)
    extra = [add(tree, xs[0]), add(tree, xs[2], ADVERSARIAL), add(tree, tree.genesis)]
    certs = [on_new_block(st, tree, tree.nodes[b]) for b in xs]
    certs = [c for c in certs if c is not None]
    refs = [b for c in certs for b in c.references]
    assert len(refs) == len(set(refs))
    assert set(extra) <= set(refs)
    assert [c.index for c in certs] == [1, 2, 3]


def test_closing_certificate_takes_everything_left(tree):
    st = ServiceState.fresh(tree, epoch_e=5)
    xs = chain(tree, tree.genesis, 3)
    u = add(tree, xs[0])
    w = add(tree, u)
    cc = closing_certificate(st, tree, xs[-1])
    assert cc.closing and cc.index == 1 and cc.checkpointed_block == xs[-1]
    assert list(cc.references) == [u, w]


def test_collect_references_with_descendants(tree):
    xs = chain(tree, tree.genesis, 2)
    d = add(tree, xs[0])
    e = add(tree, xs[1])
    got = collect_references(tree, {tree.genesis}, xs[0], 1)
    assert got == []
    assert set(collect_references(tree, {tree.genesis}, xs[0], 1, include_descendants=True)) == {xs[1], d, e}
