import random

import pytest

from advocate.chain import ADVERSARIAL, HONEST, BlockTree, Certificate, Signature, Transaction, Block
from advocate.errors import ConfigError, UnknownCheckpoint
from advocate.forkchoice import (CheckpointView, chain_contains_mark, is_block_acceptable, main_chain_tip,
                                 next_block_template, referring_block, select_main_chain)
from advocate.service import bootstrap_certificate
from conftest import add, chain


def cert_at(index, block):
    return Certificate(index, block, (), Signature("checkpointer"))


# -- oracle: enumerate every root-to-leaf chain and apply the rule by hand --------

def all_chains(tree):
    out = []
    for leaf in tree.leaves:
        out.append(tree.chain_to(leaf))
    return out


def oracle_main_chain(tree, cert, c):
    anchor = cert.checkpointed_block
    d = tree.depth[anchor]
    chains = [ch for ch in all_chains(tree) if anchor in ch]
    # every prefix of a chain is also a chain
    prefixes = {tuple(ch[:k + 1]) for ch in chains for k in range(d, len(ch))}

    def carries(b):
        blk = tree.nodes[b]
        return blk.embedded_cert is not None and blk.embedded_cert.index == cert.index

    refs = [ch[k] for ch in chains for k in range(d + 1, min(d + c, len(ch) - 1) + 1) if carries(ch[k])]
    if refs:
        ref = min(set(refs), key=lambda b: (tree.depth[b], b))
        pool = [p for p in prefixes if ref in p]
    else:
        longest = max(len(p) for p in prefixes) - 1
        if longest - d < c:
            pool = list(prefixes)
        else:
            pool = [p for p in prefixes if len(p) - 1 == d + c - 1]
            return list(min(pool, key=lambda p: p[-1]))
    best = max(len(p) for p in pool)
    return list(min((p for p in pool if len(p) == best), key=lambda p: p[-1]))


def random_checkpointed_tree(rng, c):
    t = BlockTree.with_genesis()
    base = chain(t, t.genesis, rng.randint(1, 3))
    anchor = rng.choice(base)
    cert = cert_at(1, anchor)
    ids = list(t.nodes)
    for _ in range(rng.randint(1, 10)):
        p = rng.choice(ids)
        embed = cert if rng.random() < 0.2 else None
        b = add(t, p, rng.choice([HONEST, ADVERSARIAL]), cert=embed)
        ids.append(b)
    return t, cert


def test_main_chain_matches_enumeration_oracle():
    rng = random.Random(99)
    for _ in range(300):
        c = rng.randint(1, 3)
        t, cert = random_checkpointed_tree(rng, c)
        view = CheckpointView(cert, window_c=c, epoch_e=c + 2)
        assert select_main_chain(t, view) == oracle_main_chain(t, cert, c)


# -- the three cases ------------------------------------------------------------

def test_genesis_only_returns_genesis(tree):
    view = CheckpointView(bootstrap_certificate(tree.genesis), window_c=2, epoch_e=5)
    assert select_main_chain(tree, view) == [tree.genesis]


def test_case_one_prefers_chain_through_referring_block(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    branch_a = chain(tree, b_i, 4)
    x = add(tree, b_i)
    y = add(tree, x, cert=cert)
    z = add(tree, y)
    view = CheckpointView(cert, window_c=3, epoch_e=5)
    assert referring_block(tree, view) == y
    assert select_main_chain(tree, view) == [tree.genesis, b_i, x, y, z]
    assert main_chain_tip(tree, view) != branch_a[-1]


def test_case_one_ignores_embedding_past_the_window(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    xs = chain(tree, b_i, 2)
    late = add(tree, xs[-1], cert=cert)  # depth d+3 with c=2: not a referring block
    view = CheckpointView(cert, window_c=2, epoch_e=5)
    assert referring_block(tree, view) is None
    assert late not in select_main_chain(tree, view)


def test_case_two_returns_longest_chain_when_not_c_deep(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    a = add(tree, b_i)
    b = add(tree, b_i)
    view = CheckpointView(cert, window_c=3, epoch_e=5)
    tip = main_chain_tip(tree, view)
    assert tip == min(a, b)
    c2 = add(tree, max(a, b))
    assert main_chain_tip(tree, view) == c2


def test_case_three_truncates_to_c_minus_one_deep(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    xs = chain(tree, b_i, 4)  # c + 2 blocks, no certificate anywhere
    view = CheckpointView(cert, window_c=2, epoch_e=5)
    assert select_main_chain(tree, view) == [tree.genesis, b_i, xs[0]]
    assert len(select_main_chain(tree, view)) - 1 == tree.depth[b_i] + 1


def test_case_three_tie_breaks_by_smallest_tip(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    a = chain(tree, b_i, 3)
    b = chain(tree, b_i, 3)
    view = CheckpointView(cert, window_c=3, epoch_e=5)
    assert main_chain_tip(tree, view) == min(a[1], b[1])


def test_unknown_checkpoint_raises(tree):
    view = CheckpointView(cert_at(1, "ab" * 32), window_c=2, epoch_e=5)
    with pytest.raises(UnknownCheckpoint):
        select_main_chain(tree, view)


def test_view_requires_e_greater_than_c(tree):
    with pytest.raises(ConfigError):
        CheckpointView(bootstrap_certificate(tree.genesis), window_c=5, epoch_e=5)
    CheckpointView(bootstrap_certificate(tree.genesis), window_c=None, epoch_e=1)


def test_off_chain_view_takes_longest_chain(tree):
    b_i = add(tree, tree.genesis)
    xs = chain(tree, b_i, 6)
    view = CheckpointView(cert_at(1, b_i), window_c=None, epoch_e=5)
    assert main_chain_tip(tree, view) == xs[-1]


def test_any_referring_mode_picks_longest_qualifying_chain(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    early = add(tree, b_i, cert=cert)
    later_parent = add(tree, b_i)
    later = add(tree, later_parent, cert=cert)
    deep = chain(tree, later, 3)
    first = CheckpointView(cert, window_c=3, epoch_e=5)
    anyref = CheckpointView(cert, window_c=3, epoch_e=5, earliest_referring=False)
    assert main_chain_tip(tree, first) == early
    assert main_chain_tip(tree, anyref) == deep[-1]


# -- acceptability ----------------------------------------------------------------

def test_block_extending_referring_block_is_acceptable(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    ref = add(tree, b_i, cert=cert)
    view = CheckpointView(cert, window_c=2, epoch_e=5)
    assert is_block_acceptable(tree, view, Block.create(ref, HONEST, nonce=1))


def test_block_past_window_without_certificate_is_not_acceptable(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    xs = chain(tree, b_i, 2)
    view = CheckpointView(cert, window_c=2, epoch_e=5)
    blk = Block.create(xs[-1], HONEST, nonce=1)  # depth d + c + 1
    assert tree.depth[xs[-1]] + 1 == tree.depth[b_i] + 3
    assert not is_block_acceptable(tree, view, blk)
    # inside the window it is fine
    assert is_block_acceptable(tree, view, Block.create(xs[0], HONEST, nonce=2))


def test_block_forking_below_checkpoint_is_not_acceptable(tree):
    a = add(tree, tree.genesis)
    b_i = add(tree, a)
    side = add(tree, tree.genesis)
    view = CheckpointView(cert_at(1, b_i), window_c=2, epoch_e=5)
    assert not is_block_acceptable(tree, view, Block.create(side, HONEST, nonce=1))
    assert not is_block_acceptable(tree, view, Block.create(a, HONEST, nonce=2))


def test_block_with_bad_certificate_is_not_acceptable(tree):
    b_i = add(tree, tree.genesis)
    view = CheckpointView(cert_at(1, b_i), window_c=2, epoch_e=5)
    forged = Certificate(1, b_i, (), Signature("checkpointer", valid=False))
    assert not is_block_acceptable(tree, view, Block.create(b_i, HONEST, (), 0, forged))
    wrong_target = Certificate(1, tree.genesis, ())
    assert not is_block_acceptable(tree, view, Block.create(b_i, HONEST, (), 0, wrong_target))
    future = Certificate(2, b_i, ())
    assert not is_block_acceptable(tree, view, Block.create(b_i, HONEST, (), 0, future))
    xs = chain(tree, b_i, 2)
    late = Block.create(xs[-1], HONEST, (), 0, cert_at(1, b_i))
    assert not is_block_acceptable(tree, view, late)


def test_block_with_unknown_parent_is_not_acceptable(tree):
    view = CheckpointView(bootstrap_certificate(tree.genesis), window_c=2, epoch_e=5)
    assert not is_block_acceptable(tree, view, Block.create("cd" * 32, HONEST))


# -- templates -------------------------------------------------------------------------

def test_template_embeds_fresh_certificate(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    view = CheckpointView(cert, window_c=2, epoch_e=5)
    tmpl = next_block_template(tree, view, ())
    assert tmpl.parent == b_i and tmpl.embedded_cert == cert and tmpl.txs == ()


def test_template_omits_certificate_already_on_chain(tree):
    b_i = add(tree, tree.genesis)
    cert = cert_at(1, b_i)
    ref = add(tree, b_i, cert=cert)
    view = CheckpointView(cert, window_c=2, epoch_e=5)
    assert chain_contains_mark(tree, view, ref)
    tmpl = next_block_template(tree, view, ())
    assert tmpl.parent == ref and tmpl.embedded_cert is None


def test_template_carries_whole_mempool_and_hook(tree):
    view = CheckpointView(bootstrap_certificate(tree.genesis), window_c=2, epoch_e=5)
    pool = [Transaction.create((), 1, 0, HONEST, i) for i in range(4)]
    tmpl = next_block_template(tree, view, pool, hooks=True)
    assert list(tmpl.txs) == pool and tmpl.hook == 0 and tmpl.embedded_cert is None
    assert next_block_template(tree, view, pool).hook is None
