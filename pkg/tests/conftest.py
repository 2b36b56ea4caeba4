import itertools
import os

import pytest
from hypothesis import HealthCheck, settings

from advocate.chain import HONEST, Block, BlockTree

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_nonce = itertools.count(1)


def add(tree: BlockTree, parent, miner=HONEST, cert=None, txs=(), hook=None, **kw) -> str:
    """Mine a block on ``parent`` and insert it; returns the new id."""
    blk = Block.create(parent, miner, txs, 0, cert, hook, nonce=next(_nonce), **kw)
    tree.insert(blk)
    return blk.id


def chain(tree: BlockTree, parent, n, miner=HONEST) -> list[str]:
    out = []
    for _ in range(n):
        parent = add(tree, parent, miner)
        out.append(parent)
    return out


@pytest.fixture
def tree():
    return BlockTree.with_genesis()


# -- acceptance verdicts ---------------------------------------------------------------

_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, {})

    def record(n: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
