"""Performance and security measurements over event logs, plus closed-form bounds."""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .chain import HONEST
from .errors import DomainError, EmptyWindow, MismatchedConfigs

INF = math.inf

# configuration keys that may differ between a run and its adversary-free reference
_REFERENCE_FREE = {"beta", "adversary"}


@dataclass
class MetricsReport:
    fg: float
    il: float
    il_infinite: bool
    hw: float
    cq: float
    safety_ok: bool
    liveness_bound_ok: bool
    confirmed: int = 0
    generated: int = 0
    liveness_violations: int = 0
    max_latency: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# -- helpers over logs ----------------------------------------------------------

def _ledger_blocks(log) -> list[str]:
    return log.first("ledger")["blocks"]


def _block_info(log) -> dict[str, dict]:
    return {r["id"]: r for r in log.of("block")}


def _rounds(log) -> int:
    return log.config["rounds"]


def _confirmations(log) -> dict[str, int]:
    return {r["id"]: r["round"] for r in log.of("confirm")}


def _generated(log) -> dict[str, int]:
    return {r["id"]: r["round"] for r in log.of("tx")}


def mean_block_interval(log) -> float:
    """Delta_A: rounds per block of the final ledger (genesis excluded)."""
    n = len(_ledger_blocks(log)) - 1
    return _rounds(log) / n if n > 0 else INF


# -- performance metrics ---------------------------------------------------------

def fractional_goodput(log, reference_log) -> float:
    a = {k: v for k, v in log.config.items() if k not in _REFERENCE_FREE}
    b = {k: v for k, v in reference_log.config.items() if k not in _REFERENCE_FREE}
    if a != b or reference_log.config["beta"] != 0:
        raise MismatchedConfigs("reference must be the adversary-free run of the same configuration")
    good = len(_confirmations(log))
    opt = len(_confirmations(reference_log))
    if opt == 0:
        return 0.0 if good == 0 else 1.0
    return good / opt


def liveness_failures(log) -> int:
    """Unconfirmed honest transactions with at least two later epochs elapsed.

    The clock starts at the first honest block mined at or after creation:
    a transaction nobody honest could have published is not a failure.
    """
    conf = _confirmations(log)
    cert_rounds = sorted(r["round"] for r in log.of("cert") if not r["closing"])
    honest_rounds = sorted(r["round"] for r in log.of("block") if r["miner"] == HONEST)
    fails = 0
    for txid, created in _generated(log).items():
        if txid in conf:
            continue
        i = bisect_left(honest_rounds, created)
        if i == len(honest_rounds):
            continue
        start = honest_rounds[i]
        if len(cert_rounds) - bisect_right(cert_rounds, start) >= 2:
            fails += 1
    return fails


def inclusion_latency(log) -> float:
    """Mean generation-to-confirmation time in block intervals; inf if nothing confirmed."""
    conf = _confirmations(log)
    gen = _generated(log)
    lat = [conf[t] - gen[t] for t in conf if t in gen]
    if not lat:
        return INF
    da = mean_block_interval(log)
    return (sum(lat) / len(lat)) / da


def honest_wastage(log, ledger=None) -> float:
    blocks = _block_info(log)
    honest = [b for b, r in blocks.items() if r["miner"] == HONEST]
    if not honest:
        return 0.0
    in_ledger = set(ledger.block_order if ledger is not None else _ledger_blocks(log))
    kept = sum(1 for b in honest if b in in_ledger)
    return 1 - kept / len(honest)


def chain_quality(ledger, log, window: Optional[tuple[int, int]] = None) -> float:
    """Honest fraction of ledger blocks (genesis excluded); ``window`` is a closed position range."""
    order = ledger.block_order if ledger is not None else _ledger_blocks(log)
    info = _block_info(log)
    if window is None:
        seg = [b for b in order if b in info]
    else:
        lo, hi = window
        seg = [b for b in order[lo:hi + 1] if b in info]
    if not seg:
        raise EmptyWindow(f"no mined blocks in window {window}")
    return sum(info[b]["miner"] == HONEST for b in seg) / len(seg)


def checkpoint_windows(log, t: int) -> list[tuple[int, float]]:
    """CQ of every ledger window from B_i to B_{i+t} (both ends included)."""
    order = _ledger_blocks(log)
    pos = {b: i for i, b in enumerate(order)}
    certs = [r for r in log.of("cert") if not r["closing"]]
    out = []
    for i in range(len(certs) - t):
        a, b = certs[i]["block"], certs[i + t]["block"]
        if a in pos and b in pos:
            out.append((certs[i]["index"], chain_quality(None, log, (pos[a], pos[b]))))
    return out


def inclusion_gaps(log) -> list[int]:
    """Final ledger position minus the miner's ledger-view length, per honest block."""
    pos = {b: i for i, b in enumerate(_ledger_blocks(log))}
    out = []
    for r in log.of("block"):
        if r["miner"] == HONEST and r["id"] in pos and "view_len" in r:
            out.append(pos[r["id"]] - r["view_len"])
    return out


def latencies(log) -> list[int]:
    conf = _confirmations(log)
    gen = _generated(log)
    return [conf[t] - gen[t] for t in conf if t in gen]


def liveness_violations(log, h: float, e: int, delta: int, delta_bft: int = 0) -> int:
    bound = bound_liveness(h, e) + 2 * (delta + delta_bft)
    return sum(1 for x in latencies(log) if x > bound) + liveness_failures(log)


# -- closed-form bounds ---------------------------------------------------------

def bound_liveness(h: float, e: int) -> int:
    if not 0 < h <= 1 or e < 1:
        raise DomainError(f"need 0 < h <= 1 and e >= 1, got h={h} e={e}")
    return math.ceil(2 / h) * e


def bound_safety_depth(e: int, c: int) -> int:
    if not e > c:
        raise DomainError(f"need e > c, got e={e} c={c}")
    return e - c


def bound_short_term_cq(beta: float, t: int) -> float:
    if not 0 <= beta < 1 or t < 2:
        raise DomainError(f"need 0 <= beta < 1 and t >= 2, got beta={beta} t={t}")
    return (1 - beta) * (t - 1) / (t + beta + t * beta - 1)


def bound_inclusion_gap(beta: float, t: Optional[int], e: int) -> float:
    """Expected inclusion gap with hooks; ``t=None`` (no hooks) gives inf."""
    if not 0 <= beta < 1 or e < 1 or (t is not None and t < 1):
        raise DomainError(f"need 0 <= beta < 1, t >= 1, e >= 1; got beta={beta} t={t} e={e}")
    if t is None:
        return INF
    return (beta * t - beta + 1) * e / (1 - beta)


def optimal_chain_quality(beta: float) -> float:
    if not 0 <= beta < 1:
        raise DomainError(f"beta must be in [0, 1), got {beta}")
    return 1 - beta


# -- report ---------------------------------------------------------------------

def compute_report(log, reference_log=None) -> MetricsReport:
    cfg = log.config
    fg = fractional_goodput(log, reference_log) if reference_log is not None else math.nan
    il = inclusion_latency(log)
    fails = liveness_failures(log)
    lat = latencies(log)
    viol = liveness_violations(log, cfg["h"], cfg["e"], cfg["delta"], cfg["delta_bft"])
    try:
        cq = chain_quality(None, log)
    except EmptyWindow:
        cq = math.nan
    return MetricsReport(
        fg=fg,
        il=il,
        il_infinite=il == INF or fails > 0,
        hw=honest_wastage(log),
        cq=cq,
        safety_ok=not log.of("safety-violation"),
        liveness_bound_ok=viol == 0,
        confirmed=len(lat),
        generated=len(log.of("tx")),
        liveness_violations=viol,
        max_latency=max(lat, default=0),
    )


def mean(values: Sequence[float]) -> float:
    vals = list(values)
    if not vals:
        return math.nan
    if any(v == INF for v in vals):
        return INF
    return sum(vals) / len(vals)
