"""Shared helpers: an independent brute-force crossing oracle.

It walks explicit edge lists with a plain BFS and enumerates
configurations with itertools, sharing no code with the package.
"""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np
import pytest

from stretchperc.rng import Stream


def rect_edge_list(a, b, c, d):
    """Edges of R([a,b) x [c,d)) as (kind, x, y)."""
    out = []
    for y in range(c, d):
        for x in range(a, b):
            out.append(("h", x, y))
            out.append(("v", x, y))
    return out


def bfs_crossing(open_edges, a, b, c, d, direction):
    """Crossing of R([a,b) x [c,d)) using only the open edges listed."""
    adj = {}
    for kind, x, y in open_edges:
        u = (x, y)
        w = (x + 1, y) if kind == "h" else (x, y + 1)
        adj.setdefault(u, []).append(w)
        adj.setdefault(w, []).append(u)
    if direction == "h":
        start = [(a, y) for y in range(c, d + 1)]
        goal = lambda v: v[0] == b  # noqa: E731
    else:
        start = [(x, c) for x in range(a, b + 1)]
        goal = lambda v: v[1] == d  # noqa: E731
    seen = set(start)
    q = deque(start)
    while q:
        u = q.popleft()
        if goal(u):
            return True
        for w in adj.get(u, ()):
            if w not in seen:
                seen.add(w)
                q.append(w)
    return False


def array_crossing(h, v, a, b, c, d, direction):
    edges = [(k, x, y) for k, x, y in rect_edge_list(a, b, c, d) if (h if k == "h" else v)[y, x]]
    return bfs_crossing(edges, a, b, c, d, direction)


def brute_probability(w, hgt, direction, ph, pv):
    """Exact crossing probability of R([0,w) x [0,hgt)) by itertools enumeration."""
    edges = rect_edge_list(0, w, 0, hgt)
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(edges)):
        wt = 1.0
        for (kind, x, _), bit in zip(edges, bits):
            pe = ph[x] if kind == "h" else pv[x]
            wt *= pe if bit else 1.0 - pe
        if wt and bfs_crossing([e for e, bit in zip(edges, bits) if bit], 0, w, 0, hgt, direction):
            total += wt
    return total


@pytest.fixture
def stream():
    return Stream(20240611)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number): one of the ten acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                rows.append((props["criterion"], outcome, props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, outcome, detail in sorted(rows):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if outcome == 'passed' else 'FAIL'}  {detail}")
