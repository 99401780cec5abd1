"""Exact outcome-trace enumeration and SVG rendering of policy risk.

A trace is one path through the policy's branch tree from an initial state:
the actions taken, the cost after each, and the path probability. Traces end
on entering a goal state or at the horizon. Rendering draws one horizontal
line per trace whose length is the total cost and whose thickness is the
probability.
"""
from __future__ import annotations

from dataclasses import dataclass
from html import escape
from typing import Sequence

import numpy as np

from .mdp import RecourseMdp
from .solvers import PolicyTable

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


@dataclass(frozen=True)
class Trace:
    actions: tuple[str, ...]
    step_costs: tuple[float, ...]
    states: tuple[int, ...]  # visited states, initial first
    probability: float
    reached_goal: bool

    @property
    def total_cost(self) -> float:
        return float(sum(self.step_costs))

    def label(self) -> str:
        """Action sequence with consecutive repeats collapsed, e.g. ``a ×2 > b``."""
        parts: list[str] = []
        i = 0
        while i < len(self.actions):
            j = i
            while j + 1 < len(self.actions) and self.actions[j + 1] == self.actions[i]:
                j += 1
            n = j - i + 1
            parts.append(self.actions[i] if n == 1 else f"{self.actions[i]} ×{n}")
            i = j + 1
        return " > ".join(parts) if parts else "(already favorable)"


@dataclass
class TraceSet:
    title: str
    traces: list[Trace]
    remainder: float  # probability mass of outcomes not shown


def enumerate_traces(mdp: RecourseMdp, policy: PolicyTable, s0: int, top_k: int = 10,
                     max_paths: int = 1 << 16) -> TraceSet:
    """The ``top_k`` most probable traces by exact probability.

    Paths are expanded breadth-first; if more than ``max_paths`` are open at
    once, the least probable are dropped and counted in the remainder.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    tab = mdp.tab
    names = tab.action_names
    done: list[Trace] = []
    open_paths = [((), (), (int(s0),), 1.0)]
    dropped = 0.0
    for h in range(policy.horizon):
        nxt = []
        for acts, costs, states, p in open_paths:
            s = states[-1]
            if tab.goal[s]:
                done.append(Trace(acts, costs, states, p, True))
                continue
            a = int(policy.pi[h, s])
            if a < 0 or not tab.applicable[a, s]:
                a = int(np.argmax(tab.applicable[:, s]))
            for o in tab.outcomes(s, a):
                nxt.append((acts + (names[a],), costs + (o.step_cost,), states + (o.successor,),
                            p * o.probability))
        if len(nxt) > max_paths:
            nxt.sort(key=lambda t: -t[3])
            dropped += sum(t[3] for t in nxt[max_paths:])
            nxt = nxt[:max_paths]
        open_paths = nxt
    for acts, costs, states, p in open_paths:
        done.append(Trace(acts, costs, states, p, bool(tab.goal[states[-1]])))
    done.sort(key=lambda t: (-t.probability, t.total_cost, t.label(), t.states))
    shown = done[:top_k]
    remainder = dropped + sum(t.probability for t in done[top_k:])
    return TraceSet("", shown, float(remainder))


def _f(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if x != int(x) else str(int(x))


def _goal_marker(x: float, y: float) -> str:
    # hollow ring so it stays visible on top of any action color
    return f'<circle cx="{_f(x)}" cy="{_f(y)}" r="4" fill="#fff" stroke="#2ca02c" stroke-width="2.5"/>'


def _fail_marker(x: float, y: float) -> str:
    return (f'<path d="M{_f(x - 4)} {_f(y - 4)}L{_f(x + 4)} {_f(y + 4)}'
            f'M{_f(x - 4)} {_f(y + 4)}L{_f(x + 4)} {_f(y - 4)}" stroke="#000" stroke-width="2"/>')


def render_svg(panels: Sequence[TraceSet], width: int = 760, row_height: int = 26,
               max_stroke: float = 14.0) -> str:
    """Deterministic SVG with one panel per trace set, sharing the cost axis."""
    max_cost = max([t.total_cost for p in panels for t in p.traces] + [1.0])
    action_colors: dict[str, str] = {}
    for p in panels:
        for t in p.traces:
            for a in t.actions:
                action_colors.setdefault(a, PALETTE[len(action_colors) % len(PALETTE)])
    left, right = 60.0, 140.0
    scale = (width - left - right) / max_cost
    out = []
    y = 20.0
    body = []
    for p in panels:
        body.append(f'<text x="10" y="{_f(y + 4)}" font-weight="bold">{escape(p.title)}</text>')
        y += 22
        for i, t in enumerate(p.traces):
            sw = max(0.5, max_stroke * t.probability)
            x = left
            body.append(f'<text x="10" y="{_f(y + 4)}" font-size="10">#{i + 1}</text>')
            for a, c in zip(t.actions, t.step_costs):
                x2 = x + c * scale
                body.append(f'<line x1="{_f(x)}" y1="{_f(y)}" x2="{_f(x2)}" y2="{_f(y)}" '
                            f'stroke="{action_colors[a]}" stroke-width="{_f(sw)}">'
                            f'<title>{escape(a)}</title></line>')
                x = x2
            if t.reached_goal:
                body.append(_goal_marker(x, y))
            else:
                body.append(_fail_marker(x, y))
            body.append(f'<text x="{_f(x + 8)}" y="{_f(y + 4)}" font-size="10">'
                        f'cost {_f(t.total_cost)}, p={t.probability:.4f}</text>')
            body.append(f'<text x="{_f(left)}" y="{_f(y - sw / 2 - 2)}" font-size="9" '
                        f'fill="#444">{escape(t.label())}</text>')
            y += row_height + max_stroke * t.probability
        if p.remainder > 0:
            body.append(f'<text x="{_f(left)}" y="{_f(y)}" font-size="10" fill="#666">'
                        f'other outcomes: p={p.remainder:.4f}</text>')
            y += row_height
    # cost axis
    body.append(f'<line x1="{_f(left)}" y1="{_f(y)}" x2="{_f(left + max_cost * scale)}" '
                f'y2="{_f(y)}" stroke="#000"/>')
    for tick in range(int(np.floor(max_cost)) + 1):
        tx = left + tick * scale
        body.append(f'<line x1="{_f(tx)}" y1="{_f(y)}" x2="{_f(tx)}" y2="{_f(y + 4)}" stroke="#000"/>')
        body.append(f'<text x="{_f(tx)}" y="{_f(y + 16)}" font-size="10" '
                    f'text-anchor="middle">{tick}</text>')
    y += 30
    body.append(f'<text x="{_f(left)}" y="{_f(y)}" font-size="10">total cost</text>')
    y += 10
    lx = left
    entries = [(f'<rect x="{{x}}" y="{{y}}" width="10" height="10" fill="{col}"/>', a)
               for a, col in action_colors.items()]
    entries += [("goal", "favorable outcome"), ("fail", "not favorable within H")]
    for mark, text in entries:
        w = 24 + 6.5 * len(text)
        if lx + w > width - 10 and lx > left:
            lx, y = left, y + 16
        if mark == "goal":
            body.append(_goal_marker(lx + 5, y + 5))
        elif mark == "fail":
            body.append(_fail_marker(lx + 5, y + 5))
        else:
            body.append(mark.format(x=_f(lx), y=_f(y)))
        body.append(f'<text x="{_f(lx + 14)}" y="{_f(y + 9)}" font-size="10">{escape(text)}</text>')
        lx += w
    height = y + 24
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{_f(height)}" '
               f'viewBox="0 0 {width} {_f(height)}" font-family="sans-serif">')
    out.append('<rect width="100%" height="100%" fill="#fff"/>')
    out.extend(body)
    out.append("</svg>")
    return "\n".join(out) + "\n"
