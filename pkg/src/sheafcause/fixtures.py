"""Small reference models with hand-checkable behaviour.

Each builder returns ``(sheaf, rule, initial)``.
"""

from __future__ import annotations

from .dynamics import UpdateRule
from .model import Sheaf

BIT = ("0", "1")


def id2():
    """Nodes u, v and one edge u->v; binary stalks, identity restriction maps."""
    sheaf = Sheaf.build({"u": BIT, "v": BIT}, [("e", "u", "v", BIT, None, None)])
    return sheaf, UpdateRule.identity(sheaf), sheaf.section_from_nodes([1, 1])


def flipped_id2():
    """ID2 with the head map replaced by the flip 0->1, 1->0; its sections have v = 1 - u."""
    sheaf = Sheaf.build({"u": BIT, "v": BIT}, [("e", "u", "v", BIT, None, (1, 0))])
    return sheaf, UpdateRule.identity(sheaf), sheaf.section_from_nodes([0, 1])


def flipped_loop():
    """One binary node with a self-loop whose head map flips: x = 1 - x has no solution."""
    sheaf = Sheaf.build({"a": BIT}, [("loop", "a", "a", BIT, None, (1, 0))])
    return sheaf, UpdateRule.identity(sheaf), sheaf.section_from_nodes([0])


def parity_path():
    """Path a->b->c of 4-state nodes whose edges carry the endpoint state mod 2."""
    parity = (0, 1, 0, 1)
    four = ("0", "1", "2", "3")
    sheaf = Sheaf.build(
        {"a": four, "b": four, "c": four},
        [("ab", "a", "b", BIT, parity, parity), ("bc", "b", "c", BIT, parity, parity)],
    )
    return sheaf, UpdateRule.identity(sheaf), sheaf.section_from_nodes([0, 0, 0])


def _copy(own, inputs):
    return inputs[0] if inputs else own


def copy_chain(n: int = 3, failed: int = 0, healthy: int = 1):
    """Line n0->n1->...; every non-root node copies its incoming edge. State 0 is 'failed'."""
    names = [f"n{i}" for i in range(n)]
    labels = ("failed", "ok") if (failed, healthy) == (0, 1) else BIT
    sheaf = Sheaf.build(
        {v: labels for v in names},
        [(f"{a}->{b}", a, b, labels, None, None) for a, b in zip(names, names[1:])],
    )
    rule = UpdateRule.from_functions(sheaf, {v: _copy for v in names[1:]})
    return sheaf, rule, sheaf.section_from_nodes([healthy] * n)


def two_copy_chains():
    """Disconnected copies of the 2-node copy chain: a->b and c->d."""
    sheaf = Sheaf.build(
        {v: BIT for v in "abcd"},
        [("ab", "a", "b", BIT, None, None), ("cd", "c", "d", BIT, None, None)],
    )
    rule = UpdateRule.from_functions(sheaf, {"b": _copy, "d": _copy})
    return sheaf, rule, sheaf.section_from_nodes([1, 1, 1, 1])


def degenerate_pair():
    """Two binary nodes x<->y with identity maps; each becomes x AND y.

    The joint micro state (x, y) indexed 00, 01, 10, 11 = 0, 1, 2, 3 follows
    the degenerate map {0, 1, 2} -> 0, 3 -> 3. The block {x, y} has exactly
    two local sections, 00 (the basin of {0, 1, 2}) and 11, and its induced
    macro dynamics fix both.
    """
    sheaf = Sheaf.build(
        {"x": BIT, "y": BIT},
        [("x->y", "x", "y", BIT, None, None), ("y->x", "y", "x", BIT, None, None)],
    )
    both = lambda own, inputs: own & inputs[0]
    rule = UpdateRule.from_functions(sheaf, {"x": both, "y": both})
    return sheaf, rule, sheaf.section_from_nodes([1, 1])


def majority_triangle():
    """Three binary nodes, each reading the other two; next state is the majority of all three."""
    names = ("a", "b", "c")
    edges = [(f"{s}->{t}", s, t, BIT, None, None) for s in names for t in names if s != t]
    sheaf = Sheaf.build({v: BIT for v in names}, edges)
    vote = lambda own, inputs: int(own + sum(inputs) >= 2)
    rule = UpdateRule.from_functions(sheaf, {v: vote for v in names})
    return sheaf, rule, sheaf.section_from_nodes([0, 0, 0])


REFERENCE = {
    "id2": id2,
    "flipped-id2": flipped_id2,
    "flipped-loop": flipped_loop,
    "parity-path": parity_path,
    "copy-chain": copy_chain,
    "two-copy-chains": two_copy_chains,
    "degenerate": degenerate_pair,
    "majority-triangle": majority_triangle,
}
