"""Skeleton data model and the 69-joint template hierarchy.

Every rig entry is a bone running from ``head`` to ``tail``. The joint that
entry stands for sits at the bone's tail, and a child bone starts where its
parent ends (child head == parent tail). Leaf bones end at the extremities:
head top, toes and fingertips.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CATEGORIES = ("head", "neck", "shoulder", "spine", "hips", "elbow", "wrist", "knee", "foot", "finger")
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
ANCHOR_TOL = 1e-6


class DataError(ValueError):
    """Invalid dataset content; the message carries file/line context when known."""


@dataclass
class Skeleton:
    names: list[str]
    parents: list[int | None]
    heads: np.ndarray  # J x 3
    tails: np.ndarray  # J x 3, the joint positions
    categories: list[str]
    leaf: np.ndarray  # J bool
    _children: list[list[int]] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.heads = np.asarray(self.heads, dtype=np.float64).reshape(-1, 3)
        self.tails = np.asarray(self.tails, dtype=np.float64).reshape(-1, 3)
        self.leaf = np.asarray(self.leaf, dtype=bool)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def joints(self) -> np.ndarray:
        """J x 3 groundtruth joint positions."""
        return self.tails

    @property
    def root(self) -> int:
        return self.parents.index(None)

    def children(self, k: int) -> list[int]:
        if self._children is None:
            kids: list[list[int]] = [[] for _ in self.names]
            for i, p in enumerate(self.parents):
                if p is not None:
                    kids[p].append(i)
            self._children = kids
        return self._children[k]

    def topological_order(self) -> list[int]:
        order, frontier = [], [self.root]
        while frontier:
            k = frontier.pop(0)
            order.append(k)
            frontier.extend(self.children(k))
        return order

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown joint name {name!r}") from None

    def is_finger(self) -> np.ndarray:
        return np.array([c == "finger" for c in self.categories])

    def with_positions(self, heads: np.ndarray, tails: np.ndarray) -> "Skeleton":
        return Skeleton(list(self.names), list(self.parents), heads, tails, list(self.categories), self.leaf.copy())

    def transformed(self, fn) -> "Skeleton":
        return self.with_positions(fn(self.heads), fn(self.tails))

    def validate(self, source: str = "skeleton", expected_names: list[str] | None = None) -> None:
        n = len(self.names)
        if not (len(self.parents) == len(self.categories) == len(self.leaf) == len(self.heads) == len(self.tails) == n):
            raise DataError(f"{source}: inconsistent joint field lengths")
        if len(set(self.names)) != n:
            raise DataError(f"{source}: duplicate joint names")
        roots = [i for i, p in enumerate(self.parents) if p is None]
        if len(roots) != 1:
            raise DataError(f"{source}: expected exactly one root joint, found {len(roots)}")
        for i, p in enumerate(self.parents):
            if p is not None and not 0 <= p < n:
                raise DataError(f"{source}: joint {self.names[i]!r} has invalid parent index {p}")
        self._children = None
        if len(self.topological_order()) != n:
            raise DataError(f"{source}: parent links do not form a single tree (cycle or detached joints)")
        for i, c in enumerate(self.categories):
            if c not in CATEGORIES:
                raise DataError(f"{source}: joint {self.names[i]!r} has unknown category {c!r}")
        for i, p in enumerate(self.parents):
            if p is None:
                continue
            gap = np.linalg.norm(self.heads[i] - self.tails[p])
            scale = 1.0 + np.abs(self.tails[p]).max()
            if gap > ANCHOR_TOL * scale:
                raise DataError(f"{source}: head of {self.names[i]!r} is not at the tail of its parent "
                                f"{self.names[p]!r} (gap {gap:.3g})")
        for i in np.flatnonzero(self.leaf):
            if self.children(int(i)):
                raise DataError(f"{source}: joint {self.names[i]!r} is flagged leaf but has children")
        if expected_names is not None and list(self.names) != list(expected_names):
            if len(self.names) != len(expected_names):
                raise DataError(f"{source}: {len(self.names)} joints, manifest expects {len(expected_names)}")
            for got, want in zip(self.names, expected_names):
                if got != want:
                    raise DataError(f"{source}: joint {got!r} where manifest expects {want!r}")


def _side(name: str, side: str) -> str:
    return f"{name}_{side}"


def template_layout() -> list[tuple[str, str | None, tuple[float, float, float], str]]:
    """(name, parent, rest joint position in metres, category) for the 69-joint rig.

    Y is up, +X is the character's left, +Z forward; arms hang in an A-pose.
    """
    rows: list[tuple[str, str | None, tuple[float, float, float], str]] = [
        ("pelvis", None, (0.0, 0.95, 0.0), "hips"),
        ("spine_01", "pelvis", (0.0, 1.05, -0.005), "spine"),
        ("spine_02", "spine_01", (0.0, 1.17, -0.01), "spine"),
        ("spine_03", "spine_02", (0.0, 1.29, -0.01), "spine"),
        ("spine_04", "spine_03", (0.0, 1.40, -0.005), "spine"),
        ("neck_01", "spine_04", (0.0, 1.50, 0.0), "neck"),
        ("neck_02", "neck_01", (0.0, 1.56, 0.005), "neck"),
        ("head", "neck_02", (0.0, 1.62, 0.01), "head"),
        ("head_top", "head", (0.0, 1.80, 0.015), "head"),
    ]
    arm = np.array([np.sin(np.radians(50.0)), -np.cos(np.radians(50.0)), 0.0])
    fwd = np.array([0.0, 0.0, 1.0])
    base_along = {"thumb": 0.015, "index": 0.085, "middle": 0.09, "ring": 0.085, "pinky": 0.075}
    base_side = {"thumb": 0.035, "index": 0.026, "middle": 0.008, "ring": -0.01, "pinky": -0.027}
    seg_len = {"thumb": (0.04, 0.033, 0.028), "index": (0.042, 0.025, 0.022), "middle": (0.046, 0.028, 0.024),
               "ring": (0.043, 0.027, 0.023), "pinky": (0.034, 0.021, 0.02)}
    for side, sx in (("l", 1.0), ("r", -1.0)):
        mirror = np.array([sx, 1.0, 1.0])
        shoulder = np.array([0.18, 1.43, 0.0])
        elbow = shoulder + 0.29 * arm
        wrist = elbow + 0.26 * arm
        hand = wrist + 0.035 * arm
        rows += [
            (_side("clavicle", side), "spine_04", tuple(np.array([0.035, 1.44, 0.03]) * mirror), "shoulder"),
            (_side("shoulder", side), _side("clavicle", side), tuple(shoulder * mirror), "shoulder"),
            (_side("elbow", side), _side("shoulder", side), tuple(elbow * mirror), "elbow"),
            (_side("wrist", side), _side("elbow", side), tuple(wrist * mirror), "wrist"),
            (_side("hand", side), _side("wrist", side), tuple(hand * mirror), "wrist"),
        ]
        for f in FINGERS:
            base = wrist + base_along[f] * arm + base_side[f] * fwd
            direction = arm + (0.9 * fwd if f == "thumb" else 0.08 * base_side[f] / 0.03 * fwd)
            direction = direction / np.linalg.norm(direction)
            parent = _side("hand", side)
            pos = base
            for seg in range(4):
                name = _side(f"{f}_{seg + 1}", side)
                rows.append((name, parent, tuple(pos * mirror), "finger"))
                parent = name
                if seg < 3:
                    pos = pos + seg_len[f][seg] * direction
    for side, sx in (("l", 1.0), ("r", -1.0)):
        mirror = np.array([sx, 1.0, 1.0])
        rows += [
            (_side("hip", side), "pelvis", tuple(np.array([0.09, 0.91, 0.0]) * mirror), "hips"),
            (_side("knee", side), _side("hip", side), tuple(np.array([0.1, 0.5, 0.012]) * mirror), "knee"),
            (_side("ankle", side), _side("knee", side), tuple(np.array([0.105, 0.085, -0.02]) * mirror), "foot"),
            (_side("ball", side), _side("ankle", side), tuple(np.array([0.11, 0.025, 0.11]) * mirror), "foot"),
            (_side("toe", side), _side("ball", side), tuple(np.array([0.11, 0.02, 0.175]) * mirror), "foot"),
        ]
    return rows


def template_skeleton() -> Skeleton:
    """Rest-pose 69-joint template (29 body + 40 finger joints)."""
    rows = template_layout()
    names = [r[0] for r in rows]
    idx = {n: i for i, n in enumerate(names)}
    parents = [None if r[1] is None else idx[r[1]] for r in rows]
    tails = np.array([r[2] for r in rows], dtype=np.float64)
    heads = np.array([tails[p] if p is not None else tails[i] - (0.0, 0.1, 0.0) for i, p in enumerate(parents)])
    cats = [r[3] for r in rows]
    has_child = np.zeros(len(rows), dtype=bool)
    for p in parents:
        if p is not None:
            has_child[p] = True
    skel = Skeleton(names, parents, heads, tails, cats, ~has_child)
    skel.validate("template")
    return skel
