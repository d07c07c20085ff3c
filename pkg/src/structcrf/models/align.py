"""Monotone alignments of two sequences of lengths ``N`` and ``M``.

Potentials are stacked as ``l[3, N, M]``: plane 0 is the match score, plane 1
the ``down`` skip (advance the first sequence only) and plane 2 the ``right``
skip (advance the second sequence only).

``nw`` mode walks the ``(N+1) x (M+1)`` lattice of prefix pairs from
``(0, 0)`` to ``(N, M)``.  A step that lands on ``(i, j)`` with ``i, j >= 1``
uses cell ``(i-1, j-1)`` of the plane of its kind; steps along the top row or
left column (leading gaps) carry no part.

``dtw`` mode walks the ``N x M`` cell grid from ``(0, 0)`` to
``(N-1, M-1)``.  Every visited cell adds its match score, and a skip step
additionally adds the skip score of the cell it lands on.
"""

from __future__ import annotations

import numpy as np

from ..adjoint import Tape
from ..semiring import Log, Semiring
from .base import STEP_NAMES, DistributionEmpty, Family, StructureError, as_int_array, register

MODES = ("nw", "dtw")
_MOVES = {"down": (1, 0), "right": (0, 1), "diag": (1, 1)}
_PLANE = {"diag": 0, "down": 1, "right": 2}


def reachable(N: int, M: int, steps, mode: str = "nw") -> bool:
    """Whether some path of the given step kinds joins the two corners."""
    rows, cols = (N + 1, M + 1) if mode == "nw" else (N, M)
    ok = np.zeros((rows, cols), dtype=bool)
    ok[0, 0] = True
    for i in range(rows):
        for j in range(cols):
            for s in steps:
                di, dj = _MOVES[s]
                if i >= di and j >= dj and ok[i - di, j - dj]:
                    ok[i, j] = True
    return bool(ok[-1, -1])


def _normalise_steps(steps):
    steps = tuple(steps)
    unknown = set(steps) - set(STEP_NAMES)
    if not steps or unknown:
        raise ValueError(f"steps must be a non-empty subset of {STEP_NAMES}")
    return tuple(s for s in STEP_NAMES if s in steps)


def alignment_partition(match, skips, semiring: Semiring = Log, steps=STEP_NAMES, mode: str = "nw", lengths=None, features=None):
    """Sum over monotone paths, one anti-diagonal of the chart per step.

    ``match`` is ``[N, M]`` and ``skips`` is ``[2, N, M]`` (optionally with a
    leading batch axis).  ``lengths`` is ``[B, 2]`` of per-instance ``(N, M)``.
    The tape has one leaf shaped ``[3, N, M]`` (or ``[B, 3, N, M]``).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    steps = _normalise_steps(steps)
    match = np.asarray(match, dtype=np.float64)
    skips = np.asarray(skips, dtype=np.float64)
    batched = match.ndim == 3
    if match.ndim not in (2, 3) or skips.shape != match.shape[:-2] + (2,) + match.shape[-2:]:
        raise ValueError(f"need match [N, M] and skips [2, N, M], got {match.shape} and {skips.shape}")
    pots = np.concatenate([match[..., None, :, :], skips], axis=-3)
    if np.isnan(pots).any():
        raise ValueError("NaN potential")
    B = pots.shape[0] if batched else 1
    N, M = pots.shape[-2:]
    if lengths is not None:
        lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), (B, 2))
        if lengths.min() < 1 or lengths[:, 0].max() > N or lengths[:, 1].max() > M:
            raise ValueError("alignment lengths out of range")
        pairs = {(int(a), int(b)) for a, b in lengths}
    else:
        pairs = {(N, M)}
    for n, m in pairs:
        if not reachable(n, m, steps, mode):
            raise DistributionEmpty(f"steps {steps} cannot align lengths {n} and {m}")

    tape = Tape(semiring)
    leaf = tape.leaf(pots, features, name="alignment")
    x = leaf if batched else tape.reshape(leaf, (1, 3, N, M))
    all_ = slice(None)

    if mode == "nw":
        rows, cols = N + 1, M + 1
        top = np.arange(rows)[:, None] == 0
        left = np.arange(cols)[None, :] == 0
        scores = {
            "diag": _bordered(tape, x[:, 0], semiring, np.zeros((rows, cols), bool)),
            "down": _bordered(tape, x[:, 1], semiring, left & ~top),
            "right": _bordered(tape, x[:, 2], semiring, top & ~left),
        }
        chart = tape.chart((B, rows, cols), name="lattice")
        chart.write((all_, 0, 0), tape.one((B,)))
    else:
        rows, cols = N, M
        down = tape.concat([tape.zero((B, 1, M)), x[:, 1, 1:, :]], axis=1)
        right = tape.concat([tape.zero((B, N, 1)), x[:, 2, :, 1:]], axis=2)
        inner = np.ones((rows, cols), dtype=bool)
        inner[0, :] = False
        inner[:, 0] = False
        diag = tape.const(_filled(semiring, inner, B))
        scores = {"diag": diag, "down": down, "right": right}
        cells = x[:, 0]
        chart = tape.chart((B, rows, cols), name="cells")
        chart.write((all_, 0, 0), cells[:, 0, 0])

    for d in range(1, rows + cols - 1):
        i = np.arange(max(0, d - cols + 1), min(rows - 1, d) + 1)
        j = d - i
        terms = []
        for s in steps:
            di, dj = _MOVES[s]
            prev = chart.read((all_, np.maximum(i - di, 0), np.maximum(j - dj, 0)))
            terms.append(tape.reshape(tape.times(prev, scores[s][:, i, j]), (B, 1, len(i))))
        total = terms[0] if len(terms) == 1 else tape.concat(terms, axis=1)
        val = tape.sum(total, 1)
        if mode == "dtw":
            val = tape.times(val, cells[:, i, j])
        chart.write((all_, i, j), val)

    if lengths is None:
        root = chart.read((all_, rows - 1, cols - 1))
    else:
        off = 0 if mode == "nw" else 1
        root = chart.read((np.arange(B), lengths[:, 0] - off, lengths[:, 1] - off))
    if not batched:
        root = tape.reshape(root, ())
    return root, tape


def _filled(semiring, ones: np.ndarray, B: int) -> np.ndarray:
    """Batched constant grid: semiring one where ``ones`` holds, zero elsewhere."""
    shape = (B,) + ones.shape
    return np.where(np.broadcast_to(ones, shape), semiring.one(shape), semiring.zero(shape))


def _bordered(tape, body, semiring, free: np.ndarray):
    """Lattice-shaped step scores: ``body`` at interior points, border cells one if ``free`` else zero."""
    B, N, M = body.shape
    border = tape.const(_filled(semiring, free, B))
    padded = tape.concat([tape.zero((B, 1, M)), body], axis=1)
    padded = tape.concat([tape.zero((B, N + 1, 1)), padded], axis=2)
    interior = np.zeros((N + 1, M + 1), dtype=bool)
    interior[1:, 1:] = True
    return tape.select(np.broadcast_to(interior, (B, N + 1, M + 1)), padded, border)


def path_points(steps_taken, mode: str):
    """Points (nw) or cells (dtw) visited by a step list, starting at the origin."""
    pts = [(0, 0)]
    for s in steps_taken:
        if s not in _MOVES:
            raise StructureError(f"unknown step {s!r}")
        di, dj = _MOVES[s]
        pts.append((pts[-1][0] + di, pts[-1][1] + dj))
    return pts


@register("alignment")
class Alignment(Family):
    name = "alignment"
    fixed_size = False

    def part_shape(self, model):
        return (3, model.N, model.M)

    def partition(self, model, potentials, semiring, features=None, lengths=None, **_):
        pots = np.asarray(potentials, dtype=np.float64)
        return alignment_partition(
            pots[..., 0, :, :],
            pots[..., 1:, :, :],
            semiring,
            steps=model.options["steps"],
            mode=model.options["mode"],
            lengths=lengths,
            features=features,
        )

    def encode(self, model, path):
        N, M = model.N, model.M
        mode, allowed = model.options["mode"], model.options["steps"]
        try:
            path = [str(s) for s in path]
        except TypeError as exc:
            raise StructureError(f"malformed step list {path!r}") from exc
        for s in path:
            if s not in allowed:
                raise StructureError(f"step {s!r} not in the model's step set {allowed}")
        pts = path_points(path, mode)
        end = (N, M) if mode == "nw" else (N - 1, M - 1)
        if pts[-1] != end or any(i > end[0] or j > end[1] for i, j in pts):
            raise StructureError(f"path ends at {pts[-1]}, expected {end}")
        z = np.zeros((3, N, M), dtype=np.int64)
        if mode == "dtw":
            z[0, 0, 0] = 1
        for s, (i, j) in zip(path, pts[1:]):
            if mode == "nw":
                if i >= 1 and j >= 1:
                    z[_PLANE[s], i - 1, j - 1] = 1
            else:
                z[0, i, j] = 1
                if s != "diag":
                    z[_PLANE[s], i, j] = 1
        return z

    def decode(self, model, indicator):
        N, M = model.N, model.M
        mode = model.options["mode"]
        z = as_int_array(indicator, (3, N, M))
        if z.max(initial=0) > 1:
            raise StructureError("alignment part used twice")
        path = []
        if mode == "nw":
            i, j = N, M
            while (i, j) != (0, 0):
                if i == 0:
                    s = "right"
                elif j == 0:
                    s = "down"
                else:
                    hits = [s for s in ("diag", "down", "right") if z[_PLANE[s], i - 1, j - 1]]
                    if len(hits) != 1:
                        raise StructureError(f"point ({i}, {j}) needs exactly one incoming step")
                    s = hits[0]
                path.append(s)
                di, dj = _MOVES[s]
                i, j = i - di, j - dj
        else:
            i, j = N - 1, M - 1
            while (i, j) != (0, 0):
                if not z[0, i, j]:
                    raise StructureError(f"cell ({i}, {j}) is not visited")
                skip = [s for s in ("down", "right") if z[_PLANE[s], i, j]]
                if len(skip) > 1:
                    raise StructureError(f"cell ({i}, {j}) entered twice")
                s = skip[0] if skip else "diag"
                di, dj = _MOVES[s]
                if i < di or j < dj:
                    raise StructureError(f"step {s} leaves the grid at ({i}, {j})")
                path.append(s)
                i, j = i - di, j - dj
        return path[::-1]

    def heatmap(self, model, marginals):
        return np.asarray(marginals).sum(axis=0)
