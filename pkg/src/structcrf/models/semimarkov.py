"""Semi-Markov CRF over segmentations of ``N`` positions.

Part ``l[n, k, c_prev, c]`` scores a segment that starts at position ``n``,
spans ``k + 1`` positions and carries label ``c`` after a segment labelled
``c_prev``.  The first segment's ``c_prev`` is a free initial label, so with
``K = 1`` the model is exactly a linear chain with ``T = N`` edges.
"""

from __future__ import annotations

import numpy as np

from ..adjoint import Tape
from ..semiring import Log, Semiring
from .base import Family, StructureError, as_int_array, register


def semimarkov_partition(potentials, semiring: Semiring = Log, lengths=None, features=None):
    """Segmental forward algorithm.  Returns ``(root, tape)``."""
    pots = np.asarray(potentials, dtype=np.float64)
    if pots.ndim not in (4, 5):
        raise ValueError(f"semi-Markov potentials must be [N, K, C, C] or batched, got {pots.shape}")
    batched = pots.ndim == 5
    B, N, K, C, C2 = (pots if batched else pots[None]).shape
    if C != C2:
        raise ValueError("label transition block must be square")
    if K > N:
        raise ValueError(f"segment bound K={K} exceeds length N={N}")
    if np.isnan(pots).any():
        raise ValueError("NaN potential")
    if lengths is not None:
        lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), (B,))
        if lengths.min() < 1 or lengths.max() > N:
            raise ValueError(f"lengths must lie in 1..{N}")

    tape = Tape(semiring)
    leaf = tape.leaf(pots, features, name="segments")
    x = leaf if batched else tape.reshape(leaf, (1, N, K, C, C))
    beta = tape.chart((B, N + 1, C), name="beta")
    beta.write((slice(None), 0), tape.one((B, C)))
    for end in range(1, N + 1):
        kk = min(K, end)
        ks = np.arange(kk)
        starts = end - 1 - ks
        prev = beta.read((slice(None), starts))
        seg = x[:, starts, ks]
        step = tape.matmul(tape.reshape(prev, (B, kk, 1, C)), seg, tag="segment")
        beta.write((slice(None), end), tape.sum(step, (1, 2)))
    if lengths is None:
        last = beta.read((slice(None), N))
    else:
        last = beta.read((np.arange(B), lengths))
    root = tape.sum(last, 1)
    if not batched:
        root = tape.reshape(root, ())
    return root, tape


@register("semi-markov")
class SemiMarkov(Family):
    name = "semi-markov"
    fixed_size = False

    def part_shape(self, model):
        return (model.N, model.K, model.C, model.C)

    def partition(self, model, potentials, semiring, features=None, lengths=None, **_):
        return semimarkov_partition(potentials, semiring, lengths=lengths, features=features)

    def encode(self, model, structure):
        if isinstance(structure, dict):
            init, segs = structure.get("init"), structure.get("segments")
        else:
            init, segs = structure
        N, K, C = model.N, model.K, model.C
        z = np.zeros((N, K, C, C), dtype=np.int64)
        try:
            prev = int(init)
            pos = 0
            for start, length, label in segs:
                start, length, label = int(start), int(length), int(label)
                if start != pos or not 1 <= length <= K or not 0 <= label < C or not 0 <= prev < C:
                    raise StructureError(f"bad segment {(start, length, label)}")
                z[start, length - 1, prev, label] = 1
                prev, pos = label, start + length
        except (TypeError, ValueError) as exc:
            if isinstance(exc, StructureError):
                raise
            raise StructureError(f"malformed segmentation: {structure!r}") from exc
        if pos != N:
            raise StructureError(f"segments cover {pos} of {N} positions")
        return z

    def decode(self, model, indicator):
        N, K, C = model.N, model.K, model.C
        z = as_int_array(indicator, (N, K, C, C))
        if z.max(initial=0) > 1:
            raise StructureError("segment used twice")
        pos, prev, segs, init = 0, None, [], None
        while pos < N:
            hits = np.argwhere(z[pos])
            if len(hits) != 1:
                raise StructureError(f"need exactly one segment starting at {pos}")
            k, cp, c = (int(v) for v in hits[0])
            if prev is None:
                init = cp
            elif cp != prev:
                raise StructureError(f"label mismatch entering position {pos}")
            segs.append([pos, k + 1, c])
            prev, pos = c, pos + k + 1
        if pos != N or int(z.sum()) != len(segs):
            raise StructureError("segments do not tile the sequence")
        return {"init": init, "segments": segs}

    def heatmap(self, model, marginals):
        return np.asarray(marginals).sum(axis=(2, 3))
