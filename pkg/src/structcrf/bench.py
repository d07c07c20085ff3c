"""Timing harness for the paired execution orders and kernels.

Each case runs two variants on identical in-memory inputs and records the
median, 10th and 90th percentile wall time plus a checksum of the result.
Paired checksums must agree; speed is only reported.

CSV columns: ``case,variant,size,batch,median_s,p10_s,p90_s,checksum``.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .models.chain import chain_partition
from .models.cky import cky_simple_partition
from .semiring import Log

COLUMNS = ("case", "variant", "size", "batch", "median_s", "p10_s", "p90_s", "checksum")
BROADCAST_LIMIT = 512


@dataclass
class BenchConfig:
    chain_lengths: tuple = (64, 512)
    chain_classes: int = 20
    cky_lengths: tuple = (20, 80)
    cky_classes: int = 1
    matmul_classes: tuple = (64, 100, 600)
    batch: int = 16
    broadcast_limit: int = BROADCAST_LIMIT
    repetitions: int = 5
    seed: int = 0
    threads: int = 1
    rows: list = field(default_factory=list)


QUICK = dict(chain_lengths=(16, 64), cky_lengths=(8, 16), matmul_classes=(20, 64), batch=4, repetitions=3)


class ChecksumMismatch(AssertionError):
    """Paired variants disagreed on their result."""


def _time(fn, reps):
    fn()  # warm-up (JIT compilation, caches)
    times, out = [], None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, np.median(times), np.percentile(times, 10), np.percentile(times, 90)


def _checksum(values) -> float:
    return float(np.sum(np.asarray(values, dtype=np.float64)))


def _pair(rows, case, size, batch, variants, reps, rtol=1e-9):
    sums = []
    for name, fn in variants:
        out, med, p10, p90 = _time(fn, reps)
        s = _checksum(out)
        sums.append(s)
        rows.append(
            {
                "case": case,
                "variant": name,
                "size": size,
                "batch": batch,
                "median_s": f"{med:.6g}",
                "p10_s": f"{p10:.6g}",
                "p90_s": f"{p90:.6g}",
                "checksum": f"{s:.12e}",
            }
        )
    if not np.allclose(sums, sums[0], rtol=rtol, atol=0.0):
        raise ChecksumMismatch(f"{case} size {size}: checksums {sums} disagree")


def _skipped(rows, case, variant, size, batch, why):
    rows.append(
        {
            "case": case,
            "variant": variant,
            "size": size,
            "batch": batch,
            "median_s": "skipped",
            "p10_s": "skipped",
            "p90_s": "skipped",
            "checksum": why,
        }
    )


def broadcast_bytes(batch: int, classes: int) -> int:
    """Memory of the materialised ``batch x C x C x C`` broadcast tensor."""
    return batch * classes**3 * 8


def bench_suite(config: BenchConfig) -> list[dict]:
    """Run every case; returns CSV rows (and raises on checksum mismatch)."""
    rng = np.random.default_rng(config.seed)
    rows: list[dict] = []
    if _kernels.HAVE_NUMBA:
        import numba

        numba.set_num_threads(max(1, min(config.threads, numba.config.NUMBA_NUM_THREADS)))
    B, reps = config.batch, config.repetitions

    for T in config.chain_lengths:
        pots = rng.normal(size=(B, T, config.chain_classes, config.chain_classes))
        _pair(
            rows,
            "chain",
            T,
            B,
            [(order, lambda o=order: chain_partition(pots, Log, order=o)[0].result()) for order in ("serial", "scan")],
            reps,
        )

    for N in config.cky_lengths:
        pots = rng.normal(size=(B, config.cky_classes, N, N))
        _pair(
            rows,
            "cky",
            N,
            B,
            [(order, lambda o=order: cky_simple_partition(pots, Log, order=o)[0].result()) for order in ("naive", "vectorized")],
            reps,
        )

    for C in config.matmul_classes:
        if C > config.broadcast_limit:
            # the broadcast tensor would not fit; time the fused kernel alone on one instance
            a = rng.normal(size=(1, C, C)) * 10
            b = rng.normal(size=(1, C, C)) * 10
            _skipped(rows, "logmatmul", "broadcast", C, 1, f"needs {broadcast_bytes(1, C)} bytes")
            _pair(rows, "logmatmul", C, 1, [("fused", lambda: _kernels.log_matmul(a, b))], 1)
            continue
        a = rng.normal(size=(B, C, C)) * 10
        b = rng.normal(size=(B, C, C)) * 10
        print(f"logmatmul C={C}: broadcast tensor holds {broadcast_bytes(B, C)} bytes", file=sys.stderr)
        _pair(
            rows,
            "logmatmul",
            C,
            B,
            [("broadcast", lambda: _kernels.log_matmul_broadcast(a, b)), ("fused", lambda: _kernels.log_matmul(a, b))],
            reps,
        )
        backends = _kernels.available_backends()
        if len(backends) > 1:
            _pair(
                rows,
                "backend",
                C,
                B,
                [(name, lambda n=name: _kernels.log_matmul(a, b, backend=n)) for name in backends],
                reps,
            )
    config.rows = rows
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="structcrf bench", description=__doc__.splitlines()[0])
    parser.add_argument("--out", help="CSV path (default stdout)")
    parser.add_argument("--quick", action="store_true", help="small sizes for smoke runs")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--reps", type=int)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    config = BenchConfig(seed=args.seed, threads=args.threads, **(QUICK if args.quick else {}))
    if args.reps:
        config.repetitions = args.reps
    try:
        rows = bench_suite(config)
    except ChecksumMismatch as exc:
        print(f"checksum mismatch: {exc}", file=sys.stderr)
        return 4
    text = to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
