"""Command-line front end.

Exit status: 0 on success, 2 for malformed input, 3 when the distribution has
no feasible structure, 4 for an internal failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .distribution import CrfDistribution, heatmap
from .models import FAMILIES, DistributionEmpty, Grammar, PartVector, StructureError
from .models import base as model_base

EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_INTERNAL = 4


class InputError(ValueError):
    """Malformed file or flag combination."""


# ----------------------------------------------------------------------
# file formats
# ----------------------------------------------------------------------


def _decode_number(v) -> float:
    if isinstance(v, str):
        if v.strip() == "-inf":
            return -math.inf
        raise InputError(f"unexpected string {v!r} in tensor data (only \"-inf\" is allowed)")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"tensor entries must be numbers, got {v!r}")
    if math.isnan(v) or v == math.inf:
        raise InputError("tensor entries must be finite or \"-inf\"")
    return float(v)


def _encode_number(x: float):
    x = float(x)
    if x == -math.inf:
        return "-inf"
    if not math.isfinite(x):
        raise ValueError(f"cannot encode {x}")
    return x


def parse_tensor(obj) -> np.ndarray:
    """``{"shape": [...], "data": [...], "kind": "log"}`` -> float array."""
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise InputError("tensor object needs 'shape' and 'data'")
    shape = obj["shape"]
    if not isinstance(shape, list) or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in shape):
        raise InputError(f"bad tensor shape {shape!r}")
    data = obj["data"]
    if not isinstance(data, list):
        raise InputError("tensor 'data' must be a flat list")
    if len(data) != int(np.prod(shape)):
        raise InputError(f"tensor has {len(data)} values, shape {shape} needs {int(np.prod(shape))}")
    kind = obj.get("kind", "log")
    if kind != "log":
        raise InputError(f"unsupported tensor kind {kind!r}")
    return np.array([_decode_number(v) for v in data], dtype=np.float64).reshape(shape)


def tensor_json(arr, kind: str = "log") -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": [_encode_number(v) for v in arr.reshape(-1)], "kind": kind}


def parse_grammar(obj) -> tuple[Grammar, np.ndarray, np.ndarray]:
    """Grammar file -> (grammar, rule potentials, terminal potentials)."""
    try:
        nt, start, rules = obj["nt"], obj["start"], obj["rules"]
        terms = parse_tensor(obj["terminals"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"grammar file needs nt, start, rules and terminals ({exc})") from exc
    if not isinstance(rules, list) or not rules:
        raise InputError("grammar needs a non-empty rule list")
    try:
        triples = [(int(r[0]), int(r[1]), int(r[2])) for r in rules]
        pots = np.array([_decode_number(r[3]) for r in rules])
        if any(len(r) != 4 for r in rules):
            raise InputError("each rule is [A, B, C, logpot]")
        grammar = Grammar(int(nt), int(start), tuple(triples))
    except (TypeError, IndexError) as exc:
        raise InputError(f"malformed rule list: {exc}") from exc
    if terms.ndim != 2 or terms.shape[1] != grammar.nt:
        raise InputError(f"terminals must be [N, {grammar.nt}], got {list(terms.shape)}")
    return grammar, pots, terms


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _flag_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_distribution(args) -> CrfDistribution:
    """Model descriptor from the potentials file and flags."""
    if not args.potentials:
        raise InputError("--potentials is required")
    obj = _load_json(args.potentials)
    family = args.model
    options = {}
    if family == "cfg":
        grammar, rules, terms = parse_grammar(obj)
        model = model_base.cfg(terms.shape[0], grammar)
        return CrfDistribution(model, (rules, terms))
    pots = parse_tensor(obj)
    shape = pots.shape

    def need(ndim, what):
        if len(shape) != ndim:
            raise InputError(f"{family} potentials must be {what}, got {list(shape)}")

    if family == "linear-chain":
        need(3, "[T, C, C]")
        if shape[1] != shape[2]:
            raise InputError("chain transitions must be square")
        model = model_base.linear_chain(shape[0], shape[1])
        if args.order:
            if args.order not in ("serial", "scan"):
                raise InputError("linear-chain order is serial or scan")
            options["order"] = args.order
    elif family == "semi-markov":
        need(4, "[N, K, C, C]")
        if shape[2] != shape[3] or shape[1] > shape[0]:
            raise InputError("semi-Markov potentials need square label blocks and K <= N")
        model = model_base.semi_markov(shape[0], shape[1], shape[2])
    elif family == "cky":
        need(3, "[C, N, N]")
        if shape[1] != shape[2]:
            raise InputError("span potentials must be [C, N, N]")
        model = model_base.simple_cky(shape[1], shape[0])
        if args.order:
            if args.order not in ("naive", "vectorized"):
                raise InputError("cky order is naive or vectorized")
            options["order"] = args.order
    elif family in ("dep", "dep-np"):
        need(2, "[N+1, N]")
        if shape[0] != shape[1] + 1:
            raise InputError("arc potentials must be [N+1, N]")
        make = model_base.dependency if family == "dep" else model_base.dependency_np
        model = make(shape[1], args.multi_root)
    elif family == "alignment":
        need(3, "[3, N, M]")
        if shape[0] != 3:
            raise InputError("alignment potentials stack match, down and right planes: [3, N, M]")
        steps = tuple(s.strip() for s in args.step_set.split(",")) if args.step_set else model_base.STEP_NAMES
        try:
            model = model_base.alignment(shape[1], shape[2], steps, args.steps or "nw")
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    else:
        raise InputError(f"unknown model {family!r}")
    return CrfDistribution(model, pots, **options)


# ----------------------------------------------------------------------
# output
# ----------------------------------------------------------------------


def _plain(x):
    """Recursively convert numpy scalars/arrays for JSON."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return _encode_number(x)
    return x


def _structure_record(dist: CrfDistribution, z: PartVector, score=None) -> dict:
    rec = {"structure": _plain(dist.to_structure(z)), "parts": z.parts}
    if score is not None:
        rec["score"] = _encode_number(score)
    return rec


def _emit(args, payload, text: str):
    fmt = args.format or ("json" if args.out else "text")
    body = json.dumps(_plain(payload)) if fmt == "json" else text
    if args.out:
        Path(args.out).write_text(body + "\n")
    else:
        sys.stdout.write(body + "\n")


def write_pgm(path, image: np.ndarray):
    """Plain-text greyscale image, pixel = round(255 * value)."""
    img = np.clip(np.rint(255.0 * np.nan_to_num(np.asarray(image, dtype=np.float64))), 0, 255).astype(int)
    h, w = img.shape
    lines = ["P2", f"{w} {h}", "255"] + [" ".join(str(v) for v in row) for row in img]
    Path(path).write_text("\n".join(lines) + "\n")


def _structure_from_file(dist: CrfDistribution, path) -> PartVector:
    obj = _load_json(path)
    try:
        if isinstance(obj, dict) and "parts" in obj:
            return PartVector.from_parts(dist.model, obj["parts"])
        native = obj["structure"] if isinstance(obj, dict) and "structure" in obj else obj
        return dist.from_structure(native)
    except (TypeError, KeyError, IndexError) as exc:
        raise InputError(f"cannot read a structure from {path}: {exc}") from exc


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_partition(args):
    dist = build_distribution(args)
    A = dist.log_partition()
    _emit(args, {"log_partition": float(A), "empty": A.empty}, repr(float(A)))
    return EXIT_EMPTY if A.empty else 0


def cmd_marginals(args):
    dist = build_distribution(args)
    if dist.empty:
        raise DistributionEmpty("no structure has finite score")
    marg = dist.marginals()
    if isinstance(marg, tuple):
        payload = {"rules": tensor_json(marg[0], "marginal"), "terminals": tensor_json(marg[1], "marginal")}
        text = "\n".join(" ".join(f"{v:.10g}" for v in np.atleast_1d(m).reshape(-1)) for m in marg)
    else:
        payload = tensor_json(marg, "marginal")
        text = " ".join(f"{v:.10g}" for v in marg.reshape(-1))
    if args.heatmap:
        write_pgm(args.heatmap, heatmap(dist, marg))
    _emit(args, payload, text)
    return 0


def cmd_argmax(args):
    dist = build_distribution(args)
    z, score = dist.argmax()
    rec = _structure_record(dist, z, score)
    _emit(args, rec, f"{json.dumps(rec['structure'])} {score!r}")
    return 0


def cmd_kbest(args):
    dist = build_distribution(args)
    best = dist.kmax(args.k)
    recs = [_structure_record(dist, z, s) for z, s in best]
    _emit(args, recs, "\n".join(f"{json.dumps(r['structure'])} {r['score']!r}" for r in recs))
    return 0


def cmd_sample(args):
    dist = build_distribution(args)
    draws = dist.sample(np.random.Generator(np.random.Philox(args.seed)), args.k)
    recs = [_structure_record(dist, z) for z in draws]
    _emit(args, recs, "\n".join(json.dumps(r["structure"]) for r in recs))
    return 0


def cmd_entropy(args):
    dist = build_distribution(args)
    H = dist.entropy()
    _emit(args, {"entropy": H}, repr(H))
    return 0


def cmd_count(args):
    dist = build_distribution(args)
    n = dist.count()
    _emit(args, {"count": n}, str(n))
    return 0


def cmd_logprob(args):
    dist = build_distribution(args)
    if not args.structure:
        raise InputError("logprob needs --structure")
    z = _structure_from_file(dist, args.structure)
    if not dist.validate(z):
        raise InputError("structure is not legal for this model")
    lp = dist.log_prob(z)
    _emit(args, {"log_prob": lp, "score": dist.score(z)}, repr(lp))
    return 0


def cmd_bench(args):
    from . import bench

    argv = []
    if args.out:
        argv += ["--out", args.out]
    if args.quick:
        argv += ["--quick"]
    argv += ["--seed", str(args.seed)]
    return bench.main(argv)


def cmd_selftest(args):
    from . import selftest

    return selftest.main(quiet=args.format == "json")


COMMANDS = {
    "partition": cmd_partition,
    "marginals": cmd_marginals,
    "argmax": cmd_argmax,
    "kbest": cmd_kbest,
    "sample": cmd_sample,
    "entropy": cmd_entropy,
    "count": cmd_count,
    "logprob": cmd_logprob,
    "bench": cmd_bench,
    "selftest": cmd_selftest,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structcrf", description="Inference queries on structured CRF distributions.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--model", choices=FAMILIES, default="linear-chain")
        p.add_argument("--potentials", help="tensor JSON (grammar JSON for cfg)")
        p.add_argument("--out", help="write the result here instead of stdout")
        p.add_argument("--seed", type=int, default=0, help="seed for sample and bench")
        p.add_argument("--k", type=int, default=1, help="structures for kbest/sample")
        p.add_argument("--order", choices=("serial", "scan", "naive", "vectorized"))
        p.add_argument("--steps", choices=("nw", "dtw"), help="alignment scoring mode")
        p.add_argument("--step-set", help="comma-separated alignment moves (default down,right,diag)")
        p.add_argument("--multi-root", type=_flag_bool, default=True)
        p.add_argument("--format", choices=("json", "text"), help="default: json with --out, text otherwise")
        p.add_argument("--heatmap", help="marginals: write a PGM heatmap")
        p.add_argument("--structure", help="logprob: structure JSON (as written by argmax --out)")
        p.add_argument("--quick", action="store_true", help="bench: small sizes")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.k < 1:
        parser.error("--k must be positive")
    try:
        return COMMANDS[args.command](args)
    except DistributionEmpty as exc:
        print(f"error: empty distribution: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (InputError, StructureError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
