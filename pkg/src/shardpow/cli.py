"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import econ
from .consensus import replay_stream
from .core import EncodingError, difficulty
from .mmr import (WeightedMMR, WeightProofSample, prove_chain_weight, verify_chain_weight, verify_inclusion,
                  weight_of)
from .shard_tree import MergedMiningProof, ShardMerkleTree, verify_merged_mining
from .sim import SimConfigError, load_config, run
from .tree_encoding import MAGIC, REGULAR, MalformedEncoding, decode_orange, encode_orange

OK, FAILED, USAGE = 0, 1, 2


class InputError(Exception):
    """Unreadable or invalid input; maps to exit code 2."""


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("must be a 64-bit unsigned integer")
    return value


def _nonneg(text: str) -> int:
    value = _u64(text)
    if value >= 1 << 32:
        raise argparse.ArgumentTypeError("too large")
    return value


def _positive(text: str) -> int:
    value = _nonneg(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _hex(value, what: str, size: int | None = None) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except (TypeError, ValueError):
        raise InputError(f"{what} must be a hex string") from None
    if size is not None and len(raw) != size:
        raise InputError(f"{what} must be {size} bytes")
    return raw


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def bundled_scenarios() -> list[str]:
    root = resources.files("shardpow") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _load_scenario(name_or_path: str):
    path = Path(name_or_path)
    if path.exists():
        text, fmt = path.read_text(), "json" if path.suffix == ".json" else "toml"
    elif name_or_path in bundled_scenarios():
        text = (resources.files("shardpow") / "scenarios" / f"{name_or_path}.toml").read_text()
        fmt = "toml"
    else:
        raise InputError(f"no config file or bundled scenario named {name_or_path!r} "
                         f"(bundled: {', '.join(bundled_scenarios())})")
    try:
        return load_config(text, fmt)
    except SimConfigError as exc:
        raise InputError(f"config error: {exc}") from None
    except ValueError as exc:  # TOML/JSON syntax
        raise InputError(f"cannot parse {name_or_path}: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    config = _load_scenario(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.export and config.mode == "fast":
        raise InputError("--export needs mode 'full' or 'real'")
    result = run(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        (out / "stats.json").write_text(json.dumps(result.stats.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        (out / "epochs.csv").write_text(result.stats.epochs_csv())
        (out / "miners.csv").write_text(result.stats.miners_csv())
    (out / "events.jsonl").write_text(result.events_jsonl())
    if args.export:
        Path(args.export).write_bytes(result.export())
    shares = result.stats.shares()
    print(json.dumps({"bc_height": result.stats.chains["bc"].main_blocks,
                      "shares": {k: round(v, 4) for k, v in shares.items()},
                      "out": str(out)}))
    return OK


def cmd_verify_chain(args) -> int:
    data = _read_bytes(args.input)
    try:
        _, reports = replay_stream(data)
    except EncodingError as exc:
        raise InputError(f"malformed export: {exc}") from None
    if args.kind == "bc":
        reports = [r for r in reports if r.chain == "bc"]
    elif args.kind == "sc":
        reports = [r for r in reports if r.chain != "bc"]
        if args.shard is not None:
            reports = [r for r in reports if r.chain == str(args.shard)]
            if not reports:
                raise InputError(f"no blocks for shard {args.shard}")
    bad = [r for r in reports if not r.ok]
    if args.quiet:
        for r in bad:
            print(json.dumps(r.to_dict()))
    else:
        for r in reports:
            print(json.dumps(r.to_dict()))
    print(json.dumps({"blocks": len(reports), "failed": len(bad)}), file=sys.stderr)
    return FAILED if bad else OK


def _leaves_from(spec) -> tuple[int, dict[int, bytes]]:
    if not isinstance(spec, dict) or "shard_count" not in spec or "leaves" not in spec:
        raise InputError("leaves file needs 'shard_count' and a 'leaves' object {shard id: hex hash}")
    try:
        count = int(spec["shard_count"])
        leaves = {int(k): _hex(v, f"leaf {k}", 32) for k, v in spec["leaves"].items()}
    except (TypeError, ValueError, AttributeError) as exc:
        raise InputError(f"bad leaves file: {exc}") from None
    if count < 1:
        raise InputError("shard_count must be >= 1")
    return count, leaves


def cmd_mm_prove(args) -> int:
    count, leaves = _leaves_from(_read_json(args.leaves))
    try:
        tree = ShardMerkleTree(count, leaves)
        proof = tree.prove_merged_mining(args.shard)
    except (KeyError, ValueError) as exc:
        raise InputError(exc.args[0]) from None
    _emit({"root": tree.root.hex(), "shard_count": count, "shard_id": args.shard,
           "mm_number": tree.mined_upper_bound(), "proof": proof.serialize().hex(),
           "encoding": proof.orange_encoding.bits}, args.out)
    return OK


def cmd_mm_verify(args) -> int:
    doc = _read_json(args.proof)
    try:
        root = _hex(doc["root"], "root", 32)
        proof = MergedMiningProof.deserialize(_hex(doc["proof"], "proof"))
        shard_id, mm, count = int(doc["shard_id"]), int(doc["mm_number"]), int(doc["shard_count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad proof file: {exc}") from None
    ok = verify_merged_mining(root, proof, shard_id, mm, count)
    print(json.dumps({"ok": ok}))
    return OK if ok else FAILED


def _mmr_from(spec) -> WeightedMMR:
    if not isinstance(spec, dict) or not isinstance(spec.get("leaves"), list):
        raise InputError("MMR file needs a 'leaves' list of {data|hash, weight|target}")
    mmr = WeightedMMR()
    for i, leaf in enumerate(spec["leaves"]):
        try:
            if "weight" in leaf:
                weight = int(leaf["weight"])
            else:
                target = leaf["target"]
                weight = weight_of(difficulty(int(target, 0) if isinstance(target, str) else int(target)))
            if "data" in leaf:
                mmr.append_data(_hex(leaf["data"], f"leaf {i} data"), weight)
            else:
                mmr.append_leaf(_hex(leaf["hash"], f"leaf {i} hash", 32), weight)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"leaf {i}: {exc}") from None
    if mmr.leaf_count == 0:
        raise InputError("MMR needs at least one leaf")
    return mmr


def cmd_mmr_prove(args) -> int:
    mmr = _mmr_from(_read_json(args.leaves))
    doc = {"root": mmr.root.hex(), "total_weight": mmr.total_weight, "leaf_count": mmr.leaf_count}
    if args.index is not None:
        if args.index >= mmr.leaf_count:
            raise InputError(f"index {args.index} out of range")
        doc["inclusion"] = [mmr.prove_inclusion(args.index).serialize().hex()]
    else:
        doc["seed"] = args.seed
        doc["samples"] = [s.serialize().hex() for s in prove_chain_weight(mmr, args.samples, args.seed)]
    _emit(doc, args.out)
    return OK


def cmd_mmr_verify(args) -> int:
    doc = _read_json(args.proof)
    try:
        root = _hex(doc["root"], "root", 32)
        total = int(doc["total_weight"])
        if "inclusion" in doc:
            proofs = [WeightProofSample.deserialize(_hex(x, "inclusion proof")) for x in doc["inclusion"]]
            ok = bool(proofs) and all(verify_inclusion(root, total, p) for p in proofs)
        else:
            samples = [WeightProofSample.deserialize(_hex(x, "sample")) for x in doc["samples"]]
            ok = verify_chain_weight(root, total, samples, seed=int(doc.get("seed", 0)))
    except (KeyError, TypeError, ValueError, EncodingError) as exc:
        raise InputError(f"bad proof file: {exc}") from None
    print(json.dumps({"ok": ok}))
    return OK if ok else FAILED


def _to_orange(node):
    if node is None:
        return None
    if node in (MAGIC, REGULAR):
        return node
    if isinstance(node, list) and len(node) == 2 and None not in node:
        return (_to_orange(node[0]), _to_orange(node[1]))
    raise InputError(f"tree nodes must be 'M', 'R' or a [left, right] pair, got {node!r}")


def _from_orange(node):
    return node if isinstance(node, str) else [_from_orange(node[0]), _from_orange(node[1])]


def cmd_encode_tree(args) -> int:
    doc = _read_json(args.input)
    if isinstance(doc, dict) and "shard_count" in doc:
        try:
            tree = ShardMerkleTree(int(doc["shard_count"]), {int(s): b"\x01" * 32 for s in doc.get("mined", [])})
        except (TypeError, ValueError) as exc:
            raise InputError(str(exc)) from None
        orange = tree.orange()
    else:
        orange = _to_orange(doc.get("tree") if isinstance(doc, dict) else doc)
    bits = encode_orange(orange).bits
    if args.out:
        Path(args.out).write_text(bits)
    else:
        sys.stdout.write(bits + "\n")
    return OK


def cmd_decode_tree(args) -> int:
    bits = args.bits if args.bits is not None else _read_bytes(args.input).decode(errors="replace").strip()
    try:
        tree = decode_orange(bits, args.height)
    except MalformedEncoding as exc:
        print(json.dumps({"ok": False, "error": str(exc)}))
        return FAILED
    _emit({"ok": True, "tree": None if tree is None else _from_orange(tree)}, args.out)
    return OK


def cmd_econ_fit(args) -> int:
    try:
        points = econ.read_efficiency_csv(args.input)
        result = econ.fit_series(points)
        econ.loglinear_growth(points)  # validates ordering
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(f"{args.input}: {exc}") from None
    _emit(result, args.out)
    return OK


def cmd_stats(args) -> int:
    data = _read_bytes(args.input)
    try:
        state, reports = replay_stream(data)
    except EncodingError as exc:
        raise InputError(f"malformed export: {exc}") from None
    failed = sum(not r.ok for r in reports)
    chains = {}
    if state is not None:
        for name, chain in [("bc", state.beacon)] + [(str(k), v) for k, v in sorted(state.shards.items())]:
            ts = chain.timestamps()
            chains[name] = {"height": chain.height, "supply": chain.coin_supply,
                            "total_weight": chain.mmr.total_weight,
                            "mean_block_time": (ts[-1] - ts[0]) / chain.height if chain.height else None}
    _emit({"valid": failed == 0, "failed_blocks": failed, "chains": chains}, args.out)
    return OK if failed == 0 else FAILED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shardpow", description="Merged-mined sharded proof-of-work toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a simulation scenario")
    s.add_argument("--config", required=True, help="TOML/JSON scenario file or bundled scenario name")
    s.add_argument("--seed", type=_u64, help="override the scenario seed")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--export", help="also write the main chains as a network export (full/real modes)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify-chain", help="verify a network export block by block")
    s.add_argument("--input", required=True)
    s.add_argument("--kind", choices=("all", "bc", "sc"), default="all")
    s.add_argument("--shard", type=_nonneg, help="with --kind sc, report one shard only")
    s.add_argument("--quiet", action="store_true", help="print failing blocks only")
    s.set_defaults(func=cmd_verify_chain)

    s = sub.add_parser("mm-prove", help="build a merged-mining proof")
    s.add_argument("--leaves", required=True, help='JSON {"shard_count": N, "leaves": {id: hex hash}}')
    s.add_argument("--shard", type=_nonneg, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_mm_prove)

    s = sub.add_parser("mm-verify", help="check a merged-mining proof file")
    s.add_argument("--proof", required=True)
    s.set_defaults(func=cmd_mm_verify)

    s = sub.add_parser("mmr-prove", help="inclusion or sampled chain-weight proof over an MMR")
    s.add_argument("--leaves", required=True, help='JSON {"leaves": [{"data"|"hash": hex, "weight"|"target": int}]}')
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--index", type=_nonneg)
    g.add_argument("--samples", type=_positive)
    s.add_argument("--seed", type=_u64, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_mmr_prove)

    s = sub.add_parser("mmr-verify", help="check an mmr-prove output")
    s.add_argument("--proof", required=True)
    s.set_defaults(func=cmd_mmr_verify)

    s = sub.add_parser("encode-tree", help="orange-subtree bits from a tree or mined-shard set")
    s.add_argument("--input", required=True,
                   help='JSON: null, nested ["M"|"R"|[l, r]] or {"shard_count": N, "mined": [...]}')
    s.add_argument("--out")
    s.set_defaults(func=cmd_encode_tree)

    s = sub.add_parser("decode-tree", help="decode orange-subtree bits")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--bits")
    g.add_argument("--input")
    s.add_argument("--height", type=_nonneg, required=True, help="shard tree height")
    s.add_argument("--out")
    s.set_defaults(func=cmd_decode_tree)

    s = sub.add_parser("econ-fit", help="annual efficiency growth from a time_years,hashes_per_joule CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_econ_fit)

    s = sub.add_parser("stats", help="summarize a network export")
    s.add_argument("--input", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
