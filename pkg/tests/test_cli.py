import csv
import json
from dataclasses import replace

import pytest

from shardpow.blocks import SCBlock, StreamRecord, read_stream, write_stream
from shardpow.cli import bundled_scenarios, main
from shardpow.sim import MinerConfig, SimConfig, run


@pytest.fixture(scope="module")
def export(tmp_path_factory):
    cfg = SimConfig(miners=[MinerConfig("a", 100.0), MinerConfig("b", 100.0, shard_subset=[1])], mode="full",
                    initial_shards=2, bc_difficulty=600, max_bc_blocks=8, seed=2)
    path = tmp_path_factory.mktemp("exp") / "net.bin"
    path.write_bytes(run(cfg).export())
    return path


def out_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_bundled_scenarios():
    assert "two-miners-1to3" in bundled_scenarios()


def test_simulate_bundled_json(tmp_path, capsys):
    assert main(["simulate", "--config", "two-miners-1to3", "--out", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    stats = json.loads((tmp_path / "stats.json").read_text())
    shares = summary["shares"]
    assert abs(shares["small"] - 0.25) <= 0.03 and abs(shares["large"] - 0.75) <= 0.03
    assert stats["chains"]["bc"]["main_blocks"] == 10_000
    assert (tmp_path / "events.jsonl").read_text().count("\n") >= 10_000


def test_simulate_csv(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"miners": [{"id": "x", "hash_rate": 10.0}], "initial_shards": 2,
                               "bc_difficulty": 6000, "max_bc_blocks": 50}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--format", "csv"]) == 0
    rows = list(csv.reader((tmp_path / "o" / "epochs.csv").open()))
    assert rows[0] == ["chain", "epoch", "first_height", "last_height", "blocks", "mean_block_time",
                       "difficulty", "supply_end"]
    miners = list(csv.reader((tmp_path / "o" / "miners.csv").open()))
    assert miners[0] == ["miner", "hash_rate", "blocks", "coins", "share"] and miners[1][-1] == "1.000000"


@pytest.mark.parametrize("argv", [
    ["simulate", "--config", "two-miners-1to3", "--out", "x", "--seed", "-3"],
    ["simulate", "--config", "two-miners-1to3", "--out", "x", "--seed", "abc"],
    ["mm-prove", "--shard", "1"],
    ["bogus"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_input_errors_exit_2(tmp_path, capsys):
    assert main(["simulate", "--config", "no-such-scenario", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = 1\nspeed = 2\nduration = 5\n[[miners]]\nid='a'\nhash_rate=1.0\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_verify_chain_ok_mutated_truncated(export, tmp_path, capsys):
    assert main(["verify-chain", "--input", str(export), "--quiet"]) == 0
    capsys.readouterr()
    assert main(["verify-chain", "--input", str(export), "--kind", "sc", "--shard", "1"]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert lines and all(x["chain"] == "1" and x["ok"] for x in lines)

    meta, records = read_stream(export.read_bytes())
    i = next(k for k, r in enumerate(records) if r.shard_id == 0 and r.block.body is not None)
    blk = records[i].block
    records[i] = StreamRecord(0, SCBlock(replace(blk.header, mm_number=blk.header.mm_number + 5), blk.body))
    bad = tmp_path / "bad.bin"
    bad.write_bytes(write_stream(meta, records))
    assert main(["verify-chain", "--input", str(bad), "--quiet"]) == 1
    first = json.loads(capsys.readouterr().out.splitlines()[0])
    assert first["chain"] == "0" and first["step"] == 3

    cut = tmp_path / "cut.bin"
    cut.write_bytes(export.read_bytes()[:-7])
    assert main(["verify-chain", "--input", str(cut)]) == 2
    assert main(["verify-chain", "--input", str(tmp_path / "missing.bin")]) == 2


def test_stats_command(export, capsys):
    assert main(["stats", "--input", str(export)]) == 0
    doc = out_json(capsys)
    assert doc["valid"] and doc["chains"]["bc"]["height"] == 8


def test_mm_roundtrip(tmp_path, capsys):
    leaves = tmp_path / "leaves.json"
    leaves.write_text(json.dumps({"shard_count": 8, "leaves": {str(i): f"{i:02x}" * 32 for i in (2, 3, 5, 6)}}))
    proof = tmp_path / "proof.json"
    assert main(["mm-prove", "--leaves", str(leaves), "--shard", "5", "--out", str(proof)]) == 0
    doc = json.loads(proof.read_text())
    assert doc["mm_number"] == 4 and doc["encoding"] == "110011001101001"
    assert main(["mm-verify", "--proof", str(proof)]) == 0
    doc["mm_number"] = 3
    proof.write_text(json.dumps(doc))
    assert main(["mm-verify", "--proof", str(proof)]) == 1
    assert main(["mm-prove", "--leaves", str(leaves), "--shard", "4"]) == 2


@pytest.mark.parametrize("mode", [["--index", "3"], ["--samples", "5", "--seed", "9"]])
def test_mmr_roundtrip(tmp_path, mode, capsys):
    leaves = tmp_path / "mmr.json"
    leaves.write_text(json.dumps({"leaves": [{"data": f"{i:04x}", "weight": 100 + i} for i in range(7)]
                                  + [{"hash": "ab" * 32, "target": hex(1 << 240)}]}))
    proof = tmp_path / "p.json"
    assert main(["mmr-prove", "--leaves", str(leaves), *mode, "--out", str(proof)]) == 0
    assert main(["mmr-verify", "--proof", str(proof)]) == 0
    doc = json.loads(proof.read_text())
    doc["total_weight"] += 1
    proof.write_text(json.dumps(doc))
    assert main(["mmr-verify", "--proof", str(proof)]) == 1


def test_tree_commands(tmp_path, capsys):
    empty = tmp_path / "e.json"
    empty.write_text("null")
    out = tmp_path / "bits.txt"
    assert main(["encode-tree", "--input", str(empty), "--out", str(out)]) == 0
    assert out.read_text() == ""
    fig = tmp_path / "f.json"
    fig.write_text(json.dumps({"shard_count": 8, "mined": [2, 3, 5, 6]}))
    assert main(["encode-tree", "--input", str(fig)]) == 0
    bits = capsys.readouterr().out.strip()
    assert bits == "110011001101001"
    assert main(["decode-tree", "--bits", bits, "--height", "3"]) == 0
    tree = out_json(capsys)["tree"]
    explicit = tmp_path / "t.json"
    explicit.write_text(json.dumps(tree))
    assert main(["encode-tree", "--input", str(explicit)]) == 0
    assert capsys.readouterr().out.strip() == bits
    assert main(["decode-tree", "--bits", "11", "--height", "3"]) == 1


def test_econ_fit(tmp_path, capsys):
    f = tmp_path / "eff.csv"
    f.write_text("time_years,hashes_per_joule\n" + "".join(f"{t},{2 ** t}\n" for t in range(5)))
    assert main(["econ-fit", "--input", str(f)]) == 0
    assert abs(out_json(capsys)["annual_rate"] - 1.0) < 1e-9
    f.write_text("when,eff\n0,1\n")
    assert main(["econ-fit", "--input", str(f)]) == 2
