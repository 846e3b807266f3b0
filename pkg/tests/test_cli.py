from __future__ import annotations

import hashlib

from openpyxl import load_workbook

from beamfuse.bench import read_csv
from beamfuse.cli import main
from beamfuse.corpus import read_corpus, read_vocab


def sha256(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def make_inputs(tmp_path):
    model = tmp_path / "m.bfm"
    corpus = tmp_path / "c.txt"
    assert main(["genmodel", "--vocab", "40", "--state", "8", "--seed", "1", "-o", str(model),
                 "--vocab-out", str(tmp_path / "vocab.txt")]) == 0
    assert main(["gencorpus", "--n", "6", "--seed", "2", "--vocab", "40", "--mean-length", "4",
                 "--max-length", "7", "-o", str(corpus)]) == 0
    return model, corpus


def test_genmodel_is_byte_identical_per_seed(tmp_path):
    first, second = tmp_path / "a.bfm", tmp_path / "b.bfm"
    args = ["genmodel", "--vocab", "1000", "--state", "64", "--seed", "42", "-o"]

    assert main(args + [str(first)]) == 0
    assert main(args + [str(second)]) == 0
    assert sha256(first) == sha256(second)


def test_genmodel_rejects_zero_vocab(tmp_path):
    assert main(["genmodel", "--vocab", "0", "-o", str(tmp_path / "m.bfm")]) == 2


def test_gencorpus_is_reproducible(tmp_path):
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    for path in (first, second):
        assert main(["gencorpus", "--n", "100", "--seed", "7", "--vocab", "500", "-o", str(path)]) == 0

    assert first.read_bytes() == second.read_bytes()
    ids = [token for sentence in read_corpus(first) for token in sentence]
    assert 3 <= min(ids) and max(ids) < 500


def test_decode_output_is_identical_across_strategies(tmp_path):
    model, corpus = make_inputs(tmp_path)
    outputs = {}
    for strategy in ("dynamic", "naive"):
        out = tmp_path / f"{strategy}.txt"
        assert main(["decode", "-m", str(model), "-i", str(corpus), "--beam", "2",
                     "--strategy", strategy, "--kernel", "fused", "--threads", "1",
                     "-o", str(out)]) == 0
        outputs[strategy] = out.read_bytes()

    assert outputs["dynamic"] == outputs["naive"]
    assert outputs["dynamic"].count(b"\n") == 6


def test_decode_output_is_identical_across_thread_counts(tmp_path):
    model, corpus = tmp_path / "m.bfm", tmp_path / "c.txt"
    assert main(["genmodel", "--vocab", "1000", "--state", "64", "--seed", "3", "-o", str(model)]) == 0
    assert main(["gencorpus", "--n", "24", "--seed", "4", "--vocab", "1000", "--mean-length", "5",
                 "--max-length", "8", "-o", str(corpus)]) == 0

    # Beam 3 over 24 sentences puts enough rows in each step to split matmul across workers.
    for extra in (["--beam", "3", "--kernel", "fused"], ["--kernel", "argmax1", "--shards", "4"]):
        outputs = []
        for threads in ("1", "4"):
            out = tmp_path / f"out-{threads}.txt"
            assert main(["decode", "-m", str(model), "-i", str(corpus), "--threads", threads,
                         "-o", str(out), *extra]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
        assert outputs[0].count(b"\n") == 24


def test_decode_writes_stats_and_vocab_strings(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("BEAMFUSE_THREADS", "2")
    model, corpus = make_inputs(tmp_path)
    stats = tmp_path / "stats.csv"

    code = main(["decode", "-m", str(model), "-i", str(corpus), "--vocab-file",
                 str(tmp_path / "vocab.txt"), "--stats", str(stats)])

    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 6
    vocab = set(read_vocab(tmp_path / "vocab.txt"))
    assert all(token in vocab for line in lines for token in line.split())
    assert not any(token.isdigit() for line in lines for token in line.split())
    rows = read_csv(stats)
    assert rows[0]["step"] == "1"
    assert "# threads=2" in stats.read_text(encoding="utf-8").splitlines()


def test_decode_argmax_kernel_requires_beam_one(tmp_path):
    model, corpus = make_inputs(tmp_path)
    code = main(["decode", "-m", str(model), "-i", str(corpus), "--kernel", "argmax1",
                 "--beam", "3"])
    assert code == 2


def test_decode_data_errors_exit_with_three(tmp_path):
    model, corpus = make_inputs(tmp_path)
    assert main(["decode", "-m", str(tmp_path / "missing.bfm"), "-i", str(corpus)]) == 3

    out_of_vocab = tmp_path / "oov.txt"
    out_of_vocab.write_text("3 4 99\n", encoding="utf-8")
    assert main(["decode", "-m", str(model), "-i", str(out_of_vocab)]) == 3


def test_bench_kernels_writes_csv_svg_and_ledger(tmp_path):
    out_dir = tmp_path / "results"
    xlsx = tmp_path / "ledger.xlsx"

    code = main(["bench", "kernels", "--vocab", "60", "--state", "8", "--k", "1,3",
                 "--out-dir", str(out_dir), "--db", f"sqlite:///{tmp_path / 'runs.db'}",
                 "--xlsx", str(xlsx)])

    assert code == 0
    rows = read_csv(out_dir / "kernels.csv")
    assert [row["baseline_passes"] for row in rows] == ["5", "5"]
    assert [row["fused_passes"] for row in rows] == ["1", "1"]
    assert (out_dir / "kernels.svg").exists()
    assert load_workbook(xlsx).sheetnames == ["runs", "kernels"]


def test_bench_batch_rows_per_strategy_and_size(tmp_path):
    code = main(["bench", "batch", "--n", "6", "--vocab", "40", "--state", "8",
                 "--sizes", "1,2", "--threads", "1", "--out-dir", str(tmp_path)])

    assert code == 0
    rows = read_csv(tmp_path / "batch.csv")
    assert len(rows) == 4
    assert {row["strategy"] for row in rows} == {"naive", "dynamic"}


def test_bench_steps_dynamic_slots_never_grow(tmp_path):
    code = main(["bench", "steps", "--n", "8", "--vocab", "40", "--state", "8",
                 "--strategy", "dynamic", "--threads", "1", "--out-dir", str(tmp_path)])

    assert code == 0
    slots = [int(row["active_slots"]) for row in read_csv(tmp_path / "steps.csv")]
    assert slots == sorted(slots, reverse=True)


def test_bench_rejects_unknown_benchmark(tmp_path):
    assert main(["bench", "flamegraph", "--out-dir", str(tmp_path)]) == 2


def test_bench_xlsx_requires_ledger(tmp_path, monkeypatch):
    monkeypatch.delenv("BEAMFUSE_DATABASE_URL", raising=False)
    code = main(["bench", "profile", "--n", "2", "--vocab", "40", "--state", "8",
                 "--xlsx", str(tmp_path / "x.xlsx"), "--out-dir", str(tmp_path)])
    assert code == 2
