import json
import math
import struct

import numpy as np
import pytest

from textdp_audit.adversaries import AdversarySpec
from textdp_audit.core import AuditConfig, EmbeddingTable
from textdp_audit.engine import run_audit, run_sweep
from textdp_audit.io import (
    SWEEP_COLUMNS,
    LoadError,
    load_corpus,
    load_embeddings,
    read_result,
    read_results,
    synthetic_embeddings,
    write_embeddings,
    write_embeddings_csv,
    write_result,
    write_sweep,
)
from textdp_audit.mechanisms import GrrParams, MechanismSpec

from conftest import make_corpus


class TestCorpus:
    def test_plain_text(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("the cat sat\nthe dog\na cat ran\n")
        c = load_corpus(p, "plain_text")
        assert [r.id for r in c.records] == [0, 1, 2]
        assert c.vocab[:3] == ("the", "cat", "sat")
        assert c[1].tokens == (0, 3) and c[1].raw_text == "the dog"

    def test_jsonl(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"id": 1, "text": "b a"}\n{"id": 0, "text": "a", "tokens": [4, 2]}\n')
        c = load_corpus(p, "jsonl")
        assert c[0].tokens == (4, 2) and c[0].raw_text == "a"
        assert c[1].raw_text == "b a"

    @pytest.mark.parametrize("content,msg", [
        ('{"text": "a"}\n{"id": 3}\n', "line 2"),
        ('{"text": "a"}\nnot json\n', "line 2"),
        ('{"id": 0, "text": "a"}\n{"id": 0, "text": "b"}\n', "duplicate"),
        ('{"id": 0, "text": "a"}\n{"id": 5, "text": "b"}\n', "dense"),
        ('{"text": "a", "tokens": []}\n', "line 1"),
        ('{"text": "a"}\n\n', "line 2"),
    ])
    def test_jsonl_errors(self, tmp_path, content, msg):
        p = tmp_path / "bad.jsonl"
        p.write_text(content)
        with pytest.raises(LoadError, match=msg):
            load_corpus(p, "jsonl")

    def test_vocab_larger_than_table(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("a b c\nd e\n")
        with pytest.raises(LoadError, match="token id 4"):
            load_corpus(p, "plain_text", EmbeddingTable(np.ones((3, 2))))

    def test_table_vocab_lookup(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("y x\nz\n")
        table = EmbeddingTable(np.eye(3), vocab=("x", "y", "z"))
        assert load_corpus(p, "plain_text", table)[0].tokens == (1, 0)
        p.write_text("y q\n")
        with pytest.raises(LoadError, match="'q'"):
            load_corpus(p, "plain_text", table)


class TestEmbeddings:
    def test_format_arithmetic(self, tmp_path):
        table = EmbeddingTable(np.array([[1.0, 2.0, 3.0], [-1.5, 0.25, 8.0]]))
        p = tmp_path / "e.bin"
        write_embeddings(table, p)
        data = p.read_bytes()
        assert len(data) == 8 + 16 + 24
        assert data[:8] == b"TEDAEMB1" and struct.unpack("<QQ", data[8:24]) == (2, 3)
        assert np.array_equal(load_embeddings(p).vectors, table.vectors)

    def test_truncated(self, tmp_path):
        p = tmp_path / "e.bin"
        write_embeddings(EmbeddingTable(np.ones((2, 3))), p)
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(LoadError, match="expected 48 bytes.*found 44"):
            load_embeddings(p)

    def test_bad_magic_and_nonfinite(self, tmp_path):
        p = tmp_path / "e.bin"
        p.write_bytes(b"XXXXXXXX" + struct.pack("<QQ", 1, 2) + struct.pack("<2f", 1, 2))
        with pytest.raises(LoadError, match="magic"):
            load_embeddings(p)
        p.write_bytes(b"TEDAEMB1" + struct.pack("<QQ", 1, 2) + struct.pack("<2f", 1, math.inf))
        with pytest.raises(LoadError, match="non-finite"):
            load_embeddings(p)

    def test_csv_and_binary_agree(self, tmp_path):
        table = synthetic_embeddings(5, 4, seed=3, vocab=list("abcde"))
        write_embeddings(table, tmp_path / "e.bin")
        write_embeddings_csv(table, tmp_path / "e.csv")
        a = load_embeddings(tmp_path / "e.bin")
        b = load_embeddings(tmp_path / "e.csv")
        assert b.vocab == tuple("abcde")
        assert np.array_equal(a.vectors, b.vectors)
        assert np.allclose(a.vectors, table.vectors, atol=1e-7)

    def test_csv_header_checked(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("word,x,y\na,1,2\n")
        with pytest.raises(LoadError, match="header"):
            load_embeddings(p)

    def test_synthetic_reproducible(self):
        a = synthetic_embeddings(10, 6, seed=1)
        assert np.array_equal(a.vectors, synthetic_embeddings(10, 6, seed=1).vectors)
        assert np.allclose(np.linalg.norm(a.vectors, axis=1), 1.0)


def small_audit(eps=1.0, trials=500):
    cfg = AuditConfig(MechanismSpec("grr", eps, GrrParams(2)),
                      AdversarySpec("value_map", domain_size=2), trials=trials, lam=0.0)
    return cfg, make_corpus([[0], [1]])


class TestResults:
    def test_round_trip(self, tmp_path):
        cfg, corpus = small_audit()
        res = run_audit(cfg, corpus)
        write_result(res, tmp_path / "r.jsonl")
        doc = read_result(tmp_path / "r.jsonl")
        assert doc["summary"] == res.summary
        assert doc["schema_version"] == "1"
        assert doc["config_echo"]["lambda"] == 0.0
        assert {"tool_version", "timestamp"} <= set(doc["environment"])

    def test_append(self, tmp_path):
        cfg, corpus = small_audit()
        res = run_audit(cfg, corpus)
        write_result(res, tmp_path / "r.jsonl")
        write_result(res, tmp_path / "r.jsonl", append=True)
        assert len(read_results(tmp_path / "r.jsonl")) == 2

    def test_infinite_epsilon_serialises(self, tmp_path):
        from textdp_audit.adversaries import AdversarySpec as A
        cfg = AuditConfig(MechanismSpec("identity", math.inf), A("surface_overlap"),
                          trials=10, lam=0.0)
        res = run_audit(cfg, make_corpus([[0], [1]]))
        write_result(res, tmp_path / "r.jsonl")
        json.loads((tmp_path / "r.jsonl").read_text())

    def test_sweep_csv(self, tmp_path):
        cfg, corpus = small_audit(trials=300)
        cells = run_sweep(cfg, [0.5, 1.0, 2.0, 4.0], corpus)
        write_sweep(cells, tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0].split(",") == SWEEP_COLUMNS
        assert len(lines) == 5
        rows = [dict(zip(SWEEP_COLUMNS, ln.split(","))) for ln in lines[1:]]
        assert all(len(r["epsilon_emp"].split(".")[1]) == 4 for r in rows)
        assert len({r["ceiling"] for r in rows}) == 1

    def test_sweep_sentence_column(self, tmp_path):
        cfg, corpus = small_audit(trials=100)
        cells = run_sweep(cfg, [0.5, 2.0], corpus)
        write_sweep(cells, tmp_path / "s.csv", eps_sentence_tokens=12)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0].endswith(",eps_sentence")
        assert [ln.split(",")[-1] for ln in lines[1:]] == ["6.0", "24.0"]
