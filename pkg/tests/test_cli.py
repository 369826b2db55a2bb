import csv
import io
import json
import math
import subprocess
import sys

import pytest

from textdp_audit.cli import main
from textdp_audit.io import read_result


@pytest.fixture
def toy(tmp_path):
    p = tmp_path / "toy.txt"
    p.write_text("the quick brown fox\nlazy dogs sleep all day\n")
    return p


@pytest.fixture
def words(tmp_path):
    p = tmp_path / "words.txt"
    p.write_text("red apple pie\nblue sky above\ngreen grass grows\n"
                 "yellow sun rises\nblack night falls\nwhite snow melts\n")
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def parse_summary(line):
    return {k: float(v) for k, v in (kv.split("=") for kv in line.split())}


class TestCeiling:
    def test_published(self, capsys):
        code, out, _ = run(capsys, "ceiling", "--k", 2, "--trials", 10000, "--alpha", 0.005,
                           "--delta", 0)
        assert code == 0 and abs(float(out) - 7.5427) <= 5e-4

    def test_k4(self, capsys):
        _, two, _ = run(capsys, "ceiling")
        _, four, _ = run(capsys, "ceiling", "--k", 4)
        assert float(four) - float(two) == pytest.approx(math.log(3), abs=1e-5)

    def test_one_trial(self, capsys):
        code, out, _ = run(capsys, "ceiling", "--trials", 1)
        assert code == 0 and math.isfinite(float(out))


class TestAudit:
    def test_grr_map(self, capsys, toy, tmp_path):
        out_path = tmp_path / "r.jsonl"
        code, out, err = run(capsys, "audit", "--mechanism", "grr", "--epsilon", 1, "--g", 2,
                             "--attack", "value_map", "--trials", 100000, "--dataset", toy,
                             "--out", out_path)
        assert code == 0
        assert err.startswith("resolved config: ")
        s = parse_summary(out.strip())
        assert 0.93 <= s["eps_emp"] <= 1.0 and s["eps_nominal"] == 1.0
        assert read_result(out_path)["summary"].epsilon_emp == pytest.approx(s["eps_emp"],
                                                                             abs=1e-4)

    def test_identity_reaches_ceiling(self, capsys, words):
        code, out, _ = run(capsys, "audit", "--mechanism", "identity", "--trials", 10000,
                           "--k", 2, "--dataset", words)
        assert code == 0 and parse_summary(out)["eps_emp"] == pytest.approx(7.5427, abs=1e-4)

    def test_missing_epsilon(self, capsys, toy):
        code, _, err = run(capsys, "audit", "--mechanism", "grr", "--dataset", toy)
        assert code == 2 and "--epsilon" in err and "usage" in err

    def test_bad_flag_value(self, capsys, toy):
        code, _, _ = run(capsys, "audit", "--mechanism", "nope", "--dataset", toy)
        assert code == 2

    def test_config_file_and_override(self, capsys, toy, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"mechanism": "grr", "epsilon": 2.0, "g": 2,
                                   "attack": "value_map", "trials": 500, "lambda": 0,
                                   "dataset": str(toy)}))
        code, out, err = run(capsys, "audit", "--config", cfg, "--trials", 800)
        assert code == 0
        resolved = json.loads(err.split("resolved config: ")[1].splitlines()[0])
        assert resolved["trials"] == 800 and resolved["lambda"] == 0.0
        assert resolved["mechanism"]["epsilon"] == 2.0

    def test_unknown_config_key(self, capsys, toy, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"mechansim": "grr"}))
        assert run(capsys, "audit", "--config", cfg, "--dataset", toy)[0] == 2

    def test_symmetric_estimator(self, capsys, toy):
        code, out, _ = run(capsys, "audit", "--mechanism", "grr", "--epsilon", 2,
                           "--attack", "value_map", "--trials", 5000, "--dataset", toy,
                           "--estimator", "symmetric")
        assert code == 0 and 1.7 < parse_summary(out)["eps_emp"] <= 2.0

    def test_judge_failure_exit_3(self, capsys, toy, mock_judge):
        mock_judge.replies = ["I refuse"]
        code, _, err = run(capsys, "audit", "--mechanism", "identity", "--attack", "judge",
                           "--judge-url", mock_judge.url, "--judge-model", "m",
                           "--judge-retries", 0, "--trials", 20, "--dataset", toy)
        assert code == 3 and "failure budget" in err

    def test_judge_success(self, capsys, toy, mock_judge):
        def pick_matching(body):
            # answer with the numbered candidate whose text equals Y
            prompt = body["messages"][0]["content"]
            y = prompt.split("Rewritten text Y:\n")[1].split("\n")[0]
            first = prompt.split("Candidate original texts:\n")[1].split("\n")[0]
            return "answer: [[1]]" if first == f"1. {y}" else "answer: [[2]]"

        mock_judge.replies = pick_matching
        code, out, _ = run(capsys, "audit", "--mechanism", "identity", "--attack", "judge",
                           "--judge-url", mock_judge.url, "--judge-model", "m",
                           "--trials", 100, "--dataset", toy, "--workers", 4)
        assert code == 0 and parse_summary(out)["p_lower"] > 0.9

    def test_help_documents_alpha(self, capsys):
        assert main(["audit", "--help"]) == 0
        out = capsys.readouterr().out
        assert "0.005" in out and "7.54" in out and "-10000" in out

    def test_rerun_is_identical(self, capsys, words):
        args = ("audit", "--mechanism", "token_em", "--epsilon", 3, "--trials", 2000,
                "--dataset", words, "--k", 3)
        a = run(capsys, *args, "--workers", 1)[1]
        b = run(capsys, *args, "--workers", 8)[1]
        assert a == b


class TestSweep:
    def test_grr_monotone(self, capsys, toy, tmp_path):
        code, out, _ = run(capsys, "sweep", "--mechanism", "grr", "--g", 2, "--attack",
                           "value_map", "--epsilons", "0.5,1,2,4", "--trials", 20000,
                           "--lambda", 0, "--dataset", toy, "--out", tmp_path / "s.csv")
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        emp = [float(r["epsilon_emp"]) for r in rows]
        assert emp == sorted(emp) and len(set(emp)) == 4
        assert len((tmp_path / "s.jsonl").read_text().splitlines()) == 4
        assert len(out.strip().splitlines()) == 5

    def test_single_epsilon_matches_audit(self, capsys, toy):
        common = ("--mechanism", "grr", "--g", 2, "--attack", "value_map", "--trials", 3000,
                  "--dataset", toy)
        _, sweep_out, _ = run(capsys, "sweep", *common, "--epsilons", "1.5")
        _, audit_out, _ = run(capsys, "audit", *common, "--epsilon", 1.5)
        audit = parse_summary(audit_out)
        row = sweep_out.strip().splitlines()[1].split("\t")
        assert float(row[1]) == audit["eps_emp"] and float(row[5]) == audit["ceiling"]

    def test_sentence_conversion(self, capsys, words, tmp_path):
        code, _, _ = run(capsys, "sweep", "--mechanism", "token_em", "--epsilons", "0.5,1",
                         "--trials", 200, "--dataset", words, "--convert-sentence",
                         "--mean-tokens", 12, "--out", tmp_path / "s.csv")
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert code == 0 and [float(r["eps_sentence"]) for r in rows] == [6.0, 12.0]

    def test_missing_grid(self, capsys, toy):
        assert run(capsys, "sweep", "--mechanism", "grr", "--dataset", toy)[0] == 2


class TestSnrConvert:
    def test_snr_table(self, capsys):
        code, out, _ = run(capsys, "snr", "--clip", 1.0, "--epsilons", "250,500,1000,2500")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0 and list(rows[0]) == ["epsilon", "clip_norm", "expected_noise_norm",
                                               "snr"]
        snr = [float(r["snr"]) for r in rows]
        assert snr == sorted(snr)
        assert snr[1] == pytest.approx(2 * snr[0], rel=1e-12)

    def test_snr_bad_flags(self, capsys):
        assert run(capsys, "snr", "--epsilons", "-1")[0] == 2
        assert run(capsys, "snr", "--epsilons", "1", "--clip", 0)[0] == 2

    @pytest.mark.parametrize("eps,n,expected", [(0.5, 12, 6.0), (2, 8, 16.0)])
    def test_convert(self, capsys, eps, n, expected):
        code, out, _ = run(capsys, "convert", "--epsilon-token", eps, "--mean-tokens", n)
        assert code == 0 and float(out) == expected

    def test_convert_zero_tokens_warns(self, capsys):
        code, out, err = run(capsys, "convert", "--epsilon-token", 3, "--mean-tokens", 0)
        assert code == 0 and float(out) == 0.0 and "warning" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "textdp_audit", "ceiling"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.strip() == "7.542686"
