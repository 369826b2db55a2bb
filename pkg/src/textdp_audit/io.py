"""Corpus, embedding-table and result files.

Loaders reject malformed input instead of repairing it.  The binary embedding
format is little-endian on every platform:

    b"TEDAEMB1" | uint64 V | uint64 D | V*D float32, row-major
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import math
import struct
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from .core import Corpus, EmbeddingTable, TextRecord
from .estimation import EstimateSummary

SCHEMA_VERSION = "1"
EMBEDDING_MAGIC = b"TEDAEMB1"
_HEADER = struct.Struct("<8sQQ")

SWEEP_COLUMNS = ["epsilon_nominal", "epsilon_emp", "p_lower", "tp", "trials", "k", "lambda",
                 "alpha", "delta", "mechanism", "adversary", "ceiling"]


class LoadError(ValueError):
    pass


def tool_version() -> str:
    from . import __version__
    return __version__


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------


def _lookup_tokens(words: list[str], index: dict[str, int], lineno: int) -> tuple[int, ...]:
    missing = [w for w in words if w not in index]
    if missing:
        raise LoadError(f"line {lineno}: word {missing[0]!r} is not in the embedding vocabulary")
    return tuple(index[w] for w in words)


def load_corpus(path: str | Path, format: str = "plain_text",
                embeddings: EmbeddingTable | None = None) -> Corpus:
    """Read a corpus from ``jsonl`` or ``plain_text``.

    Text is whitespace-tokenized.  When ``embeddings`` carries a vocabulary,
    words map to its rows; otherwise a vocabulary is built in order of first
    appearance.  Either way the corpus is checked against the table.
    """
    path = Path(path)
    if format not in ("jsonl", "plain_text"):
        raise ValueError(f"unknown corpus format {format!r}")
    lines = path.read_text(encoding="utf-8").splitlines()
    fixed_vocab = embeddings.vocab if embeddings is not None else None
    index: dict[str, int] = {w: i for i, w in enumerate(fixed_vocab)} if fixed_vocab else {}
    built: list[str] = []

    def tokenize(text: str, lineno: int) -> tuple[int, ...]:
        words = text.split()
        if not words:
            raise LoadError(f"line {lineno}: text is empty")
        if fixed_vocab is not None:
            return _lookup_tokens(words, index, lineno)
        for w in words:
            if w not in index:
                index[w] = len(built)
                built.append(w)
        return tuple(index[w] for w in words)

    records: list[TextRecord] = []
    explicit_ids: set[int] = set()
    id_mode: bool | None = None
    for lineno, line in enumerate(lines, start=1):
        if format == "plain_text":
            if not line.strip():
                raise LoadError(f"line {lineno}: blank line")
            records.append(TextRecord(len(records), tokenize(line, lineno), line.strip()))
            continue
        if not line.strip():
            raise LoadError(f"line {lineno}: blank line")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise LoadError(f"line {lineno}: invalid JSON ({err.msg})") from None
        if not isinstance(obj, dict):
            raise LoadError(f"line {lineno}: expected a JSON object")
        text = obj.get("text")
        if not isinstance(text, str):
            raise LoadError(f"line {lineno}: missing string field 'text'")
        has_id = "id" in obj
        if id_mode is None:
            id_mode = has_id
        elif id_mode != has_id:
            raise LoadError(f"line {lineno}: 'id' must be given on every line or on none")
        rid = len(records)
        if has_id:
            rid = obj["id"]
            if not isinstance(rid, int) or isinstance(rid, bool) or rid < 0:
                raise LoadError(f"line {lineno}: 'id' must be a non-negative integer")
            if rid in explicit_ids:
                raise LoadError(f"line {lineno}: duplicate id {rid}")
            explicit_ids.add(rid)
        if "tokens" in obj:
            toks = obj["tokens"]
            if not (isinstance(toks, list) and toks
                    and all(isinstance(t, int) and not isinstance(t, bool) and t >= 0
                            for t in toks)):
                raise LoadError(f"line {lineno}: 'tokens' must be a non-empty list of "
                                "non-negative integers")
            tokens = tuple(toks)
        else:
            tokens = tokenize(text, lineno)
        records.append(TextRecord(rid, tokens, text))
    if not records:
        raise LoadError(f"{path}: no records")
    if id_mode:
        ids = sorted(r.id for r in records)
        if ids != list(range(len(records))):
            raise LoadError(f"{path}: ids must be dense in [0, {len(records)})")
    vocab = fixed_vocab if fixed_vocab is not None else (tuple(built) if built else None)
    corpus = Corpus(tuple(records), str(path), vocab)
    if embeddings is not None:
        try:
            corpus.validate_against(embeddings)
        except ValueError as err:
            raise LoadError(str(err)) from None
    return corpus


# ---------------------------------------------------------------------------
# Embedding tables
# ---------------------------------------------------------------------------


def _finish_table(vectors: np.ndarray, vocab, path: Path) -> EmbeddingTable:
    if not np.isfinite(vectors).all():
        raise LoadError(f"{path}: non-finite values in embedding table")
    try:
        return EmbeddingTable(vectors, vocab, str(path))
    except ValueError as err:
        raise LoadError(f"{path}: {err}") from None


def load_embeddings(path: str | Path, format: str | None = None) -> EmbeddingTable:
    """Binary table, or CSV when ``format='csv'`` or the suffix is ``.csv``."""
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "csv":
        return load_embeddings_csv(path)
    if format != "binary":
        raise ValueError(f"unknown embedding format {format!r}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise LoadError(f"{path}: expected at least {_HEADER.size} header bytes, "
                        f"found {len(data)}")
    magic, v, d = _HEADER.unpack_from(data)
    if magic != EMBEDDING_MAGIC:
        raise LoadError(f"{path}: bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
    expected = _HEADER.size + 4 * v * d
    if len(data) != expected:
        raise LoadError(f"{path}: expected {expected} bytes for V={v}, D={d}, found {len(data)}")
    vectors = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(v, d)
    return _finish_table(vectors.astype(np.float64), None, path)


def load_embeddings_csv(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "token" or \
                header[1:] != [f"v{i}" for i in range(len(header) - 1)]:
            raise LoadError(f"{path}: header must be token,v0,...,v{{D-1}}")
        dim = len(header) - 1
        vocab, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise LoadError(f"line {lineno}: expected {dim + 1} fields, found {len(row)}")
            try:
                rows.append([float(x) for x in row[1:]])
            except ValueError:
                raise LoadError(f"line {lineno}: non-numeric vector entry") from None
            vocab.append(row[0])
    if not rows:
        raise LoadError(f"{path}: no rows")
    return _finish_table(np.array(rows), tuple(vocab), path)


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    path = Path(path)
    v, d = table.vectors.shape
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(EMBEDDING_MAGIC, v, d))
        fh.write(np.ascontiguousarray(table.vectors, dtype="<f4").tobytes())


def write_embeddings_csv(table: EmbeddingTable, path: str | Path) -> None:
    vocab = table.vocab or tuple(str(i) for i in range(table.size))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["token"] + [f"v{i}" for i in range(table.dim)])
        for word, row in zip(vocab, table.vectors):
            # repr of the float32 value keeps the CSV and binary encodings identical
            w.writerow([word] + [repr(float(np.float32(x))) for x in row])


def synthetic_embeddings(vocab_size: int, dim: int, seed: int = 0,
                         vocab: Sequence[str] | None = None) -> EmbeddingTable:
    """Reproducible random unit vectors, one per vocabulary entry."""
    if vocab_size < 1 or dim < 2:
        raise ValueError("need vocab_size >= 1 and dim >= 2")
    g = np.random.default_rng(seed)
    vecs = g.standard_normal((vocab_size, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return EmbeddingTable(vecs, tuple(vocab) if vocab is not None else None,
                          f"synthetic:{vocab_size}x{dim}:seed={seed}")


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def result_document(result, trial_log_ref: str | None = None) -> dict:
    return _clean({
        "schema_version": SCHEMA_VERSION,
        "summary": result.summary.to_dict(),
        "config_echo": result.config_echo,
        "mechanism_queries": result.mechanism_queries,
        "failed_trials": [dataclasses.asdict(f) for f in result.failed_trials],
        "wall_time": result.wall_time,
        "environment": {
            "tool_version": tool_version(),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        },
        "trial_log_ref": trial_log_ref,
    })


def write_result(result, path: str | Path, append: bool = False,
                 trial_log_ref: str | None = None) -> None:
    """One JSON document per line; ``append`` adds to an existing file."""
    with Path(path).open("a" if append else "w", encoding="utf-8") as fh:
        fh.write(json.dumps(result_document(result, trial_log_ref), sort_keys=True) + "\n")


def read_results(path: str | Path) -> list[dict]:
    docs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        doc = json.loads(line)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise LoadError(f"line {lineno}: unsupported schema_version "
                            f"{doc.get('schema_version')!r}")
        doc["summary"] = EstimateSummary.from_dict(doc["summary"])
        docs.append(doc)
    return docs


def read_result(path: str | Path) -> dict:
    docs = read_results(path)
    if len(docs) != 1:
        raise LoadError(f"{path}: expected one result document, found {len(docs)}")
    return docs[0]


def sweep_rows(cells: Iterable, eps_sentence_tokens: float | None = None) -> list[dict]:
    rows = []
    for cell in cells:
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row["epsilon_nominal"] = repr(cell.epsilon)
        if cell.result is not None:
            s = cell.result.summary
            echo = cell.result.config_echo
            row.update({
                "epsilon_emp": f"{s.epsilon_emp:.4f}",
                "p_lower": repr(s.p_lower),
                "tp": s.tp_count,
                "trials": s.trials,
                "k": s.k,
                "lambda": repr(float(echo["lambda"])),
                "alpha": repr(s.alpha_conf),
                "delta": repr(s.delta),
                "mechanism": echo["mechanism"]["kind"],
                "adversary": echo["adversary"]["kind"],
                "ceiling": f"{s.ceiling:.4f}",
            })
        if eps_sentence_tokens is not None:
            row["eps_sentence"] = repr(eps_sentence_tokens * cell.epsilon)
        rows.append(row)
    return rows


def write_sweep(cells: Sequence, path: str | Path,
                eps_sentence_tokens: float | None = None) -> None:
    """Calibration table, one row per grid cell; failed cells leave values empty."""
    columns = SWEEP_COLUMNS + (["eps_sentence"] if eps_sentence_tokens is not None else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(sweep_rows(cells, eps_sentence_tokens))
