import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import reconstruct_tokens

from verde import intake
from verde.errors import EncodingError, IoError, UnsupportedFormat, ValidationError
from verde.intake import ChunkingConfig, chunk, ingest, read_document
from verde.metering import count_tokens
from verde.rag import RagEngine


# -- read_document ------------------------------------------------------------


def test_read_plain_text(tmp_path):
    path = tmp_path / "notes.txt"
    path.write_text("hello")
    doc = read_document(str(path))
    assert (doc.format, doc.text) == ("plain_text", "hello")


def test_read_markdown_kept_verbatim(tmp_path):
    path = tmp_path / "syllabus.md"
    path.write_text("# Week 1\n\nIntro *text*.\n")
    doc = read_document(str(path))
    assert doc.format == "markdown"
    assert doc.text == "# Week 1\n\nIntro *text*.\n"


def test_read_unsupported_extension_named(tmp_path):
    path = tmp_path / "syllabus.pdf"
    path.write_bytes(b"%PDF-1.4")
    with pytest.raises(UnsupportedFormat) as err:
        read_document(str(path))
    assert ".pdf" in str(err.value)


def test_read_invalid_utf8(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_bytes(b"\xff\xfe\x00broken")
    with pytest.raises(EncodingError):
        read_document(str(path))


def test_read_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_document(str(tmp_path / "ghost.txt"))


# -- chunk ---------------------------------------------------------------------


def test_chunk_five_tokens_size_two_no_overlap():
    pieces = chunk("a b c d e", ChunkingConfig(2, 0))
    assert [count_tokens(p) for p in pieces] == [2, 2, 1]
    assert pieces == ["a b", "c d", "e"]


def test_chunk_short_text_single_chunk():
    text = "  one two three \n"
    pieces = chunk(text, ChunkingConfig(8, 2))
    assert pieces == ["one two three"]  # trimmed to the token span


def test_chunk_stride_is_size_minus_overlap():
    tokens = " ".join(f"t{i}" for i in range(10))
    pieces = chunk(tokens, ChunkingConfig(4, 1))
    assert len(pieces) == 4
    assert [p.split()[0] for p in pieces] == ["t0", "t3", "t6", "t9"]


def test_chunk_empty_text():
    assert chunk("", ChunkingConfig(4, 1)) == []


def test_chunk_preserves_internal_whitespace():
    pieces = chunk("a  b\tc   d", ChunkingConfig(2, 0))
    assert pieces == ["a  b", "c   d"]


def test_config_overlap_must_be_smaller_than_size():
    with pytest.raises(ValidationError):
        ChunkingConfig(4, 4)
    with pytest.raises(ValidationError):
        ChunkingConfig(0, 0)


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.text(alphabet="abc", min_size=1, max_size=3), max_size=60),
    st.integers(min_value=1, max_value=12),
    st.integers(min_value=0, max_value=11),
)
def test_chunk_round_trip_property(words, size, overlap):
    if overlap >= size:
        overlap %= size
    text = " ".join(words)
    config = ChunkingConfig(size, overlap)
    pieces = chunk(text, config)
    assert reconstruct_tokens(pieces, overlap) == text.split()
    assert all(count_tokens(p) <= size for p in pieces)


# -- ingest ----------------------------------------------------------------------


def write_docs(tmp_path, names_texts):
    paths = []
    for name, text in names_texts:
        path = tmp_path / name
        path.write_text(text) if isinstance(text, str) else path.write_bytes(text)
        paths.append(str(path))
    return paths


def test_ingest_counts_documents_and_chunks(tmp_path):
    paths = write_docs(tmp_path, [("a.txt", "alpha beta"), ("b.txt", "gamma delta")])
    engine = RagEngine()
    stats = ingest(paths, "col", ChunkingConfig(512, 64), engine)
    assert stats == {"documents": 2, "chunks": 2, "skipped": 0}
    assert engine.collection_info("col")["chunk_count"] == 2


def test_ingest_skips_unreadable(tmp_path, capsys):
    paths = write_docs(tmp_path, [("a.txt", "alpha beta"), ("b.pdf", b"%PDF")])
    stats = ingest(paths, "col", ChunkingConfig(512, 64), RagEngine())
    assert stats["documents"] == 1
    assert stats["chunks"] >= 1
    assert stats["skipped"] == 1


def test_ingest_idempotent(tmp_path):
    paths = write_docs(tmp_path, [("a.txt", " ".join(f"w{i}" for i in range(20)))])
    engine = RagEngine()
    first = ingest(paths, "col", ChunkingConfig(8, 2), engine)
    count = engine.collection_info("col")["chunk_count"]
    second = ingest(paths, "col", ChunkingConfig(8, 2), engine)
    assert engine.collection_info("col")["chunk_count"] == count
    assert first["chunks"] == second["chunks"]


def test_ingest_all_unreadable_is_fatal(tmp_path):
    paths = write_docs(tmp_path, [("a.pdf", b"%PDF")])
    with pytest.raises(ValidationError):
        ingest(paths, "col", ChunkingConfig(512, 64), RagEngine())


def test_ingest_sequences_follow_chunk_order(tmp_path):
    text = " ".join(f"w{i}" for i in range(10))
    paths = write_docs(tmp_path, [("a.txt", text)])
    engine = RagEngine()
    ingest(paths, "col", ChunkingConfig(4, 1), engine)
    chunks = engine.chunks("col")
    assert [c.seq for c in chunks] == [0, 1, 2, 3]
    assert chunks[0].source.endswith("a.txt")


# -- CLI ----------------------------------------------------------------------------


def test_cli_writes_export_and_stats(tmp_path, capsys):
    paths = write_docs(tmp_path, [("a.txt", "alpha beta gamma")])
    out = tmp_path / "col.jsonl"
    code = intake.main(
        ["--collection", "col", "--chunk-size", "8", "--overlap", "2", "--out", str(out), *paths]
    )
    assert code == 0
    stats = json.loads(capsys.readouterr().out.strip())
    assert stats == {"documents": 1, "chunks": 1, "skipped": 0}
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["collection_id"] == "col"
    assert len(record["vector"]) == 64


def test_cli_exit_two_when_all_skipped(tmp_path, capsys):
    paths = write_docs(tmp_path, [("a.docx", b"PK")])
    code = intake.main(["--collection", "col", "--out", str(tmp_path / "o.jsonl"), *paths])
    assert code == 2


def test_cli_rejects_bad_config(tmp_path, capsys):
    paths = write_docs(tmp_path, [("a.txt", "x")])
    code = intake.main(["--collection", "col", "--chunk-size", "4", "--overlap", "9", *paths])
    assert code == 2
