import sqlite3

import pytest

from sqlsynth.generate import PARAPHRASE_CRAFTED, PARAPHRASE_SCHEMA
from sqlsynth.ingest import ExamplePair, connect, execute
from sqlsynth.llm import LLMClient, StubProvider
from sqlsynth.paraphrase import (
    CraftedQuery,
    Hole,
    SqlTemplate,
    TemplateError,
    clean_sql,
    craft_and_fill_sql,
    describe_and_paraphrase,
    extract_related_tables,
    load_template_pack,
    paraphrase_with_schema,
    retained,
)


@pytest.fixture(scope="module")
def pack():
    return load_template_pack()


def test_bundled_pack_tiers(pack):
    tiers = [t.tier for t in pack]
    assert tiers.count("basic") == 12 and tiers.count("complex") == 8
    assert len({t.template_id for t in pack}) == 20


def test_template_invariants():
    with pytest.raises(TemplateError):
        SqlTemplate("x", "basic", "SELECT {column_1} FROM {table_1}", (Hole("table_1", "table"),))
    with pytest.raises(TemplateError):
        SqlTemplate("x", "medium", "SELECT 1", ())
    with pytest.raises(TemplateError):
        SqlTemplate("x", "basic", "SELECT {column_1} FROM t", (Hole("column_1", "column", "table_9"),))
    t = SqlTemplate("x", "basic", "SELECT {column_1} FROM {table_1}",
                    (Hole("table_1", "table"), Hole("column_1", "column", "table_1")))
    assert t.prompt_shape == "SELECT [column_1] FROM [table_1]"
    assert t.holes_text == "table_1: a table\ncolumn_1: a column of table_1"


def test_clean_sql_strips_fences_and_prefix():
    assert clean_sql("```sql\nSELECT  a\nFROM t;\n```") == "SELECT a FROM t"
    assert clean_sql("SQL: SELECT 1;") == "SELECT 1"


@pytest.mark.parametrize("db_id", ["pets", "concert_singer", "flight_2"])
def test_crafted_queries_execute(db_id, catalog, db_root, pack):
    conn = connect(db_root, db_id)
    try:
        crafted = craft_and_fill_sql(catalog[db_id], pack, LLMClient(StubProvider()), conn)
        assert len(crafted) == len(pack)
        kept = retained(crafted)
        assert kept
        for c in kept:
            assert c.db_id == db_id and c.error is None
            assert execute(conn, c.query) == c.row_count
        for c in crafted:
            if not c.ok:
                assert c.error and c not in kept
    finally:
        conn.close()


def test_invalid_column_is_reported_not_retained(catalog, db_root, pack):
    client = LLMClient(StubProvider({"fill_sql_template": lambda b: "SELECT wingspan FROM Pets"}))
    conn = connect(db_root, "pets")
    try:
        crafted = craft_and_fill_sql(catalog["pets"], pack[:1], client, conn)
    finally:
        conn.close()
    (bad,) = crafted
    assert bad.status == "error" and "wingspan" in bad.error
    assert retained(crafted) == []
    assert bad.to_record()["template_id"] == pack[0].template_id


def test_drop_empty_and_timeout(catalog, db_root, pack):
    empty = LLMClient(StubProvider({"fill_sql_template": lambda b: "SELECT PetID FROM Pets WHERE weight > 1000"}))
    conn = connect(db_root, "pets")
    try:
        (kept,) = craft_and_fill_sql(catalog["pets"], pack[:1], empty, conn)
        (dropped,) = craft_and_fill_sql(catalog["pets"], pack[:1], empty, conn, drop_empty=True)
        assert kept.ok and kept.row_count == 0
        assert dropped.status == "error" and dropped.error == "empty result"
        with pytest.raises(sqlite3.OperationalError, match="timeout"):
            execute(conn, "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c",
                    timeout=0.05)
    finally:
        conn.close()


def test_extract_tables_drops_ghosts_and_falls_back(catalog):
    schema = catalog["pets"]
    ghost = LLMClient(StubProvider({"extract_tables": lambda b: "Pets, Owners, `student`"}))
    assert extract_related_tables("q", schema, ghost) == ["Pets", "Student"]
    nothing = LLMClient(StubProvider({"extract_tables": lambda b: "Owners"}))
    assert extract_related_tables("q", schema, nothing) == schema.table_names
    assert extract_related_tables("List all pets", schema, LLMClient(StubProvider())) == ["Pets", "Has_Pet"]


def test_paraphrase_with_schema(catalog):
    example = ExamplePair("List all pets", "SELECT * FROM Pets", "pets")
    out = paraphrase_with_schema(example, catalog, LLMClient(StubProvider()), 3)
    assert len(out) == 3 and len({c.question for c in out}) == 3
    assert all(c.provenance == PARAPHRASE_SCHEMA and c.query == example.query for c in out)
    assert paraphrase_with_schema(example, catalog, LLMClient(StubProvider()), 0) == []


def test_describe_and_paraphrase(pack):
    crafted = CraftedQuery("SELECT count(*) FROM pets", pack[3], "pets", "ok", row_count=1)
    out = describe_and_paraphrase(crafted, LLMClient(StubProvider()), 2)
    assert [c.question for c in out] == [
        "What is the number of rows of the pets table?",
        "Show me the number of rows of the pets table.",
    ]
    assert all(c.provenance == PARAPHRASE_CRAFTED and c.source_id == pack[3].template_id for c in out)
    assert out[0].explanation.text == "return the number of rows of the pets table."
    assert describe_and_paraphrase(crafted, LLMClient(StubProvider()), 0) == []
    with pytest.raises(ValueError):
        describe_and_paraphrase(CraftedQuery("x", pack[3], "pets", "error", "boom"), LLMClient(StubProvider()), 2)
