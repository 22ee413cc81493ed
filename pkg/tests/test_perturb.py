import json
from pathlib import Path

import pytest

from sqlsynth.algebra import anonymize, parse_sql
from sqlsynth.ingest import connect, execute, load_category_split, load_examples
from sqlsynth.perturb import derive_seed, replace_constants, selection_size

MINI = Path(__file__).parent / "fixtures" / "mini_spider"
GOLDEN = Path(__file__).parent / "fixtures" / "golden" / "perturbation_report.json"


@pytest.fixture(scope="module")
def examples():
    return load_examples(MINI / "perturb_queries.json")


def test_selection_size():
    assert selection_size(0.7, 10) == 7
    assert selection_size(0.7, 3) == 2
    assert selection_size(1.0, 4) == 4 and selection_size(0.0, 4) == 0


def test_derive_seed_streams_differ():
    assert derive_seed(42, "a") != derive_seed(42, "b")
    assert derive_seed(42, "a", 1) != derive_seed(42, "a", 2)
    assert derive_seed(42, "a", 1) == derive_seed(42, "a", 1)


def test_seventy_percent_selected_and_valid(examples, catalog, db_root):
    out, report = replace_constants(examples, db_root, catalog, 0.7, 42)
    assert report.total == 10 and report.selected == 7
    assert 1 <= report.altered <= 7
    selected = {e["index"] for e in report.entries}
    conn = connect(db_root, "pets")
    try:
        for i, (old, new) in enumerate(zip(examples, out)):
            assert new.question == old.question and new.db_id == old.db_id
            if i not in selected:
                assert new == old
                continue
            entry = next(e for e in report.entries if e["index"] == i)
            if entry["status"] != "altered":
                assert new == old
                continue
            assert new.query != old.query
            schema = catalog["pets"]
            assert anonymize(parse_sql(new.query, schema)) == anonymize(parse_sql(old.query, schema))
            execute(conn, new.query)
            for change in entry["changes"]:
                assert change["old"] != change["new"]
    finally:
        conn.close()


def test_query_without_constants_is_reported(examples, catalog, db_root):
    _, report = replace_constants(examples, db_root, catalog, 1.0, 42)
    statuses = {e["index"]: e["status"] for e in report.entries}
    assert statuses[6] == "no_constants"


def test_reproducible(examples, catalog, db_root, tmp_path):
    a_out, a = replace_constants(examples, db_root, catalog, 0.7, 42)
    b_out, b = replace_constants(examples, db_root, catalog, 0.7, 42)
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert a_out == b_out
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    _, other = replace_constants(examples, db_root, catalog, 0.7, 43)
    assert other.to_dict() != a.to_dict()


def test_golden_report(examples, catalog, db_root):
    _, report = replace_constants(examples, db_root, catalog, 0.7, 42)
    assert report.to_dict() == json.loads(GOLDEN.read_text())


def test_per_category_sampling(train_pairs, catalog, db_root):
    split = load_category_split(MINI / "split.yaml")
    known = [p for p in train_pairs if p.db_id in catalog]
    _, report = replace_constants(known, db_root, catalog, 0.5, 1, categories=split)
    by_cat = {}
    for p in known:
        by_cat.setdefault(split.get(p.db_id, "train"), 0)
        by_cat[split.get(p.db_id, "train")] += 1
    assert report.selected == sum(selection_size(0.5, n) for n in by_cat.values())
    picked = {}
    for e in report.entries:
        label = split.get(e["db_id"], "train")
        picked[label] = picked.get(label, 0) + 1
    assert picked == {k: selection_size(0.5, n) for k, n in by_cat.items() if selection_size(0.5, n)}


def test_bad_fraction(examples, catalog, db_root):
    with pytest.raises(ValueError):
        replace_constants(examples, db_root, catalog, 1.5, 0)
