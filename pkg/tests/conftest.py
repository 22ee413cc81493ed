import shutil
import sqlite3
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
MINI = FIXTURES / "mini_spider"


def build_databases(root: Path) -> Path:
    for script in sorted((MINI / "sql").glob("*.sql")):
        db_id = script.stem
        target = root / db_id / f"{db_id}.sqlite"
        target.parent.mkdir(parents=True, exist_ok=True)
        if target.exists():
            target.unlink()
        conn = sqlite3.connect(target)
        conn.executescript(script.read_text())
        conn.commit()
        conn.close()
    return root


@pytest.fixture(scope="session")
def db_root(tmp_path_factory) -> Path:
    return build_databases(tmp_path_factory.mktemp("databases"))


@pytest.fixture(scope="session")
def catalog():
    from sqlsynth.ingest import load_schemas

    return load_schemas(MINI / "tables.json")


@pytest.fixture(scope="session")
def train_pairs():
    from sqlsynth.ingest import load_examples

    return load_examples(MINI / "train.json")


@pytest.fixture
def corpus_dir(tmp_path, db_root) -> Path:
    """A writable copy of the mini corpus with databases under ``database/``."""
    out = tmp_path / "corpus"
    shutil.copytree(MINI, out, ignore=shutil.ignore_patterns("sql"))
    shutil.copytree(db_root, out / "database")
    return out
