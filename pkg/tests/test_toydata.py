import hashlib
from pathlib import Path

import pytest

from vecdiff.errors import InvalidSpec
from vecdiff.svg import parse_svg
from vecdiff.toydata import (
    MAX_PATHS,
    TOY_CLASSES,
    generate_toy_dataset,
    ingest_directory,
    load_manifest,
)

CLASSES = ["house", "tree", "star", "arrow", "face"]


def dir_digest(path):
    h = hashlib.sha256()
    for f in sorted(Path(path).iterdir()):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def test_single_star(tmp_path):
    manifest = generate_toy_dataset(["star", "house"], 1, 7, tmp_path)
    star = [e for e in manifest.entries if e.caption == "star"]
    assert len(star) == 1
    doc = parse_svg(manifest.resolve(star[0]).read_text())
    assert 0 < len(doc.paths) <= MAX_PATHS


def test_determinism_byte_identical(tmp_path):
    generate_toy_dataset(CLASSES, 5, 3, tmp_path / "a")
    generate_toy_dataset(CLASSES, 5, 3, tmp_path / "b")
    assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")


def test_class_balance(tmp_path):
    manifest = generate_toy_dataset(CLASSES, 20, 0, tmp_path)
    assert len(manifest.entries) == 100
    for c in CLASSES:
        assert sum(e.caption == c for e in manifest.entries) == 20


def test_all_documents_within_budget_black(tmp_path):
    manifest = generate_toy_dataset(CLASSES, 10, 11, tmp_path)
    for entry in manifest.entries:
        doc = parse_svg(manifest.resolve(entry).read_text())
        assert 0 < len(doc.paths) <= MAX_PATHS
        for path in doc.paths:
            assert path.fill == (0.0, 0.0, 0.0)
            path.validate()


def test_invalid_specs(tmp_path):
    with pytest.raises(InvalidSpec):
        generate_toy_dataset(["star"], 3, 0, tmp_path)  # <2 classes
    with pytest.raises(InvalidSpec):
        generate_toy_dataset(["star", "nonexistent"], 3, 0, tmp_path)


def test_grammar_budget_declared():
    for name, (_gen, max_paths) in TOY_CLASSES.items():
        assert max_paths <= MAX_PATHS, name


def test_manifest_roundtrip_and_validation(tmp_path):
    manifest = generate_toy_dataset(CLASSES, 2, 5, tmp_path)
    loaded = load_manifest(tmp_path / "manifest.json")
    assert [e.caption for e in loaded.entries] == [e.caption for e in manifest.entries]
    # deleting a referenced file must fail validation
    manifest.resolve(manifest.entries[0]).unlink()
    with pytest.raises(InvalidSpec):
        load_manifest(tmp_path / "manifest.json")


def test_ingest_directory(tmp_path):
    generate_toy_dataset(["star", "tree"], 3, 5, tmp_path)
    (tmp_path / "manifest.json").unlink()
    manifest = ingest_directory(tmp_path, tmp_path / "ingested.json")
    assert len(manifest.entries) == 6
    assert {e.caption for e in manifest.entries} == {"star", "tree"}
    loaded = load_manifest(tmp_path / "ingested.json")
    assert len(loaded.entries) == 6
