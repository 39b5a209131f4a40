"""Tests for CSV artifact writing and the run manifest."""
import csv
import hashlib
import json

from utils.artifacts import MANIFEST_NAME, file_sha256, read_manifest, update_manifest, write_csv


class TestWriteCsv:

    def test_cells(self, tmp_path):
        path = write_csv(tmp_path / "sub" / "table.csv", ["a", "b", "c"], [[1, 0.1, None], [2, float("inf"), "x"]])
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows == [["a", "b", "c"], ["1", "0.1", ""], ["2", "inf", "x"]]

    def test_header_only(self, tmp_path):
        path = write_csv(tmp_path / "empty.csv", ["step", "macro_f1"], [])
        assert path.read_text().splitlines() == ["step,macro_f1"]


class TestManifest:

    def test_missing_manifest_is_empty(self, tmp_path):
        assert read_manifest(tmp_path) == {}

    def test_unreadable_manifest_is_empty(self, tmp_path):
        (tmp_path / MANIFEST_NAME).write_text("{not json")
        assert read_manifest(tmp_path) == {}

    def test_merges_commands(self, tmp_path):
        first = write_csv(tmp_path / "one.csv", ["x"], [[1]])
        second = write_csv(tmp_path / "two.csv", ["y"], [[2]])
        update_manifest(tmp_path, "train", {"seed": 3}, {"ratio": 4.0}, [first])
        manifest = update_manifest(tmp_path, "classify", {"seed": 3}, {"final_macro_f1": 0.9}, [second])
        assert manifest["seed"] == 3
        assert set(manifest["commands"]) == {"train", "classify"}
        assert manifest["commands"]["train"]["results"] == {"ratio": 4.0}
        assert set(manifest["artifacts"]) == {"one.csv", "two.csv"}
        on_disk = json.loads((tmp_path / MANIFEST_NAME).read_text())
        assert on_disk == manifest

    def test_hashes_match_content(self, tmp_path):
        path = tmp_path / "blob.bin"
        path.write_bytes(b"stream head")
        manifest = update_manifest(tmp_path, "gen-data", {"seed": 0}, {}, [path])
        expected = hashlib.sha256(b"stream head").hexdigest()
        assert file_sha256(path) == expected
        assert manifest["artifacts"]["blob.bin"] == expected
