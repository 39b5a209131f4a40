"""Tests for corpus CSV reading and writing."""
import numpy as np
import pytest

from engine.errors import FormatError
from utils.corpus_io import COLUMNS, read_corpus, read_corpus_arrays, write_corpus
from utils.fan_simulator import FanSimulator, StreamKey


def write_rows(path, rows, header=",".join(COLUMNS)):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


class TestCorpusRoundTrip:

    def test_windows_survive(self, tmp_path):
        windows = list(FanSimulator(2, StreamKey.TEST).class_blocks(per_block=7, passes=1))
        path = tmp_path / "corpus.csv"
        assert write_corpus(path, windows, chunk_windows=4) == 21
        loaded = list(read_corpus(path, chunk_windows=5))
        assert len(loaded) == 21
        assert [w.mode for w in loaded] == [w.mode for w in windows]
        assert [w.index for w in loaded] == [w.index for w in windows]
        for original, read in zip(windows, loaded):
            np.testing.assert_allclose(read.samples, original.samples, rtol=1e-7)

    def test_header_and_timesteps(self, tmp_path):
        path = tmp_path / "corpus.csv"
        write_corpus(path, [FanSimulator(0).window(0, 3)])
        lines = path.read_text().splitlines()
        assert lines[0] == "t,ax,ay,az,mode"
        assert len(lines) == 41
        assert lines[1].startswith("120,")
        assert lines[1].endswith(",0")

    def test_unlabelled_windows(self, tmp_path):
        window = FanSimulator(0).window(1, 0).with_label(None)
        path = tmp_path / "corpus.csv"
        write_corpus(path, [window])
        assert path.read_text().splitlines()[1].endswith(",")
        samples, modes = read_corpus_arrays(path)
        assert samples.shape == (1, 40, 3)
        np.testing.assert_array_equal(modes, [-1])


class TestCorpusErrors:

    def test_wrong_header(self, tmp_path):
        path = write_rows(tmp_path / "bad.csv", [f"{i},0,0,1,0" for i in range(40)], header="t,x,y,z,mode")
        with pytest.raises(FormatError):
            list(read_corpus(path))

    def test_partial_window(self, tmp_path):
        path = write_rows(tmp_path / "bad.csv", [f"{i},0,0,1,0" for i in range(41)])
        with pytest.raises(FormatError) as info:
            list(read_corpus(path))
        assert info.value.offset == 40

    def test_mixed_modes(self, tmp_path):
        path = write_rows(tmp_path / "bad.csv", [f"{i},0,0,1,{0 if i < 20 else 1}" for i in range(40)])
        with pytest.raises(FormatError):
            list(read_corpus(path))

    def test_unparseable_value(self, tmp_path):
        path = write_rows(tmp_path / "bad.csv", [f"{i},0,zero,1,0" for i in range(40)])
        with pytest.raises(FormatError):
            list(read_corpus(path))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(FormatError):
            list(read_corpus(path))

    def test_no_windows(self, tmp_path):
        path = tmp_path / "header_only.csv"
        path.write_text(",".join(COLUMNS) + "\n")
        with pytest.raises(FormatError):
            read_corpus_arrays(path)
