import json

import numpy as np
import pytest

import hierspx as hx


class TestImages:
    def test_one_pixel_p6(self, tmp_path):
        path = tmp_path / "red.ppm"
        path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        m = hx.read_image(path)
        assert m.data.shape == (1, 1, 3)
        np.testing.assert_array_equal(m.data[0, 0], [1.0, 0.0, 0.0])

    def test_p5_single_channel(self, tmp_path):
        path = tmp_path / "gray.pgm"
        path.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 51]))
        m = hx.read_image(path)
        assert m.data.shape == (1, 2, 1)
        assert m.data[0, 1, 0] == pytest.approx(51 / 255)

    def test_round_trip_bytes_identical(self, tmp_path):
        rng = np.random.default_rng(70)
        m = hx.FeatureMap(rng.uniform(0, 1, size=(5, 7, 3)))
        p1 = tmp_path / "a.ppm"
        p2 = tmp_path / "b.ppm"
        hx.write_image(m, p1)
        hx.write_image(hx.read_image(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_comments_allowed(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6 # a comment\n# another\n2 1\n255\n" + bytes(6))
        m = hx.read_image(path)
        assert (m.height, m.width) == (1, 2)

    def test_wrong_maxval_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(hx.ParseError, match="maxval"):
            hx.read_image(path)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(hx.ParseError, match="byte offset"):
            hx.read_image(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n1 1\n255\n1 2 3")
        with pytest.raises(hx.ParseError):
            hx.read_image(path)

    def test_half_rounds_up(self, tmp_path):
        m = hx.FeatureMap(np.full((1, 1, 1), 0.5))
        path = tmp_path / "h.pgm"
        hx.write_image(m, path)
        assert path.read_bytes().endswith(bytes([128]))

    def test_missing_file_raises_filenotfound(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            hx.read_image(tmp_path / "absent.ppm")


class TestLabels:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(71)
        labels = hx.LabelMap(rng.integers(0, 1000, size=(3, 2)))
        path = tmp_path / "labels.csv"
        hx.write_labels(labels, path)
        text = path.read_text()
        assert len(text.strip().splitlines()) == 3
        assert all(len(ln.split(",")) == 2 for ln in text.strip().splitlines())
        back = hx.read_labels(path)
        np.testing.assert_array_equal(back.labels, labels.labels)

    def test_ragged_rows_report_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2\n3,4,5\n")
        with pytest.raises(hx.ParseError, match="line 2"):
            hx.read_labels(path)

    def test_negative_label_rejected(self, tmp_path):
        path = tmp_path / "neg.csv"
        path.write_text("0,-3\n")
        with pytest.raises(hx.ParseError):
            hx.read_labels(path)


class TestReports:
    def test_stable_key_order(self, tmp_path):
        path = tmp_path / "report.json"
        hx.write_report({"b": 1, "a": {"z": 2, "y": 3}}, path)
        text = path.read_text(encoding="utf-8")
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"b": 1, "a": {"z": 2, "y": 3}}
