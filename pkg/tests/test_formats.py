import numpy as np
import pytest

import oracles
from dmtrav.errors import FormatError, InvalidInputError
from dmtrav.features import ImageTensor
from dmtrav.formats import (
    Manifest,
    append_gram,
    format_manifest,
    format_sweep_report,
    format_traversal_records,
    load_image,
    parse_manifest,
    parse_traversal_records,
    read_feature_file,
    read_labels,
    read_manifest,
    read_vector,
    save_image,
    write_feature_file,
    write_vector,
)


class TestPpm:
    def test_gray_round_trip_is_quantization_exact(self, tmp_path):
        rng = np.random.default_rng(90)
        img = ImageTensor(rng.uniform(0, 1, (7, 5, 1)))
        p = tmp_path / "img.pgm"
        save_image(img, p)
        loaded = load_image(p)
        assert np.array_equal(
            np.rint(loaded.pixels * 255.0), np.rint(img.pixels * 255.0)
        )
        # a second save reproduces the bytes exactly
        p2 = tmp_path / "img2.pgm"
        save_image(loaded, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_color_round_trip(self, tmp_path):
        rng = np.random.default_rng(91)
        img = ImageTensor(rng.uniform(0, 1, (4, 6, 3)))
        p = tmp_path / "img.ppm"
        save_image(img, p)
        loaded = load_image(p)
        assert loaded.channels == 3
        assert np.array_equal(np.rint(loaded.pixels * 255), np.rint(img.pixels * 255))

    def test_hand_written_p6_fixture(self, tmp_path):
        # 3 pixels in one row: red, mid-green, black
        raw = b"P6\n3 1\n255\n" + bytes([255, 0, 0, 0, 128, 0, 0, 0, 0])
        p = tmp_path / "fixture.ppm"
        p.write_bytes(raw)
        img = load_image(p)
        assert img.pixels.shape == (1, 3, 3)
        assert img.pixels[0, 0, 0] == 1.0
        assert img.pixels[0, 1, 1] == pytest.approx(128 / 255)
        assert np.all(img.pixels[0, 2] == 0.0)

    def test_header_comments_handled(self, tmp_path):
        raw = b"P5\n# a comment\n2 2\n# another\n255\n" + bytes([0, 64, 128, 255])
        p = tmp_path / "c.pgm"
        p.write_bytes(raw)
        img = load_image(p)
        assert img.pixels[1, 1, 0] == 1.0

    def test_wrong_maxval_rejected(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(FormatError, match="maxval"):
            load_image(p)

    def test_unsupported_magic(self, tmp_path):
        p = tmp_path / "bad.pbm"
        p.write_bytes(b"P1\n1 1\n0")
        with pytest.raises(FormatError, match="magic"):
            load_image(p)

    def test_truncated_raster(self, tmp_path):
        p = tmp_path / "short.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(FormatError, match="truncated"):
            load_image(p)

    def test_two_channel_image_not_saveable(self, tmp_path):
        img = ImageTensor(np.zeros((2, 2, 2)))
        with pytest.raises(InvalidInputError):
            save_image(img, tmp_path / "x.ppm")


class TestFeatureFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(92)
        V = rng.standard_normal((5, 8)).astype(np.float32).astype(float)
        p = tmp_path / "f.dmtv"
        write_feature_file(p, V, 3, 1)
        ff = read_feature_file(p)
        assert ff.m == 3 and ff.n == 1
        assert np.array_equal(ff.V, V)
        assert ff.G is None

    def test_block_arithmetic_validated(self, tmp_path):
        with pytest.raises(InvalidInputError):
            write_feature_file(tmp_path / "f.dmtv", np.zeros((5, 2)), 1, 1)

    def test_gram_append_and_oracle(self, tmp_path):
        rng = np.random.default_rng(93)
        V = rng.standard_normal((3, 4))
        p = tmp_path / "f.dmtv"
        write_feature_file(p, V, 1, 1)
        before = p.read_bytes()
        append_gram(p)
        after = p.read_bytes()
        assert after[: len(before)] == before  # V bytes untouched
        ff = read_feature_file(p)
        stored_as_f32 = V.astype(np.float32).astype(float)
        assert np.allclose(ff.G, oracles.naive_gram(stored_as_f32), rtol=0, atol=1e-12)
        assert np.allclose(ff.G, ff.G.T, rtol=0, atol=0)

    def test_orthonormal_rows_identity_gram(self, tmp_path):
        V = np.eye(4)[:3]
        p = tmp_path / "f.dmtv"
        write_feature_file(p, V, 1, 1)
        append_gram(p)
        assert np.array_equal(read_feature_file(p).G, np.eye(3))

    def test_existing_gram_refused_without_overwrite(self, tmp_path):
        V = np.eye(3)
        p = tmp_path / "f.dmtv"
        write_feature_file(p, V, 1, 1)
        append_gram(p)
        with pytest.raises(InvalidInputError, match="overwrite"):
            append_gram(p)
        append_gram(p, overwrite=True)  # allowed explicitly

    def test_corrupt_magic(self, tmp_path):
        p = tmp_path / "f.dmtv"
        write_feature_file(p, np.eye(3), 1, 1)
        data = bytearray(p.read_bytes())
        data[:4] = b"XXXX"
        p.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            read_feature_file(p)

    def test_truncated_v_data(self, tmp_path):
        p = tmp_path / "f.dmtv"
        write_feature_file(p, np.eye(3), 1, 1)
        data = p.read_bytes()
        p.write_bytes(data[:-5])
        with pytest.raises(FormatError, match="truncated"):
            read_feature_file(p)

    def test_inconsistent_header_counts(self, tmp_path):
        import struct

        V32 = np.eye(3, dtype="<f4")
        blob = b"DMTV" + struct.pack("<IQQQQ", 1, 3, 3, 5, 9) + V32.tobytes()
        p = tmp_path / "f.dmtv"
        p.write_bytes(blob)
        with pytest.raises(FormatError, match="m\\+n\\+1"):
            read_feature_file(p)

    def test_vector_files(self, tmp_path):
        vec = np.random.default_rng(94).standard_normal(17).astype(np.float32).astype(float)
        p = tmp_path / "v.dmtv"
        write_vector(p, vec)
        assert np.array_equal(read_vector(p), vec)

    def test_vector_reader_rejects_matrices(self, tmp_path):
        p = tmp_path / "f.dmtv"
        write_feature_file(p, np.eye(3), 1, 1)
        with pytest.raises(FormatError, match="single-vector"):
            read_vector(p)


class TestRecords:
    def test_traversal_records_round_trip(self):
        from dmtrav.mmd import WitnessValue
        from dmtrav.optim import MinimizeTrace
        from dmtrav.traversal import LambdaRecord

        records = [
            LambdaRecord(
                lam=0.5 ** k,
                r=np.zeros(3),
                witness=WitnessValue(-0.123456789012345 * k, 0.5, 0.6),
                budget=1.75 * k,
                objective=-0.1 * k,
                trace=MinimizeTrace(k + 3, [0.0], 1e-9, "grad_tol"),
            )
            for k in range(3)
        ]
        text = format_traversal_records(records)
        rows = parse_traversal_records(text)
        assert len(rows) == 3
        for rec, (lam, obj, wit, bud, iters) in zip(records, rows):
            assert lam == rec.lam and obj == rec.objective
            assert wit == rec.witness.value and bud == rec.budget
            assert iters == rec.trace.iterations

    def test_sweep_report_formatting(self):
        from dmtrav.evaluate import SweepRecord, SweepReport

        text = format_sweep_report(
            SweepReport(
                [SweepRecord(None, -1.5, 0.25), SweepRecord(0.125, 2.5, 0.75)]
            )
        )
        lines = [l for l in text.splitlines() if not l.startswith("#")]
        assert lines[0].startswith("baseline ")
        assert lines[1].split() == ["0.125", "2.5", "0.75"]


class TestManifest:
    def test_parse_sections(self):
        text = "[source]\na.ppm\nb.ppm\n[target]\nc.ppm\n[input]\nd.ppm\n"
        mf = parse_manifest(text)
        assert mf.source_paths == ["a.ppm", "b.ppm"]
        assert mf.target_paths == ["c.ppm"]
        assert mf.input_path == "d.ppm"

    def test_round_trip(self):
        mf = Manifest(["s.ppm"], ["t.ppm"], "i.ppm")
        assert parse_manifest(format_manifest(mf)) == mf

    def test_empty_source_rejected(self):
        with pytest.raises(InvalidInputError):
            parse_manifest("[source]\n[target]\nt.ppm\n[input]\ni.ppm\n")

    def test_input_must_be_distinct(self):
        with pytest.raises(InvalidInputError):
            Manifest(["a.ppm"], ["b.ppm"], "a.ppm")

    def test_relative_paths_resolved_against_manifest_dir(self, tmp_path):
        sub = tmp_path / "runs"
        sub.mkdir()
        (sub / "m.txt").write_text("[source]\ns.ppm\n[target]\nt.ppm\n[input]\ni.ppm\n")
        mf = read_manifest(sub / "m.txt")
        assert mf.source_paths == [str(sub / "s.ppm")]

    def test_unknown_section(self):
        with pytest.raises(FormatError):
            parse_manifest("[bogus]\nx.ppm\n")

    def test_labels_reader(self, tmp_path):
        p = tmp_path / "labels.txt"
        p.write_text("+1\n-1\n1\n")
        assert np.array_equal(read_labels(p, 3), np.array([1.0, -1.0, 1.0]))
        with pytest.raises(InvalidInputError):
            read_labels(p, 5)
        p.write_text("+1\n0\n")
        with pytest.raises(FormatError):
            read_labels(p, 2)
