import json
import subprocess
import sys

import numpy as np
import pytest

from compsteer.cli import (
    _effective_options,
    _standardize_arg,
    _steering_config,
    build_parser,
    ingest_corpus,
    main,
)
from compsteer.compressors import CodecId
from compsteer.distances import RowStats, load_matrix
from compsteer.errors import CorpusReadError, EmptyClass, InvalidInput
from compsteer.evaluation import SUMMARY_HEADER
from compsteer.synthetic import markov_corpus, write_corpus


@pytest.fixture(scope="module")
def corpus_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root, markov_corpus(2, 6, 1000, seed=31))
    return root


@pytest.fixture()
def mixed_corpus(tmp_path):
    """Two classes mixing binary fragment files with plain text files."""
    rng = np.random.default_rng(0)
    root = tmp_path / "mixed"
    (root / "duck").mkdir(parents=True)
    (root / "goose").mkdir()
    blob = lambda: bytes(rng.integers(0, 256, 300).astype(np.uint8))
    (root / "duck" / "mallard__000.wav").write_bytes(b"\x00\xff" + blob())
    (root / "duck" / "mallard__001.wav").write_bytes(b"\x00\xfe" + blob())
    (root / "duck" / "notes.txt").write_bytes(b"quiet on the pond today\n" * 12)
    (root / "goose" / "honk__000.wav").write_bytes(b"\x00\xfd" + blob())
    (root / "goose" / "solo.txt").write_bytes(b"one loud call at dawn\n" * 12)
    return root


def stderr_record(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


class TestIngest:
    def test_objects_follow_the_directory_layout(self, mixed_corpus):
        objects, _fragments, manifest = ingest_corpus(mixed_corpus)
        assert [obj.id for obj in objects] == [
            "duck/mallard__000.wav",
            "duck/mallard__001.wav",
            "duck/notes.txt",
            "goose/honk__000.wav",
            "goose/solo.txt",
        ]
        assert {obj.class_label for obj in objects} == {"duck", "goose"}
        assert objects[0].payload == (mixed_corpus / "duck/mallard__000.wav").read_bytes()
        assert [e["id"] for e in manifest["entries"]] == [obj.id for obj in objects]

    def test_double_underscore_names_group_into_files(self, mixed_corpus):
        _objects, fragments, _manifest = ingest_corpus(mixed_corpus)
        assert fragments == {
            "duck/mallard__000.wav": "duck/mallard",
            "duck/mallard__001.wav": "duck/mallard",
            "goose/honk__000.wav": "goose/honk",
        }

    def test_hex_directive_rewrites_every_payload(self, mixed_corpus):
        objects, _fragments, manifest = ingest_corpus(mixed_corpus, encoding="hex")
        for obj in objects:
            original = (mixed_corpus / obj.id).read_bytes()
            assert len(obj.payload) == 2 * len(original)
            assert bytes.fromhex(obj.payload.decode()) == original
        assert {e["encoding"] for e in manifest["entries"]} == {"hex"}

    def test_auto_encoding_protects_the_relative_codec(self, mixed_corpus):
        objects, _fragments, manifest = ingest_corpus(
            mixed_corpus, encoding="auto", codec=CodecId.RLZ
        )
        applied = {e["id"]: e["encoding"] for e in manifest["entries"]}
        assert applied["duck/mallard__000.wav"] == "hex"
        assert applied["duck/notes.txt"] == "raw"
        by_id = {obj.id: obj for obj in objects}
        assert b"\x00" not in by_id["duck/mallard__000.wav"].payload

    def test_auto_encoding_leaves_general_codecs_raw(self, mixed_corpus):
        _objects, _fragments, manifest = ingest_corpus(
            mixed_corpus, encoding="auto", codec=CodecId.DEFLATE
        )
        assert {e["encoding"] for e in manifest["entries"]} == {"raw"}

    def test_raw_binary_refused_for_the_relative_codec(self, mixed_corpus):
        with pytest.raises(InvalidInput):
            ingest_corpus(mixed_corpus, encoding="raw", codec=CodecId.RLZ)

    def test_empty_class_directory_rejected(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "a" / "x.txt").write_text("some text")
        (tmp_path / "b").mkdir()
        with pytest.raises(EmptyClass):
            ingest_corpus(tmp_path)

    def test_root_without_class_directories_rejected(self, tmp_path):
        with pytest.raises(EmptyClass):
            ingest_corpus(tmp_path)

    def test_unreadable_inputs_rejected(self, tmp_path):
        with pytest.raises(CorpusReadError):
            ingest_corpus(tmp_path / "never-created")
        (tmp_path / "a").mkdir()
        (tmp_path / "a" / "empty.txt").write_bytes(b"")
        with pytest.raises(CorpusReadError):
            ingest_corpus(tmp_path)


class TestOptions:
    def test_flags_beat_config_beats_defaults(self, tmp_path, corpus_root):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"folds": 4, "seed": 9}))
        parser = build_parser()
        args = parser.parse_args(
            ["eval", str(corpus_root), "--config", str(config), "--folds", "2"]
        )
        options = _effective_options(args)
        assert options["folds"] == 2
        assert options["seed"] == 9
        assert options["codec"] == "deflate"

    def test_unknown_config_keys_rejected(self, tmp_path, corpus_root):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"fodls": 4}))
        args = build_parser().parse_args(
            ["eval", str(corpus_root), "--config", str(config)]
        )
        with pytest.raises(InvalidInput):
            _effective_options(args)

    def test_policy_strings(self):
        top = _steering_config({**_base_options(), "policy": "top:2"})
        assert (top.policy.kind, top.policy.n) == ("top_n", 2)
        avg = _steering_config({**_base_options(), "policy": "above-avg"})
        assert avg.policy.kind == "above_tree_average"
        with pytest.raises(InvalidInput):
            _steering_config({**_base_options(), "policy": "bottom:2"})

    def test_external_stats_loaded_from_disk(self, tmp_path):
        stats_file = tmp_path / "stats.json"
        stats_file.write_text(json.dumps({"stats": {"a": [0.5, 0.1]}}))
        stats = _standardize_arg({"standardize": f"external:{stats_file}"})
        assert isinstance(stats, RowStats)
        assert stats.provenance == "external"
        assert stats.stats == {"a": (0.5, 0.1)}
        with pytest.raises(InvalidInput):
            _standardize_arg({"standardize": "zscore"})


def _base_options():
    from compsteer.cli import DEFAULTS

    return dict(DEFAULTS)


class TestCommands:
    def test_distances_round_trip(self, corpus_root, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        assert main(["distances", str(corpus_root), "--out", str(out)]) == 0
        matrix = load_matrix(out / "distances.csv")
        assert matrix.measure == "ncd"
        assert matrix.codec == "deflate"
        assert len(matrix.object_ids) == 12
        assert np.isfinite(matrix.values).all()
        sidecar = json.loads((out / "distances.json").read_text())
        assert sidecar["version"]
        assert sidecar["input_hash"]
        assert sidecar["config"]["codec"] == "deflate"

    def test_distances_class_filter(self, corpus_root, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        code = main(
            ["distances", str(corpus_root), "--out", str(out), "--classes", "class0"]
        )
        assert code == 0
        matrix = load_matrix(out / "distances.csv")
        assert set(matrix.labels) == {"class0"}
        assert len(matrix.object_ids) == 6

    def test_steer_writes_a_model(self, corpus_root, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        assert main(["steer", str(corpus_root), "--out", str(out)]) == 0
        doc = json.loads((out / "model.json").read_text())
        assert doc["measure"] == "ncd"
        assert doc["codec"] == "deflate"
        assert {c["class"] for c in doc["clusters"]} == {"class0", "class1"}
        assert doc["manifest"]["config"]["policy"] == "above-avg"

    def test_eval_writes_report_and_summary(self, corpus_root, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        code = main(
            ["eval", str(corpus_root), "--out", str(out), "--folds", "3",
             "--method", "knn"]
        )
        assert code == 0
        records = json.loads((out / "report.json").read_text())
        assert len(records) == 4
        aggregate = records[-1]
        assert aggregate["aggregate"] is True
        assert aggregate["config"]["method"] == "knn"
        assert 0.0 <= aggregate["test_f1"] <= 1.0
        header, line = (out / "report.csv").read_text().strip().splitlines()
        assert header == SUMMARY_HEADER
        assert line.split(",")[0] == "knn"

    def test_eval_from_saved_matrix_matches_fresh_run(self, corpus_root, tmp_path):
        dist_out = tmp_path / "dist"
        dist_out.mkdir()
        main(["distances", str(corpus_root), "--out", str(dist_out)])
        args = ["--folds", "3", "--seed", "4"]
        fresh_out = tmp_path / "fresh"
        fresh_out.mkdir()
        main(["eval", str(corpus_root), "--out", str(fresh_out)] + args)
        reload_out = tmp_path / "reload"
        reload_out.mkdir()
        main(
            ["eval", "--matrix", str(dist_out / "distances.csv"),
             "--out", str(reload_out)] + args
        )
        fresh = json.loads((fresh_out / "report.json").read_text())
        reloaded = json.loads((reload_out / "report.json").read_text())
        assert fresh[:-1] == reloaded[:-1]
        assert fresh[-1]["test_f1"] == reloaded[-1]["test_f1"]

    def test_tree_exports_per_class(self, corpus_root, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        assert main(["tree", str(corpus_root), "--out", str(out)]) == 0
        for label in ("class0", "class1"):
            newick = (out / f"tree_{label}.nwk").read_text()
            assert newick.rstrip().endswith(";")
            doc = json.loads((out / f"tree_{label}.json").read_text())
            assert doc["manifest"]["input_hash"]

    def test_sweep_reports_every_grid_point(self, corpus_root, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"method": ["knn", "dummy"], "folds": [3]}))
        code = main(
            ["sweep", str(corpus_root), "--out", str(out), "--grid", str(grid),
             "--iterations", "2"]
        )
        assert code == 0
        manifest = json.loads((out / "sweep_manifest.json").read_text())
        assert len(manifest["points"]) == 2
        for entry in manifest["points"]:
            report = json.loads((out / entry["report"]).read_text())
            assert report[-1]["config"]["method"] == entry["point"]["method"]
            assert entry["test_f1"] == pytest.approx(report[-1]["test_f1"])

    def test_sweep_requires_a_grid(self, corpus_root, capsys):
        assert main(["sweep", str(corpus_root)]) == 1
        assert stderr_record(capsys)["error"] == "InvalidInput"

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["eval", "--frobnicate"])
        assert excinfo.value.code == 2

    def test_missing_inputs_reported_as_a_record(self, capsys):
        assert main(["eval"]) == 1
        record = stderr_record(capsys)
        assert record["error"] == "InvalidInput"
        assert "corpus" in record["message"]

    def test_bad_corpus_path_reported_with_the_path(self, tmp_path, capsys):
        bad = tmp_path / "nope"
        assert main(["distances", str(bad)]) == 1
        record = stderr_record(capsys)
        assert record["error"] == "CorpusReadError"
        assert str(bad) in record["message"]

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "compsteer", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.strip()
