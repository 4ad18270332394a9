"""End-to-end tests of the command-line interface."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from melogram import cli, pipeline
from melogram.encoding import NoteVocabulary
from melogram.midi import extract_melody, parse_midi, quantize_durations
from melogram.notes import NoteEvent

from conftest import random_melody
from test_midi import off, on, smf


def tiny_config_file(tmp_path: Path) -> Path:
    config = {
        "vocabulary": {"pitch_lo": 55, "pitch_hi": 79, "durations": [1, 2, 4, 8]},
        "model": {"hidden_size": 8, "window": 7},
        "training": {"epochs": 3, "batch_size": 16},
        "generation": {"phase1_notes": 40, "phase2_notes": 40},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


def write_corpus(tmp_path: Path, pieces=3, length=40, seed=5) -> Path:
    vocab = NoteVocabulary(pitch_lo=55, pitch_hi=79, durations=(1, 2, 4, 8))
    rng = np.random.default_rng(seed)
    corpus = [random_melody(rng, vocab, length) for _ in range(pieces)]
    path = tmp_path / "corpus.json"
    pipeline.save_corpus(path, corpus)
    return path


def melody_track(pitches, ticks=240, time_sig=(4, 4), key_sig=None):
    events = [(0, bytes([0xFF, 0x58, 0x04, time_sig[0],
                         {1: 0, 2: 1, 4: 2, 8: 3}[time_sig[1]], 24, 8]))]
    if key_sig is not None:
        sharps, minor = key_sig
        events.append((0, bytes([0xFF, 0x59, 0x02, sharps & 0xFF, minor])))
    for pitch in pitches:
        events.append((0, on(pitch)))
        events.append((ticks, off(pitch)))
    return events


class TestIngest:
    def test_meter_filter_keeps_only_four_four(self, tmp_path, caplog):
        midi_dir = tmp_path / "midi"
        midi_dir.mkdir()
        pitches = [60, 62, 64, 65, 67, 69, 71, 72]
        (midi_dir / "waltz.mid").write_bytes(
            smf(melody_track(pitches, time_sig=(3, 4), key_sig=(0, 0)))
        )
        (midi_dir / "square.mid").write_bytes(
            smf(melody_track(pitches, time_sig=(4, 4), key_sig=(0, 0)))
        )
        out = tmp_path / "corpus.json"
        code = cli.main(["ingest", str(midi_dir), "--out", str(out)])
        assert code == 0
        corpus = pipeline.load_corpus(out)
        assert len(corpus) == 1
        assert "waltz.mid" in caplog.text and "3/4" in caplog.text

    def test_key_override_when_meta_absent(self, tmp_path):
        midi_dir = tmp_path / "midi"
        midi_dir.mkdir()
        pitches = [62, 64, 66, 67, 69, 71, 73, 74]  # D major scale
        (midi_dir / "tune.mid").write_bytes(smf(melody_track(pitches)))
        out = tmp_path / "corpus.json"

        # Without a key the piece is rejected and nothing usable remains.
        assert cli.main(["ingest", str(midi_dir), "--out", str(out)]) == cli.EXIT_VALIDATION

        assert cli.main(
            ["ingest", str(midi_dir), "--out", str(out), "--key", "D:major"]
        ) == 0
        corpus = pipeline.load_corpus(out)
        assert [n.pitch for n in corpus[0].notes] == [60, 62, 64, 65, 67, 69, 71, 72]

    def test_detect_key_flag(self, tmp_path):
        midi_dir = tmp_path / "midi"
        midi_dir.mkdir()
        pitches = [62, 64, 66, 67, 69, 71, 73, 74, 69, 66, 62, 67, 74, 73, 71, 69]
        (midi_dir / "tune.mid").write_bytes(smf(melody_track(pitches)))
        out = tmp_path / "corpus.json"
        assert cli.main(["ingest", str(midi_dir), "--out", str(out), "--detect-key"]) == 0
        corpus = pipeline.load_corpus(out)
        classes = {n.pitch % 12 for n in corpus[0].notes}
        assert classes <= {0, 2, 4, 5, 7, 9, 11}  # transposed onto the white keys

    def test_rerun_is_byte_identical(self, tmp_path):
        midi_dir = tmp_path / "midi"
        midi_dir.mkdir()
        (midi_dir / "a.mid").write_bytes(
            smf(melody_track([60, 62, 64, 65, 67, 69, 71, 72], key_sig=(0, 0)))
        )
        out1 = tmp_path / "c1.json"
        out2 = tmp_path / "c2.json"
        assert cli.main(["ingest", str(midi_dir), "--out", str(out1)]) == 0
        assert cli.main(["ingest", str(midi_dir), "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_empty_directory_fails_validation(self, tmp_path):
        midi_dir = tmp_path / "empty"
        midi_dir.mkdir()
        code = cli.main(["ingest", str(midi_dir), "--out", str(tmp_path / "c.json")])
        assert code == cli.EXIT_VALIDATION


class TestStagedCommands:
    def test_train_amend_retrain_generate_evaluate(self, tmp_path):
        config = tiny_config_file(tmp_path)
        corpus = write_corpus(tmp_path)
        run_dir = tmp_path / "run"

        assert cli.main(["train", "--corpus", str(corpus), "--config", str(config),
                         "--run-dir", str(run_dir)]) == 0
        assert (run_dir / "weights" / "orig.wts").exists()

        assert cli.main(["amend", "--corpus", str(corpus), "--config", str(config),
                         "--run-dir", str(run_dir)]) == 0
        for rule in ("dia", "spi", "tri"):
            assert (run_dir / "amended" / f"{rule}.json").exists()

        assert cli.main(["retrain", "--corpus", str(corpus), "--config", str(config),
                         "--run-dir", str(run_dir)]) == 0
        for mode in ("dia", "spi", "tri", "mix"):
            assert (run_dir / "weights" / f"{mode}.wts").exists()

        melody_out = tmp_path / "gen.json"
        assert cli.main(["generate", "--run-dir", str(run_dir), "--config", str(config),
                         "--mode", "dia", "-n", "30", "--corpus", str(corpus),
                         "--out", str(melody_out)]) == 0
        assert len(pipeline.load_melody(melody_out)) == 30

        assert cli.main(["evaluate", str(melody_out), "--corpus", str(corpus),
                         "--out", str(tmp_path / "report")]) == 0
        report = json.loads((tmp_path / "report" / "report.json").read_text())
        assert set(report) == {"DS", "gen"}

        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert set(manifest["modes"]) == {"orig", "dia", "spi", "tri", "mix"}

    def test_conjunction_filter_staged_path(self, tmp_path):
        config_data = json.loads(tiny_config_file(tmp_path).read_text())
        config_data["generation"] = {"phase1_notes": 40, "phase2_notes": 40,
                                     "mix_conjunction_filter": True}
        config = tmp_path / "conj.json"
        config.write_text(json.dumps(config_data))
        corpus = write_corpus(tmp_path)
        run_dir = tmp_path / "run"

        assert cli.main(["train", "--corpus", str(corpus), "--config", str(config),
                         "--run-dir", str(run_dir)]) == 0
        assert cli.main(["amend", "--corpus", str(corpus), "--config", str(config),
                         "--run-dir", str(run_dir)]) == 0
        # The conjunction stream is written alongside the three rule streams.
        assert (run_dir / "amended" / "mix.json").exists()
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["phase1"]["mix"]["rules"] == ["dia", "spi", "tri"]
        assert cli.main(["retrain", "--corpus", str(corpus), "--config", str(config),
                         "--run-dir", str(run_dir)]) == 0
        mix_pairs = pipeline.load_amended(run_dir / "amended" / "mix.json")
        orig_windows = (40 - 7) * 3
        assert manifest["modes"]["orig"]["weights_sha256"]
        retrained = json.loads((run_dir / "manifest.json").read_text())
        assert retrained["modes"]["mix"]["dataset_size"] == orig_windows + len(mix_pairs)

    def test_dimension_mismatch_refused_with_both_sizes(self, tmp_path, caplog):
        config = tiny_config_file(tmp_path)
        corpus = write_corpus(tmp_path)
        run_dir = tmp_path / "run"
        assert cli.main(["train", "--corpus", str(corpus), "--config", str(config),
                         "--run-dir", str(run_dir)]) == 0

        other = json.loads(Path(config).read_text())
        other["model"]["hidden_size"] = 6
        other_path = tmp_path / "other.json"
        other_path.write_text(json.dumps(other))
        code = cli.main(["generate", "--run-dir", str(run_dir), "--config", str(other_path),
                         "--mode", "orig", "-n", "10", "--corpus", str(corpus)])
        assert code == cli.EXIT_VALIDATION
        assert "8" in caplog.text and "6" in caplog.text


class TestRunAll:
    def test_full_run_writes_everything(self, tmp_path, capsys):
        config = tiny_config_file(tmp_path)
        corpus = write_corpus(tmp_path)
        run_dir = tmp_path / "run"
        assert cli.main(["run-all", "--corpus", str(corpus), "--config", str(config),
                         "--run-dir", str(run_dir)]) == 0
        for mode in ("orig", "dia", "spi", "tri", "mix"):
            assert (run_dir / "weights" / f"{mode}.wts").exists()
        assert (run_dir / "report.json").exists()
        out = capsys.readouterr().out
        assert out.splitlines()[0].split() == ["DS", "Orig", "DIA", "SPI", "TRI", "MIX"]


class TestExport:
    def test_export_round_trips_through_own_parser(self, tmp_path):
        notes = [NoteEvent(60 + i, 4) for i in range(8)]
        melody_path = tmp_path / "melody.json"
        pipeline.save_melody(melody_path, notes)
        out = tmp_path / "out.mid"
        assert cli.main(["export", str(melody_path), "--out", str(out)]) == 0
        parsed = parse_midi(out.read_bytes())
        vocab = NoteVocabulary()
        melody = quantize_durations(
            extract_melody(parsed.merged_events()), parsed.division, vocab
        )
        assert melody.notes == notes


class TestConfigHandling:
    def test_init_config_round_trips(self, tmp_path):
        path = tmp_path / "defaults.json"
        assert cli.main(["init-config", "--out", str(path)]) == 0
        cfg = cli.load_config(str(path))
        assert cfg == pipeline.RunConfig()

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"moddle": {}}))
        assert cli.main(["init-config", "--out", str(tmp_path / "x.json")]) == 0
        code = cli.main(["train", "--corpus", "nowhere.json", "--config", str(path),
                         "--run-dir", str(tmp_path / "run")])
        assert code == cli.EXIT_VALIDATION

    def test_malformed_json_is_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{нет")
        code = cli.main(["train", "--corpus", "nowhere.json", "--config", str(path),
                         "--run-dir", str(tmp_path / "run")])
        assert code == cli.EXIT_PARSE

    def test_malformed_midi_is_parse_error(self, tmp_path):
        midi_dir = tmp_path / "midi"
        midi_dir.mkdir()
        (midi_dir / "broken.mid").write_bytes(b"MThd" + (7).to_bytes(4, "big") + bytes(10))
        # A broken file is only skipped; with nothing usable the exit is validation.
        code = cli.main(["ingest", str(midi_dir), "--out", str(tmp_path / "c.json")])
        assert code == cli.EXIT_VALIDATION

    def test_env_overrides_seeds_only(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MELOGRAM_SEED_PUBLIC", "9999")
        cfg = cli.load_config(None)
        assert cfg.seeds.public == 9999
        assert cfg.seeds.init == pipeline.Seeds().init

    def test_seed_phrase_parser(self):
        notes = cli.parse_seed_phrase("60:4, 64:2,67:1")
        assert notes == [NoteEvent(60, 4), NoteEvent(64, 2), NoteEvent(67, 1)]
        with pytest.raises(ValueError, match="bad seed note"):
            cli.parse_seed_phrase("60-4")
