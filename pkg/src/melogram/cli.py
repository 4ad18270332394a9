"""Command-line interface.

Commands mirror the experiment stages: ``ingest`` builds a corpus from MIDI
files, ``train`` fits the base weights, ``amend`` harvests rule-filtered
generation, ``retrain`` fits the augmented weight sets, ``generate`` samples
melodies, ``evaluate`` reports the metrics and ``export`` writes MIDI.
``run-all`` performs the whole five-mode experiment into one run directory.

Exit codes: 0 success, 2 validation failure, 3 parse failure, 4 unexpected
runtime failure. Seed values (only) may be overridden with environment
variables MELOGRAM_SEED_INIT, _SHUFFLE, _PHASE1 and _PUBLIC.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import metrics, midi, network, pipeline
from .encoding import fold_pitch
from .grammar import Rule
from .notes import Key, Melody, NoteEvent

log = logging.getLogger("melogram")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARSE = 3
EXIT_RUNTIME = 4

_SEED_ENV_VARS = {
    "init": "MELOGRAM_SEED_INIT",
    "shuffle": "MELOGRAM_SEED_SHUFFLE",
    "phase1": "MELOGRAM_SEED_PHASE1",
    "public": "MELOGRAM_SEED_PUBLIC",
}


def load_config(path: str | None) -> pipeline.RunConfig:
    """Load and validate a config file; missing path means all defaults."""
    if path is None:
        data: dict = {}
    else:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"config file {path} is not valid JSON: {exc}") from exc
    seeds = dict(data.get("seeds", {}))
    for field_name, var in _SEED_ENV_VARS.items():
        if var in os.environ:
            seeds[field_name] = int(os.environ[var])
    if seeds:
        data = {**data, "seeds": seeds}
    return pipeline.config_from_dict(data)


class ConfigParseError(ValueError):
    pass


def parse_seed_phrase(text: str) -> list[NoteEvent]:
    """Parse a seed phrase written as ``pitch:duration`` pairs, e.g. ``60:4,64:2``."""
    notes = []
    for chunk in text.split(","):
        try:
            pitch, duration = chunk.strip().split(":")
            notes.append(NoteEvent(int(pitch), int(duration)))
        except ValueError as exc:
            raise ValueError(f"bad seed note {chunk!r}: {exc}") from None
    return notes


def _resolve_seed_phrase(args, cfg: pipeline.RunConfig) -> list[NoteEvent] | None:
    if getattr(args, "seed_phrase", None):
        return parse_seed_phrase(args.seed_phrase)
    return None


def _load_checked_weights(path: Path, cfg: pipeline.RunConfig) -> network.LstmParams:
    params, meta = network.load_weights(path)
    network.check_compatible(
        meta,
        pitch_count=cfg.vocab.pitch_count,
        duration_count=cfg.vocab.duration_count,
        hidden_size=cfg.hidden_size,
        window=cfg.window,
    )
    return params


def _update_manifest(run_dir: Path, update: dict) -> None:
    manifest_path = run_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(manifest.get(key), dict):
            manifest[key].update(value)
        else:
            manifest[key] = value
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --- commands ---------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    key_override = Key.parse(args.key) if args.key else None
    midi_dir = Path(args.midi_dir)
    paths = sorted(p for p in midi_dir.iterdir() if p.suffix.lower() in (".mid", ".midi"))
    if not paths:
        log.error("no MIDI files in %s", midi_dir)
        return EXIT_VALIDATION

    corpus: list[Melody] = []
    for path in paths:
        try:
            parsed = midi.parse_midi(path.read_bytes())
        except midi.MidiParseError as exc:
            log.warning("rejected %s: %s", path.name, exc)
            continue
        events = parsed.merged_events()
        signature = midi.first_time_signature(events)
        if signature is not None and signature != (4, 4) and not args.allow_any_meter:
            log.warning("rejected %s: time signature %d/%d is not 4/4", path.name, *signature)
            continue
        try:
            melody = midi.extract_melody(events)
        except midi.EmptyMelodyError as exc:
            log.warning("rejected %s: %s", path.name, exc)
            continue
        key = key_override or melody.source_key
        if key is None and args.detect_key:
            key = midi.estimate_key(melody)
            log.info("%s: estimated key %s", path.name, key.name)
        if key is None:
            log.warning(
                "rejected %s: no key signature; pass --key or --detect-key", path.name
            )
            continue
        melody = midi.transpose_to_c(melody, key)
        melody = midi.quantize_durations(melody, parsed.division, cfg.vocab)
        folded = 0
        notes = []
        for note in melody.notes:
            pitch = fold_pitch(note.pitch, cfg.vocab)
            folded += pitch != note.pitch
            notes.append(NoteEvent(pitch, note.duration))
        if folded:
            log.warning("%s: folded %d notes into the vocabulary range by octaves",
                        path.name, folded)
        corpus.append(Melody(notes=notes, source_key=melody.source_key))
        log.info("accepted %s: %d notes", path.name, len(notes))

    if not corpus:
        log.error("no usable pieces in %s", midi_dir)
        return EXIT_VALIDATION
    pipeline.save_corpus(Path(args.out), corpus)
    log.info("wrote %d pieces to %s", len(corpus), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    corpus = pipeline.load_corpus(Path(args.corpus))
    run_dir = Path(args.run_dir)
    (run_dir / "weights").mkdir(parents=True, exist_ok=True)

    params, trace = pipeline.train_orig(corpus, cfg)
    weights_path = run_dir / "weights" / "orig.wts"
    network.save_weights(weights_path, params, _weights_meta(cfg))
    _update_manifest(run_dir, {
        "config": pipeline.config_to_dict(cfg),
        "modes": {"orig": {
            "weights": str(weights_path.relative_to(run_dir)),
            "weights_sha256": pipeline.file_fingerprint(weights_path),
            "epochs_run": len(trace),
            "final_loss": trace[-1] if trace else None,
        }},
    })
    log.info("trained orig for %d epochs, final loss %.4f", len(trace), trace[-1])
    return EXIT_OK


def cmd_amend(args) -> int:
    cfg = load_config(args.config)
    corpus = pipeline.load_corpus(Path(args.corpus))
    run_dir = Path(args.run_dir)
    (run_dir / "amended").mkdir(parents=True, exist_ok=True)
    params = _load_checked_weights(run_dir / "weights" / "orig.wts", cfg)
    seed_phrase = _resolve_seed_phrase(args, cfg) or pipeline.default_seed_phrase(corpus, cfg)

    wanted: list[tuple[str, frozenset[Rule]]] = [
        (rule.value, frozenset({rule}))
        for rule in (
            [Rule(name) for name in args.rules.split(",")]
            if args.rules
            else pipeline.RULE_ORDER
        )
    ]
    if cfg.mix_conjunction_filter and not args.rules:
        wanted.append(("mix", pipeline.ALL_RULE_SET))

    manifest_update: dict = {"phase1": {}}
    for stream, rules in wanted:
        index = (
            pipeline.RULE_ORDER.index(Rule(stream)) if stream != "mix"
            else len(pipeline.RULE_ORDER)
        )
        rng = network.make_rng(cfg.seeds.phase1, index)
        filtered, amended = pipeline.phase1_generate(
            params, seed_phrase, cfg.phase1_notes, rules, cfg, rng
        )
        out_path = run_dir / "amended" / f"{stream}.json"
        pipeline.save_amended(out_path, amended)
        manifest_update["phase1"][stream] = {
            "rules": sorted(rule.value for rule in rules),
            "generated": len(filtered),
            "amended": len(amended),
            "path": str(out_path.relative_to(run_dir)),
        }
        log.info("%s: %d of %d notes amended", stream, len(amended), len(filtered))
    _update_manifest(run_dir, manifest_update)
    return EXIT_OK


def cmd_retrain(args) -> int:
    cfg = load_config(args.config)
    corpus = pipeline.load_corpus(Path(args.corpus))
    run_dir = Path(args.run_dir)
    orig_examples = pipeline.corpus_windows(corpus, cfg)

    amended = {
        rule: pipeline.load_amended(run_dir / "amended" / f"{rule.value}.json")
        for rule in pipeline.RULE_ORDER
    }
    if cfg.mix_conjunction_filter:
        mix_amended = pipeline.load_amended(run_dir / "amended" / "mix.json")
    else:
        mix_amended = amended[Rule.DIA] + amended[Rule.SPI] + amended[Rule.TRI]
    datasets = {
        "dia": pipeline.build_augmented_dataset(orig_examples, amended[Rule.DIA], cfg),
        "spi": pipeline.build_augmented_dataset(orig_examples, amended[Rule.SPI], cfg),
        "tri": pipeline.build_augmented_dataset(orig_examples, amended[Rule.TRI], cfg),
        "mix": pipeline.build_augmented_dataset(orig_examples, mix_amended, cfg),
    }
    warm = None
    if cfg.warm_start_retrain:
        warm = _load_checked_weights(run_dir / "weights" / "orig.wts", cfg)

    manifest_update: dict = {"modes": {}}
    for mode, dataset in datasets.items():
        params, trace = pipeline.train_on_examples(dataset, cfg, warm_from=warm)
        weights_path = run_dir / "weights" / f"{mode}.wts"
        network.save_weights(weights_path, params, _weights_meta(cfg))
        manifest_update["modes"][mode] = {
            "weights": str(weights_path.relative_to(run_dir)),
            "weights_sha256": pipeline.file_fingerprint(weights_path),
            "dataset_sha256": pipeline.dataset_fingerprint(dataset),
            "dataset_size": len(dataset),
            "epochs_run": len(trace),
            "final_loss": trace[-1] if trace else None,
        }
        log.info("retrained %s on %d examples, final loss %.4f",
                 mode, len(dataset), trace[-1])
    _update_manifest(run_dir, manifest_update)
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    run_dir = Path(args.run_dir)
    params = _load_checked_weights(run_dir / "weights" / f"{args.mode}.wts", cfg)
    seed_phrase = _resolve_seed_phrase(args, cfg)
    if seed_phrase is None:
        if args.corpus is None:
            raise ValueError("need --seed-phrase or --corpus to derive one")
        seed_phrase = pipeline.default_seed_phrase(
            pipeline.load_corpus(Path(args.corpus)), cfg
        )
    rng = network.make_rng(cfg.seeds.public)
    notes = pipeline.phase2_generate(params, seed_phrase, args.notes, cfg, rng)
    out = Path(args.out) if args.out else run_dir / "melodies" / f"{args.mode}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    pipeline.save_melody(out, notes)
    log.info("wrote %d notes to %s", len(notes), out)
    if args.midi_out:
        Path(args.midi_out).write_bytes(midi.write_midi(Melody(notes=notes)))
        log.info("wrote MIDI to %s", args.midi_out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    reports: dict[str, metrics.MetricsReport] = {}
    if args.corpus:
        corpus = pipeline.load_corpus(Path(args.corpus))
        reports["DS"] = metrics.evaluate_many([m.notes for m in corpus])
    for path_text in args.melodies:
        path = Path(path_text)
        label = pipeline.MODE_LABELS.get(path.stem, path.stem)
        reports[label] = metrics.evaluate(pipeline.load_melody(path))
    table = metrics.report_table(reports)
    sys.stdout.write(table)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(metrics.report_to_json(reports) + "\n")
        (out_dir / "report.txt").write_text(table)
    return EXIT_OK


def cmd_export(args) -> int:
    notes = pipeline.load_melody(Path(args.melody))
    data = midi.write_midi(
        Melody(notes=notes), division=args.division, tempo_us=args.tempo_us
    )
    Path(args.out).write_bytes(data)
    log.info("wrote %d bytes to %s", len(data), args.out)
    return EXIT_OK


def cmd_run_all(args) -> int:
    cfg = load_config(args.config)
    corpus = pipeline.load_corpus(Path(args.corpus))
    seed_phrase = _resolve_seed_phrase(args, cfg)
    manifest = pipeline.run_experiment(
        corpus, cfg, Path(args.run_dir),
        seed_phrase=seed_phrase,
        export_midi=not args.no_midi,
    )
    sys.stdout.write((Path(args.run_dir) / "report.txt").read_text())
    log.info("run complete: %d modes, manifest at %s/manifest.json",
             len(manifest["modes"]), args.run_dir)
    return EXIT_OK


def cmd_init_config(args) -> int:
    cfg_dict = pipeline.config_to_dict(pipeline.RunConfig())
    Path(args.out).write_text(json.dumps(cfg_dict, indent=2, sort_keys=True) + "\n")
    log.info("wrote default config to %s", args.out)
    return EXIT_OK


def _weights_meta(cfg: pipeline.RunConfig) -> network.WeightsMeta:
    return network.WeightsMeta(
        pitch_count=cfg.vocab.pitch_count,
        duration_count=cfg.vocab.duration_count,
        hidden_size=cfg.hidden_size,
        window=cfg.window,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="melogram",
        description="Melody LSTM with music-theory grammar filters for data augmentation",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a corpus file from a directory of MIDI files")
    p.add_argument("midi_dir")
    p.add_argument("--out", required=True, help="corpus JSON to write")
    p.add_argument("--config", help="config file (vocabulary block is used)")
    p.add_argument("--key", help="key override like D:major when files lack one")
    p.add_argument("--detect-key", action="store_true",
                   help="estimate missing keys from the pitch-class histogram")
    p.add_argument("--allow-any-meter", action="store_true",
                   help="keep pieces whose time signature is not 4/4")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the base weights on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("amend", help="filtered generation that harvests amended pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--rules", help="comma-separated subset of dia,spi,tri (default all)")
    p.add_argument("--seed-phrase", help="notes as pitch:duration pairs, e.g. 60:4,64:2,...")
    p.set_defaults(func=cmd_amend)

    p = sub.add_parser("retrain", help="train dia/spi/tri/mix weights on augmented data")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("generate", help="free generation from one weight set")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--mode", required=True, choices=list(pipeline.MODES))
    p.add_argument("-n", "--notes", type=int, required=True)
    p.add_argument("--corpus", help="corpus to take the default seed phrase from")
    p.add_argument("--seed-phrase")
    p.add_argument("--out", help="melody JSON path (default melodies/<mode>.json)")
    p.add_argument("--midi-out", help="also export the melody as MIDI")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="metric report over melody files")
    p.add_argument("melodies", nargs="+", help="melody JSON files")
    p.add_argument("--corpus", help="include the corpus as a DS column")
    p.add_argument("--out", help="directory for report.json and report.txt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="write a melody file as a MIDI file")
    p.add_argument("melody")
    p.add_argument("--out", required=True)
    p.add_argument("--division", type=int, default=midi.DEFAULT_DIVISION)
    p.add_argument("--tempo-us", type=int, default=midi.DEFAULT_TEMPO_US)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("run-all", help="full five-mode experiment into a run directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed-phrase")
    p.add_argument("--no-midi", action="store_true", help="skip MIDI exports")
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("init-config", help="write a config file with all defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (midi.MidiParseError, ConfigParseError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except (ValueError, network.WeightsFormatError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort CLI guard
        log.error("unexpected failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
