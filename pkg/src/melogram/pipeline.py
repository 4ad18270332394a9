"""End-to-end orchestration: train, filter-generate, augment, retrain, generate.

The experiment produces five weight sets. ``orig`` is trained on the corpus
alone. Each rule then filters one generation stream from ``orig``; every
note that needed resampling is harvested together with its context as an
amended pair. ``dia``/``spi``/``tri`` retrain on the corpus plus their own
amendments, ``mix`` on the corpus plus all three amendment groups. The
final generation phase samples freely from each weight set: the rules shape
the training data only and are never applied to the output stream, which is
what lets the retrained models keep the phrasing they learned while
absorbing the rule statistics.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grammar, metrics, midi, network
from .encoding import (
    NoteVocabulary,
    TrainingExample,
    default_vocabulary,
    encode_note,
    make_training_windows,
    note_indices,
    sample_index,
    split_distribution,
    stack_examples,
)
from .grammar import AmendedPair, Rule
from .notes import Key, Melody, NoteEvent

MODES = ("orig", "dia", "spi", "tri", "mix")
RULE_ORDER = (Rule.DIA, Rule.SPI, Rule.TRI)
ALL_RULE_SET = frozenset(Rule)
MODE_LABELS = {"orig": "Orig", "dia": "DIA", "spi": "SPI", "tri": "TRI", "mix": "MIX"}


@dataclass(frozen=True)
class Seeds:
    """The four independent random streams of one experiment."""

    init: int = 101
    shuffle: int = 202
    phase1: int = 303
    public: int = 404


@dataclass
class RunConfig:
    """Every knob of one experiment run.

    Defaults are desk scale; the published experiment scale (100k filtered
    notes per rule, 400 epochs on a 30k-note corpus) stays reachable through
    the same fields.
    """

    vocab: NoteVocabulary = field(default_factory=default_vocabulary)
    window: int = 7
    hidden_size: int = 128
    batch_size: int = 64
    learning_rate: float = 0.001
    epochs: int = 400
    plateau_patience: int = 10
    plateau_threshold: float = 1e-4
    clip_norm: float = 5.0
    phase1_notes: int = 5000
    phase2_notes: int = 5000
    resample_cap: int = 100
    seeds: Seeds = field(default_factory=Seeds)
    warm_start_retrain: bool = False
    mix_conjunction_filter: bool = False

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        for name in ("hidden_size", "batch_size", "epochs", "phase1_notes",
                     "phase2_notes", "resample_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def config_to_dict(cfg: RunConfig) -> dict:
    """Flatten a config into the blocks used by the config file and manifest."""
    return {
        "vocabulary": {
            "pitch_lo": cfg.vocab.pitch_lo,
            "pitch_hi": cfg.vocab.pitch_hi,
            "durations": list(cfg.vocab.durations),
        },
        "model": {"hidden_size": cfg.hidden_size, "window": cfg.window},
        "training": {
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "plateau_patience": cfg.plateau_patience,
            "plateau_threshold": cfg.plateau_threshold,
            "clip_norm": cfg.clip_norm,
        },
        "generation": {
            "phase1_notes": cfg.phase1_notes,
            "phase2_notes": cfg.phase2_notes,
            "resample_cap": cfg.resample_cap,
            "warm_start_retrain": cfg.warm_start_retrain,
            "mix_conjunction_filter": cfg.mix_conjunction_filter,
        },
        "seeds": {
            "init": cfg.seeds.init,
            "shuffle": cfg.seeds.shuffle,
            "phase1": cfg.seeds.phase1,
            "public": cfg.seeds.public,
        },
    }


def config_from_dict(data: dict) -> RunConfig:
    """Build a config from file blocks, rejecting unknown keys."""
    defaults = config_to_dict(RunConfig())
    _reject_unknown(data, defaults.keys(), "config")
    merged = {}
    for block, block_defaults in defaults.items():
        given = data.get(block, {})
        if not isinstance(given, dict):
            raise ValueError(f"config block {block!r} must be an object")
        _reject_unknown(given, block_defaults.keys(), f"config block {block!r}")
        merged[block] = {**block_defaults, **given}

    vocab = NoteVocabulary(
        pitch_lo=merged["vocabulary"]["pitch_lo"],
        pitch_hi=merged["vocabulary"]["pitch_hi"],
        durations=tuple(merged["vocabulary"]["durations"]),
    )
    gen = merged["generation"]
    return RunConfig(
        vocab=vocab,
        window=merged["model"]["window"],
        hidden_size=merged["model"]["hidden_size"],
        batch_size=merged["training"]["batch_size"],
        learning_rate=merged["training"]["learning_rate"],
        epochs=merged["training"]["epochs"],
        plateau_patience=merged["training"]["plateau_patience"],
        plateau_threshold=merged["training"]["plateau_threshold"],
        clip_norm=merged["training"]["clip_norm"],
        phase1_notes=gen["phase1_notes"],
        phase2_notes=gen["phase2_notes"],
        resample_cap=gen["resample_cap"],
        warm_start_retrain=gen["warm_start_retrain"],
        mix_conjunction_filter=gen["mix_conjunction_filter"],
        seeds=Seeds(**merged["seeds"]),
    )


def _reject_unknown(data: dict, allowed, where: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValueError(f"unknown keys in {where}: {', '.join(unknown)}")


def corpus_windows(corpus: list[Melody], cfg: RunConfig) -> list[TrainingExample]:
    """Training windows over every piece; windows never cross pieces."""
    examples: list[TrainingExample] = []
    for melody in corpus:
        examples.extend(make_training_windows(melody, cfg.window, cfg.vocab))
    return examples


def train_on_examples(
    examples: list[TrainingExample],
    cfg: RunConfig,
    warm_from: network.LstmParams | None = None,
) -> tuple[network.LstmParams, list[float]]:
    """Train from a fresh initialization (or a warm-start copy) to a plateau."""
    if not examples:
        raise ValueError("no training examples")
    contexts, pitch_targets, dur_targets = stack_examples(examples)
    if warm_from is not None:
        params = warm_from.copy()
    else:
        params = network.init_params(
            cfg.vocab.dim, cfg.hidden_size, network.make_rng(cfg.seeds.init)
        )
    return network.fit(
        params, contexts, pitch_targets, dur_targets, cfg.vocab.pitch_count,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        rng=network.make_rng(cfg.seeds.shuffle),
        learning_rate=cfg.learning_rate,
        plateau_patience=cfg.plateau_patience,
        plateau_threshold=cfg.plateau_threshold,
        clip_norm=cfg.clip_norm,
    )


def train_orig(corpus: list[Melody], cfg: RunConfig) -> tuple[network.LstmParams, list[float]]:
    examples = corpus_windows(corpus, cfg)
    if not examples:
        raise ValueError(
            f"corpus yields no training windows: every piece needs more than "
            f"{cfg.window} notes"
        )
    return train_on_examples(examples, cfg)


def _check_seed_phrase(seed_phrase: list[NoteEvent], cfg: RunConfig) -> None:
    if len(seed_phrase) != cfg.window:
        raise ValueError(
            f"seed phrase must have exactly {cfg.window} notes, got {len(seed_phrase)}"
        )
    for note in seed_phrase:
        if not cfg.vocab.contains(note):
            raise ValueError(f"seed note {note} is outside the vocabulary")


def phase1_generate(
    params: network.LstmParams,
    seed_phrase: list[NoteEvent],
    n: int,
    rules: frozenset[Rule],
    cfg: RunConfig,
    rng: np.random.Generator,
) -> tuple[list[NoteEvent], list[AmendedPair]]:
    """Filtered autoregressive generation that harvests amended pairs.

    Every sampled note must conform to the active rules; each note that was
    not accepted on its first draw is recorded with the context window that
    produced it. Seed notes count as rule history but are not part of the
    returned sequence.
    """
    _check_seed_phrase(seed_phrase, cfg)
    context = list(seed_phrase)
    encoded = [encode_note(note, cfg.vocab) for note in context]
    history = list(seed_phrase)
    generated: list[NoteEvent] = []
    amended_pairs: list[AmendedPair] = []
    for _ in range(n):
        raw = network.forward(params, np.stack(encoded))
        pitch_dist, dur_dist = split_distribution(raw, cfg.vocab)
        note, attempts, amended = grammar.constrained_sample(
            pitch_dist, dur_dist, history, rules, cfg.vocab, rng,
            cap=cfg.resample_cap,
        )
        if amended:
            amended_pairs.append(
                AmendedPair(
                    context=tuple(context), note=note, rule_set=rules,
                    attempts=attempts,
                )
            )
        generated.append(note)
        history.append(note)
        context = context[1:] + [note]
        encoded = encoded[1:] + [encode_note(note, cfg.vocab)]
    return generated, amended_pairs


def phase2_generate(
    params: network.LstmParams,
    seed_phrase: list[NoteEvent],
    n: int,
    cfg: RunConfig,
    rng: np.random.Generator,
) -> list[NoteEvent]:
    """Free autoregressive sampling; no rule is ever consulted here."""
    _check_seed_phrase(seed_phrase, cfg)
    encoded = [encode_note(note, cfg.vocab) for note in seed_phrase]
    vocab = cfg.vocab
    generated: list[NoteEvent] = []
    for _ in range(n):
        raw = network.forward(params, np.stack(encoded))
        pitch_dist, dur_dist = split_distribution(raw, vocab)
        note = NoteEvent(
            pitch=vocab.pitch_lo + sample_index(pitch_dist, rng),
            duration=vocab.durations[sample_index(dur_dist, rng)],
        )
        generated.append(note)
        encoded = encoded[1:] + [encode_note(note, vocab)]
    return generated


def build_augmented_dataset(
    orig_examples: list[TrainingExample],
    amended: list[AmendedPair],
    cfg: RunConfig,
) -> list[TrainingExample]:
    """Original windows first, then one example per amended pair in order."""
    examples = list(orig_examples)
    for pair in amended:
        if len(pair.context) != cfg.window:
            raise ValueError(
                f"amended context has {len(pair.context)} notes, expected {cfg.window}"
            )
        context = np.stack([encode_note(note, cfg.vocab) for note in pair.context])
        examples.append(
            TrainingExample(context=context, target=note_indices(pair.note, cfg.vocab))
        )
    return examples


def dataset_fingerprint(examples: list[TrainingExample]) -> str:
    """Order-sensitive SHA-256 over the packed example bytes."""
    digest = hashlib.sha256()
    digest.update(struct.pack("<Q", len(examples)))
    for ex in examples:
        digest.update(np.ascontiguousarray(ex.context, dtype="<f8").tobytes())
        digest.update(struct.pack("<2Q", *ex.target))
    return digest.hexdigest()


def file_fingerprint(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- corpus / melody / amendment file schemas (JSON) -----------------------

def melody_to_obj(melody: Melody) -> dict:
    obj: dict = {"notes": [[n.pitch, n.duration] for n in melody.notes]}
    if melody.source_key is not None:
        obj["source_key"] = {
            "tonic": melody.source_key.tonic,
            "mode": melody.source_key.mode,
        }
    return obj


def melody_from_obj(obj: dict) -> Melody:
    key = None
    if obj.get("source_key") is not None:
        key_obj = obj["source_key"]
        key = Key(key_obj["tonic"], key_obj["mode"])
    return Melody(
        notes=[NoteEvent(pitch, duration) for pitch, duration in obj["notes"]],
        source_key=key,
    )


def save_corpus(path: Path, corpus: list[Melody]) -> None:
    payload = {"pieces": [melody_to_obj(m) for m in corpus]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_corpus(path: Path) -> list[Melody]:
    payload = json.loads(Path(path).read_text())
    return [melody_from_obj(obj) for obj in payload["pieces"]]


def save_melody(path: Path, notes: list[NoteEvent]) -> None:
    Path(path).write_text(
        json.dumps(melody_to_obj(Melody(notes=list(notes))), sort_keys=True) + "\n"
    )


def load_melody(path: Path) -> list[NoteEvent]:
    return melody_from_obj(json.loads(Path(path).read_text())).notes


def save_amended(path: Path, amended: list[AmendedPair]) -> None:
    payload = [
        {
            "context": [[n.pitch, n.duration] for n in pair.context],
            "note": [pair.note.pitch, pair.note.duration],
            "rules": sorted(rule.value for rule in pair.rule_set),
            "attempts": pair.attempts,
        }
        for pair in amended
    ]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_amended(path: Path) -> list[AmendedPair]:
    payload = json.loads(Path(path).read_text())
    return [
        AmendedPair(
            context=tuple(NoteEvent(p, d) for p, d in item["context"]),
            note=NoteEvent(*item["note"]),
            rule_set=frozenset(Rule(name) for name in item["rules"]),
            attempts=item["attempts"],
        )
        for item in payload
    ]


# --- full experiment --------------------------------------------------------

def default_seed_phrase(corpus: list[Melody], cfg: RunConfig) -> list[NoteEvent]:
    """First window of the first corpus piece long enough to supply one."""
    for melody in corpus:
        if len(melody.notes) >= cfg.window:
            return list(melody.notes[: cfg.window])
    raise ValueError(f"no corpus piece has {cfg.window} notes for a seed phrase")


def run_experiment(
    corpus: list[Melody],
    cfg: RunConfig,
    out_dir: Path,
    seed_phrase: list[NoteEvent] | None = None,
    export_midi: bool = True,
) -> dict:
    """Run the whole five-mode experiment into a run directory.

    Writes weight files, amended-pair files, generated melodies, the metric
    report and a manifest tying them together. Fully determined by the
    corpus, the config and its seeds.
    """
    out_dir = Path(out_dir)
    for sub in ("weights", "amended", "melodies"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    if seed_phrase is None:
        seed_phrase = default_seed_phrase(corpus, cfg)
    _check_seed_phrase(seed_phrase, cfg)

    weights_meta = network.WeightsMeta(
        pitch_count=cfg.vocab.pitch_count,
        duration_count=cfg.vocab.duration_count,
        hidden_size=cfg.hidden_size,
        window=cfg.window,
    )
    manifest: dict = {
        "config": config_to_dict(cfg),
        "seed_phrase": [[n.pitch, n.duration] for n in seed_phrase],
        "modes": {},
        "phase1": {},
    }

    orig_examples = corpus_windows(corpus, cfg)
    if not orig_examples:
        raise ValueError("corpus yields no training windows")
    manifest["corpus"] = {
        "pieces": len(corpus),
        "windows": len(orig_examples),
        "sha256": dataset_fingerprint(orig_examples),
    }

    params_by_mode: dict[str, network.LstmParams] = {}
    orig_params, orig_trace = train_on_examples(orig_examples, cfg)
    params_by_mode["orig"] = orig_params
    _record_mode(
        manifest, out_dir, "orig", orig_params, orig_trace,
        dataset_fingerprint(orig_examples), len(orig_examples), weights_meta,
    )

    phase1_streams: list[tuple[str, frozenset[Rule]]] = [
        (rule.value, frozenset({rule})) for rule in RULE_ORDER
    ]
    if cfg.mix_conjunction_filter:
        # Optional variant: MIX amendments come from one stream filtered by
        # all three rules at once, instead of pooling the per-rule streams.
        phase1_streams.append(("mix", ALL_RULE_SET))

    amended_by_stream: dict[str, list[AmendedPair]] = {}
    for index, (stream, rules) in enumerate(phase1_streams):
        rng = network.make_rng(cfg.seeds.phase1, index)
        filtered, amended = phase1_generate(
            orig_params, seed_phrase, cfg.phase1_notes, rules, cfg, rng
        )
        amended_by_stream[stream] = amended
        amended_path = out_dir / "amended" / f"{stream}.json"
        save_amended(amended_path, amended)
        manifest["phase1"][stream] = {
            "rules": sorted(rule.value for rule in rules),
            "generated": len(filtered),
            "amended": len(amended),
            "path": str(amended_path.relative_to(out_dir)),
        }

    if cfg.mix_conjunction_filter:
        mix_amended = amended_by_stream["mix"]
    else:
        mix_amended = (
            amended_by_stream["dia"] + amended_by_stream["spi"] + amended_by_stream["tri"]
        )
    datasets = {
        "dia": build_augmented_dataset(orig_examples, amended_by_stream["dia"], cfg),
        "spi": build_augmented_dataset(orig_examples, amended_by_stream["spi"], cfg),
        "tri": build_augmented_dataset(orig_examples, amended_by_stream["tri"], cfg),
        "mix": build_augmented_dataset(orig_examples, mix_amended, cfg),
    }
    for mode, dataset in datasets.items():
        warm = orig_params if cfg.warm_start_retrain else None
        params, trace = train_on_examples(dataset, cfg, warm_from=warm)
        params_by_mode[mode] = params
        _record_mode(
            manifest, out_dir, mode, params, trace,
            dataset_fingerprint(dataset), len(dataset), weights_meta,
        )

    reports = {"DS": metrics.evaluate_many([m.notes for m in corpus])}
    manifest["melodies"] = {}
    for mode in MODES:
        rng = network.make_rng(cfg.seeds.public)
        notes = phase2_generate(params_by_mode[mode], seed_phrase, cfg.phase2_notes, cfg, rng)
        melody_path = out_dir / "melodies" / f"{mode}.json"
        save_melody(melody_path, notes)
        manifest["melodies"][mode] = str(melody_path.relative_to(out_dir))
        if export_midi:
            midi_path = out_dir / "melodies" / f"{mode}.mid"
            midi_path.write_bytes(midi.write_midi(Melody(notes=notes)))
        reports[MODE_LABELS[mode]] = metrics.evaluate(notes)

    report_json = out_dir / "report.json"
    report_json.write_text(metrics.report_to_json(reports) + "\n")
    report_txt = out_dir / "report.txt"
    report_txt.write_text(metrics.report_table(reports))
    manifest["report"] = {
        "json": str(report_json.relative_to(out_dir)),
        "text": str(report_txt.relative_to(out_dir)),
    }

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _record_mode(
    manifest: dict,
    out_dir: Path,
    mode: str,
    params: network.LstmParams,
    trace: list[float],
    dataset_sha: str,
    dataset_size: int,
    meta: network.WeightsMeta,
) -> None:
    weights_path = out_dir / "weights" / f"{mode}.wts"
    network.save_weights(weights_path, params, meta)
    manifest["modes"][mode] = {
        "weights": str(weights_path.relative_to(out_dir)),
        "weights_sha256": file_fingerprint(weights_path),
        "dataset_sha256": dataset_sha,
        "dataset_size": dataset_size,
        "epochs_run": len(trace),
        "final_loss": trace[-1] if trace else None,
    }
