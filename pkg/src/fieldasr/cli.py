"""Command-line access to every pipeline stage.

Each subcommand is a thin composition of module operations; `serve` starts
the HTTP service. Errors print to stderr and exit 1; argparse handles usage
errors with exit 2.
"""

from __future__ import annotations

import argparse
import shutil
import sys
import wave
from pathlib import Path

from . import checkpoint as ckpt
from .corpus import (
    CleanConfig,
    Corpus,
    Recording,
    apply_genres,
    clean_corpus,
    filter_corpus,
    parse_genre_manifest,
    split_corpus,
)
from .elan import parse_elan, _parse_xml
from .errors import FieldasrError, NotFoundError, ParameterError
from .evalkit import (
    SynthSpec,
    corpus_cer,
    learning_curve,
    prepare_training,
    synth_corpus,
    write_curve_csv,
    write_profile_csv,
)
from .features import (
    FeatureConfig,
    read_feature_cache,
    utterance_features,
    write_feature_cache,
)
from .kaldi import write_kaldi_dir
from .model import (
    HybridModel,
    ModelConfig,
    TrainConfig,
    decode_joint,
    train,
)
from .pangloss import pangloss_to_elan


def _load_features(path):
    return read_feature_cache(path)


def _read_kaldi_text(path):
    out = {}
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        if not line:
            continue
        key, _, text = line.partition(" ")
        out[key] = text
    return out


def _model_config_from_args(args):
    return ModelConfig(
        input_dim=args.n_mels,
        encoder_layers=args.encoder_layers,
        hidden_size=args.hidden_size,
        decoder_hidden=args.decoder_hidden,
        ctc_weight=args.ctc_weight,
        frame_stacking=args.frame_stacking,
    )


def _train_config_from_args(args):
    return TrainConfig(
        epochs=args.epochs,
        batch_utterances=args.batch,
        ctc_weight=args.ctc_weight,
        seed=args.seed,
        clip_norm=args.clip_norm,
        sort_by_length=not args.no_sort_by_length,
    )


def _add_model_args(p):
    p.add_argument("--n-mels", type=int, default=40)
    p.add_argument("--encoder-layers", type=int, default=3)
    p.add_argument("--hidden-size", type=int, default=320)
    p.add_argument("--decoder-hidden", type=int, default=320)
    p.add_argument("--frame-stacking", type=int, default=1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=30)
    p.add_argument("--ctc-weight", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--no-sort-by-length", action="store_true")
    p.add_argument("--dev-fraction", type=float, default=0.1)


# --- commands -----------------------------------------------------------


def cmd_ingest(args):
    recordings = []
    utterances = []
    for doc_path in args.transcriptions:
        doc_path = Path(doc_path)
        blob = doc_path.read_bytes()
        if _parse_xml(blob).tag == "TEXT":
            blob = pangloss_to_elan(blob)
        rec_id = doc_path.stem
        utts = parse_elan(blob, tier_id=args.tier, recording_id=rec_id)
        wav_path = Path(args.audio_dir) / f"{rec_id}.wav"
        if not wav_path.exists():
            raise NotFoundError(
                f"missing audio for recording {rec_id!r}: {wav_path}"
            )
        with wave.open(str(wav_path), "rb") as fh:
            rate = fh.getframerate()
            duration_ms = int(round(fh.getnframes() * 1000 / rate))
        recordings.append(
            Recording(id=rec_id, path=str(wav_path), sample_rate=rate,
                      duration_ms=duration_ms)
        )
        utterances.extend(utts)
    corpus = Corpus.build(recordings, utterances)
    if args.genres:
        mapping = parse_genre_manifest(
            Path(args.genres).read_text(encoding="utf-8")
        )
        corpus = apply_genres(corpus, mapping)
    if args.speaker or args.exclude_genres:
        corpus = filter_corpus(
            corpus,
            speaker=args.speaker,
            exclude_genres=set(filter(None, args.exclude_genres.split(","))),
        )
    corpus.save(args.out)
    print(
        f"corpus: {len(corpus)} utterances, "
        f"{corpus.total_duration_ms / 60000.0:.2f} minutes, "
        f"speakers: {', '.join(corpus.speakers)}"
    )
    return 0


def cmd_clean(args):
    corpus = Corpus.load(args.input)
    cfg = CleanConfig.from_string(
        args.remove_chars,
        collapse_whitespace=not args.no_collapse,
        lowercase=args.lowercase,
    )
    clean_corpus(corpus, cfg).save(args.out)
    print(f"cleaned {len(corpus)} utterances -> {args.out}")
    return 0


def cmd_kaldi_dir(args):
    corpus = Corpus.load(args.input)
    manifest = write_kaldi_dir(corpus, args.out)
    for name in sorted(manifest):
        print(f"wrote {manifest[name]}")
    return 0


def cmd_features(args):
    corpus = Corpus.load(args.input)
    cfg = FeatureConfig(n_mels=args.n_mels, sample_rate=args.sample_rate)
    feats = utterance_features(corpus, cfg)
    write_feature_cache(args.out, list(feats.values()))
    total = sum(f.frames.shape[0] for f in feats.values())
    print(f"wrote {len(feats)} feature matrices ({total} frames) -> {args.out}")
    return 0


def cmd_synth(args):
    spec = SynthSpec(
        alphabet=args.alphabet,
        n_utterances=args.utterances,
        template_frames_per_char=args.frames_per_char,
        noise_sigma=args.sigma,
        utterance_length_chars=(args.min_chars, args.max_chars),
        n_mels=args.n_mels,
        seed=args.seed,
    )
    corpus, feats = synth_corpus(spec)
    corpus.save(args.out_corpus)
    write_feature_cache(args.out_features, [feats[u.id] for u in
                                            corpus.utterances])
    print(
        f"synthesized {len(corpus)} utterances "
        f"({corpus.total_duration_ms / 60000.0:.3f} minutes) over "
        f"alphabet {args.alphabet!r}"
    )
    return 0


def cmd_train(args):
    corpus = Corpus.load(args.corpus)
    feats = _load_features(args.features)
    train_corpus, dev_corpus = split_corpus(corpus, args.dev_fraction,
                                            seed=args.seed)
    train_samples, dev_samples, stats, vocab = prepare_training(
        train_corpus, dev_corpus, feats
    )
    model_cfg = _model_config_from_args(args)
    model = HybridModel.create(model_cfg, vocab, seed=args.seed)
    model.cmvn = stats
    history = train(
        model, train_samples, dev_samples, _train_config_from_args(args),
        log_sink=print,
    )
    ckpt.save_checkpoint(model, args.out_checkpoint,
                         feature_config=FeatureConfig(n_mels=args.n_mels))
    if args.out_profile:
        write_profile_csv(args.out_profile, history)
        print(f"wrote {args.out_profile}")
    print(f"wrote {args.out_checkpoint}")
    return 0


def cmd_decode(args):
    model, _ = ckpt.load_checkpoint(args.checkpoint)
    corpus = Corpus.load(args.corpus)
    feats = _load_features(args.features)
    lines = []
    for utt in corpus.utterances:
        frames = feats[utt.id].frames
        if model.cmvn is not None:
            frames = (frames - model.cmvn.mean) / model.cmvn.stddev
        hyp = decode_joint(model, frames, beam=args.beam,
                           ctc_weight=args.ctc_weight)
        lines.append(f"{utt.id} {hyp.text}")
    Path(args.out).write_text("".join(l + "\n" for l in lines),
                              encoding="utf-8")
    print(f"decoded {len(lines)} utterances -> {args.out}")
    return 0


def cmd_cer(args):
    refs = _read_kaldi_text(args.ref)
    hyps = _read_kaldi_text(args.hyp)
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise ParameterError(
            f"hypotheses missing for {len(missing)} utterances "
            f"(first: {missing[0]})"
        )
    pairs = [(refs[k], hyps[k]) for k in sorted(refs)]
    rate = corpus_cer(pairs)
    print(f"{rate:.4f}")
    return 0


def cmd_curve(args):
    corpus = Corpus.load(args.corpus)
    feats = _load_features(args.features)
    minutes = [float(m) for m in args.minutes.split(",")]
    points = learning_curve(
        corpus,
        feats,
        minutes,
        _model_config_from_args(args),
        _train_config_from_args(args),
        seed=args.seed,
        dev_fraction=args.dev_fraction,
        log_sink=print if args.verbose else None,
    )
    write_curve_csv(args.out, points)
    for p in points:
        print(
            f"{p.train_minutes:.3f} min -> dev CER {p.cer_percent:.2f}% "
            f"({p.epochs_used} epochs)"
        )
    print(f"wrote {args.out}")
    return 0


def cmd_export(args):
    from .service.store import StateStore

    store = StateStore(args.state_dir)
    meta = store.load_model_meta(args.model_id)
    src = store.model_dir(args.model_id) / "checkpoint.ckpt"
    if not meta.get("trained") or not src.exists():
        raise ParameterError(f"model {args.model_id} is not trained")
    ckpt.load_checkpoint(src)  # integrity check before copying
    shutil.copyfile(src, args.out)
    print(f"exported {args.model_id} -> {args.out}")
    return 0


def cmd_import(args):
    from .service.schemas import ENGINE
    from .service.store import StateStore

    store = StateStore(args.state_dir)
    blob = Path(args.checkpoint).read_bytes()
    model, feature_config = ckpt.load_checkpoint_bytes(blob)
    meta = {
        "id": store.new_id("m"),
        "name": args.name,
        "engine": ENGINE,
        "dataset_id": None,
        "model_config": model.config.to_dict(),
        "train_config": TrainConfig().to_dict(),
        "feature_config": (feature_config or FeatureConfig()).to_dict(),
        "trained": True,
    }
    mdir = store.model_dir(meta["id"])
    mdir.mkdir(parents=True, exist_ok=True)
    (mdir / "checkpoint.ckpt").write_bytes(blob)
    store.save_model_meta(meta)
    print(meta["id"])
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    app = create_app(args.state_dir, workers=args.workers, seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fieldasr",
        description="Desk-scale speech recognition workbench for language "
        "documentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse transcription files into a corpus")
    p.add_argument("transcriptions", nargs="+",
                   help=".eaf or Pangloss .xml files")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tier", default=None)
    p.add_argument("--genres", default=None,
                   help="sidecar manifest: recording-id<TAB>genre")
    p.add_argument("--speaker", default=None)
    p.add_argument("--exclude-genres", default="")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("clean", help="apply character removal to a corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--remove-chars", default="")
    p.add_argument("--no-collapse", action="store_true")
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("kaldi-dir", help="write wav.scp/segments/text/utt2spk")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kaldi_dir)

    p = sub.add_parser("features", help="compute log-mel features")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-mels", type=int, default=40)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--alphabet", default="abcde")
    p.add_argument("--utterances", type=int, default=8)
    p.add_argument("--frames-per-char", type=int, default=5)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--min-chars", type=int, default=3)
    p.add_argument("--max-chars", type=int, default=8)
    p.add_argument("--n-mels", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--out-features", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-profile", default=None,
                   help="per-epoch train/dev CER CSV")
    _add_model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="transcribe corpus features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--ctc-weight", type=float, default=0.5)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("cer", help="score hypotheses against references")
    p.add_argument("--ref", required=True,
                   help="reference in Kaldi text format (id + transcript)")
    p.add_argument("--hyp", required=True)
    p.set_defaults(func=cmd_cer)

    p = sub.add_parser("curve", help="learning-curve experiment")
    p.add_argument("--corpus", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--minutes", required=True,
                   help="comma-separated ascending minute marks")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    _add_model_args(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("export", help="export a trained model checkpoint")
    p.add_argument("--state-dir", required=True)
    p.add_argument("--model-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("import", help="register a checkpoint as a model")
    p.add_argument("--state-dir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--name", default="imported")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--state-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8717)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FieldasrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
