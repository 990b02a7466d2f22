"""Local HTTP service for the training/transcription workflow.

Endpoints mirror the staged interface: upload a dataset, create a model,
train with live log streaming, transcribe, export/import checkpoints.
State persists under one directory and survives restarts.
"""

from __future__ import annotations

import tempfile
import threading
import wave as wave_mod

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse

from .. import checkpoint as ckpt
from ..corpus import (
    CleanConfig,
    Corpus,
    Recording,
    apply_genres,
    clean_corpus,
    parse_genre_manifest,
)
from ..elan import parse_elan, _parse_xml
from ..errors import (
    FieldasrError,
    FormatError,
    NotFoundError,
    ParameterError,
)
from ..features import FeatureConfig, decode_wav, logmel, cmvn_apply
from ..model import ModelConfig, TrainConfig, decode_joint
from ..pangloss import pangloss_to_elan
from .jobs import JobManager
from .schemas import (
    ENGINE,
    CreateModelIn,
    DatasetSummary,
    FileDiagnostic,
    HealthOut,
    ModelRecordOut,
    TranscriptionOut,
    TrainJobOut,
    UtterancePreview,
    WindowOut,
)
from .store import StateStore

WINDOW_MS = 10_000
OVERLAP_MS = 1_000

_TRANSCRIPTION_SUFFIXES = (".eaf", ".xml")


def create_app(state_dir, workers=1, seed=0):
    store = StateStore(state_dir)
    manager = JobManager(store, workers=workers, default_seed=seed)
    app = FastAPI(title="fieldasr service")
    app.state.store = store
    app.state.manager = manager
    app.state.default_seed = seed
    checkpoint_cache = {}
    checkpoint_lock = threading.Lock()

    @app.exception_handler(FieldasrError)
    async def _domain_error(request: Request, exc: FieldasrError):
        status = 404 if isinstance(exc, NotFoundError) else 422
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/healthz", response_model=HealthOut)
    def healthz():
        return HealthOut(status="ok")

    # --- datasets ----------------------------------------------------------

    @app.post("/datasets", response_model=DatasetSummary, status_code=201)
    def create_dataset(
        files: list[UploadFile] = File(...),
        name: str = Form("dataset"),
        remove_chars: str = Form(""),
        collapse_whitespace: bool = Form(True),
        lowercase: bool = Form(False),
        dry_run: bool = Form(False),
    ):
        uploads = [(f.filename, f.file.read()) for f in files]
        clean_cfg = CleanConfig.from_string(
            remove_chars,
            collapse_whitespace=collapse_whitespace,
            lowercase=lowercase,
        )
        corpus, diagnostics, wav_blobs = _build_corpus(uploads, clean_cfg)
        if diagnostics:
            return JSONResponse(
                status_code=422,
                content={
                    "detail": "dataset ingestion failed",
                    "diagnostics": [d.model_dump() for d in diagnostics],
                },
            )
        dataset_id = store.new_id("d")
        summary = _summarize(dataset_id, name, corpus, dry_run=dry_run)
        if not dry_run:
            ddir = store.dataset_dir(dataset_id)
            (ddir / "audio").mkdir(parents=True, exist_ok=True)
            fixed = _repoint_audio(corpus, ddir / "audio")
            for rec_id, blob in wav_blobs.items():
                (ddir / "audio" / f"{rec_id}.wav").write_bytes(blob)
            fixed.save(ddir / "corpus.json")
            store.save_dataset_meta(
                {
                    "id": dataset_id,
                    "name": name,
                    "clean_config": {
                        "remove_chars": "".join(sorted(clean_cfg.remove_chars)),
                        "collapse_whitespace": clean_cfg.collapse_whitespace,
                        "lowercase": clean_cfg.lowercase,
                    },
                    "summary": summary.model_dump(),
                }
            )
        return summary

    @app.get("/datasets/{dataset_id}", response_model=DatasetSummary)
    def get_dataset(dataset_id: str):
        meta = store.load_dataset_meta(dataset_id)
        return DatasetSummary(**meta["summary"])

    # --- models ------------------------------------------------------------

    @app.post("/models", response_model=ModelRecordOut, status_code=201)
    def create_model(body: CreateModelIn):
        if body.engine != ENGINE:
            raise ParameterError(
                f"unsupported engine {body.engine!r}; available: {ENGINE}"
            )
        store.load_dataset_meta(body.dataset_id)  # 404 if absent
        model_config = ModelConfig(**body.model.model_dump())
        train_values = body.train.model_dump()
        if train_values.get("seed") is None:
            train_values["seed"] = app.state.default_seed
        train_config = TrainConfig(**train_values)
        meta = {
            "id": store.new_id("m"),
            "name": body.name,
            "engine": body.engine,
            "dataset_id": body.dataset_id,
            "model_config": model_config.to_dict(),
            "train_config": train_config.to_dict(),
            "feature_config": FeatureConfig().to_dict(),
            "trained": False,
        }
        store.save_model_meta(meta)
        return _model_out(meta)

    @app.post("/models/{model_id}/train", response_model=TrainJobOut,
              status_code=202)
    def start_training(model_id: str):
        meta = store.load_model_meta(model_id)
        dataset = store.load_dataset_meta(meta["dataset_id"])
        if dataset["summary"]["utterance_count"] == 0:
            raise ParameterError("dataset has no utterances")
        if manager.active_job_for(model_id) is not None:
            return JSONResponse(
                status_code=409,
                content={"detail": f"model {model_id} already has an active job"},
            )
        job = manager.submit(model_id)
        return _job_out(job)

    # --- jobs ---------------------------------------------------------------

    @app.get("/jobs/{job_id}", response_model=TrainJobOut)
    def get_job(job_id: str):
        return _job_out(manager.get(job_id))

    @app.get("/jobs/{job_id}/logs")
    def stream_logs(job_id: str, request: Request):
        manager.get(job_id)  # 404 if absent
        try:
            start = int(request.query_params.get("from", "0"))
        except ValueError:
            raise ParameterError("from must be an integer") from None
        log = manager.log_store(job_id)

        def generate():
            seq = max(0, start)
            while True:
                for number, line in log.read_from(seq):
                    yield f"seq {number} {line}\n"
                    seq = number + 1
                if manager.is_terminal(job_id) and len(log) <= seq:
                    return
                log.wait_beyond(seq, timeout=0.2)

        return StreamingResponse(generate(), media_type="text/plain")

    # --- transcription --------------------------------------------------------

    @app.post("/models/{model_id}/transcribe", response_model=TranscriptionOut)
    def transcribe(model_id: str, file: UploadFile = File(...)):
        meta = store.load_model_meta(model_id)
        ckpt_path = store.model_dir(model_id) / "checkpoint.ckpt"
        if not meta.get("trained") or not ckpt_path.exists():
            return JSONResponse(
                status_code=409,
                content={"detail": f"model {model_id} is not trained yet"},
            )
        with checkpoint_lock:
            cached = checkpoint_cache.get(model_id)
            if cached is None:
                cached = ckpt.load_checkpoint(ckpt_path)
                checkpoint_cache[model_id] = cached
        model, feature_config = cached
        if feature_config is None:
            feature_config = FeatureConfig()

        blob = file.file.read()
        tmp = store.model_dir(model_id) / ".upload.wav"
        tmp.write_bytes(blob)
        try:
            samples = decode_wav(tmp, cfg=feature_config)
        finally:
            tmp.unlink(missing_ok=True)
        duration_ms = samples.size * 1000 // feature_config.sample_rate
        windows = []
        for start_ms, end_ms in _decode_spans(duration_ms):
            first = start_ms * feature_config.sample_rate // 1000
            last = end_ms * feature_config.sample_rate // 1000
            fm = logmel(samples[first:last], feature_config)
            frames = fm.frames
            if model.cmvn is not None:
                frames = cmvn_apply(fm, model.cmvn).frames
            hyp = decode_joint(model, frames, beam=5,
                               ctc_weight=model.config.ctc_weight)
            windows.append(WindowOut(start_ms=start_ms, end_ms=end_ms,
                                     text=hyp.text))
        return TranscriptionOut(
            model_id=model_id,
            windows=windows,
            text=" ".join(w.text for w in windows if w.text).strip(),
        )

    # --- export / import --------------------------------------------------------

    @app.get("/models/{model_id}/export")
    def export_model(model_id: str):
        meta = store.load_model_meta(model_id)
        path = store.model_dir(model_id) / "checkpoint.ckpt"
        if not meta.get("trained") or not path.exists():
            return JSONResponse(
                status_code=409,
                content={"detail": f"model {model_id} is not trained yet"},
            )
        return FileResponse(
            path,
            media_type="application/octet-stream",
            filename=f"{model_id}.ckpt",
        )

    @app.post("/models/import", response_model=ModelRecordOut, status_code=201)
    def import_model(file: UploadFile = File(...), name: str = Form("imported")):
        blob = file.file.read()
        model, feature_config = ckpt.load_checkpoint_bytes(blob)
        meta = {
            "id": store.new_id("m"),
            "name": name,
            "engine": ENGINE,
            "dataset_id": None,
            "model_config": model.config.to_dict(),
            "train_config": TrainConfig(seed=app.state.default_seed).to_dict(),
            "feature_config": (feature_config or FeatureConfig()).to_dict(),
            "trained": True,
        }
        mdir = store.model_dir(meta["id"])
        mdir.mkdir(parents=True, exist_ok=True)
        (mdir / "checkpoint.ckpt").write_bytes(blob)
        store.save_model_meta(meta)
        return _model_out(meta)

    # --- helpers ----------------------------------------------------------------

    def _job_out(meta):
        log = manager.log_store(meta["id"])
        return TrainJobOut(
            id=meta["id"],
            model_id=meta["model_id"],
            state=meta["state"],
            created_at=meta["created_at"],
            started_at=meta["started_at"],
            finished_at=meta["finished_at"],
            error=meta["error"],
            metrics=meta["metrics"],
            log_length=len(log),
        )

    return app


def _model_out(meta):
    return ModelRecordOut(
        id=meta["id"],
        name=meta["name"],
        engine=meta["engine"],
        dataset_id=meta["dataset_id"],
        model_config_values=meta["model_config"],
        train_config_values=meta["train_config"],
        feature_config_values=meta["feature_config"],
        trained=meta["trained"],
    )


def _decode_spans(duration_ms):
    """Fixed 10 s windows stepping 9 s (1 s overlap); each overlap's text
    comes from the earlier window before its midpoint and the later window
    after it, realized by trimming decode spans at the midpoints."""
    step = WINDOW_MS - OVERLAP_MS
    starts = list(range(0, max(1, duration_ms), step))
    # drop a trailing start that would produce an empty or sub-overlap tail
    while len(starts) > 1 and starts[-1] + OVERLAP_MS >= duration_ms:
        starts.pop()
    spans = []
    for k, s in enumerate(starts):
        lo = s if k == 0 else s + OVERLAP_MS // 2
        hi = duration_ms if k == len(starts) - 1 else starts[k + 1] + OVERLAP_MS // 2
        spans.append((lo, min(hi, duration_ms)))
    return spans


def _build_corpus(uploads, clean_cfg):
    """Parse uploaded files into a cleaned corpus.

    Returns (corpus, diagnostics, wav blobs by recording id); any diagnostic
    means the upload is rejected as a whole.
    """
    diagnostics = []
    wav_blobs = {}
    transcriptions = []
    genre_map = {}
    for filename, blob in uploads:
        lower = (filename or "").lower()
        if lower.endswith(".wav"):
            wav_blobs[_stem(filename)] = blob
        elif lower.endswith(_TRANSCRIPTION_SUFFIXES):
            transcriptions.append((filename, blob))
        elif lower.endswith((".tsv", ".genres")):
            try:
                genre_map.update(parse_genre_manifest(blob.decode("utf-8")))
            except (UnicodeDecodeError, ValueError) as exc:
                diagnostics.append(FileDiagnostic(filename=filename,
                                                  error=str(exc)))
        else:
            diagnostics.append(
                FileDiagnostic(filename=filename,
                               error="unsupported file type")
            )
    if not transcriptions:
        diagnostics.append(
            FileDiagnostic(filename="(upload)",
                           error="no transcription files (.eaf or .xml)")
        )
        return None, diagnostics, wav_blobs

    recordings = []
    utterances = []
    for filename, blob in transcriptions:
        rec_id = _stem(filename)
        try:
            doc = blob
            if _is_pangloss(blob):
                doc = pangloss_to_elan(blob)
            utts = parse_elan(doc, recording_id=rec_id)
        except (FieldasrError, ValueError) as exc:
            diagnostics.append(FileDiagnostic(filename=filename,
                                              error=str(exc)))
            continue
        wav = wav_blobs.get(rec_id)
        if wav is None:
            diagnostics.append(
                FileDiagnostic(
                    filename=filename,
                    error=f"missing audio for recording {rec_id!r} "
                    f"(expected {rec_id}.wav)",
                )
            )
            continue
        try:
            with tempfile.NamedTemporaryFile(suffix=".wav") as tmp:
                tmp.write(wav)
                tmp.flush()
                with wave_mod.open(tmp.name, "rb") as fh:
                    rate = fh.getframerate()
                    duration_ms = int(
                        round(fh.getnframes() * 1000 / rate)
                    )
        except (wave_mod.Error, EOFError) as exc:
            diagnostics.append(
                FileDiagnostic(filename=f"{rec_id}.wav",
                               error=f"unreadable WAV: {exc}")
            )
            continue
        recordings.append(
            Recording(id=rec_id, path=f"{rec_id}.wav", sample_rate=rate,
                      duration_ms=duration_ms)
        )
        utterances.extend(utts)

    if diagnostics:
        return None, diagnostics, wav_blobs
    try:
        corpus = Corpus.build(recordings, utterances)
        corpus = apply_genres(corpus, genre_map)
        corpus = clean_corpus(corpus, clean_cfg)
    except (FieldasrError, ValueError) as exc:
        diagnostics.append(FileDiagnostic(filename="(corpus)",
                                          error=str(exc)))
        return None, diagnostics, wav_blobs
    return corpus, [], wav_blobs


def _repoint_audio(corpus, audio_dir):
    """Store-relative recording paths -> absolute paths inside the dataset."""
    recs = [
        Recording(
            id=r.id,
            path=str(audio_dir / f"{r.id}.wav"),
            sample_rate=r.sample_rate,
            duration_ms=r.duration_ms,
        )
        for r in corpus.recordings.values()
    ]
    return Corpus.build(recs, corpus.utterances)


def _summarize(dataset_id, name, corpus, dry_run=False):
    return DatasetSummary(
        id=dataset_id,
        name=name,
        utterance_count=len(corpus),
        total_minutes=corpus.total_duration_ms / 60000.0,
        speakers=corpus.speakers,
        genres=corpus.genres,
        sample_utterances=[
            UtterancePreview(
                id=u.id,
                speaker_id=u.speaker_id,
                start_ms=u.start_ms,
                end_ms=u.end_ms,
                text=u.text,
                genre=u.genre,
            )
            for u in corpus.utterances[:10]
        ],
        dry_run=dry_run,
    )


def _stem(filename):
    base = (filename or "").rsplit("/", 1)[-1]
    return base.rsplit(".", 1)[0]


def _is_pangloss(blob):
    try:
        return _parse_xml(blob).tag == "TEXT"
    except FieldasrError:
        return False
