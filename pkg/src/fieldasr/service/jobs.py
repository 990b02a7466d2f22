"""Training jobs: FIFO queue, worker threads, and the legal state machine
queued -> running -> done | failed. Transitions persist immediately; the
append-only log is owned by the running job.
"""

from __future__ import annotations

import queue
import threading
import traceback
from datetime import datetime, timezone

from .. import checkpoint as ckpt
from ..corpus import Corpus, split_corpus
from ..errors import FieldasrError, IntegrityError
from ..evalkit import prepare_training
from ..features import FeatureConfig, utterance_features
from ..model import HybridModel, ModelConfig, TrainConfig, train
from .logstore import LogStore

LEGAL_TRANSITIONS = {
    "queued": {"running", "failed"},
    "running": {"done", "failed"},
    "done": set(),
    "failed": set(),
}

_EPOCH_KEYS = ("epoch", "loss", "train_cer", "dev_cer")


def utcnow():
    return datetime.now(timezone.utc).isoformat()


def parse_epoch_line(line):
    """Metrics from an `epoch E/N done loss L train_cer T dev_cer D` line,
    or None for any other line. The web UI charts rely on this shape."""
    parts = line.split()
    if len(parts) != 9 or parts[0] != "epoch" or parts[2] != "done":
        return None
    try:
        epoch = int(parts[1].split("/")[0])
        return {
            "epoch": epoch,
            "loss": float(parts[4]),
            "train_cer": float(parts[6]),
            "dev_cer": float(parts[8]),
        }
    except ValueError:
        return None


class JobManager:
    def __init__(self, store, workers=1, default_seed=0):
        self.store = store
        self.default_seed = default_seed
        self._lock = threading.RLock()
        self._queue = queue.Queue()
        self._logs = {}
        self._fail_stale_jobs()
        self._threads = [
            threading.Thread(target=self._worker_loop, daemon=True,
                             name=f"train-worker-{i}")
            for i in range(max(1, workers))
        ]
        for t in self._threads:
            t.start()

    # --- state machine -----------------------------------------------------

    def _transition(self, meta, new_state, error=None):
        old = meta["state"]
        if new_state not in LEGAL_TRANSITIONS[old]:
            raise IntegrityError(
                f"illegal job transition {old} -> {new_state}"
            )
        meta["state"] = new_state
        if new_state == "running":
            meta["started_at"] = utcnow()
        if new_state in ("done", "failed"):
            meta["finished_at"] = utcnow()
        if error is not None:
            meta["error"] = error
        self.store.save_job_meta(meta)
        return meta

    def _fail_stale_jobs(self):
        for job_id in self.store.list_job_ids():
            meta = self.store.load_job_meta(job_id)
            if meta["state"] in ("queued", "running"):
                if meta["state"] == "queued":
                    meta = self._transition(meta, "failed",
                                            error="service restarted")
                else:
                    meta = self._transition(meta, "failed",
                                            error="interrupted by restart")
                self.log_store(job_id).append("error: interrupted by restart")

    # --- public API ----------------------------------------------------------

    def log_store(self, job_id):
        with self._lock:
            if job_id not in self._logs:
                self._logs[job_id] = LogStore(
                    self.store.job_dir(job_id) / "log.txt"
                )
            return self._logs[job_id]

    def active_job_for(self, model_id):
        for job_id in self.store.list_job_ids():
            meta = self.store.load_job_meta(job_id)
            if meta["model_id"] == model_id and meta["state"] in (
                "queued", "running",
            ):
                return meta
        return None

    def submit(self, model_id):
        with self._lock:
            job_id = self.store.new_id("j")
            meta = {
                "id": job_id,
                "model_id": model_id,
                "state": "queued",
                "created_at": utcnow(),
                "started_at": None,
                "finished_at": None,
                "error": None,
                "metrics": [],
            }
            self.store.save_job_meta(meta)
            self.log_store(job_id)
            self._queue.put(job_id)
            return meta

    def get(self, job_id):
        return self.store.load_job_meta(job_id)

    def is_terminal(self, job_id):
        return self.store.load_job_meta(job_id)["state"] in ("done", "failed")

    # --- worker -----------------------------------------------------------

    def _worker_loop(self):
        while True:
            job_id = self._queue.get()
            try:
                self._run_job(job_id)
            except Exception:  # the job meta already records the failure
                traceback.print_exc()
            finally:
                self._queue.task_done()

    def _run_job(self, job_id):
        meta = self.store.load_job_meta(job_id)
        if meta["state"] != "queued":
            return
        log = self.log_store(job_id)
        meta = self._transition(meta, "running")
        log.append(f"job {job_id} started for model {meta['model_id']}")
        try:
            self._train_model(meta, log)
        except FieldasrError as exc:
            log.append(f"error: {exc}")
            self._transition(meta, "failed", error=str(exc))
        except Exception as exc:
            log.append(f"error: internal failure: {exc}")
            self._transition(meta, "failed", error=f"internal failure: {exc}")
        else:
            self._transition(meta, "done")
            log.append(f"job {job_id} done")

    def _train_model(self, job_meta, log):
        model_meta = self.store.load_model_meta(job_meta["model_id"])
        dataset = self.store.load_dataset_meta(model_meta["dataset_id"])
        dataset_dir = self.store.dataset_dir(dataset["id"])
        corpus = Corpus.load(dataset_dir / "corpus.json")

        feature_config = FeatureConfig(**model_meta["feature_config"])
        model_config = ModelConfig(**model_meta["model_config"])
        train_config = TrainConfig(**model_meta["train_config"])

        log.append(
            f"dataset {dataset['id']}: {len(corpus)} utterances, "
            f"{corpus.total_duration_ms / 60000.0:.2f} minutes"
        )
        log.append("computing features")
        features = utterance_features(corpus, feature_config)
        train_corpus, dev_corpus = split_corpus(
            corpus, 0.1, seed=train_config.seed
        )
        train_samples, dev_samples, stats, vocab = prepare_training(
            train_corpus, dev_corpus, features
        )
        log.append(
            f"training on {len(train_samples)} utterances, "
            f"{len(dev_samples)} held out, vocabulary {vocab.size}"
        )
        model = HybridModel.create(model_config, vocab,
                                   seed=train_config.seed)
        model.cmvn = stats

        def sink(line):
            log.append(line)
            point = parse_epoch_line(line)
            if point is not None:
                job_meta["metrics"].append(point)
                self.store.save_job_meta(job_meta)

        train(model, train_samples, dev_samples, train_config, log_sink=sink)

        model_dir = self.store.model_dir(model_meta["id"])
        ckpt_path = model_dir / "checkpoint.ckpt"
        ckpt.save_checkpoint(model, ckpt_path, feature_config=feature_config)
        model_meta["trained"] = True
        self.store.save_model_meta(model_meta)
        log.append(f"checkpoint written: {ckpt_path.name}")
