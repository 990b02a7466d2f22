"""On-disk persistence: one directory per entity under the state root.

Metadata lives in JSON files written atomically (tmp + rename); large
artifacts (audio, checkpoints, logs) sit next to them in the entity
directory. No database.
"""

from __future__ import annotations

import json
import os
import uuid
from pathlib import Path

from ..errors import NotFoundError


class StateStore:
    def __init__(self, root):
        self.root = Path(root)
        for sub in ("datasets", "models", "jobs"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    @staticmethod
    def new_id(prefix):
        return f"{prefix}-{uuid.uuid4().hex[:10]}"

    # --- paths -----------------------------------------------------------

    def dataset_dir(self, dataset_id):
        return self.root / "datasets" / dataset_id

    def model_dir(self, model_id):
        return self.root / "models" / model_id

    def job_dir(self, job_id):
        return self.root / "jobs" / job_id

    # --- json ------------------------------------------------------------

    @staticmethod
    def _write_json(path, data):
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh, ensure_ascii=False, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    @staticmethod
    def _read_json(path, kind, ident):
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            raise NotFoundError(f"{kind} {ident!r} not found") from None

    # --- entities ----------------------------------------------------------

    def save_dataset_meta(self, meta):
        d = self.dataset_dir(meta["id"])
        d.mkdir(parents=True, exist_ok=True)
        self._write_json(d / "meta.json", meta)

    def load_dataset_meta(self, dataset_id):
        return self._read_json(
            self.dataset_dir(dataset_id) / "meta.json", "dataset", dataset_id
        )

    def save_model_meta(self, meta):
        d = self.model_dir(meta["id"])
        d.mkdir(parents=True, exist_ok=True)
        self._write_json(d / "meta.json", meta)

    def load_model_meta(self, model_id):
        return self._read_json(
            self.model_dir(model_id) / "meta.json", "model", model_id
        )

    def save_job_meta(self, meta):
        d = self.job_dir(meta["id"])
        d.mkdir(parents=True, exist_ok=True)
        self._write_json(d / "meta.json", meta)

    def load_job_meta(self, job_id):
        return self._read_json(self.job_dir(job_id) / "meta.json", "job",
                               job_id)

    def list_job_ids(self):
        return sorted(
            p.name for p in (self.root / "jobs").iterdir() if p.is_dir()
        )

    def list_model_ids(self):
        return sorted(
            p.name for p in (self.root / "models").iterdir() if p.is_dir()
        )
