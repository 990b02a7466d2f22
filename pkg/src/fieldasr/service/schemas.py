"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field

ENGINE = "hybrid-e2e"


class UtterancePreview(BaseModel):
    id: str
    speaker_id: str
    start_ms: int
    end_ms: int
    text: str
    genre: str | None = None


class FileDiagnostic(BaseModel):
    filename: str
    error: str


class DatasetSummary(BaseModel):
    id: str
    name: str
    utterance_count: int
    total_minutes: float
    speakers: list[str]
    genres: list[str]
    sample_utterances: list[UtterancePreview]
    dry_run: bool = False


class ModelConfigIn(BaseModel):
    input_dim: int = 40
    encoder_layers: int = 3
    hidden_size: int = 320
    decoder_layers: int = 1
    decoder_hidden: int = 320
    attention: str = "additive"
    ctc_weight: float = 0.5
    frame_stacking: int = 1


class TrainConfigIn(BaseModel):
    epochs: int = 20
    batch_utterances: int = 30
    ctc_weight: float = 0.5
    seed: int | None = None
    clip_norm: float = 5.0
    sort_by_length: bool = True


class CreateModelIn(BaseModel):
    name: str = "model"
    dataset_id: str
    engine: str = ENGINE
    model: ModelConfigIn = Field(default_factory=ModelConfigIn)
    train: TrainConfigIn = Field(default_factory=TrainConfigIn)


class ModelRecordOut(BaseModel):
    id: str
    name: str
    engine: str
    dataset_id: str | None
    model_config_values: dict
    train_config_values: dict
    feature_config_values: dict
    trained: bool


class EpochPoint(BaseModel):
    epoch: int
    loss: float
    train_cer: float
    dev_cer: float


class TrainJobOut(BaseModel):
    id: str
    model_id: str
    state: str
    created_at: str
    started_at: str | None
    finished_at: str | None
    error: str | None
    metrics: list[EpochPoint]
    log_length: int


class WindowOut(BaseModel):
    start_ms: int
    end_ms: int
    text: str


class TranscriptionOut(BaseModel):
    model_id: str
    windows: list[WindowOut]
    text: str


class HealthOut(BaseModel):
    status: str
