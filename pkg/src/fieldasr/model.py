"""Hybrid CTC-attention recognizer: BiLSTM encoder with a CTC head plus an
additive-attention LSTM decoder, trained jointly and decoded jointly.

The end-of-sentence token doubles as the decoder's start token, so the
inventory needs no fourth reserved symbol.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nncore as nc
from .ctc import (
    BLANK,
    EOS,
    CharInventory,
    CtcPrefixScorer,
    LabelSequence,
    collapse,
    ctc_loss,
)
from .errors import NumericError, ParameterError, ShapeError

NEG_MASK = -1e30


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 40
    encoder_layers: int = 3
    hidden_size: int = 320  # per direction
    decoder_layers: int = 1
    decoder_hidden: int = 320
    attention: str = "additive"
    ctc_weight: float = 0.5
    frame_stacking: int = 1

    def __post_init__(self):
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must be within [0, 1]")
        for name in ("input_dim", "encoder_layers", "hidden_size",
                     "decoder_layers", "decoder_hidden", "frame_stacking"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.attention != "additive":
            raise ValueError(f"unsupported attention type {self.attention!r}")
        if self.decoder_layers != 1:
            raise ValueError("only a single decoder layer is supported")

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "encoder_layers": self.encoder_layers,
            "hidden_size": self.hidden_size,
            "decoder_layers": self.decoder_layers,
            "decoder_hidden": self.decoder_hidden,
            "attention": self.attention,
            "ctc_weight": self.ctc_weight,
            "frame_stacking": self.frame_stacking,
        }


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_utterances: int = 30
    ctc_weight: float = 0.5
    seed: int = 0
    clip_norm: float = 5.0
    sort_by_length: bool = True
    # teacher forcing is always on during training; decoding never uses it

    def __post_init__(self):
        if self.epochs < 1 or self.batch_utterances < 1:
            raise ValueError("epochs and batch_utterances must be >= 1")

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "batch_utterances": self.batch_utterances,
            "ctc_weight": self.ctc_weight,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
            "sort_by_length": self.sort_by_length,
        }


@dataclass
class TrainingSample:
    utterance_id: str
    frames: np.ndarray  # (T, input_dim), already normalized
    text: str


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_cer: float
    dev_cer: float


@dataclass
class Hypothesis:
    ids: tuple
    text: str
    score: float


class HybridModel:
    """Parameters plus config and vocabulary; owns no training state."""

    def __init__(self, config, vocab, params, cmvn=None):
        self.config = config
        self.vocab = vocab
        self.params = params
        self.cmvn = cmvn
        self._check_shapes()

    # --- construction ----------------------------------------------------

    @classmethod
    def create(cls, config, vocab, seed=0):
        rng = np.random.default_rng(seed)
        h = config.hidden_size
        hd = config.decoder_hidden
        v = vocab.size
        enc_in = config.input_dim * config.frame_stacking
        params = {}

        def uniform(*shape):
            return nc.Tensor(rng.uniform(-0.1, 0.1, size=shape),
                             requires_grad=True)

        in_dim = enc_in
        for layer in range(config.encoder_layers):
            for direction in ("f", "b"):
                lp = nc.init_lstm_params(in_dim, h, rng)
                params[f"enc.{layer}.{direction}.w"] = lp.w
                params[f"enc.{layer}.{direction}.u"] = lp.u
                params[f"enc.{layer}.{direction}.b"] = lp.b
            in_dim = 2 * h

        params["ctc.w"] = uniform(2 * h, v)
        params["ctc.b"] = nc.Tensor(np.zeros(v), requires_grad=True)

        params["dec.embed"] = uniform(v, hd)
        dec_lstm = nc.init_lstm_params(hd + 2 * h, hd, rng)
        params["dec.lstm.w"] = dec_lstm.w
        params["dec.lstm.u"] = dec_lstm.u
        params["dec.lstm.b"] = dec_lstm.b
        params["attn.enc_w"] = uniform(2 * h, hd)
        params["attn.dec_w"] = uniform(hd, hd)
        params["attn.v"] = uniform(hd)
        params["out.w"] = uniform(hd, v)
        params["out.b"] = nc.Tensor(np.zeros(v), requires_grad=True)
        return cls(config, vocab, params)

    def _check_shapes(self):
        cfg = self.config
        v = self.vocab.size
        expected = expected_param_shapes(cfg, v)
        for name, shape in expected.items():
            if name not in self.params:
                raise ShapeError(f"missing parameter {name}")
            got = self.params[name].shape
            if tuple(got) != shape:
                raise ShapeError(f"parameter {name}: shape {got}, want {shape}")

    def clone(self):
        params = {
            k: nc.Tensor(t.data.copy(), requires_grad=True)
            for k, t in self.params.items()
        }
        return HybridModel(self.config, self.vocab, params, cmvn=self.cmvn)

    def parameter_count(self):
        return sum(int(np.prod(t.shape)) for t in self.params.values())

    def _enc_layer_params(self, layer):
        p = self.params
        fwd = nc.LstmParams(p[f"enc.{layer}.f.w"], p[f"enc.{layer}.f.u"],
                            p[f"enc.{layer}.f.b"])
        bwd = nc.LstmParams(p[f"enc.{layer}.b.w"], p[f"enc.{layer}.b.u"],
                            p[f"enc.{layer}.b.b"])
        return fwd, bwd

    def _dec_lstm_params(self):
        p = self.params
        return nc.LstmParams(p["dec.lstm.w"], p["dec.lstm.u"], p["dec.lstm.b"])

    # --- forward ----------------------------------------------------------

    def _stack_frames(self, frames):
        fs = self.config.frame_stacking
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"forward: features {frames.shape}, expected "
                f"(T, {self.config.input_dim})"
            )
        if fs == 1:
            return frames
        t_len = frames.shape[0]
        t_out = -(-t_len // fs)  # ceil
        padded = np.zeros((t_out * fs, frames.shape[1]))
        padded[:t_len] = frames
        return padded.reshape(t_out, fs * frames.shape[1])

    def encode_batch(self, frames_list):
        """Padded batch encoding: (enc (B,Tmax,2H), ctc log-probs
        (B,Tmax,V), lengths after frame stacking)."""
        stacked = [self._stack_frames(f) for f in frames_list]
        lengths = np.array([s.shape[0] for s in stacked], dtype=np.int64)
        t_max = int(lengths.max())
        dim = stacked[0].shape[1]
        batch = np.zeros((len(stacked), t_max, dim))
        for i, s in enumerate(stacked):
            batch[i, : s.shape[0]] = s
        x = nc.Tensor(batch)
        for layer in range(self.config.encoder_layers):
            fwd, bwd = self._enc_layer_params(layer)
            x = nc.bilstm_batch(x, lengths, fwd, bwd)
        b, t, two_h = x.shape
        flat = nc.reshape(x, (b * t, two_h))
        logits = nc.matmul(flat, self.params["ctc.w"]) + self.params["ctc.b"]
        log_probs = nc.log_softmax(
            nc.reshape(logits, (b, t, self.vocab.size)), axis=2
        )
        return x, log_probs, lengths

    def forward(self, frames):
        """Single utterance: (encoder states (T',2H), ctc log-probs (T',V))."""
        enc, log_probs, lengths = self.encode_batch([frames])
        t_len = int(lengths[0])
        return enc[0, :t_len, :], log_probs[0, :t_len, :]

    # --- attention decoder -------------------------------------------------

    def _decoder_step(self, y_prev, h, c, enc_proj, enc, mask):
        """One teacher-forced/beam step over a batch of decoder states."""
        p = self.params
        dec_proj = nc.matmul(h, p["attn.dec_w"])  # (B,A)
        b, a = dec_proj.shape
        energies = nc.tsum(
            nc.mul(nc.tanh(nc.add(enc_proj, nc.reshape(dec_proj, (b, 1, a)))),
                   p["attn.v"]),
            axis=2,
        )  # (B,T)
        if mask is not None:
            energies = nc.add(energies, nc.Tensor(mask))
        alpha = nc.softmax(energies, axis=1)
        t_len = enc.shape[1]
        context = nc.reshape(
            nc.matmul(nc.reshape(alpha, (b, 1, t_len)), enc),
            (b, enc.shape[2]),
        )
        emb = nc.embedding_lookup(p["dec.embed"], np.asarray(y_prev))
        x = nc.concat([emb, context], axis=1)
        h2, c2 = nc.lstm_cell(x, h, c, self._dec_lstm_params())
        logits = nc.matmul(h2, p["out.w"]) + p["out.b"]
        return logits, h2, c2

    def _attention_nll_rows(self, enc, lengths, targets_padded):
        """Teacher-forced per-token negative log-likelihoods.

        targets_padded is (B, Lmax) with -1 padding; the decoder input is
        eos followed by the target, the expected output the target followed
        by eos. Returns a flat (B*Lmax+B,) row-loss tensor and matching
        validity mask.
        """
        b, t_max, _ = enc.shape
        mask = np.zeros((b, t_max))
        for i, n in enumerate(lengths):
            mask[i, n:] = NEG_MASK
        enc_proj_flat = nc.matmul(
            nc.reshape(enc, (b * t_max, enc.shape[2])), self.params["attn.enc_w"]
        )
        enc_proj = nc.reshape(enc_proj_flat, (b, t_max, -1))

        l_max = targets_padded.shape[1]
        hd = self.config.decoder_hidden
        h = nc.Tensor(np.zeros((b, hd)))
        c = nc.Tensor(np.zeros((b, hd)))
        inputs = np.concatenate(
            [np.full((b, 1), EOS, dtype=np.int64), np.maximum(targets_padded, 0)],
            axis=1,
        )
        expected = np.concatenate(
            [targets_padded, np.full((b, 1), -1, dtype=np.int64)], axis=1
        )
        for i in range(b):
            n = int((targets_padded[i] >= 0).sum())
            expected[i, n] = EOS
        step_logits = []
        for step in range(l_max + 1):
            logits, h, c = self._decoder_step(
                inputs[:, step], h, c, enc_proj, enc, mask
            )
            step_logits.append(nc.reshape(logits, (b, 1, self.vocab.size)))
        all_logits = nc.concat(step_logits, axis=1)  # (B, Lmax+1, V)
        flat_logits = nc.reshape(all_logits, (b * (l_max + 1), self.vocab.size))
        flat_targets = expected.reshape(-1)
        rows = nc.cross_entropy(flat_logits, flat_targets, ignore_index=-1,
                                reduction="none")
        return rows, expected


def expected_param_shapes(cfg, vocab_size):
    h, hd, v = cfg.hidden_size, cfg.decoder_hidden, vocab_size
    shapes = {}
    in_dim = cfg.input_dim * cfg.frame_stacking
    for layer in range(cfg.encoder_layers):
        for direction in ("f", "b"):
            shapes[f"enc.{layer}.{direction}.w"] = (in_dim, 4 * h)
            shapes[f"enc.{layer}.{direction}.u"] = (h, 4 * h)
            shapes[f"enc.{layer}.{direction}.b"] = (4 * h,)
        in_dim = 2 * h
    shapes["ctc.w"] = (2 * h, v)
    shapes["ctc.b"] = (v,)
    shapes["dec.embed"] = (v, hd)
    shapes["dec.lstm.w"] = (hd + 2 * h, 4 * hd)
    shapes["dec.lstm.u"] = (hd, 4 * hd)
    shapes["dec.lstm.b"] = (4 * hd,)
    shapes["attn.enc_w"] = (2 * h, hd)
    shapes["attn.dec_w"] = (hd, hd)
    shapes["attn.v"] = (hd,)
    shapes["out.w"] = (hd, v)
    shapes["out.b"] = (v,)
    return shapes


def _as_label_ids(model, target):
    if isinstance(target, str):
        return list(model.vocab.encode(target).ids)
    if isinstance(target, LabelSequence):
        return list(target.ids)
    return list(target)


def _ctc_loss_node(log_probs_tensor, ids):
    loss_val, grad = ctc_loss(log_probs_tensor.data, ids)

    def backward(g):
        return (float(g) * grad,)

    return nc.custom(np.float64(loss_val), (log_probs_tensor,), backward,
                     "ctc_loss")


def batch_hybrid_loss(model, frames_list, targets, ctc_weight=None):
    """Mean over utterances of the per-utterance hybrid loss."""
    lam = model.config.ctc_weight if ctc_weight is None else ctc_weight
    ids_list = [_as_label_ids(model, t) for t in targets]
    b = len(frames_list)
    enc, log_probs, lengths = model.encode_batch(frames_list)

    loss_terms = []
    if lam > 0.0:
        ctc_total = None
        for i in range(b):
            lp_i = log_probs[i, : int(lengths[i]), :]
            node = _ctc_loss_node(lp_i, ids_list[i])
            ctc_total = node if ctc_total is None else ctc_total + node
        loss_terms.append(nc.mul(ctc_total, nc.Tensor(lam / b)))

    if lam < 1.0:
        l_max = max(len(ids) for ids in ids_list)
        padded = np.full((b, l_max), -1, dtype=np.int64)
        for i, ids in enumerate(ids_list):
            padded[i, : len(ids)] = ids
        rows, expected = model._attention_nll_rows(enc, lengths, padded)
        weights = np.zeros(expected.size)
        flat_expected = expected.reshape(-1)
        for i in range(b):
            n_tokens = len(ids_list[i]) + 1  # target + eos
            row0 = i * expected.shape[1]
            weights[row0 : row0 + expected.shape[1]] = np.where(
                flat_expected[row0 : row0 + expected.shape[1]] >= 0,
                1.0 / (n_tokens * b),
                0.0,
            )
        loss_terms.append(nc.dot(rows, nc.Tensor(weights)) * (1.0 - lam))

    total = loss_terms[0]
    for term in loss_terms[1:]:
        total = total + term
    return total


def hybrid_loss(model, frames, target, ctc_weight=None):
    """Interpolated loss for one utterance: lam * ctc + (1-lam) * attention
    cross-entropy averaged over target-plus-eos tokens."""
    ids = _as_label_ids(model, target)
    if not ids:
        raise ParameterError("hybrid_loss: empty target")
    return batch_hybrid_loss(model, [frames], [ids], ctc_weight=ctc_weight)


# --- decoding ---------------------------------------------------------------


def greedy_ctc_decode(model, frames):
    """Argmax-and-collapse over the CTC head; fast path for evaluation."""
    with nc.no_grad():
        _, log_probs = model.forward(frames)
    lp = log_probs.data.copy()
    lp[:, EOS] = -np.inf  # eos belongs to the attention head only
    ids = collapse(np.argmax(lp, axis=1))
    return Hypothesis(tuple(ids), model.vocab.decode(ids), 0.0)


def decode_joint(model, frames, beam=5, ctc_weight=0.5, max_len=None):
    """Label-synchronous beam search scoring each extension by
    ctc_weight * (CTC prefix mass increment) plus (1 - ctc_weight) *
    (attention log-probability). Hypotheses end on eos; score ties break
    toward lower label ids."""
    if beam < 1:
        raise ParameterError(f"beam must be >= 1, got {beam}")
    with nc.no_grad():
        enc, log_probs = model.forward(frames)
        t_len = enc.shape[0]
        if max_len is None:
            max_len = t_len
        scorer = CtcPrefixScorer(log_probs.data)
        enc_b = nc.reshape(enc, (1, t_len, enc.shape[1]))
        enc_proj = nc.reshape(
            nc.matmul(nc.reshape(enc, (t_len, -1)), model.params["attn.enc_w"]),
            (1, t_len, -1),
        )
        hd = model.config.decoder_hidden

        hyps = [
            {
                "ids": (),
                "h": np.zeros(hd),
                "c": np.zeros(hd),
                "ctc_state": scorer.initial_state(),
                "ctc_psi": 0.0,
                "score": 0.0,
            }
        ]
        finished = []

        for _ in range(int(max_len)):
            n = len(hyps)
            h = nc.Tensor(np.stack([hyp["h"] for hyp in hyps]))
            c = nc.Tensor(np.stack([hyp["c"] for hyp in hyps]))
            y_prev = np.array(
                [hyp["ids"][-1] if hyp["ids"] else EOS for hyp in hyps],
                dtype=np.int64,
            )
            enc_rep = nc.Tensor(np.repeat(enc_b.data, n, axis=0))
            proj_rep = nc.Tensor(np.repeat(enc_proj.data, n, axis=0))
            logits, h2, c2 = model._decoder_step(
                y_prev, h, c, proj_rep, enc_rep, None
            )
            att_logp = nc.log_softmax(logits, axis=1).data

            candidates = []
            for i, hyp in enumerate(hyps):
                if ctc_weight != 0.0:
                    scores, table_n, table_b = scorer.extend_all(
                        hyp["ctc_state"]
                    )
                    ctc_inc = scores - hyp["ctc_psi"]
                    eos_inc = scorer.complete(hyp["ctc_state"]) - hyp["ctc_psi"]
                else:
                    scores = np.zeros(model.vocab.size)
                    table_n = table_b = None
                    ctc_inc = scores
                    eos_inc = 0.0
                # every reachable eos-completion enters the finished pool
                eos_score = hyp["score"] + _combine(
                    ctc_weight, eos_inc, att_logp[i, EOS]
                )
                finished.append((eos_score, hyp["ids"]))
                for label in range(model.vocab.size):
                    if label in (BLANK, EOS):
                        continue
                    total = hyp["score"] + _combine(
                        ctc_weight, ctc_inc[label], att_logp[i, label]
                    )
                    if total == -np.inf:
                        continue
                    candidates.append((total, hyp["ids"] + (label,), i, label,
                                       scores[label], table_n, table_b))

            if not candidates:
                break
            candidates.sort(key=lambda cand: (-cand[0], cand[1]))
            new_hyps = []
            for total, ids, i, label, psi, table_n, table_b in candidates[:beam]:
                new_hyps.append(
                    {
                        "ids": ids,
                        "h": h2.data[i],
                        "c": c2.data[i],
                        "ctc_state": (
                            CtcPrefixScorer.state_for(table_n, table_b, label)
                            if table_n is not None
                            else hyps[i]["ctc_state"]
                        ),
                        "ctc_psi": psi,
                        "score": total,
                    }
                )
            hyps = new_hyps

        # final eos-completions of whatever is still alive
        if hyps:
            n = len(hyps)
            h = nc.Tensor(np.stack([hyp["h"] for hyp in hyps]))
            c = nc.Tensor(np.stack([hyp["c"] for hyp in hyps]))
            y_prev = np.array(
                [hyp["ids"][-1] if hyp["ids"] else EOS for hyp in hyps],
                dtype=np.int64,
            )
            enc_rep = nc.Tensor(np.repeat(enc_b.data, n, axis=0))
            proj_rep = nc.Tensor(np.repeat(enc_proj.data, n, axis=0))
            logits, _, _ = model._decoder_step(
                y_prev, h, c, proj_rep, enc_rep, None
            )
            att_logp = nc.log_softmax(logits, axis=1).data
            for i, hyp in enumerate(hyps):
                eos_inc = scorer.complete(hyp["ctc_state"]) - hyp["ctc_psi"]
                finished.append(
                    (
                        hyp["score"]
                        + _combine(ctc_weight, eos_inc, att_logp[i, EOS]),
                        hyp["ids"],
                    )
                )

    best_score, best_ids = min(finished, key=lambda f: (-f[0], f[1]))
    return Hypothesis(best_ids, model.vocab.decode(best_ids), float(best_score))


def _combine(ctc_weight, ctc_term, att_term):
    """Interpolate without 0 * inf poisoning at the lambda boundaries."""
    score = 0.0
    if ctc_weight != 0.0:
        score += ctc_weight * ctc_term
    if ctc_weight != 1.0:
        score += (1.0 - ctc_weight) * att_term
    return score


# --- training ----------------------------------------------------------------


def greedy_eval_pairs(model, samples, batch_size=30):
    """(reference, greedy hypothesis) text pairs, batched, without a tape."""
    pairs = []
    with nc.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            _, log_probs, lengths = model.encode_batch([s.frames for s in chunk])
            for j, sample in enumerate(chunk):
                lp = log_probs.data[j, : int(lengths[j])].copy()
                lp[:, EOS] = -np.inf  # eos belongs to the attention head only
                ids = collapse(np.argmax(lp, axis=1))
                pairs.append((sample.text, model.vocab.decode(ids)))
    return pairs


def _make_batches(order, batch_size):
    return [
        list(order[i : i + batch_size]) for i in range(0, len(order),
                                                       batch_size)
    ]


def train(model, train_samples, dev_samples, cfg, log_sink=None):
    """Teacher-forced joint training with Adadelta; returns per-epoch
    metrics (mean loss, train CER, dev CER via greedy decode).

    Each epoch optionally length-sorts utterances into batch-sized buckets,
    shuffles bucket order by the run's seeded generator, takes one Adadelta
    step per batch, then evaluates both sets. One structured log line per
    batch and per epoch goes to log_sink.
    """
    from .evalkit import corpus_cer

    if not train_samples:
        raise ParameterError("train: empty training set")
    emit = log_sink if log_sink is not None else (lambda line: None)
    rng = np.random.default_rng(cfg.seed)
    state = nc.AdadeltaState()
    params = model.params

    indices = np.arange(len(train_samples))
    if cfg.sort_by_length:
        frame_counts = np.array([s.frames.shape[0] for s in train_samples])
        indices = indices[np.argsort(-frame_counts, kind="stable")]

    history = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.sort_by_length:
            batches = _make_batches(indices, cfg.batch_utterances)
            rng.shuffle(batches)
        else:
            shuffled = indices.copy()
            rng.shuffle(shuffled)
            batches = _make_batches(shuffled, cfg.batch_utterances)

        epoch_loss = 0.0
        for b_idx, batch in enumerate(batches, start=1):
            chunk = [train_samples[int(i)] for i in batch]
            loss = batch_hybrid_loss(
                model,
                [s.frames for s in chunk],
                [s.text for s in chunk],
                ctc_weight=cfg.ctc_weight,
            )
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {b_idx}"
                )
            loss.backward()
            grads = {
                name: p.grad for name, p in params.items() if p.grad is not None
            }
            nc.adadelta_step(params, grads, state, clip_norm=cfg.clip_norm)
            for p in params.values():
                p.zero_grad()
            epoch_loss += loss_val * len(chunk)
            emit(
                f"epoch {epoch}/{cfg.epochs} batch {b_idx}/{len(batches)} "
                f"loss {loss_val:.6f}"
            )

        mean_loss = epoch_loss / len(train_samples)
        train_cer = corpus_cer(greedy_eval_pairs(model, train_samples))
        dev_cer = (
            corpus_cer(greedy_eval_pairs(model, dev_samples))
            if dev_samples
            else float("nan")
        )
        history.append(EpochMetrics(epoch, mean_loss, train_cer, dev_cer))
        emit(
            f"epoch {epoch}/{cfg.epochs} done loss {mean_loss:.6f} "
            f"train_cer {train_cer:.6f} dev_cer {dev_cer:.6f}"
        )
    return history
