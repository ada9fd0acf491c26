"""Sequential multi-task training: action phase, object phase, then
captioning, threading one shared encoder through all of them.

Each phase updates the encoder plus the active task's head (or the decoder
and attention); every other task's parameters are carried through
bit-for-bit. Batch order is a seeded permutation redrawn each epoch; Adam
state starts fresh per phase.

Checkpoint container (little-endian): magic 'AMTC', u32 format_version,
u32 tensor count, then per tensor a length-prefixed UTF-8 name, u32 dim
count + u32 dims, float32 data row-major; finally a length-prefixed UTF-8
JSON metadata block (provenance, seed, config echo, adam step).
"""

import json
import math
import os
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import decoder as dec
from . import encoder as enc
from . import heads
from .errors import EmptyDataset, IncompatibleCheckpoint, PhaseOrderViolation, ShapeMismatch
from .nnops import clip_by_global_norm
from .seeding import derive_rng, derive_seed
from .text import EmbeddingMatrix, PAD_ID

CHECKPOINT_MAGIC = b"AMTC"
CHECKPOINT_VERSION = 1
PHASES = ("action", "object", "caption")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 80
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    phases: tuple = ("action", "object", "caption")
    # per-phase epoch overrides, e.g. {"caption": 200}
    epochs_by_phase: dict = field(default_factory=dict)
    # model widths; defaults are the full-scale values, shrink for toy runs
    encoder_channels: int = 64
    head_hidden: int = 64
    lstm_hidden: int = 512
    attention_dim: int = 256
    embed_dim: int = 300
    max_caption_len: int = 30
    grad_clip: float = 5.0  # caption phase only
    beam: int = 3

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        self.phases = tuple(self.phases)
        for p in self.phases:
            if p not in PHASES:
                raise ValueError(f"unknown phase {p!r}")
        if len(set(self.phases)) != len(self.phases):
            raise ValueError("phases must not repeat")
        if "caption" in self.phases and self.phases[-1] != "caption":
            raise PhaseOrderViolation("caption phase must come last")

    def epochs_for(self, phase: str) -> int:
        return int(self.epochs_by_phase.get(phase, self.epochs))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    metric: float
    seconds: float


@dataclass
class PhaseReport:
    task: str
    epochs: list = field(default_factory=list)  # EpochStats
    step_losses: list = field(default_factory=list)  # per-optimizer-step train loss
    best_tensors: dict = field(default=None, repr=False)  # best-val snapshot, not serialized

    def tsv(self) -> str:
        return "".join(
            f"{e.epoch}\t{e.train_loss:.6f}\t{e.val_loss:.6f}\t{e.metric:.6f}\t{e.seconds:.3f}\n"
            for e in self.epochs)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.tsv())


@dataclass
class ModelCheckpoint:
    encoder: enc.SharedEncoderParams = None
    heads: dict = field(default_factory=dict)  # task -> ClassifierHeadParams
    decoder: dec.DecoderParams = None
    attention: dec.AttentionParams = None
    optimizer_state: dict = field(default_factory=dict)  # {"t": int, "m": {...}, "v": {...}}
    provenance: list = field(default_factory=list)
    seed: int = 0
    config_echo: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        if self.encoder is not None:
            out.update({f"encoder.{k}": v for k, v in self.encoder.tensors().items()})
        for task in sorted(self.heads):
            out.update({f"head.{task}.{k}": v for k, v in self.heads[task].tensors().items()})
        if self.decoder is not None:
            out.update({f"decoder.{k}": v for k, v in self.decoder.tensors().items()})
            out.update({f"attention.{k}": v for k, v in self.attention.tensors().items()})
        for name in sorted(self.optimizer_state.get("m", {})):
            out[f"adam.m.{name}"] = self.optimizer_state["m"][name]
        for name in sorted(self.optimizer_state.get("v", {})):
            out[f"adam.v.{name}"] = self.optimizer_state["v"][name]
        return out

    def save(self, path) -> None:
        tensors = self.named_tensors()
        meta = {
            "provenance": list(self.provenance),
            "seed": self.seed,
            "config": self.config_echo,
            "adam_t": int(self.optimizer_state.get("t", 0)),
            "embedding_trainable": bool(self.decoder.embedding.trainable) if self.decoder else True,
        }
        blob = [CHECKPOINT_MAGIC, struct.pack("<II", self.format_version, len(tensors))]
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            blob.append(struct.pack("<I", len(nb)) + nb)
            blob.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            blob.append(arr.tobytes())
        mb = json.dumps(meta, sort_keys=True).encode("utf-8")
        blob.append(struct.pack("<I", len(mb)) + mb)
        tmp = str(path) + ".tmp"
        with open(tmp, "wb") as f:
            f.write(b"".join(blob))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        with open(path, "rb") as f:
            data = f.read()
        if data[:4] != CHECKPOINT_MAGIC:
            raise IncompatibleCheckpoint(f"bad magic in {path}")
        version, count = struct.unpack("<II", data[4:12])
        if version != CHECKPOINT_VERSION:
            raise IncompatibleCheckpoint(f"unsupported checkpoint version {version}")
        off = 12
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, off); off += 4
            name = data[off:off + nlen].decode("utf-8"); off += nlen
            (ndim,) = struct.unpack_from("<I", data, off); off += 4
            dims = struct.unpack_from(f"<{ndim}I", data, off); off += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims)
            off += 4 * n
            tensors[name] = arr.astype(np.float64)
        (mlen,) = struct.unpack_from("<I", data, off); off += 4
        meta = json.loads(data[off:off + mlen].decode("utf-8"))
        return cls._from_tensors(tensors, meta)

    @classmethod
    def _from_tensors(cls, tensors, meta) -> "ModelCheckpoint":
        ck = cls(provenance=list(meta.get("provenance", [])), seed=meta.get("seed", 0),
                 config_echo=meta.get("config", {}))
        if "encoder.proj.W" in tensors:
            ck.encoder = enc.SharedEncoderParams(
                proj_W=tensors["encoder.proj.W"], proj_b=tensors["encoder.proj.b"],
                conv_W=[tensors[f"encoder.conv{i}.W"] for i in range(enc.N_STACK_LAYERS)],
                conv_b=[tensors[f"encoder.conv{i}.b"] for i in range(enc.N_STACK_LAYERS)])
        tasks = sorted({name.split(".")[1] for name in tensors if name.startswith("head.")})
        for task in tasks:
            p = f"head.{task}."
            ck.heads[task] = heads.ClassifierHeadParams(
                fc0_W=tensors[p + "fc0.W"], fc0_b=tensors[p + "fc0.b"],
                fc1_W=tensors[p + "fc1.W"], fc1_b=tensors[p + "fc1.b"],
                out_W=tensors[p + "out.W"], out_b=tensors[p + "out.b"])
        if "decoder.embed.E" in tensors:
            emb = EmbeddingMatrix(
                dim=tensors["decoder.embed.E"].shape[1],
                vectors=tensors["decoder.embed.E"],
                trainable=bool(meta.get("embedding_trainable", True)))
            ck.decoder = dec.DecoderParams(
                embedding=emb,
                lstm_Wx=[tensors[f"decoder.lstm{l}.Wx"] for l in range(dec.N_LSTM_LAYERS)],
                lstm_Wh=[tensors[f"decoder.lstm{l}.Wh"] for l in range(dec.N_LSTM_LAYERS)],
                lstm_b=[tensors[f"decoder.lstm{l}.b"] for l in range(dec.N_LSTM_LAYERS)],
                init_h_W=[tensors[f"decoder.init_h{l}.W"] for l in range(dec.N_LSTM_LAYERS)],
                init_h_b=[tensors[f"decoder.init_h{l}.b"] for l in range(dec.N_LSTM_LAYERS)],
                init_c_W=[tensors[f"decoder.init_c{l}.W"] for l in range(dec.N_LSTM_LAYERS)],
                init_c_b=[tensors[f"decoder.init_c{l}.b"] for l in range(dec.N_LSTM_LAYERS)],
                out_W=tensors["decoder.out.W"], out_b=tensors["decoder.out.b"])
            ck.attention = dec.AttentionParams(
                W_a=tensors["attention.W_a"], U_h=tensors["attention.U_h"], v=tensors["attention.v"])
        m = {n[len("adam.m."):]: tensors[n] for n in tensors if n.startswith("adam.m.")}
        v = {n[len("adam.v."):]: tensors[n] for n in tensors if n.startswith("adam.v.")}
        if m or meta.get("adam_t", 0):
            ck.optimizer_state = {"t": int(meta.get("adam_t", 0)), "m": m, "v": v}
        return ck


def adam_step(params: dict, grads: dict, state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """Canonical Adam with bias correction, applied in place to the arrays
    in `params`. `state` holds {"t", "m", "v"} and is updated in place."""
    state.setdefault("t", 0)
    state.setdefault("m", {})
    state.setdefault("v", {})
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} vs parameter {p.shape} for {name}")
        m = state["m"].setdefault(name, np.zeros_like(p))
        v = state["v"].setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


@dataclass
class ClassifierDataset:
    """Samples are (image_id, FeatureGrid, label_id)."""
    train: list
    val: list
    class_names: list


@dataclass
class CaptionDataset:
    """Samples are (image_id, FeatureGrid, TokenSequence)."""
    train: list
    val: list
    vocab: object
    embeddings: EmbeddingMatrix  # initial table for a fresh decoder


def _grid_dim(samples):
    return samples[0][1].values.shape[1]


def _ensure_components(task, data, ck: ModelCheckpoint, config: TrainConfig):
    """Create any missing parameters for this phase (fresh encoder / head /
    decoder), leaving existing ones untouched."""
    d_in = _grid_dim(data.train)
    if ck.encoder is None:
        ck.encoder = enc.init_encoder(derive_seed(config.seed, "encoder.init"),
                                      d_in, config.encoder_channels)
    elif ck.encoder.in_dim != d_in:
        raise IncompatibleCheckpoint(
            f"checkpoint encoder expects D={ck.encoder.in_dim}, dataset grids have D={d_in}")
    C = ck.encoder.channels
    if task in ("action", "object"):
        if task not in ck.heads:
            ck.heads[task] = heads.init_head(derive_seed(config.seed, f"head.{task}.init"),
                                             C, config.head_hidden, len(data.class_names))
        elif ck.heads[task].in_dim != C:
            raise IncompatibleCheckpoint(f"{task} head width {ck.heads[task].in_dim} vs encoder {C}")
    else:
        if ck.decoder is None:
            ck.decoder = dec.init_decoder(derive_seed(config.seed, "decoder.init"),
                                          data.embeddings, C, config.lstm_hidden)
            ck.attention = dec.init_attention(derive_seed(config.seed, "attention.init"),
                                              C, config.lstm_hidden, config.attention_dim)
        elif ck.decoder.context_dim != C:
            raise IncompatibleCheckpoint(f"decoder context width {ck.decoder.context_dim} vs encoder {C}")


def _active_params(task, ck: ModelCheckpoint) -> dict:
    out = {f"encoder.{k}": v for k, v in ck.encoder.tensors().items()}
    if task in ("action", "object"):
        out.update({f"head.{task}.{k}": v for k, v in ck.heads[task].tensors().items()})
    else:
        out.update({f"decoder.{k}": v for k, v in ck.decoder.tensors().items()})
        out.update({f"attention.{k}": v for k, v in ck.attention.tensors().items()})
    return out


def _sample_loss_and_grads(task, sample, ck, drop_rng):
    """Forward + backward for one training sample (dropout active)."""
    _, grid, y = sample
    annotations, cache = enc.encode_forward(grid, ck.encoder, True, drop_rng)
    if task in ("action", "object"):
        loss, _, hgrads, d_ann = heads.head_loss_and_grads(
            annotations, y, ck.heads[task], True, drop_rng)
        grads = {f"head.{task}.{k}": g for k, g in hgrads.items()}
    else:
        loss, grads, d_ann = dec.caption_loss_and_grads(
            annotations, y, ck.decoder, ck.attention, True, drop_rng)
    egrads, _ = enc.encode_backward(d_ann, cache, ck.encoder)
    grads.update({f"encoder.{k}": g for k, g in egrads.items()})
    return loss, grads


def _validate(task, data, ck):
    """Mean val loss plus the phase metric (top-1 accuracy for classifiers,
    teacher-forced token accuracy for captioning)."""
    if not data.val:
        return float("nan"), float("nan")
    losses = []
    hits = 0
    tokens_correct = 0
    tokens_total = 0
    for _, grid, y in data.val:
        annotations = enc.encode(grid, ck.encoder, False)
        if task in ("action", "object"):
            probs = heads.head_forward(annotations, ck.heads[task], False)
            losses.append(heads.classification_loss(probs, y))
            hits += int(int(np.argmax(probs)) == y)
        else:
            losses.append(dec.teacher_forced_loss(annotations, y, ck.decoder, ck.attention, False))
            ok, tot = dec.teacher_forced_accuracy(annotations, y, ck.decoder, ck.attention)
            tokens_correct += ok
            tokens_total += tot
    val_loss = float(np.mean(losses))
    if task in ("action", "object"):
        return val_loss, hits / len(data.val)
    return val_loss, tokens_correct / max(tokens_total, 1)


def train_phase(task: str, data, checkpoint_in: ModelCheckpoint, config: TrainConfig):
    """Train one task phase; only the encoder and this task's parameters move.

    Returns (checkpoint, PhaseReport). The checkpoint is the same object
    threaded through (parameters updated in place); optimizer state starts
    fresh for the phase and is left in the checkpoint afterwards.
    """
    if task not in PHASES:
        raise ValueError(f"unknown task {task!r}")
    if not data.train:
        raise EmptyDataset(f"no training samples for {task}")
    ck = checkpoint_in if checkpoint_in is not None else ModelCheckpoint(seed=config.seed)
    _ensure_components(task, data, ck, config)

    params = _active_params(task, ck)
    state = {"t": 0, "m": {}, "v": {}}
    batch_rng = derive_rng(config.seed, f"phase.{task}.batches")
    drop_rng = derive_rng(config.seed, f"phase.{task}.dropout")
    report = PhaseReport(task=task)
    n = len(data.train)
    best_val = math.inf
    best_tensors = None

    for epoch in range(1, config.epochs_for(task) + 1):
        t0 = time.perf_counter()
        order = batch_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch = [data.train[i] for i in order[start:start + config.batch_size]]
            acc = None
            batch_loss = 0.0
            for sample in batch:
                loss, grads = _sample_loss_and_grads(task, sample, ck, drop_rng)
                batch_loss += loss
                if acc is None:
                    acc = grads
                else:
                    for k, g in grads.items():
                        acc[k] += g
            for k in acc:
                acc[k] /= len(batch)
            if task == "caption" and config.grad_clip > 0:
                acc = clip_by_global_norm(acc, config.grad_clip)
            adam_step(params, acc, state, config.learning_rate,
                      config.adam_beta1, config.adam_beta2, config.adam_eps)
            batch_loss /= len(batch)
            report.step_losses.append(batch_loss)
            epoch_losses.append(batch_loss)
        val_loss, metric = _validate(task, data, ck)
        report.epochs.append(EpochStats(
            epoch, float(np.mean(epoch_losses)), val_loss, metric,
            time.perf_counter() - t0))
        if data.val and val_loss < best_val:
            best_val = val_loss
            best_tensors = {k: v.copy() for k, v in params.items()}

    ck.optimizer_state = state
    ck.provenance.append(task)
    ck.config_echo = _config_dict(config)
    ck.seed = config.seed
    report.best_tensors = best_tensors
    return ck, report


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["phases"] = list(config.phases)
    return d


def run_pipeline(config: TrainConfig, datasets: dict, out_dir) -> ModelCheckpoint:
    """Run the configured phases in order, writing a checkpoint and report
    after each; returns the final checkpoint."""
    if "caption" in config.phases and config.phases[-1] != "caption":
        raise PhaseOrderViolation("caption phase must come last")
    os.makedirs(out_dir, exist_ok=True)
    ck = None
    for phase in config.phases:
        if phase not in datasets or datasets[phase] is None:
            raise EmptyDataset(f"no dataset provided for phase {phase!r}")
        ck, report = train_phase(phase, datasets[phase], ck, config)
        ck.save(os.path.join(out_dir, f"checkpoint_{phase}.amtc"))
        report.write(os.path.join(out_dir, f"report_{phase}.tsv"))
        if report.best_tensors is not None:
            # swap the best-validation snapshot in, save it, swap back
            live = _active_params(phase, ck)
            saved = {k: v.copy() for k, v in live.items()}
            for k in live:
                live[k][...] = report.best_tensors[k]
            ck.save(os.path.join(out_dir, f"checkpoint_{phase}_best.amtc"))
            for k in live:
                live[k][...] = saved[k]
    return ck


def count_parameters(ck: ModelCheckpoint) -> int:
    return sum(int(np.prod(v.shape)) for name, v in ck.named_tensors().items()
               if not name.startswith("adam."))
