"""Hybrid late-fusion classifier: text embedding + heuristic branch + DMRS-profile branch."""

from __future__ import annotations

import copy
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .backends import StubEncoder, TextEncoder, TransformerEncoder
from .evaluation.metrics import evaluate

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class FusionConfig:
    text_dim: int = 768
    heur_dim: int = 7
    dmrs_dim: int = 30
    branch_hidden: int = 64
    branch_out: int = 32
    branch_dropout: float = 0.3
    fused_dim: int = 832
    head_dims: tuple[int, int] = (256, 128)
    head_dropout: float = 0.4
    num_labels: int = 9
    encoder_lr: float = 1e-6
    head_lr: float = 1e-4
    weight_decay: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 20
    label_smoothing: float = 0.1
    patience: int = 5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.head_dims = tuple(self.head_dims)
        if self.fused_dim != self.text_dim + 2 * self.branch_out:
            raise ValueError(f"fused_dim {self.fused_dim} != text_dim + 2*branch_out "
                             f"= {self.text_dim + 2 * self.branch_out}")
        if self.num_labels != 9:
            raise ValueError(f"this task is 9-way; num_labels={self.num_labels}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch normalization)")

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown FusionConfig keys: {sorted(unknown)}")
        return cls(**d)


def _branch(in_dim: int, cfg: FusionConfig) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, cfg.branch_hidden),
        nn.BatchNorm1d(cfg.branch_hidden, momentum=cfg.bn_momentum),
        nn.ReLU(),
        nn.Dropout(cfg.branch_dropout),
        nn.Linear(cfg.branch_hidden, cfg.branch_out),
    )


class FusionClassifier(nn.Module):
    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        self.heur_branch = _branch(cfg.heur_dim, cfg)
        self.dmrs_branch = _branch(cfg.dmrs_dim, cfg)
        h1, h2 = cfg.head_dims
        self.head = nn.Sequential(
            nn.Linear(cfg.fused_dim, h1), nn.ReLU(), nn.Dropout(cfg.head_dropout),
            nn.Linear(h1, h2), nn.ReLU(), nn.Dropout(cfg.head_dropout),
            nn.Linear(h2, cfg.num_labels),
        )

    def fuse(self, emb: torch.Tensor, heur: torch.Tensor, dmrs: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if emb.shape[-1] != cfg.text_dim or heur.shape[-1] != cfg.heur_dim or dmrs.shape[-1] != cfg.dmrs_dim:
            raise ValueError(f"expected widths ({cfg.text_dim}, {cfg.heur_dim}, {cfg.dmrs_dim}), got "
                             f"({emb.shape[-1]}, {heur.shape[-1]}, {dmrs.shape[-1]})")
        return torch.cat([emb, self.heur_branch(heur), self.dmrs_branch(dmrs)], dim=-1)

    def forward(self, emb: torch.Tensor, heur: torch.Tensor, dmrs: torch.Tensor) -> torch.Tensor:
        """Logits over the 9 labels."""
        return self.head(self.fuse(emb, heur, dmrs))


def init_model(config: FusionConfig = FusionConfig(), seed: Optional[int] = None) -> FusionClassifier:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed if seed is None else seed)
        return FusionClassifier(config)


def forward(model: FusionClassifier, emb, heur, dmrs, inference_mode: bool = True) -> np.ndarray:
    """Probability distribution(s) over labels; accepts single vectors or batches."""
    tensors = [torch.as_tensor(np.asarray(x), dtype=torch.float32) for x in (emb, heur, dmrs)]
    single = tensors[0].dim() == 1
    if single:
        tensors = [t.unsqueeze(0) for t in tensors]
    model.train(not inference_mode)
    with torch.set_grad_enabled(not inference_mode):
        probs = torch.softmax(model(*tensors), dim=-1).detach().numpy()
    model.eval()
    return probs[0] if single else probs


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)
    dev_macro_f1: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return asdict(self)


def _row_tensors(rows: Sequence) -> tuple[list[str], torch.Tensor, torch.Tensor]:
    texts = [r.input_text for r in rows]
    heur = torch.as_tensor(np.stack([np.asarray(r.heuristics, dtype=np.float32) for r in rows]))
    dmrs = torch.as_tensor(np.stack([np.asarray(r.profile, dtype=np.float32) for r in rows]))
    return texts, heur, dmrs


def _labels(rows: Sequence) -> torch.Tensor:
    if any(r.label is None for r in rows):
        raise ValueError("training rows must all be labeled")
    return torch.as_tensor([int(r.label) for r in rows])


def _optimizer(model: nn.Module, encoder: Optional[nn.Module], cfg: FusionConfig) -> torch.optim.AdamW:
    groups = []
    enc_params = [p for p in encoder.parameters() if p.requires_grad] if encoder is not None else []
    if enc_params:
        groups.append({"params": enc_params, "lr": cfg.encoder_lr, "name": "encoder"})
    groups.append({"params": list(model.parameters()), "lr": cfg.head_lr, "name": "head"})
    return torch.optim.AdamW(groups, weight_decay=cfg.weight_decay)


def _batches(n: int, batch_size: int, gen: torch.Generator):
    order = torch.randperm(n, generator=gen).tolist()
    for i in range(0, n, batch_size):
        idx = order[i:i + batch_size]
        if len(idx) < 2:  # batch norm needs two samples in training mode
            continue
        yield idx


def train(train_rows: Sequence, dev_rows: Sequence, config: FusionConfig, encoder: TextEncoder,
          model: Optional[FusionClassifier] = None) -> tuple[FusionClassifier, TrainingHistory]:
    """Fit encoder + branches + head; early stopping on dev macro-F1, best weights restored."""
    if not dev_rows:
        raise ValueError("dev set must be non-empty")
    if len(train_rows) < 2:
        raise ValueError("need at least two training rows")
    cfg = config
    torch.manual_seed(cfg.seed)
    model = model if model is not None else init_model(cfg)
    texts, heur, dmrs = _row_tensors(train_rows)
    y = _labels(train_rows)
    opt = _optimizer(model, encoder, cfg)
    loss_fn = nn.CrossEntropyLoss(label_smoothing=cfg.label_smoothing)
    gen = torch.Generator().manual_seed(cfg.seed)
    hist = TrainingHistory()
    best_f1 = -math.inf
    best_state = None

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        encoder.train()
        losses = []
        for step, idx in enumerate(_batches(len(train_rows), cfg.batch_size, gen)):
            emb = encoder.embed([texts[i] for i in idx])
            logits = model(emb, heur[idx], dmrs[idx])
            loss = loss_fn(logits, y[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch} step {step}; "
                                    f"logit range [{logits.min().item():.3g}, {logits.max().item():.3g}]")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        hist.train_loss.append(float(np.mean(losses)))

        train_pred, _ = predict(model, train_rows, encoder)
        hist.train_accuracy.append(float((train_pred == y.numpy()).mean()))
        dev_pred, _ = predict(model, dev_rows, encoder)
        rep = evaluate(dev_pred.tolist(), [int(r.label) for r in dev_rows])
        hist.dev_accuracy.append(rep.accuracy)
        hist.dev_macro_f1.append(rep.macro_f1)
        logger.info("epoch %d loss %.4f train_acc %.3f dev_acc %.3f dev_f1 %.4f", epoch,
                    hist.train_loss[-1], hist.train_accuracy[-1], rep.accuracy, rep.macro_f1)

        if rep.macro_f1 > best_f1:
            best_f1 = rep.macro_f1
            hist.best_epoch = epoch
            best_state = (copy.deepcopy(model.state_dict()), copy.deepcopy(encoder.state_dict()))
        elif epoch - hist.best_epoch >= cfg.patience:
            hist.stopped_early = True
            logger.info("early stop at epoch %d (best %d)", epoch, hist.best_epoch)
            break

    model.load_state_dict(best_state[0])
    encoder.load_state_dict(best_state[1])
    model.eval()
    encoder.eval()
    return model, hist


def predict(model: FusionClassifier, rows: Sequence, encoder: TextEncoder,
            batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Argmax labels (ties -> lowest label id) and full distributions, in inference mode."""
    model_mode, enc_mode = model.training, encoder.training
    model.eval()
    encoder.eval()
    probs = []
    with torch.no_grad():
        for i in range(0, len(rows), batch_size):
            texts, heur, dmrs = _row_tensors(rows[i:i + batch_size])
            probs.append(torch.softmax(model(encoder.embed(texts), heur, dmrs), dim=-1).numpy())
    model.train(model_mode)
    encoder.train(enc_mode)
    if not probs:
        return np.zeros(0, dtype=int), np.zeros((0, model.cfg.num_labels))
    dist = np.concatenate(probs)
    return dist.argmax(axis=1), dist


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: FusionClassifier, path: str | Path, encoder: TextEncoder, *,
                    history: Optional[TrainingHistory] = None, catalog_fingerprint: str = "") -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    torch.save({"model": model.state_dict(), "encoder": encoder.state_dict()}, path / "weights.pt")
    meta = {
        "version": CHECKPOINT_VERSION,
        "fusion_config": asdict(model.cfg),
        "encoder": encoder.config() if hasattr(encoder, "config") else {"kind": type(encoder).__name__},
        "catalog_fingerprint": catalog_fingerprint,
    }
    (path / "config.json").write_text(json.dumps(meta, indent=2) + "\n")
    if history is not None:
        (path / "history.json").write_text(json.dumps(history.to_dict(), indent=2) + "\n")
    return path


def _encoder_from_meta(meta: dict) -> TextEncoder:
    kind = meta.get("kind")
    if kind == "stub":
        return StubEncoder(n_buckets=meta["n_buckets"], seed=meta["seed"])
    if kind == "transformer":
        return TransformerEncoder.from_pretrained(meta["name"], max_length=meta.get("max_length", 256))
    raise CheckpointError(f"cannot rebuild encoder of kind {kind!r}; pass encoder= explicitly")


def load_checkpoint(path: str | Path, *, catalog_fingerprint: Optional[str] = None,
                    encoder: Optional[TextEncoder] = None) -> tuple[FusionClassifier, TextEncoder, dict]:
    path = Path(path)
    try:
        meta = json.loads((path / "config.json").read_text())
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint at {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint config: {exc}") from None
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} != supported {CHECKPOINT_VERSION}")
    try:
        state = torch.load(path / "weights.pt", map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"missing weights file in {path}") from None
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint weights: {type(exc).__name__}: {exc}") from None
    if catalog_fingerprint is not None and meta.get("catalog_fingerprint") != catalog_fingerprint:
        warnings.warn(f"checkpoint catalog fingerprint {meta.get('catalog_fingerprint')[:12]!r} differs from "
                      f"the current catalog {catalog_fingerprint[:12]!r}", stacklevel=2)
    model = FusionClassifier(FusionConfig.from_dict(meta["fusion_config"]))
    encoder = encoder if encoder is not None else _encoder_from_meta(meta["encoder"])
    try:
        model.load_state_dict(state["model"])
        encoder.load_state_dict(state["encoder"])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"checkpoint weights do not match the model: {exc}") from None
    model.eval()
    encoder.eval()
    return model, encoder, meta
