"""Two-phase training loop, checkpointing, and evaluation.

Phase "psnr" optimizes pixel + alignment losses only; phase "gan"
resumes from a psnr-phase checkpoint and adds adversarial and
perceptual terms with an alternating discriminator update.
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .collaboration import CollaborationModel, normalize_variant
from .data.dataset import AUG_OPS, augment, read_landmarks
from .losses import (
    Discriminator,
    LossWeights,
    align_loss,
    build_feature_extractor,
    d_loss,
    g_adv_loss,
    perceptual_loss,
    pixel_loss,
    total_g_loss,
)
from .metrics import MetricReport, heatmaps_to_landmarks, nrmse, psnr_y, ssim_y

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PHASES = ("psnr", "gan")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; message names the last-good
    checkpoint (if any)."""


@dataclass
class TrainConfig:
    variant: str = "dic"
    n_steps: int = 4
    channels: int = 48
    groups: int = 6
    fusion_depth: int = 2
    align_channels: int = 256
    hourglass_levels: int = 4
    lr: float = 1e-4
    lr_milestones: list = field(default_factory=lambda: [10000, 20000, 40000])
    phase: str = "psnr"
    lambda_adv: float = None
    lambda_perc: float = None
    beta_align: float = None
    seed: int = 0
    batch_size: int = 8
    max_iters: int = 100
    manifest: str = ""
    split: str = "train"
    out_dir: str = "runs/exp"
    augment: bool = True
    sigma: float = 1.0
    ckpt_every: int = 500
    perc_seed: int = 1234
    perc_extractor: str = "random-pyramid"

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def loss_weights(self):
        weights = LossWeights.for_phase(self.phase)
        if self.lambda_adv is not None:
            weights.lambda_adv = self.lambda_adv
        if self.lambda_perc is not None:
            weights.lambda_perc = self.lambda_perc
        if self.beta_align is not None:
            weights.beta_align = self.beta_align
        return weights

    @classmethod
    def from_json(cls, path):
        """Load a config file; the DIC_SEED env var overrides the seed."""
        with open(path) as fh:
            payload = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        config = cls(**payload)
        env_seed = os.environ.get("DIC_SEED")
        if env_seed is not None:
            config.seed = int(env_seed)
        return config

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2)
            fh.write("\n")


def lr_at(iteration, config):
    """Learning rate for a 0-based iteration: halved at each milestone."""
    halvings = sum(1 for m in config.lr_milestones if iteration >= m)
    return config.lr * (0.5 ** halvings)


def build_model(config):
    return CollaborationModel(
        variant=config.variant,
        n_steps=config.n_steps,
        channels=config.channels,
        feedback_pairs=config.groups,
        fusion_depth=config.fusion_depth,
        align_channels=config.align_channels,
        hourglass_levels=config.hourglass_levels,
    )


def _to_batch(samples):
    """Stack samples into (lr, hr, heatmap) float32 tensors, NCHW."""
    lr = np.stack([s.lr_image for s in samples]).transpose(0, 3, 1, 2)
    hr = np.stack([s.hr_image for s in samples]).transpose(0, 3, 1, 2)
    heat = np.stack([s.gt_heatmaps for s in samples])
    return (
        torch.from_numpy(np.ascontiguousarray(lr)),
        torch.from_numpy(np.ascontiguousarray(hr)),
        torch.from_numpy(np.ascontiguousarray(heat)),
    )


class Trainer:
    """Owns the model, optimizers, RNG streams, logs, and checkpoints."""

    def __init__(self, config, samples, init_ckpt=None):
        if not samples:
            raise ValueError("no training samples")
        self.config = config
        self.samples = samples
        self.weights = config.loss_weights()
        self.out_dir = Path(config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.out_dir / "train_log.jsonl"
        self.iteration = 0
        self.last_ckpt_path = None

        torch.manual_seed(config.seed)
        self.rng = np.random.default_rng(config.seed)
        self.model = build_model(config)
        self.opt_g = torch.optim.Adam(
            self.model.parameters(), lr=config.lr, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        self.disc = None
        self.opt_d = None
        self.phi = None
        if config.phase == "gan":
            if init_ckpt is None:
                raise ValueError("gan phase requires an init checkpoint")
            payload = _load_payload(init_ckpt)
            _check_compatible(payload["config"], config)
            self.model.load_state_dict(payload["model"])
            self.disc = Discriminator()
            self.opt_d = torch.optim.Adam(
                self.disc.parameters(), lr=config.lr, betas=ADAM_BETAS, eps=ADAM_EPS
            )
            self.phi = build_feature_extractor(
                config.perc_extractor, seed=config.perc_seed
            )

    # --- data -----------------------------------------------------------

    def _draw_batch(self):
        idx = self.rng.integers(0, len(self.samples), size=self.config.batch_size)
        chosen = []
        for i in idx:
            s = self.samples[int(i)]
            if self.config.augment:
                op = AUG_OPS[int(self.rng.integers(0, len(AUG_OPS)))]
                if op != "none":
                    s = augment(s, op, sigma=self.config.sigma)
            chosen.append(s)
        return _to_batch(chosen)

    # --- one iteration ----------------------------------------------------

    def _set_lr(self, value):
        for group in self.opt_g.param_groups:
            group["lr"] = value
        if self.opt_d is not None:
            for group in self.opt_d.param_groups:
                group["lr"] = value

    def train_step(self):
        """Run one iteration; returns the logged record."""
        config = self.config
        lr_now = lr_at(self.iteration, config)
        self._set_lr(lr_now)
        lr_img, hr_img, gt_heat = self._draw_batch()

        trace = self.model(lr_img)
        parts = {"pixel": pixel_loss(trace, hr_img)}
        if trace.heatmaps:
            parts["align"] = align_loss(trace, gt_heat)
        d_val = 0.0
        if config.phase == "gan":
            loss_d = d_loss(self.disc, hr_img, trace.final_sr)
            self._check_finite(loss_d, "d_loss")
            self.opt_d.zero_grad()
            loss_d.backward()
            self.opt_d.step()
            d_val = float(loss_d.detach())
            parts["adv"] = g_adv_loss(self.disc, trace.final_sr)
            parts["perc"] = perceptual_loss(self.phi, trace.final_sr, hr_img)

        total = total_g_loss(parts, self.weights)
        self._check_finite(total, "total generator loss")
        self.opt_g.zero_grad()
        total.backward()
        self.opt_g.step()

        self.iteration += 1
        record = {
            "iter": self.iteration,
            "lr": lr_now,
            "pixel": float(parts["pixel"].detach()),
            "align": float(parts["align"].detach()) if "align" in parts else 0.0,
            "adv": float(parts["adv"].detach()) if "adv" in parts else 0.0,
            "perc": float(parts["perc"].detach()) if "perc" in parts else 0.0,
            "d_loss": d_val,
        }
        return record

    def _check_finite(self, value, name):
        if not torch.isfinite(value.detach()).all():
            ref = self.last_ckpt_path or "none"
            raise TrainingDiverged(
                f"non-finite {name} at iteration {self.iteration + 1}; "
                f"last good checkpoint: {ref}"
            )

    # --- loop -------------------------------------------------------------

    def run(self):
        """Train to config.max_iters, appending JSONL logs and periodic
        checkpoints; returns the final checkpoint path."""
        config = self.config
        with open(self.log_path, "a") as log_fh:
            while self.iteration < config.max_iters:
                record = self.train_step()
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
                if self.iteration % config.ckpt_every == 0:
                    self.save_checkpoint()
        if self.iteration == 0 or self.iteration % config.ckpt_every != 0:
            self.save_checkpoint()
        return self.last_ckpt_path

    # --- checkpointing ------------------------------------------------------

    def save_checkpoint(self, path=None):
        if path is None:
            path = self.out_dir / f"ckpt_{self.iteration:06d}.pt"
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "iteration": self.iteration,
            "config": dataclasses.asdict(self.config),
            "model": self.model.state_dict(),
            "disc": self.disc.state_dict() if self.disc is not None else None,
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict() if self.opt_d is not None else None,
            "numpy_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
        }
        torch.save(payload, path)
        self.last_ckpt_path = Path(path)
        return self.last_ckpt_path

    @classmethod
    def from_checkpoint(cls, path, samples, init_ckpt=None):
        """Rebuild a trainer mid-run; resuming is bit-exact on one backend."""
        payload = _load_payload(path)
        config = TrainConfig(**payload["config"])
        if config.phase == "gan" and init_ckpt is None:
            init_ckpt = path
        trainer = cls(config, samples, init_ckpt=init_ckpt)
        trainer.model.load_state_dict(payload["model"])
        trainer.opt_g.load_state_dict(payload["opt_g"])
        if payload["disc"] is not None:
            trainer.disc.load_state_dict(payload["disc"])
            trainer.opt_d.load_state_dict(payload["opt_d"])
        trainer.iteration = payload["iteration"]
        trainer.rng.bit_generator.state = payload["numpy_rng"]
        torch.set_rng_state(payload["torch_rng"])
        trainer.last_ckpt_path = Path(path)
        return trainer


def _load_payload(path):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    return payload


def _check_compatible(saved_config, config):
    saved = TrainConfig(**saved_config)
    for name in ("variant", "n_steps", "channels", "groups", "fusion_depth",
                 "align_channels", "hourglass_levels"):
        if getattr(saved, name) != getattr(config, name):
            raise ValueError(
                f"init checkpoint {name} mismatch: "
                f"{getattr(saved, name)!r} vs {getattr(config, name)!r}"
            )


def load_model(path):
    """Rebuild the model from a checkpoint; returns (model, config)."""
    payload = _load_payload(path)
    config = TrainConfig(**payload["config"])
    model = build_model(config)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, config


# --- evaluation -------------------------------------------------------------


def _image_to_tensor(image):
    return torch.from_numpy(
        np.ascontiguousarray(image.transpose(2, 0, 1))
    ).unsqueeze(0)


def _tensor_to_image(tensor):
    return np.clip(tensor.squeeze(0).permute(1, 2, 0).numpy(), 0.0, 1.0)


def evaluate(model, samples, per_step=False, nrmse_source="branch",
             detector_dir=None):
    """Per-image and aggregate PSNR/SSIM/NRMSE for one sample set.

    nrmse_source "branch" decodes the model's own final-step heatmaps;
    "gt-detector" reads precomputed landmark files named <id>.txt from
    ``detector_dir`` (an external detector run on SR outputs). Per-step
    NRMSE always comes from the branch heatmaps.
    """
    if not samples:
        raise ValueError("no samples to evaluate")
    if nrmse_source not in ("branch", "gt-detector"):
        raise ValueError(f"unknown nrmse source {nrmse_source!r}")
    if nrmse_source == "gt-detector" and detector_dir is None:
        raise ValueError("gt-detector source requires a detector landmark dir")
    model.eval()
    reports = []
    for sample in samples:
        with torch.no_grad():
            trace = model(_image_to_tensor(sample.lr_image))
        sr = _tensor_to_image(trace.final_sr)
        value_nrmse = None
        if nrmse_source == "gt-detector":
            pred = read_landmarks(Path(detector_dir) / f"{sample.id}.txt")
            value_nrmse = nrmse(pred, sample.landmarks)
        elif trace.heatmaps:
            pred, _ = heatmaps_to_landmarks(trace.heatmaps[-1][0].numpy())
            value_nrmse = nrmse(pred, sample.landmarks)
        steps = None
        if per_step:
            steps = []
            for n in range(len(trace.sr_images)):
                step_sr = _tensor_to_image(trace.sr_images[n])
                step_nrmse = None
                if trace.heatmaps:
                    pred, _ = heatmaps_to_landmarks(trace.heatmaps[n][0].numpy())
                    step_nrmse = nrmse(pred, sample.landmarks)
                steps.append({
                    "psnr_db": psnr_y(step_sr, sample.hr_image),
                    "ssim": ssim_y(step_sr, sample.hr_image),
                    "nrmse": step_nrmse,
                })
        reports.append(MetricReport(
            id=sample.id,
            psnr_db=psnr_y(sr, sample.hr_image),
            ssim=ssim_y(sr, sample.hr_image),
            nrmse=value_nrmse,
            per_step=steps,
        ))
    return reports, aggregate_reports(reports)


def aggregate_reports(reports):
    """Mean of each metric over per-image reports (None-aware for NRMSE)."""
    agg = {
        "psnr_db": float(np.mean([r.psnr_db for r in reports])),
        "ssim": float(np.mean([r.ssim for r in reports])),
    }
    values = [r.nrmse for r in reports if r.nrmse is not None]
    agg["nrmse"] = float(np.mean(values)) if values else None
    if reports[0].per_step is not None:
        agg["per_step"] = []
        for n in range(len(reports[0].per_step)):
            entry = {
                "psnr_db": float(np.mean([r.per_step[n]["psnr_db"] for r in reports])),
                "ssim": float(np.mean([r.per_step[n]["ssim"] for r in reports])),
            }
            step_vals = [
                r.per_step[n]["nrmse"]
                for r in reports
                if r.per_step[n]["nrmse"] is not None
            ]
            entry["nrmse"] = float(np.mean(step_vals)) if step_vals else None
            agg["per_step"].append(entry)
    return agg
