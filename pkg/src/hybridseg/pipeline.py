"""Segmentor pre-training, alternate training of segmentor and refiner, and sampling.

Batches and noise are drawn from generators keyed by (seed, stream, batch
counter), where the batch counter runs on across pre-training and alternate
training.  This makes every run reproducible and lets an alternate run with
``lambda_diff = 0`` replay exactly the batches a continued pre-training
would have seen.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, Tensor
from .evalio.fileio import hdt_decode, hdt_encode
from .evalio.metrics import MetricReport
from .kernel import bernoulli, calibrate, ddim_mean, posterior_prob, sample_noise_and_latent
from .losses import (
    LossWeights,
    bce_loss,
    bernoulli_kl,
    dice_loss,
    diffusion_loss,
    disc_loss,
    focal_loss,
    hybrid_loss,
)
from .models import ModelConfig, Refiner, Segmentor, build_reference_models
from .optim import OptimizerState, adamw_step, zero_grads
from .schedule import NoiseSchedule, cosine_schedule, respace

SAMPLERS = ("ddpm", "ddim")
FINAL_DRAWS = ("threshold", "sample")
_BATCH_STREAM = 1
_NOISE_STREAM = 2
_CKPT_MAGIC = b"HYBRIDSEG-CKPT 1\n"


class TrainingDiverged(RuntimeError):
    pass


class IsolationError(RuntimeError):
    """A frozen network changed during the other network's half-step."""


@dataclass
class TrainConfig:
    T: int = 10
    sampler: str = "ddim"
    sampler_steps: int = 10
    batch_size: int = 32
    pretrain_iters: int = 2000
    train_iters: int = 2000
    lr: float = 1e-4
    ref_lr: float | None = None  # refiner learning rate; None uses lr
    weight_decay: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    binarized: bool = False
    warmup_g_iters: int = 0  # leading alternate iterations that update only the refiner
    final_draw: str = "threshold"
    prior_clamp: float = 1e-6  # keeps prior away from 0/1 so posterior normalizers stay positive
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if not isinstance(self.T, int) or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T!r}")
        if not 0 <= self.sampler_steps <= self.T:
            raise ValueError(f"sampler_steps must lie in 0..{self.T}")
        if self.batch_size < 1 or self.pretrain_iters < 0 or self.train_iters < 0 or self.warmup_g_iters < 0:
            raise ValueError("batch size must be positive and iteration counts non-negative")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ValueError("lr must be > 0 and weight_decay >= 0")
        if self.ref_lr is not None and not self.ref_lr > 0:
            raise ValueError("ref_lr must be > 0 when given")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.final_draw not in FINAL_DRAWS:
            raise ValueError(f"final_draw must be one of {FINAL_DRAWS}, got {self.final_draw!r}")
        if not 0 <= self.prior_clamp < 0.5:
            raise ValueError("prior_clamp must lie in [0, 0.5)")
        self.model_config().validate()

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{**asdict(self.model), "binarized": self.binarized})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        if isinstance(d.get("model"), dict):
            d["model"] = model_config_from_dict(d["model"])
        return cls(**d)


def model_config_from_dict(d: dict) -> ModelConfig:
    d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
    return ModelConfig(**d)


# -- checkpoints ------------------------------------------------------------


@dataclass
class Checkpoint:
    """Parameters and optimizer state of both networks plus the run's configuration.

    ``batches`` counts the batches drawn so far (pre-training and alternate
    iterations together); ``alt_iters`` counts alternate iterations only.
    """

    model: dict
    train: dict
    seg: dict[str, np.ndarray]
    ref: dict[str, np.ndarray]
    seg_opt: OptimizerState | None = None
    ref_opt: OptimizerState | None = None
    batches: int = 0
    alt_iters: int = 0
    history: dict[str, list[float]] = field(default_factory=dict)

    @property
    def schedule(self) -> NoiseSchedule:
        return cosine_schedule(self.train["T"])

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.train)

    def model_config(self) -> ModelConfig:
        return model_config_from_dict(self.model)

    @classmethod
    def from_models(cls, seg: Segmentor, ref: Refiner, config: TrainConfig, **kw) -> "Checkpoint":
        return cls(
            model=seg.cfg.to_dict() | {"binarized": ref.cfg.binarized},
            train=config.to_dict(),
            seg={k: p.data.copy() for k, p in seg.parameters().items()},
            ref={k: p.data.copy() for k, p in ref.parameters().items()},
            **kw,
        )

    def build_models(self) -> tuple[Segmentor, Refiner]:
        seg, ref = build_reference_models(self.model_config())
        _load_params(seg, self.seg, "segmentor")
        _load_params(ref, self.ref, "refiner")
        return seg, ref

    # -- file format: magic line, header length line, JSON header, HDT payloads
    def save(self, path) -> None:
        tensors: list[tuple[str, np.ndarray]] = []
        tensors += [(f"seg/{k}", v) for k, v in self.seg.items()]
        tensors += [(f"ref/{k}", v) for k, v in self.ref.items()]
        opts = {}
        for tag, st in (("seg_opt", self.seg_opt), ("ref_opt", self.ref_opt)):
            if st is None:
                continue
            opts[tag] = {"lr": st.lr, "betas": list(st.betas), "eps": st.eps,
                         "weight_decay": st.weight_decay, "step": st.step}
            tensors += [(f"{tag}/m/{k}", v) for k, v in st.m.items()]
            tensors += [(f"{tag}/v/{k}", v) for k, v in st.v.items()]
        blobs, directory, offset = [], [], 0
        for name, arr in tensors:
            blob = hdt_encode(arr)
            directory.append({"name": name, "offset": offset, "nbytes": len(blob)})
            blobs.append(blob)
            offset += len(blob)
        header = {
            "model": self.model, "train": self.train, "optimizers": opts,
            "batches": self.batches, "alt_iters": self.alt_iters,
            "history": self.history, "tensors": directory,
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(f"{len(head)}\n".encode("ascii"))
            fh.write(head)
            for blob in blobs:
                fh.write(blob)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            buf = fh.read()
        if not buf.startswith(_CKPT_MAGIC):
            raise ValueError(f"{path} is not a checkpoint file")
        nl = buf.index(b"\n", len(_CKPT_MAGIC))
        n = int(buf[len(_CKPT_MAGIC):nl])
        start = nl + 1
        header = json.loads(buf[start : start + n].decode("utf-8"))
        base = start + n
        arrays = {}
        for entry in header["tensors"]:
            arr, end = hdt_decode(buf, base + entry["offset"])
            if end - base - entry["offset"] != entry["nbytes"]:
                raise ValueError(f"tensor {entry['name']} size disagrees with the directory")
            arrays[entry["name"]] = arr

        def group(prefix):
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        opts = {}
        for tag, st in header["optimizers"].items():
            opts[tag] = OptimizerState(lr=st["lr"], betas=tuple(st["betas"]), eps=st["eps"],
                                       weight_decay=st["weight_decay"], step=st["step"],
                                       m=group(f"{tag}/m/"), v=group(f"{tag}/v/"))
        return cls(model=header["model"], train=header["train"], seg=group("seg/"), ref=group("ref/"),
                   seg_opt=opts.get("seg_opt"), ref_opt=opts.get("ref_opt"),
                   batches=header["batches"], alt_iters=header["alt_iters"], history=header["history"])


def _load_params(module, arrays: dict[str, np.ndarray], what: str) -> None:
    params = module.parameters()
    if set(params) != set(arrays):
        missing = sorted(set(params) ^ set(arrays))[:5]
        raise ValueError(f"{what} parameter names do not match the checkpoint (e.g. {missing})")
    for k, p in params.items():
        if p.data.shape != arrays[k].shape:
            raise ValueError(f"{what} parameter {k}: shape {arrays[k].shape} != {p.data.shape}")
        p.data = arrays[k].astype(p.data.dtype, copy=True)


# -- data helpers -----------------------------------------------------------


def _arrays(data) -> tuple[np.ndarray, np.ndarray]:
    """(images (N, H, W, C_in) float32, masks (N, H, W, C) float32) from a dataset or a pair."""
    if hasattr(data, "images") and hasattr(data, "masks"):
        images, masks = data.images, data.masks
    else:
        images, masks = data
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[..., None]
    masks = np.asarray(masks, dtype=np.float32)
    if len(images) == 0:
        raise ValueError("dataset is empty")
    if images.shape[:3] != masks.shape[:3]:
        raise ValueError(f"images {images.shape} and masks {masks.shape} disagree")
    return images, masks


def seg_targets(masks: np.ndarray, sigmoid: bool = False) -> np.ndarray:
    """Background-first one-hot targets for the softmax head (or the masks themselves)."""
    if sigmoid:
        return masks
    bg = 1.0 - masks.sum(axis=-1, keepdims=True)
    return np.concatenate([bg, masks], axis=-1)


def batch_indices(n: int, batch: int, seed: int, counter: int) -> np.ndarray:
    rng = np.random.default_rng([seed, _BATCH_STREAM, counter])
    return rng.choice(n, size=batch, replace=n < batch)


def _seg_loss(seg: Segmentor, x, y, w: LossWeights):
    probs, f_d = seg(x)
    if seg.cfg.sigmoid:
        loss = bce_loss(y, probs) + w.lambda_dice * dice_loss(y, probs)
    else:
        loss = disc_loss(y, probs, w, fg_slice=slice(1, None))
    return probs, f_d, loss


def _check_data(images, masks, mcfg: ModelConfig) -> None:
    if images.shape[1:] != (mcfg.size, mcfg.size, mcfg.in_channels) or masks.shape[-1] != mcfg.classes:
        raise ValueError(
            f"data {images.shape[1:]} with {masks.shape[-1]} classes does not fit the model "
            f"({mcfg.size}x{mcfg.size}x{mcfg.in_channels}, {mcfg.classes} classes)"
        )


Progress = Callable[[str, int, int, float], None]


# -- pre-training -----------------------------------------------------------


def pretrain_segmentor(data, config: TrainConfig, init: Checkpoint | None = None,
                       progress: Progress | None = None) -> Checkpoint:
    """Train the segmentor alone on the discriminative loss.

    ``init`` continues from an earlier checkpoint (parameters, optimizer
    state and batch counter); otherwise both networks start from the
    seeded initialization.
    """
    config.validate()
    images, masks = _arrays(data)
    if init is None:
        seg, ref = build_reference_models(config.model_config())
        seg_opt = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
        batches, history = 0, {}
    else:
        seg, ref = init.build_models()
        seg_opt = copy.deepcopy(init.seg_opt) or OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
        batches, history = init.batches, {k: list(v) for k, v in init.history.items()}
    _check_data(images, masks, seg.cfg)
    targets = seg_targets(masks, seg.cfg.sigmoid)
    curve = history.setdefault("pretrain_loss", [])
    params = seg.parameters()
    for i in range(config.pretrain_iters):
        idx = batch_indices(len(images), config.batch_size, config.seed, batches)
        try:
            with Tape() as tape:
                _, _, loss = _seg_loss(seg, images[idx], targets[idx], config.weights)
            tape.backward(loss)
            adamw_step(params, seg_opt)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"pre-training diverged at batch {batches}: {exc}") from exc
        zero_grads(params)
        batches += 1
        curve.append(float(loss.data))
        if progress:
            progress("pretrain", i + 1, config.pretrain_iters, curve[-1])
    return Checkpoint.from_models(seg, ref, config, seg_opt=seg_opt,
                                  ref_opt=copy.deepcopy(init.ref_opt) if init else None,
                                  batches=batches, alt_iters=init.alt_iters if init else 0,
                                  history=history)


# -- alternate training -----------------------------------------------------


def _snapshot(module) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in module.parameters().items()}


def _max_change(module, snap: dict[str, np.ndarray]) -> float:
    worst = 0.0
    for k, p in module.parameters().items():
        if p.data.shape != snap[k].shape:
            return float("inf")
        if not np.array_equal(p.data, snap[k]):
            worst = max(worst, float(np.max(np.abs(p.data.astype(np.float64) - snap[k]))))
    return worst


def _clamped_prior(seg: Segmentor, probs, c: float):
    prior = seg.prior(probs)
    if isinstance(prior, Tensor):
        return ad.clip(prior, c, 1.0 - c) if c > 0 else prior
    return np.clip(prior, c, 1.0 - c)


def _diff_loss(ref: Refiner, y0, y_t, eps, t, prior, x, f_d, sched, w: LossWeights):
    eps_hat, _ = ref(y_t, t, prior, x, f_d)
    true_post = posterior_prob(y_t, y0, prior, t, sched)
    est_post = calibrate(y_t, eps_hat, prior, t, sched)
    kl = bernoulli_kl(true_post, est_post)
    fl = focal_loss(eps, eps_hat, w.gamma)
    return diffusion_loss(kl, fl, w), kl, fl


def train_alternate(data, seg_ckpt: Checkpoint, config: TrainConfig, progress: Progress | None = None,
                    hook: Callable[[str, int, Segmentor, Refiner], None] | None = None) -> Checkpoint:
    """Alternate-collaborative training.

    Per batch: draw t and the flip noise, form y_t = y0 XOR eps, update the
    refiner on the diffusion loss with the segmentor frozen, then update the
    segmentor on the hybrid loss with the refiner frozen.  After every
    half-step the frozen network is compared bit-for-bit with its snapshot
    and ``IsolationError`` is raised on any change.  ``hook`` (if given) is
    called as ``hook(event, iteration, seg, ref)`` with events
    ``before_g``, ``after_g``, ``before_f``, ``after_f``.
    """
    config.validate()
    images, masks = _arrays(data)
    mcfg = seg_ckpt.model_config()
    mcfg.binarized = config.binarized
    seg, ref = build_reference_models(mcfg)
    _load_params(seg, seg_ckpt.seg, "segmentor")
    _check_data(images, masks, seg.cfg)
    resume = seg_ckpt.alt_iters > 0 and set(seg_ckpt.ref) == set(ref.parameters())
    if resume:
        _load_params(ref, seg_ckpt.ref, "refiner")
    # the input checkpoint stays untouched
    seg_opt = copy.deepcopy(seg_ckpt.seg_opt) or OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    ref_lr = config.lr if config.ref_lr is None else config.ref_lr
    ref_opt = (copy.deepcopy(seg_ckpt.ref_opt) if resume else None) or OptimizerState(lr=ref_lr, weight_decay=config.weight_decay)
    sched = cosine_schedule(config.T)
    w, c = config.weights, config.prior_clamp
    targets = seg_targets(masks, seg.cfg.sigmoid)
    history = {k: list(v) for k, v in seg_ckpt.history.items()}
    for key in ("g_loss", "f_loss", "disc_loss", "kl", "focal", "g_isolation", "f_isolation"):
        history.setdefault(key, [])
    seg_params, ref_params = seg.parameters(), ref.parameters()
    batches = seg_ckpt.batches
    it0 = seg_ckpt.alt_iters

    for i in range(config.train_iters):
        it = it0 + i
        idx = batch_indices(len(images), config.batch_size, config.seed, batches)
        x, y0, y_seg = images[idx], masks[idx], targets[idx]
        rng = np.random.default_rng([config.seed, _NOISE_STREAM, batches])
        t = rng.integers(1, config.T + 1, size=len(idx))
        try:
            # refiner half-step, segmentor frozen
            seg.set_trainable(False)
            ref.set_trainable(True)
            frozen = _snapshot(seg)
            if hook:
                hook("before_g", it, seg, ref)
            probs, f_d = seg(x)
            prior = _clamped_prior(seg, probs.data, c)
            eps, y_t = sample_noise_and_latent(y0, prior, t, sched, rng)
            with Tape() as tape:
                g_loss, kl, fl = _diff_loss(ref, y0, y_t, eps, t, prior, x, f_d, sched, w)
            tape.backward(g_loss)
            adamw_step(ref_params, ref_opt)
            zero_grads(ref_params)
            change = _max_change(seg, frozen)
            history["g_isolation"].append(change)
            if change != 0.0:
                raise IsolationError(f"segmentor changed by {change} during refiner update {it}")
            if hook:
                hook("after_g", it, seg, ref)
            history["g_loss"].append(float(g_loss.data))
            history["kl"].append(float(kl.data))
            history["focal"].append(float(fl.data))

            if i >= config.warmup_g_iters:
                # segmentor half-step, refiner frozen
                seg.set_trainable(True)
                ref.set_trainable(False)
                frozen = _snapshot(ref)
                if hook:
                    hook("before_f", it, seg, ref)
                with Tape() as tape:
                    probs, f_d, l_disc = _seg_loss(seg, x, y_seg, w)
                    prior_t = _clamped_prior(seg, probs, c)
                    l_diff, _, _ = _diff_loss(ref, y0, y_t, eps, t, prior_t, x, f_d, sched, w)
                    f_loss = hybrid_loss(l_disc, l_diff, w)
                tape.backward(f_loss)
                adamw_step(seg_params, seg_opt)
                zero_grads(seg_params)
                change = _max_change(ref, frozen)
                history["f_isolation"].append(change)
                if change != 0.0:
                    raise IsolationError(f"refiner changed by {change} during segmentor update {it}")
                if hook:
                    hook("after_f", it, seg, ref)
                history["f_loss"].append(float(f_loss.data))
                history["disc_loss"].append(float(l_disc.data))
        except NonFiniteError as exc:
            raise TrainingDiverged(f"alternate training diverged at iteration {it}: {exc}") from exc
        finally:
            seg.set_trainable(True)
            ref.set_trainable(True)
        batches += 1
        if progress:
            progress("train", i + 1, config.train_iters, history["g_loss"][-1])

    return Checkpoint.from_models(seg, ref, config, seg_opt=seg_opt, ref_opt=ref_opt, batches=batches,
                                  alt_iters=it0 + config.train_iters, history=history)


# -- inference ----------------------------------------------------------------


@dataclass
class InferenceResult:
    prior: np.ndarray  # (N, H, W, C) foreground probabilities
    prior_mask: np.ndarray  # (N, H, W, C) uint8, decoded prior
    refined: np.ndarray  # (N, H, W, C) uint8, decoded final state
    refined_prob: np.ndarray  # Bernoulli mean of the last step (the prior when steps = 0)
    trajectory: list[np.ndarray] | None = None  # y_T first, then the state after each step
    timesteps: list[int] = field(default_factory=list)  # training step fed to the refiner, per step


def decode(prob: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Mutually exclusive one-hot masks: among active channels keep the most probable."""
    active = np.asarray(active) > 0.5
    if prob.shape[-1] == 1:
        return active.astype(np.uint8)
    score = np.where(active, prob, -1.0)
    best = np.argmax(score, axis=-1)
    out = np.zeros(prob.shape, dtype=np.uint8)
    np.put_along_axis(out, best[..., None], 1, axis=-1)
    return out * active.any(axis=-1, keepdims=True)


def _draw(p: np.ndarray, rngs: list[np.random.Generator]) -> np.ndarray:
    return np.stack([bernoulli(p[j], rng) for j, rng in enumerate(rngs)]).astype(np.float32)


def infer(images, models, sampler: str = "ddim", steps: int = 10, seed: int = 0, trajectory: bool = False,
          final_draw: str = "threshold", T: int | None = None, batch_size: int = 64,
          prior_clamp: float = 1e-6) -> InferenceResult:
    """Sample refined masks for a stack of images.

    ``models`` is a Checkpoint or a (segmentor, refiner) pair; T defaults to
    the checkpoint's training T.  Image j draws from its own generator
    seeded by (seed, j), so results do not depend on ``batch_size``.
    With ``steps < T`` the reverse loop runs on an evenly respaced schedule;
    ``steps = 0`` returns y_T ~ B(prior) unchanged.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}; choose from {SAMPLERS}")
    if final_draw not in FINAL_DRAWS:
        raise ValueError(f"final_draw must be one of {FINAL_DRAWS}")
    if isinstance(models, Checkpoint):
        T = T or models.train["T"]
        seg, ref = models.build_models()
    else:
        seg, ref = models
        T = T or 10
    sched = cosine_schedule(T)
    if not 0 <= steps <= T:
        raise ValueError(f"steps must lie in 0..{T}, got {steps}")
    rs = respace(sched, steps) if steps else None
    x_all = np.asarray(images, dtype=np.float32)
    if x_all.ndim == 3:
        x_all = x_all[..., None]
    n = len(x_all)
    priors, refined, probs_out, traj = [], [], [], []
    for start in range(0, n, batch_size):
        x = x_all[start : start + batch_size]
        rngs = [np.random.default_rng([seed, j]) for j in range(start, start + len(x))]
        probs, f_d = seg(x)
        prior = _clamped_prior(seg, probs.data, prior_clamp)
        y = _draw(prior, rngs)
        mu = prior
        states = [y]
        for i in range(rs.T if rs else 0, 0, -1):
            tm = np.full(len(x), int(rs.timesteps[i - 1]))
            eps_hat = ref(y, tm, prior, x, f_d)[0].data
            if sampler == "ddpm":
                mu = np.asarray(calibrate(y, eps_hat, prior, i, rs))
            else:
                mu = ddim_mean(y, eps_hat, prior, i, rs)
            if i == 1 and final_draw == "threshold":
                y = (mu >= 0.5).astype(np.float32)
            else:
                y = _draw(mu, rngs)
            states.append(y)
        priors.append(prior)
        probs_out.append(np.asarray(mu, dtype=np.float32))
        refined.append(decode(mu, y))
        traj.append(states)
    prior = np.concatenate(priors)
    mu = np.concatenate(probs_out)
    trajectory_out = None
    if trajectory:
        trajectory_out = [np.concatenate([b[k] for b in traj]) for k in range(len(traj[0]))]
    return InferenceResult(
        prior=prior,
        prior_mask=decode(prior, prior >= 0.5),
        refined=np.concatenate(refined),
        refined_prob=mu,
        trajectory=trajectory_out,
        timesteps=[int(rs.timesteps[i - 1]) for i in range(rs.T, 0, -1)] if rs else [],
    )


# -- evaluation ---------------------------------------------------------------


@dataclass
class Evaluation:
    prior: MetricReport
    refined: MetricReport
    prior_small: MetricReport | None  # restricted to samples holding a small object
    refined_small: MetricReport | None
    result: InferenceResult

    def reports(self) -> dict[str, MetricReport]:
        out = {"prior": self.prior, "refined": self.refined}
        if self.prior_small is not None:
            out["prior_small"] = self.prior_small
            out["refined_small"] = self.refined_small
        return out

    def summary(self) -> dict[str, float]:
        out = {}
        for name, rep in self.reports().items():
            m = rep.mean()
            out[f"{name}_dice"] = m["dice"]
            out[f"{name}_hd95"] = m["hd95"]
            out[f"{name}_nan_ratio"] = m["nan_ratio"]
        return out


def evaluate(data, models, sampler: str = "ddim", steps: int = 10, seed: int = 0, **kw) -> Evaluation:
    """Prior vs refined metrics over a dataset; adds a small-object subset when the dataset flags one."""
    images, masks = _arrays(data)
    result = infer(images, models, sampler=sampler, steps=steps, seed=seed, **kw)
    classes = masks.shape[-1]
    small = data.has_small_object() if hasattr(data, "has_small_object") else None
    reports = [MetricReport(classes) for _ in range(4)]
    for j in range(len(images)):
        reports[0].add(result.prior_mask[j], masks[j])
        reports[1].add(result.refined[j], masks[j])
        if small is not None and small[j]:
            reports[2].add(result.prior_mask[j], masks[j])
            reports[3].add(result.refined[j], masks[j])
    has_small = small is not None and bool(np.any(small))
    return Evaluation(reports[0], reports[1], reports[2] if has_small else None,
                      reports[3] if has_small else None, result)


__all__ = [
    "Checkpoint",
    "Evaluation",
    "InferenceResult",
    "IsolationError",
    "TrainConfig",
    "TrainingDiverged",
    "batch_indices",
    "decode",
    "evaluate",
    "infer",
    "pretrain_segmentor",
    "seg_targets",
    "train_alternate",
]
