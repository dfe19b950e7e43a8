"""Command-line entry point: ``hybridseg <subcommand> [flags]``.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
whose keys are flag names (dashes or underscores); explicit flags win over
file values.  Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from importlib import metadata

import numpy as np

from . import bitops
from .evalio.fileio import hdt_read, hdt_write, pgm_export, read_pgm
from .evalio.metrics import write_csv
from .evalio.synthetic import SyntheticDataset, gen_synthetic
from .losses import LossWeights
from .pipeline import Checkpoint, TrainConfig, evaluate, infer, pretrain_segmentor, train_alternate

HD95_NOTE = "HD95 is computed per 2-D sample; mean HD95 averages defined cases only"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def version_string() -> str:
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True, text=True, timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{base}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; '#' starts a comment."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hybridseg", description="Bernoulli-diffusion mask refinement toolkit")
    p.add_argument("--version", action="version", version=version_string())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="key = value file; flags override it")
        return s

    s = cmd("gen-data", "write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=512)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--classes", type=int, default=2)
    s.add_argument("--small-rate", type=float, default=0.5)
    s.add_argument("--noise", type=float, default=0.15)
    s.add_argument("--seed", type=int, default=0)

    def train_flags(s, iters):
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True, help="checkpoint path")
        s.add_argument("--iters", type=int, default=iters)
        s.add_argument("--lr", type=float, default=1e-4)
        s.add_argument("--batch", type=int, default=32)
        s.add_argument("--weight-decay", type=float, default=0.01)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--lambda-dice", type=float, default=1.0)

    s = cmd("pretrain", "pre-train the segmentor on the discriminative loss")
    train_flags(s, 2000)
    s.add_argument("--T", type=int, default=10)
    s.add_argument("--model-seed", type=int, default=0)

    s = cmd("train", "alternate training of refiner and segmentor")
    train_flags(s, 2000)
    s.add_argument("--seg", required=True, help="segmentor checkpoint from pretrain")
    s.add_argument("--T", type=int, default=10)
    s.add_argument("--gamma", type=float, default=2.0)
    s.add_argument("--lambda-diff", type=float, default=1.0)
    s.add_argument("--lambda-focal", type=float, default=1.0)
    s.add_argument("--binarized", type=_bool, default=False)
    s.add_argument("--warmup-g", type=int, default=0)
    s.add_argument("--ref-lr", type=float, default=None, help="refiner learning rate (default: --lr)")

    s = cmd("sample", "refine one image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True, help="HDT tensor (H, W[, C]) or 8-bit PGM")
    s.add_argument("--sampler", choices=("ddpm", "ddim"), default="ddim")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--final-draw", choices=("threshold", "sample"), default="threshold")
    s.add_argument("--out", required=True)
    s.add_argument("--trajectory", action="store_true")

    s = cmd("eval", "prior vs refined metrics on a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--sampler", choices=("ddpm", "ddim"), default="ddim")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--final-draw", choices=("threshold", "sample"), default="threshold")
    s.add_argument("--out", required=True, help="report CSV path")

    s = cmd("bench-bitops", "time xnor_gemm against the naive float GEMM")
    s.add_argument("--m", type=int, default=512)
    s.add_argument("--k", type=int, default=512)
    s.add_argument("--n", type=int, default=512)
    s.add_argument("--repeat", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="optional report file")
    return p


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a file argument")
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    path = _config_path(argv)
    if path is not None and argv and argv[0] in COMMANDS:
        values = read_config_file(path)
        sub = parser._subparsers._group_actions[0].choices[argv[0]]  # noqa: SLF001
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}  # noqa: SLF001
        unknown = sorted(set(values) - set(actions))
        if unknown:
            raise UsageError(f"unknown config keys for {argv[0]}: {', '.join(unknown)}")
        for key, value in values.items():
            action = actions[key]
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config {key}: {value!r} not in {sorted(action.choices)}")
            if action.const is True and action.nargs == 0:  # store_true flag
                values[key] = _bool(value)
            action.required = False
        # string defaults go through each flag's type converter; explicit flags still win
        sub.set_defaults(**values)
    return parser.parse_args(argv)


def _log(path: str, args: argparse.Namespace) -> None:
    # the output location is implied by where the log lives; leaving it out keeps
    # repeated runs into different directories byte-identical
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "out"}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"version: {version_string()}\n")
        fh.write(f"command: {args.command}\n")
        fh.write("config: " + json.dumps(resolved, sort_keys=True, default=str) + "\n")


def _progress_printer():
    last = [0.0]

    def show(stage, i, n, loss):
        now = time.monotonic()
        if i == n or now - last[0] > 1.0:
            last[0] = now
            end = "\n" if i == n else ""
            print(f"\r{stage} {i}/{n} loss {loss:.4f}", end=end, flush=True)

    return show


def _need(path: str, what: str) -> None:
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")


def _write_history(path: str, history: dict, keys: list[str]) -> None:
    keys = [k for k in keys if history.get(k)]
    n = max((len(history[k]) for k in keys), default=0)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["iteration", *keys]) + "\n")
        for i in range(n):
            vals = [repr(history[k][i]) if i < len(history[k]) else "" for k in keys]
            fh.write(",".join([str(i), *vals]) + "\n")


def _validated(cfg: TrainConfig) -> TrainConfig:
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _stem(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root


def cmd_gen_data(a) -> str:
    try:
        ds = gen_synthetic(a.n, a.size, a.classes, a.small_rate, a.noise, a.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds.save(a.out)
    _log(os.path.join(a.out, "run.log"), a)
    return f"wrote {len(ds)} samples ({ds.has_small_object().sum()} with a small object) to {a.out}"


def _train_config(a, **extra) -> TrainConfig:
    return TrainConfig(batch_size=a.batch, lr=a.lr, weight_decay=a.weight_decay, seed=a.seed, **extra)


def cmd_pretrain(a) -> str:
    _need(os.path.join(a.data, "index.json"), "dataset")
    data = SyntheticDataset.load(a.data)
    cfg = _train_config(a, T=a.T, pretrain_iters=a.iters, weights=LossWeights(lambda_dice=a.lambda_dice))
    cfg.model.size, cfg.model.classes = data.images.shape[1], data.classes
    cfg.model.seed = a.model_seed
    _validated(cfg)
    _log(_stem(a.out) + ".log", a)
    ckpt = pretrain_segmentor(data, cfg, progress=_progress_printer())
    ckpt.save(a.out)
    _write_history(_stem(a.out) + "_loss.csv", ckpt.history, ["pretrain_loss"])
    curve = ckpt.history["pretrain_loss"]
    tail = f", final loss {curve[-1]:.4f}" if curve else ""
    return f"pretrained {a.iters} iterations{tail}; checkpoint {a.out}"


def cmd_train(a) -> str:
    _need(os.path.join(a.data, "index.json"), "dataset")
    _need(a.seg, "segmentor checkpoint")
    data = SyntheticDataset.load(a.data)
    seg = Checkpoint.load(a.seg)
    try:
        w = LossWeights(lambda_dice=a.lambda_dice, lambda_focal=a.lambda_focal, lambda_diff=a.lambda_diff, gamma=a.gamma)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cfg = _train_config(a, T=a.T, train_iters=a.iters, weights=w, binarized=a.binarized, warmup_g_iters=a.warmup_g,
                        ref_lr=a.ref_lr)
    cfg.model = seg.model_config()
    _validated(cfg)
    _log(_stem(a.out) + ".log", a)
    ckpt = train_alternate(data, seg, cfg, progress=_progress_printer())
    ckpt.save(a.out)
    _write_history(_stem(a.out) + "_loss.csv", ckpt.history, ["g_loss", "f_loss", "disc_loss", "kl", "focal"])
    return f"trained {a.iters} alternate iterations; checkpoint {a.out}"


def _load_image(path: str) -> np.ndarray:
    if path.lower().endswith(".pgm"):
        return read_pgm(path).astype(np.float32) / 255.0
    return hdt_read(path).astype(np.float32)


def cmd_sample(a) -> str:
    _need(a.ckpt, "checkpoint")
    _need(a.image, "image")
    ckpt = Checkpoint.load(a.ckpt)
    img = _load_image(a.image)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise UsageError(f"image must be (H, W) or (H, W, C), got {img.shape}")
    if not 0 <= a.steps <= ckpt.train["T"]:
        raise UsageError(f"--steps must lie in 0..{ckpt.train['T']}")
    os.makedirs(a.out, exist_ok=True)
    _log(os.path.join(a.out, "run.log"), a)
    res = infer(img[None], ckpt, sampler=a.sampler, steps=a.steps, seed=a.seed,
                trajectory=a.trajectory, final_draw=a.final_draw)
    hdt_write(os.path.join(a.out, "prior.hdt"), res.prior[0].astype(np.float32))
    hdt_write(os.path.join(a.out, "refined.hdt"), res.refined[0])
    pgm_export(res.prior[0], os.path.join(a.out, "prior.pgm"))
    pgm_export(res.refined[0], os.path.join(a.out, "refined.pgm"))
    if a.trajectory:
        tdir = os.path.join(a.out, "trajectory")
        os.makedirs(tdir, exist_ok=True)
        labels = ["T"] + [f"{t:03d}" for t in res.timesteps]
        for k, (state, label) in enumerate(zip(res.trajectory, labels)):
            name = f"step{k:02d}_from_{label}"
            hdt_write(os.path.join(tdir, name + ".hdt"), state[0].astype(np.float32))
            pgm_export(state[0], os.path.join(tdir, name + ".pgm"))
    fg = int(res.refined[0].sum())
    return f"refined mask with {fg} foreground pixels written to {a.out}"


def cmd_eval(a) -> str:
    _need(a.ckpt, "checkpoint")
    _need(os.path.join(a.data, "index.json"), "dataset")
    ckpt = Checkpoint.load(a.ckpt)
    data = SyntheticDataset.load(a.data)
    if not 0 <= a.steps <= ckpt.train["T"]:
        raise UsageError(f"--steps must lie in 0..{ckpt.train['T']}")
    out_dir = os.path.dirname(os.path.abspath(a.out))
    os.makedirs(out_dir, exist_ok=True)
    _log(_stem(a.out) + ".log", a)
    ev = evaluate(data, ckpt, sampler=a.sampler, steps=a.steps, seed=a.seed, final_draw=a.final_draw)
    write_csv(ev.reports(), a.out, note=HD95_NOTE)
    s = ev.summary()
    return f"dice prior {s['prior_dice']:.4f} refined {s['refined_dice']:.4f}; report {a.out}"


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench_bitops(a) -> str:
    if min(a.m, a.k, a.n, a.repeat) < 1:
        raise UsageError("--m, --k, --n and --repeat must be positive")
    rng = np.random.default_rng(a.seed)
    A = np.where(rng.random((a.m, a.k)) < 0.5, -1, 1).astype(np.int8)
    B = np.where(rng.random((a.k, a.n)) < 0.5, -1, 1).astype(np.int8)
    pa, pb = bitops.pack(A), bitops.pack(B.T)
    t_pack = _time(lambda: (bitops.pack(A), bitops.pack(B.T)), a.repeat)
    t_xnor = _time(lambda: bitops.xnor_gemm(pa, pb), a.repeat)
    Af, Bf = A.astype(np.float32), B.astype(np.float32)
    t_float = _time(lambda: bitops.naive_float_gemm(Af, Bf), a.repeat)
    exact = np.array_equal(bitops.xnor_gemm(pa, pb), bitops.naive_float_gemm(Af, Bf).astype(np.int64))
    report = bitops.cost_report([
        bitops.LayerSpec("float_gemm", a.m, a.k, a.n, binarized=False),
        bitops.LayerSpec("xnor_gemm", a.m, a.k, a.n, binarized=True),
    ])
    text = (
        f"shape m={a.m} k={a.k} n={a.n} repeat={a.repeat}\n"
        f"naive_float_gemm_s {t_float:.6f}\n"
        f"xnor_gemm_s {t_xnor:.6f}\n"
        f"pack_s {t_pack:.6f}\n"
        f"speedup {t_float / t_xnor:.2f}\n"
        f"bit_exact {exact}\n\n" + report.to_text()
    )
    if a.out:
        with open(a.out, "w", encoding="utf-8") as fh:
            fh.write(f"version: {version_string()}\n" + text)
    sys.stdout.write(text)
    if not exact:
        raise RuntimeError("xnor_gemm disagrees with the float reference")
    return f"xnor {t_xnor * 1e3:.2f} ms vs float {t_float * 1e3:.2f} ms ({t_float / t_xnor:.1f}x)"


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "bench-bitops": cmd_bench_bitops,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
        summary = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
