"""Dataset generation, truncated-BPTT training, evaluation and inference drivers."""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .autodiff import AdamState, adam_step, backward, decay_lr, epoch_decay_factor, load_checkpoint, save_checkpoint
from .losses import MetricAccumulator, MetricReport, default_cutoffs, sequence_loss
from .network import DeltaNetwork, NetworkConfig, WindowInput
from .sensors import random_crop
from .synthetic import SceneConfig, baseline_interpolate, generate_sequence, read_sequence, write_sequence

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    pass


class NumericError(RuntimeError):
    pass


def network_config(cfg: dict) -> NetworkConfig:
    size = cfg["crop"] or None
    return NetworkConfig(
        H=size or cfg["H"],
        W=size or cfg["W"],
        P=cfg["P"],
        D=cfg["D"],
        heads=cfg["heads"],
        ffn_mult=cfg["ffn_mult"],
        prop_size=cfg["prop_size"],
        dt_us=cfg["dt_us"],
        max_range=cfg["max_range"],
        variant=cfg["variant"],
    )


# -- data ---------------------------------------------------------------------
def scene_config(cfg: dict, index: int) -> SceneConfig:
    return SceneConfig(
        seed=cfg["seed"] * 1000 + index,
        H=cfg["H"],
        W=cfg["W"],
        dt_us=cfg["dt_us"],
        windows=cfg["windows"],
        lidar_period=cfg["lidar_period"],
        lidar_rows=cfg["lidar_rows"],
        max_range=cfg["max_range"],
        phase=cfg["phase"],
    )


def gen_data(cfg: dict, out_dir, force: bool = False) -> list[Path]:
    out = Path(out_dir)
    if out.exists():
        if not force:
            raise DataError(f"output directory {out} exists (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True)
    dirs = []
    for i in range(cfg["sequences"]):
        d = out / f"seq_{i:03d}"
        write_sequence(d, generate_sequence(scene_config(cfg, i)))
        dirs.append(d)
    return dirs


@dataclass
class LoadedSequence:
    name: str
    max_range: float
    inputs: list[WindowInput]


def load_dataset(data_dir) -> list[LoadedSequence]:
    root = Path(data_dir)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    seq_dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("seq_"))
    if not seq_dirs:
        raise DataError(f"no seq_* directories in {root}")
    return [load_sequence(d) for d in seq_dirs]


def load_sequence(seq_dir) -> LoadedSequence:
    try:
        sample = read_sequence(seq_dir)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise DataError(str(exc)) from exc
    return LoadedSequence(Path(seq_dir).name, sample.config.max_range, sample.window_inputs())


def _stack_window(items: list[WindowInput]) -> WindowInput:
    has_lidar = [w.lidar is not None for w in items]
    if any(has_lidar) and not all(has_lidar):
        raise DataError("LiDAR arrival steps differ across sequences in one batch")
    return WindowInput(
        np.stack([w.events for w in items]),
        np.stack([w.lidar for w in items]) if all(has_lidar) else None,
        np.stack([w.gt for w in items]),
    )


def _crop_sequence(inputs: list[WindowInput], size: int, rng, P: int) -> list[WindowInput]:
    """Same patch-aligned crop origin for every window of one sequence."""
    seed = int(rng.integers(2**32))
    out = []
    for w in inputs:
        ev, li, gt = random_crop(w.events, w.lidar, w.gt, (size, size), np.random.default_rng(seed), P)
        out.append(WindowInput(ev, li, gt))
    return out


# -- training -----------------------------------------------------------------
def train(cfg: dict, out_dir, on_step=None) -> DeltaNetwork:
    """Truncated BPTT: state carries across chunks of ``seq_len`` windows, gradients do not.

    Writes ``checkpoint.dltw`` after every epoch and ``loss_log.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(cfg["data"])
    lengths = {len(s.inputs) for s in data}
    if len(lengths) != 1:
        raise DataError(f"sequences have differing lengths {sorted(lengths)}")
    ncfg = network_config(cfg)
    size = (ncfg.H, ncfg.W)
    if not cfg["crop"] and data[0].inputs[0].events.shape[:2] != size:
        raise DataError(f"dataset resolution {data[0].inputs[0].events.shape[:2]} != network {size}")
    net = DeltaNetwork(ncfg, seed=cfg["seed"])
    opt = AdamState(lr=cfg["lr"])
    factor = cfg["decay"] or epoch_decay_factor(cfg["epochs"])
    crop_rng = np.random.default_rng(cfg["seed"])

    T = cfg["seq_len"]
    n_windows = lengths.pop()
    chunks = [(s, min(s + T, n_windows)) for s in range(0, n_windows, T)]
    batch = max(1, cfg["batch"])
    groups = [data[i : i + batch] for i in range(0, len(data), batch)]
    names = net.params.names()
    tensors = net.params.tensors()

    log_path = out / "loss_log.csv"
    rows = ["step,l1,msg,total\n"]
    step = 0
    max_steps = cfg["steps"] or math.inf
    for epoch in range(cfg["epochs"]):
        for group in groups:
            seqs = [s.inputs for s in group]
            if cfg["crop"]:
                seqs = [_crop_sequence(s, cfg["crop"], crop_rng, ncfg.P) for s in seqs]
            state = net.init_state(len(group))
            for a, b in chunks:
                if step >= max_steps:
                    break
                window_batch = [_stack_window([s[t] for s in seqs]) for t in range(a, b)]
                state = state.detach()
                preds, state = net.forward_sequence(window_batch, state)
                gts = [w.gt for w in window_batch]
                rep = sequence_loss(preds, gts, [g > 0 for g in gts], cfg["scales"])
                step += 1
                if not math.isfinite(rep.total):
                    raise NumericError(f"non-finite loss at step {step} (epoch {epoch + 1})")
                grads = backward(rep.loss)
                adam_step(opt, dict(zip(names, tensors)), {n: grads[t] for n, t in zip(names, tensors) if t in grads})
                l1, msg = sum(rep.l1), sum(rep.msg)
                rows.append(f"{step},{l1:.9g},{msg:.9g},{rep.total:.9g}\n")
                if on_step:
                    on_step(step, rep)
                if cfg["log_every"] and step % cfg["log_every"] == 0:
                    log.info("step %d epoch %d loss %.5f lr %.3g", step, epoch + 1, rep.total, opt.lr)
        save_checkpoint(out / "checkpoint.dltw", net.params.state_dict(), ncfg.to_meta())
        log_path.write_text("".join(rows))
        if step >= max_steps:
            break
        decay_lr(opt, factor)
    log_path.write_text("".join(rows))
    return net


def load_network(path) -> DeltaNetwork:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    state, meta = load_checkpoint(path)
    net = DeltaNetwork(NetworkConfig.from_meta(meta))
    net.params.load_state_dict(state)
    return net


# -- evaluation and inference -------------------------------------------------
def predict_sequence(net: DeltaNetwork, inputs: list[WindowInput]) -> list[np.ndarray]:
    outs, _ = net.forward_sequence([WindowInput(w.events, w.lidar) for w in inputs])
    return [o.data[0] for o in outs]


def evaluate(net: DeltaNetwork, data: list[LoadedSequence], cutoffs=None) -> tuple[MetricReport, MetricReport]:
    """Network and nearest-neighbour LiDAR baseline metrics (meters) over every window."""
    c = net.config
    for s in data:
        H, W = s.inputs[0].events.shape[:2]
        if (H, W) != (c.H, c.W):
            raise DataError(f"{s.name}: resolution {(H, W)} does not match checkpoint {(c.H, c.W)}")
    cutoffs = cutoffs or default_cutoffs(c.max_range)
    ours, base = MetricAccumulator(cutoffs), MetricAccumulator(cutoffs)
    for s in data:
        preds = predict_sequence(net, s.inputs)
        last = None
        for w, p in zip(s.inputs, preds):
            if w.lidar is not None:
                last = w.lidar
            if w.gt is None:
                continue
            gt_m = w.gt * s.max_range
            ours.add(p * s.max_range, gt_m)
            fill = baseline_interpolate(last) if last is not None and np.any(last > 0) else np.zeros_like(w.gt)
            base.add(fill * s.max_range, gt_m)
    return ours.report(), base.report()


def infer(net: DeltaNetwork, seq: LoadedSequence, out_dir) -> list[np.ndarray]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    preds = predict_sequence(net, seq.inputs)
    for t, (w, p) in enumerate(zip(seq.inputs, preds)):
        formats.write_depth(out / f"pred_{t}.df32", p)
        formats.write_pgm(out / f"pred_{t}.pgm", formats.depth_to_gray(p))
        if w.gt is not None:
            formats.write_pgm(out / f"error_{t}.pgm", formats.error_to_gray(p, w.gt))
    return preds
