"""Cross-entropy losses, learning-rate schedule, and the three training stages."""

import copy
import csv
import json
import os
from dataclasses import dataclass

import numpy as np
import torch

from . import config as config_mod
from .channel import ChannelRealization
from .config import SystemConfig, TrainConfig
from .checkpoint import save_checkpoint
from .modulation import ModOrderCombo, enumerate_combos
from .order_net import OrderClassifier, build_mop
from .transceiver import (DecoderNet, PrecoderNet, build_decoder,
                          build_transmitter, decode_batch_messages,
                          pack_decoder_input, receive_batch, transmit_batch)

LOG_FLOOR = 1e-12


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass
class MopLabelSet:
    """Best order combo per training channel, by lowest decode cross-entropy."""

    labels: np.ndarray   # int32, (count,), combo indices
    best_ce: np.ndarray  # float64, (count,)

    def save(self, path: str | os.PathLike) -> None:
        np.savez(os.fspath(path), labels=self.labels.astype(np.int32),
                 best_ce=self.best_ce.astype(np.float64))

    @staticmethod
    def load(path: str | os.PathLike) -> "MopLabelSet":
        data = np.load(os.fspath(path))
        return MopLabelSet(data["labels"], data["best_ce"])


def loss_slpd(labels: np.ndarray, probs: np.ndarray) -> float:
    """Batch-mean cross-entropy between padded one-hot labels and decoder
    probabilities; user axes (if present) are averaged within each element."""
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if labels.shape != probs.shape:
        raise ValueError(f"shape mismatch: {labels.shape} vs {probs.shape}")
    ce = -(labels * np.log(np.clip(probs, LOG_FLOOR, None))).sum(axis=-1)
    return float(ce.mean())


def loss_mop(labels: np.ndarray, probs: np.ndarray) -> float:
    """Batch-mean cross-entropy over the combo label space."""
    return loss_slpd(labels, probs)


def lr_schedule(epoch: int, tc: TrainConfig, base: float | None = None) -> float:
    """Step decay: lr_init * lr_decay^(epoch // lr_period)."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return (base if base is not None else tc.lr_init) \
        * tc.lr_decay ** (epoch // tc.lr_period)


def setup_determinism(deterministic: bool) -> None:
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def channels_to_tensors(channels: list[ChannelRealization],
                        dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    mats = np.stack([c.matrix for c in channels])
    return (torch.as_tensor(mats.real, dtype=dtype),
            torch.as_tensor(mats.imag, dtype=dtype))


def sample_uniform_messages(orders: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Uniform 1-indexed messages for per-entry alphabet sizes 2^orders."""
    u = torch.rand(orders.shape, generator=gen)  # [0, 1), so floor < 2^M
    sizes = 2.0 ** orders.to(torch.float32)
    return (u * sizes).long() + 1


def slpd_loss_batch(tx: PrecoderNet, dec: DecoderNet,
                    h_re: torch.Tensor, h_im: torch.Tensor,
                    messages: torch.Tensor, orders: torch.Tensor,
                    power_budget: float, noise_var: torch.Tensor,
                    noise: torch.Tensor) -> torch.Tensor:
    """End-to-end training loss for one minibatch.

    noise is a pre-drawn standard-normal tensor [B, K, 2]; it enters the
    received signal scaled by sqrt(noise_var/2) but carries no gradient.
    """
    s_angle = 2.0 * np.pi * messages.to(h_re.dtype) / (2.0 ** orders.to(h_re.dtype))
    x_re, x_im = transmit_batch(tx, h_re, h_im, s_angle, power_budget)
    r_re, r_im = receive_batch(h_re, h_im, x_re, x_im)
    sigma = torch.sqrt(noise_var / 2.0).reshape(-1, 1).to(h_re.dtype)
    r_re = r_re + sigma * noise[:, :, 0]
    r_im = r_im + sigma * noise[:, :, 1]
    b, k = messages.shape
    inp = pack_decoder_input(h_re.transpose(1, 2).reshape(b * k, -1),
                             h_im.transpose(1, 2).reshape(b * k, -1),
                             r_re.reshape(b * k), r_im.reshape(b * k))
    probs = torch.softmax(dec(inp), dim=-1).clamp_min(LOG_FLOOR)
    picked = probs.gather(1, (messages.reshape(b * k, 1) - 1)).squeeze(1)
    return -torch.log(picked).mean()


def _draw_snr_noise_var(batch: int, tc: TrainConfig, power_budget: float,
                        gen: torch.Generator) -> torch.Tensor:
    lo, hi = tc.snr_range_db
    snr = lo + (hi - lo) * torch.rand(batch, generator=gen)
    return power_budget / 10.0 ** (snr / 10.0)


def _quick_val_ser(tx, dec, h_re, h_im, orders_row: torch.Tensor,
                   power_budget: float, noise_var: float,
                   gen: torch.Generator, draws: int = 4) -> float:
    """Cheap validation SER at one noise level, used only for progress logging."""
    tx.eval()
    dec.eval()
    with torch.no_grad():
        n = h_re.shape[0] * draws
        idx = torch.arange(n) % h_re.shape[0]
        hr, hi = h_re[idx], h_im[idx]
        orders = orders_row.unsqueeze(0).expand(n, -1)
        msgs = sample_uniform_messages(orders, gen)
        s_angle = 2.0 * np.pi * msgs.float() / (2.0 ** orders.float())
        x_re, x_im = transmit_batch(tx, hr, hi, s_angle, power_budget)
        r_re, r_im = receive_batch(hr, hi, x_re, x_im)
        sigma = (noise_var / 2.0) ** 0.5
        r_re = r_re + sigma * torch.randn(r_re.shape, generator=gen)
        r_im = r_im + sigma * torch.randn(r_im.shape, generator=gen)
        decoded = decode_batch_messages(dec, hr, hi, r_re, r_im, orders)
        ser = (decoded != msgs).float().mean().item()
    tx.train()
    dec.train()
    return ser


class RunDirectory:
    """Filesystem layout of one training run: config snapshot, metrics, checkpoints."""

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        os.makedirs(os.path.join(self.path, "checkpoints"), exist_ok=True)
        self._metrics_path = os.path.join(self.path, "metrics.csv")

    def snapshot_config(self, sys_cfg: SystemConfig, train_cfg: TrainConfig) -> None:
        with open(os.path.join(self.path, "config.json"), "w") as fh:
            json.dump(config_mod.snapshot(sys_cfg, train_cfg), fh,
                      indent=2, sort_keys=True)
            fh.write("\n")

    def log_metrics(self, row: dict) -> None:
        exists = os.path.exists(self._metrics_path)
        with open(self._metrics_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "stage", "loss",
                                                    "lr", "val_ser"])
            if not exists:
                writer.writeheader()
            writer.writerow(row)

    def checkpoint_path(self, name: str) -> str:
        return os.path.join(self.path, "checkpoints", name)


def _train_slpd_stage(cfg: SystemConfig, tc: TrainConfig,
                      channels: list[ChannelRealization],
                      tx: PrecoderNet, dec: DecoderNet,
                      seed: int, stage: int, epochs: int,
                      combos: list[ModOrderCombo] | None,
                      run_dir: RunDirectory | None,
                      val_channels: list[ChannelRealization] | None) -> None:
    """Shared train loop for stages 1 (fixed QPSK) and 2 (random combos)."""
    gen = torch.Generator().manual_seed(seed)
    h_re, h_im = channels_to_tensors(channels)
    count = len(channels)
    k = cfg.num_users
    if combos is not None:
        order_table = torch.tensor([c.orders for c in combos], dtype=torch.long)
    else:
        fixed_orders = torch.full((k,), 2, dtype=torch.long)  # QPSK pre-training

    val_hr = val_him = None
    if val_channels:
        val_hr, val_him = channels_to_tensors(val_channels)
    val_noise = cfg.power_budget / 10.0 ** (sum(tc.snr_range_db) / 2.0 / 10.0)

    base_lr = tc.lr_init
    if stage == 2 and tc.lr_init_stage2 is not None:
        base_lr = tc.lr_init_stage2
    opt = torch.optim.Adam(list(tx.parameters()) + list(dec.parameters()),
                           lr=base_lr, betas=(0.9, 0.999), eps=1e-8)
    tx.train()
    dec.train()
    best_ser = float("inf")
    samples = count * tc.draws_per_channel
    for epoch in range(epochs):
        lr = lr_schedule(epoch, tc, base=base_lr)
        for group in opt.param_groups:
            group["lr"] = lr
        perm = torch.randperm(samples, generator=gen) % count
        epoch_loss = 0.0
        nbatches = 0
        for start in range(0, samples, tc.minibatch):
            idx = perm[start:start + tc.minibatch]
            b = idx.shape[0]
            if combos is not None:
                combo_idx = torch.randint(len(combos), (b,), generator=gen)
                orders = order_table[combo_idx]
            else:
                orders = fixed_orders.unsqueeze(0).expand(b, -1)
            messages = sample_uniform_messages(orders, gen)
            noise_var = _draw_snr_noise_var(b, tc, cfg.power_budget, gen)
            noise = torch.randn((b, k, 2), generator=gen)
            loss = slpd_loss_batch(tx, dec, h_re[idx], h_im[idx], messages,
                                   orders, cfg.power_budget, noise_var, noise)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"stage {stage}: non-finite loss at epoch {epoch}, "
                    f"batch {nbatches} (lr={lr:g})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            nbatches += 1

        val_ser = float("nan")
        if val_hr is not None:
            orders_row = (fixed_orders if combos is None
                          else order_table[epoch % len(combos)])
            val_ser = _quick_val_ser(tx, dec, val_hr, val_him, orders_row,
                                     cfg.power_budget, val_noise, gen)
        if run_dir is not None:
            run_dir.log_metrics({"epoch": epoch, "stage": stage,
                                 "loss": epoch_loss / max(nbatches, 1),
                                 "lr": lr, "val_ser": val_ser})
            at_boundary = (epoch + 1) % tc.lr_period == 0
            if at_boundary or epoch == epochs - 1:
                tag = "final" if epoch == epochs - 1 else f"ep{epoch + 1}"
                save_checkpoint(run_dir.checkpoint_path(f"stage{stage}_tx_{tag}"), tx)
                save_checkpoint(run_dir.checkpoint_path(f"stage{stage}_dec_{tag}"), dec)
            if val_hr is not None and val_ser <= best_ser:
                best_ser = val_ser
                save_checkpoint(run_dir.checkpoint_path(f"stage{stage}_tx_best"), tx)
                save_checkpoint(run_dir.checkpoint_path(f"stage{stage}_dec_best"), dec)
    tx.eval()
    dec.eval()


def train_stage1(cfg: SystemConfig, tc: TrainConfig,
                 channels: list[ChannelRealization], seed: int,
                 run_dir: RunDirectory | None = None,
                 val_channels: list[ChannelRealization] | None = None,
                 epochs: int | None = None) -> tuple[PrecoderNet, DecoderNet]:
    """Pre-train transmitter and decoder end to end with all users on QPSK."""
    if not channels:
        raise ValueError("training channel set is empty")
    setup_determinism(tc.deterministic)
    tx = build_transmitter(cfg, seed)
    dec = build_decoder(cfg, seed + 1)
    _train_slpd_stage(cfg, tc, channels, tx, dec, seed + 2, stage=1,
                      epochs=epochs or tc.epochs_stage1, combos=None,
                      run_dir=run_dir, val_channels=val_channels)
    return tx, dec


def train_stage2(cfg: SystemConfig, tc: TrainConfig,
                 channels: list[ChannelRealization],
                 init: tuple[PrecoderNet, DecoderNet], seed: int,
                 run_dir: RunDirectory | None = None,
                 val_channels: list[ChannelRealization] | None = None,
                 epochs: int | None = None
                 ) -> tuple[PrecoderNet, DecoderNet, MopLabelSet]:
    """Fine-tune with uniformly random admissible combos, then score every combo
    on every training channel to produce classifier labels (argmin cross-entropy,
    ties toward the smaller combo index)."""
    if not channels:
        raise ValueError("training channel set is empty")
    setup_determinism(tc.deterministic)
    tx, dec = init
    combos = enumerate_combos(cfg.num_users, cfg.max_order, cfg.rate_req)
    if not combos:
        raise ValueError("no admissible modulation-order combination exists")
    _train_slpd_stage(cfg, tc, channels, tx, dec, seed, stage=2,
                      epochs=epochs or tc.epochs_stage2, combos=combos,
                      run_dir=run_dir, val_channels=val_channels)
    labels = generate_labels(cfg, tc, channels, tx, dec, combos, seed + 1)
    if run_dir is not None:
        labels.save(os.path.join(run_dir.path, "mop_labels.npz"))
    return tx, dec, labels


def generate_labels(cfg: SystemConfig, tc: TrainConfig,
                    channels: list[ChannelRealization],
                    tx: PrecoderNet, dec: DecoderNet,
                    combos: list[ModOrderCombo], seed: int,
                    chunk: int = 512) -> MopLabelSet:
    """Average decode cross-entropy of every combo on every channel over
    label_eval_draws fresh (message, SNR, noise) draws; label = argmin combo."""
    gen = torch.Generator().manual_seed(seed)
    h_re, h_im = channels_to_tensors(channels)
    count = len(channels)
    e = tc.label_eval_draws
    k = cfg.num_users
    ce = np.zeros((count, len(combos)))
    tx.eval()
    dec.eval()
    with torch.no_grad():
        for ci, combo in enumerate(combos):
            orders_row = torch.tensor(combo.orders, dtype=torch.long)
            for start in range(0, count, chunk):
                idx = torch.arange(start, min(start + chunk, count))
                rep = idx.repeat_interleave(e)
                b = rep.shape[0]
                orders = orders_row.unsqueeze(0).expand(b, -1)
                messages = sample_uniform_messages(orders, gen)
                noise_var = _draw_snr_noise_var(b, tc, cfg.power_budget, gen)
                noise = torch.randn((b, k, 2), generator=gen)
                s_angle = 2.0 * np.pi * messages.float() / (2.0 ** orders.float())
                x_re, x_im = transmit_batch(tx, h_re[rep], h_im[rep],
                                            s_angle, cfg.power_budget)
                r_re, r_im = receive_batch(h_re[rep], h_im[rep], x_re, x_im)
                sigma = torch.sqrt(noise_var / 2.0).reshape(-1, 1)
                r_re = r_re + sigma * noise[:, :, 0]
                r_im = r_im + sigma * noise[:, :, 1]
                inp = pack_decoder_input(h_re[rep].transpose(1, 2).reshape(b * k, -1),
                                         h_im[rep].transpose(1, 2).reshape(b * k, -1),
                                         r_re.reshape(b * k), r_im.reshape(b * k))
                probs = torch.softmax(dec(inp), dim=-1).clamp_min(LOG_FLOOR)
                picked = probs.gather(1, (messages.reshape(b * k, 1) - 1)).squeeze(1)
                sample_ce = -torch.log(picked).reshape(b, k).mean(dim=1)
                ce[idx.numpy(), ci] = (sample_ce.reshape(-1, e).mean(dim=1)
                                       .double().numpy())
    labels = ce.argmin(axis=1).astype(np.int32)  # argmin ties -> smaller index
    return MopLabelSet(labels=labels, best_ce=ce.min(axis=1))


def train_stage3(cfg: SystemConfig, tc: TrainConfig,
                 channels: list[ChannelRealization], labels: MopLabelSet,
                 seed: int, run_dir: RunDirectory | None = None,
                 test_channels: list[ChannelRealization] | None = None,
                 test_labels: MopLabelSet | None = None,
                 epochs: int | None = None) -> tuple[OrderClassifier, dict]:
    """Supervised combo classification from CSI using stage-II labels."""
    if len(labels.labels) != len(channels):
        raise ValueError("labels must cover the training set")
    setup_determinism(tc.deterministic)
    combos = enumerate_combos(cfg.num_users, cfg.max_order, cfg.rate_req)
    net = build_mop(cfg, len(combos), seed, tc.dropout_rate)
    gen = torch.Generator().manual_seed(seed + 1)
    h_re, h_im = channels_to_tensors(channels)
    x_all = OrderClassifier.make_input(h_re, h_im)
    y_all = torch.as_tensor(labels.labels, dtype=torch.long)
    opt = torch.optim.Adam(net.parameters(), lr=tc.lr_init,
                           betas=(0.9, 0.999), eps=1e-8)
    epochs = epochs or tc.epochs_stage3

    def _eval_accuracy(x, y):
        net.eval()
        with torch.no_grad():
            pred = torch.cat([net(x[s:s + 2000]).argmax(dim=-1)
                              for s in range(0, x.shape[0], 2000)])
        net.train()
        return float((pred == y).float().mean())

    period = tc.lr_period_stage3 or tc.lr_period
    best_acc = -1.0
    best_state = None
    best_epoch = -1
    net.train()
    for epoch in range(epochs):
        lr = tc.lr_init * tc.lr_decay ** (epoch // period)
        for group in opt.param_groups:
            group["lr"] = lr
        perm = torch.randperm(len(channels), generator=gen)
        epoch_loss = 0.0
        nbatches = 0
        for start in range(0, len(channels), tc.minibatch):
            idx = perm[start:start + tc.minibatch]
            if idx.shape[0] < 2:
                continue  # batch norm needs at least two rows
            probs = torch.softmax(net(x_all[idx]), dim=-1).clamp_min(LOG_FLOOR)
            picked = probs.gather(1, y_all[idx].unsqueeze(1)).squeeze(1)
            loss = -torch.log(picked).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"stage 3: non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            nbatches += 1
        # classification accuracy is noisy across epochs here (the eval-mode
        # batch norm statistics trail the weights), so keep the best epoch
        acc = _eval_accuracy(x_all, y_all)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())
        if run_dir is not None:
            run_dir.log_metrics({"epoch": epoch, "stage": 3,
                                 "loss": epoch_loss / max(nbatches, 1),
                                 "lr": lr, "val_ser": float("nan")})
    net.load_state_dict(best_state)
    net.eval()

    def _accuracy(x, y):
        with torch.no_grad():
            pred = torch.cat([net(x[s:s + 2000]).argmax(dim=-1)
                              for s in range(0, x.shape[0], 2000)])
        return float((pred == y).float().mean())

    report = {"train_accuracy": _accuracy(x_all, y_all),
              "best_epoch": best_epoch}
    if test_channels is not None and test_labels is not None:
        t_re, t_im = channels_to_tensors(test_channels)
        report["test_accuracy"] = _accuracy(
            OrderClassifier.make_input(t_re, t_im),
            torch.as_tensor(test_labels.labels, dtype=torch.long))
    if run_dir is not None:
        save_checkpoint(run_dir.checkpoint_path("stage3_mop_final"), net)
        with open(os.path.join(run_dir.path, "stage3_report.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return net, report
