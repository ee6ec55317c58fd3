"""Monte Carlo SER estimation, top-k adaptive-order evaluation, constellations."""

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats

from .baselines import ci_slp_precode, psk_phase_detect_array, zf_precode
from .channel import ChannelRealization
from .config import SystemConfig
from .modulation import ModOrderCombo, enumerate_combos
from .order_net import OrderClassifier, predict_orders
from .training import MopLabelSet
from .transceiver import (DecoderNet, PrecoderNet, decode_batch_messages,
                          receive_batch, transmit_batch)


def binomial_ci(errors: int, trials: int, confidence: float = 0.95
                ) -> tuple[float, float]:
    """Two-sided Clopper-Pearson interval for an error probability."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    alpha = 1.0 - confidence
    lo = 0.0 if errors == 0 else float(stats.beta.ppf(alpha / 2, errors,
                                                      trials - errors + 1))
    hi = 1.0 if errors == trials else float(stats.beta.ppf(1 - alpha / 2,
                                                           errors + 1,
                                                           trials - errors))
    return lo, hi


@dataclass
class SerPoint:
    """SER estimate at one SNR point with confidence intervals."""

    snr_db: float
    per_user_ser: np.ndarray
    per_user_errors: np.ndarray
    trials: int
    avg_ser: float = field(init=False)
    ci_low: float = field(init=False)
    ci_high: float = field(init=False)

    def __post_init__(self):
        self.avg_ser = float(np.mean(self.per_user_ser))
        total_errors = int(self.per_user_errors.sum())
        total_trials = self.trials * len(self.per_user_ser)
        self.ci_low, self.ci_high = binomial_ci(total_errors, total_trials)


class LearnedSystem:
    """Learned transmitter + learned decoder behind the common interface."""

    name = "learned"

    def __init__(self, tx: PrecoderNet, dec: DecoderNet, cfg: SystemConfig):
        self.tx = tx
        self.dec = dec
        self.cfg = cfg
        tx.eval()
        dec.eval()

    def transmit(self, h: ChannelRealization, messages: np.ndarray,
                 orders: np.ndarray) -> np.ndarray:
        """Noise-free received samples for message rows [n, K] -> complex [n, K]."""
        with torch.no_grad():
            n = messages.shape[0]
            h_re = torch.as_tensor(h.matrix.real, dtype=torch.float32)
            h_re = h_re.unsqueeze(0).expand(n, -1, -1)
            h_im = torch.as_tensor(h.matrix.imag, dtype=torch.float32)
            h_im = h_im.unsqueeze(0).expand(n, -1, -1)
            m = torch.as_tensor(messages, dtype=torch.float32)
            o = torch.as_tensor(np.broadcast_to(orders, messages.shape).copy(),
                                dtype=torch.float32)
            s_angle = 2.0 * np.pi * m / (2.0 ** o)
            x_re, x_im = transmit_batch(self.tx, h_re, h_im, s_angle,
                                        self.cfg.power_budget)
            r_re, r_im = receive_batch(h_re, h_im, x_re, x_im)
            return (r_re + 1j * r_im).numpy()

    def detect(self, h: ChannelRealization, received: np.ndarray,
               orders: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            n = received.shape[0]
            h_re = torch.as_tensor(h.matrix.real, dtype=torch.float32)
            h_re = h_re.unsqueeze(0).expand(n, -1, -1)
            h_im = torch.as_tensor(h.matrix.imag, dtype=torch.float32)
            h_im = h_im.unsqueeze(0).expand(n, -1, -1)
            o = torch.as_tensor(np.broadcast_to(orders, received.shape).copy(),
                                dtype=torch.long)
            decoded = decode_batch_messages(
                self.dec, h_re, h_im,
                torch.as_tensor(received.real, dtype=torch.float32),
                torch.as_tensor(received.imag, dtype=torch.float32), o)
            return decoded.numpy()


class _ClassicalSystem:
    """Shared phase detection for the classical precoders."""

    def detect(self, h: ChannelRealization, received: np.ndarray,
               orders: np.ndarray) -> np.ndarray:
        out = np.empty(received.shape, dtype=np.int64)
        for k, m in enumerate(np.asarray(orders)):
            out[:, k] = psk_phase_detect_array(received[:, k], int(m))
        return out


class ZfSystem(_ClassicalSystem):
    """Zero-forcing block-level precoder with per-slot power rescaling."""

    name = "zf"

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg

    def transmit(self, h: ChannelRealization, messages: np.ndarray,
                 orders: np.ndarray) -> np.ndarray:
        orders = np.broadcast_to(orders, messages.shape)
        symbols = np.exp(2j * np.pi * messages / 2.0 ** orders)
        out = np.empty(messages.shape, dtype=complex)
        for i in range(messages.shape[0]):
            x = zf_precode(h, symbols[i], self.cfg.power_budget)
            out[i] = h.matrix.conj().T @ x
        return out


class CiSlpSystem(_ClassicalSystem):
    """Constructive-interference SLP; solves are cached per message tuple."""

    name = "ci-slp"

    def __init__(self, cfg: SystemConfig, tol: float = 1e-6):
        self.cfg = cfg
        self.tol = tol
        self._cache: dict = {}

    def transmit(self, h: ChannelRealization, messages: np.ndarray,
                 orders: np.ndarray) -> np.ndarray:
        orders = np.asarray(orders)
        order_key = tuple(int(m) for m in orders)
        h_key = id(h)
        out = np.empty(messages.shape, dtype=complex)
        for i in range(messages.shape[0]):
            key = (h_key, order_key, tuple(int(m) for m in messages[i]))
            if key not in self._cache:
                symbols = np.exp(2j * np.pi * messages[i] / 2.0 ** orders)
                x = ci_slp_precode(h, symbols, orders, self.cfg.power_budget,
                                   self.tol)
                self._cache[key] = h.matrix.conj().T @ x
            out[i] = self._cache[key]
        return out


def monte_carlo_ser(system, channels: list[ChannelRealization],
                    combo: ModOrderCombo | list[ModOrderCombo],
                    snr_db: float, trials: int, seed: int,
                    min_errors: int = 100, max_trials: int = 10_000_000
                    ) -> SerPoint:
    """Empirical per-user SER at one SNR, averaged across the given channels.

    Trials are spread evenly over channels and extended (up to max_trials)
    until at least min_errors total symbol errors are observed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    combos = combo if isinstance(combo, list) else [combo] * len(channels)
    if len(combos) != len(channels):
        raise ValueError("need one combo per channel")
    k = len(combos[0].orders)
    power = system.cfg.power_budget
    noise_var = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    errors = np.zeros(k, dtype=np.int64)
    done = 0
    batch = trials
    while True:
        per_channel = int(np.ceil(batch / len(channels)))
        for ch, cb in zip(channels, combos):
            orders = np.asarray(cb.orders)
            sizes = 2 ** orders
            messages = rng.integers(1, sizes + 1, size=(per_channel, k))
            r0 = system.transmit(ch, messages, orders)
            noise = np.sqrt(noise_var / 2.0) * (
                rng.standard_normal(r0.shape) + 1j * rng.standard_normal(r0.shape))
            decoded = system.detect(ch, r0 + noise, orders)
            errors += (decoded != messages).sum(axis=0)
        done += per_channel * len(channels)
        if errors.sum() >= min_errors or done >= max_trials:
            break
        batch = min(done, max_trials - done)
    return SerPoint(snr_db=snr_db, per_user_ser=errors / done,
                    per_user_errors=errors, trials=done)


@dataclass
class TopkReport:
    """Genie-aided best-of-k evaluation of the adaptive-order system."""

    k: int
    snr_db: float
    avg_ser: float
    per_channel_ser: np.ndarray
    accuracy: float | None
    trials_per_channel: int


def evaluate_topk(mop: OrderClassifier, system: LearnedSystem,
                  channels: list[ChannelRealization], k: int,
                  snr_db: float, trials: int, seed: int,
                  labels: MopLabelSet | None = None) -> TopkReport:
    """Per channel, measure SER for each of the k most likely combos and keep
    the minimum (genie-aided). Seeds derive from (channel, combo index) so
    reports for nested k share each combo's measurement exactly."""
    cfg = system.cfg
    combos = enumerate_combos(cfg.num_users, cfg.max_order, cfg.rate_req)
    if not 1 <= k <= len(combos):
        raise ValueError(f"k must be within 1..{len(combos)}")
    noise_var = cfg.power_budget / 10.0 ** (snr_db / 10.0)
    per_channel = np.empty(len(channels))
    hits = 0
    for ci, ch in enumerate(channels):
        out = predict_orders(mop, ch, k)
        best = np.inf
        for combo_idx in out.topk:
            combo = combos[combo_idx]
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, ci, combo_idx]))
            orders = np.asarray(combo.orders)
            messages = rng.integers(1, 2 ** orders + 1,
                                    size=(trials, cfg.num_users))
            r0 = system.transmit(ch, messages, orders)
            noise = np.sqrt(noise_var / 2.0) * (
                rng.standard_normal(r0.shape) + 1j * rng.standard_normal(r0.shape))
            decoded = system.detect(ch, r0 + noise, orders)
            ser = float((decoded != messages).mean())
            best = min(best, ser)
        per_channel[ci] = best
        if labels is not None and int(labels.labels[ci]) in out.topk:
            hits += 1
    accuracy = hits / len(channels) if labels is not None else None
    return TopkReport(k=k, snr_db=snr_db, avg_ser=float(per_channel.mean()),
                      per_channel_ser=per_channel, accuracy=accuracy,
                      trials_per_channel=trials)


def export_constellation(system, h: ChannelRealization, combo: ModOrderCombo,
                         num_symbols: int, seed: int) -> list[dict]:
    """Noise-free received points tagged by message; rows ready for CSV."""
    if num_symbols < 1:
        raise ValueError("num_symbols must be >= 1")
    rng = np.random.default_rng(seed)
    orders = np.asarray(combo.orders)
    messages = rng.integers(1, 2 ** orders + 1,
                            size=(num_symbols, len(combo.orders)))
    r0 = system.transmit(h, messages, orders)
    rows = []
    for i in range(num_symbols):
        for k in range(len(combo.orders)):
            rows.append({"user": k + 1, "re": float(r0[i, k].real),
                         "im": float(r0[i, k].imag),
                         "message": int(messages[i, k]),
                         "order_bits": int(orders[k])})
    return rows


def write_ser_csv(path: str | os.PathLike, points: list[SerPoint]) -> None:
    """ser_curve.csv: snr_db, user, ser, ci_low, ci_high, trials."""
    with open(os.fspath(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snr_db", "user", "ser", "ci_low", "ci_high", "trials"])
        for p in points:
            for k, ser in enumerate(p.per_user_ser):
                lo, hi = binomial_ci(int(p.per_user_errors[k]), p.trials)
                writer.writerow([p.snr_db, k + 1, f"{ser:.8g}",
                                 f"{lo:.8g}", f"{hi:.8g}", p.trials])
            writer.writerow([p.snr_db, "avg", f"{p.avg_ser:.8g}",
                             f"{p.ci_low:.8g}", f"{p.ci_high:.8g}", p.trials])


def write_constellation_csv(path: str | os.PathLike, rows: list[dict]) -> None:
    with open(os.fspath(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["user", "re", "im",
                                                "message", "order_bits"])
        writer.writeheader()
        writer.writerows(rows)
