"""Learned symbol-level precoder (multi-scale CNN) and shared message decoder."""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .channel import ChannelRealization
from .config import SystemConfig

LEAKY_SLOPE = 0.3
BN_EPS = 1e-3
BN_MOMENTUM = 0.01  # running stats keep 0.99 of their previous value


class DegenerateOutputError(RuntimeError):
    """Raised when the precoder emits an (unnormalizable) all-zero signal."""


def preprocess_fuse(h: ChannelRealization | np.ndarray, s: np.ndarray) -> np.ndarray:
    """Fuse symbol phases into the channel phases: out[n,k] = angle(H[n,k]) + angle(s_k).

    Radians, unwrapped; the sum is deliberately not reduced mod 2*pi.
    """
    matrix = h.matrix if isinstance(h, ChannelRealization) else np.asarray(h)
    s = np.asarray(s)
    if matrix.shape[1] != s.shape[0]:
        raise ValueError("channel and symbol user counts differ")
    return np.angle(matrix) + np.angle(s)[None, :]


class ConvBlock(nn.Module):
    """Four conv layers: one (1,1) then three (1,d), each LeakyReLU then batch norm."""

    def __init__(self, in_channels: int, d: int, filters: int = 8):
        super().__init__()
        layers = []
        ch = in_channels
        for i in range(4):
            width = 1 if i == 0 else d
            layers.append(nn.Conv2d(ch, filters, kernel_size=(1, width),
                                    stride=1, padding=(0, width // 2)))
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
            layers.append(nn.BatchNorm2d(filters, eps=BN_EPS, momentum=BN_MOMENTUM))
            ch = filters
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class PrecoderNet(nn.Module):
    """Maps (channel, symbol vector) to the 2*N_t real transmit signal.

    Input planes are laid out [channels, K, N_t] so the (1,d) kernels slide
    along the antenna axis. Plane 0 carries the symbol-fused channel phases;
    plane 1 (optional) carries the channel amplitudes. The symbol phases also
    enter through a fully connected side path whose output is concatenated
    with the flattened CNN features.
    """

    # Branch b applies this chain of (1,d) block widths, widest first.
    BRANCH_WIDTHS = ((1,), (3, 1), (5, 3, 1), (7, 3, 1))

    def __init__(self, num_antennas: int, num_users: int, use_amplitude: bool = True):
        super().__init__()
        self.num_antennas = num_antennas
        self.num_users = num_users
        self.use_amplitude = use_amplitude
        in_ch = 2 if use_amplitude else 1
        self.branches = nn.ModuleList()
        for widths in self.BRANCH_WIDTHS:
            blocks = []
            ch = in_ch
            for d in widths:
                blocks.append(ConvBlock(ch, d))
                ch = 8
            self.branches.append(nn.Sequential(*blocks))
        feat = 8 * len(self.BRANCH_WIDTHS) * num_users * num_antennas
        self.symbol_fc = nn.Linear(num_users, 32)
        self.fc5 = nn.Linear(feat + 32, 256)
        self.fc6 = nn.Linear(256, 2 * num_antennas)
        self.act = nn.LeakyReLU(LEAKY_SLOPE)

    def fuse_inputs(self, h_re: torch.Tensor, h_im: torch.Tensor,
                    s_angle: torch.Tensor) -> torch.Tensor:
        """Build the CNN input [B, C, K, N_t] from channel parts and symbol phases."""
        phase = torch.atan2(h_im, h_re) + s_angle.unsqueeze(1)  # [B, N_t, K]
        planes = [phase.transpose(1, 2)]
        if self.use_amplitude:
            amp = torch.sqrt(h_re ** 2 + h_im ** 2)
            planes.append(amp.transpose(1, 2))
        return torch.stack(planes, dim=1)

    def forward(self, h_re: torch.Tensor, h_im: torch.Tensor,
                s_angle: torch.Tensor) -> torch.Tensor:
        """Raw (unnormalized) transmit signal, [B, 2*N_t] as (real block, imag block)."""
        x = self.fuse_inputs(h_re, h_im, s_angle)
        feats = torch.cat([branch(x) for branch in self.branches], dim=1)
        feats = feats.flatten(1)
        side = self.act(self.symbol_fc(s_angle))
        merged = torch.cat([feats, side], dim=1)
        return self.fc6(self.act(self.fc5(merged)))


class DecoderNet(nn.Module):
    """Shared per-user decode block: (received sample, own channel) -> message logits."""

    def __init__(self, num_antennas: int, max_order: int):
        super().__init__()
        self.num_antennas = num_antennas
        self.max_order = max_order
        self.net = nn.Sequential(
            nn.Linear(2 + 2 * num_antennas, 128), nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(128, 64), nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(64, 32), nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(32, 2 ** max_order),
        )

    def forward(self, inp: torch.Tensor) -> torch.Tensor:
        """Message logits [B, 2^B]; softmax is applied by callers."""
        return self.net(inp)


@dataclass
class DetectionOutput:
    """Per-user decode result: full probability vector plus the decoded message."""

    probs: np.ndarray   # (2^B,), on the simplex
    decoded: int        # 1-indexed, within 1..2^M


def build_transmitter(cfg: SystemConfig, seed: int) -> PrecoderNet:
    """Seeded construction so identical seeds give identical initial weights."""
    torch.manual_seed(seed)
    return PrecoderNet(cfg.num_antennas, cfg.num_users, cfg.precoder_uses_amplitude)


def build_decoder(cfg: SystemConfig, seed: int) -> DecoderNet:
    torch.manual_seed(seed)
    return DecoderNet(cfg.num_antennas, cfg.max_order)


def normalize_power(raw: torch.Tensor, power_budget: float) -> torch.Tensor:
    """Scale each row of [B, 2*N_t] so the emitted signal has squared norm P."""
    norm = torch.linalg.vector_norm(raw, dim=1, keepdim=True)
    return raw * (power_budget ** 0.5 / norm)


def precode(net: PrecoderNet, h: ChannelRealization | np.ndarray,
            s: np.ndarray, power_budget: float) -> np.ndarray:
    """Run the transmitter on one (channel, symbol vector); returns x with |x|^2 = P."""
    matrix = h.matrix if isinstance(h, ChannelRealization) else np.asarray(h)
    net.eval()
    with torch.no_grad():
        h_re = torch.as_tensor(matrix.real, dtype=torch.float32).unsqueeze(0)
        h_im = torch.as_tensor(matrix.imag, dtype=torch.float32).unsqueeze(0)
        s_ang = torch.as_tensor(np.angle(s), dtype=torch.float32).unsqueeze(0)
        raw = net(h_re, h_im, s_ang)[0].numpy()
    nt = net.num_antennas
    x = raw[:nt] + 1j * raw[nt:]
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise DegenerateOutputError("precoder produced an all-zero signal")
    return x * (power_budget ** 0.5 / norm)


def decoder_probs(net: DecoderNet, inp: torch.Tensor, floor: float = 0.0) -> torch.Tensor:
    """Softmax message probabilities, optionally floored (for log safety)."""
    probs = torch.softmax(net(inp), dim=-1)
    return probs.clamp_min(floor) if floor > 0 else probs


def pack_decoder_input(h_re: torch.Tensor, h_im: torch.Tensor,
                       r_re: torch.Tensor, r_im: torch.Tensor) -> torch.Tensor:
    """Decoder input rows: (Re r, Im r, Re h block, Im h block)."""
    return torch.cat([r_re.unsqueeze(-1), r_im.unsqueeze(-1), h_re, h_im], dim=-1)


def transmit_batch(net: PrecoderNet, h_re: torch.Tensor, h_im: torch.Tensor,
                   s_angle: torch.Tensor, power_budget: float
                   ) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable batched transmit: returns (x_re, x_im), each [B, N_t],
    with every row normalized to squared norm P."""
    raw = normalize_power(net(h_re, h_im, s_angle), power_budget)
    nt = net.num_antennas
    return raw[:, :nt], raw[:, nt:]


def receive_batch(h_re: torch.Tensor, h_im: torch.Tensor,
                  x_re: torch.Tensor, x_im: torch.Tensor
                  ) -> tuple[torch.Tensor, torch.Tensor]:
    """Noise-free received samples r_k = h_k^H x for all users, [B, K]."""
    r_re = torch.einsum("bnk,bn->bk", h_re, x_re) + torch.einsum("bnk,bn->bk", h_im, x_im)
    r_im = torch.einsum("bnk,bn->bk", h_re, x_im) - torch.einsum("bnk,bn->bk", h_im, x_re)
    return r_re, r_im


def decode_batch_messages(net: DecoderNet, h_re: torch.Tensor, h_im: torch.Tensor,
                          r_re: torch.Tensor, r_im: torch.Tensor,
                          orders: torch.Tensor) -> torch.Tensor:
    """Batched hard decisions, [B, K] 1-indexed; argmax restricted per user to
    the first 2^M_k messages."""
    b, k = r_re.shape
    inp = pack_decoder_input(h_re.transpose(1, 2).reshape(b * k, -1),
                             h_im.transpose(1, 2).reshape(b * k, -1),
                             r_re.reshape(b * k), r_im.reshape(b * k))
    logits = net(inp)
    alphabet = torch.arange(logits.shape[-1], device=logits.device)
    valid = alphabet.unsqueeze(0) < (2 ** orders.reshape(b * k, 1))
    logits = logits.masked_fill(~valid, float("-inf"))
    return (logits.argmax(dim=-1) + 1).reshape(b, k)


def decode(net: DecoderNet, h_k: np.ndarray, r_k: complex, order_bits: int) -> DetectionOutput:
    """Decode one received sample; argmax restricted to the first 2^M messages."""
    h_k = np.asarray(h_k)
    if h_k.shape[0] != net.num_antennas:
        raise ValueError("channel vector length does not match the decoder")
    if order_bits > net.max_order:
        raise ValueError("order_bits exceeds the decoder's maximum order")
    net.eval()
    with torch.no_grad():
        inp = pack_decoder_input(
            torch.as_tensor(h_k.real, dtype=torch.float32).unsqueeze(0),
            torch.as_tensor(h_k.imag, dtype=torch.float32).unsqueeze(0),
            torch.tensor([float(np.real(r_k))]),
            torch.tensor([float(np.imag(r_k))]),
        )
        probs = torch.softmax(net(inp), dim=-1)[0].numpy().astype(np.float64)
    probs = probs / probs.sum()
    decoded = int(np.argmax(probs[: 2 ** order_bits])) + 1  # ties -> smaller index
    return DetectionOutput(probs=probs, decoded=decoded)
