"""CNN classifier that selects the modulation-order combination from CSI."""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .channel import ChannelRealization
from .config import SystemConfig
from .transceiver import BN_EPS, BN_MOMENTUM


@dataclass
class MopOutput:
    """Classifier output: combo probabilities and the top-k combo indices."""

    probs: np.ndarray        # (N_m,), on the simplex
    topk: list[int]          # descending probability, ties toward smaller index


class OrderClassifier(nn.Module):
    """Input planes [2, K, N_t] (amplitude, phase); output one of N_m combos.

    Three (1,1) conv layers with batch norm, then FC 32 (with dropout),
    FC N_m (with batch norm), and a batch-normed linear head whose softmax
    gives the combo distribution. Batch norm sits before the softmax so the
    output stays a probability vector.
    """

    def __init__(self, num_antennas: int, num_users: int, num_combos: int,
                 dropout_rate: float = 0.5):
        super().__init__()
        self.num_antennas = num_antennas
        self.num_users = num_users
        self.num_combos = num_combos
        convs = []
        ch = 2
        for _ in range(3):
            convs += [nn.Conv2d(ch, 4, kernel_size=(1, 1)), nn.ReLU(),
                      nn.BatchNorm2d(4, eps=BN_EPS, momentum=BN_MOMENTUM)]
            ch = 4
        self.convs = nn.Sequential(*convs)
        flat = 4 * num_users * num_antennas
        self.fc1 = nn.Sequential(nn.Linear(flat, 32), nn.ReLU(),
                                 nn.Dropout(dropout_rate))
        self.fc2 = nn.Sequential(nn.Linear(32, num_combos), nn.ReLU(),
                                 nn.BatchNorm1d(num_combos, eps=BN_EPS,
                                                momentum=BN_MOMENTUM))
        self.fc3 = nn.Sequential(nn.Linear(num_combos, num_combos),
                                 nn.BatchNorm1d(num_combos, eps=BN_EPS,
                                                momentum=BN_MOMENTUM))

    @staticmethod
    def make_input(h_re: torch.Tensor, h_im: torch.Tensor) -> torch.Tensor:
        """[B, N_t, K] channel parts -> [B, 2, K, N_t] amplitude/phase planes."""
        amp = torch.sqrt(h_re ** 2 + h_im ** 2).transpose(1, 2)
        phase = torch.atan2(h_im, h_re).transpose(1, 2)
        return torch.stack([amp, phase], dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-softmax combo scores (already batch-normed)."""
        feats = self.convs(x).flatten(1)
        return self.fc3(self.fc2(self.fc1(feats)))


def build_mop(cfg: SystemConfig, num_combos: int, seed: int,
              dropout_rate: float = 0.5) -> OrderClassifier:
    """Seeded construction of the order classifier."""
    if num_combos < 1:
        raise ValueError("num_combos must be >= 1")
    torch.manual_seed(seed)
    return OrderClassifier(cfg.num_antennas, cfg.num_users, num_combos, dropout_rate)


def predict_orders(net: OrderClassifier, h: ChannelRealization | np.ndarray,
                   k: int) -> MopOutput:
    """Combo probabilities for one channel plus the k most likely combo indices."""
    if not 1 <= k <= net.num_combos:
        raise ValueError(f"k must be within 1..{net.num_combos}")
    matrix = h.matrix if isinstance(h, ChannelRealization) else np.asarray(h)
    net.eval()
    with torch.no_grad():
        h_re = torch.as_tensor(matrix.real, dtype=torch.float32).unsqueeze(0)
        h_im = torch.as_tensor(matrix.imag, dtype=torch.float32).unsqueeze(0)
        logits = net(net.make_input(h_re, h_im))
        probs = torch.softmax(logits, dim=-1)[0].numpy().astype(np.float64)
    probs = probs / probs.sum()
    return MopOutput(probs=probs, topk=topk_indices(probs, k))


def topk_indices(probs: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest probabilities; ties broken toward smaller index."""
    order = np.argsort(-probs, kind="stable")
    return [int(i) for i in order[:k]]
