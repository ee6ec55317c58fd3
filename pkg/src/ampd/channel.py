"""Limited-scattering MU-MISO channel generation and the noisy downlink."""

import json
import os
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

DATASET_VERSION = 1


@dataclass
class ChannelRealization:
    """One downlink channel: matrix columns are per-user channel vectors.

    Each column is a single scatter path: path_gains[k] * steering(path_angles[k]).
    """

    matrix: np.ndarray       # complex, (N_t, K)
    path_angles: np.ndarray  # degrees, (K,)
    path_gains: np.ndarray   # complex, (K,)


def steering_vector(angle_deg: float, num_antennas: int) -> np.ndarray:
    """Half-wavelength ULA response: element n is exp(j*pi*n*sin(angle))."""
    if num_antennas < 1:
        raise ValueError("num_antennas must be >= 1")
    n = np.arange(num_antennas)
    return np.exp(1j * np.pi * n * np.sin(np.deg2rad(angle_deg)))


def generate_channels(cfg: SystemConfig, count: int, seed: int) -> list[ChannelRealization]:
    """Draw `count` single-path channels, reproducibly from `seed`.

    Per user k: angle uniform in [center_k - spread, center_k + spread],
    gain circularly-symmetric complex standard normal.
    """
    if count <= 0:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    centers = np.asarray(cfg.user_center_angles, dtype=float)
    spread = cfg.angle_spread_deg
    out = []
    for _ in range(count):
        angles = rng.uniform(centers - spread, centers + spread)
        gains = (rng.standard_normal(cfg.num_users)
                 + 1j * rng.standard_normal(cfg.num_users)) / np.sqrt(2.0)
        cols = [gains[k] * steering_vector(angles[k], cfg.num_antennas)
                for k in range(cfg.num_users)]
        out.append(ChannelRealization(np.stack(cols, axis=1), angles, gains))
    return out


def apply_channel(h: ChannelRealization | np.ndarray, x: np.ndarray,
                  noise_var: float, seed: int | np.random.Generator) -> np.ndarray:
    """Received samples r_k = h_k^H x + n_k with complex AWGN of variance noise_var.

    noise_var = 0 gives the noise-free received vector (constellation plots).
    """
    matrix = h.matrix if isinstance(h, ChannelRealization) else np.asarray(h)
    x = np.asarray(x)
    if matrix.shape[0] != x.shape[0]:
        raise ValueError(f"dimension mismatch: H is {matrix.shape}, x has {x.shape}")
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    r = matrix.conj().T @ x
    if noise_var > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        k = r.shape[0]
        r = r + np.sqrt(noise_var / 2.0) * (rng.standard_normal(k)
                                            + 1j * rng.standard_normal(k))
    return r


def snr_to_noise_var(snr_db: float, power_budget: float) -> float:
    """Total complex noise variance for transmit SNR = 10*log10(P / sigma^2)."""
    if power_budget <= 0:
        raise ValueError("power_budget must be positive")
    return power_budget / 10.0 ** (snr_db / 10.0)


def channels_as_array(channels: list[ChannelRealization]) -> np.ndarray:
    """Stack realizations into a real array [count, 2, N_t, K] (re, im)."""
    mats = np.stack([c.matrix for c in channels])
    return np.stack([mats.real, mats.imag], axis=1).astype(np.float64)


def save_dataset(path: str | os.PathLike, channels: list[ChannelRealization],
                 cfg: SystemConfig, seed: int, splits: dict | None = None) -> None:
    """Write the npz channel container plus a JSON sidecar manifest."""
    path = os.fspath(path)
    gains = np.stack([c.path_gains for c in channels])
    np.savez(
        path,
        channels=channels_as_array(channels),
        path_angles=np.stack([c.path_angles for c in channels]),
        path_gains=np.stack([gains.real, gains.imag], axis=1),
    )
    manifest = {
        "version": DATASET_VERSION,
        "count": len(channels),
        "seed": seed,
        "system": {
            "num_antennas": cfg.num_antennas,
            "num_users": cfg.num_users,
            "max_order": cfg.max_order,
            "rate_req": cfg.rate_req,
            "power_budget": cfg.power_budget,
            "snr_range_db": list(cfg.snr_range_db),
            "user_center_angles": list(cfg.user_center_angles),
            "angle_spread_deg": cfg.angle_spread_deg,
        },
    }
    if splits is not None:
        manifest["splits"] = splits
    manifest_path = _manifest_path(path)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path: str | os.PathLike) -> tuple[list[ChannelRealization], dict]:
    """Read back a channel dataset and its manifest."""
    path = os.fspath(path)
    if not path.endswith(".npz"):
        path = path + ".npz"
    data = np.load(path)
    with open(_manifest_path(path)) as fh:
        manifest = json.load(fh)
    ch = data["channels"]
    mats = ch[:, 0] + 1j * ch[:, 1]
    angles = data["path_angles"]
    g = data["path_gains"]
    gains = g[:, 0] + 1j * g[:, 1]
    channels = [ChannelRealization(mats[i], angles[i], gains[i])
                for i in range(mats.shape[0])]
    return channels, manifest


def _manifest_path(path: str) -> str:
    base = path[:-4] if path.endswith(".npz") else path
    return base + ".manifest.json"
