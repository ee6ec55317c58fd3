"""Checkpoint container: JSON manifest + named weight arrays (npz)."""

import json
import os

import numpy as np
import torch

from .config import SystemConfig
from .modulation import COMBO_ENUMERATION_VERSION
from .order_net import OrderClassifier
from .transceiver import DecoderNet, PrecoderNet

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Manifest/config mismatch or corrupted weight payload."""


def _manifest_for(net) -> dict:
    manifest = {
        "version": CHECKPOINT_VERSION,
        "layers": {name: list(t.shape) for name, t in net.state_dict().items()},
    }
    if isinstance(net, PrecoderNet):
        manifest.update(kind="precoder", num_antennas=net.num_antennas,
                        num_users=net.num_users, use_amplitude=net.use_amplitude)
    elif isinstance(net, DecoderNet):
        manifest.update(kind="decoder", num_antennas=net.num_antennas,
                        max_order=net.max_order)
    elif isinstance(net, OrderClassifier):
        manifest.update(kind="order_classifier", num_antennas=net.num_antennas,
                        num_users=net.num_users, num_combos=net.num_combos,
                        combo_enumeration_version=COMBO_ENUMERATION_VERSION)
    else:
        raise CheckpointError(f"unknown network type {type(net).__name__}")
    return manifest


def save_checkpoint(path: str | os.PathLike, net) -> None:
    """Write `<path>.manifest.json` and `<path>.weights.npz` for the network."""
    path = os.fspath(path)
    arrays = {}
    for name, tensor in net.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            raise CheckpointError(f"non-finite values in layer {name}")
        arrays[name] = arr
    with open(path + ".manifest.json", "w") as fh:
        json.dump(_manifest_for(net), fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.savez(path + ".weights.npz", **arrays)


def _expect(manifest: dict, key: str, value) -> None:
    if manifest.get(key) != value:
        raise CheckpointError(
            f"checkpoint {key}={manifest.get(key)!r} does not match expected {value!r}")


def load_checkpoint(path: str | os.PathLike, cfg: SystemConfig,
                    num_combos: int | None = None):
    """Rebuild a network from a checkpoint, validating the manifest against cfg."""
    path = os.fspath(path)
    with open(path + ".manifest.json") as fh:
        manifest = json.load(fh)
    kind = manifest.get("kind")
    _expect(manifest, "num_antennas", cfg.num_antennas)
    if kind == "precoder":
        _expect(manifest, "num_users", cfg.num_users)
        net = PrecoderNet(cfg.num_antennas, cfg.num_users,
                          manifest["use_amplitude"])
    elif kind == "decoder":
        _expect(manifest, "max_order", cfg.max_order)
        net = DecoderNet(cfg.num_antennas, cfg.max_order)
    elif kind == "order_classifier":
        _expect(manifest, "num_users", cfg.num_users)
        _expect(manifest, "combo_enumeration_version", COMBO_ENUMERATION_VERSION)
        if num_combos is not None:
            _expect(manifest, "num_combos", num_combos)
        net = OrderClassifier(cfg.num_antennas, cfg.num_users,
                              manifest["num_combos"])
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")

    data = np.load(path + ".weights.npz")
    state = {}
    for name, shape in manifest["layers"].items():
        if name not in data:
            raise CheckpointError(f"weight array {name!r} missing from payload")
        arr = data[name]
        if list(arr.shape) != shape:
            raise CheckpointError(f"shape mismatch for {name!r}")
        state[name] = torch.as_tensor(arr)
    net.load_state_dict(state)
    net.eval()
    return net
