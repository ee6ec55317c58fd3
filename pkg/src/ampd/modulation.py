"""PSK mapping, admissible order-combination enumeration, one-hot labels."""

import itertools
from dataclasses import dataclass

import numpy as np

COMBO_ENUMERATION_VERSION = 1  # lexicographic ascending over {1..B}^K, sum >= R


@dataclass(frozen=True)
class ModOrderCombo:
    """One admissible per-user bits-per-symbol assignment with its index."""

    orders: tuple[int, ...]
    index: int


def psk_map(m: int, order_bits: int) -> complex:
    """Map message m in {1..2^M} to the unit-circle point exp(j*2*pi*m/2^M)."""
    size = 2 ** order_bits
    if not 1 <= m <= size:
        raise ValueError(f"message {m} outside alphabet 1..{size}")
    return complex(np.exp(2j * np.pi * m / size))


def psk_map_array(m: np.ndarray, order_bits: np.ndarray) -> np.ndarray:
    """Vectorized psk_map; m and order_bits broadcast together."""
    size = 2.0 ** np.asarray(order_bits)
    return np.exp(2j * np.pi * np.asarray(m) / size)


def enumerate_combos(num_users: int, max_order: int, rate_req: int) -> list[ModOrderCombo]:
    """All tuples in {1..max_order}^K with sum >= rate_req, lexicographic order.

    Returns an empty list when no tuple qualifies.
    """
    combos = []
    for orders in itertools.product(range(1, max_order + 1), repeat=num_users):
        if sum(orders) >= rate_req:
            combos.append(ModOrderCombo(orders, len(combos)))
    return combos


def one_hot(m: int, order_bits: int) -> np.ndarray:
    """Length-2^M binary vector with a single 1 at position m (1-indexed)."""
    size = 2 ** order_bits
    if not 1 <= m <= size:
        raise ValueError(f"message {m} outside alphabet 1..{size}")
    vec = np.zeros(size)
    vec[m - 1] = 1.0
    return vec


def one_hot_padded(m: int, order_bits: int, max_bits: int) -> np.ndarray:
    """one_hot(m, M) zero-padded to length 2^B so one decoder serves all orders."""
    if order_bits > max_bits:
        raise ValueError(f"order_bits {order_bits} exceeds max_bits {max_bits}")
    vec = np.zeros(2 ** max_bits)
    vec[:2 ** order_bits] = one_hot(m, order_bits)
    return vec


@dataclass
class MessageBatch:
    """Uniformly drawn messages for one symbol slot under a given combo."""

    messages: np.ndarray  # (K,), 1-indexed
    combo: ModOrderCombo

    def symbols(self) -> np.ndarray:
        return psk_map_array(self.messages, np.asarray(self.combo.orders))


def sample_messages(combo: ModOrderCombo, count: int,
                    seed: int | np.random.Generator) -> list[MessageBatch]:
    """Draw `count` i.i.d. uniform message vectors for the given combo."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sizes = np.array([2 ** b for b in combo.orders])
    draws = rng.integers(1, sizes + 1, size=(count, len(sizes)))
    return [MessageBatch(draws[i], combo) for i in range(count)]
