# app/utils/hashing.py

MASK64 = 0xFFFFFFFFFFFFFFFF

FNV64_OFFSET_BASIS = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    """FNV-1a, 64-bit, over raw bytes."""
    h = FNV64_OFFSET_BASIS
    for byte in data:
        h = ((h ^ byte) * FNV64_PRIME) & MASK64
    return h


def mix64(value: int) -> int:
    """
    SplitMix64 finaliser. Spreads every input bit over the whole word, so
    `mix64(x) % n` is usable for any n.
    """
    z = (value + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def device_key(device_id: str, seed: int) -> int:
    """Per-device hash salt: the run seed mixed with FNV-1a of the device id."""
    return mix64((seed & MASK64) ^ fnv1a_64(device_id.encode("utf-8")))
