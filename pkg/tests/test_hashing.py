# tests/test_hashing.py

from app.utils.hashing import MASK64, device_key, fnv1a_64, mix64


def test_fnv1a_reference_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_mix64_matches_splitmix64_first_output():
    assert mix64(0) == 0xE220A8397B1DCDAF


def test_mix64_stays_in_64_bits():
    for value in (0, 1, MASK64, 0x123456789ABCDEF0):
        assert 0 <= mix64(value) <= MASK64


def test_device_key_depends_on_device_and_seed():
    assert device_key("leaf-0", 0) == device_key("leaf-0", 0)
    assert device_key("leaf-0", 0) != device_key("leaf-1", 0)
    assert device_key("leaf-0", 0) != device_key("leaf-0", 1)


def test_negative_seed_is_folded_into_64_bits():
    assert device_key("spine-0", -1) == device_key("spine-0", MASK64)
