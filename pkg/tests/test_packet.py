import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltfl.compression import MalformedPacketError, dequantize, prune, quantize
from ltfl.packet import HEADER, decode, encode, section_sizes


def _packet(seed, v=37, rho=0.3, delta=5):
    rng = np.random.default_rng(seed)
    _, mask = prune(rng.standard_normal(v), rho)
    pkt = quantize(rng.standard_normal(len(mask.kept_indices)), delta, rng, model_dim=v)
    return pkt, mask


def test_header_layout_size():
    assert HEADER.size == 35


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), v=st.integers(1, 300), rho=st.floats(0, 0.5), delta=st.integers(1, 8))
def test_round_trip(seed, v, rho, delta):
    pkt, mask = _packet(seed, v, rho, delta)
    raw = encode(pkt, mask, device_id=3, round_index=11)
    back, mask2, dev, rnd = decode(raw)
    assert (dev, rnd) == (3, 11)
    np.testing.assert_array_equal(back.level_indices, pkt.level_indices)
    np.testing.assert_array_equal(back.signs, pkt.signs)
    np.testing.assert_array_equal(mask2.kept_indices, mask.kept_indices)
    assert back.g_max == pytest.approx(pkt.g_max, rel=1e-6)
    assert back.bits_per_coord == delta and back.model_dim == v
    np.testing.assert_allclose(dequantize(back, mask2), dequantize(pkt, mask), rtol=1e-6, atol=1e-6)


def test_level_section_carries_k_delta_bits():
    pkt, mask = _packet(1, v=100, rho=0.2, delta=6)
    k = len(mask.kept_indices)
    sizes = section_sizes(k, 6)
    assert sizes.levels == -(-k * 6 // 8)
    assert 8 * sizes.levels - k * 6 < 8
    assert len(encode(pkt, mask, 0, 0)) == sizes.total
    # The two float32 range bounds plus a 32-bit word make up the 96-bit overhead.
    assert pkt.xi == 2 * 32 + 32


def test_decode_rejects_corruption():
    pkt, mask = _packet(2)
    raw = encode(pkt, mask, 0, 0)
    with pytest.raises(MalformedPacketError):
        decode(raw[:10])
    with pytest.raises(MalformedPacketError):
        decode(b"XXXX" + raw[4:])
    with pytest.raises(MalformedPacketError):
        decode(raw + b"\x00")
