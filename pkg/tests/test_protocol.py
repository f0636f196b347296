from __future__ import annotations

import json

import numpy as np
import pytest

from ghpid.protocol import (
    CorridorFrame,
    ProtocolError,
    PwcProtocol,
    TimeWarp,
    centerline_eval,
    corridor_walls,
    discretize,
    make_centerline,
    make_stiffness,
    stiffness_eval,
)

FRAME = CorridorFrame(np.array([0.0, 0.0]), np.array([4.0, 0.0]))


def test_frame_axis_and_normal():
    assert np.allclose(FRAME.e, [1.0, 0.0])
    assert np.allclose(FRAME.n, [0.0, 1.0])
    assert FRAME.length == 4.0
    rot = CorridorFrame(np.array([1.0, 1.0]), np.array([1.0, 3.0]))
    assert np.allclose(rot.e, [0.0, 1.0])
    assert np.allclose(rot.n, [-1.0, 0.0])
    with pytest.raises(ProtocolError):
        CorridorFrame(np.zeros(2), np.zeros(2))


@pytest.mark.parametrize("kind", ["straight", "v_neck", "s_tunnel", "tanh_s"])
def test_centerline_endpoints_pinned(kind):
    assert np.allclose(centerline_eval(FRAME, kind, 0.0), FRAME.x_in, atol=1e-12)
    assert np.allclose(centerline_eval(FRAME, kind, 1.0), FRAME.x_out, atol=1e-12)


def test_centerline_shapes():
    pts = centerline_eval(FRAME, "v_neck", np.linspace(0, 1, 7))
    assert pts.shape == (7, 2)
    single = centerline_eval(FRAME, "v_neck", 0.5)
    assert single.shape == (2,)


def test_v_neck_dip():
    mid = centerline_eval(FRAME, "v_neck", 0.5, {"A_V": 1.5})
    assert np.allclose(mid, [2.0, -1.5])
    quarter = centerline_eval(FRAME, "v_neck", 0.25, {"A_V": 1.5})
    assert np.allclose(quarter, [1.0, -0.75])


def test_s_tunnel_swing():
    up = centerline_eval(FRAME, "s_tunnel", 0.25, {"A_S": 2.0})
    down = centerline_eval(FRAME, "s_tunnel", 0.75, {"A_S": 2.0})
    assert np.allclose(up, [1.0, 2.0])
    assert np.allclose(down, [3.0, -2.0])
    assert np.allclose(centerline_eval(FRAME, "s_tunnel", 0.5), [2.0, 0.0])


def test_tanh_s_antisymmetric_offsets():
    pts = centerline_eval(FRAME, "tanh_s", np.array([0.3, 0.7]), {"A_swing": 1.0, "kappa": 2.5})
    # the corrected curve keeps the odd symmetry of tanh about s = 1/2
    assert np.allclose(pts[0, 1], -pts[1, 1], atol=1e-12)
    assert pts[1, 1] > 0.0


def test_unknown_kinds_raise():
    with pytest.raises(ProtocolError):
        centerline_eval(FRAME, "zigzag", 0.5)
    with pytest.raises(ProtocolError):
        stiffness_eval("ramp", 0.5)


def test_stiffness_profiles():
    assert stiffness_eval("constant", 0.3, {"beta0": 7.5}) == 7.5
    assert stiffness_eval("scaled", 0.9, {"gamma": 5.0, "beta_base": 2.0}) == 10.0
    mid = stiffness_eval("sigmoid", 0.5, {"beta_min": 1.0, "beta_max": 9.0, "a_beta": 12.0, "t0": 0.5})
    assert mid == pytest.approx(5.0)
    lo = stiffness_eval("sigmoid", 0.0, {"beta_min": 1.0, "beta_max": 9.0, "a_beta": 50.0, "t0": 0.5})
    assert lo == pytest.approx(1.0, abs=1e-8)
    arr = stiffness_eval("constant", np.array([0.1, 0.9]), {"beta0": 2.0})
    assert np.allclose(arr, 2.0)


def test_timewarp_clamp_and_monotone():
    warp = TimeWarp(alpha=0.8, s_max=0.9)
    ts = np.linspace(0.0, 1.0, 201)
    s = warp(ts)
    assert s[0] == 0.0
    assert np.all(np.diff(s) >= -1e-15)
    assert s.max() == pytest.approx(0.9)
    frozen = TimeWarp(alpha=0.0, s_max=0.0)
    assert np.all(frozen(ts) == 0.0)
    with pytest.raises(ProtocolError):
        TimeWarp(alpha=1.5)
    with pytest.raises(ProtocolError):
        TimeWarp(alpha=0.0, s_max=1.2)


def test_discretize_midpoint_sampling():
    centerline = make_centerline(FRAME, "v_neck", {"A_V": 1.0})
    stiffness = make_stiffness("sigmoid", {"beta_min": 1.0, "beta_max": 5.0, "a_beta": 8.0, "t0": 0.5})
    warp = TimeWarp(alpha=0.5, s_max=1.0)
    proto = discretize(centerline, stiffness, warp, K=8, anchor_endpoints=True)
    assert proto.pieces == 8
    assert proto.dim == 2
    mids = (np.arange(8) + 0.5) / 8.0
    assert np.allclose(proto.beta, [stiffness(t) for t in mids])
    # interior centers follow the warped midpoints, endpoints are anchored
    assert np.allclose(proto.nu[3], centerline(float(warp(mids[3]))))
    assert np.allclose(proto.nu[0], FRAME.x_in)
    assert np.allclose(proto.nu[-1], FRAME.x_out)
    free = discretize(centerline, stiffness, warp, K=8, anchor_endpoints=False)
    assert not np.allclose(free.nu[0], FRAME.x_in)


def test_discretize_frozen_warp_pins_all_centers():
    centerline = make_centerline(FRAME, "v_neck", {"A_V": 1.5})
    proto = discretize(centerline, make_stiffness("constant", {"beta0": 4.0}), TimeWarp(0.0, 0.0), K=6)
    assert np.allclose(proto.nu, FRAME.x_in)


def test_piece_index_half_open():
    proto = PwcProtocol.uniform([1.0, 2.0, 3.0, 4.0], np.zeros((4, 2)))
    assert proto.piece_index(0.0) == 0
    assert proto.piece_index(0.25) == 1
    assert proto.piece_index(0.4999999) == 1
    assert proto.piece_index(0.75) == 3
    assert proto.piece_index(1.0) == 3
    assert proto.beta_at(0.25) == 2.0
    with pytest.raises(ProtocolError):
        proto.piece_index(1.0001)


def test_protocol_validation():
    with pytest.raises(ProtocolError):
        PwcProtocol(np.array([0.0, 0.3, 1.0]), np.array([1.0, 1.0]), np.zeros((2, 2)))
    with pytest.raises(ProtocolError):
        PwcProtocol.uniform([1.0, -1.0], np.zeros((2, 2)))
    with pytest.raises(ProtocolError):
        PwcProtocol.uniform([1.0], np.zeros((3, 2)))


def test_json_round_trip_bit_exact():
    rng = np.random.default_rng(42)
    beta = np.exp(rng.normal(0.0, 2.0, 5))
    nu = rng.normal(0.0, 3.0, (5, 2)) * np.pi
    proto = PwcProtocol.uniform(beta, nu)
    text = proto.to_json()
    back = PwcProtocol.from_json(text)
    assert np.array_equal(back.beta, proto.beta)
    assert np.array_equal(back.nu, proto.nu)
    assert np.array_equal(back.breakpoints, proto.breakpoints)
    assert back.content_hash() == proto.content_hash()
    payload = json.loads(text)
    assert payload["dim"] == 2


def test_content_hash_sensitivity():
    base = PwcProtocol.uniform([1.0, 2.0], np.zeros((2, 2)))
    bumped = PwcProtocol.uniform([1.0, 2.0 + 1e-15], np.zeros((2, 2)))
    assert base.content_hash() != bumped.content_hash()


def test_corridor_walls_offsets():
    centerline = make_centerline(FRAME, "straight")
    grid = np.linspace(0.0, 1.0, 5)
    left, right = corridor_walls(FRAME, centerline, 0.5, grid)
    assert left.shape == (5, 2)
    assert np.allclose(left[:, 1], 0.5)
    assert np.allclose(right[:, 1], -0.5)
    taper = corridor_walls(FRAME, centerline, lambda s: 1.0 - 0.5 * s, grid)[0]
    assert taper[0, 1] == pytest.approx(1.0)
    assert taper[-1, 1] == pytest.approx(0.5)
    with pytest.raises(ProtocolError):
        corridor_walls(FRAME, centerline, -1.0, grid)
