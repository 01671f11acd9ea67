import json

import numpy as np
import pytest

from slotworld.replay import Episode, ReplayBuffer, quantize_frames, write_episode_log


def make_episode(length=10, seed=0, success=False):
    rng = np.random.default_rng(seed)
    frames = quantize_frames(rng.uniform(0, 1, (length + 1, 8, 8, 3)))
    actions = rng.uniform(-1, 1, (length, 4)).astype(np.float32)
    rewards = rng.uniform(0, 1, (length + 1,)).astype(np.float32)
    return Episode(frames=frames, actions=actions, rewards=rewards, success=success)


def test_episode_alignment_enforced():
    ep = make_episode(5)
    assert len(ep) == 5
    with pytest.raises(ValueError):
        Episode(frames=ep.frames[:-1], actions=ep.actions, rewards=ep.rewards, success=False)


def test_episode_return_and_dequantize():
    ep = make_episode(4)
    assert ep.episode_return == pytest.approx(float(ep.rewards[1:].sum()))
    floats = ep.frames_float()
    assert floats.dtype == np.float32
    assert floats.min() >= 0.0 and floats.max() <= 1.0
    # Quantization round-trips to within half a step of 1/255.
    assert np.abs(quantize_frames(floats) - ep.frames).max() == 0


def test_write_episode_log(tmp_path):
    ep = make_episode(3, success=True)
    path = tmp_path / "episode.jsonl"
    write_episode_log(path, ep)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == 3
    assert [line["step"] for line in lines] == [0, 1, 2]
    assert lines[-1]["done"] is True and lines[-1]["success"] is True
    assert all(line["done"] is False for line in lines[:-1])
    assert lines[1]["reward"] == pytest.approx(float(ep.rewards[2]))
    assert len(lines[0]["action"]) == 4


def test_buffer_rejects_short_episodes():
    buffer = ReplayBuffer(capacity=4, window=8)
    with pytest.raises(ValueError):
        buffer.add(make_episode(5))


def test_buffer_capacity_fifo():
    buffer = ReplayBuffer(capacity=3, window=4)
    for i in range(5):
        buffer.add(make_episode(6, seed=i))
    assert len(buffer) == 3
    # Oldest two were evicted: num_windows counts only the survivors.
    assert buffer.num_windows == 3 * (6 - 4 + 1)


def test_sampled_windows_never_cross_episodes():
    buffer = ReplayBuffer(capacity=10, window=4)
    episodes = [make_episode(6, seed=i) for i in range(3)]
    for ep in episodes:
        buffer.add(ep)
    rng = np.random.default_rng(0)
    frames, actions, rewards = buffer.sample(64, rng)
    assert frames.shape == (64, 4, 8, 8, 3)
    assert actions.shape == (64, 4, 4)
    assert rewards.shape == (64, 4)
    # Every sampled window must be a contiguous slice of a single episode.
    for b in range(64):
        found = False
        for ep in episodes:
            ep_frames = ep.frames_float()
            for start in range(len(ep) - 4 + 1):
                if np.array_equal(ep_frames[start : start + 4], frames[b]):
                    assert np.array_equal(ep.actions[start : start + 4], actions[b])
                    assert np.array_equal(ep.rewards[start : start + 4], rewards[b])
                    found = True
        assert found


def test_sampling_uniform_over_windows():
    buffer = ReplayBuffer(capacity=10, window=6)
    buffer.add(make_episode(6, seed=0))   # 1 window
    buffer.add(make_episode(15, seed=1))  # 10 windows
    rng = np.random.default_rng(1)
    _, _, rewards = buffer.sample(4000, rng)
    # The short episode has exactly one valid window, identified by its first
    # reward; it should be drawn about 1/11 of the time.
    first = make_episode(6, seed=0).rewards[0]
    hits = int(np.isclose(rewards[:, 0], first).sum())
    assert 0.05 < hits / 4000 < 0.14


def test_sample_from_empty_buffer_fails():
    with pytest.raises(RuntimeError):
        ReplayBuffer(capacity=2, window=4).sample(1, np.random.default_rng(0))
