import dataclasses
import json

import numpy as np
import pytest

from trajshap.core.scene import (
    AgentRole, AgentTrack, CausalLabel, GeneratorConfig, GeneratorKind, Split, follower_speed_profile,
    generate_dataset, inject_dummy_agent, load_generator_config, load_scenes, mask_scene, save_scenes
)
from trajshap.errors import ConfigError, InvalidArgumentError
from trajshap.utils import _canonical_json

from .conftest import make_scene, make_track


def test_generation_is_deterministic(gen_config):
    assert generate_dataset(gen_config, 11) == generate_dataset(gen_config, 11)
    assert generate_dataset(gen_config, 11) != generate_dataset(gen_config, 12)


def test_splits_use_different_streams(scenes, val_scenes):
    assert scenes[0].split == Split.TRAIN and val_scenes[0].split == Split.VALIDATION
    assert not np.array_equal(scenes[0].target.history, val_scenes[0].target.history)


def test_counts_and_kinds(scenes, gen_config):
    kinds = [s.generator_kind for s in scenes]
    assert kinds.count(GeneratorKind.LEADER_FOLLOWER) == gen_config.n_leader_follower
    assert kinds.count(GeneratorKind.INDEPENDENT) == gen_config.n_independent
    assert kinds.count(GeneratorKind.SPURIOUS_DISTRACTOR) == gen_config.n_spurious
    assert kinds.count(GeneratorKind.MIXED) == gen_config.n_mixed
    assert [s.scene_id for s in scenes] == list(range(len(scenes)))


def test_target_centric_frame(scenes):
    for scene in scenes:
        last = scene.target.history[-1]
        assert last[0] == 0.0 and last[1] == 0.0
        assert abs(last[6]) < 1e-12
        assert scene.target.history.shape == (10, 7) and scene.target.future.shape == (12, 7)


def test_causal_labels_by_kind(scenes):
    for scene in scenes:
        causal = [a for a in scene.surrounding if a.causal_label == CausalLabel.CAUSAL]
        if scene.generator_kind in (GeneratorKind.LEADER_FOLLOWER, GeneratorKind.MIXED):
            assert len(causal) == 1
        else:
            assert causal == []
        assert all(a.causal_label != CausalLabel.UNLABELED for a in scene.surrounding)


def test_agent_budget_respected(gen_config):
    capped = dataclasses.replace(gen_config, max_agents=1, max_extra_agents=3)
    assert all(s.n_agents <= 1 for s in generate_dataset(capped, 5))
    empty = dataclasses.replace(gen_config, max_agents=0)
    assert all(s.n_agents == 0 for s in generate_dataset(empty, 5))


def test_follower_profile_reacts_to_leader():
    leader = np.array([10.0, 10.0, 9.0, 8.0, 7.0, 6.0])
    follower = follower_speed_profile(11.0, leader, reaction_steps=2)
    assert follower.tolist() == [11.0, 11.0, 11.0, 11.0, 10.0, 9.0]
    assert follower_speed_profile(11.0, None, 2, total_steps=6).tolist() == [11.0] * 6


def test_spurious_distractor_tracks_target_only_in_train():
    cfg = GeneratorConfig(n_leader_follower=0, n_independent=0, n_spurious=6, n_mixed=0,
                          max_extra_agents=0, position_noise=0.0, spurious_sigma=0.0)
    for scene in generate_dataset(cfg, 2):
        (distractor,) = scene.surrounding
        y = distractor.future[-1, 1]
        offset = y - 5.0 * np.sign(y)
        assert offset == pytest.approx(scene.gt_future[-1, 1], abs=1e-6)

    val_cfg = dataclasses.replace(cfg, split=Split.VALIDATION)
    gaps = []
    for scene in generate_dataset(val_cfg, 2):
        (distractor,) = scene.surrounding
        y = distractor.future[-1, 1]
        gaps.append(abs(y - 5.0 * np.sign(y) - scene.gt_future[-1, 1]))
    assert max(gaps) > 0.1


def test_mask_scene_preserves_order_and_original():
    scene = make_scene(4)
    masked = mask_scene(scene, {3, 1})
    assert masked.agent_ids == (1, 3)
    assert scene.agent_ids == (1, 2, 3, 4)
    assert masked.target == scene.target
    assert mask_scene(scene, []).n_agents == 0
    with pytest.raises(InvalidArgumentError):
        mask_scene(scene, {0})


def test_dummy_agent_is_far_and_noncausal():
    scene = make_scene(3)
    injected, dummy_id = inject_dummy_agent(scene, seed=0)
    assert dummy_id not in scene.agent_ids and dummy_id != scene.target.agent_id
    dummy = injected.agent(dummy_id)
    assert dummy.causal_label == CausalLabel.NON_CAUSAL
    assert np.hypot(*dummy.history[-1, :2]) > 50.0
    assert np.all(dummy.history[:, 2:4] == 0.0)
    assert inject_dummy_agent(scene, seed=0)[0] == injected


def test_scene_round_trip(tmp_path, scenes):
    path = save_scenes(tmp_path / "scenes.jsonl", scenes)
    assert load_scenes(path) == scenes

    line = path.read_text(encoding="utf-8").splitlines()[0]
    history = json.loads(line)["target"]["history"]
    fractional = [v for row in history for v in row if v != int(v)]
    assert fractional and all(format(v, ".17g") in line for v in fractional)


def test_fixed_digit_json():
    text = _canonical_json({"b": "x", "a": [0.1, 2.0, -0.0, 3], "c": None}, float_digits=17)
    assert text == '{"a":[0.10000000000000001,2.0,-0.0,3],"b":"x","c":null}'
    assert json.loads(text)["a"][0] == 0.1
    with pytest.raises(ValueError):
        _canonical_json([float("nan")], float_digits=17)


def test_track_validation():
    good = make_track(1)
    with pytest.raises(InvalidArgumentError):
        AgentTrack(1, AgentRole.SURROUNDING, np.zeros((10, 6)))
    bad_heading = good.history.copy()
    bad_heading[0, 6] = np.pi
    with pytest.raises(InvalidArgumentError):
        AgentTrack(1, AgentRole.SURROUNDING, bad_heading)
    bad_width = good.history.copy()
    bad_width[0, 4] = 0.0
    with pytest.raises(InvalidArgumentError):
        AgentTrack(1, AgentRole.SURROUNDING, bad_width)
    with pytest.raises(InvalidArgumentError):
        AgentTrack(0, AgentRole.TARGET, good.history)
    assert not good.history.flags.writeable


def test_duplicate_ids_rejected():
    scene = make_scene(2)
    with pytest.raises(InvalidArgumentError):
        dataclasses.replace(scene, surrounding=scene.surrounding + (make_track(1),))


def test_generator_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        GeneratorConfig(n_spurious=-1).validate()
    with pytest.raises(ConfigError):
        GeneratorConfig(brake_probability=1.5).validate()

    path = tmp_path / "gen.env"
    path.write_text("n_leader_follower=3\nmax_agents=4\n", encoding="utf-8")
    cfg = load_generator_config(path)
    assert cfg.n_leader_follower == 3 and cfg.max_agents == 4

    path.write_text("n_leader_follower=3\nwarp_speed=9\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="warp_speed"):
        load_generator_config(path)
