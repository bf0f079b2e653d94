import numpy as np
import pytest

from srtr.errors import ConfigError, LoadError
from srtr.scenegen import (
    GenConfig,
    generate_dataset,
    generate_scene,
    read_dataset,
    read_manifest,
    relation_holds,
    split_indices,
    write_dataset,
    write_manifest,
)


def test_same_seed_same_scene():
    cfg = GenConfig()
    assert generate_scene(11, cfg) == generate_scene(11, cfg)
    assert generate_scene(11, cfg).digest() != generate_scene(12, cfg).digest()


def test_scene_contents_are_well_formed():
    cfg = GenConfig()
    for s in generate_dataset(40, cfg, base_seed=2):
        n = len(s.entity_classes)
        assert cfg.min_entities <= n <= cfg.max_entities
        assert len(s.triplets) >= 1
        assert (s.triplets[:, 0] != s.triplets[:, 2]).all()
        assert s.triplets[:, [0, 2]].max() < n
        xyxy = np.concatenate([s.entity_boxes[:, :2] - s.entity_boxes[:, 2:] / 2,
                               s.entity_boxes[:, :2] + s.entity_boxes[:, 2:] / 2], 1)
        assert (xyxy >= -1e-12).all() and (xyxy <= 1 + 1e-12).all()
        assert [lv.shape for lv in s.levels] == [(6, 6, 16), (12, 12, 16)]


def test_annotations_hold_geometrically():
    cfg = GenConfig()
    names = cfg.predicate_names
    for s in generate_dataset(30, cfg, base_seed=3):
        for a, p, b in s.triplets:
            assert relation_holds(names[p], s.entity_boxes[a], s.entity_boxes[b])


def test_predicate_frequencies_are_long_tailed():
    counts = np.zeros(8, dtype=int)
    for s in generate_dataset(600, GenConfig(), base_seed=4):
        np.add.at(counts, s.triplets[:, 1], 1)
    assert counts[0] > 5 * counts[-2]
    assert counts[:4].sum() > counts[4:].sum()


def test_dataset_round_trip(tmp_path):
    cfg = GenConfig(grid_size=8)
    scenes = generate_dataset(5, cfg, base_seed=1)
    write_dataset(scenes, tmp_path / "d.bin", cfg)
    back, cfg2 = read_dataset(tmp_path / "d.bin")
    assert cfg2 == cfg and back == scenes


def test_truncated_dataset_reports_offset(tmp_path):
    cfg = GenConfig(grid_size=8)
    write_dataset(generate_dataset(3, cfg), tmp_path / "d.bin", cfg)
    data = (tmp_path / "d.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[:-10])
    with pytest.raises(LoadError, match="byte offset"):
        read_dataset(tmp_path / "cut.bin")
    (tmp_path / "bad.bin").write_bytes(b"NOTADS" + data[6:])
    with pytest.raises(LoadError, match="magic"):
        read_dataset(tmp_path / "bad.bin")


def test_splits_partition_and_manifest_round_trip(tmp_path):
    splits = split_indices(50, seed=3)
    assert sorted(splits["train"] + splits["val"]) == list(range(50))
    write_manifest(splits, tmp_path / "m.txt")
    assert read_manifest(tmp_path / "m.txt") == splits


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        GenConfig(num_predicate_classes=20).validate()
    with pytest.raises(ConfigError):
        GenConfig(grid_size=7).validate()
