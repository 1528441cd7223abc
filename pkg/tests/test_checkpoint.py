"""Checkpoint binary format and config text format round trips."""

import struct

import numpy as np
import pytest

from hirivit.config import parse_config, serialize_config
from hirivit.engine import Tensor
from hirivit.errors import ConfigError
from hirivit.params import (ParamTree, load_checkpoint, save_checkpoint,
                            truncated_normal)
from hirivit.zoo import build_model, hiri_config, hiri_micro_config


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model, tree = build_model(hiri_micro_config(), seed=9)
        # run a training-mode forward so BN running stats move off their init
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 64, 64)))
        model(x)
        rm = tree["stage1.block1.pre_norm.running_mean"].data
        assert np.abs(rm).max() > 0
        path = str(tmp_path / "model.hiri")
        save_checkpoint(tree, path)
        loaded = load_checkpoint(path)
        assert loaded.paths() == tree.paths()
        for p, t in tree.items():
            assert np.array_equal(loaded[p].data, t.data), p
            assert loaded[p].data.shape == t.data.shape

    def test_load_into_model(self, tmp_path):
        model, tree = build_model(hiri_micro_config(), seed=10)
        path = str(tmp_path / "m.hiri")
        save_checkpoint(tree, path)
        other, other_tree = build_model(hiri_micro_config(), seed=11)
        assert not other_tree.allclose(tree)
        other.load_state(load_checkpoint(path))
        assert other_tree.allclose(tree)

    def test_magic_and_version(self, tmp_path):
        tree = ParamTree()
        tree.add("w", Tensor(np.arange(6.0).reshape(2, 3)), True)
        path = str(tmp_path / "t.hiri")
        save_checkpoint(tree, path)
        blob = open(path, "rb").read()
        assert blob[:4] == b"HIRI"
        assert struct.unpack_from("<I", blob, 4)[0] == 1

    def test_scalar_and_empty_names(self, tmp_path):
        tree = ParamTree()
        tree.add("a.b.c", Tensor(np.array(3.5)), True)
        tree.add("vec", Tensor(np.array([1.0, 2.0])), False)
        path = str(tmp_path / "s.hiri")
        save_checkpoint(tree, path)
        loaded = load_checkpoint(path)
        assert loaded["a.b.c"].data == 3.5
        assert np.array_equal(loaded["vec"].data, [1.0, 2.0])

    def test_crc_detects_corruption(self, tmp_path):
        tree = ParamTree()
        tree.add("w", Tensor(np.ones((4, 4))), True)
        path = str(tmp_path / "c.hiri")
        save_checkpoint(tree, path)
        blob = bytearray(open(path, "rb").read())
        blob[-12] ^= 0xFF         # flip a payload byte
        open(path, "wb").write(bytes(blob))
        with pytest.raises(ConfigError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "bad.hiri")
        open(path, "wb").write(b"JUNKxxxx")
        with pytest.raises(ConfigError):
            load_checkpoint(path)


class TestTruncatedNormal:
    def test_bounded_and_deterministic(self):
        rng1 = np.random.default_rng(3)
        rng2 = np.random.default_rng(3)
        a = truncated_normal(rng1, (10000,), std=0.02)
        b = truncated_normal(rng2, (10000,), std=0.02)
        assert (a == b).all()
        assert np.abs(a).max() <= 0.04


class TestConfigFormat:
    def test_parse_serialize_idempotent(self):
        cfg = hiri_config("S", 448)
        text = serialize_config(cfg)
        cfg2 = parse_config(text)
        text2 = serialize_config(cfg2)
        assert text == text2
        assert cfg2 == cfg

    def test_build_from_parsed_config(self):
        text = serialize_config(hiri_micro_config())
        cfg = parse_config(text)
        model, tree = build_model(cfg, seed=1)
        _, tree_direct = build_model(hiri_micro_config(), seed=1)
        assert tree.paths() == tree_direct.paths()
        assert tree.allclose(tree_direct)

    def test_unknown_model_key_rejected(self):
        text = serialize_config(hiri_micro_config()) + "bogus = 1\n"
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_unknown_stage_key_rejected(self):
        text = serialize_config(hiri_micro_config())
        text = text.replace("[stage 2]", "[stage 2]\nwindow = 7")
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_missing_required_key(self):
        with pytest.raises(ConfigError):
            parse_config("[model]\nname = x\n")

    def test_comments_and_blank_lines_ok(self):
        text = "# header\n" + serialize_config(hiri_micro_config())
        parse_config(text)

    def test_noncontiguous_stages_rejected(self):
        text = serialize_config(hiri_micro_config()).replace("[stage 5]", "[stage 9]")
        with pytest.raises(ConfigError):
            parse_config(text)
