"""Model construction, sharing semantics, parameter accounting, checkpoints."""

import numpy as np
import pytest

from esrnet.architecture import load_architecture, parameter_plan
from esrnet.autograd import ShapeError, backward, op_counts, reset_op_counts, softmax_cross_entropy
from esrnet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from esrnet.model import build


@pytest.fixture
def toy():
    return load_architecture("toy")


class TestBuild:
    def test_fresh_model_has_trunk_and_no_branches(self, toy):
        m = build(toy, seed=1)
        assert m.num_branches == 0
        assert m.count_parameters("shared") == parameter_plan(toy)["shared"]

    def test_forward_without_branch_is_an_error(self, toy):
        m = build(toy, seed=1)
        with pytest.raises(RuntimeError, match="add_branch"):
            m.forward(np.zeros((1, 1, 32, 32)))

    def test_same_seed_reproduces_initialization(self, toy):
        a, b = build(toy, seed=5), build(toy, seed=5)
        a.add_branch(), b.add_branch()
        assert a.checksum() == b.checksum()

    def test_different_seed_changes_initialization(self, toy):
        assert build(toy, seed=1).checksum() != build(toy, seed=2).checksum()

    def test_wrong_channel_count_raises(self, toy):
        m = build(toy, seed=0)
        m.add_branch()
        with pytest.raises(ShapeError, match="channels"):
            m.forward(np.zeros((2, 3, 32, 32)))


class TestBranching:
    def test_add_branch_leaves_existing_parameters_bit_exact(self, toy):
        m = build(toy, seed=3)
        m.add_branch()
        before_shared = m.checksum("shared")
        before_b1 = m.checksum("branch:1")
        m.add_branch()
        assert m.checksum("shared") == before_shared
        assert m.checksum("branch:1") == before_b1

    def test_branches_start_with_distinct_weights(self, toy):
        m = build(toy, seed=3)
        m.add_branch(), m.add_branch()
        assert m.checksum("branch:1") != m.checksum("branch:2")

    def test_forward_returns_one_logit_row_per_branch(self, toy):
        m = build(toy, seed=0)
        for _ in range(3):
            m.add_branch()
        out = m.forward(np.random.default_rng(0).standard_normal((4, 1, 32, 32)), mode="eval")
        assert len(out.logits) == 3
        for t in out.logits:
            assert t.shape == (4, 8)

    def test_trunk_runs_once_regardless_of_ensemble_size(self, toy):
        m = build(toy, seed=0)
        for _ in range(4):
            m.add_branch()
        reset_op_counts()
        m.forward(np.zeros((1, 1, 32, 32)), mode="eval")
        counts = op_counts()
        # trunk: 3 convs; each branch: 2 convs. A non-shared evaluation would do 4*5.
        assert counts["conv2d"] == 3 + 4 * 2
        assert counts["global_avg_pool"] == 4

    def test_branch_gradients_flow_into_shared_trunk(self, toy):
        m = build(toy, seed=0)
        m.add_branch()
        out = m.forward(np.random.default_rng(1).standard_normal((2, 1, 32, 32)))
        backward(softmax_cross_entropy(out.logits[0], np.array([1, 3])))
        g = m.parameters("shared")[0].grad
        assert np.abs(g).max() > 0


class TestParameterAccounting:
    def test_model_counts_match_config_plan(self, toy):
        plan = parameter_plan(toy)
        m = build(toy, seed=0)
        for _ in range(4):
            m.add_branch()
        assert m.count_parameters("shared") == plan["shared"]
        assert m.count_parameters("branch:2") == plan["branch"]
        assert m.count_parameters("all") == plan["shared"] + 4 * plan["branch"]

    def test_partition_identity(self, toy):
        m = build(toy, seed=0)
        for _ in range(3):
            m.add_branch()
        m.attach_affect_heads()
        total = m.count_parameters("shared") + sum(
            m.count_parameters(f"branch:{b}") for b in (1, 2, 3)
        ) + m.count_parameters("affect")
        assert total == m.count_parameters("all")

    def test_lab_model_matches_published_single_count(self):
        m = build(load_architecture("lab").at_level(5), seed=0)
        m.add_branch()
        assert m.count_parameters("all") == 131208

    def test_unknown_part_rejected(self, toy):
        with pytest.raises(ValueError, match="part"):
            build(toy, seed=0).parameters("nonsense")


class TestAffectHeads:
    def test_attach_freezes_everything_but_heads(self, toy):
        m = build(toy, seed=0)
        for _ in range(3):
            m.add_branch()
        m.attach_affect_heads()
        trainable = [p for p in m.parameters() if p.trainable]
        assert sum(p.data.size for p in trainable) == 3 * (2 * 8 + 2)
        assert all(p.name.startswith("affect") for p in trainable)

    def test_affect_outputs_have_two_dims(self, toy):
        m = build(toy, seed=0)
        m.add_branch(), m.add_branch()
        m.attach_affect_heads()
        out = m.forward(np.zeros((5, 1, 32, 32)), mode="eval")
        assert len(out.affect) == 2
        for t in out.affect:
            assert t.shape == (5, 2)

    def test_double_attach_rejected(self, toy):
        m = build(toy, seed=0)
        m.add_branch()
        m.attach_affect_heads()
        with pytest.raises(RuntimeError, match="already"):
            m.attach_affect_heads()

    def test_add_branch_after_attach_rejected(self, toy):
        m = build(toy, seed=0)
        m.add_branch()
        m.attach_affect_heads()
        with pytest.raises(RuntimeError):
            m.add_branch()


class TestSetTrainable:
    def test_multipliers_apply_per_part(self, toy):
        m = build(toy, seed=0)
        m.add_branch(), m.add_branch()
        m.set_trainable("branch:1", 0.2)
        m.set_trainable("shared", 0.0)
        assert all(p.lr_multiplier == 0.2 for p in m.parameters("branch:1"))
        assert all(not p.trainable for p in m.parameters("shared"))
        assert all(p.lr_multiplier == 1.0 for p in m.parameters("branch:2"))


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, toy, tmp_path):
        m = build(toy, seed=9)
        m.add_branch(), m.add_branch()
        # perturb running stats so the buffers carry information
        m.forward(np.random.default_rng(0).standard_normal((4, 1, 32, 32)), mode="train")
        path = str(tmp_path / "model.npz")
        save_checkpoint(m, path)
        again = load_checkpoint(path)
        assert again.checksum() == m.checksum()
        for k, v in m.state_arrays().items():
            np.testing.assert_array_equal(again.state_arrays()[k], v)

    def test_affect_heads_survive_round_trip(self, toy, tmp_path):
        m = build(toy, seed=9)
        m.add_branch()
        m.attach_affect_heads()
        path = str(tmp_path / "affect.npz")
        save_checkpoint(m, path)
        again = load_checkpoint(path)
        assert again.has_affect_heads
        assert again.checksum() == m.checksum()

    def test_config_mismatch_is_refused(self, toy, tmp_path):
        m = build(toy, seed=0)
        m.add_branch()
        path = str(tmp_path / "model.npz")
        save_checkpoint(m, path)
        with pytest.raises(CheckpointError, match="match"):
            load_checkpoint(path, expect_config=toy.at_level(4))

    def test_garbage_file_is_refused(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, stuff=np.zeros(3))
        with pytest.raises(CheckpointError, match="checkpoint"):
            load_checkpoint(str(path))
