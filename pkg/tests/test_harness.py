import csv
import os

import numpy as np
import numpy.testing as npt
import pytest

from kanfpn import tensor as T
from kanfpn.config import parse_config_text
from kanfpn.data import SceneSpec, SyntheticDataset
from kanfpn.errors import InvalidSpec, NonFiniteLoss
from kanfpn.harness import (REFERENCE_AP, AdamState, TrainConfig, lr_at, make_batch,
                            run_ablation, run_stage, smoke_train_config, train_step)
from kanfpn.layers import Params
from kanfpn.pose import PoseModelConfig, build_pose_model
from kanfpn.stem import StemVariant
from kanfpn.tensor import Tensor

SMOKE_POSE = PoseModelConfig(embed_dim=16, depth=1, heads=2, mlp_ratio=2,
                             input_extent=(32, 32))


def smoke_cfg(**kw):
    base = dict(total_epochs=1, warmup_iters=2, milestones=(), batch_size=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestSchedule:
    def test_zero_at_step_zero(self):
        assert lr_at(0, 0, TrainConfig()) == 0.0

    def test_base_rate_at_warmup_end(self):
        cfg = TrainConfig()
        assert lr_at(cfg.warmup_iters, 0, cfg) == pytest.approx(1e-4)

    def test_double_decay(self):
        cfg = TrainConfig(milestones=(34, 40), total_epochs=42)
        assert lr_at(10_000, 41, cfg) == pytest.approx(1e-6)

    def test_warmup_monotone_then_piecewise_constant(self):
        cfg = TrainConfig(warmup_iters=10, milestones=(2, 4), total_epochs=6)
        ramp = [lr_at(s, 0, cfg) for s in range(11)]
        assert all(b >= a for a, b in zip(ramp, ramp[1:]))
        flat = {lr_at(s, 1, cfg) for s in range(20, 30)}
        assert len(flat) == 1

    def test_exact_decade_drops(self):
        cfg = TrainConfig(warmup_iters=0, milestones=(2, 4), total_epochs=6)
        lrs = [lr_at(100, e, cfg) for e in range(6)]
        assert lrs[1] / lrs[2] == pytest.approx(10.0)
        assert lrs[3] / lrs[4] == pytest.approx(10.0)

    def test_milestone_validation(self):
        with pytest.raises(InvalidSpec):
            TrainConfig(milestones=(5, 5)).validate()
        with pytest.raises(InvalidSpec):
            TrainConfig(milestones=(50,), total_epochs=42).validate()


class TestAdam:
    def _quadratic_loss(self, w):
        d = T.sub(w, Tensor([3.0]))
        return T.reduce_sum(T.mul(d, d))

    def test_converges_on_quadratic(self):
        params = Params()
        params.add("w", Tensor([0.0]))
        opt = AdamState()
        cfg = TrainConfig(base_lr=0.1, warmup_iters=0, milestones=(), total_epochs=2)
        for step in range(200):
            tape = T.Tape()
            w = tape.watch(params["w"].value)
            grads = tape.backward(self._quadratic_loss(w))
            opt.step(params, {"w": grads[w].data}, lr_at(step + 1, 0, cfg), cfg)
        assert abs(params["w"].value.data[0] - 3.0) <= 1e-4

    def test_zero_lr_leaves_params_bitwise(self):
        model = build_pose_model(StemVariant.S0_PATCH, SMOKE_POSE, seed=0)
        before = {p.name: p.value.data.copy() for p in model.params}
        ds = SyntheticDataset(SceneSpec(extent=(32, 32), seed=0), 4, cache=True)
        batch = make_batch([ds[i] for i in range(4)])
        cfg = smoke_cfg(base_lr=0.0, warmup_iters=0)
        train_step(model, batch, AdamState(), cfg, step=1, epoch=0)
        for p in model.params:
            assert np.array_equal(p.value.data, before[p.name])

    def test_nonfinite_loss_aborts(self):
        model = build_pose_model(StemVariant.S0_PATCH, SMOKE_POSE, seed=0)
        model.params.set_value("head.out.b", np.full(8, np.nan, dtype=np.float32))
        ds = SyntheticDataset(SceneSpec(extent=(32, 32), seed=0), 2, cache=True)
        batch = make_batch([ds[0], ds[1]])
        with pytest.raises(NonFiniteLoss):
            train_step(model, batch, AdamState(), smoke_cfg(), step=1, epoch=0)

    def test_same_seed_same_losses(self):
        def losses():
            model = build_pose_model(StemVariant.S0_PATCH, SMOKE_POSE, seed=5)
            ds = SyntheticDataset(SceneSpec(extent=(32, 32), seed=5), 8, cache=True)
            opt = AdamState()
            cfg = smoke_cfg(base_lr=1e-3, warmup_iters=0)
            out = []
            rng = np.random.default_rng(5)
            for step in range(6):
                idx = rng.permutation(8)[:4]
                batch = make_batch([ds[int(i)] for i in idx])
                out.append(train_step(model, batch, opt, cfg, step, 0))
            return np.array(out)

        a, b = losses(), losses()
        npt.assert_allclose(a, b, atol=1e-7)


class TestRunStage:
    def test_smoke_run_writes_outputs(self, tmp_path):
        records = run_stage(StemVariant.S0_PATCH, smoke_cfg(), SceneSpec(extent=(32, 32)),
                            SMOKE_POSE, train_samples=4, eval_samples=2,
                            out_dir=str(tmp_path))
        assert len(records) == 1
        csv_path = tmp_path / "s0" / "metrics.csv"
        with open(csv_path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["stage", "epoch", "loss", "pck05", "pck10", "params", "seconds"]
        assert rows[1][0] == "s0"
        assert (tmp_path / "s0" / "final.ckpt").exists()

    def test_param_count_column_constant(self, tmp_path):
        records = run_stage(StemVariant.S0_PATCH, smoke_cfg(total_epochs=2),
                            SceneSpec(extent=(32, 32)), SMOKE_POSE,
                            train_samples=4, eval_samples=2, out_dir=str(tmp_path))
        assert len({r.params for r in records}) == 1

    def test_model_param_counts_ordered_by_stage(self):
        counts = [build_pose_model(StemVariant.from_key(k), SMOKE_POSE, seed=0).param_count
                  for k in ("s0", "s1", "s2")]
        assert counts[0] < counts[1] < counts[2]

    def test_partial_csv_flushed_on_abort(self, tmp_path):
        # epoch 0 trains fine, then a poisoned parameter kills epoch 1; the
        # rows already evaluated must survive on disk
        import kanfpn.harness as harness
        real = harness.train_step

        def poisoned(model, batch, opt, cfg, step, epoch):
            if epoch >= 1:
                model.params.set_value(
                    "head.out.b", np.full(8, np.nan, dtype=np.float32))
            return real(model, batch, opt, cfg, step, epoch)

        import unittest.mock as mock
        with mock.patch.object(harness, "train_step", poisoned):
            with pytest.raises(NonFiniteLoss):
                harness.run_stage(StemVariant.S0_PATCH, smoke_cfg(total_epochs=3),
                                  SceneSpec(extent=(32, 32)), SMOKE_POSE,
                                  train_samples=4, eval_samples=2, out_dir=str(tmp_path))
        lines = (tmp_path / "s0" / "metrics.csv").read_text().strip().splitlines()
        assert lines[0].startswith("stage,epoch")
        assert len(lines) == 2   # header plus the completed epoch


class TestAblation:
    def test_reference_column_is_immutable_metadata(self):
        assert REFERENCE_AP == {"s0": 72.5, "s1": 73.3, "s2": 74.0, "s3": 74.1,
                                "s4": 74.5, "s5": 73.8, "s6": 74.3}

    def test_table_rows_and_csv(self, tmp_path):
        stages = [StemVariant.S0_PATCH, StemVariant.S1_CNN_STEM]
        table = run_ablation(stages, smoke_cfg(), SceneSpec(extent=(32, 32)), SMOKE_POSE,
                             train_samples=4, eval_samples=2, out_dir=str(tmp_path))
        assert [r.stage for r in table] == ["s0", "s1"]
        assert [r.reference_ap for r in table] == [72.5, 73.3]
        lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert lines[0] == "stage,reference_ap,pck05,pck10,params,error"
        assert len(lines) == 3

    def test_failures_are_isolated(self, tmp_path, monkeypatch):
        import kanfpn.harness as harness

        real = harness.run_stage

        def sabotaged(variant, *args, **kwargs):
            if variant is StemVariant.S1_CNN_STEM:
                raise RuntimeError("boom")
            return real(variant, *args, **kwargs)

        monkeypatch.setattr(harness, "run_stage", sabotaged)
        table = harness.run_ablation([StemVariant.S0_PATCH, StemVariant.S1_CNN_STEM,
                                      StemVariant.S2_FPN],
                                     smoke_cfg(), SceneSpec(extent=(32, 32)), SMOKE_POSE,
                                     train_samples=4, eval_samples=2, out_dir=str(tmp_path))
        assert table[1].error.startswith("RuntimeError")
        assert not table[0].error and not table[2].error
        assert np.isfinite(table[2].pck05)


class TestConfigParsing:
    def test_defaults_roundtrip(self):
        cfg = parse_config_text("")
        assert cfg.pose.input_extent == cfg.scene.extent

    def test_values_and_comments(self):
        text = """
        # schedule
        train.base_lr = 2e-4
        train.milestones = 10, 12   # decay twice
        data.height = 32
        data.width = 32
        stem.variant = s5
        stem.widths = 8,16,32,64
        """
        cfg = parse_config_text(text)
        assert cfg.train.base_lr == pytest.approx(2e-4)
        assert cfg.train.milestones == (10, 12)
        assert cfg.scene.extent == (32, 32)
        assert cfg.stem.variant is StemVariant.S5_LATERAL_CBAM
        assert cfg.stem.backbone.widths == (8, 16, 32, 64)

    def test_unknown_key_rejected(self):
        with pytest.raises(InvalidSpec):
            parse_config_text("train.momentum = 0.9")

    def test_malformed_line_rejected(self):
        with pytest.raises(InvalidSpec):
            parse_config_text("just some words")

    def test_bad_value_rejected(self):
        with pytest.raises(InvalidSpec):
            parse_config_text("train.total_epochs = soon")


class TestCli:
    def test_gradcheck_pass_and_unknown_scope(self, capsys):
        from kanfpn.cli import main
        assert main(["gradcheck", "--scope", "matmul", "--seed", "1"]) == 0
        assert "PASS" in capsys.readouterr().out
        assert main(["gradcheck", "--scope", "nonsense"]) == 2

    def test_train_smoke_and_eval_roundtrip(self, tmp_path, capsys):
        from kanfpn.cli import main
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("data.height = 32\ndata.width = 32\n"
                            "model.embed_dim = 16\nmodel.depth = 1\nmodel.heads = 2\n"
                            "model.mlp_ratio = 2\ntrain.batch_size = 4\n")
        out = str(tmp_path / "runs")
        assert main(["train", "--stage", "s0", "--config", str(cfg_file),
                     "--smoke", "--seed", "3", "--out", out]) == 0
        ckpt = os.path.join(out, "s0", "final.ckpt")
        assert os.path.exists(ckpt)
        preds = str(tmp_path / "predictions.csv")
        assert main(["eval", "--ckpt", ckpt, "--stage", "s0", "--config", str(cfg_file),
                     "--predictions", preds]) == 0
        assert "PCK@0.1" in capsys.readouterr().out
        assert os.path.exists(preds)

    def test_eval_wrong_stage_fails_loudly(self, tmp_path, capsys):
        from kanfpn.cli import main
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("data.height = 32\ndata.width = 32\n"
                            "model.embed_dim = 16\nmodel.depth = 1\nmodel.heads = 2\n"
                            "model.mlp_ratio = 2\ntrain.batch_size = 4\n")
        out = str(tmp_path / "runs")
        main(["train", "--stage", "s0", "--config", str(cfg_file), "--smoke", "--out", out])
        ckpt = os.path.join(out, "s0", "final.ckpt")
        assert main(["eval", "--ckpt", ckpt, "--stage", "s5",
                     "--config", str(cfg_file)]) == 2
