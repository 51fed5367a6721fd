import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlanchor.gan_align import (PRESETS, CheckpointScore, GanFormatError, GanNumericalError, GanTrainConfig,
                                init_gan, load_gan, make_training_batch, map_vector, materialize_batch,
                                preset_config, read_scores, save_gan, select_best_iteration, train, train_step,
                                write_scores)
from xlanchor.numerics import Rng, network_grad_check
from xlanchor.synthetic import pair_datasets, random_orthogonal
from xlanchor.vecstore import l2_normalize
from xlanchor.xeval import induction_score

TINY = dict(gen_hidden=(8, 12, 8), disc_hidden=(8, 8, 4), batch_size=16)


def tiny_config(**kw):
    return GanTrainConfig(**{**TINY, "iterations": 0, "checkpoint_every": 0, **kw})


def rotation_task(n=200, dim=4, seed=0):
    r = Rng(seed)
    X = l2_normalize(r.normal((n, dim)))
    return pair_datasets(X, X @ random_orthogonal(r, dim), n_eval=40)


def params_equal(a, b):
    return all(np.array_equal(p, q) for na, nb in zip(a.networks().values(), b.networks().values())
               for p, q in zip(na.params() + na.buffers(), nb.params() + nb.buffers()))


class TestInit:
    def test_deterministic(self):
        a = init_gan(32, tiny_config(seed=7))
        b = init_gan(32, tiny_config(seed=7))
        assert params_equal(a, b)
        assert not params_equal(a, init_gan(32, tiny_config(seed=8)))

    def test_architecture_defaults(self):
        cfg = GanTrainConfig()
        assert (cfg.batch_size, cfg.lr, cfg.lr_decay) == (256, 2e-5, 1e-5)
        assert cfg.gen_hidden == (2048, 4096, 2048) and cfg.disc_hidden == (2048, 2048, 1024)
        m = init_gan(3, GanTrainConfig(gen_hidden=(5, 6, 7), disc_hidden=(4, 4, 4)))
        kinds = [type(layer).__name__ for layer in m.g1.layers]
        assert kinds == ["DenseLayer", "BatchNormLayer"] * 3 + ["DenseLayer"]
        assert [layer.activation for layer in m.g1.layers[::2]] == ["relu", "relu", "relu", "tanh"]
        assert [layer.activation for layer in m.d_valid.layers] == ["leaky_relu"] * 3 + ["sigmoid"]
        assert m.d_valid.in_dim == 6 and m.d_domain.layers[0].alpha == 0.2

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.floats(1, 1e4))
    def test_output_ranges(self, seed, scale):
        m = init_gan(4, tiny_config(seed=seed % 5, gen_out_scale=1.0))
        x = Rng(seed).normal((6, 4)) * scale
        assert np.all(np.abs(map_vector(m, x)) < 1) and np.all(np.abs(map_vector(m, x, "b_to_a")) < 1)
        p = m.d_valid(np.hstack([x, -x]))
        assert np.all((p > 0) & (p < 1))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            GanTrainConfig(batch_size=1)
        with pytest.raises(ValueError):
            preset_config("5k")


class TestGradients:
    @pytest.mark.parametrize("name", ["g1", "g2", "d_valid", "d_domain"])
    def test_networks_at_dim8(self, name):
        m = init_gan(8, tiny_config(seed=3, gen_out_scale=1.0))
        net = m.networks()[name]
        r = Rng(4)
        x = r.normal((6, net.in_dim))
        rep = network_grad_check(net, x, r)
        assert rep.passed, rep.per_array


class TestBatch:
    def test_construction(self):
        b = make_training_batch(np.zeros((100, 3)), Rng(0), 4)
        assert b.size == 4 and b.fake_kind.tolist() == [0, 1, 2, 0]
        assert np.all(b.rand_a != b.rand_b)
        assert len(set(b.gen.tolist())) == 4

    def test_same_seed_same_batch(self):
        a = make_training_batch(np.zeros((50, 2)), Rng(5), 8)
        b = make_training_batch(np.zeros((50, 2)), Rng(5), 8)
        for f in ("gen", "real", "rand_a", "rand_b"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    def test_materialize_shapes_and_labels(self):
        r = Rng(1)
        X, Y = r.normal((20, 3)), r.normal((20, 3))
        b = make_training_batch(X, r, 6)
        fb, fa = np.full((6, 3), 7.0), np.full((6, 3), -7.0)
        dv, dvl, dd, ddl = materialize_batch(b, X, Y, fb, fa)
        assert dv.shape == (12, 6) and dd.shape == (12, 6)
        assert dvl.sum() == 6 and ddl.sum() == 6 and set(np.unique(dvl)) <= {0.0, 1.0}
        assert np.array_equal(dv[:6], np.hstack([X[b.real], Y[b.real]]))
        fakes = dv[6:]
        for i, kind in enumerate(b.fake_kind):
            if kind == 0:
                assert np.array_equal(fakes[i], np.concatenate([X[b.rand_a[i]], Y[b.rand_b[i]]]))
            elif kind == 1:
                assert np.array_equal(fakes[i], np.concatenate([X[b.gen[i]], fb[i]]))
            else:
                assert np.array_equal(fakes[i], np.concatenate([fa[i], Y[b.gen[i]]]))
        assert np.array_equal(dd[:6, 3:], fb) and np.array_equal(dd[6:, :3], fa)

    def test_too_small(self):
        with pytest.raises(ValueError):
            make_training_batch(np.zeros((3, 2)), Rng(0), 4)


class TestTraining:
    def test_zero_discriminator_is_half(self):
        tr, _ = rotation_task()
        m = init_gan(4, tiny_config())
        out = m.d_valid.layers[-1]
        out.weight[...] = 0.0
        out.bias[...] = 0.0
        X = l2_normalize(tr.vecs_a)
        p = m.d_valid(np.hstack([X, X]))
        assert np.all(p == 0.5)
        losses = train_step(m, make_training_batch(X, Rng(0), 16), X, l2_normalize(tr.vecs_b))
        assert losses["d_valid"] == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect_generator_zero_supervised(self):
        from xlanchor.numerics import mse_loss
        y = Rng(0).normal((4, 3))
        assert mse_loss(y, y.copy())[0] == 0.0

    def test_supervised_loss_decreases(self):
        tr, _ = rotation_task()
        cfg = tiny_config(lr=1e-3)
        m = init_gan(4, cfg)
        seen = []
        train(m, tr, None, GanTrainConfig(**{**TINY, "iterations": 100, "lr": 1e-3, "checkpoint_every": 0}),
              on_step=lambda mm, l: seen.append(l["g1_sup"] + l["g2_sup"]))
        assert seen[-1] < seen[0]
        assert m.iteration == 100

    def test_zero_iterations(self):
        tr, ev = rotation_task()
        m = init_gan(4, tiny_config())
        before = m.copy()
        m2, scores = train(m, tr, ev, tiny_config())
        assert scores == [] and params_equal(m2, before)

    def test_checkpoint_count(self):
        tr, ev = rotation_task()
        cfg = tiny_config(iterations=100, checkpoint_every=10)
        _, scores = train(init_gan(4, cfg), tr, ev, cfg)
        assert [s.iteration for s in scores] == list(range(10, 101, 10))
        assert all(0.0 <= s.avg_precision <= 1.0 for s in scores)

    def test_checkpoint_window(self):
        tr, ev = rotation_task()
        cfg = tiny_config(iterations=30, checkpoint_every=5, checkpoint_start=15)
        _, scores = train(init_gan(4, cfg), tr, ev, cfg)
        assert [s.iteration for s in scores] == [15, 20, 25, 30]

    def test_beats_untrained_from_2000_on(self):
        r = Rng(21)
        X = l2_normalize(r.normal((1200, 16)))
        tr, ev = pair_datasets(X, X @ random_orthogonal(r, 16), n_eval=200)
        cfg = GanTrainConfig(iterations=4000, checkpoint_every=1000, checkpoint_start=2000, batch_size=64,
                             gen_hidden=(32, 64, 32), disc_hidden=(32, 32, 16), seed=5)
        model = init_gan(16, cfg)
        base = induction_score(model, ev).values
        seen = []

        def check(m, score):
            vals = induction_score(m, ev).values
            seen.append(score.iteration)
            for d in ("a_to_b", "b_to_a"):
                assert vals[("precision_at_1", d)] > base[("precision_at_1", d)], (score.iteration, d)

        train(model, tr, ev, cfg, on_checkpoint=check)
        assert seen == [2000, 3000, 4000]

    def test_presets(self):
        assert preset_config("10k").iterations == 10000
        sweep = preset_config("sweep")
        assert (sweep.checkpoint_start, sweep.iterations, sweep.checkpoint_every) == (6000, 50000, 2000)
        assert set(PRESETS) == {"10k", "sweep"}

    def test_deterministic_training(self, tmp_path):
        tr, _ = rotation_task()
        cfg = tiny_config(iterations=20, seed=2)
        a, _ = train(init_gan(4, cfg), tr, None, cfg)
        b, _ = train(init_gan(4, cfg), tr, None, cfg)
        save_gan(a, tmp_path / "a.xlgan")
        save_gan(b, tmp_path / "b.xlgan")
        assert (tmp_path / "a.xlgan").read_bytes() == (tmp_path / "b.xlgan").read_bytes()

    def test_layers_independent_of_concurrency(self):
        datasets = [rotation_task(seed=s)[0] for s in range(3)]
        cfgs = [tiny_config(iterations=15, seed=10 + k) for k in range(3)]
        seq = [train(init_gan(4, c, k), d, None, c)[0] for k, (c, d) in enumerate(zip(cfgs, datasets))]
        par = [None] * 3

        def run(k):
            par[k] = train(init_gan(4, cfgs[k], k), datasets[k], None, cfgs[k])[0]

        threads = [threading.Thread(target=run, args=(k,)) for k in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(params_equal(a, b) for a, b in zip(seq, par))

    def test_numerical_failure_reports_iteration(self):
        tr, _ = rotation_task()
        m = init_gan(4, tiny_config())
        m.g1.layers[0].weight[0, 0] = np.nan
        X, Y = l2_normalize(tr.vecs_a), l2_normalize(tr.vecs_b)
        with pytest.raises(GanNumericalError) as exc:
            with np.errstate(invalid="ignore"):
                train_step(m, make_training_batch(X, Rng(0), 16), X, Y)
        assert exc.value.iteration == 1

    def test_dim_mismatch(self):
        tr, _ = rotation_task(dim=4)
        with pytest.raises(ValueError):
            train(init_gan(5, tiny_config()), tr, None, tiny_config())
        with pytest.raises(ValueError):
            map_vector(init_gan(5, tiny_config()), np.zeros(4))


class TestSelection:
    def test_argmax(self):
        s = [CheckpointScore(6000, 0.1), CheckpointScore(10000, 0.3), CheckpointScore(50000, 0.2)]
        assert select_best_iteration(s) == 10000

    def test_single_and_tie(self):
        assert select_best_iteration([CheckpointScore(8000, 0.0)]) == 8000
        assert select_best_iteration([CheckpointScore(20000, 0.3), CheckpointScore(10000, 0.3)]) == 10000

    def test_empty(self):
        with pytest.raises(ValueError):
            select_best_iteration([])

    def test_scores_file(self, tmp_path):
        s = [CheckpointScore(6000, 1 / 3), CheckpointScore(8000, 0.25)]
        write_scores(s, tmp_path / "s.tsv")
        assert read_scores(tmp_path / "s.tsv") == s


class TestModelFile:
    def test_round_trip_within_f32_ulp(self, tmp_path):
        tr, _ = rotation_task()
        cfg = tiny_config(iterations=10)
        m, _ = train(init_gan(4, cfg, layer=2), tr, None, cfg)
        save_gan(m, tmp_path / "m.xlgan")
        back = load_gan(tmp_path / "m.xlgan")
        assert (back.dim, back.layer, back.iteration) == (4, 2, 10)
        x = tr.vecs_a[:20]
        stored = m.rounded()
        for d in ("a_to_b", "b_to_a"):
            a = map_vector(stored, x, d).astype(np.float32)
            b = map_vector(back, x, d).astype(np.float32)
            assert np.all(np.abs(a.view(np.int32) - b.view(np.int32)) <= 1)
        save_gan(back, tmp_path / "again.xlgan")
        assert (tmp_path / "m.xlgan").read_bytes() == (tmp_path / "again.xlgan").read_bytes()

    def test_resume_matches_uninterrupted(self, tmp_path):
        tr, _ = rotation_task()
        cfg = tiny_config(iterations=20, seed=4)
        full, _ = train(init_gan(4, cfg), tr, None, cfg)
        half_cfg = tiny_config(iterations=10, seed=4)
        half, _ = train(init_gan(4, half_cfg), tr, None, half_cfg)
        save_gan(half, tmp_path / "half.xlgan", include_state=True)
        resumed, _ = train(load_gan(tmp_path / "half.xlgan"), tr, None, half_cfg)
        assert resumed.iteration == 20 and params_equal(full, resumed)

    def test_state_trailer_restores_float64_exactly(self, tmp_path):
        tr, _ = rotation_task()
        cfg = tiny_config(iterations=5)
        m, _ = train(init_gan(4, cfg), tr, None, cfg)
        save_gan(m, tmp_path / "s.xlgan", include_state=True)
        back = load_gan(tmp_path / "s.xlgan")
        assert params_equal(m, back)
        assert np.array_equal(map_vector(m, tr.vecs_a), map_vector(back, tr.vecs_a))

    def test_bad_magic_and_truncation(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(GanFormatError):
            load_gan(tmp_path / "x")
        save_gan(init_gan(3, tiny_config()), tmp_path / "m")
        data = (tmp_path / "m").read_bytes()
        (tmp_path / "t").write_bytes(data[:-3])
        with pytest.raises(GanFormatError):
            load_gan(tmp_path / "t")
        bad_version = data[:5] + b"\x09\x00" + data[7:]
        (tmp_path / "v").write_bytes(bad_version)
        with pytest.raises(GanFormatError):
            load_gan(tmp_path / "v")
