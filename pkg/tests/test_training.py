import numpy as np
import pytest

from iris_rec import Hyperparams, Variant, initialize, train
from iris_rec import training as T
from iris_rec.checkpoint import load_checkpoint
from iris_rec.dataset import leave_one_out_split
from iris_rec.synthetic import planted_corpus
from iris_rec.training import TrainingDiverged, xavier_bound

FAST = Hyperparams(embedding_dim=8, batch_size=256, learning_rate=0.01)


def dims(store):
    return {"visual_dim": store.visual_dim, "textual_dim": store.textual_dim}


class TestInitialize:
    def test_same_seed_same_params(self, eval_corpus):
        split, store = eval_corpus
        a = initialize(FAST, split.num_users, split.num_items, "MultimodalIRIS", **dims(store))
        b = initialize(FAST, split.num_users, split.num_items, "MultimodalIRIS", **dims(store))
        c = initialize(FAST, split.num_users, split.num_items, "MultimodalIRIS", seed=1, **dims(store))
        assert all(np.array_equal(a[n], b[n]) for n in a.tensors)
        assert not np.array_equal(a["P"], c["P"])

    def test_biases_start_at_zero(self, eval_corpus):
        split, store = eval_corpus
        for variant in ("BiasBaseline", "MultimodalIRIS"):
            p = initialize(FAST, split.num_users, split.num_items, variant, **dims(store))
            for name in ("b", "stem_b", "v2v_b", "t2t_b", "b_user", "b_item"):
                if name in p.tensors:
                    assert not p[name].any(), name

    def test_xavier_bound(self):
        assert xavier_bound(4, 2) == 1.0

    def test_weights_within_xavier_bound(self):
        hp = Hyperparams(embedding_dim=4, attention_dim=2)
        p = initialize(hp, 3, 50, "NAIS")
        assert np.abs(p["W1"]).max() <= 1.0 and np.abs(p["W1"]).max() > 0.2
        assert np.abs(p["h"]).max() <= xavier_bound(2, 1)

    def test_embedding_scale(self):
        p = initialize(Hyperparams(embedding_dim=16, init_std=0.01), 2, 4000, "FISM")
        assert abs(p["P"].std() - 0.01) < 5e-4 and abs(p["P"].mean()) < 5e-4


class TestTrain:
    def test_zero_epochs_returns_initial_params(self, eval_corpus):
        split, store = eval_corpus
        params, report = train(split, store, FAST, "MultimodalIRIS", max_epochs=0)
        init = initialize(FAST, split.num_users, split.num_items, "MultimodalIRIS", **dims(store))
        assert report.epochs == [] and report.best_epoch is None
        assert all(np.array_equal(params[n], init[n]) for n in init.tensors)

    def test_frozen_learning_rate_stops_after_two_epochs(self, eval_corpus):
        split, store = eval_corpus
        hp = Hyperparams(embedding_dim=8, learning_rate=0.0)
        _, report = train(split, store, hp, "ImageIRIS", max_epochs=10, patience=1)
        assert len(report.epochs) == 2
        assert report.stop_reason == "early_stopping" and report.best_epoch == 1

    def test_deterministic(self, eval_corpus):
        split, store = eval_corpus
        a, ra = train(split, store, FAST, "MultimodalIRIS", max_epochs=3)
        b, rb = train(split, store, FAST, "MultimodalIRIS", max_epochs=3)
        assert ra.to_csv() == rb.to_csv()
        assert all(a[n].tobytes() == b[n].tobytes() for n in a.tensors)

    @pytest.mark.parametrize("loss", ["pointwise_log", "mse", "bpr"])
    def test_each_loss_trains(self, eval_corpus, loss):
        split, _ = eval_corpus
        params, report = train(split, None, FAST, "NAIS", loss=loss, max_epochs=2)
        assert len(report.epochs) == 2
        assert all(np.isfinite(params[n]).all() for n in params.tensors)

    def test_adagrad(self, eval_corpus):
        split, _ = eval_corpus
        hp = Hyperparams(embedding_dim=4, optimizer="adagrad", learning_rate=0.05)
        _, report = train(split, None, hp, "FISM", max_epochs=3)
        assert report.epochs[-1].loss < report.epochs[0].loss

    def test_loss_strictly_decreases_on_planted_corpus(self):
        data, store = planted_corpus(seed=0)
        split = leave_one_out_split(data, 0)
        hp = Hyperparams(embedding_dim=16, K=4, learning_rate=0.001, batch_size=512)
        _, report = train(split, store, hp, "MultimodalIRIS", max_epochs=5, patience=5)
        losses = [e.loss for e in report.epochs]
        assert len(losses) == 5
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_checkpoint_holds_best_epoch(self, eval_corpus, tmp_path):
        split, store = eval_corpus
        path = tmp_path / "ck.iris"
        params, report = train(split, store, FAST, "ImageIRIS", max_epochs=3, checkpoint_path=path)
        saved, hp, header = load_checkpoint(path)
        assert header["meta"]["best_epoch"] == report.best_epoch
        assert all(np.array_equal(saved[n], params[n]) for n in params.tensors)
        assert hp == FAST

    def test_report_csv(self, eval_corpus):
        split, _ = eval_corpus
        _, report = train(split, None, FAST, "FISM", max_epochs=2)
        lines = report.to_csv().splitlines()
        assert lines[0] == "epoch,loss,val_hr10,val_ndcg10"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["1", "2"]

    def test_callback_sees_every_epoch(self, eval_corpus):
        split, _ = eval_corpus
        seen = []
        train(split, None, FAST, "FISM", max_epochs=2, callback=lambda e, p: seen.append(e.epoch))
        assert seen == [1, 2]

    def test_divergence_aborts_with_report(self, eval_corpus, monkeypatch):
        split, _ = eval_corpus
        real = T.backward
        calls = []

        def exploding(*args, **kw):
            value, grads = real(*args, **kw)
            calls.append(1)
            return (float("nan") if len(calls) > 1 else value), grads

        monkeypatch.setattr(T, "backward", exploding)
        with pytest.raises(TrainingDiverged) as info:
            train(split, None, Hyperparams(embedding_dim=4, batch_size=16), "FISM", max_epochs=3)
        assert info.value.report.stop_reason == "diverged"

    def test_feature_variant_needs_store(self, eval_corpus):
        split, _ = eval_corpus
        with pytest.raises(ValueError, match="feature"):
            train(split, None, FAST, Variant.IMAGE_IRIS, max_epochs=1)
        with pytest.raises(ValueError, match="loss"):
            train(split, None, FAST, "FISM", loss="hinge")
