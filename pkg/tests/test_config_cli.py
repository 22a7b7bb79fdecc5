import logging

import pytest

from iris_rec import Variant
from iris_rec.cli import main
from iris_rec.config import ConfigError, load_config, parse_config
from iris_rec.dataset import load_interactions


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def set_option(cfg_path, key, value):
    lines = [ln for ln in cfg_path.read_text().splitlines() if not ln.startswith(f"{key} =")]
    cfg_path.write_text("\n".join(lines + [f"{key} = {value}"]) + "\n")


def loaded(cfg_path):
    """The dataset exactly as the CLI indexes it."""
    cfg = load_config(cfg_path)
    return load_interactions(cfg.interactions, cfg.min_user_interactions)


@pytest.fixture
def trained(fixture_dir, capsys):
    root, _ = fixture_dir
    cfg = root / "run.cfg"
    code, out, err = run(capsys, "train", "--config", str(cfg))
    assert code == 0, err
    return root, cfg, loaded(cfg)


class TestConfig:
    def test_fixture_config(self, fixture_dir):
        root, _ = fixture_dir
        cfg = load_config(root / "run.cfg")
        assert cfg.variant is Variant.MULTIMODAL_IRIS
        assert cfg.hp.embedding_dim == 8 and cfg.hp.top_n == (10, 20)
        assert cfg.interactions == root / "data" / "interactions.tsv"
        assert cfg.checkpoint_path == root / "out" / "checkpoint.iris"
        assert cfg.with_seed(7).hp.seed == 7

    @pytest.mark.parametrize("extra, message", [
        ("colour = blue", "unknown keys"),
        ("variant = FISM", "duplicate"),
        ("no equals sign here", "key = value"),
        ("beta = 2.0", "beta"),
        ("K = many", "invalid literal"),
        ("loss = hinge", "unknown loss"),
        ("zero_fill = audio", "zero_fill"),
        ("patience = 0", "patience"),
    ])
    def test_rejections(self, fixture_dir, extra, message):
        root, _ = fixture_dir
        text = (root / "run.cfg").read_text() + extra + "\n"
        with pytest.raises(ConfigError, match=message):
            parse_config(text, root)

    def test_missing_required_key(self, tmp_path):
        with pytest.raises(ConfigError, match="interactions"):
            parse_config("variant = FISM\noutput_dir = out\n", tmp_path)

    def test_missing_feature_file(self, fixture_dir):
        root, _ = fixture_dir
        (root / "data" / "textual.txt").unlink()
        with pytest.raises(ConfigError, match="textual_features"):
            load_config(root / "run.cfg")

    def test_zero_fill_waives_the_file(self, fixture_dir):
        root, _ = fixture_dir
        cfg = root / "run.cfg"
        (root / "data" / "textual.txt").unlink()
        set_option(cfg, "zero_fill", "textual")
        assert load_config(cfg).zero_fill == "textual"

    def test_fism_needs_no_features(self, tmp_path):
        (tmp_path / "i.tsv").write_text("u\ta\n")
        cfg = parse_config("interactions = i.tsv\noutput_dir = o\nvariant = fism\ntop_n = 10\n", tmp_path)
        assert cfg.variant is Variant.FISM and cfg.visual_features is None

    def test_unreadable_config(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.cfg")


class TestTrainCommand:
    def test_creates_checkpoint_and_report(self, trained):
        root, _, _ = trained
        assert (root / "out" / "checkpoint.iris").is_file()
        report = (root / "out" / "train_report.csv").read_text().splitlines()
        assert report[0] == "epoch,loss,val_hr10,val_ndcg10" and len(report) == 3

    def test_missing_feature_file_fails_before_training(self, fixture_dir, capsys):
        root, _ = fixture_dir
        (root / "data" / "visual.txt").unlink()
        code, _, err = run(capsys, "train", "--config", str(root / "run.cfg"))
        assert code == 1 and "visual_features" in err
        assert not (root / "out").exists()

    def test_seed_determinism(self, fixture_dir, capsys):
        root, _ = fixture_dir
        cfg = str(root / "run.cfg")
        ck = root / "out" / "checkpoint.iris"
        assert run(capsys, "train", "--config", cfg, "--seed", "7", "--threads", "1")[0] == 0
        first = ck.read_bytes()
        assert run(capsys, "train", "--config", cfg, "--seed", "7", "--threads", "1")[0] == 0
        assert ck.read_bytes() == first
        assert run(capsys, "train", "--config", cfg, "--seed", "8")[0] == 0
        assert ck.read_bytes() != first

    def test_bad_threads(self, fixture_dir, capsys):
        root, _ = fixture_dir
        assert run(capsys, "train", "--config", str(root / "run.cfg"), "--threads", "0")[0] == 1


class TestEvaluateCommand:
    def test_metric_rows(self, trained, capsys):
        root, cfg, _ = trained
        code, out, _ = run(capsys, "evaluate", "--config", str(cfg))
        assert code == 0
        rows = out.splitlines()
        assert rows[0] == "metric,N,value"
        assert [r.rsplit(",", 1)[0] for r in rows[1:]] == ["hr,10", "hr,20", "ndcg,10", "ndcg,20"]
        assert (root / "out" / "metrics.csv").read_text() == out

    def test_single_cutoff(self, trained, capsys):
        _, cfg, _ = trained
        set_option(cfg, "top_n", "10")
        code, out, _ = run(capsys, "evaluate", "--config", str(cfg))
        assert code == 0 and len(out.splitlines()) == 1 + 2

    def test_corrupted_checkpoint(self, trained, capsys):
        root, cfg, _ = trained
        ck = root / "out" / "checkpoint.iris"
        raw = bytearray(ck.read_bytes())
        raw[-1] ^= 0xFF
        ck.write_bytes(bytes(raw))
        code, _, err = run(capsys, "evaluate", "--config", str(cfg))
        assert code == 2 and "checksum" in err

    def test_variant_mismatch(self, trained, capsys):
        _, cfg, _ = trained
        set_option(cfg, "variant", "ImageIRIS")
        code, _, err = run(capsys, "evaluate", "--config", str(cfg))
        assert code == 1 and "does not match" in err

    def test_missing_checkpoint(self, fixture_dir, capsys):
        root, _ = fixture_dir
        code, _, _ = run(capsys, "evaluate", "--config", str(root / "run.cfg"))
        assert code == 2

    def test_explicit_checkpoint_flag(self, trained, capsys):
        root, cfg, _ = trained
        moved = root / "elsewhere.iris"
        (root / "out" / "checkpoint.iris").rename(moved)
        assert run(capsys, "evaluate", "--config", str(cfg), "--checkpoint", str(moved))[0] == 0


class TestRecommendCommand:
    def test_n_rows(self, trained, capsys):
        _, cfg, data = trained
        code, out, _ = run(capsys, "recommend", "--config", str(cfg), "--user", "u3", "--n", "5")
        rows = out.splitlines()
        assert code == 0 and rows[0] == "rank,item_id,probability" and len(rows) == 6
        known = {data.item_ids[i] for i in data.positives[data.user_index("u3")].tolist()}
        items = [r.split(",")[1] for r in rows[1:]]
        assert not known & set(items)
        assert [r.split(",")[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
        probs = [float(r.split(",")[2]) for r in rows[1:]]
        assert probs == sorted(probs, reverse=True) and all(0 < p < 1 for p in probs)

    def test_clamped_with_warning(self, trained, capsys, caplog):
        _, cfg, data = trained
        pool = data.num_items - data.positives[data.user_index("u3")].size
        with caplog.at_level(logging.WARNING):
            code, out, _ = run(capsys, "recommend", "--config", str(cfg), "--user", "u3", "--n", "5000")
        assert code == 0 and len(out.splitlines()) == pool + 1
        assert "only" in caplog.text

    def test_unknown_user(self, trained, capsys):
        _, cfg, _ = trained
        code, _, err = run(capsys, "recommend", "--config", str(cfg), "--user", "nobody")
        assert code == 1 and "nobody" in err


class TestExplainCommand:
    def _target(self, data):
        known = set(data.positives[data.user_index("u3")].tolist())
        return next(data.item_ids[i] for i in range(data.num_items) if i not in known)

    def test_three_rows(self, trained, capsys):
        _, cfg, data = trained
        code, out, _ = run(capsys, "explain", "--config", str(cfg), "--user", "u3", "--item", self._target(data),
                           "--top-m", "3")
        rows = out.splitlines()
        assert code == 0 and rows[0].startswith("# user=u3") and rows[1] == "history_item,alpha"
        assert len(rows) == 5
        alphas = [float(r.split(",")[1]) for r in rows[2:]]
        assert alphas == sorted(alphas, reverse=True)

    def test_top_zero_header_only(self, trained, capsys):
        _, cfg, data = trained
        code, out, _ = run(capsys, "explain", "--config", str(cfg), "--user", "u3", "--item", self._target(data),
                           "--top-m", "0")
        assert code == 0 and out.splitlines()[1:] == ["history_item,alpha"]

    def test_fism_has_no_attention(self, fixture_dir, capsys):
        root, _ = fixture_dir
        cfg = root / "run.cfg"
        data = loaded(cfg)
        set_option(cfg, "variant", "FISM")
        assert run(capsys, "train", "--config", str(cfg))[0] == 0
        code, _, err = run(capsys, "explain", "--config", str(cfg), "--user", "u3", "--item", data.item_ids[0])
        assert code == 1 and "no attention" in err

    def test_unknown_item(self, trained, capsys):
        _, cfg, _ = trained
        code, _, err = run(capsys, "explain", "--config", str(cfg), "--user", "u3", "--item", "i99999")
        assert code == 1 and "i99999" in err


class TestGradcheckCommand:
    def test_passes(self, fixture_dir, capsys):
        root, _ = fixture_dir
        code, out, _ = run(capsys, "gradcheck", "--config", str(root / "run.cfg"), "--batch", "16")
        assert code == 0
        assert "share_W" in out and "FAIL" not in out

    def test_impossible_tolerance_fails(self, fixture_dir, capsys):
        root, _ = fixture_dir
        code, _, err = run(capsys, "gradcheck", "--config", str(root / "run.cfg"), "--batch", "16",
                           "--tolerance", "0")
        assert code == 2 and "failed" in err


def test_console_script_entry_point():
    from importlib.metadata import entry_points

    eps = {ep.name: ep.value for ep in entry_points(group="console_scripts")}
    assert eps.get("iris") == "iris_rec.cli:main"
