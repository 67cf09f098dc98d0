import pytest

from maskloc.classifier import TrainConfig
from maskloc.config import ConfigError, build, read_config
from maskloc.detector import DetectorConfig
from maskloc.synth import SceneSpec


def _write(tmp_path, text):
    p = tmp_path / "x.cfg"
    p.write_text(text)
    return p


def test_parse_and_build(tmp_path):
    p = _write(tmp_path, "# comment\nside = 32\ncontrast = 0.2, 0.7  # inline\nstyle = ring\n\nn = 50\n")
    entries = read_config(p)
    assert entries["side"] == ("32", 2)
    spec, extras = build(SceneSpec, entries, p, allowed_extra=("n",))
    assert spec.side == 32 and spec.contrast == (0.2, 0.7) and spec.style == "ring"
    assert extras == {"n": "50"}


def test_optional_and_bool(tmp_path):
    p = _write(tmp_path, "radius_nm = 40\nsigma_max_nm = none\npdf_normalized = yes\n")
    cfg, _ = build(DetectorConfig, read_config(p), p)
    assert cfg.sigma_max_nm is None and cfg.pdf_normalized is True and cfg.radius_nm == 40.0


def test_overrides_win_but_none_ignored(tmp_path):
    p = _write(tmp_path, "seed = 3\nepochs = 2\n")
    cfg, _ = build(TrainConfig, read_config(p), p, seed=9, epochs=None)
    assert cfg.seed == 9 and cfg.epochs == 2


@pytest.mark.parametrize(
    "text,key,line",
    [
        ("epochs = 2\nbogus = 1\n", "bogus", 2),
        ("epochs = two\n", "epochs", 1),
        ("epochs = 1\nepochs = 2\n", "epochs", 2),
        ("learning_rate = -1\n", "learning_rate", 1),
    ],
)
def test_errors_name_key_and_line(tmp_path, text, key, line):
    p = _write(tmp_path, text)
    with pytest.raises(ConfigError) as exc:
        build(TrainConfig, read_config(p), p)
    assert str(p) in str(exc.value)
    if key != "learning_rate":
        assert exc.value.key == key and exc.value.line == line


def test_malformed_line(tmp_path):
    p = _write(tmp_path, "epochs 2\n")
    with pytest.raises(ConfigError) as exc:
        read_config(p)
    assert exc.value.line == 1


def test_bad_bool(tmp_path):
    p = _write(tmp_path, "radius_nm = 30\npdf_normalized = maybe\n")
    with pytest.raises(ConfigError) as exc:
        build(DetectorConfig, read_config(p), p)
    assert exc.value.key == "pdf_normalized"


def test_shipped_configs_build():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    build(SceneSpec, read_config(root / "synth.cfg"), allowed_extra=("n", "out"))
    build(TrainConfig, read_config(root / "train.cfg"))
    build(DetectorConfig, read_config(root / "detect.cfg"))
