import pytest

from knockoff_machines.config import load_config, parse_config
from knockoff_machines.errors import ConfigInvalid


def test_defaults():
    cfg = load_config()
    assert cfg.seed == 0
    tc = cfg.train_config()
    assert tc.iterations == 100_000 and tc.lr == 0.001 and tc.batch_fraction == 0.25
    ec = cfg.experiment_config()
    assert ec.distribution.kind == "ar1-gaussian" and ec.distribution.p == 100
    assert ec.samplers == ("machine", "second-order", "oracle")


def test_overrides_and_digest(tmp_path):
    text = "[run]\nseed = 7\n[data]\np = 40\n[selection]\namplitudes = 5, 10\n"
    cfg = parse_config(text)
    assert cfg.seed == 7 and cfg.distribution().p == 40
    assert cfg.experiment_config().amplitudes == (5.0, 10.0)
    path = tmp_path / "a.ini"
    path.write_text(text)
    assert load_config(path).digest == cfg.digest
    assert parse_config("[run]\nseed = 8\n").digest != cfg.digest
    # explicit defaults do not change the digest
    assert parse_config("[train]\nlr = 0.001\n").digest == load_config().digest
    assert cfg.digest in cfg.provenance()


@pytest.mark.parametrize(
    "text",
    [
        "[bogus]\nx = 1\n",
        "[run]\nsedd = 1\n",
        "[run]\nseed = one\n",
        "[data]\nkind = cauchy\n",
        "[data]\nrho = 1.5\n",
        "[train]\niterations = 0\n",
        "[experiment]\nsamplers = machine, magic\n",
        "no section header\n",
    ],
)
def test_invalid(text):
    with pytest.raises(ConfigInvalid):
        cfg = parse_config(text)
        cfg.seed
        cfg.experiment_config()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "nope.ini")


def test_oracle_requires_known_distribution():
    with pytest.raises(ConfigInvalid):
        parse_config("[data]\nkind = mvt\n[experiment]\nsamplers = oracle\n").experiment_config()
