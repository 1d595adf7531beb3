from importlib import resources

import pytest
from hypothesis import given
from hypothesis import strategies as st

from zayan.config import ConfigError, RunConfig, load_config, parse_text

PRESETS = sorted(p.name for p in resources.files("zayan.presets").iterdir() if p.name.endswith(".cfg"))


@given(
    st.floats(1e-6, 1.0), st.floats(0.01, 5.0), st.floats(0.0, 10.0), st.integers(1, 8),
    st.sampled_from([4, 8, 16]), st.booleans(), st.none() | st.integers(1, 64), st.integers(0, 2**31),
)
def test_text_round_trip(lr, tau, lam, layers, emb, flag, ff, seed):
    cfg = RunConfig(cl_lr=lr, tau=tau, lambd=lam, num_layers=layers, emb_dim=emb, nhead=4,
                    use_warp=flag, ff_dim=ff, seed=seed)
    back = parse_text(cfg.to_text())
    assert back == cfg
    assert back.hash() == cfg.hash()


def test_hash_ignores_out_but_not_values():
    a = RunConfig(out="x")
    assert a.hash() == RunConfig(out="y").hash()
    assert a.hash() != RunConfig(seed=1).hash()
    assert "\nout =" not in "\n" + a.to_text(exclude=("out",))


def test_unknown_and_duplicate_keys_name_the_key():
    with pytest.raises(ConfigError) as e:
        parse_text("taus = 0.3\n")
    assert e.value.key == "taus"
    with pytest.raises(ConfigError, match="twice"):
        parse_text("lambda = 1\nlambd = 2\n")


def test_lambda_alias_and_comments():
    cfg = parse_text("lambd = 0.7  # inline\n; full line\ntau = 0.2\n")
    assert cfg.lambd == 0.7 and cfg.tau == 0.2
    assert "lambda = 0.7" in cfg.to_text()
    assert cfg.replace(lambd=3.0).lambd == 3.0


@pytest.mark.parametrize("text,key", [
    ("tau = 0\n", "tau"), ("folds = 1\n", "folds"), ("num_layers = 0\n", "num_layers"),
    ("mask_prob = 1\n", "mask_prob"), ("emb_dim = 10\nnhead = 4\n", "nhead"), ("seed = 1.5\n", "seed"),
    ("use_mask = maybe\n", "use_mask"), ("token_source = other\n", "token_source"),
])
def test_invalid_values_name_the_key(text, key):
    with pytest.raises(ConfigError) as e:
        parse_text(text)
    assert e.value.key == key


def test_overrides_win():
    cfg = parse_text("seed = 1\n", {"seed": "9", "gamma": "0.5"})
    assert cfg.seed == 9 and cfg.gamma == 0.5


def test_derived_configs():
    cfg = RunConfig(hidden_dim=48, emb_dim=16, nhead=4, tau=0.3, lambd=1.5, t_epochs=7, seed=4)
    p, t = cfg.pretrain_config(), cfg.transformer_config()
    assert (p.tau, p.redundancy_weight, p.hidden_dim, p.seed) == (0.3, 1.5, 48, 4)
    assert t.ff_dim == 48 and t.epochs == 7
    assert RunConfig(ff_dim=12).transformer_config().ff_dim == 12
    assert RunConfig(label="class").label_column == "class"
    assert RunConfig(label="3").label_column == 3


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load(name):
    cfg = load_config(resources.files("zayan.presets") / name)
    assert cfg.emb_dim % cfg.nhead == 0
    assert parse_text(cfg.to_text()) == cfg


def test_all_benchmark_presets_present():
    assert set(PRESETS) >= {"urban.cfg", "forest.cfg", "wilt.cfg", "indian_flood.cfg", "pluvial_flood.cfg",
                            "crop_mapping.cfg", "rsi_cb256.cfg", "smoke.cfg"}


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/x.cfg")
