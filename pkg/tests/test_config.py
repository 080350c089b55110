import numpy as np
import pytest

from hbae.config import PROFILES, SLICE_TRUTH, ConfigError, config_hash, load_config, resolve_config

POLY = {"model": {"kind": "polynomial"}}


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLayering:
    def test_pure_defaults_are_slice_desk(self):
        cfg = load_config()
        assert cfg["model"]["kind"] == "slice"
        assert cfg["model"]["fine"] == PROFILES["desk"]["model"]["fine"]
        assert cfg["data"]["truth"] == SLICE_TRUTH
        assert cfg["mcmc"]["init"] == "mode"

    def test_paper_profile(self):
        cfg = load_config(profile="paper")
        assert cfg["model"]["fine"] == {"nz": 80, "nx": 100}
        assert cfg["mcmc"]["walkers"] == 300

    def test_user_overrides_profile(self):
        cfg = resolve_config({"model": {"kind": "slice", "coarse": {"nz": 6, "nx": 6}}, "mcmc": {"steps": 50, "burn_in": 10}})
        assert cfg["model"]["coarse"] == {"nz": 6, "nx": 6}
        assert cfg["model"]["fine"] == PROFILES["desk"]["model"]["fine"]
        assert cfg["mcmc"]["steps"] == 50 and cfg["mcmc"]["walkers"] == 24

    def test_profile_ignored_for_polynomial(self):
        a = resolve_config(POLY, profile="desk")
        b = resolve_config(POLY, profile="paper")
        assert a == b and a["mcmc"]["walkers"] == 32

    def test_cli_overrides(self):
        cfg = resolve_config(POLY, seed=7, workers=3)
        assert cfg["seed"] == 7 and cfg["workers"] == 3

    def test_unknown_profile(self):
        with pytest.raises(ConfigError, match="profile"):
            resolve_config(POLY, profile="laptop")


class TestErrors:
    @pytest.mark.parametrize("user, fragment", [
        ({"model": {"kind": "polynomial"}, "colour": 1}, "colour"),
        ({"model": {"kind": "slice", "slice": {"gravity": 9.8}}}, "gravity"),
        ({"model": {"kind": "plasma"}}, "kind"),
        ({"model": {"kind": "polynomial"}, "mcmc": {"walkers": 7}}, "walkers"),
        ({"model": {"kind": "polynomial"}, "seed": -1}, "seed"),
        ({"model": {"kind": "polynomial"}, "bae": {"source": "oracle"}}, "source"),
    ])
    def test_schema(self, user, fragment):
        with pytest.raises(ConfigError, match=fragment):
            resolve_config(user)

    @pytest.mark.parametrize("user, fragment", [
        ({"model": {"kind": "polynomial"}, "mcmc": {"steps": 10, "burn_in": 10}}, "burn_in"),
        ({"model": {"kind": "polynomial"}, "prior": {"kind": "gaussian", "mean": 0.0, "cov": [[1.0, 0.0], [0.0, 1.0]]}}, "exactly one"),
        ({"model": {"kind": "polynomial"}, "prior": {"kind": "uniform", "lower": 0.0, "upper": 1.0, "sd": 1.0}}, "apply"),
        ({"model": {"kind": "polynomial"}, "noise": {"sd": 1.0}}, "exactly one"),
        ({"model": {"kind": "polynomial", "polynomial": {"p": 2}}}, "p < n"),
        ({"model": {"kind": "polynomial", "fine": {"nz": 4, "nx": 4}}}, "polynomial"),
        ({"model": {"kind": "slice", "fine": {"nz": 2, "nx": 8}}}, ">= 4"),
        ({"model": {"kind": "external"}}, "command"),
        ({"model": {"kind": "polynomial"}, "predict": {"quantiles": [0.9, 0.1]}}, "increasing"),
        ({"model": {"kind": "polynomial"}, "data": {"synthesize": False}}, "path"),
    ])
    def test_semantics(self, user, fragment):
        with pytest.raises(ConfigError, match=fragment):
            resolve_config(user)

    def test_missing_data_file(self, tmp_path):
        path = write(tmp_path, '[model]\nkind = "polynomial"\n[data]\npath = "nowhere.csv"\n')
        with pytest.raises(ConfigError, match="not found"):
            load_config(path)

    def test_data_path_relative_to_config(self, tmp_path):
        (tmp_path / "y.csv").write_text("1.0\n2.0\n")
        cfg = load_config(write(tmp_path, '[model]\nkind = "polynomial"\n[data]\npath = "y.csv"\n'))
        assert cfg["data"]["path"] == str((tmp_path / "y.csv").resolve())
        assert cfg["data"]["synthesize"] is False and "truth" not in cfg["data"]

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.toml")

    def test_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "model = [\n"))


class TestHash:
    def test_workers_and_output_excluded(self):
        a = resolve_config(POLY, workers=1)
        b = dict(resolve_config(POLY, workers=4), output="elsewhere")
        assert config_hash(a) == config_hash(b)

    def test_seed_changes_hash(self):
        assert config_hash(resolve_config(POLY, seed=1)) != config_hash(resolve_config(POLY, seed=2))

    def test_shipped_configs_load(self):
        from pathlib import Path
        root = Path(__file__).resolve().parents[1] / "configs"
        for name in ("polynomial.toml", "slice.toml"):
            cfg = load_config(root / name)
            assert len(config_hash(cfg)) == 64
        assert np.all(np.isfinite(load_config(root / "polynomial.toml")["data"]["truth"]))
