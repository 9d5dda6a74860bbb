from collections import Counter

import pytest

from conftest import FIXTURE
from hrvglucose.config import ConfigError, RunConfig
from hrvglucose.rng import SplitMix64
from hrvglucose.synthetic import write_fixture


def test_splitmix64_reference_vector():
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(5)] == [
        6457827717110365317, 3203168211198807973, 9817491932198370423,
        4593380528125082431, 16408922859458223821]


def test_below_range_and_balance():
    rng = SplitMix64(0)
    counts = Counter(rng.below(6) for _ in range(60000))
    assert set(counts) == set(range(6))
    assert all(abs(c - 10000) < 400 for c in counts.values())
    with pytest.raises(ValueError):
        rng.below(0)


def test_shuffle_is_permutation_and_seeded():
    a = SplitMix64(9).shuffle(list(range(50)))
    b = SplitMix64(9).shuffle(list(range(50)))
    assert a == b and sorted(a) == list(range(50)) and a != list(range(50))


def test_config_defaults_and_overrides(tmp_path):
    (tmp_path / "c.yaml").write_text("data:\n  clinical: x.csv\ncv:\n  seed: 3\n")
    cfg = RunConfig.load(tmp_path / "c.yaml", {"cv": {"selection_mode": "per-fold"}})
    assert cfg.seed == 3 and cfg.k_folds == 5 and cfg.selection_mode == "per_fold"
    assert cfg.path(cfg.raw["data"]["clinical"]) == tmp_path / "x.csv"
    assert cfg.ridge.max_iter == 300 and cfg.age_norm.reference_age == 65.0


@pytest.mark.parametrize("text", [
    "bogus: 1\n",
    "cv:\n  selection_mode: sometimes\n",
    "cv:\n  k_folds: 1\n",
    "age_norm:\n  epsilon: 0\n",
    "data:\n  signal: eeg\n",
    "ridge: 5\n",
    "- a list\n",
])
def test_config_rejects_invalid(tmp_path, text):
    (tmp_path / "c.yaml").write_text(text)
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "c.yaml")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "none.yaml")


def test_repo_fixture_regenerates_identically(tmp_path):
    write_fixture(tmp_path)
    made = sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    shipped = sorted(p.relative_to(FIXTURE) for p in FIXTURE.rglob("*") if p.is_file())
    assert made == shipped
    for rel in made:
        assert (tmp_path / rel).read_bytes() == (FIXTURE / rel).read_bytes(), rel
