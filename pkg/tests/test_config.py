from __future__ import annotations

from pathlib import Path

import pytest

from counterforensics.config import CampaignSpec, DetectorSpec, ExperimentConfig
from counterforensics.errors import ConfigError
from counterforensics.manipulations import ManipulationSpec, benchmark_specs

_DESK_TOML = """
seed = 7
output_dir = "runs/desk"

[dataset]
device_count = 4
images_per_device = 2
patch_size = 32
patches_per_image = 8
patch_stride = 32

[[manipulations]]
kind = "blur"
sigma = 1.1

[[manipulations]]
kind = "jpeg"
quality = 90

[[detectors]]
id = "spam"
variant = "spam_linear"

[detectors.spam]
normalization = "l1"

[[detectors]]
id = "cozz"
variant = "cozz_net_soft"
source = "spam"
temperature = 0.05

[[attacks]]
target = "cozz"
method = "pgd"
epsilon = 2
pgd_steps = 5
evaluators = ["spam", "cozz"]
max_patches = 10

[[attacks]]
target = "cozz"
method = "icm"
icm_mode = "restore_pristine"
icm_deltas = [-1, 1]

[split]
train_devices = 3
"""


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "experiment.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_from_toml_reads_every_section(tmp_path: Path) -> None:
    config = ExperimentConfig.from_toml(_write(tmp_path, _DESK_TOML))

    assert config.seed == 7
    assert config.output_dir == Path("runs/desk")
    assert len(config.dataset.devices) == 4
    assert config.dataset.seed == 7
    assert config.dataset.patch_size == 32
    assert [spec.task_id for spec in config.manipulations] == ["blur-1.10", "jpeg-90"]
    assert config.detector("spam").spam.normalization == "l1"
    assert config.detector("cozz").temperature == 0.05
    assert [campaign.campaign_id for campaign in config.campaigns] == [
        "cozz-pgd-e2-s5",
        "cozz-icm-restore_pristine",
    ]
    assert config.campaigns[0].evaluators == ("spam", "cozz")
    assert config.campaigns[0].max_patches == 10
    assert config.campaigns[1].attack.icm_deltas == (-1, 1)
    assert config.train_devices == 3


def test_defaults_cover_the_full_table() -> None:
    config = ExperimentConfig()

    assert config.manipulations == tuple(benchmark_specs())
    assert [spec.variant for spec in config.detectors] == ["spam_linear", "bayar_net"]
    assert config.campaigns[0].campaign_id == "bayar-fgsm-e1"
    assert config.train_devices == 6
    assert ExperimentConfig.from_dict({}) == config


@pytest.mark.parametrize(
    "text",
    [
        "colour = 'red'\n",
        "[dataset]\npatch_sise = 32\n",
        "[[detectors]]\nid = 'x'\nvariant = 'spam_linear'\nkernel = 3\n",
        "[[detectors]]\nid = 'x'\nvariant = 'spam_linear'\n[detectors.linear]\nmomentum = 0.9\n",
        "[[attacks]]\ntarget = 'bayar'\nstrength = 2\n",
        "[split]\ntest_devices = 3\n",
        "dataset = 5\n",
    ],
)
def test_unknown_or_misplaced_keys_are_rejected(tmp_path: Path, text: str) -> None:
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(_write(tmp_path, text))


def test_bad_values_surface_as_config_errors(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(_write(tmp_path, "[[manipulations]]\nkind = 'sharpen'\n"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(_write(tmp_path, "[[attacks]]\ntarget = 'bayar'\nepsilon = 0\n"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(_write(tmp_path, "seed = [\n"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml(tmp_path / "missing.toml")


def test_cozz_source_must_be_an_earlier_spam_linear() -> None:
    spam = DetectorSpec("spam", "spam_linear")
    bayar = DetectorSpec("bayar", "bayar_net")

    with pytest.raises(ConfigError):
        DetectorSpec("cozz", "cozz_net_hard")
    with pytest.raises(ConfigError, match="listed before"):
        ExperimentConfig(
            detectors=(DetectorSpec("cozz", "cozz_net_hard", source="spam"), spam),
            campaigns=(),
        )
    with pytest.raises(ConfigError, match="spam_linear"):
        ExperimentConfig(
            detectors=(bayar, DetectorSpec("cozz", "cozz_net_hard", source="bayar")),
            campaigns=(),
        )


def test_campaigns_must_name_known_detectors() -> None:
    with pytest.raises(ConfigError):
        ExperimentConfig(campaigns=(CampaignSpec("nobody"),))
    with pytest.raises(ConfigError, match="evaluators"):
        ExperimentConfig(campaigns=(CampaignSpec("bayar", evaluators=("spam", "ghost")),))
    with pytest.raises(ConfigError):
        CampaignSpec("bayar", max_patches=0)


def test_structural_checks() -> None:
    with pytest.raises(ConfigError):
        ExperimentConfig(train_devices=9)
    with pytest.raises(ConfigError):
        ExperimentConfig(manipulations=(ManipulationSpec.blur(1.1), ManipulationSpec.blur(1.1)))
    with pytest.raises(ConfigError):
        ExperimentConfig(detectors=(DetectorSpec("a", "bayar_net"), DetectorSpec("a", "bayar_net")))
    with pytest.raises(ConfigError):
        ExperimentConfig().detector("ghost")


def test_fingerprint_tracks_content_not_output_dir(tmp_path: Path) -> None:
    config = ExperimentConfig.from_toml(_write(tmp_path, _DESK_TOML))
    moved = ExperimentConfig.from_toml(
        _write(tmp_path, _DESK_TOML.replace("runs/desk", "elsewhere"))
    )

    assert config.fingerprint() == moved.fingerprint()
    assert config.with_seed(8).fingerprint() != config.fingerprint()
    assert config.with_seed(8).dataset.seed == 8
    assert config.with_seed(7) == config
