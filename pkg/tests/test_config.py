import pytest

from iccl_lab import config as C


def test_defaults_audit():
    cfg = C.ExperimentConfig()
    assert cfg.model.momentum == 0.99
    assert cfg.sampler.gamma == 0.0 and cfg.sampler.gamma_prime == 1.0
    assert cfg.loss.omega_d == 0.5 and cfg.loss.tau_d == 10.0
    assert cfg.model.tau == 0.07
    assert cfg.loss.omega_u == 1.0 and cfg.loss.omega_it == 1.0
    assert cfg.model.embed_dim == 128
    assert (cfg.schedule.epochs, cfg.schedule.batch_size, cfg.schedule.base_lr) == (200, 128, 0.1)
    assert cfg.schedule.lr_warmup_epochs == 5 and cfg.schedule.milestones == [120, 160]
    assert cfg.schedule.lr_decay == 0.01 and cfg.schedule.weight_decay == 2e-4
    assert cfg.stage2.epochs == 10 and cfg.stage2.lr_factor == 0.1 and cfg.stage2.freeze_encoder
    assert cfg.sampler.beta_alpha == cfg.sampler.beta_beta == 1.0
    assert not cfg.loss.zero_omega_u_after_warmup


def test_cifar_presets():
    c10, c100 = C.cifar_preset(10), C.cifar_preset(100)
    assert c10.model.embed_dim == 32 and c10.model.tau == 0.3
    assert c10.schedule.warmup_epochs == 100 and c100.schedule.warmup_epochs == 80
    assert c10.loss.zero_omega_u_after_warmup and not c10.stage2.freeze_encoder
    assert c10.stage2.encoder_lr == 0.01


@pytest.mark.parametrize("cfg", [C.ExperimentConfig(), C.desk_preset(), C.cifar_preset(100)])
def test_roundtrip_idempotent(cfg):
    text = C.dumps(cfg)
    again = C.loads(text)
    assert again == cfg
    assert C.dumps(again) == text
    assert again.hash() == cfg.hash()


def test_partial_file_keeps_defaults():
    cfg = C.loads("[loss]\nomega_d = 0\n\n[model]\nhidden = 64, 32\n")
    assert cfg.loss.omega_d == 0.0 and cfg.model.hidden == [64, 32]
    assert cfg.model.tau == 0.07


def test_unknown_key_names_key():
    with pytest.raises(C.ConfigError, match="omega_q"):
        C.loads("[loss]\nomega_q = 1\n")


def test_unknown_section():
    with pytest.raises(C.ConfigError, match="optimizer"):
        C.loads("[optimizer]\nlr = 1\n")


def test_bad_values():
    with pytest.raises(C.ConfigError):
        C.loads("[schedule]\nepochs = ten\n")
    with pytest.raises(C.ConfigError):
        C.loads("[loss]\nuse_ce = maybe\n")
    with pytest.raises(C.ConfigError, match="warmup_epochs"):
        C.loads("[schedule]\nepochs = 5\nwarmup_epochs = 6\n")


def test_replace_copies():
    base = C.ExperimentConfig()
    other = base.replace(loss__omega_d=0.0, schedule__seed=3)
    assert base.loss.omega_d == 0.5 and other.loss.omega_d == 0.0 and other.schedule.seed == 3
    assert base.hash() != other.hash()
    with pytest.raises(C.ConfigError):
        base.replace(loss__nope=1)


def test_file_io(tmp_path):
    cfg = C.desk_preset()
    C.dump(cfg, tmp_path / "c.ini")
    assert C.load(tmp_path / "c.ini") == cfg
