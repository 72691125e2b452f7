from iccl_lab import plotting
from iccl_lab import train as TR
from test_train import tiny

PNG = b"\x89PNG\r\n\x1a\n"


def test_figures_written(tmp_path):
    cfg = tiny()
    train, test = TR.load_datasets(cfg)
    rep = TR.run_experiment(cfg, train, test).report
    paths = [
        plotting.plot_norms(tmp_path / "n.png", dict(rep.norms), rep.metrics["stage2"].splits),
        plotting.plot_split_accuracy(tmp_path / "a.png", dict(rep.metrics)),
        plotting.plot_loss_curves(tmp_path / "l.png", rep),
    ]
    for p in paths:
        assert p.read_bytes()[:8] == PNG


def test_empty_loss_report(tmp_path):
    rep = TR.RunReport("x", 0)
    assert plotting.plot_loss_curves(tmp_path / "e.png", rep).exists()


def test_comparison_handles_missing_split(tmp_path):
    row = {"method": "ce"}
    for m in ("overall", "many", "medium", "few"):
        row[f"{m}_mean"], row[f"{m}_std"] = 0.5, 0.01
    row["medium_mean"] = row["medium_std"] = None
    assert plotting.plot_comparison(tmp_path / "c.png", [row]).read_bytes()[:8] == PNG
