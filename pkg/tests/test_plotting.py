import numpy as np

from sensoradv import plotting
from sensoradv.evaluation import TransferReport, row_order

PNG = b"\x89PNG\r\n\x1a\n"


def _report():
    rows = row_order(["fgsm", "jsma"], ["cnn4", "cnn6"])
    cells = np.random.default_rng(0).uniform(size=(len(rows), 2))
    return TransferReport(["cnn4", "cnn6"], rows, cells, cells.mean(axis=1))


def _render_all(directory):
    report = _report()
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(36, 16))
    return [
        plotting.transfer_heatmap(report, directory / "heat.png"),
        plotting.ensemble_bars(report, directory / "bars.png"),
        plotting.perturbation_triptych(x, np.clip(x + 0.1, 0, 1), directory / "trip.png", "fgsm on cnn4"),
        plotting.training_curves({"cnn4": [(1, 2.0, 0.5), (2, 1.0, 0.2)]}, directory / "curves.png"),
    ]


def test_figures_written_and_deterministic(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = _render_all(tmp_path / "a")
    b = _render_all(tmp_path / "b")
    for p, q in zip(a, b):
        blob = open(p, "rb").read()
        assert blob.startswith(PNG)
        assert blob == open(q, "rb").read()


def test_unchanged_image_triptych(tmp_path):
    x = np.full((36, 8), 0.3)
    path = plotting.perturbation_triptych(x, x.copy(), tmp_path / "same.png", "no change")
    assert open(path, "rb").read().startswith(PNG)
