import numpy as np
import pytest

from turbomingru.config import resolve_config
from turbomingru.evaluation import EvalPoint
from turbomingru.plotting import render_ber_svg
from turbomingru.runs import build_models, numerics_digest, read_csv, write_csv
from turbomingru.training import TrainingState, train_epoch


def test_csv_round_trip_is_exact(tmp_path):
    rows = [{"a": 0.1 + 0.2, "b": 3}, {"a": 1e-17, "b": -1}]
    write_csv(tmp_path / "x.csv", ["a", "b"], rows)
    back = read_csv(tmp_path / "x.csv")
    assert [float(r["a"]) for r in back] == [0.1 + 0.2, 1e-17]


def test_numerics_digest_stable():
    assert numerics_digest() == numerics_digest()
    assert len(numerics_digest()) == 16


def test_build_models_seeded():
    cfg = resolve_config("desk")
    a, _ = build_models(cfg)
    b, _ = build_models(cfg)
    c, _ = build_models(cfg.updated(seed=1))
    first = lambda m: next(iter(m.named_parameters()))[1].data  # noqa: E731
    assert np.array_equal(first(a), first(b))
    assert not np.array_equal(first(a), first(c))


def test_svg_log_axis_with_zero_errors():
    pts = [EvalPoint.from_counts(db, 64, 100, e, min(e, 100), 0) for db, e in ((1, 300), (2, 20), (3, 0))]
    svg = render_ber_svg(pts)
    assert svg.count('class="marker-ber"') == 3
    assert "1e-" in svg and "nan" not in svg


@pytest.mark.slow
def test_feature_doubling_epoch_time():
    # desk architecture, one encoder batch and one decoder batch per epoch
    base = resolve_config("desk").updated(samples_per_epoch=128, dec_train_ratio=1)
    seconds = {}
    for f in (2, 4, 8):
        cfg = base.updated(enc_features=f)
        state = TrainingState.create(*build_models(cfg), cfg.train_config())
        rows = train_epoch(state)
        seconds[f] = sum(r.wall_seconds for r in rows)
    assert seconds[4] / seconds[2] < 2.5
    assert seconds[8] / seconds[4] < 2.5
