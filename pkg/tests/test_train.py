import numpy as np
import pytest

from fixtures import separable_split, tiny_model
from mibci.dataset import DatasetSplit, LabeledSample
from mibci.errors import EmptyEval, NonFiniteLoss, ParseError, ShapeMismatch
from mibci.train import (
    CurvePoint,
    EvalReport,
    LearningCurve,
    TrainConfig,
    curve_csv_text,
    diagnose_overfitting,
    emit_curve_csv,
    evaluate,
    read_curve_csv,
    train,
)


FIXTURE_CFG = {"batch_size": 4, "learning_rate": 1e-2, "max_epochs": 50, "early_stop_patience": 0}


def fit(seed=0, **kw):
    cfg = TrainConfig(**{**FIXTURE_CFG, "seed": seed, **kw})
    lines = []
    model, curve = train(tiny_model(seed), separable_split(), cfg, log_line=lines.append)
    return model, curve, lines


@pytest.mark.parametrize("seed", range(4))
def test_separable_fixture_reaches_full_train_accuracy(seed):
    _, curve, _ = fit(seed)
    assert max(p.train_acc for p in curve) == 1.0
    assert [p.epoch for p in curve] == list(range(1, 51))


@pytest.mark.parametrize("seed", range(4))
def test_loss_monotone_after_warmup(seed):
    _, curve, _ = fit(seed)
    loss = curve.column("train_loss")[4:]
    assert np.all(np.diff(loss) <= 1e-3)


def test_log_line_format():
    _, _, lines = fit(max_epochs=2)
    assert lines[0].startswith("epoch=1 train_acc=")
    assert " test_acc=" in lines[0] and " loss=" in lines[0]


def test_single_full_batch_epoch():
    _, curve, _ = fit(max_epochs=1, batch_size=16)
    assert curve.optimizer_steps == 1
    assert len(curve) == 1


def test_eval_every_spacing():
    _, curve, _ = fit(max_epochs=7, eval_every=3)
    assert [p.epoch for p in curve] == [3, 6]


def test_bit_identical_reruns():
    m1, c1, _ = fit(max_epochs=10, batch_size=5)
    m2, c2, _ = fit(max_epochs=10, batch_size=5)
    assert curve_csv_text(c1) == curve_csv_text(c2)
    for a, b in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(a, b)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        train(tiny_model(0, dims=(4, 6)), separable_split(), TrainConfig(max_epochs=1))


def test_non_finite_loss_reports_context():
    model = tiny_model(0)
    model.parameters()[0][...] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        train(model, separable_split(), TrainConfig(max_epochs=1, learning_rate=0.5))
    assert info.value.epoch == 1 and info.value.batch == 0 and info.value.lr == 0.5


def test_early_stopping_returns_best_snapshot():
    split = separable_split()
    cfg = TrainConfig(batch_size=4, max_epochs=40, early_stop_patience=3, learning_rate=1e-2)
    model, curve = train(tiny_model(1), split, cfg)
    best = max(p.test_acc for p in curve)
    assert evaluate(model, split.test).overall_accuracy >= best
    assert len(curve) < 40 or curve.best_epoch is not None


@pytest.mark.parametrize("kw", [{"batch_size": 0}, {"max_epochs": 0}, {"learning_rate": 0.0},
                                {"eval_every": 0}, {"early_stop_patience": -1}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# -- evaluation -----------------------------------------------------------------

def test_hand_built_confusion():
    cm = np.array([[3, 1, 0], [2, 2, 0], [0, 0, 0]])
    rep = EvalReport.from_confusion(cm, ("T0", "T1", "T2"))
    assert rep.per_class == [0.75, 0.5, None]
    assert rep.overall_accuracy == 5 / 8
    assert rep.n_samples == 8
    assert "detection_probability=undefined" in rep.to_text()


def test_always_class0_model():
    model = tiny_model(0)
    for p in model.parameters():
        p[...] = 0.0
    model.layers[-2].params["bias"][:] = [1.0, 0.0]
    samples = [LabeledSample(np.zeros((4, 8)), 0, "T0", ("s", "r", float(i))) for i in range(10)]
    rep = evaluate(model, samples)
    assert rep.overall_accuracy == 1.0
    assert rep.per_class == [1.0, None]


def test_tie_goes_to_lowest_index():
    model = tiny_model(0)
    for p in model.parameters():
        p[...] = 0.0
    rep = evaluate(model, [LabeledSample(np.ones((4, 8)), 1, "T1", ("s", "r", 0.0))])
    assert rep.confusion.tolist() == [[0, 0], [1, 0]]


def test_empty_eval():
    with pytest.raises(EmptyEval):
        evaluate(tiny_model(0), [])


# -- diagnosis -------------------------------------------------------------------

def curve_of(train_acc, test_acc):
    return LearningCurve([CurvePoint(i + 1, 0.0, a, 0.0, b) for i, (a, b) in enumerate(zip(train_acc, test_acc))])


def test_diagnose_converged():
    assert diagnose_overfitting(curve_of([1.0] * 8, [1.0] * 8)) == "converged"


def test_diagnose_overfitting():
    assert diagnose_overfitting(curve_of([1.0] * 5, [0.6] * 5)) == "overfitting"


def test_diagnose_underfitting():
    assert diagnose_overfitting(curve_of([0.4] * 5, [0.4] * 5)) == "underfitting"


def test_diagnose_short_curve():
    assert diagnose_overfitting(curve_of([1.0] * 4, [1.0] * 4)) == "undetermined"


def rule_oracle(train_acc, test_acc, gap_threshold=0.15, window=5):
    tr = train_acc[-window:]
    te = test_acc[-window:]
    gap = sum(a - b for a, b in zip(tr, te)) / window
    slope_tr = np.polyfit(np.arange(window), tr, 1)[0]
    slope_te = np.polyfit(np.arange(window), te, 1)[0]
    if gap > gap_threshold and slope_tr >= -0.002:
        return "overfitting"
    if tr[-1] < 0.6:
        return "underfitting"
    if gap <= gap_threshold and abs(slope_tr) < 0.002 and abs(slope_te) < 0.002:
        return "converged"
    return "undetermined"


def test_ramping_curve_matches_rule_oracle():
    train_acc = list(np.linspace(0.3, 1.0, 30))
    test_acc = list(np.concatenate([np.linspace(0.3, 0.8, 15), np.full(15, 0.8)]))
    seen = set()
    for end in range(5, 31):
        got = diagnose_overfitting(curve_of(train_acc[:end], test_acc[:end]))
        assert got == rule_oracle(train_acc[:end], test_acc[:end])
        seen.add(got)
    assert {"underfitting", "undetermined", "overfitting"} <= seen


# -- curve CSV -------------------------------------------------------------------

def test_empty_curve_header_only(tmp_path):
    path = emit_curve_csv(LearningCurve(), tmp_path / "c.csv")
    assert path.read_bytes() == b"epoch,train_loss,train_acc,test_loss,test_acc\n"


def test_two_row_fixture_bytes(tmp_path):
    curve = LearningCurve([CurvePoint(1, 0.5, 0.75, 0.625, 0.5), CurvePoint(2, 0.1, 1.0, 0.2, 1.0)])
    path = emit_curve_csv(curve, tmp_path / "c.csv")
    assert path.read_bytes() == (b"epoch,train_loss,train_acc,test_loss,test_acc\n"
                                 b"1,0.5,0.75,0.625,0.5\n2,0.1,1,0.2,1\n")


def test_curve_write_read_write(tmp_path):
    _, curve, _ = fit(max_epochs=5)
    a = emit_curve_csv(curve, tmp_path / "a.csv")
    back = read_curve_csv(a)
    assert back.points == curve.points
    b = emit_curve_csv(back, tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_read_curve_bad_row(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("epoch,train_loss,train_acc,test_loss,test_acc\n1,0.5,x,0,0\n")
    with pytest.raises(ParseError) as info:
        read_curve_csv(p)
    assert info.value.line == 2
