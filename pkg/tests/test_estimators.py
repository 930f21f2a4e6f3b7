import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

import recipes
from satxai.estimators import MotionFeatureExtractor, QuantizedVideoClassifier, SatExplainer
from satxai.explain import check_axp
from satxai.model import dumps_model, predict


@pytest.fixture(scope="module")
def data():
    ds = recipes.golden_dataset()
    tr, te = ds.train_idx, ds.test_idx
    return ds, [ds.videos[i] for i in tr], ds.labels[tr], [ds.videos[i] for i in te], ds.labels[te]


@pytest.fixture(scope="module")
def fitted(data):
    _, Vtr, ytr, _, _ = data
    return make_pipeline(MotionFeatureExtractor(), QuantizedVideoClassifier()).fit(Vtr, ytr)


def test_pipeline_matches_recipe_model(fitted):
    clf = fitted[-1]
    golden, acc = recipes.golden_model()
    assert dumps_model(clf.model_) == dumps_model(golden)
    assert clf.train_accuracy_ == acc


def test_predictions_match_quantized_forward(fitted, data):
    _, _, _, Vte, yte = data
    X = MotionFeatureExtractor().transform(Vte)
    model = fitted[-1].model_
    assert fitted.predict(Vte).tolist() == [predict(model, x.reshape(2, 2)) for x in X]
    assert fitted.score(Vte, yte) >= 0.9


def test_string_labels_round_trip(data):
    _, Vtr, ytr, Vte, _ = data
    names = np.array(["still", "right", "up", "jump"])
    X = MotionFeatureExtractor().transform(Vtr)
    clf = QuantizedVideoClassifier(epochs=20).fit(X, names[ytr])
    assert set(clf.predict(MotionFeatureExtractor().transform(Vte))) <= set(names)


def test_clone_and_params():
    c = QuantizedVideoClassifier(hidden=(4,), act_bits=5)
    assert clone(c).get_params() == c.get_params()


def test_input_validation(fitted):
    clf = fitted[-1]
    with pytest.raises(ValueError):
        clf.predict(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        QuantizedVideoClassifier(frames=3).fit(np.zeros((4, 4)), [0, 1, 0, 1])


def test_explainer(fitted, data):
    _, _, _, Vte, _ = data
    clf = fitted[-1]
    X = MotionFeatureExtractor().transform(Vte[:3])
    ex = SatExplainer().fit(clf)
    mask = ex.transform(X)
    assert mask.shape == (3, 4) and mask.any(axis=1).all()
    e = ex.explain_why(X[0])
    assert ex.check(X[0], e.features, clf.predict(X[:1])[0])
    assert check_axp(ex.encoded_, X[0].reshape(2, 2), e.features, e.predicted_class)
    other = (clf.predict(X[:1])[0] + 1) % 4
    r = ex.explain_whynot(X[0], other)
    assert r.found and r.cost >= 1


def test_explainer_rejects_other_objects():
    with pytest.raises(TypeError):
        SatExplainer().fit("model")
