import jsonschema
import numpy as np
import pytest

from shiftscope.detector import (ExplanationShiftDetector, baseline_suite,
                                 build_discrimination_dataset, detect, explain_detector,
                                 feature_drift_attribution, stratified_split)
from shiftscope.models import fit_gbdt, fit_linear_least_squares, fit_logistic_regression, load_schema
from shiftscope.shapley import explain_dataset
from shiftscope.stats import BootstrapSpec, ks_two_sample
from shiftscope.tabular import (DataError, ShiftScenario, TabularDataset, generate_scenario,
                                rng_for)


@pytest.fixture(scope="module")
def multivariate():
    ref, new = generate_scenario(ShiftScenario("multivariate", 0.9, n=20_000, seed=0))
    return ExplanationShiftDetector(seed=0).fit(ref), new


@pytest.fixture(scope="module")
def uninformative():
    ref, new = generate_scenario(ShiftScenario("uninformative", n=50_000, seed=0))
    return ExplanationShiftDetector(seed=0).fit(ref), new


@pytest.fixture(scope="module")
def sensitivity_rho1():
    ref, new = generate_scenario(ShiftScenario("sensitivity", 1.0, n=20_000, seed=0))
    return ExplanationShiftDetector(seed=0).fit(ref), new


def _id_pair(n, seed):
    a, _ = generate_scenario(ShiftScenario("multivariate", 0.0, n=n, seed=seed))
    b, _ = generate_scenario(ShiftScenario("multivariate", 0.0, n=n, seed=seed + 1))
    return a, b


# ---------------------------------------------------------------------------
# discrimination data and the detector


def test_discrimination_dataset_shapes():
    ref, new = _id_pair(300, 10)
    m = fit_gbdt(ref, n_trees=5)
    dd = build_discrimination_dataset(m, ref, new, "explanation")
    assert dd.n == 600 and dd.labels.sum() == 300
    assert dd.features.shape == (600, 2) and dd.feature_names == ("shap_x1", "shap_x2")
    np.testing.assert_array_equal(dd.origin_rows[:300], np.arange(300))
    assert build_discrimination_dataset(m, ref, new, "prediction").features.shape == (600, 1)
    np.testing.assert_array_equal(build_discrimination_dataset(m, ref, new, "input").features,
                                  np.vstack([ref.features, new.features]))


def test_discrimination_dataset_errors():
    ref, new = _id_pair(100, 12)
    m = fit_gbdt(ref, n_trees=2)
    with pytest.raises(ValueError):
        build_discrimination_dataset(m, ref, new, "latent")
    other = TabularDataset(new.features, ("x1", "z"))
    with pytest.raises(DataError, match="z"):
        build_discrimination_dataset(m, ref, other)
    with pytest.raises(DataError):
        build_discrimination_dataset(m, ref, new.take([]))


def test_stratified_split():
    labels = np.r_[np.zeros(11), np.ones(7)]
    tr, te = stratified_split(labels, 0.5, 3)
    assert labels[tr].sum() == 4 and (labels[tr] == 0).sum() == 6
    assert sorted(np.r_[tr, te].tolist()) == list(range(18))
    tr2, _ = stratified_split(labels, 0.5, 3)
    np.testing.assert_array_equal(tr, tr2)
    with pytest.raises(DataError):
        stratified_split(np.r_[np.zeros(5), np.ones(1)], 0.5, 0)


def test_identical_data_gives_chance_auc():
    ref, _ = _id_pair(3000, 14)
    m = fit_gbdt(ref, n_trees=20)
    rep = detect(build_discrimination_dataset(m, ref, ref))
    assert abs(rep.auc - 0.5) < 0.05 and rep.verdict == "ID"


def test_id_vs_id():
    a, b = _id_pair(5000, 16)
    train, _ = _id_pair(5000, 18)
    det = ExplanationShiftDetector.from_model(fit_gbdt(train), a.with_target(None), seed=1)
    rep = det.detect(b.with_target(None))
    assert 0.45 <= rep.auc <= 0.55 and rep.verdict == "ID"
    assert rep.drift_score == pytest.approx(max(0.0, 2 * (rep.auc - 0.5)))


def test_multivariate_explanation_at_least_prediction(multivariate):
    det, new = multivariate
    e, p = det.detect(new, "explanation"), det.detect(new, "prediction")
    assert e.verdict == "OOD"
    assert e.auc >= p.auc


def test_uninformative_explanation_id_input_ood(uninformative):
    det, new = uninformative
    assert det.detect(new, "explanation").verdict == "ID"
    assert det.detect(new, "input").verdict == "OOD"


def test_report_serialisation(multivariate):
    det, new = multivariate
    doc = det.detect(new).to_dict()
    jsonschema.validate(doc, load_schema("detector_report"))
    assert doc["verdict"] == ("OOD" if doc["auc"] > doc["auc_threshold"] else "ID")


def test_detector_is_deterministic(multivariate):
    det, new = multivariate
    assert det.detect(new).to_dict() == det.detect(new).to_dict()


def test_unfitted_detector():
    with pytest.raises(RuntimeError):
        ExplanationShiftDetector().detect(None)
    with pytest.raises(DataError):
        ExplanationShiftDetector().fit(TabularDataset(np.zeros((20, 1)), ("a",)))


# ---------------------------------------------------------------------------
# accountability


def test_rho_one_coefficients_concentrate_on_shifted_features(sensitivity_rho1):
    det, new = sensitivity_rho1
    beta = np.abs(det.detect(new).coefficients)
    assert beta[0] > 5 * beta[2] and beta[1] > 5 * beta[2]
    ranked = [name for name, _ in explain_detector(det.detect(new))]
    assert set(ranked[:2]) == {"shap_x1", "shap_x2"}


def test_id_coefficients_inside_permutation_null():
    a, b = _id_pair(2000, 20)
    m = fit_gbdt(_id_pair(2000, 22)[0], n_trees=30)
    dd = build_discrimination_dataset(m, a, b)
    beta = np.abs(fit_logistic_regression(dd.features, dd.labels).coefficients)
    rng = rng_for(23)
    null = np.array([np.abs(fit_logistic_regression(dd.features, rng.permutation(dd.labels))
                            .coefficients) for _ in range(100)])
    assert np.all(beta < np.quantile(null, 0.95, axis=0))


def test_single_feature_ranking():
    a, b = _id_pair(400, 24)
    m = fit_gbdt(a, n_trees=5)
    rep = detect(build_discrimination_dataset(m, a, b, "prediction"))
    assert len(explain_detector(rep)) == 1


# ---------------------------------------------------------------------------
# baselines


def test_baselines_multivariate(multivariate):
    det, new = multivariate
    res = det.baselines(new)
    assert not res["input_ks_univariate"].flag
    assert res["explanation_detector"].flag
    assert res["output_ks"].flag
    assert res["prediction_detector"].flag
    assert not res["input_detector"].flag
    assert res["explanation_detector"].has_attribution
    assert not res["output_ks"].has_attribution


def test_baselines_uninformative(uninformative):
    det, new = uninformative
    res = det.baselines(new)
    assert res["input_ks_univariate"].flag and res["input_detector"].flag
    assert not res["output_ks"].flag and not res["output_wasserstein"].flag
    assert not res["explanation_detector"].flag


def test_swap_uniform_linear():
    ref, new = generate_scenario(ShiftScenario("swap_uniform", n=20_000, seed=0))
    m = fit_linear_least_squares(ref)
    res = baseline_suite(m, ref, new)
    assert not res["output_ks"].flag
    s0, s1 = explain_dataset(m, ref).values, explain_dataset(m, new).values
    assert all(ks_two_sample(s0[:, j], s1[:, j]).p_value < 0.05 for j in range(2))


# ---------------------------------------------------------------------------
# attribution


def test_attribution_sensitivity(sensitivity_rho1):
    det, new = sensitivity_rho1
    att = det.attribute(new, BootstrapSpec(30, 0.632, 0))
    d = att.distances
    assert d[0] > d[2] and d[1] > d[2]
    assert {name for name, _ in att.ranking()[:2]} == {"shap_x1", "shap_x2"}
    doc = att.to_dict()
    jsonschema.validate(doc, load_schema("drift_attribution"))
    assert doc["attribution"] == "features"


def test_attribution_id_pair_has_no_attribution():
    a, b = _id_pair(3000, 30)
    m = fit_gbdt(_id_pair(3000, 32)[0], n_trees=30)
    att = feature_drift_attribution(m, a, b, BootstrapSpec(50, 0.632, 1))
    assert not att.significant.any()
    assert att.to_dict()["attribution"] == "no attribution"


def test_attribution_within_id_null_repeat():
    # distances for ID data sit below the 95th percentile of repeated ID-vs-ID draws
    train, _ = _id_pair(3000, 40)
    m = fit_gbdt(train, n_trees=30)
    spec = BootstrapSpec(20, 0.632, 0)
    null = []
    for r in range(20):
        a, b = _id_pair(1500, 100 + 2 * r)
        null.append(feature_drift_attribution(m, a, b, spec).distances)
    a, b = _id_pair(1500, 42)
    d = feature_drift_attribution(m, a, b, spec).distances
    assert np.all(d <= np.quantile(np.array(null), 0.95, axis=0))


def test_attribution_degenerate_spec():
    a, b = _id_pair(200, 50)
    m = fit_gbdt(a, n_trees=5)
    att = feature_drift_attribution(m, a, b, BootstrapSpec(2, 1.0, 0))
    assert att.null_band is None and not att.significant.any()
    # fraction 1 refits the same rows each draw
    np.testing.assert_allclose(att.id_coefficients[0], att.id_coefficients[1])
    assert np.all(np.isfinite(att.distances))
    with pytest.raises(ValueError):
        feature_drift_attribution(m, a, b, BootstrapSpec(1, 0.5, 0))


# ---------------------------------------------------------------------------
# properties


def test_label_swap_symmetry():
    # with the roles swapped the labels flip too; measured against the original
    # labelling the swapped discriminator scores 1 - b
    for seed in range(3):
        ref, new = generate_scenario(ShiftScenario("multivariate", 0.6, n=4000, seed=seed))
        m = fit_gbdt(ref, n_trees=30)
        a = detect(build_discrimination_dataset(m, ref, new), seed=seed).auc
        b = detect(build_discrimination_dataset(m, new, ref), seed=seed).auc
        assert abs(a + (1 - b) - 1) < 0.02


def test_prediction_ood_implies_explanation_above_chance():
    for seed in range(3):
        ref, new = generate_scenario(ShiftScenario("sensitivity", 0.8, n=6000, seed=seed))
        det = ExplanationShiftDetector(seed=seed).fit(ref)
        if det.detect(new, "prediction").verdict == "OOD":
            assert det.detect(new, "explanation").auc >= 0.5
