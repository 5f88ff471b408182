import itertools
import json

import numpy as np
import pytest

from bciguide.classifier import (
    FEATURE_EPS,
    FeatureCouple,
    MedianSmoother,
    PipelineModel,
    StreamingClassifier,
    calibrate_pipeline,
    classify_stream,
    csp_feature,
    discretize_features,
    estimate_covariance,
    mrmr_select,
    mutual_information,
    smooth_index,
    train_csp,
    train_lda,
)
from bciguide.eeg import DEFAULT_LAYOUT, EegBlock, EegSynthesizer, SynthConfig
from bciguide.errors import CalibrationError, TrainingError

FS = 512


# ---------------------------------------------------------------- covariance

def test_covariance_of_iid_noise_is_identity():
    rng = np.random.default_rng(0)
    windows = rng.standard_normal((100, 16, 256))
    cov = estimate_covariance(windows, shrinkage=0.0).matrix
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) < 0.1
    assert np.allclose(np.diag(cov), 1.0, atol=0.15)


def test_covariance_shrinkage_fixes_degenerate_channel():
    rng = np.random.default_rng(1)
    windows = rng.standard_normal((20, 16, 128))
    windows[:, 3, :] = 0.0
    cov = estimate_covariance(windows, shrinkage=0.05).matrix
    assert cov[3, 3] > 0
    np.linalg.inv(cov)  # must not raise


def test_covariance_full_shrinkage_is_scaled_identity():
    rng = np.random.default_rng(2)
    windows = rng.standard_normal((5, 16, 64))
    est = estimate_covariance(windows, shrinkage=1.0)
    expected = (np.trace(est.matrix) / 16) * np.eye(16)
    assert np.allclose(est.matrix, expected, atol=1e-12)


def test_covariance_input_errors():
    with pytest.raises(ValueError):
        estimate_covariance(np.empty((0, 16, 10)))
    with pytest.raises(ValueError):
        estimate_covariance(np.zeros((2, 16, 10)), shrinkage=1.5)


# ----------------------------------------------------------------------- CSP

def test_csp_equal_covariances_gives_half_eigenvalues():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((16, 16))
    cov = a @ a.T + 16 * np.eye(16)
    model = train_csp(cov, cov)
    assert np.allclose(model.eigenvalues, 0.5, atol=1e-9)


def test_csp_two_channel_analytic_case():
    model = train_csp(np.diag([1.0, 4.0]), np.diag([4.0, 1.0]), n_pairs=1)
    assert np.allclose(sorted(model.eigenvalues), [0.2, 0.8], atol=1e-9)
    # filters aligned with the coordinate axes
    for w in model.filters:
        assert np.min(np.abs(w)) < 1e-9 * np.max(np.abs(w))


def random_spd(rng, n=16):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def test_csp_simultaneously_diagonalizes():
    rng = np.random.default_rng(4)
    for _ in range(20):
        s_low, s_high = random_spd(rng), random_spd(rng)
        model = train_csp(s_low, s_high, n_pairs=8)  # full basis
        for s in (s_low, s_high):
            m = model.filters @ s @ model.filters.T
            off = m - np.diag(np.diag(m))
            assert np.max(np.abs(off)) < 1e-8


def test_csp_normalization_and_pairing():
    rng = np.random.default_rng(5)
    s_low, s_high = random_spd(rng), random_spd(rng)
    model = train_csp(s_low, s_high)
    total = s_low + s_high
    for w in model.filters:
        assert w @ total @ w == pytest.approx(1.0, abs=1e-9)
    flipped = train_csp(s_high, s_low)
    assert np.allclose(model.eigenvalues + flipped.eigenvalues[::-1],
                       np.ones(6), atol=1e-9)


def test_csp_rejects_indefinite_input():
    bad = np.eye(16)
    bad[0, 0] = -1.0
    with pytest.raises(np.linalg.LinAlgError):
        train_csp(bad, np.eye(16))


# ------------------------------------------------------------------ features

def test_csp_feature_zero_window():
    assert csp_feature(np.zeros((16, 512)), np.ones(16)) == pytest.approx(np.log(FEATURE_EPS))


def test_csp_feature_amplitude_scaling():
    rng = np.random.default_rng(6)
    win = rng.standard_normal((16, 512))
    w = rng.standard_normal(16)
    assert csp_feature(2 * win, w) - csp_feature(win, w) == pytest.approx(np.log(4), abs=1e-9)


def test_csp_feature_matches_two_pass_variance():
    rng = np.random.default_rng(7)
    win = rng.standard_normal((16, 512))
    w = rng.standard_normal(16)
    y = w @ win
    mean = sum(y) / len(y)
    var = sum((v - mean) ** 2 for v in y) / len(y)
    assert csp_feature(win, w) == pytest.approx(np.log(var + FEATURE_EPS), rel=1e-12)


# ---------------------------------------------------------------------- MI

def exhaustive_mi_bits(x, y):
    """Oracle: direct double loop over the joint alphabet."""
    n = len(x)
    total = 0.0
    for vx in set(x.tolist()):
        for vy in set(y.tolist()):
            pxy = np.sum((x == vx) & (y == vy)) / n
            if pxy == 0:
                continue
            px = np.sum(x == vx) / n
            py = np.sum(y == vy) / n
            total += pxy * np.log2(pxy / (px * py))
    return total


def test_mi_matches_exhaustive_oracle():
    rng = np.random.default_rng(8)
    for _ in range(10):
        x = rng.integers(0, 8, size=300)
        y = rng.integers(0, 2, size=300) * 2 - 1
        assert mutual_information(x, y) == pytest.approx(exhaustive_mi_bits(x, y), abs=1e-12)


def test_mi_independent_is_near_zero():
    rng = np.random.default_rng(9)
    x = rng.integers(0, 8, size=1000)
    y = rng.integers(0, 2, size=1000) * 2 - 1
    assert mutual_information(x, y) < 0.02


def test_mi_identical_balanced_binary_is_one_bit():
    y = np.r_[np.ones(500, dtype=int), -np.ones(500, dtype=int)]
    assert mutual_information(y, y) == pytest.approx(1.0, abs=1e-12)


def test_mi_constant_feature_is_zero():
    y = np.r_[np.ones(10, dtype=int), -np.ones(10, dtype=int)]
    assert mutual_information(np.zeros(20, dtype=int), y) == 0.0


def test_mi_input_validation():
    with pytest.raises(ValueError):
        mutual_information(np.zeros(5), np.zeros(6))
    with pytest.raises(ValueError):
        mutual_information(np.zeros(1), np.zeros(1))


# -------------------------------------------------------------------- mRMR

def greedy_oracle(table, labels, k, n_bins=8):
    """From-scratch re-scoring of every candidate at every step."""
    binned = discretize_features(table, n_bins)
    n_feat = table.shape[1]
    chosen = []
    for _ in range(k):
        best, best_score = None, None
        for j in range(n_feat):
            if j in chosen:
                continue
            rel = exhaustive_mi_bits(binned[:, j], np.asarray(labels))
            if chosen:
                red = np.mean([exhaustive_mi_bits(binned[:, j], binned[:, s])
                               for s in chosen])
                score = rel - red
            else:
                score = rel
            if best_score is None or score > best_score:
                best, best_score = j, score
        chosen.append(best)
    return chosen


def test_mrmr_k1_picks_max_relevance():
    rng = np.random.default_rng(10)
    labels = rng.integers(0, 2, size=400) * 2 - 1
    table = rng.standard_normal((400, 8))
    table[:, 5] = labels + 0.1 * rng.standard_normal(400)
    picked = mrmr_select(table, labels, k=1)
    assert picked[0].couple_id == 5


def test_mrmr_duplicate_of_best_not_chosen_second():
    rng = np.random.default_rng(11)
    labels = rng.integers(0, 2, size=400) * 2 - 1
    table = rng.standard_normal((400, 6))
    table[:, 2] = labels + 0.05 * rng.standard_normal(400)
    table[:, 3] = table[:, 2]  # exact duplicate
    picked = [c.couple_id for c in mrmr_select(table, labels, k=2)]
    assert picked[0] in (2, 3)
    assert picked[1] not in (2, 3)


def test_mrmr_matches_stepwise_oracle():
    rng = np.random.default_rng(12)
    for trial in range(5):
        labels = rng.integers(0, 2, size=120) * 2 - 1
        table = rng.standard_normal((120, 9))
        table[:, 1] += 0.8 * labels
        table[:, 4] += 0.5 * labels
        for k in (1, 2, 3):
            fast = [c.couple_id for c in mrmr_select(table, labels, k=k)]
            assert fast == greedy_oracle(table, labels, k)


def test_mrmr_returns_six_couples_on_48_table():
    rng = np.random.default_rng(13)
    labels = rng.integers(0, 2, size=200) * 2 - 1
    table = rng.standard_normal((200, 48))
    picked = mrmr_select(table, labels, k=6)
    assert len(picked) == 6
    assert len({c.couple_id for c in picked}) == 6
    for c in picked:
        assert 0 <= c.band < 8 and 0 <= c.filt < 6


def test_mrmr_tie_breaks_to_lowest_id():
    labels = np.r_[np.ones(50, dtype=int), -np.ones(50, dtype=int)]
    column = np.r_[np.zeros(50), np.ones(50)]
    table = np.column_stack([column, column, column])
    picked = [c.couple_id for c in mrmr_select(table, labels, k=2)]
    assert picked == [0, 1]


def test_mrmr_k_too_large():
    with pytest.raises(ValueError):
        mrmr_select(np.zeros((10, 4)), np.ones(10), k=5)


# ---------------------------------------------------------------------- LDA

def test_lda_symmetric_1d_boundary_at_zero():
    x = np.r_[np.full(6, 1.0), np.full(6, -1.0)] + np.tile([0.01, -0.01], 6)
    y = np.r_[np.ones(6, dtype=int), -np.ones(6, dtype=int)]
    model = train_lda(x, y)
    assert model.bias == pytest.approx(0.0, abs=1e-12)


def test_lda_weights_match_closed_form():
    rng = np.random.default_rng(14)
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    chol = np.linalg.cholesky(cov)
    hi = rng.standard_normal((200, 2)) @ chol.T + [1.0, 0.5]
    lo = rng.standard_normal((200, 2)) @ chol.T - [1.0, 0.5]
    x = np.vstack([hi, lo])
    y = np.r_[np.ones(200, dtype=int), -np.ones(200, dtype=int)]
    gamma = 0.1
    model = train_lda(x, y, gamma=gamma)

    mu_hi, mu_lo = hi.mean(axis=0), lo.mean(axis=0)
    pooled = ((hi - mu_hi).T @ (hi - mu_hi) + (lo - mu_lo).T @ (lo - mu_lo)) / (400 - 2)
    shrunk = (1 - gamma) * pooled + gamma * (np.trace(pooled) / 2) * np.eye(2)
    expected = np.linalg.solve(shrunk, mu_hi - mu_lo)
    assert np.allclose(model.weights, expected, atol=1e-10)


def test_lda_outputs_hard_labels():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((40, 3))
    y = np.where(x[:, 0] > 0, 1, -1)
    model = train_lda(x, y)
    out = model.classify(x)
    assert set(out.tolist()) <= {-1, 1}
    assert model.classify(np.zeros(3)) in (1, -1)
    # sign(0) is +1 by contract
    model.bias = 0.0
    model.weights = np.zeros(3)
    assert model.classify(np.zeros(3)) == 1


def test_lda_requires_both_classes():
    with pytest.raises(TrainingError):
        train_lda(np.zeros((12, 2)), np.ones(12, dtype=int))


# ------------------------------------------------------------- calibration

def synth_stream(seed, workload, seconds=60):
    return EegSynthesizer(SynthConfig(seed=seed)).step(workload, seconds * FS)


@pytest.fixture(scope="module")
def small_model():
    return calibrate_pipeline(synth_stream(100, 0.1), synth_stream(101, 0.9))


def test_calibration_window_counts(small_model):
    assert small_model.diagnostics["n_windows_low"] == 591
    assert small_model.diagnostics["n_windows_high"] == 591


def test_calibration_heldout_accuracy(small_model):
    correct = total = 0
    for workload, want in ((0.1, -1), (0.9, 1)):
        labels = classify_stream(small_model, synth_stream(777 + int(workload * 10),
                                                           workload, seconds=20))
        got = np.array([l.label for l in labels])
        correct += np.sum(got == want)
        total += len(got)
    assert correct / total >= 0.9


def test_calibration_identical_classes_is_chance(small_model):
    same = synth_stream(200, 0.5)
    model = calibrate_pipeline(same, same)
    assert model.diagnostics["training_accuracy"] == pytest.approx(0.5, abs=0.1)


def test_calibration_insufficient_data():
    short = EegBlock(0.0, np.zeros((16, 10 * FS)))
    with pytest.raises(CalibrationError, match="samples"):
        calibrate_pipeline(short, synth_stream(1, 0.9))


def test_scaling_invariance_of_labels(small_model):
    scale = 7.5
    low, high = synth_stream(100, 0.1), synth_stream(101, 0.9)
    scaled_model = calibrate_pipeline(
        EegBlock(0.0, scale * low.samples), EegBlock(0.0, scale * high.samples))
    probe = synth_stream(300, 0.55, seconds=10)
    base_labels = [l.label for l in classify_stream(small_model, probe)]
    scaled_labels = [l.label for l in classify_stream(
        scaled_model, EegBlock(0.0, scale * probe.samples))]
    assert base_labels == scaled_labels


def test_model_roundtrip_identical_labels(small_model, tmp_path):
    text = small_model.to_json()
    reloaded = PipelineModel.from_json(text)
    probe = synth_stream(400, 0.4, seconds=60)
    a = [(l.time, l.label) for l in classify_stream(small_model, probe)]
    b = [(l.time, l.label) for l in classify_stream(reloaded, probe)]
    assert a == b
    assert reloaded.content_hash() == small_model.content_hash()
    assert json.loads(text)["version"] == 1


# ---------------------------------------------------------------- streaming

def test_stream_label_count_and_range(small_model):
    labels = classify_stream(small_model, synth_stream(500, 0.9, seconds=10))
    assert len(labels) == 91
    assert all(l.label in (-1, 1) for l in labels)
    times = [l.time for l in labels]
    assert times[0] == pytest.approx(1.0)
    assert np.allclose(np.diff(times), 0.1)


def test_stream_rate_mismatch_rejected(small_model):
    from bciguide.eeg import ChannelLayout
    other = ChannelLayout(sample_rate=256.0)
    block = EegBlock(0.0, np.zeros((16, 256)), other)
    with pytest.raises(ValueError):
        StreamingClassifier(small_model).push(block)


def test_stream_resubstitution(small_model):
    labels = classify_stream(small_model, synth_stream(101, 0.9))
    frac = np.mean([l.label == 1 for l in labels])
    assert frac >= 0.9


# ---------------------------------------------------------------- smoothing

def test_smoother_constant_stream():
    s = MedianSmoother()
    for _ in range(10):
        s.push(1)
    assert s.current() == 1


def test_smoother_six_four_split():
    s = MedianSmoother()
    for v in [1] * 6 + [-1] * 4:
        s.push(v)
    assert s.current() == 1


def test_smoother_five_five_tie():
    s = MedianSmoother()
    for v in [1, -1] * 5:
        s.push(v)
    assert s.current() == 0


def test_smoother_warmup_and_validation():
    s = MedianSmoother()
    for _ in range(9):
        s.push(-1)
    assert s.current() is None
    with pytest.raises(ValueError):
        s.push(0)


def test_smooth_index_matches_hand_sorted_medians():
    rng = np.random.default_rng(16)
    labels = (rng.integers(0, 2, size=65) * 2 - 1).tolist()
    out = smooth_index(labels)
    assert [w.time for w in out] == [float(t) for t in range(2, 9)]
    for w in out:
        upto = labels[:int(round((w.time - 1.0) * 10)) + 1]
        hand = sorted(upto[-10:])
        assert w.value == (hand[4] + hand[5]) / 2
        assert w.raw_history == tuple(upto[-10:])


def test_smooth_index_short_stream():
    assert smooth_index([1] * 9) == []
    out = smooth_index([1] * 10)
    assert len(out) == 1 and out[0].value == 1
