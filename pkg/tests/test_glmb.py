import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from oracles import (wrap360, brute_posterior, kf_predict, kf_update, model_matrices, pd_oracle,
                     predictive_likelihood, random_case)

from mfglmb.glmb import (FeatureObservation, FilterParams, GlmbFilter, GlmbState, Hypothesis,
                         TargetState, angle_diff, assemble_streams, detection_prob, doa_likelihood,
                         extract_estimates, likelihood, pitch_likelihood, predict, transition,
                         update)

P = FilterParams()


def _track(label, doa, rate, f0, cov=None, sound=None):
    cov = np.diag([4.0, 25.0, 100.0]) if cov is None else np.asarray(cov, dtype=float)
    return TargetState(label, np.array([doa, rate, f0], dtype=float), cov, sound)


def _obs(doa, pitch, k=0, sound=None):
    return FeatureObservation(doa, pitch, sound, k)


def _posterior_by_key(state):
    return {tuple(sorted((t.label, t.assoc) for t in h.tracks)): h.weight for h in state.hypotheses}


# detection probability

def test_detection_peak():
    assert detection_prob(280.0) == 0.98


def test_detection_one_sigma():
    assert detection_prob(310.0) == pytest.approx(0.98 * math.exp(-0.5), rel=1e-15)
    assert detection_prob(310.0) == pytest.approx(0.5944, abs=5e-6)


@settings(max_examples=100)
@given(f0=st.floats(-1e6, 1e6))
def test_detection_matches_oracle(f0):
    assert detection_prob(f0) == pytest.approx(pd_oracle(f0), abs=1e-15)
    assert 0.0 <= detection_prob(f0) <= 0.98


def test_detection_tails():
    assert detection_prob(np.inf) == 0.0
    assert detection_prob(-np.inf) == 0.0


# transition

def test_transition_fixed_point():
    s = transition(_track((0, 0), 232.1, 0.0, 120.0))
    np.testing.assert_allclose(s.mean, [232.1, 0.0, 120.0])
    assert np.all(np.diag(s.cov) > np.diag(_track((0, 0), 0, 0, 0).cov))


def test_transition_moving():
    s = transition(_track((0, 0), 232.1, 10.0, 120.0, sound=np.ones(3)))
    np.testing.assert_allclose(s.mean, [233.1, 10 * math.exp(-0.02), 120.0], rtol=1e-15)
    assert s.mean[1] == pytest.approx(9.80199, abs=5e-6)
    assert s.sound is None


def test_transition_process_noise():
    q = P.process_noise()
    assert math.sqrt(q[1, 1]) == pytest.approx(10 * math.sqrt(1 - math.exp(-0.04)), rel=1e-15)
    assert math.sqrt(q[1, 1]) == pytest.approx(1.980166, abs=1e-6)
    assert q[0, 0] == 0.0 and q[2, 2] == 900.0


def test_transition_wraps():
    s = transition(_track((0, 0), 359.5, 10.0, 200.0))
    assert s.mean[0] == pytest.approx(0.5)


def test_transition_matches_oracle():
    F, Q = model_matrices()
    t = _track((0, 0), 100.0, 3.0, 200.0, cov=[[4, 1, 0], [1, 9, 0], [0, 0, 50]])
    s = transition(t)
    m, Pp = kf_predict(t.mean, t.cov, F, Q)
    np.testing.assert_allclose(s.mean, m, rtol=1e-14)
    np.testing.assert_allclose(s.cov, Pp, rtol=1e-14)


# likelihood

def test_likelihood_peak():
    t = _track((0, 0), 40.0, 0.0, 200.0, cov=np.zeros((3, 3)))
    assert likelihood(_obs(40.0, 200.0), t) == pytest.approx(1 / (2 * math.pi * 2 * 10), rel=1e-12)
    assert likelihood(_obs(40.0, 200.0), t) == pytest.approx(7.9577e-3, abs=1e-7)


def test_likelihood_wrap():
    t = _track((0, 0), 359.0, 0.0, 200.0, cov=np.zeros((3, 3)))
    u = _track((0, 0), 3.0, 0.0, 200.0, cov=np.zeros((3, 3)))
    assert likelihood(_obs(1.0, 200.0), t) == pytest.approx(likelihood(_obs(1.0, 200.0), u), rel=1e-12)


def test_likelihood_pitch_five_sigma():
    t = _track((0, 0), 40.0, 0.0, 200.0, cov=np.zeros((3, 3)))
    ratio = likelihood(_obs(40.0, 250.0), t) / likelihood(_obs(40.0, 200.0), t)
    assert ratio == pytest.approx(math.exp(-12.5), rel=1e-12)


@settings(max_examples=100)
@given(doa=st.floats(0, 359.9), dz=st.floats(-30, 30), f0=st.floats(60, 490), fz=st.floats(50, 500),
       v0=st.floats(0.0, 50.0), v2=st.floats(0.0, 2000.0))
def test_likelihood_factorizes(doa, dz, f0, fz, v0, v2):
    t = _track((0, 0), doa, 0.0, f0, cov=np.diag([v0, 7.0, v2]))
    z = _obs(wrap360(doa + dz), fz)
    joint = likelihood(z, t)
    assert joint == pytest.approx(doa_likelihood(z, t) * pitch_likelihood(z, t), rel=1e-9, abs=1e-300)
    assert joint == pytest.approx(predictive_likelihood(t.mean, t.cov, z.doa, z.pitch), rel=1e-9,
                                  abs=1e-300)


def test_pitchless_likelihood_is_doa_only():
    t = _track((0, 0), 40.0, 0.0, 200.0)
    z = _obs(42.0, None)
    assert pitch_likelihood(z, t) == 1.0
    assert likelihood(z, t) == pytest.approx(predictive_likelihood(t.mean, t.cov, 42.0, None))


# predict

def test_predict_empty_state():
    s = predict(GlmbState())
    assert len(s.hypotheses) == 1 and s.hypotheses[0].tracks == () and s.hypotheses[0].weight == 1.0
    assert s.frame_index == 0


def _one_target():
    return GlmbState([Hypothesis(1.0, (_track((0, 0), 40.0, 0.0, 200.0),))], frame_index=3)


def test_predict_certain_survival():
    s = predict(_one_target(), FilterParams(p_survival=1.0))
    np.testing.assert_allclose(s.cardinality_distribution(), [0.0, 1.0])


def test_predict_survival_075():
    s = predict(_one_target())
    np.testing.assert_allclose(s.cardinality_distribution(), [0.25, 0.75], atol=1e-15)


def test_predict_births():
    st0 = GlmbState(frame_index=4, birth_candidates=[_obs(40.0, 200.0, 4), _obs(90.0, None, 4),
                                                     _obs(300.0, 150.0, 4)])
    s = predict(st0)
    assert s.frame_index == 5
    labels = {t.label for h in s.hypotheses for t in h.tracks}
    assert labels == {(5, 0), (5, 2)}
    np.testing.assert_allclose(s.cardinality_distribution(), [0.81, 0.18, 0.01], atol=1e-12)
    born = next(t for h in s.hypotheses for t in h.tracks if t.label == (5, 0))
    np.testing.assert_array_equal(born.mean, [40.0, 0.0, 200.0])
    np.testing.assert_array_equal(born.cov, np.diag([25.0, 100.0, 900.0]))


# update

def test_update_empty_obs_all_missed():
    t = _track((0, 0), 40.0, 0.0, 280.0)
    s = GlmbState([Hypothesis(0.5, ()), Hypothesis(0.5, (t,))], frame_index=2)
    u = update(s, [], P, frame_len=16)
    w = {len(h.tracks): h.weight for h in u.hypotheses}
    assert w[1] == pytest.approx(0.02 / 1.02, rel=1e-12)
    tr = next(h for h in u.hypotheses if h.tracks).tracks[0]
    assert tr.assoc == -1 and tr.sound.shape == (16,) and not np.any(tr.sound)


def test_update_single_association():
    t = _track((0, 0), 40.0, 0.0, 280.0, cov=np.diag([4.0, 1.0, 100.0]))
    s = GlmbState([Hypothesis(1.0, (t,))], frame_index=0)
    z = _obs(40.0, 280.0, 0, sound=np.arange(4.0))
    u = update(s, [z], FilterParams(prune_threshold=0.0), frame_len=4)
    kappa = 0.044 / (360 * 450)
    assert kappa == pytest.approx(2.716e-7, rel=1e-3)
    r = 0.98 * predictive_likelihood(t.mean, t.cov, 40.0, 280.0) / kappa
    post = _posterior_by_key(u)
    assert post[(((0, 0), 0),)] == pytest.approx(r / (r + 0.02), rel=1e-12)
    assert post[(((0, 0), 0),)] > 0.9999
    best = max(u.hypotheses, key=lambda h: h.weight).tracks[0]
    np.testing.assert_array_equal(best.sound, np.arange(4.0))


def test_update_colocated_pitch_disambiguation():
    low = _track((0, 0), 232.1, 0.0, 120.0)
    high = _track((0, 1), 232.1, 0.0, 280.0)
    s = GlmbState([Hypothesis(1.0, (low, high))], frame_index=0)
    u = update(s, [_obs(232.1, 280.0)], FilterParams(prune_threshold=0.0))
    post = _posterior_by_key(u)
    want = brute_posterior([(1.0, [(t.label, t.mean, t.cov) for t in (low, high)])], [(232.1, 280.0)])
    assert set(post) == set(want)
    for k in want:
        assert post[k] == pytest.approx(want[k], abs=1e-12)
    m_high = sum(w for k, w in post.items() if ((0, 1), 0) in k)
    m_low = sum(w for k, w in post.items() if ((0, 0), 0) in k)
    assert m_high > 1e6 * m_low


def test_update_rejects_wrong_frame():
    with pytest.raises(ValueError):
        update(GlmbState(frame_index=3), [_obs(10.0, 200.0, 4)])


@pytest.mark.parametrize("solver", ["auto", "murty", "exhaustive"])
def test_update_matches_enumeration(solver):
    r = np.random.default_rng(7)
    params = FilterParams(prune_threshold=0.0, solver=solver)
    for _ in range(60):
        state, oracle, obs = random_case(r, int(r.integers(0, 3)))
        u = update(state, [_obs(d, p) for d, p in obs], params)
        want = brute_posterior(oracle, obs)
        got = _posterior_by_key(u)
        for k in set(got) | set(want):
            assert got.get(k, 0.0) == pytest.approx(want.get(k, 0.0), abs=1e-9)


def test_kalman_oracle_degenerate():
    params = FilterParams(p_survival=1.0, pd_max=1.0, pd_std=math.inf, clutter_rate=0.0,
                          birth_weight=0.0)
    F, Q = model_matrices()
    H = np.array([[1.0, 0, 0], [0, 0, 1.0]])
    R = np.diag([4.0, 100.0])
    t0 = _track((0, 0), 100.0, 0.0, 200.0, cov=np.diag([25.0, 100.0, 900.0]))
    state = GlmbState([Hypothesis(1.0, (t0,))], frame_index=-1)
    m, Pk = t0.mean.copy(), t0.cov.copy()
    r = np.random.default_rng(3)
    for k in range(40):
        z = (wrap360(100.0 + 0.8 * k + r.normal(0, 2)), float(200 + r.normal(0, 10)))
        state = predict(state, params)
        state = update(state, [_obs(*z, k)], params)
        m, Pk = kf_predict(m, Pk, F, Q)
        m, Pk = kf_update(m, Pk, z, H, R)
        assert len(state.hypotheses) == 1
        t = state.hypotheses[0].tracks[0]
        np.testing.assert_allclose(t.mean, m, atol=1e-6)
        np.testing.assert_allclose(t.cov, Pk, atol=1e-6)


# invariants over random runs

def _check_invariants(state, after_predict):
    assert abs(state.weights().sum() - 1.0) <= 1e-9
    assert np.all(state.weights() >= 0)
    for h in state.hypotheses:
        assert len(set(h.labels)) == len(h.labels)
        for t in h.tracks:
            assert np.allclose(t.cov, t.cov.T)
            assert np.linalg.eigvalsh(t.cov).min() >= -1e-9
            if after_predict:
                assert t.sound is None
            else:
                assert t.sound is not None and t.sound.shape == (8,)
                if t.assoc == -1:
                    assert not np.any(t.sound)


def _scenario_obs(r, n_frames):
    """Two or three drifting talkers with misses and clutter."""
    talkers = [(r.uniform(0, 360), r.normal(0, 0.5), r.uniform(150, 400)) for _ in range(r.integers(1, 4))]
    frames = []
    for k in range(n_frames):
        obs = []
        for d0, v, f0 in talkers:
            if r.random() < 0.85:
                pitch = float(np.clip(f0 + r.normal(0, 8), 50, 500)) if r.random() < 0.9 else None
                obs.append((wrap360(d0 + v * k + r.normal(0, 1.5)), pitch))
        if r.random() < 0.1:
            obs.append((r.uniform(0, 360), r.uniform(50, 500)))
        frames.append(obs)
    return frames


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_invariants_hold_through_runs(seed):
    r = np.random.default_rng(seed)
    params = FilterParams(h_max=60)
    state = GlmbState()
    seen_births = set()
    for k, frame in enumerate(_scenario_obs(r, 15)):
        state = predict(state, params)
        _check_invariants(state, True)
        new = {t.label for h in state.hypotheses for t in h.tracks if t.label[0] == k}
        assert not (new & seen_births)
        seen_births |= new
        obs = [_obs(d, p, k, sound=r.standard_normal(8)) for d, p in frame]
        state = update(state, obs, params, frame_len=8)
        _check_invariants(state, False)


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2 ** 31), shift=st.floats(0.0, 360.0, exclude_max=True))
def test_circular_consistency(seed, shift):
    r = np.random.default_rng(seed)
    frames = _scenario_obs(r, 10)
    params = FilterParams(h_max=60)
    a, b = GlmbState(), GlmbState()
    for k, frame in enumerate(frames):
        a = update(predict(a, params), [_obs(d, p, k) for d, p in frame], params, 4)
        b = update(predict(b, params), [_obs(wrap360(d + shift), p, k) for d, p in frame],
                   params, 4)
        ka = {tuple((t.label, t.history) for t in h.tracks): h.weight for h in a.hypotheses}
        kb = {tuple((t.label, t.history) for t in h.tracks): h.weight for h in b.hypotheses}
        common = set(ka) & set(kb)
        # truncation ties may drop different near-zero hypotheses; the mass itself must agree
        assert sum(ka[c] for c in common) >= 1 - 1e-6
        for c in common:
            assert ka[c] == pytest.approx(kb[c], abs=1e-9)
        ea, eb = extract_estimates(a), extract_estimates(b)
        assert [e.label for e in ea] == [e.label for e in eb]
        for x, y in zip(ea, eb):
            assert abs(angle_diff(y.doa, x.doa + shift)) < 1e-6


# extraction and streams

def test_extract_single():
    t = _track((2, 0), 40.0, 0.0, 200.0)
    est = extract_estimates(GlmbState([Hypothesis(1.0, (t,))]))
    assert [e.label for e in est] == [(2, 0)]
    assert est[0].doa == 40.0 and est[0].pitch == 200.0


def test_extract_map_cardinality():
    l1 = _track((0, 1), 40.0, 0.0, 200.0)
    l2 = _track((0, 2), 90.0, 0.0, 300.0)
    s = GlmbState([Hypothesis(0.2, ()), Hypothesis(0.35, (l1,)), Hypothesis(0.30, (l2,)),
                   Hypothesis(0.15, (l1, l2))])
    np.testing.assert_allclose(s.cardinality_distribution(), [0.2, 0.65, 0.15])
    assert [e.label for e in extract_estimates(s)] == [(0, 1)]


def _est(label, sound):
    from mfglmb.glmb import TrackEstimate
    return TrackEstimate(label, 10.0, 200.0, 1.0, 5.0, sound, 0)


def test_assemble_full_presence():
    frames = [[_est((0, 0), np.full(4, k + 1.0))] for k in range(5)]
    streams, table = assemble_streams(frames, frame_len=4)
    assert streams[(0, 0)].shape == (20,)
    np.testing.assert_array_equal(streams[(0, 0)], np.repeat(np.arange(1.0, 6.0), 4))
    assert table == [(k, (0, 0), 10.0, 200.0) for k in range(5)]


def test_assemble_zero_fill():
    frames = [[_est((0, 0), np.ones(4))], [], [_est((0, 0), np.ones(4)), _est((2, 1), 2 * np.ones(4))]]
    streams, _ = assemble_streams(frames, frame_len=4)
    assert not np.any(streams[(0, 0)][4:8])
    assert not np.any(streams[(2, 1)][:8])
    np.testing.assert_array_equal(streams[(2, 1)][8:], 2.0)


def test_filter_step_confirms_after_two_frames():
    f = GlmbFilter(FilterParams(), frame_len=4)
    outs = [f.step([_obs(75.0, 280.0, k, np.ones(4))]) for k in range(4)]
    assert outs[0] == []
    assert [e.label for e in outs[1]] == [(1, 0)]
    assert abs(outs[3][0].doa - 75.0) < 1.0


# parameters

def test_params_round_trip(tmp_path):
    p = FilterParams(p_survival=0.8, h_max=50)
    f = tmp_path / "p.json"
    p.save(f)
    assert FilterParams.load(f) == p
    assert FilterParams.from_dict(json.loads(f.read_text())) == p


def test_params_errors(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        FilterParams.from_dict({"p_surv": 0.5})
    with pytest.raises(ValueError):
        FilterParams.from_dict({"p_survival": 1.5})
    with pytest.raises(ValueError):
        FilterParams.from_dict({"solver": "greedy"})
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "h_max": 10,\n  oops\n}')
    with pytest.raises(ValueError, match=r"bad\.json:3"):
        FilterParams.load(bad)


def test_paper_defaults():
    assert (P.p_survival, P.clutter_rate, P.sigma_doa, P.sigma_f0) == (0.75, 0.044, 2.0, 10.0)
    assert (P.t_delta, P.beta, P.sigma_rate, P.sigma_f0_walk) == (0.1, 0.2, 10.0, 30.0)
    assert (P.birth_std_doa, P.birth_std_f0) == (5.0, 30.0)


def test_observation_validation():
    with pytest.raises(ValueError):
        _obs(360.0, 200.0)
    with pytest.raises(ValueError):
        _obs(10.0, 40.0)
