import json

import numpy as np
import pytest

from magschrod import recon as R
from magschrod.fields import Grid3, ScalarField, Scenario, VectorField, make_potential

BALL = ((0.0, 0.0, 0.0), 1.3)


def half_grid(n=48, hw=1.6):
    return Grid3.cube(n, hw, n3=n - 1).lower_half()


def scenario(g, A=None, q=None, k=2.0):
    A = VectorField(g, np.zeros((3,) + g.dims)) if A is None else A
    q = ScalarField(g, np.zeros(g.dims, complex)) if q is None else q
    return Scenario(k, A, q, BALL, (-1.5, 1.5, -1.5, 1.5), (-1.5, 1.5, -1.5, 1.5))


def gauss_A(g, amp=(0.6, -0.4, 0.3), sigma=0.15, center=(0.1, 0.0, -0.7)):
    A = make_potential("gaussian_bump", g, None, amplitude=amp, sigma=sigma, center=center, cutoff=0.65)
    return VectorField(g, A.values.real)


def gauss_q(g, amp=2 - 1j, sigma=0.15, center=(0.1, -0.1, -0.6)):
    return make_potential("gaussian_bump", g, None, amplitude=amp, sigma=sigma, center=center, cutoff=0.65)


def gauss_ft(amp, sigma, center, xi):
    """Closed-form transform of the untruncated Gaussian with the exp(+i x.xi) sign."""
    xi = np.asarray(xi, float)
    return amp * (2 * np.pi * sigma ** 2) ** 1.5 * np.exp(1j * xi @ np.asarray(center) - sigma ** 2 * xi @ xi / 2)


def poly_gauge(g, c=(0.0, 0.0, -0.65), sigma=0.2, reach=0.62):
    """``psi = exp(-r^2/(2 sigma^2)) (1 - r^2/reach^2)_+^8`` and its analytic gradient."""
    x = g.mesh()
    d = [x[j] - c[j] for j in range(3)]
    r2 = sum(e * e for e in d)
    t = np.clip(1 - r2 / reach ** 2, 0, None)
    ga = np.exp(-r2 / (2 * sigma ** 2))
    dr = ga * (-t ** 8 / sigma ** 2 - 16 * t ** 7 / reach ** 2)
    return ga * t ** 8, np.stack([dr * e for e in d])


@pytest.fixture(scope="module")
def g():
    return half_grid()


@pytest.fixture(scope="module")
def q_pair(g):
    return R.ScenarioPair(scenario(g), scenario(g, q=gauss_q(g)))


def test_pairing_vanishes_for_equal_potentials(g):
    A, q = gauss_A(g), gauss_q(g)
    rng = np.random.default_rng(1)
    u = rng.standard_normal(g.dims) + 1j * rng.standard_normal(g.dims)
    u[..., -1] = 0.0
    assert R.pairing_integral(ScalarField(g, u), ScalarField(g, u), A, A, q, q, BALL) == 0.0
    v = u.copy()
    v[..., -1] = 1.0
    with pytest.raises(ValueError, match="vanish"):
        R.pairing_integral(ScalarField(g, v), ScalarField(g, u), A, A, q, q, BALL)


def test_transform_round_trip(g):
    grid = g.mirror()
    rng = np.random.default_rng(2)
    f = rng.standard_normal(grid.dims) + 1j * rng.standard_normal(grid.dims)
    back = R.inverse_transform(R.forward_transform(f, grid), grid)
    assert np.abs(back - f).max() < 1e-12


def test_oracle_A_samples_match_closed_form(g):
    amp, sig, c = np.array([0.6, -0.4, 0.3]), 0.08, np.array([0.1, 0.0, -0.7])
    pair = R.ScenarioPair(scenario(g), scenario(g, gauss_A(g, amp, sig, c)))
    s = R.sample_A_oracle(pair)
    full = s.meta["full"]
    nodes = s.dual.nodes()
    cm = c * np.array([1, 1, -1])
    worst = 0.0
    for idx in [(1, 0, 0), (2, 3, 1), (5, -2, 4), (-4, 6, -3), (8, 8, 8)]:
        xi = nodes[(slice(None),) + idx]
        if np.linalg.norm(xi) > 4 * np.pi / 1.6 * 1.2:
            continue
        ref = np.array([gauss_ft(amp[j], sig, c, xi) + (1 if j < 2 else -1) * gauss_ft(amp[j], sig, cm, xi)
                        for j in range(3)])
        worst = max(worst, np.linalg.norm(full[(slice(None),) + idx] - ref) / np.linalg.norm(ref))
    assert worst < 2e-2


def test_gauge_pair_has_null_curl(g):
    _, grad = poly_gauge(g)
    pair = R.ScenarioPair(scenario(g), scenario(g, VectorField(g, grad)))
    curl, info = R.recover_curl(R.sample_A_oracle(pair))
    A1, A2, _, _ = pair.extended()
    assert np.linalg.norm(curl.values) < 1e-3 * np.linalg.norm(A2) / BALL[1]


def test_curl_recovery_gaussian(g):
    pair = R.ScenarioPair(scenario(g), scenario(g, gauss_A(g)))
    curl, info = R.recover_curl(R.sample_A_oracle(pair))
    truth = R.curl_truth(pair)
    inside = R.ball_weights(g.mirror(), BALL)[None] > 0
    err = np.linalg.norm((curl.values - truth) * inside) / np.linalg.norm(truth * inside)
    assert err < 0.1 and info["axis_fill_error"] < 0.1


def test_samples_linear(g):
    pair = R.ScenarioPair(scenario(g), scenario(g, gauss_A(g)))
    s = R.sample_A_oracle(pair)
    alpha = 0.7 - 0.2j
    c1, _ = R.recover_curl(s)
    c2, _ = R.recover_curl(s.scaled(alpha))
    assert np.linalg.norm(c2.values - alpha * c1.values) < 1e-12 * np.linalg.norm(c2.values)


def test_coverage_rejection(g):
    pair = R.ScenarioPair(scenario(g), scenario(g, gauss_A(g)))
    s = R.sample_A_oracle(pair)
    s.flagged[:, :, : s.flagged.shape[2] // 5] = True
    with pytest.raises(ValueError, match="coverage"):
        R.recover_curl(s)


def test_measurement_A_sample_near_oracle(g):
    pair = R.ScenarioPair(scenario(g), scenario(g, gauss_A(g, sigma=0.2, center=(0.1, 0.0, -0.7))))
    r = R.fourier_sample_A(pair, (1.0, 0.5, 0.0), "measurement")
    assert abs(r["value"] - r["oracle"]) < 5e-2 * abs(r["oracle"])


def test_gauge_align_known_psi(g):
    ref, grad = poly_gauge(g)
    A1 = gauss_A(g)
    A2 = VectorField(g, A1.values - grad)
    got = R.gauge_align(A1, A2, BALL)
    inside = g.radius(BALL[0]) <= BALL[1]
    err = got.values.real[inside] - ref[inside]
    err -= err.mean()
    assert np.linalg.norm(err) < 1e-3 * np.linalg.norm(ref[inside])
    s = g.wavenumbers()
    gr = np.stack([np.real(np.fft.ifftn(1j * s[j] * np.fft.fftn(got.values.real))) for j in range(3)])
    curl = R.spectral_curl(gr.astype(complex), g)
    assert np.linalg.norm(curl) < 1e-6 * np.linalg.norm(gr) / BALL[1]


def test_gauge_align_rejects_curl(g):
    with pytest.raises(ValueError, match="curl certification"):
        R.gauge_align(VectorField(g, np.zeros((3,) + g.dims)), gauss_A(g), BALL)


def test_fast_pairing_matches_slow(q_pair):
    dual = R.DualGrid(q_pair.half.mirror())
    hs = R.q_ladders(dual)[-1]
    fast = R.q_pairing_fast(q_pair, hs)
    idx = (3, 1, 5)
    slow = R.q_pairing_slow(q_pair, dual.nodes()[(slice(None),) + idx], hs[idx])
    assert abs(fast[idx] - slow) < 1e-8 * abs(slow)


def test_q_oracle_recovery(q_pair):
    qf, info = R.recover_q(R.sample_q_oracle(q_pair))
    w = R.ball_weights(q_pair.half.mirror(), BALL)
    assert R.rel_l2(qf.values, R.q_truth(q_pair), w) < 1e-2


def test_q_measurement_recovery(q_pair):
    s = R.sample_q_measurement(q_pair)
    assert s.flagged_fraction < 0.1
    qf, info = R.recover_q(s)
    w = R.ball_weights(q_pair.half.mirror(), BALL)
    assert R.rel_l2(qf.values, R.q_truth(q_pair), w) < 0.1


def test_q_samples_conjugate_symmetric(g):
    pair = R.ScenarioPair(scenario(g), scenario(g, q=gauss_q(g, amp=1.5)))
    v = R.sample_q_measurement(pair).values
    flip = np.conj(np.roll(v[::-1, ::-1, ::-1], 1, axis=(0, 1, 2)))
    # -xi is not a node on the Nyquist rows of the even lateral axes
    keep = np.ones(v.shape, bool)
    keep[v.shape[0] // 2] = keep[:, v.shape[1] // 2] = False
    assert np.abs(v - flip)[keep].max() < 1e-10 * np.abs(v).max()


def test_reconstruct_writes_outputs(q_pair, tmp_path):
    res = R.reconstruct(q_pair, "measurement")
    js = res.write(tmp_path)
    assert res.rel_err_q < 0.1
    assert json.loads((tmp_path / "recon_metrics.json").read_text())["mode"] == "measurement"
    assert (tmp_path / "curl.msf").exists() and (tmp_path / "q.msf").exists() and js["flagged_fraction"] < 0.1
