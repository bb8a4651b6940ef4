"""Kernel backends: each compiled kernel against a float64 oracle and
against the numpy fallback."""

import numpy as np
import pytest

from inbetween import kernels
from inbetween.kernels import (ACT_ELU, ACT_LINEAR, ACT_PLU, ACT_SIGMOID,
                               ACT_TANH, load_backend)

BACKENDS = [load_backend("numpy")]
try:
    BACKENDS.append(load_backend("compiled"))
except ImportError:  # pragma: no cover - extension always built in CI
    pass

IDS = [b.name for b in BACKENDS]
F32 = np.float32


def rand_layer(rng, o, i):
    W = rng.normal(0, 1 / np.sqrt(i), (o, i)).astype(F32)
    b = rng.normal(0, 0.1, o).astype(F32)
    return W, b


def oracle_act(v, act):
    if act == ACT_ELU:
        return np.where(v > 0, v, np.expm1(v))
    if act == ACT_PLU:
        return np.maximum(0.1 * (v + 1) - 1,
                          np.minimum(0.1 * (v - 1) + 1, v))
    if act == ACT_TANH:
        return np.tanh(v)
    if act == ACT_SIGMOID:
        return 1.0 / (1.0 + np.exp(-v))
    return v


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
class TestDense:
    @pytest.mark.parametrize("act", [ACT_LINEAR, ACT_ELU, ACT_PLU,
                                     ACT_TANH, ACT_SIGMOID])
    def test_matches_float64_oracle(self, backend, act):
        rng = np.random.default_rng(act)
        W, b = rand_layer(rng, 37, 53)
        x = rng.normal(0, 1, 53).astype(F32)
        out = np.empty(37, dtype=F32)
        backend.dense(W, b, x, act, out)
        want = oracle_act(W.astype(float) @ x.astype(float)
                          + b.astype(float), act)
        np.testing.assert_allclose(out, want, atol=2e-6)

    def test_dense2_is_dense_of_concat(self, backend):
        rng = np.random.default_rng(9)
        W, b = rand_layer(rng, 24, 40)
        x1 = rng.normal(0, 1, 15).astype(F32)
        x2 = rng.normal(0, 1, 25).astype(F32)
        got = np.empty(24, dtype=F32)
        backend.dense2(W, b, x1, x2, ACT_ELU, got)
        want = np.empty(24, dtype=F32)
        backend.dense(W, b, np.concatenate([x1, x2]), ACT_ELU, want)
        np.testing.assert_allclose(got, want, atol=2e-6)

    def test_plu_piecewise_pins(self, backend):
        W = np.eye(3, dtype=F32)
        b = np.zeros(3, dtype=F32)
        out = np.empty(3, dtype=F32)
        backend.dense(W, b, np.array([0.5, 2.0, -2.0], dtype=F32),
                      ACT_PLU, out)
        np.testing.assert_allclose(out, [0.5, 1.1, -1.1], rtol=1e-6)

    def test_elu_saturates(self, backend):
        W = np.eye(2, dtype=F32)
        b = np.zeros(2, dtype=F32)
        out = np.empty(2, dtype=F32)
        backend.dense(W, b, np.array([-50.0, 1.0], dtype=F32), ACT_ELU,
                      out)
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-6)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
class TestLstm:
    def test_matches_float64_oracle(self, backend):
        rng = np.random.default_rng(3)
        H, I = 11, 7
        W, b = rand_layer(rng, 4 * H, I + H)
        x = rng.normal(0, 1, I).astype(F32)
        h = rng.normal(0, 1, H).astype(F32)
        c = rng.normal(0, 1, H).astype(F32)
        gates = np.empty(4 * H, dtype=F32)
        h2 = np.empty(H, dtype=F32)
        c2 = np.empty(H, dtype=F32)
        backend.lstm_step(W, b, x, h, c, gates, h2, c2)

        z = (W.astype(float) @ np.concatenate([x, h]).astype(float)
             + b.astype(float))

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        i, f = sig(z[:H]), sig(z[H:2 * H])
        g, o = np.tanh(z[2 * H:3 * H]), sig(z[3 * H:])
        c_want = f * c.astype(float) + i * g
        np.testing.assert_allclose(c2, c_want, atol=2e-6)
        np.testing.assert_allclose(h2, o * np.tanh(c_want), atol=2e-6)

    def test_inputs_not_mutated(self, backend):
        rng = np.random.default_rng(4)
        H, I = 5, 3
        W, b = rand_layer(rng, 4 * H, I + H)
        x = rng.normal(0, 1, I).astype(F32)
        h = rng.normal(0, 1, H).astype(F32)
        c = rng.normal(0, 1, H).astype(F32)
        h_orig, c_orig = h.copy(), c.copy()
        backend.lstm_step(W, b, x, h, c, np.empty(4 * H, dtype=F32),
                          np.empty(H, dtype=F32), np.empty(H, dtype=F32))
        np.testing.assert_array_equal(h, h_orig)
        np.testing.assert_array_equal(c, c_orig)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
class TestSoftmax:
    def test_matches_oracle_and_sums_to_one(self, backend):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 3, 6).astype(F32)
        want = np.exp(x.astype(float) - x.max())
        want /= want.sum()
        backend.softmax_inplace(x)
        np.testing.assert_allclose(x, want, atol=2e-6)
        np.testing.assert_allclose(x.sum(), 1.0, atol=1e-6)

    def test_shift_invariance_and_overflow_safety(self, backend):
        a = np.array([1000.0, 1001.0, 999.0], dtype=F32)
        b = np.array([0.0, 1.0, -1.0], dtype=F32)
        backend.softmax_inplace(a)
        backend.softmax_inplace(b)
        np.testing.assert_allclose(a, b, atol=1e-6)
        assert np.isfinite(a).all()


@pytest.mark.skipif(len(BACKENDS) < 2,
                    reason="compiled extension unavailable")
class TestBackendAgreement:
    def test_dense_large(self):
        rng = np.random.default_rng(6)
        W, b = rand_layer(rng, 512, 1024)
        x = rng.normal(0, 1, 1024).astype(F32)
        outs = []
        for be in BACKENDS:
            out = np.empty(512, dtype=F32)
            be.dense(W, b, x, ACT_ELU, out)
            outs.append(out)
        np.testing.assert_allclose(outs[0], outs[1], atol=1e-5)

    def test_lstm_large(self):
        rng = np.random.default_rng(7)
        H, I = 256, 192
        W, b = rand_layer(rng, 4 * H, I + H)
        x = rng.normal(0, 1, I).astype(F32)
        h = rng.normal(0, 0.5, H).astype(F32)
        c = rng.normal(0, 0.5, H).astype(F32)
        outs = []
        for be in BACKENDS:
            h2 = np.empty(H, dtype=F32)
            c2 = np.empty(H, dtype=F32)
            be.lstm_step(W, b, x, h, c, np.empty(4 * H, dtype=F32),
                         h2, c2)
            outs.append((h2, c2))
        np.testing.assert_allclose(outs[0][0], outs[1][0], atol=1e-5)
        np.testing.assert_allclose(outs[0][1], outs[1][1], atol=1e-5)


class TestLoadBackend:
    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError, match="backend"):
            load_backend("cuda")

    def test_numpy_by_name(self):
        assert load_backend("numpy").name == "numpy"

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("INBETWEEN_BACKEND", "numpy")
        assert load_backend().name == "numpy"

    def test_auto_prefers_compiled_when_present(self):
        try:
            import inbetween._kernels  # noqa: F401
        except ImportError:
            pytest.skip("extension not built")
        assert load_backend("auto").name == "compiled"

    def test_activation_codes_frozen(self):
        # the compiled dispatch hard-codes these
        assert (kernels.ACT_LINEAR, kernels.ACT_ELU, kernels.ACT_PLU,
                kernels.ACT_TANH, kernels.ACT_SIGMOID) == (0, 1, 2, 3, 4)
