import numpy as np
import pytest

from examgen import neural
from examgen.neural import _kernels_py


def finite_diff(loss_fn, arr, probes, rng, h=1e-5):
    """Central finite differences of loss_fn at `probes` random entries."""
    flat = arr.ravel()
    picked = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
    out = {}
    for idx in picked:
        orig = flat[idx]
        flat[idx] = orig + h
        lp = loss_fn()
        flat[idx] = orig - h
        lm = loss_fn()
        flat[idx] = orig
        out[int(idx)] = (lp - lm) / (2 * h)
    return out


def assert_grads_match(analytic, numeric, tol=1e-4):
    for idx, fd in numeric.items():
        an = analytic.ravel()[idx]
        rel = abs(fd - an) / max(1e-8, abs(fd), abs(an))
        assert rel < tol, f"entry {idx}: analytic {an} vs fd {fd}"


class TestDense:
    def test_identity_passthrough(self):
        layer = neural.DenseLayer(np.eye(4), np.zeros(4), "identity")
        x = np.array([1.0, -2.0, 3.0, 0.5])
        assert np.array_equal(neural.dense_forward(layer, x), x)

    def test_sigmoid_of_zero_is_half(self):
        layer = neural.DenseLayer(np.zeros((3, 5)), np.zeros(3), "sigmoid")
        out = neural.dense_forward(layer, np.ones(5))
        assert np.allclose(out, 0.5)

    def test_forward_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        layer = neural.init_dense(rng, 4, 3, "identity")
        x = rng.normal(size=4)
        expected = np.zeros(3)
        for i in range(3):
            acc = layer.b[i]
            for j in range(4):
                acc += layer.w[i, j] * x[j]
            expected[i] = acc
        assert np.allclose(neural.dense_forward(layer, x), expected, atol=1e-12)

    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(1)
        layer = neural.init_dense(rng, 4, 3, "tanh")
        dx, dw, db = neural.dense_backward(layer, rng.normal(size=4), np.zeros(3))
        assert not dx.any() and not dw.any() and not db.any()

    def test_scalar_sigmoid_closed_form(self):
        layer = neural.DenseLayer(np.array([[0.7]]), np.array([0.1]), "sigmoid")
        x = np.array([0.3])
        y = neural.dense_forward(layer, x)[0]
        _, dw, _ = neural.dense_backward(layer, x, np.ones(1))
        assert dw[0, 0] == pytest.approx(y * (1 - y) * x[0], rel=1e-12)

    @pytest.mark.parametrize("activation", ["sigmoid", "tanh", "relu", "identity"])
    def test_backward_matches_finite_differences(self, activation):
        rng = np.random.default_rng(7)
        layer = neural.init_dense(rng, 6, 4, activation)
        x = rng.normal(size=6) + 0.05  # keep relu probes away from the kink
        upstream = rng.normal(size=4)

        def loss():
            return float(neural.dense_forward(layer, x) @ upstream)

        _, dw, db = neural.dense_backward(layer, x, upstream)
        assert_grads_match(dw, finite_diff(loss, layer.w, 20, rng))
        assert_grads_match(db, finite_diff(loss, layer.b, 4, rng))

    def test_dimension_mismatch(self):
        layer = neural.DenseLayer(np.zeros((2, 3)), np.zeros(2), "identity")
        with pytest.raises(ValueError):
            neural.dense_forward(layer, np.zeros(4))


class TestLstmStep:
    def test_zero_cell_fixed_point(self):
        cell = neural.LstmCell(np.zeros((8, 5)), np.zeros(8))
        h, c, _ = neural.lstm_step(cell, np.zeros(3), np.zeros(2), np.zeros(2))
        assert not h.any() and not c.any()

    def test_first_step_ignores_forget_gate(self):
        rng = np.random.default_rng(3)
        cell = neural.init_lstm(rng, 3, 2)
        x = rng.normal(size=3)
        h1, c1, _ = neural.lstm_step(cell, x, np.zeros(2), np.zeros(2))
        shifted = neural.LstmCell(cell.w.copy(), cell.b.copy())
        shifted.b[2:4] += 10.0  # forget-gate bias: irrelevant when c_prev = 0
        h2, c2, _ = neural.lstm_step(shifted, x, np.zeros(2), np.zeros(2))
        assert np.allclose(c1, c2, atol=1e-12) and np.allclose(h1, h2, atol=1e-12)

    def test_one_step_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        cell = neural.init_lstm(rng, 4, 3)
        x = rng.normal(size=4)
        h_prev = rng.normal(size=3)
        c_prev = rng.normal(size=3)
        weights = rng.normal(size=3)

        def loss():
            h, _, _ = neural.lstm_step(cell, x, h_prev, c_prev)
            return float(h @ weights)

        _, _, cache = neural.lstm_step(cell, x, h_prev, c_prev)
        grads, dx, dh_prev, dc_prev = neural.lstm_step_backward(cell, cache, weights)
        assert_grads_match(grads["w"], finite_diff(loss, cell.w, 30, rng))
        assert_grads_match(grads["b"], finite_diff(loss, cell.b, 12, rng))
        assert_grads_match(dx, finite_diff(loss, x, 4, rng))
        assert_grads_match(dh_prev, finite_diff(loss, h_prev, 3, rng))
        assert_grads_match(dc_prev, finite_diff(loss, c_prev, 3, rng))


class TestBptt:
    def _setup(self, T, D=5, H=4, K=3, seed=5):
        rng = np.random.default_rng(seed)
        cell = neural.init_lstm(rng, D, H)
        readout = neural.init_dense(rng, H, K, "sigmoid")
        inputs = np.ascontiguousarray(rng.normal(size=(T, D)))
        tw = rng.random((T, K))
        tw /= tw.sum(axis=1, keepdims=True)
        labels = (rng.random(T) < 0.5).astype(float)
        mask = np.ones(T)
        return rng, cell, readout, inputs, tw, labels, mask

    def test_length_one_equals_single_step(self):
        rng, cell, readout, inputs, tw, labels, mask = self._setup(1)
        loss, _ = neural.lstm_bptt(cell, inputs, readout, tw, labels, mask)
        h, _, _ = neural.lstm_step(cell, inputs[0], np.zeros(4), np.zeros(4))
        y = neural.dense_forward(readout, h)
        p = float(y @ tw[0])
        expected = float(neural.binary_cross_entropy(np.array([p]), labels[:1])[0])
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_fully_masked_sequence(self):
        rng, cell, readout, inputs, tw, labels, _ = self._setup(4)
        loss, grads = neural.lstm_bptt(cell, inputs, readout, tw, labels, np.zeros(4))
        assert loss == 0.0
        assert all(not g.any() for g in grads.values())

    def test_gradients_match_finite_differences(self):
        rng, cell, readout, inputs, tw, labels, mask = self._setup(3)

        def loss():
            return neural.lstm_bptt(cell, inputs, readout, tw, labels, mask)[0]

        _, grads = neural.lstm_bptt(cell, inputs, readout, tw, labels, mask)
        assert_grads_match(grads["cell_w"], finite_diff(loss, cell.w, 40, rng))
        assert_grads_match(grads["cell_b"], finite_diff(loss, cell.b, 16, rng))
        assert_grads_match(grads["readout_w"], finite_diff(loss, readout.w, 12, rng))
        assert_grads_match(grads["readout_b"], finite_diff(loss, readout.b, 3, rng))

    def test_forward_is_pure(self):
        _, cell, readout, inputs, tw, labels, mask = self._setup(6)
        a = neural.lstm_bptt(cell, inputs, readout, tw, labels, mask)
        b = neural.lstm_bptt(cell, inputs, readout, tw, labels, mask)
        assert a[0] == b[0]
        for k in a[1]:
            assert np.array_equal(a[1][k], b[1][k])


class TestKernelBackends:
    def test_selected_backend_reports_name(self):
        assert neural.backend_name() in ("compiled", "python")

    def test_backends_agree(self):
        try:
            from examgen.neural import _kernels
        except ImportError:
            pytest.skip("compiled kernels not built")
        rng = np.random.default_rng(2)
        T, D, H = 9, 6, 5
        w = rng.normal(size=(4 * H, D + H))
        b = rng.normal(size=4 * H)
        x = np.ascontiguousarray(rng.normal(size=(T, D)))
        h0, c0 = rng.normal(size=H), rng.normal(size=H)
        dh = np.ascontiguousarray(rng.normal(size=(T, H)))

        fc = _kernels.lstm_seq_forward(w, b, x, h0, c0)
        fp = _kernels_py.lstm_seq_forward(w, b, x, h0, c0)
        for a_arr, b_arr in zip(fc, fp):
            assert np.allclose(a_arr, b_arr, atol=1e-12)
        gc = _kernels.lstm_seq_backward(w, x, *(np.ascontiguousarray(v) for v in fc), dh, h0, c0)
        gp = _kernels_py.lstm_seq_backward(w, x, *fp, dh, h0, c0)
        for a_arr, b_arr in zip(gc, gp):
            assert np.allclose(a_arr, b_arr, atol=1e-10)


class TestSgdAndDropout:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.ones(3)}
        neural.sgd_update(params, {"w": np.zeros(3)}, 0.1)
        assert np.array_equal(params["w"], np.ones(3))

    def test_ascent_arithmetic(self):
        params = {"w": np.array([1.0])}
        neural.sgd_update(params, {"w": np.array([2.0])}, 0.001, ascent=True)
        assert params["w"][0] == pytest.approx(1.002, rel=1e-12)

    def test_descent_arithmetic(self):
        params = {"w": np.array([1.0])}
        neural.sgd_update(params, {"w": np.array([2.0])}, 0.001)
        assert params["w"][0] == pytest.approx(0.998, rel=1e-12)

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        norm = neural.clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        clipped = np.sqrt(grads["a"][0] ** 2 + grads["b"][0] ** 2)
        assert clipped == pytest.approx(1.0)

    def test_dropout_rate_zero_is_identity(self):
        rng = np.random.default_rng(0)
        mask = neural.dropout_mask(rng, (10, 10), 0.0)
        assert np.array_equal(mask, np.ones((10, 10)))

    def test_dropout_reproducible_and_scaled(self):
        m1 = neural.dropout_mask(np.random.default_rng(9), (1000,), 0.3)
        m2 = neural.dropout_mask(np.random.default_rng(9), (1000,), 0.3)
        assert np.array_equal(m1, m2)
        kept = m1[m1 > 0]
        assert np.allclose(kept, 1 / 0.7)
        assert 0.6 < (m1 > 0).mean() < 0.8

    def test_sgd_config_validation(self):
        with pytest.raises(ValueError):
            neural.SgdConfig(learning_rate=-1)
        with pytest.raises(ValueError):
            neural.SgdConfig(dropout_rate=1.0)


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        arrays = {
            "w": rng.normal(size=(7, 3)) * 1e-7,
            "b": rng.normal(size=5) * 1e3,
        }
        path = tmp_path / "ckpt.json"
        neural.save_arrays(path, arrays, meta={"kind": "test"})
        loaded, meta = neural.load_arrays(path)
        assert meta["kind"] == "test"
        for name in arrays:
            assert arrays[name].shape == loaded[name].shape
            assert np.array_equal(arrays[name], loaded[name])  # bitwise

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            neural.load_arrays(path)
