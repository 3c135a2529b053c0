from __future__ import annotations

import numpy as np
import pytest

from fraudelements import autodiff as ad

import oracles


def numeric_grad(fn, arr, step=1e-6):
    """Central differences of a scalar-valued fn of one array, in place."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn()
        flat[i] = orig - step
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


class TestBackwardEngine:
    def test_diamond_graph_accumulates(self):
        x = ad.leaf(np.array([[2.0, 3.0]]), requires=True)
        out = ad.add(ad.scale(x, 2.0), ad.tanh(x))
        total = ad.matmul(out, ad.leaf(np.ones((2, 1))))  # (1, 1) sum
        ad.backward(total)
        expected = 2.0 + (1 - np.tanh(x.value) ** 2)
        assert np.allclose(x.grad, expected)

    def test_requires_false_leaves_get_no_grad(self):
        x = ad.leaf(np.ones((2, 2)), requires=True)
        c = ad.leaf(np.ones((2, 2)), requires=False)
        out = ad.mul(x, c)
        s = ad.weighted_cross_entropy_with_logits(
            out, np.array([0, 1]), np.ones(2))
        ad.backward(s)
        assert x.grad is not None
        assert c.grad is None


def scalar_loss(out: ad.Var, weights: np.ndarray) -> ad.Var:
    """Deterministic scalar reduction: weighted CE against fixed labels."""
    labels = np.arange(out.value.shape[0]) % out.value.shape[1]
    return ad.weighted_cross_entropy_with_logits(out, labels, weights)


class TestOpGradients:
    """Each op is checked by composing it into a scalar via a fixed weighted
    cross entropy and comparing tape gradients to central differences."""

    def run_check(self, tensors, build, step=1e-6, tol=1e-6):
        def value():
            leaves = {k: ad.leaf(v, requires=False) for k, v in tensors.items()}
            return float(build(leaves).value)

        leaves = {k: ad.leaf(v, requires=True) for k, v in tensors.items()}
        root = build(leaves)
        ad.backward(root)
        for name, arr in tensors.items():
            fd = numeric_grad(value, arr, step)
            got = leaves[name].grad
            assert got is not None, name
            assert np.allclose(got, fd, rtol=1e-4, atol=tol), name

    def test_matmul_and_bias(self, rng):
        tensors = {
            "x": rng.normal(size=(3, 4)),
            "w": rng.normal(size=(5, 4)),
            "b": rng.normal(size=5),
        }
        weights = rng.random(3) + 0.5

        def build(lv):
            return scalar_loss(
                ad.add_bias(ad.matmul_nt(lv["x"], lv["w"]), lv["b"]), weights)

        self.run_check(tensors, build)

    def test_matmul_plain(self, rng):
        tensors = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 5))}
        weights = rng.random(3) + 0.5

        def build(lv):
            return scalar_loss(ad.matmul(lv["a"], lv["b"]), weights)

        self.run_check(tensors, build)

    def test_elementwise_chain(self, rng):
        tensors = {"x": rng.normal(size=(4, 5)), "y": rng.normal(size=(4, 5))}
        weights = rng.random(4) + 0.5

        def build(lv):
            mixed = ad.add(ad.tanh(lv["x"]), ad.mul(ad.sigmoid(lv["y"]),
                                                    ad.scale(lv["x"], 0.7)))
            return scalar_loss(mixed, weights)

        self.run_check(tensors, build)

    def test_concat_both_axes(self, rng):
        tensors = {
            "a": rng.normal(size=(2, 3)),
            "b": rng.normal(size=(2, 2)),
            "c": rng.normal(size=(3, 5)),
        }
        weights = rng.random(5) + 0.5

        def build(lv):
            top = ad.concat([lv["a"], lv["b"]], axis=1)
            return scalar_loss(ad.concat([top, lv["c"]], axis=0), weights)

        self.run_check(tensors, build)

    def test_row_ops(self, rng):
        tensors = {"x": rng.normal(size=(5, 4))}
        weights = rng.random(3) + 0.5

        def build(lv):
            row = ad.take_row(lv["x"], 2)
            tiled = ad.tile_rows(row, 3)
            sliced = ad.take_rows_slice(lv["x"], 1, 4)
            return scalar_loss(ad.add(tiled, sliced), weights)

        self.run_check(tensors, build)

    def test_gather_rows_with_padding_and_duplicates(self, rng):
        tensors = {"x": rng.normal(size=(4, 3))}
        idx = np.array([0, 2, 2, -1, 3])
        weights = rng.random(5) + 0.5

        def build(lv):
            return scalar_loss(ad.gather_rows(lv["x"], idx), weights)

        self.run_check(tensors, build)

    def test_embedding_rows(self, rng):
        tensors = {"e": rng.normal(size=(6, 3))}
        ids = np.array([1, 4, 1, 0])
        weights = rng.random(4) + 0.5

        def build(lv):
            return scalar_loss(ad.embedding_rows(lv["e"], ids), weights)

        self.run_check(tensors, build)

    def test_mean_rows_and_add_n(self, rng):
        tensors = {"x": rng.normal(size=(4, 3)), "y": rng.normal(size=(1, 3))}
        weights = rng.random(1) + 0.5

        def build(lv):
            return scalar_loss(
                ad.add_n([ad.mean_rows(lv["x"]), lv["y"], lv["y"]]), weights)

        self.run_check(tensors, build)

    def test_softmax_rows(self, rng):
        tensors = {"x": rng.normal(size=(3, 7))}
        weights = rng.random(3) + 0.5

        def build(lv):
            probs = ad.softmax_rows(lv["x"])
            return scalar_loss(ad.mul(probs, ad.tanh(probs)), weights)

        self.run_check(tensors, build)

    def test_mean_pool_steps_masked(self, rng):
        tensors = {"x": rng.normal(size=(3 * 2, 4))}  # 3 steps, 2 rows
        lengths = np.array([3, 2])
        masks = (np.arange(3)[:, None] < lengths[None, :]
                 ).astype(float)[:, :, None]
        weights = rng.random(2) + 0.5

        def build(lv):
            pooled = ad.mean_pool_steps(lv["x"], 2, lengths.astype(float),
                                        masks)
            return scalar_loss(pooled, weights)

        self.run_check(tensors, build)

    def test_gru_scan_all_variants(self, rng):
        hidden = 3
        steps, rows = 4, 2
        lengths = np.array([4, 2])
        masks = (np.arange(steps)[:, None] < lengths[None, :]
                 ).astype(float)[:, :, None]
        for reverse in (False, True):
            for use_mask in (False, True):
                tensors = {
                    "xw": rng.normal(size=(steps * rows, 3 * hidden)),
                    "u": rng.normal(size=(3 * hidden, hidden)),
                }
                weights = rng.random(steps * rows) + 0.5

                def build(lv, reverse=reverse, use_mask=use_mask):
                    states = ad.gru_scan(lv["xw"], lv["u"], rows,
                                         masks if use_mask else None,
                                         reverse)
                    return scalar_loss(states, weights)

                self.run_check(tensors, build, tol=1e-7)


class TestCrossEntropy:
    def test_softmax_ce_closed_form_gradient(self, rng):
        logits_arr = rng.normal(size=(6, 7))
        labels = np.array([0, 3, 6, 2, 2, 5])
        logits = ad.leaf(logits_arr, requires=True)
        out = ad.cross_entropy_with_logits(logits, labels)
        ad.backward(out)
        z = logits_arr - logits_arr.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        onehot = np.zeros_like(p)
        onehot[np.arange(6), labels] = 1.0
        assert np.allclose(logits.grad, (p - onehot) / 6, atol=1e-12)

    def test_ce_value_matches_manual(self, rng):
        logits_arr = rng.normal(size=(4, 7))
        labels = np.array([1, 1, 0, 6])
        val = ad.cross_entropy_with_logits(
            ad.leaf(logits_arr), labels).value
        z = logits_arr - logits_arr.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        manual = -np.log(p[np.arange(4), labels]).mean()
        assert val == pytest.approx(manual, abs=1e-12)

    def test_weighted_ce_equals_mean_of_group_means(self, rng):
        logits_arr = rng.normal(size=(5, 7))
        labels = np.array([0, 1, 2, 3, 4])
        # groups of sizes 2 and 3 -> weights 1/(2*2) and 1/(2*3)
        weights = np.array([0.25, 0.25, 1 / 6, 1 / 6, 1 / 6])
        val = ad.weighted_cross_entropy_with_logits(
            ad.leaf(logits_arr), labels, weights).value
        a = ad.cross_entropy_with_logits(
            ad.leaf(logits_arr[:2]), labels[:2]).value
        b = ad.cross_entropy_with_logits(
            ad.leaf(logits_arr[2:]), labels[2:]).value
        assert val == pytest.approx((a + b) / 2, abs=1e-12)


class TestGruScanForward:
    def test_matches_straight_line_reference(self, rng):
        hidden, steps = 4, 5
        w = rng.normal(size=(3 * hidden, 6))
        u = rng.normal(size=(3 * hidden, hidden))
        b = rng.normal(size=3 * hidden)
        xs = rng.normal(size=(steps, 6))

        xw = xs @ w.T + b
        fw = ad.gru_scan(ad.leaf(xw), ad.leaf(u), 1).value
        bw = ad.gru_scan(ad.leaf(xw), ad.leaf(u), 1, reverse=True).value

        ref = oracles.bigru_states_ref(xs, w, u, b, w, u, b, hidden)
        assert np.allclose(fw, ref[:, :hidden], atol=1e-12)
        assert np.allclose(bw, ref[:, hidden:], atol=1e-12)

    def test_masked_rows_freeze(self, rng):
        hidden, steps, rows = 3, 4, 2
        u = rng.normal(size=(3 * hidden, hidden))
        xw = rng.normal(size=(steps * rows, 3 * hidden))
        lengths = np.array([4, 2])
        masks = (np.arange(steps)[:, None] < lengths[None, :]
                 ).astype(float)[:, :, None]
        states = ad.gru_scan(ad.leaf(xw), ad.leaf(u), rows, masks).value
        grid = states.reshape(steps, rows, hidden)
        # row 1 is frozen after its second step
        assert np.allclose(grid[2, 1], grid[1, 1])
        assert np.allclose(grid[3, 1], grid[1, 1])
        assert not np.allclose(grid[3, 0], grid[1, 0])
