import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import brute_force_rvq, eq2_bitrate
from ldcodec.errors import ConfigurationError, FittingError
from ldcodec.kernels import avg_pool, repeat_frames
from ldcodec.lsrvq import (
    CONV,
    CodedStream,
    LsrvqConfig,
    RvqStack,
    averaging_extractor_weights,
    bitrate,
    fit_codebooks,
    fit_rvq,
    kmeans,
    lsrvq_decode,
    lsrvq_encode,
    lt_extract,
    quantization_diagnostics,
    rvq_decode,
    rvq_encode,
    rvq_encode_frames,
    st_extract,
    synthesize,
    vq_nearest,
)


def random_stack(rng, layers, size, dim, scale=1.0):
    return RvqStack(tuple(rng.standard_normal((size, dim)) * scale / (k + 1) for k in range(layers)))


def zero_row_stack(rng, layers, size, dim):
    """Random stack where every layer can pick the zero vector (index 0)."""
    books = []
    for k in range(layers):
        cb = rng.standard_normal((size, dim)) / (k + 1)
        cb[0] = 0.0
        books.append(cb)
    return RvqStack(tuple(books))


def padded_book(rows, size):
    """Codebook holding ``rows`` followed by far-away filler entries."""
    rows = np.asarray(rows, dtype=np.float64)
    filler = 1e3 + np.arange(size - rows.shape[0])[:, None] * np.ones((1, rows.shape[1]))
    return np.concatenate([rows, filler])


class TestVq:
    def test_example(self):
        idx, cw, res = vq_nearest(np.array([[0.0, 0.0], [1.0, 1.0]]), [0.2, 0.1])
        assert idx == 0
        np.testing.assert_allclose(res, [0.2, 0.1])
        np.testing.assert_array_equal(cw, [0.0, 0.0])

    def test_tie_lowest_index(self):
        idx, _, _ = vq_nearest(np.array([[1.0], [-1.0], [1.0]]), [0.0])
        assert idx == 0
        idx, _, _ = vq_nearest(np.array([[3.0], [-1.0], [1.0]]), [0.0])
        assert idx == 1

    def test_exact_entry(self):
        cb = np.random.default_rng(0).standard_normal((8, 3))
        idx, _, res = vq_nearest(cb, cb[5])
        assert idx == 5 and not res.any()

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            vq_nearest(np.zeros((4, 3)), [1.0, 2.0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        cb = rng.standard_normal((32, 4))
        for v in rng.standard_normal((50, 4)):
            dists = [float(np.sum((v - c) ** 2)) for c in cb]
            assert vq_nearest(cb, v)[0] == dists.index(min(dists))


class TestRvq:
    def test_scalar_example(self):
        stack = RvqStack((np.array([[0.0], [2.0]]), np.array([[0.0], [0.5]])))
        codes, err = rvq_encode(stack, [2.4])
        assert tuple(codes) == (1, 1)
        assert rvq_decode(stack, codes)[0] == pytest.approx(2.5)
        assert err == pytest.approx(0.01)
        assert brute_force_rvq([[[0.0], [2.0]], [[0.0], [0.5]]], [2.4])[1] == (1, 1)

    def test_empty_stack(self):
        with pytest.raises(ConfigurationError):
            rvq_encode(RvqStack(()), [1.0])

    def test_bad_beam_width(self):
        stack = RvqStack((np.eye(2),))
        with pytest.raises(ConfigurationError):
            rvq_encode(stack, [1.0, 0.0], beam_width=0)

    def test_decode_zero_codeword(self):
        stack = RvqStack((np.array([[0.0, 0.0], [1.0, 2.0]]), np.array([[0.0, 0.0], [3.0, 3.0]])))
        np.testing.assert_array_equal(rvq_decode(stack, [0, 0]), [0.0, 0.0])

    def test_single_layer_is_codeword(self):
        cb = np.random.default_rng(0).standard_normal((4, 3))
        np.testing.assert_allclose(rvq_decode(RvqStack((cb,)), [2]), cb[2])

    def test_greedy_residual_non_increasing(self):
        rng = np.random.default_rng(2)
        stack = zero_row_stack(rng, 6, 16, 5)
        vectors = rng.standard_normal((1000, 5))
        codes = rvq_encode_frames(stack, vectors)
        prev = np.sum(vectors**2, axis=1)
        for k in range(1, stack.layers + 1):
            r = vectors - rvq_decode(stack.truncated(k), codes[:, :k])
            cur = np.sum(r**2, axis=1)
            assert np.all(cur <= prev + 1e-12)
            prev = cur

    def test_beam_one_is_greedy(self):
        rng = np.random.default_rng(3)
        stack = random_stack(rng, 4, 8, 3)
        vectors = rng.standard_normal((200, 3))
        greedy = rvq_encode_frames(stack, vectors)
        for v, g in zip(vectors, greedy):
            np.testing.assert_array_equal(rvq_encode(stack, v, beam_width=1)[0], g)

    @pytest.mark.parametrize("beam_width", [2, 3, 8])
    def test_beam_never_worse_than_greedy(self, beam_width):
        rng = np.random.default_rng(beam_width)
        stack = random_stack(rng, 4, 8, 3)
        for v in rng.standard_normal((200, 3)):
            _, greedy_err = rvq_encode(stack, v)
            _, beam_err = rvq_encode(stack, v, beam_width)
            assert beam_err <= greedy_err + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 2**31 - 1),
        sizes=st.lists(st.integers(1, 4), min_size=1, max_size=3),
        dim=st.integers(1, 3),
    )
    def test_exhaustive_beam_is_optimal(self, seed, sizes, dim):
        rng = np.random.default_rng(seed)
        stack = RvqStack(tuple(rng.standard_normal((m, dim)) for m in sizes))
        v = rng.standard_normal(dim) * 2
        best_err, _ = brute_force_rvq([cb.tolist() for cb in stack.codebooks], v.tolist())
        _, err = rvq_encode(stack, v, beam_width=int(np.prod(sizes)))
        assert err == pytest.approx(best_err, abs=1e-10)

    def test_duplicate_codewords_merged(self):
        # identical residuals would otherwise crowd a width-2 beam
        stack = RvqStack((np.array([[1.0], [1.0], [0.0]]), np.array([[0.0], [-1.6]])))
        codes, err = rvq_encode(stack, [1.0 - 1.5], beam_width=2)
        assert err == pytest.approx(min(brute_force_rvq([[[1.0], [1.0], [0.0]], [[0.0], [-1.6]]], [-0.5])[0], err))


class TestExtractors:
    cfg2 = LsrvqConfig(n_step=2, lt_layers=1, lt_size=2, st_layers=1, st_size=2)

    def test_avgpool_example(self):
        np.testing.assert_allclose(lt_extract([[1.0, 3.0, 5.0, 7.0]], self.cfg2), [[2.0, 6.0]])

    def test_n1_identity(self):
        cfg = LsrvqConfig(n_step=1, lt_layers=1, lt_size=2, st_layers=1, st_size=2)
        x = np.random.default_rng(0).standard_normal((3, 7)).astype(np.float32)
        np.testing.assert_array_equal(lt_extract(x, cfg), x)

    def test_tail_edge_padded(self):
        out = lt_extract([[1.0, 3.0, 5.0]], self.cfg2)
        np.testing.assert_allclose(out, [[2.0, 5.0]])

    def test_st_example(self):
        np.testing.assert_allclose(st_extract([[1.0, 3.0, 5.0, 7.0]], [[2.0, 6.0]], self.cfg2), [[-1.0, 1.0, -1.0, 1.0]])

    def test_st_zero_block_mean(self):
        x = np.random.default_rng(1).standard_normal((4, 12))
        cfg = LsrvqConfig(n_step=3, lt_layers=1, lt_size=2, st_layers=1, st_size=2)
        xs = st_extract(x, lt_extract(x, cfg), cfg)
        np.testing.assert_allclose(avg_pool(xs, 3), 0.0, atol=1e-12)

    def test_st_repeated_input_is_zero(self):
        lt = np.random.default_rng(2).standard_normal((3, 4))
        np.testing.assert_array_equal(st_extract(repeat_frames(lt, 2), lt, self.cfg2), 0.0)

    def test_synthesize_cancels(self):
        x = np.random.default_rng(3).standard_normal((5, 10))
        lt = lt_extract(x, self.cfg2)
        np.testing.assert_allclose(synthesize(lt, st_extract(x, lt, self.cfg2), self.cfg2), x, atol=1e-12)

    def test_synthesize_zero_st(self):
        lt = np.array([[1.0, 2.0]])
        np.testing.assert_array_equal(synthesize(lt, np.zeros((1, 4)), self.cfg2), [[1.0, 1.0, 2.0, 2.0]])

    def test_conv_needs_weights(self):
        cfg = LsrvqConfig(n_step=2, lt_layers=1, lt_size=2, st_layers=1, st_size=2, extractor=CONV)
        with pytest.raises(ConfigurationError, match="lt_extractor"):
            lt_extract(np.zeros((2, 4)), cfg)

    @pytest.mark.parametrize("n_step", [1, 2, 3, 4])
    def test_conv_variant_matches_avgpool(self, n_step):
        dim = 6
        x = np.random.default_rng(n_step).standard_normal((dim, 4 * n_step + 1))
        avg = LsrvqConfig(n_step=n_step, lt_layers=1, lt_size=2, st_layers=1, st_size=2)
        conv = LsrvqConfig(n_step=n_step, lt_layers=1, lt_size=2, st_layers=1, st_size=2, extractor=CONV)
        w = averaging_extractor_weights(dim, n_step)
        lt_a, lt_c = lt_extract(x, avg), lt_extract(x, conv, w)
        assert np.max(np.abs(lt_a - lt_c)) <= 1e-6
        st_a, st_c = st_extract(x, lt_a, avg), st_extract(x, lt_a, conv, w)
        assert np.max(np.abs(st_a - st_c)) <= 1e-6
        assert np.max(np.abs(synthesize(lt_a, st_a, avg) - synthesize(lt_a, st_a, conv, w))) <= 1e-6


def lossless_setup(x, cfg):
    """Stacks whose codebooks contain every LT and ST feature exactly."""
    lt = lt_extract(x, cfg)
    lt_stack = RvqStack(tuple([padded_book(lt.T, cfg.lt_size)] + [np.zeros((cfg.lt_size, x.shape[0]))] * (cfg.lt_layers - 1)))
    st_feat = st_extract(x, lt, cfg)
    st_stack = RvqStack(tuple([padded_book(st_feat.T, cfg.st_size)] + [np.zeros((cfg.st_size, x.shape[0]))] * (cfg.st_layers - 1)))
    return lt_stack, st_stack


class TestLsrvq:
    def test_counting(self):
        cfg = LsrvqConfig(n_step=2, lt_layers=2, lt_size=4, st_layers=3, st_size=4)
        rng = np.random.default_rng(0)
        stacks = (random_stack(rng, 2, 4, 3), random_stack(rng, 3, 4, 3))
        codes = lsrvq_encode(rng.standard_normal((3, 4)), cfg, stacks)
        assert codes.lt_codes.shape == (2, 2) and codes.st_codes.shape == (4, 3) and codes.frames == 4

    @pytest.mark.parametrize("frames", [8, 7, 1])
    def test_lossless_roundtrip(self, frames):
        cfg = LsrvqConfig(n_step=2, lt_layers=2, lt_size=8, st_layers=2, st_size=8)
        x = np.random.default_rng(frames).standard_normal((4, frames))
        stacks = lossless_setup(x, cfg)
        y = lsrvq_decode(lsrvq_encode(x, cfg, stacks), cfg, stacks)
        assert y.shape == x.shape
        assert np.max(np.abs(y - x)) <= 1e-6

    def test_zero_codes_zero_features(self):
        cfg = LsrvqConfig(n_step=2, lt_layers=1, lt_size=2, st_layers=1, st_size=2)
        zero = RvqStack((np.zeros((2, 3)),))
        codes = CodedStream(np.zeros((2, 1)), np.zeros((4, 1)), 4, cfg)
        np.testing.assert_array_equal(lsrvq_decode(codes, cfg, (zero, zero)), 0.0)

    def test_decode_independent_of_encode_beam(self):
        cfg = LsrvqConfig(n_step=2, lt_layers=2, lt_size=4, st_layers=2, st_size=4)
        rng = np.random.default_rng(5)
        stacks = (random_stack(rng, 2, 4, 3), random_stack(rng, 2, 4, 3))
        x = rng.standard_normal((3, 6))
        codes = lsrvq_encode(x, cfg, stacks, beam_width=4)
        assert np.array_equal(lsrvq_decode(codes, cfg, stacks), lsrvq_decode(codes, cfg, stacks))

    def test_more_st_layers_never_worse(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 40))
        full = LsrvqConfig(n_step=2, lt_layers=1, lt_size=8, st_layers=6, st_size=8)
        fitted = fit_codebooks([x], full, seed=0)
        prev = np.inf
        for m in range(0, 7):
            cfg = LsrvqConfig(n_step=2, lt_layers=1, lt_size=8, st_layers=m, st_size=8)
            stacks = (fitted.lt, fitted.st.truncated(m))
            err = float(np.sum((lsrvq_decode(lsrvq_encode(x, cfg, stacks), cfg, stacks) - x) ** 2))
            assert err <= prev + 1e-9
            prev = err

    def test_dimension_mismatch(self):
        cfg = LsrvqConfig(n_step=2, lt_layers=1, lt_size=2, st_layers=1, st_size=2)
        stacks = (RvqStack((np.zeros((2, 3)),)), RvqStack((np.zeros((2, 3)),)))
        with pytest.raises(ConfigurationError):
            lsrvq_encode(np.zeros((4, 4)), cfg, stacks)

    def test_stack_shape_mismatch(self):
        cfg = LsrvqConfig(n_step=2, lt_layers=1, lt_size=4, st_layers=1, st_size=2)
        stacks = (RvqStack((np.zeros((2, 3)),)), RvqStack((np.zeros((2, 3)),)))
        with pytest.raises(ConfigurationError):
            lsrvq_encode(np.zeros((3, 4)), cfg, stacks)


class TestConfig:
    @pytest.mark.parametrize("field,value", [("lt_size", 1000), ("st_size", 3), ("n_step", 0), ("frame_rate", -1.0)])
    def test_invalid(self, field, value):
        with pytest.raises(ConfigurationError, match=field):
            LsrvqConfig(**{field: value})

    def test_coded_stream_range(self):
        cfg = LsrvqConfig(n_step=1, lt_layers=1, lt_size=4, st_layers=1, st_size=4)
        with pytest.raises(ConfigurationError):
            CodedStream(np.array([[4]]), np.array([[0]]), 1, cfg)


class TestBitrate:
    def test_reference(self):
        assert bitrate(LsrvqConfig()) == 6000.0

    def test_small(self):
        cfg = LsrvqConfig(n_step=1, frame_rate=100, lt_layers=1, lt_size=2, st_layers=1, st_size=2)
        assert bitrate(cfg) == 200.0

    def test_no_long_term(self):
        cfg = LsrvqConfig(lt_layers=0)
        assert bitrate(cfg) == 50 * 11 * 10

    @settings(max_examples=200, deadline=None)
    @given(
        frame_rate=st.sampled_from([12.5, 25.0, 50.0, 75.0, 100.0]),
        n_step=st.integers(1, 8),
        lt_layers=st.integers(0, 4),
        lt_bits=st.integers(1, 12),
        st_layers=st.integers(0, 16),
        st_bits=st.integers(1, 12),
    )
    def test_matches_independent_formula(self, frame_rate, n_step, lt_layers, lt_bits, st_layers, st_bits):
        cfg = LsrvqConfig(n_step, frame_rate, lt_layers, 2**lt_bits, st_layers, 2**st_bits)
        assert bitrate(cfg) == pytest.approx(eq2_bitrate(frame_rate, n_step, lt_layers, 2**lt_bits, st_layers, 2**st_bits), rel=1e-12)

    def test_decreasing_in_n(self):
        rates = [bitrate(LsrvqConfig(n_step=n)) for n in range(1, 9)]
        assert all(a > b for a, b in zip(rates, rates[1:]))


def gaussian_mixture(rng, centers, per_center, spread):
    pts = [c + spread * rng.standard_normal((per_center, centers.shape[1])) for c in centers]
    return np.concatenate(pts)


class TestFitting:
    def test_separable_clusters(self):
        rng = np.random.default_rng(0)
        centers = rng.standard_normal((8, 3)) * 10
        data = np.repeat(centers, 20, axis=0)
        fitted, distortion = kmeans(data, 8, np.random.default_rng(1))
        assert distortion <= 1e-12

    def test_too_few_vectors(self):
        with pytest.raises(FittingError):
            kmeans(np.zeros((3, 2)), 4, np.random.default_rng(0))

    def test_fit_codebooks_too_few(self):
        cfg = LsrvqConfig(n_step=2, lt_layers=1, lt_size=16, st_layers=1, st_size=2)
        with pytest.raises(FittingError):
            fit_codebooks([np.zeros((2, 10))], cfg)

    def test_monotone_layers(self):
        rng = np.random.default_rng(2)
        data = gaussian_mixture(rng, rng.standard_normal((6, 4)) * 4, 100, 0.7)
        stack = fit_rvq(data, 5, 8, np.random.default_rng(3))
        codes = rvq_encode_frames(stack, data)
        prev = np.mean(np.sum(data**2, axis=1))
        for k in range(1, 6):
            cur = np.mean(np.sum((data - rvq_decode(stack.truncated(k), codes[:, :k])) ** 2, axis=1))
            assert cur <= prev
            prev = cur

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        feats = [rng.standard_normal((3, 30)) for _ in range(2)]
        cfg = LsrvqConfig(n_step=2, lt_layers=2, lt_size=4, st_layers=2, st_size=4)
        a, b = fit_codebooks(feats, cfg, seed=9), fit_codebooks(feats, cfg, seed=9)
        for sa, sb in zip(a.stacks, b.stacks):
            for ca, cb in zip(sa.codebooks, sb.codebooks):
                assert ca.tobytes() == cb.tobytes()

    def test_conv_variant_gets_weights(self):
        feats = [np.random.default_rng(5).standard_normal((3, 20))]
        cfg = LsrvqConfig(n_step=2, lt_layers=1, lt_size=4, st_layers=1, st_size=4, extractor=CONV)
        fitted = fit_codebooks(feats, cfg)
        assert set(fitted.weights) == set(averaging_extractor_weights(3, 2))

    def test_duplicate_points_give_distinct_codewords(self):
        data = np.zeros((10, 2))
        data[5:] = 1.0
        centers, _ = kmeans(data, 4, np.random.default_rng(0))
        assert len({c.tobytes() for c in centers}) == 4


class TestDiagnostics:
    cfg = LsrvqConfig(n_step=2, lt_layers=2, lt_size=4, st_layers=2, st_size=4)

    def test_exact_codebooks_zero(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        stacks = lossless_setup(x, self.cfg)
        diag = quantization_diagnostics(x, lsrvq_encode(x, self.cfg, stacks), self.cfg, stacks)
        assert diag["codebook_loss"] == pytest.approx(0.0, abs=1e-12)
        assert diag["commitment_loss"] == pytest.approx(0.0, abs=1e-12)

    def test_weighted_sum(self):
        rng = np.random.default_rng(1)
        stacks = (random_stack(rng, 2, 4, 3), random_stack(rng, 2, 4, 3))
        x = rng.standard_normal((3, 6))
        diag = quantization_diagnostics(x, lsrvq_encode(x, self.cfg, stacks), self.cfg, stacks)
        assert diag["weighted_sum"] == pytest.approx(1.25 * diag["codebook_loss"])

    def test_matches_recomputation(self):
        rng = np.random.default_rng(2)
        lt_stack, st_stack = random_stack(rng, 2, 4, 3), random_stack(rng, 2, 4, 3)
        x = rng.standard_normal((3, 6))
        codes = lsrvq_encode(x, self.cfg, (lt_stack, st_stack))
        diag = quantization_diagnostics(x, codes, self.cfg, (lt_stack, st_stack))

        expected = 0.0
        lt_in = [(x[:, 2 * b] + x[:, 2 * b + 1]) / 2 for b in range(3)]
        lt_q = []
        for b, v in enumerate(lt_in):
            r = v.copy()
            for k in range(2):
                cw = lt_stack.codebooks[k][codes.lt_codes[b, k]]
                r = r - cw
            lt_q.append(v - r)
        for k in range(2):
            rows = []
            for b, v in enumerate(lt_in):
                prev = sum((lt_stack.codebooks[j][codes.lt_codes[b, j]] for j in range(k)), np.zeros(3))
                rows.append(np.mean((lt_stack.codebooks[k][codes.lt_codes[b, k]] - (v - prev)) ** 2))
            expected += np.mean(rows)
        for k in range(2):
            rows = []
            for t in range(6):
                v = x[:, t] - lt_q[t // 2]
                prev = sum((st_stack.codebooks[j][codes.st_codes[t, j]] for j in range(k)), np.zeros(3))
                rows.append(np.mean((st_stack.codebooks[k][codes.st_codes[t, k]] - (v - prev)) ** 2))
            expected += np.mean(rows)
        # the runtime holds decoded long-term features in float32
        assert diag["codebook_loss"] == pytest.approx(expected, rel=1e-6)
