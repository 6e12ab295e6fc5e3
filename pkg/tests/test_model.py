import numpy as np
import pytest

from gate.graph import SparseGraph
from gate.model import (decode, encode, encoder_attention, forward, init_model,
                        load_checkpoint, save_checkpoint)

import oracles


def random_model(rng, dims, tied=True, activation="identity", uniform=False):
    model = init_model(dims, seed=int(rng.integers(1 << 30)), tied=tied,
                       activation=activation, uniform_attention=uniform)
    for p in model.parameters():
        p.value = rng.normal(scale=0.5, size=p.value.shape)
    return model


class TestInit:
    def test_same_seed_same_bits(self):
        a = init_model((6, 4, 3), seed=7)
        b = init_model((6, 4, 3), seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_different_seed_differs(self):
        a = init_model((6, 4), seed=7)
        b = init_model((6, 4), seed=8)
        assert not np.array_equal(a.parameters()[0].value, b.parameters()[0].value)

    def test_tied_parameter_count_formula(self):
        dims = (1433, 512, 512)
        model = init_model(dims, seed=0, tied=True)
        expected = sum(do * di + 2 * do for di, do in zip(dims[:-1], dims[1:]))
        assert model.parameter_count() == expected

    def test_untied_count_adds_decoder(self):
        dims = (1433, 512, 512)
        tied = init_model(dims, seed=0, tied=True).parameter_count()
        untied = init_model(dims, seed=0, tied=False).parameter_count()
        decoder = sum(di * do + 2 * di for di, do in zip(dims[:-1], dims[1:]))
        assert untied == tied + decoder

    def test_tied_is_half_for_square_layers(self):
        dims = (8, 8, 8)
        tied = init_model(dims, seed=0, tied=True).parameter_count()
        untied = init_model(dims, seed=0, tied=False).parameter_count()
        assert untied == 2 * tied

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            init_model((5,), seed=0)
        with pytest.raises(ValueError):
            init_model((5, 0), seed=0)


class TestEncoderAttention:
    def test_isolated_node_attends_to_itself(self, rng):
        g = SparseGraph.from_edges(1, [])
        model = random_model(rng, (3, 2))
        alpha = encoder_attention(model, 1, rng.normal(size=(3, 1)), g)
        assert alpha.value.tolist() == [1.0]

    def test_uniform_flag_gives_exact_reciprocal_degrees(self, rng):
        g = SparseGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        model = random_model(rng, (3, 2), uniform=True)
        alpha = encoder_attention(model, 1, rng.normal(size=(3, 3)), g)
        assert np.array_equal(alpha.value, np.full(g.nnz, 1.0 / 3.0))

    @pytest.mark.parametrize("activation", ["identity", "sigmoid", "tanh"])
    def test_matches_scalar_reimplementation(self, rng, activation):
        g = SparseGraph.from_edges(4, [(0, 1), (1, 2), (2, 3)])  # path graph
        model = random_model(rng, (3, 2), activation=activation)
        h_prev = rng.normal(size=(3, 4))
        alpha = encoder_attention(model, 1, h_prev, g).value
        layer = model.layers[0]
        expected = oracles.scalar_layer_attention(
            layer.weight.value, layer.attn_self.value, layer.attn_neigh.value,
            h_prev, g, activation)
        assert np.max(np.abs(alpha - expected)) < 1e-12


class TestEncodeDecode:
    def test_single_node_identity_encoder(self):
        g = SparseGraph.from_edges(1, [])
        model = init_model((3, 3), seed=0)
        model.layers[0].weight.value = np.eye(3)
        x = np.array([[1.5], [-2.0], [0.25]])
        h, _, _ = encode(model, x, g)
        assert np.allclose(h.value, x, atol=1e-15)

    def test_two_nodes_uniform_identity_is_mean(self):
        g = SparseGraph.from_edges(2, [(0, 1)])
        model = init_model((2, 2), seed=0, uniform_attention=True)
        model.layers[0].weight.value = np.eye(2)
        x = np.array([[1.0, 3.0], [2.0, 6.0]])
        h, _, _ = encode(model, x, g)
        mean = x.mean(axis=1, keepdims=True)
        assert np.allclose(h.value, np.repeat(mean, 2, axis=1), atol=1e-15)

    def test_orthonormal_tied_self_loop_round_trip(self, rng):
        g = SparseGraph.from_edges(3, [])  # self-loops only
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        model = init_model((4, 4), seed=0, tied=True)
        model.layers[0].weight.value = q
        x = rng.normal(size=(4, 3))
        trace = forward(model, x, g)
        assert np.allclose(trace.reconstruction.value, x, atol=1e-12)

    def test_untied_zero_decoder_gives_zero(self, rng):
        g = oracles.random_graph(rng, 4, 0.5)
        model = random_model(rng, (3, 2), tied=False)
        model.layers[0].dec_weight.value = np.zeros((3, 2))
        trace = forward(model, rng.normal(size=(3, 4)), g)
        assert np.array_equal(trace.reconstruction.value, np.zeros((3, 4)))

    def test_tied_decode_requires_encoder_attention(self, rng):
        g = oracles.random_graph(rng, 4, 0.5)
        model = random_model(rng, (3, 2), tied=True)
        with pytest.raises(ValueError, match="encoder attention"):
            decode(model, rng.normal(size=(2, 4)), g)

    @pytest.mark.parametrize("tied,activation,uniform", [
        (True, "identity", False),
        (True, "sigmoid", False),
        (False, "identity", False),
        (False, "tanh", False),
        (True, "identity", True),
    ])
    def test_forward_matches_dense_oracle(self, rng, tied, activation, uniform):
        for n in (2, 5, 6, 10):
            g = oracles.random_graph(rng, n, 0.5)
            model = random_model(rng, (4, 3, 2), tied=tied, activation=activation,
                                 uniform=uniform)
            x = rng.normal(size=(4, n))
            trace = forward(model, x, g)
            emb, rec, enc_attn, dec_attn = oracles.dense_forward(model, x, g)
            assert np.max(np.abs(trace.embeddings.value - emb)) < 1e-10
            assert np.max(np.abs(trace.reconstruction.value - rec)) < 1e-10
            for k in range(model.num_layers):
                dense_rows = enc_attn[k][g.edge_rows, g.col_indices]
                assert np.max(np.abs(trace.encoder_attention[k].value - dense_rows)) < 1e-10
                dense_rows = dec_attn[k][g.edge_rows, g.col_indices]
                assert np.max(np.abs(trace.decoder_attention[k].value - dense_rows)) < 1e-10


class TestForwardTrace:
    def test_boundary_conditions(self, rng):
        g = oracles.random_graph(rng, 6, 0.4)
        model = random_model(rng, (3, 4, 2))
        x = rng.normal(size=(3, 6))
        trace = forward(model, x, g)
        assert np.array_equal(trace.encoder_reps[0].value, x)
        assert trace.decoder_reps[0] is trace.encoder_reps[-1]
        assert trace.reconstruction.value.shape == (3, 6)

    def test_tied_reuses_encoder_attention_objects(self, rng):
        g = oracles.random_graph(rng, 5, 0.5)
        model = random_model(rng, (3, 3), tied=True)
        trace = forward(model, rng.normal(size=(3, 5)), g)
        assert trace.decoder_attention[0] is trace.encoder_attention[0]

    def test_attention_rows_normalized_every_layer(self, rng):
        g = oracles.random_graph(rng, 7, 0.4)
        model = random_model(rng, (3, 4, 2), tied=False, activation="tanh")
        trace = forward(model, rng.normal(size=(3, 7)), g)
        for alpha in trace.encoder_attention + trace.decoder_attention:
            assert np.all(alpha.value >= 0)
            sums = np.add.reduceat(alpha.value, g.row_offsets[:-1])
            assert np.max(np.abs(sums - 1.0)) < 1e-12

    def test_permutation_equivariance(self, rng):
        for _ in range(3):
            n = 8
            g = oracles.random_graph(rng, n, 0.4)
            model = random_model(rng, (3, 3, 2), tied=False)
            x = rng.normal(size=(3, n))
            perm = rng.permutation(n)
            pairs = np.stack([g.edge_rows, g.col_indices], axis=1)
            g_perm = SparseGraph.from_edges(n, perm[pairs])
            trace = forward(model, x, g)
            trace_perm = forward(model, x[:, np.argsort(perm)], g_perm)
            emb = trace.embeddings.value
            emb_perm = trace_perm.embeddings.value
            assert np.max(np.abs(emb_perm[:, perm[np.arange(n)]] - emb)) < 1e-10
            rec = trace.reconstruction.value
            rec_perm = trace_perm.reconstruction.value
            assert np.max(np.abs(rec_perm[:, perm[np.arange(n)]] - rec)) < 1e-10

    def test_embedding_locality(self, rng):
        # path 0-1-...-7, L=2: node 0's embedding sees <= 2 hops, its
        # reconstruction <= 4; node 7 is 7 hops away, so both stay bit-equal
        n = 8
        g = SparseGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])
        model = random_model(rng, (3, 3, 3), tied=True)
        x = rng.normal(size=(3, n))
        far = x.copy()
        far[:, 7] += rng.normal(size=3)
        base = forward(model, x, g)
        moved = forward(model, far, g)
        assert np.array_equal(base.embeddings.value[:, 0], moved.embeddings.value[:, 0])
        assert np.array_equal(base.reconstruction.value[:, 0],
                              moved.reconstruction.value[:, 0])
        # a 2-hop neighbor's embedding must move, proving the test has teeth
        assert not np.array_equal(base.embeddings.value[:, 6],
                                  moved.embeddings.value[:, 6])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        model = random_model(rng, (5, 4, 3), tied=False, activation="tanh")
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.dims == model.dims
        assert loaded.tied == model.tied
        assert loaded.activation == model.activation
        assert loaded.seed == model.seed
        for pa, pb in zip(model.parameters(), loaded.parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_save_is_byte_deterministic(self, tmp_path, rng):
        model = random_model(rng, (4, 3), tied=True)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        save_checkpoint(model, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)
