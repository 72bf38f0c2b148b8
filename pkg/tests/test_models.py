import numpy as np
import pytest

from kervnet.errors import ConfigurationError, ShapeError
from kervnet.models import (BUILDERS, HELICOPTER_VARIANTS, ModelSpec, VariantGrid, build_har_autoencoder,
                            build_helicopter_autoencoder, build_mixed_classifier, build_ronao_cnn,
                            build_simplified_cnn, conv, count_parameters, dense, enumerate_variants,
                            instantiate, maxpool, simple)
from kervnet.tensor import Rng


def kinds(spec):
    return [d.kind for d in spec.layers]


def brute_count(spec):
    model = instantiate(spec, 0)
    return sum(p.size for p in model.parameters().values())


class TestModelSpec:
    def test_shape_chain_error(self):
        spec = ModelSpec((4, 1), [conv(2, 3, 1, "valid"), maxpool(3)])
        with pytest.raises(ShapeError):
            spec.shapes()

    def test_dict_round_trip(self):
        spec = build_mixed_classifier()
        back = ModelSpec.from_dict(spec.to_dict())
        assert back == spec
        assert back.metadata == spec.metadata and back.name == spec.name

    def test_table_lists_layers_and_total(self):
        table = build_simplified_cnn().table()
        assert "conv" in table and table.strip().endswith(str(count_parameters(build_simplified_cnn())))

    @pytest.mark.parametrize("builder", [build_ronao_cnn, build_simplified_cnn, build_mixed_classifier,
                                         lambda: build_har_autoencoder("kerv-d3"),
                                         lambda: build_helicopter_autoencoder("KCNN-Kp&BN")])
    def test_parameter_formula_matches_instantiated(self, builder):
        spec = builder()
        assert count_parameters(spec) == brute_count(spec)

    def test_instantiation_deterministic(self):
        spec = build_mixed_classifier()
        a, b = instantiate(spec, 5).state_dict(), instantiate(spec, 5).state_dict()
        assert list(a) == list(b)
        assert all(np.array_equal(a[k], b[k]) for k in a)
        c = instantiate(spec, 6).state_dict()
        assert any(not np.array_equal(a[k], c[k]) for k in a)


class TestHarClassifiers:
    def test_ronao_first_layer_parameters(self):
        spec = build_ronao_cnn()
        first = ModelSpec(spec.input_shape, spec.layers[:1])
        assert count_parameters(first) == 9 * 6 * 94 + 94 == 5170

    def test_ronao_structure(self):
        spec = build_ronao_cnn()
        assert [d.opts["filters"] for d in spec.layers if d.kind == "conv"] == [94, 192, 192]
        assert [d.opts["rate"] for d in spec.layers if d.kind == "dropout"] == [0.8]
        assert [d.opts["units"] for d in spec.layers if d.kind == "dense"] == [1000, 6]
        assert spec.output_shape == (6,)

    def test_ronao_forward_is_distribution(self):
        out = instantiate(build_ronao_cnn(), 0).forward(np.zeros((1, 128, 6)))
        assert out.shape == (1, 6)
        assert out.sum() == pytest.approx(1.0)

    def test_simplified(self):
        spec = build_simplified_cnn()
        assert count_parameters(spec) < count_parameters(build_ronao_cnn())
        assert spec.output_shape == (6,)
        assert "dropout" not in kinds(spec)
        assert [d.opts["filters"] for d in spec.layers if d.kind == "conv"] == [16, 8, 4]

    def test_mixed(self):
        spec = build_mixed_classifier()
        assert kinds(spec).count("batchnorm") == 2
        assert spec.metadata["degrees"] == [2, None, 3]
        assert [d.kind for d in spec.layers if d.kind in ("conv", "kerv")] == ["kerv", "conv", "kerv"]
        assert spec.output_shape == (6,)

    def test_builders_registry(self):
        assert set(BUILDERS) == {"ronao-cnn", "simplified-cnn", "mixed"}


class TestAutoencoders:
    @pytest.mark.parametrize("encoder", ["conv", "kerv-d3"])
    def test_har_reconstruction_shape(self, encoder):
        spec = build_har_autoencoder(encoder)
        assert spec.output_shape == (128, 6)
        x = Rng(0).normal((3, 128, 6))
        xhat = instantiate(spec, 0).forward(x)
        assert xhat.shape == x.shape
        assert np.mean(np.abs(x - xhat)) > 0

    def test_har_variants_differ_only_in_encoder(self):
        a, b = build_har_autoencoder("conv"), build_har_autoencoder("kerv-d3")
        assert a.layers[2:] == b.layers[2:]
        assert kinds(a)[:2] == ["conv", "tanh"] and kinds(b)[:2] == ["kerv", "batchnorm"]
        assert b.layers[0].opts["degree"] == 3

    def test_har_unknown_encoder(self):
        with pytest.raises(ConfigurationError):
            build_har_autoencoder("lstm")

    def test_helicopter_geometry(self):
        spec = build_helicopter_autoencoder("CNN")
        shapes = spec.shapes()
        flat = kinds(spec).index("flatten")
        assert shapes[flat - 1] == (4, 128)
        assert shapes[flat] == (512,)
        assert (160,) in shapes
        assert spec.output_shape == (512, 1)

    @pytest.mark.parametrize("variant", HELICOPTER_VARIANTS)
    def test_helicopter_variants_reconstruct(self, variant):
        spec = build_helicopter_autoencoder(variant)
        out = instantiate(spec, 0).forward(Rng(1).normal((2, 512, 1)))
        assert out.shape == (2, 512, 1)

    def test_helicopter_batch_norm_counts(self):
        assert kinds(build_helicopter_autoencoder("KCNN-Kp")).count("batchnorm") == 0
        assert kinds(build_helicopter_autoencoder("KCNN-d3")).count("batchnorm") == 3
        assert kinds(build_helicopter_autoencoder("CNN")).count("batchnorm") == 0

    def test_helicopter_kp_is_window_cardinality(self):
        model = instantiate(build_helicopter_autoencoder("KCNN-Kp"), 0)
        kps = [layer.kernel.kp for layer in model.layers if hasattr(layer, "kernel")]
        assert kps == [16.0 * 1, 8.0 * 32, 4.0 * 64]

    def test_helicopter_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            build_helicopter_autoencoder("KCNN-d9")


class TestVariantGrid:
    def test_sixty_four_variants(self):
        variants = enumerate_variants(build_simplified_cnn())
        assert len(variants) == 64 == VariantGrid.uniform(3).size
        assert len({v.metadata["variant"] for v in variants}) == 64

    def test_all_conv_element_is_base(self):
        base = build_simplified_cnn()
        assert enumerate_variants(base)[0] == base

    def test_every_variant_chains(self):
        for spec in enumerate_variants(build_simplified_cnn()):
            assert spec.output_shape == (6,)

    def test_mixed_is_in_grid(self):
        grid = enumerate_variants(build_simplified_cnn())
        assert build_mixed_classifier() in grid

    def test_deterministic_order(self):
        a = [v.metadata["variant"] for v in enumerate_variants(build_simplified_cnn())]
        assert a == [v.metadata["variant"] for v in enumerate_variants(build_simplified_cnn())]
        assert a[:2] == ["conv-conv-conv", "conv-conv-kerv2"]

    def test_custom_grid(self):
        grid = VariantGrid((("conv",), ("conv", "kerv2"), ("kerv3", "kerv4")))
        assert len(enumerate_variants(build_simplified_cnn(), grid)) == 4 == grid.size

    def test_no_sites(self):
        with pytest.raises(ConfigurationError):
            enumerate_variants(ModelSpec((4,), [dense(2), simple("softmax")]))
