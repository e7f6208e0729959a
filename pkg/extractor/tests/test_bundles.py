"""Emitted bundles must satisfy the consumer's format contract exactly."""

import numpy as np
import pytest
import torch
from PIL import Image

import camkit
from extractor.errors import ConfigError, IoError
from extractor.hooks import ExtractorConfig, extract, extract_to_bundle
from extractor.models import tiny_resnet
from extractor.synth import PREPROCESSING, gen_image, normalize


def write_test_image(path, size=(48, 64)):
    rng = np.random.default_rng(7)
    arr = (rng.uniform(0, 255, size=size + (3,))).astype(np.uint8)
    Image.fromarray(arr).save(path)


class TestExtract:
    def test_toy_bundle_loads_cleanly(self, tmp_path):
        write_test_image(tmp_path / "cat.png")
        torch.manual_seed(0)
        config = ExtractorConfig(
            model_id="toy",
            num_classes=4,
            resize=(32, 32),
            mean=(0.5, 0.5, 0.5),
            std=(0.5, 0.5, 0.5),
        )
        bundle_dir = extract(config, tmp_path / "cat.png", tmp_path / "out")
        assert bundle_dir == tmp_path / "out" / "cat.bundle"
        bundle = camkit.load_bundle(bundle_dir)
        assert bundle.image.shape == (3, 32, 32)
        assert bundle.features.shape == (6, 32, 32)
        assert bundle.features.shape == bundle.gradients.shape
        assert bundle.model_id == "toy"
        assert bundle.layer_name == "relu2"
        assert bundle.preprocessing["resize"] == [32, 32]

    def test_explicit_class_index_recorded(self, tmp_path):
        write_test_image(tmp_path / "dog.png")
        torch.manual_seed(0)
        base = dict(model_id="toy", num_classes=4, resize=(16, 16))
        top1 = camkit.load_bundle(
            extract(ExtractorConfig(**base), tmp_path / "dog.png", tmp_path / "a")
        )
        forced_index = (top1.class_index + 2) % 4
        forced = camkit.load_bundle(
            extract(
                ExtractorConfig(**base, class_index=forced_index),
                tmp_path / "dog.png",
                tmp_path / "b",
            )
        )
        assert forced.class_index == forced_index
        assert not np.allclose(forced.gradients, top1.gradients)

    def test_resnet_style_shapes(self, tmp_path):
        import torchvision.models as tvm

        write_test_image(tmp_path / "x.png", size=(300, 400))
        torch.manual_seed(0)
        model = tvm.resnet50(weights=None).eval()
        from extractor.hooks import preprocess_file

        config = ExtractorConfig(model_id="resnet50")
        image = preprocess_file(tmp_path / "x.png", config)
        bundle_dir = extract_to_bundle(
            model,
            "layer4",
            image,
            tmp_path / "r50.bundle",
            model_id="resnet50",
            preprocessing=config.preprocessing(),
        )
        bundle = camkit.load_bundle(bundle_dir)
        assert bundle.features.shape == (2048, 7, 7)
        assert bundle.class_scores.shape == (1000,)

    def test_vgg_style_shapes(self, tmp_path):
        import torchvision.models as tvm

        write_test_image(tmp_path / "x.png")
        torch.manual_seed(0)
        model = tvm.vgg16(weights=None).eval()
        from extractor.hooks import preprocess_file

        config = ExtractorConfig(model_id="vgg16")
        image = preprocess_file(tmp_path / "x.png", config)
        bundle = camkit.load_bundle(
            extract_to_bundle(
                model,
                "features.29",
                image,
                tmp_path / "vgg.bundle",
                model_id="vgg16",
                preprocessing=config.preprocessing(),
            )
        )
        assert bundle.features.shape == (512, 14, 14)

    def test_missing_layer_rejected(self, tmp_path):
        write_test_image(tmp_path / "x.png")
        config = ExtractorConfig(model_id="toy", num_classes=4, layer_name="no_such_layer")
        with pytest.raises(ConfigError, match="no_such_layer"):
            extract(config, tmp_path / "x.png", tmp_path / "out")

    def test_non_image_rejected(self, tmp_path):
        (tmp_path / "not_an_image.png").write_text("plain text")
        config = ExtractorConfig(model_id="toy", num_classes=4)
        with pytest.raises(IoError):
            extract(config, tmp_path / "not_an_image.png", tmp_path / "out")


class TestSyntheticCollection:
    def test_collection_scans_and_loads(self, tmp_path):
        torch.manual_seed(1)
        model = tiny_resnet(num_classes=6).eval()
        from extractor.synth import build_eval_collection

        build_eval_collection(model, tmp_path / "coll", n_items=4, seed=9)
        scan = camkit.scan_collection(tmp_path / "coll")
        assert len(scan.items) == 4
        assert scan.warnings == []
        for item in scan.items:
            bundle = camkit.load_bundle(item.bundle_path)
            assert bundle.class_index == item.target_class - 1
            assert item.annotation.contains_class(item.target_class)

    def test_scene_generator_masks_match_pixels(self):
        rng = np.random.default_rng(3)
        image, mask = gen_image(rng, (0, 3), sizes=(9, 9))
        assert image.shape == (3, 64, 64)
        assert set(np.unique(mask)) <= {0, 1, 4}
        x = normalize(image)
        assert x.min() >= -1.0 and x.max() <= 1.0
        assert PREPROCESSING["mean"] == [0.5, 0.5, 0.5]
