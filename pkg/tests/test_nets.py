import numpy as np
import pytest
import torch

from unportrait.imaging import ImageBuffer
from unportrait.nets import (ClassifierModel, CompletionModel, Discriminator, FlowNetModel, ModelConfig, ModelError,
                             configure_threads, fit_to_size, flatten_params, image_tensor, label_planes, load_params,
                             predict_flow)


@pytest.mark.parametrize("size", [64, 96])
def test_flownet_shape_and_bound(size):
    cfg = ModelConfig(size=size)
    torch.manual_seed(0)
    model = FlowNetModel(cfg)
    rng = np.random.default_rng(0)
    img = ImageBuffer.from_rgb(rng.random((size, size, 3)), rng.random((size, size)) > 0.2)
    flow = predict_flow(model, img, 3)
    assert flow.shape == (size, size)
    np.testing.assert_array_equal(flow.valid, img.mask)
    assert np.all(np.isfinite(flow.flow))
    # untrained head is zero, and any output is bounded by the tanh scale
    assert np.abs(flow.flow).max() == 0.0
    for p in model.parameters():
        p.data.normal_(0, 1)
    out = model(*image_tensor(img), [5])
    assert out.abs().max().item() <= cfg.flow_scale * size + 1e-9


def test_predict_flow_rejects_wrong_size():
    with pytest.raises(ModelError):
        predict_flow(FlowNetModel(ModelConfig(size=64)), ImageBuffer.from_rgb(np.zeros((32, 32, 3))), 0)


@pytest.mark.parametrize("size", [64, 96])
def test_completion_shape_and_identity(size):
    model = CompletionModel(ModelConfig(size=size))
    x = torch.rand(2, 3, size, size)
    hit = torch.ones(2, 1, size, size)
    out = model(x, hit, [0, 7])
    assert out.shape == x.shape
    torch.testing.assert_close(out, x)


def test_unet_rejects_indivisible_input():
    with pytest.raises(ModelError):
        CompletionModel(ModelConfig())(torch.rand(1, 3, 40, 40), torch.ones(1, 1, 40, 40), [0])


def test_discriminator_logit():
    d = Discriminator()
    out = d(torch.rand(3, 3, 64, 64), torch.ones(3, 1, 64, 64), [0, 1, 2])
    assert out.shape == (3,) and torch.isfinite(out).all()
    n_conv = sum(isinstance(m, torch.nn.Conv2d) for m in d.modules())
    n_fc = sum(isinstance(m, torch.nn.Linear) for m in d.modules())
    assert (n_conv, n_fc) == (4, 1)


@pytest.mark.parametrize("size", [64, 96])
def test_classifier_interfaces_agree(size):
    torch.manual_seed(1)
    model = ClassifierModel(ModelConfig(size=size))
    rgb = torch.rand(2, 3, size, size)
    q = torch.tensor([30.0, 90.0])
    a = model(rgb, q)
    b = model(ClassifierModel.stack_input(rgb, q))
    torch.testing.assert_close(a, b)
    resp = model.respond(rgb[:1], [20.0, 40.0, 80.0])
    assert resp.shape == (3,) and np.all((resp > 0) & (resp < 1))
    with pytest.raises(ModelError):
        model(torch.rand(1, 3, size // 2, size // 2), q[:1])
    with pytest.raises(ModelError):
        model.head(model.image_features(rgb), torch.tensor([30.0, 40.0, 50.0]))


def test_label_planes():
    planes = label_planes([2, 7], 4, 5)
    assert planes.shape == (2, 8, 4, 5)
    assert planes[0, 2].min() == 1 and planes[0].sum() == 20 and planes[1, 7].max() == 1
    with pytest.raises(ModelError):
        label_planes([8], 2, 2)


def test_image_tensor_composites_on_black():
    rgb = np.full((8, 8, 3), 0.6)
    mask = np.zeros((8, 8), bool)
    mask[:4] = True
    t, m = image_tensor(ImageBuffer.from_rgb(rgb, mask))
    assert t.shape == (1, 3, 8, 8) and m.shape == (1, 1, 8, 8)
    assert t[0, :, 4:].abs().max() == 0 and m[0, 0, :4].min() == 1
    assert fit_to_size(np.ones((128, 128, 2)), 64).shape == (64, 64, 2)
    assert fit_to_size(np.ones((100, 100, 2)), 64).shape == (64, 64, 2)


def test_param_roundtrip():
    torch.manual_seed(2)
    a, b = FlowNetModel(), FlowNetModel()
    for p in a.parameters():
        p.data.normal_()
    flat = flatten_params(a)
    load_params(b, flat.astype(np.float32))
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        torch.testing.assert_close(pa, pb, rtol=0, atol=1e-6)
    with pytest.raises(ModelError):
        load_params(b, flat[:-1])


def test_configure_threads(monkeypatch):
    monkeypatch.delenv("UNPORTRAIT_THREADS", raising=False)
    assert configure_threads() is None
    monkeypatch.setenv("UNPORTRAIT_THREADS", "1")
    assert configure_threads() == 1
    monkeypatch.setenv("UNPORTRAIT_THREADS", "0")
    with pytest.raises(ValueError):
        configure_threads()


def test_config_dict_roundtrip():
    cfg = ModelConfig(size=96, classifier_channels=(8, 16))
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
