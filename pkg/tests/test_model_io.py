import io

import numpy as np
import pytest

from xai_triage.errors import ModelFormatError, ModelValidationError
from xai_triage.model_io import MAGIC, load_model, save_model
from xai_triage.nn import AvgPool, Conv2D, Dense, Flatten, MaxPool, Network, ReLU


def small_net(rng):
    return Network(
        [
            Conv2D(rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2), stride=1, padding=1),
            ReLU(),
            MaxPool(2),
            Flatten(),
            Dense(rng.normal(size=(3, 2 * 3 * 3)), rng.normal(size=3)),
        ],
        (1, 6, 6),
        3,
    )


def dump(net) -> bytes:
    buf = io.BytesIO()
    save_model(net, buf)
    return buf.getvalue()


def test_round_trip_identical_weights(rng):
    net = small_net(rng)
    loaded = load_model(dump(net))
    for a, b in zip(net.layers, loaded.layers):
        assert a.kind == b.kind
        if hasattr(a, "weights"):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)
    assert loaded.input_shape == net.input_shape
    assert loaded.num_classes == net.num_classes


def test_round_trip_is_bytes_stable(rng):
    net = small_net(rng)
    first = dump(net)
    assert dump(load_model(first)) == first


def test_truncated_file_is_a_parse_error(rng):
    data = dump(small_net(rng))
    with pytest.raises(ModelFormatError) as err:
        load_model(data[:-10])
    assert "truncated" in str(err.value)
    assert err.value.offset == len(data) - 10


def test_truncated_header_is_a_parse_error(rng):
    data = dump(small_net(rng))
    with pytest.raises(ModelFormatError):
        load_model(data[:20])


def test_conv_padding_field_fidelity(rng):
    net = Network(
        [
            Conv2D(rng.normal(size=(1, 1, 3, 3)), stride=2, padding=1),
            Flatten(),
            Dense(rng.normal(size=(2, 9))),
        ],
        (1, 5, 5),
        2,
    )
    loaded = load_model(dump(net))
    assert loaded.layers[0].padding == 1
    assert loaded.layers[0].stride == 2


def test_pool_fields_fidelity(rng):
    net = Network(
        [AvgPool(3, stride=2), Flatten(), Dense(rng.normal(size=(2, 4)))],
        (1, 5, 5),
        2,
    )
    loaded = load_model(dump(net))
    assert loaded.layers[0].kind == "avgpool"
    assert loaded.layers[0].window == 3
    assert loaded.layers[0].stride == 2


def test_bad_magic_reports_offset_zero():
    with pytest.raises(ModelFormatError) as err:
        load_model(b"not-a-model\nstuff\n")
    assert err.value.offset == 0


def test_malformed_layer_line_reports_its_offset(rng):
    data = dump(small_net(rng)).decode("latin-1")
    bad = data.replace("layer relu", "layer warp")
    with pytest.raises(ModelFormatError) as err:
        load_model(bad.encode("latin-1"))
    assert err.value.offset == bad.index("layer warp")
    assert "warp" in str(err.value)


def test_trailing_bytes_rejected(rng):
    data = dump(small_net(rng))
    with pytest.raises(ModelFormatError) as err:
        load_model(data + b"\x00\x00")
    assert "trailing" in str(err.value)


def test_inconsistent_header_is_a_validation_error():
    header = "\n".join(
        [MAGIC, "input_shape 4", "num_classes 2", "layers 1", "layer dense in 3 out 2", "end"]
    ) + "\n"
    payload = np.zeros(3 * 2 + 2, dtype="<f4").tobytes()
    with pytest.raises(ModelValidationError):
        load_model(header.encode() + payload)


def test_non_finite_weights_rejected():
    header = "\n".join(
        [MAGIC, "input_shape 2", "num_classes 2", "layers 1", "layer dense in 2 out 2", "end"]
    ) + "\n"
    weights = np.array([np.inf, 0, 0, 1, 0, 0], dtype="<f4").tobytes()
    with pytest.raises(ModelValidationError):
        load_model(header.encode() + weights)


def test_save_to_path_and_load(tmp_path, rng):
    net = small_net(rng)
    path = tmp_path / "m.model"
    save_model(net, path)
    assert load_model(path).layer_shapes == net.layer_shapes


def test_weights_are_float32_exact(rng):
    # In-memory weights already sit on the float32 grid, so serialization
    # loses nothing even for values that are not float32-representable.
    w = np.array([[1.0 / 3.0]])
    net = Network([Dense(w)], (1,), 1)
    assert net.layers[0].weights[0, 0] == np.float64(np.float32(1.0 / 3.0))
    loaded = load_model(dump(net))
    assert np.array_equal(loaded.layers[0].weights, net.layers[0].weights)
