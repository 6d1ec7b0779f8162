"""Writes two tiny backbone-shaped ONNX graphs used by the integration tests.

Both map a 224x224x3 image to a 7x7x512 feature map:
32x32 average pooling, a 1x1 convolution, then ReLU. Weights follow
W[o, c] = 0.05 * ((o * 7 + c * 3) % 11 - 5) and b[o] = 0.01 * (o % 5 - 2).

Run from this directory: python3 make_onnx_fixtures.py
"""

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper

OUT = 512


def weights():
    o = np.arange(OUT)[:, None]
    c = np.arange(3)[None, :]
    w = 0.05 * (((o * 7 + c * 3) % 11) - 5)
    b = 0.01 * ((np.arange(OUT) % 5) - 2)
    return w.astype(np.float32).reshape(OUT, 3, 1, 1), b.astype(np.float32)


def body(src):
    w, b = weights()
    inits = [numpy_helper.from_array(w, "w"), numpy_helper.from_array(b, "b")]
    nodes = [
        helper.make_node("AveragePool", [src], ["pooled"], kernel_shape=[32, 32], strides=[32, 32]),
        helper.make_node("Conv", ["pooled", "w", "b"], ["conv"]),
        helper.make_node("Relu", ["conv"], ["act"]),
    ]
    return nodes, inits


def save(graph, path):
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    onnx.save(model, path)


def nchw():
    x = helper.make_tensor_value_info("image", TensorProto.FLOAT, [1, 3, 224, 224])
    y = helper.make_tensor_value_info("act", TensorProto.FLOAT, [1, OUT, 7, 7])
    nodes, inits = body("image")
    save(helper.make_graph(nodes, "tiny_nchw", [x], [y], inits), "tiny_nchw.onnx")


def nhwc():
    x = helper.make_tensor_value_info("image", TensorProto.FLOAT, [1, 224, 224, 3])
    y = helper.make_tensor_value_info("features", TensorProto.FLOAT, [1, 7, 7, OUT])
    nodes, inits = body("chw")
    nodes.insert(0, helper.make_node("Transpose", ["image"], ["chw"], perm=[0, 3, 1, 2]))
    nodes.append(helper.make_node("Transpose", ["act"], ["features"], perm=[0, 2, 3, 1]))
    save(helper.make_graph(nodes, "tiny_nhwc", [x], [y], inits), "tiny_nhwc.onnx")


if __name__ == "__main__":
    nchw()
    nhwc()
