"""Network container and the forward (inference) pass."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import ShapeError, check_tensor3
from .tensor import extract_patch_matrix, grid_size, sigmoid_map


@dataclass(frozen=True)
class LayerSpec:
    """Window geometry of one layer."""

    patch_h: int
    patch_w: int
    stride: int

    def __post_init__(self):
        for name in ("patch_h", "patch_w", "stride"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def parse(cls, text):
        """Parse ``"4x4/2"`` (or ``"4/2"`` for square windows)."""
        try:
            size, stride = text.strip().split("/")
            if "x" in size:
                h, w = size.split("x")
            else:
                h = w = size
            return cls(int(h), int(w), int(stride))
        except ValueError as exc:
            raise ValueError(f"bad layer spec {text!r}, expected e.g. '4x4/2'") from exc

    def __str__(self):
        return f"{self.patch_h}x{self.patch_w}/{self.stride}"


# Architectures from the reference experiments (28x28 digits, 64x64 RGB).
ARCHITECTURES = {
    "mnist": (LayerSpec(4, 4, 2), LayerSpec(3, 3, 2), LayerSpec(6, 6, 2)),
    "64": (
        LayerSpec(4, 4, 2),
        LayerSpec(3, 3, 2),
        LayerSpec(3, 3, 2),
        LayerSpec(3, 3, 2),
        LayerSpec(3, 3, 1),
    ),
}


def parse_arch(text):
    if text in ARCHITECTURES:
        return list(ARCHITECTURES[text])
    return [LayerSpec.parse(part) for part in text.split(",") if part.strip()]


def shape_chain(input_hw, specs):
    """Spatial sizes ``[(h0, w0), (h1, w1), ..., (hL, wL)]`` of the layer outputs.

    The first entry is the input size.  Raises ``ShapeError`` if a window does
    not fit.
    """
    h, w = input_hw
    chain = [(h, w)]
    for spec in specs:
        h = grid_size(h, spec.patch_h, spec.stride)
        w = grid_size(w, spec.patch_w, spec.stride)
        chain.append((h, w))
    return chain


def check_arch(input_hw, specs):
    chain = shape_chain(input_hw, specs)
    if chain[-1] != (1, 1):
        sizes = " -> ".join(f"{h}x{w}" for h, w in chain)
        raise ShapeError(f"architecture must reduce the input to 1x1, got {sizes}")
    return chain


def forward_layer(t, spec, bank, offset=0.0):
    """Sigmoid of every patch's similarity to every filter.

    Returns a ``rows x cols x len(bank)`` map.
    """
    t = check_tensor3(t)
    return forward_layer_batch(t[None], spec, bank, offset)[0]


def forward_layer_batch(images, spec, bank, offset=0.0, chunk_images=256):
    images = np.asarray(images, dtype=np.float64)
    n, h, w, c = images.shape
    if (spec.patch_h, spec.patch_w, c) != bank.patch_shape:
        raise ShapeError(
            f"layer expects {bank.patch_shape} patches but input gives "
            f"{(spec.patch_h, spec.patch_w, c)}"
        )
    rows = grid_size(h, spec.patch_h, spec.stride)
    cols = grid_size(w, spec.patch_w, spec.stride)
    out = np.empty((n, rows, cols, len(bank)), dtype=np.float64)
    for start in range(0, n, chunk_images):
        block = images[start:start + chunk_images]
        X = extract_patch_matrix(block, spec.patch_h, spec.patch_w, spec.stride)
        scores = bank.scores(X.reshape(-1, X.shape[-1]))
        if offset:
            scores += offset
        out[start:start + len(block)] = sigmoid_map(scores).reshape(len(block), rows, cols, -1)
    return out


@dataclass
class Network:
    """Trained layers plus the preprocessing needed to map pixels in and out.

    ``preprocessor`` maps ``[0, 1]`` images to the domain the first layer was
    trained on.  ``metadata`` is free-form and persisted with the model.
    """

    specs: list
    banks: list
    input_shape: tuple
    preprocessor: object = None
    score_offsets: list = None
    mean_image: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.specs = list(self.specs)
        self.banks = list(self.banks)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if len(self.specs) != len(self.banks):
            raise ValueError("specs and banks must have equal length")
        if self.score_offsets is None:
            self.score_offsets = [0.0] * len(self.specs)
        check_arch(self.input_shape[:2], self.specs)
        channels = self.input_shape[2]
        for k, (spec, bank) in enumerate(zip(self.specs, self.banks)):
            expected = (spec.patch_h, spec.patch_w, channels)
            if bank.patch_shape != expected:
                raise ShapeError(f"layer {k + 1} filters have shape {bank.patch_shape}, expected {expected}")
            channels = len(bank)

    @property
    def n_layers(self):
        return len(self.specs)

    @property
    def n_filters(self):
        return [len(b) for b in self.banks]

    def layer_shapes(self):
        """Output shape ``(h, w, channels)`` of every layer, input first."""
        chain = shape_chain(self.input_shape[:2], self.specs)
        channels = [self.input_shape[2]] + self.n_filters
        return [(h, w, c) for (h, w), c in zip(chain, channels)]

    def preprocess(self, images):
        if self.preprocessor is None:
            return np.asarray(images, dtype=np.float64)
        return self.preprocessor.transform(images)


def forward(net, image):
    """Feature maps ``[F1, ..., FL]`` of one preprocessed image."""
    image = check_tensor3(image)
    if image.shape != net.input_shape:
        raise ShapeError(f"image shape {image.shape} does not match network input {net.input_shape}")
    maps = []
    t = image
    for spec, bank, offset in zip(net.specs, net.banks, net.score_offsets):
        t = forward_layer(t, spec, bank, offset)
        maps.append(t)
    return maps


def forward_batch(net, images, upto=None):
    """Run ``(n, H, W, C)`` preprocessed images through the first ``upto`` layers."""
    t = np.asarray(images, dtype=np.float64)
    if t.shape[1:] != net.input_shape:
        raise ShapeError(f"image shape {t.shape[1:]} does not match network input {net.input_shape}")
    layers = zip(net.specs, net.banks, net.score_offsets)
    for k, (spec, bank, offset) in enumerate(layers):
        if upto is not None and k >= upto:
            break
        t = forward_layer_batch(t, spec, bank, offset)
    return t
